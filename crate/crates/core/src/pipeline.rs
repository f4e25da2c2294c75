//! Offline stages wired together: collect data, identify the model set,
//! synthesize the controllers and the controllable-set family.

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};

use crate::config::ScenarioConfig;
use crate::controllers::TrackingController;
use crate::datamodel::{build_model_set, rank_ok, stack, ModelSet, TrajectorySet, DEFAULT_RANK_TOL};
use crate::error::{Error, Result};
use crate::persist::{MatrixZonotopeDoc, Real};
use crate::setops::{HPolytope, Zonotope};
use crate::sim::{collect_trajectories, run_scenario, LoopParts, PlantModel, SimLog};
use crate::stc::{synth_family, synth_terminal, RoscFamily};

pub fn collect(cfg: &ScenarioConfig) -> Result<TrajectorySet> {
    collect_trajectories(
        &cfg.plant_model(),
        &cfg.constraints.input.lo,
        &cfg.constraints.input.hi,
        &cfg.data,
    )
}

/// Stacks the data, checks the rank condition and builds the model set
/// with its vertex models.
pub fn identify(cfg: &ScenarioConfig, data: &TrajectorySet) -> Result<ModelSet> {
    let d = stack(data)?;
    if !rank_ok(&d, DEFAULT_RANK_TOL) {
        return Err(Error::Rank(
            "collected data are not rich enough; raise the sample count or the excitation amplitude".into(),
        ));
    }
    let ms = build_model_set(&d, &cfg.disturbance_set(), DEFAULT_RANK_TOL)?;
    ms.with_vertices(cfg.synthesis.vertex_budget, cfg.synthesis.max_vertex_bits)
}

/// Re-derives the vertex models for a model set loaded from disk.
pub fn attach_vertices(cfg: &ScenarioConfig, ms: ModelSet) -> Result<ModelSet> {
    ms.with_vertices(cfg.synthesis.vertex_budget, cfg.synthesis.max_vertex_bits)
}

pub fn synthesize(cfg: &ScenarioConfig, ms: &ModelSet) -> Result<RoscFamily> {
    let x_set = cfg.state_set();
    let u_set = cfg.input_set();
    let w = cfg.disturbance_set();
    let (term, t0) = synth_terminal(ms, &x_set, &u_set, &w, &cfg.rci_options())?;
    let template = cfg.template(&ms.center_a(), &ms.center_b());
    synth_family(ms, term, t0, &x_set, &u_set, &w, cfg.synthesis.levels, &template)
}

pub fn tracker(cfg: &ScenarioConfig, ms: &ModelSet) -> Result<TrackingController> {
    TrackingController::lqr(
        &ms.center_a(),
        &ms.center_b(),
        &DMatrix::from_diagonal(&DVector::from_column_slice(&cfg.controllers.tracking_q)),
        &DMatrix::from_diagonal(&DVector::from_column_slice(&cfg.controllers.tracking_r)),
        &cfg.input_set(),
    )
}

/// Everything needed to run scenarios.
#[derive(Debug, Clone)]
pub struct Artifacts {
    pub plant: PlantModel,
    pub model_set: ModelSet,
    pub family: RoscFamily,
    pub tracker: TrackingController,
    pub x_set: HPolytope,
    pub u_set: HPolytope,
    pub w: Zonotope,
    pub timings: Timings,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Timings {
    pub identify: Duration,
    pub synthesize: Duration,
}

impl Artifacts {
    pub fn build(cfg: &ScenarioConfig) -> Result<Self> {
        let t = Instant::now();
        let data = collect(cfg)?;
        let model_set = identify(cfg, &data)?;
        let identify_time = t.elapsed();
        let t = Instant::now();
        let family = synthesize(cfg, &model_set)?;
        let synth_time = t.elapsed();
        Self::assemble(
            cfg,
            model_set,
            family,
            Timings {
                identify: identify_time,
                synthesize: synth_time,
            },
        )
    }

    pub fn assemble(cfg: &ScenarioConfig, model_set: ModelSet, family: RoscFamily, timings: Timings) -> Result<Self> {
        let tracker = tracker(cfg, &model_set)?;
        Ok(Self {
            plant: cfg.plant_model(),
            model_set,
            family,
            tracker,
            x_set: cfg.state_set(),
            u_set: cfg.input_set(),
            w: cfg.disturbance_set(),
            timings,
        })
    }

    pub fn parts(&self) -> LoopParts<'_> {
        LoopParts {
            model_set: &self.model_set,
            family: &self.family,
            tracker: &self.tracker,
            x_set: &self.x_set,
            u_set: &self.u_set,
            w: &self.w,
        }
    }

    pub fn run(&self, cfg: &ScenarioConfig, scenario: &str, seed: u64) -> Result<SimLog> {
        let sc = cfg.scenario(scenario)?;
        run_scenario(&self.plant, &self.parts(), &cfg.run_spec(seed), sc)
    }
}

#[derive(serde::Serialize, serde::Deserialize)]
struct ModelSetDoc {
    n: usize,
    m: usize,
    set: MatrixZonotopeDoc,
}

pub fn model_set_to_json(ms: &ModelSet) -> Result<String> {
    Ok(serde_json::to_string_pretty(&ModelSetDoc {
        n: ms.n,
        m: ms.m,
        set: MatrixZonotopeDoc::from_set(&ms.mz),
    })?)
}

/// Loads the full model set; vertex models are not stored.
pub fn model_set_from_json(text: &str) -> Result<ModelSet> {
    let doc: ModelSetDoc = serde_json::from_str(text)?;
    ModelSet::new(doc.n, doc.m, doc.set.to_set()?)
}

/// Identification summary written next to the model set.
#[derive(Debug, Clone, serde::Serialize)]
pub struct IdentifyReport {
    pub samples: usize,
    pub generators: usize,
    pub max_generator_norm: Real,
    pub center: Vec<Vec<Real>>,
    /// Only meaningful when the config carries the true plant.
    pub contains_true_model: bool,
}

pub fn identify_report(cfg: &ScenarioConfig, data: &TrajectorySet, ms: &ModelSet) -> Result<IdentifyReport> {
    Ok(IdentifyReport {
        samples: data.trajectories.iter().map(|t| t.len()).sum(),
        generators: ms.mz.num_generators(),
        max_generator_norm: Real(ms.max_generator_norm()),
        center: crate::persist::mat_doc(ms.mz.center()),
        contains_true_model: ms.contains_model(&cfg.a(), &cfg.b())?,
    })
}
