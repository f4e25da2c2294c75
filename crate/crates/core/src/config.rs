//! Run configuration: one JSON document fixes the plant, constraints,
//! data collection, synthesis options, references, attacks and seeds.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::setops::{HPolytope, Zonotope, DEFAULT_MAX_VERTEX_BITS};
use crate::sim::{DataSpec, DisturbanceMode, PlantModel, ReferenceStep, RunSpec, Scenario};
use crate::stc::{RciOptions, Template};

const TWO_TANK: &str = include_str!("../configs/two_tank.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantSpec {
    /// Row-major.
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxSpec {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintSpec {
    pub state: BoxSpec,
    pub input: BoxSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ZonotopeSpec {
    pub center: Vec<f64>,
    /// One entry per generator vector.
    pub generators: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthesisSpec {
    pub levels: usize,
    pub vertex_budget: usize,
    #[serde(default = "default_bits")]
    pub max_vertex_bits: usize,
    pub rci_margin: f64,
    pub rci_eps: f64,
    #[serde(default = "default_terms")]
    pub rci_max_terms: usize,
    #[serde(default = "default_template_cap")]
    pub template_cap: usize,
    #[serde(default = "default_u_weight")]
    pub input_direction_weight: f64,
}

fn default_bits() -> usize {
    DEFAULT_MAX_VERTEX_BITS
}
fn default_terms() -> usize {
    50
}
fn default_template_cap() -> usize {
    40
}
fn default_u_weight() -> f64 {
    1e-3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerSpec {
    /// Diagonal LQR weights.
    pub tracking_q: Vec<f64>,
    pub tracking_r: Vec<f64>,
    pub terminal_q: Vec<f64>,
    pub terminal_r: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub plant: PlantSpec,
    pub constraints: ConstraintSpec,
    pub disturbance: ZonotopeSpec,
    pub data: DataSpec,
    pub synthesis: SynthesisSpec,
    pub controllers: ControllerSpec,
    pub x0: Vec<f64>,
    pub references: Vec<ReferenceStep>,
    pub horizon: usize,
    pub seed: u64,
    #[serde(default = "default_mode")]
    pub disturbance_mode: DisturbanceMode,
    pub scenarios: Vec<Scenario>,
}

fn default_mode() -> DisturbanceMode {
    DisturbanceMode::Uniform
}

impl ScenarioConfig {
    /// The shipped two-tank configuration.
    pub fn two_tank() -> Self {
        Self::from_json(TWO_TANK).expect("shipped configuration is valid")
    }

    pub fn shipped_text() -> &'static str {
        TWO_TANK
    }

    /// Parses and validates; errors name the offending line.
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ScenarioConfig = serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("line {}, column {}: {e}", e.line(), e.column())))?;
        if let Err((path, msg)) = cfg.check() {
            let line = locate(text, &path);
            let at = match line {
                Some(l) => format!("line {l} ({})", path.join(".")),
                None => path.join("."),
            };
            return Err(Error::Config(format!("{at}: {msg}")));
        }
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn n(&self) -> usize {
        self.plant.a.len()
    }

    pub fn m(&self) -> usize {
        self.plant.b.first().map_or(0, Vec::len)
    }

    fn check(&self) -> std::result::Result<(), (Vec<String>, String)> {
        fn err<T>(path: &[&str], msg: impl Into<String>) -> std::result::Result<T, (Vec<String>, String)> {
            Err((path.iter().map(|s| s.to_string()).collect(), msg.into()))
        }
        fn finite(path: &[&str], v: &[f64]) -> std::result::Result<(), (Vec<String>, String)> {
            if v.iter().all(|x| x.is_finite()) {
                Ok(())
            } else {
                err(path, "non-finite value")
            }
        }
        let n = self.n();
        if n == 0 {
            return err(&["plant", "a"], "state dimension must be at least 1");
        }
        for row in &self.plant.a {
            if row.len() != n {
                return err(
                    &["plant", "a"],
                    format!("A must be {n}×{n}, found a row of length {}", row.len()),
                );
            }
            finite(&["plant", "a"], row)?;
        }
        if self.plant.b.len() != n {
            return err(
                &["plant", "b"],
                format!("B must have {n} rows, found {}", self.plant.b.len()),
            );
        }
        let m = self.m();
        if m == 0 {
            return err(&["plant", "b"], "input dimension must be at least 1");
        }
        for row in &self.plant.b {
            if row.len() != m {
                return err(&["plant", "b"], format!("B rows must all have length {m}"));
            }
            finite(&["plant", "b"], row)?;
        }
        for (key, bx, len) in [
            ("state", &self.constraints.state, n),
            ("input", &self.constraints.input, m),
        ] {
            if bx.lo.len() != len || bx.hi.len() != len {
                return err(&["constraints", key], format!("bounds must have length {len}"));
            }
            finite(&["constraints", key], &bx.lo)?;
            finite(&["constraints", key], &bx.hi)?;
            if bx
                .lo
                .iter()
                .zip(&bx.hi)
                .any(|(l, h)| l.partial_cmp(h) != Some(std::cmp::Ordering::Less))
            {
                return err(&["constraints", key], "every lower bound must be below its upper bound");
            }
        }
        if self.disturbance.center.len() != n {
            return err(
                &["disturbance", "center"],
                format!("disturbance center must have length {n}"),
            );
        }
        finite(&["disturbance", "center"], &self.disturbance.center)?;
        for g in &self.disturbance.generators {
            if g.len() != n {
                return err(
                    &["disturbance", "generators"],
                    format!("generators must have length {n}"),
                );
            }
            finite(&["disturbance", "generators"], g)?;
        }
        if self.data.trajectories == 0 || self.data.samples == 0 {
            return err(&["data"], "need at least one trajectory with one sample");
        }
        if !(self.data.amplitude.is_finite() && self.data.amplitude >= 0.0) {
            return err(&["data", "amplitude"], "amplitude must be finite and ≥ 0");
        }
        let s = &self.synthesis;
        if s.vertex_budget == 0 || s.vertex_budget > s.max_vertex_bits || s.max_vertex_bits > 20 {
            return err(
                &["synthesis", "vertex_budget"],
                "need 1 ≤ vertex_budget ≤ max_vertex_bits ≤ 20",
            );
        }
        if !(s.rci_margin.is_finite() && s.rci_margin >= 0.0) || !(s.rci_eps.is_finite() && s.rci_eps > 0.0) {
            return err(&["synthesis", "rci_margin"], "margin must be ≥ 0 and eps > 0");
        }
        if s.template_cap < n + m {
            return err(
                &["synthesis", "template_cap"],
                format!("template cap must be at least {}", n + m),
            );
        }
        if !(s.input_direction_weight.is_finite() && s.input_direction_weight >= 0.0) {
            return err(
                &["synthesis", "input_direction_weight"],
                "weight must be finite and ≥ 0",
            );
        }
        let c = &self.controllers;
        for (key, v, len) in [
            ("tracking_q", &c.tracking_q, n),
            ("tracking_r", &c.tracking_r, m),
            ("terminal_q", &c.terminal_q, n),
            ("terminal_r", &c.terminal_r, m),
        ] {
            if v.len() != len {
                return err(&["controllers", key], format!("weight diagonal must have length {len}"));
            }
            if !v.iter().all(|x| x.is_finite() && *x > 0.0) {
                return err(&["controllers", key], "weights must be positive");
            }
        }
        if self.x0.len() != n {
            return err(&["x0"], format!("initial state must have length {n}"));
        }
        finite(&["x0"], &self.x0)?;
        if self.references.is_empty() {
            return err(&["references"], "at least one reference is required");
        }
        for r in &self.references {
            if r.value.len() != n {
                return err(&["references"], format!("references must have length {n}"));
            }
            finite(&["references"], &r.value)?;
        }
        if self.horizon == 0 {
            return err(&["horizon"], "horizon must be positive");
        }
        for sc in &self.scenarios {
            for a in &sc.attacks {
                if let Err(e) = a.validate(n, m) {
                    return err(&["scenarios", "attacks"], format!("scenario {}: {e}", sc.name));
                }
            }
        }
        Ok(())
    }

    pub fn scenario(&self, name: &str) -> Result<&Scenario> {
        self.scenarios.iter().find(|s| s.name == name).ok_or_else(|| {
            Error::Config(format!(
                "unknown scenario {name:?}; available: {}",
                self.scenarios
                    .iter()
                    .map(|s| s.name.as_str())
                    .collect::<Vec<_>>()
                    .join(", ")
            ))
        })
    }

    pub fn a(&self) -> DMatrix<f64> {
        rows_to_matrix(&self.plant.a, self.n())
    }

    pub fn b(&self) -> DMatrix<f64> {
        rows_to_matrix(&self.plant.b, self.m())
    }

    pub fn disturbance_set(&self) -> Zonotope {
        let n = self.n();
        let g = rows_to_matrix(&self.disturbance.generators, n).transpose();
        Zonotope::new(DVector::from_column_slice(&self.disturbance.center), g).expect("validated")
    }

    pub fn plant_model(&self) -> PlantModel {
        PlantModel::new(self.a(), self.b(), self.disturbance_set()).expect("validated")
    }

    pub fn state_set(&self) -> HPolytope {
        HPolytope::from_box(&self.constraints.state.lo, &self.constraints.state.hi).expect("validated")
    }

    pub fn input_set(&self) -> HPolytope {
        HPolytope::from_box(&self.constraints.input.lo, &self.constraints.input.hi).expect("validated")
    }

    pub fn run_spec(&self, seed: u64) -> RunSpec {
        RunSpec {
            x0: DVector::from_column_slice(&self.x0),
            references: self.references.clone(),
            horizon: self.horizon,
            seed,
            disturbance: self.disturbance_mode,
        }
    }

    pub fn rci_options(&self) -> RciOptions {
        RciOptions {
            q_weight: Some(DMatrix::from_diagonal(&DVector::from_column_slice(
                &self.controllers.terminal_q,
            ))),
            r_weight: Some(DMatrix::from_diagonal(&DVector::from_column_slice(
                &self.controllers.terminal_r,
            ))),
            eps: self.synthesis.rci_eps,
            max_terms: self.synthesis.rci_max_terms,
            margin: self.synthesis.rci_margin,
            ..RciOptions::default()
        }
    }

    pub fn template(&self, a_c: &DMatrix<f64>, b_c: &DMatrix<f64>) -> Template {
        Template::coupled(
            a_c,
            b_c,
            self.synthesis.input_direction_weight,
            self.synthesis.template_cap,
        )
    }
}

fn rows_to_matrix(rows: &[Vec<f64>], cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j])
}

/// Line of the last key in `path`, found by scanning for each key in turn.
fn locate(text: &str, path: &[String]) -> Option<usize> {
    let mut pos = 0;
    for key in path {
        let needle = format!("\"{key}\"");
        pos += text[pos..].find(&needle)?;
    }
    Some(text[..pos].matches('\n').count() + 1)
}
