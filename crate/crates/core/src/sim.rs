//! Closed-loop simulation: ground-truth plant, attacked channels, the
//! switching policy between networked tracking and the emergency
//! controller, and per-step logging.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::controllers::TrackingController;
use crate::datamodel::{ModelSet, Trajectory, TrajectorySet};
use crate::error::{dim_err, Error, Result};
use crate::reach::{detect, verify_safety, SafetyVerdict};
use crate::setops::{HPolytope, Zonotope};
use crate::stc::RoscFamily;

/// Ground truth; only the simulator sees these matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantModel {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub w: Zonotope,
}

impl PlantModel {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, w: Zonotope) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n || b.nrows() != n || w.dim() != n {
            return Err(dim_err(
                "plant matrices and disturbance disagree on the state dimension",
            ));
        }
        Ok(Self { a, b, w })
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    pub fn step_with(&self, x: &DVector<f64>, u: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
        &self.a * x + &self.b * u + w
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DisturbanceMode {
    /// Uniform over the generator coefficient cube.
    Uniform,
    /// Random vertex of the coefficient cube.
    Vertex,
}

/// Plant with its own seeded disturbance stream.
#[derive(Debug, Clone)]
pub struct Plant {
    pub model: PlantModel,
    rng: ChaCha8Rng,
    mode: DisturbanceMode,
}

impl Plant {
    pub fn new(model: PlantModel, seed: u64, mode: DisturbanceMode) -> Self {
        Self {
            model,
            rng: ChaCha8Rng::seed_from_u64(seed),
            mode,
        }
    }

    pub fn sample_disturbance(&mut self) -> DVector<f64> {
        let w = &self.model.w;
        let p = w.num_generators();
        let beta = DVector::from_iterator(
            p,
            (0..p).map(|_| match self.mode {
                DisturbanceMode::Uniform => self.rng.random_range(-1.0..=1.0),
                DisturbanceMode::Vertex => {
                    if self.rng.random_bool(0.5) {
                        1.0
                    } else {
                        -1.0
                    }
                }
            }),
        );
        w.center() + w.generators() * beta
    }

    pub fn step(&mut self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        let w = self.sample_disturbance();
        self.model.step_with(x, u, &w)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSpec {
    pub trajectories: usize,
    pub samples: usize,
    /// Inputs are uniform in this fraction of the input box.
    pub amplitude: f64,
    pub seed: u64,
}

/// Random-input experiments from the origin.
pub fn collect_trajectories(model: &PlantModel, u_lo: &[f64], u_hi: &[f64], spec: &DataSpec) -> Result<TrajectorySet> {
    let (n, m) = (model.n(), model.m());
    if u_lo.len() != m || u_hi.len() != m {
        return Err(dim_err("input box for data collection"));
    }
    if !(spec.amplitude.is_finite() && spec.amplitude >= 0.0) {
        return Err(Error::InvalidArgument(
            "excitation amplitude must be finite and ≥ 0".into(),
        ));
    }
    let mut plant = Plant::new(model.clone(), spec.seed, DisturbanceMode::Uniform);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut out = Vec::with_capacity(spec.trajectories);
    for _ in 0..spec.trajectories {
        let mut inputs = DMatrix::zeros(m, spec.samples);
        let mut states = DMatrix::zeros(n, spec.samples + 1);
        let mut x = DVector::zeros(n);
        for k in 0..spec.samples {
            let u = DVector::from_iterator(
                m,
                (0..m).map(|i| {
                    let (lo, hi) = (spec.amplitude * u_lo[i], spec.amplitude * u_hi[i]);
                    if hi > lo {
                        rng.random_range(lo..=hi)
                    } else {
                        lo
                    }
                }),
            );
            let next = plant.step(&x, &u);
            inputs.set_column(k, &u);
            states.set_column(k, &x);
            x = next;
        }
        states.set_column(spec.samples, &x);
        out.push(Trajectory::new(inputs, states)?);
    }
    TrajectorySet::new(n, m, out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    Actuation,
    Measurement,
    Flag,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Payload {
    /// Adds `clip(u + target, U) − u`: the admissible injection closest to
    /// `target`.
    ClipToward {
        target: Vec<f64>,
    },
    Constant {
        value: Vec<f64>,
    },
    /// `rate·(k − origin)·direction`.
    Ramp {
        direction: Vec<f64>,
        rate: f64,
        origin: i64,
    },
    Flag {
        value: bool,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackScript {
    pub channel: Channel,
    pub start: usize,
    /// Inclusive.
    pub end: usize,
    pub payload: Payload,
}

impl AttackScript {
    pub fn active(&self, k: usize) -> bool {
        k >= self.start && k <= self.end
    }

    fn vector(&self, k: usize, signal: &DVector<f64>, lo: &DVector<f64>, hi: &DVector<f64>) -> Option<DVector<f64>> {
        if !self.active(k) {
            return None;
        }
        match &self.payload {
            Payload::ClipToward { target } => Some(DVector::from_iterator(
                signal.len(),
                (0..signal.len()).map(|i| (signal[i] + target[i]).clamp(lo[i], hi[i]) - signal[i]),
            )),
            Payload::Constant { value } => Some(DVector::from_column_slice(value)),
            Payload::Ramp {
                direction,
                rate,
                origin,
            } => {
                let s = rate * (k as i64 - origin) as f64;
                Some(DVector::from_iterator(direction.len(), direction.iter().map(|d| d * s)))
            }
            Payload::Flag { .. } => None,
        }
    }

    /// The signal as received. Clipped payloads land exactly on the box.
    fn corrupt(&self, k: usize, signal: &DVector<f64>, lo: &DVector<f64>, hi: &DVector<f64>) -> Option<DVector<f64>> {
        match &self.payload {
            Payload::ClipToward { target } if self.active(k) => Some(DVector::from_iterator(
                signal.len(),
                (0..signal.len()).map(|i| (signal[i] + target[i]).clamp(lo[i], hi[i])),
            )),
            _ => self.vector(k, signal, lo, hi).map(|v| signal + v),
        }
    }

    fn flag(&self, k: usize) -> Option<bool> {
        match (&self.payload, self.active(k)) {
            (Payload::Flag { value }, true) => Some(*value),
            _ => None,
        }
    }

    fn expected_len(&self) -> Option<usize> {
        match &self.payload {
            Payload::ClipToward { target } => Some(target.len()),
            Payload::Constant { value } => Some(value.len()),
            Payload::Ramp { direction, .. } => Some(direction.len()),
            Payload::Flag { .. } => None,
        }
    }

    pub fn validate(&self, n: usize, m: usize) -> Result<()> {
        if self.end < self.start {
            return Err(Error::InvalidArgument("attack window ends before it starts".into()));
        }
        let want = match self.channel {
            Channel::Actuation => Some(m),
            Channel::Measurement => Some(n),
            Channel::Flag => None,
        };
        match (want, self.expected_len(), &self.payload) {
            (None, None, Payload::Flag { .. }) => Ok(()),
            (Some(_), _, Payload::ClipToward { .. }) if self.channel != Channel::Actuation => Err(
                Error::InvalidArgument("clip_toward payload only applies to the actuation channel".into()),
            ),
            (Some(w), Some(l), _) if w == l => Ok(()),
            (Some(w), Some(l), _) => Err(dim_err(format!(
                "attack payload has length {l}, channel carries {w} values"
            ))),
            _ => Err(Error::InvalidArgument("payload kind does not match channel".into())),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SwitchState {
    pub emergency: bool,
    pub ignore: bool,
}

/// One pass of the switching policy. `safety` receives the `ignore` value
/// fixed by the first step and returns the plant-side verdict.
///
/// 1. Leaving emergency inside the terminal set sets `ignore` for this step
///    only.
/// 2. Emergency is raised whenever the verdict requires it.
/// 3. The caller applies the emergency input iff `emergency` is set.
pub fn switch_policy(
    state: SwitchState,
    in_terminal_set: bool,
    safety: impl FnOnce(bool) -> Result<SafetyVerdict>,
) -> Result<(SwitchState, SafetyVerdict)> {
    let mut s = state;
    if s.emergency && in_terminal_set {
        s.emergency = false;
        s.ignore = true;
    } else {
        s.ignore = false;
    }
    let verdict = safety(s.ignore)?;
    if verdict.emergency_required {
        s.emergency = true;
    }
    Ok((s, verdict))
}

/// Piecewise-constant reference: each entry holds from its step onward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceStep {
    pub from: usize,
    pub value: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub attacks: Vec<AttackScript>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    pub x0: DVector<f64>,
    pub references: Vec<ReferenceStep>,
    pub horizon: usize,
    pub seed: u64,
    pub disturbance: DisturbanceMode,
}

impl RunSpec {
    pub fn reference(&self, k: usize) -> DVector<f64> {
        let mut r = &self.references[0].value;
        for s in &self.references {
            if s.from <= k {
                r = &s.value;
            }
        }
        DVector::from_column_slice(r)
    }
}

/// Everything the closed loop needs besides the ground-truth plant.
#[derive(Debug, Clone)]
pub struct LoopParts<'a> {
    pub model_set: &'a ModelSet,
    pub family: &'a RoscFamily,
    pub tracker: &'a TrackingController,
    pub x_set: &'a HPolytope,
    pub u_set: &'a HPolytope,
    pub w: &'a Zonotope,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerTag {
    Tracking,
    Emergency,
}

impl ControllerTag {
    pub fn as_str(self) -> &'static str {
        match self {
            ControllerTag::Tracking => "tracking",
            ControllerTag::Emergency => "emergency",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub k: usize,
    pub x_true: Vec<f64>,
    pub x_received: Vec<f64>,
    pub u_net: Vec<f64>,
    pub u_received: Vec<f64>,
    pub u_applied: Vec<f64>,
    /// Flag as delivered to the plant.
    pub flag: bool,
    /// Detector output before the channel.
    pub anomaly: bool,
    pub input_admissible: bool,
    pub one_step_safe: bool,
    pub emergency: bool,
    pub ignore: bool,
    pub j_index: Option<usize>,
    pub controller: ControllerTag,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Outcome {
    Completed,
    StateViolation { k: usize, state: Vec<f64> },
    InputViolation { k: usize, input: Vec<f64> },
    EmergencyUnavailable { k: usize, state: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimLog {
    pub scenario: String,
    pub seed: u64,
    pub n: usize,
    pub m: usize,
    pub steps: Vec<StepRecord>,
    pub final_state: Vec<f64>,
    pub outcome: Outcome,
}

impl SimLog {
    pub fn is_safe(&self) -> bool {
        self.outcome == Outcome::Completed
    }

    pub fn csv_header(&self) -> Vec<String> {
        let mut h = vec!["k".to_string()];
        let vecs = [
            ("x_true", self.n),
            ("x_received", self.n),
            ("u_net", self.m),
            ("u_received", self.m),
            ("u_applied", self.m),
        ];
        for (name, len) in vecs {
            for i in 1..=len {
                h.push(format!("{name}_{i}"));
            }
        }
        for name in [
            "flag",
            "anomaly",
            "input_admissible",
            "one_step_safe",
            "emergency",
            "ignore",
            "j_index",
            "controller_tag",
        ] {
            h.push(name.to_string());
        }
        h
    }

    pub fn csv_rows(&self) -> Vec<Vec<String>> {
        let b = |v: bool| if v { "1".to_string() } else { "0".to_string() };
        self.steps
            .iter()
            .map(|s| {
                let mut row = vec![s.k.to_string()];
                for v in [&s.x_true, &s.x_received, &s.u_net, &s.u_received, &s.u_applied] {
                    row.extend(v.iter().map(|x| format!("{x:.17e}")));
                }
                row.extend([
                    b(s.flag),
                    b(s.anomaly),
                    b(s.input_admissible),
                    b(s.one_step_safe),
                    b(s.emergency),
                    b(s.ignore),
                    s.j_index.map(|j| j.to_string()).unwrap_or_default(),
                    s.controller.as_str().to_string(),
                ]);
                row
            })
            .collect()
    }
}

/// Runs one scenario. Constraint violations end the run early with a
/// failure outcome; numerical failures are errors.
pub fn run_scenario(
    plant_model: &PlantModel,
    parts: &LoopParts<'_>,
    spec: &RunSpec,
    scenario: &Scenario,
) -> Result<SimLog> {
    let (n, m) = (plant_model.n(), plant_model.m());
    if parts.model_set.n != n || parts.model_set.m != m || spec.x0.len() != n {
        return Err(dim_err("simulation parts disagree on dimensions"));
    }
    if spec.references.is_empty() {
        return Err(Error::InvalidArgument("no reference schedule".into()));
    }
    for a in &scenario.attacks {
        a.validate(n, m)?;
    }
    let (u_lo, u_hi) = parts.tracker.input_bounds();
    let (u_lo, u_hi) = (u_lo.clone(), u_hi.clone());
    let x_eta = parts.family.outer_region();
    let mut plant = Plant::new(plant_model.clone(), spec.seed, spec.disturbance);
    let mut x = spec.x0.clone();
    let mut prev: Option<(DVector<f64>, DVector<f64>)> = None;
    let mut u_applied_prev: Option<DVector<f64>> = None;
    let mut state = SwitchState::default();
    let mut steps = Vec::with_capacity(spec.horizon);
    let mut outcome = Outcome::Completed;

    for k in 0..spec.horizon {
        let r = spec.reference(k);
        // Controller side.
        let mut x_recv = x.clone();
        for a in scenario.attacks.iter().filter(|a| a.channel == Channel::Measurement) {
            if let Some(v) = a.corrupt(k, &x_recv, &u_lo, &u_hi) {
                x_recv = v;
            }
        }
        let anomaly = match &prev {
            Some((xp, up)) => detect(parts.model_set, xp, up, &x_recv, parts.w)?.anomaly,
            None => false,
        };
        let u = parts.tracker.track(&x_recv, &r);

        // Actuation channel.
        let mut u_recv = u.clone();
        let mut flag = anomaly;
        for a in &scenario.attacks {
            match a.channel {
                Channel::Actuation => {
                    if let Some(v) = a.corrupt(k, &u_recv, &u_lo, &u_hi) {
                        u_recv = v;
                    }
                }
                Channel::Flag => {
                    if let Some(f) = a.flag(k) {
                        flag = f;
                    }
                }
                Channel::Measurement => {}
            }
        }

        // Plant side.
        let in_t0 = parts.family.t0.contains_point(&x)?;
        let (next_state, verdict) = switch_policy(state, in_t0, |ignore| {
            verify_safety(parts.model_set, &x, &u_recv, parts.u_set, x_eta, parts.w, flag, ignore)
        })?;
        state = next_state;
        let (u_applied, j_index, tag) = if state.emergency {
            match parts.family.control(&x, u_applied_prev.as_ref()) {
                // Clears LP round-off past the actuator limits.
                Ok((ue, j)) => (
                    ue.zip_zip_map(&u_lo, &u_hi, |v, l, h| v.clamp(l, h)),
                    Some(j),
                    ControllerTag::Emergency,
                ),
                Err(Error::InvalidArgument(_)) => {
                    outcome = Outcome::EmergencyUnavailable {
                        k,
                        state: x.iter().copied().collect(),
                    };
                    break;
                }
                Err(e) => return Err(e),
            }
        } else {
            (u_recv.clone(), None, ControllerTag::Tracking)
        };

        steps.push(StepRecord {
            k,
            x_true: x.iter().copied().collect(),
            x_received: x_recv.iter().copied().collect(),
            u_net: u.iter().copied().collect(),
            u_received: u_recv.iter().copied().collect(),
            u_applied: u_applied.iter().copied().collect(),
            flag,
            anomaly,
            input_admissible: verdict.input_admissible,
            one_step_safe: verdict.one_step_safe,
            emergency: state.emergency,
            ignore: state.ignore,
            j_index,
            controller: tag,
        });

        if !parts.u_set.contains(&u_applied)? {
            outcome = Outcome::InputViolation {
                k,
                input: u_applied.iter().copied().collect(),
            };
            break;
        }
        let x_next = plant.step(&x, &u_applied);
        prev = Some((x_recv, u));
        u_applied_prev = Some(u_applied);
        x = x_next;
        if !parts.x_set.contains(&x)? {
            outcome = Outcome::StateViolation {
                k: k + 1,
                state: x.iter().copied().collect(),
            };
            break;
        }
    }

    Ok(SimLog {
        scenario: scenario.name.clone(),
        seed: spec.seed,
        n,
        m,
        steps,
        final_state: x.iter().copied().collect(),
        outcome,
    })
}

/// Vertex list of a 2-D (or 1-D) zonotope as `x_1,x_2` rows.
pub fn vertex_rows(z: &Zonotope) -> Result<Vec<Vec<f64>>> {
    Ok(z.vertices()?.iter().map(|v| v.iter().copied().collect()).collect())
}

/// Shoelace area of a counter-clockwise polygon.
pub fn polygon_area(vertices: &[Vec<f64>]) -> f64 {
    let k = vertices.len();
    if k < 3 {
        return 0.0;
    }
    let mut s = 0.0;
    for i in 0..k {
        let (a, b) = (&vertices[i], &vertices[(i + 1) % k]);
        s += a[0] * b[1] - a[1] * b[0];
    }
    0.5 * s.abs()
}
