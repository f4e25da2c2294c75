//! One-step reachable sets, the anomaly detector and the plant-side
//! safety check.

use nalgebra::DVector;

use crate::datamodel::{stacked_state_input, ModelSet};
use crate::error::{dim_err, Result};
use crate::setops::{HPolytope, Zonotope};

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorVerdict {
    pub anomaly: bool,
    pub reach_set: Zonotope,
    pub tested_state: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SafetyVerdict {
    pub input_admissible: bool,
    pub one_step_safe: bool,
    pub s_plus: Zonotope,
    pub emergency_required: bool,
}

/// `M_AB·[x; u] ⊕ W` over the full (unreduced) model set.
pub fn reach_one_step(ms: &ModelSet, x: &DVector<f64>, u: &DVector<f64>, w: &Zonotope) -> Result<Zonotope> {
    if x.len() != ms.n || u.len() != ms.m {
        return Err(dim_err(format!(
            "state/input of length {}/{} for a model set with n = {}, m = {}",
            x.len(),
            u.len(),
            ms.n,
            ms.m
        )));
    }
    ms.mz.times_vector(&stacked_state_input(x, u))?.minkowski_sum(w)
}

/// Flags an anomaly when the observed successor leaves the reachable set.
pub fn detect(
    ms: &ModelSet,
    x_prev: &DVector<f64>,
    u_prev: &DVector<f64>,
    x_now: &DVector<f64>,
    w: &Zonotope,
) -> Result<DetectorVerdict> {
    let reach_set = reach_one_step(ms, x_prev, u_prev, w)?;
    let anomaly = !reach_set.contains_point(x_now)?;
    Ok(DetectorVerdict {
        anomaly,
        reach_set,
        tested_state: x_now.clone(),
    })
}

#[allow(clippy::too_many_arguments)]
pub fn verify_safety(
    ms: &ModelSet,
    x: &DVector<f64>,
    u_received: &DVector<f64>,
    u_set: &HPolytope,
    x_eta: &HPolytope,
    w: &Zonotope,
    flag: bool,
    ignore: bool,
) -> Result<SafetyVerdict> {
    let input_admissible = u_set.contains(u_received)?;
    let s_plus = reach_one_step(ms, x, u_received, w)?;
    let one_step_safe = s_plus.is_inside(x_eta)?;
    let emergency_required = !input_admissible || !one_step_safe || (flag && !ignore);
    Ok(SafetyVerdict {
        input_admissible,
        one_step_safe,
        s_plus,
        emergency_required,
    })
}
