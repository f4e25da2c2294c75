//! Networked tracking controller and the shared LQR routine.

use nalgebra::{DMatrix, DVector};

use crate::datamodel::{pseudo_inverse, DEFAULT_RANK_TOL};
use crate::error::{dim_err, Error, Result};
use crate::setops::HPolytope;

const RICCATI_MAX_ITER: usize = 100_000;

/// Infinite-horizon discrete LQR gain `K` for the law `u = Kx`, by fixed
/// point iteration of the Riccati recursion.
pub fn dlqr(a: &DMatrix<f64>, b: &DMatrix<f64>, q: &DMatrix<f64>, r: &DMatrix<f64>, tol: f64) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let m = b.ncols();
    if a.ncols() != n || b.nrows() != n || q.shape() != (n, n) || r.shape() != (m, m) {
        return Err(dim_err("LQR weight or model shapes"));
    }
    let mut p = q.clone();
    for _ in 0..RICCATI_MAX_ITER {
        let bt_p = b.transpose() * &p;
        let s = r + &bt_p * b;
        let s_inv = s
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Synthesis("R + BᵀPB is singular".into()))?;
        let k = -&s_inv * &bt_p * a;
        let next = q + a.transpose() * &p * a + a.transpose() * p.transpose() * b * &k;
        let next = 0.5 * (&next + next.transpose());
        let diff = (&next - &p).amax();
        p = next;
        if !p.iter().all(|v| v.is_finite()) {
            return Err(Error::Synthesis("Riccati iteration diverged".into()));
        }
        if diff <= tol * (1.0 + p.amax()) {
            let bt_p = b.transpose() * &p;
            let s = r + &bt_p * b;
            let s_inv = s.try_inverse().expect("checked above");
            return Ok(-s_inv * bt_p * a);
        }
    }
    Err(Error::Synthesis(format!(
        "Riccati iteration did not converge in {RICCATI_MAX_ITER} steps"
    )))
}

/// `u = sat(u_r + K(x' − x_r))` with the equilibrium pair taken from the
/// center model.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackingController {
    pub gain: DMatrix<f64>,
    a: DMatrix<f64>,
    b_pinv: DMatrix<f64>,
    u_lo: DVector<f64>,
    u_hi: DVector<f64>,
}

impl TrackingController {
    pub fn new(
        a_center: &DMatrix<f64>,
        b_center: &DMatrix<f64>,
        gain: DMatrix<f64>,
        u_set: &HPolytope,
    ) -> Result<Self> {
        let n = a_center.nrows();
        let m = b_center.ncols();
        if gain.shape() != (m, n) {
            return Err(dim_err("tracking gain shape"));
        }
        let (lo, hi) = u_set
            .as_box()
            .ok_or_else(|| Error::InvalidArgument("input constraints must be a box".into()))?;
        if lo.len() != m {
            return Err(dim_err("input box dimension"));
        }
        Ok(Self {
            gain,
            a: a_center.clone(),
            b_pinv: pseudo_inverse(b_center, DEFAULT_RANK_TOL),
            u_lo: DVector::from_vec(lo),
            u_hi: DVector::from_vec(hi),
        })
    }

    /// LQR tracking gain on the center model.
    pub fn lqr(
        a_center: &DMatrix<f64>,
        b_center: &DMatrix<f64>,
        q: &DMatrix<f64>,
        r: &DMatrix<f64>,
        u_set: &HPolytope,
    ) -> Result<Self> {
        let k = dlqr(a_center, b_center, q, r, 1e-10)?;
        Self::new(a_center, b_center, k, u_set)
    }

    /// `(x_r, u_r)` with `x_r = r` and `u_r` the least-squares solution of
    /// `B u = (I − A) r`.
    pub fn reference_pair(&self, r: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let n = self.a.nrows();
        let rhs = (DMatrix::<f64>::identity(n, n) - &self.a) * r;
        (r.clone(), &self.b_pinv * rhs)
    }

    pub fn saturate(&self, u: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(u.len(), (0..u.len()).map(|i| u[i].clamp(self.u_lo[i], self.u_hi[i])))
    }

    pub fn track(&self, x_received: &DVector<f64>, r: &DVector<f64>) -> DVector<f64> {
        let (xr, ur) = self.reference_pair(r);
        self.saturate(&(ur + &self.gain * (x_received - xr)))
    }

    pub fn input_bounds(&self) -> (&DVector<f64>, &DVector<f64>) {
        (&self.u_lo, &self.u_hi)
    }
}
