//! Input-state data and the matrix zonotope of models consistent with it.

use nalgebra::{DMatrix, DVector};

use crate::error::{dim_err, Error, Result};
use crate::setops::{MatrixZonotope, VertexModelSet, Zonotope};

/// Relative singular-value cutoff for rank decisions and pseudo-inverses.
pub const DEFAULT_RANK_TOL: f64 = 1e-10;

const PINV_RESIDUAL_TOL: f64 = 1e-8;

/// One recorded run: `inputs` is m × N, `states` is n × (N + 1).
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub inputs: DMatrix<f64>,
    pub states: DMatrix<f64>,
}

impl Trajectory {
    pub fn new(inputs: DMatrix<f64>, states: DMatrix<f64>) -> Result<Self> {
        if states.ncols() != inputs.ncols() + 1 {
            return Err(dim_err(format!(
                "trajectory has {} inputs but {} states (expected inputs + 1)",
                inputs.ncols(),
                states.ncols()
            )));
        }
        Ok(Self { inputs, states })
    }

    pub fn len(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.ncols() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySet {
    pub n: usize,
    pub m: usize,
    pub trajectories: Vec<Trajectory>,
}

impl TrajectorySet {
    pub fn new(n: usize, m: usize, trajectories: Vec<Trajectory>) -> Result<Self> {
        for (i, t) in trajectories.iter().enumerate() {
            if t.inputs.nrows() != m || t.states.nrows() != n {
                return Err(dim_err(format!(
                    "trajectory {i} has {} input and {} state rows, expected {m} and {n}",
                    t.inputs.nrows(),
                    t.states.nrows()
                )));
            }
        }
        Ok(Self { n, m, trajectories })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrices {
    pub x_minus: DMatrix<f64>,
    pub u_minus: DMatrix<f64>,
    pub x_plus: DMatrix<f64>,
}

impl DataMatrices {
    pub fn samples(&self) -> usize {
        self.x_minus.ncols()
    }

    /// `[X₋; U₋]`.
    pub fn regressor(&self) -> DMatrix<f64> {
        let n = self.x_minus.nrows();
        let m = self.u_minus.nrows();
        let t = self.samples();
        let mut d = DMatrix::zeros(n + m, t);
        d.view_mut((0, 0), (n, t)).copy_from(&self.x_minus);
        d.view_mut((n, 0), (m, t)).copy_from(&self.u_minus);
        d
    }
}

/// Concatenates all trajectories, trajectory-major then time-major.
pub fn stack(data: &TrajectorySet) -> Result<DataMatrices> {
    if data.trajectories.is_empty() {
        return Err(Error::InvalidArgument("no trajectories to stack".into()));
    }
    let (n, m) = (data.n, data.m);
    let t: usize = data.trajectories.iter().map(Trajectory::len).sum();
    let mut x_minus = DMatrix::zeros(n, t);
    let mut u_minus = DMatrix::zeros(m, t);
    let mut x_plus = DMatrix::zeros(n, t);
    let mut col = 0;
    for (i, tr) in data.trajectories.iter().enumerate() {
        if tr.states.ncols() != tr.inputs.ncols() + 1 || tr.states.nrows() != n || tr.inputs.nrows() != m {
            return Err(dim_err(format!("trajectory {i} is malformed")));
        }
        let len = tr.len();
        x_minus
            .view_mut((0, col), (n, len))
            .copy_from(&tr.states.columns(0, len));
        x_plus
            .view_mut((0, col), (n, len))
            .copy_from(&tr.states.columns(1, len));
        u_minus.view_mut((0, col), (m, len)).copy_from(&tr.inputs);
        col += len;
    }
    Ok(DataMatrices {
        x_minus,
        u_minus,
        x_plus,
    })
}

/// Full-row-rank test of `[X₋; U₋]` with a relative singular-value cutoff.
pub fn rank_ok(d: &DataMatrices, rank_tol: f64) -> bool {
    let rows = d.x_minus.nrows() + d.u_minus.nrows();
    if d.samples() < rows {
        return false;
    }
    crate::setops::matrix_rank(&d.regressor(), rank_tol) == rows
}

/// Smallest singular value of `[X₋; U₋]` relative to its largest.
pub fn excitation_ratio(d: &DataMatrices) -> f64 {
    let sv = d.regressor().svd(false, false).singular_values;
    let max = sv.amax();
    if max == 0.0 {
        return 0.0;
    }
    let rows = d.x_minus.nrows() + d.u_minus.nrows();
    if sv.len() < rows {
        return 0.0;
    }
    sv.iter().copied().fold(f64::INFINITY, f64::min) / max
}

/// Moore-Penrose pseudo-inverse by SVD, dropping singular values below
/// `rel_tol` times the largest.
pub fn pseudo_inverse(m: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    let (r, c) = m.shape();
    if r == 0 || c == 0 {
        return DMatrix::zeros(c, r);
    }
    let svd = m.clone().svd(true, true);
    let u = svd.u.as_ref().expect("u");
    let vt = svd.v_t.as_ref().expect("v_t");
    let smax = svd.singular_values.amax();
    let mut out = DMatrix::zeros(c, r);
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s > rel_tol * smax && s > 0.0 {
            out += vt.row(i).transpose() * u.column(i).transpose() / s;
        }
    }
    out
}

/// `T` copies of the disturbance zonotope side by side: center `[c, …, c]`
/// and one generator per (noise generator, column) pair, ordered noise
/// generator major.
pub fn noise_matrix_zonotope(w: &Zonotope, samples: usize) -> Result<MatrixZonotope> {
    if samples == 0 {
        return Err(Error::InvalidArgument("noise matrix zonotope needs T ≥ 1".into()));
    }
    let n = w.dim();
    let mut center = DMatrix::zeros(n, samples);
    for j in 0..samples {
        center.set_column(j, w.center());
    }
    let mut gens = Vec::with_capacity(w.num_generators() * samples);
    for g in w.generators().column_iter() {
        for j in 0..samples {
            let mut m = DMatrix::zeros(n, samples);
            m.set_column(j, &g);
            gens.push(m);
        }
    }
    MatrixZonotope::new(center, gens)
}

/// Matrix zonotope of `[A B]` candidates plus optional reduced copy and its
/// vertex models.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSet {
    pub n: usize,
    pub m: usize,
    pub mz: MatrixZonotope,
    pub reduced: Option<MatrixZonotope>,
    pub vertices: Option<VertexModelSet>,
}

impl ModelSet {
    pub fn new(n: usize, m: usize, mz: MatrixZonotope) -> Result<Self> {
        if mz.shape() != (n, n + m) {
            return Err(dim_err(format!(
                "model set shape {:?}, expected ({n}, {})",
                mz.shape(),
                n + m
            )));
        }
        Ok(Self {
            n,
            m,
            mz,
            reduced: None,
            vertices: None,
        })
    }

    pub fn center_a(&self) -> DMatrix<f64> {
        self.mz.center().columns(0, self.n).into_owned()
    }

    pub fn center_b(&self) -> DMatrix<f64> {
        self.mz.center().columns(self.n, self.m).into_owned()
    }

    pub fn contains_model(&self, a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<bool> {
        if a.shape() != (self.n, self.n) || b.shape() != (self.n, self.m) {
            return Err(dim_err("candidate model has the wrong shape"));
        }
        let mut ab = DMatrix::zeros(self.n, self.n + self.m);
        ab.columns_mut(0, self.n).copy_from(a);
        ab.columns_mut(self.n, self.m).copy_from(b);
        self.mz.contains(&ab)
    }

    /// Reduces to `budget` generators and enumerates the vertex models.
    pub fn with_vertices(mut self, budget: usize, max_bits: usize) -> Result<Self> {
        let reduced = self.mz.reduce(budget)?;
        let vs = reduced.enumerate_vertices(self.n, max_bits)?;
        self.reduced = Some(reduced);
        self.vertices = Some(vs);
        Ok(self)
    }

    pub fn vertex_models(&self) -> Result<&VertexModelSet> {
        self.vertices
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("vertex models not enumerated".into()))
    }

    pub fn max_generator_norm(&self) -> f64 {
        self.mz.generators().iter().map(|g| g.norm()).fold(0.0, f64::max)
    }
}

/// `M_AB = (X₊ − M_w)·[X₋; U₋]^†`.
pub fn build_model_set(d: &DataMatrices, w: &Zonotope, rank_tol: f64) -> Result<ModelSet> {
    let n = d.x_minus.nrows();
    let m = d.u_minus.nrows();
    if w.dim() != n {
        return Err(dim_err(format!("{}-D disturbance for a {n}-D state", w.dim())));
    }
    if !rank_ok(d, rank_tol) {
        return Err(Error::Rank(format!(
            "[X₋; U₋] is not full row rank ({} rows, {} samples, excitation ratio {:.3e}); \
             collect more samples or raise the excitation amplitude",
            n + m,
            d.samples(),
            excitation_ratio(d)
        )));
    }
    let reg = d.regressor();
    let p = pseudo_inverse(&reg, rank_tol);
    let resid = &reg * &p - DMatrix::<f64>::identity(n + m, n + m);
    let resid_inf = resid
        .row_iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    if resid_inf > PINV_RESIDUAL_TOL {
        return Err(Error::Rank(format!(
            "pseudo-inverse residual {resid_inf:.3e} exceeds {PINV_RESIDUAL_TOL:e}"
        )));
    }
    let t = d.samples();
    let mw = noise_matrix_zonotope(w, t)?;
    let center = (&d.x_plus - mw.center()) * &p;
    // Each noise generator has a single nonzero column j, so G·P is the
    // outer product of that column with row j of P.
    let mut gens = Vec::with_capacity(w.num_generators() * t);
    for g in w.generators().column_iter() {
        for j in 0..t {
            gens.push(g * p.row(j));
        }
    }
    ModelSet::new(n, m, MatrixZonotope::new(center, gens)?)
}

pub fn stacked_state_input(x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
    let mut v = DVector::zeros(x.len() + u.len());
    v.rows_mut(0, x.len()).copy_from(x);
    v.rows_mut(x.len(), u.len()).copy_from(u);
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    fn traj(u: &[f64], x: &[f64]) -> Trajectory {
        Trajectory::new(
            DMatrix::from_row_slice(1, u.len(), u),
            DMatrix::from_row_slice(1, x.len(), x),
        )
        .unwrap()
    }

    #[test]
    fn stack_single_sample() {
        let set = TrajectorySet::new(1, 1, vec![traj(&[2.0], &[1.0, 3.0])]).unwrap();
        let d = stack(&set).unwrap();
        assert_eq!(d.samples(), 1);
        assert_eq!(d.x_minus[(0, 0)], 1.0);
        assert_eq!(d.x_plus[(0, 0)], 3.0);
        assert_eq!(d.u_minus[(0, 0)], 2.0);
    }

    #[test]
    fn stack_ordering() {
        let set = TrajectorySet::new(
            1,
            1,
            vec![
                traj(&[1.0, 2.0, 3.0], &[10.0, 11.0, 12.0, 13.0]),
                traj(&[4.0, 5.0], &[20.0, 21.0, 22.0]),
            ],
        )
        .unwrap();
        let d = stack(&set).unwrap();
        assert_eq!(d.samples(), 5);
        assert_eq!(d.u_minus.as_slice(), &[1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(d.x_minus.as_slice(), &[10.0, 11.0, 12.0, 20.0, 21.0]);
        assert_eq!(d.x_plus.as_slice(), &[11.0, 12.0, 13.0, 21.0, 22.0]);
    }

    #[test]
    fn stack_rejects_bad_shapes() {
        assert!(Trajectory::new(DMatrix::zeros(1, 2), DMatrix::zeros(1, 2)).is_err());
        assert!(TrajectorySet::new(2, 1, vec![traj(&[1.0], &[1.0, 2.0])]).is_err());
        assert!(stack(&TrajectorySet::new(1, 1, vec![]).unwrap()).is_err());
    }

    #[test]
    fn rank_checks() {
        let short = stack(&TrajectorySet::new(1, 1, vec![traj(&[1.0], &[0.0, 1.0])]).unwrap()).unwrap();
        assert!(!rank_ok(&short, DEFAULT_RANK_TOL));
        let flat =
            stack(&TrajectorySet::new(1, 1, vec![traj(&[0.0, 0.0, 0.0], &[0.0, 0.0, 0.0, 0.0])]).unwrap()).unwrap();
        assert!(!rank_ok(&flat, DEFAULT_RANK_TOL));
    }

    #[test]
    fn noise_matrix_zonotope_shapes() {
        let w = Zonotope::new(DVector::from_vec(vec![0.5]), DMatrix::from_element(1, 1, 0.1)).unwrap();
        let m = noise_matrix_zonotope(&w, 1).unwrap();
        assert_eq!(m.center()[(0, 0)], 0.5);
        assert_eq!(m.num_generators(), 1);
        let m = noise_matrix_zonotope(&w, 3).unwrap();
        assert_eq!(m.num_generators(), 3);
        for (j, g) in m.generators().iter().enumerate() {
            for c in 0..3 {
                assert_eq!(g[(0, c)], if c == j { 0.1 } else { 0.0 });
            }
        }
        assert!(noise_matrix_zonotope(&w, 0).is_err());
    }

    #[test]
    fn pseudo_inverse_of_wide_matrix() {
        let m = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 1.0, 0.0, 1.0, 1.0]);
        let p = pseudo_inverse(&m, DEFAULT_RANK_TOL);
        assert!((&m * &p - DMatrix::<f64>::identity(2, 2)).amax() < 1e-12);
    }

    #[test]
    fn single_sample_model_set_fails_rank() {
        let set = TrajectorySet::new(1, 1, vec![traj(&[1.0], &[1.0, 2.0])]).unwrap();
        let d = stack(&set).unwrap();
        let w = Zonotope::point(DVector::zeros(1));
        assert!(matches!(build_model_set(&d, &w, DEFAULT_RANK_TOL), Err(Error::Rank(_))));
    }
}
