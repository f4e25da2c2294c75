//! Zonotopes, H-polytopes and matrix zonotopes.
//!
//! A zonotope is `{c + Gβ : ‖β‖∞ ≤ 1}`; a matrix zonotope is the same with a
//! matrix center and a list of matrix generators. Everything here is
//! immutable after construction and pure.

use nalgebra::{DMatrix, DVector};

use crate::error::{dim_err, Error, Result};
use crate::lp::{self, LpBuilder, LpStatus, RowKind};

/// Absolute tolerance for comparing reals and for containment checks.
pub const SET_TOL: f64 = 1e-9;

/// Default cap on generator count for [`MatrixZonotope::enumerate_vertices`].
pub const DEFAULT_MAX_VERTEX_BITS: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct Zonotope {
    center: DVector<f64>,
    generators: DMatrix<f64>,
}

impl Zonotope {
    pub fn new(center: DVector<f64>, generators: DMatrix<f64>) -> Result<Self> {
        if generators.nrows() != center.len() && generators.ncols() > 0 {
            return Err(dim_err(format!(
                "generator matrix has {} rows for a center of length {}",
                generators.nrows(),
                center.len()
            )));
        }
        let n = center.len();
        let generators = if generators.ncols() == 0 {
            DMatrix::zeros(n, 0)
        } else {
            generators
        };
        Ok(Self { center, generators })
    }

    pub fn point(center: DVector<f64>) -> Self {
        let n = center.len();
        Self {
            center,
            generators: DMatrix::zeros(n, 0),
        }
    }

    /// Axis-aligned box `lo ≤ x ≤ hi`; degenerate axes get no generator.
    pub fn from_box(lo: &[f64], hi: &[f64]) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(dim_err("box bounds differ in length"));
        }
        let n = lo.len();
        let center = DVector::from_iterator(n, lo.iter().zip(hi).map(|(l, h)| 0.5 * (l + h)));
        let cols: Vec<DVector<f64>> = (0..n)
            .filter(|&i| hi[i] > lo[i])
            .map(|i| {
                let mut g = DVector::zeros(n);
                g[i] = 0.5 * (hi[i] - lo[i]);
                g
            })
            .collect();
        Ok(Self {
            center,
            generators: columns_to_matrix(n, &cols),
        })
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn num_generators(&self) -> usize {
        self.generators.ncols()
    }

    pub fn center(&self) -> &DVector<f64> {
        &self.center
    }

    pub fn generators(&self) -> &DMatrix<f64> {
        &self.generators
    }

    /// Exact: centers add, generators concatenate.
    pub fn minkowski_sum(&self, other: &Zonotope) -> Result<Zonotope> {
        if self.dim() != other.dim() {
            return Err(dim_err(format!(
                "Minkowski sum of {}-D and {}-D zonotopes",
                self.dim(),
                other.dim()
            )));
        }
        let n = self.dim();
        let p = self.num_generators() + other.num_generators();
        let mut g = DMatrix::zeros(n, p);
        g.view_mut((0, 0), (n, self.num_generators()))
            .copy_from(&self.generators);
        g.view_mut((0, self.num_generators()), (n, other.num_generators()))
            .copy_from(&other.generators);
        Ok(Zonotope {
            center: &self.center + &other.center,
            generators: g,
        })
    }

    pub fn linear_map(&self, m: &DMatrix<f64>) -> Result<Zonotope> {
        if m.ncols() != self.dim() {
            return Err(dim_err(format!(
                "map with {} columns applied to a {}-D zonotope",
                m.ncols(),
                self.dim()
            )));
        }
        Ok(Zonotope {
            center: m * &self.center,
            generators: m * &self.generators,
        })
    }

    pub fn translate(&self, offset: &DVector<f64>) -> Result<Zonotope> {
        if offset.len() != self.dim() {
            return Err(dim_err("translation vector length"));
        }
        Ok(Zonotope {
            center: &self.center + offset,
            generators: self.generators.clone(),
        })
    }

    /// Scales the generators, keeping the center fixed.
    pub fn scale_about_center(&self, factor: f64) -> Zonotope {
        Zonotope {
            center: self.center.clone(),
            generators: &self.generators * factor,
        }
    }

    /// `max_{x∈Z} dᵀx = dᵀc + Σⱼ |dᵀgⱼ|`.
    pub fn support(&self, d: &DVector<f64>) -> Result<f64> {
        if d.len() != self.dim() {
            return Err(dim_err(format!(
                "direction of length {} for a {}-D zonotope",
                d.len(),
                self.dim()
            )));
        }
        Ok(self.support_unchecked(d.as_slice()))
    }

    pub(crate) fn support_unchecked(&self, d: &[f64]) -> f64 {
        let mut s: f64 = d.iter().zip(self.center.iter()).map(|(a, b)| a * b).sum();
        for g in self.generators.column_iter() {
            s += d.iter().zip(g.iter()).map(|(a, b)| a * b).sum::<f64>().abs();
        }
        s
    }

    /// Componentwise half-widths of the interval hull.
    pub fn radius(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.dim(),
            self.generators.row_iter().map(|r| r.iter().map(|v| v.abs()).sum()),
        )
    }

    pub fn interval_hull(&self) -> (DVector<f64>, DVector<f64>) {
        let r = self.radius();
        (&self.center - &r, &self.center + &r)
    }

    /// Membership through the feasibility LP `c + Gβ = x, ‖β‖∞ ≤ 1`.
    pub fn contains_point(&self, x: &DVector<f64>) -> Result<bool> {
        if x.len() != self.dim() {
            return Err(dim_err(format!(
                "point of length {} for a {}-D zonotope",
                x.len(),
                self.dim()
            )));
        }
        let diff = x - &self.center;
        let rad = self.radius();
        for i in 0..self.dim() {
            if diff[i].abs() > rad[i] + SET_TOL * (1.0 + x[i].abs()) {
                return Ok(false);
            }
        }
        let p = self.num_generators();
        if p == 0 {
            return Ok(diff.amax() <= SET_TOL);
        }
        let mut b = LpBuilder::new(p);
        for j in 0..p {
            b.bounds(j, Some(-1.0), Some(1.0));
        }
        for i in 0..self.dim() {
            let row: Vec<f64> = self.generators.row(i).iter().copied().collect();
            if row.iter().all(|v| *v == 0.0) {
                if diff[i].abs() > SET_TOL {
                    return Ok(false);
                }
                continue;
            }
            b.row(&row, RowKind::Eq, diff[i]);
        }
        let sol = lp::solve(&b.build())?;
        match sol.status {
            LpStatus::Optimal => Ok(true),
            LpStatus::Infeasible => Ok(false),
            LpStatus::Unbounded => Err(Error::Solver("membership LP unbounded".into())),
        }
    }

    /// Exact zonotope-in-polytope test through support functions.
    pub fn is_inside(&self, p: &HPolytope) -> Result<bool> {
        self.is_inside_tol(p, SET_TOL)
    }

    pub fn is_inside_tol(&self, p: &HPolytope, tol: f64) -> Result<bool> {
        if p.dim() != self.dim() {
            return Err(dim_err(format!(
                "{}-D zonotope against {}-D polytope",
                self.dim(),
                p.dim()
            )));
        }
        for i in 0..p.num_rows() {
            let row: Vec<f64> = p.normals.row(i).iter().copied().collect();
            if self.support_unchecked(&row) > p.offsets[i] + tol {
                return Ok(false);
            }
        }
        Ok(true)
    }

    /// Drops zero generators and merges parallel ones.
    pub fn compact(&self) -> Zonotope {
        let n = self.dim();
        let mut kept: Vec<DVector<f64>> = Vec::new();
        for g in self.generators.column_iter() {
            let norm = g.norm();
            if norm <= 1e-14 {
                continue;
            }
            let g = g.into_owned();
            let mut merged = false;
            for k in kept.iter_mut() {
                let kn = k.norm();
                let cos = k.dot(&g) / (kn * norm);
                if (cos.abs() - 1.0).abs() <= 1e-12 {
                    if cos > 0.0 {
                        *k += &g;
                    } else {
                        *k -= &g;
                    }
                    merged = true;
                    break;
                }
            }
            if !merged {
                kept.push(g);
            }
        }
        Zonotope {
            center: self.center.clone(),
            generators: columns_to_matrix(n, &kept),
        }
    }

    /// Outer approximation with at most `target` generators: keeps the
    /// `target − n` longest generators and boxes the rest.
    pub fn reduce_order(&self, target: usize) -> Result<Zonotope> {
        let n = self.dim();
        if target < n {
            return Err(Error::InvalidArgument(format!(
                "reduction target {target} below dimension {n}"
            )));
        }
        if self.num_generators() <= target {
            return Ok(self.clone());
        }
        let mut order: Vec<usize> = (0..self.num_generators()).collect();
        let norms: Vec<f64> = self.generators.column_iter().map(|g| g.norm()).collect();
        order.sort_by(|&a, &b| norms[b].total_cmp(&norms[a]).then(a.cmp(&b)));
        let keep = target - n;
        let mut cols: Vec<DVector<f64>> = order[..keep]
            .iter()
            .map(|&j| self.generators.column(j).into_owned())
            .collect();
        let mut boxed = DVector::zeros(n);
        for &j in &order[keep..] {
            for i in 0..n {
                boxed[i] += self.generators[(i, j)].abs();
            }
        }
        for i in 0..n {
            if boxed[i] > 0.0 {
                let mut g = DVector::zeros(n);
                g[i] = boxed[i];
                cols.push(g);
            }
        }
        Ok(Zonotope {
            center: self.center.clone(),
            generators: columns_to_matrix(n, &cols),
        })
    }

    /// Row selection; exact.
    pub fn project(&self, coords: &[usize]) -> Result<Zonotope> {
        let n = self.dim();
        for (k, &i) in coords.iter().enumerate() {
            if i >= n {
                return Err(Error::InvalidArgument(format!(
                    "projection index {i} out of range for dimension {n}"
                )));
            }
            if coords[..k].contains(&i) {
                return Err(Error::InvalidArgument(format!("projection index {i} repeated")));
            }
        }
        let center = DVector::from_iterator(coords.len(), coords.iter().map(|&i| self.center[i]));
        let generators = self.generators.select_rows(coords.iter());
        Ok(Zonotope { center, generators })
    }

    /// Exact H-representation for dimension ≤ 3.
    pub fn to_hpolytope(&self) -> Result<HPolytope> {
        let n = self.dim();
        if n == 0 || n > 3 {
            return Err(Error::InvalidArgument(format!(
                "facet enumeration supports dimensions 1 to 3, got {n}"
            )));
        }
        let z = self.compact();
        let gens: Vec<DVector<f64>> = z.generators.column_iter().map(|g| g.into_owned()).collect();
        let mut dirs: Vec<DVector<f64>> = Vec::new();
        match n {
            1 => dirs.push(DVector::from_element(1, 1.0)),
            2 => {
                for g in &gens {
                    dirs.push(DVector::from_vec(vec![-g[1], g[0]]));
                }
                if gens.len() < 2 {
                    match gens.first() {
                        Some(g) => dirs.push(g.clone()),
                        None => {
                            dirs.push(DVector::from_vec(vec![1.0, 0.0]));
                            dirs.push(DVector::from_vec(vec![0.0, 1.0]));
                        }
                    }
                }
            }
            _ => {
                for a in 0..gens.len() {
                    for b in (a + 1)..gens.len() {
                        let c = cross3(&gens[a], &gens[b]);
                        if c.norm() > 1e-12 * gens[a].norm() * gens[b].norm() {
                            dirs.push(c);
                        }
                    }
                }
                let rank = matrix_rank(&z.generators, 1e-10);
                if rank < 3 {
                    let plane_normal = match rank {
                        2 => dirs.first().cloned(),
                        _ => None,
                    };
                    match (rank, plane_normal) {
                        (2, Some(nrm)) => {
                            for g in &gens {
                                dirs.push(cross3(&nrm, g));
                            }
                        }
                        _ => {
                            // Segment or point: box-style caps.
                            for i in 0..3 {
                                let mut e = DVector::zeros(3);
                                e[i] = 1.0;
                                dirs.push(e);
                            }
                            if let Some(g) = gens.first() {
                                let helper = if g[0].abs() < 0.9 * g.norm() {
                                    DVector::from_vec(vec![1.0, 0.0, 0.0])
                                } else {
                                    DVector::from_vec(vec![0.0, 1.0, 0.0])
                                };
                                let u = cross3(g, &helper);
                                let v = cross3(g, &u);
                                dirs.push(u);
                                dirs.push(v);
                                dirs.push(g.clone());
                            }
                        }
                    }
                }
            }
        }
        let mut rows: Vec<DVector<f64>> = Vec::new();
        for d in dirs {
            let nrm = d.norm();
            if nrm <= 1e-300 {
                continue;
            }
            let d = d / nrm;
            for cand in [d.clone(), -d] {
                if !rows.iter().any(|r| (r - &cand).amax() <= 1e-12) {
                    rows.push(cand);
                }
            }
        }
        let q = rows.len();
        let mut normals = DMatrix::zeros(q, n);
        let mut offsets = DVector::zeros(q);
        for (i, r) in rows.iter().enumerate() {
            normals.row_mut(i).copy_from(&r.transpose());
            offsets[i] = z.support_unchecked(r.as_slice());
        }
        HPolytope::new(normals, offsets)
    }

    /// Vertices for dimension ≤ 3 (counter-clockwise in 2-D).
    pub fn vertices(&self) -> Result<Vec<DVector<f64>>> {
        match self.dim() {
            1 => {
                let r = self.radius()[0];
                let c = self.center[0];
                if r == 0.0 {
                    Ok(vec![DVector::from_element(1, c)])
                } else {
                    Ok(vec![DVector::from_element(1, c - r), DVector::from_element(1, c + r)])
                }
            }
            2 => Ok(self.vertices_2d()),
            3 => self.to_hpolytope()?.vertices_3d(),
            n => Err(Error::InvalidArgument(format!(
                "vertex enumeration supports dimensions 1 to 3, got {n}"
            ))),
        }
    }

    fn vertices_2d(&self) -> Vec<DVector<f64>> {
        let z = self.compact();
        let mut gens: Vec<DVector<f64>> = z
            .generators
            .column_iter()
            .map(|g| {
                if g[1] < 0.0 || (g[1] == 0.0 && g[0] < 0.0) {
                    -g.into_owned()
                } else {
                    g.into_owned()
                }
            })
            .collect();
        if gens.is_empty() {
            return vec![z.center.clone()];
        }
        gens.sort_by(|a, b| a[1].atan2(a[0]).total_cmp(&b[1].atan2(b[0])));
        let sum: DVector<f64> = gens.iter().fold(DVector::zeros(2), |acc, g| acc + g);
        let mut v = &z.center - &sum;
        let mut out = Vec::with_capacity(2 * gens.len());
        for g in &gens {
            out.push(v.clone());
            v += 2.0 * g;
        }
        for g in &gens {
            out.push(v.clone());
            v -= 2.0 * g;
        }
        out
    }
}

/// `{x : normals·x ≤ offsets}`.
#[derive(Debug, Clone, PartialEq)]
pub struct HPolytope {
    normals: DMatrix<f64>,
    offsets: DVector<f64>,
}

impl HPolytope {
    pub fn new(normals: DMatrix<f64>, offsets: DVector<f64>) -> Result<Self> {
        if normals.nrows() != offsets.len() {
            return Err(dim_err(format!(
                "{} normals but {} offsets",
                normals.nrows(),
                offsets.len()
            )));
        }
        if normals.nrows() == 0 {
            return Err(Error::InvalidArgument("polytope needs at least one halfspace".into()));
        }
        Ok(Self { normals, offsets })
    }

    pub fn from_box(lo: &[f64], hi: &[f64]) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(dim_err("box bounds differ in length"));
        }
        let n = lo.len();
        let mut normals = DMatrix::zeros(2 * n, n);
        let mut offsets = DVector::zeros(2 * n);
        for i in 0..n {
            normals[(2 * i, i)] = 1.0;
            offsets[2 * i] = hi[i];
            normals[(2 * i + 1, i)] = -1.0;
            offsets[2 * i + 1] = -lo[i];
        }
        Self::new(normals, offsets)
    }

    pub fn dim(&self) -> usize {
        self.normals.ncols()
    }

    pub fn num_rows(&self) -> usize {
        self.normals.nrows()
    }

    pub fn normals(&self) -> &DMatrix<f64> {
        &self.normals
    }

    pub fn offsets(&self) -> &DVector<f64> {
        &self.offsets
    }

    pub fn contains(&self, x: &DVector<f64>) -> Result<bool> {
        self.contains_tol(x, SET_TOL)
    }

    pub fn contains_tol(&self, x: &DVector<f64>, tol: f64) -> Result<bool> {
        if x.len() != self.dim() {
            return Err(dim_err("point length does not match polytope dimension"));
        }
        Ok(self.max_violation(x) <= tol)
    }

    /// `max_i (normals_i·x − offsets_i)`.
    pub fn max_violation(&self, x: &DVector<f64>) -> f64 {
        let act = &self.normals * x;
        (0..self.num_rows())
            .map(|i| act[i] - self.offsets[i])
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Recovers box bounds when every row is ± an axis direction.
    pub fn as_box(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        let n = self.dim();
        let mut lo = vec![f64::NEG_INFINITY; n];
        let mut hi = vec![f64::INFINITY; n];
        for i in 0..self.num_rows() {
            let row = self.normals.row(i);
            let nz: Vec<usize> = (0..n).filter(|&j| row[j] != 0.0).collect();
            if nz.len() != 1 {
                return None;
            }
            let j = nz[0];
            let v = self.offsets[i] / row[j];
            if row[j] > 0.0 {
                hi[j] = hi[j].min(v);
            } else {
                lo[j] = lo[j].max(v);
            }
        }
        if lo.iter().chain(hi.iter()).all(|v| v.is_finite()) {
            Some((lo, hi))
        } else {
            None
        }
    }

    /// Center and radius of the largest inscribed ball; `None` when empty.
    pub fn chebyshev_center(&self) -> Result<Option<(DVector<f64>, f64)>> {
        let n = self.dim();
        let norms: Vec<f64> = self.normals.row_iter().map(|r| r.norm()).collect();
        let mut obj = vec![0.0; n + 1];
        obj[n] = -1.0;
        let mut lower = vec![None; n + 1];
        lower[n] = Some(0.0);
        let sol = row_generation(&obj, &lower, self.num_rows(), &self.seed_rows(&[]), |i, row| {
            for j in 0..n {
                row[j] = self.normals[(i, j)];
            }
            row[n] = norms[i];
            self.offsets[i]
        })?;
        match sol {
            RowGenEnd::Infeasible => Ok(None),
            RowGenEnd::Unbounded => Err(Error::Unbounded(
                "polytope contains arbitrarily large balls or rays".into(),
            )),
            RowGenEnd::Optimal(v) => Ok(Some((v.rows(0, n).into_owned(), v[n]))),
        }
    }

    pub fn is_empty(&self) -> Result<bool> {
        match self.chebyshev_center() {
            Ok(c) => Ok(c.is_none()),
            Err(Error::Unbounded(_)) => Ok(false),
            Err(e) => Err(e),
        }
    }

    /// Rows most aligned with each of `±eₖ` and `±extra`, deduplicated.
    /// For bounded polytopes of the shapes used here this subset is
    /// already bounded, which keeps restricted LPs well posed.
    fn seed_rows(&self, extra: &[DVector<f64>]) -> Vec<usize> {
        let n = self.dim();
        let norms: Vec<f64> = self.normals.row_iter().map(|r| r.norm().max(1e-300)).collect();
        let mut dirs: Vec<DVector<f64>> = Vec::new();
        for k in 0..n {
            let mut e = DVector::zeros(n);
            e[k] = 1.0;
            dirs.push(e.clone());
            dirs.push(-e);
        }
        for d in extra {
            dirs.push(d.clone());
            dirs.push(-d);
        }
        let mut out: Vec<usize> = Vec::new();
        for d in &dirs {
            let proj = &self.normals * d;
            let best = (0..self.num_rows())
                .max_by(|&a, &b| (proj[a] / norms[a]).total_cmp(&(proj[b] / norms[b])).then(b.cmp(&a)));
            if let Some(i) = best {
                if !out.contains(&i) {
                    out.push(i);
                }
            }
        }
        out
    }

    fn vertices_3d(&self) -> Result<Vec<DVector<f64>>> {
        let q = self.num_rows();
        let mut out: Vec<DVector<f64>> = Vec::new();
        for a in 0..q {
            for b in (a + 1)..q {
                for c in (b + 1)..q {
                    let m = DMatrix::from_rows(&[
                        self.normals.row(a).into_owned(),
                        self.normals.row(b).into_owned(),
                        self.normals.row(c).into_owned(),
                    ]);
                    if m.determinant().abs() < 1e-12 {
                        continue;
                    }
                    let rhs = DVector::from_vec(vec![self.offsets[a], self.offsets[b], self.offsets[c]]);
                    if let Some(v) = m.lu().solve(&rhs) {
                        if self.max_violation(&v) <= 1e-9 && !out.iter().any(|w| (w - &v).amax() <= 1e-9) {
                            out.push(v);
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

pub(crate) enum RowGenEnd {
    Optimal(DVector<f64>),
    Infeasible,
    Unbounded,
}

/// Solves `min objᵀv` over a possibly very tall row set by cutting planes.
///
/// `row(i, coeffs)` fills the coefficients of row `i` and returns its rhs;
/// all rows are `≤`. Starts from `seed` plus a prefix of the rows, then adds
/// the most violated rows in batches until every row holds.
pub(crate) fn row_generation(
    obj: &[f64],
    lower: &[Option<f64>],
    num_rows: usize,
    seed: &[usize],
    row: impl Fn(usize, &mut [f64]) -> f64,
) -> Result<RowGenEnd> {
    let num_vars = obj.len();
    let mut coeffs = vec![0.0; num_rows * num_vars];
    let mut rhs = vec![0.0; num_rows];
    for i in 0..num_rows {
        rhs[i] = row(i, &mut coeffs[i * num_vars..(i + 1) * num_vars]);
    }
    let row_scale: Vec<f64> = (0..num_rows)
        .map(|i| {
            coeffs[i * num_vars..(i + 1) * num_vars]
                .iter()
                .fold(0.0_f64, |a, v| a.max(v.abs()))
                .max(1e-300)
        })
        .collect();

    const DIRECT_LIMIT: usize = 300;
    const BATCH: usize = 60;
    let mut in_active = vec![false; num_rows];
    let mut active: Vec<usize> = Vec::new();
    let prefix = if num_rows <= DIRECT_LIMIT {
        num_rows
    } else {
        DIRECT_LIMIT / 2
    };
    for i in seed.iter().copied().chain(0..prefix) {
        if !in_active[i] {
            in_active[i] = true;
            active.push(i);
        }
    }
    loop {
        let mut b = LpBuilder::new(num_vars);
        for j in 0..num_vars {
            b.objective(j, obj[j]);
            b.bounds(j, lower[j], None);
        }
        for &i in &active {
            b.row(&coeffs[i * num_vars..(i + 1) * num_vars], RowKind::Le, rhs[i]);
        }
        let built = b.build();
        let sol = lp::solve(&built)?;
        let v = match sol.status {
            LpStatus::Infeasible => return Ok(RowGenEnd::Infeasible),
            LpStatus::Unbounded if active.len() == num_rows => return Ok(RowGenEnd::Unbounded),
            LpStatus::Unbounded => {
                if num_rows > 4 * DIRECT_LIMIT {
                    return Err(Error::Solver(format!(
                        "restricted LP with {} of {num_rows} rows is unbounded",
                        active.len()
                    )));
                }
                active = (0..num_rows).collect();
                in_active.iter_mut().for_each(|f| *f = true);
                continue;
            }
            LpStatus::Optimal => sol.point.expect("optimal point"),
        };
        let mut violated: Vec<(f64, usize)> = Vec::new();
        for i in 0..num_rows {
            if in_active[i] {
                continue;
            }
            let c = &coeffs[i * num_vars..(i + 1) * num_vars];
            let act: f64 = c.iter().zip(v.iter()).map(|(a, b)| a * b).sum();
            let viol = (act - rhs[i]) / row_scale[i];
            if viol > SET_TOL * 1e-1 {
                violated.push((viol, i));
            }
        }
        if violated.is_empty() {
            return Ok(RowGenEnd::Optimal(v));
        }
        violated.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        for &(_, i) in violated.iter().take(BATCH) {
            in_active[i] = true;
            active.push(i);
        }
    }
}

/// Largest zonotope (by weighted generator lengths) with generators along
/// the given template directions that fits inside `p`.
///
/// Solves `max Σ wⱼsⱼ` over `(c, s ≥ 0)` subject to
/// `aᵢᵀc + Σⱼ sⱼ|aᵢᵀtⱼ| ≤ bᵢ` for every halfspace, which is exactly the
/// containment of `Z(c, T·diag(s))` in `p`.
pub fn inner_zonotope(p: &HPolytope, template: &[DVector<f64>], weights: Option<&[f64]>) -> Result<Zonotope> {
    let n = p.dim();
    if template.iter().any(|t| t.len() != n) {
        return Err(dim_err("template direction length differs from polytope dimension"));
    }
    let tmat = columns_to_matrix(n, template);
    if matrix_rank(&tmat, 1e-10) < n {
        return Err(Error::InvalidArgument(format!(
            "template of {} directions does not span {n}-D space",
            template.len()
        )));
    }
    let k = template.len();
    let weights: Vec<f64> = match weights {
        Some(w) if w.len() == k => w.to_vec(),
        Some(_) => return Err(dim_err("template weight count")),
        None => vec![1.0; k],
    };
    if p.chebyshev_center()?.is_none() {
        return Err(Error::EmptySet("polytope has no interior or boundary point".into()));
    }
    // |aᵢᵀtⱼ| for every row and template direction.
    let proj = p.normals() * &tmat;
    let mut obj = vec![0.0; n + k];
    for j in 0..k {
        obj[n + j] = -weights[j];
    }
    let mut lower = vec![None; n + k];
    for l in lower.iter_mut().skip(n) {
        *l = Some(0.0);
    }
    let sol = row_generation(&obj, &lower, p.num_rows(), &p.seed_rows(template), |i, row| {
        for j in 0..n {
            row[j] = p.normals[(i, j)];
        }
        for j in 0..k {
            row[n + j] = proj[(i, j)].abs();
        }
        p.offsets[i]
    })?;
    let sol = match sol {
        RowGenEnd::Optimal(v) => v,
        RowGenEnd::Infeasible => return Err(Error::EmptySet("inner approximation LP infeasible".into())),
        RowGenEnd::Unbounded => {
            return Err(Error::Unbounded(
                "polytope is unbounded along a template direction".into(),
            ))
        }
    };
    let center = sol.rows(0, n).into_owned();
    let cols: Vec<DVector<f64>> = (0..k)
        .filter(|&j| sol[n + j] > 1e-13)
        .map(|j| &template[j] * sol[n + j])
        .collect();
    Ok(Zonotope {
        center,
        generators: columns_to_matrix(n, &cols),
    })
}

/// Matrix set `{C + Σᵢ βᵢGᵢ : ‖β‖∞ ≤ 1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixZonotope {
    center: DMatrix<f64>,
    generators: Vec<DMatrix<f64>>,
}

impl MatrixZonotope {
    pub fn new(center: DMatrix<f64>, generators: Vec<DMatrix<f64>>) -> Result<Self> {
        for (i, g) in generators.iter().enumerate() {
            if g.shape() != center.shape() {
                return Err(dim_err(format!(
                    "generator {i} has shape {:?}, center has {:?}",
                    g.shape(),
                    center.shape()
                )));
            }
        }
        Ok(Self { center, generators })
    }

    pub fn center(&self) -> &DMatrix<f64> {
        &self.center
    }

    pub fn generators(&self) -> &[DMatrix<f64>] {
        &self.generators
    }

    pub fn shape(&self) -> (usize, usize) {
        self.center.shape()
    }

    pub fn num_generators(&self) -> usize {
        self.generators.len()
    }

    /// Column-major vectorization into a zonotope of dimension rows·cols.
    pub fn vectorize(&self) -> Zonotope {
        let d = self.center.len();
        let center = DVector::from_column_slice(self.center.as_slice());
        let mut g = DMatrix::zeros(d, self.generators.len());
        for (j, gm) in self.generators.iter().enumerate() {
            g.set_column(j, &DVector::from_column_slice(gm.as_slice()));
        }
        Zonotope { center, generators: g }
    }

    pub fn from_vectorized(z: &Zonotope, rows: usize, cols: usize) -> Result<Self> {
        if z.dim() != rows * cols {
            return Err(dim_err("vectorized dimension does not match matrix shape"));
        }
        let center = DMatrix::from_column_slice(rows, cols, z.center.as_slice());
        let generators = z
            .generators
            .column_iter()
            .map(|g| DMatrix::from_column_slice(rows, cols, g.into_owned().as_slice()))
            .collect();
        Ok(Self { center, generators })
    }

    /// `{Mv : M ∈ self}`: center `Cv` and one generator `Gᵢv` per matrix generator.
    pub fn times_vector(&self, v: &DVector<f64>) -> Result<Zonotope> {
        if v.len() != self.center.ncols() {
            return Err(dim_err(format!(
                "vector of length {} for matrices with {} columns",
                v.len(),
                self.center.ncols()
            )));
        }
        let n = self.center.nrows();
        let mut g = DMatrix::zeros(n, self.generators.len());
        for (j, gm) in self.generators.iter().enumerate() {
            g.set_column(j, &(gm * v));
        }
        Ok(Zonotope {
            center: &self.center * v,
            generators: g,
        })
    }

    /// Vectorized membership.
    pub fn contains(&self, m: &DMatrix<f64>) -> Result<bool> {
        if m.shape() != self.center.shape() {
            return Err(dim_err("matrix shape differs from matrix zonotope"));
        }
        self.vectorize()
            .contains_point(&DVector::from_column_slice(m.as_slice()))
    }

    /// Outer approximation with at most `target` generators.
    ///
    /// When `target` reaches the vectorized dimension this is the plain
    /// order reduction (longest kept, rest boxed along the axes). Below it,
    /// the box is taken in an orthonormal basis of the generator span, which
    /// only works when that span has dimension ≤ `target`.
    pub fn reduce(&self, target: usize) -> Result<MatrixZonotope> {
        if target < 1 {
            return Err(Error::InvalidArgument("reduction target must be at least 1".into()));
        }
        if self.generators.len() <= target {
            return Ok(self.clone());
        }
        let (rows, cols) = self.shape();
        let z = self.vectorize();
        let d = z.dim();
        if target >= d {
            return Self::from_vectorized(&z.reduce_order(target)?, rows, cols);
        }
        let svd = z.generators.clone().svd(true, false);
        let u = svd.u.expect("left singular vectors");
        let smax = svd.singular_values.amax();
        let basis_idx: Vec<usize> = (0..svd.singular_values.len())
            .filter(|&i| svd.singular_values[i] > 1e-10 * smax.max(1e-300))
            .collect();
        let r = basis_idx.len();
        if r > target {
            return Err(Error::InvalidArgument(format!(
                "generators span {r} dimensions; {target} generators cannot enclose them"
            )));
        }
        let basis = u.select_columns(basis_idx.iter());
        let coords = basis.transpose() * &z.generators;
        let local = Zonotope {
            center: DVector::zeros(r),
            generators: coords,
        }
        .reduce_order(target)?;
        let reduced = Zonotope {
            center: z.center.clone(),
            generators: &basis * &local.generators,
        };
        Self::from_vectorized(&reduced, rows, cols)
    }

    /// All `2^q` sign combinations `C + Σ σᵢGᵢ`, split as `[A | B]` at
    /// column `split`.
    pub fn enumerate_vertices(&self, split: usize, max_bits: usize) -> Result<VertexModelSet> {
        let q = self.generators.len();
        if q > max_bits {
            return Err(Error::InvalidArgument(format!(
                "{q} generators exceed the vertex cap of {max_bits}; reduce the matrix zonotope first"
            )));
        }
        let (rows, cols) = self.shape();
        if split > cols {
            return Err(dim_err("split column beyond matrix width"));
        }
        let mut vertices = Vec::with_capacity(1 << q);
        for mask in 0..(1usize << q) {
            let signs: Vec<i8> = (0..q).map(|i| if mask >> i & 1 == 1 { 1 } else { -1 }).collect();
            let mut m = self.center.clone();
            for (g, s) in self.generators.iter().zip(&signs) {
                m += g * f64::from(*s);
            }
            let a = m.view((0, 0), (rows, split)).into_owned();
            let b = m.view((0, split), (rows, cols - split)).into_owned();
            vertices.push(ModelVertex { a, b, signs });
        }
        Ok(VertexModelSet { vertices })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelVertex {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    /// Sign pattern σ with `[A | B] = C + Σ σᵢGᵢ`.
    pub signs: Vec<i8>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VertexModelSet {
    pub vertices: Vec<ModelVertex>,
}

impl VertexModelSet {
    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &ModelVertex> {
        self.vertices.iter()
    }
}

pub(crate) fn columns_to_matrix(n: usize, cols: &[DVector<f64>]) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n, cols.len());
    for (j, c) in cols.iter().enumerate() {
        m.set_column(j, c);
    }
    m
}

pub(crate) fn matrix_rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    if m.is_empty() {
        return 0;
    }
    let sv = m.clone().svd(false, false).singular_values;
    let smax = sv.amax();
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|s| **s > rel_tol * smax).count()
}

fn cross3(a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
    DVector::from_vec(vec![
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ])
}
