//! Dense bounded-variable simplex.
//!
//! Problems are small (a few hundred rows at most) so the whole tableau is
//! kept dense. Variables carry optional lower/upper bounds and nonbasic
//! variables sit at one of their bounds (or at zero when free), which keeps
//! box-constrained problems such as zonotope membership down to one row per
//! equality. Pricing is Dantzig's rule; after a degenerate pivot the solver
//! switches to Bland's rule until the objective moves again, which rules out
//! cycling.

use std::sync::atomic::{AtomicU64, Ordering};

use nalgebra::{DMatrix, DVector};

use crate::error::{dim_err, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowKind {
    Le,
    Eq,
}

/// `minimize objective·x  s.t.  matrix·x (≤|=) rhs,  lower ≤ x ≤ upper`.
#[derive(Debug, Clone)]
pub struct LinearProgram {
    pub objective: DVector<f64>,
    pub matrix: DMatrix<f64>,
    pub rhs: DVector<f64>,
    pub kinds: Vec<RowKind>,
    pub lower: Vec<Option<f64>>,
    pub upper: Vec<Option<f64>>,
}

impl LinearProgram {
    /// All variables free.
    pub fn new(objective: DVector<f64>, matrix: DMatrix<f64>, rhs: DVector<f64>, kinds: Vec<RowKind>) -> Self {
        let n = objective.len();
        Self {
            objective,
            matrix,
            rhs,
            kinds,
            lower: vec![None; n],
            upper: vec![None; n],
        }
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn num_rows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn set_bounds(&mut self, var: usize, lower: Option<f64>, upper: Option<f64>) {
        self.lower[var] = lower;
        self.upper[var] = upper;
    }

    fn validate(&self) -> Result<()> {
        let n = self.objective.len();
        if self.matrix.ncols() != n && self.matrix.nrows() > 0 {
            return Err(dim_err(format!(
                "objective has {} entries but constraint matrix has {} columns",
                n,
                self.matrix.ncols()
            )));
        }
        if self.matrix.nrows() != self.rhs.len() || self.rhs.len() != self.kinds.len() {
            return Err(dim_err(format!(
                "constraint rows {}, rhs {}, row kinds {}",
                self.matrix.nrows(),
                self.rhs.len(),
                self.kinds.len()
            )));
        }
        if self.lower.len() != n || self.upper.len() != n {
            return Err(dim_err("bound vectors must match variable count"));
        }
        Ok(())
    }
}

/// Row-at-a-time construction helper.
#[derive(Debug, Clone)]
pub struct LpBuilder {
    num_vars: usize,
    objective: Vec<f64>,
    rows: Vec<f64>,
    rhs: Vec<f64>,
    kinds: Vec<RowKind>,
    lower: Vec<Option<f64>>,
    upper: Vec<Option<f64>>,
}

impl LpBuilder {
    pub fn new(num_vars: usize) -> Self {
        Self {
            num_vars,
            objective: vec![0.0; num_vars],
            rows: Vec::new(),
            rhs: Vec::new(),
            kinds: Vec::new(),
            lower: vec![None; num_vars],
            upper: vec![None; num_vars],
        }
    }

    pub fn objective(&mut self, var: usize, coeff: f64) -> &mut Self {
        self.objective[var] = coeff;
        self
    }

    pub fn bounds(&mut self, var: usize, lower: Option<f64>, upper: Option<f64>) -> &mut Self {
        self.lower[var] = lower;
        self.upper[var] = upper;
        self
    }

    /// Dense row; `coeffs.len()` must equal the variable count.
    pub fn row(&mut self, coeffs: &[f64], kind: RowKind, rhs: f64) -> &mut Self {
        assert_eq!(coeffs.len(), self.num_vars, "row length");
        self.rows.extend_from_slice(coeffs);
        self.kinds.push(kind);
        self.rhs.push(rhs);
        self
    }

    /// Sparse row given as `(var, coeff)` pairs.
    pub fn sparse_row(&mut self, terms: &[(usize, f64)], kind: RowKind, rhs: f64) -> &mut Self {
        let start = self.rows.len();
        self.rows.resize(start + self.num_vars, 0.0);
        for &(j, v) in terms {
            self.rows[start + j] += v;
        }
        self.kinds.push(kind);
        self.rhs.push(rhs);
        self
    }

    pub fn build(self) -> LinearProgram {
        let m = self.kinds.len();
        LinearProgram {
            objective: DVector::from_vec(self.objective),
            matrix: DMatrix::from_row_slice(m, self.num_vars, &self.rows),
            rhs: DVector::from_vec(self.rhs),
            kinds: self.kinds,
            lower: self.lower,
            upper: self.upper,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub status: LpStatus,
    pub point: Option<DVector<f64>>,
    pub value: Option<f64>,
}

impl LpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == LpStatus::Optimal
    }

    fn without_point(status: LpStatus) -> Self {
        Self {
            status,
            point: None,
            value: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    /// Primal feasibility.
    pub feas: f64,
    /// Reduced-cost optimality.
    pub opt: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { feas: 1e-9, opt: 1e-9 }
    }
}

static GLOBAL_FEAS: AtomicU64 = AtomicU64::new(0x3E11_2E0B_E826_D695); // 1e-9
static GLOBAL_OPT: AtomicU64 = AtomicU64::new(0x3E11_2E0B_E826_D695);

/// Tolerances used by [`solve`].
pub fn global_tolerances() -> Tolerances {
    Tolerances {
        feas: f64::from_bits(GLOBAL_FEAS.load(Ordering::Relaxed)),
        opt: f64::from_bits(GLOBAL_OPT.load(Ordering::Relaxed)),
    }
}

pub fn set_global_tolerances(tol: Tolerances) {
    GLOBAL_FEAS.store(tol.feas.to_bits(), Ordering::Relaxed);
    GLOBAL_OPT.store(tol.opt.to_bits(), Ordering::Relaxed);
}

pub fn solve(lp: &LinearProgram) -> Result<LpSolution> {
    solve_with(lp, &global_tolerances())
}

pub fn solve_with(lp: &LinearProgram, tol: &Tolerances) -> Result<LpSolution> {
    lp.validate()?;
    for j in 0..lp.num_vars() {
        if let (Some(l), Some(u)) = (lp.lower[j], lp.upper[j]) {
            if l > u + tol.feas * (1.0 + l.abs().max(u.abs())) {
                return Ok(LpSolution::without_point(LpStatus::Infeasible));
            }
        }
    }
    let mut tab = Tableau::build(lp);
    let max_iter = 200 * (tab.m + tab.ncols) + 5_000;

    if tab.num_artificial > 0 {
        let phase1_cost: Vec<f64> = (0..tab.ncols)
            .map(|j| if tab.is_artificial(j) { 1.0 } else { 0.0 })
            .collect();
        match tab.run(&phase1_cost, tol, max_iter)? {
            PhaseEnd::Optimal => {}
            PhaseEnd::Unbounded => {
                return Err(Error::Solver("phase one reported unbounded".into()));
            }
        }
        tab.refresh_basic_values();
        let infeas: f64 = (0..tab.ncols)
            .filter(|&j| tab.is_artificial(j))
            .map(|j| tab.x[j].abs())
            .sum();
        let bnorm = tab.b.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        if infeas > tol.feas * (1.0 + bnorm) {
            return Ok(LpSolution::without_point(LpStatus::Infeasible));
        }
        tab.retire_artificials();
    }

    let mut cost = vec![0.0; tab.ncols];
    cost[..lp.num_vars()].copy_from_slice(lp.objective.as_slice());
    match tab.run(&cost, tol, max_iter)? {
        PhaseEnd::Unbounded => return Ok(LpSolution::without_point(LpStatus::Unbounded)),
        PhaseEnd::Optimal => {}
    }
    tab.polish();

    let point = DVector::from_iterator(lp.num_vars(), tab.x[..lp.num_vars()].iter().copied());
    check_feasible(lp, &point, tol)?;
    let value = lp.objective.dot(&point);
    Ok(LpSolution {
        status: LpStatus::Optimal,
        point: Some(point),
        value: Some(value),
    })
}

fn check_feasible(lp: &LinearProgram, x: &DVector<f64>, tol: &Tolerances) -> Result<()> {
    // Residuals are judged relative to the magnitudes involved in each row.
    let slack_tol = tol.feas * 10.0;
    for i in 0..lp.num_rows() {
        let row = lp.matrix.row(i);
        let mut act = 0.0;
        let mut mag = lp.rhs[i].abs();
        for j in 0..lp.num_vars() {
            let t = row[j] * x[j];
            act += t;
            mag = mag.max(t.abs());
        }
        let scale = row.iter().fold(0.0_f64, |a, v| a.max(v.abs())).max(1e-300);
        let viol = match lp.kinds[i] {
            RowKind::Le => act - lp.rhs[i],
            RowKind::Eq => (act - lp.rhs[i]).abs(),
        };
        if viol > slack_tol * (scale + mag) {
            return Err(Error::Solver(format!("returned point violates row {i} by {viol:e}")));
        }
    }
    for j in 0..lp.num_vars() {
        let v = x[j];
        if let Some(l) = lp.lower[j] {
            if v < l - slack_tol * (1.0 + l.abs()) {
                return Err(Error::Solver(format!("variable {j} below its lower bound")));
            }
        }
        if let Some(u) = lp.upper[j] {
            if v > u + slack_tol * (1.0 + u.abs()) {
                return Err(Error::Solver(format!("variable {j} above its upper bound")));
            }
        }
    }
    Ok(())
}

enum PhaseEnd {
    Optimal,
    Unbounded,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum NonBasic {
    Lower,
    Upper,
    Zero,
}

const PIVOT_TOL: f64 = 1e-11;
const DEGENERATE_STEP: f64 = 1e-12;
const REFACTOR_EVERY: usize = 50;

/// Columns: structural, then one slack per `≤` row, then artificials.
struct Tableau {
    m: usize,
    ncols: usize,
    num_artificial: usize,
    /// Row-scaled original columns, kept for the final basis solve.
    orig: DMatrix<f64>,
    b: Vec<f64>,
    /// B⁻¹[A | b], row-major with `ncols + 1` entries per row.
    t: Vec<f64>,
    lo: Vec<f64>,
    hi: Vec<f64>,
    x: Vec<f64>,
    basis: Vec<usize>,
    state: Vec<Option<NonBasic>>,
}

impl Tableau {
    fn build(lp: &LinearProgram) -> Self {
        let m = lp.num_rows();
        let n = lp.num_vars();
        let n_slack = lp.kinds.iter().filter(|k| **k == RowKind::Le).count();

        let mut lo = Vec::with_capacity(n + n_slack + m);
        let mut hi = Vec::with_capacity(n + n_slack + m);
        for j in 0..n {
            lo.push(lp.lower[j].unwrap_or(f64::NEG_INFINITY));
            hi.push(lp.upper[j].unwrap_or(f64::INFINITY));
        }
        let mut x: Vec<f64> = (0..n)
            .map(|j| {
                if lo[j].is_finite() {
                    lo[j]
                } else if hi[j].is_finite() {
                    hi[j]
                } else {
                    0.0
                }
            })
            .collect();

        // Row equilibration.
        let mut a = lp.matrix.clone();
        let mut b: Vec<f64> = lp.rhs.iter().copied().collect();
        for i in 0..m {
            let s = a.row(i).iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
            if s > 0.0 {
                a.row_mut(i).scale_mut(1.0 / s);
                b[i] /= s;
            }
        }

        let mut resid = b.clone();
        for i in 0..m {
            for j in 0..n {
                resid[i] -= a[(i, j)] * x[j];
            }
        }

        let mut slack_of_row = vec![None; m];
        let mut col = n;
        for (i, kind) in lp.kinds.iter().enumerate() {
            if *kind == RowKind::Le {
                slack_of_row[i] = Some(col);
                lo.push(0.0);
                hi.push(f64::INFINITY);
                x.push(0.0);
                col += 1;
            }
        }
        let mut art_of_row = vec![None; m];
        let mut art_sign = vec![1.0; m];
        for i in 0..m {
            let needs = match slack_of_row[i] {
                Some(_) => resid[i] < 0.0,
                None => true,
            };
            if needs {
                art_of_row[i] = Some(col);
                art_sign[i] = if resid[i] >= 0.0 { 1.0 } else { -1.0 };
                lo.push(0.0);
                hi.push(f64::INFINITY);
                x.push(0.0);
                col += 1;
            }
        }
        let ncols = col;
        let num_artificial = ncols - n - n_slack;

        let mut orig = DMatrix::zeros(m, ncols);
        orig.view_mut((0, 0), (m, n)).copy_from(&a);
        for i in 0..m {
            if let Some(s) = slack_of_row[i] {
                orig[(i, s)] = 1.0;
            }
            if let Some(c) = art_of_row[i] {
                orig[(i, c)] = art_sign[i];
            }
        }

        let mut basis = vec![0; m];
        let mut state: Vec<Option<NonBasic>> = (0..ncols)
            .map(|j| {
                Some(if lo[j].is_finite() && x[j] == lo[j] {
                    NonBasic::Lower
                } else if hi[j].is_finite() && x[j] == hi[j] {
                    NonBasic::Upper
                } else {
                    NonBasic::Zero
                })
            })
            .collect();
        for i in 0..m {
            let bv = art_of_row[i].or(slack_of_row[i]).expect("row has a basic column");
            basis[i] = bv;
            state[bv] = None;
        }

        // B = diag(±1) on the chosen columns, so B⁻¹A is a sign flip per row.
        let w = ncols + 1;
        let mut t = vec![0.0; m * w];
        for i in 0..m {
            let sign = orig[(i, basis[i])];
            for j in 0..ncols {
                t[i * w + j] = orig[(i, j)] * sign;
            }
            t[i * w + ncols] = b[i] * sign;
        }

        let mut tab = Self {
            m,
            ncols,
            num_artificial,
            orig,
            b,
            t,
            lo,
            hi,
            x,
            basis,
            state,
        };
        tab.refresh_basic_values();
        tab
    }

    fn is_artificial(&self, j: usize) -> bool {
        j >= self.ncols - self.num_artificial
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.t[i * (self.ncols + 1) + j]
    }

    fn refresh_basic_values(&mut self) {
        let w = self.ncols + 1;
        for i in 0..self.m {
            let row = &self.t[i * w..(i + 1) * w];
            let mut v = row[self.ncols];
            for j in 0..self.ncols {
                if self.state[j].is_some() && self.x[j] != 0.0 {
                    v -= row[j] * self.x[j];
                }
            }
            self.x[self.basis[i]] = v;
        }
    }

    fn pivot(&mut self, r: usize, q: usize) {
        let w = self.ncols + 1;
        let p = self.t[r * w + q];
        for j in 0..w {
            self.t[r * w + j] /= p;
        }
        let (before, rest) = self.t.split_at_mut(r * w);
        let (prow, after) = rest.split_at_mut(w);
        for chunk in before.chunks_exact_mut(w).chain(after.chunks_exact_mut(w)) {
            let f = chunk[q];
            if f != 0.0 {
                for j in 0..w {
                    chunk[j] -= f * prow[j];
                }
                chunk[q] = 0.0;
            }
        }
        let leaving = self.basis[r];
        self.basis[r] = q;
        self.state[q] = None;
        let lv = self.x[leaving];
        let st = if self.lo[leaving].is_finite()
            && (!self.hi[leaving].is_finite() || (lv - self.lo[leaving]).abs() <= (lv - self.hi[leaving]).abs())
        {
            self.x[leaving] = self.lo[leaving];
            NonBasic::Lower
        } else if self.hi[leaving].is_finite() {
            self.x[leaving] = self.hi[leaving];
            NonBasic::Upper
        } else {
            self.x[leaving] = 0.0;
            NonBasic::Zero
        };
        self.state[leaving] = Some(st);
    }

    fn run(&mut self, cost: &[f64], tol: &Tolerances, max_iter: usize) -> Result<PhaseEnd> {
        let mut bland = false;
        let mut d = vec![0.0; self.ncols];
        let mut cands: Vec<(usize, f64, f64)> = Vec::new();
        let w = self.ncols + 1;
        for it in 0..max_iter {
            if it > 0 && it % REFACTOR_EVERY == 0 {
                self.refactor();
            }
            self.refresh_basic_values();

            d.copy_from_slice(cost);
            for i in 0..self.m {
                let cb = cost[self.basis[i]];
                if cb != 0.0 {
                    let row = &self.t[i * w..i * w + self.ncols];
                    for j in 0..self.ncols {
                        d[j] -= cb * row[j];
                    }
                }
            }

            let mut entering: Option<(usize, f64)> = None;
            let mut best = 0.0;
            for j in 0..self.ncols {
                let Some(st) = self.state[j] else { continue };
                if self.lo[j] == self.hi[j] {
                    continue;
                }
                let dir = match st {
                    NonBasic::Lower if d[j] < -tol.opt => 1.0,
                    NonBasic::Upper if d[j] > tol.opt => -1.0,
                    NonBasic::Zero if d[j].abs() > tol.opt => -d[j].signum(),
                    _ => continue,
                };
                if bland {
                    entering = Some((j, dir));
                    break;
                }
                if d[j].abs() > best {
                    best = d[j].abs();
                    entering = Some((j, dir));
                }
            }
            let Some((q, dir)) = entering else {
                return Ok(PhaseEnd::Optimal);
            };

            // Harris two-pass ratio test: bound the step with slightly relaxed
            // bounds, then among rows within that step take the largest pivot.
            let relax = tol.feas;
            let mut theta_max = self.hi[q] - self.lo[q];
            for i in 0..self.m {
                let alpha = self.at(i, q) * dir;
                if alpha.abs() <= PIVOT_TOL {
                    continue;
                }
                let bv = self.basis[i];
                let xi = self.x[bv];
                let r = if alpha > 0.0 {
                    if !self.lo[bv].is_finite() {
                        continue;
                    }
                    (xi - self.lo[bv] + relax) / alpha
                } else {
                    if !self.hi[bv].is_finite() {
                        continue;
                    }
                    (self.hi[bv] - xi + relax) / -alpha
                };
                theta_max = theta_max.min(r.max(0.0));
            }
            let mut theta = self.hi[q] - self.lo[q];
            let mut leave: Option<usize> = None;
            if theta_max.is_finite() {
                cands.clear();
                let mut amax = 0.0_f64;
                for i in 0..self.m {
                    let alpha = self.at(i, q) * dir;
                    if alpha.abs() <= PIVOT_TOL {
                        continue;
                    }
                    let bv = self.basis[i];
                    let xi = self.x[bv];
                    let ratio = if alpha > 0.0 {
                        if !self.lo[bv].is_finite() {
                            continue;
                        }
                        ((xi - self.lo[bv]) / alpha).max(0.0)
                    } else {
                        if !self.hi[bv].is_finite() {
                            continue;
                        }
                        ((self.hi[bv] - xi) / -alpha).max(0.0)
                    };
                    if ratio <= theta_max {
                        cands.push((i, ratio, alpha.abs()));
                        amax = amax.max(alpha.abs());
                    }
                }
                // Bland's rule only chooses among pivots of comparable size.
                let floor = if bland { 0.1 * amax } else { amax };
                for &(i, ratio, a) in &cands {
                    if a < floor {
                        continue;
                    }
                    let better = match leave {
                        None => true,
                        Some(li) => self.basis[i] < self.basis[li],
                    };
                    if better {
                        theta = ratio;
                        leave = Some(i);
                    }
                }
                if leave.is_some() && theta > self.hi[q] - self.lo[q] {
                    // The entering variable reaches its other bound first.
                    leave = None;
                    theta = self.hi[q] - self.lo[q];
                }
            }

            if !theta.is_finite() {
                return Ok(PhaseEnd::Unbounded);
            }
            bland = theta <= DEGENERATE_STEP;

            match leave {
                None => {
                    // Bound flip.
                    if dir > 0.0 {
                        self.x[q] = self.hi[q];
                        self.state[q] = Some(NonBasic::Upper);
                    } else {
                        self.x[q] = self.lo[q];
                        self.state[q] = Some(NonBasic::Lower);
                    }
                }
                Some(r) => {
                    let leaving = self.basis[r];
                    let alpha = self.at(r, q) * dir;
                    // Leaving variable exits at the bound it hit.
                    let target = if alpha > 0.0 {
                        self.lo[leaving]
                    } else {
                        self.hi[leaving]
                    };
                    self.x[q] += dir * theta;
                    self.pivot(r, q);
                    self.x[leaving] = target;
                    self.state[leaving] = Some(if alpha > 0.0 { NonBasic::Lower } else { NonBasic::Upper });
                }
            }
        }
        Err(Error::Solver(format!("iteration cap of {max_iter} exceeded")))
    }

    /// Drive basic artificials out where possible, then pin all artificials at zero.
    fn retire_artificials(&mut self) {
        for r in 0..self.m {
            if !self.is_artificial(self.basis[r]) {
                continue;
            }
            let mut best: Option<(usize, f64)> = None;
            for j in 0..self.ncols {
                if self.state[j].is_none() || self.is_artificial(j) {
                    continue;
                }
                let a = self.at(r, j).abs();
                if a > 1e-7 && best.is_none_or(|(_, b)| a > b) {
                    best = Some((j, a));
                }
            }
            if let Some((q, _)) = best {
                let keep = self.x[q];
                self.pivot(r, q);
                self.x[q] = keep;
            }
        }
        for j in 0..self.ncols {
            if self.is_artificial(j) {
                self.lo[j] = 0.0;
                self.hi[j] = 0.0;
                if self.state[j].is_some() {
                    self.x[j] = 0.0;
                    self.state[j] = Some(NonBasic::Lower);
                }
            }
        }
        self.refresh_basic_values();
    }

    /// Rebuilds `B⁻¹[A | b]` from the original columns to shed rounding
    /// accumulated over many pivots.
    fn refactor(&mut self) {
        if self.m == 0 {
            return;
        }
        let mut bmat = DMatrix::zeros(self.m, self.m);
        for (k, &j) in self.basis.iter().enumerate() {
            bmat.set_column(k, &self.orig.column(j));
        }
        let lu = bmat.lu();
        let w = self.ncols + 1;
        let mut full = DMatrix::zeros(self.m, w);
        full.view_mut((0, 0), (self.m, self.ncols)).copy_from(&self.orig);
        full.set_column(self.ncols, &DVector::from_column_slice(&self.b));
        let Some(sol) = lu.solve(&full) else { return };
        if !sol.iter().all(|v| v.is_finite()) {
            return;
        }
        for i in 0..self.m {
            for j in 0..w {
                self.t[i * w + j] = sol[(i, j)];
            }
            // Basic columns are exact unit vectors.
            for (k, &bj) in self.basis.iter().enumerate() {
                self.t[i * w + bj] = if k == i { 1.0 } else { 0.0 };
            }
        }
    }

    /// Recompute basic values from the original columns with an LU solve.
    fn polish(&mut self) {
        self.refresh_basic_values();
        if self.m == 0 {
            return;
        }
        let mut bmat = DMatrix::zeros(self.m, self.m);
        for (k, &j) in self.basis.iter().enumerate() {
            bmat.set_column(k, &self.orig.column(j));
        }
        let mut rhs = DVector::from_column_slice(&self.b);
        for j in 0..self.ncols {
            if self.state[j].is_some() && self.x[j] != 0.0 {
                rhs.axpy(-self.x[j], &self.orig.column(j), 1.0);
            }
        }
        if let Some(sol) = bmat.lu().solve(&rhs) {
            if sol.iter().all(|v| v.is_finite()) {
                for (k, &j) in self.basis.iter().enumerate() {
                    self.x[j] = sol[k];
                }
            }
        }
    }
}
