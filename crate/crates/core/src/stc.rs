//! Robust control invariant terminal set, the family of robust one-step
//! controllable sets built on top of it, and the emergency controller that
//! walks the family back to the terminal set.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::controllers::dlqr;
use crate::datamodel::{pseudo_inverse, ModelSet, DEFAULT_RANK_TOL};
use crate::error::{dim_err, Error, Result};
use crate::lp::{self, LpBuilder, LpStatus, RowKind};
use crate::persist::{mat_doc, mat_from, vec_doc, vec_from, HPolytopeDoc, MatDoc, VecDoc, ZonotopeDoc};
use crate::setops::{inner_zonotope, HPolytope, VertexModelSet, Zonotope, SET_TOL};

/// `u = K x + offset` on the terminal set.
#[derive(Debug, Clone, PartialEq)]
pub struct TerminalController {
    pub gain: DMatrix<f64>,
    pub offset: DVector<f64>,
}

impl TerminalController {
    pub fn input(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.gain * x + &self.offset
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RciOptions {
    pub q_weight: Option<DMatrix<f64>>,
    pub r_weight: Option<DMatrix<f64>>,
    pub riccati_tol: f64,
    /// Stop summing once the newest term is this small along every axis.
    pub eps: f64,
    pub max_terms: usize,
    pub margin: f64,
    /// Certification retries, doubling the margin each time.
    pub attempts: usize,
    /// Generator cap for the running sum.
    pub order_cap: usize,
    pub gain_override: Option<DMatrix<f64>>,
}

impl Default for RciOptions {
    fn default() -> Self {
        Self {
            q_weight: None,
            r_weight: None,
            riccati_tol: 1e-10,
            eps: 1e-6,
            max_terms: 50,
            margin: 0.05,
            attempts: 4,
            order_cap: 24,
            gain_override: None,
        }
    }
}

/// LQR gain on the center model, then a sum of closed-loop disturbance
/// images enclosing every vertex model, inflated and certified.
pub fn synth_terminal(
    ms: &ModelSet,
    x_set: &HPolytope,
    u_set: &HPolytope,
    w: &Zonotope,
    opts: &RciOptions,
) -> Result<(TerminalController, Zonotope)> {
    let vs = ms.vertex_models()?;
    let (n, m) = (ms.n, ms.m);
    let a_c = ms.center_a();
    let b_c = ms.center_b();
    let gain = match &opts.gain_override {
        Some(k) => {
            if k.shape() != (m, n) {
                return Err(dim_err("terminal gain override shape"));
            }
            k.clone()
        }
        None => {
            let q = opts.q_weight.clone().unwrap_or_else(|| DMatrix::identity(n, n));
            let r = opts.r_weight.clone().unwrap_or_else(|| DMatrix::identity(m, m));
            dlqr(&a_c, &b_c, &q, &r, opts.riccati_tol)?
        }
    };
    let term = TerminalController {
        gain,
        offset: DVector::zeros(m),
    };
    let base = rci_candidate(vs, &a_c, &b_c, &term.gain, w, opts)?;
    let mut last = String::new();
    let mut margin = opts.margin;
    for _ in 0..opts.attempts.max(1) {
        let cand = base.scale_about_center(1.0 + margin);
        match rci_violation(vs, &term, &cand, u_set, w, x_set)? {
            None => return Ok((term, cand)),
            Some(v) => last = v,
        }
        margin *= 2.0;
    }
    Err(Error::Synthesis(format!(
        "terminal set candidate failed certification: {last}"
    )))
}

/// `⊕ₛ Fₛ` with `F₀ = W` and `Fₛ₊₁ = Φ_c Fₛ ⊕ □(⋃ᵢ (Φᵢ − Φ_c) Fₛ)`, which
/// encloses `⋃ᵢ Φᵢ Fₛ` for every vertex closed loop `Φᵢ = Aᵢ + BᵢK`.
pub fn rci_candidate(
    vs: &VertexModelSet,
    a_c: &DMatrix<f64>,
    b_c: &DMatrix<f64>,
    gain: &DMatrix<f64>,
    w: &Zonotope,
    opts: &RciOptions,
) -> Result<Zonotope> {
    let n = a_c.nrows();
    let phi_c = a_c + b_c * gain;
    let deltas: Vec<DMatrix<f64>> = vs.iter().map(|v| &v.a + &v.b * gain - &phi_c).collect();
    let cap = opts.order_cap.max(n);
    let mut term = w.clone();
    let mut sum = w.clone();
    for _ in 0..opts.max_terms {
        let mut lo = vec![f64::INFINITY; n];
        let mut hi = vec![f64::NEG_INFINITY; n];
        for d in &deltas {
            let (l, h) = term.linear_map(d)?.interval_hull();
            for i in 0..n {
                lo[i] = lo[i].min(l[i]);
                hi[i] = hi[i].max(h[i]);
            }
        }
        let spread = if deltas.is_empty() {
            Zonotope::point(DVector::zeros(n))
        } else {
            Zonotope::from_box(&lo, &hi)?
        };
        term = term.linear_map(&phi_c)?.minkowski_sum(&spread)?.reduce_order(cap)?;
        if !term.center().iter().chain(term.radius().iter()).all(|v| v.is_finite()) {
            return Err(Error::Synthesis("disturbance propagation diverged".into()));
        }
        sum = sum.minkowski_sum(&term)?.reduce_order(cap)?;
        let reach = (term.center().abs() + term.radius()).amax();
        if reach < opts.eps {
            break;
        }
    }
    Ok(sum.compact())
}

/// Vertex check of the invariance conditions.
pub fn certify_rci(
    vs: &VertexModelSet,
    term: &TerminalController,
    t0: &Zonotope,
    u_set: &HPolytope,
    w: &Zonotope,
    x_set: &HPolytope,
) -> Result<bool> {
    Ok(rci_violation(vs, term, t0, u_set, w, x_set)?.is_none())
}

/// Describes the first violated condition, if any.
pub fn rci_violation(
    vs: &VertexModelSet,
    term: &TerminalController,
    t0: &Zonotope,
    u_set: &HPolytope,
    w: &Zonotope,
    x_set: &HPolytope,
) -> Result<Option<String>> {
    let n = t0.dim();
    if x_set.dim() != n || w.dim() != n || term.gain.shape() != (u_set.dim(), n) {
        return Err(dim_err("certification inputs disagree on dimensions"));
    }
    if !t0.is_inside(x_set)? {
        return Ok(Some("candidate is not inside the state constraints".into()));
    }
    let h = t0.to_hpolytope()?;
    let w_supp: Vec<f64> = (0..h.num_rows())
        .map(|r| w.support_unchecked(h.normals().row(r).transpose().as_slice()))
        .collect();
    for xv in t0.vertices()? {
        let u = term.input(&xv);
        if !u_set.contains(&u)? {
            return Ok(Some(format!(
                "terminal input {:?} at vertex {:?} is not admissible",
                u.as_slice(),
                xv.as_slice()
            )));
        }
        for (i, model) in vs.iter().enumerate() {
            let next = &model.a * &xv + &model.b * &u;
            let act = h.normals() * &next;
            for r in 0..h.num_rows() {
                if act[r] + w_supp[r] > h.offsets()[r] + SET_TOL {
                    return Ok(Some(format!(
                        "vertex {:?} leaves the candidate under vertex model {i} (facet {r}, excess {:.3e})",
                        xv.as_slice(),
                        act[r] + w_supp[r] - h.offsets()[r]
                    )));
                }
            }
        }
    }
    Ok(None)
}

/// `hᵣ − max_{w∈W} Hᵣw` per row.
pub fn shrink_offsets(h: &DVector<f64>, normals: &DMatrix<f64>, w: &Zonotope) -> Result<DVector<f64>> {
    if normals.nrows() != h.len() || normals.ncols() != w.dim() {
        return Err(dim_err("offset shrink shapes"));
    }
    Ok(DVector::from_iterator(
        h.len(),
        (0..h.len()).map(|r| h[r] - w.support_unchecked(normals.row(r).transpose().as_slice())),
    ))
}

/// Directions for the inner approximation in state-input space, with
/// objective weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Template {
    pub directions: Vec<DVector<f64>>,
    pub weights: Vec<f64>,
}

impl Template {
    /// State directions paired with input parts that interpolate between
    /// zero and the center model's one-step cancelling input, plus the
    /// input axes at a small weight.
    pub fn coupled(a_c: &DMatrix<f64>, b_c: &DMatrix<f64>, u_axis_weight: f64, cap: usize) -> Self {
        let n = a_c.nrows();
        let m = b_c.ncols();
        let cancel = pseudo_inverse(b_c, DEFAULT_RANK_TOL) * a_c;
        let mut xdirs: Vec<DVector<f64>> = Vec::new();
        match n {
            1 => xdirs.push(DVector::from_element(1, 1.0)),
            2 => {
                for k in 0..8 {
                    let th = std::f64::consts::PI * k as f64 / 8.0;
                    xdirs.push(DVector::from_vec(vec![th.cos(), th.sin()]));
                }
            }
            _ => {
                for i in 0..n {
                    xdirs.push(DVector::from_fn(n, |r, _| if r == i { 1.0 } else { 0.0 }));
                }
                for i in 0..n {
                    for j in (i + 1)..n {
                        for s in [1.0, -1.0] {
                            let mut d = DVector::zeros(n);
                            d[i] = 1.0;
                            d[j] = s;
                            xdirs.push(d.normalize());
                        }
                    }
                }
            }
        }
        let mut t = Template {
            directions: Vec::new(),
            weights: Vec::new(),
        };
        for d in &xdirs {
            let du = &cancel * d;
            for alpha in [0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0] {
                let mut v = DVector::zeros(n + m);
                v.rows_mut(0, n).copy_from(d);
                v.rows_mut(n, m).copy_from(&(-alpha * &du));
                let v = v.normalize();
                let wgt = v.rows(0, n).norm();
                t.push(v, wgt);
            }
        }
        for i in 0..m {
            let mut v = DVector::zeros(n + m);
            v[n + i] = 1.0;
            t.push(v, u_axis_weight);
        }
        t.directions.truncate(cap.max(n + m));
        t.weights.truncate(cap.max(n + m));
        t
    }

    fn push(&mut self, v: DVector<f64>, weight: f64) {
        // Parallel or antiparallel within about 1e-6 rad.
        let dup = self.directions.iter().any(|d| d.dot(&v).abs() > 1.0 - 5e-13);
        if !dup {
            self.directions.push(v);
            self.weights.push(weight);
        }
    }
}

/// `{(x, u) : x ∈ X, u ∈ U, Aᵢx + Bᵢu ∈ target ∀ i}` as stacked halfspaces.
/// `target` must already have its offsets shrunk by the disturbance.
pub fn rosc_polytope(
    vs: &VertexModelSet,
    target: &HPolytope,
    x_set: &HPolytope,
    u_set: &HPolytope,
) -> Result<HPolytope> {
    let n = x_set.dim();
    let m = u_set.dim();
    if target.dim() != n {
        return Err(dim_err("target and state constraint dimensions differ"));
    }
    let qt = target.num_rows();
    let rows = x_set.num_rows() + vs.len() * qt + u_set.num_rows();
    let mut h = DMatrix::zeros(rows, n + m);
    let mut o = DVector::zeros(rows);
    let mut r = 0;
    for i in 0..x_set.num_rows() {
        h.view_mut((r, 0), (1, n)).copy_from(&x_set.normals().row(i));
        o[r] = x_set.offsets()[i];
        r += 1;
    }
    for v in vs.iter() {
        if v.a.shape() != (n, n) || v.b.shape() != (n, m) {
            return Err(dim_err("vertex model shape"));
        }
        let ha = target.normals() * &v.a;
        let hb = target.normals() * &v.b;
        h.view_mut((r, 0), (qt, n)).copy_from(&ha);
        h.view_mut((r, n), (qt, m)).copy_from(&hb);
        o.rows_mut(r, qt).copy_from(target.offsets());
        r += qt;
    }
    for i in 0..u_set.num_rows() {
        h.view_mut((r, n), (1, m)).copy_from(&u_set.normals().row(i));
        o[r] = u_set.offsets()[i];
        r += 1;
    }
    HPolytope::new(h, o)
}

/// One level: inner zonotope of the stacked polytope and its state
/// projection.
pub fn rosc_step(
    vs: &VertexModelSet,
    prev_shrunk: &HPolytope,
    x_set: &HPolytope,
    u_set: &HPolytope,
    template: &Template,
) -> Result<(Zonotope, Zonotope)> {
    let n = x_set.dim();
    let p = rosc_polytope(vs, prev_shrunk, x_set, u_set)?;
    let xi = inner_zonotope(&p, &template.directions, Some(&template.weights))?.compact();
    let coords: Vec<usize> = (0..n).collect();
    let tx = xi.project(&coords)?;
    Ok((xi, tx))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoscLevel {
    pub xi: Zonotope,
    pub tx: Zonotope,
    pub tx_h: HPolytope,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoscFamily {
    pub n: usize,
    pub m: usize,
    pub terminal: TerminalController,
    pub t0: Zonotope,
    pub t0_h: HPolytope,
    pub levels: Vec<RoscLevel>,
}

/// Builds `levels` sets, each steering into the previous one in one step.
#[allow(clippy::too_many_arguments)]
pub fn synth_family(
    ms: &ModelSet,
    terminal: TerminalController,
    t0: Zonotope,
    x_set: &HPolytope,
    u_set: &HPolytope,
    w: &Zonotope,
    levels: usize,
    template: &Template,
) -> Result<RoscFamily> {
    let vs = ms.vertex_models()?;
    let t0_h = t0.to_hpolytope()?;
    let mut out: Vec<RoscLevel> = Vec::with_capacity(levels);
    let mut prev = t0_h.clone();
    for j in 1..=levels {
        let shrunk = HPolytope::new(
            prev.normals().clone(),
            shrink_offsets(prev.offsets(), prev.normals(), w)?,
        )?;
        let (xi, tx) = rosc_step(vs, &shrunk, x_set, u_set, template).map_err(|e| match e {
            Error::EmptySet(msg) => {
                Error::Synthesis(format!("level {j} is empty ({msg}); {} levels were built", j - 1))
            }
            other => other,
        })?;
        if !tx.is_inside(x_set)? {
            return Err(Error::Synthesis(format!("level {j} leaves the state constraints")));
        }
        let tx_h = tx.to_hpolytope()?;
        prev = tx_h.clone();
        out.push(RoscLevel { xi, tx, tx_h });
    }
    Ok(RoscFamily {
        n: ms.n,
        m: ms.m,
        terminal,
        t0,
        t0_h,
        levels: out,
    })
}

impl RoscFamily {
    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    /// State set of level `j` (0 is the terminal set).
    pub fn state_set(&self, j: usize) -> &Zonotope {
        if j == 0 {
            &self.t0
        } else {
            &self.levels[j - 1].tx
        }
    }

    pub fn state_set_h(&self, j: usize) -> &HPolytope {
        if j == 0 {
            &self.t0_h
        } else {
            &self.levels[j - 1].tx_h
        }
    }

    /// The outermost level, used as the tracking controller's safe region.
    pub fn outer_region(&self) -> &HPolytope {
        self.state_set_h(self.num_levels())
    }

    pub fn membership_index(&self, x: &DVector<f64>) -> Result<Option<usize>> {
        if x.len() != self.n {
            return Err(dim_err("state length for membership query"));
        }
        for j in 0..=self.num_levels() {
            if self.state_set(j).contains_point(x)? {
                return Ok(Some(j));
            }
        }
        Ok(None)
    }

    /// Emergency input for `x`; returns the input and the level used.
    ///
    /// Level 0 applies the terminal law. Otherwise the input minimizes
    /// `‖u − u_ref‖₁` over `(x, u) ∈ Ξʲ`, where `u_ref` is `u_prev` or, if
    /// absent, the input center of `Ξʲ`.
    pub fn control(&self, x: &DVector<f64>, u_prev: Option<&DVector<f64>>) -> Result<(DVector<f64>, usize)> {
        let j = self.membership_index(x)?.ok_or_else(|| {
            Error::InvalidArgument(format!("state {:?} lies outside every controllable set", x.as_slice()))
        })?;
        if j == 0 {
            return Ok((self.terminal.input(x), 0));
        }
        let u = self.level_input(j, x, u_prev)?;
        Ok((u, j))
    }

    pub fn level_input(&self, j: usize, x: &DVector<f64>, u_prev: Option<&DVector<f64>>) -> Result<DVector<f64>> {
        let (n, m) = (self.n, self.m);
        let xi = &self.levels[j - 1].xi;
        let g = xi.generators();
        let c = xi.center();
        let p = xi.num_generators();
        let u_ref: DVector<f64> = match u_prev {
            Some(u) if u.len() == m => u.clone(),
            Some(_) => return Err(dim_err("previous input length")),
            None => c.rows(n, m).into_owned(),
        };
        // Variables: u (m), β (p), t (m).
        let nv = m + p + m;
        let mut b = LpBuilder::new(nv);
        for k in 0..p {
            b.bounds(m + k, Some(-1.0), Some(1.0));
        }
        for i in 0..m {
            b.bounds(m + p + i, Some(0.0), None);
            b.objective(m + p + i, 1.0);
        }
        for i in 0..n {
            let row: Vec<(usize, f64)> = (0..p).map(|k| (m + k, g[(i, k)])).collect();
            b.sparse_row(&row, RowKind::Eq, x[i] - c[i]);
        }
        for i in 0..m {
            let mut row: Vec<(usize, f64)> = vec![(i, 1.0)];
            row.extend((0..p).map(|k| (m + k, -g[(n + i, k)])));
            b.sparse_row(&row, RowKind::Eq, c[n + i]);
            b.sparse_row(&[(i, 1.0), (m + p + i, -1.0)], RowKind::Le, u_ref[i]);
            b.sparse_row(&[(i, -1.0), (m + p + i, -1.0)], RowKind::Le, -u_ref[i]);
        }
        let sol = lp::solve(&b.build())?;
        match sol.status {
            LpStatus::Optimal => {
                let pt = sol.point.expect("optimal point");
                Ok(pt.rows(0, m).into_owned())
            }
            _ => Err(Error::Invariant(format!(
                "no admissible input at level {j} for state {:?}",
                x.as_slice()
            ))),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = FamilyDoc {
            n: self.n,
            m: self.m,
            levels_count: self.num_levels(),
            t0: ZonotopeDoc::from_set(&self.t0),
            terminal: TerminalDoc {
                gain: mat_doc(&self.terminal.gain),
                offset: vec_doc(&self.terminal.offset),
            },
            levels: self
                .levels
                .iter()
                .map(|l| {
                    let xi = ZonotopeDoc::from_set(&l.xi);
                    let tx = ZonotopeDoc::from_set(&l.tx);
                    let h = HPolytopeDoc::from_set(&l.tx_h);
                    LevelDoc {
                        xi_center: xi.center,
                        xi_generators: xi.generators,
                        tx_center: tx.center,
                        tx_generators: tx.generators,
                        tx_normals: h.normals,
                        tx_offsets: h.offsets,
                    }
                })
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: FamilyDoc = serde_json::from_str(text)?;
        let (n, m) = (doc.n, doc.m);
        if doc.levels.len() != doc.levels_count {
            return Err(Error::Config(format!(
                "family declares {} levels but stores {}",
                doc.levels_count,
                doc.levels.len()
            )));
        }
        let t0 = doc.t0.to_set()?;
        if t0.dim() != n {
            return Err(dim_err("terminal set dimension"));
        }
        let gain = mat_from(&doc.terminal.gain, n)?;
        let offset = vec_from(&doc.terminal.offset);
        if gain.nrows() != m || offset.len() != m {
            return Err(dim_err("terminal controller shape"));
        }
        let mut levels = Vec::with_capacity(doc.levels.len());
        for l in &doc.levels {
            let xi = ZonotopeDoc {
                center: l.xi_center.clone(),
                generators: l.xi_generators.clone(),
            }
            .to_set()?;
            let tx = ZonotopeDoc {
                center: l.tx_center.clone(),
                generators: l.tx_generators.clone(),
            }
            .to_set()?;
            if xi.dim() != n + m || tx.dim() != n {
                return Err(dim_err("level set dimension"));
            }
            let tx_h = HPolytopeDoc {
                normals: l.tx_normals.clone(),
                offsets: l.tx_offsets.clone(),
            }
            .to_set(n)?;
            levels.push(RoscLevel { xi, tx, tx_h });
        }
        let t0_h = t0.to_hpolytope()?;
        Ok(Self {
            n,
            m,
            terminal: TerminalController { gain, offset },
            t0,
            t0_h,
            levels,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct TerminalDoc {
    gain: MatDoc,
    offset: VecDoc,
}

#[derive(Serialize, Deserialize)]
struct LevelDoc {
    xi_center: VecDoc,
    xi_generators: Vec<VecDoc>,
    tx_center: VecDoc,
    tx_generators: Vec<VecDoc>,
    #[serde(rename = "tx_H")]
    tx_normals: MatDoc,
    #[serde(rename = "tx_h")]
    tx_offsets: VecDoc,
}

#[derive(Serialize, Deserialize)]
struct FamilyDoc {
    n: usize,
    m: usize,
    #[serde(rename = "N")]
    levels_count: usize,
    t0: ZonotopeDoc,
    terminal: TerminalDoc,
    levels: Vec<LevelDoc>,
}
