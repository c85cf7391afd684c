//! Gridded contraction-metric synthesis.
//!
//! Decision variables are a constant dual metric `W` and one gain factor
//! `Y^k` per grid point; the differential gain is `K^k = Y^k W⁻¹`.
//!
//! Stabilization requires, at every grid point,
//! `A W + W Aᵀ + B Y + Yᵀ Bᵀ + 2λW ⪯ −margin·I` with `W ⪰ w_floor·I` and
//! `W ⪯ w_max·I`. Among the feasible designs the one with the smallest
//! `Σ_k ‖Y^k‖` (spectral norm) is returned. The condition is homogeneous in `(W, Y)`, so
//! `w_floor` only fixes the scale.
//!
//! Performance design minimizes `α` in
//!
//! ```text
//! ⎡ AW+WAᵀ+BY+YᵀBᵀ   B_d    (CW+DY)ᵀ ⎤
//! ⎢ B_dᵀ             −αI    D_dᵀ     ⎥ ≺ 0
//! ⎣ CW+DY            D_d    −αI      ⎦
//! ```
//!
//! by bisection on `α`, then applies the same smallest-gain selection at the
//! final `α`. Here `w_floor` is not a normalization: it bounds how small the
//! metric (and so how large the gains) may become.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding::{augment, differential, DifferentialMatrices, Embedding, Weights};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::io::{matrix_serde, matrix_vec_serde};
use crate::lmi::{self, Block, Point, Var};
use crate::params::CmgParams;
use crate::reduced::{Mode, ReducedModel};
use crate::scalar::{lit, Real};

/// Version tag written into serialized results.
pub const RESULT_FORMAT_VERSION: u32 = 1;

/// Relative certification margin on the LMI blocks.
pub const EPS_MARGIN: f64 = 1e-7;
/// Relative lower bound on the metric's smallest eigenvalue.
pub const EPS_W: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Design {
    Stabilize,
    Performance,
}

impl std::str::FromStr for Design {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "stabilize" | "lyapunov" => Ok(Design::Stabilize),
            "performance" => Ok(Design::Performance),
            other => Err(Error::Config(format!("unknown design '{other}'"))),
        }
    }
}

impl std::fmt::Display for Design {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Design::Stabilize => "stabilize",
            Design::Performance => "performance",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthesisOptions {
    /// Contraction rate, 1/s. Used by the stabilization design.
    pub lambda: f64,
    /// Strictness imposed on each LMI block by the solver.
    pub lmi_margin: f64,
    /// Lower bound on the dual metric, `W ⪰ w_floor·I`.
    pub w_floor: f64,
    /// Upper bound on the dual metric, `W ⪯ w_max·I`.
    pub w_max: f64,
    /// Relative bisection tolerance on `α`.
    pub alpha_rel_tol: f64,
    /// Largest `α` tried before the performance problem is declared infeasible.
    pub alpha_max: f64,
    /// Smallest `α` tried; reaching it returns this value.
    pub alpha_min: f64,
    /// Box bound on every scalar decision variable.
    pub var_bound: f64,
    pub max_newton: usize,
}

impl Default for SynthesisOptions {
    fn default() -> Self {
        SynthesisOptions {
            lambda: 0.5,
            lmi_margin: 1e-3,
            w_floor: 1.0,
            w_max: 1e6,
            alpha_rel_tol: 1e-3,
            alpha_max: 1e6,
            alpha_min: 1e-9,
            var_bound: 1e7,
            max_newton: 600,
        }
    }
}

impl SynthesisOptions {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("synthesis option {what}")));
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad("lambda must be finite and non-negative");
        }
        if self.lmi_margin.is_nan() || self.lmi_margin < 0.0 {
            return bad("lmi_margin must be non-negative");
        }
        if !(self.w_floor > 0.0 && self.w_floor < self.w_max) {
            return bad("needs 0 < w_floor < w_max");
        }
        if !(self.alpha_rel_tol > 0.0 && self.alpha_rel_tol < 1.0) {
            return bad("alpha_rel_tol must lie in (0, 1)");
        }
        if !(self.alpha_min > 0.0 && self.alpha_min < self.alpha_max) {
            return bad("needs 0 < alpha_min < alpha_max");
        }
        Ok(())
    }
}

/// Per-point data of a synthesis run.
#[derive(Clone, Debug)]
pub struct SynthesisProblem {
    pub mode: Mode,
    pub embedding: Embedding,
    pub design: Design,
    pub grid: Grid,
    pub points: Vec<DifferentialMatrices<f64>>,
    pub weights: Weights,
    pub options: SynthesisOptions,
    /// Model the points were evaluated on; absent for hand-made problems.
    pub params: Option<CmgParams<f64>>,
}

impl SynthesisProblem {
    /// Evaluates the embedding's differential matrices at every grid point.
    pub fn build(
        model: &ReducedModel<f64>,
        embedding: Embedding,
        design: Design,
        grid: Grid,
        weights: Weights,
        options: SynthesisOptions,
    ) -> Result<Self> {
        options.validate()?;
        if grid.dim() != model.mode.schedule_names().len() {
            return Err(Error::Shape(format!(
                "grid has {} axes, {} schedules on {}",
                grid.dim(),
                model.mode,
                model.mode.schedule_names().len()
            )));
        }
        let points = (0..grid.len())
            .into_par_iter()
            .map(|k| {
                let sigma = DVector::from_vec(grid.point(k));
                let (a, b) = differential(model, embedding, &sigma)?;
                augment(a, b, model.mode, &weights)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(SynthesisProblem {
            mode: model.mode,
            embedding,
            design,
            grid,
            points,
            weights,
            options,
            params: Some(model.params),
        })
    }

    /// Rebuilds the problem a result was solved from.
    pub fn rebuild(res: &SynthesisResult) -> Result<Self> {
        let params =
            res.params.ok_or_else(|| Error::Config("result file does not record the model parameters".into()))?;
        params.validate()?;
        let model = ReducedModel::new(params, res.mode);
        Self::build(&model, res.embedding, res.design, res.grid.clone(), res.weights.clone(), res.options.clone())
    }

    /// A problem from explicit matrices, mainly for small hand-made cases.
    pub fn from_points(
        design: Design,
        points: Vec<DifferentialMatrices<f64>>,
        options: SynthesisOptions,
    ) -> Result<Self> {
        options.validate()?;
        if points.is_empty() {
            return Err(Error::Shape("synthesis needs at least one point".into()));
        }
        let n = points[0].a.nrows();
        let m = points[0].b.ncols();
        let range = crate::grid::SchedulingRange {
            axes: vec![crate::grid::Axis { name: "k".into(), lo: 0.0, hi: 1.0, unit: String::new() }],
        };
        let grid = Grid { range, points_per_axis: points.len().max(2) };
        Ok(SynthesisProblem {
            mode: if n == 5 { Mode::Om1 } else { Mode::Om2 },
            embedding: Embedding::Lpv,
            design,
            grid,
            points,
            weights: Weights { w1: DMatrix::identity(n, n), w2: DMatrix::identity(m, m) },
            options,
            params: None,
        })
    }

    fn n(&self) -> usize {
        self.points[0].a.nrows()
    }

    fn m(&self) -> usize {
        self.points[0].b.ncols()
    }
}

/// Independent certificate of a synthesis result.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarginReport {
    /// Largest eigenvalue of the assembled LMI at each grid point.
    pub max_eigenvalues: Vec<f64>,
    /// Magnitude used to make the margin test scale-relative, per point.
    pub scales: Vec<f64>,
    /// Largest `max_eigenvalue / scale` over the grid.
    pub worst_relative: f64,
    pub worst_point: usize,
    pub w_min_eigenvalue: f64,
    pub w_max_eigenvalue: f64,
    pub pass: bool,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SolveStats {
    pub newton_steps: usize,
    pub bisection_steps: usize,
}

/// Metric, gain factors and certificate of one design.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthesisResult {
    pub format_version: u32,
    pub mode: Mode,
    pub embedding: Embedding,
    pub design: Design,
    pub lambda: f64,
    pub alpha: Option<f64>,
    pub grid: Grid,
    pub weights: Weights,
    pub options: SynthesisOptions,
    #[serde(with = "matrix_serde")]
    pub w: DMatrix<f64>,
    #[serde(with = "matrix_vec_serde")]
    pub y: Vec<DMatrix<f64>>,
    pub margins: MarginReport,
    pub stats: SolveStats,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<CmgParams<f64>>,
}

impl SynthesisResult {
    /// Differential gains `K^k = Y^k W⁻¹`.
    pub fn gains(&self) -> Vec<DMatrix<f64>> {
        let winv = self
            .w
            .clone()
            .cholesky()
            .map(|c| c.inverse())
            .unwrap_or_else(|| self.w.clone().try_inverse().unwrap_or_else(|| DMatrix::zeros(0, 0)));
        self.y.iter().map(|y| y * &winv).collect()
    }
}

// ---------------------------------------------------------------------------
// LMI assembly

fn sym_pairs(n: usize) -> Vec<(usize, usize)> {
    let mut v = Vec::with_capacity(n * (n + 1) / 2);
    for a in 0..n {
        for b in a..n {
            v.push((a, b));
        }
    }
    v
}

fn w_of(shared: &DVector<f64>, n: usize) -> DMatrix<f64> {
    let mut w = DMatrix::zeros(n, n);
    for (i, &(a, b)) in sym_pairs(n).iter().enumerate() {
        w[(a, b)] = shared[i];
        w[(b, a)] = shared[i];
    }
    w
}

fn y_index(m: usize, r: usize, c: usize) -> usize {
    r + c * m
}

fn y_of(local: &DVector<f64>, m: usize, n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(m, n, |r, c| local[y_index(m, r, c)])
}

fn place(dst: &mut DMatrix<f64>, r: usize, c: usize, src: &DMatrix<f64>) {
    dst.view_mut((r, c), src.shape()).copy_from(src);
}

/// Assembles the solver problem. `alpha` selects the performance block; the
/// gain epigraph variables `t_k` are added when `with_gain_cost` is set.
fn assemble(pb: &SynthesisProblem, alpha: Option<f64>, with_gain_cost: bool) -> lmi::Problem {
    let (n, m) = (pb.n(), pb.m());
    let o = &pb.options;
    let pairs = sym_pairs(n);
    let nw = pairs.len();
    let ny = m * n;
    let nl = ny + usize::from(with_gain_cost);

    let mut blocks: Vec<Block> = pb
        .points
        .par_iter()
        .enumerate()
        .flat_map_iter(|(k, dm)| {
            let mut out = vec![match alpha {
                None => stab_block(k, dm, &pairs, n, m, o.lambda, o.lmi_margin),
                Some(al) => perf_block(k, dm, &pairs, n, m, al, o.lmi_margin),
            }];
            if with_gain_cost {
                out.push(gain_block(k, n, m));
            }
            out
        })
        .collect();

    let mut lower = Block::new(None, -DMatrix::identity(n, n) * o.w_floor);
    let mut upper = Block::new(None, DMatrix::identity(n, n) * o.w_max);
    for (i, &(a, b)) in pairs.iter().enumerate() {
        let c = if a == b { 0.5 } else { 1.0 };
        lower.terms.push((Var::Shared(i), vec![(c, a, b)]));
        upper.terms.push((Var::Shared(i), vec![(-c, a, b)]));
    }
    blocks.push(lower);
    blocks.push(upper);
    for b in blocks.iter_mut() {
        b.normalize();
    }

    let k = pb.points.len();
    let cost_local = if with_gain_cost {
        let mut c = vec![0.0; nl];
        c[ny] = 1.0;
        vec![c; k]
    } else {
        vec![]
    };
    lmi::Problem {
        n_shared: nw,
        group_sizes: vec![nl; k],
        blocks,
        cost_shared: vec![0.0; nw],
        cost_local,
        bound: o.var_bound,
    }
}

/// Factored coefficient of `W_ab` given the vectors `g_a` (indices `g0 + a`)
/// with `A S + S Aᵀ = Σ (g ê_bᵀ + ê_b gᵀ)` for the symmetric unit `S`.
fn w_term(g0: usize, a: usize, b: usize, sign: f64) -> lmi::Factored {
    if a == b {
        vec![(sign, g0 + a, a)]
    } else {
        vec![(sign, g0 + a, b), (sign, g0 + b, a)]
    }
}

fn stab_block(
    k: usize,
    dm: &DifferentialMatrices<f64>,
    pairs: &[(usize, usize)],
    n: usize,
    m: usize,
    lambda: f64,
    margin: f64,
) -> Block {
    let mut blk = Block::new(Some(k), -DMatrix::identity(n, n) * margin);
    // g_a = (A + λI) e_a, so that A S + S Aᵀ + 2λS expands over g.
    let g0 = blk.vectors.ncols();
    for a in 0..n {
        let mut g = dm.a.column(a).into_owned();
        g[a] += lambda;
        blk.push_vector(&g);
    }
    let h0 = blk.vectors.ncols();
    for r in 0..m {
        blk.push_vector(&dm.b.column(r).into_owned());
    }
    for (i, &(a, b)) in pairs.iter().enumerate() {
        blk.terms.push((Var::Shared(i), w_term(g0, a, b, -1.0)));
    }
    for c in 0..n {
        for r in 0..m {
            blk.terms.push((Var::Local(y_index(m, r, c)), vec![(-1.0, h0 + r, c)]));
        }
    }
    blk
}

fn perf_block(
    k: usize,
    dm: &DifferentialMatrices<f64>,
    pairs: &[(usize, usize)],
    n: usize,
    m: usize,
    alpha: f64,
    margin: f64,
) -> Block {
    let nd = dm.bd.ncols();
    let nz = dm.c.nrows();
    let dim = n + nd + nz;
    let mut f0 = DMatrix::zeros(dim, dim);
    place(&mut f0, 0, n, &dm.bd);
    place(&mut f0, n, 0, &dm.bd.transpose());
    place(&mut f0, n, n, &(-DMatrix::identity(nd, nd) * alpha));
    place(&mut f0, n + nd, n, &dm.dd);
    place(&mut f0, n, n + nd, &dm.dd.transpose());
    place(&mut f0, n + nd, n + nd, &(-DMatrix::identity(nz, nz) * alpha));
    let mut blk = Block::new(Some(k), -f0 - DMatrix::identity(dim, dim) * margin);

    // Stacked columns [A e_a; 0; C e_a] and [B e_r; 0; D e_r].
    let stacked = |top: DVector<f64>, bottom: DVector<f64>| {
        let mut v = DVector::zeros(dim);
        v.rows_mut(0, n).copy_from(&top);
        v.rows_mut(n + nd, nz).copy_from(&bottom);
        v
    };
    let g0 = blk.vectors.ncols();
    for a in 0..n {
        blk.push_vector(&stacked(dm.a.column(a).into_owned(), dm.c.column(a).into_owned()));
    }
    let h0 = blk.vectors.ncols();
    for r in 0..m {
        blk.push_vector(&stacked(dm.b.column(r).into_owned(), dm.d.column(r).into_owned()));
    }
    for (i, &(a, b)) in pairs.iter().enumerate() {
        blk.terms.push((Var::Shared(i), w_term(g0, a, b, -1.0)));
    }
    for c in 0..n {
        for r in 0..m {
            blk.terms.push((Var::Local(y_index(m, r, c)), vec![(-1.0, h0 + r, c)]));
        }
    }
    blk
}

/// `[[t·I_m, Y], [Yᵀ, t·I_n]] ⪰ 0`, i.e. `‖Y‖ ≤ t`.
fn gain_block(k: usize, n: usize, m: usize) -> Block {
    let dim = m + n;
    let mut blk = Block::new(Some(k), DMatrix::zeros(dim, dim));
    for c in 0..n {
        for r in 0..m {
            blk.terms.push((Var::Local(y_index(m, r, c)), vec![(1.0, r, m + c)]));
        }
    }
    blk.push_identity(Var::Local(m * n), 1.0);
    blk
}

fn solver_options(o: &SynthesisOptions) -> lmi::Options {
    lmi::Options { max_newton: o.max_newton, ..lmi::Options::default() }
}

/// Adds strictly feasible epigraph values `t_k > ‖Y^k‖` to a point.
fn with_gain_slack(p: &Point, m: usize, n: usize) -> Point {
    let local = p
        .local
        .iter()
        .map(|l| {
            let y = y_of(l, m, n);
            let s = y.singular_values().max();
            let mut v = l.clone().resize_vertically(m * n + 1, 0.0);
            v[m * n] = 1.5 * s + 1e-3;
            v
        })
        .collect();
    Point { shared: p.shared.clone(), local }
}

fn finish(pb: &SynthesisProblem, p: &Point, alpha: Option<f64>, stats: SolveStats) -> Result<SynthesisResult> {
    let (n, m) = (pb.n(), pb.m());
    let w = w_of(&p.shared, n);
    let y: Vec<DMatrix<f64>> = p.local.iter().map(|l| y_of(l, m, n)).collect();
    let mut res = SynthesisResult {
        format_version: RESULT_FORMAT_VERSION,
        mode: pb.mode,
        embedding: pb.embedding,
        design: pb.design,
        lambda: pb.options.lambda,
        alpha,
        grid: pb.grid.clone(),
        weights: pb.weights.clone(),
        options: pb.options.clone(),
        w,
        y,
        margins: MarginReport {
            max_eigenvalues: vec![],
            scales: vec![],
            worst_relative: f64::NAN,
            worst_point: 0,
            w_min_eigenvalue: f64::NAN,
            w_max_eigenvalue: f64::NAN,
            pass: false,
        },
        stats,
        params: pb.params,
    };
    res.margins = verify(&res, pb);
    if !res.margins.pass {
        return Err(Error::NoConvergence(format!(
            "solution failed certification: worst relative eigenvalue {:.3e} at point {}, λ_min(W) = {:.3e}",
            res.margins.worst_relative, res.margins.worst_point, res.margins.w_min_eigenvalue
        )));
    }
    Ok(res)
}

fn min_gain(
    pb: &SynthesisProblem,
    alpha: Option<f64>,
    feasible: &Point,
    mut stats: SolveStats,
) -> Result<SynthesisResult> {
    let (n, m) = (pb.n(), pb.m());
    let full = assemble(pb, alpha, true);
    let start = with_gain_slack(feasible, m, n);
    let (opt, st) = match lmi::minimize(&full, start, &solver_options(&pb.options)) {
        Ok(r) => r,
        // The feasible point is still a valid certificate, only with larger gains.
        Err(Error::NoConvergence(_)) => return finish(pb, feasible, alpha, stats),
        Err(e) => return Err(e),
    };
    stats.newton_steps += st.newton_steps;
    let trimmed =
        Point { shared: opt.shared.clone(), local: opt.local.iter().map(|l| l.rows(0, m * n).into_owned()).collect() };
    finish(pb, &trimmed, alpha, stats)
}

/// Contraction-rate design at rate `options.lambda`.
pub fn solve_stabilization(pb: &SynthesisProblem) -> Result<SynthesisResult> {
    if pb.design != Design::Stabilize {
        return Err(Error::Config("solve_stabilization needs a stabilize problem".into()));
    }
    let feas = assemble(pb, None, false);
    let (p, st) = lmi::find_feasible(&feas, &solver_options(&pb.options))?;
    min_gain(pb, None, &p, SolveStats { newton_steps: st.newton_steps, bisection_steps: 0 })
}

/// Smallest L2-gain bound `α` by bisection, then the smallest-gain design at it.
pub fn solve_performance(pb: &SynthesisProblem) -> Result<SynthesisResult> {
    if pb.design != Design::Performance {
        return Err(Error::Config("solve_performance needs a performance problem".into()));
    }
    let o = &pb.options;
    let opts = solver_options(o);
    let mut stats = SolveStats::default();
    let feasible_at = |alpha: f64, warm: Option<&Point>, stats: &mut SolveStats| -> Result<Option<Point>> {
        stats.bisection_steps += 1;
        let lp = assemble(pb, Some(alpha), false);
        let start = warm.cloned().unwrap_or_else(|| Point::zeros(&lp));
        let r = lmi::find_feasible_from(&lp, start, &opts);
        match r {
            Ok((p, st)) => {
                stats.newton_steps += st.newton_steps;
                Ok(Some(p))
            }
            // A stalled solve does not certify α; bisection treats it as infeasible.
            Err(Error::Infeasible(_)) | Err(Error::NoConvergence(_)) => Ok(None),
            Err(e) => Err(e),
        }
    };

    // Bracket: grow until feasible, then shrink until infeasible.
    let mut hi = 1.0f64.clamp(o.alpha_min, o.alpha_max);
    let mut best = feasible_at(hi, None, &mut stats)?;
    let mut lo;
    if best.is_none() {
        loop {
            lo = hi;
            hi *= 4.0;
            if hi > o.alpha_max {
                return Err(Error::Infeasible(format!("no α ≤ {:.1e} is feasible", o.alpha_max)));
            }
            if let Some(p) = feasible_at(hi, None, &mut stats)? {
                best = Some(p);
                break;
            }
        }
    } else {
        loop {
            let cand = hi / 4.0;
            if cand < o.alpha_min {
                match feasible_at(o.alpha_min, best.as_ref(), &mut stats)? {
                    Some(p) => {
                        return min_gain(pb, Some(o.alpha_min), &p, stats);
                    }
                    None => {
                        lo = o.alpha_min;
                        break;
                    }
                }
            }
            match feasible_at(cand, best.as_ref(), &mut stats)? {
                Some(p) => {
                    hi = cand;
                    best = Some(p);
                }
                None => {
                    lo = cand;
                    break;
                }
            }
        }
    }
    while (hi - lo) > o.alpha_rel_tol * hi {
        let mid = 0.5 * (lo + hi);
        match feasible_at(mid, best.as_ref(), &mut stats)? {
            Some(p) => {
                hi = mid;
                best = Some(p);
            }
            None => lo = mid,
        }
    }
    let p = best.expect("bracket holds a feasible point");
    min_gain(pb, Some(hi), &p, stats)
}

/// Dispatches on the problem's design.
pub fn solve(pb: &SynthesisProblem) -> Result<SynthesisResult> {
    match pb.design {
        Design::Stabilize => solve_stabilization(pb),
        Design::Performance => solve_performance(pb),
    }
}

/// Recomputes every LMI from `(W, Y^k)` and checks the strict inequalities.
pub fn verify(res: &SynthesisResult, pb: &SynthesisProblem) -> MarginReport {
    let n = res.w.nrows();
    let shapes_ok = res.y.len() == pb.points.len()
        && res.w.shape() == (pb.n(), pb.n())
        && res.y.iter().all(|y| y.shape() == (pb.m(), pb.n()));
    let w = &res.w;
    let w_sym = (w + w.transpose()) * 0.5;
    let w_eig = SymmetricEigen::new(w_sym.clone()).eigenvalues;
    let (w_min, w_max) = (w_eig.min(), w_eig.max());
    if !shapes_ok {
        return MarginReport {
            max_eigenvalues: vec![],
            scales: vec![],
            worst_relative: f64::INFINITY,
            worst_point: 0,
            w_min_eigenvalue: w_min,
            w_max_eigenvalue: w_max,
            pass: false,
        };
    }
    let lambda = res.lambda;
    let alpha = res.alpha;
    let design = res.design;
    let (eigs, scales): (Vec<f64>, Vec<f64>) = pb
        .points
        .par_iter()
        .zip(res.y.par_iter())
        .map(|(dm, y)| {
            let aw = &dm.a * &w_sym;
            let by = &dm.b * y;
            let core = &aw + aw.transpose() + &by + by.transpose();
            match design {
                Design::Stabilize => {
                    let blk = &core + &w_sym * (2.0 * lambda);
                    let scale = [aw.amax(), by.amax(), 2.0 * lambda * w_sym.amax()].into_iter().fold(0.0, f64::max);
                    (SymmetricEigen::new(blk).eigenvalues.max(), scale)
                }
                Design::Performance => {
                    let al = alpha.unwrap_or(f64::NAN);
                    let nd = dm.bd.ncols();
                    let nz = dm.c.nrows();
                    let dim = n + nd + nz;
                    let phi = &dm.c * &w_sym + &dm.d * y;
                    let mut blk = DMatrix::zeros(dim, dim);
                    place(&mut blk, 0, 0, &core);
                    place(&mut blk, 0, n, &dm.bd);
                    place(&mut blk, n, 0, &dm.bd.transpose());
                    place(&mut blk, 0, n + nd, &phi.transpose());
                    place(&mut blk, n + nd, 0, &phi);
                    place(&mut blk, n, n, &(-DMatrix::identity(nd, nd) * al));
                    place(&mut blk, n + nd, n + nd, &(-DMatrix::identity(nz, nz) * al));
                    place(&mut blk, n + nd, n, &dm.dd);
                    place(&mut blk, n, n + nd, &dm.dd.transpose());
                    let scale =
                        [aw.amax(), by.amax(), phi.amax(), dm.bd.amax(), al.abs()].into_iter().fold(0.0, f64::max);
                    (SymmetricEigen::new(blk).eigenvalues.max(), scale)
                }
            }
        })
        .unzip();
    let mut worst_relative = f64::NEG_INFINITY;
    let mut worst_point = 0;
    for (k, (e, s)) in eigs.iter().zip(&scales).enumerate() {
        let rel = if *s > 0.0 { e / s } else { f64::INFINITY };
        let rel = if rel.is_nan() { f64::INFINITY } else { rel };
        if rel > worst_relative {
            worst_relative = rel;
            worst_point = k;
        }
    }
    let w_scale = w_sym.amax();
    let symmetric = (w - w.transpose()).amax() <= 1e-12 * w_scale.max(1e-300);
    let pass = symmetric
        && worst_relative <= -EPS_MARGIN
        && w_min >= EPS_W * w_scale
        && w_min > 0.0
        && w_max <= res.options.w_max * (1.0 + 1e-9)
        && (design == Design::Stabilize || alpha.is_some_and(|a| a.is_finite() && a > 0.0));
    MarginReport {
        max_eigenvalues: eigs,
        scales,
        worst_relative,
        worst_point,
        w_min_eigenvalue: w_min,
        w_max_eigenvalue: w_max,
        pass,
    }
}

/// Gains on the grid with multilinear interpolation between nodes.
#[derive(Clone, Debug)]
pub struct GainTable<T: Real> {
    pub grid: Grid,
    pub gains: Vec<DMatrix<T>>,
}

impl<T: Real> GainTable<T> {
    pub fn new(grid: Grid, gains: Vec<DMatrix<T>>) -> Result<Self> {
        if gains.len() != grid.len() {
            return Err(Error::Shape(format!("{} gains for {} grid points", gains.len(), grid.len())));
        }
        Ok(GainTable { grid, gains })
    }

    pub fn from_result(res: &SynthesisResult) -> Result<Self> {
        Self::new(res.grid.clone(), res.gains().iter().map(|k| k.map(lit::<T>)).collect())
    }

    /// Interpolated gain and whether `sigma` had to be clamped into the range.
    pub fn gain_at(&self, sigma: &[T]) -> (DMatrix<T>, bool) {
        let (weights, clamped) = self.grid.weights(sigma);
        let (r, c) = self.gains[0].shape();
        let mut k = DMatrix::zeros(r, c);
        for (idx, w) in weights {
            k += &self.gains[idx] * w;
        }
        (k, clamped)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Axis, SchedulingRange};

    fn double_integrator() -> DifferentialMatrices<f64> {
        DifferentialMatrices {
            a: DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]),
            b: DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
            bd: DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
            c: DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]),
            d: DMatrix::from_row_slice(3, 1, &[0.0, 0.0, 1.0]),
            dd: DMatrix::zeros(3, 1),
        }
    }

    #[test]
    fn double_integrator_is_stabilizable() {
        let pb =
            SynthesisProblem::from_points(Design::Stabilize, vec![double_integrator()], SynthesisOptions::default())
                .unwrap();
        let res = solve_stabilization(&pb).unwrap();
        assert!(res.margins.pass);
        let k = &res.gains()[0];
        let acl = &pb.points[0].a + &pb.points[0].b * k;
        let eig = acl.complex_eigenvalues();
        assert!(eig.iter().all(|e| e.re < -0.5 + 1e-6), "{eig:?}");
    }

    #[test]
    fn uncontrollable_unstable_scalar_is_infeasible() {
        let dm = DifferentialMatrices {
            a: DMatrix::from_element(1, 1, 1.0),
            b: DMatrix::zeros(1, 1),
            bd: DMatrix::zeros(1, 1),
            c: DMatrix::zeros(2, 1),
            d: DMatrix::zeros(2, 1),
            dd: DMatrix::zeros(2, 1),
        };
        let pb = SynthesisProblem::from_points(Design::Stabilize, vec![dm], SynthesisOptions::default()).unwrap();
        assert!(matches!(solve_stabilization(&pb), Err(Error::Infeasible(_))));
    }

    #[test]
    fn verify_rejects_tampering() {
        let pb =
            SynthesisProblem::from_points(Design::Stabilize, vec![double_integrator()], SynthesisOptions::default())
                .unwrap();
        let res = solve_stabilization(&pb).unwrap();
        let mut bad = res.clone();
        bad.y[0] += DMatrix::from_row_slice(1, 2, &[50.0, -80.0]);
        let rep = verify(&bad, &pb);
        assert!(!rep.pass && rep.max_eigenvalues[0] > 0.0);
        let mut neg = res.clone();
        neg.w = -neg.w;
        assert!(!verify(&neg, &pb).pass);
    }

    #[test]
    fn disconnected_performance_channels_hit_the_lower_bracket() {
        let mut dm = double_integrator();
        dm.bd.fill(0.0);
        dm.c.fill(0.0);
        dm.d.fill(0.0);
        let opts = SynthesisOptions { alpha_min: 1e-2, ..SynthesisOptions::default() };
        let pb = SynthesisProblem::from_points(Design::Performance, vec![dm], opts).unwrap();
        let res = solve_performance(&pb).unwrap();
        assert_eq!(res.alpha, Some(1e-2));
    }

    #[test]
    fn double_integrator_performance_bound() {
        let pb = SynthesisProblem::from_points(
            Design::Performance,
            vec![double_integrator()],
            SynthesisOptions { w_floor: 1e-3, lmi_margin: 1e-6, ..SynthesisOptions::default() },
        )
        .unwrap();
        let res = solve_performance(&pb).unwrap();
        assert!(res.margins.pass);
        let a = res.alpha.unwrap();
        assert!(a > 0.1 && a < 10.0, "{a}");
    }

    #[test]
    fn one_dimensional_interpolation() {
        let range = SchedulingRange { axes: vec![Axis { name: "s".into(), lo: 0.0, hi: 1.0, unit: "".into() }] };
        let grid = Grid::new(range, 2).unwrap();
        let table = GainTable::new(grid, vec![DMatrix::zeros(1, 1), DMatrix::from_element(1, 1, 2.0)]).unwrap();
        let (k, clamped) = table.gain_at(&[0.25f64]);
        assert!(!clamped);
        assert!((k[(0, 0)] - 0.5).abs() < 1e-15);
    }
}
