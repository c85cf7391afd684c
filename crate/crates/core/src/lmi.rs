//! Small interior-point solver for block-structured linear matrix inequalities.
//!
//! A problem is a list of blocks `G_j(v) = F0_j + Σ v_i F_ij ⪰ 0`. Variables
//! are split into a *shared* group that may enter any block and a number of
//! *local* groups, each entering only the blocks tagged with it. This is the
//! shape of gridded synthesis problems: the metric is shared, the per-point
//! gains are local. The Newton system is reduced to the shared variables by a
//! Schur complement, so cost grows linearly with the number of groups.
//!
//! Every variable is additionally confined to `|v_i| ≤ bound`, which keeps
//! the barrier bounded below on unbounded feasible sets.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use rayon::prelude::*;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Var {
    Shared(usize),
    Local(usize),
}

/// One coefficient matrix written as `Σ c·(v_i v_jᵀ + v_j v_iᵀ)` over the
/// block's vector table.
pub type Factored = Vec<(f64, usize, usize)>;

/// One affine symmetric matrix function `F0 + Σ v_i F_i`.
///
/// Coefficients are stored in factored form. Gridded LMIs have coefficient
/// matrices of rank two or four, and the factored form turns each Hessian
/// entry into a few lookups in `Vᵀ G⁻¹ V`.
#[derive(Clone, Debug)]
pub struct Block {
    pub group: Option<usize>,
    pub f0: DMatrix<f64>,
    /// Columns are the vectors referenced by the terms. The first `dim`
    /// columns are the unit vectors.
    pub vectors: DMatrix<f64>,
    pub terms: Vec<(Var, Factored)>,
}

impl Block {
    pub fn new(group: Option<usize>, f0: DMatrix<f64>) -> Self {
        let n = f0.nrows();
        Block { group, vectors: DMatrix::identity(n, n), f0, terms: Vec::new() }
    }

    pub fn dim(&self) -> usize {
        self.f0.nrows()
    }

    /// Adds a vector to the table and returns its index.
    pub fn push_vector(&mut self, v: &DVector<f64>) -> usize {
        let k = self.vectors.ncols();
        self.vectors = std::mem::replace(&mut self.vectors, DMatrix::zeros(0, 0)).insert_column(k, 0.0);
        self.vectors.set_column(k, v);
        k
    }

    /// Adds a variable with coefficient `c·I`.
    pub fn push_identity(&mut self, var: Var, c: f64) {
        let f = (0..self.dim()).map(|i| (0.5 * c, i, i)).collect();
        self.terms.push((var, f));
    }

    /// Dense form of a factored coefficient.
    pub fn dense(&self, f: &Factored) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.dim(), self.dim());
        for &(c, i, j) in f {
            let vi = self.vectors.column(i);
            let vj = self.vectors.column(j);
            out += (vi * vj.transpose() + vj * vi.transpose()) * c;
        }
        out
    }

    /// Divides the block by its largest coefficient magnitude. The feasible
    /// set is unchanged.
    pub fn normalize(&mut self) {
        let scale = self.terms.iter().map(|(_, f)| self.dense(f).amax()).fold(self.f0.amax(), f64::max);
        if scale > 0.0 && scale.is_finite() {
            self.f0 /= scale;
            for (_, f) in self.terms.iter_mut() {
                for piece in f.iter_mut() {
                    piece.0 /= scale;
                }
            }
        }
    }

    fn eval(&self, p: &Point) -> DMatrix<f64> {
        let mut g = self.f0.clone();
        for (v, f) in &self.terms {
            let val = p.get(*v, self.group);
            if val != 0.0 {
                for &(c, i, j) in f {
                    let w = val * c;
                    let vi = self.vectors.column(i);
                    let vj = self.vectors.column(j);
                    g.ger(w, &vi, &vj, 1.0);
                    g.ger(w, &vj, &vi, 1.0);
                }
            }
        }
        g
    }
}

#[derive(Clone, Debug, Default)]
pub struct Problem {
    pub n_shared: usize,
    pub group_sizes: Vec<usize>,
    pub blocks: Vec<Block>,
    pub cost_shared: Vec<f64>,
    pub cost_local: Vec<Vec<f64>>,
    pub bound: f64,
}

/// A value for every variable.
#[derive(Clone, Debug, PartialEq)]
pub struct Point {
    pub shared: DVector<f64>,
    pub local: Vec<DVector<f64>>,
}

impl Point {
    pub fn zeros(pb: &Problem) -> Self {
        Point {
            shared: DVector::zeros(pb.n_shared),
            local: pb.group_sizes.iter().map(|&n| DVector::zeros(n)).collect(),
        }
    }

    fn get(&self, v: Var, group: Option<usize>) -> f64 {
        match v {
            Var::Shared(i) => self.shared[i],
            Var::Local(i) => self.local[group.expect("local term in shared block")][i],
        }
    }

    fn axpy(&self, step: f64, d: &Point) -> Point {
        Point {
            shared: &self.shared + &d.shared * step,
            local: self.local.iter().zip(&d.local).map(|(a, b)| a + b * step).collect(),
        }
    }

    fn dot(&self, other: &Point) -> f64 {
        self.shared.dot(&other.shared) + self.local.iter().zip(&other.local).map(|(a, b)| a.dot(b)).sum::<f64>()
    }

    fn max_abs(&self) -> f64 {
        self.local.iter().map(|l| l.amax()).fold(self.shared.amax(), f64::max)
    }
}

#[derive(Clone, Debug)]
pub struct Options {
    /// Phase I stops once every block exceeds this multiple of the identity.
    pub feas_tol: f64,
    /// Relative duality-gap target for phase II.
    pub gap_tol: f64,
    /// Barrier parameter growth factor.
    pub mu: f64,
    pub max_newton: usize,
}

impl Default for Options {
    fn default() -> Self {
        Options { feas_tol: 1e-7, gap_tol: 1e-6, mu: 10.0, max_newton: 600 }
    }
}

/// Counters reported with a solution.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Stats {
    pub newton_steps: usize,
}

impl Problem {
    fn barrier_degree(&self) -> f64 {
        let blocks: usize = self.blocks.iter().map(Block::dim).sum();
        let vars = self.n_shared + self.group_sizes.iter().sum::<usize>();
        (blocks + 2 * vars) as f64
    }

    fn cost(&self) -> Point {
        Point {
            shared: DVector::from_vec(pad(&self.cost_shared, self.n_shared)),
            local: self
                .group_sizes
                .iter()
                .enumerate()
                .map(|(g, &n)| DVector::from_vec(pad(self.cost_local.get(g).map_or(&[][..], |c| c), n)))
                .collect(),
        }
    }

    fn blocks_by_group(&self) -> (Vec<usize>, Vec<Vec<usize>>) {
        let mut shared = Vec::new();
        let mut groups = vec![Vec::new(); self.group_sizes.len()];
        for (j, b) in self.blocks.iter().enumerate() {
            match b.group {
                None => shared.push(j),
                Some(g) => groups[g].push(j),
            }
        }
        (shared, groups)
    }

    /// Smallest eigenvalue over all blocks at `p`.
    pub fn min_eigenvalue(&self, p: &Point) -> f64 {
        self.blocks
            .par_iter()
            .map(|b| SymmetricEigen::new(b.eval(p)).eigenvalues.min())
            .collect::<Vec<_>>()
            .into_iter()
            .fold(f64::INFINITY, f64::min)
    }
}

fn pad(v: &[f64], n: usize) -> Vec<f64> {
    let mut out = v.to_vec();
    out.resize(n, 0.0);
    out
}

/// Gradient and Hessian pieces of one local group.
struct GroupDerivs {
    g_local: DVector<f64>,
    h_local: DMatrix<f64>,
    h_cross: DMatrix<f64>,
    g_shared: DVector<f64>,
    h_shared: DMatrix<f64>,
}

/// Factored local Hessian with `H⁻¹Hᵀ_cross` and `H⁻¹g` of one group.
type Elimination = (Cholesky<f64, Dyn>, DMatrix<f64>, DVector<f64>);

struct Engine<'a> {
    pb: &'a Problem,
    shared_blocks: Vec<usize>,
    group_blocks: Vec<Vec<usize>>,
}

impl<'a> Engine<'a> {
    fn new(pb: &'a Problem) -> Self {
        let (shared_blocks, group_blocks) = pb.blocks_by_group();
        Engine { pb, shared_blocks, group_blocks }
    }

    /// `−Σ log det G_j − Σ log(bound² − v²)`, or `None` outside the domain.
    fn barrier(&self, p: &Point) -> Option<f64> {
        let r = self.pb.bound;
        if p.max_abs() >= r {
            return None;
        }
        let logdets: Vec<Option<f64>> = self
            .pb
            .blocks
            .par_iter()
            .map(|b| Cholesky::new(b.eval(p)).map(|c| 2.0 * c.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()))
            .collect();
        let mut phi = 0.0;
        for ld in logdets {
            phi -= ld?;
        }
        let box_term = |v: f64| -((r - v).ln() + (r + v).ln());
        phi += p.shared.iter().map(|&v| box_term(v)).sum::<f64>();
        phi += p.local.iter().flat_map(|l| l.iter()).map(|&v| box_term(v)).sum::<f64>();
        Some(phi)
    }

    fn block_derivs(&self, j: usize, p: &Point, out: &mut GroupDerivs) -> Option<()> {
        let b = &self.pb.blocks[j];
        let chol = Cholesky::<f64, Dyn>::new(b.eval(p))?;
        // M = Vᵀ G⁻¹ V
        let pv = chol.solve(&b.vectors);
        let m = b.vectors.transpose() * pv;
        let tr = |f: &Factored| f.iter().map(|&(c, i, k)| 2.0 * c * m[(i, k)]).sum::<f64>();
        let cross = |f: &Factored, g: &Factored| {
            let mut acc = 0.0;
            for &(c1, u, v) in f {
                for &(c2, x, y) in g {
                    acc += c1
                        * c2
                        * (m[(v, x)] * m[(y, u)]
                            + m[(v, y)] * m[(x, u)]
                            + m[(u, x)] * m[(y, v)]
                            + m[(u, y)] * m[(x, v)]);
                }
            }
            acc
        };
        for (a, (va, fa)) in b.terms.iter().enumerate() {
            let g = tr(fa);
            match *va {
                Var::Shared(i) => out.g_shared[i] -= g,
                Var::Local(i) => out.g_local[i] -= g,
            }
            for (bb, (vb, fb)) in b.terms.iter().enumerate().skip(a) {
                let h = cross(fa, fb);
                match (*va, *vb) {
                    (Var::Shared(i), Var::Shared(k)) => {
                        out.h_shared[(i, k)] += h;
                        if a != bb {
                            out.h_shared[(k, i)] += h;
                        }
                    }
                    (Var::Local(i), Var::Local(k)) => {
                        out.h_local[(i, k)] += h;
                        if a != bb {
                            out.h_local[(k, i)] += h;
                        }
                    }
                    (Var::Shared(i), Var::Local(k)) | (Var::Local(k), Var::Shared(i)) => {
                        out.h_cross[(i, k)] += h;
                    }
                }
            }
        }
        Some(())
    }

    /// Newton direction of `t·cᵀv + barrier(v)`; returns the direction and
    /// the directional derivative `∇φᵀΔ`.
    fn newton(&self, p: &Point, cost: &Point, t: f64) -> Option<(Point, f64)> {
        let ns = self.pb.n_shared;
        let r = self.pb.bound;
        let box_g = |v: f64| 1.0 / (r - v) - 1.0 / (r + v);
        let box_h = |v: f64| 1.0 / ((r - v) * (r - v)) + 1.0 / ((r + v) * (r + v));

        let groups: Vec<Option<GroupDerivs>> = self
            .group_blocks
            .par_iter()
            .enumerate()
            .map(|(g, blocks)| {
                let nl = self.pb.group_sizes[g];
                let mut d = GroupDerivs {
                    g_local: DVector::zeros(nl),
                    h_local: DMatrix::zeros(nl, nl),
                    h_cross: DMatrix::zeros(ns, nl),
                    g_shared: DVector::zeros(ns),
                    h_shared: DMatrix::zeros(ns, ns),
                };
                for &j in blocks {
                    self.block_derivs(j, p, &mut d)?;
                }
                for i in 0..nl {
                    let v = p.local[g][i];
                    d.g_local[i] += t * cost.local[g][i] + box_g(v);
                    d.h_local[(i, i)] += box_h(v);
                }
                Some(d)
            })
            .collect();

        let mut top = GroupDerivs {
            g_local: DVector::zeros(0),
            h_local: DMatrix::zeros(0, 0),
            h_cross: DMatrix::zeros(ns, 0),
            g_shared: DVector::zeros(ns),
            h_shared: DMatrix::zeros(ns, ns),
        };
        for &j in &self.shared_blocks {
            self.block_derivs(j, p, &mut top)?;
        }
        for i in 0..ns {
            let v = p.shared[i];
            top.g_shared[i] += t * cost.shared[i] + box_g(v);
            top.h_shared[(i, i)] += box_h(v);
        }

        let mut groups: Vec<GroupDerivs> = groups.into_iter().collect::<Option<_>>()?;
        for d in &groups {
            top.g_shared += &d.g_shared;
            top.h_shared += &d.h_shared;
        }

        // Eliminate local variables group by group.
        let elim: Vec<Option<Elimination>> = groups
            .par_iter_mut()
            .map(|d| {
                let chol = robust_cholesky(std::mem::replace(&mut d.h_local, DMatrix::zeros(0, 0)))?;
                let z = chol.solve(&d.h_cross.transpose());
                let zg = chol.solve(&d.g_local);
                Some((chol, z, zg))
            })
            .collect();
        let elim: Vec<_> = elim.into_iter().collect::<Option<_>>()?;

        let mut s = top.h_shared.clone();
        let mut rhs = top.g_shared.clone();
        for (d, (_, z, zg)) in groups.iter().zip(&elim) {
            s -= &d.h_cross * z;
            rhs -= &d.h_cross * zg;
        }
        let ds = if ns > 0 { -robust_cholesky(s)?.solve(&rhs) } else { DVector::zeros(0) };
        let local: Vec<DVector<f64>> = groups
            .par_iter()
            .zip(elim.par_iter())
            .map(|(d, (chol, _, _))| -chol.solve(&(&d.g_local + d.h_cross.transpose() * &ds)))
            .collect();

        let dir = Point { shared: ds, local };
        let grad = Point { shared: top.g_shared, local: groups.into_iter().map(|d| d.g_local).collect() };
        let slope = grad.dot(&dir);
        Some((dir, slope))
    }

    /// Damped Newton centering of `t·cᵀv + barrier`. `stop` is checked after
    /// every step and ends the whole solve early when it returns true.
    fn center(
        &self,
        p: &mut Point,
        cost: &Point,
        t: f64,
        budget: &mut usize,
        stop: &dyn Fn(&Point) -> bool,
    ) -> Result<bool> {
        let mut phi = self.barrier(p).ok_or_else(|| Error::NoConvergence("iterate left the barrier domain".into()))?
            + t * cost.dot(p);
        loop {
            if *budget == 0 {
                return Err(Error::NoConvergence("Newton iteration cap reached".into()));
            }
            *budget -= 1;
            let (dir, slope) =
                self.newton(p, cost, t).ok_or_else(|| Error::NoConvergence("singular Newton system".into()))?;
            let decrement = -slope;
            if !(decrement.is_finite()) {
                return Err(Error::NoConvergence("non-finite Newton decrement".into()));
            }
            if decrement / 2.0 < 1e-8 {
                return Ok(false);
            }
            let mut step = 1.0;
            let mut accepted = None;
            while step > 1e-12 {
                let cand = p.axpy(step, &dir);
                if let Some(b) = self.barrier(&cand) {
                    let val = b + t * cost.dot(&cand);
                    if val <= phi + 0.25 * step * slope {
                        accepted = Some((cand, val));
                        break;
                    }
                }
                step *= 0.5;
            }
            match accepted {
                Some((cand, val)) => {
                    let stalled = phi - val <= 1e-13 * phi.abs().max(1.0);
                    *p = cand;
                    phi = val;
                    if stalled {
                        return Ok(stop(p));
                    }
                }
                None => return Ok(false),
            }
            if stop(p) {
                return Ok(true);
            }
        }
    }
}

fn robust_cholesky(m: DMatrix<f64>) -> Option<Cholesky<f64, Dyn>> {
    if let Some(c) = Cholesky::new(m.clone()) {
        return Some(c);
    }
    let scale = m.diagonal().amax().max(1e-300);
    let mut reg = 1e-14 * scale;
    for _ in 0..8 {
        let mut mm = m.clone();
        for i in 0..mm.nrows() {
            mm[(i, i)] += reg;
        }
        if let Some(c) = Cholesky::new(mm) {
            return Some(c);
        }
        reg *= 100.0;
    }
    None
}

/// Finds a point with every block `⪰ feas_tol·I`.
///
/// Solves `min s` subject to `G_j(v) + s·I ⪰ 0`, `s ≥ −1`, stopping as soon
/// as `s < −feas_tol`. Returns [`Error::Infeasible`] when the barrier's dual
/// bound proves `s* ≥ −feas_tol`.
pub fn find_feasible(pb: &Problem, opts: &Options) -> Result<(Point, Stats)> {
    find_feasible_from(pb, Point::zeros(pb), opts)
}

/// [`find_feasible`] starting from `start`, which must lie inside the
/// variable bounds but need not satisfy the blocks.
pub fn find_feasible_from(pb: &Problem, start: Point, opts: &Options) -> Result<(Point, Stats)> {
    let lam = pb.min_eigenvalue(&start);
    if lam > opts.feas_tol {
        return Ok((start, Stats::default()));
    }
    let s_idx = pb.n_shared;
    let mut aux = pb.clone();
    aux.n_shared += 1;
    for b in aux.blocks.iter_mut() {
        b.push_identity(Var::Shared(s_idx), 1.0);
    }
    let mut floor = Block::new(None, DMatrix::from_element(1, 1, 1.0));
    floor.push_identity(Var::Shared(s_idx), 1.0);
    aux.blocks.push(floor);
    aux.cost_shared = vec![0.0; aux.n_shared];
    aux.cost_shared[s_idx] = 1.0;
    aux.cost_local = vec![];

    let mut p = Point { shared: start.shared.clone().resize_vertically(aux.n_shared, 0.0), local: start.local.clone() };
    p.shared[s_idx] = -lam + 0.1 * lam.abs().max(1.0);
    if p.shared[s_idx] >= aux.bound {
        aux.bound = 2.0 * p.shared[s_idx];
    }

    let engine = Engine::new(&aux);
    let cost = aux.cost();
    let m = aux.barrier_degree();
    let tol = opts.feas_tol;
    let stop = move |q: &Point| q.shared[s_idx] < -tol;
    let mut budget = opts.max_newton;
    let mut t = 1.0;
    loop {
        if engine.center(&mut p, &cost, t, &mut budget, &stop)? {
            break;
        }
        let s = p.shared[s_idx];
        // Central points certify s* ≥ s − m/t.
        if s - m / t > -tol || m / t < 1e-12 {
            return Err(Error::Infeasible(format!(
                "best achievable block margin {:.3e}, required {:.1e}",
                -(s - m / t),
                tol
            )));
        }
        t *= opts.mu;
    }
    let stats = Stats { newton_steps: opts.max_newton - budget };
    p.shared = p.shared.rows(0, pb.n_shared).into_owned();
    Ok((shrink(pb, p, opts.feas_tol), stats))
}

/// Barrier iterates drift towards the variable bounds when the constraints
/// are (nearly) homogeneous. Pull the point towards the origin while it stays
/// strictly feasible.
fn shrink(pb: &Problem, p: Point, tol: f64) -> Point {
    let zero = Point::zeros(pb);
    let mut best = p;
    for _ in 0..60 {
        let cand = zero.axpy(0.5, &best);
        if pb.min_eigenvalue(&cand) > tol {
            best = cand;
        } else {
            break;
        }
    }
    best
}

/// Minimizes the linear cost from a strictly feasible start.
pub fn minimize(pb: &Problem, start: Point, opts: &Options) -> Result<(Point, Stats)> {
    let engine = Engine::new(pb);
    let cost = pb.cost();
    let m = pb.barrier_degree();
    let mut p = start;
    if engine.barrier(&p).is_none() {
        return Err(Error::NoConvergence("start point is not strictly feasible".into()));
    }
    let mut t = m / cost.dot(&p).abs().max(1.0);
    let mut budget = opts.max_newton;
    let never = |_: &Point| false;
    loop {
        engine.center(&mut p, &cost, t, &mut budget, &never)?;
        if m / t <= opts.gap_tol * cost.dot(&p).abs().max(1.0) {
            break;
        }
        t *= opts.mu;
    }
    Ok((p, Stats { newton_steps: opts.max_newton - budget }))
}

/// Analytic centre of the feasible set (minimizer of the barrier alone).
pub fn analytic_center(pb: &Problem, start: Point, opts: &Options) -> Result<(Point, Stats)> {
    let engine = Engine::new(pb);
    let zero = Point::zeros(pb);
    let mut p = start;
    let mut budget = opts.max_newton;
    engine.center(&mut p, &zero, 0.0, &mut budget, &|_| false)?;
    Ok((p, Stats { newton_steps: opts.max_newton - budget }))
}
