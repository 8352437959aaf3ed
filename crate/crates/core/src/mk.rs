//! Two-level and multilevel Krylov solvers: right-preconditioned FGMRES with
//! the shifted deflation preconditioner `Q = I - Z A_H⁻¹ Yᵀ A + μ Z A_H⁻¹ Yᵀ`.
//!
//! Coarse solves recurse into FGMRES with fixed budgets; the coarsest level
//! is solved directly, optionally decoupled into independent chains.

use crate::error::{ensure, Error, Result};
use crate::exec::Executor;
use crate::intergrid::{
    build_mgrit_pair, build_space_pair, build_t_pair, build_ts_pair, decoupling_blocks, Agglomeration,
    CoarseningKind, IntergridPair,
};
use crate::linalg::{axpy, dot, norm2, scale, CsrMatrix};
use crate::parcost::{ChargeTrace, CostLedger, CostModel, Phase, Pool};
use crate::spatial::GridShape;
use crate::storage::Buffer;
use crate::theta::{partition_system, BlockBidiagonal, FineSystem, StackedVector};
use faer::Mat;
use serde::Serialize;
use std::sync::Arc;
use std::time::Instant;

/// One coarsening step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Move {
    #[serde(serialize_with = "ser_kind")]
    pub kind: CoarseningKind,
    pub nu: usize,
}

fn ser_kind<S: serde::Serializer>(k: &CoarseningKind, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(k.name())
}

impl Move {
    pub fn time(nu: usize) -> Self {
        Self { kind: CoarseningKind::T, nu }
    }

    pub fn space() -> Self {
        Self { kind: CoarseningKind::Space, nu: 1 }
    }

    pub fn time_space(nu: usize) -> Self {
        Self { kind: CoarseningKind::TS, nu }
    }

    pub fn mgrit(nu: usize) -> Self {
        Self { kind: CoarseningKind::Mgrit, nu }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Schedule {
    Moves(Vec<Move>),
    /// Time moves with factor `nu` until the stability bound fails, then
    /// alternating space and time moves, for `levels` levels in total.
    Auto { levels: usize, nu: usize },
}

impl Schedule {
    /// Parses `auto` or a comma list such as `T,T,S,T` / `TS` / `MGRIT`.
    pub fn parse(s: &str, levels: usize, nu: usize) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("auto") {
            return Ok(Schedule::Auto { levels, nu });
        }
        let moves = s
            .split(',')
            .map(|t| {
                let kind = CoarseningKind::parse(t.trim())?;
                Ok(Move { kind, nu: if kind == CoarseningKind::Space { 1 } else { nu } })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Schedule::Moves(moves))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum InnerBudget {
    /// The same budget on every intermediate level.
    Uniform(usize),
    /// `k` on intermediate levels and one iteration on the level before the coarsest.
    OneBeforeCoarsest(usize),
    /// Budgets for levels `2..L-1` in order.
    Explicit(Vec<usize>),
}

impl InnerBudget {
    fn for_levels(&self, levels: usize) -> Result<Vec<usize>> {
        let inner = levels.saturating_sub(2);
        let v = match self {
            InnerBudget::Uniform(k) => vec![*k; inner],
            InnerBudget::OneBeforeCoarsest(k) => (0..inner).map(|i| if i + 1 == inner { 1 } else { *k }).collect(),
            InnerBudget::Explicit(v) => {
                ensure(v.len() >= inner, || format!("{} inner budgets given, {inner} needed", v.len()))?;
                v[..inner].to_vec()
            }
        };
        ensure(v.iter().all(|&b| b >= 1), || "inner budgets must be at least 1".into())?;
        Ok(v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum CoarsestSolve {
    /// Sequential block forward substitution on one processor.
    Exact,
    /// Drop chunk-boundary sub-blocks and solve `n_cgs` chains in parallel.
    Decoupled(usize),
}

#[derive(Debug, Clone, Serialize)]
pub struct SolverConfig {
    pub mu: f64,
    pub tol: f64,
    pub max_outer: usize,
    pub inner: InnerBudget,
    pub coarsest: CoarsestSolve,
    pub n_proc: usize,
    pub model: CostModel,
    #[serde(skip)]
    pub executor: Executor,
    /// Keep the Krylov basis and preconditioned vectors for inspection.
    pub keep_state: bool,
}

impl SolverConfig {
    pub fn new(dim: usize) -> Self {
        Self {
            mu: 1.0,
            tol: 1e-6,
            max_outer: 500,
            inner: InnerBudget::OneBeforeCoarsest(2),
            coarsest: CoarsestSolve::Exact,
            n_proc: 1,
            model: CostModel::for_dim(dim),
            executor: Executor::Serial,
            keep_state: false,
        }
    }

    fn validate(&self) -> Result<()> {
        ensure(self.mu != 0.0 && self.mu.is_finite(), || "mu must be nonzero".into())?;
        ensure(self.tol > 0.0, || "tol must be positive".into())?;
        ensure(self.max_outer >= 1, || "max_outer must be at least 1".into())?;
        ensure(self.n_proc >= 1, || "n_proc must be at least 1".into())
    }
}

/// One level: `diag = I - a A_ℓ`, `sub = I + b A_ℓ`, first block `I`.
#[derive(Debug, Clone)]
pub struct Level {
    pub system: BlockBidiagonal,
    pub shape: GridShape,
    pub spatial: Arc<CsrMatrix>,
    pub a: f64,
    pub b: f64,
    pub created_by: Option<Move>,
    pub to_next: Option<IntergridPair>,
    pub budget: usize,
}

impl Level {
    /// Step size `ΔT = a + b` of the equivalent θ-scheme.
    pub fn step(&self) -> f64 {
        self.a + self.b
    }

    /// Explicit weight `θ̃` in `Φ̃ = I + θ̃ ΔT A`.
    pub fn explicit_weight(&self) -> f64 {
        self.b / self.step()
    }

    /// `(1 - 2θ̃) ΔT ρ(A)` with a Gershgorin bound for `ρ(A)`.
    pub fn stability_indicator(&self) -> f64 {
        (1.0 - 2.0 * self.explicit_weight()) * self.step() * self.spatial.gershgorin_bound()
    }

    fn with_params(shape: GridShape, spatial: Arc<CsrMatrix>, a: f64, b: f64, n_steps: usize) -> Result<Self> {
        let n = spatial.nrows();
        let id = CsrMatrix::identity(n);
        let diag = id.linear_combination(1.0, &spatial, -a)?;
        let sub = id.linear_combination(1.0, &spatial, b)?;
        let system = BlockBidiagonal::new(Arc::new(id), Arc::new(diag), Arc::new(sub), n_steps)?;
        Ok(Self { system, shape, spatial, a, b, created_by: None, to_next: None, budget: 0 })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LevelStats {
    pub level: usize,
    pub n_steps: usize,
    pub grid: String,
    pub created_by: Option<String>,
    pub budget: usize,
    pub stability_indicator: f64,
    pub elapsed: u64,
}

#[derive(Debug, Clone)]
pub struct LevelHierarchy {
    pub levels: Vec<Level>,
    pub cfg: SolverConfig,
    coarsest_workers: usize,
}

fn coarsen(cur: &Level, mv: Move) -> Result<(IntergridPair, Level)> {
    let n_steps = cur.system.n_steps();
    ensure(mv.nu >= 1, || "coarsening factor must be at least 1".into())?;
    if !n_steps.is_multiple_of(mv.nu) {
        return Err(Error::Divisibility { what: "n_t", value: n_steps, divisor: mv.nu });
    }
    let n_coarse = n_steps / mv.nu;
    let n = cur.spatial.nrows();
    let nu = mv.nu as f64;
    let (ta, tb) = (nu * cur.a + (nu - 1.0) * cur.b, cur.b);
    let agg = || -> Result<Agglomeration> {
        ensure(cur.shape.nx >= 2 && (cur.shape.dim == 1 || cur.shape.ny >= 2), || {
            format!("grid {} is too small for space coarsening", cur.shape)
        })?;
        Ok(Agglomeration::standard(cur.shape))
    };
    let (pair, shape, spatial, a, b) = match mv.kind {
        CoarseningKind::T => (build_t_pair(n, mv.nu, n_coarse)?, cur.shape, cur.spatial.clone(), ta, tb),
        CoarseningKind::TS => {
            let agg = agg()?;
            let shape = agg.coarse_shape().expect("standard agglomeration");
            let spatial = Arc::new(agg.galerkin(&cur.spatial)?);
            (build_ts_pair(n, mv.nu, n_coarse, agg)?, shape, spatial, ta, tb)
        }
        CoarseningKind::Space => {
            let agg = agg()?;
            let shape = agg.coarse_shape().expect("standard agglomeration");
            let spatial = Arc::new(agg.galerkin(&cur.spatial)?);
            (build_space_pair(n_steps, agg)?, shape, spatial, cur.a, cur.b)
        }
        CoarseningKind::Mgrit => {
            cur.system.factorize()?;
            let part = partition_system(&cur.system, mv.nu)?;
            (build_mgrit_pair(&part)?, cur.shape, cur.spatial.clone(), nu * cur.a, nu * cur.b)
        }
    };
    let mut next = Level::with_params(shape, spatial, a, b, pair.n_coarse_steps)?;
    next.created_by = Some(mv);
    Ok((pair, next))
}

/// Builds the level hierarchy for `fine` on grid `shape`.
pub fn build_hierarchy(fine: &FineSystem, shape: GridShape, schedule: &Schedule, cfg: &SolverConfig) -> Result<LevelHierarchy> {
    cfg.validate()?;
    ensure(shape.len() == fine.n(), || format!("grid {shape} does not match block size {}", fine.n()))?;
    let theta = fine.ops.cfg.theta;
    let dt = fine.ops.cfg.delta_t;
    let mut first = Level::with_params(shape, fine.ops.spatial.clone(), theta * dt, (1.0 - theta) * dt, fine.n_t())?;
    first.system = fine.matrix.clone();
    let mut levels = vec![first];
    match schedule {
        Schedule::Moves(moves) => {
            for &mv in moves {
                let (pair, next) = coarsen(levels.last().expect("nonempty"), mv)?;
                levels.last_mut().expect("nonempty").to_next = Some(pair);
                levels.push(next);
            }
        }
        Schedule::Auto { levels: target, nu } => {
            ensure(*target >= 1, || "need at least one level".into())?;
            let mut timing = true;
            let mut next_space = true;
            while levels.len() < *target {
                let cur = levels.last().expect("nonempty");
                let mv = if timing {
                    Move::time(*nu)
                } else if next_space {
                    Move::space()
                } else {
                    Move::time(*nu)
                };
                let (pair, next) = coarsen(cur, mv)?;
                if timing && next.stability_indicator() > 2.0 {
                    timing = false;
                } else if !timing {
                    next_space = !next_space;
                }
                levels.last_mut().expect("nonempty").to_next = Some(pair);
                levels.push(next);
            }
        }
    }
    let budgets = cfg.inner.for_levels(levels.len())?;
    for (i, b) in budgets.into_iter().enumerate() {
        levels[i + 1].budget = b;
    }
    let coarsest_workers = match cfg.coarsest {
        CoarsestSolve::Exact => 1,
        CoarsestSolve::Decoupled(n_cgs) => {
            if levels.len() > 1 {
                let last = levels.last_mut().expect("nonempty");
                let blocks = decoupling_blocks(last.system.n_steps(), n_cgs)?;
                last.system = last.system.with_dropped(&blocks)?;
            }
            n_cgs
        }
    };
    if levels.len() > 1 {
        levels.last().expect("nonempty").system.factorize()?;
    }
    Ok(LevelHierarchy { levels, cfg: cfg.clone(), coarsest_workers })
}

/// Krylov data kept for inspection (desk-scale runs only).
#[derive(Debug, Clone)]
pub struct FgmresState {
    pub basis: Vec<Vec<f64>>,
    pub preconditioned: Vec<Vec<f64>>,
    /// Column `j` holds `h_{0..=j+1, j}`.
    pub hessenberg: Vec<Vec<f64>>,
    pub beta: f64,
}

impl FgmresState {
    /// `‖A X_J - V_{J+1} H_J‖_F / ‖A X_J‖_F`
    pub fn arnoldi_residual(&self, system: &BlockBidiagonal) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        let mut ax = vec![0.0; system.dim()];
        for (j, x) in self.preconditioned.iter().enumerate() {
            system.matvec(x, &mut ax);
            den += dot(&ax, &ax);
            for (i, &h) in self.hessenberg[j].iter().enumerate() {
                if i < self.basis.len() {
                    axpy(-h, &self.basis[i], &mut ax);
                }
            }
            num += dot(&ax, &ax);
        }
        (num / den).sqrt()
    }
}

struct KrylovOutcome {
    x: Buffer,
    iterations: usize,
    history: Vec<f64>,
    converged: bool,
    state: Option<FgmresState>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SolveReport {
    pub outer_iterations: usize,
    pub converged: bool,
    /// Relative residual estimates; entry 0 is the initial residual.
    pub residual_history: Vec<f64>,
    /// Relative residual recomputed from the returned solution.
    pub final_residual: f64,
    pub error_vs_oracle: Option<f64>,
    pub wall_seconds: f64,
    pub simulated_elapsed: u64,
    pub levels: Vec<LevelStats>,
    #[serde(skip)]
    pub ledger: CostLedger,
    #[serde(skip)]
    pub trace: ChargeTrace,
    pub coarsest_workers: usize,
    #[serde(skip)]
    pub state: Option<FgmresState>,
}

impl SolveReport {
    /// The same run re-costed on `n_proc` processors.
    pub fn ledger_for(&self, model: &CostModel, n_proc: usize) -> CostLedger {
        self.trace.replay(model, n_proc, self.coarsest_workers)
    }
}

impl LevelHierarchy {
    pub fn len(&self) -> usize {
        self.levels.len()
    }

    /// Peak bytes held by one coarse solve below the finest level.
    pub fn inner_working_set_bytes(&self) -> usize {
        let dims: Vec<usize> = self.levels.iter().map(|l| l.system.dim()).collect();
        let last = dims.len() - 1;
        let mut total = if last > 0 { dims[last] } else { 0 };
        for l in 1..last {
            let k = self.levels[l].budget;
            total += (k + 2) * dims[l] + (k + 1) * dims[l + 1];
        }
        total * std::mem::size_of::<f64>()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn coarsest(&self) -> &Level {
        self.levels.last().expect("hierarchy has a level")
    }

    pub fn moves(&self) -> Vec<Move> {
        self.levels.iter().filter_map(|l| l.created_by).collect()
    }

    fn row_cost(&self, l: usize) -> u64 {
        let s = &self.levels[l].system;
        self.cfg.model.c_mv(s.diag().nnz() + s.sub().nnz())
    }

    fn charge_blocks(&self, trace: &mut ChargeTrace, phase: Phase, l: usize, tasks: usize, cost: u64) {
        trace.uniform(phase, l + 1, tasks, cost, Pool::Procs);
    }

    /// Direct solve on the coarsest level, in place.
    fn direct_solve(&self, x: &mut [f64], trace: &mut ChargeTrace) {
        let lvl = self.coarsest();
        let s = &lvl.system;
        let m = s.n();
        let c_step = self.cfg.model.c_inv(m, s.diag_lu().bandwidth()) + self.cfg.model.c_mv(s.sub().nnz());
        let chains = s.chains();
        let mut costs = Vec::with_capacity(chains.len());
        for ch in chains {
            let steps = ch.clone().filter(|&k| k > 0).count() as u64;
            costs.push(steps * c_step + if ch.start == 0 { self.cfg.model.c_vec(m) } else { 0 });
            s.forward_solve_range(ch, x);
        }
        trace.tasks(Phase::CoarseSolve, self.len(), costs, Pool::Coarsest);
    }

    /// Approximate `A_ℓ⁻¹ rhs` for level index `l ≥ 1` (0-based).
    fn coarse_solve(&self, l: usize, mut rhs: Buffer, trace: &mut ChargeTrace) -> Buffer {
        if l + 1 == self.len() {
            self.direct_solve(&mut rhs, trace);
            rhs
        } else {
            self.fgmres(l, rhs, self.levels[l].budget, None, false, trace).x
        }
    }

    /// `z = Q_ℓ v`; returns the coarse correction `ṽ` with `z = v - Z ṽ`.
    fn apply_q_into(&self, l: usize, v: &[f64], z: &mut [f64], trace: &mut ChargeTrace) -> Buffer {
        let lvl = &self.levels[l];
        let pair = lvl.to_next.as_ref().expect("level has a coarser neighbour");
        let n = lvl.system.n();
        let mut c = Buffer::zeros(pair.coarse_dim());
        pair.restrict_shifted_residual(&lvl.system, self.cfg.mu, v, &mut c);
        let rows = (0..=lvl.system.n_steps()).filter(|&i| pair.coarse_of(i).is_some()).count();
        let model = &self.cfg.model;
        self.charge_blocks(trace, Phase::Matvec, l, rows, self.row_cost(l) + model.c_vec(n));
        self.charge_blocks(trace, Phase::Restriction, l, pair.n_coarse_steps + 1, model.c_vec(pair.nu * n));
        let vt = self.coarse_solve(l + 1, c, trace);
        z.copy_from_slice(v);
        pair.interpolate_sub(&vt, z);
        let solves = pair.interpolation_solves();
        if solves > 0 {
            let per = (pair.nu - 1) as u64
                * (model.c_inv(n, lvl.system.diag_lu().bandwidth()) + model.c_mv(lvl.system.sub().nnz()))
                + model.c_vec(pair.nu * n);
            self.charge_blocks(trace, Phase::Interpolation, l, pair.n_coarse_steps, per);
        } else {
            self.charge_blocks(trace, Phase::Interpolation, l, lvl.system.n_steps() + 1, model.c_vec(n));
        }
        vt
    }

    /// Matrix-free `Q_ℓ v` (level index `l`, 0-based).
    pub fn apply_q(&self, l: usize, v: &[f64]) -> Vec<f64> {
        let mut z = vec![0.0; v.len()];
        self.apply_q_into(l, v, &mut z, &mut ChargeTrace::new());
        z
    }

    /// Matrix-free `A_ℓ Q_ℓ v`.
    pub fn apply_aq(&self, l: usize, v: &[f64]) -> Vec<f64> {
        let z = self.apply_q(l, v);
        let mut w = vec![0.0; v.len()];
        self.levels[l].system.matvec(&z, &mut w);
        w
    }

    /// Dense `Q_ℓ` assembled column by column.
    pub fn dense_q(&self, l: usize) -> Mat<f64> {
        let dim = self.levels[l].system.dim();
        let mut q = Mat::<f64>::zeros(dim, dim);
        let mut e = vec![0.0; dim];
        for j in 0..dim {
            e[j] = 1.0;
            let col = self.apply_q(l, &e);
            e[j] = 0.0;
            for (i, v) in col.into_iter().enumerate() {
                q[(i, j)] = v;
            }
        }
        q
    }

    fn fgmres(
        &self,
        l: usize,
        mut rhs: Buffer,
        max_iter: usize,
        tol: Option<f64>,
        top: bool,
        trace: &mut ChargeTrace,
    ) -> KrylovOutcome {
        let lvl = &self.levels[l];
        let sys = &lvl.system;
        let dim = sys.dim();
        let n = sys.n();
        let blocks = sys.n_steps() + 1;
        let model = self.cfg.model;
        let keep = top && self.cfg.keep_state;
        let reserve = if top { self.inner_working_set_bytes() } else { 0 };
        let alloc = |len: usize| if top { Buffer::zeros_spillable_reserving(len, reserve) } else { Buffer::zeros(len) };

        let beta = norm2(&rhs);
        self.charge_blocks(trace, Phase::Orthogonalization, l, blocks, 2 * model.c_vec(n));
        if beta == 0.0 {
            return KrylovOutcome { x: rhs, iterations: 0, history: vec![0.0], converged: true, state: None };
        }
        scale(1.0 / beta, &mut rhs);
        let mut basis: Vec<Buffer> = vec![rhs];
        let mut corrections: Vec<Buffer> = Vec::new();
        let mut explicit: Vec<Vec<f64>> = Vec::new();
        let mut hess: Vec<Vec<f64>> = Vec::new();
        let mut r_cols: Vec<Vec<f64>> = Vec::new();
        let (mut cs, mut sn): (Vec<f64>, Vec<f64>) = (Vec::new(), Vec::new());
        let mut g = vec![beta];
        let mut history = vec![1.0];
        let mut z = Buffer::zeros(dim);
        let mut converged = false;

        for j in 0..max_iter {
            let vt = self.apply_q_into(l, &basis[j], &mut z, trace);
            if top {
                let mut kept = alloc(vt.len());
                kept.copy_from_slice(&vt);
                corrections.push(kept);
            } else {
                corrections.push(vt);
            }
            if keep {
                explicit.push(z.to_vec());
            }
            let mut w = alloc(dim);
            sys.matvec_with(self.cfg.executor, &z, &mut w);
            self.charge_blocks(trace, Phase::Matvec, l, blocks, self.row_cost(l));
            let w_norm = norm2(&w);
            let mut h = vec![0.0; j + 2];
            for (i, v) in basis.iter().enumerate() {
                h[i] = dot(&w, v);
                axpy(-h[i], v, &mut w);
            }
            h[j + 1] = norm2(&w);
            self.charge_blocks(trace, Phase::Orthogonalization, l, blocks, (4 * (j as u64 + 1) + 4) * model.c_vec(n));
            if keep {
                hess.push(h.clone());
            }
            let mut r = h.clone();
            for i in 0..j {
                let t = cs[i] * r[i] + sn[i] * r[i + 1];
                r[i + 1] = -sn[i] * r[i] + cs[i] * r[i + 1];
                r[i] = t;
            }
            let rho = r[j].hypot(r[j + 1]);
            let (c, s) = if rho == 0.0 { (1.0, 0.0) } else { (r[j] / rho, r[j + 1] / rho) };
            cs.push(c);
            sn.push(s);
            r[j] = rho;
            r.truncate(j + 1);
            r_cols.push(r);
            g.push(-s * g[j]);
            g[j] *= c;
            let rel = g[j + 1].abs() / beta;
            history.push(rel);

            let breakdown = h[j + 1] == 0.0 || h[j + 1] <= f64::EPSILON * w_norm;
            if breakdown || tol.is_some_and(|t| rel <= t) {
                if keep && h[j + 1] > 0.0 {
                    scale(1.0 / h[j + 1], &mut w);
                    basis.push(w);
                }
                converged = true;
                break;
            }
            if j + 1 < max_iter || keep {
                scale(1.0 / h[j + 1], &mut w);
                basis.push(w);
            }
        }

        let k = corrections.len();
        let mut y = vec![0.0; k];
        for i in (0..k).rev() {
            let mut s = g[i];
            for (jj, yj) in y.iter().enumerate().skip(i + 1) {
                s -= r_cols[jj][i] * yj;
            }
            y[i] = s / r_cols[i][i];
        }
        let state = keep.then(|| FgmresState {
            basis: basis.iter().map(|b| b.to_vec()).collect(),
            preconditioned: explicit,
            hessenberg: hess,
            beta,
        });
        let pair = lvl.to_next.as_ref().expect("level has a coarser neighbour");
        let mut csum = Buffer::zeros(pair.coarse_dim());
        for (yj, c) in y.iter().zip(&corrections) {
            axpy(*yj, c, &mut csum);
        }
        drop(corrections);
        let x = &mut z;
        x.fill(0.0);
        for (yj, v) in y.iter().zip(&basis) {
            axpy(*yj, v, x);
        }
        drop(basis);
        pair.interpolate_sub(&csum, x);
        self.charge_blocks(trace, Phase::Orthogonalization, l, blocks, 2 * k as u64 * model.c_vec(n));
        self.charge_blocks(trace, Phase::Interpolation, l, blocks, model.c_vec(n));
        let iterations = history.len() - 1;
        KrylovOutcome { x: z, iterations, history, converged, state }
    }

    fn level_stats(&self, ledger: &CostLedger) -> Vec<LevelStats> {
        self.levels
            .iter()
            .enumerate()
            .map(|(i, l)| LevelStats {
                level: i + 1,
                n_steps: l.system.n_steps(),
                grid: l.shape.to_string(),
                created_by: l.created_by.map(|m| format!("{}{}", m.kind.name(), if m.nu > 1 { m.nu.to_string() } else { String::new() })),
                budget: l.budget,
                stability_indicator: l.stability_indicator(),
                elapsed: ledger.level_elapsed().get(&(i + 1)).copied().unwrap_or(0),
            })
            .collect()
    }
}

/// `‖f - A u‖₂ / ‖f‖₂` computed block by block.
pub fn stacked_relative_residual(sys: &BlockBidiagonal, rhs: &StackedVector, u: &[f64]) -> f64 {
    let n = sys.n();
    let mut r = vec![0.0; n];
    let (mut num, mut den) = (0.0, 0.0);
    for k in 0..=sys.n_steps() {
        sys.apply_row(k, u, &mut r);
        if let Some(f) = rhs.block(k) {
            axpy(-1.0, f, &mut r);
            den += dot(f, f);
        }
        num += dot(&r, &r);
    }
    (num / den).sqrt()
}

/// Solves the finest-level system of `hier` with zero initial guess.
pub fn multilevel_solve(hier: &LevelHierarchy, rhs: &StackedVector) -> Result<(Buffer, SolveReport)> {
    let start = Instant::now();
    let sys = &hier.levels[0].system;
    ensure(rhs.len() == sys.dim(), || format!("rhs length {} does not match system {}", rhs.len(), sys.dim()))?;
    let mut trace = ChargeTrace::new();
    let mut b = Buffer::zeros_spillable_reserving(sys.dim(), hier.inner_working_set_bytes());
    rhs.write_dense(&mut b);
    let (x, iterations, history, converged, state) = if hier.len() == 1 {
        let mut x = b;
        sys.forward_solve(&mut x);
        (x, 0, vec![1.0, 0.0], true, None)
    } else {
        let out = hier.fgmres(0, b, hier.cfg.max_outer, Some(hier.cfg.tol), true, &mut trace);
        (out.x, out.iterations, out.history, out.converged, out.state)
    };
    let final_residual = stacked_relative_residual(sys, rhs, &x);
    let ledger = trace.replay(&hier.cfg.model, hier.cfg.n_proc, hier.coarsest_workers);
    let report = SolveReport {
        outer_iterations: iterations,
        converged,
        residual_history: history,
        final_residual,
        error_vs_oracle: None,
        wall_seconds: start.elapsed().as_secs_f64(),
        simulated_elapsed: ledger.elapsed(),
        levels: hier.level_stats(&ledger),
        ledger,
        trace,
        coarsest_workers: hier.coarsest_workers,
        state,
    };
    Ok((x, report))
}

/// Two-level solve with a single coarsening move.
pub fn two_level_solve(fine: &FineSystem, shape: GridShape, mv: Move, cfg: &SolverConfig) -> Result<(Buffer, SolveReport)> {
    let hier = build_hierarchy(fine, shape, &Schedule::Moves(vec![mv]), cfg)?;
    multilevel_solve(&hier, &fine.rhs)
}

/// `‖u - u_ref‖₂ / ‖u_ref‖₂`
pub fn relative_error(u: &[f64], reference: &[f64]) -> f64 {
    let mut num = 0.0;
    for (a, b) in u.iter().zip(reference) {
        num += (a - b) * (a - b);
    }
    (num / dot(reference, reference)).sqrt()
}

/// Ledger of the sequential θ-scheme on `fine`.
pub fn theta_scheme_ledger(fine: &FineSystem, model: &CostModel) -> CostLedger {
    let mut ledger = CostLedger::new(model);
    let s = &fine.matrix;
    let per = model.c_inv(s.n(), s.diag_lu().bandwidth()) + model.c_mv(s.sub().nnz());
    for _ in 0..fine.n_t() {
        ledger.charge_serial(Phase::Sequential, 1, per);
    }
    ledger
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::dense_max_abs_diff;
    use crate::spatial::{build_laplacian, InitialCondition, SpatialOperator};
    use crate::theta::{assemble_fine_system, build_step_operators, sequential_solve, Forcing, ThetaSchemeConfig};

    fn problem(dim: usize, nx: usize, n_t: usize, c: f64) -> (SpatialOperator, FineSystem) {
        let op = build_laplacian(dim, nx, nx, 1.0, 1.0).unwrap();
        let dt = op.delta_t_for_courant(c).unwrap();
        let ops = build_step_operators(&op, ThetaSchemeConfig::new(0.5, dt, n_t).unwrap()).unwrap();
        let u0 = InitialCondition::Random { seed: 11 }.sample(&op);
        let fine = assemble_fine_system(&ops, &u0, &Forcing::Zero).unwrap();
        (op, fine)
    }

    #[test]
    fn identity_pair_converges_in_one_iteration() {
        let (op, fine) = problem(1, 9, 8, 0.64);
        let (_, rep) = two_level_solve(&fine, op.shape, Move::time(1), &SolverConfig::new(1)).unwrap();
        assert_eq!(rep.outer_iterations, 1);
        assert!(rep.converged);
    }

    #[test]
    fn identity_pair_gives_scaled_inverse() {
        let (op, fine) = problem(1, 4, 4, 0.64);
        let mut cfg = SolverConfig::new(1);
        cfg.mu = 2.5;
        let h = build_hierarchy(&fine, op.shape, &Schedule::Moves(vec![Move::time(1)]), &cfg).unwrap();
        let v: Vec<f64> = (0..fine.dim()).map(|i| (i as f64 * 0.3).sin()).collect();
        let aq = h.apply_aq(0, &v);
        let expect: Vec<f64> = v.iter().map(|x| 2.5 * x).collect();
        assert!(crate::linalg::max_abs_diff(&aq, &expect) < 1e-12);
    }

    #[test]
    fn zero_shift_deflates() {
        let (op, fine) = problem(1, 6, 8, 0.32);
        for mv in [Move::time(2), Move::time_space(2)] {
            let mut h = build_hierarchy(&fine, op.shape, &Schedule::Moves(vec![mv]), &SolverConfig::new(1)).unwrap();
            h.cfg.mu = 0.0;
            let v: Vec<f64> = (0..fine.dim()).map(|i| 1.0 + (i as f64).cos()).collect();
            let aq = h.apply_aq(0, &v);
            let pair = h.levels[0].to_next.as_ref().unwrap();
            let mut c = vec![0.0; pair.coarse_dim()];
            pair.restrict(&aq, &mut c);
            assert!(norm2(&c) <= 1e-10 * norm2(&v), "{:?}", mv);
        }
    }

    #[test]
    fn dense_q_matches_formula() {
        let (op, fine) = problem(1, 2, 4, 0.64);
        let cfg = SolverConfig::new(1);
        for mv in [Move::time(2), Move::time_space(2)] {
            let h = build_hierarchy(&fine, op.shape, &Schedule::Moves(vec![mv]), &cfg).unwrap();
            let pair = h.levels[0].to_next.as_ref().unwrap();
            let a = fine.matrix.to_dense();
            let (y, z) = (pair.dense_y(), pair.dense_z());
            let ah = h.levels[1].system.to_dense();
            let lu = ah.partial_piv_lu();
            use faer::linalg::solvers::Solve;
            let yt = y.transpose().to_owned();
            let dim = a.nrows();
            let q = Mat::<f64>::identity(dim, dim) - &z * lu.solve(&yt * &a) + &z * lu.solve(&yt);
            assert!(dense_max_abs_diff(&q, &h.dense_q(0)) < 1e-12);
        }
    }

    #[test]
    fn fgmres_invariants() {
        let (op, fine) = problem(1, 16, 32, 0.64);
        let mut cfg = SolverConfig::new(1);
        cfg.keep_state = true;
        let (u, rep) = two_level_solve(&fine, op.shape, Move::time(4), &cfg).unwrap();
        assert!(rep.converged);
        let st = rep.state.as_ref().unwrap();
        assert!(st.arnoldi_residual(&fine.matrix) < 1e-10);
        for v in &st.basis {
            assert!((norm2(v) - 1.0).abs() < 1e-12);
        }
        for (j, col) in st.hessenberg.iter().enumerate() {
            assert_eq!(col.len(), j + 2);
        }
        assert!(rep.residual_history.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)));
        assert!(rep.final_residual <= 1e-6 * 1.01);
        let oracle = sequential_solve(&fine.ops, &fine.rhs.block(0).unwrap().to_vec(), &Forcing::Zero).unwrap();
        assert!(relative_error(&u, &oracle) <= 1e-4);
    }

    #[test]
    fn deterministic_across_processor_counts() {
        let (op, fine) = problem(1, 16, 32, 0.64);
        let mut a = SolverConfig::new(1);
        a.n_proc = 1;
        let mut b = a.clone();
        b.n_proc = 7;
        b.executor = Executor::Threads(3);
        let (ua, ra) = two_level_solve(&fine, op.shape, Move::time(2), &a).unwrap();
        let (ub, rb) = two_level_solve(&fine, op.shape, Move::time(2), &b).unwrap();
        assert_eq!(ra.residual_history, rb.residual_history);
        assert_eq!(&ua[..], &ub[..]);
        assert!(rb.simulated_elapsed < ra.simulated_elapsed);
    }

    #[test]
    fn auto_schedule_follows_stability_rule() {
        let (op, fine) = problem(2, 16, 64, 0.16);
        let cfg = SolverConfig::new(2);
        let h = build_hierarchy(&fine, op.shape, &Schedule::Auto { levels: 7, nu: 2 }, &cfg).unwrap();
        let kinds: String = h.moves().iter().map(|m| m.kind.name()).collect();
        assert_eq!(kinds, "TTTSTS");
        let c = h.coarsest();
        assert_eq!(c.system.n_steps(), 4);
        assert_eq!(c.shape, GridShape::new(2, 4, 4).unwrap());
        assert_eq!(h.levels.iter().map(|l| l.budget).collect::<Vec<_>>(), vec![0, 2, 2, 2, 2, 1, 0]);
    }

    #[test]
    fn fig8_shape() {
        let (op, fine) = problem(2, 8, 16, 0.16);
        let moves = vec![Move::time(2), Move::time(2), Move::time(2), Move::space(), Move::time(2)];
        let h = build_hierarchy(&fine, op.shape, &Schedule::Moves(moves), &SolverConfig::new(2)).unwrap();
        assert_eq!(h.len(), 6);
        assert_eq!(h.coarsest().system.n_steps(), 16 / 16);
        assert_eq!(h.levels[4].system.n_steps(), 2);
        assert_eq!(h.levels[4].shape.len(), 64 / 4);
    }

    #[test]
    fn level_systems_equal_galerkin_products() {
        let (op, fine) = problem(2, 6, 8, 0.16);
        let moves = vec![Move::time(2), Move::space(), Move::time_space(2)];
        let h = build_hierarchy(&fine, op.shape, &Schedule::Moves(moves), &SolverConfig::new(2)).unwrap();
        for l in 0..h.len() - 1 {
            let pair = h.levels[l].to_next.as_ref().unwrap();
            let g = crate::intergrid::galerkin_coarse_structured(pair, &h.levels[l].system).unwrap();
            assert!(dense_max_abs_diff(&g.matrix.to_dense(), &h.levels[l + 1].system.to_dense()) < 1e-12);
        }
    }

    #[test]
    fn multilevel_converges_to_oracle() {
        let (op, fine) = problem(1, 32, 64, 0.64);
        let mut cfg = SolverConfig::new(1);
        cfg.inner = InnerBudget::Uniform(2);
        cfg.coarsest = CoarsestSolve::Decoupled(4);
        cfg.n_proc = 8;
        let h = build_hierarchy(&fine, op.shape, &Schedule::Moves(vec![Move::time(2); 3]), &cfg).unwrap();
        let (u, rep) = multilevel_solve(&h, &fine.rhs).unwrap();
        assert!(rep.converged);
        let oracle = sequential_solve(&fine.ops, fine.rhs.block(0).unwrap(), &Forcing::Zero).unwrap();
        assert!(relative_error(&u, &oracle) <= 1e-4);
        assert!(rep.ledger.elapsed_from_level(2) > 0);
    }

    #[test]
    fn indivisible_schedule_is_rejected() {
        let (op, fine) = problem(1, 8, 6, 0.64);
        let r = build_hierarchy(&fine, op.shape, &Schedule::Moves(vec![Move::time(4)]), &SolverConfig::new(1));
        assert!(matches!(r, Err(Error::Divisibility { .. })));
    }
}
