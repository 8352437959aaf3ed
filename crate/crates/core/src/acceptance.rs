//! The acceptance suite: one function per criterion, each returning a
//! pass/fail line with the measured numbers. Shared by `pint-mk check`
//! and the `acceptance` test target.

use crate::bench::{self, reference};
use crate::config::{ExperimentConfig, Method};
use crate::error::Result;
use crate::intergrid::{
    build_mgrit_pair, build_t_pair, closed_form_t_coarse, galerkin_coarse, Agglomeration, CoarseningKind,
};
use crate::linalg::{dense_max_abs_diff, max_abs_diff};
use crate::mk::{build_hierarchy, CoarsestSolve, Move, Schedule, SolverConfig};
use crate::parareal::{parareal_solve, two_grid_solve, CoarsePropagator, IterationControl, TwoGridComponents};
use crate::parcost::{work_multilevel, work_two_level, Machine, Parallelism, Phase};
use crate::spatial::{build_laplacian, GridShape, InitialCondition};
use crate::spectral::{blockwise_spectrum, full_spectrum, multiset_distance, Eigenvalue, SpectrumMeta};
use crate::theta::{
    assemble_fine_system, build_step_operators, partition_system, sequential_solve, FineSystem, Forcing,
    StepOperators, ThetaSchemeConfig,
};
use faer::linalg::solvers::Solve;
use faer::Mat;
use std::fmt;

pub const TABLE2_ITERATION_TOL: i64 = 1;
pub const TABLE1_KAPPA_REL_TOL: f64 = 0.05;
pub const TABLE1_COURANT_SPREAD: f64 = 0.02;
pub const RESIDUAL_TOL: f64 = 1e-6;
pub const ORACLE_TOL: f64 = 1e-4;
pub const ITERAND_TOL: f64 = 1e-10;
pub const IDENTITY_TOL: f64 = 1e-12;
pub const SPECTRAL_TOL: f64 = 1e-8;
pub const TABLE3_ITERATION_TOL: i64 = 1;
pub const CGS_FRACTION_RANGE: (f64, f64) = (0.85, 0.98);
pub const COURANT_ITERATION_SPREAD: usize = 2;
pub const FRACTION_REL_TOL: f64 = 0.15;

#[derive(Debug, Clone)]
pub struct Criterion {
    pub id: u8,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "[{tag}] {}. {}: {}", self.id, self.name, self.detail)
    }
}

fn criterion(id: u8, name: &'static str, passed: bool, detail: String) -> Criterion {
    Criterion { id, name, passed, detail }
}

fn quiet() -> ExperimentConfig {
    ExperimentConfig { out: std::env::temp_dir().join("pint-mk-acceptance"), ..Default::default() }
}

fn fine_1d(nx: usize, theta: f64, courant: f64, n_t: usize, forced: bool) -> Result<(GridShape, StepOperators, FineSystem)> {
    let op = build_laplacian(1, nx, 1, 1.0, 1.0)?;
    let dt = op.delta_t_for_courant(courant)?;
    let ops = build_step_operators(&op, ThetaSchemeConfig::new(theta, dt, n_t)?)?;
    let u0 = InitialCondition::Random { seed: 0 }.sample(&op);
    let forcing = if forced {
        Forcing::Steps((1..=n_t).map(|k| (0..nx).map(|i| ((i * k) as f64 * 0.37).sin()).collect()).collect())
    } else {
        Forcing::Zero
    };
    let sys = assemble_fine_system(&ops, &u0, &forcing)?;
    Ok((op.shape, ops, sys))
}

/// Two-level iteration counts of the 36 Table 2 configurations.
pub fn table2_iterations() -> Result<Criterion> {
    table2_iterations_on(None)
}

pub fn table2_iterations_on(grids: Option<&[usize]>) -> Result<Criterion> {
    let rows = bench::table2(&quiet(), grids)?;
    let hits = rows.iter().filter(|r| r.pass).count();
    let mut per_grid = String::new();
    for g in rows.chunks(9) {
        let counts: Vec<String> = g.iter().map(|r| r.iterations.to_string()).collect();
        let reference: Vec<String> = g.iter().map(|r| r.reference.to_string()).collect();
        per_grid.push_str(&format!(
            "; {}/{}: {}/9 [{}] vs [{}]",
            g[0].nx,
            g[0].nt,
            g.iter().filter(|r| r.pass).count(),
            counts.join(" "),
            reference.join(" ")
        ));
    }
    Ok(criterion(
        1,
        "Table 2 iteration counts",
        hits == rows.len(),
        format!("{hits}/{} within ±{TABLE2_ITERATION_TOL}{per_grid}", rows.len()),
    ))
}

/// Table 1 condition numbers for T-coarsening and the three invariants.
pub fn table1_condition_numbers() -> Result<Criterion> {
    let rows = bench::table1(&quiet(), &[CoarseningKind::T], None)?;
    let data = reference::tables().table1;
    let values_ok = rows.iter().all(|r| r.pass);
    let worst = rows.iter().map(|r| r.rel_diff.abs()).fold(0.0, f64::max);
    let kappa = |c: f64, nu: usize| rows.iter().find(|r| r.courant == c && r.nu == nu).map(|r| r.kappa).unwrap();
    let cs: Vec<f64> = data.rows.iter().filter(|r| r.family == "T").map(|r| r.courant).collect();
    let mut spread: f64 = 0.0;
    for &nu in &data.nu {
        let ks: Vec<f64> = cs.iter().map(|&c| kappa(c, nu)).collect();
        let (lo, hi) = ks.iter().fold((f64::INFINITY, 0.0f64), |(l, h), &k| (l.min(k), h.max(k)));
        spread = spread.max(hi / lo - 1.0);
    }
    let monotone = cs.iter().all(|&c| data.nu.windows(2).all(|w| kappa(c, w[0]) < kappa(c, w[1])));
    let improves = cs.iter().all(|&c| data.nu.iter().all(|&nu| kappa(c, nu) < kappa(c, 0)));
    let fmt_row = |c: f64| {
        let ks: Vec<String> = [0].iter().chain(&data.nu).map(|&nu| format!("{:.2}", kappa(c, nu))).collect();
        format!("C={c} n_t={}: {}", bench::table1_steps(c), ks.join("/"))
    };
    let listing: Vec<String> = cs.iter().map(|&c| fmt_row(c)).collect();
    Ok(criterion(
        2,
        "Table 1 condition numbers",
        values_ok && spread <= TABLE1_COURANT_SPREAD && monotone && improves,
        format!(
            "worst rel diff {worst:.4} (tol {TABLE1_KAPPA_REL_TOL}); C-spread {spread:.4} (tol {TABLE1_COURANT_SPREAD}); \
             monotone in nu {monotone}; below kappa(A) {improves}; kappa(A)/nu=2/4/8: {}",
            listing.join("; ")
        ),
    ))
}

/// Every iterative method converges to the sequential solution.
pub fn oracle_equivalence() -> Result<Criterion> {
    let mut runs: Vec<ExperimentConfig> = Vec::new();
    for kind in ["T", "TS", "MGRIT"] {
        for nu in [2, 4, 8] {
            let mut c = quiet();
            c.kind = kind.into();
            c.nu = nu;
            runs.push(c);
        }
    }
    let mut c = quiet();
    c.method = Method::Parareal;
    c.nu = 4;
    runs.push(c);
    let mut c = quiet();
    c.method = Method::Multilevel;
    c.levels = 5;
    runs.push(c);
    let mut c = quiet();
    c.apply_overrides(&["--dim=2", "--nx=16", "--ny=16", "--n_t=64", "--courant=0.16"])?;
    c.method = Method::Multilevel;
    c.levels = 5;
    c.n_cgs = 4;
    c.n_proc = 8;
    runs.push(c);

    let (mut ok, mut worst_res, mut worst_err) = (true, 0.0f64, 0.0f64);
    for c in &runs {
        let s = bench::run(c)?;
        let err = s.error_vs_oracle.unwrap_or(f64::INFINITY);
        ok &= s.converged && s.final_residual <= RESIDUAL_TOL && err <= ORACLE_TOL;
        worst_res = worst_res.max(s.final_residual);
        worst_err = worst_err.max(err);
    }
    Ok(criterion(
        3,
        "Oracle equivalence",
        ok,
        format!(
            "{} runs; worst residual {worst_res:.2e} (tol {RESIDUAL_TOL:.0e}), worst error {worst_err:.2e} (tol {ORACLE_TOL:.0e})",
            runs.len()
        ),
    ))
}

/// Parareal and its two-grid form produce the same iterands; parareal is exact on the first ℓ subintervals.
pub fn parareal_two_grid_equality() -> Result<Criterion> {
    let (nx, n_t, nu) = (15, 16, 4);
    let (_, ops, sys) = fine_1d(nx, 0.5, 0.64, n_t, true)?;
    let forcing = Forcing::Steps((1..=n_t).map(|k| sys.rhs.block(k).unwrap().iter().map(|v| v / ops.cfg.delta_t).collect()).collect());
    let u0 = sys.rhs.block(0).unwrap().to_vec();
    let coarse = CoarsePropagator::new(&ops, nu)?;
    let mut ctl = IterationControl::new(1);
    ctl.max_iterations = n_t / nu;
    ctl.tol = 0.0;
    ctl.record = true;
    let (_, pr) = parareal_solve(&ops, &coarse, &u0, &forcing, &ctl)?;
    let comps = TwoGridComponents::new(&sys, &coarse)?;
    let (_, tg) = two_grid_solve(&sys, &comps, &coarse.matrix(), &coarse.rhs(&u0, &forcing), &ctl)?;
    let oracle = sequential_solve(&ops, &u0, &forcing)?;
    let same_len = pr.iterands.len() == tg.iterands.len() && pr.iterands.len() == n_t / nu + 1;
    let iterand_gap = pr.iterands.iter().zip(&tg.iterands).map(|(a, b)| max_abs_diff(a, b)).fold(0.0, f64::max);
    let exact_gap = pr
        .iterands
        .iter()
        .enumerate()
        .skip(1)
        .map(|(l, it)| {
            let end = (nu * l + 1) * nx;
            max_abs_diff(&it[..end], &oracle[..end])
        })
        .fold(0.0, f64::max);
    Ok(criterion(
        4,
        "Parareal/two-grid iterand equality",
        same_len && iterand_gap <= ITERAND_TOL && exact_gap <= ITERAND_TOL,
        format!(
            "{} sweeps; max iterand gap {iterand_gap:.2e}, max gap to oracle on finished subintervals {exact_gap:.2e} (tol {ITERAND_TOL:.0e})",
            pr.iterands.len() - 1
        ),
    ))
}

/// Galerkin/closed-form, MGRIT/Schur, TS biorthogonality and forward substitution.
pub fn algebraic_identities() -> Result<Criterion> {
    let mut closed: f64 = 0.0;
    for theta in [0.0, 0.25, 0.5, 1.0] {
        for nu in [2, 3, 4] {
            let (_, ops, sys) = fine_1d(7, theta, 0.64, 3 * nu, false)?;
            let part = partition_system(&sys.matrix, nu)?;
            let g = galerkin_coarse(&build_t_pair(7, nu, 3)?, &part)?;
            let cf = closed_form_t_coarse(&ops, nu, 3)?;
            closed = closed.max(dense_max_abs_diff(&g.full, &cf.matrix.to_dense()));
        }
    }

    let (nx, n_t, nu) = (5, 6, 3);
    let (_, _, sys) = fine_1d(nx, 0.5, 0.32, n_t, false)?;
    let part = partition_system(&sys.matrix, nu)?;
    let c = galerkin_coarse(&build_mgrit_pair(&part)?, &part)?;
    let ad = sys.matrix.to_dense();
    let idx = |keep: bool| -> Vec<usize> {
        (0..=n_t).filter(|t| (t % nu == 0) == keep).flat_map(|t| t * nx..(t + 1) * nx).collect()
    };
    let (ci, fi) = (idx(true), idx(false));
    let sel = |r: &[usize], c: &[usize]| Mat::<f64>::from_fn(r.len(), c.len(), |i, j| ad[(r[i], c[j])]);
    let schur = sel(&ci, &ci) - sel(&ci, &fi) * sel(&fi, &fi).partial_piv_lu().solve(sel(&fi, &ci));
    let mgrit = dense_max_abs_diff(&schur, &c.full);

    let mut biorth: f64 = 0.0;
    for shape in [GridShape::new(1, 15, 1)?, GridShape::new(1, 16, 1)?, GridShape::new(2, 7, 6)?] {
        let agg = Agglomeration::standard(shape);
        let g = agg.y_matrix().transpose().matmul(&agg.z_matrix())?.to_dense();
        biorth = biorth.max(dense_max_abs_diff(&g, &Mat::<f64>::identity(agg.m(), agg.m())));
    }

    let (_, ops, sys) = fine_1d(15, 0.5, 0.64, 16, true)?;
    let mut x = sys.rhs.to_dense();
    sys.matrix.forward_solve(&mut x);
    let forcing = Forcing::Steps((1..=16).map(|k| sys.rhs.block(k).unwrap().iter().map(|v| v / ops.cfg.delta_t).collect()).collect());
    let seq = sequential_solve(&ops, sys.rhs.block(0).unwrap(), &forcing)?;
    let fwd = max_abs_diff(&x, &seq);

    let worst = closed.max(mgrit).max(biorth).max(fwd);
    Ok(criterion(
        5,
        "Algebraic identities",
        worst <= IDENTITY_TOL,
        format!(
            "T Galerkin vs closed form {closed:.1e}; MGRIT Galerkin vs Schur {mgrit:.1e}; \
             TS spatial Y^T Z - I {biorth:.1e}; forward substitution vs theta-scheme {fwd:.1e} (tol {IDENTITY_TOL:.0e})"
        ),
    ))
}

/// Blockwise vs full spectrum, decoupled vs exact coarse spectrum and the cluster at μ.
pub fn spectral_equalities() -> Result<Criterion> {
    let (nx, n_t, nu) = (7, 8, 2);
    let (shape, _, sys) = fine_1d(nx, 0.5, 0.32, n_t, false)?;
    let mut cfg = SolverConfig::new(1);
    let schedule = Schedule::Moves(vec![Move::time(nu)]);
    let exact = build_hierarchy(&sys, shape, &schedule, &cfg)?;
    cfg.coarsest = CoarsestSolve::Decoupled(2);
    let decoupled = build_hierarchy(&sys, shape, &schedule, &cfg)?;

    let dim = sys.dim();
    let full = full_spectrum(dim, |v| exact.apply_aq(0, v), SpectrumMeta::default(), false)?;
    let tilde = full_spectrum(dim, |v| decoupled.apply_aq(0, v), SpectrumMeta::default(), false)?;
    let part = partition_system(&sys.matrix, nu)?;
    let block = blockwise_spectrum(&part, exact.levels[0].to_next.as_ref().unwrap(), &exact.levels[1].system, cfg.mu)?;

    // tolerance scaled by the infinity norm of 𝒜_h𝒬_h
    let dense = sys.matrix.to_dense() * exact.dense_q(0);
    let norm = (0..dim).map(|i| (0..dim).map(|j| dense[(i, j)].abs()).sum::<f64>()).fold(0.0, f64::max);
    let tol = SPECTRAL_TOL * norm;
    let d_block = multiset_distance(&block.eigenvalues, &full.eigenvalues).unwrap_or(f64::INFINITY);
    let d_tilde = multiset_distance(&tilde.eigenvalues, &full.eigenvalues).unwrap_or(f64::INFINITY);
    let cluster = full.count_near(Eigenvalue { re: cfg.mu, im: 0.0 }, SPECTRAL_TOL);
    Ok(criterion(
        6,
        "Spectral equalities",
        d_block <= tol && d_tilde <= tol && cluster >= nx,
        format!(
            "n_x={nx} n_t={n_t} nu={nu}: blockwise vs full {d_block:.1e}, decoupled vs exact {d_tilde:.1e} (tol {tol:.1e}); \
             {cluster} eigenvalues within {SPECTRAL_TOL:.0e} of mu (need {nx})"
        ),
    ))
}

/// Table 3 iterations and the cost-model properties for 7 to 11 levels.
pub fn table3_multilevel() -> Result<Criterion> {
    table3_multilevel_on(&[7, 8, 9, 10, 11])
}

pub fn table3_multilevel_on(levels: &[usize]) -> Result<Criterion> {
    let rows = bench::table3(&quiet(), levels, &[32])?;
    let (lo, hi) = CGS_FRACTION_RANGE;
    let mut ok = true;
    let mut parts = Vec::new();
    for r in &rows {
        let iter_ok = r.reference_iterations.is_some_and(|p| (r.iterations as i64 - p as i64).abs() <= TABLE3_ITERATION_TOL);
        let err_ok = r.final_residual <= RESIDUAL_TOL && r.error_vs_oracle.is_none_or(|e| e <= ORACLE_TOL);
        ok &= iter_ok && err_ok && r.relative_total < 1.0 && (lo..=hi).contains(&r.cgs_fraction);
        parts.push(format!(
            "L={} {}: {} it (reference {}), rel {:.3}, cgs {:.3}",
            r.levels,
            r.coarsest,
            r.iterations,
            r.reference_iterations.map_or("-".into(), |p| p.to_string()),
            r.relative_total,
            r.cgs_fraction
        ));
    }
    let non_increasing = rows.windows(2).all(|w| w[1].relative_total <= w[0].relative_total);
    Ok(criterion(
        7,
        "Table 3 multilevel runs",
        ok && non_increasing,
        format!(
            "{}; relative_total non-increasing {non_increasing}; cgs range [{lo}, {hi}], iterations ±{TABLE3_ITERATION_TOL}",
            parts.join("; ")
        ),
    ))
}

/// T-coarsening iteration counts barely move with the Courant number.
pub fn courant_independence() -> Result<Criterion> {
    let courants = [0.16, 0.32, 0.64];
    let mut ok = true;
    let mut parts = Vec::new();
    for nu in [2, 4, 8] {
        let mut base = quiet();
        base.nu = nu;
        base.oracle = false;
        let rows = bench::sweep(&base, bench::SweepAxis::Courant, &courants)?;
        let its: Vec<usize> = rows.iter().map(|r| r.iterations).collect();
        let spread = its.iter().max().unwrap() - its.iter().min().unwrap();
        ok &= spread <= COURANT_ITERATION_SPREAD && rows.iter().all(|r| r.converged);
        parts.push(format!("nu={nu}: {its:?}"));
    }
    Ok(criterion(
        8,
        "Courant independence",
        ok,
        format!("n_x=128 n_t=128, C={courants:?}: {} (max spread {COURANT_ITERATION_SPREAD})", parts.join(", ")),
    ))
}

/// Closed-form work estimates are consistent with each other and with the ledger.
pub fn cost_formula_consistency() -> Result<Criterion> {
    let model = crate::parcost::CostModel::for_dim(2);
    let mut exact = true;
    for (it, nu, nt, nx, p, q) in [(9, 2, 2048, 192, 32, 16), (5, 4, 256, 32, 8, 8), (1, 1, 1, 1, 1, 1), (17, 8, 512, 64, 64, 3)] {
        let m = Machine { n_proc: p, n_cgs: q };
        let two = work_two_level(it, nu, nt, nx, nx, m, &model, Parallelism::Full)?;
        let multi = work_multilevel(&[it], 2, nu, nt, nx, nx, m, &model)?;
        exact &= two == multi;
    }

    let mut ok = exact;
    let mut parts = Vec::new();
    for nu in [2, 4, 8] {
        let mut c = quiet();
        c.apply_overrides(&["--dim=2", "--nx=32", "--ny=32", "--n_t=256", "--courant=0.16", "--kind=T"])?;
        c.nu = nu;
        c.n_proc = 32;
        c.n_cgs = 32;
        c.oracle = false;
        let s = bench::run(&c)?;
        let m = Machine { n_proc: c.n_proc, n_cgs: c.n_cgs };
        let formula = work_two_level(s.iterations, nu, c.n_t, c.nx, c.ny, m, &c.cost_model()?, Parallelism::Full)?;
        // the formula models matvec-type work and coarse solves only, so the
        // ledger fraction is taken over the same phases
        let ledger = &s.ledger;
        let coarse = ledger.phase_elapsed(Phase::CoarseSolve) as f64;
        let modeled = coarse
            + [Phase::Matvec, Phase::Restriction, Phase::Interpolation]
                .iter()
                .map(|&p| ledger.phase_elapsed(p) as f64)
                .sum::<f64>();
        let fraction = coarse / modeled;
        let rel = (fraction - formula.coarse_fraction()).abs() / formula.coarse_fraction();
        ok &= rel <= FRACTION_REL_TOL;
        parts.push(format!(
            "nu={nu} ({} it): ledger {fraction:.3} vs formula {:.3} ({:.1}%, {:.3} of all elapsed)",
            s.iterations,
            formula.coarse_fraction(),
            100.0 * rel,
            coarse / ledger.elapsed() as f64
        ));
    }
    Ok(criterion(
        9,
        "Cost-formula consistency",
        ok,
        format!("L=2 multilevel == two-level: {exact}; coarse-solve fraction {} (tol {:.0}%)", parts.join(", "), 100.0 * FRACTION_REL_TOL),
    ))
}

pub type CriterionFn = fn() -> Result<Criterion>;

/// Every criterion with its number, in order.
pub fn criteria() -> Vec<(u8, CriterionFn)> {
    vec![
        (1, table2_iterations),
        (2, table1_condition_numbers),
        (3, oracle_equivalence),
        (4, parareal_two_grid_equality),
        (5, algebraic_identities),
        (6, spectral_equalities),
        (7, table3_multilevel),
        (8, courant_independence),
        (9, cost_formula_consistency),
    ]
}
