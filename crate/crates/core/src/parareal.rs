//! Parareal and its two-grid reformulation.
//!
//! The two-grid restriction uses blocks `Ψ ψ⁻¹` at coarse points. With these
//! blocks the two-grid iterands coincide with parareal; the printed
//! `Φ⁻¹ψ` does not reproduce them.

use crate::error::{ensure, Error, Result};
use crate::linalg::{axpy, BandedLu, CsrMatrix};
use crate::parcost::{CostLedger, CostModel, Phase};
use crate::theta::{
    assemble_fine_system, relative_residual, BlockBidiagonal, FineSystem, Forcing, StackedVector, StepOperators,
    ThetaSchemeConfig,
};
use faer::Mat;
use serde::Serialize;
use std::sync::Arc;

/// The θ-scheme on the coarse step `ΔT = ν Δt`.
#[derive(Debug, Clone)]
pub struct CoarsePropagator {
    pub ops: StepOperators,
    pub nu: usize,
}

impl CoarsePropagator {
    pub fn new(fine: &StepOperators, nu: usize) -> Result<Self> {
        ensure(nu >= 1, || "coarsening factor must be at least 1".into())?;
        if !fine.cfg.n_t.is_multiple_of(nu) {
            return Err(Error::Divisibility { what: "n_t", value: fine.cfg.n_t, divisor: nu });
        }
        let theta = fine.cfg.theta;
        let big_dt = nu as f64 * fine.cfg.delta_t;
        let cfg = ThetaSchemeConfig::new(theta, big_dt, fine.cfg.n_t / nu)?;
        let ops = StepOperators::from_weights(fine.spatial.clone(), theta * big_dt, (1.0 - theta) * big_dt, cfg)?;
        Ok(Self { ops, nu })
    }

    pub fn delta_t(&self) -> f64 {
        self.ops.cfg.delta_t
    }

    pub fn n_coarse(&self) -> usize {
        self.ops.cfg.n_t
    }

    /// Coarse source `Ḡ_k`, sampled at the fine step `νk`.
    pub fn forcing<'a>(&self, fine: &'a Forcing, k: usize) -> Option<&'a [f64]> {
        fine.get(self.nu * k)
    }

    /// `out = Ψ⁻¹(Φ u + ΔT Ḡ_k)`.
    pub fn step(&self, u: &[f64], g: Option<&[f64]>, out: &mut [f64]) {
        self.ops.step(u, g, out);
    }

    /// `out = Ψ⁻¹Φ u`.
    pub fn propagate(&self, u: &[f64], out: &mut [f64]) {
        self.ops.step(u, None, out);
    }

    /// Coarse all-at-once matrix with blocks `Ψ`, `-Φ`.
    pub fn matrix(&self) -> BlockBidiagonal {
        BlockBidiagonal::from_steps(&self.ops, self.n_coarse())
    }

    /// `f_H = [u_0; ΔT Ḡ_1; …]`.
    pub fn rhs(&self, u0: &[f64], fine: &Forcing) -> StackedVector {
        let mut f = StackedVector::zeros(self.ops.n(), self.n_coarse() + 1);
        f.set(0, u0.to_vec());
        for k in 1..=self.n_coarse() {
            if let Some(g) = self.forcing(fine, k) {
                f.set(k, g.iter().map(|v| self.delta_t() * v).collect());
            }
        }
        f
    }
}

/// The exact coarse map `U_k = Υ_ν U_{k-1} + g̃_ν`, built by composing fine steps.
#[derive(Debug, Clone)]
pub struct ExactCoarsePropagator<'a> {
    fine: &'a StepOperators,
    nu: usize,
}

impl<'a> ExactCoarsePropagator<'a> {
    pub fn new(fine: &'a StepOperators, nu: usize) -> Self {
        Self { fine, nu }
    }

    /// `Υ_ν u = (ψ⁻¹φ)^ν u`.
    pub fn upsilon(&self, u: &[f64]) -> Vec<f64> {
        self.compose(u, |_| None)
    }

    /// `g̃_ν` for subinterval `k` (1-based).
    pub fn accumulated_forcing(&self, k: usize, forcing: &Forcing) -> Vec<f64> {
        let zero = vec![0.0; self.fine.n()];
        self.compose(&zero, |j| forcing.get(self.nu * (k - 1) + j))
    }

    /// `Υ_ν u + g̃_ν`.
    pub fn apply(&self, u: &[f64], k: usize, forcing: &Forcing) -> Vec<f64> {
        let mut out = self.upsilon(u);
        axpy(1.0, &self.accumulated_forcing(k, forcing), &mut out);
        out
    }

    fn compose<'f>(&self, u: &[f64], g: impl Fn(usize) -> Option<&'f [f64]>) -> Vec<f64> {
        let mut cur = u.to_vec();
        let mut next = vec![0.0; u.len()];
        for j in 1..=self.nu {
            self.fine.step(&cur, g(j), &mut next);
            std::mem::swap(&mut cur, &mut next);
        }
        cur
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct IterationReport {
    pub iterations: usize,
    pub converged: bool,
    /// Relative residual of the iterand after each sweep or cycle; entry 0 is the initial guess.
    pub residual_history: Vec<f64>,
    #[serde(skip)]
    pub ledger: CostLedger,
    /// Full trajectories `u^0, u^1, …` when recording was requested.
    #[serde(skip)]
    pub iterands: Vec<Vec<f64>>,
}

fn step_cost(ops: &StepOperators, model: &CostModel) -> u64 {
    model.c_inv(ops.n(), ops.psi_lu.bandwidth()) + model.c_mv(ops.phi.nnz())
}

/// Options shared by the parareal and two-grid drivers.
#[derive(Debug, Clone)]
pub struct IterationControl {
    pub max_iterations: usize,
    pub tol: f64,
    pub n_proc: usize,
    pub model: CostModel,
    pub record: bool,
}

impl IterationControl {
    pub fn new(dim: usize) -> Self {
        Self { max_iterations: 100, tol: 1e-6, n_proc: 1, model: CostModel::for_dim(dim), record: false }
    }
}

/// Parareal: coarse seed sweep, then parallel fine sweeps and sequential corrections.
///
/// The correction at coarse point `k` is `U^ℓ_k = u^ℓ_{νk} + Ψ⁻¹Φ(U^ℓ_{k-1} - U^{ℓ-1}_{k-1})`,
/// where `u^ℓ_{νk}` is the end state of the current fine sweep on subinterval `k`.
pub fn parareal_solve(
    fine: &StepOperators,
    coarse: &CoarsePropagator,
    u0: &[f64],
    forcing: &Forcing,
    ctl: &IterationControl,
) -> Result<(Vec<f64>, IterationReport)> {
    let nu = coarse.nu;
    let n_coarse = coarse.n_coarse();
    ensure(nu * n_coarse == fine.cfg.n_t, || "coarse propagator does not match the fine grid".into())?;
    let n = fine.n();
    let sys = assemble_fine_system(fine, u0, forcing)?;
    let mut ledger = CostLedger::new(&ctl.model);
    let c_fine = step_cost(fine, &ctl.model);
    let c_coarse = step_cost(&coarse.ops, &ctl.model);

    let mut big_u = vec![u0.to_vec()];
    let mut tmp = vec![0.0; n];
    for k in 1..=n_coarse {
        coarse.step(&big_u[k - 1], coarse.forcing(forcing, k), &mut tmp);
        big_u.push(tmp.clone());
    }
    ledger.charge_serial(Phase::Sequential, 2, n_coarse as u64 * c_coarse);

    let mut traj = vec![0.0; sys.dim()];
    let write_coarse = |traj: &mut [f64], big_u: &[Vec<f64>]| {
        for (k, u) in big_u.iter().enumerate() {
            traj[nu * k * n..(nu * k + 1) * n].copy_from_slice(u);
        }
    };
    write_coarse(&mut traj, &big_u);
    let mut history = vec![relative_residual(&sys, &traj)?];
    let mut iterands = Vec::new();
    if ctl.record {
        iterands.push(traj.clone());
    }
    let mut converged = history[0] <= ctl.tol;
    let mut sweeps = 0;
    while !converged && sweeps < ctl.max_iterations {
        sweeps += 1;
        for k in 1..=n_coarse {
            let mut cur = big_u[k - 1].clone();
            for j in 1..=nu {
                let i = nu * (k - 1) + j;
                fine.step(&cur, forcing.get(i), &mut tmp);
                std::mem::swap(&mut cur, &mut tmp);
                traj[i * n..(i + 1) * n].copy_from_slice(&cur);
            }
        }
        ledger.charge_uniform(Phase::FineSweep, 1, n_coarse, nu as u64 * c_fine, ctl.n_proc);

        let mut next = vec![u0.to_vec()];
        let mut diff = vec![0.0; n];
        for k in 1..=n_coarse {
            for (d, (a, b)) in diff.iter_mut().zip(next[k - 1].iter().zip(&big_u[k - 1])) {
                *d = a - b;
            }
            coarse.propagate(&diff, &mut tmp);
            let end = nu * k;
            axpy(1.0, &traj[end * n..(end + 1) * n], &mut tmp);
            next.push(tmp.clone());
        }
        ledger.charge_serial(Phase::Sequential, 2, n_coarse as u64 * (c_coarse + 2 * ctl.model.c_vec(n)));
        big_u = next;
        write_coarse(&mut traj, &big_u);
        let r = relative_residual(&sys, &traj)?;
        history.push(r);
        if ctl.record {
            iterands.push(traj.clone());
        }
        converged = r <= ctl.tol;
    }
    let report = IterationReport { iterations: sweeps, converged, residual_history: history, ledger, iterands };
    Ok((traj, report))
}

/// Prolongation, restriction and smoother of the two-grid form of parareal.
#[derive(Debug, Clone)]
pub struct TwoGridComponents {
    pub nu: usize,
    pub n_coarse: usize,
    pub n: usize,
    /// Restriction block `Ψ ψ⁻¹` uses these two operators.
    coarse_psi: Arc<CsrMatrix>,
    fine_psi_lu: Arc<BandedLu>,
    /// `ℳ_J`: the fine matrix with the couplings into each subinterval removed.
    smoother: BlockBidiagonal,
}

impl TwoGridComponents {
    pub fn new(sys: &FineSystem, coarse: &CoarsePropagator) -> Result<Self> {
        let nu = coarse.nu;
        let n_coarse = coarse.n_coarse();
        ensure(nu * n_coarse == sys.n_t(), || "coarse propagator does not match the fine grid".into())?;
        let cut: Vec<usize> = (1..n_coarse).map(|k| nu * k + 1).collect();
        let smoother = sys.matrix.with_dropped(&cut)?;
        Ok(Self {
            nu,
            n_coarse,
            n: sys.n(),
            coarse_psi: coarse.ops.psi.clone(),
            fine_psi_lu: sys.ops.psi_lu.clone(),
            smoother,
        })
    }

    fn fine_dim(&self) -> usize {
        (self.nu * self.n_coarse + 1) * self.n
    }

    fn coarse_dim(&self) -> usize {
        (self.n_coarse + 1) * self.n
    }

    /// `x_h += 𝒫 d_H`.
    pub fn prolong_add(&self, d: &[f64], x: &mut [f64]) {
        let n = self.n;
        for k in 0..=self.n_coarse {
            let i = self.nu * k;
            axpy(1.0, &d[k * n..(k + 1) * n], &mut x[i * n..(i + 1) * n]);
        }
    }

    /// `ℛ r`: block 0 copied, block `νk` mapped by `Ψ ψ⁻¹`.
    pub fn restrict(&self, r: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut out = vec![0.0; self.coarse_dim()];
        out[..n].copy_from_slice(&r[..n]);
        let mut t = vec![0.0; n];
        for k in 1..=self.n_coarse {
            let i = self.nu * k;
            t.copy_from_slice(&r[i * n..(i + 1) * n]);
            self.fine_psi_lu.solve_in_place(&mut t);
            self.coarse_psi.mul_vec(&t, &mut out[k * n..(k + 1) * n]);
        }
        out
    }

    /// `ℐ_J ℳ_J⁻¹ r`.
    pub fn smooth(&self, r: &[f64]) -> Vec<f64> {
        let mut x = r.to_vec();
        self.smoother.forward_solve(&mut x);
        self.zero_coarse_points(&mut x);
        x
    }

    fn zero_coarse_points(&self, x: &mut [f64]) {
        let n = self.n;
        for k in 0..=self.n_coarse {
            let i = self.nu * k;
            x[i * n..(i + 1) * n].fill(0.0);
        }
    }

    fn columns(dim: usize, f: impl Fn(&[f64]) -> Vec<f64>, rows: usize) -> Mat<f64> {
        let mut m = Mat::<f64>::zeros(rows, dim);
        let mut e = vec![0.0; dim];
        for j in 0..dim {
            e[j] = 1.0;
            for (i, v) in f(&e).into_iter().enumerate() {
                m[(i, j)] = v;
            }
            e[j] = 0.0;
        }
        m
    }

    pub fn dense_p(&self) -> Mat<f64> {
        Self::columns(
            self.coarse_dim(),
            |d| {
                let mut x = vec![0.0; self.fine_dim()];
                self.prolong_add(d, &mut x);
                x
            },
            self.fine_dim(),
        )
    }

    pub fn dense_r(&self) -> Mat<f64> {
        Self::columns(self.fine_dim(), |r| self.restrict(r), self.coarse_dim())
    }

    pub fn dense_smoother(&self) -> Mat<f64> {
        self.smoother.to_dense()
    }

    pub fn dense_identity_mask(&self) -> Mat<f64> {
        Self::columns(
            self.fine_dim(),
            |x| {
                let mut y = x.to_vec();
                self.zero_coarse_points(&mut y);
                y
            },
            self.fine_dim(),
        )
    }
}

fn residual(a: &BlockBidiagonal, f: &[f64], u: &[f64]) -> Vec<f64> {
    let mut r = vec![0.0; u.len()];
    a.matvec(u, &mut r);
    for (ri, fi) in r.iter_mut().zip(f) {
        *ri = fi - *ri;
    }
    r
}

fn coarse_solve(coarse_mat: &BlockBidiagonal, mut r: Vec<f64>) -> Result<Vec<f64>> {
    coarse_mat.factorize()?;
    coarse_mat.forward_solve(&mut r);
    Ok(r)
}

/// Two-grid iteration: coarse initial guess, then smoothing, restriction,
/// coarse solve and correction per cycle.
pub fn two_grid_solve(
    sys: &FineSystem,
    comps: &TwoGridComponents,
    coarse_mat: &BlockBidiagonal,
    coarse_rhs: &StackedVector,
    ctl: &IterationControl,
) -> Result<(Vec<f64>, IterationReport)> {
    ensure(coarse_rhs.len() == comps.coarse_dim(), || "coarse right-hand side has the wrong size".into())?;
    let f = sys.rhs.to_dense();
    let mut u = vec![0.0; sys.dim()];
    let uh = coarse_solve(coarse_mat, coarse_rhs.to_dense())?;
    comps.prolong_add(&uh, &mut u);
    let mut history = vec![relative_residual(sys, &u)?];
    let mut iterands = Vec::new();
    if ctl.record {
        iterands.push(u.clone());
    }
    let ledger = CostLedger::new(&ctl.model);
    let mut converged = history[0] <= ctl.tol;
    let mut cycles = 0;
    while !converged && cycles < ctl.max_iterations {
        cycles += 1;
        let s = comps.smooth(&residual(&sys.matrix, &f, &u));
        axpy(1.0, &s, &mut u);
        let r = comps.restrict(&residual(&sys.matrix, &f, &u));
        let d = coarse_solve(coarse_mat, r)?;
        comps.prolong_add(&d, &mut u);
        let res = relative_residual(sys, &u)?;
        history.push(res);
        if ctl.record {
            iterands.push(u.clone());
        }
        converged = res <= ctl.tol;
    }
    Ok((u, IterationReport { iterations: cycles, converged, residual_history: history, ledger, iterands }))
}

/// `𝒦_MG e = (I - 𝒫𝒜_H⁻¹ℛ𝒜_h)(I - ℐ_Jℳ_J⁻¹𝒜_h) e`, matrix-free.
pub fn apply_error_operator(
    comps: &TwoGridComponents,
    sys: &FineSystem,
    coarse_mat: &BlockBidiagonal,
    e: &[f64],
) -> Result<Vec<f64>> {
    ensure(e.len() == sys.dim(), || "error vector has the wrong size".into())?;
    let mut ae = vec![0.0; e.len()];
    sys.matrix.matvec(e, &mut ae);
    let mut s = e.to_vec();
    axpy(-1.0, &comps.smooth(&ae), &mut s);
    sys.matrix.matvec(&s, &mut ae);
    let d = coarse_solve(coarse_mat, comps.restrict(&ae))?;
    let mut pd = vec![0.0; e.len()];
    comps.prolong_add(&d, &mut pd);
    axpy(-1.0, &pd, &mut s);
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{dense_max_abs_diff, max_abs_diff, norm2};
    use crate::spatial::{build_laplacian, InitialCondition};
    use crate::theta::{build_step_operators, sequential_solve};
    use faer::linalg::solvers::Solve;

    fn setup(nx: usize, n_t: usize, nu: usize, forced: bool) -> (StepOperators, CoarsePropagator, Vec<f64>, Forcing) {
        let op = build_laplacian(1, nx, 1, 1.0, 1.0).unwrap();
        let dt = op.delta_t_for_courant(0.64).unwrap();
        let ops = build_step_operators(&op, ThetaSchemeConfig::new(0.5, dt, n_t).unwrap()).unwrap();
        let coarse = CoarsePropagator::new(&ops, nu).unwrap();
        let u0 = InitialCondition::Random { seed: 3 }.sample(&op);
        let forcing = if forced {
            Forcing::Steps((1..=n_t).map(|k| (0..nx).map(|i| ((i * k) as f64).sin()).collect()).collect())
        } else {
            Forcing::Zero
        };
        (ops, coarse, u0, forcing)
    }

    fn ctl(max: usize, tol: f64) -> IterationControl {
        let mut c = IterationControl::new(1);
        c.max_iterations = max;
        c.tol = tol;
        c.record = true;
        c
    }

    #[test]
    fn parareal_is_exact_on_first_subintervals() {
        let (ops, coarse, u0, forcing) = setup(15, 16, 4, true);
        let oracle = sequential_solve(&ops, &u0, &forcing).unwrap();
        let (_, rep) = parareal_solve(&ops, &coarse, &u0, &forcing, &ctl(4, 0.0)).unwrap();
        let n = 15;
        for (l, it) in rep.iterands.iter().enumerate().skip(1) {
            let end = (4 * l + 1) * n;
            assert!(max_abs_diff(&it[..end], &oracle[..end]) <= 1e-12, "sweep {l}");
        }
        assert!(max_abs_diff(rep.iterands.last().unwrap(), &oracle) <= 1e-10);
    }

    #[test]
    fn parareal_terminates_after_n_coarse_sweeps() {
        for (n_t, nu) in [(8, 2), (8, 4), (16, 4), (16, 8), (12, 3)] {
            let (ops, coarse, u0, forcing) = setup(7, n_t, nu, false);
            let (_, rep) = parareal_solve(&ops, &coarse, &u0, &forcing, &ctl(n_t / nu, 0.0)).unwrap();
            assert!(*rep.residual_history.last().unwrap() <= 1e-10, "{n_t} {nu}");
        }
    }

    #[test]
    fn parareal_with_fine_coarse_propagator_converges_at_once() {
        let (ops, coarse, u0, forcing) = setup(9, 8, 1, true);
        let (u, rep) = parareal_solve(&ops, &coarse, &u0, &forcing, &ctl(5, 1e-12)).unwrap();
        assert!(rep.iterations <= 1);
        assert!(max_abs_diff(&u, &sequential_solve(&ops, &u0, &forcing).unwrap()) < 1e-12);
    }

    #[test]
    fn two_grid_reproduces_parareal_iterands() {
        let (ops, coarse, u0, forcing) = setup(15, 16, 4, true);
        let sys = assemble_fine_system(&ops, &u0, &forcing).unwrap();
        let comps = TwoGridComponents::new(&sys, &coarse).unwrap();
        let (_, pr) = parareal_solve(&ops, &coarse, &u0, &forcing, &ctl(4, 0.0)).unwrap();
        let (_, tg) = two_grid_solve(&sys, &comps, &coarse.matrix(), &coarse.rhs(&u0, &forcing), &ctl(4, 0.0)).unwrap();
        assert_eq!(pr.iterands.len(), tg.iterands.len());
        for (a, b) in pr.iterands.iter().zip(&tg.iterands) {
            assert!(max_abs_diff(a, b) <= 1e-10);
        }
    }

    #[test]
    fn error_recurrence_matches_dense_operator() {
        let (ops, coarse, u0, forcing) = setup(4, 8, 2, false);
        let sys = assemble_fine_system(&ops, &u0, &forcing).unwrap();
        let comps = TwoGridComponents::new(&sys, &coarse).unwrap();
        let am = coarse.matrix();
        let (_, tg) = two_grid_solve(&sys, &comps, &am, &coarse.rhs(&u0, &forcing), &ctl(3, 0.0)).unwrap();
        let oracle = sequential_solve(&ops, &u0, &forcing).unwrap();
        let errs: Vec<Vec<f64>> =
            tg.iterands.iter().map(|u| u.iter().zip(&oracle).map(|(a, b)| a - b).collect()).collect();

        let a = sys.matrix.to_dense();
        let dim = a.nrows();
        let id = Mat::<f64>::identity(dim, dim);
        let ah = am.to_dense().partial_piv_lu();
        let coarse_part = &id - comps.dense_p() * ah.solve(comps.dense_r() * &a);
        let smooth_part = &id - comps.dense_identity_mask() * comps.dense_smoother().partial_piv_lu().solve(&a);
        let k_mg = coarse_part * smooth_part;
        for w in errs.windows(2) {
            let mf = apply_error_operator(&comps, &sys, &am, &w[0]).unwrap();
            let dense: Vec<f64> = (0..dim).map(|i| (0..dim).map(|j| k_mg[(i, j)] * w[0][j]).sum()).collect();
            let scale = norm2(&w[0]);
            let diff: Vec<f64> = mf.iter().zip(&w[1]).map(|(x, y)| x - y).collect();
            assert!(norm2(&diff) <= 1e-10 * scale);
            assert!(max_abs_diff(&mf, &dense) <= 1e-13 * scale.max(1.0));
        }
    }

    #[test]
    fn dense_and_matrix_free_error_operator_agree() {
        let (ops, coarse, u0, forcing) = setup(2, 4, 2, false);
        let sys = assemble_fine_system(&ops, &u0, &forcing).unwrap();
        let comps = TwoGridComponents::new(&sys, &coarse).unwrap();
        let am = coarse.matrix();
        let a = sys.matrix.to_dense();
        let dim = a.nrows();
        let id = Mat::<f64>::identity(dim, dim);
        let ah = am.to_dense().partial_piv_lu();
        let k_mg = (&id - comps.dense_p() * ah.solve(comps.dense_r() * &a))
            * (&id - comps.dense_identity_mask() * comps.dense_smoother().partial_piv_lu().solve(&a));
        let mut e = vec![0.0; dim];
        for j in 0..dim {
            e[j] = 1.0;
            let col = apply_error_operator(&comps, &sys, &am, &e).unwrap();
            e[j] = 0.0;
            for i in 0..dim {
                assert!((col[i] - k_mg[(i, j)]).abs() <= 1e-13);
            }
        }
        assert!(apply_error_operator(&comps, &sys, &am, &vec![0.0; dim]).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_mask_is_idempotent() {
        let (ops, coarse, u0, forcing) = setup(3, 6, 3, false);
        let sys = assemble_fine_system(&ops, &u0, &forcing).unwrap();
        let comps = TwoGridComponents::new(&sys, &coarse).unwrap();
        let i = comps.dense_identity_mask();
        assert_eq!(dense_max_abs_diff(&(&i * &i), &i), 0.0);
        let p = comps.dense_p();
        let nonzero_cols = (0..p.ncols()).filter(|&j| (0..p.nrows()).any(|r| p[(r, j)] != 0.0)).count();
        assert_eq!(nonzero_cols, comps.coarse_dim());
    }

    #[test]
    fn two_grid_with_exact_coarse_matrix_converges_in_one_cycle() {
        let (ops, coarse, u0, forcing) = setup(6, 8, 1, true);
        let sys = assemble_fine_system(&ops, &u0, &forcing).unwrap();
        let comps = TwoGridComponents::new(&sys, &coarse).unwrap();
        let (_, rep) = two_grid_solve(&sys, &comps, &coarse.matrix(), &coarse.rhs(&u0, &forcing), &ctl(5, 1e-12)).unwrap();
        assert!(rep.iterations <= 1);
    }

    #[test]
    fn exact_coarse_propagator_composes_fine_steps() {
        let (ops, _, u0, forcing) = setup(8, 12, 3, true);
        let exact = ExactCoarsePropagator::new(&ops, 3);
        let oracle = sequential_solve(&ops, &u0, &forcing).unwrap();
        let n = 8;
        let mut u = u0.clone();
        for k in 1..=4 {
            u = exact.apply(&u, k, &forcing);
            assert!(max_abs_diff(&u, &oracle[3 * k * n..(3 * k + 1) * n]) <= 1e-13);
        }
    }

    #[test]
    fn parareal_ledger_attributes_fine_sweeps_to_processors() {
        let (ops, coarse, u0, forcing) = setup(7, 16, 4, false);
        let mut c = ctl(2, 0.0);
        c.n_proc = 4;
        let (_, rep) = parareal_solve(&ops, &coarse, &u0, &forcing, &c).unwrap();
        let fine = rep.ledger.phase_work(Phase::FineSweep);
        assert_eq!(rep.ledger.phase_elapsed(Phase::FineSweep) * 4, fine);
    }

    #[test]
    fn indivisible_coarse_grid_is_rejected() {
        let (ops, _, _, _) = setup(5, 10, 1, false);
        assert!(matches!(CoarsePropagator::new(&ops, 4), Err(Error::Divisibility { .. })));
    }
}
