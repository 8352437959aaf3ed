//! θ-scheme step operators, the sequential oracle, and the all-at-once
//! block lower-bidiagonal system.

use crate::error::{ensure, ensure_len, Error, Result};
use crate::exec::Executor;
use crate::linalg::{axpy, norm2, place_block, BandedLu, CsrMatrix};
use crate::spatial::SpatialOperator;
use faer::Mat;
use std::ops::Range;
use std::sync::{Arc, OnceLock};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThetaSchemeConfig {
    pub theta: f64,
    pub delta_t: f64,
    pub n_t: usize,
}

impl ThetaSchemeConfig {
    pub fn new(theta: f64, delta_t: f64, n_t: usize) -> Result<Self> {
        ensure((0.0..=1.0).contains(&theta), || format!("theta must lie in [0,1], got {theta}"))?;
        ensure(delta_t > 0.0 && delta_t.is_finite(), || format!("delta_t must be positive, got {delta_t}"))?;
        ensure(n_t >= 1, || "n_t must be at least 1".into())?;
        Ok(Self { theta, delta_t, n_t })
    }

    pub fn final_time(&self) -> f64 {
        self.n_t as f64 * self.delta_t
    }
}

/// `φ = I + (1-θ)Δt A` and `ψ = I - θΔt A` with a cached factorization of `ψ`.
#[derive(Debug, Clone)]
pub struct StepOperators {
    pub cfg: ThetaSchemeConfig,
    pub spatial: Arc<CsrMatrix>,
    pub phi: Arc<CsrMatrix>,
    pub psi: Arc<CsrMatrix>,
    pub psi_lu: Arc<BandedLu>,
}

impl StepOperators {
    /// Step operators for `I - a A` and `I + b A` with arbitrary weights.
    pub fn from_weights(spatial: Arc<CsrMatrix>, a: f64, b: f64, cfg: ThetaSchemeConfig) -> Result<Self> {
        let n = spatial.nrows();
        let id = CsrMatrix::identity(n);
        let psi = id.linear_combination(1.0, &spatial, -a)?;
        let phi = id.linear_combination(1.0, &spatial, b)?;
        let psi_lu = BandedLu::factor(&psi)?;
        Ok(Self { cfg, spatial, phi: Arc::new(phi), psi: Arc::new(psi), psi_lu: Arc::new(psi_lu) })
    }

    pub fn n(&self) -> usize {
        self.spatial.nrows()
    }

    /// `out = ψ⁻¹(φ u_prev + Δt g)`.
    pub fn step(&self, u_prev: &[f64], g: Option<&[f64]>, out: &mut [f64]) {
        self.phi.mul_vec(u_prev, out);
        if let Some(g) = g {
            axpy(self.cfg.delta_t, g, out);
        }
        self.psi_lu.solve_in_place(out);
    }
}

pub fn build_step_operators(op: &SpatialOperator, cfg: ThetaSchemeConfig) -> Result<StepOperators> {
    let a = cfg.theta * cfg.delta_t;
    let b = (1.0 - cfg.theta) * cfg.delta_t;
    StepOperators::from_weights(op.matrix.clone(), a, b, cfg)
}

/// Source terms `ḡ_k`, `k = 1..=n_t`.
#[derive(Debug, Clone, Default, PartialEq)]
pub enum Forcing {
    #[default]
    Zero,
    Steps(Vec<Vec<f64>>),
}

impl Forcing {
    pub fn get(&self, k: usize) -> Option<&[f64]> {
        match self {
            Forcing::Zero => None,
            Forcing::Steps(g) => g.get(k.checked_sub(1)?).map(|v| v.as_slice()),
        }
    }

    fn validate(&self, n: usize, n_t: usize) -> Result<()> {
        if let Forcing::Steps(g) = self {
            ensure_len(n_t, g.len())?;
            for v in g {
                ensure_len(n, v.len())?;
            }
        }
        Ok(())
    }
}

/// Marches the θ-scheme and hands every state `u_k` (including `u_0`) to `visit`.
pub fn march(ops: &StepOperators, u0: &[f64], forcing: &Forcing, mut visit: impl FnMut(usize, &[f64])) -> Result<()> {
    let n = ops.n();
    ensure_len(n, u0.len())?;
    forcing.validate(n, ops.cfg.n_t)?;
    let mut u = u0.to_vec();
    let mut next = vec![0.0; n];
    visit(0, &u);
    for k in 1..=ops.cfg.n_t {
        ops.step(&u, forcing.get(k), &mut next);
        std::mem::swap(&mut u, &mut next);
        visit(k, &u);
    }
    Ok(())
}

/// Sequential time marching; the reference solution for every iterative solver.
pub fn sequential_solve(ops: &StepOperators, u0: &[f64], forcing: &Forcing) -> Result<Vec<f64>> {
    let n = ops.n();
    let mut traj = vec![0.0; (ops.cfg.n_t + 1) * n];
    march(ops, u0, forcing, |k, u| traj[k * n..(k + 1) * n].copy_from_slice(u))?;
    Ok(traj)
}

/// Block lower-bidiagonal space-time matrix: first diagonal block `F`, then
/// `D` repeated, with sub-diagonal blocks `-S` (some possibly dropped).
#[derive(Debug, Clone)]
pub struct BlockBidiagonal {
    n: usize,
    n_steps: usize,
    first: Arc<CsrMatrix>,
    diag: Arc<CsrMatrix>,
    sub: Arc<CsrMatrix>,
    dropped: Vec<bool>,
    first_lu: Option<Arc<BandedLu>>,
    diag_lu: OnceLock<Arc<BandedLu>>,
}

impl BlockBidiagonal {
    pub fn new(first: Arc<CsrMatrix>, diag: Arc<CsrMatrix>, sub: Arc<CsrMatrix>, n_steps: usize) -> Result<Self> {
        let n = diag.nrows();
        for m in [&first, &diag, &sub] {
            ensure_len(n, m.nrows())?;
            ensure_len(n, m.ncols())?;
        }
        let first_lu = if first.is_identity() { None } else { Some(Arc::new(BandedLu::factor(&first)?)) };
        Ok(Self { n, n_steps, first, diag, sub, dropped: vec![false; n_steps + 1], first_lu, diag_lu: OnceLock::new() })
    }

    /// The system with identity first block, `ψ` diagonal and `φ` coupling.
    pub fn from_steps(ops: &StepOperators, n_steps: usize) -> Self {
        Self {
            n: ops.n(),
            n_steps,
            first: Arc::new(CsrMatrix::identity(ops.n())),
            diag: ops.psi.clone(),
            sub: ops.phi.clone(),
            dropped: vec![false; n_steps + 1],
            first_lu: None,
            diag_lu: OnceLock::from(ops.psi_lu.clone()),
        }
    }

    /// Block size.
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn dim(&self) -> usize {
        (self.n_steps + 1) * self.n
    }

    pub fn first(&self) -> &Arc<CsrMatrix> {
        &self.first
    }

    pub fn diag(&self) -> &Arc<CsrMatrix> {
        &self.diag
    }

    /// `S` (the block itself is `-S`).
    pub fn sub(&self) -> &Arc<CsrMatrix> {
        &self.sub
    }

    /// Factors the diagonal block if that has not happened yet.
    pub fn factorize(&self) -> Result<()> {
        if self.diag_lu.get().is_none() {
            let lu = Arc::new(BandedLu::factor(&self.diag)?);
            let _ = self.diag_lu.set(lu);
        }
        Ok(())
    }

    pub fn is_factorized(&self) -> bool {
        self.diag_lu.get().is_some()
    }

    /// Factorization of the diagonal block, computed on first use.
    pub fn diag_lu(&self) -> &Arc<BandedLu> {
        self.factorize().expect("diagonal block of a heat-equation system is nonsingular");
        self.diag_lu.get().expect("factorized above")
    }

    pub fn diag_block(&self, k: usize) -> &CsrMatrix {
        if k == 0 {
            &self.first
        } else {
            &self.diag
        }
    }

    /// Whether block `(k, k-1)` is present.
    pub fn has_sub(&self, k: usize) -> bool {
        k >= 1 && k <= self.n_steps && !self.dropped[k]
    }

    pub fn dropped_blocks(&self) -> Vec<usize> {
        (1..=self.n_steps).filter(|&k| self.dropped[k]).collect()
    }

    pub fn with_dropped(&self, blocks: &[usize]) -> Result<Self> {
        let mut s = self.clone();
        for &k in blocks {
            ensure(k >= 1 && k <= self.n_steps, || format!("sub-block {k} out of range 1..={}", self.n_steps))?;
            s.dropped[k] = true;
        }
        Ok(s)
    }

    /// Maximal runs of coupled blocks; each run is solved sequentially.
    pub fn chains(&self) -> Vec<Range<usize>> {
        let mut out = Vec::new();
        let mut start = 0;
        for k in 1..=self.n_steps {
            if !self.has_sub(k) {
                out.push(start..k);
                start = k;
            }
        }
        out.push(start..self.n_steps + 1);
        out
    }

    /// `y = M x` for block row `k`.
    pub fn apply_row(&self, k: usize, x: &[f64], y: &mut [f64]) {
        let n = self.n;
        self.diag_block(k).mul_vec(&x[k * n..(k + 1) * n], y);
        if self.has_sub(k) {
            self.sub.mul_vec_acc(-1.0, &x[(k - 1) * n..k * n], y);
        }
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        self.matvec_with(Executor::Serial, x, y)
    }

    pub fn matvec_with(&self, exec: Executor, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.dim());
        debug_assert_eq!(y.len(), self.dim());
        exec.for_each_block(y, self.n, |k, yk| self.apply_row(k, x, yk));
    }

    fn solve_diag(&self, k: usize, x: &mut [f64]) {
        if k == 0 {
            if let Some(lu) = &self.first_lu {
                lu.solve_in_place(x);
            }
        } else {
            self.diag_lu().solve_in_place(x);
        }
    }

    /// Block forward substitution over the block range `blocks`, in place.
    pub fn forward_solve_range(&self, blocks: Range<usize>, x: &mut [f64]) {
        let n = self.n;
        for k in blocks {
            if self.has_sub(k) {
                let (prev, cur) = x[(k - 1) * n..(k + 1) * n].split_at_mut(n);
                self.sub.mul_vec_acc(1.0, prev, cur);
            }
            self.solve_diag(k, &mut x[k * n..(k + 1) * n]);
        }
    }

    /// Solves `M x = b` in place by block forward substitution.
    pub fn forward_solve(&self, x: &mut [f64]) {
        debug_assert_eq!(x.len(), self.dim());
        self.forward_solve_range(0..self.n_steps + 1, x);
    }

    pub fn to_csr(&self) -> CsrMatrix {
        let n = self.n;
        let mut t = Vec::new();
        for k in 0..=self.n_steps {
            let d = self.diag_block(k);
            for i in 0..n {
                let (c, v) = d.row(i);
                t.extend(c.iter().zip(v).map(|(&j, &x)| (k * n + i, k * n + j, x)));
            }
            if self.has_sub(k) {
                for i in 0..n {
                    let (c, v) = self.sub.row(i);
                    t.extend(c.iter().zip(v).map(|(&j, &x)| (k * n + i, (k - 1) * n + j, -x)));
                }
            }
        }
        CsrMatrix::from_triplets(self.dim(), self.dim(), &t).expect("indices in range")
    }

    pub fn to_dense(&self) -> Mat<f64> {
        let n = self.n;
        let mut m = Mat::<f64>::zeros(self.dim(), self.dim());
        for k in 0..=self.n_steps {
            place_block(&mut m, k * n, k * n, self.diag_block(k), 1.0);
            if self.has_sub(k) {
                place_block(&mut m, k * n, (k - 1) * n, &self.sub, -1.0);
            }
        }
        m
    }
}

/// Stacked vector stored block-sparsely; missing blocks are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct StackedVector {
    n: usize,
    blocks: Vec<Option<Vec<f64>>>,
}

impl StackedVector {
    pub fn zeros(n: usize, n_blocks: usize) -> Self {
        Self { n, blocks: vec![None; n_blocks] }
    }

    pub fn set(&mut self, k: usize, v: Vec<f64>) {
        debug_assert_eq!(v.len(), self.n);
        self.blocks[k] = Some(v);
    }

    pub fn block(&self, k: usize) -> Option<&[f64]> {
        self.blocks[k].as_deref()
    }

    pub fn len(&self) -> usize {
        self.n * self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn norm2(&self) -> f64 {
        self.blocks.iter().flatten().map(|b| crate::linalg::dot(b, b)).sum::<f64>().sqrt()
    }

    /// Writes the dense form into `out`.
    pub fn write_dense(&self, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.len());
        for (k, b) in self.blocks.iter().enumerate() {
            let o = &mut out[k * self.n..(k + 1) * self.n];
            match b {
                Some(b) => o.copy_from_slice(b),
                None => o.fill(0.0),
            }
        }
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.len()];
        self.write_dense(&mut v);
        v
    }
}

/// The all-at-once system `A_h u_h = f_h`.
#[derive(Debug, Clone)]
pub struct FineSystem {
    pub matrix: BlockBidiagonal,
    pub rhs: StackedVector,
    pub ops: StepOperators,
}

impl FineSystem {
    pub fn n(&self) -> usize {
        self.matrix.n()
    }

    pub fn n_t(&self) -> usize {
        self.matrix.n_steps()
    }

    pub fn dim(&self) -> usize {
        self.matrix.dim()
    }
}

pub fn assemble_fine_system(ops: &StepOperators, u0: &[f64], forcing: &Forcing) -> Result<FineSystem> {
    let n = ops.n();
    let n_t = ops.cfg.n_t;
    ensure_len(n, u0.len())?;
    forcing.validate(n, n_t)?;
    let mut rhs = StackedVector::zeros(n, n_t + 1);
    rhs.set(0, u0.to_vec());
    for k in 1..=n_t {
        if let Some(g) = forcing.get(k) {
            rhs.set(k, g.iter().map(|v| ops.cfg.delta_t * v).collect());
        }
    }
    Ok(FineSystem { matrix: BlockBidiagonal::from_steps(ops, n_t), rhs, ops: ops.clone() })
}

/// `‖f_h - A_h u‖₂ / ‖f_h‖₂`
pub fn relative_residual(sys: &FineSystem, u: &[f64]) -> Result<f64> {
    ensure_len(sys.dim(), u.len())?;
    let mut r = vec![0.0; sys.dim()];
    sys.matrix.matvec(u, &mut r);
    let n = sys.n();
    for k in 0..=sys.n_t() {
        let rk = &mut r[k * n..(k + 1) * n];
        rk.iter_mut().for_each(|v| *v = -*v);
        if let Some(f) = sys.rhs.block(k) {
            axpy(1.0, f, rk);
        }
    }
    let fnorm = norm2(&sys.rhs.to_dense());
    if fnorm == 0.0 {
        return Err(Error::InvalidParameter("right-hand side is zero".into()));
    }
    Ok(norm2(&r) / fnorm)
}

/// `ν`-blocked view of a space-time system.
#[derive(Debug, Clone)]
pub struct PartitionedSystem {
    pub matrix: BlockBidiagonal,
    pub nu: usize,
    pub n_coarse: usize,
}

pub fn partition_system(matrix: &BlockBidiagonal, nu: usize) -> Result<PartitionedSystem> {
    ensure(nu >= 1, || "nu must be at least 1".into())?;
    let n_t = matrix.n_steps();
    if !n_t.is_multiple_of(nu) {
        return Err(Error::Divisibility { what: "n_t", value: n_t, divisor: nu });
    }
    Ok(PartitionedSystem { matrix: matrix.clone(), nu, n_coarse: n_t / nu })
}

impl PartitionedSystem {
    pub fn n(&self) -> usize {
        self.matrix.n()
    }

    /// Fine time indices belonging to coarse block `k`.
    pub fn time_range(&self, k: usize) -> Range<usize> {
        if k == 0 {
            0..1
        } else {
            self.nu * (k - 1) + 1..self.nu * k + 1
        }
    }

    /// Coarse block and offset of fine time index `i`.
    pub fn locate(&self, i: usize) -> (usize, usize) {
        if i == 0 {
            (0, 0)
        } else {
            ((i - 1) / self.nu + 1, (i - 1) % self.nu)
        }
    }

    fn fine_block(&self, rows: Range<usize>, cols: Range<usize>) -> CsrMatrix {
        let n = self.n();
        let mut t = Vec::new();
        for (bi, i) in rows.clone().enumerate() {
            for (bj, j) in cols.clone().enumerate() {
                let blk: Option<(&CsrMatrix, f64)> = if i == j {
                    Some((self.matrix.diag_block(i), 1.0))
                } else if j + 1 == i && self.matrix.has_sub(i) {
                    Some((self.matrix.sub(), -1.0))
                } else {
                    None
                };
                if let Some((m, s)) = blk {
                    for r in 0..n {
                        let (c, v) = m.row(r);
                        t.extend(c.iter().zip(v).map(|(&c, &x)| (bi * n + r, bj * n + c, s * x)));
                    }
                }
            }
        }
        CsrMatrix::from_triplets(rows.len() * n, cols.len() * n, &t).expect("indices in range")
    }

    /// `A^h_{k,k}`
    pub fn diag_block(&self, k: usize) -> CsrMatrix {
        self.fine_block(self.time_range(k), self.time_range(k))
    }

    /// `A^h_{k,k-1}` for `k ≥ 1`.
    pub fn sub_block(&self, k: usize) -> CsrMatrix {
        self.fine_block(self.time_range(k), self.time_range(k - 1))
    }

    /// Reassembles the full matrix from the blocked view.
    pub fn flatten(&self) -> CsrMatrix {
        let n = self.n();
        let mut t = Vec::new();
        let mut push = |m: &CsrMatrix, r0: usize, c0: usize| {
            for r in 0..m.nrows() {
                let (c, v) = m.row(r);
                t.extend(c.iter().zip(v).map(|(&c, &x)| (r0 + r, c0 + c, x)));
            }
        };
        for k in 0..=self.n_coarse {
            let r0 = self.time_range(k).start * n;
            push(&self.diag_block(k), r0, r0);
            if k >= 1 {
                push(&self.sub_block(k), r0, self.time_range(k - 1).start * n);
            }
        }
        CsrMatrix::from_triplets(self.matrix.dim(), self.matrix.dim(), &t).expect("indices in range")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::max_abs_diff;
    use crate::spatial::build_laplacian;
    use proptest::prelude::*;

    fn ops_1d(nx: usize, theta: f64, dt: f64, n_t: usize) -> StepOperators {
        let op = build_laplacian(1, nx, 1, 1.0, 1.0).unwrap();
        build_step_operators(&op, ThetaSchemeConfig::new(theta, dt, n_t).unwrap()).unwrap()
    }

    fn scalar_ops(n_t: usize) -> StepOperators {
        let z = Arc::new(CsrMatrix::zeros(1, 1));
        StepOperators::from_weights(z, 0.0, 0.0, ThetaSchemeConfig::new(0.5, 1.0, n_t).unwrap()).unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(ThetaSchemeConfig::new(1.5, 0.1, 2).is_err());
        assert!(ThetaSchemeConfig::new(0.5, 0.0, 2).is_err());
        assert!(ThetaSchemeConfig::new(0.5, 0.1, 0).is_err());
        assert_eq!(ThetaSchemeConfig::new(0.5, 0.25, 8).unwrap().final_time(), 2.0);
    }

    #[test]
    fn explicit_and_implicit_end_points() {
        let e = ops_1d(5, 0.0, 1e-3, 1);
        assert!(e.psi.is_identity());
        let i = ops_1d(5, 1.0, 1e-3, 1);
        assert!(i.phi.is_identity());
    }

    #[test]
    fn crank_nicolson_entries() {
        let ops = ops_1d(3, 0.5, 0.01, 1);
        assert!((ops.psi.get(0, 0) - 1.16).abs() < 1e-15);
        assert!((ops.psi.get(0, 1) + 0.08).abs() < 1e-15);
        assert!((ops.phi.get(1, 1) - 0.84).abs() < 1e-15);
        assert!((ops.phi.get(1, 2) - 0.08).abs() < 1e-15);
        let two = CsrMatrix::identity(3).scaled(2.0);
        let lhs = ops.phi.linear_combination(1.0, &ops.psi, 1.0).unwrap();
        assert!(lhs.max_abs_diff(&two) < 1e-15);
    }

    #[test]
    fn zero_operator_keeps_state() {
        let ops = scalar_ops(5);
        let traj = sequential_solve(&ops, &[3.0], &Forcing::Zero).unwrap();
        assert!(traj.iter().all(|&v| v == 3.0));
    }

    #[test]
    fn eigenvector_decays_by_the_amplification_factor() {
        let nx = 15;
        let op = build_laplacian(1, nx, 1, 1.0, 1.0).unwrap();
        let dt = 1e-3;
        let ops = build_step_operators(&op, ThetaSchemeConfig::new(0.5, dt, 10).unwrap()).unwrap();
        let u0 = crate::spatial::InitialCondition::SineBump.sample(&op);
        let s = (std::f64::consts::PI * op.delta_x / 2.0).sin();
        let lam = -4.0 / (op.delta_x * op.delta_x) * s * s;
        let g = (1.0 + 0.5 * dt * lam) / (1.0 - 0.5 * dt * lam);
        let traj = sequential_solve(&ops, &u0, &Forcing::Zero).unwrap();
        for k in 0..=10 {
            let expect: Vec<f64> = u0.iter().map(|v| v * g.powi(k as i32)).collect();
            assert!(max_abs_diff(&traj[k * nx..(k + 1) * nx], &expect) < 1e-13);
        }
    }

    #[test]
    fn scalar_fine_system() {
        let ops = scalar_ops(2);
        let sys = assemble_fine_system(&ops, &[1.0], &Forcing::Zero).unwrap();
        let d = sys.matrix.to_dense();
        let expect = [[1.0, 0.0, 0.0], [-1.0, 1.0, 0.0], [0.0, -1.0, 1.0]];
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(d[(i, j)], expect[i][j]);
            }
        }
    }

    #[test]
    fn trajectory_solves_the_fine_system() {
        let ops = ops_1d(9, 0.5, 2e-3, 12);
        let op = build_laplacian(1, 9, 1, 1.0, 1.0).unwrap();
        let u0 = crate::spatial::InitialCondition::Random { seed: 3 }.sample(&op);
        let g: Vec<Vec<f64>> = (1..=12).map(|k| (0..9).map(|i| ((i + k) as f64).cos()).collect()).collect();
        let forcing = Forcing::Steps(g);
        let sys = assemble_fine_system(&ops, &u0, &forcing).unwrap();
        let traj = sequential_solve(&ops, &u0, &forcing).unwrap();
        assert!(relative_residual(&sys, &traj).unwrap() <= 1e-12);
        let mut x = sys.rhs.to_dense();
        sys.matrix.forward_solve(&mut x);
        let rel = max_abs_diff(&x, &traj) / norm2(&traj);
        assert!(rel <= 1e-12);
        assert_eq!(relative_residual(&sys, &vec![0.0; sys.dim()]).unwrap(), 1.0);
    }

    #[test]
    fn residual_is_linear_in_perturbation() {
        let ops = ops_1d(7, 0.5, 1e-3, 4);
        let u0 = vec![1.0; 7];
        let sys = assemble_fine_system(&ops, &u0, &Forcing::Zero).unwrap();
        let traj = sequential_solve(&ops, &u0, &Forcing::Zero).unwrap();
        let r = |eps: f64| {
            let mut u = traj.clone();
            u[0] += eps;
            relative_residual(&sys, &u).unwrap()
        };
        let (r1, r2) = (r(1e-3), r(2e-3));
        assert!((r2 / r1 - 2.0).abs() < 1e-8);
    }

    #[test]
    fn dimension_mismatch() {
        let ops = ops_1d(4, 0.5, 1e-3, 2);
        assert!(sequential_solve(&ops, &[1.0; 3], &Forcing::Zero).is_err());
        assert!(assemble_fine_system(&ops, &[1.0; 4], &Forcing::Steps(vec![vec![0.0; 4]])).is_err());
    }

    #[test]
    fn partition_blocks() {
        let ops = ops_1d(3, 0.5, 1e-3, 4);
        let sys = assemble_fine_system(&ops, &[1.0; 3], &Forcing::Zero).unwrap();
        let p = partition_system(&sys.matrix, 2).unwrap();
        assert_eq!(p.n_coarse, 2);
        let d = p.diag_block(1);
        assert_eq!(d.nrows(), 6);
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(d.get(i, j), ops.psi.get(i, j));
                assert_eq!(d.get(3 + i, 3 + j), ops.psi.get(i, j));
                assert_eq!(d.get(3 + i, j), -ops.phi.get(i, j));
                assert_eq!(d.get(i, 3 + j), 0.0);
            }
        }
        assert!(p.diag_block(0).is_identity());
        assert_eq!(p.locate(3), (2, 0));
        assert!(matches!(
            partition_system(&assemble_fine_system(&ops_1d(3, 0.5, 1e-3, 6), &[0.0; 3], &Forcing::Zero).unwrap().matrix, 4),
            Err(Error::Divisibility { .. })
        ));
    }

    #[test]
    fn sub_blocks_are_minus_phi() {
        let ops = ops_1d(4, 0.3, 1e-3, 5);
        let sys = assemble_fine_system(&ops, &[1.0; 4], &Forcing::Zero).unwrap();
        let full = sys.matrix.to_csr();
        let mut count = 0;
        for k in 1..=5 {
            let mut same = true;
            for i in 0..4 {
                for j in 0..4 {
                    same &= full.get(k * 4 + i, (k - 1) * 4 + j) == -ops.phi.get(i, j);
                }
            }
            count += same as usize;
        }
        assert_eq!(count, 5);
    }

    #[test]
    fn factorization_reuse_is_bitwise_stable() {
        let ops = ops_1d(11, 0.5, 1e-3, 1);
        let b: Vec<f64> = (0..11).map(|i| (i as f64).sqrt()).collect();
        let mut x1 = b.clone();
        let mut x2 = b.clone();
        ops.psi_lu.solve_in_place(&mut x1);
        ops.psi_lu.solve_in_place(&mut x2);
        assert_eq!(x1, x2);
    }

    #[test]
    fn chains_follow_dropped_blocks() {
        let ops = ops_1d(2, 0.5, 1e-3, 6);
        let m = BlockBidiagonal::from_steps(&ops, 6).with_dropped(&[1, 4]).unwrap();
        assert_eq!(m.chains(), vec![0..1, 1..4, 4..7]);
        assert_eq!(m.dropped_blocks(), vec![1, 4]);
    }

    proptest! {
        #[test]
        fn partition_round_trip(nu in 1usize..5, nt_mult in 1usize..4, nx in 1usize..5) {
            let n_t = nu * nt_mult;
            let ops = ops_1d(nx, 0.5, 1e-3, n_t);
            let sys = assemble_fine_system(&ops, &vec![1.0; nx], &Forcing::Zero).unwrap();
            let p = partition_system(&sys.matrix, nu).unwrap();
            prop_assert_eq!(p.flatten(), sys.matrix.to_csr());
        }

        #[test]
        fn threaded_matvec_is_bitwise_identical(w in 1usize..6) {
            let ops = ops_1d(13, 0.5, 1e-3, 9);
            let m = BlockBidiagonal::from_steps(&ops, 9);
            let x: Vec<f64> = (0..m.dim()).map(|i| (i as f64 * 0.37).sin()).collect();
            let mut y1 = vec![0.0; m.dim()];
            let mut y2 = vec![0.0; m.dim()];
            m.matvec(&x, &mut y1);
            m.matvec_with(Executor::Threads(w), &x, &mut y2);
            prop_assert_eq!(y1, y2);
        }
    }
}
