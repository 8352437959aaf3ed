//! Intergrid pairs `(Y, Z)` and the coarse systems they induce.
//!
//! Time aggregation (T, TS, space-only) uses block-diagonal identity stacks,
//! optionally combined with piecewise-constant spatial agglomeration. The
//! MGRIT pair injects at C-points and interpolates ideally to F-points.

use crate::error::{ensure, ensure_len, Error, Result};
use crate::linalg::{axpy, CsrMatrix};
use crate::spatial::GridShape;
use crate::theta::{BlockBidiagonal, PartitionedSystem, StepOperators};
use faer::Mat;
use std::sync::Arc;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CoarseningKind {
    /// Pure time coarsening.
    T,
    /// Simultaneous time coarsening and spatial agglomeration.
    TS,
    /// C-point injection with ideal interpolation.
    Mgrit,
    /// Spatial agglomeration only (a space move in a multilevel schedule).
    Space,
}

impl CoarseningKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "t" | "time" => Ok(Self::T),
            "ts" | "time-space" => Ok(Self::TS),
            "mgrit" => Ok(Self::Mgrit),
            "s" | "space" => Ok(Self::Space),
            other => Err(Error::Config(format!("unknown coarsening kind '{other}'"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::T => "T",
            Self::TS => "TS",
            Self::Mgrit => "MGRIT",
            Self::Space => "S",
        }
    }
}

/// Disjoint cover `{I_j}` of the spatial unknowns.
#[derive(Debug, Clone, PartialEq)]
pub struct Agglomeration {
    assign: Vec<usize>,
    sizes: Vec<usize>,
    coarse_shape: Option<GridShape>,
}

impl Agglomeration {
    pub fn from_groups(n: usize, groups: &[Vec<usize>]) -> Result<Self> {
        let mut assign = vec![usize::MAX; n];
        let mut sizes = Vec::with_capacity(groups.len());
        for (j, g) in groups.iter().enumerate() {
            ensure(!g.is_empty(), || format!("agglomerate {j} is empty"))?;
            for &i in g {
                ensure(i < n, || format!("index {i} outside 0..{n}"))?;
                ensure(assign[i] == usize::MAX, || format!("index {i} belongs to two agglomerates"))?;
                assign[i] = j;
            }
            sizes.push(g.len());
        }
        ensure(assign.iter().all(|&a| a != usize::MAX), || "agglomerates do not cover all unknowns".into())?;
        Ok(Self { assign, sizes, coarse_shape: None })
    }

    /// Factor-2 agglomeration per direction; an odd leftover joins the last agglomerate.
    pub fn standard(shape: GridShape) -> Self {
        let c = shape.agglomerated();
        let map = |i: usize, nc: usize| (i / 2).min(nc - 1);
        let mut assign = Vec::with_capacity(shape.len());
        for j in 0..shape.ny {
            for i in 0..shape.nx {
                assign.push(map(j, c.ny) * c.nx + map(i, c.nx));
            }
        }
        let mut sizes = vec![0; c.len()];
        for &a in &assign {
            sizes[a] += 1;
        }
        Self { assign, sizes, coarse_shape: Some(c) }
    }

    pub fn n(&self) -> usize {
        self.assign.len()
    }

    pub fn m(&self) -> usize {
        self.sizes.len()
    }

    pub fn coarse_shape(&self) -> Option<GridShape> {
        self.coarse_shape
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    /// `z_ij = 1` iff `i ∈ I_j`.
    pub fn z_matrix(&self) -> CsrMatrix {
        let t: Vec<_> = self.assign.iter().enumerate().map(|(i, &j)| (i, j, 1.0)).collect();
        CsrMatrix::from_triplets(self.n(), self.m(), &t).expect("valid agglomeration")
    }

    /// `y_ij = 1/|I_j|` iff `i ∈ I_j` (stored `n × m` like `Z`).
    pub fn y_matrix(&self) -> CsrMatrix {
        let t: Vec<_> = self.assign.iter().enumerate().map(|(i, &j)| (i, j, 1.0 / self.sizes[j] as f64)).collect();
        CsrMatrix::from_triplets(self.n(), self.m(), &t).expect("valid agglomeration")
    }

    /// `out += Yᵀ x`
    pub fn restrict_acc(&self, x: &[f64], out: &mut [f64]) {
        for (&j, &v) in self.assign.iter().zip(x) {
            out[j] += v / self.sizes[j] as f64;
        }
    }

    /// `x -= Z c`
    pub fn prolong_sub(&self, c: &[f64], x: &mut [f64]) {
        for (xi, &j) in x.iter_mut().zip(&self.assign) {
            *xi -= c[j];
        }
    }

    /// `Yᵀ M Z`
    pub fn galerkin(&self, m: &CsrMatrix) -> Result<CsrMatrix> {
        self.y_matrix().transpose().matmul(&m.matmul(&self.z_matrix())?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum TimeMap {
    /// Coarse step `k` sums fine steps `ν(k-1)+1..=νk`.
    Aggregate,
    /// Coarse step `k` is fine step `νk`.
    Inject,
}

/// Deflation/intergrid pair for one level.
#[derive(Debug, Clone)]
pub struct IntergridPair {
    pub kind: CoarseningKind,
    pub nu: usize,
    pub n_fine_steps: usize,
    pub n_coarse_steps: usize,
    n: usize,
    m: usize,
    time: TimeMap,
    space: Option<Agglomeration>,
    fine: Option<BlockBidiagonal>,
}

fn check_steps(nu: usize, n_coarse: usize) -> Result<()> {
    ensure(nu >= 1, || "nu must be at least 1".into())?;
    ensure(n_coarse >= 1, || "n_T must be at least 1".into())
}

pub fn build_t_pair(n: usize, nu: usize, n_coarse: usize) -> Result<IntergridPair> {
    check_steps(nu, n_coarse)?;
    Ok(IntergridPair {
        kind: CoarseningKind::T,
        nu,
        n_fine_steps: nu * n_coarse,
        n_coarse_steps: n_coarse,
        n,
        m: n,
        time: TimeMap::Aggregate,
        space: None,
        fine: None,
    })
}

pub fn build_ts_pair(n: usize, nu: usize, n_coarse: usize, agg: Agglomeration) -> Result<IntergridPair> {
    check_steps(nu, n_coarse)?;
    ensure_len(n, agg.n())?;
    Ok(IntergridPair {
        kind: CoarseningKind::TS,
        nu,
        n_fine_steps: nu * n_coarse,
        n_coarse_steps: n_coarse,
        n,
        m: agg.m(),
        time: TimeMap::Aggregate,
        space: Some(agg),
        fine: None,
    })
}

pub fn build_space_pair(n_steps: usize, agg: Agglomeration) -> Result<IntergridPair> {
    let mut p = build_ts_pair(agg.n(), 1, n_steps.max(1), agg)?;
    p.kind = CoarseningKind::Space;
    p.n_fine_steps = n_steps;
    p.n_coarse_steps = n_steps;
    Ok(p)
}

pub fn build_mgrit_pair(part: &PartitionedSystem) -> Result<IntergridPair> {
    check_steps(part.nu, part.n_coarse)?;
    Ok(IntergridPair {
        kind: CoarseningKind::Mgrit,
        nu: part.nu,
        n_fine_steps: part.nu * part.n_coarse,
        n_coarse_steps: part.n_coarse,
        n: part.n(),
        m: part.n(),
        time: TimeMap::Inject,
        space: None,
        fine: Some(part.matrix.clone()),
    })
}

impl IntergridPair {
    pub fn fine_block(&self) -> usize {
        self.n
    }

    pub fn coarse_block(&self) -> usize {
        self.m
    }

    pub fn fine_dim(&self) -> usize {
        (self.n_fine_steps + 1) * self.n
    }

    pub fn coarse_dim(&self) -> usize {
        (self.n_coarse_steps + 1) * self.m
    }

    pub fn agglomeration(&self) -> Option<&Agglomeration> {
        self.space.as_ref()
    }

    /// Coarse step receiving fine step `i`, if any.
    pub fn coarse_of(&self, i: usize) -> Option<usize> {
        match self.time {
            TimeMap::Aggregate if i == 0 => Some(0),
            TimeMap::Aggregate => Some((i - 1) / self.nu + 1),
            TimeMap::Inject => i.is_multiple_of(self.nu).then_some(i / self.nu),
        }
    }

    /// `c += Yᵀ` applied to fine block `i` holding `s`.
    pub fn restrict_block_acc(&self, i: usize, s: &[f64], c: &mut [f64]) {
        if let Some(k) = self.coarse_of(i) {
            let ck = &mut c[k * self.m..(k + 1) * self.m];
            match &self.space {
                Some(agg) => agg.restrict_acc(s, ck),
                None => axpy(1.0, s, ck),
            }
        }
    }

    /// `c = Yᵀ v`
    pub fn restrict(&self, v: &[f64], c: &mut [f64]) {
        debug_assert_eq!(v.len(), self.fine_dim());
        debug_assert_eq!(c.len(), self.coarse_dim());
        c.fill(0.0);
        for i in 0..=self.n_fine_steps {
            self.restrict_block_acc(i, &v[i * self.n..(i + 1) * self.n], c);
        }
    }

    /// `c = Yᵀ(M v - μ v)` without forming `M v` as a whole.
    pub fn restrict_shifted_residual(&self, sys: &BlockBidiagonal, mu: f64, v: &[f64], c: &mut [f64]) {
        let n = self.n;
        let mut s = vec![0.0; n];
        c.fill(0.0);
        for i in 0..=self.n_fine_steps {
            if self.coarse_of(i).is_none() {
                continue;
            }
            sys.apply_row(i, v, &mut s);
            axpy(-mu, &v[i * n..(i + 1) * n], &mut s);
            self.restrict_block_acc(i, &s, c);
        }
    }

    /// `x -= Z c`
    pub fn interpolate_sub(&self, c: &[f64], x: &mut [f64]) {
        debug_assert_eq!(c.len(), self.coarse_dim());
        debug_assert_eq!(x.len(), self.fine_dim());
        let (n, m) = (self.n, self.m);
        match self.time {
            TimeMap::Aggregate => {
                for i in 0..=self.n_fine_steps {
                    let k = self.coarse_of(i).expect("aggregation covers every step");
                    let ck = &c[k * m..(k + 1) * m];
                    let xi = &mut x[i * n..(i + 1) * n];
                    match &self.space {
                        Some(agg) => agg.prolong_sub(ck, xi),
                        None => axpy(-1.0, ck, xi),
                    }
                }
            }
            TimeMap::Inject => {
                let fine = self.fine.as_ref().expect("MGRIT pair keeps its fine system");
                let mut w = vec![0.0; n];
                let mut t = vec![0.0; n];
                for k in 0..=self.n_coarse_steps {
                    let ck = &c[k * n..(k + 1) * n];
                    let base = self.nu * k;
                    axpy(-1.0, ck, &mut x[base * n..(base + 1) * n]);
                    if k == self.n_coarse_steps {
                        break;
                    }
                    w.copy_from_slice(ck);
                    for j in 1..self.nu {
                        fine.sub().mul_vec(&w, &mut t);
                        fine.diag_lu().solve_in_place(&mut t);
                        std::mem::swap(&mut w, &mut t);
                        axpy(-1.0, &w, &mut x[(base + j) * n..(base + j + 1) * n]);
                    }
                }
            }
        }
    }

    /// `x = Z c`
    pub fn interpolate(&self, c: &[f64], x: &mut [f64]) {
        x.fill(0.0);
        self.interpolate_sub(c, x);
        x.iter_mut().for_each(|v| *v = -*v);
    }

    /// Number of `ψ` solves performed by one interpolation.
    pub fn interpolation_solves(&self) -> usize {
        match self.time {
            TimeMap::Aggregate => 0,
            TimeMap::Inject => self.n_coarse_steps * (self.nu - 1),
        }
    }

    pub fn dense_z(&self) -> Mat<f64> {
        let mut z = Mat::<f64>::zeros(self.fine_dim(), self.coarse_dim());
        let mut e = vec![0.0; self.coarse_dim()];
        let mut col = vec![0.0; self.fine_dim()];
        for j in 0..self.coarse_dim() {
            e[j] = 1.0;
            self.interpolate(&e, &mut col);
            e[j] = 0.0;
            for (i, &v) in col.iter().enumerate() {
                z[(i, j)] = v;
            }
        }
        z
    }

    pub fn dense_y(&self) -> Mat<f64> {
        let mut y = Mat::<f64>::zeros(self.fine_dim(), self.coarse_dim());
        let mut e = vec![0.0; self.fine_dim()];
        let mut row = vec![0.0; self.coarse_dim()];
        for i in 0..self.fine_dim() {
            e[i] = 1.0;
            self.restrict(&e, &mut row);
            e[i] = 0.0;
            for (j, &v) in row.iter().enumerate() {
                y[(i, j)] = v;
            }
        }
        y
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Galerkin,
    ClosedForm,
    Rediscretized,
    Perturbed,
}

/// Structured coarse space-time system.
#[derive(Debug, Clone)]
pub struct CoarseSystem {
    pub matrix: BlockBidiagonal,
    pub provenance: Provenance,
}

impl CoarseSystem {
    pub fn dropped_block_indices(&self) -> Vec<usize> {
        self.matrix.dropped_blocks()
    }
}

/// Dense Galerkin product `Yᵀ A_h Z` split into coarse blocks.
#[derive(Debug, Clone)]
pub struct DenseCoarseBlocks {
    pub full: Mat<f64>,
    pub block: usize,
    pub n_steps: usize,
}

impl DenseCoarseBlocks {
    pub fn diag(&self, k: usize) -> Mat<f64> {
        let b = self.block;
        self.full.submatrix(k * b, k * b, b, b).to_owned()
    }

    pub fn sub(&self, k: usize) -> Mat<f64> {
        let b = self.block;
        self.full.submatrix(k * b, (k - 1) * b, b, b).to_owned()
    }

    /// Largest entry outside the block lower-bidiagonal pattern.
    pub fn off_pattern_max(&self) -> f64 {
        let b = self.block;
        let mut m = 0.0f64;
        for j in 0..self.full.ncols() {
            for i in 0..self.full.nrows() {
                let (bi, bj) = (i / b, j / b);
                if bi != bj && bi != bj + 1 {
                    m = m.max(self.full[(i, j)].abs());
                }
            }
        }
        m
    }
}

/// Dense Galerkin assembly; desk-scale verification path.
pub fn galerkin_coarse(pair: &IntergridPair, part: &PartitionedSystem) -> Result<DenseCoarseBlocks> {
    ensure_len(pair.fine_dim(), part.matrix.dim())?;
    let a = part.matrix.to_dense();
    let y = pair.dense_y();
    let z = pair.dense_z();
    let full = y.transpose() * (&a * &z);
    Ok(DenseCoarseBlocks { full, block: pair.coarse_block(), n_steps: pair.n_coarse_steps })
}

/// Sparse Galerkin product for aggregation pairs (T, TS, space).
pub fn galerkin_coarse_structured(pair: &IntergridPair, fine: &BlockBidiagonal) -> Result<CoarseSystem> {
    ensure_len(pair.fine_dim(), fine.dim())?;
    if pair.time != TimeMap::Aggregate {
        return Err(Error::Unsupported("structured Galerkin product needs an aggregation pair".into()));
    }
    let nu = pair.nu as f64;
    let diag = fine.diag().linear_combination(nu, fine.sub(), -(nu - 1.0))?;
    let (first, diag, sub) = match &pair.space {
        Some(agg) => (agg.galerkin(fine.first())?, agg.galerkin(&diag)?, agg.galerkin(fine.sub())?),
        None => ((**fine.first()).clone(), diag, (**fine.sub()).clone()),
    };
    let matrix = BlockBidiagonal::new(Arc::new(first), Arc::new(diag), Arc::new(sub), pair.n_coarse_steps)?;
    Ok(CoarseSystem { matrix, provenance: Provenance::Galerkin })
}

/// Explicit weight `θ̃` of the T-coarsened scheme: `Ψ̃ = I - (1-θ̃)ΔT A`, `Φ̃ = I + θ̃ΔT A`.
pub fn modified_theta(theta: f64, nu: usize) -> f64 {
    (1.0 - theta) / nu as f64
}

/// T-coarse system from the modified θ-scheme formulas.
pub fn closed_form_t_coarse(ops: &StepOperators, nu: usize, n_coarse: usize) -> Result<CoarseSystem> {
    check_steps(nu, n_coarse)?;
    let tt = modified_theta(ops.cfg.theta, nu);
    let dt_coarse = nu as f64 * ops.cfg.delta_t;
    let c = StepOperators::from_weights(ops.spatial.clone(), (1.0 - tt) * dt_coarse, tt * dt_coarse, ops.cfg)?;
    Ok(CoarseSystem { matrix: BlockBidiagonal::from_steps(&c, n_coarse), provenance: Provenance::ClosedForm })
}

/// Coarse system rediscretized with the fine θ on step `ΔT = νΔt`.
pub fn rediscretized_coarse(ops: &StepOperators, nu: usize, n_coarse: usize) -> Result<CoarseSystem> {
    check_steps(nu, n_coarse)?;
    let dt_coarse = nu as f64 * ops.cfg.delta_t;
    let theta = ops.cfg.theta;
    let c = StepOperators::from_weights(ops.spatial.clone(), theta * dt_coarse, (1.0 - theta) * dt_coarse, ops.cfg)?;
    Ok(CoarseSystem { matrix: BlockBidiagonal::from_steps(&c, n_coarse), provenance: Provenance::Rediscretized })
}

/// Sub-blocks dropped to split `n_steps` coarse steps into `n_cgs` balanced chains.
///
/// Every chunk start is decoupled from its predecessor, including the
/// coupling to the initial block; `n_cgs ≥ n_steps` drops every sub-block.
pub fn decoupling_blocks(n_steps: usize, n_cgs: usize) -> Result<Vec<usize>> {
    ensure(n_cgs >= 1 && n_cgs <= n_steps + 1, || {
        format!("n_cgs = {n_cgs} outside 1..={}", n_steps + 1)
    })?;
    if n_cgs >= n_steps {
        return Ok((1..=n_steps).collect());
    }
    let (q, r) = (n_steps / n_cgs, n_steps % n_cgs);
    let mut out = Vec::with_capacity(n_cgs);
    let mut start = 1;
    for c in 0..n_cgs {
        out.push(start);
        start += q + usize::from(c < r);
    }
    Ok(out)
}

pub fn perturb_decouple(cs: &CoarseSystem, n_cgs: usize) -> Result<CoarseSystem> {
    let blocks = decoupling_blocks(cs.matrix.n_steps(), n_cgs)?;
    Ok(CoarseSystem { matrix: cs.matrix.with_dropped(&blocks)?, provenance: Provenance::Perturbed })
}
