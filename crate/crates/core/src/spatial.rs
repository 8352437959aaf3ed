//! Finite-difference Laplacian for the 1D/2D heat equation with homogeneous
//! Dirichlet boundaries, plus Courant-number helpers and initial states.

use crate::error::{ensure, Error, Result};
use crate::linalg::CsrMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use std::sync::Arc;

/// Logical grid layout of a spatial state vector; x varies fastest in 2D.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GridShape {
    pub dim: usize,
    pub nx: usize,
    pub ny: usize,
}

impl GridShape {
    pub fn new(dim: usize, nx: usize, ny: usize) -> Result<Self> {
        ensure(dim == 1 || dim == 2, || format!("dim must be 1 or 2, got {dim}"))?;
        ensure(nx >= 1, || "n_x must be at least 1".into())?;
        ensure(dim == 1 || ny >= 1, || "n_y must be at least 1".into())?;
        Ok(Self { dim, nx, ny: if dim == 1 { 1 } else { ny } })
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Shape after factor-2 agglomeration in every direction.
    pub fn agglomerated(&self) -> Self {
        let half = |n: usize| (n / 2).max(1);
        Self { dim: self.dim, nx: half(self.nx), ny: if self.dim == 1 { 1 } else { half(self.ny) } }
    }
}

impl std::fmt::Display for GridShape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.dim == 1 {
            write!(f, "{}", self.nx)
        } else {
            write!(f, "{}x{}", self.nx, self.ny)
        }
    }
}

/// The discrete Laplacian `A_n` together with its grid metadata.
#[derive(Debug, Clone)]
pub struct SpatialOperator {
    pub shape: GridShape,
    pub delta_x: f64,
    pub tau: f64,
    pub domain_length: f64,
    pub matrix: Arc<CsrMatrix>,
}

impl SpatialOperator {
    pub fn dim(&self) -> usize {
        self.shape.dim
    }

    pub fn n(&self) -> usize {
        self.shape.len()
    }

    /// `2τΔt/Δx²` in 1D, `3τΔt/Δx²` in 2D.
    pub fn courant_number(&self, delta_t: f64) -> Result<f64> {
        ensure(delta_t > 0.0 && delta_t.is_finite(), || format!("delta_t must be positive, got {delta_t}"))?;
        Ok(self.courant_factor() * self.tau * delta_t / (self.delta_x * self.delta_x))
    }

    /// Inverse of [`courant_number`](Self::courant_number).
    pub fn delta_t_for_courant(&self, courant: f64) -> Result<f64> {
        ensure(courant > 0.0 && courant.is_finite(), || format!("Courant number must be positive, got {courant}"))?;
        Ok(courant * self.delta_x * self.delta_x / (self.courant_factor() * self.tau))
    }

    fn courant_factor(&self) -> f64 {
        if self.shape.dim == 1 {
            2.0
        } else {
            3.0
        }
    }

    /// Grid coordinates of unknown `idx`.
    pub fn coords(&self, idx: usize) -> (f64, f64) {
        let i = idx % self.shape.nx;
        let j = idx / self.shape.nx;
        ((i + 1) as f64 * self.delta_x, (j + 1) as f64 * self.delta_x)
    }
}

pub fn build_laplacian(dim: usize, nx: usize, ny: usize, tau: f64, domain_length: f64) -> Result<SpatialOperator> {
    let shape = GridShape::new(dim, nx, ny)?;
    ensure(tau > 0.0 && tau.is_finite(), || format!("tau must be positive, got {tau}"))?;
    ensure(domain_length > 0.0 && domain_length.is_finite(), || {
        format!("domain_length must be positive, got {domain_length}")
    })?;
    let dx = domain_length / (nx + 1) as f64;
    let s = tau / (dx * dx);
    let n = shape.len();
    let mut t = Vec::with_capacity(5 * n);
    for j in 0..shape.ny {
        for i in 0..shape.nx {
            let p = j * shape.nx + i;
            t.push((p, p, -2.0 * dim as f64 * s));
            if i > 0 {
                t.push((p, p - 1, s));
            }
            if i + 1 < shape.nx {
                t.push((p, p + 1, s));
            }
            if j > 0 {
                t.push((p, p - shape.nx, s));
            }
            if j + 1 < shape.ny {
                t.push((p, p + shape.nx, s));
            }
        }
    }
    let matrix = CsrMatrix::from_triplets(n, n, &t)?;
    Ok(SpatialOperator { shape, delta_x: dx, tau, domain_length, matrix: Arc::new(matrix) })
}

/// Initial state `u_0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitialCondition {
    /// `sin(πx/L)` (times `sin(πy/L)` in 2D).
    SineBump,
    /// Independent uniform values on `[0, 1)` from a seeded ChaCha8 stream.
    Random { seed: u64 },
    /// Independent standard normal values from a seeded ChaCha8 stream.
    Gaussian { seed: u64 },
}

impl InitialCondition {
    pub fn parse(s: &str, seed: u64) -> Result<Self> {
        match s {
            "sine" => Ok(Self::SineBump),
            "random" => Ok(Self::Random { seed }),
            "gaussian" => Ok(Self::Gaussian { seed }),
            other => Err(Error::Config(format!("unknown initial condition '{other}' (expected sine|random|gaussian)"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::SineBump => "sine",
            Self::Random { .. } => "random",
            Self::Gaussian { .. } => "gaussian",
        }
    }

    pub fn sample(&self, op: &SpatialOperator) -> Vec<f64> {
        let n = op.n();
        match *self {
            Self::SineBump => {
                let k = std::f64::consts::PI / op.domain_length;
                (0..n)
                    .map(|p| {
                        let (x, y) = op.coords(p);
                        let v = (k * x).sin();
                        if op.dim() == 2 {
                            v * (k * y).sin()
                        } else {
                            v
                        }
                    })
                    .collect()
            }
            Self::Random { seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                (0..n).map(|_| rng.gen::<f64>()).collect()
            }
            Self::Gaussian { seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use faer::Mat;

    #[test]
    fn one_dimensional_stencil() {
        let op = build_laplacian(1, 3, 1, 1.0, 1.0).unwrap();
        assert_eq!(op.delta_x, 0.25);
        let m = &op.matrix;
        for i in 0..3 {
            assert_eq!(m.get(i, i), -32.0);
        }
        assert_eq!(m.get(0, 1), 16.0);
        assert_eq!(m.get(1, 0), 16.0);
        assert_eq!(m.get(0, 2), 0.0);
    }

    #[test]
    fn two_dimensional_stencil() {
        let op = build_laplacian(2, 2, 2, 1.0, 1.0).unwrap();
        let m = &op.matrix;
        assert_eq!(m.nrows(), 4);
        for i in 0..4 {
            assert_eq!(m.get(i, i), -36.0);
        }
        for (a, b) in [(0, 1), (2, 3), (0, 2), (1, 3)] {
            assert_eq!(m.get(a, b), 9.0);
            assert_eq!(m.get(b, a), 9.0);
        }
        assert_eq!(m.get(0, 3), 0.0);
        assert_eq!(m.get(1, 2), 0.0);
    }

    #[test]
    fn largest_eigenvalue_matches_closed_form() {
        let op = build_laplacian(1, 63, 1, 1.0, 1.0).unwrap();
        let ev = op.matrix.to_dense().self_adjoint_eigenvalues(faer::Side::Lower).unwrap();
        let max_mag = ev.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let dx = op.delta_x;
        let s = (63.0 * std::f64::consts::PI / 128.0).sin();
        let expect = 4.0 / (dx * dx) * s * s;
        assert!((max_mag - expect).abs() < 1e-10 * expect);
    }

    #[test]
    fn symmetric_negative_definite() {
        for (dim, nx, ny) in [(1, 17, 1), (2, 6, 5)] {
            let op = build_laplacian(dim, nx, ny, 0.7, 2.0).unwrap();
            let m = &op.matrix;
            assert_eq!(m.max_abs_diff(&m.transpose()), 0.0);
            let d: Mat<f64> = m.to_dense();
            let ev = d.self_adjoint_eigenvalues(faer::Side::Lower).unwrap();
            assert!(ev.iter().all(|&v| v < 0.0));
        }
    }

    #[test]
    fn row_sums_vanish_in_the_interior() {
        let op = build_laplacian(2, 5, 4, 1.0, 1.0).unwrap();
        for p in 0..op.n() {
            let (i, j) = (p % 5, p / 5);
            let s: f64 = op.matrix.row(p).1.iter().sum();
            let boundary = i == 0 || i == 4 || j == 0 || j == 3;
            if boundary {
                assert!(s < 0.0);
            } else {
                assert_eq!(s, 0.0);
            }
        }
    }

    #[test]
    fn tau_scales_exactly() {
        let a = build_laplacian(2, 4, 3, 1.0, 1.0).unwrap();
        let b = build_laplacian(2, 4, 3, 4.0, 1.0).unwrap();
        assert_eq!(b.matrix.max_abs_diff(&a.matrix.scaled(4.0)), 0.0);
    }

    #[test]
    fn courant_numbers() {
        let op = build_laplacian(1, 63, 1, 1.0, 1.0).unwrap();
        let dt = 0.64 * op.delta_x * op.delta_x / 2.0;
        assert!((op.courant_number(dt).unwrap() - 0.64).abs() < 1e-15);
        let op2 = build_laplacian(2, 16, 16, 1.0, 1.0).unwrap();
        let dt2 = op2.delta_t_for_courant(0.16).unwrap();
        assert!((op2.courant_number(dt2).unwrap() - 0.16).abs() < 1e-15);
        assert!(op.courant_number(0.0).is_err());
    }

    #[test]
    fn invalid_parameters() {
        assert!(build_laplacian(1, 0, 1, 1.0, 1.0).is_err());
        assert!(build_laplacian(1, 3, 1, 0.0, 1.0).is_err());
        assert!(build_laplacian(1, 3, 1, 1.0, -1.0).is_err());
        assert!(build_laplacian(3, 3, 1, 1.0, 1.0).is_err());
    }

    #[test]
    fn random_initial_state_is_reproducible() {
        let op = build_laplacian(1, 20, 1, 1.0, 1.0).unwrap();
        let ic = InitialCondition::Random { seed: 7 };
        assert_eq!(ic.sample(&op), ic.sample(&op));
        assert_ne!(ic.sample(&op), InitialCondition::Random { seed: 8 }.sample(&op));
    }
}
