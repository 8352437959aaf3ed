//! Dense spectra and condition numbers of assembled operators.

use crate::error::{ensure, Error, Result};
use crate::intergrid::{CoarseningKind, IntergridPair};
use crate::linalg::place_block;
use crate::theta::{BlockBidiagonal, PartitionedSystem};
use faer::linalg::solvers::Solve;
use faer::Mat;
use serde::Serialize;
use std::cmp::Ordering;
use std::io::Write;
use std::path::Path;

/// Largest block dimension accepted by the blockwise route.
pub const MAX_BLOCK_DIM: usize = 4096;
/// Largest operator dimension accepted by dense assembly.
pub const MAX_DENSE_DIM: usize = 20000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Eigenvalue {
    pub re: f64,
    pub im: f64,
}

impl Eigenvalue {
    pub fn dist(&self, other: &Eigenvalue) -> f64 {
        (self.re - other.re).hypot(self.im - other.im)
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct SpectrumMeta {
    pub source: String,
    pub dim: Option<usize>,
    pub nx: Option<usize>,
    pub n_t: Option<usize>,
    pub nu: Option<usize>,
    pub courant: Option<f64>,
    pub theta: Option<f64>,
    pub kind: Option<String>,
    pub mu: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SpectrumReport {
    pub meta: SpectrumMeta,
    pub kappa: Option<f64>,
    #[serde(skip)]
    pub eigenvalues: Vec<Eigenvalue>,
}

impl SpectrumReport {
    /// Writes `re,im` rows to `path` and the metadata to `path` with a `.json` extension.
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["re", "im"])?;
        for e in &self.eigenvalues {
            w.write_record([format!("{:.17e}", e.re), format!("{:.17e}", e.im)])?;
        }
        w.flush()?;
        let mut f = std::fs::File::create(path.with_extension("json"))?;
        serde_json::to_writer_pretty(&mut f, self)?;
        writeln!(f)?;
        Ok(())
    }

    /// Eigenvalues within `tol` of `z`.
    pub fn count_near(&self, z: Eigenvalue, tol: f64) -> usize {
        self.eigenvalues.iter().filter(|e| e.dist(&z) <= tol).count()
    }
}

/// Assembles a matrix-free operator column by column.
pub fn assemble_dense(dim: usize, mut apply: impl FnMut(&[f64]) -> Vec<f64>) -> Result<Mat<f64>> {
    ensure(dim <= MAX_DENSE_DIM, || format!("dimension {dim} exceeds the dense limit {MAX_DENSE_DIM}"))?;
    let mut m = Mat::<f64>::zeros(dim, dim);
    let mut e = vec![0.0; dim];
    for j in 0..dim {
        e[j] = 1.0;
        let col = apply(&e);
        e[j] = 0.0;
        ensure(col.len() == dim, || "operator changed the vector length".into())?;
        for (i, v) in col.into_iter().enumerate() {
            m[(i, j)] = v;
        }
    }
    Ok(m)
}

pub fn eigenvalues(m: &Mat<f64>) -> Result<Vec<Eigenvalue>> {
    if m.nrows() == 0 {
        return Ok(Vec::new());
    }
    let ev = m.eigenvalues().map_err(|e| Error::Dense(format!("{e:?}")))?;
    let mut out: Vec<Eigenvalue> = ev.into_iter().map(|z| Eigenvalue { re: z.re, im: z.im }).collect();
    sort_lex(&mut out);
    Ok(out)
}

/// `σ_max / σ_min` from a dense SVD.
pub fn condition_number(m: &Mat<f64>) -> Result<f64> {
    let s = m.singular_values().map_err(|e| Error::Dense(format!("{e:?}")))?;
    let max = s.iter().cloned().fold(0.0, f64::max);
    let min = s.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(max / min)
}

/// Spectrum of an assembled operator, with its condition number when `with_kappa`.
pub fn full_spectrum(
    dim: usize,
    apply: impl FnMut(&[f64]) -> Vec<f64>,
    meta: SpectrumMeta,
    with_kappa: bool,
) -> Result<SpectrumReport> {
    let m = assemble_dense(dim, apply)?;
    let kappa = if with_kappa { Some(condition_number(&m)?) } else { None };
    Ok(SpectrumReport { meta: SpectrumMeta { dim: Some(dim), ..meta }, kappa, eigenvalues: eigenvalues(&m)? })
}

fn sort_lex(v: &mut [Eigenvalue]) {
    v.sort_by(|a, b| a.re.partial_cmp(&b.re).unwrap_or(Ordering::Equal).then(a.im.partial_cmp(&b.im).unwrap_or(Ordering::Equal)));
}

/// Distance between two eigenvalue multisets: after a lexicographic sort each
/// value is matched to the nearest unmatched value of the other set, and the
/// largest matched distance is returned. `None` if the sizes differ.
pub fn multiset_distance(a: &[Eigenvalue], b: &[Eigenvalue]) -> Option<f64> {
    if a.len() != b.len() {
        return None;
    }
    let (mut a, mut b) = (a.to_vec(), b.to_vec());
    sort_lex(&mut a);
    sort_lex(&mut b);
    let mut used = vec![false; b.len()];
    let mut worst: f64 = 0.0;
    for x in &a {
        let (j, d) = b
            .iter()
            .enumerate()
            .filter(|(j, _)| !used[*j])
            .map(|(j, y)| (j, x.dist(y)))
            .min_by(|p, q| p.1.partial_cmp(&q.1).unwrap_or(Ordering::Equal))
            .expect("sizes match");
        used[j] = true;
        worst = worst.max(d);
    }
    Some(worst)
}

/// `(Y_k, Z_k)` restricted to the fine steps of coarse step `k`.
fn local_pair(part: &PartitionedSystem, pair: &IntergridPair, k: usize) -> (Mat<f64>, Mat<f64>) {
    let n = pair.fine_block();
    let m = pair.coarse_block();
    let range = part.time_range(k);
    let rows = range.len() * n;
    let mut z = Mat::<f64>::zeros(rows, m);
    let mut y = Mat::<f64>::zeros(rows, m);
    let (zs, ys) = match pair.agglomeration() {
        Some(agg) => (agg.z_matrix(), agg.y_matrix()),
        None => (crate::linalg::CsrMatrix::identity(n), crate::linalg::CsrMatrix::identity(n)),
    };
    for b in 0..range.len() {
        place_block(&mut z, b * n, 0, &zs, 1.0);
        place_block(&mut y, b * n, 0, &ys, 1.0);
    }
    (y, z)
}

/// `σ(𝒜_h 𝒬_h)` from the `k = 0` and `k = 1` diagonal blocks; the `k = 1`
/// block spectrum is repeated for every coarse step.
pub fn blockwise_spectrum(
    part: &PartitionedSystem,
    pair: &IntergridPair,
    coarse: &BlockBidiagonal,
    mu: f64,
) -> Result<SpectrumReport> {
    if !matches!(pair.kind, CoarseningKind::T | CoarseningKind::TS) {
        return Err(Error::Unsupported(format!("blockwise spectrum needs a block-diagonal pair, got {}", pair.kind.name())));
    }
    ensure(part.nu == pair.nu && part.n_coarse == pair.n_coarse_steps, || "partition does not match the pair".into())?;
    let mut all = Vec::new();
    for k in 0..=1.min(part.n_coarse) {
        let a = part.diag_block(k).to_dense();
        ensure(a.nrows() <= MAX_BLOCK_DIM, || format!("block dimension {} exceeds {MAX_BLOCK_DIM}", a.nrows()))?;
        let (y, z) = local_pair(part, pair, k);
        let ah = coarse.diag_block(k).to_dense().partial_piv_lu();
        let yt = y.transpose().to_owned();
        let rows = a.nrows();
        let q = Mat::<f64>::identity(rows, rows) - &z * ah.solve(&yt * &a) + (&z * ah.solve(&yt)) * faer::Scale(mu);
        let ev = eigenvalues(&(&a * &q))?;
        let copies = if k == 0 { 1 } else { part.n_coarse };
        for _ in 0..copies {
            all.extend_from_slice(&ev);
        }
    }
    sort_lex(&mut all);
    let meta = SpectrumMeta {
        source: "diag-block".into(),
        dim: Some(all.len()),
        nu: Some(pair.nu),
        kind: Some(pair.kind.name().into()),
        mu: Some(mu),
        ..Default::default()
    };
    Ok(SpectrumReport { meta, kappa: None, eigenvalues: all })
}
