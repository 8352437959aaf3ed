//! Experiment drivers behind the CLI: single solves, reference tables, sweeps
//! and spectra. Every CSV starts with `#` lines listing the full config.

use crate::config::{ExperimentConfig, Method};
use crate::error::{Error, Result};
use crate::intergrid::CoarseningKind;
use crate::linalg::{axpy, dot};
use crate::mk::{build_hierarchy, multilevel_solve, theta_scheme_ledger, Move, Schedule, SolveReport};
use crate::parareal::{parareal_solve, CoarsePropagator, IterationControl};
use crate::parcost::{report_relative, work_theta, CostLedger, RelativeReport};
use crate::spectral::{condition_number, full_spectrum, assemble_dense, Eigenvalue, SpectrumMeta};
use crate::theta::FineSystem;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

/// Published table values, bundled with the crate.
pub mod reference {
    use super::*;

    #[derive(Debug, Clone, Deserialize)]
    pub struct Table1Row {
        pub family: String,
        pub courant: f64,
        pub kappa: [f64; 3],
        pub kappa_a: f64,
    }

    #[derive(Debug, Clone, Deserialize)]
    pub struct Table1 {
        pub nx: usize,
        pub theta: f64,
        pub nu: [usize; 3],
        pub rows: Vec<Table1Row>,
    }

    #[derive(Debug, Clone, Deserialize)]
    pub struct Table2Row {
        pub nx: usize,
        pub nt: usize,
        #[serde(rename = "T")]
        pub t: [usize; 3],
        #[serde(rename = "TS")]
        pub ts: [usize; 3],
        #[serde(rename = "MGRIT")]
        pub mgrit: [usize; 3],
    }

    impl Table2Row {
        pub fn family(&self, kind: CoarseningKind) -> [usize; 3] {
            match kind {
                CoarseningKind::T => self.t,
                CoarseningKind::TS => self.ts,
                _ => self.mgrit,
            }
        }
    }

    #[derive(Debug, Clone, Deserialize)]
    pub struct Table2 {
        pub courant: f64,
        pub theta: f64,
        pub nu: [usize; 3],
        pub rows: Vec<Table2Row>,
    }

    /// `(iterations, T_CPU, T_CGS)`
    #[derive(Debug, Clone, Copy, Deserialize)]
    pub struct Table3Cell(pub usize, pub f64, pub f64);

    #[derive(Debug, Clone, Deserialize)]
    pub struct Table3Row {
        pub levels: usize,
        pub grid: String,
        pub p32: Option<Table3Cell>,
        pub p64: Option<Table3Cell>,
    }

    #[derive(Debug, Clone, Deserialize)]
    pub struct Table3 {
        pub nx: usize,
        pub nt: usize,
        pub courant: f64,
        pub theta: f64,
        pub n_cgs: usize,
        pub rows: Vec<Table3Row>,
    }

    #[derive(Debug, Clone, Deserialize)]
    pub struct Tables {
        pub table1: Table1,
        pub table2: Table2,
        pub table3: Table3,
    }

    pub fn tables() -> Tables {
        serde_json::from_str(include_str!("../data/reference_tables.json")).expect("bundled reference data parses")
    }
}

/// `‖u - u_seq‖₂ / ‖u_seq‖₂` against the sequential θ-scheme, streamed step by step.
pub fn oracle_error(fine: &FineSystem, u: &[f64]) -> Result<f64> {
    let n = fine.n();
    if u.len() != fine.dim() {
        return Err(Error::DimensionMismatch { expected: fine.dim(), found: u.len() });
    }
    let ops = &fine.ops;
    let mut cur = fine.rhs.block(0).map(|b| b.to_vec()).unwrap_or_else(|| vec![0.0; n]);
    let mut next = vec![0.0; n];
    let (mut num, mut den) = (0.0, 0.0);
    for k in 0..=fine.n_t() {
        if k > 0 {
            ops.phi.mul_vec(&cur, &mut next);
            if let Some(f) = fine.rhs.block(k) {
                axpy(1.0, f, &mut next);
            }
            ops.psi_lu.solve_in_place(&mut next);
            std::mem::swap(&mut cur, &mut next);
        }
        let uk = &u[k * n..(k + 1) * n];
        for (a, b) in uk.iter().zip(&cur) {
            num += (a - b) * (a - b);
        }
        den += dot(&cur, &cur);
    }
    Ok((num / den).sqrt())
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub method: String,
    pub schedule: String,
    pub coarsest: String,
    pub iterations: usize,
    pub converged: bool,
    pub final_residual: f64,
    pub error_vs_oracle: Option<f64>,
    pub relative_total: f64,
    pub cgs_fraction: f64,
    pub simulated_elapsed: u64,
    pub theta_elapsed: u64,
    pub work_theta: f64,
    #[serde(skip)]
    pub wall_seconds: f64,
    #[serde(skip)]
    pub residual_history: Vec<f64>,
    #[serde(skip)]
    pub ledger: CostLedger,
    #[serde(skip)]
    pub report: Option<SolveReport>,
}

impl RunSummary {
    pub fn text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "method: {}", self.method);
        if !self.schedule.is_empty() {
            let _ = writeln!(s, "schedule: {}", self.schedule);
            let _ = writeln!(s, "coarsest: {}", self.coarsest);
        }
        let _ = writeln!(s, "iterations: {}", self.iterations);
        let _ = writeln!(s, "converged: {}", self.converged);
        let _ = writeln!(s, "final_residual: {:.3e}", self.final_residual);
        if let Some(e) = self.error_vs_oracle {
            let _ = writeln!(s, "error_vs_oracle: {e:.3e}");
        }
        let _ = writeln!(s, "relative_total: {:.4}", self.relative_total);
        let _ = writeln!(s, "cgs_fraction: {:.4}", self.cgs_fraction);
        let _ = writeln!(s, "simulated_elapsed: {}", self.simulated_elapsed);
        let _ = writeln!(s, "theta_elapsed: {}", self.theta_elapsed);
        let _ = writeln!(s, "work_theta: {:.6e}", self.work_theta);
        s
    }
}

fn move_label(m: &Move) -> String {
    if m.kind == CoarseningKind::Space {
        "S".into()
    } else {
        format!("{}{}", m.kind.name(), m.nu)
    }
}

/// Runs the configured method on the configured problem.
pub fn run(cfg: &ExperimentConfig) -> Result<RunSummary> {
    let start = std::time::Instant::now();
    let (op, fine) = cfg.problem()?;
    let model = cfg.cost_model()?;
    let theta_ledger = theta_scheme_ledger(&fine, &model);
    let w_theta = work_theta(cfg.n_t, cfg.nx, cfg.ny_effective(), &model);
    let mut summary = RunSummary {
        method: cfg.method.name().into(),
        schedule: String::new(),
        coarsest: String::new(),
        iterations: 0,
        converged: true,
        final_residual: 0.0,
        error_vs_oracle: None,
        relative_total: 1.0,
        cgs_fraction: 0.0,
        simulated_elapsed: theta_ledger.elapsed(),
        theta_elapsed: theta_ledger.elapsed(),
        work_theta: w_theta,
        wall_seconds: 0.0,
        residual_history: Vec::new(),
        ledger: theta_ledger.clone(),
        report: None,
    };
    match cfg.method {
        Method::ThetaScheme => {
            summary.residual_history = vec![0.0];
        }
        Method::Parareal => {
            let coarse = CoarsePropagator::new(&fine.ops, cfg.nu)?;
            let mut ctl = IterationControl::new(cfg.dim);
            ctl.max_iterations = cfg.max_iter;
            ctl.tol = cfg.tol;
            ctl.n_proc = cfg.n_proc;
            ctl.model = model;
            let u0 = fine.rhs.block(0).expect("initial block").to_vec();
            let (u, rep) = parareal_solve(&fine.ops, &coarse, &u0, &crate::theta::Forcing::Zero, &ctl)?;
            summary.iterations = rep.iterations;
            summary.converged = rep.converged;
            summary.final_residual = *rep.residual_history.last().expect("history");
            summary.residual_history = rep.residual_history.clone();
            if cfg.oracle {
                summary.error_vs_oracle = Some(oracle_error(&fine, &u)?);
            }
            summary.ledger = rep.ledger;
        }
        Method::TwoLevel | Method::Multilevel => {
            let schedule = if cfg.method == Method::TwoLevel {
                let kind = cfg.coarsening()?;
                let nu = if kind == CoarseningKind::Space { 1 } else { cfg.nu };
                Schedule::Moves(vec![Move { kind, nu }])
            } else {
                cfg.schedule()?
            };
            let hier = build_hierarchy(&fine, op.shape, &schedule, &cfg.solver()?)?;
            summary.schedule = hier.moves().iter().map(move_label).collect::<Vec<_>>().join(",");
            let c = hier.coarsest();
            summary.coarsest = format!("{}x{}", c.system.n_steps(), c.shape);
            let (u, rep) = multilevel_solve(&hier, &fine.rhs)?;
            summary.iterations = rep.outer_iterations;
            summary.converged = rep.converged;
            summary.final_residual = rep.final_residual;
            summary.residual_history = rep.residual_history.clone();
            if cfg.oracle {
                summary.error_vs_oracle = Some(oracle_error(&fine, &u)?);
            }
            summary.ledger = rep.ledger.clone();
            summary.report = Some(rep);
        }
    }
    if cfg.method != Method::ThetaScheme {
        let rel = report_relative(&summary.ledger, &theta_ledger);
        summary.relative_total = rel.relative_total;
        summary.cgs_fraction = rel.cgs_fraction;
        summary.simulated_elapsed = summary.ledger.elapsed();
    }
    summary.wall_seconds = start.elapsed().as_secs_f64();
    Ok(summary)
}

fn create_out(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    Ok(())
}

/// Writes `rows` as CSV preceded by `#` provenance lines.
pub fn write_csv<T: Serialize>(path: &Path, provenance: &str, rows: &[T]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(provenance.as_bytes())?;
    let mut w = csv::Writer::from_writer(f);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct HistoryRow {
    iteration: usize,
    residual: f64,
}

/// `solve`: report.csv, summary.txt and ledger.csv in the output directory.
pub fn cmd_solve(cfg: &ExperimentConfig) -> Result<RunSummary> {
    let summary = run(cfg)?;
    create_out(&cfg.out)?;
    let prov = cfg.provenance();
    let rows: Vec<HistoryRow> =
        summary.residual_history.iter().enumerate().map(|(i, &r)| HistoryRow { iteration: i, residual: r }).collect();
    write_csv(&cfg.out.join("report.csv"), &prov, &rows)?;
    std::fs::write(cfg.out.join("summary.txt"), format!("{prov}{}", summary.text()))?;
    let mut f = std::fs::File::create(cfg.out.join("ledger.csv"))?;
    f.write_all(prov.as_bytes())?;
    summary.ledger.write_csv(&mut f)?;
    Ok(summary)
}

/// Time steps for the condition-number table: a fixed final time `T = 10.24 Δx² / (2τ)`
/// scaled so that `n_t = 32` at `C = 0.32`.
pub fn table1_steps(courant: f64) -> usize {
    (10.24 / courant).round() as usize
}

#[derive(Debug, Clone, Serialize)]
pub struct Table1Out {
    pub family: String,
    pub courant: f64,
    pub n_t: usize,
    pub nu: usize,
    pub kappa: f64,
    pub reference: f64,
    pub rel_diff: f64,
    pub pass: bool,
}

/// Condition numbers of `𝒜_h 𝒬_h` (and of `𝒜_h`, reported with `nu = 0`).
pub fn table1(base: &ExperimentConfig, families: &[CoarseningKind], n_t: Option<usize>) -> Result<Vec<Table1Out>> {
    let data = reference::tables().table1;
    let mut out = Vec::new();
    let mut seen_a = Vec::new();
    for row in &data.rows {
        let kind = CoarseningKind::parse(&row.family)?;
        if !families.contains(&kind) {
            continue;
        }
        let mut cfg = base.clone();
        cfg.dim = 1;
        cfg.nx = data.nx;
        cfg.theta = data.theta;
        cfg.courant = Some(row.courant);
        cfg.delta_t = None;
        cfg.n_t = n_t.unwrap_or_else(|| table1_steps(row.courant));
        let (op, fine) = cfg.problem()?;
        if !seen_a.contains(&cfg.n_t) {
            seen_a.push(cfg.n_t);
            let a = assemble_dense(fine.dim(), |v| {
                let mut y = vec![0.0; v.len()];
                fine.matrix.matvec(v, &mut y);
                y
            })?;
            let k = condition_number(&a)?;
            out.push(Table1Out::new("A_h", row.courant, cfg.n_t, 0, k, row.kappa_a));
        }
        for (i, &nu) in data.nu.iter().enumerate() {
            let hier = build_hierarchy(&fine, op.shape, &Schedule::Moves(vec![Move { kind, nu }]), &cfg.solver()?)?;
            let m = assemble_dense(fine.dim(), |v| hier.apply_aq(0, v))?;
            let k = condition_number(&m)?;
            out.push(Table1Out::new(kind.name(), row.courant, cfg.n_t, nu, k, row.kappa[i]));
        }
    }
    Ok(out)
}

impl Table1Out {
    fn new(family: &str, courant: f64, n_t: usize, nu: usize, kappa: f64, reference: f64) -> Self {
        let rel_diff = (kappa - reference) / reference;
        Self { family: family.into(), courant, n_t, nu, kappa, reference, rel_diff, pass: rel_diff.abs() <= 0.05 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Table2Out {
    pub nx: usize,
    pub nt: usize,
    pub family: String,
    pub nu: usize,
    pub iterations: usize,
    pub reference: usize,
    pub diff: i64,
    pub pass: bool,
    pub final_residual: f64,
    pub error_vs_oracle: Option<f64>,
}

/// Two-level iteration counts for the 1D grids of the bundled table.
pub fn table2(base: &ExperimentConfig, grids: Option<&[usize]>) -> Result<Vec<Table2Out>> {
    let data = reference::tables().table2;
    let mut out = Vec::new();
    for row in &data.rows {
        if grids.is_some_and(|g| !g.contains(&row.nx)) {
            continue;
        }
        let mut cfg = base.clone();
        cfg.dim = 1;
        cfg.nx = row.nx;
        cfg.n_t = row.nt;
        cfg.theta = data.theta;
        cfg.courant = Some(data.courant);
        cfg.delta_t = None;
        cfg.method = Method::TwoLevel;
        cfg.n_cgs = 0;
        let (op, fine) = cfg.problem()?;
        for kind in [CoarseningKind::T, CoarseningKind::TS, CoarseningKind::Mgrit] {
            for (i, &nu) in data.nu.iter().enumerate() {
                let hier = build_hierarchy(&fine, op.shape, &Schedule::Moves(vec![Move { kind, nu }]), &cfg.solver()?)?;
                let (u, rep) = multilevel_solve(&hier, &fine.rhs)?;
                let error_vs_oracle = if cfg.oracle { Some(oracle_error(&fine, &u)?) } else { None };
                let reference = row.family(kind)[i];
                let diff = rep.outer_iterations as i64 - reference as i64;
                out.push(Table2Out {
                    nx: row.nx,
                    nt: row.nt,
                    family: kind.name().into(),
                    nu,
                    iterations: rep.outer_iterations,
                    reference,
                    diff,
                    pass: diff.abs() <= 1 && rep.converged,
                    final_residual: rep.final_residual,
                    error_vs_oracle,
                });
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct Table3Out {
    pub levels: usize,
    pub coarsest: String,
    pub reference_coarsest: String,
    pub schedule: String,
    pub n_proc: usize,
    pub iterations: usize,
    pub reference_iterations: Option<usize>,
    pub relative_total: f64,
    pub reference_t_cpu: Option<f64>,
    pub cgs_fraction: f64,
    pub reference_t_cgs: Option<f64>,
    pub final_residual: f64,
    pub error_vs_oracle: Option<f64>,
    pub pass: bool,
}

/// Table 3 configuration for `levels` levels.
pub fn table3_config(base: &ExperimentConfig, levels: usize, n_proc: usize) -> ExperimentConfig {
    let data = reference::tables().table3;
    let mut cfg = base.clone();
    cfg.dim = 2;
    cfg.nx = data.nx;
    cfg.ny = data.nx;
    cfg.n_t = data.nt;
    cfg.theta = data.theta;
    cfg.courant = Some(data.courant);
    cfg.delta_t = None;
    cfg.method = Method::Multilevel;
    cfg.schedule = "auto".into();
    cfg.levels = levels;
    cfg.nu = 2;
    cfg.n_cgs = data.n_cgs;
    cfg.n_proc = n_proc;
    cfg
}

/// Multilevel runs with the alternate TS schedule. Each run is re-costed for every processor count.
pub fn table3(base: &ExperimentConfig, levels: &[usize], procs: &[usize]) -> Result<Vec<Table3Out>> {
    let data = reference::tables().table3;
    let mut out = Vec::new();
    for &l in levels {
        let cfg = table3_config(base, l, procs.first().copied().unwrap_or(32));
        let s = run(&cfg)?;
        let rep = s.report.as_ref().expect("multilevel report");
        let model = cfg.cost_model()?;
        let theta = s.theta_elapsed;
        let reference_row = data.rows.iter().find(|r| r.levels == l);
        for &p in procs {
            let ledger = rep.ledger_for(&model, p);
            let e = ledger.elapsed() as f64;
            let rel = RelativeReport {
                relative_total: e / theta as f64,
                cgs_fraction: ledger.elapsed_from_level(2) as f64 / e,
            };
            let cell = reference_row.and_then(|r| match p {
                32 => r.p32,
                64 => r.p64,
                _ => None,
            });
            let reference_iterations = cell.map(|c| c.0);
            let pass = s.converged
                && reference_iterations.is_none_or(|pi| (s.iterations as i64 - pi as i64).abs() <= 1)
                && rel.relative_total < 1.0
                && (0.85..=0.98).contains(&rel.cgs_fraction);
            out.push(Table3Out {
                levels: l,
                coarsest: s.coarsest.clone(),
                reference_coarsest: reference_row.map(|r| r.grid.clone()).unwrap_or_default(),
                schedule: s.schedule.clone(),
                n_proc: p,
                iterations: s.iterations,
                reference_iterations,
                relative_total: rel.relative_total,
                reference_t_cpu: cell.map(|c| c.1),
                cgs_fraction: rel.cgs_fraction,
                reference_t_cgs: cell.map(|c| c.2),
                final_residual: s.final_residual,
                error_vs_oracle: s.error_vs_oracle,
                pass,
            });
        }
    }
    Ok(out)
}

/// Writes a table CSV into the output directory and returns its path.
pub fn write_table<T: Serialize>(cfg: &ExperimentConfig, name: &str, extra: &str, rows: &[T]) -> Result<PathBuf> {
    create_out(&cfg.out)?;
    let path = cfg.out.join(format!("{name}.csv"));
    write_csv(&path, &format!("# table = {name}\n{extra}{}", cfg.provenance()), rows)?;
    Ok(path)
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub axis: String,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
    pub relative_total: f64,
    pub cgs_fraction: f64,
    pub schedule: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    Courant,
    NProc,
    Levels,
}

impl SweepAxis {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "courant" => Ok(Self::Courant),
            "n_proc" | "nproc" => Ok(Self::NProc),
            "levels" => Ok(Self::Levels),
            other => Err(Error::Config(format!("unknown sweep axis '{other}'"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Courant => "courant",
            Self::NProc => "n_proc",
            Self::Levels => "levels",
        }
    }
}

/// One run per axis value. The `n_proc` axis sets `N_proc = N_CGS`.
pub fn sweep(base: &ExperimentConfig, axis: SweepAxis, values: &[f64]) -> Result<Vec<SweepRow>> {
    let mut out = Vec::new();
    for &v in values {
        let mut cfg = base.clone();
        match axis {
            SweepAxis::Courant => {
                cfg.courant = Some(v);
                cfg.delta_t = None;
            }
            SweepAxis::NProc => {
                cfg.n_proc = v as usize;
                cfg.n_cgs = v as usize;
            }
            SweepAxis::Levels => {
                cfg.levels = v as usize;
                cfg.method = Method::Multilevel;
            }
        }
        let s = run(&cfg)?;
        out.push(SweepRow {
            axis: axis.name().into(),
            value: v,
            iterations: s.iterations,
            converged: s.converged,
            relative_total: s.relative_total,
            cgs_fraction: s.cgs_fraction,
            schedule: s.schedule,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct SpectrumSummary {
    pub eigenvalues: usize,
    pub kappa_a: f64,
    pub kappa_aq: f64,
    /// Largest |Im| and real range of `σ(𝒜_h)`.
    pub a_max_imag: f64,
    pub a_re_min: f64,
    pub a_re_max: f64,
    pub near_mu: usize,
}

/// Spectra of `𝒜_h` and `𝒜_h 𝒬_h` for a two-level configuration.
pub fn cmd_spectrum(cfg: &ExperimentConfig) -> Result<SpectrumSummary> {
    let (op, fine) = cfg.problem()?;
    let kind = cfg.coarsening()?;
    let hier = build_hierarchy(&fine, op.shape, &Schedule::Moves(vec![Move { kind, nu: cfg.nu }]), &cfg.solver()?)?;
    let meta = SpectrumMeta {
        source: "A_h".into(),
        nx: Some(cfg.nx),
        n_t: Some(cfg.n_t),
        nu: Some(cfg.nu),
        courant: cfg.courant,
        theta: Some(cfg.theta),
        kind: Some(kind.name().into()),
        mu: Some(cfg.mu),
        ..Default::default()
    };
    let a = full_spectrum(
        fine.dim(),
        |v| {
            let mut y = vec![0.0; v.len()];
            fine.matrix.matvec(v, &mut y);
            y
        },
        meta.clone(),
        true,
    )?;
    let aq = full_spectrum(fine.dim(), |v| hier.apply_aq(0, v), SpectrumMeta { source: "A_h*Q_h".into(), ..meta }, true)?;
    create_out(&cfg.out)?;
    let tag = format!("{}_nu{}", kind.name(), cfg.nu);
    a.write(&cfg.out.join("spectrum_A.csv"))?;
    aq.write(&cfg.out.join(format!("spectrum_AQ_{tag}.csv")))?;
    let fold = |f: fn(&Eigenvalue) -> f64, init: f64, pick: fn(f64, f64) -> f64| a.eigenvalues.iter().map(f).fold(init, pick);
    Ok(SpectrumSummary {
        eigenvalues: aq.eigenvalues.len(),
        kappa_a: a.kappa.unwrap_or(f64::NAN),
        kappa_aq: aq.kappa.unwrap_or(f64::NAN),
        a_max_imag: fold(|e| e.im.abs(), 0.0, f64::max),
        a_re_min: fold(|e| e.re, f64::INFINITY, f64::min),
        a_re_max: fold(|e| e.re, f64::NEG_INFINITY, f64::max),
        near_mu: aq.count_near(Eigenvalue { re: cfg.mu, im: 0.0 }, 1e-8),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(method: &str) -> ExperimentConfig {
        let mut c = ExperimentConfig::default();
        c.apply_overrides(&["--nx=16", "--n_t=16", &format!("--method={method}"), "--nu=4"]).unwrap();
        c
    }

    #[test]
    fn reference_data_layout() {
        let t = reference::tables();
        assert_eq!(t.table1.rows.len(), 9);
        assert_eq!(t.table2.rows.len() * 9, 36);
        assert_eq!(t.table3.rows.iter().filter(|r| r.p64.is_some()).count(), 3);
        assert_eq!(t.table3.rows.iter().filter(|r| r.p32.is_some()).count(), 5);
    }

    #[test]
    fn table1_steps_fix_the_final_time() {
        assert_eq!([0.16, 0.32, 0.64].map(table1_steps), [64, 32, 16]);
    }

    #[test]
    fn every_method_reaches_the_oracle() {
        for m in ["theta_scheme", "parareal", "two_level", "multilevel"] {
            let mut c = small(m);
            c.levels = 3;
            let s = run(&c).unwrap();
            assert!(s.converged, "{m}");
            if m != "theta_scheme" {
                assert!(s.final_residual <= 1e-6, "{m}");
                assert!(s.error_vs_oracle.unwrap() <= 1e-4, "{m}");
            }
        }
    }

    #[test]
    fn theta_scheme_is_its_own_baseline() {
        let s = run(&small("theta_scheme")).unwrap();
        assert_eq!(s.relative_total, 1.0);
        assert_eq!(s.iterations, 0);
    }

    #[test]
    fn solve_outputs_are_reproducible() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = small("two_level");
        c.out = dir.path().join("a");
        cmd_solve(&c).unwrap();
        let first: Vec<Vec<u8>> =
            ["report.csv", "summary.txt", "ledger.csv"].iter().map(|f| std::fs::read(c.out.join(f)).unwrap()).collect();
        cmd_solve(&c).unwrap();
        for (f, bytes) in ["report.csv", "summary.txt", "ledger.csv"].iter().zip(first) {
            assert_eq!(std::fs::read(c.out.join(f)).unwrap(), bytes, "{f}");
        }
        let report = std::fs::read_to_string(c.out.join("report.csv")).unwrap();
        assert!(report.lines().next().unwrap().starts_with('#'));
        assert!(report.contains("iteration,residual"));
    }

    #[test]
    fn small_table2_grid() {
        let mut c = ExperimentConfig::default();
        c.oracle = false;
        let rows = table2(&c, Some(&[128])).unwrap();
        assert_eq!(rows.len(), 9);
        assert!(rows.iter().all(|r| r.final_residual <= 1e-6));
    }

    #[test]
    fn courant_sweep_rows() {
        let rows = sweep(&small("two_level"), SweepAxis::Courant, &[0.16, 0.32]).unwrap();
        assert_eq!(rows.len(), 2);
        assert!(rows.iter().all(|r| r.converged));
    }

    #[test]
    fn spectrum_files_have_one_row_per_eigenvalue() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = ExperimentConfig::default();
        c.apply_overrides(&["--nx=5", "--n_t=4", "--nu=2"]).unwrap();
        c.out = dir.path().to_path_buf();
        let s = cmd_spectrum(&c).unwrap();
        assert_eq!(s.eigenvalues, 5 * 5);
        let text = std::fs::read_to_string(dir.path().join("spectrum_AQ_T_nu2.csv")).unwrap();
        assert_eq!(text.lines().count(), 1 + 25);
        assert!(dir.path().join("spectrum_AQ_T_nu2.json").exists());
        assert!(s.near_mu >= 5);
    }
}
