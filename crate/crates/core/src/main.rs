use clap::{Args, Parser, Subcommand};
use pint_mk::acceptance;
use pint_mk::bench::{self, SweepAxis};
use pint_mk::config::ExperimentConfig;
use pint_mk::intergrid::CoarseningKind;
use pint_mk::Error;
use std::path::PathBuf;
use std::process::ExitCode;

/// Parallel-in-time multilevel Krylov solver for the heat equation.
#[derive(Parser)]
#[command(name = "pint-mk", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// INI-style key = value file
    #[arg(long)]
    config: Option<PathBuf>,
    /// `--key=value` overrides applied after the config file
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "--KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured method once
    Solve(Common),
    /// Reproduce one of the reference tables as CSV
    Table {
        /// 1, 2 or 3
        id: u8,
        /// table 1: families to include
        #[arg(long, value_delimiter = ',', default_value = "T,TS,MGRIT")]
        families: Vec<String>,
        /// table 1: fixed n_t instead of the fixed-final-time rule
        #[arg(long)]
        steps: Option<usize>,
        /// table 2: spatial grids to run
        #[arg(long, value_delimiter = ',')]
        grids: Option<Vec<usize>>,
        /// table 3: level counts
        #[arg(long, value_delimiter = ',', default_value = "7,8,9,10,11")]
        levels: Vec<usize>,
        /// table 3: processor counts
        #[arg(long, value_delimiter = ',', default_value = "32,64")]
        procs: Vec<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Spectra of A_h and A_h Q_h for a two-level configuration
    Spectrum(Common),
    /// One run per value of a parameter
    Sweep {
        /// courant, n_proc or levels
        axis: String,
        #[arg(long, value_delimiter = ',')]
        values: Option<Vec<f64>>,
        #[command(flatten)]
        common: Common,
    },
    /// Run the acceptance suite
    Check {
        /// criterion numbers to run (default: all)
        #[arg(long, value_delimiter = ',')]
        only: Option<Vec<u8>>,
    },
}

fn load(c: &Common) -> pint_mk::Result<ExperimentConfig> {
    ExperimentConfig::from_sources(c.config.as_deref(), &c.overrides)
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::InvalidParameter(_) | Error::Divisibility { .. } => 2,
        Error::NotConverged { .. } => 3,
        _ => 1,
    }
}

fn run(cli: Cli) -> pint_mk::Result<u8> {
    match cli.command {
        Command::Solve(c) => {
            let cfg = load(&c)?;
            let s = bench::cmd_solve(&cfg)?;
            print!("{}", s.text());
            println!("output: {}", cfg.out.display());
            if !s.converged {
                return Err(Error::NotConverged { iterations: s.iterations, residual: s.final_residual });
            }
        }
        Command::Table { id, families, steps, grids, levels, procs, common } => {
            let cfg = load(&common)?;
            let (path, passed, total) = match id {
                1 => {
                    let kinds = families.iter().map(|f| CoarseningKind::parse(f)).collect::<pint_mk::Result<Vec<_>>>()?;
                    let rows = bench::table1(&cfg, &kinds, steps)?;
                    let extra = match steps {
                        Some(n) => format!("# n_t = {n}\n"),
                        None => "# n_t = round(10.24 / C)\n".into(),
                    };
                    (bench::write_table(&cfg, "table1", &extra, &rows)?, rows.iter().filter(|r| r.pass).count(), rows.len())
                }
                2 => {
                    let rows = bench::table2(&cfg, grids.as_deref())?;
                    (bench::write_table(&cfg, "table2", "", &rows)?, rows.iter().filter(|r| r.pass).count(), rows.len())
                }
                3 => {
                    let rows = bench::table3(&cfg, &levels, &procs)?;
                    (bench::write_table(&cfg, "table3", "", &rows)?, rows.iter().filter(|r| r.pass).count(), rows.len())
                }
                other => return Err(Error::Config(format!("unknown table {other}"))),
            };
            println!("table {id}: {passed}/{total} rows within tolerance");
            println!("output: {}", path.display());
        }
        Command::Spectrum(c) => {
            let cfg = load(&c)?;
            let s = bench::cmd_spectrum(&cfg)?;
            println!("eigenvalues: {}", s.eigenvalues);
            println!("kappa(A_h): {:.4}", s.kappa_a);
            println!("kappa(A_h Q_h): {:.4}", s.kappa_aq);
            println!("sigma(A_h): re in [{:.6}, {:.6}], max |im| {:.2e}", s.a_re_min, s.a_re_max, s.a_max_imag);
            println!("eigenvalues within 1e-8 of mu: {}", s.near_mu);
            println!("output: {}", cfg.out.display());
        }
        Command::Sweep { axis, values, common } => {
            let cfg = load(&common)?;
            let axis = SweepAxis::parse(&axis)?;
            let values = values.unwrap_or_else(|| match axis {
                SweepAxis::Courant => vec![0.16, 0.32, 0.64],
                SweepAxis::NProc => vec![1.0, 2.0, 4.0, 8.0, 16.0, 32.0],
                SweepAxis::Levels => vec![2.0, 3.0, 4.0, 5.0],
            });
            let rows = bench::sweep(&cfg, axis, &values)?;
            for r in &rows {
                println!("{} = {}: {} iterations, relative time {:.4}, cgs {:.4}", r.axis, r.value, r.iterations, r.relative_total, r.cgs_fraction);
            }
            let path = bench::write_table(&cfg, &format!("sweep_{}", axis.name()), "", &rows)?;
            println!("output: {}", path.display());
        }
        Command::Check { only } => {
            let all = acceptance::criteria();
            let mut failed = 0;
            for (id, f) in all {
                if only.as_ref().is_some_and(|o| !o.contains(&id)) {
                    continue;
                }
                match f() {
                    Ok(c) => {
                        failed += usize::from(!c.passed);
                        println!("{c}");
                    }
                    Err(e) => {
                        failed += 1;
                        println!("[FAIL] {id}. error: {e}");
                    }
                }
            }
            if failed > 0 {
                println!("{failed} criteria failed");
                return Ok(4);
            }
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
