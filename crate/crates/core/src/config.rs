//! Experiment configuration: flat `key = value` files with optional INI
//! sections, overridable by `--key=value` flags.

use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::intergrid::CoarseningKind;
use crate::mk::{CoarsestSolve, InnerBudget, Schedule, SolverConfig};
use crate::parcost::{CostModel, InversionCost};
use crate::spatial::{build_laplacian, InitialCondition, SpatialOperator};
use crate::theta::{assemble_fine_system, build_step_operators, FineSystem, Forcing, ThetaSchemeConfig};
use serde::Serialize;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    ThetaScheme,
    Parareal,
    TwoLevel,
    Multilevel,
}

impl Method {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "theta_scheme" | "theta" => Ok(Method::ThetaScheme),
            "parareal" => Ok(Method::Parareal),
            "two_level" => Ok(Method::TwoLevel),
            "multilevel" => Ok(Method::Multilevel),
            other => Err(Error::Config(format!("unknown method '{other}'"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Method::ThetaScheme => "theta_scheme",
            Method::Parareal => "parareal",
            Method::TwoLevel => "two_level",
            Method::Multilevel => "multilevel",
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentConfig {
    pub dim: usize,
    pub nx: usize,
    pub ny: usize,
    pub n_t: usize,
    pub theta: f64,
    pub courant: Option<f64>,
    pub delta_t: Option<f64>,
    pub tau: f64,
    pub length: f64,
    pub initial: String,
    pub seed: u64,
    pub method: Method,
    pub kind: String,
    pub nu: usize,
    pub schedule: String,
    pub levels: usize,
    pub mu: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub budget: usize,
    pub budget_mode: String,
    pub n_proc: usize,
    /// 0 selects the exact sequential coarsest solve.
    pub n_cgs: usize,
    pub threads: usize,
    pub inversion: String,
    pub oracle: bool,
    pub out: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dim: 1,
            nx: 128,
            ny: 1,
            n_t: 128,
            theta: 0.5,
            courant: Some(0.64),
            delta_t: None,
            tau: 1.0,
            length: 1.0,
            initial: "random".into(),
            seed: 0,
            method: Method::TwoLevel,
            kind: "T".into(),
            nu: 2,
            schedule: "auto".into(),
            levels: 2,
            mu: 1.0,
            tol: 1e-6,
            max_iter: 500,
            budget: 2,
            budget_mode: "last-one".into(),
            n_proc: 1,
            n_cgs: 0,
            threads: 1,
            inversion: "default".into(),
            oracle: true,
            out: PathBuf::from("out"),
        }
    }
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim().parse().map_err(|_| Error::Config(format!("invalid value '{v}' for '{key}'")))
}

fn opt_f64(key: &str, v: &str) -> Result<Option<f64>> {
    match v.trim() {
        "" | "none" => Ok(None),
        s => num(key, s).map(Some),
    }
}

fn boolean(key: &str, v: &str) -> Result<bool> {
    match v.trim() {
        "1" | "true" | "yes" | "on" => Ok(true),
        "0" | "false" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!("invalid boolean '{v}' for '{key}'"))),
    }
}

impl ExperimentConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim().replace('-', "_").as_str() {
            "dim" => self.dim = num(key, v)?,
            "nx" | "n_x" => self.nx = num(key, v)?,
            "ny" | "n_y" => self.ny = num(key, v)?,
            "nt" | "n_t" => self.n_t = num(key, v)?,
            "theta" => self.theta = num(key, v)?,
            "courant" | "c" => self.courant = opt_f64(key, v)?,
            "delta_t" | "dt" => self.delta_t = opt_f64(key, v)?,
            "tau" => self.tau = num(key, v)?,
            "length" => self.length = num(key, v)?,
            "initial" => self.initial = v.into(),
            "seed" => self.seed = num(key, v)?,
            "method" => self.method = Method::parse(v)?,
            "kind" | "coarsening" => self.kind = v.into(),
            "nu" => self.nu = num(key, v)?,
            "schedule" => self.schedule = v.into(),
            "levels" => self.levels = num(key, v)?,
            "mu" => self.mu = num(key, v)?,
            "tol" => self.tol = num(key, v)?,
            "max_iter" => self.max_iter = num(key, v)?,
            "budget" => self.budget = num(key, v)?,
            "budget_mode" => self.budget_mode = v.into(),
            "n_proc" => self.n_proc = num(key, v)?,
            "n_cgs" => self.n_cgs = num(key, v)?,
            "threads" => self.threads = num(key, v)?,
            "inversion" => self.inversion = v.into(),
            "oracle" => self.oracle = boolean(key, v)?,
            "out" => self.out = PathBuf::from(v),
            other => return Err(Error::Config(format!("unknown key '{other}'"))),
        }
        Ok(())
    }

    /// Reads a config file. Section headers are allowed but keys are global.
    pub fn load(path: &Path) -> Result<Self> {
        let ini = ini::Ini::load_from_file(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::default();
        for (_, props) in ini.iter() {
            for (k, v) in props.iter() {
                cfg.set(k, v)?;
            }
        }
        Ok(cfg)
    }

    /// Applies `--key=value` (or `key=value`) overrides.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, args: &[S]) -> Result<()> {
        for a in args {
            let a = a.as_ref().trim_start_matches("--");
            let (k, v) = a.split_once('=').ok_or_else(|| Error::Config(format!("expected key=value, got '{a}'")))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn from_sources<S: AsRef<str>>(file: Option<&Path>, overrides: &[S]) -> Result<Self> {
        let mut cfg = match file {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        cfg.apply_overrides(overrides)?;
        if let Ok(dir) = std::env::var("PINT_MK_OUT") {
            cfg.out = PathBuf::from(dir);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=2).contains(&self.dim) {
            return Err(Error::Config(format!("dim must be 1 or 2, got {}", self.dim)));
        }
        if self.courant.is_none() && self.delta_t.is_none() {
            return Err(Error::Config("set either courant or delta_t".into()));
        }
        if let (Some(c), Some(dt)) = (self.courant, self.delta_t) {
            let implied = self.spatial()?.courant_number(dt)?;
            if (implied - c).abs() > 1e-12 * c.abs().max(1.0) {
                return Err(Error::Config(format!("courant = {c} and delta_t = {dt} disagree (delta_t gives {implied})")));
            }
        }
        Ok(())
    }

    pub fn ny_effective(&self) -> usize {
        if self.dim == 1 {
            1
        } else {
            self.ny.max(1)
        }
    }

    pub fn spatial(&self) -> Result<SpatialOperator> {
        build_laplacian(self.dim, self.nx, self.ny_effective(), self.tau, self.length)
    }

    pub fn delta_t_for(&self, op: &SpatialOperator) -> Result<f64> {
        match (self.delta_t, self.courant) {
            (Some(dt), _) => Ok(dt),
            (None, Some(c)) => op.delta_t_for_courant(c),
            (None, None) => Err(Error::Config("set either courant or delta_t".into())),
        }
    }

    pub fn initial_condition(&self) -> Result<InitialCondition> {
        InitialCondition::parse(&self.initial, self.seed)
    }

    pub fn coarsening(&self) -> Result<CoarseningKind> {
        CoarseningKind::parse(&self.kind)
    }

    pub fn schedule(&self) -> Result<Schedule> {
        Schedule::parse(&self.schedule, self.levels, self.nu)
    }

    pub fn cost_model(&self) -> Result<CostModel> {
        let mut m = CostModel::for_dim(self.dim);
        m.inversion = match self.inversion.as_str() {
            "default" => m.inversion,
            "quadratic" => InversionCost::Quadratic,
            "linear" => InversionCost::Linear,
            "banded" => InversionCost::Banded,
            other => return Err(Error::Config(format!("unknown inversion cost '{other}'"))),
        };
        Ok(m)
    }

    pub fn solver(&self) -> Result<SolverConfig> {
        let mut s = SolverConfig::new(self.dim);
        s.mu = self.mu;
        s.tol = self.tol;
        s.max_outer = self.max_iter;
        s.inner = match self.budget_mode.as_str() {
            "last-one" => InnerBudget::OneBeforeCoarsest(self.budget),
            "uniform" => InnerBudget::Uniform(self.budget),
            other => return Err(Error::Config(format!("unknown budget_mode '{other}'"))),
        };
        s.coarsest = if self.n_cgs == 0 { CoarsestSolve::Exact } else { CoarsestSolve::Decoupled(self.n_cgs) };
        s.n_proc = self.n_proc;
        s.model = self.cost_model()?;
        s.executor = if self.threads > 1 { Executor::Threads(self.threads) } else { Executor::Serial };
        Ok(s)
    }

    /// Spatial operator and fine all-at-once system with zero forcing.
    pub fn problem(&self) -> Result<(SpatialOperator, FineSystem)> {
        let op = self.spatial()?;
        let dt = self.delta_t_for(&op)?;
        let ops = build_step_operators(&op, ThetaSchemeConfig::new(self.theta, dt, self.n_t)?)?;
        let u0 = self.initial_condition()?.sample(&op);
        let fine = assemble_fine_system(&ops, &u0, &Forcing::Zero)?;
        Ok((op, fine))
    }

    /// `# key = value` lines with every parameter, defaults included.
    pub fn provenance(&self) -> String {
        let v = serde_json::to_value(self).expect("config serializes");
        let mut out = String::new();
        if let serde_json::Value::Object(map) = v {
            for (k, v) in map {
                let s = match v {
                    serde_json::Value::String(s) => s,
                    serde_json::Value::Null => "none".into(),
                    other => other.to_string(),
                };
                out.push_str(&format!("# {k} = {s}\n"));
            }
        }
        out
    }
}
