//! Simulated-parallel cost accounting and the analytic work estimates.
//!
//! Costs are integer model units. Independent tasks of one charge are dealt
//! round-robin to virtual processors; the charge advances simulated time by
//! the largest processor load.

use crate::error::{ensure, Result};
use serde::Serialize;
use std::collections::BTreeMap;
use std::io::Write;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum Phase {
    Matvec,
    Restriction,
    Interpolation,
    CoarseSolve,
    Orthogonalization,
    /// Independent fine propagation over time subintervals.
    FineSweep,
    /// Inherently sequential time stepping (θ-scheme, parareal coarse sweeps).
    Sequential,
}

impl Phase {
    pub fn name(&self) -> &'static str {
        match self {
            Phase::Matvec => "matvec",
            Phase::Restriction => "restriction",
            Phase::Interpolation => "interpolation",
            Phase::CoarseSolve => "coarse_solve",
            Phase::Orthogonalization => "orthogonalization",
            Phase::FineSweep => "fine_sweep",
            Phase::Sequential => "sequential",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum InversionCost {
    /// `n²`, the dense-inverse estimate used for 2D problems.
    Quadratic,
    /// `n`, tridiagonal solves in 1D.
    Linear,
    /// `n · (kl + ku + 1)` from the actual band of the factorization.
    Banded,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CostModel {
    pub inversion: InversionCost,
    /// Extra cost added to every task; zero means free communication.
    pub latency: u64,
}

impl CostModel {
    pub fn for_dim(dim: usize) -> Self {
        let inversion = if dim >= 2 { InversionCost::Quadratic } else { InversionCost::Linear };
        Self { inversion, latency: 0 }
    }

    pub fn c_inv(&self, n: usize, bandwidth: (usize, usize)) -> u64 {
        let n = n as u64;
        match self.inversion {
            InversionCost::Quadratic => n * n,
            InversionCost::Linear => n,
            InversionCost::Banded => n * (bandwidth.0 + bandwidth.1 + 1) as u64,
        }
    }

    pub fn c_mv(&self, nnz: usize) -> u64 {
        (nnz as u64).max(1)
    }

    pub fn c_vec(&self, n: usize) -> u64 {
        (n as u64).max(1)
    }

    /// Analytic inversion cost used by the work formulas.
    pub fn c_inv_formula(&self, n: f64) -> f64 {
        match self.inversion {
            InversionCost::Quadratic => n * n,
            _ => n,
        }
    }
}

/// Per-processor work and simulated elapsed time, split by phase and level.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CostLedger {
    loads: BTreeMap<(Phase, usize), u64>,
    phase_total: BTreeMap<Phase, u64>,
    phase_elapsed: BTreeMap<Phase, u64>,
    level_total: BTreeMap<usize, u64>,
    level_elapsed: BTreeMap<usize, u64>,
    processors: usize,
    latency: u64,
}

impl CostLedger {
    pub fn new(model: &CostModel) -> Self {
        Self { latency: model.latency, ..Self::default() }
    }

    /// Charges `tasks` independent tasks of equal `cost` spread over `workers` processors.
    pub fn charge_uniform(&mut self, phase: Phase, level: usize, tasks: usize, cost: u64, workers: usize) {
        if tasks == 0 {
            return;
        }
        let workers = workers.clamp(1, tasks);
        let cost = cost + self.latency;
        let (q, r) = (tasks / workers, tasks % workers);
        for p in 0..workers {
            let load = (q + usize::from(p < r)) as u64 * cost;
            *self.loads.entry((phase, p)).or_default() += load;
        }
        let elapsed = (q + usize::from(r > 0)) as u64 * cost;
        self.record(phase, level, tasks as u64 * cost, elapsed, workers);
    }

    /// Charges tasks with individual costs, dealt round-robin.
    pub fn charge(&mut self, phase: Phase, level: usize, tasks: &[u64], workers: usize) {
        if tasks.is_empty() {
            return;
        }
        let workers = workers.clamp(1, tasks.len());
        let mut load = vec![0u64; workers];
        for (i, &c) in tasks.iter().enumerate() {
            load[i % workers] += c + self.latency;
        }
        for (p, &l) in load.iter().enumerate() {
            *self.loads.entry((phase, p)).or_default() += l;
        }
        let total = load.iter().sum();
        let elapsed = load.iter().copied().max().unwrap_or(0);
        self.record(phase, level, total, elapsed, workers);
    }

    /// A single task on one processor.
    pub fn charge_serial(&mut self, phase: Phase, level: usize, cost: u64) {
        self.charge_uniform(phase, level, 1, cost, 1);
    }

    fn record(&mut self, phase: Phase, level: usize, total: u64, elapsed: u64, workers: usize) {
        *self.phase_total.entry(phase).or_default() += total;
        *self.phase_elapsed.entry(phase).or_default() += elapsed;
        *self.level_total.entry(level).or_default() += total;
        *self.level_elapsed.entry(level).or_default() += elapsed;
        self.processors = self.processors.max(workers);
    }

    pub fn total_work(&self) -> u64 {
        self.phase_total.values().sum()
    }

    pub fn elapsed(&self) -> u64 {
        self.phase_elapsed.values().sum()
    }

    pub fn phase_work(&self, phase: Phase) -> u64 {
        self.phase_total.get(&phase).copied().unwrap_or(0)
    }

    pub fn phase_elapsed(&self, phase: Phase) -> u64 {
        self.phase_elapsed.get(&phase).copied().unwrap_or(0)
    }

    /// Simulated time spent at levels `≥ level`.
    pub fn elapsed_from_level(&self, level: usize) -> u64 {
        self.level_elapsed.range(level..).map(|(_, v)| v).sum()
    }

    pub fn level_elapsed(&self) -> &BTreeMap<usize, u64> {
        &self.level_elapsed
    }

    pub fn level_work(&self) -> &BTreeMap<usize, u64> {
        &self.level_total
    }

    /// Work accumulated on processor `p` over all phases.
    pub fn processor_work(&self, p: usize) -> u64 {
        self.loads.iter().filter(|((_, q), _)| *q == p).map(|(_, v)| v).sum()
    }

    pub fn processors(&self) -> usize {
        self.processors
    }

    pub fn phases(&self) -> impl Iterator<Item = Phase> + '_ {
        self.phase_total.keys().copied()
    }

    /// Adds another ledger's charges to this one.
    pub fn merge(&mut self, other: &CostLedger) {
        for (k, v) in &other.loads {
            *self.loads.entry(*k).or_default() += v;
        }
        for (k, v) in &other.phase_total {
            *self.phase_total.entry(*k).or_default() += v;
        }
        for (k, v) in &other.phase_elapsed {
            *self.phase_elapsed.entry(*k).or_default() += v;
        }
        for (k, v) in &other.level_total {
            *self.level_total.entry(*k).or_default() += v;
        }
        for (k, v) in &other.level_elapsed {
            *self.level_elapsed.entry(*k).or_default() += v;
        }
        self.processors = self.processors.max(other.processors);
    }

    /// CSV with columns `phase,processor,cost`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["phase", "processor", "cost"])?;
        for ((phase, p), c) in &self.loads {
            out.write_record([phase.name().to_string(), p.to_string(), c.to_string()])?;
        }
        out.flush()?;
        Ok(())
    }

    /// Key-value summary text.
    pub fn summary(&self) -> String {
        let mut s = format!("total_work = {}\nsimulated_elapsed = {}\n", self.total_work(), self.elapsed());
        for p in self.phases() {
            s += &format!("{}.work = {}\n{}.elapsed = {}\n", p.name(), self.phase_work(p), p.name(), self.phase_elapsed(p));
        }
        for (l, e) in &self.level_elapsed {
            s += &format!("level{l}.elapsed = {e}\n");
        }
        s
    }
}

/// Which virtual processor pool executes a group of tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pool {
    /// The `N_proc` processors used for matvecs and vector work.
    Procs,
    /// The `N_CGS` processors of the coarsest-grid solve.
    Coarsest,
    Serial,
}

#[derive(Debug, Clone, PartialEq)]
enum Charge {
    Uniform { phase: Phase, level: usize, tasks: usize, cost: u64, pool: Pool },
    Tasks { phase: Phase, level: usize, costs: Vec<u64>, pool: Pool },
}

/// Record of charges that can be replayed for any processor count.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ChargeTrace {
    events: Vec<Charge>,
}

impl ChargeTrace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn uniform(&mut self, phase: Phase, level: usize, tasks: usize, cost: u64, pool: Pool) {
        if tasks > 0 {
            self.events.push(Charge::Uniform { phase, level, tasks, cost, pool });
        }
    }

    pub fn tasks(&mut self, phase: Phase, level: usize, costs: Vec<u64>, pool: Pool) {
        if !costs.is_empty() {
            self.events.push(Charge::Tasks { phase, level, costs, pool });
        }
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn replay(&self, model: &CostModel, n_proc: usize, n_cgs: usize) -> CostLedger {
        let mut ledger = CostLedger::new(model);
        let workers = |pool: Pool| match pool {
            Pool::Procs => n_proc,
            Pool::Coarsest => n_cgs,
            Pool::Serial => 1,
        };
        for e in &self.events {
            match e {
                Charge::Uniform { phase, level, tasks, cost, pool } => {
                    ledger.charge_uniform(*phase, *level, *tasks, *cost, workers(*pool))
                }
                Charge::Tasks { phase, level, costs, pool } => ledger.charge(*phase, *level, costs, workers(*pool)),
            }
        }
        ledger
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RelativeReport {
    /// Simulated elapsed time relative to the sequential θ-scheme.
    pub relative_total: f64,
    /// Share of elapsed time spent below the finest level (inside its coarse solve).
    pub cgs_fraction: f64,
}

pub fn report_relative(ledger: &CostLedger, theta_ledger: &CostLedger) -> RelativeReport {
    let e = ledger.elapsed() as f64;
    let base = theta_ledger.elapsed() as f64;
    let coarse = ledger.elapsed_from_level(2) as f64;
    RelativeReport {
        relative_total: if base > 0.0 { e / base } else { f64::NAN },
        cgs_fraction: if e > 0.0 { coarse / e } else { 0.0 },
    }
}

/// `n_t n + n_t C_inv(n)`
pub fn work_theta(n_t: usize, n_x: usize, n_y: usize, model: &CostModel) -> f64 {
    let n = (n_x * n_y) as f64;
    let nt = n_t as f64;
    nt * n + nt * model.c_inv_formula(n)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Parallelism {
    Serial,
    Matvec,
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorkSplit {
    pub matvec: f64,
    pub coarse: f64,
}

impl WorkSplit {
    pub fn total(&self) -> f64 {
        self.matvec + self.coarse
    }

    pub fn coarse_fraction(&self) -> f64 {
        self.coarse / self.total()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Machine {
    pub n_proc: usize,
    pub n_cgs: usize,
}

pub fn work_two_level(
    n_iter: usize,
    nu: usize,
    n_t: usize,
    n_x: usize,
    n_y: usize,
    machine: Machine,
    model: &CostModel,
    mode: Parallelism,
) -> Result<WorkSplit> {
    ensure(nu >= 1 && machine.n_proc >= 1 && machine.n_cgs >= 1, || "counts must be positive".into())?;
    let n = (n_x * n_y) as f64;
    let (it, nt, nu) = (n_iter as f64, n_t as f64, nu as f64);
    let (p, q) = match mode {
        Parallelism::Serial => (1.0, 1.0),
        Parallelism::Matvec => (machine.n_proc as f64, 1.0),
        Parallelism::Full => (machine.n_proc as f64, machine.n_cgs as f64),
    };
    Ok(WorkSplit { matvec: 2.0 * it / p * nt * n, coarse: it / (nu * q) * nt * model.c_inv_formula(n) })
}

/// Fully parallel `L`-level estimate; `budgets[0]` is the finest-level count
/// and `budgets[l-1]` the inner budget of level `l` for `2 ≤ l ≤ L-1`.
pub fn work_multilevel(
    budgets: &[usize],
    levels: usize,
    nu: usize,
    n_t: usize,
    n_x: usize,
    n_y: usize,
    machine: Machine,
    model: &CostModel,
) -> Result<WorkSplit> {
    ensure(levels >= 2, || "at least two levels are needed".into())?;
    ensure(budgets.len() >= levels - 1, || format!("{} budgets given, {} needed", budgets.len(), levels - 1))?;
    ensure(nu >= 1 && machine.n_proc >= 1 && machine.n_cgs >= 1, || "counts must be positive".into())?;
    let n = (n_x * n_y) as f64;
    let nt = n_t as f64;
    let nuf = nu as f64;
    let n1 = budgets[0] as f64;
    let mut visits = 1.0;
    let mut sweep = 1.0;
    for l in 2..levels {
        visits *= budgets[l - 1] as f64;
        sweep += visits / nuf.powi(l as i32 - 1);
    }
    let matvec = 2.0 * n1 / machine.n_proc as f64 * sweep * nt * n;
    let coarse = n1 / machine.n_cgs as f64 * visits / nuf.powi(levels as i32 - 1) * nt * model.c_inv_formula(n);
    Ok(WorkSplit { matvec, coarse })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ledger() -> CostLedger {
        CostLedger::new(&CostModel::for_dim(2))
    }

    #[test]
    fn round_robin_elapsed() {
        let mut l = ledger();
        l.charge_uniform(Phase::Matvec, 1, 4, 10, 4);
        assert_eq!(l.elapsed(), 10);
        let mut l = ledger();
        l.charge_uniform(Phase::Matvec, 1, 4, 10, 1);
        assert_eq!(l.elapsed(), 40);
        let mut l = ledger();
        l.charge_uniform(Phase::Matvec, 1, 5, 10, 4);
        assert_eq!(l.elapsed(), 20);
        assert_eq!(l.total_work(), 50);
        assert_eq!(l.processor_work(0), 20);
        assert_eq!(l.processor_work(3), 10);
    }

    #[test]
    fn uneven_tasks() {
        let mut l = ledger();
        l.charge(Phase::CoarseSolve, 2, &[5, 1, 1, 7], 2);
        assert_eq!(l.elapsed(), 8);
        assert_eq!(l.total_work(), 14);
        assert_eq!(l.elapsed_from_level(2), 8);
        assert_eq!(l.elapsed_from_level(3), 0);
    }

    #[test]
    fn latency_hook() {
        let mut l = CostLedger::new(&CostModel { inversion: InversionCost::Linear, latency: 3 });
        l.charge_uniform(Phase::Matvec, 1, 2, 10, 2);
        assert_eq!(l.elapsed(), 13);
    }

    #[test]
    fn identical_ledgers_give_unit_ratio() {
        let mut l = ledger();
        l.charge_serial(Phase::Sequential, 1, 123);
        let r = report_relative(&l, &l);
        assert_eq!(r.relative_total, 1.0);
        assert!((0.0..=1.0).contains(&r.cgs_fraction));
    }

    #[test]
    fn csv_dump_has_expected_columns() {
        let mut l = ledger();
        l.charge_uniform(Phase::Restriction, 1, 3, 2, 2);
        let mut buf = Vec::new();
        l.write_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert_eq!(s, "phase,processor,cost\nrestriction,0,4\nrestriction,1,2\n");
    }

    #[test]
    fn theta_work_formula() {
        let m = CostModel::for_dim(2);
        assert_eq!(work_theta(2, 1, 1, &m), 4.0);
        assert_eq!(work_theta(4, 3, 3, &m), 2.0 * work_theta(2, 3, 3, &m));
        let w = work_theta(768, 128, 128, &m);
        let (a, b) = (768.0 * 128.0 * 128.0, 768.0 * (128.0f64 * 128.0).powi(2));
        assert_eq!(w, a + b);
        assert_eq!(a / b, 1.0 / (128.0 * 128.0));
    }

    #[test]
    fn two_level_specializations() {
        let m = CostModel::for_dim(2);
        let one = Machine { n_proc: 1, n_cgs: 1 };
        let s = work_two_level(6, 2, 64, 8, 8, one, &m, Parallelism::Serial).unwrap();
        let f = work_two_level(6, 2, 64, 8, 8, one, &m, Parallelism::Full).unwrap();
        assert_eq!(s, f);
        assert_eq!(s.matvec, 2.0 * 6.0 * 64.0 * 64.0);
        assert_eq!(s.coarse, 6.0 / 2.0 * 64.0 * 4096.0);
    }

    #[test]
    fn speedup_condition() {
        let m = CostModel::for_dim(2);
        let mach = Machine { n_proc: 32, n_cgs: 32 };
        let n_iter = 40;
        assert!((n_iter as f64) / 32.0 < 1.5);
        let w = work_two_level(n_iter, 2, 768, 128, 128, mach, &m, Parallelism::Full).unwrap();
        assert!(n_iter as f64 / (2.0 * 32.0) < 1.0);
        assert!(w.total() < work_theta(768, 128, 128, &m));
        let t3 = work_two_level(10, 2, 2048, 192, 192, Machine { n_proc: 32, n_cgs: 16 }, &m, Parallelism::Full).unwrap();
        assert!(t3.total() / work_theta(2048, 192, 192, &m) < 1.0);
    }

    #[test]
    fn multilevel_reduces_to_two_level() {
        let m = CostModel::for_dim(2);
        let mach = Machine { n_proc: 32, n_cgs: 16 };
        let a = work_multilevel(&[9], 2, 2, 2048, 192, 192, mach, &m).unwrap();
        let b = work_two_level(9, 2, 2048, 192, 192, mach, &m, Parallelism::Full).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn coarse_term_independent_of_levels_when_budget_is_nu() {
        let m = CostModel::for_dim(2);
        let mach = Machine { n_proc: 32, n_cgs: 32 };
        let c: Vec<f64> = (3..8)
            .map(|l| work_multilevel(&[10, 2, 2, 2, 2, 2, 2], l, 2, 768, 128, 128, mach, &m).unwrap().coarse)
            .collect();
        assert!(c.windows(2).all(|w| (w[0] - w[1]).abs() <= 1e-12 * w[0]));
    }

    #[test]
    fn more_levels_cost_more_when_iterations_grow() {
        let m = CostModel::for_dim(2);
        let mach = Machine { n_proc: 32, n_cgs: 32 };
        let totals: Vec<f64> = [(2, 12), (3, 16), (4, 22)]
            .iter()
            .map(|&(l, it)| work_multilevel(&[it, 3, 3], l, 2, 768, 128, 128, mach, &m).unwrap().total())
            .collect();
        assert!(totals[0] < totals[1] && totals[1] < totals[2]);
    }

    proptest! {
        #[test]
        fn conservation_and_lower_bound(costs in proptest::collection::vec(1u64..1000, 1..50), w in 1usize..9) {
            let mut l = ledger();
            l.charge(Phase::Matvec, 1, &costs, w);
            l.charge_uniform(Phase::Interpolation, 1, costs.len(), 7, w);
            let per_proc: u64 = (0..w).map(|p| l.processor_work(p)).sum();
            prop_assert_eq!(per_proc, l.total_work());
            for ph in [Phase::Matvec, Phase::Interpolation] {
                prop_assert!(l.phase_elapsed(ph) as f64 >= l.phase_work(ph) as f64 / w as f64);
            }
        }

        #[test]
        fn merge_is_commutative(a in 1u64..100, b in 1u64..100) {
            let mut x = ledger();
            x.charge_uniform(Phase::Matvec, 1, 3, a, 2);
            let mut y = ledger();
            y.charge_uniform(Phase::CoarseSolve, 2, 2, b, 2);
            let mut xy = x.clone();
            xy.merge(&y);
            let mut yx = y.clone();
            yx.merge(&x);
            prop_assert_eq!(xy, yx);
        }
    }

    #[test]
    fn replayed_trace_matches_direct_charges() {
        let model = CostModel::for_dim(1);
        let mut t = ChargeTrace::new();
        t.uniform(Phase::Matvec, 1, 5, 10, Pool::Procs);
        t.tasks(Phase::CoarseSolve, 2, vec![3, 4, 5], Pool::Coarsest);
        t.uniform(Phase::Sequential, 1, 1, 7, Pool::Serial);
        let l = t.replay(&model, 4, 2);
        let mut d = CostLedger::new(&model);
        d.charge_uniform(Phase::Matvec, 1, 5, 10, 4);
        d.charge(Phase::CoarseSolve, 2, &[3, 4, 5], 2);
        d.charge_serial(Phase::Sequential, 1, 7);
        assert_eq!(l.elapsed(), d.elapsed());
        assert_eq!(l.total_work(), d.total_work());
        assert_eq!(t.replay(&model, 1, 1).elapsed(), 50 + 12 + 7);
    }
}
