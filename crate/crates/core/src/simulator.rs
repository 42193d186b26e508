//! Seeded Monte-Carlo ensembles of the dispatch process.
//!
//! Run `r` draws from stream `r` of the seed, and round `t` starts at a
//! fixed word offset of that stream, so any run or round can be replayed in
//! isolation. Runs are grouped in fixed-size blocks whose partial statistics
//! are merged in block order, making results independent of thread count.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::exact::expected_profits;
use crate::grid::{Grid, Location, RequestModel, RequestSampler};
use crate::ingest::ReplayTrace;
use crate::policies::{expected_step_profit, Policy};
use crate::rng::StreamRng;
use crate::series::{ErrorSeries, Target};
use crate::state_space::{DriverState, StateSpace};

/// Runs per statistics block.
pub const BLOCK_RUNS: usize = 32;
/// Largest state space for which per-state expected profits are tabulated.
pub const PROFIT_TABLE_LIMIT: usize = 200_000;

#[derive(Clone, Debug, PartialEq)]
pub enum Arrivals {
    Iid(RequestModel),
    Replay(ReplayTrace),
}

#[derive(Clone, Debug, PartialEq)]
pub enum InitialState {
    /// Drivers piled onto the lowest-index locations, filling each to
    /// capacity; with `c ≥ m` every driver starts at location 0.
    Adversarial,
    /// Driver `k` starts at location `k mod n`.
    Spread,
    Explicit(DriverState),
}

impl InitialState {
    pub fn resolve(&self, grid: Grid, m: u32, c: u32) -> Result<DriverState> {
        let n = grid.n();
        if m as u64 > c as u64 * n as u64 {
            return Err(Error::Infeasible(format!("{m} drivers do not fit {n} locations of capacity {c}")));
        }
        let counts = match self {
            InitialState::Adversarial => {
                let mut left = m;
                (0..n)
                    .map(|_| {
                        let k = left.min(c);
                        left -= k;
                        k
                    })
                    .collect()
            }
            InitialState::Spread => {
                let mut counts = vec![0u32; n];
                for k in 0..m as usize {
                    counts[k % n] += 1;
                }
                counts
            }
            InitialState::Explicit(x) => {
                if x.n() != n || x.total() != m || x.capacity() != c {
                    return Err(Error::InvalidArgument(format!(
                        "initial state ({x}) is not in the space of {grid}, m = {m}, c = {c}"
                    )));
                }
                return Ok(x.clone());
            }
        };
        DriverState::new(counts, c)
    }
}

impl fmt::Display for InitialState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InitialState::Adversarial => f.write_str("adversarial"),
            InitialState::Spread => f.write_str("spread"),
            InitialState::Explicit(x) => write!(f, "{x}"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Estimator {
    /// Records the expected profit of the pre-move state.
    #[default]
    Conditional,
    /// Records the profit actually earned.
    Realized,
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Estimator::Conditional => "conditional",
            Estimator::Realized => "realized",
        })
    }
}

impl FromStr for Estimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Estimator> {
        match s {
            "conditional" => Ok(Estimator::Conditional),
            "realized" => Ok(Estimator::Realized),
            _ => Err(Error::Parse(format!("unknown estimator {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimConfig {
    pub grid: Grid,
    pub m: u32,
    pub c: u32,
    pub rounds: usize,
    pub runs: usize,
    pub seed: u64,
    pub policy: Policy,
    pub arrivals: Arrivals,
    pub initial: InitialState,
    pub estimator: Estimator,
}

impl SimConfig {
    pub fn validate(&self) -> Result<DriverState> {
        if self.rounds == 0 || self.runs == 0 {
            return Err(Error::InvalidArgument("rounds and runs must be at least 1".into()));
        }
        if self.m == 0 || self.c == 0 {
            return Err(Error::InvalidArgument("drivers and capacity must be positive".into()));
        }
        match &self.arrivals {
            Arrivals::Iid(model) => {
                if model.grid() != self.grid {
                    return Err(Error::InvalidArgument(format!(
                        "request model is for {}, simulation grid is {}",
                        model.grid(),
                        self.grid
                    )));
                }
            }
            Arrivals::Replay(trace) => {
                trace.check(self.grid)?;
                if self.estimator == Estimator::Conditional {
                    return Err(Error::InvalidArgument(
                        "the conditional estimator needs arrival probabilities; use realized with replay".into(),
                    ));
                }
            }
        }
        self.initial.resolve(self.grid, self.m, self.c)
    }
}

/// One processed request of a recorded run.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TraceRow {
    pub round: usize,
    pub origin: Location,
    pub dest: Location,
    pub chosen: Option<Location>,
    pub success: bool,
    pub profit: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimOutput {
    pub series: ErrorSeries,
    /// Request log of run 0 when requested.
    pub trace: Option<Vec<TraceRow>>,
}

/// Running mean and sum of squared deviations (Welford), mergeable.
#[derive(Clone, Debug)]
struct Moments {
    count: f64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Moments {
    fn new(len: usize) -> Moments {
        Moments {
            count: 0.0,
            mean: vec![0.0; len],
            m2: vec![0.0; len],
        }
    }

    fn push(&mut self, xs: &[f64]) {
        self.count += 1.0;
        for ((mean, m2), &x) in self.mean.iter_mut().zip(&mut self.m2).zip(xs) {
            let d = x - *mean;
            *mean += d / self.count;
            *m2 += d * (x - *mean);
        }
    }

    fn merge(mut self, other: &Moments) -> Moments {
        if other.count == 0.0 {
            return self;
        }
        let total = self.count + other.count;
        for i in 0..self.mean.len() {
            let d = other.mean[i] - self.mean[i];
            self.mean[i] += d * other.count / total;
            self.m2[i] += other.m2[i] + d * d * self.count * other.count / total;
        }
        self.count = total;
        self
    }

    fn stderr(&self) -> Vec<f64> {
        if self.count < 2.0 {
            return vec![0.0; self.mean.len()];
        }
        self.m2
            .iter()
            .map(|m2| (m2 / (self.count - 1.0) / self.count).sqrt())
            .collect()
    }
}

struct Engine<'a> {
    config: &'a SimConfig,
    start: DriverState,
    sampler: Option<RequestSampler>,
    table: Option<(StateSpace, Vec<f64>)>,
}

impl<'a> Engine<'a> {
    fn new(config: &'a SimConfig) -> Result<Engine<'a>> {
        let start = config.validate()?;
        let (sampler, table) = match &config.arrivals {
            Arrivals::Iid(model) => {
                let table = if config.estimator == Estimator::Conditional {
                    match StateSpace::with_cap(config.grid, config.m, config.c, PROFIT_TABLE_LIMIT as u128) {
                        Ok(space) => {
                            let profits = expected_profits(&space, model, &config.policy);
                            Some((space, profits))
                        }
                        Err(Error::SizeLimit { .. }) => None,
                        Err(e) => return Err(e),
                    }
                } else {
                    None
                };
                (Some(RequestSampler::new(model)), table)
            }
            Arrivals::Replay(_) => (None, None),
        };
        Ok(Engine {
            config,
            start,
            sampler,
            table,
        })
    }

    fn conditional_value(&self, x: &DriverState) -> f64 {
        match (&self.table, &self.config.arrivals) {
            (Some((space, profits)), _) => profits[space.rank_counts(x.counts())],
            (None, Arrivals::Iid(model)) => expected_step_profit(x, model, &self.config.policy),
            (None, Arrivals::Replay(_)) => unreachable!("validated"),
        }
    }

    /// Per-round values of one run, plus its request log if asked.
    fn run(&self, run: usize, record: bool) -> (Vec<f64>, Option<Vec<TraceRow>>) {
        let cfg = self.config;
        let grid = cfg.grid;
        let mut rng = StreamRng::new(cfg.seed, run as u64);
        let mut x = self.start.clone();
        let mut values = Vec::with_capacity(cfg.rounds);
        let mut log = record.then(Vec::new);
        let mut cursor = 0usize;
        for t in 0..cfg.rounds {
            rng.seek_round(t as u64);
            let before = match cfg.estimator {
                Estimator::Conditional => self.conditional_value(&x),
                Estimator::Realized => 0.0,
            };
            let mut earned = 0.0;
            let mut serve = |x: &mut DriverState, rng: &mut StreamRng, o: Location, d: Location, w: f64| {
                let out = cfg.policy.dispatch(&grid, x, o, d, w, rng);
                if let Some((from, to)) = out.movement(d) {
                    x.move_in_place(from, to);
                }
                debug_assert!(x.total() == cfg.m && x.counts().iter().all(|&k| k <= cfg.c));
                earned += out.profit;
                if let Some(log) = log.as_mut() {
                    log.push(TraceRow {
                        round: t,
                        origin: o,
                        dest: d,
                        chosen: out.chosen,
                        success: out.success,
                        profit: out.profit,
                    });
                }
            };
            match &cfg.arrivals {
                Arrivals::Iid(model) => {
                    let sampler = self.sampler.as_ref().expect("iid mode has a sampler");
                    if let Some((o, d)) = sampler.pick(rng.uniform()) {
                        serve(&mut x, &mut rng, o, d, model.w(o, d));
                    }
                }
                Arrivals::Replay(trace) => {
                    let entries = trace.entries();
                    while cursor < entries.len() && entries[cursor].round < t {
                        cursor += 1;
                    }
                    while cursor < entries.len() && entries[cursor].round == t {
                        let e = &entries[cursor];
                        serve(&mut x, &mut rng, e.origin, e.dest, e.weight);
                        cursor += 1;
                    }
                }
            }
            values.push(match cfg.estimator {
                Estimator::Conditional => before,
                Estimator::Realized => earned,
            });
        }
        (values, log)
    }
}

pub fn run_ensemble(config: &SimConfig) -> Result<ErrorSeries> {
    Ok(simulate(config, false)?.series)
}

pub fn run_ensemble_with_trace(config: &SimConfig) -> Result<SimOutput> {
    simulate(config, true)
}

fn simulate(config: &SimConfig, record: bool) -> Result<SimOutput> {
    let engine = Engine::new(config)?;
    let rounds = config.rounds;
    let blocks: Vec<(Moments, Moments)> = (0..config.runs.div_ceil(BLOCK_RUNS))
        .into_par_iter()
        .map(|b| {
            let mut per_round = Moments::new(rounds);
            let mut average = Moments::new(1);
            for run in b * BLOCK_RUNS..((b + 1) * BLOCK_RUNS).min(config.runs) {
                let (values, _) = engine.run(run, false);
                per_round.push(&values);
                average.push(&[values.iter().sum::<f64>() / rounds as f64]);
            }
            (per_round, average)
        })
        .collect();
    let (per_round, average) = blocks.iter().fold(
        (Moments::new(rounds), Moments::new(1)),
        |(a, b), (x, y)| (a.merge(x), b.merge(y)),
    );
    let mut series = ErrorSeries::new(per_round.mean.clone(), per_round.stderr(), config.runs, Target::default())?;
    series.objective_se = average.stderr()[0];
    let trace = if record { engine.run(0, true).1 } else { None };
    Ok(SimOutput { series, trace })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact::{build_transition, delta_curves_exact, stationary_distribution};
    use crate::grid::Weights;
    use crate::policies::{Boundary, DirectionOrder};

    fn config(policy: Policy, rounds: usize, runs: usize, estimator: Estimator) -> SimConfig {
        let grid = Grid::new(2, 2).unwrap();
        SimConfig {
            grid,
            m: 2,
            c: 2,
            rounds,
            runs,
            seed: 42,
            policy,
            arrivals: Arrivals::Iid(RequestModel::uniform(grid, 1.0 / 16.0, Weights::Constant(1.0)).unwrap()),
            initial: InitialState::Adversarial,
            estimator,
        }
    }

    #[test]
    fn initial_presets() {
        let g = Grid::new(2, 2).unwrap();
        assert_eq!(InitialState::Adversarial.resolve(g, 3, 5).unwrap().counts(), &[3, 0, 0, 0]);
        assert_eq!(InitialState::Adversarial.resolve(g, 3, 2).unwrap().counts(), &[2, 1, 0, 0]);
        assert_eq!(InitialState::Spread.resolve(g, 6, 2).unwrap().counts(), &[2, 2, 1, 1]);
        let bad = DriverState::new(vec![1, 1, 0, 0], 2).unwrap();
        assert!(InitialState::Explicit(bad).resolve(g, 3, 2).is_err());
    }

    #[test]
    fn no_arrivals_means_no_profit() {
        let mut cfg = config(Policy::greedy(), 50, 10, Estimator::Realized);
        cfg.arrivals = Arrivals::Iid(RequestModel::uniform(cfg.grid, 0.0, Weights::Constant(1.0)).unwrap());
        let mut s = run_ensemble(&cfg).unwrap();
        s.retarget(Target::Value(0.4)).unwrap();
        assert!(s.mean.iter().all(|&w| w == 0.0));
        assert!(s.delta.iter().all(|&d| d == 0.4));
    }

    #[test]
    fn same_seed_same_series() {
        let cfg = config(Policy::nadap(0.8).unwrap(), 300, 70, Estimator::Realized);
        assert_eq!(run_ensemble(&cfg).unwrap(), run_ensemble(&cfg).unwrap());
    }

    #[test]
    fn thread_count_does_not_change_results() {
        let cfg = config(Policy::nadap(0.8).unwrap(), 200, 100, Estimator::Conditional);
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let a = one.install(|| run_ensemble(&cfg).unwrap());
        let b = four.install(|| run_ensemble(&cfg).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn runs_are_order_independent() {
        // a block's statistics only depend on which runs it holds
        let cfg = config(Policy::greedy(), 100, 40, Estimator::Realized);
        let engine = Engine::new(&cfg).unwrap();
        let forward: Vec<f64> = (0..40).map(|r| engine.run(r, false).0.iter().sum()).collect();
        let backward: Vec<f64> = (0..40).rev().map(|r| engine.run(r, false).0.iter().sum()).collect();
        let mut f = forward.clone();
        let mut b = backward;
        f.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        assert_eq!(f, b);
        let total = forward.iter().sum::<f64>() / (40.0 * 100.0);
        assert!((run_ensemble(&cfg).unwrap().objective() - total).abs() < 1e-12);
    }

    #[test]
    fn conditional_tracks_exact_curve() {
        let policy = Policy::nadap(0.8).unwrap();
        let cfg = config(policy, 200, 2000, Estimator::Conditional);
        let s = run_ensemble(&cfg).unwrap();
        let Arrivals::Iid(model) = &cfg.arrivals else { unreachable!() };
        let space = StateSpace::new(cfg.grid, 2, 2).unwrap();
        let p = build_transition(&space, model, &policy).unwrap();
        let st = stationary_distribution(&p).unwrap();
        let start = InitialState::Adversarial.resolve(cfg.grid, 2, 2).unwrap();
        let exact = delta_curves_exact(&p, &st, model, &policy, &start, 200).unwrap();
        for t in (0..200).step_by(10) {
            let tol = 3.0 * s.stderr[t] + 1e-12;
            assert!((s.mean[t] - exact.mean[t]).abs() <= tol, "t = {t}: {} vs {}", s.mean[t], exact.mean[t]);
        }
    }

    #[test]
    fn estimators_agree() {
        let policy = Policy::rand(DirectionOrder::CLOCKWISE);
        let a = run_ensemble(&config(policy, 2000, 200, Estimator::Conditional)).unwrap();
        let b = run_ensemble(&config(policy, 2000, 200, Estimator::Realized)).unwrap();
        let se = (a.objective_se.powi(2) + b.objective_se.powi(2)).sqrt();
        assert!((a.objective() - b.objective()).abs() < 3.0 * se, "{} vs {}", a.objective(), b.objective());
    }

    #[test]
    fn error_shrinks_with_horizon() {
        let policy = Policy::nadap_with(0.8, Boundary::Origin).unwrap();
        let mut s = run_ensemble(&config(policy, 10_000, 50, Estimator::Conditional)).unwrap();
        s.retarget(Target::Value(0.4)).unwrap();
        assert!(s.delta_hat[9_999] < s.delta_hat[99]);
    }

    #[test]
    fn trace_matches_series_for_single_run() {
        let cfg = config(Policy::greedy(), 100, 1, Estimator::Realized);
        let out = run_ensemble_with_trace(&cfg).unwrap();
        let trace = out.trace.unwrap();
        let mut per_round = vec![0.0; 100];
        for row in &trace {
            per_round[row.round] += row.profit;
        }
        assert_eq!(per_round, out.series.mean);
    }

    #[test]
    fn replay_requires_realized() {
        let mut cfg = config(Policy::greedy(), 10, 1, Estimator::Conditional);
        cfg.arrivals = Arrivals::Replay(ReplayTrace::new(10, Vec::new()).unwrap());
        assert!(run_ensemble(&cfg).is_err());
    }
}
