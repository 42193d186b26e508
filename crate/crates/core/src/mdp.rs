//! Optimal dispatch on small instances by value iteration.
//!
//! A decision state is a driver state together with the pending request
//! (or the idle event). Actions serve from the origin or one of its four
//! neighbors, or reject; anything infeasible counts as a rejection.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{Direction, Grid, Location, RequestModel, RequestSampler};
use crate::policies::{can_serve, Policy};
use crate::rng::StreamRng;
use crate::state_space::{DriverState, StateSpace};

pub const DEFAULT_DISCOUNT: f64 = 0.9;
pub const DEFAULT_TOLERANCE: f64 = 1e-8;
pub const DEFAULT_STATE_CAP: usize = 100_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[repr(u8)]
pub enum Action {
    Reject = 0,
    Origin = 1,
    North = 2,
    East = 3,
    South = 4,
    West = 5,
}

impl Action {
    pub const ALL: [Action; 6] = [
        Action::Reject,
        Action::Origin,
        Action::North,
        Action::East,
        Action::South,
        Action::West,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Action::Reject => "reject",
            Action::Origin => "origin",
            Action::North => "N",
            Action::East => "E",
            Action::South => "S",
            Action::West => "W",
        }
    }

    /// Location a driver would come from, if the action names one on the grid.
    pub fn source(self, grid: &Grid, origin: Location) -> Option<Location> {
        let dir = match self {
            Action::Reject => return None,
            Action::Origin => return Some(origin),
            Action::North => Direction::North,
            Action::East => Direction::East,
            Action::South => Direction::South,
            Action::West => Direction::West,
        };
        grid.step(origin, dir)
    }

    /// The action that serves `origin` from `source`.
    pub fn toward(grid: &Grid, origin: Location, source: Location) -> Option<Action> {
        Action::ALL[1..]
            .iter()
            .copied()
            .find(|a| a.source(grid, origin) == Some(source))
    }
}

#[derive(Clone, Debug)]
pub struct MdpInstance {
    space: StateSpace,
    model: RequestModel,
    discount: f64,
    /// Request events: every ordered pair, then the idle event if it has mass.
    events: Vec<Option<(Location, Location)>>,
    probs: Vec<f64>,
}

impl MdpInstance {
    pub fn new(model: RequestModel, m: u32, c: u32, discount: f64) -> Result<MdpInstance> {
        MdpInstance::with_cap(model, m, c, discount, DEFAULT_STATE_CAP)
    }

    pub fn with_cap(model: RequestModel, m: u32, c: u32, discount: f64, cap: usize) -> Result<MdpInstance> {
        if !(discount > 0.0 && discount < 1.0) {
            return Err(Error::InvalidArgument(format!("discount must lie in (0, 1), got {discount}")));
        }
        let grid = model.grid();
        let n = grid.n();
        let mut events: Vec<Option<(Location, Location)>> =
            (0..n * n).map(|k| Some((k / n, k % n))).collect();
        let mut probs = model.probabilities().to_vec();
        if model.no_request_mass() > 0.0 {
            events.push(None);
            probs.push(model.no_request_mass());
        }
        let space = StateSpace::with_cap(grid, m, c, cap as u128)?;
        let total = space.len() as u128 * events.len() as u128;
        if total > cap as u128 {
            return Err(Error::SizeLimit { size: total, cap: cap as u128 });
        }
        Ok(MdpInstance {
            space,
            model,
            discount,
            events,
            probs,
        })
    }

    pub fn space(&self) -> &StateSpace {
        &self.space
    }

    pub fn model(&self) -> &RequestModel {
        &self.model
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn events(&self) -> &[Option<(Location, Location)>] {
        &self.events
    }

    /// Number of decision states, `|Ω| × events`.
    pub fn num_states(&self) -> usize {
        self.space.len() * self.events.len()
    }

    pub fn index(&self, state: usize, event: usize) -> usize {
        state * self.events.len() + event
    }

    /// Event index of a request.
    pub fn event_of(&self, request: Option<(Location, Location)>) -> usize {
        let n = self.space.n();
        match request {
            Some((o, d)) => o * n + d,
            None => n * n,
        }
    }

    /// `(reward, next state rank)` of an action; infeasible actions reject.
    fn outcome(&self, counts: &mut [u32], state: usize, event: usize, action: Action) -> (f64, usize) {
        let Some((o, d)) = self.events[event] else { return (0.0, state) };
        let grid = self.space.grid();
        let Some(k) = action.source(&grid, o) else { return (0.0, state) };
        let c = self.space.capacity();
        if counts[k] == 0 || (k != d && counts[d] >= c) {
            return (0.0, state);
        }
        let reward = self.model.w(o, d);
        if k == d {
            return (reward, state);
        }
        counts[k] -= 1;
        counts[d] += 1;
        let next = self.space.rank_counts(counts);
        counts[k] += 1;
        counts[d] -= 1;
        (reward, next)
    }

    /// `Σ_e p_e V(x, e)` per driver state.
    fn continuation(&self, values: &[f64]) -> Vec<f64> {
        let k = self.events.len();
        values
            .chunks(k)
            .map(|row| row.iter().zip(&self.probs).map(|(v, p)| v * p).sum())
            .collect()
    }

    /// One Bellman sweep: new values and the greedy action per state.
    fn sweep(&self, values: &[f64]) -> (Vec<f64>, Vec<Action>) {
        let cont = self.continuation(values);
        let k = self.events.len();
        let rows: Vec<Vec<(f64, Action)>> = (0..self.space.len())
            .into_par_iter()
            .map(|x| {
                let mut counts = vec![0u32; self.space.n()];
                self.space.unrank_into(x, &mut counts);
                (0..k)
                    .map(|e| {
                        let mut best = (f64::NEG_INFINITY, Action::Reject);
                        for a in Action::ALL {
                            let (r, next) = self.outcome(&mut counts, x, e, a);
                            let q = r + self.discount * cont[next];
                            if q > best.0 {
                                best = (q, a);
                            }
                        }
                        best
                    })
                    .collect()
            })
            .collect();
        rows.into_iter().flatten().unzip()
    }

    /// Values of a fixed decision rule, by iterating its Bellman operator.
    pub fn evaluate(&self, policy: &[Action], tol: f64) -> Result<Vec<f64>> {
        if policy.len() != self.num_states() {
            return Err(Error::InvalidArgument("policy does not cover every state".into()));
        }
        let k = self.events.len();
        let mut values = vec![0.0; self.num_states()];
        loop {
            let cont = self.continuation(&values);
            let mut counts = vec![0u32; self.space.n()];
            let mut diff: f64 = 0.0;
            let next: Vec<f64> = (0..self.num_states())
                .map(|i| {
                    let (x, e) = (i / k, i % k);
                    self.space.unrank_into(x, &mut counts);
                    let (r, y) = self.outcome(&mut counts, x, e, policy[i]);
                    let v = r + self.discount * cont[y];
                    diff = diff.max((v - values[i]).abs());
                    v
                })
                .collect();
            values = next;
            if diff <= tol {
                return Ok(values);
            }
        }
    }

    /// `‖T V − V‖∞` computed by an independent sweep.
    pub fn bellman_residual(&self, values: &[f64]) -> f64 {
        let (next, _) = self.sweep(values);
        next.iter().zip(values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ValueIterationResult {
    pub values: Vec<f64>,
    pub policy: Vec<Action>,
    pub sweeps: usize,
    pub residual: f64,
    /// Residual after each sweep.
    pub residuals: Vec<f64>,
}

/// Iterates until the sup-norm change of a sweep is at most `tol`; the
/// greedy policy breaks ties toward the lowest action index.
pub fn value_iteration(instance: &MdpInstance, tol: f64) -> Result<ValueIterationResult> {
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument("tolerance must be positive".into()));
    }
    let mut values = vec![0.0; instance.num_states()];
    let mut residuals = Vec::new();
    loop {
        let (next, _) = instance.sweep(&values);
        let diff = next.iter().zip(&values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        residuals.push(diff);
        values = next;
        if diff <= tol {
            break;
        }
    }
    let (_, policy) = instance.sweep(&values);
    let residual = instance.bellman_residual(&values);
    Ok(ValueIterationResult {
        values,
        policy,
        sweeps: residuals.len(),
        residual,
        residuals,
    })
}

/// Something that picks a dispatch action for a decision state.
pub enum Chooser<'a> {
    Table(&'a [Action]),
    Policy(Policy),
}

impl Chooser<'_> {
    fn choose(
        &self,
        instance: &MdpInstance,
        x: &DriverState,
        request: (Location, Location),
        rng: &mut StreamRng,
    ) -> Result<Action> {
        match self {
            Chooser::Table(table) => {
                let i = instance.index(instance.space.rank(x)?, instance.event_of(Some(request)));
                Ok(table[i])
            }
            Chooser::Policy(p) => {
                let grid = instance.space.grid();
                let out = p.dispatch(&grid, x, request.0, request.1, 1.0, rng);
                Ok(match out.chosen {
                    Some(k) if out.success => Action::toward(&grid, request.0, k).unwrap_or(Action::Reject),
                    _ => Action::Reject,
                })
            }
        }
    }
}

fn apply(instance: &MdpInstance, x: &mut DriverState, request: (Location, Location), action: Action) -> (bool, f64) {
    let grid = instance.space.grid();
    let (o, d) = request;
    match action.source(&grid, o) {
        Some(k) if can_serve(x, k, d) => {
            x.move_in_place(k, d);
            (true, instance.model.w(o, d))
        }
        _ => (false, 0.0),
    }
}

/// Mean and standard error of the discounted return over seeded episodes
/// truncated at `horizon` periods.
pub fn discounted_return(
    instance: &MdpInstance,
    chooser: &Chooser,
    start: &DriverState,
    episodes: usize,
    horizon: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    if episodes == 0 {
        return Err(Error::InvalidArgument("need at least one episode".into()));
    }
    instance.space.rank(start)?;
    let sampler = RequestSampler::new(&instance.model);
    let returns = (0..episodes)
        .map(|ep| {
            let mut rng = StreamRng::new(seed, ep as u64);
            let mut x = start.clone();
            let mut total = 0.0;
            let mut scale = 1.0;
            for t in 0..horizon {
                rng.seek_round(t as u64);
                if let Some(r) = sampler.pick(rng.uniform()) {
                    let a = chooser.choose(instance, &x, r, &mut rng)?;
                    total += scale * apply(instance, &mut x, r, a).1;
                }
                scale *= instance.discount;
            }
            Ok(total)
        })
        .collect::<Result<Vec<f64>>>()?;
    let k = episodes as f64;
    let mean = returns.iter().sum::<f64>() / k;
    let var = if episodes > 1 {
        returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (k - 1.0)
    } else {
        0.0
    };
    Ok((mean, (var / k).sqrt()))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpisodeStep {
    pub period: usize,
    pub counts: Vec<u32>,
    pub request: Option<(Location, Location)>,
    pub action: Action,
    pub served: bool,
}

/// Per-location activity percentages over an episode.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OccupancyReport {
    pub periods: usize,
    /// Periods with at least one driver present.
    pub time_covered: Vec<f64>,
    /// Periods in which a served trip starts or ends here.
    pub drop_rate: Vec<f64>,
    /// Periods in which a served trip starts here.
    pub start_pct: Vec<f64>,
}

impl OccupancyReport {
    /// Recomputes the percentages from an episode log.
    pub fn from_log(n: usize, log: &[EpisodeStep]) -> OccupancyReport {
        let periods = log.len();
        let mut covered = vec![0usize; n];
        let mut touched = vec![0usize; n];
        let mut started = vec![0usize; n];
        for step in log {
            for (u, &k) in step.counts.iter().enumerate() {
                if k >= 1 {
                    covered[u] += 1;
                }
            }
            if let (true, Some((o, d))) = (step.served, step.request) {
                started[o] += 1;
                touched[o] += 1;
                if d != o {
                    touched[d] += 1;
                }
            }
        }
        let pct = |v: Vec<usize>| {
            v.into_iter()
                .map(|k| if periods == 0 { 0.0 } else { 100.0 * k as f64 / periods as f64 })
                .collect()
        };
        OccupancyReport {
            periods,
            time_covered: pct(covered),
            drop_rate: pct(touched),
            start_pct: pct(started),
        }
    }
}

/// Runs one episode under a decision table and reports occupancy.
pub fn simulate_optimal_episode(
    instance: &MdpInstance,
    policy: &[Action],
    start: &DriverState,
    periods: usize,
    seed: u64,
) -> Result<(OccupancyReport, Vec<EpisodeStep>)> {
    if policy.len() != instance.num_states() {
        return Err(Error::InvalidArgument("policy does not cover every state".into()));
    }
    instance.space.rank(start)?;
    let sampler = RequestSampler::new(&instance.model);
    let chooser = Chooser::Table(policy);
    let mut rng = StreamRng::new(seed, 0);
    let mut x = start.clone();
    let mut log = Vec::with_capacity(periods);
    for t in 0..periods {
        rng.seek_round(t as u64);
        let counts = x.counts().to_vec();
        let request = sampler.pick(rng.uniform());
        let (action, served) = match request {
            Some(r) => {
                let a = chooser.choose(instance, &x, r, &mut rng)?;
                let (served, _) = apply(instance, &mut x, r, a);
                (a, served)
            }
            None => (Action::Reject, false),
        };
        log.push(EpisodeStep {
            period: t,
            counts,
            request,
            action,
            served,
        });
    }
    Ok((OccupancyReport::from_log(instance.space.n(), &log), log))
}
