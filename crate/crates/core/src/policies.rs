//! Dispatch policies: given a state and a request `(origin, dest)`, pick a
//! location to serve it from or reject.
//!
//! A dispatch succeeds when the chosen location holds a driver and the
//! destination has room. When the chosen location *is* the destination the
//! driver never leaves the cell, so only the first condition applies.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::grid::{Direction, Grid, Location, RequestModel};
use crate::state_space::DriverState;

/// What NAdap does when the sampled direction leaves the grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum Boundary {
    /// Reject the request; the probe mass is lost.
    #[default]
    Drop,
    /// Probe the origin instead. With uniform arrivals this makes every
    /// off-diagonal transition equal `p`, as on a grid where every cell has
    /// four neighbors.
    Origin,
}

/// A total order over the four relative directions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct DirectionOrder([Direction; 4]);

impl DirectionOrder {
    pub const CLOCKWISE: DirectionOrder = DirectionOrder(Direction::CLOCKWISE);

    pub fn new(order: [Direction; 4]) -> Result<DirectionOrder> {
        let mut seen = [false; 4];
        for d in order {
            let i = d as usize;
            if seen[i] {
                return Err(Error::InvalidArgument(format!(
                    "direction {} repeated in order",
                    d.letter()
                )));
            }
            seen[i] = true;
        }
        Ok(DirectionOrder(order))
    }

    pub fn directions(&self) -> [Direction; 4] {
        self.0
    }

    /// Position of `d` in the order (0 = checked first).
    pub fn rank(&self, d: Direction) -> usize {
        self.0.iter().position(|x| *x == d).expect("order is a permutation")
    }

    /// All 24 orders, lexicographic in clockwise index.
    pub fn all() -> Vec<DirectionOrder> {
        let mut out = Vec::with_capacity(24);
        let dirs = Direction::CLOCKWISE;
        for a in 0..4 {
            for b in 0..4 {
                for c in 0..4 {
                    for d in 0..4 {
                        let idx = [a, b, c, d];
                        let mut seen = [false; 4];
                        if idx.iter().all(|&i| !std::mem::replace(&mut seen[i], true)) {
                            out.push(DirectionOrder(idx.map(|i| dirs[i])));
                        }
                    }
                }
            }
        }
        out
    }
}

impl Default for DirectionOrder {
    fn default() -> Self {
        DirectionOrder::CLOCKWISE
    }
}

impl fmt::Display for DirectionOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for d in self.0 {
            write!(f, "{}", d.letter())?;
        }
        Ok(())
    }
}

impl FromStr for DirectionOrder {
    type Err = Error;

    fn from_str(s: &str) -> Result<DirectionOrder> {
        let letters: Vec<char> = s.trim().chars().collect();
        if letters.len() != 4 {
            return Err(Error::Parse(format!("direction order must have 4 letters, got {s:?}")));
        }
        let mut order = [Direction::North; 4];
        for (slot, c) in order.iter_mut().zip(letters) {
            *slot = Direction::from_letter(c)
                .ok_or_else(|| Error::Parse(format!("unknown direction {c:?} in {s:?}")))?;
        }
        DirectionOrder::new(order).map_err(|e| Error::Parse(e.to_string()))
    }
}

/// A dispatch policy.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Policy {
    /// Probe the origin with probability `alpha` and each of the four
    /// directions with probability `(1 − alpha)/4`.
    NAdap { alpha: f64, boundary: Boundary },
    /// Origin first, then in-grid neighbors in a fixed direction order.
    Rand { order: DirectionOrder },
    /// Origin first (unless `origin_first` is off), then neighbors by
    /// descending driver count, ties clockwise from North.
    Greedy { origin_first: bool },
}

impl Policy {
    pub fn nadap(alpha: f64) -> Result<Policy> {
        Policy::nadap_with(alpha, Boundary::Drop)
    }

    pub fn nadap_with(alpha: f64, boundary: Boundary) -> Result<Policy> {
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(Error::InvalidArgument(format!("NAdap needs 0 < alpha <= 1, got {alpha}")));
        }
        Ok(Policy::NAdap { alpha, boundary })
    }

    pub fn rand(order: DirectionOrder) -> Policy {
        Policy::Rand { order }
    }

    pub fn greedy() -> Policy {
        Policy::Greedy { origin_first: true }
    }

    /// Dispatches one request, drawing NAdap's probe from `rng`.
    pub fn dispatch<R: Rng + ?Sized>(
        &self,
        grid: &Grid,
        state: &DriverState,
        origin: Location,
        dest: Location,
        weight: f64,
        rng: &mut R,
    ) -> DispatchOutcome {
        match *self {
            Policy::NAdap { alpha, boundary } => {
                dispatch_nadap(grid, state, origin, dest, weight, alpha, boundary, rng)
            }
            Policy::Rand { order } => dispatch_rand(grid, state, origin, dest, weight, order),
            Policy::Greedy { origin_first } => {
                DispatchOutcome::resolve(state, greedy_choice(grid, state, origin, origin_first), dest, weight)
            }
        }
    }

    /// Probability over the policy's own coin that `(origin, dest)` is served.
    pub fn success_probability(&self, grid: &Grid, state: &DriverState, origin: Location, dest: Location) -> f64 {
        match *self {
            Policy::NAdap { alpha, boundary } => {
                let spread = (1.0 - alpha) / 4.0;
                let mut prob = alpha * indicator(can_serve(state, origin, dest));
                for d in Direction::CLOCKWISE {
                    match probe_target(grid, origin, Probe::Toward(d), boundary) {
                        Some(k) => prob += spread * indicator(can_serve(state, k, dest)),
                        None => {}
                    }
                }
                prob
            }
            Policy::Rand { order } => indicator(
                rand_choice(grid, state, origin, order).is_some_and(|k| can_serve(state, k, dest)),
            ),
            Policy::Greedy { origin_first } => indicator(
                greedy_choice(grid, state, origin, origin_first).is_some_and(|k| can_serve(state, k, dest)),
            ),
        }
    }
}

fn indicator(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Policy::NAdap { alpha, boundary } => {
                write!(f, "nadap:{alpha}")?;
                if *boundary == Boundary::Origin {
                    f.write_str(":origin")?;
                }
                Ok(())
            }
            Policy::Rand { order } => write!(f, "rand:{order}"),
            Policy::Greedy { origin_first: true } => f.write_str("greedy"),
            Policy::Greedy { origin_first: false } => f.write_str("greedy:pooled"),
        }
    }
}

impl FromStr for Policy {
    type Err = Error;

    /// `nadap:0.8`, `nadap:0.8:origin`, `rand:NESW`, `rand`, `greedy`,
    /// `greedy:pooled`.
    fn from_str(s: &str) -> Result<Policy> {
        let parts: Vec<&str> = s.trim().split(':').collect();
        match parts.as_slice() {
            ["nadap", a] | ["nadap", a, "drop"] => Policy::nadap(parse_alpha(a)?),
            ["nadap", a, "origin"] => Policy::nadap_with(parse_alpha(a)?, Boundary::Origin),
            ["rand"] => Ok(Policy::rand(DirectionOrder::CLOCKWISE)),
            ["rand", order] => Ok(Policy::rand(order.parse()?)),
            ["greedy"] => Ok(Policy::greedy()),
            ["greedy", "pooled"] => Ok(Policy::Greedy { origin_first: false }),
            _ => Err(Error::Parse(format!(
                "unknown policy {s:?}; expected nadap:ALPHA[:origin], rand[:ORDER] or greedy[:pooled]"
            ))),
        }
    }
}

fn parse_alpha(a: &str) -> Result<f64> {
    a.parse::<f64>()
        .map_err(|e| Error::Parse(format!("bad alpha {a:?}: {e}")))
}

/// Result of one dispatch decision.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DispatchOutcome {
    pub chosen: Option<Location>,
    pub success: bool,
    pub profit: f64,
}

impl DispatchOutcome {
    pub const REJECT: DispatchOutcome = DispatchOutcome {
        chosen: None,
        success: false,
        profit: 0.0,
    };

    fn resolve(state: &DriverState, chosen: Option<Location>, dest: Location, weight: f64) -> DispatchOutcome {
        match chosen {
            None => DispatchOutcome::REJECT,
            Some(k) => {
                let success = can_serve(state, k, dest);
                DispatchOutcome {
                    chosen: Some(k),
                    success,
                    profit: if success { weight } else { 0.0 },
                }
            }
        }
    }

    /// The move a successful dispatch makes, as `(from, to)`.
    pub fn movement(&self, dest: Location) -> Option<(Location, Location)> {
        match (self.success, self.chosen) {
            (true, Some(k)) => Some((k, dest)),
            _ => None,
        }
    }
}

/// Whether a driver at `from` can take a trip ending at `to`.
pub fn can_serve(state: &DriverState, from: Location, to: Location) -> bool {
    state.get(from) >= 1 && (from == to || !state.is_full(to))
}

/// NAdap's sampled candidate relative to the request origin.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Probe {
    Origin,
    Toward(Direction),
}

impl Probe {
    /// The five probes with their coin probabilities.
    pub fn distribution(alpha: f64) -> [(Probe, f64); 5] {
        let s = (1.0 - alpha) / 4.0;
        [
            (Probe::Origin, alpha),
            (Probe::Toward(Direction::North), s),
            (Probe::Toward(Direction::East), s),
            (Probe::Toward(Direction::South), s),
            (Probe::Toward(Direction::West), s),
        ]
    }
}

pub fn sample_probe<R: Rng + ?Sized>(alpha: f64, rng: &mut R) -> Probe {
    let u: f64 = rng.random();
    if u < alpha {
        return Probe::Origin;
    }
    let k = (((u - alpha) / (1.0 - alpha)) * 4.0) as usize;
    Probe::Toward(Direction::CLOCKWISE[k.min(3)])
}

/// Location examined for a probe; `None` when the probe is lost off-grid.
pub fn probe_target(grid: &Grid, origin: Location, probe: Probe, boundary: Boundary) -> Option<Location> {
    match probe {
        Probe::Origin => Some(origin),
        Probe::Toward(d) => match (grid.step(origin, d), boundary) {
            (Some(k), _) => Some(k),
            (None, Boundary::Drop) => None,
            (None, Boundary::Origin) => Some(origin),
        },
    }
}

/// NAdap with an already-drawn probe.
pub fn dispatch_with_probe(
    grid: &Grid,
    state: &DriverState,
    origin: Location,
    dest: Location,
    weight: f64,
    probe: Probe,
    boundary: Boundary,
) -> DispatchOutcome {
    match probe_target(grid, origin, probe, boundary) {
        None => DispatchOutcome::REJECT,
        Some(k) => DispatchOutcome::resolve(state, Some(k), dest, weight),
    }
}

#[allow(clippy::too_many_arguments)]
pub fn dispatch_nadap<R: Rng + ?Sized>(
    grid: &Grid,
    state: &DriverState,
    origin: Location,
    dest: Location,
    weight: f64,
    alpha: f64,
    boundary: Boundary,
    rng: &mut R,
) -> DispatchOutcome {
    let probe = sample_probe(alpha, rng);
    dispatch_with_probe(grid, state, origin, dest, weight, probe, boundary)
}

/// First location among the origin and its φ-ordered in-grid neighbors
/// holding a driver.
pub fn rand_choice(grid: &Grid, state: &DriverState, origin: Location, order: DirectionOrder) -> Option<Location> {
    if state.get(origin) >= 1 {
        return Some(origin);
    }
    order
        .directions()
        .into_iter()
        .filter_map(|d| grid.step(origin, d))
        .find(|&k| state.get(k) >= 1)
}

pub fn dispatch_rand(
    grid: &Grid,
    state: &DriverState,
    origin: Location,
    dest: Location,
    weight: f64,
    order: DirectionOrder,
) -> DispatchOutcome {
    DispatchOutcome::resolve(state, rand_choice(grid, state, origin, order), dest, weight)
}

/// Greedy's pick: the candidate list sorted by descending count, first
/// one with a driver.
pub fn greedy_choice(grid: &Grid, state: &DriverState, origin: Location, origin_first: bool) -> Option<Location> {
    if origin_first && state.get(origin) >= 1 {
        return Some(origin);
    }
    let mut candidates: Vec<Location> = Vec::with_capacity(5);
    if !origin_first {
        candidates.push(origin);
    }
    candidates.extend(grid.neighbors_unchecked(origin));
    // stable sort keeps origin-then-clockwise order among ties
    candidates.sort_by_key(|&k| std::cmp::Reverse(state.get(k)));
    candidates.into_iter().find(|&k| state.get(k) >= 1)
}

pub fn dispatch_greedy(
    grid: &Grid,
    state: &DriverState,
    origin: Location,
    dest: Location,
    weight: f64,
) -> DispatchOutcome {
    DispatchOutcome::resolve(state, greedy_choice(grid, state, origin, true), dest, weight)
}

/// `Σ_r p_r · w_r · Pr[success | state]`, averaging only over the policy's coin.
pub fn expected_step_profit(state: &DriverState, model: &RequestModel, policy: &Policy) -> f64 {
    let grid = model.grid();
    model
        .requests()
        .map(|(o, d, p, w)| {
            if w == 0.0 {
                0.0
            } else {
                p * w * policy.success_probability(&grid, state, o, d)
            }
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Weights;
    use crate::rng::StreamRng;
    use crate::state_space::StateSpace;
    use proptest::prelude::*;

    fn st(counts: &[u32], c: u32) -> DriverState {
        DriverState::new(counts.to_vec(), c).unwrap()
    }

    #[test]
    fn policy_grammar() {
        assert_eq!("nadap:0.8".parse::<Policy>().unwrap(), Policy::nadap(0.8).unwrap());
        assert_eq!(
            "nadap:0.5:origin".parse::<Policy>().unwrap(),
            Policy::nadap_with(0.5, Boundary::Origin).unwrap()
        );
        assert_eq!(
            "rand:NESW".parse::<Policy>().unwrap(),
            Policy::rand(DirectionOrder::CLOCKWISE)
        );
        assert_eq!("greedy".parse::<Policy>().unwrap(), Policy::greedy());
        assert!("nadap:0".parse::<Policy>().is_err());
        assert!("nadap:1.5".parse::<Policy>().is_err());
        assert!("rand:NNSW".parse::<Policy>().is_err());
        assert!("bogus".parse::<Policy>().is_err());
        for s in ["nadap:0.8", "nadap:0.25:origin", "rand:WSEN", "greedy", "greedy:pooled"] {
            assert_eq!(s.parse::<Policy>().unwrap().to_string(), s);
        }
    }

    #[test]
    fn all_orders_are_distinct_permutations() {
        let all = DirectionOrder::all();
        assert_eq!(all.len(), 24);
        let set: std::collections::HashSet<_> = all.iter().collect();
        assert_eq!(set.len(), 24);
        assert_eq!(all[0], DirectionOrder::CLOCKWISE);
    }

    #[test]
    fn nadap_alpha_one_serves_from_origin() {
        let g = Grid::new(3, 3).unwrap();
        let x = st(&[0, 0, 0, 0, 1, 0, 0, 0, 0], 2);
        let mut rng = StreamRng::new(1, 0);
        for _ in 0..100 {
            let out = dispatch_nadap(&g, &x, 4, 0, 2.0, 1.0, Boundary::Drop, &mut rng);
            assert_eq!(out, DispatchOutcome { chosen: Some(4), success: true, profit: 2.0 });
        }
    }

    #[test]
    fn nadap_rejects_when_destination_full_and_rest_empty() {
        let g = Grid::new(1, 3).unwrap();
        let x = st(&[0, 0, 2], 2);
        let mut rng = StreamRng::new(2, 0);
        for _ in 0..1000 {
            let out = dispatch_nadap(&g, &x, 0, 2, 1.0, 0.8, Boundary::Drop, &mut rng);
            assert!(!out.success);
            assert_eq!(out.profit, 0.0);
        }
    }

    #[test]
    fn nadap_coin_frequency_matches_analytic() {
        // driver only at the east neighbor of the center
        let g = Grid::new(3, 3).unwrap();
        let mut counts = vec![0u32; 9];
        counts[5] = 1;
        let x = st(&counts, 2);
        let policy = Policy::nadap(0.8).unwrap();
        let p = policy.success_probability(&g, &x, 4, 0);
        assert!((p - 0.05).abs() < 1e-15);
        let mut rng = StreamRng::new(11, 0);
        let trials = 1_000_000;
        let hits = (0..trials)
            .filter(|_| policy.dispatch(&g, &x, 4, 0, 1.0, &mut rng).success)
            .count();
        let freq = hits as f64 / trials as f64;
        let sigma = (p * (1.0 - p) / trials as f64).sqrt();
        assert!((freq - p).abs() < 3.0 * sigma, "freq {freq} vs {p}");
    }

    #[test]
    fn rand_prefers_origin() {
        let g = Grid::new(3, 3).unwrap();
        let x = st(&[0, 1, 0, 1, 1, 1, 0, 1, 0], 2);
        for order in DirectionOrder::all() {
            assert_eq!(dispatch_rand(&g, &x, 4, 0, 1.0, order).chosen, Some(4));
        }
    }

    #[test]
    fn rand_follows_order_for_two_neighbor_placements() {
        let g = Grid::new(3, 3).unwrap();
        let center = 4;
        let nbrs: Vec<(Direction, Location)> = Direction::CLOCKWISE
            .into_iter()
            .map(|d| (d, g.step(center, d).unwrap()))
            .collect();
        for order in DirectionOrder::all() {
            for i in 0..4 {
                for j in (i + 1)..4 {
                    let mut counts = vec![0u32; 9];
                    counts[nbrs[i].1] = 1;
                    counts[nbrs[j].1] = 1;
                    let x = st(&counts, 2);
                    let expected = if order.rank(nbrs[i].0) < order.rank(nbrs[j].0) {
                        nbrs[i].1
                    } else {
                        nbrs[j].1
                    };
                    assert_eq!(dispatch_rand(&g, &x, center, 0, 1.0, order).chosen, Some(expected));
                }
            }
        }
    }

    #[test]
    fn rand_no_fallback_when_destination_full() {
        let g = Grid::new(1, 3).unwrap();
        let x = st(&[1, 1, 0], 1);
        let out = dispatch_rand(&g, &x, 0, 1, 3.0, DirectionOrder::CLOCKWISE);
        assert_eq!(out, DispatchOutcome { chosen: Some(0), success: false, profit: 0.0 });
    }

    #[test]
    fn self_trip_needs_only_a_driver() {
        let g = Grid::new(1, 2).unwrap();
        let x = st(&[2, 0], 2);
        let out = dispatch_rand(&g, &x, 0, 0, 1.0, DirectionOrder::CLOCKWISE);
        assert!(out.success);
        assert_eq!(out.movement(0), Some((0, 0)));
    }

    #[test]
    fn greedy_examples() {
        let g = Grid::new(3, 3).unwrap();
        // all neighbors equal, origin empty: North wins the tie
        let x = st(&[0, 1, 0, 1, 0, 1, 0, 1, 0], 2);
        assert_eq!(dispatch_greedy(&g, &x, 4, 4, 1.0).chosen, Some(1));
        // u:0 N:3 E:1 S:0 W:2
        let x = st(&[0, 3, 0, 2, 0, 1, 0, 0, 0], 3);
        let out = dispatch_greedy(&g, &x, 4, 8, 1.0);
        let brute = g
            .neighbors(4)
            .unwrap()
            .into_iter()
            .max_by_key(|&k| (x.get(k), std::cmp::Reverse(k)))
            .unwrap();
        assert_eq!(out.chosen, Some(brute));
        assert_eq!(out.chosen, Some(1));
        let x = st(&[0, 0, 0, 0, 0, 0, 0, 0, 2], 2);
        assert_eq!(dispatch_greedy(&g, &x, 4, 0, 1.0), DispatchOutcome::REJECT);
    }

    #[test]
    fn greedy_pooled_variant_can_skip_origin() {
        let g = Grid::new(1, 3).unwrap();
        let x = st(&[0, 1, 3], 3);
        assert_eq!(greedy_choice(&g, &x, 1, true), Some(1));
        assert_eq!(greedy_choice(&g, &x, 1, false), Some(2));
    }

    #[test]
    fn expected_profit_everything_served() {
        // c = m and every location occupied: every request succeeds
        let g = Grid::new(2, 2).unwrap();
        let model = RequestModel::uniform(g, 1.0 / 20.0, Weights::Constant(1.0)).unwrap();
        let x = st(&[1, 1, 1, 1], 4);
        for policy in [Policy::nadap(1.0).unwrap(), Policy::rand(DirectionOrder::CLOCKWISE), Policy::greedy()] {
            let v = expected_step_profit(&x, &model, &policy);
            assert!((v - model.total_mass()).abs() < 1e-15);
        }
    }

    #[test]
    fn expected_profit_zero_when_nothing_feasible() {
        // the only request starts two cells away from every driver
        let g = Grid::new(1, 3).unwrap();
        let mut p = vec![0.0; 9];
        p[2] = 0.5;
        let model = RequestModel::new(g, p, Weights::Constant(1.0)).unwrap();
        let x = st(&[0, 0, 2], 2);
        for policy in [Policy::nadap(0.8).unwrap(), Policy::rand(DirectionOrder::CLOCKWISE), Policy::greedy()] {
            assert_eq!(expected_step_profit(&x, &model, &policy), 0.0);
        }
    }

    #[test]
    fn expected_profit_matches_monte_carlo() {
        let g = Grid::new(2, 2).unwrap();
        let model = RequestModel::uniform(g, 1.0 / 16.0, Weights::Distance).unwrap();
        let policy = Policy::nadap(0.8).unwrap();
        let x = st(&[1, 1, 0, 0], 2);
        let exact = expected_step_profit(&x, &model, &policy);
        let sampler = crate::grid::RequestSampler::new(&model);
        let mut rng = StreamRng::new(99, 0);
        let trials = 1_000_000;
        let (mut sum, mut sum2) = (0.0, 0.0);
        for _ in 0..trials {
            let profit = match sampler.pick(rng.uniform()) {
                Some((o, d)) => policy.dispatch(&g, &x, o, d, model.w(o, d), &mut rng).profit,
                None => 0.0,
            };
            sum += profit;
            sum2 += profit * profit;
        }
        let mean = sum / trials as f64;
        let sd = ((sum2 / trials as f64 - mean * mean) * trials as f64 / (trials - 1) as f64).sqrt();
        let se = sd / (trials as f64).sqrt();
        assert!((mean - exact).abs() < 3.0 * se, "mc {mean} exact {exact} se {se}");
    }

    #[test]
    fn expected_profit_invariant_under_grid_symmetry() {
        // horizontal reflection of a 3x3 grid maps clockwise ties onto
        // counter-clockwise ones, so only NAdap (no tie rule) is checked
        let g = Grid::new(3, 3).unwrap();
        let model = RequestModel::uniform(g, 1.0 / 81.0, Weights::Constant(1.0)).unwrap();
        let space = StateSpace::new(g, 3, 2).unwrap();
        let mirror = |u: Location| {
            let (r, c) = g.coords(u).unwrap();
            g.index(r, 2 - c).unwrap()
        };
        let transpose = |u: Location| {
            let (r, c) = g.coords(u).unwrap();
            g.index(c, r).unwrap()
        };
        let policy = Policy::nadap(0.6).unwrap();
        for x in space.iter() {
            let base = expected_step_profit(&x, &model, &policy);
            for f in [&mirror as &dyn Fn(Location) -> Location, &transpose] {
                let mut counts = vec![0u32; 9];
                for u in 0..9 {
                    counts[f(u)] = x.get(u);
                }
                let y = st(&counts, 2);
                assert!((expected_step_profit(&y, &model, &policy) - base).abs() < 1e-15);
            }
        }
    }

    proptest! {
        #[test]
        fn successful_dispatch_is_feasible(
            counts in proptest::collection::vec(0u32..=2, 9),
            origin in 0usize..9,
            dest in 0usize..9,
            seed in any::<u64>(),
            which in 0usize..4,
        ) {
            let g = Grid::new(3, 3).unwrap();
            let x = st(&counts, 2);
            let policy = [
                Policy::nadap(0.7).unwrap(),
                Policy::nadap_with(0.3, Boundary::Origin).unwrap(),
                Policy::rand(DirectionOrder::all()[(seed % 24) as usize]),
                Policy::greedy(),
            ][which];
            let mut rng = StreamRng::new(seed, 0);
            let out = policy.dispatch(&g, &x, origin, dest, 1.0, &mut rng);
            if out.success {
                let k = out.chosen.unwrap();
                prop_assert!(x.get(k) >= 1);
                prop_assert!(k == dest || x.get(dest) < 2);
                prop_assert_eq!(out.profit, 1.0);
                prop_assert!(k == origin || g.manhattan_distance(k, origin).unwrap() == 1);
            } else {
                prop_assert_eq!(out.profit, 0.0);
            }
        }

        #[test]
        fn deterministic_policies_are_pure(
            counts in proptest::collection::vec(0u32..=2, 9),
            origin in 0usize..9,
            dest in 0usize..9,
            k in 0usize..24,
        ) {
            let g = Grid::new(3, 3).unwrap();
            let x = st(&counts, 2);
            let order = DirectionOrder::all()[k];
            prop_assert_eq!(
                dispatch_rand(&g, &x, origin, dest, 1.0, order),
                dispatch_rand(&g, &x, origin, dest, 1.0, order)
            );
            prop_assert_eq!(dispatch_greedy(&g, &x, origin, dest, 1.0), dispatch_greedy(&g, &x, origin, dest, 1.0));
        }
    }
}
