//! Driver-count states and the enumerated state space Ω.
//!
//! Ω holds every vector in `{0..=c}^n` summing to `m`, ordered
//! lexicographically (location 0 most significant). Rank and unrank run in
//! `O(n·c)` against a bounded-composition counting table, so states are
//! never materialized in bulk.

use std::fmt;

use crate::error::{invalid, Error, Result};
use crate::grid::{Grid, Location};

/// Default cap on |Ω| for exact analysis.
pub const DEFAULT_STATE_CAP: u128 = 5_000_000;

/// Drivers per location together with the shared capacity `c`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DriverState {
    counts: Vec<u32>,
    capacity: u32,
}

impl DriverState {
    pub fn new(counts: Vec<u32>, capacity: u32) -> Result<DriverState> {
        if capacity == 0 {
            return invalid("capacity must be positive");
        }
        if let Some((u, x)) = counts.iter().enumerate().find(|(_, x)| **x > capacity) {
            return invalid(format!("location {u} holds {x} drivers, above capacity {capacity}"));
        }
        Ok(DriverState { counts, capacity })
    }

    /// Parses the comma-joined form, e.g. `1,0,2,0`.
    pub fn parse(s: &str, capacity: u32) -> Result<DriverState> {
        let counts = s
            .split(',')
            .map(|t| {
                t.trim()
                    .parse::<u32>()
                    .map_err(|e| Error::Parse(format!("bad driver count {t:?}: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        DriverState::new(counts, capacity)
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn capacity(&self) -> u32 {
        self.capacity
    }

    pub fn n(&self) -> usize {
        self.counts.len()
    }

    /// Total drivers `m`.
    pub fn total(&self) -> u32 {
        self.counts.iter().sum()
    }

    pub fn get(&self, u: Location) -> u32 {
        self.counts[u]
    }

    pub fn is_full(&self, u: Location) -> bool {
        self.counts[u] >= self.capacity
    }

    /// Moves one driver from `from` to `to`. A self move returns the state
    /// unchanged.
    pub fn apply_move(&self, from: Location, to: Location) -> Result<DriverState> {
        let n = self.n();
        if from >= n || to >= n {
            return invalid(format!("move {from}->{to} outside {n} locations"));
        }
        if from == to {
            return Ok(self.clone());
        }
        if self.counts[from] == 0 || self.counts[to] >= self.capacity {
            return Err(Error::InfeasibleMove { from, to });
        }
        let mut next = self.clone();
        next.counts[from] -= 1;
        next.counts[to] += 1;
        Ok(next)
    }

    pub(crate) fn move_in_place(&mut self, from: Location, to: Location) {
        debug_assert!(from == to || (self.counts[from] > 0 && self.counts[to] < self.capacity));
        if from != to {
            self.counts[from] -= 1;
            self.counts[to] += 1;
        }
    }

    /// `Σ_u |x_u − y_u|`.
    pub fn l1_distance(&self, other: &DriverState) -> u32 {
        self.counts
            .iter()
            .zip(&other.counts)
            .map(|(a, b)| a.abs_diff(*b))
            .sum()
    }
}

impl fmt::Display for DriverState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, x) in self.counts.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{x}")?;
        }
        Ok(())
    }
}

pub fn apply_move(state: &DriverState, from: Location, to: Location) -> Result<DriverState> {
    state.apply_move(from, to)
}

/// The lexicographically ordered state space Ω for `(grid, m, c)`.
#[derive(Clone, Debug)]
pub struct StateSpace {
    grid: Grid,
    m: u32,
    c: u32,
    // ways[k][s]: vectors of length k over {0..=c} summing to s
    ways: Vec<Vec<u128>>,
    size: usize,
}

impl StateSpace {
    pub fn new(grid: Grid, m: u32, c: u32) -> Result<StateSpace> {
        StateSpace::with_cap(grid, m, c, DEFAULT_STATE_CAP)
    }

    pub fn with_cap(grid: Grid, m: u32, c: u32, cap: u128) -> Result<StateSpace> {
        let n = grid.n();
        if m == 0 || c == 0 {
            return invalid(format!("drivers and capacity must be positive (m={m}, c={c})"));
        }
        if m as u128 > c as u128 * n as u128 {
            return Err(Error::Infeasible(format!(
                "{m} drivers do not fit in {n} locations of capacity {c}"
            )));
        }
        let size = count_bounded(n, m, c);
        if size > cap {
            return Err(Error::SizeLimit { size, cap });
        }
        let ways = composition_table(n, m, c);
        Ok(StateSpace {
            grid,
            m,
            c,
            ways,
            size: size as usize,
        })
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn n(&self) -> usize {
        self.grid.n()
    }

    pub fn drivers(&self) -> u32 {
        self.m
    }

    pub fn capacity(&self) -> u32 {
        self.c
    }

    pub fn len(&self) -> usize {
        self.size
    }

    pub fn is_empty(&self) -> bool {
        self.size == 0
    }

    pub fn contains(&self, state: &DriverState) -> bool {
        state.n() == self.n() && state.capacity == self.c && state.total() == self.m
    }

    pub fn rank(&self, state: &DriverState) -> Result<usize> {
        if !self.contains(state) {
            return invalid(format!("state {state} is not in this state space"));
        }
        Ok(self.rank_counts(&state.counts))
    }

    pub(crate) fn rank_counts(&self, counts: &[u32]) -> usize {
        let n = self.n();
        let mut remaining = self.m as usize;
        let mut idx = 0u128;
        for (i, &x) in counts.iter().enumerate() {
            let tail = &self.ways[n - i - 1];
            for v in 0..x as usize {
                idx += tail[remaining - v];
            }
            remaining -= x as usize;
        }
        idx as usize
    }

    pub fn unrank(&self, index: usize) -> Result<DriverState> {
        if index >= self.size {
            return invalid(format!("index {index} out of range for {} states", self.size));
        }
        let mut counts = vec![0u32; self.n()];
        self.unrank_into(index, &mut counts);
        Ok(DriverState {
            counts,
            capacity: self.c,
        })
    }

    pub(crate) fn unrank_into(&self, index: usize, counts: &mut [u32]) {
        let n = self.n();
        let mut idx = index as u128;
        let mut remaining = self.m as usize;
        for (i, slot) in counts.iter_mut().enumerate() {
            let tail = &self.ways[n - i - 1];
            let mut v = 0usize;
            loop {
                let block = if v <= remaining { tail[remaining - v] } else { 0 };
                if idx < block {
                    break;
                }
                idx -= block;
                v += 1;
            }
            *slot = v as u32;
            remaining -= v;
        }
    }

    /// States in rank order.
    pub fn iter(&self) -> impl Iterator<Item = DriverState> + '_ {
        (0..self.size).map(move |i| self.unrank(i).expect("index in range"))
    }

    /// Every ordered pair `(x, y)` where `y` moves one driver from `from`
    /// to `to ≠ from`.
    pub fn neighbor_pairs(&self) -> Vec<NeighborPair> {
        let n = self.n();
        let mut out = Vec::new();
        for x in self.iter() {
            for from in (0..n).filter(|&u| x.counts[u] > 0) {
                for to in (0..n).filter(|&v| v != from && x.counts[v] < self.c) {
                    let y = x.apply_move(from, to).expect("feasible by construction");
                    out.push(NeighborPair {
                        x: x.clone(),
                        y,
                        from,
                        to,
                    });
                }
            }
        }
        out
    }
}

pub fn enumerate_states(grid: Grid, m: u32, c: u32) -> Result<StateSpace> {
    StateSpace::new(grid, m, c)
}

/// A `(from, to)`-neighbor pair of states.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NeighborPair {
    pub x: DriverState,
    pub y: DriverState,
    pub from: Location,
    pub to: Location,
}

fn composition_table(n: usize, m: u32, c: u32) -> Vec<Vec<u128>> {
    let m = m as usize;
    let c = c as usize;
    let mut ways = vec![vec![0u128; m + 1]; n + 1];
    ways[0][0] = 1;
    for k in 1..=n {
        for s in 0..=m {
            let mut acc = 0u128;
            for v in 0..=c.min(s) {
                acc = acc.saturating_add(ways[k - 1][s - v]);
            }
            ways[k][s] = acc;
        }
    }
    ways
}

/// `|{x ∈ {0..=c}^n : Σx = m}|`, saturating at `u128::MAX`.
pub fn count_bounded(n: usize, m: u32, c: u32) -> u128 {
    // rolling one-dimensional version of the table above
    let m = m as usize;
    let c = c as usize;
    let mut row = vec![0u128; m + 1];
    row[0] = 1;
    for _ in 0..n {
        let mut next = vec![0u128; m + 1];
        for (s, slot) in next.iter_mut().enumerate() {
            let mut acc = 0u128;
            for v in 0..=c.min(s) {
                acc = acc.saturating_add(row[s - v]);
            }
            *slot = acc;
        }
        row = next;
    }
    row[m]
}
