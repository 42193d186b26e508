//! Exact transition matrices over the state space and what follows from
//! them: stationary distribution, structural checks, mixing curves,
//! limiting objective and exact error curves.

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use num_rational::Ratio;
use num_traits::{Num, Zero};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{Direction, Grid, Location, RequestModel};
use crate::policies::{
    dispatch_with_probe, expected_step_profit, Boundary, DirectionOrder, Policy, Probe,
};
use crate::series::{ErrorSeries, Target};
use crate::state_space::{DriverState, StateSpace};

/// Largest chain solved densely; above this the stationary solve iterates.
pub const DENSE_SOLVE_LIMIT: usize = 2000;
pub const POWER_TOLERANCE: f64 = 1e-12;
pub const POWER_MAX_ITERATIONS: usize = 10_000_000;

/// Number type a transition matrix can be built over.
pub trait Scalar: Clone + Num + PartialOrd + Send + Sync + fmt::Debug + 'static {
    fn from_f64(x: f64) -> Result<Self>;
    fn to_f64(&self) -> f64;
}

impl Scalar for f64 {
    fn from_f64(x: f64) -> Result<f64> {
        Ok(x)
    }

    fn to_f64(&self) -> f64 {
        *self
    }
}

impl Scalar for Ratio<i64> {
    /// Exact conversion of a float that is the nearest double to a fraction
    /// with denominator at most 2^20.
    fn from_f64(x: f64) -> Result<Ratio<i64>> {
        if x == 0.0 {
            return Ok(Ratio::zero());
        }
        for q in 1..=(1i64 << 20) {
            let num = (x * q as f64).round();
            if num / q as f64 == x {
                return Ok(Ratio::new(num as i64, q));
            }
        }
        Err(Error::InvalidArgument(format!("{x} has no small rational form")))
    }

    fn to_f64(&self) -> f64 {
        *self.numer() as f64 / *self.denom() as f64
    }
}

/// Row-stochastic sparse matrix in compressed-row form.
#[derive(Clone, Debug)]
pub struct TransitionMatrix<T = f64> {
    space: Option<StateSpace>,
    policy: Option<Policy>,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<T>,
}

impl<T: Scalar> TransitionMatrix<T> {
    fn from_rows(space: Option<StateSpace>, policy: Option<Policy>, rows: Vec<Vec<(usize, T)>>) -> Self {
        let mut row_ptr = Vec::with_capacity(rows.len() + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for row in rows {
            for (j, v) in row {
                if !v.is_zero() {
                    cols.push(j);
                    vals.push(v);
                }
            }
            row_ptr.push(cols.len());
        }
        TransitionMatrix {
            space,
            policy,
            row_ptr,
            cols,
            vals,
        }
    }

    /// A matrix not tied to any state space, e.g. for structural tests.
    pub fn from_dense(rows: &[Vec<T>]) -> Result<Self> {
        let k = rows.len();
        if rows.iter().any(|r| r.len() != k) {
            return Err(Error::InvalidArgument("matrix must be square".into()));
        }
        let sparse = rows
            .iter()
            .map(|r| r.iter().cloned().enumerate().collect())
            .collect();
        Ok(Self::from_rows(None, None, sparse))
    }

    pub fn len(&self) -> usize {
        self.row_ptr.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn space(&self) -> Option<&StateSpace> {
        self.space.as_ref()
    }

    pub fn policy(&self) -> Option<Policy> {
        self.policy
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, &T)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[r.clone()].iter().copied().zip(&self.vals[r])
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.cols[r.clone()].binary_search(&j) {
            Ok(k) => self.vals[r.start + k].clone(),
            Err(_) => T::zero(),
        }
    }

    pub fn row_sum(&self, i: usize) -> T {
        self.row(i).fold(T::zero(), |acc, (_, v)| acc + v.clone())
    }

    pub fn to_dense(&self) -> Vec<Vec<T>> {
        (0..self.len())
            .map(|i| {
                let mut row = vec![T::zero(); self.len()];
                for (j, v) in self.row(i) {
                    row[j] = v.clone();
                }
                row
            })
            .collect()
    }

    pub fn to_f64(&self) -> TransitionMatrix<f64> {
        TransitionMatrix {
            space: self.space.clone(),
            policy: self.policy,
            row_ptr: self.row_ptr.clone(),
            cols: self.cols.clone(),
            vals: self.vals.iter().map(Scalar::to_f64).collect(),
        }
    }

    fn space_or_err(&self) -> Result<&StateSpace> {
        self.space
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("matrix is not attached to a state space".into()))
    }
}

impl TransitionMatrix<f64> {
    /// `out = mu · P`.
    pub fn left_multiply(&self, mu: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|x| *x = 0.0);
        for (i, &w) in mu.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            for (j, v) in self.row(i) {
                out[j] += w * v;
            }
        }
    }

    pub fn max_row_sum_error(&self) -> f64 {
        (0..self.len())
            .map(|i| (self.row_sum(i) - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

fn check_inputs(space: &StateSpace, model: &RequestModel) -> Result<()> {
    if space.grid() != model.grid() {
        return Err(Error::InvalidArgument(format!(
            "state space grid {} differs from request model grid {}",
            space.grid(),
            model.grid()
        )));
    }
    Ok(())
}

fn scalar_probabilities<T: Scalar>(model: &RequestModel) -> Result<Vec<T>> {
    model.probabilities().iter().map(|&p| T::from_f64(p)).collect()
}

fn finish_row<T: Scalar>(row: usize, mut off: Vec<(usize, T)>) -> Vec<(usize, T)> {
    let total = off.iter().fold(T::zero(), |acc, (_, v)| acc + v.clone());
    off.push((row, T::one() - total));
    off.sort_by_key(|e| e.0);
    off
}

/// Calls `f(from, to, rank(y))` for every feasible single-driver move out of
/// the state with the given counts.
fn for_each_move(space: &StateSpace, counts: &mut [u32], mut f: impl FnMut(Location, Location, usize)) {
    let n = counts.len();
    let c = space.capacity();
    for u in 0..n {
        if counts[u] == 0 {
            continue;
        }
        for v in 0..n {
            if v == u || counts[v] >= c {
                continue;
            }
            counts[u] -= 1;
            counts[v] += 1;
            let j = space.rank_counts(counts);
            counts[u] += 1;
            counts[v] -= 1;
            f(u, v, j);
        }
    }
}

fn build_rows<T: Scalar>(
    space: &StateSpace,
    row: impl Fn(usize, &mut [u32]) -> Vec<(usize, T)> + Sync,
) -> Vec<Vec<(usize, T)>> {
    (0..space.len())
        .into_par_iter()
        .map(|i| {
            let mut counts = vec![0u32; space.n()];
            space.unrank_into(i, &mut counts);
            row(i, &mut counts)
        })
        .collect()
}

/// `q(u, u')`: total probability per round that NAdap moves a driver from
/// `u` to `u'` when both ends permit it.
pub fn nadap_flow<T: Scalar>(model: &RequestModel, alpha: f64, boundary: Boundary) -> Result<Vec<T>> {
    let grid = model.grid();
    let n = grid.n();
    let p = scalar_probabilities::<T>(model)?;
    let a = T::from_f64(alpha)?;
    let spread = (T::one() - a.clone()) / T::from_f64(4.0)?;
    let mut q = vec![T::zero(); n * n];
    for u in 0..n {
        let nbrs: Vec<Location> = grid.neighbors_unchecked(u).collect();
        let missing = T::from_f64((4 - nbrs.len()) as f64)?;
        for v in 0..n {
            let mut total = a.clone() * p[u * n + v].clone();
            for &k in &nbrs {
                total = total + spread.clone() * p[k * n + v].clone();
            }
            if boundary == Boundary::Origin {
                total = total + spread.clone() * missing.clone() * p[u * n + v].clone();
            }
            q[u * n + v] = total;
        }
    }
    Ok(q)
}

pub fn nadap_matrix<T: Scalar>(
    space: &StateSpace,
    model: &RequestModel,
    alpha: f64,
    boundary: Boundary,
) -> Result<TransitionMatrix<T>> {
    check_inputs(space, model)?;
    let policy = Policy::nadap_with(alpha, boundary)?;
    let n = space.n();
    let q = nadap_flow::<T>(model, alpha, boundary)?;
    let rows = build_rows(space, |i, counts| {
        let mut off = Vec::new();
        for_each_move(space, counts, |u, v, j| {
            let w = q[u * n + v].clone();
            if !w.is_zero() {
                off.push((j, w));
            }
        });
        finish_row(i, off)
    });
    Ok(TransitionMatrix::from_rows(Some(space.clone()), Some(policy), rows))
}

/// Neighbors `v` of `u` whose requests Rand(φ) routes to `u` in this state.
pub fn supportive_neighbors(grid: &Grid, counts: &[u32], u: Location, order: DirectionOrder) -> Vec<Location> {
    let mut out = Vec::new();
    for d in Direction::CLOCKWISE {
        let Some(v) = grid.step(u, d) else { continue };
        if counts[v] != 0 {
            continue;
        }
        let back = order.rank(d.opposite());
        let shadowed = order.directions()[..back]
            .iter()
            .filter_map(|&e| grid.step(v, e))
            .any(|k| counts[k] != 0);
        if !shadowed {
            out.push(v);
        }
    }
    out
}

pub fn rand_matrix<T: Scalar>(
    space: &StateSpace,
    model: &RequestModel,
    order: DirectionOrder,
) -> Result<TransitionMatrix<T>> {
    check_inputs(space, model)?;
    let grid = space.grid();
    let n = space.n();
    let p = scalar_probabilities::<T>(model)?;
    let rows = build_rows(space, |i, counts| {
        let support: Vec<Vec<Location>> = (0..n)
            .map(|u| {
                if counts[u] >= 1 {
                    supportive_neighbors(&grid, counts, u, order)
                } else {
                    Vec::new()
                }
            })
            .collect();
        let mut off = Vec::new();
        for_each_move(space, counts, |u, v, j| {
            let w = support[u]
                .iter()
                .fold(p[u * n + v].clone(), |acc, &s| acc + p[s * n + v].clone());
            if !w.is_zero() {
                off.push((j, w));
            }
        });
        finish_row(i, off)
    });
    Ok(TransitionMatrix::from_rows(
        Some(space.clone()),
        Some(Policy::rand(order)),
        rows,
    ))
}

/// Builds a row by running the policy on every request and adding the
/// request probability to whatever state results.
pub fn accumulated_matrix<T: Scalar>(
    space: &StateSpace,
    model: &RequestModel,
    policy: &Policy,
) -> Result<TransitionMatrix<T>> {
    check_inputs(space, model)?;
    let grid = space.grid();
    let n = space.n();
    let p = scalar_probabilities::<T>(model)?;
    let idle = p.iter().fold(T::one(), |acc, x| acc - x.clone());
    let coins: Vec<(Probe, T)> = match *policy {
        Policy::NAdap { alpha, .. } => {
            let a = T::from_f64(alpha)?;
            let s = (T::one() - a.clone()) / T::from_f64(4.0)?;
            let mut v = vec![(Probe::Origin, a)];
            v.extend(Direction::CLOCKWISE.map(|d| (Probe::Toward(d), s.clone())));
            v
        }
        _ => Vec::new(),
    };
    let rows = build_rows(space, |i, counts| {
        let state = DriverState::new(counts.to_vec(), space.capacity()).expect("unranked state is valid");
        let mut acc: BTreeMap<usize, T> = BTreeMap::new();
        acc.insert(i, idle.clone());
        let mut add = |j: usize, w: T| {
            let e = acc.entry(j).or_insert_with(T::zero);
            *e = e.clone() + w;
        };
        let target = |mv: Option<(Location, Location)>| match mv {
            Some((from, to)) if from != to => {
                let next = state.apply_move(from, to).expect("successful dispatch is feasible");
                space.rank(&next).expect("move stays in the space")
            }
            _ => i,
        };
        for o in 0..n {
            for d in 0..n {
                let pr = p[o * n + d].clone();
                if pr.is_zero() {
                    continue;
                }
                match *policy {
                    Policy::NAdap { boundary, .. } => {
                        for (probe, w) in &coins {
                            let out = dispatch_with_probe(&grid, &state, o, d, 1.0, *probe, boundary);
                            add(target(out.movement(d)), pr.clone() * w.clone());
                        }
                    }
                    _ => {
                        let mut no_coin = crate::rng::StreamRng::new(0, 0);
                        let out = policy.dispatch(&grid, &state, o, d, 1.0, &mut no_coin);
                        add(target(out.movement(d)), pr);
                    }
                }
            }
        }
        acc.into_iter().collect()
    });
    Ok(TransitionMatrix::from_rows(Some(space.clone()), Some(*policy), rows))
}

/// Transition matrix of any policy, over any scalar type.
pub fn transition_matrix<T: Scalar>(
    space: &StateSpace,
    model: &RequestModel,
    policy: &Policy,
) -> Result<TransitionMatrix<T>> {
    match *policy {
        Policy::NAdap { alpha, boundary } => nadap_matrix(space, model, alpha, boundary),
        Policy::Rand { order } => rand_matrix(space, model, order),
        Policy::Greedy { .. } => accumulated_matrix(space, model, policy),
    }
}

pub fn build_transition_nadap(space: &StateSpace, model: &RequestModel, alpha: f64) -> Result<TransitionMatrix> {
    nadap_matrix(space, model, alpha, Boundary::Drop)
}

pub fn build_transition_rand(
    space: &StateSpace,
    model: &RequestModel,
    order: DirectionOrder,
) -> Result<TransitionMatrix> {
    rand_matrix(space, model, order)
}

pub fn build_transition(space: &StateSpace, model: &RequestModel, policy: &Policy) -> Result<TransitionMatrix> {
    transition_matrix(space, model, policy)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SolveMethod {
    Dense,
    Power { iterations: usize },
}

#[derive(Clone, Debug)]
pub struct StationaryResult {
    pub pi: Vec<f64>,
    /// `gamma[u * n + v]`.
    pub gamma: Vec<f64>,
    /// `eta[u * n + v]`.
    pub eta: Vec<f64>,
    pub residual: f64,
    pub method: SolveMethod,
    pub policy: Option<Policy>,
    n: usize,
}

impl StationaryResult {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn gamma(&self, u: Location, v: Location) -> f64 {
        self.gamma[u * self.n + v]
    }

    pub fn eta(&self, u: Location, v: Location) -> f64 {
        self.eta[u * self.n + v]
    }
}

/// `(γ, η)` of a distribution over the space, each `n × n` row-major.
///
/// `γ_{u,v}` is the probability that a driver at `u` can serve a trip to
/// `v`: `x_u ≥ 1` and, unless `u = v`, `x_v < c`. `η_{u,v}` requires a
/// driver somewhere in the closed neighborhood of `u` and `x_v < c`.
pub fn gamma_eta(space: &StateSpace, dist: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = space.n();
    let grid = space.grid();
    let c = space.capacity();
    let hoods: Vec<Vec<Location>> = (0..n)
        .map(|u| grid.closed_neighborhood(u).expect("location in grid"))
        .collect();
    let mut gamma = vec![0.0; n * n];
    let mut eta = vec![0.0; n * n];
    let mut counts = vec![0u32; n];
    for (i, &w) in dist.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        space.unrank_into(i, &mut counts);
        for u in 0..n {
            let near = hoods[u].iter().any(|&k| counts[k] >= 1);
            for v in 0..n {
                let room = counts[v] < c;
                if counts[u] >= 1 && (u == v || room) {
                    gamma[u * n + v] += w;
                }
                if near && room {
                    eta[u * n + v] += w;
                }
            }
        }
    }
    (gamma, eta)
}

fn l1_residual(p: &TransitionMatrix, pi: &[f64]) -> f64 {
    let mut next = vec![0.0; pi.len()];
    p.left_multiply(pi, &mut next);
    next.iter().zip(pi).map(|(a, b)| (a - b).abs()).sum()
}

fn normalize(pi: &mut [f64]) {
    for x in pi.iter_mut() {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
    let s: f64 = pi.iter().sum();
    pi.iter_mut().for_each(|x| *x /= s);
}

fn dense_stationary(p: &TransitionMatrix) -> Result<Vec<f64>> {
    let k = p.len();
    let mut a = DMatrix::<f64>::zeros(k, k);
    for i in 0..k {
        for (j, v) in p.row(i) {
            a[(j, i)] += v;
        }
        a[(i, i)] -= 1.0;
    }
    for j in 0..k {
        a[(k - 1, j)] = 1.0;
    }
    let mut b = DVector::<f64>::zeros(k);
    b[k - 1] = 1.0;
    let x = a
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::InvalidArgument("stationary system is singular; chain is not irreducible".into()))?;
    let mut pi: Vec<f64> = x.iter().copied().collect();
    normalize(&mut pi);
    Ok(pi)
}

fn power_stationary(p: &TransitionMatrix, max_iterations: usize) -> Result<(Vec<f64>, usize)> {
    let k = p.len();
    let mut pi = vec![1.0 / k as f64; k];
    let mut next = vec![0.0; k];
    for it in 1..=max_iterations {
        p.left_multiply(&pi, &mut next);
        let diff: f64 = next.iter().zip(&pi).map(|(a, b)| (a - b).abs()).sum();
        std::mem::swap(&mut pi, &mut next);
        if diff <= POWER_TOLERANCE {
            normalize(&mut pi);
            return Ok((pi, it));
        }
        if it == max_iterations {
            return Err(Error::IterationLimit {
                iterations: it,
                residual: diff,
            });
        }
    }
    unreachable!("loop returns")
}

pub fn stationary_distribution(p: &TransitionMatrix) -> Result<StationaryResult> {
    stationary_with_limit(p, POWER_MAX_ITERATIONS)
}

pub fn stationary_with_limit(p: &TransitionMatrix, max_iterations: usize) -> Result<StationaryResult> {
    if p.is_empty() {
        return Err(Error::InvalidArgument("empty matrix".into()));
    }
    let (pi, method) = if p.len() <= DENSE_SOLVE_LIMIT {
        (dense_stationary(p)?, SolveMethod::Dense)
    } else {
        let (pi, iterations) = power_stationary(p, max_iterations)?;
        (pi, SolveMethod::Power { iterations })
    };
    let residual = l1_residual(p, &pi);
    let (gamma, eta, n) = match p.space() {
        Some(space) => {
            let (g, e) = gamma_eta(space, &pi);
            (g, e, space.n())
        }
        None => (Vec::new(), Vec::new(), 0),
    };
    Ok(StationaryResult {
        pi,
        gamma,
        eta,
        residual,
        method,
        policy: p.policy(),
        n,
    })
}

/// Strongly connected components; returns a component id per state.
fn components<T: Scalar>(p: &TransitionMatrix<T>) -> (Vec<usize>, usize) {
    let k = p.len();
    let mut reverse: Vec<Vec<usize>> = vec![Vec::new(); k];
    for i in 0..k {
        for (j, _) in p.row(i) {
            reverse[j].push(i);
        }
    }
    // first pass: finishing order, iterative DFS
    let mut seen = vec![false; k];
    let mut order = Vec::with_capacity(k);
    for root in 0..k {
        if seen[root] {
            continue;
        }
        seen[root] = true;
        let mut stack: Vec<(usize, usize)> = vec![(root, p.row_ptr[root])];
        while let Some(top) = stack.last_mut() {
            let (node, pos) = *top;
            if pos < p.row_ptr[node + 1] {
                top.1 += 1;
                let next = p.cols[pos];
                if !seen[next] {
                    seen[next] = true;
                    stack.push((next, p.row_ptr[next]));
                }
            } else {
                order.push(node);
                stack.pop();
            }
        }
    }
    let mut comp = vec![usize::MAX; k];
    let mut count = 0;
    for &root in order.iter().rev() {
        if comp[root] != usize::MAX {
            continue;
        }
        comp[root] = count;
        let mut stack = vec![root];
        while let Some(node) = stack.pop() {
            for &prev in &reverse[node] {
                if comp[prev] == usize::MAX {
                    comp[prev] = count;
                    stack.push(prev);
                }
            }
        }
        count += 1;
    }
    (comp, count)
}

pub fn check_irreducible<T: Scalar>(p: &TransitionMatrix<T>) -> bool {
    !p.is_empty() && components(p).1 == 1
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Every recurrent class (and every other class with a cycle) has period 1.
pub fn check_aperiodic<T: Scalar>(p: &TransitionMatrix<T>) -> bool {
    let (comp, count) = components(p);
    let has_loop = |i: usize| p.row(i).any(|(j, _)| j == i);
    if count == 1 && (0..p.len()).any(has_loop) {
        return true;
    }
    let mut level = vec![usize::MAX; p.len()];
    let mut period = vec![0usize; count];
    for root in 0..p.len() {
        let c = comp[root];
        if level[root] != usize::MAX {
            continue;
        }
        level[root] = 0;
        let mut queue = std::collections::VecDeque::from([root]);
        while let Some(a) = queue.pop_front() {
            for (b, _) in p.row(a) {
                if comp[b] != c {
                    continue;
                }
                if level[b] == usize::MAX {
                    level[b] = level[a] + 1;
                    queue.push_back(b);
                } else {
                    let diff = (level[a] + 1).abs_diff(level[b]);
                    period[c] = gcd(period[c], diff);
                }
            }
        }
    }
    // period 0 means the class has no internal cycle at all
    period.iter().all(|&g| g <= 1)
}

pub fn tv_distance(mu: &[f64], nu: &[f64]) -> Result<f64> {
    if mu.len() != nu.len() {
        return Err(Error::InvalidArgument(format!(
            "distributions differ in length: {} vs {}",
            mu.len(),
            nu.len()
        )));
    }
    Ok(0.5 * mu.iter().zip(nu).map(|(a, b)| (a - b).abs()).sum::<f64>())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MixingReport {
    /// `d(t)` for `t = 0..=t_max`.
    pub d_curve: Vec<f64>,
    /// `(ε, τ(ε))` pairs in the order requested.
    pub tau: Vec<(f64, usize)>,
    /// `(C, β)` when the uniform-case envelope applies.
    pub envelope: Option<(f64, f64)>,
    pub starts: usize,
    /// True when `d(t)` is a maximum over a sample of start states only.
    pub sampled: bool,
}

impl MixingReport {
    pub fn tau_for(&self, eps: f64) -> Option<usize> {
        self.tau.iter().find(|(e, _)| *e == eps).map(|&(_, t)| t)
    }
}

pub fn mixing_analysis(p: &TransitionMatrix, pi: &[f64], eps: &[f64], t_max: usize) -> Result<MixingReport> {
    let starts: Vec<usize> = (0..p.len()).collect();
    let mut report = mixing_analysis_from(p, pi, &starts, eps, t_max)?;
    report.sampled = false;
    Ok(report)
}

/// `d(t)` maximized over the given start states only.
pub fn mixing_analysis_from(
    p: &TransitionMatrix,
    pi: &[f64],
    starts: &[usize],
    eps: &[f64],
    t_max: usize,
) -> Result<MixingReport> {
    if t_max < 1 {
        return Err(Error::InvalidArgument("t_max must be at least 1".into()));
    }
    if pi.len() != p.len() {
        return Err(Error::InvalidArgument("stationary vector does not match the matrix".into()));
    }
    if eps.is_empty() || eps.iter().any(|&e| !(e > 0.0 && e < 1.0)) {
        return Err(Error::InvalidArgument("each ε must lie in (0, 1)".into()));
    }
    if let Some(&bad) = starts.iter().find(|&&s| s >= p.len()) {
        return Err(Error::InvalidArgument(format!("start state {bad} out of range")));
    }
    let curve_from = |s: usize| {
        let mut mu = vec![0.0; p.len()];
        mu[s] = 1.0;
        let mut next = vec![0.0; p.len()];
        let mut curve = Vec::with_capacity(t_max + 1);
        curve.push(tv_distance(&mu, pi).expect("lengths checked"));
        for _ in 0..t_max {
            p.left_multiply(&mu, &mut next);
            std::mem::swap(&mut mu, &mut next);
            curve.push(tv_distance(&mu, pi).expect("lengths checked"));
        }
        curve
    };
    // max is exact, so the reduction order cannot change the result
    let d_curve = starts
        .par_iter()
        .map(|&s| curve_from(s))
        .reduce(
            || vec![0.0; t_max + 1],
            |a, b| a.iter().zip(&b).map(|(x, y)| x.max(*y)).collect(),
        );
    let min_eps = eps.iter().copied().fold(f64::INFINITY, f64::min);
    let last = d_curve[t_max];
    if last > min_eps {
        return Err(Error::HorizonTooShort {
            t_max,
            last,
            eps: min_eps,
            curve: d_curve,
        });
    }
    let tau = eps
        .iter()
        .map(|&e| {
            let t = d_curve.iter().rposition(|&d| d > e).map_or(0, |t| t + 1);
            (e, t)
        })
        .collect();
    Ok(MixingReport {
        d_curve,
        tau,
        envelope: None,
        starts: starts.len(),
        sampled: true,
    })
}

/// Per-state expected one-round profit.
pub fn expected_profits(space: &StateSpace, model: &RequestModel, policy: &Policy) -> Vec<f64> {
    (0..space.len())
        .into_par_iter()
        .map(|i| {
            let x = space.unrank(i).expect("index in range");
            expected_step_profit(&x, model, policy)
        })
        .collect()
}

/// `Σ_x π(x)·E[profit | x]`.
pub fn limiting_objective_by_states(space: &StateSpace, pi: &[f64], model: &RequestModel, policy: &Policy) -> f64 {
    expected_profits(space, model, policy)
        .iter()
        .zip(pi)
        .map(|(a, b)| a * b)
        .sum()
}

/// Long-run average profit per round. NAdap uses the `γ` form; other
/// policies take the stationary expectation of the per-state profit.
pub fn limiting_objective(
    space: &StateSpace,
    stationary: &StationaryResult,
    model: &RequestModel,
    policy: &Policy,
) -> Result<f64> {
    if let Some(built) = stationary.policy {
        if built != *policy {
            return Err(Error::InvalidArgument(format!(
                "stationary distribution belongs to {built}, not {policy}"
            )));
        }
    }
    if stationary.pi.len() != space.len() || stationary.n != space.n() {
        return Err(Error::InvalidArgument("stationary result does not match the state space".into()));
    }
    check_inputs(space, model)?;
    match *policy {
        Policy::NAdap { alpha, boundary } => {
            let grid = space.grid();
            let spread = (1.0 - alpha) / 4.0;
            let total = model
                .requests()
                .map(|(u, v, p, w)| {
                    let mut reach = alpha * stationary.gamma(u, v);
                    for d in Direction::CLOCKWISE {
                        let k = match (grid.step(u, d), boundary) {
                            (Some(k), _) => k,
                            (None, Boundary::Origin) => u,
                            (None, Boundary::Drop) => continue,
                        };
                        reach += spread * stationary.gamma(k, v);
                    }
                    p * w * reach
                })
                .sum();
            Ok(total)
        }
        _ => Ok(limiting_objective_by_states(space, &stationary.pi, model, policy)),
    }
}

/// `(C, β) = (2m, e^{−1/n²})`.
pub fn theorem3_envelope(n: usize, m: u32) -> (f64, f64) {
    (2.0 * m as f64, (-1.0 / (n as f64 * n as f64)).exp())
}

/// Bound on `|W(t) − W|` in the uniform case: `4m·Σw / (n²·e^{t/n²})`.
pub fn per_round_bound(n: usize, m: u32, total_weight: f64, t: f64) -> f64 {
    let n2 = n as f64 * n as f64;
    4.0 * m as f64 * total_weight / (n2 * (t / n2).exp())
}

/// Bound on `|OBJ(T) − W|` in the uniform case: `4m·Σw / T`.
pub fn average_bound(m: u32, total_weight: f64, big_t: f64) -> f64 {
    4.0 * m as f64 * total_weight / big_t
}

/// Whether every pair arrives with probability exactly `1/n²` and `c ≤ 2`.
pub fn is_uniform_special_case(model: &RequestModel, capacity: u32) -> bool {
    let n = model.grid().n() as f64;
    let p = 1.0 / (n * n);
    capacity <= 2 && model.probabilities().iter().all(|&x| x == p)
}

/// Exact per-round curve `W(t)` from a start state, with `Δ(t)` and `Δ̂(T)`
/// against the stationary limit.
pub fn delta_curves_exact(
    p: &TransitionMatrix,
    stationary: &StationaryResult,
    model: &RequestModel,
    policy: &Policy,
    start: &DriverState,
    rounds: usize,
) -> Result<ErrorSeries> {
    let space = p.space_or_err()?;
    let mut mu = vec![0.0; p.len()];
    mu[space.rank(start)?] = 1.0;
    delta_curves_from(p, stationary, model, policy, mu, rounds)
}

pub fn delta_curves_from(
    p: &TransitionMatrix,
    stationary: &StationaryResult,
    model: &RequestModel,
    policy: &Policy,
    mut mu: Vec<f64>,
    rounds: usize,
) -> Result<ErrorSeries> {
    let space = p.space_or_err()?;
    if let Some(built) = p.policy() {
        if built != *policy {
            return Err(Error::InvalidArgument(format!("matrix belongs to {built}, not {policy}")));
        }
    }
    if mu.len() != p.len() {
        return Err(Error::InvalidArgument("start distribution does not match the matrix".into()));
    }
    if rounds == 0 {
        return Err(Error::InvalidArgument("need at least one round".into()));
    }
    let profits = expected_profits(space, model, policy);
    let limit: f64 = profits.iter().zip(&stationary.pi).map(|(a, b)| a * b).sum();
    let mut next = vec![0.0; p.len()];
    let mut mean = Vec::with_capacity(rounds);
    for _ in 0..rounds {
        mean.push(profits.iter().zip(&mu).map(|(a, b)| a * b).sum());
        p.left_multiply(&mu, &mut next);
        std::mem::swap(&mut mu, &mut next);
    }
    ErrorSeries::new(mean, vec![0.0; rounds], 1, Target::Value(limit))
}

/// Four-state projection of the `c = 1`, NAdap(1), uniform chain onto the
/// occupancy of two locations `u* = 1` and `v* = m + 1`, started with
/// drivers on locations `1..=m`.
///
/// States: `s1 = (1,0)`, `s2 = (1,1)`, `s3 = (0,0)`, `s4 = (0,1)` giving the
/// driver counts at `(u*, v*)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LowerBoundChain {
    n: i64,
    m: i64,
    matrix: [[Ratio<i64>; 4]; 4],
}

impl LowerBoundChain {
    pub fn new(n: usize, m: usize) -> Result<LowerBoundChain> {
        if m < 1 || m + 1 >= n {
            return Err(Error::InvalidArgument(format!(
                "lower-bound chain needs 1 <= m < n - 1, got n = {n}, m = {m}"
            )));
        }
        let (n, m) = (n as i64, m as i64);
        let d = n * n;
        let r = |k: i64| Ratio::new(k, d);
        let matrix = [
            [r(d - n + 1), r(m - 1), r(n - m - 1), r(1)],
            [r(n - m), r(d - 2 * (n - m)), r(0), r(n - m)],
            [r(m), r(0), r(d - 2 * m), r(m)],
            [r(1), r(m - 1), r(n - m - 1), r(d - n + 1)],
        ];
        Ok(LowerBoundChain { n, m, matrix })
    }

    pub fn matrix(&self) -> &[[Ratio<i64>; 4]; 4] {
        &self.matrix
    }

    /// `γ = (m/n)·(n−m)/(n−1)`, the stationary mass of `s4`.
    pub fn gamma_exact(&self) -> Ratio<i64> {
        Ratio::new(self.m * (self.n - self.m), self.n * (self.n - 1))
    }

    pub fn gamma(&self) -> f64 {
        self.gamma_exact().to_f64()
    }

    /// `|P^t(s1, s4) − γ|` for `t = 0..=t_max` by repeated multiplication.
    pub fn iterate_gap(&self, t_max: usize) -> Vec<f64> {
        let p: Vec<Vec<f64>> = self
            .matrix
            .iter()
            .map(|row| row.iter().map(Scalar::to_f64).collect())
            .collect();
        let gamma = self.gamma();
        let mut mu = [1.0, 0.0, 0.0, 0.0];
        let mut out = Vec::with_capacity(t_max + 1);
        for _ in 0..=t_max {
            out.push((mu[3] - gamma).abs());
            let mut next = [0.0; 4];
            for (i, &w) in mu.iter().enumerate() {
                for (j, slot) in next.iter_mut().enumerate() {
                    *slot += w * p[i][j];
                }
            }
            mu = next;
        }
        out
    }

    fn terms(&self, t: f64) -> (f64, f64) {
        let (n, m) = (self.n as f64, self.m as f64);
        let b = (2.0 * m * n - n - 2.0 * m * m) / (n * (n - 2.0));
        let c = (m - 1.0) * (n - m - 1.0) / ((n - 1.0) * (n - 2.0));
        let slow = (1.0 - 1.0 / n).powf(t);
        let fast = (1.0 - 2.0 / n + 2.0 / (n * n)).powf(t);
        (b * slow, c * fast)
    }

    /// Exact gap from the spectral decomposition:
    /// `P^t(s1,s4) = γ − B(1−1/n)^t + C'(1−2/n+2/n²)^t`.
    pub fn gap_closed_form(&self, t: f64) -> f64 {
        let (slow, fast) = self.terms(t);
        (slow - fast).abs()
    }

    /// `B(1−1/n)^t + C'(1−2/n+2/n²)^t`, which bounds the gap from above.
    pub fn gap_envelope(&self, t: f64) -> f64 {
        let (slow, fast) = self.terms(t);
        slow + fast
    }

    /// Leading-order behavior `(2m/n)·e^{−t/n}`.
    pub fn gap_asymptote(&self, t: f64) -> f64 {
        let (n, m) = (self.n as f64, self.m as f64);
        2.0 * m / n * (-t / n).exp()
    }

    /// The profit-scale asymptote `2m·Σw / (n³·e^{t/n})`.
    pub fn objective_asymptote(&self, t: f64, total_weight: f64) -> f64 {
        let (n, m) = (self.n as f64, self.m as f64);
        2.0 * m * total_weight / (n * n * n * (t / n).exp())
    }
}
