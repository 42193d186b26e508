//! Grid geometry and the request-type universe.
//!
//! Locations are row-major indices `0..rows*cols`. A request type is an
//! ordered `(origin, dest)` pair; self pairs are allowed and carry their
//! own probability and weight like any other pair.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

pub type Location = usize;

/// Tolerance applied to `Σ p_r ≤ 1` checks.
pub const MASS_TOLERANCE: f64 = 1e-12;

/// The four relative neighbor directions, listed clockwise from North.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Direction {
    North,
    East,
    South,
    West,
}

impl Direction {
    pub const CLOCKWISE: [Direction; 4] = [
        Direction::North,
        Direction::East,
        Direction::South,
        Direction::West,
    ];

    pub fn opposite(self) -> Direction {
        match self {
            Direction::North => Direction::South,
            Direction::East => Direction::West,
            Direction::South => Direction::North,
            Direction::West => Direction::East,
        }
    }

    fn offset(self) -> (isize, isize) {
        match self {
            Direction::North => (-1, 0),
            Direction::East => (0, 1),
            Direction::South => (1, 0),
            Direction::West => (0, -1),
        }
    }

    pub fn letter(self) -> char {
        match self {
            Direction::North => 'N',
            Direction::East => 'E',
            Direction::South => 'S',
            Direction::West => 'W',
        }
    }

    pub fn from_letter(c: char) -> Option<Direction> {
        match c.to_ascii_uppercase() {
            'N' => Some(Direction::North),
            'E' => Some(Direction::East),
            'S' => Some(Direction::South),
            'W' => Some(Direction::West),
            _ => None,
        }
    }
}

/// A `rows × cols` grid of locations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Grid {
    rows: usize,
    cols: usize,
}

impl Grid {
    pub fn new(rows: usize, cols: usize) -> Result<Grid> {
        if rows == 0 || cols == 0 {
            return invalid(format!("grid dimensions must be positive, got {rows}x{cols}"));
        }
        Ok(Grid { rows, cols })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Number of locations.
    pub fn n(&self) -> usize {
        self.rows * self.cols
    }

    pub fn index(&self, row: usize, col: usize) -> Result<Location> {
        if row >= self.rows || col >= self.cols {
            return invalid(format!("({row},{col}) is outside a {self} grid"));
        }
        Ok(row * self.cols + col)
    }

    pub fn coords(&self, u: Location) -> Result<(usize, usize)> {
        self.check(u)?;
        Ok((u / self.cols, u % self.cols))
    }

    pub fn check(&self, u: Location) -> Result<()> {
        if u >= self.n() {
            return invalid(format!("location {u} is outside a grid of {} locations", self.n()));
        }
        Ok(())
    }

    /// The location one step from `u` in `dir`, or `None` when that step
    /// leaves the grid. `u` must be in range.
    pub fn step(&self, u: Location, dir: Direction) -> Option<Location> {
        let (r, c) = (u / self.cols, u % self.cols);
        let (dr, dc) = dir.offset();
        let r = r.checked_add_signed(dr)?;
        let c = c.checked_add_signed(dc)?;
        (r < self.rows && c < self.cols).then(|| r * self.cols + c)
    }

    /// In-grid neighbors at Manhattan distance 1, in clockwise order from North.
    pub fn neighbors(&self, u: Location) -> Result<Vec<Location>> {
        self.check(u)?;
        Ok(self.neighbors_unchecked(u).collect())
    }

    pub(crate) fn neighbors_unchecked(&self, u: Location) -> impl Iterator<Item = Location> + '_ {
        Direction::CLOCKWISE
            .into_iter()
            .filter_map(move |d| self.step(u, d))
    }

    /// `{u} ∪ neighbors(u)`, with `u` first.
    pub fn closed_neighborhood(&self, u: Location) -> Result<Vec<Location>> {
        let mut out = vec![u];
        out.extend(self.neighbors(u)?);
        Ok(out)
    }

    pub fn manhattan_distance(&self, u: Location, v: Location) -> Result<usize> {
        let (ru, cu) = self.coords(u)?;
        let (rv, cv) = self.coords(v)?;
        Ok(ru.abs_diff(rv) + cu.abs_diff(cv))
    }
}

impl fmt::Display for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.rows, self.cols)
    }
}

impl FromStr for Grid {
    type Err = Error;

    /// Parses `RxC`, e.g. `21x11`.
    fn from_str(s: &str) -> Result<Grid> {
        let (r, c) = s
            .split_once(['x', 'X'])
            .ok_or_else(|| Error::Parse(format!("grid must look like RxC, got {s:?}")))?;
        let parse = |t: &str| {
            t.trim()
                .parse::<usize>()
                .map_err(|e| Error::Parse(format!("bad grid dimension {t:?}: {e}")))
        };
        Grid::new(parse(r)?, parse(c)?)
    }
}

pub fn build_grid(rows: usize, cols: usize) -> Result<Grid> {
    Grid::new(rows, cols)
}

/// How request weights are assigned when a model is built.
#[derive(Clone, Debug, PartialEq)]
pub enum Weights {
    /// `w_r = manhattan_distance(origin, dest)`.
    Distance,
    Constant(f64),
    /// Dense `n × n` row-major weights.
    Explicit(Vec<f64>),
}

impl FromStr for Weights {
    type Err = Error;

    /// `distance` or `const:W`.
    fn from_str(s: &str) -> Result<Weights> {
        match s.trim() {
            "distance" => Ok(Weights::Distance),
            other => match other.strip_prefix("const:") {
                Some(v) => v
                    .parse::<f64>()
                    .map(Weights::Constant)
                    .map_err(|e| Error::Parse(format!("bad constant weight {v:?}: {e}"))),
                None => Err(Error::Parse(format!(
                    "weights must be `distance` or `const:W`, got {s:?}"
                ))),
            },
        }
    }
}

/// Per-round arrival probabilities and profits for every ordered pair.
#[derive(Clone, Debug, PartialEq)]
pub struct RequestModel {
    grid: Grid,
    p: Vec<f64>,
    w: Vec<f64>,
    w_max: f64,
}

impl RequestModel {
    /// Builds a model from dense row-major `n × n` tables.
    pub fn new(grid: Grid, p: Vec<f64>, weights: Weights) -> Result<RequestModel> {
        let n = grid.n();
        if p.len() != n * n {
            return invalid(format!("expected {} probabilities, got {}", n * n, p.len()));
        }
        if let Some(bad) = p.iter().find(|x| !(0.0..=1.0).contains(*x)) {
            return invalid(format!("probability {bad} is outside [0,1]"));
        }
        let total: f64 = p.iter().sum();
        if total > 1.0 + MASS_TOLERANCE {
            return invalid(format!("arrival probabilities sum to {total} > 1"));
        }
        let w = match weights {
            Weights::Distance => (0..n * n)
                .map(|i| {
                    let (u, v) = (i / n, i % n);
                    grid.manhattan_distance(u, v).map(|d| d as f64)
                })
                .collect::<Result<Vec<_>>>()?,
            Weights::Constant(c) => vec![c; n * n],
            Weights::Explicit(w) => {
                if w.len() != n * n {
                    return invalid(format!("expected {} weights, got {}", n * n, w.len()));
                }
                w
            }
        };
        if let Some(bad) = w.iter().find(|x| !x.is_finite() || **x < 0.0) {
            return invalid(format!("weight {bad} must be finite and nonnegative"));
        }
        let w_max = w.iter().copied().fold(0.0, f64::max);
        Ok(RequestModel { grid, p, w, w_max })
    }

    /// Every ordered pair arrives with the same probability `p`.
    pub fn uniform(grid: Grid, p: f64, weights: Weights) -> Result<RequestModel> {
        let n = grid.n();
        if !(0.0..=1.0).contains(&p) || p * (n * n) as f64 > 1.0 + MASS_TOLERANCE {
            return invalid(format!(
                "uniform probability {p} over {} pairs exceeds total mass 1",
                n * n
            ));
        }
        RequestModel::new(grid, vec![p; n * n], weights)
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn p(&self, origin: Location, dest: Location) -> f64 {
        self.p[origin * self.grid.n() + dest]
    }

    pub fn w(&self, origin: Location, dest: Location) -> f64 {
        self.w[origin * self.grid.n() + dest]
    }

    pub fn w_max(&self) -> f64 {
        self.w_max
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.p
    }

    pub fn weights(&self) -> &[f64] {
        &self.w
    }

    /// Σ_r p_r.
    pub fn total_mass(&self) -> f64 {
        self.p.iter().sum()
    }

    /// Probability that a round carries no request.
    pub fn no_request_mass(&self) -> f64 {
        (1.0 - self.total_mass()).max(0.0)
    }

    /// Σ_r w_r over all `n²` pairs.
    pub fn total_weight(&self) -> f64 {
        self.w.iter().sum()
    }

    /// Pairs with positive probability as `(origin, dest, p, w)`.
    pub fn requests(&self) -> impl Iterator<Item = (Location, Location, f64, f64)> + '_ {
        let n = self.grid.n();
        self.p
            .iter()
            .zip(&self.w)
            .enumerate()
            .filter(|(_, (p, _))| **p > 0.0)
            .map(move |(i, (p, w))| (i / n, i % n, *p, *w))
    }

    /// `Some(p)` when every pair has the same probability `p`.
    pub fn uniform_probability(&self) -> Option<f64> {
        let first = *self.p.first()?;
        self.p.iter().all(|&x| x == first).then_some(first)
    }

    /// The lowest-index location `u*` with `p(u*,u) > 0` and `p(u,u*) > 0`
    /// for every other `u`.
    pub fn hotspot(&self) -> Option<Location> {
        let n = self.grid.n();
        (0..n).find(|&h| (0..n).filter(|&u| u != h).all(|u| self.p(h, u) > 0.0 && self.p(u, h) > 0.0))
    }

    /// Writes `origin,dest,p,w` rows for every pair.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record(["origin", "dest", "p", "w"])?;
        let n = self.grid.n();
        for i in 0..n * n {
            wtr.write_record([
                (i / n).to_string(),
                (i % n).to_string(),
                crate::io::fmt_f64(self.p[i]),
                crate::io::fmt_f64(self.w[i]),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// Reads `origin,dest,p,w` rows; pairs not listed get `p = 0, w = 0`.
    pub fn read_csv<R: Read>(grid: Grid, input: R) -> Result<RequestModel> {
        let n = grid.n();
        let mut p = vec![0.0; n * n];
        let mut w = vec![0.0; n * n];
        let mut rdr = csv::Reader::from_reader(input);
        let headers = rdr.headers()?.clone();
        let col = |name: &str| {
            headers
                .iter()
                .position(|h| h.trim() == name)
                .ok_or_else(|| Error::Schema(format!("model CSV lacks column {name:?}")))
        };
        let (co, cd, cp, cw) = (col("origin")?, col("dest")?, col("p")?, col("w")?);
        for rec in rdr.records() {
            let rec = rec?;
            let field = |i: usize| rec.get(i).unwrap_or("").trim().to_string();
            let o: usize = field(co).parse().map_err(|e| Error::Parse(format!("origin: {e}")))?;
            let d: usize = field(cd).parse().map_err(|e| Error::Parse(format!("dest: {e}")))?;
            grid.check(o)?;
            grid.check(d)?;
            p[o * n + d] = field(cp).parse().map_err(|e| Error::Parse(format!("p: {e}")))?;
            w[o * n + d] = field(cw).parse().map_err(|e| Error::Parse(format!("w: {e}")))?;
        }
        RequestModel::new(grid, p, Weights::Explicit(w))
    }

    pub fn load(grid: Grid, path: &Path) -> Result<RequestModel> {
        RequestModel::read_csv(grid, std::fs::File::open(path)?)
    }
}

pub fn uniform_request_model(grid: Grid, p: f64, weights: Weights) -> Result<RequestModel> {
    RequestModel::uniform(grid, p, weights)
}

pub fn check_hotspot(model: &RequestModel) -> Option<Location> {
    model.hotspot()
}

/// Inverse-CDF sampler over a model's request types.
#[derive(Clone, Debug)]
pub struct RequestSampler {
    cumulative: Vec<f64>,
    pairs: Vec<(Location, Location)>,
}

impl RequestSampler {
    pub fn new(model: &RequestModel) -> RequestSampler {
        let mut acc = 0.0;
        let mut cumulative = Vec::new();
        let mut pairs = Vec::new();
        for (o, d, p, _) in model.requests() {
            acc += p;
            cumulative.push(acc);
            pairs.push((o, d));
        }
        RequestSampler { cumulative, pairs }
    }

    /// Maps a uniform draw in `[0,1)` to a request, or `None` for the
    /// no-request event.
    pub fn pick(&self, uniform: f64) -> Option<(Location, Location)> {
        let i = self.cumulative.partition_point(|&c| c <= uniform);
        self.pairs.get(i).copied()
    }
}
