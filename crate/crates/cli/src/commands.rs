use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use ridechain::coupling::verify_contraction;
use ridechain::exact::{
    build_transition, check_aperiodic, check_irreducible, delta_curves_exact, is_uniform_special_case,
    limiting_objective, mixing_analysis, mixing_analysis_from, stationary_distribution, theorem3_envelope,
    LowerBoundChain, MixingReport, TransitionMatrix,
};
use ridechain::fit::{fit_exponential_above, fit_inverse};
use ridechain::ingest::{
    generate_fixture, parse_trips_file, run_pipeline, write_trips, BBox, ColumnMapping, DateSelection, IngestOptions,
    ReplayTrace, Segment,
};
use ridechain::mdp::{
    discounted_return, simulate_optimal_episode, value_iteration, Chooser, MdpInstance,
};
use ridechain::simulator::{run_ensemble_with_trace, Arrivals, Estimator, InitialState, SimConfig};
use ridechain::{DriverState, Grid, Policy, RequestModel, StateSpace, Target, Weights};
use serde::Serialize;
use serde_json::json;

use crate::args::*;
use crate::output::{input_digest, Manifest, Outputs, Table, MANIFEST};
use crate::row;

fn q(x: &ridechain::coupling::Q) -> f64 {
    ridechain::exact::Scalar::to_f64(x)
}

fn grid_of(s: &str) -> Result<Grid> {
    Ok(s.parse::<Grid>()?)
}

/// A probability written as a decimal or as `a/b`.
fn probability(s: &str) -> Result<f64> {
    let v = match s.split_once('/') {
        Some((a, b)) => a.trim().parse::<f64>()? / b.trim().parse::<f64>()?,
        None => s.trim().parse::<f64>()?,
    };
    if !(0.0..=1.0).contains(&v) {
        bail!("probability {s:?} is outside [0, 1]");
    }
    Ok(v)
}

fn eps_list(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|x| x.trim().parse::<f64>().with_context(|| format!("bad ε value {x:?}")))
        .collect()
}

fn seed_of(seed: &mut Option<u64>) -> u64 {
    *seed.get_or_insert_with(rand::random)
}

pub struct Inputs(Vec<crate::output::FileDigest>);

impl Inputs {
    fn add(&mut self, path: &Path) -> Result<()> {
        self.0.push(input_digest(path)?);
        Ok(())
    }
}

fn request_model(inst: &InstanceArgs, grid: Grid, inputs: &mut Inputs) -> Result<RequestModel> {
    let spec = inst.arrivals.trim();
    if let Some(path) = spec.strip_prefix("model:") {
        inputs.add(Path::new(path))?;
        return Ok(RequestModel::load(grid, Path::new(path))?);
    }
    let weights: Weights = inst.weights.parse()?;
    let p = match spec {
        "uniform" => 1.0 / (grid.n() * grid.n()) as f64,
        s => match s.strip_prefix("uniform:") {
            Some(p) => probability(p)?,
            None => bail!("arrivals must be `uniform`, `uniform:P` or `model:FILE`, got {spec:?}"),
        },
    };
    Ok(RequestModel::uniform(grid, p, weights)?)
}

fn initial_state(spec: &str, c: u32, inputs: &mut Inputs) -> Result<InitialState> {
    Ok(match spec {
        "adversarial" => InitialState::Adversarial,
        "spread" => InitialState::Spread,
        path => {
            let text = fs::read_to_string(path).with_context(|| format!("reading initial state {path}"))?;
            inputs.add(Path::new(path))?;
            InitialState::Explicit(DriverState::parse(text.trim(), c)?)
        }
    })
}

fn state_label(space: &StateSpace, i: usize) -> Result<String> {
    Ok(space.unrank(i)?.to_string())
}

fn exact_chain(
    inst: &InstanceArgs,
    policy: &str,
    inputs: &mut Inputs,
) -> Result<(StateSpace, RequestModel, Policy, TransitionMatrix)> {
    let grid = grid_of(&inst.grid)?;
    let model = request_model(inst, grid, inputs)?;
    let policy: Policy = policy.parse()?;
    let space = StateSpace::new(grid, inst.drivers, inst.capacity)?;
    let p = build_transition(&space, &model, &policy)?;
    Ok((space, model, policy, p))
}

/// Worst-case `d(t)` over all starts, or over an evenly spaced sample plus
/// the adversarial state when the space is larger than `limit`.
fn mixing(space: &StateSpace, p: &TransitionMatrix, pi: &[f64], eps: &[f64], t_max: usize, limit: usize) -> Result<MixingReport> {
    if space.len() <= limit {
        return Ok(mixing_analysis(p, pi, eps, t_max)?);
    }
    let adversarial = InitialState::Adversarial.resolve(space.grid(), space.drivers(), space.capacity())?;
    let mut starts: Vec<usize> = (0..limit).map(|k| k * space.len() / limit).collect();
    starts.push(space.rank(&adversarial)?);
    starts.sort_unstable();
    starts.dedup();
    Ok(mixing_analysis_from(p, pi, &starts, eps, t_max)?)
}

fn mixing_table(report: &MixingReport) -> Table {
    let mut t = Table::new(&["t", "d_t"]);
    for (i, d) in report.d_curve.iter().enumerate() {
        t.push(row![i, *d]);
    }
    t
}

#[derive(Serialize)]
struct Tau {
    eps: f64,
    tau: usize,
}

#[derive(Serialize)]
struct Envelope {
    c: f64,
    beta: f64,
}

fn envelope_of(model: &RequestModel, policy: &Policy, n: usize, m: u32, c: u32) -> Option<Envelope> {
    (matches!(policy, Policy::NAdap { .. }) && is_uniform_special_case(model, c)).then(|| {
        let (c, beta) = theorem3_envelope(n, m);
        Envelope { c, beta }
    })
}

pub fn simulate(a: &mut SimulateArgs, inputs: &mut Inputs) -> Result<Outputs> {
    let seed = seed_of(&mut a.seed);
    let grid = grid_of(&a.instance.grid)?;
    let (m, c) = (a.instance.drivers, a.instance.capacity);
    let arrivals = match a.instance.arrivals.trim().strip_prefix("replay:") {
        Some(path) => {
            inputs.add(Path::new(path))?;
            Arrivals::Replay(ReplayTrace::load(Path::new(path), a.rounds)?)
        }
        None => Arrivals::Iid(request_model(&a.instance, grid, inputs)?),
    };
    let rounds = match &arrivals {
        Arrivals::Replay(t) => t.rounds(),
        Arrivals::Iid(_) => a.rounds.unwrap_or(10_000),
    };
    let estimator = match (a.estimator.as_str(), &arrivals) {
        ("auto", Arrivals::Replay(_)) => Estimator::Realized,
        ("auto", Arrivals::Iid(_)) => Estimator::Conditional,
        (s, _) => s.parse()?,
    };
    let policy: Policy = a.policy.parse()?;
    let config = SimConfig {
        grid,
        m,
        c,
        rounds,
        runs: a.runs,
        seed,
        policy,
        arrivals,
        initial: initial_state(&a.init, c, inputs)?,
        estimator,
    };
    let target = match a.target.as_str() {
        "tail" => Target::TailAverage { fraction: 1.0 },
        "exact" => {
            let Arrivals::Iid(model) = &config.arrivals else {
                bail!("an exact target needs IID arrivals");
            };
            let space = StateSpace::new(grid, m, c)?;
            let p = build_transition(&space, model, &policy)?;
            let st = stationary_distribution(&p)?;
            Target::Value(limiting_objective(&space, &st, model, &policy)?)
        }
        s => match s.strip_prefix("tail:") {
            Some(f) => Target::TailAverage { fraction: f.parse()? },
            None => Target::Value(s.parse().with_context(|| format!("bad target {s:?}"))?),
        },
    };
    let sim = run_ensemble_with_trace_if(&config, a.trace)?;
    let mut series = sim.0;
    series.retarget(target)?;
    series.fit(a.fit_floor);

    let mut out = Outputs::new(&a.output.out, a.output.format)?;
    let mut wt = Table::new(&["t", "mean", "stderr"]);
    let mut obj = Table::new(&["T", "running_avg"]);
    let mut err = Table::new(&["t", "delta", "delta_hat"]);
    for t in 0..series.len() {
        wt.push(row![t, series.mean[t], series.stderr[t]]);
        obj.push(row![t + 1, series.running[t]]);
        err.push(row![t, series.delta[t], series.delta_hat[t]]);
    }
    out.table("wt", &wt)?;
    out.table("obj", &obj)?;
    out.table("error", &err)?;
    out.json(
        "fit.json",
        &json!({
            "policy": policy.to_string(),
            "estimator": estimator,
            "initial": config.initial.to_string(),
            "rounds": rounds,
            "runs": a.runs,
            "seed": seed,
            "target": series.target,
            "objective": series.objective(),
            "objective_se": series.objective_se,
            "exp_fit": series.exp_fit,
            "inverse_fit": series.inverse_fit,
        }),
    )?;
    if let Some(trace) = sim.1 {
        let mut t = Table::new(&["round", "origin", "dest", "chosen", "success", "profit"]);
        for r in trace {
            let chosen = r.chosen.map_or(String::new(), |k| k.to_string());
            t.push(row![r.round, r.origin, r.dest, chosen, r.success as usize, r.profit]);
        }
        out.table("trace", &t)?;
    }
    Ok(out)
}

fn run_ensemble_with_trace_if(
    config: &SimConfig,
    trace: bool,
) -> Result<(ridechain::ErrorSeries, Option<Vec<ridechain::simulator::TraceRow>>)> {
    if trace {
        let o = run_ensemble_with_trace(config)?;
        Ok((o.series, o.trace))
    } else {
        Ok((ridechain::simulator::run_ensemble(config)?, None))
    }
}

pub fn exact(a: &mut ExactArgs, inputs: &mut Inputs) -> Result<Outputs> {
    let (space, model, policy, p) = exact_chain(&a.instance, &a.policy, inputs)?;
    let st = stationary_distribution(&p)?;
    let eps = eps_list(&a.eps)?;
    let mix = mixing(&space, &p, &st.pi, &eps, a.t_max, a.starts)?;
    let objective = limiting_objective(&space, &st, &model, &policy)?;
    let n = space.n();
    let (m, c) = (a.instance.drivers, a.instance.capacity);
    let closed_form = model
        .uniform_probability()
        .filter(|_| c >= m)
        .map(|q| m as f64 * q / (n as f64 + m as f64 - 1.0) * model.total_weight());

    let mut out = Outputs::new(&a.output.out, a.output.format)?;
    let mut stationary = Table::new(&["state", "pi"]);
    for (i, &v) in st.pi.iter().enumerate() {
        stationary.push(row![state_label(&space, i)?, v]);
    }
    out.table("stationary", &stationary)?;
    let mut gamma = Table::new(&["u", "v", "gamma"]);
    for u in 0..n {
        for v in 0..n {
            gamma.push(row![u, v, st.gamma(u, v)]);
        }
    }
    out.table("gamma", &gamma)?;
    out.table("mixing", &mixing_table(&mix))?;
    if a.curve > 0 {
        let start = initial_state(&a.init, c, inputs)?.resolve(space.grid(), m, c)?;
        let series = delta_curves_exact(&p, &st, &model, &policy, &start, a.curve)?;
        let mut t = Table::new(&["t", "w", "delta", "delta_hat"]);
        for k in 0..series.len() {
            t.push(row![k, series.mean[k], series.delta[k], series.delta_hat[k]]);
        }
        out.table("curve", &t)?;
    }
    out.json(
        "report.json",
        &json!({
            "policy": policy.to_string(),
            "states": space.len(),
            "nonzeros": p.nnz(),
            "solver": st.method,
            "residual": st.residual,
            "irreducible": check_irreducible(&p),
            "aperiodic": check_aperiodic(&p),
            "limiting_objective": objective,
            "closed_form": closed_form,
            "tau": mix.tau.iter().map(|&(eps, tau)| Tau { eps, tau }).collect::<Vec<_>>(),
            "mixing_starts": mix.starts,
            "mixing_sampled": mix.sampled,
            "envelope": envelope_of(&model, &policy, n, m, c),
        }),
    )?;
    Ok(out)
}

pub fn mixing_cmd(a: &mut MixingArgs, inputs: &mut Inputs) -> Result<Outputs> {
    if let Some(spec) = &a.lower_bound {
        return lower_bound(spec, a.t_max, &a.output);
    }
    let (space, model, policy, p) = exact_chain(&a.instance, &a.policy, inputs)?;
    let st = stationary_distribution(&p)?;
    let mix = mixing(&space, &p, &st.pi, &eps_list(&a.eps)?, a.t_max, a.starts)?;
    let (m, c) = (a.instance.drivers, a.instance.capacity);
    let n = space.n();
    let mut out = Outputs::new(&a.output.out, a.output.format)?;
    out.table("mixing", &mixing_table(&mix))?;
    out.json(
        "report.json",
        &json!({
            "policy": policy.to_string(),
            "states": space.len(),
            "tau": mix.tau.iter().map(|&(eps, tau)| Tau { eps, tau }).collect::<Vec<_>>(),
            "coupling_bound": mix.tau.iter().map(|&(eps, _)| Tau {
                eps,
                tau: ((n * n) as f64 * (2.0 * m as f64 / eps).ln()).ceil() as usize,
            }).collect::<Vec<_>>(),
            "mixing_starts": mix.starts,
            "mixing_sampled": mix.sampled,
            "envelope": envelope_of(&model, &policy, n, m, c),
        }),
    )?;
    Ok(out)
}

fn lower_bound(spec: &str, t_max: usize, output: &OutArgs) -> Result<Outputs> {
    let (n, m) = spec
        .split_once(',')
        .ok_or_else(|| anyhow!("--lower-bound expects N,M"))?;
    let (n, m): (usize, usize) = (n.trim().parse()?, m.trim().parse()?);
    let chain = LowerBoundChain::new(n, m)?;
    let gaps = chain.iterate_gap(t_max);
    let mut out = Outputs::new(&output.out, output.format)?;
    let mut t = Table::new(&["t", "gap", "closed_form", "envelope", "asymptote", "ratio"]);
    let mut worst: f64 = 0.0;
    for (k, &g) in gaps.iter().enumerate() {
        let x = k as f64;
        let closed = chain.gap_closed_form(x);
        worst = worst.max((g - closed).abs());
        let asym = chain.gap_asymptote(x);
        t.push(row![k, g, closed, chain.gap_envelope(x), asym, g / asym]);
    }
    out.table("gap", &t)?;
    out.json(
        "report.json",
        &json!({
            "n": n,
            "m": m,
            "gamma": chain.gamma(),
            "max_closed_form_error": worst,
        }),
    )?;
    Ok(out)
}

pub fn couple(a: &mut CoupleArgs) -> Result<Outputs> {
    let grid = grid_of(&a.grid)?;
    let r = verify_contraction(grid, a.drivers, a.capacity, a.eps)?;
    let mut out = Outputs::new(&a.output.out, a.output.format)?;
    let mut t = Table::new(&["pair_rank_x", "pair_rank_y", "expected_d_prime", "ratio"]);
    for p in &r.pairs {
        t.push(row![p.x, p.y, q(&p.expected), q(&p.ratio)]);
    }
    out.table("coupling", &t)?;
    out.json("report.json", &json!({
        "pairs": r.pairs.len(),
        "worst_beta": q(&r.worst_beta),
        "worst_beta_exact": r.worst_beta.to_string(),
        "bound": q(&r.bound),
        "diameter": r.diameter,
        "eps": r.eps,
        "tau_bound": r.tau_bound,
    }))?;
    println!(
        "worst_beta={} ({}) bound={} tau_bound({})={}",
        q(&r.worst_beta),
        r.worst_beta,
        r.bound,
        r.eps,
        r.tau_bound
    );
    Ok(out)
}

pub fn vi(a: &mut ViArgs, inputs: &mut Inputs) -> Result<Outputs> {
    let seed = seed_of(&mut a.seed);
    let grid = grid_of(&a.instance.grid)?;
    let (m, c) = (a.instance.drivers, a.instance.capacity);
    let model = request_model(&a.instance, grid, inputs)?;
    let inst = MdpInstance::with_cap(model, m, c, a.discount, a.cap)?;
    let result = value_iteration(&inst, a.tol)?;
    let start = initial_state(&a.init, c, inputs)?.resolve(grid, m, c)?;
    let space = inst.space();
    let events = inst.events();

    let mut out = Outputs::new(&a.output.out, a.output.format)?;
    let mut values = Table::new(&["state", "origin", "dest", "value"]);
    let mut policy = Table::new(&["state", "origin", "dest", "action"]);
    for x in 0..space.len() {
        let label = state_label(space, x)?;
        for (e, ev) in events.iter().enumerate() {
            let (o, d) = ev.map_or((String::new(), String::new()), |(o, d)| (o.to_string(), d.to_string()));
            let i = inst.index(x, e);
            values.push(row![label.clone(), o.clone(), d.clone(), result.values[i]]);
            policy.push(row![label.clone(), o, d, result.policy[i].name()]);
        }
    }
    out.table("values", &values)?;
    out.table("policy", &policy)?;

    let (occupancy, _) = simulate_optimal_episode(&inst, &result.policy, &start, a.periods, seed)?;
    let mut heat = Table::new(&["location", "time_covered", "drop_rate", "start_pct"]);
    for u in 0..grid.n() {
        heat.push(row![u, occupancy.time_covered[u], occupancy.drop_rate[u], occupancy.start_pct[u]]);
    }
    out.table("heatmap", &heat)?;

    let mut returns = Table::new(&["policy", "mean", "stderr"]);
    let (mean, se) = discounted_return(&inst, &Chooser::Table(&result.policy), &start, a.episodes, a.horizon, seed)?;
    returns.push(row!["optimal", mean, se]);
    for spec in a.baselines.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let p: Policy = spec.parse()?;
        let (mean, se) = discounted_return(&inst, &Chooser::Policy(p), &start, a.episodes, a.horizon, seed)?;
        returns.push(row![p.to_string(), mean, se]);
    }
    out.table("returns", &returns)?;
    out.json(
        "report.json",
        &json!({
            "decision_states": inst.num_states(),
            "sweeps": result.sweeps,
            "residual": result.residual,
            "discount": a.discount,
            "start": start.to_string(),
            "seed": seed,
        }),
    )?;
    Ok(out)
}

pub fn ingest(a: &mut IngestArgs, inputs: &mut Inputs) -> Result<Outputs> {
    let seed = match a.subsample {
        Some(_) => seed_of(&mut a.seed),
        None => a.seed.unwrap_or(0),
    };
    inputs.add(&a.input)?;
    let report = parse_trips_file(&a.input, &ColumnMapping::default())?;
    let opts = IngestOptions {
        grid: grid_of(&a.grid)?,
        bbox: a.bbox.parse::<BBox>()?,
        segment: a.segment.parse::<Segment>()?,
        dates: a.dates.parse::<DateSelection>()?,
        subsample: a.subsample,
        seed,
    };
    let r = run_pipeline(report, &opts)?;
    let name = a
        .out
        .file_name()
        .ok_or_else(|| anyhow!("--out must name a file"))?
        .to_string_lossy()
        .into_owned();
    let dir = match a.out.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let mut buf = Vec::new();
    match a.emit {
        Emit::Model => r.rates.model.write_csv(&mut buf)?,
        Emit::Replay => r.replay.write_csv(&mut buf)?,
    }
    let mut out = Outputs::new(&dir, Format::Csv)?;
    out.raw(&name, &buf)?;
    eprintln!(
        "parsed {} (skipped {}), {} after subsampling, {} in box, {} outside segments, {} requests over {} date(s), rate scale {}",
        r.parsed,
        r.skipped,
        r.after_subsample,
        r.in_box,
        r.outside_segments,
        r.requests.len(),
        r.dates.len(),
        r.rates.scale
    );
    Ok(out)
}

pub fn fit(a: &mut FitArgs, inputs: &mut Inputs) -> Result<Outputs> {
    inputs.add(&a.input)?;
    let mut rdr = csv::Reader::from_path(&a.input)?;
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| anyhow!("{} has no column {name:?}", a.input.display()))
    };
    let (ix, iy) = (col(&a.x)?, col(&a.y)?);
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let num = |i: usize| -> Result<f64> {
            rec.get(i)
                .unwrap_or("")
                .trim()
                .parse::<f64>()
                .with_context(|| format!("row {}: not a number", line + 1))
        };
        xs.push(num(ix)? + a.shift);
        ys.push(num(iy)?);
    }
    let value = match a.kind {
        FitKind::Exp => serde_json::to_value(fit_exponential_above(&xs, &ys, a.floor)?)?,
        FitKind::Inverse => serde_json::to_value(fit_inverse(&xs, &ys)?)?,
    };
    let mut out = Outputs::new(&a.output.out, a.output.format)?;
    out.json("fit.json", &json!({ "kind": a.kind, "x": a.x, "y": a.y, "fit": value }))?;
    Ok(out)
}

pub fn fixture(a: &mut FixtureArgs) -> Result<Outputs> {
    let seed = seed_of(&mut a.seed);
    let trips = generate_fixture(a.trips, a.cars, seed)?;
    let mut buf = Vec::new();
    write_trips(&trips, &mut buf)?;
    let mut out = Outputs::new(&a.output.out, a.output.format)?;
    out.raw("trips.csv", &buf)?;
    Ok(out)
}

/// Runs a command and writes its manifest.
pub fn run(mut command: Command) -> Result<Manifest> {
    let mut inputs = Inputs(Vec::new());
    let out = match &mut command {
        Command::Simulate(a) => simulate(a, &mut inputs)?,
        Command::Exact(a) => exact(a, &mut inputs)?,
        Command::Couple(a) => couple(a)?,
        Command::Mixing(a) => mixing_cmd(a, &mut inputs)?,
        Command::Vi(a) => vi(a, &mut inputs)?,
        Command::Ingest(a) => ingest(a, &mut inputs)?,
        Command::Fit(a) => fit(a, &mut inputs)?,
        Command::Fixture(a) => fixture(a)?,
        Command::Rerun(a) => return rerun(a),
    };
    out.finish(&command, inputs.0)
}

fn set_out(command: &mut Command, dir: &Path, manifest: &Manifest) -> Result<()> {
    let out = match command {
        Command::Simulate(a) => &mut a.output.out,
        Command::Exact(a) => &mut a.output.out,
        Command::Couple(a) => &mut a.output.out,
        Command::Mixing(a) => &mut a.output.out,
        Command::Vi(a) => &mut a.output.out,
        Command::Fit(a) => &mut a.output.out,
        Command::Fixture(a) => &mut a.output.out,
        Command::Ingest(a) => {
            let name = manifest
                .outputs
                .first()
                .ok_or_else(|| anyhow!("manifest lists no output file"))?;
            a.out = dir.join(&name.path);
            return Ok(());
        }
        Command::Rerun(_) => bail!("a manifest cannot record a rerun"),
    };
    *out = dir.to_path_buf();
    Ok(())
}

/// Re-executes a manifest and checks every output digest.
pub fn rerun(a: &RerunArgs) -> Result<Manifest> {
    let text = fs::read_to_string(&a.manifest).with_context(|| format!("reading {}", a.manifest.display()))?;
    let recorded: Manifest = serde_json::from_str(&text).context("parsing manifest")?;
    for input in &recorded.inputs {
        let now = crate::output::digest_file(Path::new(&input.path))?;
        if now != input.sha256 {
            bail!("input {} changed since the manifest was written", input.path);
        }
    }
    let dir = match &a.out {
        Some(d) => d.clone(),
        None => a.manifest.parent().map_or_else(|| PathBuf::from("."), Path::to_path_buf),
    };
    let mut command = recorded.command.clone();
    set_out(&mut command, &dir, &recorded)?;
    let fresh = run(command)?;
    let mismatched: Vec<&str> = recorded
        .outputs
        .iter()
        .filter(|o| !fresh.outputs.contains(o))
        .map(|o| o.path.as_str())
        .collect();
    if !mismatched.is_empty() || fresh.outputs.len() != recorded.outputs.len() {
        bail!("rerun differs from the manifest in: {}", mismatched.join(", "));
    }
    println!("reproduced {} file(s) plus {MANIFEST} in {}", fresh.outputs.len(), dir.display());
    Ok(fresh)
}
