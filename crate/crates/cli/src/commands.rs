use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use stars::eval::{self, history_probabilities, interference_bound, is_winning_prefix, marginalize, Prepared};
use stars::factorybot::{generate_instance, Category, SolvedInstance, DEFAULT_SOFTENING};
use stars::shield::{Shield, ShieldParams};
use stars::sim::{Policy, RunSpec, ShieldedRun, StateRef, TabularPolicy};
use stars::synth::{compose_templates, synthesize, ObjectiveSet};
use stars::{GameGraph, Mdp, Mode};

use crate::files::{self, parse_objective, parse_sizes};

#[derive(Parser, Debug)]
#[command(name = "stars", version, about = "Strategy templates and runtime shields for MDPs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Cmd,
}

#[derive(Subcommand, Debug)]
pub enum Cmd {
    /// Synthesize a strategy template.
    Synth(SynthArgs),
    /// Run a shielded policy and write its trace.
    Simulate(SimulateArgs),
    /// Generate FactoryBot grid instances.
    GenGrids(GenArgs),
    /// Run a parameter sweep and write metrics CSV.
    Sweep(SweepArgs),
    /// Check exact history probabilities on a small MDP.
    OracleCheck(OracleArgs),
    /// Time template synthesis on synthetic layered graphs.
    Bench(BenchArgs),
    /// Host interactive sessions.
    Serve(ServeArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ModeArg {
    Sure,
    AlmostSure,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Mode {
        match m {
            ModeArg::Sure => Mode::Sure,
            ModeArg::AlmostSure => Mode::AlmostSure,
        }
    }
}

/// Sure for deterministic MDPs, almost-sure otherwise, unless given.
fn mode_for(mdp: &Mdp, mode: Option<ModeArg>) -> Mode {
    match mode {
        Some(m) => m.into(),
        None if mdp.is_deterministic() => Mode::Sure,
        None => Mode::AlmostSure,
    }
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    pub mdp: PathBuf,
    /// `buchi:cells.json`, `reach:cells.json` or `parity:colors.json`; repeat
    /// to conjoin objectives.
    #[arg(long, required = true)]
    pub objective: Vec<String>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    /// Compose with an existing template.
    #[arg(long)]
    pub compose: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write the game graph as an edge list.
    #[arg(long)]
    pub graph_out: Option<PathBuf>,
}

pub fn synth(a: &SynthArgs) -> Result<()> {
    let mdp = files::read_mdp(&a.mdp)?;
    let g = GameGraph::from_mdp(&mdp, mode_for(&mdp, a.mode));
    let set = ObjectiveSet {
        objectives: a.objective.iter().map(|o| parse_objective(o, &mdp)).collect::<Result<_>>()?,
        forbidden: Default::default(),
    };
    let mut t = synthesize(&g, &set)?;
    if let Some(other) = &a.compose {
        t = compose_templates(&g, &[t, files::read_template(other, &mdp)?])?;
    }
    let json = t.to_json_string(&mdp);
    match &a.out {
        Some(p) => files::write_atomic(p, json.as_bytes())?,
        None => println!("{json}"),
    }
    if let Some(p) = &a.graph_out {
        files::write_atomic(p, g.to_edge_list(Some(&mdp)).as_bytes())?;
    }
    Ok(())
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// A FactoryBot instance; builds the MDP, policy and template itself.
    #[arg(long, conflicts_with_all = ["mdp", "template", "policy"])]
    pub instance: Option<PathBuf>,
    #[arg(long, required_unless_present = "instance")]
    pub mdp: Option<PathBuf>,
    #[arg(long)]
    pub template: Option<PathBuf>,
    /// Nominal policy; uniform when absent.
    #[arg(long)]
    pub policy: Option<PathBuf>,
    /// Objectives to synthesize for, and to compose with at runtime.
    #[arg(long)]
    pub objective: Vec<String>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    #[arg(long, default_value_t = 0.1)]
    pub gamma: f64,
    #[arg(long, default_value_t = 0.01)]
    pub theta: f64,
    /// Defaults to the schedule's length for session scripts, else 1000.
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Start state name; drawn from the winning region when absent.
    #[arg(long)]
    pub start: Option<String>,
    /// Scheduled commands or a recorded session script.
    #[arg(long)]
    pub schedule: Option<PathBuf>,
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

#[derive(Serialize)]
struct SimSummary {
    steps: u64,
    state: String,
    failed_commands: Vec<(u64, String)>,
}

fn build_run(a: &SimulateArgs) -> Result<ShieldedRun> {
    let params = ShieldParams::new(a.gamma, a.theta);
    if let Some(path) = &a.instance {
        let prep = Prepared::new(SolvedInstance::new(
            files::instance_id(path),
            files::read_instance(path)?,
            DEFAULT_SOFTENING,
        )?)?;
        let mut spec = prep.run_spec(params, a.seed);
        if let Some(s) = &a.start {
            spec.start = Some(StateRef::Name(s.clone()).resolve(&prep.mdp)?);
        }
        return Ok(ShieldedRun::with_template(spec, prep.graph.clone(), prep.template.clone())?);
    }
    let mdp = Arc::new(files::read_mdp(a.mdp.as_ref().expect("clap requires it"))?);
    let policy = match &a.policy {
        Some(p) => files::read_policy(p, &mdp)?,
        None => TabularPolicy::uniform(&mdp),
    };
    let objectives = ObjectiveSet {
        objectives: a.objective.iter().map(|o| parse_objective(o, &mdp)).collect::<Result<_>>()?,
        forbidden: Default::default(),
    };
    if a.template.is_none() && objectives.objectives.is_empty() {
        bail!("give --template or at least one --objective");
    }
    let start = a.start.as_ref().map(|s| StateRef::Name(s.clone()).resolve(&mdp)).transpose()?;
    let spec = RunSpec {
        mode: mode_for(&mdp, a.mode),
        mdp: mdp.clone(),
        objectives,
        policy: Arc::new(policy),
        params,
        seed: a.seed,
        start,
    };
    Ok(match &a.template {
        Some(t) => {
            let graph = Arc::new(GameGraph::from_mdp(&mdp, spec.mode));
            ShieldedRun::with_template(spec, graph, files::read_template(t, &mdp)?)?
        }
        None => ShieldedRun::new(spec)?,
    })
}

pub fn simulate(a: &SimulateArgs) -> Result<()> {
    let mut run = build_run(a)?;
    let (schedule, script_steps) = match &a.schedule {
        Some(p) => files::read_schedule(p)?,
        None => (Vec::new(), None),
    };
    let steps = a.steps.or(script_steps).unwrap_or(1000);
    let mut out: Option<BufWriter<std::fs::File>> = match &a.trace {
        Some(p) => Some(BufWriter::new(
            std::fs::File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => None,
    };
    let mdp = run.mdp().clone();
    let mut io_err = None;
    let failed = run.run_schedule(steps, &schedule, |rec| {
        if let Some(w) = &mut out {
            if let Err(e) = writeln!(w, "{}", rec.to_trace_line(&mdp)) {
                io_err.get_or_insert(e);
            }
        }
    })?;
    if let Some(e) = io_err {
        return Err(e.into());
    }
    if let Some(mut w) = out {
        w.flush()?;
    }
    for (at, e) in &failed {
        eprintln!("command at step {at} failed: {e}");
    }
    let summary = SimSummary {
        steps: run.steps(),
        state: mdp.state_name(run.state()).to_string(),
        failed_commands: failed.iter().map(|(t, e)| (*t, e.to_string())).collect(),
    };
    println!("{}", serde_json::to_string(&summary)?);
    Ok(())
}

#[derive(Args, Debug)]
pub struct GenArgs {
    #[arg(long, default_value_t = 20)]
    pub count: usize,
    #[arg(long)]
    pub category: Category,
    #[arg(long, default_value = "5..9")]
    pub sizes: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.0)]
    pub slip: f64,
    #[arg(long)]
    pub out: PathBuf,
}

/// Instance `i` gets size `sizes[i % len]` and seed `seed + i`; files are
/// named `<category>-<i>.json`.
pub fn gen_grids(a: &GenArgs) -> Result<Vec<PathBuf>> {
    let sizes = parse_sizes(&a.sizes)?;
    std::fs::create_dir_all(&a.out)?;
    let mut paths = Vec::new();
    for i in 0..a.count {
        let mut inst = generate_instance(sizes[i % sizes.len()], a.category, a.seed + i as u64)?;
        inst.slip = a.slip;
        inst.check_structure()?;
        let p = a.out.join(format!("{}-{i:03}.json", a.category));
        files::write_atomic(&p, inst.to_json_string().as_bytes())?;
        paths.push(p);
    }
    Ok(paths)
}

/// Where sweep instances come from.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InstanceSource {
    Dir(PathBuf),
    Generate {
        far: usize,
        close: usize,
        sizes: String,
        #[serde(default)]
        seed: u64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepMethod {
    Stars,
    Naive,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepConfig {
    pub instances: InstanceSource,
    #[serde(default = "default_method")]
    pub method: SweepMethod,
    #[serde(default)]
    pub gammas: Vec<f64>,
    #[serde(default = "default_theta")]
    pub theta: f64,
    /// Mixing weights for the naive baseline.
    #[serde(default)]
    pub pmix: Vec<f64>,
    pub steps: u64,
    pub seeds: Vec<u64>,
}

fn default_method() -> SweepMethod {
    SweepMethod::Stars
}

fn default_theta() -> f64 {
    0.005
}

/// Far instance `i` uses seed `seed + i`, close instance `i` seed
/// `seed + 1000 + i`; sizes cycle through the list.
pub fn load_instances(src: &InstanceSource, base: &Path) -> Result<Vec<Prepared>> {
    let solved: Vec<SolvedInstance> = match src {
        InstanceSource::Dir(d) => {
            let dir = if d.is_absolute() { d.clone() } else { base.join(d) };
            files::instance_files(&dir)?
                .iter()
                .map(|p| Ok(SolvedInstance::new(files::instance_id(p), files::read_instance(p)?, DEFAULT_SOFTENING)?))
                .collect::<Result<_>>()?
        }
        InstanceSource::Generate { far, close, sizes, seed } => {
            let sizes = parse_sizes(sizes)?;
            let mut out = Vec::new();
            for (cat, n, off) in [(Category::Far, *far, 0), (Category::Close, *close, 1000)] {
                for i in 0..n {
                    let inst = generate_instance(sizes[i % sizes.len()], cat, seed + off + i as u64)?;
                    out.push(SolvedInstance::new(format!("{cat}-{i:03}"), inst, DEFAULT_SOFTENING)?);
                }
            }
            out
        }
    };
    solved.into_iter().map(|s| Ok(Prepared::new(s)?)).collect()
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

/// Rows go out one instance at a time, each time rewriting the whole file
/// atomically, so an interrupted sweep leaves a valid CSV.
pub fn sweep(a: &SweepArgs) -> Result<usize> {
    let cfg: SweepConfig = serde_json::from_str(&files::read(&a.config)?).context("parsing sweep config")?;
    let base = a.config.parent().unwrap_or(Path::new("."));
    let preps = load_instances(&cfg.instances, base)?;
    let mut rows = Vec::new();
    let mut failed = 0;
    for prep in preps {
        let one = std::slice::from_ref(&prep);
        let results = match cfg.method {
            SweepMethod::Stars => eval::sweep_gamma(one, &cfg.gammas, cfg.theta, cfg.steps, &cfg.seeds),
            SweepMethod::Naive => eval::sweep_naive(one, &cfg.pmix, cfg.steps, &cfg.seeds),
        };
        for r in results {
            match r {
                Ok(rec) => rows.push(rec),
                Err(e) => {
                    failed += 1;
                    eprintln!("{}: {e}", prep.id());
                }
            }
        }
        files::write_atomic(&a.out, eval::csv_string(&rows).as_bytes())?;
    }
    if failed > 0 {
        eprintln!("{failed} runs failed");
    }
    Ok(rows.len())
}

#[derive(Args, Debug)]
pub struct OracleArgs {
    #[arg(long)]
    pub mdp: PathBuf,
    #[arg(long, default_value_t = 4)]
    pub horizon: usize,
    #[arg(long)]
    pub policy: Option<PathBuf>,
    /// With objectives, the shielded probabilities are checked as well.
    #[arg(long)]
    pub objective: Vec<String>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    #[arg(long, default_value_t = 0.01)]
    pub gamma: f64,
    #[arg(long, default_value_t = 0.01)]
    pub theta: f64,
}

#[derive(Debug, Serialize)]
pub struct OracleReport {
    pub histories: usize,
    pub sum: f64,
    pub marginalizes: bool,
    pub shielded_sum: Option<f64>,
    /// Largest `Pr_nominal - Pr_shielded - bound` over winning prefixes;
    /// at most zero when the interference bound holds.
    pub worst_bound_excess: Option<f64>,
    pub ok: bool,
}

fn marginalizes(mdp: &Mdp, policy: &dyn Policy, h: usize, shield: Option<&Shield>) -> Result<bool> {
    if h == 0 {
        return Ok(true);
    }
    let long = history_probabilities(mdp, policy, mdp.initial(), h, shield)?;
    let short = history_probabilities(mdp, policy, mdp.initial(), h - 1, shield)?;
    let marg = marginalize(&long);
    Ok(marg.len() == short.len() && short.iter().all(|(k, v)| (marg[k] - v).abs() < 1e-12))
}

pub fn oracle_check(a: &OracleArgs) -> Result<OracleReport> {
    let mdp = files::read_mdp(&a.mdp)?;
    let policy = match &a.policy {
        Some(p) => files::read_policy(p, &mdp)?,
        None => TabularPolicy::uniform(&mdp),
    };
    let nominal = history_probabilities(&mdp, &policy, mdp.initial(), a.horizon, None)?;
    let sum: f64 = nominal.values().sum();
    let mut ok = (sum - 1.0).abs() < 1e-9;
    let marg = marginalizes(&mdp, &policy, a.horizon, None)?;
    ok &= marg;
    let (mut shielded_sum, mut worst) = (None, None);
    if !a.objective.is_empty() {
        let g = GameGraph::from_mdp(&mdp, mode_for(&mdp, a.mode));
        let set = ObjectiveSet {
            objectives: a.objective.iter().map(|o| parse_objective(o, &mdp)).collect::<Result<_>>()?,
            forbidden: Default::default(),
        };
        let t = synthesize(&g, &set)?;
        let n_groups = t.live_groups.len();
        let shield = Shield::new(&g, t.clone(), ShieldParams::new(a.gamma, a.theta))?;
        let shielded = history_probabilities(&mdp, &policy, mdp.initial(), a.horizon, Some(&shield))?;
        let s: f64 = shielded.values().sum();
        ok &= (s - 1.0).abs() < 1e-9 && marginalizes(&mdp, &policy, a.horizon, Some(&shield))?;
        let mut w = f64::NEG_INFINITY;
        for (h, &p) in nominal.iter().filter(|(h, _)| is_winning_prefix(h, &t)) {
            let x = eval::history::min_action_prob(h, &policy);
            let bound = interference_bound(p, x, a.horizon, a.gamma, n_groups);
            let ps = shielded.get(h).copied().unwrap_or(0.0);
            w = w.max(p - ps - bound);
        }
        ok &= w <= 1e-9;
        shielded_sum = Some(s);
        worst = Some(w);
    }
    Ok(OracleReport {
        histories: nominal.len(),
        sum,
        marginalizes: marg,
        shielded_sum,
        worst_bound_excess: worst,
        ok,
    })
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_value = "1000,10000,100000")]
    pub sizes: Vec<usize>,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

pub fn bench(a: &BenchArgs) -> Result<()> {
    for &n in &a.sizes {
        let row = eval::bench::time_buchi_synthesis(n, a.seed)?;
        println!("{}", serde_json::to_string(&row)?);
    }
    Ok(())
}

#[derive(Args, Debug)]
pub struct ServeArgs {
    /// `STARS_PORT` overrides it.
    #[arg(long, default_value_t = 8787)]
    pub port: u16,
    /// `STARS_INSTANCE_DIR` overrides it.
    #[arg(long, default_value = "instances")]
    pub instances: PathBuf,
    /// Final metrics of every session.
    #[arg(long, default_value = "session_metrics.csv")]
    pub metrics: PathBuf,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Cmd::Synth(a) => synth(&a),
        Cmd::Simulate(a) => simulate(&a),
        Cmd::GenGrids(a) => {
            for p in gen_grids(&a)? {
                println!("{}", p.display());
            }
            Ok(())
        }
        Cmd::Sweep(a) => {
            let n = sweep(&a)?;
            eprintln!("{n} rows written to {}", a.out.display());
            Ok(())
        }
        Cmd::OracleCheck(a) => {
            let r = oracle_check(&a)?;
            println!("{}", serde_json::to_string_pretty(&r)?);
            if !r.ok {
                bail!("oracle check failed");
            }
            Ok(())
        }
        Cmd::Bench(a) => bench(&a),
        Cmd::Serve(mut a) => {
            if let Ok(p) = std::env::var("STARS_PORT") {
                a.port = p.parse().context("STARS_PORT")?;
            }
            if let Ok(d) = std::env::var("STARS_INSTANCE_DIR") {
                a.instances = d.into();
            }
            crate::server::serve(&crate::server::ServerConfig {
                addr: format!("{}:{}", a.host, a.port),
                instances: a.instances,
                metrics: a.metrics,
            })
        }
    }
}
