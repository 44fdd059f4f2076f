//! Command-line front end.

use std::fs::{self, File};
use std::io::BufReader;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};

use crate::environment::{gen_synthetic, DriftSpec, MuMap, RewardModel, SyntheticSpec};
use crate::evaluation::{
    config_digest, instance_bound_inputs, run_sweep, theorem1_bound, write_atomic, write_step_log,
    write_summary, BoundInputs, BoundReport, EvaluationError, ExperimentConfig, InstanceSource,
    TraceSource,
};
use crate::knapsack::{brute_force_bkp, density_greedy, round_down, solve_fbkp};
use crate::model::{TaskInstance, WorkerSpec, WorkerTable};
use crate::partition::{cube_index, holder_delta, PartitionGrid};
use crate::policies::{caws_init, Granularity, Policy, PolicyKind};
use crate::rng::SimRng;

#[derive(Debug, Parser)]
#[command(
    name = "caws",
    version,
    about = "Budgeted context-aware worker selection simulator"
)]
pub struct Cli {
    /// Directory for output files.
    #[arg(long, global = true, env = "CAWS_OUTPUT_DIR", default_value = ".")]
    pub output_dir: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic worker CSV.
    Generate(GenerateArgs),
    /// Run one policy at one budget.
    Run(RunArgs),
    /// Run a grid of budgets, worker counts and policies.
    Sweep(SweepArgs),
    /// Evaluate the regret bound.
    Bound(BoundArgs),
    /// Run the built-in property checks.
    Selftest(SelftestArgs),
}

#[derive(Debug, Args, Clone)]
pub struct SyntheticArgs {
    /// Context dimension.
    #[arg(long, default_value_t = 2)]
    pub dimension: usize,
    #[arg(long, default_value_t = 1.0)]
    pub cost_min: f64,
    #[arg(long, default_value_t = 1.5)]
    pub cost_max: f64,
    #[arg(long, default_value_t = 20)]
    pub capacity_min: u32,
    #[arg(long, default_value_t = 40)]
    pub capacity_max: u32,
    /// coordinate_mean or gaussian.
    #[arg(long, default_value = "coordinate_mean")]
    pub mu_map: String,
}

impl SyntheticArgs {
    fn source(&self) -> Result<InstanceSource, EvaluationError> {
        Ok(InstanceSource::Synthetic {
            dimension: self.dimension,
            cost_range: (self.cost_min, self.cost_max),
            capacity_range: (self.capacity_min, self.capacity_max),
            mu_map: MuMap::parse(&self.mu_map)?,
        })
    }
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub synthetic: SyntheticArgs,
    /// Output file, relative to the output directory.
    #[arg(long, default_value = "workers.csv")]
    pub out: PathBuf,
}

/// Flags shared by `run` and `sweep`; each overrides the config file.
#[derive(Debug, Args, Default)]
pub struct Overrides {
    /// JSON experiment config.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Worker CSV to use instead of a synthetic pool.
    #[arg(long)]
    pub instance: Option<PathBuf>,
    /// Context-to-mean map for rows without `mu` or for trace runs.
    #[arg(long)]
    pub mu_map: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub replications: Option<usize>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// auto, singleton or a number of cells per axis.
    #[arg(long)]
    pub granularity: Option<String>,
    /// bernoulli or bounded_continuous.
    #[arg(long)]
    pub reward_model: Option<String>,
    /// Trace CSV, or `drift` for the generated distance/battery trace.
    #[arg(long)]
    pub trace: Option<String>,
    /// Battery decay per round for `--trace drift`.
    #[arg(long)]
    pub decay_rate: Option<f64>,
    /// Write per-step logs.
    #[arg(long)]
    pub log_steps: bool,
    /// Worker threads.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub policy: Option<String>,
    #[arg(long)]
    pub budget: Option<f64>,
    /// Worker count for synthetic pools.
    #[arg(long)]
    pub n: Option<usize>,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Comma-separated policy names.
    #[arg(long, value_delimiter = ',')]
    pub policies: Option<Vec<String>>,
    /// Comma-separated budgets.
    #[arg(long, value_delimiter = ',')]
    pub budgets: Option<Vec<f64>>,
    /// Comma-separated worker counts.
    #[arg(long, value_delimiter = ',')]
    pub worker_counts: Option<Vec<usize>>,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Args)]
pub struct BoundArgs {
    #[arg(long)]
    pub budget: f64,
    /// Worker CSV with means.
    #[arg(long)]
    pub instance: Option<PathBuf>,
    /// Generate a synthetic pool of this size instead.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub synthetic: SyntheticArgs,
    /// Cells per axis; defaults to the budget-driven choice.
    #[arg(long)]
    pub granularity: Option<u32>,
    #[arg(long)]
    pub holder_l: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub c_min: Option<f64>,
    #[arg(long)]
    pub c_max: Option<f64>,
    #[arg(long)]
    pub tau_max: Option<u32>,
    #[arg(long)]
    pub delta_min: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SelftestArgs {
    /// Random cases per check.
    #[arg(long, default_value_t = 200)]
    pub cases: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Failure with a one-line message.
#[derive(Debug)]
pub struct CliError(pub String);

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl<E: std::error::Error> From<E> for CliError {
    fn from(e: E) -> Self {
        CliError(e.to_string())
    }
}

fn fail<T>(msg: impl Into<String>) -> Result<T, CliError> {
    Err(CliError(msg.into()))
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Generate(args) => cmd_generate(&cli.output_dir, args),
        Command::Run(args) => cmd_run(&cli.output_dir, args),
        Command::Sweep(args) => cmd_sweep(&cli.output_dir, args),
        Command::Bound(args) => cmd_bound(args),
        Command::Selftest(args) => cmd_selftest(args),
    }
}

fn resolve(dir: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        dir.join(path)
    }
}

fn cmd_generate(dir: &Path, args: GenerateArgs) -> Result<(), CliError> {
    let InstanceSource::Synthetic {
        dimension,
        cost_range,
        capacity_range,
        mu_map,
    } = args.synthetic.source()?
    else {
        unreachable!()
    };
    let spec = SyntheticSpec {
        n: args.n,
        dimension,
        cost_range,
        capacity_range,
        mu_map,
        budget: 1.0,
    };
    let instance = gen_synthetic(&spec, args.seed)?;
    let mut bytes = Vec::new();
    WorkerTable::from_instance(&instance).write_csv(&mut bytes)?;
    fs::create_dir_all(dir)?;
    let path = resolve(dir, &args.out);
    write_atomic(&path, &bytes).map_err(|e| CliError(format!("{}: {e}", path.display())))?;
    println!(
        "wrote {}: N={} M={} c_min={} c_max={} tau_max={}",
        path.display(),
        instance.len(),
        instance.dimension(),
        instance.c_min(),
        instance.c_max(),
        instance.tau_max()
    );
    Ok(())
}

fn load_config(path: &Path) -> Result<ExperimentConfig, CliError> {
    let file = File::open(path).map_err(|e| CliError(format!("{}: {e}", path.display())))?;
    serde_json::from_reader(BufReader::new(file))
        .map_err(|e| CliError(format!("{}: {e}", path.display())))
}

fn default_config() -> ExperimentConfig {
    ExperimentConfig {
        instance: InstanceSource::Synthetic {
            dimension: 2,
            cost_range: (1.0, 1.5),
            capacity_range: (20, 40),
            mu_map: MuMap::CoordinateMean,
        },
        policies: vec![PolicyKind::Caws],
        epsilon: 0.1,
        granularity: Granularity::Auto,
        budgets: vec![1000.0],
        worker_counts: vec![1000],
        replications: 1,
        seed: 0,
        reward_model: RewardModel::Bernoulli,
        trace: None,
        log_steps: false,
    }
}

fn apply_overrides(config: &mut ExperimentConfig, o: &Overrides) -> Result<(), CliError> {
    let mu_map = o.mu_map.as_deref().map(MuMap::parse).transpose()?;
    if let Some(path) = &o.instance {
        config.instance = InstanceSource::File {
            path: path.clone(),
            mu_map: mu_map.clone(),
            holder_l: None,
            holder_alpha: None,
        };
        config.worker_counts.clear();
    } else if let Some(map) = mu_map {
        match &mut config.instance {
            InstanceSource::Synthetic { mu_map, .. } => *mu_map = map,
            InstanceSource::File { mu_map, .. } => *mu_map = Some(map),
        }
    }
    if let Some(s) = o.seed {
        config.seed = s;
    }
    if let Some(r) = o.replications {
        config.replications = r;
    }
    if let Some(e) = o.epsilon {
        config.epsilon = e;
    }
    if let Some(g) = &o.granularity {
        config.granularity = g.parse()?;
    }
    if let Some(m) = &o.reward_model {
        config.reward_model = match m.replace('-', "_").as_str() {
            "bernoulli" => RewardModel::Bernoulli,
            "bounded_continuous" => RewardModel::BoundedContinuous,
            other => {
                return fail(format!(
                    "unknown reward model {other:?} (bernoulli | bounded_continuous)"
                ))
            }
        };
    }
    if let Some(t) = &o.trace {
        config.trace = Some(if t == "drift" {
            TraceSource::Drift {
                spec: DriftSpec::default(),
            }
        } else {
            TraceSource::File {
                path: PathBuf::from(t),
            }
        });
    }
    if let Some(rate) = o.decay_rate {
        match &mut config.trace {
            Some(TraceSource::Drift { spec }) => spec.decay_rate = rate,
            _ => return fail("--decay-rate needs --trace drift"),
        }
    }
    if o.log_steps {
        config.log_steps = true;
    }
    Ok(())
}

fn base_config(o: &Overrides) -> Result<ExperimentConfig, CliError> {
    let mut config = match &o.config {
        Some(path) => load_config(path)?,
        None => default_config(),
    };
    apply_overrides(&mut config, o)?;
    Ok(config)
}

fn execute(dir: &Path, config: &ExperimentConfig, jobs: usize) -> Result<(), CliError> {
    let output = run_sweep(config, jobs)?;
    let digest = config_digest(config);
    fs::create_dir_all(dir).map_err(|e| CliError(format!("{}: {e}", dir.display())))?;
    let write = |name: &str, bytes: Vec<u8>| -> Result<PathBuf, CliError> {
        let path = dir.join(name);
        write_atomic(&path, &bytes).map_err(|e| CliError(format!("{}: {e}", path.display())))?;
        Ok(path)
    };
    let mut json = serde_json::to_vec_pretty(config)?;
    json.push(b'\n');
    write("config.json", json)?;
    if config.log_steps {
        let mut bytes = Vec::new();
        write_step_log(&mut bytes, &output.logs, &digest)?;
        write("steps.csv", bytes)?;
    }
    let mut bytes = Vec::new();
    write_summary(&mut bytes, &output.rows, &digest)?;
    let path = write("summary.csv", bytes)?;
    println!(
        "wrote {} ({} rows, config {digest})",
        path.display(),
        output.rows.len()
    );
    Ok(())
}

fn cmd_run(dir: &Path, args: RunArgs) -> Result<(), CliError> {
    let mut config = base_config(&args.overrides)?;
    if let Some(p) = &args.policy {
        config.policies = vec![p.parse()?];
    }
    if let Some(b) = args.budget {
        config.budgets = vec![b];
    }
    if let Some(n) = args.n {
        config.worker_counts = vec![n];
    }
    if config.policies.len() != 1 || config.budgets.len() != 1 || config.worker_counts.len() > 1 {
        return fail(
            "run takes one policy, one budget and at most one worker count; use sweep for grids",
        );
    }
    execute(dir, &config, args.overrides.jobs)
}

fn cmd_sweep(dir: &Path, args: SweepArgs) -> Result<(), CliError> {
    let mut config = base_config(&args.overrides)?;
    if let Some(ps) = &args.policies {
        config.policies = ps.iter().map(|p| p.parse()).collect::<Result<_, _>>()?;
    }
    if let Some(b) = &args.budgets {
        config.budgets = b.clone();
    }
    if let Some(n) = &args.worker_counts {
        config.worker_counts = n.clone();
    }
    execute(dir, &config, args.overrides.jobs)
}

fn cmd_bound(args: BoundArgs) -> Result<(), CliError> {
    let explicit = [args.c_min, args.c_max].iter().all(Option::is_some) && args.tau_max.is_some();
    let inputs = if args.instance.is_some() || args.n.is_some() {
        let instance = bound_instance(&args)?;
        instance_bound_inputs(&instance, args.granularity)?
    } else if explicit {
        BoundInputs {
            budget: args.budget,
            dimension: args.synthetic.dimension,
            alpha: args.alpha.unwrap_or(1.0),
            l: args.holder_l.unwrap_or(1.0),
            c_min: args.c_min.unwrap_or_default(),
            c_max: args.c_max.unwrap_or_default(),
            tau_max: args.tau_max.unwrap_or_default(),
            delta_min: args.delta_min.filter(|&d| d > 0.0),
        }
    } else {
        return fail("bound needs --instance, --n, or explicit --c-min/--c-max/--tau-max");
    };
    let report = theorem1_bound(&inputs)?;
    print!("{}", format_bound_report(&inputs, &report));
    Ok(())
}

fn bound_instance(args: &BoundArgs) -> Result<TaskInstance, CliError> {
    let mut source = match &args.instance {
        Some(path) => InstanceSource::File {
            path: path.clone(),
            mu_map: None,
            holder_l: args.holder_l,
            holder_alpha: args.alpha,
        },
        None => args.synthetic.source()?,
    };
    if let InstanceSource::File { mu_map, .. } = &mut source {
        if args.synthetic.mu_map != "coordinate_mean" {
            *mu_map = Some(MuMap::parse(&args.synthetic.mu_map)?);
        }
    }
    let instance = source.build(args.n.unwrap_or(0), args.budget, args.seed)?;
    match (args.holder_l, args.alpha) {
        (None, None) => Ok(instance),
        (l, a) => Ok(TaskInstance::new(
            instance.workers().to_vec(),
            instance.budget(),
            instance.dimension(),
            l.unwrap_or(instance.holder_l()),
            a.unwrap_or(instance.holder_alpha()),
        )?),
    }
}

/// Human-readable bound report, one quantity per line.
pub fn format_bound_report(inputs: &BoundInputs, r: &BoundReport) -> String {
    let mut s = String::new();
    s += &format!(
        "inputs: B={} M={} alpha={} L={} c_min={} c_max={} tau_max={}\n",
        inputs.budget,
        inputs.dimension,
        inputs.alpha,
        inputs.l,
        inputs.c_min,
        inputs.c_max,
        inputs.tau_max
    );
    s += &format!("d: {}\n", r.d);
    s += &format!("Delta: {}\n", r.holder_gap);
    match r.delta_min {
        Some(v) => s += &format!("delta_min: {v}\n"),
        None => s += "delta_min: undefined\n",
    }
    if let (Some(xi), Some(h)) = (r.xi, r.h) {
        s += &format!("xi: {xi}\n");
        s += &format!("h(ln B): {h}\n");
    }
    match r.bound {
        Some(b) => s += &format!("bound: {b}\n"),
        None => s += "bound: not finite (δ_min = 0 or undefined)\n",
    }
    s
}

fn cmd_selftest(args: SelftestArgs) -> Result<(), CliError> {
    let checks: [(&str, fn(usize, u64) -> Result<(), String>); 4] = [
        ("greedy vs brute force", check_knapsack),
        ("within-cube gap", check_holder),
        ("grouped vs naive weights", check_subroutine),
        ("determinism", check_determinism),
    ];
    let mut failed = 0;
    for (name, check) in checks {
        match check(args.cases, args.seed) {
            Ok(()) => println!("PASS {name}"),
            Err(msg) => {
                failed += 1;
                println!("FAIL {name}: {msg}");
            }
        }
    }
    println!(
        "selftest: {} passed, {failed} failed",
        checks.len() - failed
    );
    if failed > 0 {
        return fail(format!("{failed} selftest check(s) failed"));
    }
    Ok(())
}

fn check_knapsack(cases: usize, seed: u64) -> Result<(), String> {
    let mut rng = SimRng::seed_from_u64(seed);
    for case in 0..cases {
        let n = rng.gen_range(1..=8);
        let values: Vec<f64> = (0..n).map(|_| rng.gen()).collect();
        let costs: Vec<f64> = (0..n).map(|_| rng.gen_range(1.0..=3.0)).collect();
        let caps: Vec<u32> = (0..n).map(|_| rng.gen_range(1..=3)).collect();
        let full: f64 = costs.iter().zip(&caps).map(|(c, &t)| c * t as f64).sum();
        let budget = rng.gen_range(0.0..=full);
        let opt = brute_force_bkp(&values, &costs, &caps, budget).map_err(|e| e.to_string())?;
        let greedy = density_greedy(&values, &costs, &caps, budget).map_err(|e| e.to_string())?;
        let frac = solve_fbkp(&values, &costs, &caps, budget).map_err(|e| e.to_string())?;
        let floor = round_down(&frac, &costs, &values);
        let ok = greedy.expected_value >= 0.5 * opt.expected_value
            && floor.expected_value <= opt.expected_value + 1e-9
            && opt.expected_value <= frac.value + 1e-9
            && frac.value <= floor.expected_value + frac.split_value(&values) + 1e-9;
        if !ok {
            return Err(format!("case {case} violates the bounds"));
        }
    }
    Ok(())
}

fn check_holder(cases: usize, seed: u64) -> Result<(), String> {
    let mut rng = SimRng::seed_from_u64(seed);
    let m = 2;
    let map = MuMap::CoordinateMean;
    let l = 1.0 / (m as f64).sqrt();
    for d in [2u32, 5, 10, 47] {
        let grid = PartitionGrid::new(d, m).map_err(|e| e.to_string())?;
        let gap = holder_delta(l, 1.0, m, d);
        for _ in 0..cases {
            let a: Vec<f64> = (0..m).map(|_| rng.gen()).collect();
            let q = cube_index(&a, &grid).map_err(|e| e.to_string())?;
            let cells = grid.cells_of(q);
            let b: Vec<f64> = cells
                .iter()
                .map(|&k| ((k as f64 + rng.gen::<f64>()) / d as f64).min(1.0))
                .collect();
            if cube_index(&b, &grid).map_err(|e| e.to_string())? != q {
                continue;
            }
            if (map.eval(&a) - map.eval(&b)).abs() > gap + 1e-12 {
                return Err(format!("gap exceeded at d = {d}"));
            }
        }
    }
    Ok(())
}

fn check_subroutine(cases: usize, seed: u64) -> Result<(), String> {
    let mut rng = SimRng::seed_from_u64(seed);
    for case in 0..cases {
        let mut policy = random_caws_state(&mut rng);
        let t = rng.gen_range(1..1000);
        if policy.caws_subroutine(t) != policy.caws_subroutine_naive(t) {
            return Err(format!("case {case} differs"));
        }
    }
    Ok(())
}

/// A context-aware policy driven part-way through a random episode.
pub fn random_caws_state(rng: &mut SimRng) -> crate::policies::Caws {
    let n = rng.gen_range(1..40);
    let m = rng.gen_range(1..=3);
    // Few distinct costs so cells hold several equal-cost members.
    let cost_levels = [1.0, 1.25, 1.5, 2.0, 3.0];
    let workers: Vec<WorkerSpec> = (0..n)
        .map(|i| {
            let ctx = (0..m).map(|_| rng.gen()).collect();
            let cost = cost_levels[rng.gen_range(0..cost_levels.len())];
            WorkerSpec::new(i, ctx, cost, rng.gen_range(0..5), rng.gen())
        })
        .collect();
    let budget = rng.gen_range(1.0..60.0);
    let instance = TaskInstance::new(workers, budget, m, 1.0, 1.0).expect("valid random instance");
    let granularity = match rng.gen_range(0..3) {
        0 => Granularity::Auto,
        1 => Granularity::Singleton,
        _ => Granularity::Fixed(rng.gen_range(1..5)),
    };
    let mut policy = caws_init(&instance.view(), budget, granularity).expect("valid grid");
    let steps = rng.gen_range(0..40);
    for t in 1..=steps {
        if !policy.resources().can_select() {
            break;
        }
        let w = policy.select(t, rng).expect("guard holds");
        let reward = if rng.gen::<f64>() < instance.workers()[w].true_mean() {
            1.0
        } else {
            0.0
        };
        policy.observe(w, reward).expect("pending worker");
    }
    policy
}

fn check_determinism(_cases: usize, seed: u64) -> Result<(), String> {
    let config = ExperimentConfig {
        instance: InstanceSource::Synthetic {
            dimension: 2,
            cost_range: (1.0, 1.5),
            capacity_range: (2, 5),
            mu_map: MuMap::CoordinateMean,
        },
        policies: PolicyKind::ALL.to_vec(),
        budgets: vec![30.0, 60.0],
        worker_counts: vec![40],
        replications: 2,
        seed,
        log_steps: true,
        ..default_config()
    };
    let render = |jobs| -> Result<Vec<u8>, String> {
        let out = run_sweep(&config, jobs).map_err(|e| e.to_string())?;
        let mut bytes = Vec::new();
        write_summary(&mut bytes, &out.rows, "x").map_err(|e| e.to_string())?;
        write_step_log(&mut bytes, &out.logs, "x").map_err(|e| e.to_string())?;
        Ok(bytes)
    };
    if render(1)? == render(2)? {
        Ok(())
    } else {
        Err("outputs differ between runs".into())
    }
}
