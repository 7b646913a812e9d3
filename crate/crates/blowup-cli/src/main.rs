//! blowuplab: command-line front end for the blow-up laboratory.
//!
//! Subcommands: `simulate`, `classify`, `lambda-crit`, `domain-g`, `sweep`,
//! `analyze`. Every run echoes its fully resolved configuration into the
//! output directory, all files are written atomically (temp + rename), and
//! exit codes are 0 = success, 1 = usage or schema error, 2 = numerical
//! failure, 3 = undecided outcome.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use blowup_lab::{
    build_domain_g, classify, integrate_deterministic, integrate_sde, lambda_crit, run_sweep,
    summarize, ClassKind, DetConfig, DomainG, DriftMode, Error as LabError, ExperimentKind,
    ModelParams, Outcome, RandomStream, SampleTable, SdeConfig, State, SweepSpec,
};

const EXIT_OK: i32 = 0;
const EXIT_USAGE: i32 = 1;
const EXIT_NUMERIC: i32 = 2;
const EXIT_UNDECIDED: i32 = 3;

#[derive(Parser)]
#[command(
    name = "blowuplab",
    about = "Simulation laboratory for a lattice reaction-diffusion system with blow-up",
    version
)]
struct Cli {
    /// Worker threads for Monte Carlo commands (falls back to
    /// BLOWUPLAB_THREADS, then to the number of cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Integrate one trajectory (deterministic or stochastic) and write the
    /// path CSV plus an outcome JSON.
    Simulate(SimulateArgs),
    /// Classify an initial state into the attraction/explosion decomposition.
    Classify(PointArgs),
    /// Critical scaling of a nonnegative ray by classification bisection.
    LambdaCrit(LambdaArgs),
    /// Construct the auxiliary escape domain (d = 2) and verify its
    /// invariants.
    DomainG(DomainArgs),
    /// Run a seeded Monte Carlo sweep and write samples.csv.
    Sweep(SweepArgs),
    /// Estimate time-scale statistics from samples.csv and write
    /// summary.json plus plot-ready data files.
    Analyze(AnalyzeArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize, Debug)]
#[serde(rename_all = "lowercase")]
enum DriftChoice {
    Paper,
    Gradient,
}

impl From<DriftChoice> for DriftMode {
    fn from(c: DriftChoice) -> Self {
        match c {
            DriftChoice::Paper => DriftMode::PaperDrift,
            DriftChoice::Gradient => DriftMode::GradientExact,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum, Debug)]
enum SimMode {
    Det,
    Sde,
}

#[derive(Args)]
struct ModelArgs {
    /// Number of lattice nodes.
    #[arg(long, default_value_t = 2)]
    d: usize,
    /// Mesh size.
    #[arg(long, default_value_t = 2.0)]
    h: f64,
    /// Reaction exponent (> 1).
    #[arg(long, default_value_t = 2.0)]
    p: f64,
    /// Drift mode: the literal node equations or the exact energy gradient.
    #[arg(long, value_enum, default_value_t = DriftChoice::Paper)]
    drift: DriftChoice,
}

impl ModelArgs {
    fn params(&self) -> anyhow::Result<ModelParams> {
        Ok(ModelParams::new(self.d, self.h, self.p, self.drift.into())?)
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// det = deterministic flow, sde = Euler-Maruyama with noise.
    #[arg(long, value_enum)]
    mode: SimMode,
    /// Noise amplitude (sde mode).
    #[arg(long, default_value_t = 0.0)]
    eps: f64,
    /// Initial state: comma-separated coordinates or "lambda*ones:<value>".
    #[arg(long)]
    u0: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Euler-Maruyama base step (sde mode).
    #[arg(long, default_value_t = 1e-3)]
    dt: f64,
    /// Horizon: give-up time (det) or censoring cap (sde).
    #[arg(long, default_value_t = 1e3)]
    t_max: f64,
    /// Record every k-th step in the path CSV (sde mode).
    #[arg(long, default_value_t = 100)]
    record_stride: u32,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PointArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Initial state: comma-separated coordinates or "lambda*ones:<value>".
    #[arg(long)]
    u0: String,
    #[arg(long, default_value_t = 1e3)]
    t_max: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct LambdaArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Nonnegative ray: comma-separated coordinates or "lambda*ones:<value>".
    #[arg(long)]
    u0: String,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    #[arg(long, default_value_t = 1e3)]
    t_max: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DomainArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Radial expansion of the sampled boundary.
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value_t = 720)]
    n_rays: usize,
    #[arg(long, default_value_t = 1e3)]
    t_max: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    /// Sweep configuration file, JSON or flat key=value. Flags override
    /// file values; file values override defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    h: Option<f64>,
    #[arg(long)]
    p: Option<f64>,
    #[arg(long, value_enum)]
    drift: Option<DriftChoice>,
    /// Comma-separated noise levels, conventionally decreasing.
    #[arg(long)]
    eps_list: Option<String>,
    /// Replicas per noise level.
    #[arg(long)]
    n: Option<u32>,
    #[arg(long)]
    u0: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    t_cap: Option<f64>,
    #[arg(long)]
    record_stride: Option<u32>,
    /// "explosion" or "exit_from_g:<path to domain_g.json>".
    #[arg(long)]
    experiment: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// samples.csv produced by `sweep`.
    #[arg(long)]
    samples: PathBuf,
    /// Censoring cap of the sweep; defaults to the t_cap of a config.json
    /// next to the samples file, else 1e6.
    #[arg(long)]
    t_cap: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

/// The resolved sweep configuration; also the schema of the echoed
/// config.json, which can be fed back through --config verbatim.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
struct SweepConfig {
    d: usize,
    h: f64,
    p: f64,
    drift: DriftChoice,
    eps_list: Vec<f64>,
    n: u32,
    u0: String,
    seed: u64,
    dt: f64,
    t_cap: f64,
    record_stride: u32,
    /// Noise-freeze threshold; null selects twice the certificate level.
    m_freeze: Option<f64>,
    experiment: String,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            d: 2,
            h: 2.0,
            p: 2.0,
            drift: DriftChoice::Paper,
            eps_list: vec![0.5],
            n: 10,
            u0: "lambda*ones:0".into(),
            seed: 0,
            dt: 1e-3,
            t_cap: 1e6,
            record_stride: u32::MAX,
            m_freeze: None,
            experiment: "explosion".into(),
        }
    }
}

fn main() {
    std::process::exit(real_main());
}

fn real_main() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help/version requests are not usage errors
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
            let _ = e.print();
            return code;
        }
    };

    let threads = cli.threads.or_else(|| {
        std::env::var("BLOWUPLAB_THREADS")
            .ok()
            .and_then(|v| v.parse().ok())
    });
    if let Some(n) = threads {
        if n > 0 {
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global();
        }
    }

    match dispatch(cli.cmd) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            exit_code_for(&err)
        }
    }
}

fn exit_code_for(err: &anyhow::Error) -> i32 {
    match err.downcast_ref::<LabError>() {
        Some(
            LabError::NumericalFailure { .. }
            | LabError::Construction(_)
            | LabError::CapEmpty
            | LabError::BracketNotFound { .. }
            | LabError::CertificateNotMet { .. },
        ) => EXIT_NUMERIC,
        _ => EXIT_USAGE,
    }
}

fn dispatch(cmd: Cmd) -> anyhow::Result<i32> {
    match cmd {
        Cmd::Simulate(args) => cmd_simulate(args),
        Cmd::Classify(args) => cmd_classify(args),
        Cmd::LambdaCrit(args) => cmd_lambda_crit(args),
        Cmd::DomainG(args) => cmd_domain_g(args),
        Cmd::Sweep(args) => cmd_sweep(args),
        Cmd::Analyze(args) => cmd_analyze(args),
    }
}

/// Parse "x1,x2,..." or "lambda*ones:<value>" against the model dimension.
fn parse_u0(text: &str, d: usize) -> anyhow::Result<Vec<f64>> {
    let text = text.trim();
    if let Some(rest) = text.strip_prefix("lambda*ones:") {
        let lambda: f64 = rest
            .trim()
            .parse()
            .map_err(|_| anyhow!("bad scaling in u0 spec '{text}'"))?;
        return Ok(vec![lambda; d]);
    }
    let coords: Vec<f64> = text
        .split(',')
        .map(|s| s.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| anyhow!("bad coordinate list in u0 spec '{text}'"))?;
    if coords.len() != d {
        return Err(anyhow!(
            "u0 has {} coordinates but the model has d = {d}",
            coords.len()
        ));
    }
    Ok(coords)
}

fn write_atomic(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    let dir = path
        .parent()
        .ok_or_else(|| anyhow!("output path has no parent directory"))?;
    fs::create_dir_all(dir)?;
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

fn echo_config<T: Serialize>(out: &Path, config: &T) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(config)?;
    text.push('\n');
    write_atomic(&out.join("config.json"), text.as_bytes())
}

fn outcome_exit_code(outcome: &Outcome) -> i32 {
    match outcome {
        Outcome::Survived { .. } => EXIT_UNDECIDED,
        _ => EXIT_OK,
    }
}

fn cmd_simulate(args: SimulateArgs) -> anyhow::Result<i32> {
    let params = args.model.params()?;
    let u0 = parse_u0(&args.u0, params.d)?;
    let state = State::finite(u0.clone())?;

    let det_cfg = DetConfig {
        t_max: args.t_max,
        ..DetConfig::default()
    };
    let (outcome, record, steps) = match args.mode {
        SimMode::Det => {
            let (outcome, record) = integrate_deterministic(&params, &state, &det_cfg)?;
            let steps = record.steps;
            (outcome, record, steps)
        }
        SimMode::Sde => {
            let cfg = SdeConfig {
                dt: args.dt,
                t_cap: args.t_max,
                record_stride: args.record_stride,
                det: det_cfg,
                ..SdeConfig::for_params(&params)
            };
            let mut stream = RandomStream::from_seed(args.seed);
            let (outcome, record) = integrate_sde(&params, &state, args.eps, &cfg, &mut stream)?;
            let steps = record.steps;
            (outcome, record, steps)
        }
    };

    let mut csv = Vec::new();
    record.write_csv(&outcome, &mut csv)?;
    write_atomic(&args.out.join("path.csv"), &csv)?;
    let outcome_json = serde_json::json!({ "outcome": outcome, "steps": steps });
    write_atomic(
        &args.out.join("outcome.json"),
        format!("{}\n", serde_json::to_string_pretty(&outcome_json)?).as_bytes(),
    )?;
    echo_config(
        &args.out,
        &serde_json::json!({
            "command": "simulate",
            "mode": match args.mode { SimMode::Det => "det", SimMode::Sde => "sde" },
            "model": params,
            "eps": args.eps,
            "u0": args.u0,
            "seed": args.seed,
            "dt": args.dt,
            "t_max": args.t_max,
            "record_stride": args.record_stride,
        }),
    )?;
    Ok(outcome_exit_code(&outcome))
}

fn cmd_classify(args: PointArgs) -> anyhow::Result<i32> {
    let params = args.model.params()?;
    let u0 = parse_u0(&args.u0, params.d)?;
    let cfg = DetConfig {
        t_max: args.t_max,
        ..DetConfig::default()
    };
    let verdict = classify(&params, &State::finite(u0)?, &cfg)?;
    write_atomic(
        &args.out.join("verdict.json"),
        format!("{}\n", serde_json::to_string_pretty(&verdict)?).as_bytes(),
    )?;
    echo_config(
        &args.out,
        &serde_json::json!({
            "command": "classify",
            "model": params,
            "u0": args.u0,
            "t_max": args.t_max,
        }),
    )?;
    Ok(match verdict.kind {
        ClassKind::Undecided => EXIT_UNDECIDED,
        _ => EXIT_OK,
    })
}

fn cmd_lambda_crit(args: LambdaArgs) -> anyhow::Result<i32> {
    let params = args.model.params()?;
    let u0 = parse_u0(&args.u0, params.d)?;
    let cfg = DetConfig {
        t_max: args.t_max,
        ..DetConfig::default()
    };
    let lc = lambda_crit(&params, &State::finite(u0)?, args.tol, &cfg)?;
    write_atomic(
        &args.out.join("lambda_c.json"),
        format!(
            "{}\n",
            serde_json::to_string_pretty(&serde_json::json!({
                "lambda_c": lc,
                "tol": args.tol,
            }))?
        )
        .as_bytes(),
    )?;
    echo_config(
        &args.out,
        &serde_json::json!({
            "command": "lambda-crit",
            "model": params,
            "u0": args.u0,
            "tol": args.tol,
            "t_max": args.t_max,
        }),
    )?;
    Ok(EXIT_OK)
}

fn cmd_domain_g(args: DomainArgs) -> anyhow::Result<i32> {
    let params = args.model.params()?;
    let cfg = DetConfig {
        t_max: args.t_max,
        ..DetConfig::default()
    };
    let g = build_domain_g(&params, args.alpha, args.n_rays, &cfg)?;
    let checks = g.validate(&params, &cfg)?;

    let mut csv = Vec::new();
    g.write_csv(&mut csv)?;
    write_atomic(&args.out.join("domain_g.csv"), &csv)?;
    write_atomic(
        &args.out.join("domain_g_header.json"),
        format!("{}\n", g.header_json()).as_bytes(),
    )?;
    // full-fidelity dump for feeding exit sweeps
    write_atomic(
        &args.out.join("domain_g.json"),
        format!("{}\n", serde_json::to_string(&g)?).as_bytes(),
    )?;
    write_atomic(
        &args.out.join("checks.json"),
        format!("{}\n", serde_json::to_string_pretty(&checks)?).as_bytes(),
    )?;
    echo_config(
        &args.out,
        &serde_json::json!({
            "command": "domain-g",
            "model": params,
            "alpha": args.alpha,
            "n_rays": args.n_rays,
            "t_max": args.t_max,
        }),
    )?;
    Ok(EXIT_OK)
}

/// Flat key=value configuration: one `key = value` pair per line, `#`
/// comments allowed; eps_list is comma-separated.
fn parse_flat_config(text: &str) -> anyhow::Result<SweepConfig> {
    let mut cfg = SweepConfig::default();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| anyhow!("line {}: expected key = value", lineno + 1))?;
        let key = key.trim();
        let value = value.trim();
        let bad = |what: &str| anyhow!("line {}: bad {what} '{value}'", lineno + 1);
        match key {
            "d" => cfg.d = value.parse().map_err(|_| bad("d"))?,
            "h" => cfg.h = value.parse().map_err(|_| bad("h"))?,
            "p" => cfg.p = value.parse().map_err(|_| bad("p"))?,
            "drift" => {
                cfg.drift = match value {
                    "paper" => DriftChoice::Paper,
                    "gradient" => DriftChoice::Gradient,
                    _ => return Err(bad("drift")),
                }
            }
            "eps_list" => {
                cfg.eps_list = value
                    .split(',')
                    .map(|s| s.trim().parse::<f64>())
                    .collect::<Result<_, _>>()
                    .map_err(|_| bad("eps_list"))?
            }
            "n" => cfg.n = value.parse().map_err(|_| bad("n"))?,
            "u0" => cfg.u0 = value.to_string(),
            "seed" => cfg.seed = value.parse().map_err(|_| bad("seed"))?,
            "dt" => cfg.dt = value.parse().map_err(|_| bad("dt"))?,
            "t_cap" => cfg.t_cap = value.parse().map_err(|_| bad("t_cap"))?,
            "record_stride" => {
                cfg.record_stride = value.parse().map_err(|_| bad("record_stride"))?
            }
            "m_freeze" => cfg.m_freeze = Some(value.parse().map_err(|_| bad("m_freeze"))?),
            "experiment" => cfg.experiment = value.to_string(),
            other => return Err(anyhow!("line {}: unknown key '{other}'", lineno + 1)),
        }
    }
    Ok(cfg)
}

fn load_sweep_config(path: &Path) -> anyhow::Result<SweepConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    if text.trim_start().starts_with('{') {
        serde_json::from_str(&text).map_err(|e| anyhow!(LabError::Schema(e.to_string())))
    } else {
        parse_flat_config(&text)
    }
}

fn resolve_experiment(spec: &str) -> anyhow::Result<ExperimentKind> {
    if spec == "explosion" {
        return Ok(ExperimentKind::ExplosionTime);
    }
    if let Some(path) = spec.strip_prefix("exit_from_g:") {
        let text = fs::read_to_string(path.trim())
            .with_context(|| format!("reading domain file {path}"))?;
        let g: DomainG = serde_json::from_str(&text)
            .map_err(|e| anyhow!(LabError::Schema(format!("domain file: {e}"))))?;
        return Ok(ExperimentKind::ExitFromG(g));
    }
    Err(anyhow!(
        "experiment must be 'explosion' or 'exit_from_g:<path>', got '{spec}'"
    ))
}

fn cmd_sweep(args: SweepArgs) -> anyhow::Result<i32> {
    let mut cfg = match &args.config {
        Some(path) => load_sweep_config(path)?,
        None => SweepConfig::default(),
    };
    // flags override the file
    if let Some(v) = args.d {
        cfg.d = v;
    }
    if let Some(v) = args.h {
        cfg.h = v;
    }
    if let Some(v) = args.p {
        cfg.p = v;
    }
    if let Some(v) = args.drift {
        cfg.drift = v;
    }
    if let Some(v) = &args.eps_list {
        cfg.eps_list = v
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| anyhow!("bad --eps-list '{v}'"))?;
    }
    if let Some(v) = args.n {
        cfg.n = v;
    }
    if let Some(v) = &args.u0 {
        cfg.u0 = v.clone();
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = args.dt {
        cfg.dt = v;
    }
    if let Some(v) = args.t_cap {
        cfg.t_cap = v;
    }
    if let Some(v) = args.record_stride {
        cfg.record_stride = v;
    }
    if let Some(v) = &args.experiment {
        cfg.experiment = v.clone();
    }

    let params = ModelParams::new(cfg.d, cfg.h, cfg.p, cfg.drift.into())?;
    let u0 = parse_u0(&cfg.u0, params.d)?;
    let mut sde = SdeConfig {
        dt: cfg.dt,
        t_cap: cfg.t_cap,
        record_stride: cfg.record_stride,
        ..SdeConfig::for_params(&params)
    };
    if let Some(mf) = cfg.m_freeze {
        sde.m_freeze = mf;
    }
    let spec = SweepSpec {
        params,
        eps_list: cfg.eps_list.clone(),
        n_replicas: cfg.n,
        u0,
        seed: cfg.seed,
        sde,
        experiment: resolve_experiment(&cfg.experiment)?,
    };
    let table = run_sweep(&spec)?;

    let mut csv = Vec::new();
    table.write_csv(&mut csv)?;
    write_atomic(&args.out.join("samples.csv"), &csv)?;
    echo_config(&args.out, &cfg)?;
    Ok(EXIT_OK)
}

fn cmd_analyze(args: AnalyzeArgs) -> anyhow::Result<i32> {
    let text = fs::read_to_string(&args.samples)
        .with_context(|| format!("reading {}", args.samples.display()))?;
    let t_cap = match args.t_cap {
        Some(v) => v,
        None => sibling_config_t_cap(&args.samples).unwrap_or(1e6),
    };
    let table = SampleTable::parse_csv(&text, t_cap)?;
    let summary = summarize(&table, args.seed);

    write_atomic(
        &args.out.join("summary.json"),
        format!("{}\n", serde_json::to_string_pretty(&summary)?).as_bytes(),
    )?;

    // eps^-2 against log beta_hat, one row per usable level
    let mut fit_data = String::new();
    for s in &summary.per_eps {
        if let Some(beta) = s.beta_hat {
            if beta > 0.0 {
                fit_data.push_str(&format!("{} {}\n", 1.0 / (s.eps * s.eps), beta.ln()));
            }
        }
    }
    write_atomic(&args.out.join("fit_delta.dat"), fit_data.as_bytes())?;

    // pooled normalized survival curve: x = t / beta_hat, y = empirical
    // survival; compare against exp(-x)
    let mut normalized: Vec<f64> = Vec::new();
    for s in &summary.per_eps {
        let Some(beta) = s.beta_hat else { continue };
        if beta <= 0.0 || s.censored > 0 {
            continue;
        }
        for row in table.rows.iter().filter(|r| r.eps == s.eps) {
            if let Some(t) = row.exit_time.or(row.tau_hat) {
                normalized.push(t / beta);
            }
        }
    }
    normalized.sort_by(f64::total_cmp);
    let mut survival = String::new();
    let n = normalized.len();
    for (i, t) in normalized.iter().enumerate() {
        survival.push_str(&format!("{} {}\n", t, 1.0 - (i as f64 + 1.0) / n as f64));
    }
    write_atomic(&args.out.join("survival.dat"), survival.as_bytes())?;

    echo_config(
        &args.out,
        &serde_json::json!({
            "command": "analyze",
            "samples": args.samples,
            "t_cap": t_cap,
            "seed": args.seed,
        }),
    )?;
    Ok(EXIT_OK)
}

/// t_cap recorded in a config.json sitting next to the samples file.
fn sibling_config_t_cap(samples: &Path) -> Option<f64> {
    let dir = samples.parent()?;
    let text = fs::read_to_string(dir.join("config.json")).ok()?;
    let value: serde_json::Value = serde_json::from_str(&text).ok()?;
    value.get("t_cap")?.as_f64()
}
