mod args;
mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::Parser;
use preid::dataset::{extract_observations, read_dataset, read_scene, write_dataset, write_scene, generate_synthetic, SynthConfig};
use preid::eval::{bench, curve_csv, density_curve, fit_power_law_in, report, score_eval_set, CurveMode, FitSpace};
use preid::fsutil::{atomic_write, atomic_write_json};
use preid::model::{load_checkpoint, EncoderKind, ModelConfig, ReidModel};
use preid::sampling::{build_eval_set, read_eval_set, write_eval_set};
use preid::train::{train, SamplerKind};
use serde::Serialize;

use args::*;
use config::{parse_list, parse_objects, parse_points, RunConfig};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
}

impl From<preid::Error> for CliError {
    fn from(e: preid::Error) -> Self {
        match e {
            preid::Error::Config(_) => CliError::Usage(e.to_string()),
            e => CliError::Data(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

type CliResult<T = ()> = Result<T, CliError>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Data(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn common(cmd: &Command) -> &Common {
    match cmd {
        Command::GenSynthetic(a) => &a.common,
        Command::BuildDataset(a) => &a.common,
        Command::MakeEvalSet(a) => &a.common,
        Command::Train(a) => &a.common,
        Command::Eval(a) => &a.common,
        Command::Curve(a) => &a.common,
        Command::FitPowerlaw(a) => &a.common,
        Command::Bench(a) => &a.common,
        Command::Inspect(a) => &a.common,
    }
}

/// `PREID_THREADS` caps the worker count; `--deterministic` forces one.
fn thread_count(deterministic: bool) -> CliResult<usize> {
    if deterministic {
        return Ok(1);
    }
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    match std::env::var("PREID_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n.min(cores)),
            _ => Err(CliError::Usage(format!("PREID_THREADS must be a positive integer, got {v:?}"))),
        },
        Err(_) => Ok(cores),
    }
}

fn run(cmd: Command) -> CliResult {
    let c = common(&cmd).clone();
    let mut cfg = RunConfig::load(c.config.as_deref())?;
    if let Some(seed) = c.seed {
        cfg.seed = seed;
    }
    cfg.threads = thread_count(c.deterministic)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| CliError::Data(e.to_string()))?;
    pool.install(|| match cmd {
        Command::GenSynthetic(a) => gen_synthetic(a, cfg),
        Command::BuildDataset(a) => build_dataset(a, cfg),
        Command::MakeEvalSet(a) => make_eval_set(a, cfg),
        Command::Train(a) => train_cmd(a, cfg),
        Command::Eval(a) => eval_cmd(a, cfg),
        Command::Curve(a) => curve_cmd(a, cfg),
        Command::FitPowerlaw(a) => fit_powerlaw(a, cfg),
        Command::Bench(a) => bench_cmd(a, cfg),
        Command::Inspect(a) => inspect(a, cfg),
    })
}

fn begin(cfg: &mut RunConfig, command: &str, paths: &[(&str, &Path)]) {
    cfg.command = command.into();
    for (k, p) in paths {
        cfg.paths.insert((*k).into(), p.to_path_buf());
    }
}

fn write_resolved(cfg: &RunConfig, dir: &Path) -> CliResult {
    atomic_write_json(&dir.join("resolved_config.json"), cfg)?;
    Ok(())
}

fn print_json<T: Serialize>(value: &T) -> CliResult {
    println!("{}", serde_json::to_string_pretty(value).map_err(|e| CliError::Data(e.to_string()))?);
    Ok(())
}

fn gen_synthetic(a: GenSyntheticArgs, mut cfg: RunConfig) -> CliResult {
    match a.preset {
        Some(Preset::Reference) => cfg.synth = SynthConfig::reference(),
        Some(Preset::Default) => cfg.synth = SynthConfig::default(),
        None => {}
    }
    let s = &mut cfg.synth;
    if let Some(o) = &a.objects {
        s.objects = parse_objects(o)?;
    }
    s.frames_per_object = a.frames_per_object.unwrap_or(s.frames_per_object);
    s.lambda = a.lambda.unwrap_or(s.lambda);
    s.lambda_spread = a.lambda_spread.unwrap_or(s.lambda_spread);
    s.shape_spread = a.shape_spread.unwrap_or(s.shape_spread);
    s.fp_rate = a.fp_rate.unwrap_or(s.fp_rate);
    begin(&mut cfg, "gen-synthetic", &[("out", &a.out)]);

    let scene = generate_synthetic(&cfg.synth, cfg.seed)?;
    write_scene(&scene, &a.out)?;
    write_resolved(&cfg, &a.out)?;
    println!(
        "wrote {} detections, {} GT records, {} frames to {}",
        scene.detections.len(),
        scene.gt.len(),
        scene.frame_points.len(),
        a.out.display()
    );
    Ok(())
}

fn build_dataset(a: BuildDatasetArgs, mut cfg: RunConfig) -> CliResult {
    let e = &mut cfg.extract;
    e.score_threshold = a.score_threshold.unwrap_or(e.score_threshold);
    e.iou_threshold = a.iou_threshold.unwrap_or(e.iou_threshold);
    begin(&mut cfg, "build-dataset", &[("scene", &a.scene), ("out", &a.out)]);

    let scene = read_scene(&a.scene)?;
    let (ds, stats) = extract_observations(&scene.detections, &scene.gt, &scene.frame_points, &cfg.extract)?;
    write_dataset(&ds, &a.out)?;
    atomic_write_json(&a.out.join("extract_stats.json"), &stats)?;
    write_resolved(&cfg, &a.out)?;
    print_json(&stats)
}

fn make_eval_set(a: MakeEvalSetArgs, mut cfg: RunConfig) -> CliResult {
    let e = &mut cfg.eval;
    e.max_positives = a.max_positives.unwrap_or(e.max_positives);
    e.min_points = a.min_points.unwrap_or(e.min_points);
    begin(&mut cfg, "make-eval-set", &[("dataset", &a.dataset), ("out", &a.out)]);

    let ds = read_dataset(&a.dataset)?;
    let (set, stats) = build_eval_set(&ds, cfg.eval.max_positives, cfg.eval.min_points, cfg.seed);
    write_eval_set(&set, &a.out.join("pairs.jsonl"))?;
    write_resolved(&cfg, &a.out)?;
    print_json(&stats)
}

fn apply_model_flags(model: &mut ModelConfig, f: &ModelFlags) {
    if let Some(kind) = f.encoder {
        model.encoder.kind = match kind {
            EncoderArg::PointnetLite => EncoderKind::PointnetLite,
            EncoderArg::EdgeconvLite => EncoderKind::EdgeconvLite,
        };
    }
    if let Some(d) = f.d {
        model.encoder.out_dim = d;
        model.rtmm.d = d;
    }
    model.encoder.n_points = f.n_points.unwrap_or(model.encoder.n_points);
    model.encoder.k = f.k.unwrap_or(model.encoder.k);
    model.rtmm.layers = f.layers.unwrap_or(model.rtmm.layers);
}

fn train_cmd(a: TrainArgs, mut cfg: RunConfig) -> CliResult {
    apply_model_flags(&mut cfg.model, &a.model);
    cfg.model = cfg.model.resolved();
    let t = &mut cfg.train;
    t.epochs = a.epochs.unwrap_or(t.epochs);
    t.batch_size = a.batch_size.unwrap_or(t.batch_size);
    t.lr_base = a.lr.unwrap_or(t.lr_base);
    t.weight_decay = a.weight_decay.unwrap_or(t.weight_decay);
    t.clip_norm = a.clip_norm.unwrap_or(t.clip_norm);
    if let Some(s) = a.sampler {
        t.sampler = match s {
            SamplerArg::Even => SamplerKind::Even,
            SamplerArg::Uniform => SamplerKind::Uniform,
        };
    }
    t.max_steps = a.max_steps.or(t.max_steps);
    t.checkpoint_every = a.checkpoint_every.unwrap_or(t.checkpoint_every);
    t.seed = cfg.seed;
    begin(&mut cfg, "train", &[("dataset", &a.dataset), ("out", &a.out)]);
    cfg.model.validate()?;
    cfg.train.validate()?;

    let ds = read_dataset(&a.dataset)?;
    let mut model = ReidModel::new(cfg.model.clone(), cfg.seed)?;
    write_resolved(&cfg, &a.out)?;
    let report = train(&mut model, &ds, &cfg.train, Some(&a.out))?;
    atomic_write_json(&a.out.join("train_report.json"), &report)?;
    print_json(&report)
}

fn model_config_path(checkpoint: &Path, explicit: Option<&Path>) -> PathBuf {
    explicit.map(Path::to_path_buf).unwrap_or_else(|| {
        checkpoint
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .unwrap_or(Path::new("."))
            .join("model.json")
    })
}

fn load_model(checkpoint: &Path, explicit: Option<&Path>) -> CliResult<ReidModel> {
    let path = model_config_path(checkpoint, explicit);
    let bytes = preid::fsutil::read(&path)?;
    let config: ModelConfig =
        serde_json::from_slice(&bytes).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    Ok(load_checkpoint(checkpoint, config)?)
}

#[derive(Serialize)]
struct ReportFile<'a> {
    #[serde(flatten)]
    report: &'a preid::eval::EvalReport,
    config: &'a RunConfig,
}

/// Loads model, dataset and pairs, and scores every pair.
fn scored(inputs: &ScoredInputs, cfg: &mut RunConfig, command: &str, out: &Path) -> CliResult<(ReidModel, Vec<preid::eval::PairOutcome>)> {
    cfg.eval.threshold = inputs.threshold.unwrap_or(cfg.eval.threshold);
    if !(0.0..=1.0).contains(&cfg.eval.threshold) {
        return Err(CliError::Usage(format!("--threshold must lie in [0, 1], got {}", cfg.eval.threshold)));
    }
    let model_cfg = model_config_path(&inputs.checkpoint, inputs.model_config.as_deref());
    begin(
        cfg,
        command,
        &[
            ("dataset", &inputs.dataset),
            ("pairs", &inputs.pairs),
            ("checkpoint", &inputs.checkpoint),
            ("model_config", &model_cfg),
            ("out", out),
        ],
    );
    let model = load_model(&inputs.checkpoint, inputs.model_config.as_deref())?;
    cfg.model = model.config().resolved();
    let ds = read_dataset(&inputs.dataset)?;
    let set = read_eval_set(&inputs.pairs, &ds)?;
    if set.pairs.is_empty() {
        return Err(CliError::Data(format!("{} holds no pairs", inputs.pairs.display())));
    }
    let outcomes = score_eval_set(&model, &set, &ds, cfg.seed)?;
    Ok((model, outcomes))
}

fn eval_cmd(a: EvalArgs, mut cfg: RunConfig) -> CliResult {
    let (_, outcomes) = scored(&a.inputs, &mut cfg, "eval", &a.out)?;
    let r = report(&outcomes, cfg.eval.threshold)?;
    let file = ReportFile {
        report: &r,
        config: &cfg,
    };
    atomic_write_json(&a.out.join("report.json"), &file)?;
    write_resolved(&cfg, &a.out)?;
    print_json(&r)
}

fn curve_cmd(a: CurveArgs, mut cfg: RunConfig) -> CliResult {
    if let Some(m) = a.mode {
        cfg.eval.mode = match m {
            ModeArg::Both => CurveMode::Both,
            ModeArg::One => CurveMode::One,
        };
    }
    if let Some(t) = &a.thresholds {
        cfg.eval.thresholds = parse_list("thresholds", t)?;
    }
    if let Some(c) = &a.classes {
        cfg.eval.classes = Some(parse_list("classes", c)?);
    }
    let (_, outcomes) = scored(&a.inputs, &mut cfg, "curve", &a.out)?;
    let classes: Option<Vec<&str>> = cfg.eval.classes.as_ref().map(|v| v.iter().map(String::as_str).collect());
    let points = density_curve(&outcomes, cfg.eval.mode, &cfg.eval.thresholds, cfg.eval.threshold, classes.as_deref());
    let csv = curve_csv(&points);
    atomic_write(&a.out.join("curve.csv"), csv.as_bytes())?;
    write_resolved(&cfg, &a.out)?;
    print!("{csv}");
    Ok(())
}

fn fit_powerlaw(a: FitPowerlawArgs, mut cfg: RunConfig) -> CliResult {
    let points = parse_points(&a.points)?;
    if let Some(g) = &a.grid {
        cfg.powerlaw.grid = parse_list("grid", g)?;
    }
    if let Some(s) = a.space {
        cfg.powerlaw.space = match s {
            SpaceArg::Linear => FitSpace::Linear,
            SpaceArg::Log => FitSpace::Log,
        };
    }
    let out = a.out.clone().unwrap_or_default();
    begin(&mut cfg, "fit-powerlaw", &[]);
    if a.out.is_some() {
        cfg.paths.insert("out".into(), out.clone());
    }
    let fit = fit_power_law_in(&points, &cfg.powerlaw.grid, cfg.powerlaw.space)?;
    if a.out.is_some() {
        atomic_write_json(&out.join("powerlaw.json"), &fit)?;
        write_resolved(&cfg, &out)?;
    }
    print_json(&fit)
}

fn bench_cmd(a: BenchArgs, mut cfg: RunConfig) -> CliResult {
    let b = &mut cfg.bench;
    b.batch = a.batch.unwrap_or(b.batch);
    b.trials = a.trials.unwrap_or(b.trials);
    b.warmup = a.warmup.unwrap_or(b.warmup);
    begin(&mut cfg, "bench", &[]);
    let model = match &a.checkpoint {
        Some(ckpt) => {
            cfg.paths.insert("checkpoint".into(), ckpt.clone());
            load_model(ckpt, a.model_config.as_deref())?
        }
        None => {
            apply_model_flags(&mut cfg.model, &a.model);
            ReidModel::new(cfg.model.clone(), cfg.seed)?
        }
    };
    cfg.model = model.config().resolved();
    let r = bench(&model, cfg.bench.batch, cfg.bench.trials, cfg.bench.warmup, cfg.seed)?;
    if let Some(out) = &a.out {
        cfg.paths.insert("out".into(), out.clone());
        atomic_write_json(&out.join("bench.json"), &r)?;
        write_resolved(&cfg, out)?;
    }
    eprintln!(
        "batch {}: {:.3} ± {:.3} ms, {:.1} pairs/s",
        r.batch_size, r.mean_ms, r.stderr_ms, r.pairs_per_sec
    );
    print_json(&r)
}

fn inspect(a: InspectArgs, mut cfg: RunConfig) -> CliResult {
    begin(&mut cfg, "inspect", &[("dataset", &a.dataset)]);
    let ds = read_dataset(&a.dataset)?;
    let stats = ds.class_stats();
    if let Some(out) = &a.out {
        cfg.paths.insert("out".into(), out.clone());
        atomic_write_json(&out.join("stats.json"), &stats)?;
        write_resolved(&cfg, out)?;
    }
    if a.json {
        return print_json(&stats);
    }
    println!(
        "{:<12} {:>8} {:>8} {:>8} {:>14} {:>16}",
        "class", "objects", "obs", "fp_obs", "pos_pairs", "neg_pairs"
    );
    for (class, s) in &stats {
        println!(
            "{:<12} {:>8} {:>8} {:>8} {:>14} {:>16}",
            class, s.objects, s.observations, s.false_positives, s.positive_pairs, s.negative_pairs
        );
    }
    Ok(())
}
