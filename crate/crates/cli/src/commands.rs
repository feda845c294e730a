use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use esgcn::ablation;
use esgcn::config::RunConfig;
use esgcn::data::{self, NormStats, PreparedData};
use esgcn::gradcheck::{self, GradcheckConfig};
use esgcn::model::{Esgcn, ModelConfig};
use esgcn::train::checkpoint::{self, Checkpoint, CheckpointHeader};
use esgcn::train::{fit_and_test, forecast, persistence, EpochRecord, Evaluation, MetricsReport, TrainObserver};
use serde::Serialize;

use crate::output::{emit, ensure_dir, json_bytes, matrix_csv, write_file, CsvLog};
use crate::{AblateArgs, ConfigArgs, EvalArgs, ExportArgs, GradcheckArgs, RunArgs, TrainArgs, WindowArgs};

/// Bad invocation or input data (exit 2).
#[derive(Debug)]
struct InputError(String);

/// Failed numerical check (exit 4).
#[derive(Debug)]
struct NumericalFailure(String);

impl fmt::Display for InputError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Display for NumericalFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for InputError {}
impl std::error::Error for NumericalFailure {}

pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<esgcn::Error>() {
            return match e {
                esgcn::Error::Corrupt { .. } => 3,
                esgcn::Error::NonFiniteGradient(_) | esgcn::Error::Diverged { .. } | esgcn::Error::Backward(_) => 4,
                _ => 2,
            };
        }
        if cause.is::<NumericalFailure>() {
            return 4;
        }
    }
    2
}

fn run_config(args: &RunArgs) -> Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(p) = &args.data {
        cfg.data.path = Some(p.clone());
    }
    if let Some(s) = args.seed {
        cfg.train.seed = s;
    }
    if let Some(e) = args.epochs {
        cfg.train.epochs = e;
    }
    if let Some(o) = &args.out {
        cfg.output.dir = o.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn prepare(cfg: &RunConfig, path: Option<&Path>, norm: Option<NormStats>) -> Result<PreparedData> {
    let path = path
        .or(cfg.data.path.as_deref())
        .ok_or_else(|| InputError("no dataset: set data.path in the config or pass --data".into()))?;
    let ds = data::load(path, cfg.data.format_for(path), cfg.data.load_options())?;
    log::info!(
        "{}: {} steps × {} nodes, {:.2}% missing",
        path.display(),
        ds.steps(),
        ds.nodes(),
        100.0 * ds.missing_ratio()
    );
    let prepared = PreparedData::prepare(&ds, cfg.window_spec(), cfg.data.windowing, norm)?;
    let s = &prepared.splits;
    log::info!("windows: {} train, {} val, {} test", s.train.len(), s.val.len(), s.test.len());
    Ok(prepared)
}

/// Streams the epoch log and keeps the best checkpoint on disk as soon as
/// it appears, so a diverged run still leaves its last good model.
struct RunRecorder {
    checkpoint: PathBuf,
    log: CsvLog,
    header: CheckpointHeader,
}

impl TrainObserver for RunRecorder {
    fn on_epoch(&mut self, record: &EpochRecord, improved: bool, model: &Esgcn<f32>) -> esgcn::Result<()> {
        self.log.append(record).map_err(|e| esgcn::Error::Io {
            path: self.log.path().to_path_buf(),
            source: e,
        })?;
        if improved {
            self.header.epoch = record.epoch;
            self.header.val_mae = record.val_mae;
            checkpoint::save(&self.checkpoint, &self.header, model.params())?;
        }
        Ok(())
    }
}

#[derive(Serialize)]
struct TrainMetrics<'a> {
    dataset: &'a str,
    nodes: usize,
    parameters: usize,
    seed: u64,
    best_epoch: usize,
    best_val_mae: f64,
    steps: usize,
    test: &'a Evaluation,
    persistence_test: &'a Evaluation,
}

/// One training run into `dir`; returns the test metrics.
fn train_into(cfg: &RunConfig, data: &PreparedData, dir: &Path) -> Result<MetricsReport> {
    ensure_dir(dir)?;
    let parameters = Esgcn::<f32>::new(cfg.model.clone(), cfg.train.seed)?.parameter_count();
    let mut recorder = RunRecorder {
        checkpoint: dir.join("checkpoint.bin"),
        log: CsvLog::create(dir.join("train_log.csv"))?,
        header: CheckpointHeader {
            epoch: 0,
            val_mae: f64::INFINITY,
            nodes: data.nodes(),
            norm: data.norm,
            param_count: parameters,
            model: cfg.model.clone(),
            config: serde_json::to_value(cfg).expect("config serializes"),
        },
    };
    let (outcome, test) = fit_and_test(&cfg.model, &cfg.train, data, &mut recorder)
        .with_context(|| format!("training run in {}", dir.display()))?;
    let baseline = persistence(data, &data.splits.test)?;
    let metrics = TrainMetrics {
        dataset: &data.name,
        nodes: data.nodes(),
        parameters,
        seed: cfg.train.seed,
        best_epoch: outcome.best_epoch,
        best_val_mae: outcome.best_val.overall.mae,
        steps: outcome.steps,
        test: &test,
        persistence_test: &baseline,
    };
    write_file(&dir.join("metrics.json"), &json_bytes(&metrics))?;
    let m = test.overall;
    log::info!(
        "best epoch {} — test RMSE {:.3} MAE {:.3} MAPE {:.2}% (persistence MAE {:.3})",
        outcome.best_epoch,
        m.rmse,
        m.mae,
        m.mape,
        baseline.overall.mae
    );
    Ok(m)
}

#[derive(Serialize)]
struct RepeatSummary {
    seeds: Vec<u64>,
    runs: Vec<MetricsReport>,
    mean: MetricsReport,
    std: MetricsReport,
}

fn summarize(seeds: Vec<u64>, runs: Vec<MetricsReport>) -> RepeatSummary {
    let n = runs.len() as f64;
    let mean_of = |f: fn(&MetricsReport) -> f64| runs.iter().map(f).sum::<f64>() / n;
    let std_of = |f: fn(&MetricsReport) -> f64, m: f64| (runs.iter().map(|r| (f(r) - m).powi(2)).sum::<f64>() / n).sqrt();
    let mean = MetricsReport {
        rmse: mean_of(|r| r.rmse),
        mae: mean_of(|r| r.mae),
        mape: mean_of(|r| r.mape),
    };
    let std = MetricsReport {
        rmse: std_of(|r| r.rmse, mean.rmse),
        mae: std_of(|r| r.mae, mean.mae),
        mape: std_of(|r| r.mape, mean.mape),
    };
    RepeatSummary { seeds, runs, mean, std }
}

pub fn train(args: TrainArgs) -> Result<()> {
    let cfg = run_config(&args.run)?;
    let data = prepare(&cfg, None, None)?;
    let out = cfg.output.dir.clone();
    if args.repeat == 1 {
        train_into(&cfg, &data, &out)?;
        return Ok(());
    }
    let mut seeds = Vec::new();
    let mut runs = Vec::new();
    for r in 0..args.repeat {
        let mut run = cfg.clone();
        run.train.seed = cfg.train.seed + r;
        runs.push(train_into(&run, &data, &out.join(format!("seed-{}", run.train.seed)))?);
        seeds.push(run.train.seed);
    }
    let summary = summarize(seeds, runs);
    log::info!(
        "{} seeds — test MAE {:.3} ± {:.3}",
        summary.seeds.len(),
        summary.mean.mae,
        summary.std.mae
    );
    write_file(&out.join("summary.json"), &json_bytes(&summary))
}

struct Loaded {
    checkpoint: Checkpoint,
    config: RunConfig,
    data: PreparedData,
}

fn load_for_data(checkpoint_path: &Path, data: Option<&Path>) -> Result<Loaded> {
    let checkpoint = checkpoint::load(checkpoint_path)?;
    let config: RunConfig =
        serde_json::from_value(checkpoint.header.config.clone()).map_err(|e| esgcn::Error::Corrupt {
            path: checkpoint_path.to_path_buf(),
            msg: format!("configuration echo is unreadable: {e}"),
        })?;
    let data = prepare(&config, data, Some(checkpoint.header.norm))?;
    if data.nodes() != checkpoint.header.nodes {
        return Err(InputError(format!(
            "node count mismatch: checkpoint was trained on {} nodes, dataset has {}",
            checkpoint.header.nodes,
            data.nodes()
        ))
        .into());
    }
    Ok(Loaded {
        checkpoint,
        config,
        data,
    })
}

#[derive(Serialize)]
struct EvalMetrics<'a> {
    dataset: &'a str,
    nodes: usize,
    parameters: usize,
    checkpoint_epoch: usize,
    test: &'a Evaluation,
    persistence_test: &'a Evaluation,
}

pub fn eval(args: EvalArgs) -> Result<()> {
    let l = load_for_data(&args.checkpoint, args.data.as_deref())?;
    let test = esgcn::train::evaluate(
        &l.checkpoint.model,
        &l.data,
        &l.data.splits.test,
        l.config.train.batch_size,
    )?;
    let baseline = persistence(&l.data, &l.data.splits.test)?;
    let metrics = EvalMetrics {
        dataset: &l.data.name,
        nodes: l.data.nodes(),
        parameters: l.checkpoint.model.parameter_count(),
        checkpoint_epoch: l.checkpoint.header.epoch,
        test: &test,
        persistence_test: &baseline,
    };
    if let Some(path) = emit(args.out.as_deref(), "metrics.json", &json_bytes(&metrics))? {
        log::info!("wrote {}", path.display());
    }
    Ok(())
}

fn window_start(data: &PreparedData, window: usize) -> Result<usize> {
    data.check_window(window).map_err(|e| InputError(e.to_string()))?;
    Ok(window)
}

pub fn predict(args: WindowArgs) -> Result<()> {
    let l = load_for_data(&args.checkpoint, args.data.as_deref())?;
    let start = window_start(&l.data, args.window)?;
    let rows = forecast(&l.checkpoint.model, &l.data, start)?;
    emit(args.out.as_deref(), "forecast.csv", &matrix_csv(rows))?;
    Ok(())
}

pub fn export_aam(args: ExportArgs) -> Result<()> {
    let w = &args.window;
    let l = load_for_data(&w.checkpoint, w.data.as_deref())?;
    if !l.checkpoint.model.config().es_module {
        return Err(InputError("checkpoint has no ES module, so there is no adjacency matrix".into()).into());
    }
    let start = window_start(&l.data, w.window)?;
    let batch = l.data.batch::<f32>(&[start]);
    let (a, a_r) = l.checkpoint.model.adjacency(&batch.inputs)?;
    let m = if args.reversed { a_r } else { a };
    let n = l.data.nodes();
    let rows = m.data().chunks(n).map(<[f32]>::to_vec);
    let name = if args.reversed { "aam_reversed.csv" } else { "aam.csv" };
    emit(w.out.as_deref(), name, &matrix_csv(rows))?;
    Ok(())
}

pub fn gradcheck(args: GradcheckArgs) -> Result<()> {
    let mut cases = gradcheck::registry(args.points, args.model_points)?;
    if args.inject_fault {
        cases.push(gradcheck::faulty_case(args.points));
    }
    if let Some(f) = &args.filter {
        cases.retain(|c| c.name.contains(f.as_str()));
        if cases.is_empty() {
            return Err(InputError(format!("no gradient check case matches {f:?}")).into());
        }
    }
    let cfg = GradcheckConfig {
        seed: args.seed,
        ..Default::default()
    };
    let report = gradcheck::run(&cases, &cfg)?;
    let width = report.cases.iter().map(|c| c.name.len()).max().unwrap_or(0);
    println!("{:width$}  max rel. error  result", "case");
    for c in &report.cases {
        println!(
            "{:width$}  {:>14.3e}  {}",
            c.name,
            c.max_error,
            if c.passed { "pass" } else { "FAIL" }
        );
    }
    if let Some(dir) = &args.out {
        emit(Some(dir), "gradcheck.json", &json_bytes(&report))?;
    }
    let failed: Vec<&str> = report.failures().map(|c| c.name.as_str()).collect();
    if failed.is_empty() {
        println!("all {} cases below {:.0e}", report.cases.len(), report.tolerance);
        Ok(())
    } else {
        Err(NumericalFailure(format!("gradient check failed for: {}", failed.join(", "))).into())
    }
}

#[derive(Serialize)]
struct AblationRow {
    case: usize,
    label: String,
    es_module: bool,
    lambda: f64,
    attention_op: String,
    representative: String,
    rmse: f64,
    mae: f64,
    mape: f64,
}

fn variant_name<T: Serialize>(v: &T) -> String {
    serde_json::to_value(v)
        .ok()
        .and_then(|v| v.as_str().map(str::to_owned))
        .unwrap_or_default()
}

pub fn ablate(args: AblateArgs) -> Result<()> {
    let cfg = run_config(&args.run)?;
    let cases = ablation::preset(&args.preset, &cfg.model)?;
    let data = prepare(&cfg, None, None)?;
    let out = cfg.output.dir.clone();
    let mut rows = Vec::new();
    for case in cases {
        log::info!("case {}: {}", case.case, case.label);
        let run = RunConfig {
            model: case.model.clone(),
            ..cfg.clone()
        };
        let m = train_into(&run, &data, &out.join(format!("case-{:02}", case.case)))?;
        let model: &ModelConfig = &case.model;
        rows.push(AblationRow {
            case: case.case,
            label: case.label,
            es_module: model.es_module,
            lambda: model.lambda,
            attention_op: variant_name(&model.attention_op),
            representative: variant_name(&model.representative),
            rmse: m.rmse,
            mae: m.mae,
            mape: m.mape,
        });
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in &rows {
        w.serialize(row).expect("in-memory write");
    }
    write_file(&out.join("ablation.csv"), &w.into_inner().expect("in-memory flush"))?;
    println!("{:>4}  {:<32} {:>9} {:>9} {:>8}", "case", "variant", "RMSE", "MAE", "MAPE(%)");
    for r in &rows {
        println!(
            "{:>4}  {:<32} {:>9.3} {:>9.3} {:>8.2}",
            r.case, r.label, r.rmse, r.mae, r.mape
        );
    }
    Ok(())
}

pub fn config(args: ConfigArgs) -> Result<()> {
    let cfg = match (&args.config, args.dump_defaults) {
        (None, true) => RunConfig::default(),
        (Some(path), false) => RunConfig::load(path)?,
        (Some(_), true) => return Err(InputError("use either --dump-defaults or --config".into()).into()),
        (None, false) => return Err(InputError("nothing to do: pass --dump-defaults or --config PATH".into()).into()),
    };
    println!("{}", cfg.to_json());
    Ok(())
}
