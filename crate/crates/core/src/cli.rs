//! Command-line front end: `gen`, `train`, `eval`, `plan` and `bench`.
//!
//! Settings resolve as defaults < config file < `RELPLAN_SEED` (seed only)
//! < flags. Every command writes a `manifest.json` with the resolved
//! settings into its output directory; passing that file back through
//! `--config` reproduces the run.

use std::cell::RefCell;
use std::collections::{BTreeMap, HashMap};
use std::ffi::OsString;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::Value;

use crate::error::{Error, Result};
use crate::exec::{init_threads, Exec};
use crate::geometry::SolverConfig;
use crate::labeler::{self, generate_dataset, read_dataset, solvable_records, Dataset, GenConfig};
use crate::net::checkpoint;
use crate::net::eval::{beta_grid, beta_sweep, confusion, score, EvalMetrics, LabelPredictor, SamplePredictor};
use crate::net::train::{split_holdout, train_batch_polling, EpochMetrics, TrainConfig, TrainState};
use crate::net::{ModelDims, ModelParams};
use crate::planner::{compare, plan, BenchCase, HeuristicMode, HeuristicVariant, OracleLabels, PredictorSource, RelevancePredictor};
use crate::scene::{GoalPredicate, ObjectId, PredicateKind, Scene};
use crate::symbolic::DEFAULT_K_MAX;

pub const SEED_ENV: &str = "RELPLAN_SEED";
pub const MANIFEST: &str = "manifest.json";
pub const MANIFEST_SCHEMA: &str = "relplan.manifest/v1";
pub const METRICS_SCHEMA: &str = "relplan.metrics/v1";
pub const EVAL_SCHEMA: &str = "relplan.eval/v1";
pub const EVAL_SWEEP_SCHEMA: &str = "relplan.eval.sweep/v1";
pub const PLAN_SCHEMA: &str = "relplan.plan/v1";
pub const DATASET_FILE: &str = "dataset.rpd";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const METRICS_FILE: &str = "metrics.csv";

const DEFAULT_SEED: u64 = 42;
const DEFAULT_OUT: &str = "relplan-out";

#[derive(Parser, Debug)]
#[command(name = "relplan", version, about = "Learned object-relevance heuristics for pick-and-place planning")]
pub struct Cli {
    /// Worker threads; defaults to every available core.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Run all data-parallel loops on the calling thread.
    #[arg(long, global = true)]
    pub sequential: bool,
    /// `key = value` settings file, or a manifest.json from an earlier run.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a labeled dataset.
    Gen(GenArgs),
    /// Train the relevance classifier with batch polling.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a labeled dataset.
    Eval(EvalArgs),
    /// Plan a single scene.
    Plan(PlanArgs),
    /// Compare planner modes over seeded scenes.
    Bench(BenchArgs),
}

#[derive(Args, Debug)]
pub struct GenArgs {
    /// Predicate kinds, comma separated.
    #[arg(long)]
    pub predicate: Option<String>,
    /// Scenes per predicate kind.
    #[arg(long)]
    pub scenes: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub min_objects: Option<usize>,
    #[arg(long)]
    pub max_objects: Option<usize>,
    #[arg(long)]
    pub k_max: Option<usize>,
    #[arg(long)]
    pub out: Option<String>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Dataset files, comma separated.
    #[arg(long)]
    pub data: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch: Option<usize>,
    /// Per-predicate loss weights, e.g. `on-left=0.86,on-top=0.66`.
    #[arg(long)]
    pub eta: Option<String>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub d_model: Option<usize>,
    /// Fraction of scenes held out for per-epoch accuracy.
    #[arg(long)]
    pub holdout: Option<f64>,
    /// Checkpoint to continue from.
    #[arg(long)]
    pub resume: Option<String>,
    #[arg(long)]
    pub out: Option<String>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub data: Option<String>,
    #[arg(long)]
    pub beta: Option<f64>,
    /// `lo:hi:steps`
    #[arg(long)]
    pub beta_sweep: Option<String>,
    /// Score samples with their own labels instead of a model.
    #[arg(long)]
    pub oracle: bool,
    #[arg(long)]
    pub out: Option<String>,
}

#[derive(Args, Debug)]
pub struct PlanArgs {
    /// Scene JSON file; without it a scene is drawn from the seed.
    #[arg(long)]
    pub scene: Option<String>,
    #[arg(long)]
    pub predicate: Option<String>,
    #[arg(long)]
    pub subject: Option<u32>,
    #[arg(long)]
    pub reference: Option<u32>,
    #[arg(long)]
    pub objects: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Draw index used when no scene file is given.
    #[arg(long)]
    pub index: Option<u64>,
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub oracle: bool,
    #[arg(long)]
    pub k_max: Option<usize>,
    #[arg(long)]
    pub out: Option<String>,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    /// Modes, comma separated: baseline, admissible, non-admissible.
    #[arg(long)]
    pub modes: Option<String>,
    #[arg(long)]
    pub oracle: bool,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub scenes: Option<usize>,
    /// Fixed object count; overrides the min/max range.
    #[arg(long)]
    pub objects: Option<usize>,
    #[arg(long)]
    pub min_objects: Option<usize>,
    #[arg(long)]
    pub max_objects: Option<usize>,
    /// Predicate kinds cycled over the scenes, comma separated.
    #[arg(long)]
    pub predicate: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub beta: Option<f64>,
    /// `lo:hi:steps`
    #[arg(long)]
    pub beta_sweep: Option<String>,
    #[arg(long)]
    pub k_max: Option<usize>,
    #[arg(long)]
    pub out: Option<String>,
}

/// Resolved settings for one command, recorded into the manifest as they
/// are read.
struct Settings {
    file: BTreeMap<String, String>,
    env_seed: Option<String>,
    record: RefCell<serde_json::Map<String, Value>>,
}

fn norm_key(k: &str) -> String {
    k.trim().replace('-', "_")
}

fn parse_value<T: FromStr>(key: &str, raw: &str) -> Result<T>
where
    T::Err: Display,
{
    raw.trim()
        .parse()
        .map_err(|e| Error::InvalidArgument(format!("{key}: cannot parse `{raw}`: {e}")))
}

impl Settings {
    fn load(config: Option<&Path>) -> Result<Settings> {
        let file = match config {
            Some(p) => read_config(p)?,
            None => BTreeMap::new(),
        };
        Ok(Settings {
            file,
            env_seed: std::env::var(SEED_ENV).ok().filter(|s| !s.trim().is_empty()),
            record: RefCell::new(serde_json::Map::new()),
        })
    }

    fn opt<T>(&self, key: &str, flag: Option<T>) -> Result<Option<T>>
    where
        T: FromStr + Serialize,
        T::Err: Display,
    {
        let v = match flag {
            Some(v) => Some(v),
            None => self.file.get(key).map(|raw| parse_value(key, raw)).transpose()?,
        };
        self.record
            .borrow_mut()
            .insert(key.to_string(), serde_json::to_value(&v).expect("setting serializes"));
        Ok(v)
    }

    fn get<T>(&self, key: &str, flag: Option<T>, default: T) -> Result<T>
    where
        T: FromStr + Serialize,
        T::Err: Display,
    {
        let v = match flag {
            Some(v) => v,
            None => match self.file.get(key) {
                Some(raw) => parse_value(key, raw)?,
                None => default,
            },
        };
        self.record
            .borrow_mut()
            .insert(key.to_string(), serde_json::to_value(&v).expect("setting serializes"));
        Ok(v)
    }

    fn flag(&self, key: &str, flag: bool) -> Result<bool> {
        self.get(key, if flag { Some(true) } else { None }, false)
    }

    fn seed(&self, flag: Option<u64>) -> Result<u64> {
        let v = match (flag, &self.env_seed) {
            (Some(v), _) => v,
            (None, Some(raw)) => parse_value(SEED_ENV, raw)?,
            (None, None) => match self.file.get("seed") {
                Some(raw) => parse_value("seed", raw)?,
                None => DEFAULT_SEED,
            },
        };
        self.record.borrow_mut().insert("seed".into(), Value::from(v));
        Ok(v)
    }

    fn manifest(&self, command: &str) -> String {
        let value = serde_json::json!({
            "schema": MANIFEST_SCHEMA,
            "tool": "relplan",
            "version": env!("CARGO_PKG_VERSION"),
            "command": command,
            "config": Value::Object(self.record.borrow().clone()),
        });
        serde_json::to_string_pretty(&value).expect("manifest serializes") + "\n"
    }
}

/// Reads `key = value` lines (`#` starts a comment), or the `config`
/// object of a manifest when the file is JSON.
fn read_config(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if text.trim_start().starts_with('{') {
        let v: Value = serde_json::from_str(&text)
            .map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())))?;
        let obj = v.get("config").unwrap_or(&v);
        let obj = obj
            .as_object()
            .ok_or_else(|| Error::InvalidArgument(format!("{}: expected a JSON object", path.display())))?;
        let mut out = BTreeMap::new();
        for (k, v) in obj {
            let s = match v {
                Value::Null => continue,
                Value::String(s) => s.clone(),
                other => other.to_string(),
            };
            out.insert(norm_key(k), s);
        }
        return Ok(out);
    }
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::MalformedRecord {
            line: i + 1,
            reason: format!("expected key = value in {}", path.display()),
        })?;
        out.insert(norm_key(k), v.trim().to_string());
    }
    Ok(out)
}

fn parse_kinds(raw: &str) -> Result<Vec<PredicateKind>> {
    let mut kinds: Vec<PredicateKind> = raw
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(str::parse)
        .collect::<Result<_>>()?;
    kinds.sort();
    kinds.dedup();
    if kinds.is_empty() {
        return Err(Error::InvalidArgument("no predicate kinds given".into()));
    }
    Ok(kinds)
}

fn parse_sweep(raw: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = raw.split(':').collect();
    if parts.len() != 3 {
        return Err(Error::InvalidArgument(format!("beta sweep `{raw}` is not lo:hi:steps")));
    }
    beta_grid(
        parse_value("beta_sweep", parts[0])?,
        parse_value("beta_sweep", parts[1])?,
        parse_value("beta_sweep", parts[2])?,
    )
}

fn parse_eta(raw: &str) -> Result<BTreeMap<PredicateKind, f64>> {
    let mut out = BTreeMap::new();
    for part in raw.split(',').filter(|s| !s.trim().is_empty()) {
        let (k, v) = part
            .split_once('=')
            .ok_or_else(|| Error::InvalidArgument(format!("eta entry `{part}` is not kind=value")))?;
        out.insert(k.parse()?, parse_value("eta", v)?);
    }
    Ok(out)
}

fn out_dir(raw: &str) -> Result<PathBuf> {
    let p = PathBuf::from(raw);
    std::fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    Ok(p)
}

fn write(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn load_datasets(raw: &str) -> Result<Dataset> {
    let mut all = Dataset::default();
    for p in raw.split(',').filter(|s| !s.trim().is_empty()) {
        all.samples.extend(read_dataset(Path::new(p.trim()))?.samples);
    }
    if all.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(all)
}

/// Parses arguments, runs the command and returns the process exit code:
/// 0 on success, 2 on usage errors, 1 on any other failure.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::InvalidArgument(_) | Error::InvalidGoal(_) | Error::MalformedRecord { .. } => 2,
                _ => 1,
            }
        }
    }
}

pub fn execute(cli: Cli) -> Result<()> {
    if cli.threads == Some(0) {
        return Err(Error::InvalidArgument("--threads must be at least 1".into()));
    }
    init_threads(cli.threads);
    let exec = if cli.sequential { Exec::Sequential } else { Exec::Parallel };
    let settings = Settings::load(cli.config.as_deref())?;
    match cli.command {
        Command::Gen(a) => cmd_gen(a, &settings, exec),
        Command::Train(a) => cmd_train(a, &settings, exec),
        Command::Eval(a) => cmd_eval(a, &settings, exec),
        Command::Plan(a) => cmd_plan(a, &settings),
        Command::Bench(a) => cmd_bench(a, &settings, exec),
    }
}

fn cmd_gen(a: GenArgs, s: &Settings, exec: Exec) -> Result<()> {
    let kinds = parse_kinds(&s.get("predicate", a.predicate, "on-left".to_string())?)?;
    let scenes: usize = s.get("scenes", a.scenes, 100)?;
    if scenes == 0 {
        return Err(Error::InvalidArgument("--scenes must be at least 1".into()));
    }
    let seed = s.seed(a.seed)?;
    let mut config = GenConfig::new(scenes, kinds, seed);
    config.object_range = (s.get("min_objects", a.min_objects, 3)?, s.get("max_objects", a.max_objects, 10)?);
    config.k_max = s.get("k_max", a.k_max, DEFAULT_K_MAX)?;
    let out = out_dir(&s.get("out", a.out, DEFAULT_OUT.to_string())?)?;
    let path = out.join(DATASET_FILE);
    let stats = generate_dataset(&config, &path, exec)?;
    write(&out.join(MANIFEST), &s.manifest("gen"))?;
    print!("{}", stats.table());
    println!("wrote {}", path.display());
    Ok(())
}

fn metrics_header() -> String {
    format!(
        "#schema={METRICS_SCHEMA}\nepoch,predicate,train_loss,train_samples,updates,heldout_n,true_rel,true_irrel,false_irrel,total\n"
    )
}

fn metrics_line(m: &EpochMetrics) -> String {
    let h = |f: fn(&EvalMetrics) -> f64| m.heldout.as_ref().map(|e| format!("{:.6}", f(e))).unwrap_or_default();
    format!(
        "{},{},{:.6},{},{},{},{},{},{},{}\n",
        m.epoch,
        m.predicate,
        m.train_loss,
        m.train_samples,
        m.updates,
        m.heldout.as_ref().map(|e| e.n.to_string()).unwrap_or_default(),
        h(|e| e.true_relevant_rate),
        h(|e| e.true_irrelevant_rate),
        h(|e| e.false_irrelevant_rate),
        h(|e| e.total_accuracy),
    )
}

/// Existing metric rows for epochs up to `upto`, so a resumed run appends
/// without gaps or duplicates.
fn kept_metrics(path: &Path, upto: usize) -> Result<String> {
    let mut out = metrics_header();
    if !path.exists() {
        return Ok(out);
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    for line in text.lines().skip(2) {
        let epoch: usize = line
            .split(',')
            .next()
            .and_then(|e| e.parse().ok())
            .ok_or_else(|| Error::MalformedRecord {
                line: 0,
                reason: format!("bad metrics row `{line}`"),
            })?;
        if epoch <= upto {
            out.push_str(line);
            out.push('\n');
        }
    }
    Ok(out)
}

fn cmd_train(a: TrainArgs, s: &Settings, exec: Exec) -> Result<()> {
    let data = s
        .opt("data", a.data)?
        .ok_or_else(|| Error::InvalidArgument("train needs --data".into()))?;
    let seed = s.seed(a.seed)?;
    let d_model = s.get("d_model", a.d_model, ModelDims::default().d_model)?;
    let config = TrainConfig {
        learning_rate: s.get("lr", a.lr, 1e-5)?,
        batch_size: s.get("batch", a.batch, 50)?,
        eta: parse_eta(&s.get("eta", a.eta, String::new())?)?,
        beta: s.get("beta", a.beta, crate::net::DEFAULT_BETA)?,
        epochs: s.get("epochs", a.epochs, 20)?,
        seed,
        dims: ModelDims::with_width(d_model),
    };
    config.validate()?;
    let holdout: f64 = s.get("holdout", a.holdout, 0.2)?;
    if !(0.0..1.0).contains(&holdout) {
        return Err(Error::InvalidArgument("--holdout must be in [0, 1)".into()));
    }
    let resume = s.opt("resume", a.resume)?;
    let out = out_dir(&s.get("out", a.out, DEFAULT_OUT.to_string())?)?;

    let all = load_datasets(&data)?;
    let mut train = BTreeMap::new();
    let mut held = BTreeMap::new();
    for (k, d) in all.by_kind() {
        let (tr, te) = split_holdout(&d, holdout);
        if tr.is_empty() {
            return Err(Error::InvalidArgument(format!("no training scenes left for {k}")));
        }
        train.insert(k, tr);
        held.insert(k, te);
    }
    let state = match &resume {
        Some(p) => {
            let (st, _) = checkpoint::load(Path::new(p))?;
            if st.params.dims != config.dims {
                return Err(Error::InvalidArgument(format!(
                    "checkpoint dims {:?} differ from requested {:?}",
                    st.params.dims, config.dims
                )));
            }
            Some(st)
        }
        None => None,
    };
    let start_epoch = state.as_ref().map_or(0, |s| s.epochs_completed);
    let metrics_path = out.join(METRICS_FILE);
    let mut metrics = if resume.is_some() {
        kept_metrics(&metrics_path, start_epoch)?
    } else {
        metrics_header()
    };
    write(&out.join(MANIFEST), &s.manifest("train"))?;
    let ckpt_path = out.join(CHECKPOINT_FILE);
    let save_epoch = |st: &TrainState, ms: &[EpochMetrics]| -> Result<()> {
        for m in ms {
            metrics.push_str(&metrics_line(m));
            let acc = m
                .heldout
                .as_ref()
                .map(|e| format!(" heldout acc {:.4}", e.total_accuracy))
                .unwrap_or_default();
            println!("epoch {:>3} {:<9} loss {:.5}{acc}", m.epoch, m.predicate.name(), m.train_loss);
        }
        checkpoint::save(&ckpt_path, st, true)?;
        write(&metrics_path, &metrics)
    };
    let (final_state, _) = train_batch_polling(&train, &held, &config, state, exec, save_epoch)?;
    if final_state.epochs_completed == start_epoch {
        // nothing left to train; still leave a loadable checkpoint behind
        checkpoint::save(&ckpt_path, &final_state, true)?;
    }
    println!("wrote {}", ckpt_path.display());
    Ok(())
}

fn load_model(path: &str) -> Result<ModelParams> {
    Ok(checkpoint::load(Path::new(path))?.0.params)
}

fn cmd_eval(a: EvalArgs, s: &Settings, exec: Exec) -> Result<()> {
    let oracle = s.flag("oracle", a.oracle)?;
    let model = s.opt("model", a.model)?;
    let data = s
        .opt("data", a.data)?
        .ok_or_else(|| Error::InvalidArgument("eval needs --data".into()))?;
    let beta: f64 = s.get("beta", a.beta, crate::net::DEFAULT_BETA)?;
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::InvalidArgument("--beta must be in [0, 1]".into()));
    }
    let sweep = s.opt("beta_sweep", a.beta_sweep)?.map(|r| parse_sweep(&r)).transpose()?;
    let out = out_dir(&s.get("out", a.out, DEFAULT_OUT.to_string())?)?;
    let dataset = load_datasets(&data)?;

    let params = match (&model, oracle) {
        (Some(_), true) => return Err(Error::InvalidArgument("--model and --oracle are exclusive".into())),
        (None, false) => return Err(Error::InvalidArgument("eval needs --model or --oracle".into())),
        (Some(p), false) => {
            let m = load_model(p)?;
            for k in dataset.kinds() {
                m.head(k)?;
            }
            Some(m)
        }
        (None, true) => None,
    };
    let predictor: &dyn SamplePredictor = match &params {
        Some(m) => m,
        None => &LabelPredictor,
    };
    let probs = score(predictor, &dataset, exec)?;
    let labels: Vec<u8> = dataset.samples.iter().map(|x| x.label).collect();
    let overall = confusion(&probs, &labels, beta)?;
    let mut per_predicate = serde_json::Map::new();
    for kind in dataset.kinds() {
        let (p, l): (Vec<f64>, Vec<u8>) = dataset
            .samples
            .iter()
            .zip(&probs)
            .filter(|(x, _)| x.predicate == kind)
            .map(|(x, &p)| (p, x.label))
            .unzip();
        let m = confusion(&p, &l, beta)?;
        println!(
            "{:<9} true_rel {:.4} true_irrel {:.4} total {:.4} (n={})",
            kind.name(),
            m.true_relevant_rate,
            m.true_irrelevant_rate,
            m.total_accuracy,
            m.n
        );
        per_predicate.insert(kind.name().into(), serde_json::to_value(m).expect("metrics serialize"));
    }
    println!(
        "{:<9} true_rel {:.4} true_irrel {:.4} total {:.4} (n={})",
        "all", overall.true_relevant_rate, overall.true_irrelevant_rate, overall.total_accuracy, overall.n
    );
    let report = serde_json::json!({
        "schema": EVAL_SCHEMA,
        "beta": beta,
        "overall": overall,
        "per_predicate": per_predicate,
    });
    write(&out.join("eval.json"), &(serde_json::to_string_pretty(&report).expect("report") + "\n"))?;
    if let Some(betas) = sweep {
        let mut csv = format!("#schema={EVAL_SWEEP_SCHEMA}\nbeta,true_rel,true_irrel,total,false_irrel\n");
        for (b, m) in beta_sweep(&probs, &labels, &betas)? {
            csv.push_str(&format!(
                "{b:.4},{:.6},{:.6},{:.6},{:.6}\n",
                m.true_relevant_rate, m.true_irrelevant_rate, m.total_accuracy, m.false_irrelevant_rate
            ));
        }
        write(&out.join("sweep.csv"), &csv)?;
    }
    write(&out.join(MANIFEST), &s.manifest("eval"))?;
    Ok(())
}

fn parse_modes(raw: &str, beta: f64) -> Result<Vec<HeuristicMode>> {
    let mut modes = Vec::new();
    for m in raw.split(',').filter(|m| !m.trim().is_empty()) {
        let variant: HeuristicVariant = m.parse()?;
        let mode = if variant == HeuristicVariant::Baseline {
            HeuristicMode::baseline()
        } else {
            HeuristicMode::new(variant, beta)?
        };
        if !modes.contains(&mode) {
            modes.push(mode);
        }
    }
    if modes.is_empty() {
        return Err(Error::InvalidArgument("no planner modes given".into()));
    }
    Ok(modes)
}

fn cmd_plan(a: PlanArgs, s: &Settings) -> Result<()> {
    let k_max = s.get("k_max", a.k_max, DEFAULT_K_MAX)?;
    let beta: f64 = s.get("beta", a.beta, crate::net::DEFAULT_BETA)?;
    let mode_raw: String = s.get("mode", a.mode, "baseline".to_string())?;
    let mode = parse_modes(&mode_raw, beta)?[0];
    let oracle = s.flag("oracle", a.oracle)?;
    let model = s.opt("model", a.model)?;
    let scene_file = s.opt("scene", a.scene)?;
    let predicate = s.opt::<String>("predicate", a.predicate)?;
    let subject = s.opt("subject", a.subject)?;
    let reference = s.opt("reference", a.reference)?;
    let out = out_dir(&s.get("out", a.out, DEFAULT_OUT.to_string())?)?;
    let solver = SolverConfig::default();

    let (scene, goal, known_relevant) = match scene_file {
        Some(p) => {
            let path = PathBuf::from(&p);
            let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            let scene = Scene::from_json(&text)?;
            let (Some(kind), Some(subject), Some(reference)) = (predicate, subject, reference) else {
                return Err(Error::InvalidArgument(
                    "a scene file needs --predicate, --subject and --reference".into(),
                ));
            };
            let goal = GoalPredicate::new(kind.parse()?, subject, reference);
            goal.validate(&scene)?;
            (scene, goal, None)
        }
        None => {
            let kind: PredicateKind = predicate.as_deref().unwrap_or("on-left").parse()?;
            let objects = s.get("objects", a.objects, 6)?;
            let seed = s.seed(a.seed)?;
            let index = s.get("index", a.index, 0)?;
            let mut config = GenConfig::new(1, vec![kind], seed);
            config.object_range = (objects, objects);
            config.k_max = k_max;
            let (record, _) = labeler::generate_scene(&config, kind, index)?;
            (record.scene, record.goal, Some(record.manipulated))
        }
    };
    let oracle_labels;
    let params;
    let predictor: Option<&dyn RelevancePredictor> = match (model, oracle) {
        (Some(_), true) => return Err(Error::InvalidArgument("--model and --oracle are exclusive".into())),
        (Some(p), false) => {
            params = load_model(&p)?;
            Some(&params)
        }
        (None, true) => {
            let relevant = match known_relevant {
                Some(r) => r,
                None => labeler::label_scene(&scene, &goal, k_max, &solver)?,
            };
            oracle_labels = OracleLabels {
                relevant: relevant.unwrap_or_default(),
            };
            Some(&oracle_labels)
        }
        (None, false) => None,
    };
    let metrics = plan(&scene, &goal, mode, predictor, k_max, &solver)?;
    println!(
        "{} {}({}, {}): solved={} checks={} skeleton={}",
        mode.variant,
        goal.kind,
        goal.subject,
        goal.reference,
        metrics.solved,
        metrics.feasibility_checks,
        metrics.solution.as_ref().map_or("-", |x| x.skeleton.as_str())
    );
    let report = serde_json::json!({
        "schema": PLAN_SCHEMA,
        "mode": mode.variant.name(),
        "beta": mode.beta,
        "goal": goal,
        "scene": scene,
        "metrics": metrics,
    });
    write(&out.join("plan.json"), &(serde_json::to_string_pretty(&report).expect("plan") + "\n"))?;
    write(&out.join(MANIFEST), &s.manifest("plan"))?;
    Ok(())
}

/// Model probabilities computed once per case and replayed for every mode.
struct CachedScores {
    by_case: HashMap<(u64, ObjectId, ObjectId, PredicateKind), BTreeMap<ObjectId, f64>>,
}

impl CachedScores {
    fn build(model: &ModelParams, cases: &[BenchCase], exec: Exec) -> Result<Self> {
        let scored = exec.map(cases, |c| model.probabilities(&c.scene, &c.goal));
        let mut by_case = HashMap::new();
        for (c, p) in cases.iter().zip(scored) {
            by_case.insert(Self::key(&c.scene, &c.goal), p?);
        }
        Ok(CachedScores { by_case })
    }

    fn key(scene: &Scene, g: &GoalPredicate) -> (u64, ObjectId, ObjectId, PredicateKind) {
        (scene.rng_seed, g.subject, g.reference, g.kind)
    }
}

impl RelevancePredictor for CachedScores {
    fn probabilities(&self, scene: &Scene, g: &GoalPredicate) -> Result<BTreeMap<ObjectId, f64>> {
        self.by_case
            .get(&Self::key(scene, g))
            .cloned()
            .ok_or_else(|| Error::InvalidArgument("scene was not scored".into()))
    }
}

/// Benchmark cases: the first `n` solvable scenes of the generation
/// protocol, with predicate kinds cycled.
pub fn bench_cases(config: &GenConfig, n: usize, exec: Exec) -> Result<Vec<BenchCase>> {
    Ok(solvable_records(config, n, exec)?
        .into_iter()
        .map(|r| BenchCase {
            scene_id: r.scene_id,
            scene: r.scene,
            goal: r.goal,
            relevant: r.manipulated,
        })
        .collect())
}

fn cmd_bench(a: BenchArgs, s: &Settings, exec: Exec) -> Result<()> {
    let beta: f64 = s.get("beta", a.beta, crate::net::DEFAULT_BETA)?;
    let modes_raw: String = s.get("modes", a.modes, "baseline,admissible".to_string())?;
    let mut modes = parse_modes(&modes_raw, beta)?;
    let sweep = s.opt("beta_sweep", a.beta_sweep)?.map(|r| parse_sweep(&r)).transpose()?;
    if let Some(betas) = &sweep {
        // one guided mode per (variant, β); baseline stays single
        let variants: Vec<HeuristicVariant> = modes
            .iter()
            .map(|m| m.variant)
            .filter(|v| *v != HeuristicVariant::Baseline)
            .collect();
        if variants.is_empty() {
            return Err(Error::InvalidArgument("a beta sweep needs a guided mode".into()));
        }
        modes = vec![HeuristicMode::baseline()];
        for v in variants {
            for &b in betas {
                modes.push(HeuristicMode::new(v, b)?);
            }
        }
    }
    let oracle = s.flag("oracle", a.oracle)?;
    let model = s.opt("model", a.model)?;
    let scenes: usize = s.get("scenes", a.scenes, 200)?;
    if scenes == 0 {
        return Err(Error::InvalidArgument("--scenes must be at least 1".into()));
    }
    let objects = s.opt("objects", a.objects)?;
    let min_objects = s.get("min_objects", a.min_objects, objects.unwrap_or(3))?;
    let max_objects = s.get("max_objects", a.max_objects, objects.unwrap_or(10))?;
    let params = model.as_deref().map(load_model).transpose()?;
    // a model can only score the kinds it has heads for
    let default_kinds = match &params {
        Some(m) => m.kinds().iter().map(|k| k.name()).collect::<Vec<_>>().join(","),
        None => "on-left,on-right,in-front,behind".to_string(),
    };
    let kinds = parse_kinds(&s.get("predicate", a.predicate, default_kinds)?)?;
    let seed = s.seed(a.seed)?;
    let k_max = s.get("k_max", a.k_max, DEFAULT_K_MAX)?;
    let out = out_dir(&s.get("out", a.out, DEFAULT_OUT.to_string())?)?;
    let guided = modes.iter().any(|m| m.variant != HeuristicVariant::Baseline);
    if guided && !oracle && model.is_none() {
        return Err(Error::InvalidArgument("guided modes need --oracle or --model".into()));
    }
    if oracle && model.is_some() {
        return Err(Error::InvalidArgument("--model and --oracle are exclusive".into()));
    }

    let mut config = GenConfig::new(scenes, kinds, seed);
    config.object_range = (min_objects, max_objects);
    config.k_max = k_max;
    let solver = config.solver;
    let cases = bench_cases(&config, scenes, exec)?;
    let cached = params.as_ref().map(|m| CachedScores::build(m, &cases, exec)).transpose()?;
    let source = match (&cached, oracle) {
        (Some(c), _) => PredictorSource::Model(c),
        (None, true) => PredictorSource::Oracle,
        (None, false) => PredictorSource::None,
    };
    let cmp = compare(&cases, &modes, &source, k_max, &solver, exec)?;
    for m in &cmp.summary {
        let speed = m
            .speedup_checks
            .map(|v| format!(" speed-up {:.1}%", 100.0 * v))
            .unwrap_or_default();
        println!(
            "{:<15} beta {:.3} checks {:.3} ± {:.3} solved {:.3}{speed}",
            m.mode.name(),
            m.beta,
            m.mean_checks,
            m.ci67_checks,
            m.solve_rate
        );
    }
    write(&out.join("scenes.csv"), &cmp.to_csv(true))?;
    write(&out.join("summary.json"), &(cmp.summary_json() + "\n"))?;
    if sweep.is_some() {
        write(&out.join("sweep.csv"), &cmp.sweep_csv())?;
    }
    write(&out.join(MANIFEST), &s.manifest("bench"))?;
    Ok(())
}
