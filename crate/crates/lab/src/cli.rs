//! Command-line interface: argument definitions and command execution.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use crst_core::evalkit::{add_confusion, concurrency_stats, confusion_matrix, evaluate, CollarRule, DEFAULT_COLLAR};
use crst_core::model::{Network, ModelParams};
use crst_core::postproc::{
    best_point, classwise_postproc, fallback_report, fit_classwise_params, global_postproc, sweep_classwise, ClasswisePostprocParams,
    EventInterval, SweepPoint,
};
use crst_core::seqdata::{generate_dataset, Dataset};
use crst_core::trainer::{predict, train, Variant};
use crst_core::{FeatureGrid, PosteriorGrid};
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::config::{Config, PostprocMode};
use crate::csvio::{self, ClipEvents};
use crate::dataset::{self, read_dataset, reference_file, write_dataset};
use crate::error::{LabError, Result};
use crate::manifest::{differing_outputs, RunManifest, MANIFEST_FILE};
use crate::report::{comparison_table, plot_rows};

/// Environment variable naming the default dataset directory.
pub const DATA_ROOT_ENV: &str = "CRST_DATA_ROOT";

#[derive(Debug, Clone, Parser)]
#[command(name = "crst", version, about = "Synthetic sound event detection lab: data, training, post-processing and scoring")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Synthesize a dataset and write it to disk.
    GenData(GenDataArgs),
    /// Train one variant and keep the best validation checkpoint.
    Train(TrainArgs),
    /// Turn a checkpoint's posteriors into event intervals.
    Postproc(PostprocArgs),
    /// Score detected intervals against references.
    Eval(EvalArgs),
    /// Tabulate macro F across repeated runs of several variants.
    Compare(CompareArgs),
    /// Repeat a command from its run manifest and check the outputs match.
    Rerun(RerunArgs),
}

#[derive(Debug, Clone, Args)]
pub struct GenDataArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides `data.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, env = DATA_ROOT_ENV)]
    pub data: PathBuf,
    /// Overrides `train.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub variant: Option<Variant>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct PostprocArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, env = DATA_ROOT_ENV)]
    pub data: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub mode: Option<PostprocMode>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    /// Split the parameters are applied to.
    #[arg(long, default_value = "validation")]
    pub split: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    /// Interval CSV to score.
    #[arg(long)]
    pub detections: PathBuf,
    /// Reference interval CSV; defaults to the dataset's validation references.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    #[arg(long, env = DATA_ROOT_ENV)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_COLLAR)]
    pub collar: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct CompareArgs {
    /// `VARIANT=SCORES_CSV`, repeated once per run.
    #[arg(long = "run", required = true)]
    pub runs: Vec<String>,
    #[arg(long)]
    pub baseline: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct RerunArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

fn path_arg(flag: &str, p: &Path) -> [String; 2] {
    [format!("--{flag}"), p.display().to_string()]
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::GenData(_) => "gen-data",
            Command::Train(_) => "train",
            Command::Postproc(_) => "postproc",
            Command::Eval(_) => "eval",
            Command::Compare(_) => "compare",
            Command::Rerun(_) => "rerun",
        }
    }

    /// Arguments that parse back to this command, subcommand first.
    pub fn to_args(&self) -> Vec<String> {
        let mut a = vec![self.name().to_string()];
        let opt = |a: &mut Vec<String>, flag: &str, v: Option<String>| {
            if let Some(v) = v {
                a.extend([format!("--{flag}"), v]);
            }
        };
        match self {
            Command::GenData(g) => {
                opt(&mut a, "config", g.config.as_ref().map(|p| p.display().to_string()));
                opt(&mut a, "seed", g.seed.map(|s| s.to_string()));
                a.extend(path_arg("out", &g.out));
            }
            Command::Train(t) => {
                opt(&mut a, "config", t.config.as_ref().map(|p| p.display().to_string()));
                a.extend(path_arg("data", &t.data));
                opt(&mut a, "seed", t.seed.map(|s| s.to_string()));
                opt(&mut a, "variant", t.variant.map(|v| v.to_string()));
                a.extend(path_arg("out", &t.out));
            }
            Command::Postproc(p) => {
                opt(&mut a, "config", p.config.as_ref().map(|p| p.display().to_string()));
                a.extend(path_arg("data", &p.data));
                a.extend(path_arg("checkpoint", &p.checkpoint));
                opt(&mut a, "mode", p.mode.map(|m| m.as_str().to_string()));
                opt(&mut a, "alpha", p.alpha.map(|v| v.to_string()));
                opt(&mut a, "beta", p.beta.map(|v| v.to_string()));
                a.extend(["--split".to_string(), p.split.clone()]);
                a.extend(path_arg("out", &p.out));
            }
            Command::Eval(e) => {
                a.extend(path_arg("detections", &e.detections));
                opt(&mut a, "reference", e.reference.as_ref().map(|p| p.display().to_string()));
                opt(&mut a, "data", e.data.as_ref().map(|p| p.display().to_string()));
                opt(&mut a, "classes", e.classes.map(|c| c.to_string()));
                a.extend(["--collar".to_string(), e.collar.to_string()]);
                a.extend(path_arg("out", &e.out));
            }
            Command::Compare(c) => {
                for r in &c.runs {
                    a.extend(["--run".to_string(), r.clone()]);
                }
                opt(&mut a, "baseline", c.baseline.clone());
                a.extend(path_arg("out", &c.out));
            }
            Command::Rerun(r) => {
                a.extend(path_arg("manifest", &r.manifest));
                a.extend(path_arg("out", &r.out));
            }
        }
        a
    }

    /// Rewrites every path argument as an absolute path.
    pub fn absolutize(&mut self) -> Result<()> {
        fn abs(p: &mut PathBuf) -> Result<()> {
            *p = std::path::absolute(&*p).map_err(|e| LabError::io(p, e))?;
            Ok(())
        }
        fn abs_opt(p: &mut Option<PathBuf>) -> Result<()> {
            p.as_mut().map_or(Ok(()), abs)
        }
        match self {
            Command::GenData(a) => {
                abs_opt(&mut a.config)?;
                abs(&mut a.out)
            }
            Command::Train(a) => {
                abs_opt(&mut a.config)?;
                abs(&mut a.data)?;
                abs(&mut a.out)
            }
            Command::Postproc(a) => {
                abs_opt(&mut a.config)?;
                abs(&mut a.data)?;
                abs(&mut a.checkpoint)?;
                abs(&mut a.out)
            }
            Command::Eval(a) => {
                abs(&mut a.detections)?;
                abs_opt(&mut a.reference)?;
                abs_opt(&mut a.data)?;
                abs(&mut a.out)
            }
            Command::Compare(a) => {
                for r in &mut a.runs {
                    if let Some((v, p)) = r.split_once('=') {
                        let mut p = PathBuf::from(p);
                        abs(&mut p)?;
                        *r = format!("{v}={}", p.display());
                    }
                }
                abs(&mut a.out)
            }
            Command::Rerun(a) => {
                abs(&mut a.manifest)?;
                abs(&mut a.out)
            }
        }
    }

    fn set_out(&mut self, out: PathBuf) {
        match self {
            Command::GenData(a) => a.out = out,
            Command::Train(a) => a.out = out,
            Command::Postproc(a) => a.out = out,
            Command::Eval(a) => a.out = out,
            Command::Compare(a) => a.out = out,
            Command::Rerun(a) => a.out = out,
        }
    }

    fn set_config(&mut self, config: PathBuf) {
        match self {
            Command::GenData(a) => a.config = Some(config),
            Command::Train(a) => a.config = Some(config),
            Command::Postproc(a) => a.config = Some(config),
            _ => {}
        }
    }

    fn set_data(&mut self, data: PathBuf) {
        match self {
            Command::Train(a) => a.data = data,
            Command::Postproc(a) => a.data = data,
            Command::Eval(a) => a.data = Some(data),
            _ => {}
        }
    }
}

impl PostprocMode {
    pub fn as_str(self) -> &'static str {
        match self {
            PostprocMode::Global => "global",
            PostprocMode::Classwise => "classwise",
            PostprocMode::Sweep => "sweep",
        }
    }
}

fn create_out(out: &Path) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| LabError::io(out, e))
}

fn load_config(path: Option<&Path>) -> Result<Config> {
    match path {
        Some(p) => Config::load(p),
        None => Ok(Config::default()),
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| LabError::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let bytes = serde_json::to_vec_pretty(value).expect("value serializes");
    fs::write(path, bytes).map_err(|e| LabError::io(path, e))
}

const CONFIG_SNAPSHOT: &str = "config.toml";

/// Runs a command; returns the manifest it wrote.
pub fn run(command: &Command) -> Result<RunManifest> {
    let mut command = command.clone();
    command.absolutize()?;
    let command = &command;
    match command {
        Command::GenData(a) => gen_data(a, command),
        Command::Train(a) => train_cmd(a, command),
        Command::Postproc(a) => postproc_cmd(a, command),
        Command::Eval(a) => eval_cmd(a, command),
        Command::Compare(a) => compare_cmd(a, command),
        Command::Rerun(a) => rerun_cmd(a),
    }
}

fn manifest_with_config(command: &Command, out: &Path, cfg: &Config) -> Result<RunManifest> {
    let mut m = RunManifest::new(command.name(), command.to_args(), out);
    let text = cfg.to_toml();
    write_text(&out.join(CONFIG_SNAPSHOT), &text)?;
    m.config_hash = Some(cfg.hash());
    m.config = Some(text);
    Ok(m)
}

fn gen_data(a: &GenDataArgs, command: &Command) -> Result<RunManifest> {
    let mut cfg = load_config(a.config.as_deref())?;
    if let Some(s) = a.seed {
        cfg.data.seed = s;
    }
    let ds = generate_dataset(&cfg.data).map_err(|e| LabError::Config(format!("[data] {e}")))?;
    create_out(&a.out)?;
    let hash = write_dataset(&ds, &a.out)?;
    let mut m = manifest_with_config(command, &a.out, &cfg)?;
    m.seed = Some(cfg.data.seed);
    m.data_root = Some(a.out.clone());
    m.dataset_hash = Some(hash);
    m.add_outputs([dataset::MANIFEST, "reference_strong.csv", "reference_validation.csv", CONFIG_SNAPSHOT])?;
    m.write()?;
    Ok(m)
}

fn dims(ds: &Dataset) -> Result<(usize, usize)> {
    let channels = ds
        .strong
        .first()
        .map(|c| c.features.channels())
        .or_else(|| ds.weak.first().map(|c| c.features.channels()))
        .or_else(|| ds.unlabeled.first().map(|c| c.features.channels()))
        .ok_or_else(|| LabError::Data("dataset has no training clips".into()))?;
    let classes = ds.n_classes().ok_or_else(|| LabError::Data("dataset has no labeled clips".into()))?;
    Ok((channels, classes))
}

pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const LAST_CHECKPOINT: &str = "last.ckpt";
pub const HISTORY: &str = "history.jsonl";
pub const EPOCHS: &str = "epochs.jsonl";
pub const PLOT: &str = "plot.csv";

fn train_cmd(a: &TrainArgs, command: &Command) -> Result<RunManifest> {
    let mut cfg = load_config(a.config.as_deref())?;
    if let Some(s) = a.seed {
        cfg.train.seed = s;
    }
    if let Some(v) = a.variant {
        cfg.train.variant = v;
    }
    let ds = read_dataset(&a.data)?;
    let (channels, classes) = dims(&ds)?;
    let tcfg = cfg.train_config(channels, classes)?;
    tcfg.check_dataset(&ds).map_err(|e| LabError::Config(e.to_string()))?;
    let outcome = train(&ds, &tcfg)?;

    create_out(&a.out)?;
    let mut m = manifest_with_config(command, &a.out, &cfg)?;
    m.seed = Some(tcfg.seed);
    m.data_root = Some(a.data.clone());
    m.dataset_hash = Some(dataset::dataset_hash(&a.data)?);
    let hash = cfg.hash();
    checkpoint::save(&a.out.join(BEST_CHECKPOINT), &outcome.best, &tcfg.model, &hash)?;
    checkpoint::save(&a.out.join(LAST_CHECKPOINT), &outcome.last, &tcfg.model, &hash)?;
    write_jsonl(&a.out.join(HISTORY), &outcome.history.steps)?;
    write_jsonl(&a.out.join(EPOCHS), &outcome.history.epochs)?;
    csvio::write_plot(&a.out.join(PLOT), &plot_rows(&outcome.history))?;
    m.add_outputs([BEST_CHECKPOINT, LAST_CHECKPOINT, HISTORY, EPOCHS, PLOT, CONFIG_SNAPSHOT])?;
    m.write()?;
    Ok(m)
}

fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut buf = Vec::new();
    for r in records {
        serde_json::to_writer(&mut buf, r).expect("record serializes");
        buf.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| LabError::io(path, e))?;
    f.write_all(&buf).map_err(|e| LabError::io(path, e))
}

/// Fitted post-processing parameters as written to `params.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PostprocReport {
    pub mode: PostprocMode,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    /// Frame rate of the posteriors.
    pub fps: f64,
    pub params: ClasswisePostprocParams,
    pub fallbacks: Vec<String>,
    /// Sweep mode: best grid point and the global baseline on the same clips.
    pub best: Option<SweepPoint>,
    pub global_macro_f: Option<f64>,
}

pub const PARAMS: &str = "params.json";
pub const INTERVALS: &str = "intervals.csv";
pub const SWEEP: &str = "sweep.csv";

fn posteriors(net: &Network, params: &ModelParams, clips: impl Iterator<Item = (String, FeatureGrid)>) -> Result<Vec<(String, PosteriorGrid)>> {
    clips.map(|(id, x)| Ok((id, predict(net, params, &x)?))).collect()
}

fn postproc_cmd(a: &PostprocArgs, command: &Command) -> Result<RunManifest> {
    let mut cfg = load_config(a.config.as_deref())?;
    if let Some(mode) = a.mode {
        cfg.postproc.mode = mode;
    }
    if let Some(alpha) = a.alpha {
        cfg.postproc.alpha = alpha;
    }
    if let Some(beta) = a.beta {
        cfg.postproc.beta = beta;
    }
    let pp = cfg.postproc.clone();
    let ck = checkpoint::load(&a.checkpoint, None)?;
    let net = Network::new(&ck.header.model)?;
    let params = ck.state.eval_params();
    let ds = read_dataset(&a.data)?;
    let n = ck.header.model.n_classes;
    let pool = ck.header.model.time_pool() as f64;

    let target: Vec<(String, FeatureGrid, Option<Vec<EventInterval>>)> = match a.split.as_str() {
        "validation" | "strong" => {
            let clips = if a.split == "strong" { &ds.strong } else { &ds.validation };
            let refs = dataset::reference_events(clips);
            clips.iter().map(|c| (c.id.clone(), c.features.clone(), refs.get(&c.id).cloned())).collect()
        }
        "weak" => ds.weak.iter().map(|c| (c.id.clone(), c.features.clone(), None)).collect(),
        "unlabeled" => ds.unlabeled.iter().map(|c| (c.id.clone(), c.features.clone(), None)).collect(),
        other => return Err(LabError::Config(format!("unknown split '{other}'"))),
    };
    let fps = target
        .first()
        .map(|(_, x, _)| x.fps)
        .or_else(|| ds.weak.first().map(|c| c.features.fps))
        .ok_or_else(|| LabError::Data(format!("split '{}' is empty", a.split)))?
        / pool;
    let target_post = posteriors(&net, params, target.iter().map(|(id, x, _)| (id.clone(), x.clone())))?;

    let needs_weak = pp.mode != PostprocMode::Global;
    if needs_weak && ds.weak.is_empty() {
        return Err(LabError::Data("classwise post-processing needs a weak split".into()));
    }
    let weak_post = if needs_weak {
        posteriors(&net, params, ds.weak.iter().map(|c| (c.id.clone(), c.features.clone())))?
    } else {
        Vec::new()
    };
    let weak_pairs: Vec<(&PosteriorGrid, &crst_core::WeakLabel)> =
        weak_post.iter().zip(&ds.weak).map(|((_, p), c)| (p, &c.label)).collect();

    let mut report = PostprocReport {
        mode: pp.mode,
        alpha: None,
        beta: None,
        fps,
        params: ClasswisePostprocParams::global(n, fps),
        fallbacks: Vec::new(),
        best: None,
        global_macro_f: None,
    };
    create_out(&a.out)?;
    let mut outputs = vec![PARAMS, INTERVALS, CONFIG_SNAPSHOT];
    match pp.mode {
        PostprocMode::Global => {}
        PostprocMode::Classwise => {
            report.params = fit_classwise_params(&weak_pairs, n, pp.alpha, pp.beta, fps)?;
            report.alpha = Some(pp.alpha);
            report.beta = Some(pp.beta);
        }
        PostprocMode::Sweep => {
            let refs: Vec<&Vec<EventInterval>> = target
                .iter()
                .map(|(_, _, r)| r.as_ref().ok_or_else(|| LabError::Config(format!("sweep needs references; split '{}' has none", a.split))))
                .collect::<Result<_>>()?;
            let eval: Vec<(&PosteriorGrid, &[EventInterval])> =
                target_post.iter().zip(&refs).map(|((_, p), r)| (p, r.as_slice())).collect();
            let points = sweep_classwise(&weak_pairs, &eval, n, fps, pp.collar)?;
            csvio::write_sweep(&a.out.join(SWEEP), &points)?;
            outputs.push(SWEEP);
            let best = best_point(&points).ok_or_else(|| LabError::Data("empty sweep".into()))?;
            report.params = fit_classwise_params(&weak_pairs, n, best.alpha, best.beta, fps)?;
            report.alpha = Some(best.alpha);
            report.beta = Some(best.beta);
            report.best = Some(best);
            report.global_macro_f = Some(crst_core::postproc::global_macro_f(&eval, n, fps, pp.collar)?);
        }
    }
    report.fallbacks = fallback_report(&report.params);
    for f in &report.fallbacks {
        eprintln!("evt fallback: {f}");
    }
    let mut detections = ClipEvents::new();
    for (id, p) in &target_post {
        let d = match pp.mode {
            PostprocMode::Global => global_postproc(p, fps),
            _ => classwise_postproc(p, &report.params, fps)?,
        };
        detections.insert(id.clone(), d);
    }
    write_json(&a.out.join(PARAMS), &report)?;
    csvio::write_intervals(&a.out.join(INTERVALS), &detections)?;

    let mut m = manifest_with_config(command, &a.out, &cfg)?;
    m.data_root = Some(a.data.clone());
    m.dataset_hash = Some(dataset::dataset_hash(&a.data)?);
    m.add_input(&a.checkpoint)?;
    m.add_outputs(outputs)?;
    m.write()?;
    Ok(m)
}

pub const SCORES: &str = "scores.csv";
pub const CONFUSION: &str = "confusion.csv";
pub const CONCURRENCY: &str = "concurrency.csv";

fn eval_cmd(a: &EvalArgs, command: &Command) -> Result<RunManifest> {
    let reference_path = match (&a.reference, &a.data) {
        (Some(r), _) => r.clone(),
        (None, Some(d)) => d.join(reference_file("validation")),
        (None, None) => return Err(LabError::Config(format!("give --reference or --data (or set {DATA_ROOT_ENV})"))),
    };
    let detections = csvio::read_intervals(&a.detections)?;
    let mut reference = csvio::read_intervals(&reference_path)?;
    let n = match (a.classes, &a.data) {
        (Some(c), _) => c,
        (None, Some(d)) if a.reference.is_none() => dataset::dataset_classes(d)?,
        _ => reference.values().chain(detections.values()).flatten().map(|e| e.class + 1).max().unwrap_or(0),
    };
    match (&a.data, &a.reference) {
        // Every validation clip is scored, including clips without events.
        (Some(d), None) => {
            let ids = dataset::split_ids(&dataset::read_manifest(d)?).remove("validation").unwrap_or_default();
            if let Some(id) = detections.keys().find(|id| !ids.contains(*id)) {
                return Err(LabError::Data(format!("{}: clip '{id}' is not a validation clip", a.detections.display())));
            }
            for id in ids {
                reference.entry(id).or_default();
            }
        }
        _ => {
            for id in detections.keys() {
                reference.entry(id.clone()).or_default();
            }
        }
    }
    let empty = Vec::new();
    let pairs: Vec<(&[EventInterval], &[EventInterval])> =
        reference.iter().map(|(id, r)| (detections.get(id).unwrap_or(&empty).as_slice(), r.as_slice())).collect();
    let report = evaluate(&pairs, n, a.collar, CollarRule::Symmetric)?;
    let mut confusion = vec![vec![0u64; n + 1]; n];
    for (d, r) in &pairs {
        add_confusion(&mut confusion, &confusion_matrix(d, r, n, a.collar, CollarRule::Symmetric)?);
    }
    let refs: Vec<&[EventInterval]> = reference.values().map(Vec::as_slice).collect();
    let concurrency = concurrency_stats(&refs, n)?;

    create_out(&a.out)?;
    csvio::write_scores(&a.out.join(SCORES), &report)?;
    csvio::write_confusion(&a.out.join(CONFUSION), &confusion)?;
    csvio::write_concurrency(&a.out.join(CONCURRENCY), &concurrency)?;
    let mut m = RunManifest::new(command.name(), command.to_args(), &a.out);
    m.add_input(&a.detections)?;
    m.add_input(&reference_path)?;
    if let Some(d) = &a.data {
        m.data_root = Some(d.clone());
    }
    m.add_outputs([SCORES, CONFUSION, CONCURRENCY])?;
    m.write()?;
    Ok(m)
}

pub const COMPARISON: &str = "comparison.csv";

fn compare_cmd(a: &CompareArgs, command: &Command) -> Result<RunManifest> {
    let mut groups: Vec<(String, Vec<f64>)> = Vec::new();
    let mut inputs = Vec::new();
    for spec in &a.runs {
        let (variant, path) =
            spec.split_once('=').ok_or_else(|| LabError::Config(format!("--run expects VARIANT=SCORES_CSV, got '{spec}'")))?;
        let path = PathBuf::from(path);
        let f = csvio::read_scores(&path)?.macro_f;
        match groups.iter_mut().find(|(n, _)| n == variant) {
            Some((_, v)) => v.push(f),
            None => groups.push((variant.to_string(), vec![f])),
        }
        inputs.push(path);
    }
    let rows = comparison_table(&groups, a.baseline.as_deref())?;
    create_out(&a.out)?;
    csvio::write_comparison(&a.out.join(COMPARISON), &rows)?;
    let mut m = RunManifest::new(command.name(), command.to_args(), &a.out);
    for p in &inputs {
        m.add_input(p)?;
    }
    m.add_outputs([COMPARISON])?;
    m.write()?;
    Ok(m)
}

/// Outcome of a rerun: the fresh manifest and the outputs whose bytes changed.
#[derive(Debug, Clone)]
pub struct RerunReport {
    pub original: RunManifest,
    pub fresh: RunManifest,
    pub differing: Vec<String>,
}

/// Repeats the command recorded in `manifest` with its output redirected to `out`.
pub fn rerun(manifest: &Path, out: &Path) -> Result<RerunReport> {
    let original = RunManifest::read(manifest)?;
    if let (Some(root), Some(h)) = (&original.data_root, &original.dataset_hash) {
        if original.command != "gen-data" && &dataset::dataset_hash(root)? != h {
            return Err(LabError::Data(format!("dataset at {} changed since the recorded run", root.display())));
        }
    }
    for (path, h) in &original.inputs {
        if &crate::manifest::file_sha256(Path::new(path))? != h {
            return Err(LabError::Data(format!("input {path} changed since the recorded run")));
        }
    }
    let argv = std::iter::once("crst".to_string()).chain(original.args.iter().cloned());
    let mut cli = Cli::try_parse_from(argv).map_err(|e| LabError::Config(format!("recorded arguments: {e}")))?;
    if matches!(cli.command, Command::Rerun(_)) {
        return Err(LabError::Config("a rerun manifest cannot be rerun".into()));
    }
    create_out(out)?;
    cli.command.set_out(out.to_path_buf());
    if let Some(text) = &original.config {
        let snapshot = out.join(CONFIG_SNAPSHOT);
        write_text(&snapshot, text)?;
        cli.command.set_config(snapshot);
    }
    if let (Some(root), false) = (&original.data_root, original.command == "gen-data") {
        cli.command.set_data(root.clone());
    }
    let fresh = run(&cli.command)?;
    let mut differing = differing_outputs(&original, &fresh);
    if original.dataset_hash != fresh.dataset_hash {
        differing.push("dataset".into());
    }
    Ok(RerunReport { original, fresh, differing })
}

fn rerun_cmd(a: &RerunArgs) -> Result<RunManifest> {
    let report = rerun(&a.manifest, &a.out)?;
    if !report.differing.is_empty() {
        return Err(LabError::Data(format!("rerun differs in: {}", report.differing.join(", "))));
    }
    println!("rerun of {} reproduced {} outputs bit-for-bit", report.original.command, report.fresh.outputs.len());
    Ok(report.fresh)
}

/// Location of the manifest a command writes.
pub fn manifest_path(out: &Path) -> PathBuf {
    out.join(MANIFEST_FILE)
}
