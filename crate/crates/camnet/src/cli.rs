//! Command-line front end for training and inspecting models.
//!
//! Six subcommands cover the pipelines: `train` fits one dataset,
//! `joint` fits several at once, `lifelong` learns tasks in sequence
//! with distillation, `eval` scores a checkpoint, and `trace` and
//! `hist` dump routing and weight artifacts. Every subcommand accepts
//! `--config FILE` holding `key = value` lines mirroring the flag
//! names; flags given on the command line win over file entries.
//!
//! Datasets are named by a spec string:
//!
//! ```text
//! name                      four IDX files under $CAMNET_DATA_ROOT/name
//! name:DIR                  the same four IDX files under DIR
//! name:idx:TI,TL,EI,EL      explicit train/test image and label paths
//! name:png:ROOT             ROOT/train and ROOT/test class-per-dir trees
//! name:synth:FAM,TR,TE[,S]  generated glyphs, family strokes or garments
//! ```
//!
//! Exit codes: 0 success, 2 usage, 3 invalid configuration, 4 file
//! access failure, 5 runtime failure.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use crate::arch::{self, ArchSpec};
use crate::data::{glyphs, idx, png_dir, Augment, Dataset, GlyphFamily};
use crate::lifelong::{self, LwfConfig, TaskData};
use crate::network::NetworkModel;
use crate::tensor::Scalar;
use crate::train::{self, checkpoint, DomainEval, OptKind, TrainConfig};
use crate::{Error, Result};

/// Numeric precision of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ScalarKind {
    F32,
    F64,
}

impl FromStr for ScalarKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" => Ok(ScalarKind::F32),
            "f64" => Ok(ScalarKind::F64),
            other => Err(Error::Config(format!("unknown scalar {other:?}, expected f32 or f64"))),
        }
    }
}

/// Everything one subcommand run needs, with config file entries and
/// command-line flags already merged (flags win) and validated.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub arch: Option<String>,
    pub data: Vec<String>,
    pub order: Vec<String>,
    pub ckpt: Option<PathBuf>,
    pub input: Option<PathBuf>,
    pub index: usize,
    pub head: usize,
    pub select: String,
    pub bins: usize,
    pub subset: Option<usize>,
    pub domain: String,
    pub out: PathBuf,
    pub seed: u64,
    pub scalar: ScalarKind,
    pub train: TrainConfig,
    pub lwf: LwfConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            arch: None,
            data: Vec::new(),
            order: Vec::new(),
            ckpt: None,
            input: None,
            index: 0,
            head: 0,
            select: String::new(),
            bins: 40,
            subset: None,
            domain: "input".into(),
            out: PathBuf::from("."),
            seed: 7,
            scalar: ScalarKind::F32,
            train: TrainConfig::default(),
            lwf: LwfConfig::default(),
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "camnet",
    version,
    about = "Train and inspect multipath networks with learned routing"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Train a model on one dataset.
    Train(TrainArgs),
    /// Train one model jointly on several datasets.
    Joint(TrainArgs),
    /// Score a checkpoint on the test split of each dataset.
    Eval(EvalArgs),
    /// Learn tasks in sequence, distilling against frozen old heads.
    Lifelong(LifelongArgs),
    /// Record the routes one input takes as DOT and JSON.
    Trace(TraceArgs),
    /// Histogram the per-path weights of parallel forward layers.
    Hist(HistArgs),
}

#[derive(Debug, Args)]
struct Common {
    /// Key=value config file; command-line flags override its entries.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Directory for artifacts (trace and hist also accept a file path).
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    /// Master seed for initialization, shuffling, and augmentation.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    /// Architecture preset or layer token string.
    #[arg(long)]
    arch: Option<String>,
    /// Parallel tensors per layer, for token strings without an x prefix.
    #[arg(long)]
    width: Option<usize>,
    /// Dataset spec, repeatable (see the module help for the grammar).
    #[arg(long = "data", value_name = "SPEC")]
    data: Vec<String>,
    /// Numeric precision of the model.
    #[arg(long, value_enum)]
    scalar: Option<ScalarKind>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    /// adam or sgd[:momentum].
    #[arg(long)]
    optimizer: Option<String>,
    #[arg(long)]
    lr: Option<f64>,
    /// on, off, or shift,rotate,scale_lo,scale_hi.
    #[arg(long)]
    augment: Option<String>,
    /// Chunk fraction when interleaving several training domains.
    #[arg(long)]
    mix_fraction: Option<f64>,
    /// Per-domain sample cap for the per-epoch test pass (0 = full).
    #[arg(long)]
    eval_subset: Option<usize>,
    /// Worker threads for gradient passes within a batch.
    #[arg(long)]
    workers: Option<usize>,
    /// Print a line per epoch while training.
    #[arg(long)]
    log: bool,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    /// Checkpoint to score.
    #[arg(long, value_name = "FILE")]
    ckpt: Option<PathBuf>,
    /// Dataset spec, repeatable.
    #[arg(long = "data", value_name = "SPEC")]
    data: Vec<String>,
    /// Head to score, counted from zero.
    #[arg(long)]
    head: Option<usize>,
    /// Per-domain sample cap (0 = full).
    #[arg(long)]
    subset: Option<usize>,
}

#[derive(Debug, Args)]
struct LifelongArgs {
    #[command(flatten)]
    train: TrainArgs,
    /// Task sequence as a comma list of dataset names or specs.
    #[arg(long)]
    order: Option<String>,
    /// Weight of the distillation terms; zero is plain fine-tuning.
    #[arg(long)]
    lambda: Option<f64>,
    /// Distillation temperature.
    #[arg(long)]
    temp: Option<f64>,
}

#[derive(Debug, Args)]
struct TraceArgs {
    #[command(flatten)]
    common: Common,
    /// Checkpoint to trace.
    #[arg(long, value_name = "FILE")]
    ckpt: Option<PathBuf>,
    /// IDX image file holding the input.
    #[arg(long, value_name = "FILE")]
    input: Option<PathBuf>,
    /// Which image of the file to trace.
    #[arg(long)]
    index: Option<usize>,
    /// Head to route through, counted from zero.
    #[arg(long)]
    head: Option<usize>,
    /// Domain label recorded in the trace.
    #[arg(long)]
    domain: Option<String>,
}

#[derive(Debug, Args)]
struct HistArgs {
    #[command(flatten)]
    common: Common,
    /// Checkpoint to read weights from.
    #[arg(long, value_name = "FILE")]
    ckpt: Option<PathBuf>,
    /// Substring that a layer name must contain (empty keeps all).
    #[arg(long)]
    select: Option<String>,
    #[arg(long)]
    bins: Option<usize>,
}

/// Parse `args` and execute the selected subcommand, returning the
/// process exit code instead of exiting.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("camnet: {e}");
            exit_code(&e)
        }
    }
}

/// The exit code a failed run reports for `e`.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => 3,
        Error::Io { .. } => 4,
        _ => 5,
    }
}

fn dispatch(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::Train(a) => {
            let rc = resolve_train(&a, false)?;
            scalar_split!(rc, run_train(&rc, false))
        }
        Cmd::Joint(a) => {
            let rc = resolve_train(&a, true)?;
            scalar_split!(rc, run_train(&rc, true))
        }
        Cmd::Eval(a) => {
            let rc = resolve_eval(&a)?;
            scalar_split!(rc, run_eval(&rc))
        }
        Cmd::Lifelong(a) => {
            let rc = resolve_lifelong(&a)?;
            scalar_split!(rc, run_lifelong(&rc))
        }
        Cmd::Trace(a) => {
            let rc = resolve_trace(&a)?;
            scalar_split!(rc, run_trace(&rc))
        }
        Cmd::Hist(a) => {
            let rc = resolve_hist(&a)?;
            scalar_split!(rc, run_hist(&rc))
        }
    }
}

/// Call `body` with the scalar type named by `rc.scalar`.
macro_rules! scalar_split {
    ($rc:expr, $fn:ident($($arg:expr),*)) => {
        match $rc.scalar {
            ScalarKind::F32 => $fn::<f32>($($arg),*),
            ScalarKind::F64 => $fn::<f64>($($arg),*),
        }
    };
}
use scalar_split;

const TRAIN_KEYS: &[&str] = &[
    "arch",
    "width",
    "data",
    "scalar",
    "epochs",
    "batch",
    "optimizer",
    "lr",
    "augment",
    "mix_fraction",
    "eval_subset",
    "workers",
    "log",
    "out",
    "seed",
];
const LIFELONG_KEYS: &[&str] = &[
    "arch",
    "width",
    "data",
    "scalar",
    "epochs",
    "batch",
    "optimizer",
    "lr",
    "augment",
    "mix_fraction",
    "eval_subset",
    "workers",
    "log",
    "out",
    "seed",
    "order",
    "lambda",
    "temp",
];
const EVAL_KEYS: &[&str] = &["ckpt", "data", "head", "subset", "out", "seed"];
const TRACE_KEYS: &[&str] = &["ckpt", "input", "index", "head", "domain", "out", "seed"];
const HIST_KEYS: &[&str] = &["ckpt", "select", "bins", "out", "seed"];

/// Entries of a key=value config file, restricted to the keys the
/// subcommand understands.
struct Conf(BTreeMap<String, String>);

impl Conf {
    fn load(path: Option<&Path>, allowed: &[&str]) -> Result<Conf> {
        let mut map = BTreeMap::new();
        let Some(path) = path else {
            return Ok(Conf(map));
        };
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::format(path, format!("line {}: expected key = value", ln + 1)));
            };
            let key = key.trim();
            if !allowed.contains(&key) {
                return Err(Error::Config(format!(
                    "unknown config key {key:?} in {}",
                    path.display()
                )));
            }
            map.insert(key.to_string(), value.trim().to_string());
        }
        Ok(Conf(map))
    }

    fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.0.get(key) {
            None => Ok(None),
            Some(v) => v.parse().map(Some).map_err(|_| {
                Error::Config(format!("config key {key} has unusable value {v:?}"))
            }),
        }
    }
}

fn pick<T: FromStr>(flag: Option<T>, conf: &Conf, key: &str, default: T) -> Result<T> {
    Ok(match flag {
        Some(v) => v,
        None => conf.get(key)?.unwrap_or(default),
    })
}

fn pick_opt<T: FromStr>(flag: Option<T>, conf: &Conf, key: &str) -> Result<Option<T>> {
    Ok(match flag {
        Some(v) => Some(v),
        None => conf.get(key)?,
    })
}

fn parse_optimizer(s: &str) -> Result<OptKind> {
    if s == "adam" {
        return Ok(OptKind::Adam);
    }
    if s == "sgd" {
        return Ok(OptKind::Sgd { momentum: 0.9 });
    }
    if let Some(m) = s.strip_prefix("sgd:") {
        let momentum: f64 = m
            .parse()
            .map_err(|_| Error::Config(format!("sgd momentum {m:?} is not a number")))?;
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::Config(format!("sgd momentum {momentum} is outside [0, 1)")));
        }
        return Ok(OptKind::Sgd { momentum });
    }
    Err(Error::Config(format!("unknown optimizer {s:?}, expected adam or sgd[:momentum]")))
}

fn parse_augment(s: &str) -> Result<Option<Augment>> {
    match s {
        "on" | "default" => return Ok(Some(Augment::default())),
        "off" | "none" => return Ok(None),
        _ => {}
    }
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| {
            Error::Config(format!(
                "augment {s:?} is not on, off, or shift,rotate,scale_lo,scale_hi"
            ))
        })?;
    let [shift, rotate, scale_lo, scale_hi] = parts[..] else {
        return Err(Error::Config(format!("augment {s:?} needs exactly four numbers")));
    };
    if shift < 0.0 || rotate < 0.0 || scale_lo <= 0.0 || scale_hi < scale_lo {
        return Err(Error::Config(format!("augment ranges {s:?} are out of order")));
    }
    Ok(Some(Augment { shift, rotate, scale_lo, scale_hi }))
}

/// Prefix a bare token string with a width; architectures that already
/// fix their width reject the flag.
fn apply_width(arch: &str, width: Option<usize>) -> Result<String> {
    let arch = arch.trim();
    let Some(width) = width else {
        return Ok(arch.to_string());
    };
    let first = arch.split_whitespace().next().unwrap_or("");
    let preset = ["BaseCNN", "CAMNet", "tinyCAMNet", "MultiCNN", "encdec"]
        .iter()
        .any(|p| arch.starts_with(p));
    let prefixed = first.len() > 1
        && first.starts_with('x')
        && first[1..].chars().all(|c| c.is_ascii_digit());
    if preset || prefixed {
        return Err(Error::Config(format!(
            "architecture {arch:?} already fixes its width, drop --width"
        )));
    }
    Ok(format!("x{width} {arch}"))
}

fn data_specs(flags: &[String], conf: &Conf) -> Vec<String> {
    if !flags.is_empty() {
        return flags.to_vec();
    }
    match conf.0.get("data") {
        Some(v) => v.split_whitespace().map(str::to_string).collect(),
        None => Vec::new(),
    }
}

fn spec_name(spec: &str) -> &str {
    spec.split(':').next().unwrap_or(spec)
}

/// Train and test splits of one named dataset.
struct LoadedData<E: Scalar> {
    train: Dataset<E>,
    test: Dataset<E>,
}

fn load_data<E: Scalar>(spec: &str) -> Result<LoadedData<E>> {
    let Some((name, rest)) = spec.split_once(':') else {
        let Some(root) = std::env::var_os("CAMNET_DATA_ROOT") else {
            return Err(Error::Config(format!(
                "dataset {spec:?} names no path and CAMNET_DATA_ROOT is not set"
            )));
        };
        let (train, test) = Dataset::load_dir(&PathBuf::from(root).join(spec), spec)?;
        return Ok(LoadedData { train, test });
    };
    if name.is_empty() {
        return Err(Error::Config(format!("dataset spec {spec:?} has an empty name")));
    }
    if let Some(paths) = rest.strip_prefix("idx:") {
        let parts: Vec<&str> = paths.split(',').map(str::trim).collect();
        let [ti, tl, ei, el] = parts[..] else {
            return Err(Error::Config(format!(
                "dataset {name:?} needs train_images,train_labels,test_images,test_labels"
            )));
        };
        let load = |images: &str, labels: &str, split: &str| -> Result<Dataset<E>> {
            let images = idx::load_images(Path::new(images))?;
            let labels = idx::load_labels(Path::new(labels))?;
            let classes = labels.iter().max().map_or(0, |&m| m + 1);
            Ok(Dataset { name: format!("{name}/{split}"), images, labels, classes })
        };
        let mut train = load(ti, tl, "train")?;
        let mut test = load(ei, el, "test")?;
        let classes = train.classes.max(test.classes);
        train.classes = classes;
        test.classes = classes;
        train.validate()?;
        test.validate()?;
        return Ok(LoadedData { train, test });
    }
    if let Some(root) = rest.strip_prefix("png:") {
        let root = Path::new(root);
        let mut train = png_dir::load_tree(&root.join("train"), format!("{name}/train"))?;
        let mut test = png_dir::load_tree(&root.join("test"), format!("{name}/test"))?;
        let classes = train.classes.max(test.classes);
        train.classes = classes;
        test.classes = classes;
        return Ok(LoadedData { train, test });
    }
    if let Some(args) = rest.strip_prefix("synth:") {
        let parts: Vec<&str> = args.split(',').map(str::trim).collect();
        if parts.len() < 3 || parts.len() > 4 {
            return Err(Error::Config(format!(
                "dataset {name:?} needs family,train_count,test_count[,seed]"
            )));
        }
        let family: GlyphFamily = parts[0].parse()?;
        let counts: Vec<usize> = parts[1..3]
            .iter()
            .map(|p| p.parse())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::Config(format!("bad sample count in {spec:?}")))?;
        if counts.iter().any(|&c| c == 0) {
            return Err(Error::Config(format!("dataset {name:?} has an empty split")));
        }
        let seed: u64 = match parts.get(3) {
            Some(s) => s
                .parse()
                .map_err(|_| Error::Config(format!("bad seed in {spec:?}")))?,
            None => 1,
        };
        let train = glyphs::glyph_dataset(family, format!("{name}/train"), counts[0], seed);
        let test = glyphs::glyph_dataset(
            family,
            format!("{name}/test"),
            counts[1],
            seed ^ 0x7e57_da7a,
        );
        return Ok(LoadedData { train, test });
    }
    let (train, test) = Dataset::load_dir(Path::new(rest), name)?;
    Ok(LoadedData { train, test })
}

fn resolve_train(a: &TrainArgs, joint: bool) -> Result<RunConfig> {
    let keys = if joint { LIFELONG_KEYS } else { TRAIN_KEYS };
    let conf = Conf::load(a.common.config.as_deref(), keys)?;
    let rc = merge_train(a, &conf)?;
    if rc.data.is_empty() {
        return Err(Error::Config("no dataset given, pass --data".into()));
    }
    if joint && rc.data.len() < 2 {
        return Err(Error::Config("joint training needs at least two --data".into()));
    }
    if !joint && rc.data.len() > 1 {
        return Err(Error::Config("train takes one --data; use joint for several".into()));
    }
    require_arch(&rc)?;
    Ok(rc)
}

fn merge_train(a: &TrainArgs, conf: &Conf) -> Result<RunConfig> {
    let mut rc = RunConfig::default();
    rc.seed = pick(a.common.seed, conf, "seed", rc.seed)?;
    rc.out = pick(a.common.out.clone(), conf, "out", rc.out)?;
    rc.scalar = pick(a.scalar, conf, "scalar", rc.scalar)?;
    let arch = pick_opt(a.arch.clone(), conf, "arch")?;
    let width = pick_opt(a.width, conf, "width")?;
    rc.arch = match arch {
        Some(s) => Some(apply_width(&s, width)?),
        None => None,
    };
    rc.data = data_specs(&a.data, conf);
    rc.train.epochs = pick(a.epochs, conf, "epochs", rc.train.epochs)?;
    rc.train.batch = pick(a.batch, conf, "batch", rc.train.batch)?;
    rc.train.lr = pick(a.lr, conf, "lr", rc.train.lr)?;
    let optimizer = pick_opt(a.optimizer.clone(), conf, "optimizer")?;
    if let Some(s) = optimizer {
        rc.train.optimizer = parse_optimizer(&s)?;
    }
    let augment = pick(a.augment.clone(), conf, "augment", "on".into())?;
    rc.train.augment = parse_augment(&augment)?;
    rc.train.mix_fraction = pick(a.mix_fraction, conf, "mix_fraction", rc.train.mix_fraction)?;
    let subset = pick_opt(a.eval_subset, conf, "eval_subset")?;
    rc.train.eval_subset = subset.filter(|&n| n > 0);
    rc.train.workers = pick(a.workers, conf, "workers", rc.train.workers)?;
    rc.train.log = a.log || conf.get::<bool>("log")?.unwrap_or(false);
    rc.train.seed = rc.seed;
    Ok(rc)
}

fn require_arch(rc: &RunConfig) -> Result<()> {
    let Some(arch) = &rc.arch else {
        return Err(Error::Config("no architecture given, pass --arch".into()));
    };
    ArchSpec::parse(arch)?;
    Ok(())
}

fn resolve_eval(a: &EvalArgs) -> Result<RunConfig> {
    let conf = Conf::load(a.common.config.as_deref(), EVAL_KEYS)?;
    let mut rc = RunConfig::default();
    rc.seed = pick(a.common.seed, &conf, "seed", rc.seed)?;
    rc.out = pick(a.common.out.clone(), &conf, "out", rc.out)?;
    rc.ckpt = Some(require_ckpt(pick_opt(a.ckpt.clone(), &conf, "ckpt")?)?);
    rc.data = data_specs(&a.data, &conf);
    rc.head = pick(a.head, &conf, "head", 0)?;
    rc.subset = pick_opt(a.subset, &conf, "subset")?.filter(|&n| n > 0);
    if rc.data.is_empty() {
        return Err(Error::Config("no dataset given, pass --data".into()));
    }
    rc.scalar = ckpt_scalar(rc.ckpt.as_deref().unwrap())?;
    Ok(rc)
}

fn resolve_lifelong(a: &LifelongArgs) -> Result<RunConfig> {
    let conf = Conf::load(a.train.common.config.as_deref(), LIFELONG_KEYS)?;
    let mut rc = merge_train(&a.train, &conf)?;
    let order = pick_opt(a.order.clone(), &conf, "order")?
        .ok_or_else(|| Error::Config("no task sequence given, pass --order".into()))?;
    rc.order = order.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect();
    if rc.order.len() < 2 {
        return Err(Error::Config("a lifelong run needs at least two tasks in --order".into()));
    }
    rc.lwf.lambda_old = pick(a.lambda, &conf, "lambda", rc.lwf.lambda_old)?;
    rc.lwf.temperature = pick(a.temp, &conf, "temp", rc.lwf.temperature)?;
    if rc.lwf.lambda_old < 0.0 {
        return Err(Error::Config(format!("lambda {} is negative", rc.lwf.lambda_old)));
    }
    if rc.lwf.temperature <= 0.0 {
        return Err(Error::Config(format!("temperature {} is not positive", rc.lwf.temperature)));
    }
    require_arch(&rc)?;
    Ok(rc)
}

fn resolve_trace(a: &TraceArgs) -> Result<RunConfig> {
    let conf = Conf::load(a.common.config.as_deref(), TRACE_KEYS)?;
    let mut rc = RunConfig::default();
    rc.seed = pick(a.common.seed, &conf, "seed", rc.seed)?;
    rc.out = pick(a.common.out.clone(), &conf, "out", rc.out)?;
    rc.ckpt = Some(require_ckpt(pick_opt(a.ckpt.clone(), &conf, "ckpt")?)?);
    rc.input = pick_opt(a.input.clone(), &conf, "input")?;
    if rc.input.is_none() {
        return Err(Error::Config("no input image file given, pass --input".into()));
    }
    rc.index = pick(a.index, &conf, "index", 0)?;
    rc.head = pick(a.head, &conf, "head", 0)?;
    rc.domain = pick(a.domain.clone(), &conf, "domain", rc.domain)?;
    rc.scalar = ckpt_scalar(rc.ckpt.as_deref().unwrap())?;
    Ok(rc)
}

fn resolve_hist(a: &HistArgs) -> Result<RunConfig> {
    let conf = Conf::load(a.common.config.as_deref(), HIST_KEYS)?;
    let mut rc = RunConfig::default();
    rc.seed = pick(a.common.seed, &conf, "seed", rc.seed)?;
    rc.out = pick(a.common.out.clone(), &conf, "out", rc.out)?;
    rc.ckpt = Some(require_ckpt(pick_opt(a.ckpt.clone(), &conf, "ckpt")?)?);
    rc.select = pick(a.select.clone(), &conf, "select", rc.select)?;
    rc.bins = pick(a.bins, &conf, "bins", rc.bins)?;
    rc.scalar = ckpt_scalar(rc.ckpt.as_deref().unwrap())?;
    Ok(rc)
}

fn require_ckpt(ckpt: Option<PathBuf>) -> Result<PathBuf> {
    ckpt.ok_or_else(|| Error::Config("no checkpoint given, pass --ckpt".into()))
}

fn ckpt_scalar(path: &Path) -> Result<ScalarKind> {
    checkpoint::peek(path)?.scalar.parse()
}

fn ensure_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Treat `out` as a file path when it carries an extension, otherwise
/// as a directory to create and place `default_name` in.
fn artifact_path(out: &Path, default_name: &str) -> Result<PathBuf> {
    if out.extension().is_some() && !out.is_dir() {
        if let Some(parent) = out.parent() {
            if !parent.as_os_str().is_empty() {
                ensure_dir(parent)?;
            }
        }
        Ok(out.to_path_buf())
    } else {
        ensure_dir(out)?;
        Ok(out.join(default_name))
    }
}

fn load_all<E: Scalar>(specs: &[String]) -> Result<Vec<LoadedData<E>>> {
    let loaded: Vec<LoadedData<E>> = specs.iter().map(|s| load_data(s)).collect::<Result<_>>()?;
    let shape = loaded[0].train.images[0].shape().to_vec();
    for d in &loaded {
        for set in [&d.train, &d.test] {
            if set.is_empty() {
                return Err(Error::Data(format!("dataset {:?} is empty", set.name)));
            }
            if set.images[0].shape() != shape {
                return Err(Error::Data(format!(
                    "dataset {:?} images are {:?}, others are {shape:?}",
                    set.name,
                    set.images[0].shape()
                )));
            }
        }
    }
    Ok(loaded)
}

fn run_train<E: Scalar>(rc: &RunConfig, joint: bool) -> Result<()> {
    let loaded = load_all::<E>(&rc.data)?;
    let shape = loaded[0].train.images[0].shape().to_vec();
    let classes = loaded[0].train.classes;
    let mut model = arch::build_network::<E>(
        &ArchSpec::parse(rc.arch.as_deref().unwrap())?,
        &shape,
        classes,
        rc.seed,
    )?;
    let (trains, tests): (Vec<_>, Vec<_>) =
        loaded.into_iter().map(|d| (d.train, d.test)).unzip();
    let report = train::fit(&mut model, 0, &trains, &tests, &rc.train)?;
    ensure_dir(&rc.out)?;
    train::write_metrics_csv(&rc.out.join("metrics.csv"), &report.metrics)?;
    checkpoint::save(&rc.out.join("model.bin"), &model)?;
    if report.diverged {
        eprintln!("camnet: training diverged, kept the last finite parameters");
    }
    let mode = if joint { "joint" } else { "train" };
    println!(
        "{mode}: test error {:.4} after epoch {} of {}; wrote metrics.csv and model.bin to {}",
        report.final_test_error,
        report.best_epoch,
        report.epochs_run,
        rc.out.display()
    );
    Ok(())
}

fn write_eval_csv(path: &Path, rows: &[DomainEval]) -> Result<()> {
    let mut out = String::from("domain,samples,loss,error\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{}", r.domain, r.samples, r.loss, r.error);
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn run_eval<E: Scalar>(rc: &RunConfig) -> Result<()> {
    let model: NetworkModel<E> = checkpoint::load(rc.ckpt.as_deref().unwrap())?;
    let loaded = load_all::<E>(&rc.data)?;
    let tests: Vec<Dataset<E>> = loaded.into_iter().map(|d| d.test).collect();
    let rows = train::evaluate(&model, rc.head, &tests, rc.subset)?;
    ensure_dir(&rc.out)?;
    write_eval_csv(&rc.out.join("eval.csv"), &rows)?;
    for r in &rows {
        println!("eval: {} loss {:.4} error {:.4} over {} samples", r.domain, r.loss, r.error, r.samples);
    }
    Ok(())
}

fn run_lifelong<E: Scalar>(rc: &RunConfig) -> Result<()> {
    let registry: BTreeMap<&str, &str> =
        rc.data.iter().map(|s| (spec_name(s), s.as_str())).collect();
    let mut tasks = Vec::with_capacity(rc.order.len());
    for entry in &rc.order {
        let spec = registry.get(entry.as_str()).copied().unwrap_or(entry);
        let d = load_data::<E>(spec)?;
        tasks.push(TaskData { train: d.train, test: d.test });
    }
    let shape = tasks[0].train.images[0].shape().to_vec();
    let mut model = arch::build_network::<E>(
        &ArchSpec::parse(rc.arch.as_deref().unwrap())?,
        &shape,
        tasks[0].train.classes,
        rc.seed,
    )?;
    let history = lifelong::lwf_run(&mut model, &tasks, &rc.lwf, &rc.train)?;
    ensure_dir(&rc.out)?;
    lifelong::write_history_csv(&rc.out.join("history.csv"), &history)?;
    checkpoint::save(&rc.out.join("model.bin"), &model)?;
    let last = rc.order.len();
    for row in history.iter().filter(|r| r.phase == last) {
        println!("lifelong: task {} accuracy {:.4} after phase {last}", row.task, row.accuracy);
    }
    println!("lifelong: wrote history.csv and model.bin to {}", rc.out.display());
    Ok(())
}

fn run_trace<E: Scalar>(rc: &RunConfig) -> Result<()> {
    let model: NetworkModel<E> = checkpoint::load(rc.ckpt.as_deref().unwrap())?;
    let input = rc.input.as_deref().unwrap();
    let images: Vec<_> = idx::load_images::<E>(input)?;
    if rc.index >= images.len() {
        return Err(Error::Config(format!(
            "index {} of an image file holding {}",
            rc.index,
            images.len()
        )));
    }
    let file = input.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let trace = crate::trace::capture_trace(
        &model,
        &images[rc.index],
        rc.head,
        format!("{file}[{}]", rc.index),
        rc.domain.clone(),
    )?;
    let target = artifact_path(&rc.out, "trace.dot")?;
    match target.extension().and_then(|e| e.to_str()) {
        Some("json") => {
            std::fs::write(&target, crate::trace::export_json(&trace)?)
                .map_err(|e| Error::io(&target, e))?;
            println!("trace: wrote {}", target.display());
        }
        _ => {
            std::fs::write(&target, crate::trace::export_dot(&trace))
                .map_err(|e| Error::io(&target, e))?;
            println!("trace: wrote {}", target.display());
            if target.file_name().is_some_and(|n| n == "trace.dot") && rc.out.is_dir() {
                let json = rc.out.join("trace.json");
                std::fs::write(&json, crate::trace::export_json(&trace)?)
                    .map_err(|e| Error::io(&json, e))?;
                println!("trace: wrote {}", json.display());
            }
        }
    }
    Ok(())
}

fn run_hist<E: Scalar>(rc: &RunConfig) -> Result<()> {
    let model: NetworkModel<E> = checkpoint::load(rc.ckpt.as_deref().unwrap())?;
    let hists = crate::trace::weight_histograms(&model, &rc.select, rc.bins)?;
    let target = artifact_path(&rc.out, "hist.csv")?;
    crate::trace::write_histogram_csv(&target, &hists)?;
    for h in &hists {
        let mut line = format!("hist: {} with {} paths", h.layer, h.counts.len());
        if h.counts.len() == 2 {
            let tv = crate::trace::tv_distance(&h.counts[0], &h.counts[1])?;
            let _ = write!(line, ", tv distance {tv:.4}");
        }
        println!("{line}");
    }
    println!("hist: wrote {}", target.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn conf_from(text: &str, allowed: &[&str]) -> Result<Conf> {
        let dir = tempdir().unwrap();
        let path = dir.path().join("run.conf");
        std::fs::write(&path, text).unwrap();
        Conf::load(Some(&path), allowed)
    }

    #[test]
    fn config_entries_yield_to_flags() {
        let conf = conf_from("epochs = 3 # comment\n\nlr=0.5\n", TRAIN_KEYS).unwrap();
        assert_eq!(pick(Some(9usize), &conf, "epochs", 10).unwrap(), 9);
        assert_eq!(pick(None::<usize>, &conf, "epochs", 10).unwrap(), 3);
        assert_eq!(pick(None::<f64>, &conf, "lr", 1e-3).unwrap(), 0.5);
        assert_eq!(pick(None::<usize>, &conf, "batch", 64).unwrap(), 64);
    }

    #[test]
    fn unknown_config_keys_are_rejected() {
        assert!(matches!(
            conf_from("epoch = 3\n", TRAIN_KEYS),
            Err(Error::Config(msg)) if msg.contains("epoch")
        ));
        assert!(matches!(conf_from("no equals sign\n", TRAIN_KEYS), Err(Error::Format { .. })));
    }

    #[test]
    fn optimizer_and_augment_strings_parse() {
        assert!(matches!(parse_optimizer("adam").unwrap(), OptKind::Adam));
        assert!(
            matches!(parse_optimizer("sgd").unwrap(), OptKind::Sgd { momentum } if momentum == 0.9)
        );
        assert!(
            matches!(parse_optimizer("sgd:0.5").unwrap(), OptKind::Sgd { momentum } if momentum == 0.5)
        );
        assert!(parse_optimizer("adamw").is_err());
        assert!(parse_optimizer("sgd:2").is_err());

        assert!(parse_augment("off").unwrap().is_none());
        let a = parse_augment("on").unwrap().unwrap();
        assert_eq!(a.shift, Augment::default().shift);
        let b = parse_augment("1, 5, 0.8, 1.2").unwrap().unwrap();
        assert_eq!((b.shift, b.rotate, b.scale_lo, b.scale_hi), (1.0, 5.0, 0.8, 1.2));
        assert!(parse_augment("1,5").is_err());
        assert!(parse_augment("1,5,1.2,0.8").is_err());
    }

    #[test]
    fn width_prefixes_only_bare_token_strings() {
        assert_eq!(apply_width("rC4 rF2", Some(3)).unwrap(), "x3 rC4 rF2");
        assert_eq!(apply_width("CAMNet3", None).unwrap(), "CAMNet3");
        assert!(apply_width("CAMNet3", Some(2)).is_err());
        assert!(apply_width("x2 rC4 rF2", Some(2)).is_err());
    }

    #[test]
    fn synthetic_specs_load_without_files() {
        let d = load_data::<f32>("toy:synth:strokes,8,4,3").unwrap();
        assert_eq!((d.train.len(), d.test.len(), d.train.classes), (8, 4, 10));
        assert_eq!(d.train.name, "toy/train");
        let again = load_data::<f32>("toy:synth:strokes,8,4,3").unwrap();
        assert_eq!(d.train.images[0].values(), again.train.images[0].values());

        assert!(load_data::<f32>("toy:synth:squiggles,8,4").is_err());
        assert!(load_data::<f32>("toy:synth:strokes,0,4").is_err());
        assert!(load_data::<f32>("toy:synth:strokes").is_err());
    }

    #[test]
    fn bare_names_resolve_through_the_data_root() {
        let dir = tempdir().unwrap();
        glyphs::write_corpus::<f32>(&dir.path().join("toy"), GlyphFamily::Strokes, 6, 4, 5)
            .unwrap();
        std::env::set_var("CAMNET_DATA_ROOT", dir.path());
        let d = load_data::<f32>("toy").unwrap();
        assert_eq!((d.train.len(), d.test.len()), (6, 4));
        std::env::remove_var("CAMNET_DATA_ROOT");
        assert!(matches!(load_data::<f32>("toy"), Err(Error::Config(_))));
    }

    #[test]
    fn exit_codes_follow_the_error_family() {
        assert_eq!(exit_code(&Error::Config("x".into())), 3);
        assert_eq!(exit_code(&Error::io("f", std::io::Error::other("x"))), 4);
        assert_eq!(exit_code(&Error::Data("x".into())), 5);
        assert_eq!(exit_code(&Error::Numeric("x".into())), 5);
    }

    #[test]
    fn artifact_paths_split_files_from_directories() {
        let dir = tempdir().unwrap();
        let sub = dir.path().join("run");
        assert_eq!(artifact_path(&sub, "hist.csv").unwrap(), sub.join("hist.csv"));
        assert!(sub.is_dir());
        let file = dir.path().join("deep/own.dot");
        assert_eq!(artifact_path(&file, "trace.dot").unwrap(), file);
        assert!(file.parent().unwrap().is_dir());
    }

    fn run_strs(args: &[&str]) -> i32 {
        run(args.iter().map(|s| s.to_string()))
    }

    #[test]
    fn train_writes_deterministic_artifacts() {
        let dir = tempdir().unwrap();
        let out1 = dir.path().join("a");
        let out2 = dir.path().join("b");
        let base = [
            "camnet",
            "train",
            "--arch",
            "x2 rC4 C4 rF10@1",
            "--data",
            "toy:synth:strokes,8,4,3",
            "--epochs",
            "1",
            "--batch",
            "4",
            "--augment",
            "off",
            "--seed",
            "5",
            "--out",
        ];
        let mut args1: Vec<&str> = base.to_vec();
        let o1 = out1.to_str().unwrap().to_string();
        args1.push(&o1);
        assert_eq!(run_strs(&args1), 0);
        let mut args2: Vec<&str> = base.to_vec();
        let o2 = out2.to_str().unwrap().to_string();
        args2.push(&o2);
        assert_eq!(run_strs(&args2), 0);

        let m1 = std::fs::read(out1.join("metrics.csv")).unwrap();
        let m2 = std::fs::read(out2.join("metrics.csv")).unwrap();
        assert!(!m1.is_empty());
        assert_eq!(m1, m2);
        assert!(out1.join("model.bin").is_file());
    }

    #[test]
    fn checkpoint_commands_chain_off_a_training_run() {
        let dir = tempdir().unwrap();
        let out = dir.path().join("run");
        let o = out.to_str().unwrap().to_string();
        let code = run_strs(&[
            "camnet",
            "train",
            "--arch",
            "x2 rC4 C4 rF10@1",
            "--data",
            "toy:synth:strokes,8,4,3",
            "--epochs",
            "1",
            "--batch",
            "4",
            "--augment",
            "off",
            "--out",
            &o,
        ]);
        assert_eq!(code, 0);
        let ckpt = out.join("model.bin");
        let c = ckpt.to_str().unwrap().to_string();

        assert_eq!(
            run_strs(&[
                "camnet",
                "eval",
                "--ckpt",
                &c,
                "--data",
                "toy:synth:strokes,8,4,3",
                "--out",
                &o,
            ]),
            0
        );
        let eval = std::fs::read_to_string(out.join("eval.csv")).unwrap();
        assert!(eval.starts_with("domain,samples,loss,error\n"));
        assert_eq!(eval.lines().count(), 3);
        assert!(eval.lines().nth(1).unwrap().starts_with("toy/test,4,"));
        assert!(eval.lines().nth(2).unwrap().starts_with("all,4,"));

        let images = load_data::<f32>("toy:synth:strokes,8,4,3").unwrap().test.images;
        let idx_path = dir.path().join("imgs.idx");
        idx::save_images(&idx_path, &images[..1]).unwrap();
        let i = idx_path.to_str().unwrap().to_string();
        assert_eq!(
            run_strs(&["camnet", "trace", "--ckpt", &c, "--input", &i, "--out", &o]),
            0
        );
        let dot = std::fs::read_to_string(out.join("trace.dot")).unwrap();
        assert!(dot.starts_with("digraph route {"));
        assert!(out.join("trace.json").is_file());

        assert_eq!(run_strs(&["camnet", "hist", "--ckpt", &c, "--out", &o]), 0);
        let hist = std::fs::read_to_string(out.join("hist.csv")).unwrap();
        assert!(hist.starts_with("layer,path,bin_lo,bin_hi,count\n"));
    }

    #[test]
    fn failures_map_to_the_documented_exit_codes() {
        assert_eq!(run_strs(&["camnet", "train", "--no-such-flag"]), 2);
        assert_eq!(run_strs(&["camnet", "nonsense"]), 2);
        assert_eq!(
            run_strs(&["camnet", "train", "--data", "toy:synth:strokes,8,4"]),
            3
        );
        assert_eq!(
            run_strs(&["camnet", "eval", "--ckpt", "/no/such/model.bin", "--data", "d:synth:strokes,4,4"]),
            4
        );
    }
}
