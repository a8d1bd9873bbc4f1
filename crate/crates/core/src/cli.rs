// SPDX-License-Identifier: MIT OR Apache-2.0

//! Command-line front end.
//!
//! Every subcommand reads artifacts written by an earlier one, checks the
//! model hash and dataset checksum recorded in their sidecars, writes its
//! own artifact, and prints a one-line summary. Exit status is 0 on
//! success, 1 when the pipeline fails and 2 on bad usage.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::blocks::{self, BlockSet, PruningPlan, Selection};
use crate::error::{Error, Result};
use crate::io;
use crate::model::{self, CaptureSet, ModelConfig, SkipMask, Steer, Weights};
use crate::numerics::Matrix;
use crate::probe::{self, ProbeOptions};
use crate::similarity::{self, LayerMatrixOptions, Metric, Reduction, SimilarityMatrix};
use crate::steer::{self, LayerSelection, Stat, SteerConfig, SteeringMatrix, TokenMode};
use crate::synthgen::{self, GenSpec, PatternClass, SeriesSet};

/// Environment variable capping worker threads.
pub const THREADS_ENV: &str = "TSLENS_THREADS";

#[derive(Debug, Parser)]
#[command(name = "ts-lens", version, about = "Probe, prune and steer a small time-series transformer")]
pub struct Cli {
    /// Seed for data generation and permutation tests.
    #[arg(long, global = true, default_value_t = synthgen::DEFAULT_SEED)]
    pub seed: u64,
    /// Directory that relative output paths are resolved against.
    #[arg(long, global = true, default_value = ".")]
    pub out_dir: PathBuf,
    /// Suppress summaries on standard output.
    #[arg(long, short, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Create a randomly initialised model.
    Init(InitArgs),
    /// Generate a synthetic dataset.
    Gen(GenArgs),
    /// Run the model and record the residual stream.
    Capture(CaptureArgs),
    /// Layer-by-layer similarity matrix.
    Sim(SimArgs),
    /// Detect redundant layer blocks.
    Blocks(BlocksArgs),
    /// Turn blocks into a pruning plan.
    Prune(PruneArgs),
    /// Time forward passes with and without a plan.
    Bench(BenchArgs),
    /// Fit probes and build the localization map.
    Probe(ProbeArgs),
    /// Derive, compose or negate steering matrices.
    #[command(subcommand)]
    Steer(SteerCommand),
    /// PCA displacement report of a steered run.
    Pca(PcaArgs),
    /// Render CSV matrices as SVG heatmaps.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct InitArgs {
    #[arg(long, default_value_t = 8)]
    pub layers: usize,
    #[arg(long, default_value_t = 64)]
    pub dim: usize,
    #[arg(long, default_value_t = 4)]
    pub heads: usize,
    #[arg(long, default_value_t = 8)]
    pub patch: usize,
    #[arg(long = "len", default_value_t = 128)]
    pub seq_len: usize,
    #[arg(long, default_value_t = 4)]
    pub ff_mult: usize,
    #[arg(long, default_value_t = 1)]
    pub init_seed: u64,
    #[arg(long, default_value = "model.tlt")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Comma-separated class names.
    #[arg(long, value_delimiter = ',', default_values_t = [PatternClass::Constant, PatternClass::SineConstant])]
    pub classes: Vec<PatternClass>,
    /// Rows per class.
    #[arg(long, default_value_t = 512)]
    pub n: usize,
    #[arg(long = "len", default_value_t = synthgen::DESK_LENGTH)]
    pub length: usize,
    /// Sine period in steps.
    #[arg(long, default_value_t = synthgen::DESK_PERIOD)]
    pub period: f64,
    /// Z-normalize every series.
    #[arg(long)]
    pub normalize: bool,
    #[arg(long, default_value = "data.tlt")]
    pub out: PathBuf,
}

/// Token placement of the steering update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    All,
    Last,
    Token,
}

#[derive(Debug, Args)]
pub struct CaptureArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Pruning plan JSON; its interior layers are skipped.
    #[arg(long)]
    pub skip_plan: Option<PathBuf>,
    /// Steering matrix applied during the pass.
    #[arg(long)]
    pub steer: Option<PathBuf>,
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    pub lambda: f64,
    #[arg(long, value_enum, default_value_t = ModeArg::All)]
    pub mode: ModeArg,
    /// Token index for `--mode token`.
    #[arg(long)]
    pub token: Option<usize>,
    /// Comma-separated layers to steer (default: all).
    #[arg(long, value_delimiter = ',')]
    pub steer_layers: Vec<usize>,
    #[arg(long, default_value = "captures.tlt")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SimArgs {
    /// Captures of model A.
    #[arg(long)]
    pub a: PathBuf,
    /// Captures of model B (default: A).
    #[arg(long)]
    pub b: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Metric::Cka)]
    pub metric: Metric,
    #[arg(long, value_enum, default_value_t = Reduction::Mean)]
    pub reduction: Reduction,
    /// Include the post-embedding stream.
    #[arg(long)]
    pub include_embedding: bool,
    #[arg(long, default_value = "sim.csv")]
    pub out: PathBuf,
    /// Also write an SVG heatmap.
    #[arg(long)]
    pub svg: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BlocksArgs {
    #[arg(long)]
    pub sim: PathBuf,
    #[arg(long, default_value_t = blocks::DEFAULT_TAU)]
    pub tau: f64,
    #[arg(long, default_value_t = blocks::DEFAULT_MIN_SIZE)]
    pub k: usize,
    #[arg(long, default_value = "blocks.json")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PruneArgs {
    #[arg(long)]
    pub blocks: PathBuf,
    /// Encoder depth (default: taken from the block file).
    #[arg(long)]
    pub layers: Option<usize>,
    /// `all` or a 1-based block number.
    #[arg(long, default_value = "all", value_parser = parse_selection)]
    pub selection: Selection,
    #[arg(long, default_value = "plan.json")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub plan: PathBuf,
    #[arg(long, default_value_t = blocks::DEFAULT_REPS)]
    pub reps: usize,
    /// Rows of the dataset per timed pass.
    #[arg(long, default_value_t = 1)]
    pub batch: usize,
    #[arg(long, default_value = "bench.json")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ProbeArgs {
    #[arg(long)]
    pub captures: PathBuf,
    /// Class treated as `s` (default: second class of the dataset).
    #[arg(long)]
    pub class_s: Option<PatternClass>,
    /// Class treated as `c` (default: first class of the dataset).
    #[arg(long)]
    pub class_c: Option<PatternClass>,
    /// Label shuffles for the permutation null.
    #[arg(long, default_value_t = 20)]
    pub shuffles: usize,
    #[arg(long, default_value = "ldr.csv")]
    pub out: PathBuf,
    #[arg(long)]
    pub svg: Option<PathBuf>,
    /// Stacked probe directions and thresholds.
    #[arg(long)]
    pub probes: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum SteerCommand {
    /// `stat(target) − stat(source)` per layer.
    Derive(DeriveArgs),
    /// `(1 − β)·a + β·b`.
    Compose(ComposeArgs),
    /// Flip the direction.
    Negate(NegateArgs),
}

#[derive(Debug, Args)]
pub struct DeriveArgs {
    #[arg(long)]
    pub captures: PathBuf,
    #[arg(long)]
    pub source: PatternClass,
    #[arg(long)]
    pub target: PatternClass,
    #[arg(long, value_enum, default_value_t = Stat::Median)]
    pub stat: Stat,
    #[arg(long, default_value = "steer.tlt")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ComposeArgs {
    #[arg(long)]
    pub a: PathBuf,
    #[arg(long)]
    pub b: PathBuf,
    #[arg(long)]
    pub beta: f64,
    #[arg(long, default_value = "steer_composed.tlt")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct NegateArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long, default_value = "steer_negated.tlt")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PcaArgs {
    /// Unsteered captures.
    #[arg(long)]
    pub before: PathBuf,
    /// Steered captures of the same dataset.
    #[arg(long)]
    pub after: PathBuf,
    /// Class whose samples were steered.
    #[arg(long)]
    pub steered: PatternClass,
    /// Class whose centroid is the destination.
    #[arg(long)]
    pub reference: PatternClass,
    /// Capture index (default: final layer).
    #[arg(long)]
    pub layer: Option<usize>,
    #[arg(long, default_value = "pca.csv")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// CSV matrices to render.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
}

fn parse_selection(s: &str) -> std::result::Result<Selection, String> {
    if s == "all" {
        return Ok(Selection::All);
    }
    match s.parse::<usize>() {
        Ok(i) if i >= 1 => Ok(Selection::Block(i)),
        _ => Err(format!("expected `all` or a block number >= 1, got `{s}`")),
    }
}

/// Failure of a subcommand, mapped to an exit status.
#[derive(Debug)]
enum Failure {
    Usage(String),
    Pipeline(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Pipeline(e)
    }
}

type CmdResult = std::result::Result<String, Failure>;

/// Parses `args` (program name first) and runs the subcommand.
pub fn main_with_args<I, T>(args: I) -> i32
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
    configure_threads();
    run(&cli)
}

fn configure_threads() {
    if let Some(n) = std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
    {
        // a pool that already exists keeps its size
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

/// Runs a parsed command line and returns the exit status.
pub fn run(cli: &Cli) -> i32 {
    let result = match &cli.command {
        Command::Init(a) => cmd_init(cli, a),
        Command::Gen(a) => cmd_gen(cli, a),
        Command::Capture(a) => cmd_capture(cli, a),
        Command::Sim(a) => cmd_sim(cli, a),
        Command::Blocks(a) => cmd_blocks(cli, a),
        Command::Prune(a) => cmd_prune(cli, a),
        Command::Bench(a) => cmd_bench(cli, a),
        Command::Probe(a) => cmd_probe(cli, a),
        Command::Steer(s) => match s {
            SteerCommand::Derive(a) => cmd_derive(cli, a),
            SteerCommand::Compose(a) => cmd_compose(cli, a),
            SteerCommand::Negate(a) => cmd_negate(cli, a),
        },
        Command::Pca(a) => cmd_pca(cli, a),
        Command::Report(a) => cmd_report(cli, a),
    };
    match result {
        Ok(summary) => {
            if !cli.quiet && !summary.is_empty() {
                println!("{summary}");
            }
            0
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            2
        }
        Err(Failure::Pipeline(e)) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn out_path(cli: &Cli, p: &Path) -> Result<PathBuf> {
    let path = if p.is_absolute() {
        p.to_path_buf()
    } else {
        cli.out_dir.join(p)
    };
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    Ok(path)
}

fn warn(cli: &Cli, msg: &str) {
    if !cli.quiet {
        eprintln!("warning: {msg}");
    }
}

fn cmd_init(cli: &Cli, a: &InitArgs) -> CmdResult {
    let config = ModelConfig {
        layers: a.layers,
        dim: a.dim,
        heads: a.heads,
        patch: a.patch,
        seq_len: a.seq_len,
        ff_mult: a.ff_mult,
        init_seed: a.init_seed,
    };
    config
        .validate()
        .map_err(|e| Failure::Usage(e.to_string()))?;
    let w = model::init_model(&config)?;
    let path = out_path(cli, &a.out)?;
    w.write(&path)?;
    Ok(format!(
        "model: L={} D={} H={} P={} T={} params={} hash={}",
        config.layers,
        config.dim,
        config.heads,
        config.patch,
        config.seq_len,
        config.param_count(),
        io::hex(w.model_hash())
    ))
}

fn cmd_gen(cli: &Cli, a: &GenArgs) -> CmdResult {
    if a.classes.is_empty() {
        return Err(Failure::Usage("--classes must name at least one class".into()));
    }
    if a.n == 0 || a.length == 0 {
        return Err(Failure::Usage("--n and --len must be >= 1".into()));
    }
    if a.period.is_nan() || a.period <= 0.0 {
        return Err(Failure::Usage(format!("--period {} must be > 0", a.period)));
    }
    let specs: Vec<GenSpec> = a
        .classes
        .iter()
        .map(|&c| GenSpec::with_period(c, a.period))
        .collect();
    let set = synthgen::make_dataset(&specs, a.n, a.length, cli.seed, a.normalize)?;
    let path = out_path(cli, &a.out)?;
    set.write(&path)?;
    Ok(format!(
        "dataset: n={} T={} classes={} checksum={}",
        set.len(),
        set.length(),
        set.classes.len(),
        io::hex(set.checksum())
    ))
}

fn steer_config(a: &CaptureArgs, layers: usize) -> std::result::Result<SteerConfig, Failure> {
    let mode = match (a.mode, a.token) {
        (ModeArg::All, None) => TokenMode::AllTokens,
        (ModeArg::Last, None) => TokenMode::SingleToken(None),
        (ModeArg::Token, Some(j)) => TokenMode::SingleToken(Some(j)),
        (ModeArg::Token, None) => return Err(Failure::Usage("--mode token needs --token".into())),
        (_, Some(_)) => return Err(Failure::Usage("--token requires --mode token".into())),
    };
    let layer_sel = if a.steer_layers.is_empty() {
        LayerSelection::All
    } else {
        LayerSelection::Only(a.steer_layers.clone())
    };
    let cfg = SteerConfig {
        lambda: a.lambda,
        mode,
        layers: layer_sel,
    };
    if !cfg.lambda.is_finite() {
        return Err(Failure::Usage("--lambda must be finite".into()));
    }
    if let LayerSelection::Only(sel) = &cfg.layers {
        if let Some(l) = sel.iter().find(|&&l| l == 0 || l > layers) {
            return Err(Failure::Usage(format!(
                "--steer-layers {l} outside 1..={layers}"
            )));
        }
    }
    Ok(cfg)
}

fn cmd_capture(cli: &Cli, a: &CaptureArgs) -> CmdResult {
    let weights = Weights::read(&a.model)?;
    let data = SeriesSet::read(&a.data)?;
    let layers = weights.config.layers;
    let cfg = steer_config(a, layers)?;
    let mask = match &a.skip_plan {
        Some(p) => {
            let plan: PruningPlan = io::read_json(p)?;
            if plan.total_layers != layers {
                return Err(Failure::Pipeline(Error::InvalidArgument(format!(
                    "plan covers {} layers, model has {layers}",
                    plan.total_layers
                ))));
            }
            SkipMask::from_plan(&plan)?
        }
        None => SkipMask::none(layers),
    };
    let matrix = match &a.steer {
        Some(p) => {
            let m = SteeringMatrix::read(p)?;
            if m.model_hash != weights.model_hash() {
                return Err(Failure::Pipeline(Error::ModelMismatch {
                    expected: weights.model_hash(),
                    found: m.model_hash,
                }));
            }
            if let Some(msg) = cfg.lambda_warning() {
                warn(cli, &msg);
            }
            Some(m)
        }
        None => None,
    };
    let steer = matrix.as_ref().map(|m| Steer {
        matrix: m,
        config: &cfg,
    });
    let caps = model::capture(&weights, &data, &mask, steer)?;
    let mut extra = serde_json::Map::new();
    extra.insert("skipped".into(), mask.skipped_count().into());
    if let Some(m) = &matrix {
        extra.insert("steering".into(), format!("{}->{}", m.source, m.target).into());
        extra.insert("lambda".into(), cfg.lambda.into());
    }
    extra.insert(
        "classes".into(),
        serde_json::to_value(&data.classes).expect("class names serialize"),
    );
    let path = out_path(cli, &a.out)?;
    caps.write(&path, extra)?;
    let d = caps.dims();
    Ok(format!(
        "captures: shape ({}, {}, {}, {}) model={} data={}",
        d[0],
        d[1],
        d[2],
        d[3],
        io::hex(caps.model_hash),
        io::hex(caps.dataset_checksum)
    ))
}

fn capture_classes(meta: &io::MetaSidecar) -> Vec<PatternClass> {
    meta.extra
        .get("classes")
        .and_then(|v| serde_json::from_value(v.clone()).ok())
        .unwrap_or_default()
}

fn cmd_sim(cli: &Cli, a: &SimArgs) -> CmdResult {
    let (ca, _) = CaptureSet::read(&a.a)?;
    let cb = match &a.b {
        Some(p) => Some(CaptureSet::read(p)?.0),
        None => None,
    };
    let opts = LayerMatrixOptions {
        metric: a.metric,
        reduction: a.reduction,
        include_embedding: a.include_embedding,
    };
    let sim = similarity::layer_matrix(&ca, cb.as_ref().unwrap_or(&ca), opts)?;
    let path = out_path(cli, &a.out)?;
    sim.write(&path)?;
    if let Some(svg) = &a.svg {
        let scaled = unit_range(&sim.values);
        io::write_svg_heatmap(out_path(cli, svg)?, &scaled, &format!("{} similarity", a.metric))?;
    }
    let (r, c) = sim.values.shape();
    Ok(format!("similarity: {r}x{c} metric={} reduction={}", a.metric, a.reduction))
}

fn format_blocks(set: &BlockSet) -> String {
    let inner: Vec<String> = set
        .blocks
        .iter()
        .map(|b| format!("[{},{}]", b.start, b.end))
        .collect();
    format!("[{}]", inner.join(","))
}

fn cmd_blocks(cli: &Cli, a: &BlocksArgs) -> CmdResult {
    if !(a.tau > 0.0 && a.tau <= 1.0) {
        return Err(Failure::Usage(format!("--tau {} must be in (0, 1]", a.tau)));
    }
    if a.k < 2 {
        return Err(Failure::Usage(format!("--k {} must be >= 2", a.k)));
    }
    let sim = SimilarityMatrix::read(&a.sim)?;
    let set = blocks::identify_blocks(&sim, a.tau, a.k)?;
    io::write_json(out_path(cli, &a.out)?, &set)?;
    Ok(format!("blocks: {} tau={} k={}", format_blocks(&set), a.tau, a.k))
}

fn cmd_prune(cli: &Cli, a: &PruneArgs) -> CmdResult {
    let set: BlockSet = io::read_json(&a.blocks)?;
    let layers = a.layers.or(set.total_layers).ok_or_else(|| {
        Failure::Usage("block file has no total_layers; pass --layers".into())
    })?;
    let plan = blocks::plan_prune(&set, layers, a.selection)?;
    io::write_json(out_path(cli, &a.out)?, &plan)?;
    Ok(format!(
        "sparsity: {:.2}%",
        100.0 * blocks::encoder_sparsity(&plan)
    ))
}

fn cmd_bench(cli: &Cli, a: &BenchArgs) -> CmdResult {
    if a.reps < 10 {
        return Err(Failure::Usage(format!("--reps {} must be >= 10", a.reps)));
    }
    let weights = Weights::read(&a.model)?;
    let data = SeriesSet::read(&a.data)?;
    let plan: PruningPlan = io::read_json(&a.plan)?;
    if a.batch == 0 || a.batch > data.len() {
        return Err(Failure::Usage(format!(
            "--batch must be in 1..={}",
            data.len()
        )));
    }
    let rows: Vec<usize> = (0..a.batch).collect();
    let batch = data.subset(&rows).series;
    let base = blocks::bench(&weights, &PruningPlan::empty(plan.total_layers), a.reps, &batch)?;
    let pruned = blocks::bench(&weights, &plan, a.reps, &batch)?;
    let sparsity = blocks::encoder_sparsity(&plan);
    let reduction = 1.0 - pruned.median_ms / base.median_ms;
    let report = serde_json::json!({
        "unpruned": base,
        "pruned": pruned,
        "encoder_sparsity": sparsity,
        "latency_reduction": reduction,
    });
    io::write_json(out_path(cli, &a.out)?, &report)?;
    Ok(format!(
        "bench: unpruned median {:.3} ms, pruned median {:.3} ms, reduction {:.1}%, sparsity {:.2}%",
        base.median_ms,
        pruned.median_ms,
        100.0 * reduction,
        100.0 * sparsity
    ))
}

fn class_label(classes: &[PatternClass], class: PatternClass) -> std::result::Result<u32, Failure> {
    classes
        .iter()
        .position(|&c| c == class)
        .map(|i| i as u32)
        .ok_or_else(|| Failure::Pipeline(Error::EmptyClass(class.to_string())))
}

fn cmd_probe(cli: &Cli, a: &ProbeArgs) -> CmdResult {
    let (caps, meta) = CaptureSet::read(&a.captures)?;
    let classes = capture_classes(&meta);
    let mut opts = ProbeOptions::default();
    if let Some(c) = a.class_s {
        opts.label_s = class_label(&classes, c)?;
    }
    if let Some(c) = a.class_c {
        opts.label_c = class_label(&classes, c)?;
    }
    if opts.label_s == opts.label_c {
        return Err(Failure::Usage("--class-s and --class-c must differ".into()));
    }
    let curve = probe::probe_token_averaged(&caps, &opts)?;
    let null = probe::permutation_null(&caps, &opts, a.shuffles, cli.seed)?;
    let map = probe::ldr_map(&caps, &opts)?;
    let path = out_path(cli, &a.out)?;
    io::write_matrix_csv(&path, &map.values)?;
    let mut meta_out = io::MetaSidecar::new(
        io::ArtifactKind::Probes,
        vec![map.values.rows() as u64, map.values.cols() as u64],
    );
    meta_out.model_hash = Some(io::hex(caps.model_hash));
    meta_out.dataset_checksum = Some(io::hex(caps.dataset_checksum));
    meta_out.extra.insert("raw".into(), matrix_json(&map.raw));
    meta_out
        .extra
        .insert("heldout_accuracy".into(), curve.heldout_accuracy.clone().into());
    meta_out.extra.insert("permutation_null".into(), null.clone().into());
    meta_out.extra.insert(
        "flagged_cells".into(),
        map.flagged.iter().filter(|&&f| f).count().into(),
    );
    io::write_json(io::sidecar_path(&path), &meta_out)?;
    if let Some(svg) = &a.svg {
        io::write_svg_heatmap(out_path(cli, svg)?, &map.values, "LDR")?;
    }
    if let Some(p) = &a.probes {
        let stacked = probe::stack_probes(&map.probes, caps.dim());
        let values: Vec<f32> = stacked.as_slice().iter().map(|&v| v as f32).collect();
        let dims = vec![stacked.rows() as u64, stacked.cols() as u64];
        let target = out_path(cli, p)?;
        io::write_tensor(&target, &dims, &values)?;
        let mut m = io::MetaSidecar::new(io::ArtifactKind::Probes, dims);
        m.model_hash = Some(io::hex(caps.model_hash));
        m.dataset_checksum = Some(io::hex(caps.dataset_checksum));
        io::write_json(io::sidecar_path(&target), &m)?;
    }
    let (best_layer, best) = curve
        .heldout_accuracy
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, v)| if v > acc.1 { (i, v) } else { acc });
    let null_mean = null.iter().sum::<f64>() / null.len().max(1) as f64;
    Ok(format!(
        "probe: best layer {best_layer} accuracy {best:.4}, null mean {null_mean:.4}"
    ))
}

fn matrix_json(m: &Matrix) -> serde_json::Value {
    (0..m.rows())
        .map(|r| serde_json::Value::from(m.row(r).to_vec()))
        .collect::<Vec<_>>()
        .into()
}

fn cmd_derive(cli: &Cli, a: &DeriveArgs) -> CmdResult {
    let (caps, meta) = CaptureSet::read(&a.captures)?;
    let classes = capture_classes(&meta);
    let t = caps.with_label(class_label(&classes, a.target)?);
    let s = caps.with_label(class_label(&classes, a.source)?);
    let m = steer::derive_steering(&t, &s, a.stat, a.target.name(), a.source.name())?;
    m.write(out_path(cli, &a.out)?)?;
    let d = m.dims();
    Ok(format!(
        "steering: {} -> {} stat={} shape ({}, {}, {})",
        a.source, a.target, a.stat, d[0], d[1], d[2]
    ))
}

fn cmd_compose(cli: &Cli, a: &ComposeArgs) -> CmdResult {
    if !(0.0..=1.0).contains(&a.beta) {
        return Err(Failure::Usage(format!("--beta {} must be in [0, 1]", a.beta)));
    }
    let sa = SteeringMatrix::read(&a.a)?;
    let sb = SteeringMatrix::read(&a.b)?;
    let m = steer::compose(&sa, &sb, a.beta)?;
    m.write(out_path(cli, &a.out)?)?;
    Ok(format!("steering: composed beta={}", a.beta))
}

fn cmd_negate(cli: &Cli, a: &NegateArgs) -> CmdResult {
    let m = steer::negate(&SteeringMatrix::read(&a.input)?);
    m.write(out_path(cli, &a.out)?)?;
    Ok(format!("steering: {} -> {}", m.source, m.target))
}

fn cmd_pca(cli: &Cli, a: &PcaArgs) -> CmdResult {
    let (before, meta) = CaptureSet::read(&a.before)?;
    let (after, _) = CaptureSet::read(&a.after)?;
    if before.model_hash != after.model_hash {
        return Err(Failure::Pipeline(Error::ModelMismatch {
            expected: before.model_hash,
            found: after.model_hash,
        }));
    }
    if before.dataset_checksum != after.dataset_checksum {
        return Err(Failure::Pipeline(Error::SampleMismatch(
            "before and after come from different datasets".into(),
        )));
    }
    let classes = capture_classes(&meta);
    let steered = class_label(&classes, a.steered)?;
    let reference = before.with_label(class_label(&classes, a.reference)?);
    let layer = a.layer.unwrap_or(before.n_layers() - 1);
    if layer >= before.n_layers() {
        return Err(Failure::Usage(format!(
            "--layer {layer} outside 0..{}",
            before.n_layers()
        )));
    }
    let report = steer::steering_displacement_report(
        &before.with_label(steered),
        &after.with_label(steered),
        &reference,
        layer,
    )?;
    let path = out_path(cli, &a.out)?;
    std::fs::write(&path, report.to_csv()).map_err(|e| Error::io(&path, e))?;
    let (pca_frac, raw_frac) = report.closer_fractions();
    Ok(format!(
        "pca: layer {layer}, closer to {} centroid: {:.1}% (pca) {:.1}% (raw)",
        a.reference,
        100.0 * pca_frac,
        100.0 * raw_frac
    ))
}

/// Min-max rescale when values leave `[0, 1]`.
fn unit_range(m: &Matrix) -> Matrix {
    let inside = m.as_slice().iter().all(|v| (0.0..=1.0).contains(v));
    if inside {
        m.clone()
    } else {
        probe::min_max_scale(m)
    }
}

fn cmd_report(cli: &Cli, a: &ReportArgs) -> CmdResult {
    let mut written = Vec::new();
    for input in &a.inputs {
        let m = io::read_matrix_csv(input)?;
        let stem = input
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "matrix".into());
        let path = out_path(cli, Path::new(&format!("{stem}.svg")))?;
        io::write_svg_heatmap(&path, &unit_range(&m), &stem)?;
        written.push(path.display().to_string());
    }
    Ok(format!("report: {}", written.join(", ")))
}
