//! The `groupform` command-line tool.
//!
//! Every command that writes files also writes `<first output>.manifest.json`
//! recording the command, a hash of its settings, the seed, input and output
//! digests, versions and wall time.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};
use web_time::Instant;

use crate::contrastive::NceDenominator;
use crate::error::{Error, Result};
use crate::eval::{evaluate_pipeline, EvalOptions, MetricsReport};
use crate::formation::{
    bench_formation, bench_table, embed, enforce_max_group_size, form_groups, load_embeddings, save_embeddings,
    GroupAssignment,
};
use crate::graph::UserGraph;
use crate::grouprec::{aggregate, candidates, rank, CandidatePolicy, NeighborFilled, Preferences, Strategy};
use crate::ingest::{build_dataset, parse_interactions, subsample_top_users, Dataset, Delimiter};
use crate::synth::{generate, SynthSpec};
use crate::trainer::{grad_check, Checkpoint, DenseTerms, GradCheckInstance, TrainConfig, Trainer, LOG_HEADER};

pub const SEED_ENV: &str = "GROUPFORM_SEED";

#[derive(Debug, Parser)]
#[command(name = "groupform", version, about = "Ad-hoc group formation for group recommendation")]
pub struct Cli {
    /// Worker threads for data-parallel kernels; 1 gives bit-reproducible runs.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse, filter, split and normalise an interaction file into a dataset cache.
    Ingest(IngestArgs),
    /// Train the embedding model and write a checkpoint plus a training log.
    Train(TrainArgs),
    /// Compute fused user embeddings from a checkpoint.
    Embed(EmbedArgs),
    /// Partition users into K groups.
    Form(FormArgs),
    /// Write one ranked item list per group.
    Recommend(RecommendArgs),
    /// Score group recommendations against held-out items.
    Evaluate(EvaluateArgs),
    /// Time group formation over a list of K values.
    Bench(BenchArgs),
    /// Compare analytic gradients with finite differences on a small instance.
    Gradcheck(GradcheckArgs),
    /// Generate a planted-block interaction file with ground-truth labels.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value = "auto")]
    pub delimiter: Delimiter,
    #[arg(long, default_value_t = crate::ingest::DEFAULT_MIN_INTERACTIONS)]
    pub min_interactions: usize,
    #[arg(long, default_value_t = crate::ingest::DEFAULT_SPLIT_RATIO)]
    pub split_ratio: f64,
    /// Keep only the most active users (applied before filtering).
    #[arg(long)]
    pub top_users: Option<usize>,
    #[arg(long, env = SEED_ENV, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Flat `key = value` file; unknown keys are errors.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one config key, e.g. `--set lr=1e-4` (repeatable; wins over --config).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long, env = SEED_ENV)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out_checkpoint: PathBuf,
    /// Training log path; defaults to `<checkpoint>.log.tsv`.
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Continue from a checkpoint that carries training state.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Also save the checkpoint every N epochs.
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Baseline {
    /// Pearson-similarity farthest-first grouping.
    Similarity,
    /// K-Means on the raw rating rows.
    Kmeans,
    /// Diagonal Gaussian mixture on a spectral projection.
    Gmm,
}

#[derive(Debug, Args)]
pub struct FormArgs {
    /// Embedding file from `embed`.
    #[arg(long, required_unless_present = "baseline")]
    pub embeddings: Option<PathBuf>,
    /// Group with a classical baseline on the dataset's ratings instead.
    #[arg(long, value_enum, requires = "dataset", conflicts_with = "embeddings")]
    pub baseline: Option<Baseline>,
    /// Dataset cache; supplies user ids (row numbers are used without it).
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long, default_value_t = crate::formation::DEFAULT_K)]
    pub k: usize,
    #[arg(long, env = SEED_ENV, default_value_t = 0)]
    pub seed: u64,
    /// Split groups larger than this.
    #[arg(long)]
    pub max_group_size: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum PrefSource {
    /// Training ratings only; unrated items score 0.
    Observed,
    /// Unrated items filled from similarity-weighted neighbours.
    Neighbor,
}

#[derive(Debug, Args)]
pub struct PrefArgs {
    #[arg(long, value_enum, default_value = "neighbor")]
    pub preferences: PrefSource,
    /// not_consumed_by_all | not_consumed_by_any
    #[arg(long, default_value = "not_consumed_by_all")]
    pub candidates: CandidatePolicy,
    /// Neighbour cap of the graph used for neighbour-filled preferences.
    #[arg(long, default_value_t = crate::graph::DEFAULT_TOP_K)]
    pub graph_top_k: usize,
}

#[derive(Debug, Args)]
pub struct RecommendArgs {
    #[arg(long)]
    pub groups: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, default_value = "avg")]
    pub strategy: Strategy,
    #[arg(long, default_value_t = 20)]
    pub top_k: usize,
    #[command(flatten)]
    pub prefs: PrefArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub groups: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    /// avg | bc | lm | all
    #[arg(long, default_value = "all")]
    pub strategy: String,
    #[arg(long, value_delimiter = ',', default_value = "5,10,20")]
    pub k_list: Vec<usize>,
    #[command(flatten)]
    pub prefs: PrefArgs,
    /// Rank held-out items among this many sampled negatives per user.
    #[arg(long)]
    pub sampled_negatives: Option<usize>,
    #[arg(long, env = SEED_ENV, default_value_t = 0)]
    pub seed: u64,
    /// Report path (tab-separated); printed only when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub embeddings: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "2,4,8,16,32,64,128")]
    pub k_list: Vec<usize>,
    #[arg(long, env = SEED_ENV, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, env = SEED_ENV, default_value_t = 0)]
    pub seed: u64,
    /// Random coordinates per tensor.
    #[arg(long, default_value_t = 20)]
    pub coords: usize,
    /// sampled | exact
    #[arg(long, default_value = "sampled")]
    pub dense_terms: String,
    #[arg(long, default_value = "with_positive")]
    pub nce_denominator: NceDenominator,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 300)]
    pub users: usize,
    #[arg(long, default_value_t = 120)]
    pub items: usize,
    /// Branching per hierarchy level, e.g. `3` or `3,2,2`.
    #[arg(long, default_value = "3")]
    pub blocks: String,
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    #[arg(long, default_value_t = 0.3)]
    pub density: f64,
    #[arg(long, env = SEED_ENV, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Ground-truth labels; defaults to `<out>.labels.csv`.
    #[arg(long)]
    pub labels: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct FileDigest {
    path: String,
    sha256: String,
}

#[derive(Debug, Serialize)]
struct Versions {
    groupform: &'static str,
    dataset_format: u16,
    checkpoint_format: u16,
}

/// Provenance record written next to a command's outputs.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    command: String,
    config_hash: String,
    seed: Option<u64>,
    threads: Option<usize>,
    inputs: Vec<FileDigest>,
    outputs: Vec<FileDigest>,
    versions: Versions,
    wall_time_ms: f64,
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn digest(path: &Path) -> Result<FileDigest> {
    Ok(FileDigest {
        path: path.display().to_string(),
        sha256: sha256_hex(&fs::read(path).map_err(|e| Error::io(path, e))?),
    })
}

/// `<path>.<suffix>` next to `path`.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".");
    s.push(suffix);
    PathBuf::from(s)
}

struct Run {
    command: &'static str,
    settings: String,
    seed: Option<u64>,
    threads: Option<usize>,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    start: Instant,
}

impl Run {
    fn new(command: &'static str, settings: String, seed: Option<u64>, threads: Option<usize>) -> Self {
        Run {
            command,
            settings,
            seed,
            threads,
            inputs: Vec::new(),
            outputs: Vec::new(),
            start: Instant::now(),
        }
    }

    fn input(&mut self, p: &Path) {
        self.inputs.push(p.to_path_buf());
    }

    fn write(&mut self, p: &Path, bytes: &[u8]) -> Result<()> {
        crate::binio::write_atomic(p, bytes)?;
        self.outputs.push(p.to_path_buf());
        Ok(())
    }

    fn finish(self) -> Result<()> {
        let Some(first) = self.outputs.first() else {
            return Ok(());
        };
        let manifest = RunManifest {
            command: self.command.to_string(),
            config_hash: sha256_hex(self.settings.as_bytes()),
            seed: self.seed,
            threads: self.threads,
            inputs: self.inputs.iter().map(|p| digest(p)).collect::<Result<_>>()?,
            outputs: self.outputs.iter().map(|p| digest(p)).collect::<Result<_>>()?,
            versions: Versions {
                groupform: env!("CARGO_PKG_VERSION"),
                dataset_format: 1,
                checkpoint_format: 1,
            },
            wall_time_ms: self.start.elapsed().as_secs_f64() * 1e3,
        };
        let json = serde_json::to_string_pretty(&manifest).expect("manifest serialises");
        crate::binio::write_atomic(&sibling(first, "manifest.json"), json.as_bytes())
    }
}

fn configure_threads(threads: Option<usize>) -> Result<()> {
    let Some(n) = threads else { return Ok(()) };
    if n == 0 {
        return Err(Error::Config("--threads must be at least 1".into()));
    }
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    Ok(())
}

fn load_dataset(run: &mut Run, path: &Path) -> Result<Dataset> {
    run.input(path);
    Dataset::load(path)
}

fn load_groups(run: &mut Run, path: &Path, ds: &Dataset) -> Result<GroupAssignment> {
    run.input(path);
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    GroupAssignment::from_csv(&text, ds)
}

fn preferences<'a>(args: &PrefArgs, ds: &'a Dataset, graph: &'a Option<UserGraph>) -> Box<dyn Preferences + 'a> {
    match (args.preferences, graph) {
        (PrefSource::Neighbor, Some(g)) => Box::new(NeighborFilled {
            x: &ds.x_train,
            adjacency: &g.adjacency,
        }),
        _ => Box::new(ds.x_train.clone()),
    }
}

fn pref_graph(args: &PrefArgs, ds: &Dataset) -> Option<UserGraph> {
    (args.preferences == PrefSource::Neighbor).then(|| UserGraph::build(&ds.x_train, Some(args.graph_top_k)))
}

fn cmd_ingest(a: &IngestArgs, threads: Option<usize>) -> Result<()> {
    let mut run = Run::new("ingest", format!("{a:?}"), Some(a.seed), threads);
    run.input(&a.input);
    let mut records = parse_interactions(&a.input, a.delimiter)?;
    if let Some(n) = a.top_users {
        records = subsample_top_users(records, n);
    }
    let ds = build_dataset(records, a.min_interactions, a.split_ratio, a.seed)?;
    let s = ds.stats();
    run.write(&a.out, &ds.to_bytes())?;
    println!(
        "users {}  items {}  train interactions {}  test interactions {}  total {}",
        s.users,
        s.items,
        s.train_nnz,
        s.test_nnz,
        s.interactions()
    );
    run.finish()
}

fn train_config(a: &TrainArgs) -> Result<TrainConfig> {
    let mut cfg = match &a.config {
        Some(p) => TrainConfig::parse(&fs::read_to_string(p).map_err(|e| Error::io(p, e))?)?,
        None => TrainConfig::default(),
    };
    for kv in &a.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        cfg.set(k, v)?;
    }
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_train(a: &TrainArgs, threads: Option<usize>) -> Result<()> {
    let ds = Dataset::load(&a.dataset)?;
    let (resume, cfg) = match &a.resume {
        Some(p) => {
            let ckpt = Checkpoint::load(p)?;
            let cfg = ckpt
                .state
                .as_ref()
                .map(|s| s.config.clone())
                .ok_or_else(|| Error::Config(format!("{}: no training state to resume", p.display())))?;
            (Some(ckpt), cfg)
        }
        None => (None, train_config(a)?),
    };
    let mut run = Run::new("train", cfg.to_text(), Some(cfg.seed), threads);
    run.input(&a.dataset);
    if let Some(c) = &a.config {
        run.input(c);
    }
    if let Some(p) = &a.resume {
        run.input(p);
    }
    let graph = UserGraph::build(&ds.x_train, cfg.graph_top_k);
    let mut trainer = match resume {
        Some(ckpt) => Trainer::resume(&ds.x_train, &graph, ckpt, a.epochs)?,
        None => Trainer::new(&ds.x_train, &graph, cfg)?,
    };
    let log_path = a.log.clone().unwrap_or_else(|| sibling(&a.out_checkpoint, "log.tsv"));
    let append = a.resume.is_some() && log_path.exists();
    let mut log = fs::OpenOptions::new()
        .create(true)
        .write(true)
        .append(append)
        .truncate(!append)
        .open(&log_path)
        .map_err(|e| Error::io(&log_path, e))?;
    if !append {
        writeln!(log, "{LOG_HEADER}").map_err(|e| Error::io(&log_path, e))?;
    }
    let mut io_err = None;
    loop {
        if trainer.is_done() {
            break;
        }
        let rec = trainer.step()?;
        log::info!("epoch {} K={} loss={:.6e}", rec.epoch, rec.k, rec.total());
        if let Err(e) = writeln!(log, "{}", rec.to_row()).and_then(|_| log.flush()) {
            io_err = Some(Error::io(&log_path, e));
            break;
        }
        if let Some(every) = a.checkpoint_every {
            if every > 0 && trainer.next_epoch() % every == 0 && !trainer.is_done() {
                trainer.checkpoint().save(&a.out_checkpoint)?;
            }
        }
    }
    if let Some(e) = io_err {
        return Err(e);
    }
    drop(log);
    run.write(&a.out_checkpoint, &trainer.checkpoint().to_bytes())?;
    run.outputs.push(log_path);
    if let Some(last) = trainer.log().records.last() {
        println!("trained {} epoch(s); final loss {:.6e}", trainer.log().records.len(), last.total());
    }
    run.finish()
}

fn cmd_embed(a: &EmbedArgs, threads: Option<usize>) -> Result<()> {
    let mut run = Run::new("embed", format!("{a:?}"), None, threads);
    run.input(&a.checkpoint);
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let ds = load_dataset(&mut run, &a.dataset)?;
    let graph = UserGraph::build(&ds.x_train, ckpt.graph_top_k);
    let z = embed(&ckpt, &ds, &graph)?;
    save_embeddings(&a.out, z.view())?;
    run.outputs.push(a.out.clone());
    println!("embedded {} users into {} dimensions", z.nrows(), z.ncols());
    run.finish()
}

fn cmd_form(a: &FormArgs, threads: Option<usize>) -> Result<()> {
    let mut run = Run::new("form", format!("{a:?}"), Some(a.seed), threads);
    let ds = match &a.dataset {
        Some(p) => Some(load_dataset(&mut run, p)?),
        None => None,
    };
    let (mut groups, z) = match (a.baseline, &a.embeddings) {
        (Some(b), _) => {
            let x = &ds.as_ref().expect("clap requires --dataset").x_train;
            let g = match b {
                Baseline::Similarity => crate::grouprec::baselines::baseline_similarity_groups(x, a.k, a.seed)?,
                Baseline::Kmeans => crate::grouprec::baselines::baseline_kmeans_groups(x, a.k, a.seed)?,
                Baseline::Gmm => crate::grouprec::baselines::baseline_gmm_groups(x, a.k, a.seed)?,
            };
            (g, None)
        }
        (None, Some(p)) => {
            run.input(p);
            let z = load_embeddings(p)?;
            if let Some(ds) = &ds {
                if ds.n_users() != z.nrows() {
                    return Err(Error::Shape {
                        expected: format!("{} embedding rows", ds.n_users()),
                        found: format!("{}", z.nrows()),
                    });
                }
            }
            (form_groups(z.view(), a.k, a.seed)?, Some(z))
        }
        (None, None) => return Err(Error::Config("either --embeddings or --baseline is required".into())),
    };
    if let Some(m) = a.max_group_size {
        let z = match &z {
            Some(z) => z.clone(),
            None => ds.as_ref().expect("dataset present").x_train.to_dense(),
        };
        groups = enforce_max_group_size(z.view(), &groups, m, a.seed)?;
    }
    let ids: Vec<String> = match &ds {
        Some(ds) => ds.user_ids.clone(),
        None => (0..groups.membership.len()).map(|u| u.to_string()).collect(),
    };
    run.write(&a.out, groups.to_csv(&ids).as_bytes())?;
    println!(
        "{} users in {} groups (largest {}) in {:.3} ms",
        groups.membership.len(),
        groups.sizes.iter().filter(|&&s| s > 0).count(),
        groups.sizes.iter().max().copied().unwrap_or(0),
        groups.elapsed_ms
    );
    run.finish()
}

/// `group_id,rank,item_id,score` rows, ranks from 1.
pub fn ranked_lists_csv(groups: &GroupAssignment, ds: &Dataset, strategy: Strategy, prefs: &dyn Preferences, policy: CandidatePolicy, top_k: usize) -> String {
    let mut s = String::from("group_id,rank,item_id,score\n");
    for (g, mem) in groups.members().iter().enumerate() {
        if mem.is_empty() {
            continue;
        }
        let cand = candidates(mem, &ds.x_train, policy);
        let scores = aggregate(strategy, mem, prefs, &cand);
        let list = rank(g, &cand, &scores, top_k);
        for (r, (i, sc)) in list.items.iter().zip(&list.scores).enumerate() {
            s.push_str(&format!("{g},{},{},{sc:.6}\n", r + 1, ds.item_ids[*i as usize]));
        }
    }
    s
}

fn cmd_recommend(a: &RecommendArgs, threads: Option<usize>) -> Result<()> {
    let mut run = Run::new("recommend", format!("{a:?}"), None, threads);
    let ds = load_dataset(&mut run, &a.dataset)?;
    let groups = load_groups(&mut run, &a.groups, &ds)?;
    let graph = pref_graph(&a.prefs, &ds);
    let prefs = preferences(&a.prefs, &ds, &graph);
    let csv = ranked_lists_csv(&groups, &ds, a.strategy, prefs.as_ref(), a.prefs.candidates, a.top_k);
    run.write(&a.out, csv.as_bytes())?;
    run.finish()
}

fn cmd_evaluate(a: &EvaluateArgs, threads: Option<usize>) -> Result<()> {
    let mut run = Run::new("evaluate", format!("{a:?}"), Some(a.seed), threads);
    let strategies: Vec<Strategy> = if a.strategy == "all" {
        vec![Strategy::Avg, Strategy::Borda, Strategy::LeastMisery]
    } else {
        vec![a.strategy.parse()?]
    };
    if a.k_list.is_empty() || a.k_list.contains(&0) {
        return Err(Error::Config("--k-list needs positive values".into()));
    }
    let ds = load_dataset(&mut run, &a.dataset)?;
    let groups = load_groups(&mut run, &a.groups, &ds)?;
    let graph = pref_graph(&a.prefs, &ds);
    let prefs = preferences(&a.prefs, &ds, &graph);
    let opts = EvalOptions {
        k_list: a.k_list.clone(),
        candidates: a.prefs.candidates,
        sampled_negatives: a.sampled_negatives,
        seed: a.seed,
    };
    let reports: Vec<MetricsReport> = strategies
        .iter()
        .map(|&s| evaluate_pipeline(&groups, s, &ds, prefs.as_ref(), &opts))
        .collect();
    for r in &reports {
        print!("{}", r.to_table());
    }
    if let Some(out) = &a.out {
        let mut tsv = String::new();
        for (i, r) in reports.iter().enumerate() {
            let t = r.to_tsv();
            tsv.push_str(if i == 0 { &t } else { t.split_once('\n').map_or("", |x| x.1) });
        }
        run.write(out, tsv.as_bytes())?;
    }
    run.finish()
}

fn cmd_bench(a: &BenchArgs, threads: Option<usize>) -> Result<()> {
    let mut run = Run::new("bench", format!("{a:?}"), Some(a.seed), threads);
    run.input(&a.embeddings);
    let z = load_embeddings(&a.embeddings)?;
    let rows = bench_formation(z.view(), &a.k_list, a.seed)?;
    let table = bench_table(&rows);
    print!("{table}");
    if let Some(out) = &a.out {
        run.write(out, table.as_bytes())?;
    }
    run.finish()
}

fn cmd_gradcheck(a: &GradcheckArgs, threads: Option<usize>) -> Result<()> {
    let mut run = Run::new("gradcheck", format!("{a:?}"), Some(a.seed), threads);
    let dense = match a.dense_terms.as_str() {
        "sampled" => DenseTerms::Sampled,
        "exact" => DenseTerms::Exact,
        other => return Err(Error::Config(format!("dense-terms: unknown {other:?} (sampled|exact)"))),
    };
    let inst = GradCheckInstance::random(a.seed, dense, a.nce_denominator)?;
    let rep = grad_check(&inst, a.coords, a.seed)?;
    let text = rep.to_text();
    print!("{text}");
    println!(
        "max relative error {:.3e} (tolerance {:.0e}): {}",
        rep.max_rel_err(),
        rep.tolerance,
        if rep.passed() { "PASS" } else { "FAIL" }
    );
    if let Some(out) = &a.out {
        run.write(out, text.as_bytes())?;
    }
    run.finish()?;
    if rep.passed() {
        Ok(())
    } else {
        Err(Error::Numeric(format!("gradient check failed: max relative error {:.3e}", rep.max_rel_err())))
    }
}

fn cmd_synth(a: &SynthArgs, threads: Option<usize>) -> Result<()> {
    let mut run = Run::new("synth", format!("{a:?}"), Some(a.seed), threads);
    let spec = SynthSpec {
        users: a.users,
        items: a.items,
        blocks: SynthSpec::parse_blocks(&a.blocks)?,
        noise: a.noise,
        density: a.density,
        seed: a.seed,
    };
    let data = generate(&spec)?;
    run.write(&a.out, data.to_tsv().as_bytes())?;
    let labels = a.labels.clone().unwrap_or_else(|| sibling(&a.out, "labels.csv"));
    run.write(&labels, data.labels_csv().as_bytes())?;
    println!(
        "{} users, {} items, {} interactions, {} leaf blocks",
        a.users,
        a.items,
        data.records.len(),
        spec.leaves()
    );
    run.finish()
}

pub fn run(cli: &Cli) -> Result<()> {
    configure_threads(cli.threads)?;
    let t = cli.threads;
    match &cli.command {
        Command::Ingest(a) => cmd_ingest(a, t),
        Command::Train(a) => cmd_train(a, t),
        Command::Embed(a) => cmd_embed(a, t),
        Command::Form(a) => cmd_form(a, t),
        Command::Recommend(a) => cmd_recommend(a, t),
        Command::Evaluate(a) => cmd_evaluate(a, t),
        Command::Bench(a) => cmd_bench(a, t),
        Command::Gradcheck(a) => cmd_gradcheck(a, t),
        Command::Synth(a) => cmd_synth(a, t),
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
