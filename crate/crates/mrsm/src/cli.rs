use std::collections::BTreeSet;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use mrsm_core::corpus::Document;
use mrsm_core::engine::{build_pipeline_with, AccessPolicy, Engine, NoiseSweep, OwnerRegistry, SearchRequest, Selection, UserGrant};
use mrsm_core::eval::{bench_forest, bench_scaling, bench_tree_orders, bench_update, synthetic_corpus, BenchmarkConfig};
use mrsm_core::forest::Quota;
use mrsm_core::padding::{optimize_noise, sigma_grid, DiscriminatorConfig};
use mrsm_core::synth::{generate, SynthConfig};
use mrsm_core::{DocId, PartitionId};

use crate::bench::{self, SystemClock, TreeSpeedRow};
use crate::config::{split_keywords, RunConfig};
use crate::formats::{self, read_correlativity, write_json};
use crate::{Error, Result, RunDir};

/// Default run directory when `--run`/`--out` is not given.
pub const RUN_DIR_ENV: &str = "MRSM_RUN_DIR";

#[derive(Debug, Parser)]
#[command(name = "mrsm", version, about = "Multi-owner encrypted ranked keyword search")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build keys and the encrypted index forest from a corpus.
    Build(BuildArgs),
    /// Ranked search over a built run.
    Search(SearchArgs),
    /// Sweep the noise level and report the precision/privacy equilibrium.
    Tune(TuneArgs),
    /// Search and update benchmarks on a synthetic corpus.
    Bench(BenchArgs),
    /// Insert or delete documents in a built run.
    Update(UpdateArgs),
    /// Print partition, dictionary and tree statistics.
    Inspect(InspectArgs),
}

#[derive(Debug, Args, Default)]
pub struct PipelineFlags {
    /// Number of partitions.
    #[arg(long)]
    pub s: Option<usize>,
    /// Standard deviation of the padding noise.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Pseudo-keyword count per partition as a fraction of its keywords.
    #[arg(long = "U-ratio")]
    pub u_ratio: Option<f64>,
    /// Non-zero pseudo entries per index.
    #[arg(long)]
    pub omega: Option<usize>,
    /// Probe queries used to order leaves.
    #[arg(long = "R")]
    pub r: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// `key = value` file supplying any of these flags.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

impl PipelineFlags {
    fn run_config(&self) -> Result<RunConfig> {
        let flags = RunConfig {
            s: self.s,
            sigma: self.sigma,
            u_ratio: self.u_ratio,
            omega: self.omega,
            r: self.r,
            seed: self.seed,
            ..Default::default()
        };
        Ok(match &self.config {
            Some(path) => flags.or(RunConfig::load(path)?),
            None => flags,
        })
    }
}

#[derive(Debug, Args)]
pub struct BuildArgs {
    /// JSON-lines corpus.
    #[arg(long, conflicts_with = "synthetic")]
    pub corpus: Option<PathBuf>,
    /// Generate a synthetic corpus with this many documents instead.
    #[arg(long)]
    pub synthetic: Option<usize>,
    /// Dictionary size of the synthetic corpus.
    #[arg(long, default_value_t = 2000)]
    pub vocab: usize,
    /// Owners of the synthetic corpus (default: two per topic).
    #[arg(long)]
    pub owners: Option<usize>,
    /// Keyword correlativity matrices, one file per partition in order.
    #[arg(long)]
    pub correlativity: Vec<PathBuf>,
    /// Output run directory.
    #[arg(long, env = RUN_DIR_ENV)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub pipeline: PipelineFlags,
}

#[derive(Debug, Args)]
pub struct SearchArgs {
    #[arg(long, env = RUN_DIR_ENV)]
    pub run: Option<PathBuf>,
    /// Comma-separated keywords; `word:weight` sets a weight.
    #[arg(long)]
    pub keywords: Option<String>,
    #[arg(long)]
    pub k: Option<usize>,
    /// Search the `t` partitions covering most keywords (default: all).
    #[arg(long)]
    pub t: Option<usize>,
    /// Take `k` candidates from every tree instead of `ceil(k/t)`.
    #[arg(long)]
    pub full: bool,
    /// Comma-separated user attributes checked against `policy.json`.
    #[arg(long)]
    pub attrs: Option<String>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TuneArgs {
    #[arg(long, env = RUN_DIR_ENV)]
    pub run: Option<PathBuf>,
    /// `start:stop:step`.
    #[arg(long, default_value = "0.01:0.2:0.01")]
    pub grid: String,
    #[arg(long, default_value_t = 100)]
    pub k: usize,
    #[arg(long, default_value_t = 1)]
    pub t: usize,
    /// Sampled queries per noise level.
    #[arg(long, default_value_t = 200)]
    pub queries: usize,
    /// Keywords per query.
    #[arg(long, default_value_t = 2)]
    pub terms: usize,
    /// CSV path (default: `<run>/fig3_equilibrium.csv`).
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BenchKind {
    All,
    Tree,
    Forest,
    Scaling,
    Update,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Directory for the CSV files.
    #[arg(long, env = RUN_DIR_ENV)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = BenchKind::All)]
    pub which: BenchKind,
    #[arg(long, default_value_t = 2000)]
    pub docs: usize,
    #[arg(long, default_value_t = 4000)]
    pub vocab: usize,
    #[arg(long)]
    pub owners: Option<usize>,
    #[arg(long)]
    pub topics: Option<usize>,
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    #[arg(long, default_value_t = 1)]
    pub t: usize,
    #[arg(long, default_value_t = 1000)]
    pub queries: usize,
    #[arg(long, default_value_t = 1)]
    pub repetitions: usize,
    #[arg(long, default_value_t = 100)]
    pub updates: usize,
    /// Corpus sizes for the scaling run.
    #[arg(long, value_delimiter = ',', default_value = "250,500,1000,2000")]
    pub sizes: Vec<usize>,
    #[command(flatten)]
    pub pipeline: PipelineFlags,
}

#[derive(Debug, Args)]
pub struct UpdateArgs {
    #[arg(long, env = RUN_DIR_ENV)]
    pub run: Option<PathBuf>,
    /// JSON-lines documents to add.
    #[arg(long)]
    pub insert: Option<PathBuf>,
    /// Comma-separated document ids to remove.
    #[arg(long, value_delimiter = ',')]
    pub delete: Vec<u64>,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    #[arg(long, env = RUN_DIR_ENV)]
    pub run: Option<PathBuf>,
    /// Write the keyword dictionary here.
    #[arg(long)]
    pub dictionary: Option<PathBuf>,
    /// Write partition keywords and members here as JSON.
    #[arg(long)]
    pub partitions: Option<PathBuf>,
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code: 0 on success, 2 on usage errors, 1 otherwise.
pub fn dispatch<I, T>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(cli.command, out) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn required(path: Option<PathBuf>, what: &str) -> Result<PathBuf> {
    path.ok_or_else(|| Error::Config(format!("{what} is required (flag or {RUN_DIR_ENV})")))
}

fn io(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |e| Error::io(path, e)
}

pub fn run(command: Command, out: &mut dyn Write) -> Result<()> {
    match command {
        Command::Build(a) => build(a, out),
        Command::Search(a) => search(a, out),
        Command::Tune(a) => tune(a, out),
        Command::Bench(a) => bench(a, out),
        Command::Update(a) => update(a, out),
        Command::Inspect(a) => inspect(a, out),
    }
}

fn build(a: BuildArgs, out: &mut dyn Write) -> Result<()> {
    let cfg = a.pipeline.run_config()?;
    let engine_cfg = cfg.engine()?;
    let dir = RunDir::new(required(a.out.or(cfg.out.clone()), "--out")?);
    let docs: Vec<Document> = match (a.corpus.or(cfg.corpus.clone()), a.synthetic) {
        (Some(path), _) => formats::read_corpus(&path)?,
        (None, Some(n)) => {
            let mut s = SynthConfig::new(n, a.vocab, engine_cfg.seed);
            if let Some(o) = a.owners {
                s.owners = o;
            }
            generate(&s)?
        }
        (None, None) => return Err(Error::Config("--corpus or --synthetic is required".into())),
    };
    let correlativity = if a.correlativity.is_empty() {
        None
    } else {
        Some(a.correlativity.iter().map(|p| read_correlativity(p)).collect::<Result<Vec<_>>>()?)
    };
    let pipeline = build_pipeline_with(&docs, &engine_cfg, correlativity)?;
    let engine = Engine::from_pipeline(pipeline, OwnerRegistry::from_documents(&docs)?);
    dir.save(&engine)?;
    let p = &engine.proxy;
    writeln!(out, "built {} documents, {} keywords, s = {} in {}", docs.len(), p.dictionary.len(), p.s(), dir.path.display())
        .map_err(io(&dir.path))?;
    Ok(())
}

/// `word` or `word:weight`.
fn parse_keywords(s: &str) -> Result<Vec<(String, f64)>> {
    split_keywords(s)
        .into_iter()
        .map(|w| match w.rsplit_once(':') {
            Some((word, weight)) => weight
                .parse::<f64>()
                .map(|x| (word.to_string(), x))
                .map_err(|_| Error::Config(format!("bad keyword weight in {w:?}"))),
            None => Ok((w, 1.0)),
        })
        .collect()
}

fn search(a: SearchArgs, out: &mut dyn Write) -> Result<()> {
    let file = match &a.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let dir = RunDir::new(required(a.run.or(file.run.clone()), "--run")?);
    let keywords = match (a.keywords, file.keywords) {
        (Some(k), _) => parse_keywords(&k)?,
        (None, Some(k)) => k.into_iter().map(|w| (w, 1.0)).collect(),
        (None, None) => return Err(Error::Config("--keywords is required".into())),
    };
    let mut engine = dir.load()?;
    let s = engine.proxy.s();
    let mut request = SearchRequest { keywords, ..SearchRequest::new::<&str>(&[], a.k.or(file.k).unwrap_or(10)) };
    if let Some(t) = a.t.or(file.t) {
        request = request.select(Selection::Covering(t));
    }
    if a.full {
        request = request.quota(Quota::Full);
    }
    let policy_path = dir.file("policy.json");
    let grant = if policy_path.is_file() {
        let policy: AccessPolicy = formats::read_json(&policy_path)?;
        let attrs: BTreeSet<String> = a.attrs.as_deref().map(split_keywords).unwrap_or_default().into_iter().collect();
        policy.grant(0, attrs, s)
    } else {
        UserGrant::all(0, s)
    };
    let result = engine.query(&request, &grant)?;
    dir.save_proxy(&engine.proxy)?;
    for (rank, h) in result.hits.iter().enumerate() {
        writeln!(out, "{}\t{}\t{:.6}", rank + 1, h.doc_id.0, h.score).map_err(io(&dir.path))?;
    }
    Ok(())
}

fn parse_grid(s: &str) -> Result<Vec<f64>> {
    let parts: Vec<f64> = s
        .split(':')
        .map(|x| x.trim().parse::<f64>().map_err(|_| Error::Config(format!("bad grid {s:?}"))))
        .collect::<Result<_>>()?;
    match parts[..] {
        [a, b, c] => Ok(sigma_grid(a, b, c)?),
        [a] => Ok(vec![a]),
        _ => Err(Error::Config(format!("grid must be start:stop:step, got {s:?}"))),
    }
}

fn tune(a: TuneArgs, out: &mut dyn Write) -> Result<()> {
    let dir = RunDir::new(required(a.run, "--run")?);
    let engine = dir.load()?;
    let docs = engine.owners.documents();
    let grid = parse_grid(&a.grid)?;
    let pipeline = mrsm_core::engine::build_pipeline(&docs, &engine.proxy.config)?;
    let requests = bench::equilibrium_requests(&pipeline, &docs, a.k, a.t, a.queries, a.terms, engine.proxy.config.seed)?;
    if requests.is_empty() {
        return Err(Error::Config(format!("no query has {} matching documents; lower --k", a.k)));
    }
    let mut sweep = NoiseSweep::new(&pipeline, requests, engine.proxy.config.seed)?;
    let report = optimize_noise(&mut sweep, &grid, &DiscriminatorConfig::default())?;
    let csv = a.csv.unwrap_or_else(|| dir.file("fig3_equilibrium.csv"));
    bench::write_equilibrium(&csv, &report)?;
    let w = io(&csv);
    writeln!(out, "sigma\tprecision\trank_privacy\tf\tdisc_acc").map_err(&w)?;
    for (i, r) in report.rows.iter().enumerate() {
        let mark = if i == report.best { "\t*" } else { "" };
        writeln!(out, "{:.3}\t{:.2}\t{:.2}\t{:.3}\t{:.3}{mark}", r.sigma, r.precision, r.rank_privacy, r.f, r.discriminator_accuracy)
            .map_err(&w)?;
    }
    writeln!(out, "sigma* = {}", report.sigma_star()).map_err(&w)?;
    Ok(())
}

fn bench(a: BenchArgs, out: &mut dyn Write) -> Result<()> {
    let dir = required(a.out, "--out")?;
    std::fs::create_dir_all(&dir).map_err(io(&dir))?;
    let engine = a.pipeline.run_config()?.engine()?;
    let topics = a.topics.unwrap_or_else(|| a.docs.div_ceil(500).max(1));
    let config = BenchmarkConfig {
        docs: a.docs,
        vocabulary: a.vocab,
        owners: a.owners.unwrap_or(2 * topics),
        topics,
        s: engine.s.unwrap_or(4),
        k: a.k,
        t: a.t,
        queries: a.queries,
        repetitions: a.repetitions,
        updates: a.updates,
        seed: engine.seed,
        ..BenchmarkConfig::default()
    };
    config.validate()?;
    let clock = SystemClock;
    let w = io(&dir);
    let want = |k: BenchKind| a.which == BenchKind::All || a.which == k;
    let docs = synthetic_corpus(&config)?;
    let mut speed = Vec::new();
    if want(BenchKind::Tree) {
        for r in bench_tree_orders(&docs, &config, &engine, &clock)? {
            speed.push(TreeSpeedRow::new("a", &r));
        }
    }
    if want(BenchKind::Forest) {
        for r in bench_forest(&docs, &config, &engine, &clock)? {
            speed.push(TreeSpeedRow::new("b", &r));
        }
    }
    if !speed.is_empty() {
        bench::write_tree_speed(&dir.join("fig4_tree_speed.csv"), &speed)?;
        for r in &speed {
            writeln!(out, "fig4{} {:<12} nodes {:>9.1} (var {:>10.1})  {:.3e} s", r.panel, r.variant, r.mean_nodes, r.var_nodes, r.mean_seconds)
                .map_err(&w)?;
        }
    }
    if want(BenchKind::Scaling) {
        let rows = bench_scaling(&a.sizes, &config, &engine, &clock)?;
        bench::write_scaling(&dir.join("fig5_scaling.csv"), &rows)?;
        for r in &rows {
            writeln!(out, "fig5 N={:<6} single {:>9.1}  forest {:>9.1}", r.docs, r.single_nodes, r.forest_nodes).map_err(&w)?;
        }
    }
    if want(BenchKind::Update) {
        let mut fresh_cfg = SynthConfig::new(config.docs + config.updates, config.vocabulary, config.seed);
        fresh_cfg.owners = config.owners;
        fresh_cfg.topics = config.topics;
        let all = generate(&fresh_cfg)?;
        let known: BTreeSet<DocId> = docs.iter().map(|d| d.doc_id).collect();
        // Only documents whose words all exist, so no dictionary growth is timed.
        let dict = mrsm_core::corpus::build_dictionary(&docs)?;
        let fresh: Vec<Document> = all
            .into_iter()
            .filter(|d| !known.contains(&d.doc_id) && d.distinct_terms().all(|t| dict.position(t).is_some()))
            .collect();
        let u = bench_update(&docs, &fresh, &config, &engine)?;
        bench::write_updates(&dir.join("update_cost.csv"), &u)?;
        let mean = |xs: &[usize]| xs.iter().sum::<usize>() as f64 / xs.len().max(1) as f64;
        writeln!(
            out,
            "update forest {:.2} nodes/insert, single {:.2}; measured ratio {:.3}, log(N/s)/log N = {:.3}, (2/s)log(N/s)/(2 log N) = {:.3}",
            mean(&u.forest_touched),
            mean(&u.single_touched),
            mean(&u.forest_touched) / mean(&u.single_touched).max(1.0),
            u.per_insert_ratio,
            u.amortized_ratio
        )
        .map_err(&w)?;
    }
    Ok(())
}

fn update(a: UpdateArgs, out: &mut dyn Write) -> Result<()> {
    let dir = RunDir::new(required(a.run, "--run")?);
    let mut engine = dir.load()?;
    let w = io(&dir.path);
    for id in a.delete {
        let o = engine.delete_document(DocId(id))?;
        writeln!(out, "deleted {id} from partition {} ({} nodes{})", o.partition.0, o.touched, if o.rebuilt { ", rebuilt" } else { "" })
            .map_err(&w)?;
    }
    if let Some(path) = a.insert {
        for doc in formats::read_corpus(&path)? {
            let id = doc.doc_id.0;
            let o = engine.insert_document(doc)?;
            writeln!(
                out,
                "inserted {id} into partition {} ({} nodes, {} new keywords{})",
                o.partition.0,
                o.touched,
                o.new_keywords,
                if o.rebuilt { ", rebuilt" } else { "" }
            )
            .map_err(&w)?;
        }
    }
    dir.save(&engine)
}

#[derive(serde::Serialize)]
struct PartitionRecord {
    id: usize,
    keywords: Vec<String>,
    members: Vec<u64>,
    pseudo: usize,
    omega: usize,
}

fn inspect(a: InspectArgs, out: &mut dyn Write) -> Result<()> {
    let dir = RunDir::new(required(a.run, "--run")?);
    let engine = dir.load()?;
    let p = &engine.proxy;
    let w = io(&dir.path);
    let docs = engine.owners.documents();
    let owners: BTreeSet<_> = docs.iter().map(|d| d.owner_id).collect();
    writeln!(out, "documents {}  owners {}  keywords {}  partitions {}", docs.len(), owners.len(), p.dictionary.len(), p.s()).map_err(&w)?;
    writeln!(out, "part\tkeywords\tdocs\tpseudo\tomega\tdepth").map_err(&w)?;
    for (i, part) in p.partitions.partitions.iter().enumerate() {
        let n = &p.noise.partitions[i];
        let depth = p.forest.tree(PartitionId(i))?.tree.depth();
        writeln!(out, "{i}\t{}\t{}\t{}\t{}\t{depth}", part.width(), part.members.len(), n.pseudo, n.omega).map_err(&w)?;
    }
    if let Some(path) = a.dictionary {
        formats::write_dictionary(&path, &p.dictionary)?;
    }
    if let Some(path) = a.partitions {
        let records: Vec<PartitionRecord> = p
            .partitions
            .partitions
            .iter()
            .enumerate()
            .map(|(i, part)| PartitionRecord {
                id: i,
                keywords: part.keywords.iter().filter_map(|&g| p.dictionary.word(g).map(String::from)).collect(),
                members: part.members.iter().map(|m| m.doc_id.0).collect(),
                pseudo: p.noise.partitions[i].pseudo,
                omega: p.noise.partitions[i].omega,
            })
            .collect();
        write_json(&path, &records)?;
    }
    Ok(())
}
