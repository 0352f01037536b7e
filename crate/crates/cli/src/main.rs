use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use layoutdiff::diff::report;
use layoutdiff::doc::{load_document, save_document, Document};
use layoutdiff::encoder::{build_graph, build_graph_with, LayoutGraph};
use layoutdiff::featurize::{edge_feature, pool_visual};
use layoutdiff::gradsuite::{run_suite, INSTANCES};
use layoutdiff::matcher::{match_layouts, MatchMode, MatchOptions};
use layoutdiff::nn::Model;
use layoutdiff::pdfmini::{assign_runs_to_blocks, decode_stream, load_font_map, tokenize_stream};
use layoutdiff::synth::{gen_document, mutate_document, MutationConfig, Profile};
use layoutdiff::textembed::{load_external_embeddings, ExternalEmbeddings};
use layoutdiff::train::{
    evaluate, greedy_text_match, log_csv, metrics, train_with_progress, CorpusSpec, Metrics, TrainConfig,
};

const SEED_ENV: &str = "LAYOUTDIFF_SEED";

#[derive(Parser)]
#[command(name = "layoutdiff", version, about = "Compare document versions block by block")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Match two documents and print a redline report.
    Compare(CompareArgs),
    /// Train a matcher on a synthetic corpus.
    Train(TrainArgs),
    /// Write synthetic document pairs with ground truth.
    Synth(SynthArgs),
    /// Score a model on a synthetic corpus.
    Eval(EvalArgs),
    /// Check analytic gradients of every layer against finite differences.
    Gradcheck(GradcheckArgs),
    /// Add runs decoded from a content stream to a document.
    Ingest(IngestArgs),
}

#[derive(Args)]
struct MatchFlags {
    #[arg(long, default_value = "one2one")]
    mode: MatchMode,
    /// Cross-graph iterations (defaults to the model's value).
    #[arg(long = "K")]
    k: Option<usize>,
    /// Sinkhorn temperature (defaults to the model's value).
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long, default_value_t = 0.1)]
    theta: f64,
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
}

impl MatchFlags {
    fn resolve(&self, model: &Model) -> Result<MatchOptions> {
        let mut opts = MatchOptions::from_model(model).with_mode(self.mode);
        if let Some(k) = self.k {
            opts.iterations = k;
        }
        if let Some(tau) = self.tau {
            opts.tau = tau;
        }
        opts.theta = self.theta;
        opts.alpha = self.alpha;
        opts.validate().map_err(anyhow::Error::msg)?;
        Ok(opts)
    }
}

#[derive(Args)]
struct CompareArgs {
    doc_a: PathBuf,
    doc_b: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    matching: MatchFlags,
    /// Write the JSON report here.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write per-block and per-edge features of both documents as JSON.
    #[arg(long)]
    dump_features: Option<PathBuf>,
    /// Write both layout graphs as JSON.
    #[arg(long)]
    dump_graph: Option<PathBuf>,
    /// External text vectors for the first document (JSON map id -> vector).
    #[arg(long)]
    embeddings_a: Option<PathBuf>,
    #[arg(long)]
    embeddings_b: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    /// Corpus spec JSON: {n_pairs, profiles, intensity, seed, split_merge, held_out}.
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = 3e-3)]
    lr: f64,
    #[arg(long, default_value_t = 8)]
    batch: usize,
    /// Parameter initialization seed.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Discretization used for the held-out F1 column.
    #[arg(long, default_value = "one2one")]
    mode: MatchMode,
    #[arg(long = "K")]
    k: Option<usize>,
    #[arg(long)]
    tau: Option<f64>,
    /// Write the per-epoch CSV log here.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    pairs: usize,
    #[arg(long)]
    out: PathBuf,
    /// legal, article, or both (alternating).
    #[arg(long, default_value = "both")]
    profile: String,
    #[arg(long, default_value_t = 0.2)]
    intensity: f64,
    #[arg(long)]
    split_merge: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[command(flatten)]
    matching: MatchFlags,
    /// Overrides the corpus seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Also score the greedy text-cosine baseline.
    #[arg(long)]
    baseline: bool,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = INSTANCES)]
    instances: usize,
}

#[derive(Args)]
struct IngestArgs {
    doc: PathBuf,
    #[arg(long)]
    content_stream: PathBuf,
    /// Font map JSON: {"/F1": {"family": ..., "bold": ..., "italic": ...}}.
    #[arg(long)]
    font_map: PathBuf,
    /// Zero-based page the stream belongs to.
    #[arg(long, default_value_t = 0)]
    page: usize,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Compare(a) => compare(a),
        Command::Train(a) => train(a).map(|_| 0),
        Command::Synth(a) => synth(a).map(|_| 0),
        Command::Eval(a) => eval(a).map(|_| 0),
        Command::Gradcheck(a) => gradcheck(a),
        Command::Ingest(a) => ingest(a).map(|_| 0),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn seed_override(seed: u64) -> Result<u64> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v.trim().parse().with_context(|| format!("{SEED_ENV}={v:?} is not an integer")),
        Err(_) => Ok(seed),
    }
}

fn print_config(config: serde_json::Value) {
    eprintln!("config: {config}");
}

fn read_doc(path: &Path) -> Result<Document> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    load_document(&bytes).with_context(|| format!("parsing {}", path.display()))
}

fn read_model(path: &Path) -> Result<Model> {
    let bytes = fs::read(path).with_context(|| format!("reading model {}", path.display()))?;
    Model::from_bytes(&bytes).with_context(|| format!("loading model {}", path.display()))
}

fn read_corpus(path: &Path) -> Result<CorpusSpec> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let spec: CorpusSpec = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    spec.validate().map_err(anyhow::Error::msg)?;
    Ok(spec)
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn read_embeddings(path: Option<&PathBuf>) -> Result<Option<ExternalEmbeddings>> {
    path.map(|p| {
        let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        load_external_embeddings(&text).with_context(|| format!("parsing {}", p.display()))
    })
    .transpose()
}

fn graph_for(doc: &Document, include_semantic: bool, ext: Option<&ExternalEmbeddings>) -> LayoutGraph {
    match ext {
        Some(e) => build_graph_with(doc, include_semantic, |b| e.embed(&b.id, &b.text())),
        None => build_graph(doc, include_semantic),
    }
}

fn features_json(doc: &Document, graph: &LayoutGraph) -> serde_json::Value {
    let blocks: Vec<_> = doc
        .blocks
        .iter()
        .zip(&graph.nodes)
        .map(|(b, n)| {
            let page = doc.page_of(b);
            json!({
                "id": b.id,
                "semantic": n.semantic,
                "geometric": n.geometric,
                "visual": pool_visual(b, page.h),
                "text": n.text,
            })
        })
        .collect();
    let edges: Vec<_> = graph
        .edges
        .iter()
        .map(|e| {
            let (a, b) = (&doc.blocks[e.source], &doc.blocks[e.target]);
            let page = doc.page_of(a);
            json!({
                "source": a.id,
                "target": b.id,
                "relation": edge_feature(&a.bbox, &b.bbox, page.w, page.h),
            })
        })
        .collect();
    json!({ "blocks": blocks, "edges": edges })
}

fn compare(a: CompareArgs) -> Result<u8> {
    let model = read_model(&a.model)?;
    let opts = a.matching.resolve(&model)?;
    print_config(json!({
        "command": "compare",
        "doc_a": a.doc_a,
        "doc_b": a.doc_b,
        "model": a.model,
        "options": opts,
    }));
    let (doc1, doc2) = (read_doc(&a.doc_a)?, read_doc(&a.doc_b)?);
    let (e1, e2) = (read_embeddings(a.embeddings_a.as_ref())?, read_embeddings(a.embeddings_b.as_ref())?);
    let semantic = model.hyper.include_semantic;
    let (g1, g2) = (graph_for(&doc1, semantic, e1.as_ref()), graph_for(&doc2, semantic, e2.as_ref()));
    if let Some(path) = &a.dump_features {
        let dump = json!({ "a": features_json(&doc1, &g1), "b": features_json(&doc2, &g2) });
        write(path, serde_json::to_string_pretty(&dump)?)?;
    }
    if let Some(path) = &a.dump_graph {
        write(path, serde_json::to_string_pretty(&json!({ "a": g1, "b": g2 }))?)?;
    }
    let set = match_layouts(&g1, &g2, &model, &opts)?;
    let rep = report(&doc1, &doc2, &set);
    if let Some(path) = &a.out {
        write(path, rep.to_json())?;
    }
    print!("{}", rep.render(&doc1, &doc2));
    Ok(u8::from(rep.summary.has_differences()))
}

fn train(a: TrainArgs) -> Result<()> {
    let spec = read_corpus(&a.corpus)?;
    let mut cfg = TrainConfig {
        epochs: a.epochs,
        lr: a.lr,
        batch: a.batch,
        model_seed: seed_override(a.seed)?,
        mode: a.mode,
        ..TrainConfig::default()
    };
    if let Some(k) = a.k {
        cfg.hyper.iterations = k;
    }
    if let Some(tau) = a.tau {
        cfg.hyper.tau = tau;
    }
    print_config(json!({ "command": "train", "corpus": spec, "train": cfg, "out": a.out }));
    let (model, log) = train_with_progress(&cfg, &spec, |e| {
        eprintln!("epoch {:>3}  loss {:.6}  held-out f1 {:.4}", e.epoch, e.loss, e.f1);
    })?;
    write(&a.out, model.to_bytes())?;
    if let Some(path) = &a.log {
        write(path, log_csv(&log))?;
    }
    println!("wrote {}", a.out.display());
    Ok(())
}

fn profiles(name: &str) -> Result<Vec<Profile>> {
    Ok(match name {
        "both" => vec![Profile::Legal, Profile::Article],
        other => vec![other.parse().map_err(anyhow::Error::msg)?],
    })
}

fn synth(a: SynthArgs) -> Result<()> {
    let seed = seed_override(a.seed)?;
    let profiles = profiles(&a.profile)?;
    print_config(json!({
        "command": "synth",
        "seed": seed,
        "pairs": a.pairs,
        "profiles": profiles,
        "intensity": a.intensity,
        "split_merge": a.split_merge,
        "out": a.out,
    }));
    MutationConfig::from_intensity(a.intensity, a.split_merge, seed)
        .validate()
        .map_err(anyhow::Error::msg)?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    for k in 0..a.pairs {
        let pair_seed = seed.wrapping_add(k as u64);
        let doc = gen_document(pair_seed, profiles[k % profiles.len()]);
        let cfg = MutationConfig::from_intensity(a.intensity, a.split_merge, pair_seed);
        let (mutated, gt) = mutate_document(&doc, &cfg);
        let dir = a.out.join(format!("pair-{k:03}"));
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        write(&dir.join("doc_a.json"), save_document(&doc))?;
        write(&dir.join("doc_b.json"), save_document(&mutated))?;
        write(&dir.join("gt.json"), serde_json::to_string_pretty(&gt)?)?;
    }
    println!("wrote {} pairs to {}", a.pairs, a.out.display());
    Ok(())
}

fn metrics_json(m: &Metrics) -> serde_json::Value {
    json!({
        "pairs": m.pairs,
        "splits": m.splits,
        "merges": m.merges,
        "deleted": m.deleted,
        "inserted": m.inserted,
        "split_merge": m.split_merge(),
        "overall": m.overall,
    })
}

fn eval(a: EvalArgs) -> Result<()> {
    let model = read_model(&a.model)?;
    let opts = a.matching.resolve(&model)?;
    let mut spec = read_corpus(&a.corpus)?;
    if let Some(seed) = a.seed {
        spec.seed = seed;
    }
    if std::env::var(SEED_ENV).is_ok() {
        spec.seed = seed_override(spec.seed)?;
    }
    print_config(json!({ "command": "eval", "model": a.model, "corpus": spec, "options": opts }));
    let m = evaluate(&model, &spec, &opts)?;
    let mut out = json!({ "model": metrics_json(&m) });
    if a.baseline {
        let samples = spec.pairs();
        let preds: Vec<_> = samples.iter().map(|s| greedy_text_match(&s.doc_a, &s.doc_b)).collect();
        let b = metrics(preds.iter().zip(samples.iter().map(|s| &s.gt)));
        out["baseline"] = metrics_json(&b);
    }
    println!("{}", serde_json::to_string_pretty(&out)?);
    eprintln!("overall F1 {:.4}", m.overall.f1);
    Ok(())
}

fn gradcheck(a: GradcheckArgs) -> Result<u8> {
    let seed = seed_override(a.seed)?;
    if a.instances == 0 {
        bail!("--instances must be positive");
    }
    print_config(json!({ "command": "gradcheck", "seed": seed, "instances": a.instances }));
    let checks = run_suite(seed, a.instances);
    println!("{:<16} {:>9} {:>12} {:>10}  result", "layer", "instances", "max rel err", "threshold");
    for c in &checks {
        println!(
            "{:<16} {:>9} {:>12.3e} {:>10.0e}  {}",
            c.layer.name(),
            c.instances,
            c.max_rel_err,
            c.threshold,
            if c.passed() { "ok" } else { "FAIL" }
        );
    }
    Ok(if checks.iter().all(|c| c.passed()) { 0 } else { 1 })
}

fn ingest(a: IngestArgs) -> Result<()> {
    print_config(json!({
        "command": "ingest",
        "doc": a.doc,
        "content_stream": a.content_stream,
        "font_map": a.font_map,
        "page": a.page,
        "out": a.out,
    }));
    let doc = read_doc(&a.doc)?;
    let Some(page) = doc.pages.get(a.page) else {
        bail!("page {} out of range ({} pages)", a.page, doc.pages.len());
    };
    let stream = fs::read(&a.content_stream).with_context(|| format!("reading {}", a.content_stream.display()))?;
    let fonts_text = fs::read_to_string(&a.font_map).with_context(|| format!("reading {}", a.font_map.display()))?;
    let fonts = load_font_map(&fonts_text).with_context(|| format!("parsing {}", a.font_map.display()))?;
    let tokens = tokenize_stream(&stream)?;
    for d in &tokens.diagnostics {
        log::warn!("content stream: {d}");
    }
    let runs = decode_stream(&tokens.tokens, &fonts, page.h)?;
    let (out, rep) = assign_runs_to_blocks(&runs, a.page, &doc);
    for r in &rep.unassigned {
        log::warn!("run {:?} at {:?} lies outside every block", r.run.text, r.anchor);
    }
    write(&a.out, save_document(&out))?;
    println!(
        "assigned {} of {} runs; wrote {}",
        runs.len() - rep.unassigned.len(),
        runs.len(),
        a.out.display()
    );
    Ok(())
}
