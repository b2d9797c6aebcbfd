use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use anyhow::{bail, ensure, Context, Result};
use op2vec::apk::extract_application;
use op2vec::classifier::{self, read_checkpoint, stratified_split, write_checkpoint};
use op2vec::corpus::{self, build_vocabulary, corpus_pairs, pair_count, sha256_hex, CorpusFile, ManifestEntry};
use op2vec::dataset::{embed_sequence, read_dataset, write_dataset, EmbeddedProgram};
use op2vec::dex::opcodes;
use op2vec::dex::ExtractOptions;
use op2vec::embedding::{embeddings, read_table, train, train_parallel, write_table, write_text_table};
use op2vec::sequence::write_opsq;
use op2vec::Label;
use rayon::prelude::*;
use serde_json::json;

use crate::config::LoadedConfig;
use crate::{CorpusArgs, EmbedArgs, EvaluateArgs, ExtractArgs, TrainClassifierArgs, TrainEmbeddingsArgs};

const DEFAULT_PROGRESS_EVERY: usize = 100;

/// Line-oriented progress on standard error.
pub struct Progress {
    enabled: bool,
}

impl Progress {
    pub fn new(enabled: bool) -> Self {
        Progress { enabled }
    }

    pub fn line(&self, msg: impl AsRef<str>) {
        if self.enabled {
            eprintln!("{}", msg.as_ref());
        }
    }

    fn counter<'a>(&'a self, stage: &'a str, total: usize, every: usize) -> impl Fn() + Sync + 'a {
        let done = AtomicUsize::new(0);
        move || {
            let n = done.fetch_add(1, Ordering::Relaxed) + 1;
            if every > 0 && (n % every == 0 || n == total) {
                self.line(format!("{stage}: {n}/{total} files"));
            }
        }
    }
}

fn print_json(v: &serde_json::Value) {
    println!("{v}");
}

fn thread_pool(jobs: Option<usize>) -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(j) = jobs {
        ensure!(j > 0, "--jobs must be at least 1");
        b = b.num_threads(j);
    }
    b.build().context("starting worker threads")
}

fn is_program(p: &Path) -> bool {
    matches!(p.extension().and_then(|e| e.to_str()), Some("apk" | "dex"))
}

/// Files named directly, plus the `.apk`/`.dex` files of named directories
/// in name order.
fn expand_inputs(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = fs::read_dir(p)
                .with_context(|| format!("listing {}", p.display()))?
                .map(|e| e.map(|e| e.path()))
                .collect::<Result<_, _>>()
                .with_context(|| format!("listing {}", p.display()))?;
            found.retain(|f| f.is_file() && is_program(f));
            found.sort();
            out.extend(found);
        } else {
            ensure!(p.exists(), "{}: no such file", p.display());
            out.push(p.clone());
        }
    }
    ensure!(!out.is_empty(), "no .apk or .dex inputs found");
    Ok(out)
}

fn label_lookup(labels: Option<&Path>) -> Result<HashMap<PathBuf, Label>> {
    let Some(path) = labels else {
        return Ok(HashMap::new());
    };
    let base = path.parent().unwrap_or(Path::new("."));
    let mut map = HashMap::new();
    for e in corpus::read_manifest(path)? {
        if let Some(l) = e.label {
            map.insert(base.join(&e.path), l);
            map.insert(e.path, l);
        }
    }
    Ok(map)
}

fn find_label(map: &HashMap<PathBuf, Label>, input: &Path) -> Option<Label> {
    if let Some(&l) = map.get(input) {
        return Some(l);
    }
    let canon = fs::canonicalize(input).ok();
    map.iter()
        .find(|(k, _)| canon.is_some() && fs::canonicalize(k).ok() == canon)
        .map(|(_, &l)| l)
}

pub fn extract(args: &ExtractArgs, progress: &Progress) -> Result<()> {
    let cfg = LoadedConfig::load(args.config.as_deref())?.config;
    let inputs = expand_inputs(&args.inputs)?;
    let labels = label_lookup(args.labels.as_deref())?;
    let default_label = args.label.map(Label::try_from).transpose().expect("clap restricts --label to 0 or 1");

    let mut names = BTreeMap::new();
    for input in &inputs {
        let stem = input
            .file_stem()
            .and_then(|s| s.to_str())
            .with_context(|| format!("{}: file name is not valid UTF-8", input.display()))?;
        let name = format!("{stem}.opsq");
        if let Some(prev) = names.insert(name.clone(), input.clone()) {
            bail!("{} and {} would both be written to {name}", prev.display(), input.display());
        }
    }

    let opts = ExtractOptions {
        unknown_opcodes: args.unk_policy.unwrap_or(cfg.unk_policy),
        verify_checksum: !args.no_verify_checksum,
        verify_signature: args.verify_signature,
    };
    let every = cfg.progress_every.unwrap_or(DEFAULT_PROGRESS_EVERY);
    let tick = progress.counter("extract", inputs.len(), every);
    let pool = thread_pool(args.jobs)?;
    let sequences = pool.install(|| {
        inputs
            .par_iter()
            .map(|p| {
                let r = extract_application(p, &opts).with_context(|| format!("extracting {}", p.display()));
                tick();
                r
            })
            .collect::<Result<Vec<_>>>()
    })?;

    fs::create_dir_all(&args.output).with_context(|| format!("creating {}", args.output.display()))?;
    let mut entries = Vec::with_capacity(inputs.len());
    let mut tokens = 0;
    for (input, seq) in inputs.iter().zip(&sequences) {
        let name = format!("{}.opsq", input.file_stem().unwrap().to_str().unwrap());
        let out = args.output.join(&name);
        write_opsq(&out, &seq.opcodes)?;
        let bytes = fs::read(&out).with_context(|| format!("reading back {}", out.display()))?;
        tokens += seq.len();
        entries.push(ManifestEntry {
            path: PathBuf::from(name),
            label: find_label(&labels, input).or(default_label),
            token_count: Some(seq.len() as u64),
            sha256: Some(sha256_hex(&bytes)),
        });
    }
    let manifest = args.output.join("manifest.json");
    corpus::write_manifest(&manifest, &entries)?;
    print_json(&json!({
        "files": entries.len(),
        "tokens": tokens,
        "unlabelled": entries.iter().filter(|e| e.label.is_none()).count(),
        "manifest": manifest,
    }));
    Ok(())
}

pub fn corpus(args: &CorpusArgs) -> Result<()> {
    let cfg = LoadedConfig::load(args.config.as_deref())?.config;
    let mode = args.vocab_mode.unwrap_or(cfg.vocab_mode);
    let window = args.window.unwrap_or(cfg.embedding.window);
    ensure!(window > 0, "window must be at least 1");
    let corpus = CorpusFile::load(&args.manifest)?;
    let vocab = build_vocabulary(&corpus.sequences, mode)?;
    let mut counts = [0u64; 256];
    for s in &corpus.sequences {
        for &op in &s.opcodes {
            counts[op as usize] += 1;
        }
    }
    let entries: Vec<_> = vocab
        .opcodes()
        .iter()
        .enumerate()
        .map(|(i, &op)| {
            json!({
                "index": i,
                "opcode": op,
                "mnemonic": opcodes::mnemonic(op),
                "count": counts[op as usize],
            })
        })
        .collect();
    let out_of_vocab: u64 = (0..=255u8).filter(|&op| vocab.index_of(op).is_none()).map(|op| counts[op as usize]).sum();
    let pairs: usize = corpus.sequences.iter().map(|s| pair_count(s.len(), window)).sum();
    let doc = json!({ "mode": mode, "size": vocab.len(), "opcodes": entries });
    let mut text = serde_json::to_string_pretty(&doc)?;
    text.push('\n');
    fs::write(&args.output, text).with_context(|| format!("writing {}", args.output.display()))?;
    print_json(&json!({
        "sequences": corpus.sequences.len(),
        "total_tokens": corpus.total_tokens,
        "vocab_size": vocab.len(),
        "observed_opcodes": counts.iter().filter(|&&c| c > 0).count(),
        "out_of_vocabulary_tokens": out_of_vocab,
        "window": window,
        "pairs": pairs,
        "vocabulary": args.output,
    }));
    Ok(())
}

fn trace_path(table: &Path) -> PathBuf {
    let stem = table.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    table.with_file_name(format!("{stem}.trace.csv"))
}

pub fn train_embeddings(args: &TrainEmbeddingsArgs, progress: &Progress) -> Result<()> {
    let loaded = LoadedConfig::load(args.config.as_deref())?;
    let mut tc = loaded.config.embedding.clone();
    tc.seed = loaded.embedding_seed(args.seed)?;
    if let Some(v) = args.dim {
        tc.dim = v;
    }
    if let Some(v) = args.window {
        tc.window = v;
    }
    if let Some(v) = args.epochs {
        tc.epochs = v;
    }
    if let Some(v) = args.lr0 {
        tc.lr0 = v;
    }
    tc.validate()?;
    let mode = args.vocab_mode.unwrap_or(loaded.config.vocab_mode);

    let corpus = CorpusFile::load(&args.manifest)?;
    let vocab = build_vocabulary(&corpus.sequences, mode)?;
    let pairs = corpus_pairs(&corpus.sequences, &vocab, tc.window);
    progress.line(format!(
        "train-embeddings: {} tokens, V={}, {} pairs, {} epochs",
        corpus.total_tokens,
        vocab.len(),
        pairs.len(),
        tc.epochs
    ));
    let (model, trace) = match args.parallel {
        Some(n) if n > 1 => train_parallel(&pairs, vocab.len(), &tc, n)?,
        _ => train(&pairs, vocab.len(), &tc)?,
    };
    let table = embeddings(&model, &vocab);
    write_table(&args.output, &table)?;
    let trace_file = trace_path(&args.output);
    fs::write(&trace_file, trace.to_csv()).with_context(|| format!("writing {}", trace_file.display()))?;
    if let Some(text) = &args.text {
        write_text_table(text, &table)?;
    }
    print_json(&json!({
        "vocab_size": vocab.len(),
        "dim": tc.dim,
        "pairs": pairs.len(),
        "seed": tc.seed,
        "epoch_mean_loss": trace.epoch_mean_loss,
        "table": args.output,
        "trace": trace_file,
    }));
    Ok(())
}

pub fn embed(args: &EmbedArgs, progress: &Progress) -> Result<()> {
    let cfg = LoadedConfig::load(args.config.as_deref())?.config;
    let policy = args.unk_policy.unwrap_or(cfg.unk_policy);
    let table = read_table(&args.table)?;
    let corpus = CorpusFile::load(&args.manifest)?;
    let every = cfg.progress_every.unwrap_or(DEFAULT_PROGRESS_EVERY);
    let tick = progress.counter("embed", corpus.sequences.len(), every);
    let pool = thread_pool(args.jobs)?;
    let records = pool.install(|| {
        corpus
            .sequences
            .par_iter()
            .map(|s| {
                let r = embed_sequence(s, &table, policy).with_context(|| format!("embedding {}", s.source));
                tick();
                r
            })
            .collect::<Result<Vec<EmbeddedProgram>>>()
    })?;
    let summary = write_dataset(&args.output, &table, &records)?;
    print_json(&json!({
        "records": summary.record_count,
        "vocab_size": summary.vocab_size,
        "dim": summary.dim,
        "bytes": summary.bytes,
        "dataset": summary.path,
    }));
    Ok(())
}

pub fn train_classifier(args: &TrainClassifierArgs, progress: &Progress) -> Result<()> {
    let loaded = LoadedConfig::load(args.config.as_deref())?;
    let data = read_dataset(&args.dataset)?;
    let mut cc = loaded.config.classifier.clone();
    cc.seed = loaded.classifier_seed(args.seed)?;
    if loaded.classifier_channels_set() {
        ensure!(
            cc.channels == data.dim(),
            "config sets channels = {} but the dataset has dimension {}",
            cc.channels,
            data.dim()
        );
    } else {
        cc.channels = data.dim();
    }
    if let Some(v) = args.epochs {
        cc.epochs = v;
    }
    if let Some(v) = args.lr {
        cc.lr = v;
    }
    if let Some(v) = args.batch_size {
        cc.batch_size = v;
    }
    if let Some(v) = args.input_length {
        cc.input_length = v;
    }
    if let Some(v) = args.loss {
        cc.loss = v;
    }
    if let Some(v) = args.optimizer {
        cc.optimizer = v;
    }
    if let Some(v) = args.holdout {
        cc.holdout = v;
    }
    if let Some(v) = args.threshold {
        cc.threshold = v;
    }
    progress.line(format!(
        "train-classifier: {} records, L={}, D={}, {} epochs",
        data.records.len(),
        cc.input_length,
        cc.channels,
        cc.epochs
    ));
    let (model, reports) = classifier::train_classifier(&data.records, &cc)?;
    for r in &reports {
        println!("{}", serde_json::to_string(r)?);
    }
    write_checkpoint(&args.output, &model)?;
    progress.line(format!("train-classifier: wrote {}", args.output.display()));
    Ok(())
}

pub fn evaluate(args: &EvaluateArgs) -> Result<()> {
    let data = read_dataset(&args.dataset)?;
    let model = read_checkpoint(&args.model)?;
    ensure!(
        model.config.channels == data.dim(),
        "model expects {} channels but the dataset has dimension {}",
        model.config.channels,
        data.dim()
    );
    let threshold = args.threshold.unwrap_or(model.config.threshold);
    ensure!((0.0..=1.0).contains(&threshold), "threshold must be in [0, 1]");
    let records: Vec<EmbeddedProgram> = if args.holdout {
        let (_, held) = stratified_split(&data.records, model.config.holdout, model.config.seed);
        ensure!(!held.is_empty(), "the checkpoint was trained without a holdout");
        held.into_iter().map(|i| data.records[i].clone()).collect()
    } else {
        data.records
    };
    let metrics = classifier::evaluate(&model, &records, threshold)?;
    println!("{}", metrics.to_json());
    Ok(())
}
