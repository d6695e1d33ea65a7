use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;

use qreduce::baselines::{Baseline, DeletionStats};
use qreduce::encoder::{read_checkpoint, write_checkpoint, Encoder};
use qreduce::metrics::MetricsReport;
use qreduce::querylog::{generate_synthetic, parse_log, split_for_training, write_log};
use qreduce::reducer::{
    evaluate, greedy_reduce_traced, AggregatedScorer, AggregationWeight, CoreScorer, GreedyReducer, QueryReducer,
    SubScorer, ThresholdReducer,
};
use qreduce::tokenizer::Vocab;
use qreduce::trainer::{self, TrainObjective};
use qreduce::{Query, QueryPair};

use crate::config::RunConfig;

const SPLITS: [&str; 3] = ["train", "valid", "test"];
const VOCAB_FILE: &str = "vocab.txt";

fn required<'a>(p: &'a Option<PathBuf>, what: &str) -> Result<&'a Path> {
    p.as_deref().with_context(|| format!("missing {what} directory (--{what} or `{what} = ...`)"))
}

fn split_file(data: &Path, split: &str) -> PathBuf {
    data.join(format!("{split}.tsv"))
}

fn checkpoint_file(models: &Path, objective: TrainObjective) -> PathBuf {
    models.join(format!("{objective}.ckpt"))
}

fn existing(path: PathBuf) -> Result<PathBuf> {
    if !path.is_file() {
        bail!("{} does not exist", path.display());
    }
    Ok(path)
}

fn read_split(data: &Path, split: &str) -> Result<Vec<QueryPair>> {
    let path = existing(split_file(data, split))?;
    let reader = BufReader::new(File::open(&path)?);
    let (pairs, skipped) = parse_log(reader).with_context(|| format!("parsing {}", path.display()))?;
    if skipped > 0 {
        eprintln!("{}: skipped {skipped} malformed lines", path.display());
    }
    Ok(pairs)
}

#[derive(Serialize)]
struct Manifest {
    seed: u64,
    sessions: usize,
    placement: String,
    label_noise: f64,
    corrupted: usize,
    train: usize,
    valid: usize,
    test: usize,
}

pub fn gen_data(cfg: &RunConfig) -> Result<()> {
    let out = required(&cfg.out, "out")?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let synth = cfg.synth_config();
    let corpus = generate_synthetic(&synth)?;
    let split = split_for_training(&corpus.pairs, &cfg.split_spec())?;
    for (name, pairs) in SPLITS.iter().zip([&split.train, &split.valid, &split.test]) {
        let mut w = BufWriter::new(File::create(split_file(out, name))?);
        write_log(&mut w, pairs)?;
        w.flush()?;
    }
    let manifest = Manifest {
        seed: cfg.seed,
        sessions: synth.n_sessions,
        placement: synth.placement.to_string(),
        label_noise: synth.label_noise_rate,
        corrupted: corpus.corrupted_count(),
        train: split.train.len(),
        valid: split.valid.len(),
        test: split.test.len(),
    };
    let text = serde_json::to_string_pretty(&manifest)?;
    fs::write(out.join("manifest.json"), format!("{text}\n"))?;
    println!("{text}");
    Ok(())
}

fn vocab_bytes(v: &Vocab) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    v.write(&mut buf)?;
    Ok(buf)
}

pub fn train(cfg: &RunConfig) -> Result<()> {
    let data = required(&cfg.data, "data")?;
    let out = required(&cfg.out, "out")?;
    let train_pairs = read_split(data, "train")?;
    let valid_pairs = read_split(data, "valid")?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;

    let originals: Vec<Query> = train_pairs.iter().map(|p| p.original().clone()).collect();
    let vocab = Vocab::build(&originals, 1)?;
    let vocab_path = out.join(VOCAB_FILE);
    let bytes = vocab_bytes(&vocab)?;
    // The other head may already live in this directory.
    if vocab_path.exists() && fs::read(&vocab_path)? != bytes {
        bail!(
            "{} holds a different vocabulary; train both heads on the same data or use another --out",
            vocab_path.display()
        );
    }

    let tc = cfg.train_config();
    let model = Encoder::init(cfg.encoder_config(tc.objective, vocab.len()))?;
    let (best, stats) = trainer::train(model, &vocab, &train_pairs, &valid_pairs, &tc, &cfg.schedule)?;

    fs::write(&vocab_path, &bytes)?;
    let mut w = BufWriter::new(File::create(checkpoint_file(out, tc.objective))?);
    write_checkpoint(&mut w, &best)?;
    w.flush()?;
    let mut log = BufWriter::new(File::create(out.join(format!("{}.stats.jsonl", tc.objective)))?);
    for e in &stats.epochs {
        let line = serde_json::to_string(e)?;
        writeln!(log, "{line}")?;
        println!("{line}");
    }
    log.flush()?;
    eprintln!("best epoch {}", stats.best_epoch);
    Ok(())
}

struct Models {
    vocab: Vocab,
    core: Option<Encoder>,
    sub: Option<Encoder>,
}

impl Models {
    fn load(dir: &Path, need: &[TrainObjective]) -> Result<Self> {
        let vocab_path = existing(dir.join(VOCAB_FILE))?;
        let vocab = Vocab::read(BufReader::new(File::open(&vocab_path)?))
            .with_context(|| format!("reading {}", vocab_path.display()))?;
        let load = |objective| -> Result<Option<Encoder>> {
            if !need.contains(&objective) {
                return Ok(None);
            }
            let path = existing(checkpoint_file(dir, objective))?;
            let model = read_checkpoint(BufReader::new(File::open(&path)?))
                .with_context(|| format!("reading {}", path.display()))?;
            if model.config().vocab_size < vocab.len() {
                bail!("{} does not match {}", path.display(), vocab_path.display());
            }
            Ok(Some(model))
        };
        let core = load(TrainObjective::Core)?;
        let sub = load(TrainObjective::Sub)?;
        Ok(Self { vocab, core, sub })
    }

    fn core_scorer(&self) -> CoreScorer<'_> {
        let m = self.core.as_ref().expect("core model loaded");
        CoreScorer::new(m, &self.vocab, m.config().max_len)
    }

    fn sub_scorer(&self) -> SubScorer<'_> {
        let m = self.sub.as_ref().expect("sub model loaded");
        SubScorer::new(m, &self.vocab, m.config().max_len)
    }

    fn aggregated(&self, alpha: f64) -> Result<AggregatedScorer<SubScorer<'_>, CoreScorer<'_>>> {
        Ok(AggregatedScorer {
            sub: self.sub_scorer(),
            core: self.core_scorer(),
            alpha: AggregationWeight::new(alpha)?,
        })
    }
}

fn needed(reducer: &str) -> Result<&'static [TrainObjective]> {
    Ok(match reducer {
        "leftmost" | "rightmost" | "df-rm" | "cdf-rm" => &[],
        "core" => &[TrainObjective::Core],
        "sub" => &[TrainObjective::Sub],
        "agg" => &[TrainObjective::Core, TrainObjective::Sub],
        _ => bail!("unknown reducer {reducer:?} (expected leftmost, rightmost, df-rm, cdf-rm, core, sub or agg)"),
    })
}

pub fn eval(cfg: &RunConfig, reducer: &str, split: &str) -> Result<()> {
    let data = required(&cfg.data, "data")?;
    if split != "test" && split != "valid" {
        bail!("unknown split {split:?} (expected test or valid)");
    }
    let need = needed(reducer)?;
    let pairs = read_split(data, split)?;
    let models = if need.is_empty() {
        None
    } else {
        Some(Models::load(required(&cfg.models, "models")?, need)?)
    };
    let report: MetricsReport = match (reducer, &models) {
        ("leftmost", _) => evaluate(&Baseline::Leftmost { n_q: cfg.nq }, &pairs)?,
        ("rightmost", _) => evaluate(&Baseline::Rightmost { n_q: cfg.nq }, &pairs)?,
        ("df-rm" | "cdf-rm", _) => {
            let stats = DeletionStats::build(&read_split(data, "train")?);
            let b = if reducer == "df-rm" {
                Baseline::DfRm { n_q: cfg.nq, stats }
            } else {
                Baseline::CdfRm { n_q: cfg.nq, stats }
            };
            evaluate(&b, &pairs)?
        }
        ("core", Some(m)) => evaluate(
            &ThresholdReducer {
                scorer: m.core_scorer(),
                threshold: cfg.threshold,
            },
            &pairs,
        )?,
        ("sub", Some(m)) => evaluate(&GreedyReducer(m.sub_scorer()), &pairs)?,
        ("agg", Some(m)) => evaluate(&GreedyReducer(m.aggregated(cfg.alpha)?), &pairs)?,
        _ => unreachable!("reducer validated above"),
    };
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

pub fn reduce(cfg: &RunConfig, reducer: &str, query: &str, verbose: bool) -> Result<()> {
    let q = Query::parse(query)?;
    let need = needed(reducer)?;
    if need.is_empty() {
        bail!("reduce supports the core, sub and agg reducers");
    }
    let models = Models::load(required(&cfg.models, "models")?, need)?;
    if verbose && models.core.is_some() {
        let scores = models.core_scorer().term_scores(&q)?;
        for (t, p) in q.terms().iter().zip(scores.probs()) {
            eprintln!("{t}\t{p:.4}");
        }
    }
    let mask = match reducer {
        "core" => ThresholdReducer {
            scorer: models.core_scorer(),
            threshold: cfg.threshold,
        }
        .reduce(&q)?,
        _ => {
            let (mask, rounds) = if reducer == "sub" {
                greedy_reduce_traced(&models.sub_scorer(), &q)?
            } else {
                greedy_reduce_traced(&models.aggregated(cfg.alpha)?, &q)?
            };
            if verbose {
                for (i, r) in rounds.iter().enumerate() {
                    let cands: Vec<String> = r.candidates.iter().map(|(m, s)| format!("{m}={s:.4}")).collect();
                    eprintln!("round {}: {} -> {}", i + 1, cands.join(" "), r.best);
                }
            }
            mask
        }
    };
    println!("{}", q.apply(&mask)?);
    Ok(())
}

pub fn sweep_alpha(cfg: &RunConfig) -> Result<()> {
    let data = required(&cfg.data, "data")?;
    let pairs = read_split(data, "test")?;
    let models = Models::load(
        required(&cfg.models, "models")?,
        &[TrainObjective::Core, TrainObjective::Sub],
    )?;
    let mut out = std::io::stdout().lock();
    writeln!(out, "alpha\tem\tacc\tp\tr\tf1")?;
    for &alpha in &cfg.alpha_grid {
        let r = evaluate(&GreedyReducer(models.aggregated(alpha)?), &pairs)?.overall;
        writeln!(out, "{alpha}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}", r.em, r.acc, r.p, r.r, r.f1)?;
    }
    Ok(())
}
