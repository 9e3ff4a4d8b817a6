use std::fs;
use std::path::{Path, PathBuf};

use hiersumm_core::baselines::{lead, lexrank};
use hiersumm_core::checkpoint::{fingerprint, Checkpoint, Fingerprint};
use hiersumm_core::config::Config;
use hiersumm_core::encoder::GraphSlot;
use hiersumm_core::gradcheck::gradient_suite;
use hiersumm_core::graphs::{GraphKind, ParaGraph};
use hiersumm_core::model::Model;
use hiersumm_core::parallel::par_map;
use hiersumm_core::pipeline::{build_example, rank_records, train_vocab};
use hiersumm_core::ranker::{train_ranker, Ranker, RankerConfig};
use hiersumm_core::rouge::{eval_tokens, RougeTriple};
use hiersumm_core::text::dataset::{clone_filter_record, write_jsonl};
use hiersumm_core::text::{load_dataset, Instance, Record, Vocab};
use hiersumm_core::training::{train, CheckpointSink, TrainState};
use hiersumm_tensor::gradcheck::CheckOptions;
use hiersumm_tensor::ParamStore;
use serde::{Deserialize, Serialize};

use crate::{Command, GraphArg, System};

#[derive(Debug)]
pub struct CliError {
    pub kind: &'static str,
    pub message: String,
}

impl From<hiersumm_core::Error> for CliError {
    fn from(e: hiersumm_core::Error) -> Self {
        let kind = e.kind();
        let text = e.to_string();
        let message = text.strip_prefix(&format!("{kind}: ")).unwrap_or(&text).to_string();
        CliError { kind, message }
    }
}

fn usage(message: impl Into<String>) -> CliError {
    CliError {
        kind: "usage",
        message: message.into(),
    }
}

type Result<T> = std::result::Result<T, CliError>;

pub fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Tokenize {
            input,
            vocab_size,
            out,
            filtered_dir,
        } => tokenize(&input, vocab_size, &out, filtered_dir.as_deref()),
        Command::RankTrain {
            train,
            vocab,
            config,
            out,
        } => rank_train(&train, &vocab, config.as_deref(), &out),
        Command::Rank {
            input,
            vocab,
            ranker,
            config,
            lprime,
            out,
        } => rank(&input, &vocab, &ranker, config.as_deref(), lprime, &out),
        Command::Graph {
            input,
            vocab,
            kind,
            lprime,
            out,
        } => graph(&input, &vocab, kind, lprime, &out),
        Command::Train {
            config,
            vocab,
            train,
            valid,
            resume,
            out,
        } => train_cmd(&config, &vocab, &train, valid.as_deref(), resume.as_deref(), &out),
        Command::Generate {
            input,
            system,
            model,
            checkpoint,
            vocab,
            beam,
            alpha,
            max_len,
            graph,
            lprime,
            total_tokens,
            out,
        } => {
            let records = load_dataset(&input)?;
            let summaries = match system {
                System::Lead => records.iter().map(lead_summary).collect(),
                System::Lexrank => records.iter().map(lexrank_summary).collect(),
                System::Ht => {
                    let dir = model.ok_or_else(|| usage("--system ht needs --model"))?;
                    let o = Overrides {
                        beam,
                        alpha,
                        max_len,
                        graph,
                        lprime,
                        total_tokens,
                    };
                    ht_summaries(&records, &dir, checkpoint.as_deref(), vocab.as_deref(), o)?
                }
            };
            let lines: Vec<Summary> = records
                .iter()
                .zip(summaries)
                .map(|(r, summary)| Summary {
                    title: r.title.clone(),
                    summary,
                })
                .collect();
            write_jsonl(&out, &lines)?;
            Ok(())
        }
        Command::Evaluate {
            candidates,
            references,
            out,
        } => evaluate(&candidates, &references, out.as_deref()),
        Command::Gradcheck { tolerance } => gradcheck(tolerance),
    }
}

fn slot(g: GraphArg) -> GraphSlot {
    match g {
        GraphArg::None => GraphSlot::None,
        GraphArg::Similarity => GraphSlot::Similarity,
        GraphArg::Discourse => GraphSlot::Discourse,
    }
}

fn load_config(path: Option<&Path>) -> Result<Config> {
    Ok(match path {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    })
}

fn tokenize(inputs: &[PathBuf], size: usize, out: &Path, filtered_dir: Option<&Path>) -> Result<()> {
    let files = inputs.iter().map(|p| load_dataset(p)).collect::<hiersumm_core::Result<Vec<_>>>()?;
    let vocab = train_vocab(&files.concat(), size)?;
    vocab.save(out)?;
    log::info!("vocabulary of {} entries written to {}", vocab.len(), out.display());
    let Some(dir) = filtered_dir else {
        return Ok(());
    };
    fs::create_dir_all(dir).map_err(|e| hiersumm_core::Error::io(dir, e))?;
    for (path, recs) in inputs.iter().zip(&files) {
        let kept: Vec<Record> = recs.iter().map(|r| clone_filter_record(r, &vocab)).collect();
        let removed: usize = recs.iter().zip(&kept).map(|(a, b)| a.paragraphs.len() - b.paragraphs.len()).sum();
        log::info!("{}: {removed} clone paragraphs removed", path.display());
        let name = path.file_name().ok_or_else(|| usage(format!("{} is not a file", path.display())))?;
        write_jsonl(&dir.join(name), &kept)?;
    }
    Ok(())
}

fn ranker_config(config: Option<&Path>, vocab: &Vocab) -> Result<RankerConfig> {
    let mut rc = load_config(config)?.ranker;
    rc.vocab = vocab.len();
    Ok(rc)
}

fn ranker_fingerprint(c: &RankerConfig) -> Fingerprint {
    fingerprint(&format!("ranker\nvocab = {}\nd_emb = {}\nhidden = {}\n", c.vocab, c.d_emb, c.hidden))
}

fn rank_train(train_path: &Path, vocab_path: &Path, config: Option<&Path>, out: &Path) -> Result<()> {
    let vocab = Vocab::load(vocab_path)?;
    let rc = ranker_config(config, &vocab)?;
    let data: Vec<Instance> = load_dataset(train_path)?.iter().map(|r| Instance::from_record(r, &vocab)).collect();
    let (_, store, curve) = train_ranker(rc.clone(), &data)?;
    let last = curve.last().copied().unwrap_or(f64::NAN);
    Checkpoint::capture(ranker_fingerprint(&rc), curve.len() as u64, last, &store, None).save(out)?;
    Ok(())
}

fn load_ranker(path: &Path, rc: RankerConfig) -> Result<(Ranker, ParamStore)> {
    let ckpt = Checkpoint::load(path)?;
    ckpt.check_fingerprint(&ranker_fingerprint(&rc))?;
    let mut store = ParamStore::new();
    let ranker = Ranker::new(rc, &mut store);
    ckpt.restore_params(&mut store)?;
    Ok((ranker, store))
}

fn rank(input: &Path, vocab_path: &Path, ranker_path: &Path, config: Option<&Path>, lprime: usize, out: &Path) -> Result<()> {
    if lprime == 0 {
        return Err(usage("--lprime must be positive"));
    }
    let records = load_dataset(input)?;
    let vocab = Vocab::load(vocab_path)?;
    let (ranker, store) = load_ranker(ranker_path, ranker_config(config, &vocab)?)?;
    let ranked = rank_records(&records, &vocab, &ranker, &store, lprime)?;
    write_jsonl(out, &ranked)?;
    Ok(())
}

fn usable(rec: &Record, vocab: &Vocab) -> bool {
    rec.paragraphs.iter().any(|p| !vocab.encode(p).is_empty())
}

fn graph(input: &Path, vocab_path: &Path, kind: GraphArg, lprime: usize, out: &Path) -> Result<()> {
    let slot = slot(kind);
    let gk = match slot {
        GraphSlot::Similarity => GraphKind::Similarity,
        GraphSlot::Discourse => GraphKind::Discourse,
        GraphSlot::None => return Err(usage("--kind must be similarity or discourse")),
    };
    let vocab = Vocab::load(vocab_path)?;
    let records = load_dataset(input)?;
    let mut graphs = Vec::with_capacity(records.len());
    for (i, r) in records.iter().enumerate() {
        let g = if usable(r, &vocab) {
            build_example(r, &vocab, lprime, slot)?.graph.expect("graph slot is set")
        } else {
            log::warn!("instance {} has no usable paragraphs", i + 1);
            ParaGraph::new(gk, 0, Vec::new())?
        };
        graphs.push(g);
    }
    write_jsonl(out, &graphs)?;
    Ok(())
}

#[derive(Serialize)]
struct TrainSummary {
    train_loss: Vec<(u64, f64)>,
    val_loss: Vec<(u64, f64)>,
    best: Vec<BestEntry>,
}

#[derive(Serialize)]
struct BestEntry {
    step: u64,
    val_loss: f64,
    file: String,
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| hiersumm_core::Error::io(path, e).into())
}

fn train_cmd(config_path: &Path, vocab_path: &Path, train_path: &Path, valid: Option<&Path>, resume: Option<&Path>, out: &Path) -> Result<()> {
    let vocab = Vocab::load(vocab_path)?;
    let mut cfg = Config::load(config_path)?;
    if cfg.model.encoder.vocab != vocab.len() {
        log::info!("vocab size set to {} from {}", vocab.len(), vocab_path.display());
        cfg.model.encoder.vocab = vocab.len();
        cfg.ranker.vocab = vocab.len();
    }
    let e = &cfg.model.encoder;
    let examples = |p: &Path| -> Result<_> {
        let recs = load_dataset(p)?;
        Ok(hiersumm_core::pipeline::build_examples(&recs, &vocab, e.lprime, e.graph)?)
    };
    let train_set = examples(train_path)?;
    let val_set = match valid {
        Some(p) => examples(p)?,
        None => Vec::new(),
    };
    fs::create_dir_all(out).map_err(|err| hiersumm_core::Error::io(out, err))?;
    write_file(&out.join("config.txt"), cfg.to_text().as_bytes())?;
    vocab.save(&out.join("vocab.txt"))?;

    let mut store = ParamStore::new();
    let model = Model::new(cfg.model.clone(), &mut store)?;
    let fp = cfg.fingerprint();
    let mut state = match resume {
        Some(p) => {
            let ckpt = Checkpoint::load(p)?;
            ckpt.check_fingerprint(&fp)?;
            ckpt.restore_params(&mut store)?;
            let adam = ckpt.restore_adam(&store, hiersumm_core::training::adam_config())?;
            TrainState { store, adam }
        }
        None => TrainState::new(store),
    };
    let sink = CheckpointSink {
        dir: out,
        fingerprint: fp,
    };
    let report = train(&model, &mut state, &cfg.train, &train_set, &val_set, Some(&sink))?;
    let final_val = report.val_loss.last().map_or(f64::NAN, |v| v.1);
    Checkpoint::capture(fp, state.step(), final_val, &state.store, Some(&state.adam)).save(&out.join("final.bin"))?;
    let summary = TrainSummary {
        train_loss: report.train_loss,
        val_loss: report.val_loss,
        best: report
            .best
            .iter()
            .map(|b| BestEntry {
                step: b.step,
                val_loss: b.val_loss,
                file: b.path.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default(),
            })
            .collect(),
    };
    let json = serde_json::to_string_pretty(&summary).map_err(|e| usage(e.to_string()))?;
    write_file(&out.join("report.json"), json.as_bytes())?;
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct Summary {
    title: String,
    summary: String,
}

/// Lead and LexRank emit as many words as the reference has.
fn budget(rec: &Record) -> usize {
    eval_tokens(&rec.target).len().max(1)
}

fn lead_summary(rec: &Record) -> String {
    let title = eval_tokens(&rec.title);
    let paras: Vec<Vec<String>> = rec.ranked_indices().iter().map(|&i| eval_tokens(&rec.paragraphs[i])).collect();
    let refs: Vec<&[String]> = paras.iter().map(Vec::as_slice).collect();
    lead(&title, &refs, budget(rec)).tokens.join(" ")
}

fn lexrank_summary(rec: &Record) -> String {
    if rec.paragraphs.is_empty() {
        return String::new();
    }
    let paras: Vec<Vec<String>> = rec.paragraphs.iter().map(|p| eval_tokens(p)).collect();
    lexrank(&paras, budget(rec)).tokens.join(" ")
}

struct Overrides {
    beam: Option<usize>,
    alpha: Option<f64>,
    max_len: Option<usize>,
    graph: Option<GraphArg>,
    lprime: Option<usize>,
    total_tokens: Option<usize>,
}

fn ht_summaries(records: &[Record], dir: &Path, checkpoint: Option<&Path>, vocab: Option<&Path>, o: Overrides) -> Result<Vec<String>> {
    let mut cfg = Config::load(&dir.join("config.txt"))?;
    let fp = cfg.fingerprint();
    let vocab = Vocab::load(&vocab.map_or_else(|| dir.join("vocab.txt"), Path::to_path_buf))?;
    let ckpt = Checkpoint::load(&checkpoint.map_or_else(|| dir.join("final.bin"), Path::to_path_buf))?;
    ckpt.check_fingerprint(&fp)?;

    let e = &mut cfg.model.encoder;
    if let Some(g) = o.graph {
        e.graph = slot(g);
    }
    if let Some(l) = o.lprime {
        e.lprime = l;
    }
    if let Some(t) = o.total_tokens {
        e.total_tokens = t;
    }
    let b = &mut cfg.beam;
    b.beam = o.beam.unwrap_or(b.beam);
    b.alpha = o.alpha.unwrap_or(b.alpha);
    b.max_len = o.max_len.unwrap_or(b.max_len);
    cfg.validate()?;

    let mut store = ParamStore::new();
    let model = Model::new(cfg.model.clone(), &mut store)?;
    ckpt.restore_params(&mut store)?;
    let (lprime, kind, beam) = (cfg.model.encoder.lprime, cfg.model.encoder.graph, cfg.beam);
    let out = par_map(records, |i, r| -> Result<String> {
        if !usable(r, &vocab) {
            log::warn!("instance {} has no usable paragraphs", i + 1);
            return Ok(String::new());
        }
        let ex = build_example(r, &vocab, lprime, kind)?;
        let hyp = model.generate(&store, &ex, beam)?;
        Ok(vocab.decode(hyp.content()))
    });
    out.into_iter().collect()
}

#[derive(Deserialize)]
struct TextLine {
    summary: Option<String>,
    target: Option<String>,
}

fn summary_texts(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| hiersumm_core::Error::io(path, e))?;
    let parse = |line: usize, message: String| hiersumm_core::Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut out = Vec::new();
    for (i, l) in text.lines().enumerate() {
        if l.trim().is_empty() {
            continue;
        }
        let t: TextLine = serde_json::from_str(l).map_err(|e| parse(i + 1, e.to_string()))?;
        let s = t.summary.or(t.target).ok_or_else(|| parse(i + 1, "no summary or target field".into()))?;
        out.push(s);
    }
    Ok(out)
}

#[derive(Serialize)]
struct Scores {
    rouge1: Pair,
    rouge2: Pair,
    rouge_l: Pair,
}

#[derive(Serialize)]
struct Pair {
    f1: f64,
    recall: f64,
}

impl From<RougeTriple> for Scores {
    fn from(t: RougeTriple) -> Self {
        let p = |s: hiersumm_core::rouge::RougeScore| Pair {
            f1: s.f1,
            recall: s.recall,
        };
        Scores {
            rouge1: p(t.rouge1),
            rouge2: p(t.rouge2),
            rouge_l: p(t.rouge_l),
        }
    }
}

#[derive(Serialize)]
struct Evaluation {
    count: usize,
    mean: Scores,
    instances: Vec<Scores>,
}

fn evaluate(candidates: &Path, references: &Path, out: Option<&Path>) -> Result<()> {
    let cand = summary_texts(candidates)?;
    let refs = summary_texts(references)?;
    if cand.len() != refs.len() {
        return Err(hiersumm_core::Error::Data(format!("{} candidates for {} references", cand.len(), refs.len())).into());
    }
    let per: Vec<RougeTriple> = par_map(&cand, |i, c| RougeTriple::compute(&eval_tokens(c), &eval_tokens(&refs[i])));
    let result = Evaluation {
        count: per.len(),
        mean: RougeTriple::mean(&per).into(),
        instances: per.into_iter().map(Scores::from).collect(),
    };
    let mut json = serde_json::to_string_pretty(&result).map_err(|e| usage(e.to_string()))?;
    json.push('\n');
    match out {
        Some(p) => write_file(p, json.as_bytes()),
        None => {
            print!("{json}");
            Ok(())
        }
    }
}

fn gradcheck(tolerance: f64) -> Result<()> {
    let reports = gradient_suite(CheckOptions::default())?;
    let mut worst = 0.0f64;
    for r in &reports {
        for g in &r.groups {
            println!("{}\t{}\t{}\t{:.3e}", r.component, g.name, g.checked, g.max_rel_error);
            worst = worst.max(g.max_rel_error);
        }
    }
    println!("max\t{worst:.3e}");
    if worst > tolerance {
        return Err(CliError {
            kind: "gradcheck",
            message: format!("max relative error {worst:.3e} exceeds {tolerance:e}"),
        });
    }
    Ok(())
}
