//! Glue from raw records to model inputs.

use hiersumm_tensor::ParamStore;

use crate::encoder::GraphSlot;
use crate::error::{Error, Result};
use crate::graphs::{adg_graph_text, similarity_graph_text, source_adjacency, ParaGraph};
use crate::model::Example;
use crate::ranker::{rank_and_select, Ranker};
use crate::text::{bpe_train, Instance, Record, Vocab};

/// Every text field of every record.
pub fn corpus_texts(records: &[Record]) -> impl Iterator<Item = &str> {
    records.iter().flat_map(|r| {
        std::iter::once(r.title.as_str())
            .chain(r.paragraphs.iter().map(String::as_str))
            .chain(std::iter::once(r.target.as_str()))
    })
}

pub fn train_vocab(records: &[Record], size: usize) -> Result<Vocab> {
    bpe_train(corpus_texts(records), size)
}

/// Graph over the paragraphs at `selected` (original indices, rank order).
pub fn paragraph_graph(rec: &Record, selected: &[usize], kind: GraphSlot) -> Result<Option<ParaGraph>> {
    let texts: Vec<&str> = selected.iter().map(|&i| rec.paragraphs[i].as_str()).collect();
    Ok(match kind {
        GraphSlot::None => None,
        GraphSlot::Similarity => Some(similarity_graph_text(&texts)),
        GraphSlot::Discourse => {
            let adjacent = match &rec.sources {
                Some(s) => source_adjacency(selected, s),
                None => Vec::new(),
            };
            Some(adg_graph_text(&texts, &adjacent)?)
        }
    })
}

/// Top-`lprime` ranked paragraphs of `rec`, tokenized, with the requested graph.
/// Paragraphs that tokenize to nothing are dropped before selection.
pub fn build_example(rec: &Record, vocab: &Vocab, lprime: usize, kind: GraphSlot) -> Result<Example> {
    let selected: Vec<usize> = rec
        .ranked_indices()
        .into_iter()
        .filter(|&i| !vocab.encode(&rec.paragraphs[i]).is_empty())
        .take(lprime)
        .collect();
    if selected.is_empty() {
        return Err(Error::Data(format!("instance {:?} has no usable paragraphs", rec.title)));
    }
    Ok(Example {
        title: vocab.encode(&rec.title),
        paragraphs: selected.iter().map(|&i| vocab.encode(&rec.paragraphs[i])).collect(),
        target: vocab.encode(&rec.target),
        graph: paragraph_graph(rec, &selected, kind)?,
    })
}

/// Examples for every usable record; records without paragraphs are
/// skipped with a warning.
pub fn build_examples(records: &[Record], vocab: &Vocab, lprime: usize, kind: GraphSlot) -> Result<Vec<Example>> {
    let mut out = Vec::with_capacity(records.len());
    for (i, r) in records.iter().enumerate() {
        if r.paragraphs.iter().all(|p| vocab.encode(p).is_empty()) {
            log::warn!("skipping instance {} ({:?}): no paragraphs", i + 1, r.title);
            continue;
        }
        out.push(build_example(r, vocab, lprime, kind)?);
    }
    Ok(out)
}

/// Store the ranker's ordering of every record's paragraphs, truncated to
/// `lprime`.
pub fn rank_records(records: &[Record], vocab: &Vocab, ranker: &Ranker, store: &ParamStore, lprime: usize) -> Result<Vec<Record>> {
    records
        .iter()
        .map(|r| {
            let mut inst = Instance::from_record(r, vocab);
            inst.selection = None;
            let usable: Vec<usize> = (0..inst.paragraphs.len()).filter(|&i| !inst.paragraphs[i].is_empty()).collect();
            let mut out = r.clone();
            if inst.title.is_empty() || usable.is_empty() {
                out.selection = Some(usable.iter().take(lprime).map(|&i| i + 1).collect());
                return Ok(out);
            }
            let scores: Vec<f64> = usable
                .iter()
                .map(|&i| ranker.score_paragraph(store, &inst.title, &inst.paragraphs[i]))
                .collect::<Result<_>>()?;
            let order = rank_and_select(&scores, lprime);
            out.selection = Some(order.iter().map(|&k| usable[k] + 1).collect());
            Ok(out)
        })
        .collect()
}
