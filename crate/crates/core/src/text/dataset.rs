//! JSON-lines instance files and tokenized instances.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::bpe::{TokenSeq, Vocab};
use crate::error::{Error, Result};
use crate::rouge::rouge_n;

/// One line of an instance file.
///
/// `sources` gives, per paragraph, the id of the page it came from;
/// consecutive paragraphs sharing an id are adjacent on that page.
/// `selection` lists 1-based paragraph indices in rank order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub title: String,
    pub paragraphs: Vec<String>,
    pub target: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sources: Option<Vec<u32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selection: Option<Vec<usize>>,
}

impl Record {
    /// Ranked paragraph indices (0-based): the stored selection if present,
    /// otherwise the original order.
    pub fn ranked_indices(&self) -> Vec<usize> {
        match &self.selection {
            Some(sel) => sel.iter().map(|&i| i - 1).collect(),
            None => (0..self.paragraphs.len()).collect(),
        }
    }

    fn validate(&self) -> std::result::Result<(), String> {
        if let Some(s) = &self.sources {
            if s.len() != self.paragraphs.len() {
                return Err(format!(
                    "sources has {} entries for {} paragraphs",
                    s.len(),
                    self.paragraphs.len()
                ));
            }
        }
        if let Some(sel) = &self.selection {
            let mut seen = vec![false; self.paragraphs.len()];
            for &i in sel {
                if i == 0 || i > self.paragraphs.len() {
                    return Err(format!("selection index {i} outside 1..={}", self.paragraphs.len()));
                }
                if std::mem::replace(&mut seen[i - 1], true) {
                    return Err(format!("selection index {i} repeated"));
                }
            }
        }
        Ok(())
    }
}

/// Parse JSON-lines text; blank lines are skipped but still counted.
pub fn parse_records(text: &str, path: &Path) -> Result<Vec<Record>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let rec: Record = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
        rec.validate().map_err(err)?;
        out.push(rec);
    }
    Ok(out)
}

pub fn load_dataset(path: &Path) -> Result<Vec<Record>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_records(&text, path)
}

/// Write one compact JSON value per line.
pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut buf = Vec::new();
    for it in items {
        serde_json::to_writer(&mut buf, it).map_err(|e| Error::Data(e.to_string()))?;
        buf.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

/// A tokenized instance: title, source paragraphs, target summary.
#[derive(Clone, Debug, PartialEq)]
pub struct Instance {
    pub title: TokenSeq,
    pub paragraphs: Vec<TokenSeq>,
    pub target: TokenSeq,
    /// Ranked 0-based paragraph indices, when ranking has run.
    pub selection: Option<Vec<usize>>,
}

impl Instance {
    pub fn from_record(rec: &Record, vocab: &Vocab) -> Self {
        Self {
            title: vocab.encode(&rec.title),
            paragraphs: rec.paragraphs.iter().map(|p| vocab.encode(p)).collect(),
            target: vocab.encode(&rec.target),
            selection: rec.selection.as_ref().map(|s| s.iter().map(|&i| i - 1).collect()),
        }
    }

    /// Paragraphs in rank order (all of them when no selection is stored).
    pub fn ranked_paragraphs(&self) -> Vec<&TokenSeq> {
        match &self.selection {
            Some(sel) => sel.iter().map(|&i| &self.paragraphs[i]).collect(),
            None => self.paragraphs.iter().collect(),
        }
    }
}

/// Recall threshold above which a paragraph counts as a clone of the target.
pub const CLONE_RECALL: f64 = 0.8;

/// Indices of paragraphs that survive clone filtering, in original order.
///
/// A paragraph is a clone when its bigram recall against the target (clipped
/// multiset matches over the target's bigram count) exceeds 0.8. A target
/// with fewer than two tokens has no bigrams and filters nothing.
pub fn clone_filter_keep(paragraphs: &[TokenSeq], target: &[u32]) -> Vec<usize> {
    paragraphs
        .iter()
        .enumerate()
        .filter(|(_, p)| rouge_n(p, target, 2).recall <= CLONE_RECALL)
        .map(|(i, _)| i)
        .collect()
}

pub fn clone_filter(instance: &Instance) -> Instance {
    let keep = clone_filter_keep(&instance.paragraphs, &instance.target);
    Instance {
        title: instance.title.clone(),
        paragraphs: keep.iter().map(|&i| instance.paragraphs[i].clone()).collect(),
        target: instance.target.clone(),
        selection: None,
    }
}

/// Apply the clone filter to a raw record (tokenizing with `vocab`).
pub fn clone_filter_record(rec: &Record, vocab: &Vocab) -> Record {
    let paras: Vec<TokenSeq> = rec.paragraphs.iter().map(|p| vocab.encode(p)).collect();
    let keep = clone_filter_keep(&paras, &vocab.encode(&rec.target));
    Record {
        title: rec.title.clone(),
        paragraphs: keep.iter().map(|&i| rec.paragraphs[i].clone()).collect(),
        target: rec.target.clone(),
        sources: rec.sources.as_ref().map(|s| keep.iter().map(|&i| s[i]).collect()),
        selection: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_and_single_line() {
        let p = Path::new("x.jsonl");
        assert!(parse_records("", p).unwrap().is_empty());
        let one = r#"{"title":"t","paragraphs":["a b"],"target":"a"}"#;
        assert_eq!(parse_records(one, p).unwrap().len(), 1);
    }

    #[test]
    fn missing_target_names_line_and_field() {
        let err = parse_records(r#"{"title":"t","paragraphs":["a"]}"#, Path::new("d.jsonl")).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("d.jsonl:1:"), "{msg}");
        assert!(msg.contains("target"), "{msg}");
    }

    #[test]
    fn bad_selection_is_rejected_with_line() {
        let text = "\n{\"title\":\"t\",\"paragraphs\":[\"a\"],\"target\":\"a\",\"selection\":[2]}";
        let msg = parse_records(text, Path::new("d")).unwrap_err().to_string();
        assert!(msg.starts_with("d:2:"), "{msg}");
    }

    #[test]
    fn clone_filter_cases() {
        let target = vec![1, 2, 3, 4, 5]; // bigrams ab bc cd de
        let identical = target.clone();
        let disjoint = vec![9, 8, 7];
        let three_of_four = vec![1, 2, 3, 4, 9]; // ab bc cd
        let keep = clone_filter_keep(&[identical, disjoint, three_of_four], &target);
        assert_eq!(keep, vec![1, 2]);
        // No target bigrams: nothing removed.
        assert_eq!(clone_filter_keep(&[vec![1], vec![1, 1]], &[1]), vec![0, 1]);
    }
}
