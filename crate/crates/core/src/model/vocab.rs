//! Word-level vocabulary.

use std::collections::HashMap;
use std::path::Path;

use crate::cot::{compose_trace, Attribute, AttributeRecord};
use crate::error::{CoreError, Result};
use crate::tasks::TaskKind;

pub const PAD: &str = "<pad>";
pub const BOS: &str = "<bos>";
pub const EOS: &str = "<eos>";
pub const UNK: &str = "<unk>";
/// Line break inside a text.
pub const NL: &str = "<nl>";
/// Marks an auxiliary reasoning target.
pub const COT: &str = "<cot>";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    /// Reserved tokens first, then the given words in first-seen order.
    pub fn from_words<'a>(words: impl IntoIterator<Item = &'a str>) -> Self {
        let mut v = Vocab { tokens: Vec::new(), index: HashMap::new() };
        let reserved = [PAD, BOS, EOS, UNK, NL, COT];
        for t in reserved.into_iter().chain(TaskKind::ALL.map(TaskKind::tag)) {
            v.push(t);
        }
        for w in words {
            v.push(w);
        }
        v
    }

    /// Every word the prompts, attribute lines and reasoning traces can contain.
    pub fn standard() -> Self {
        let mut texts: Vec<String> = TaskKind::ALL.iter().map(|t| prompt_text(*t)).collect();
        let widest = Attribute::ALL.iter().map(|a| a.options().len() + 1).max().unwrap_or(1);
        for i in 0..widest {
            let mut rec = AttributeRecord::new();
            for a in Attribute::ALL {
                let opts = a.options();
                if i < opts.len() {
                    rec.set(a, opts[i], "").expect("option from its own list");
                }
            }
            texts.push(rec.to_lines());
            for task in [TaskKind::Nowcast, TaskKind::Inversion] {
                texts.push(compose_trace(&rec, &rec, task).expect("complete record").render());
            }
        }
        let words: Vec<&str> = texts.iter().flat_map(|t| split_words(t)).collect();
        Vocab::from_words(words)
    }

    fn push(&mut self, t: &str) {
        if !self.index.contains_key(t) {
            self.index.insert(t.to_string(), self.tokens.len());
            self.tokens.push(t.to_string());
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(self.index[UNK])
    }

    pub fn token(&self, id: usize) -> &str {
        self.tokens.get(id).map_or(UNK, String::as_str)
    }

    pub fn bos(&self) -> usize {
        self.index[BOS]
    }

    pub fn eos(&self) -> usize {
        self.index[EOS]
    }

    /// Words split on spaces, with each line break as its own token.
    pub fn tokenize(&self, text: &str) -> Vec<usize> {
        let mut ids = Vec::new();
        for (i, line) in text.split('\n').enumerate() {
            if i > 0 {
                ids.push(self.index[NL]);
            }
            ids.extend(line.split(' ').filter(|w| !w.is_empty()).map(|w| self.id(w)));
        }
        ids
    }

    pub fn detokenize(&self, ids: &[usize]) -> String {
        let mut out = String::new();
        let mut line_start = true;
        for &id in ids {
            let t = self.token(id);
            if t == NL {
                out.push('\n');
                line_start = true;
                continue;
            }
            if !line_start {
                out.push(' ');
            }
            out.push_str(t);
            line_start = false;
        }
        out
    }

    /// One token per line; the line number is the id.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut s = self.tokens.join("\n");
        s.push('\n');
        std::fs::write(path, s)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut v = Vocab { tokens: Vec::new(), index: HashMap::new() };
        for line in text.lines() {
            if v.index.contains_key(line) {
                return Err(CoreError::Config(format!("duplicate vocabulary token {line:?}")));
            }
            v.push(line);
        }
        for t in [PAD, BOS, EOS, UNK, NL, COT] {
            if !v.index.contains_key(t) {
                return Err(CoreError::Config(format!("vocabulary lacks reserved token {t}")));
            }
        }
        Ok(v)
    }
}

fn split_words(text: &str) -> impl Iterator<Item = &str> {
    text.split(['\n', ' ']).filter(|w| !w.is_empty())
}

/// Instruction text opening each task's input.
pub fn prompt_text(task: TaskKind) -> String {
    let body = match task {
        TaskKind::Nowcast => "Forecast the next 12 radar frames from the 10 observed frames.",
        TaskKind::Inversion => "Reconstruct the radar frame from the two infrared channels.",
        TaskKind::FrameUnderstand => "Describe the radar frame with the storm attributes.",
        TaskKind::SequenceUnderstand => "Describe the radar sequence with the storm attributes.",
    };
    format!("{} {body}", task.tag())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_unknowns() {
        let v = Vocab::standard();
        assert!(v.len() <= 2048);
        let s = "Main motion direction: east\nMax pixel level: very strong (181–218)";
        assert_eq!(v.detokenize(&v.tokenize(s)), s);
        assert!(v.tokenize("").is_empty());
        let ids = v.tokenize("zzz");
        assert_eq!(v.detokenize(&ids), UNK);
    }

    #[test]
    fn file_round_trip() {
        let v = Vocab::standard();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("vocab.txt");
        v.save(&p).unwrap();
        assert_eq!(Vocab::load(&p).unwrap(), v);
    }
}
