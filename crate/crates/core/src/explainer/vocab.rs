use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::tokenize;

pub const START_TOKEN: &str = "<start>";
pub const UNK_TOKEN: &str = "<unk>";
/// Explanations end with a period, which doubles as the terminal token.
pub const END_TOKEN: &str = ".";

/// Bijective word/index mapping with start, terminal and unknown tokens.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "VocabularyFile", into = "VocabularyFile")]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, usize>,
    start_index: usize,
    end_index: usize,
    unk_index: usize,
}

/// On-disk form: the ordered word list plus special-token indices.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VocabularyFile {
    pub words: Vec<String>,
    pub start_index: usize,
    pub end_index: usize,
    pub unk_index: usize,
}

impl TryFrom<VocabularyFile> for Vocabulary {
    type Error = Error;

    fn try_from(file: VocabularyFile) -> Result<Self> {
        let n = file.words.len();
        let specials = [file.start_index, file.end_index, file.unk_index];
        if specials.iter().any(|&i| i >= n) {
            return Err(Error::Validation(format!(
                "special token index out of range for {n} words"
            )));
        }
        if file.start_index == file.end_index
            || file.start_index == file.unk_index
            || file.end_index == file.unk_index
        {
            return Err(Error::Validation(
                "start, end and unknown tokens must be distinct".into(),
            ));
        }
        let mut index = HashMap::with_capacity(n);
        for (i, w) in file.words.iter().enumerate() {
            if index.insert(w.clone(), i).is_some() {
                return Err(Error::Validation(format!("duplicate word `{w}`")));
            }
        }
        Ok(Vocabulary {
            words: file.words,
            index,
            start_index: file.start_index,
            end_index: file.end_index,
            unk_index: file.unk_index,
        })
    }
}

impl From<Vocabulary> for VocabularyFile {
    fn from(v: Vocabulary) -> Self {
        VocabularyFile {
            words: v.words,
            start_index: v.start_index,
            end_index: v.end_index,
            unk_index: v.unk_index,
        }
    }
}

impl Vocabulary {
    /// Words seen at least `min_count` times, most frequent first with ties
    /// in alphabetical order, after the start and unknown tokens. The
    /// terminal token is always present.
    pub fn build<S: AsRef<str>>(sentences: impl IntoIterator<Item = S>, min_count: usize) -> Self {
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for s in sentences {
            for tok in tokenize(s.as_ref()) {
                *counts.entry(tok).or_default() += 1;
            }
        }
        counts.remove(START_TOKEN);
        counts.remove(UNK_TOKEN);
        let end_count = counts.get(END_TOKEN).copied().unwrap_or(0);
        counts.insert(END_TOKEN.to_string(), end_count.max(min_count));

        let mut ranked: Vec<(String, usize)> = counts
            .into_iter()
            .filter(|(_, c)| *c >= min_count)
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));

        let mut words = vec![START_TOKEN.to_string(), UNK_TOKEN.to_string()];
        words.extend(ranked.into_iter().map(|(w, _)| w));
        let end_index = words.iter().position(|w| w == END_TOKEN).expect("inserted");
        Vocabulary::try_from(VocabularyFile {
            words,
            start_index: 0,
            end_index,
            unk_index: 1,
        })
        .expect("specials are distinct")
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn start_index(&self) -> usize {
        self.start_index
    }

    pub fn end_index(&self) -> usize {
        self.end_index
    }

    pub fn unk_index(&self) -> usize {
        self.unk_index
    }

    pub fn index_of(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn word(&self, index: usize) -> Option<&str> {
        self.words.get(index).map(String::as_str)
    }

    /// Maps tokens to indices, sending unknown words to the unknown token.
    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens
            .iter()
            .map(|t| self.index_of(t.as_ref()).unwrap_or(self.unk_index))
            .collect()
    }

    pub fn decode(&self, indices: &[usize]) -> Vec<String> {
        indices
            .iter()
            .map(|&i| self.word(i).unwrap_or(UNK_TOKEN).to_string())
            .collect()
    }

    /// The teacher-forcing sequence for a sentence: start token, the
    /// encoded tokens, and a terminal token if the sentence lacks one.
    pub fn training_sequence(&self, sentence: &str) -> Vec<usize> {
        let mut seq = vec![self.start_index];
        seq.extend(self.encode(&tokenize(sentence)));
        if seq.last() != Some(&self.end_index) {
            seq.push(self.end_index);
        }
        seq
    }
}
