//! Document ingestion, text normalization, and mergeable bigram count tables.
//!
//! Tokens are maximal runs of Unicode alphanumerics, lowercased; everything
//! else separates tokens. Sentences end at '.', '!' or '?' (when followed by
//! whitespace or end of input) and at newlines. Stop words are removed before
//! bigram formation, and bigrams never cross sentence boundaries.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}:{line}: missing required field `{field}`")]
    MissingField {
        path: PathBuf,
        line: usize,
        field: &'static str,
    },
    #[error("{path}:{line}: duplicate document id `{id}`")]
    DuplicateId {
        path: PathBuf,
        line: usize,
        id: String,
    },
    #[error("invalid bigram token `{token}` (tokens are non-empty, lowercase, alphanumeric)")]
    InvalidToken { token: String },
    #[error("malformed bigram `{raw}` (expected `first second`)")]
    MalformedBigram { raw: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Party {
    Democratic,
    Republican,
}

impl Party {
    pub fn as_str(&self) -> &'static str {
        match self {
            Party::Democratic => "democratic",
            Party::Republican => "republican",
        }
    }
}

impl fmt::Display for Party {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Party {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "democratic" => Ok(Party::Democratic),
            "republican" => Ok(Party::Republican),
            other => Err(format!(
                "unknown party `{other}` (expected `democratic` or `republican`)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Document {
    pub id: String,
    pub text: String,
    pub source: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub party: Option<Party>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub year: Option<i32>,
}

/// An ordered pair of adjacent tokens. Both tokens are guaranteed non-empty,
/// lowercase, and alphanumeric-only.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Bigram {
    first: String,
    second: String,
}

fn valid_token(token: &str) -> bool {
    !token.is_empty()
        && token
            .chars()
            .all(|c| c.is_alphanumeric() && !c.is_uppercase())
}

impl Bigram {
    pub fn new(first: impl Into<String>, second: impl Into<String>) -> Result<Self, CorpusError> {
        let (first, second) = (first.into(), second.into());
        for token in [&first, &second] {
            if !valid_token(token) {
                return Err(CorpusError::InvalidToken {
                    token: token.clone(),
                });
            }
        }
        Ok(Bigram { first, second })
    }

    /// For tokens that already went through [`tokenize`].
    fn from_tokens(first: &str, second: &str) -> Self {
        debug_assert!(valid_token(first) && valid_token(second));
        Bigram {
            first: first.to_owned(),
            second: second.to_owned(),
        }
    }

    pub fn first(&self) -> &str {
        &self.first
    }

    pub fn second(&self) -> &str {
        &self.second
    }
}

impl fmt::Display for Bigram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.first, self.second)
    }
}

impl FromStr for Bigram {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.split_once(' ') {
            Some((first, second)) if !second.contains(' ') => Bigram::new(first, second),
            _ => Err(CorpusError::MalformedBigram { raw: s.to_owned() }),
        }
    }
}

/// Bigram occurrence counts. Zero-count entries are never stored, and
/// `total` is always the sum of all counts.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BigramCountTable {
    counts: HashMap<Bigram, u64>,
    total: u64,
}

impl BigramCountTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, bigram: Bigram) {
        self.add_count(bigram, 1);
    }

    pub fn add_count(&mut self, bigram: Bigram, n: u64) {
        if n == 0 {
            return;
        }
        *self.counts.entry(bigram).or_insert(0) += n;
        self.total += n;
    }

    pub fn count(&self, bigram: &Bigram) -> u64 {
        self.counts.get(bigram).copied().unwrap_or(0)
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Bigram, u64)> {
        self.counts.iter().map(|(b, &c)| (b, c))
    }

    /// Entries by count descending, ties broken lexicographically.
    pub fn sorted_desc(&self) -> Vec<(&Bigram, u64)> {
        let mut entries: Vec<_> = self.iter().collect();
        entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        entries
    }
}

/// Pointwise sum of two tables; totals add.
pub fn merge_counts(a: BigramCountTable, b: BigramCountTable) -> BigramCountTable {
    // Fold the smaller table into the larger one.
    let (mut big, small) = if a.len() >= b.len() { (a, b) } else { (b, a) };
    for (bigram, n) in small.counts {
        big.add_count(bigram, n);
    }
    big
}

/// Split text into sentences of lowercase alphanumeric tokens.
pub fn tokenize(text: &str) -> Vec<Vec<String>> {
    let mut sentences = Vec::new();
    let mut sentence: Vec<String> = Vec::new();
    let mut token = String::new();
    let mut chars = text.chars().peekable();
    while let Some(c) = chars.next() {
        if c.is_alphanumeric() {
            // Lowercasing can expand to combining marks (e.g. 'İ' →
            // "i" + U+0307) or leave caseless capitals (e.g. '𝒞')
            // untouched; keep only lowercase-safe alphanumeric parts.
            token.extend(
                c.to_lowercase()
                    .filter(|l| l.is_alphanumeric() && !l.is_uppercase()),
            );
            continue;
        }
        if !token.is_empty() {
            sentence.push(std::mem::take(&mut token));
        }
        let boundary = match c {
            '\n' => true,
            // A period inside "U.S." is not a sentence end; one before
            // whitespace or end of input is.
            '.' | '!' | '?' => chars.peek().is_none_or(|n| n.is_whitespace()),
            _ => false,
        };
        if boundary && !sentence.is_empty() {
            sentences.push(std::mem::take(&mut sentence));
        }
    }
    if !token.is_empty() {
        sentence.push(token);
    }
    if !sentence.is_empty() {
        sentences.push(sentence);
    }
    sentences
}

/// Form bigrams from adjacent non-stop-word tokens within each sentence.
pub fn extract_bigrams(sentences: &[Vec<String>], stopwords: &HashSet<String>) -> Vec<Bigram> {
    let mut out = Vec::new();
    for sentence in sentences {
        let kept: Vec<&String> = sentence
            .iter()
            .filter(|t| !stopwords.contains(t.as_str()))
            .collect();
        for pair in kept.windows(2) {
            out.push(Bigram::from_tokens(pair[0], pair[1]));
        }
    }
    out
}

/// Tokenize `text` and add its bigrams to `table`.
pub fn count_text(table: &mut BigramCountTable, text: &str, stopwords: &HashSet<String>) {
    for bigram in extract_bigrams(&tokenize(text), stopwords) {
        table.add(bigram);
    }
}

/// Count bigrams across a fallible document stream (e.g. [`ingest_jsonl`]),
/// propagating the first ingestion error.
pub fn count_bigrams<I>(stream: I, stopwords: &HashSet<String>) -> Result<BigramCountTable, CorpusError>
where
    I: IntoIterator<Item = Result<Document, CorpusError>>,
{
    let mut table = BigramCountTable::new();
    for doc in stream {
        count_text(&mut table, &doc?.text, stopwords);
    }
    Ok(table)
}

/// Count bigrams across in-memory documents.
pub fn count_documents<'a, I>(docs: I, stopwords: &HashSet<String>) -> BigramCountTable
where
    I: IntoIterator<Item = &'a Document>,
{
    let mut table = BigramCountTable::new();
    for doc in docs {
        count_text(&mut table, &doc.text, stopwords);
    }
    table
}

#[derive(Deserialize)]
struct RawDocument {
    id: Option<String>,
    text: Option<String>,
    source: Option<String>,
    party: Option<String>,
    year: Option<i32>,
}

/// Streaming JSONL document reader; yields documents in file order and
/// rejects duplicate ids.
pub struct JsonlReader {
    path: PathBuf,
    lines: std::io::Lines<BufReader<File>>,
    line_no: usize,
    seen_ids: HashSet<String>,
}

impl JsonlReader {
    fn parse_line(&mut self, line: &str) -> Result<Document, CorpusError> {
        let raw: RawDocument =
            serde_json::from_str(line).map_err(|e| CorpusError::Parse {
                path: self.path.clone(),
                line: self.line_no,
                message: e.to_string(),
            })?;
        let missing = |field| CorpusError::MissingField {
            path: self.path.clone(),
            line: self.line_no,
            field,
        };
        let id = raw.id.ok_or_else(|| missing("id"))?;
        let text = raw.text.ok_or_else(|| missing("text"))?;
        let source = raw.source.ok_or_else(|| missing("source"))?;
        if id.is_empty() {
            return Err(CorpusError::Parse {
                path: self.path.clone(),
                line: self.line_no,
                message: "empty document id".to_owned(),
            });
        }
        if !self.seen_ids.insert(id.clone()) {
            return Err(CorpusError::DuplicateId {
                path: self.path.clone(),
                line: self.line_no,
                id,
            });
        }
        let party = match raw.party {
            None => None,
            Some(label) => Some(label.parse().map_err(|e: String| CorpusError::Parse {
                path: self.path.clone(),
                line: self.line_no,
                message: e,
            })?),
        };
        Ok(Document {
            id,
            text,
            source,
            party,
            year: raw.year,
        })
    }
}

impl Iterator for JsonlReader {
    type Item = Result<Document, CorpusError>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let line = match self.lines.next()? {
                Ok(line) => line,
                Err(e) => {
                    self.line_no += 1;
                    return Some(Err(CorpusError::Io {
                        path: self.path.clone(),
                        source: e,
                    }));
                }
            };
            self.line_no += 1;
            if line.trim().is_empty() {
                continue;
            }
            return Some(self.parse_line(&line));
        }
    }
}

/// Open a JSONL corpus file for streaming ingestion.
pub fn ingest_jsonl(path: &Path) -> Result<JsonlReader, CorpusError> {
    let file = File::open(path).map_err(|e| CorpusError::Io {
        path: path.to_owned(),
        source: e,
    })?;
    Ok(JsonlReader {
        path: path.to_owned(),
        lines: BufReader::new(file).lines(),
        line_no: 0,
        seen_ids: HashSet::new(),
    })
}

/// Read a whole JSONL corpus into memory.
pub fn read_jsonl(path: &Path) -> Result<Vec<Document>, CorpusError> {
    ingest_jsonl(path)?.collect()
}

/// Write documents as JSONL, one object per line.
pub fn write_jsonl(path: &Path, docs: &[Document]) -> Result<(), CorpusError> {
    let io_err = |e| CorpusError::Io {
        path: path.to_owned(),
        source: e,
    };
    let mut out = BufWriter::new(File::create(path).map_err(io_err)?);
    for doc in docs {
        let line = serde_json::to_string(doc).expect("document serialization cannot fail");
        out.write_all(line.as_bytes()).map_err(io_err)?;
        out.write_all(b"\n").map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}

/// Load a stop-word file: one token per line, `#` starts a comment line.
pub fn load_stopwords(path: &Path) -> Result<HashSet<String>, CorpusError> {
    let file = File::open(path).map_err(|e| CorpusError::Io {
        path: path.to_owned(),
        source: e,
    })?;
    let mut words = HashSet::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| CorpusError::Io {
            path: path.to_owned(),
            source: e,
        })?;
        let entry = line.trim();
        if entry.is_empty() || entry.starts_with('#') {
            continue;
        }
        words.insert(entry.to_lowercase());
    }
    Ok(words)
}
