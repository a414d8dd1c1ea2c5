//! Sentence/triplet types and ingestion of ASTE-Data-V2 style files.
//!
//! One sentence per line:
//!
//! ```text
//! The food was delicious####[([1], [3], 'POS')]
//! ```
//!
//! The left side is the whitespace-tokenized sentence; the right side is a
//! Python-literal list of `(aspect indices, opinion indices, tag)` tuples
//! with 0-based word indices.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SEPARATOR: &str = "####";

/// Inclusive word range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "[usize; 2]", into = "[usize; 2]")]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Result<Self> {
        if start > end {
            return Err(Error::Validation(format!("span start {start} > end {end}")));
        }
        Ok(Self { start, end })
    }

    pub fn width(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn overlaps(&self, other: &Span) -> bool {
        self.start <= other.end && other.start <= self.end
    }
}

impl TryFrom<[usize; 2]> for Span {
    type Error = Error;
    fn try_from([start, end]: [usize; 2]) -> Result<Self> {
        Span::new(start, end)
    }
}

impl From<Span> for [usize; 2] {
    fn from(s: Span) -> Self {
        [s.start, s.end]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Sentiment {
    #[serde(rename = "POS")]
    Positive,
    #[serde(rename = "NEU")]
    Neutral,
    #[serde(rename = "NEG")]
    Negative,
}

impl Sentiment {
    pub const ALL: [Sentiment; 3] = [Sentiment::Positive, Sentiment::Neutral, Sentiment::Negative];

    pub fn tag(self) -> &'static str {
        match self {
            Sentiment::Positive => "POS",
            Sentiment::Neutral => "NEU",
            Sentiment::Negative => "NEG",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        match tag {
            "POS" => Some(Sentiment::Positive),
            "NEU" => Some(Sentiment::Neutral),
            "NEG" => Some(Sentiment::Negative),
            _ => None,
        }
    }
}

impl fmt::Display for Sentiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Triplet {
    pub aspect: Span,
    pub opinion: Span,
    pub sentiment: Sentiment,
}

impl Triplet {
    pub fn new(aspect: Span, opinion: Span, sentiment: Sentiment) -> Self {
        Self {
            aspect,
            opinion,
            sentiment,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sentence {
    pub id: String,
    pub tokens: Vec<String>,
    /// Head index per token; `None` marks the root.
    pub dep_heads: Option<Vec<Option<usize>>>,
    /// Gold triplets in file order.
    pub gold: Vec<Triplet>,
}

impl Sentence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn gold_set(&self) -> BTreeSet<Triplet> {
        self.gold.iter().copied().collect()
    }

    /// Checks token, head and triplet invariants.
    pub fn validate(&self) -> Result<()> {
        if self.tokens.is_empty() {
            return Err(Error::Validation("sentence has no tokens".into()));
        }
        let n = self.tokens.len();
        if let Some(heads) = &self.dep_heads {
            validate_heads(heads, n)?;
        }
        for t in &self.gold {
            for span in [t.aspect, t.opinion] {
                if span.end >= n {
                    return Err(Error::Validation(format!(
                        "span [{}, {}] outside sentence of {n} tokens",
                        span.start, span.end
                    )));
                }
            }
            if t.aspect.overlaps(&t.opinion) {
                return Err(Error::Validation(format!(
                    "aspect [{}, {}] overlaps opinion [{}, {}]",
                    t.aspect.start, t.aspect.end, t.opinion.start, t.opinion.end
                )));
            }
        }
        Ok(())
    }

    /// Keeps the first `max_len` tokens. Triplets touching the cut are
    /// dropped and counted; heads pointing past it become roots.
    pub fn truncated(&self, max_len: usize) -> (Sentence, usize) {
        if self.tokens.len() <= max_len {
            return (self.clone(), 0);
        }
        let gold: Vec<Triplet> = self
            .gold
            .iter()
            .filter(|t| t.aspect.end < max_len && t.opinion.end < max_len)
            .copied()
            .collect();
        let dropped = self.gold.len() - gold.len();
        let dep_heads = self
            .dep_heads
            .as_ref()
            .map(|heads| heads[..max_len].iter().map(|h| h.filter(|&h| h < max_len)).collect());
        let sentence = Sentence {
            id: self.id.clone(),
            tokens: self.tokens[..max_len].to_vec(),
            dep_heads,
            gold,
        };
        (sentence, dropped)
    }
}

fn validate_heads(heads: &[Option<usize>], n: usize) -> Result<()> {
    if heads.len() != n {
        return Err(Error::Validation(format!(
            "{} dependency heads for {n} tokens",
            heads.len()
        )));
    }
    for (i, head) in heads.iter().enumerate() {
        if let Some(h) = *head {
            if h >= n || h == i {
                return Err(Error::Validation(format!("token {i} has invalid head {h}")));
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<Sentence>,
    pub dev: Vec<Sentence>,
    pub test: Vec<Sentence>,
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    base: usize,
}

impl<'a> Cursor<'a> {
    fn error(&self, message: impl Into<String>) -> Error {
        Error::Parse {
            offset: self.base + self.pos,
            message: message.into(),
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.bytes.get(self.pos).copied()
    }

    fn expect(&mut self, c: u8) -> Result<()> {
        match self.peek() {
            Some(b) if b == c => {
                self.pos += 1;
                Ok(())
            }
            Some(b) => Err(self.error(format!("expected `{}`, found `{}`", c as char, b as char))),
            None => Err(self.error(format!("expected `{}`, found end of line", c as char))),
        }
    }

    fn number(&mut self) -> Result<usize> {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.error("expected a word index"));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .expect("ascii digits")
            .parse()
            .map_err(|_| Error::Parse {
                offset: self.base + start,
                message: "index out of range".into(),
            })
    }

    fn index_list(&mut self) -> Result<(usize, Vec<usize>)> {
        self.expect(b'[')?;
        let at = self.base + self.pos;
        let mut out = vec![self.number()?];
        while self.peek() == Some(b',') {
            self.pos += 1;
            out.push(self.number()?);
        }
        self.expect(b']')?;
        Ok((at, out))
    }

    fn tag(&mut self) -> Result<Sentiment> {
        let quote = match self.peek() {
            Some(q @ (b'\'' | b'"')) => q,
            _ => return Err(self.error("expected a quoted sentiment tag")),
        };
        self.pos += 1;
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos] != quote {
            self.pos += 1;
        }
        if self.pos >= self.bytes.len() {
            return Err(self.error("unterminated sentiment tag"));
        }
        let text = std::str::from_utf8(&self.bytes[start..self.pos]).map_err(|_| self.error("tag is not UTF-8"))?;
        let sentiment = Sentiment::from_tag(text).ok_or_else(|| Error::Parse {
            offset: self.base + start,
            message: format!("unknown sentiment tag `{text}`"),
        })?;
        self.pos += 1;
        Ok(sentiment)
    }
}

fn contiguous_span(indices: &[usize], at: usize) -> Result<Span> {
    let start = indices[0];
    for (k, &i) in indices.iter().enumerate() {
        if i != start + k {
            return Err(Error::Validation(format!(
                "non-contiguous index list {indices:?} at byte {at}"
            )));
        }
    }
    Span::new(start, start + indices.len() - 1)
}

/// Parses one line. The returned sentence has an empty id.
pub fn parse_aste_line(line: &str) -> Result<Sentence> {
    let line = line.trim_end_matches(['\r', '\n']);
    let sep = line.find(SEPARATOR).ok_or_else(|| Error::Parse {
        offset: line.len(),
        message: format!("missing `{SEPARATOR}` separator"),
    })?;
    let tokens: Vec<String> = line[..sep].split_whitespace().map(str::to_owned).collect();
    if tokens.is_empty() {
        return Err(Error::Parse {
            offset: 0,
            message: "no tokens before separator".into(),
        });
    }

    let base = sep + SEPARATOR.len();
    let mut cur = Cursor {
        bytes: &line.as_bytes()[base..],
        pos: 0,
        base,
    };
    let mut gold = Vec::new();
    cur.expect(b'[')?;
    if cur.peek() != Some(b']') {
        loop {
            cur.expect(b'(')?;
            let (a_at, aspect) = cur.index_list()?;
            cur.expect(b',')?;
            let (o_at, opinion) = cur.index_list()?;
            cur.expect(b',')?;
            let sentiment = cur.tag()?;
            cur.expect(b')')?;
            gold.push(Triplet::new(
                contiguous_span(&aspect, a_at)?,
                contiguous_span(&opinion, o_at)?,
                sentiment,
            ));
            if cur.peek() == Some(b',') {
                cur.pos += 1;
            } else {
                break;
            }
        }
    }
    cur.expect(b']')?;
    if cur.peek().is_some() {
        return Err(cur.error("trailing characters after triplet list"));
    }

    let sentence = Sentence {
        id: String::new(),
        tokens,
        dep_heads: None,
        gold,
    };
    sentence.validate()?;
    Ok(sentence)
}

fn format_indices(span: Span) -> String {
    let parts: Vec<String> = (span.start..=span.end).map(|i| i.to_string()).collect();
    format!("[{}]", parts.join(", "))
}

/// Canonical line form: single-space tokens, `", "` separators, single quotes.
pub fn format_aste_line(sentence: &Sentence) -> String {
    let triplets: Vec<String> = sentence
        .gold
        .iter()
        .map(|t| {
            format!(
                "({}, {}, '{}')",
                format_indices(t.aspect),
                format_indices(t.opinion),
                t.sentiment
            )
        })
        .collect();
    format!("{}{SEPARATOR}[{}]", sentence.tokens.join(" "), triplets.join(", "))
}

/// Loads one data file, assigning ids `<split>-<line number>`. Blank lines are skipped.
pub fn load_sentences(path: impl AsRef<Path>, split: &str) -> Result<Vec<Sentence>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut sentence = parse_aste_line(line).map_err(|e| e.at_line(path, i + 1))?;
        sentence.id = format!("{split}-{}", i + 1);
        out.push(sentence);
    }
    Ok(out)
}

pub fn load_split(train: impl AsRef<Path>, dev: impl AsRef<Path>, test: impl AsRef<Path>) -> Result<DatasetSplit> {
    Ok(DatasetSplit {
        train: load_sentences(train, "train")?,
        dev: load_sentences(dev, "dev")?,
        test: load_sentences(test, "test")?,
    })
}

/// Parses a sidecar line of space-separated head indices, `-1` for root.
pub fn parse_heads_line(line: &str) -> Result<Vec<Option<usize>>> {
    line.split_whitespace()
        .map(|tok| match tok.parse::<i64>() {
            Ok(-1) => Ok(None),
            Ok(h) if h >= 0 => Ok(Some(h as usize)),
            _ => Err(Error::Validation(format!("bad head index `{tok}`"))),
        })
        .collect()
}

/// Attaches a dependency sidecar to sentences loaded from the aligned data file.
pub fn attach_heads(sentences: &mut [Sentence], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let mut by_line: HashMap<usize, Vec<Option<usize>>> = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        by_line.insert(i + 1, parse_heads_line(line).map_err(|e| e.at_line(path, i + 1))?);
    }
    for sentence in sentences.iter_mut() {
        let line: usize = sentence
            .id
            .rsplit('-')
            .next()
            .and_then(|n| n.parse().ok())
            .ok_or_else(|| Error::Validation(format!("sentence id `{}` has no line number", sentence.id)))?;
        let heads = by_line
            .remove(&line)
            .ok_or_else(|| Error::Validation("no heads for this line".into()).at_line(path, line))?;
        validate_heads(&heads, sentence.len()).map_err(|e| e.at_line(path, line))?;
        sentence.dep_heads = Some(heads);
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub sentences: usize,
    pub triplets: usize,
    pub pos: usize,
    pub neu: usize,
    pub neg: usize,
}

pub fn dataset_stats(sentences: &[Sentence]) -> DatasetStats {
    let mut stats = DatasetStats {
        sentences: sentences.len(),
        ..Default::default()
    };
    for t in sentences.iter().flat_map(|s| &s.gold) {
        stats.triplets += 1;
        match t.sentiment {
            Sentiment::Positive => stats.pos += 1,
            Sentiment::Neutral => stats.neu += 1,
            Sentiment::Negative => stats.neg += 1,
        }
    }
    stats
}

pub const PAD: &str = "<pad>";
pub const UNK: &str = "<unk>";
pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;

/// Word-level vocabulary. Ids are dense, with PAD = 0 and UNK = 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    /// Tokens with frequency ≥ `min_freq`, ordered by frequency then lexicographically.
    pub fn build(sentences: &[Sentence], min_freq: usize) -> Self {
        let min_freq = min_freq.max(1);
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for tok in sentences.iter().flat_map(|s| &s.tokens) {
            *counts.entry(tok.as_str()).or_default() += 1;
        }
        let mut kept: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|&(t, c)| c >= min_freq && t != PAD && t != UNK)
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        Self::from_tokens(kept.into_iter().map(|(t, _)| t.to_owned()))
    }

    /// Rebuilds a vocabulary from its non-reserved tokens in id order.
    pub fn from_tokens(tokens: impl IntoIterator<Item = String>) -> Self {
        let mut all = vec![PAD.to_owned(), UNK.to_owned()];
        all.extend(tokens);
        let index = all.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Self { tokens: all, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    /// Tokens after the two reserved entries.
    pub fn regular_tokens(&self) -> &[String] {
        &self.tokens[2..]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Encoded {
    pub ids: Vec<usize>,
    /// The sentence cut to `max_len`, with gold filtered accordingly.
    pub sentence: Sentence,
    pub dropped_triplets: usize,
}

pub fn encode_tokens(vocab: &Vocab, sentence: &Sentence, max_len: usize) -> Encoded {
    let (sentence, dropped) = sentence.truncated(max_len.max(1));
    if dropped > 0 {
        log::warn!(
            "{}: {dropped} gold triplet(s) dropped by truncation to {max_len}",
            sentence.id
        );
    }
    let ids = sentence.tokens.iter().map(|t| vocab.id(t)).collect();
    Encoded {
        ids,
        sentence,
        dropped_triplets: dropped,
    }
}
