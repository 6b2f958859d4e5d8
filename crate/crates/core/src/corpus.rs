//! Character-tokenized CoNLL-style NER corpora.
//!
//! One `char<TAB or space>tag` pair per line, blank line between
//! sentences. Tags follow IOB or BIOES; sequence-order violations
//! (I- after O and friends) are counted but not fatal, since the noisy
//! social-media data this format carries is full of them.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::eval::{extract_spans, render_spans};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read '{path}': {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("no sentences in input")]
    Empty,
    #[error("line {line}: {reason}")]
    BadLine { line: usize, reason: String },
    #[error("unknown tag scheme '{0}' (expected iob or bioes)")]
    BadScheme(String),
}

/// Tagging scheme of a corpus.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum TagScheme {
    Iob,
    Bioes,
}

impl TagScheme {
    pub fn as_str(&self) -> &'static str {
        match self {
            TagScheme::Iob => "iob",
            TagScheme::Bioes => "bioes",
        }
    }

    fn prefixes(&self) -> &'static [char] {
        match self {
            TagScheme::Iob => &['B', 'I'],
            TagScheme::Bioes => &['B', 'I', 'O', 'E', 'S'],
        }
    }
}

impl fmt::Display for TagScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TagScheme {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "iob" => Ok(TagScheme::Iob),
            "bioes" => Ok(TagScheme::Bioes),
            other => Err(CorpusError::BadScheme(other.to_string())),
        }
    }
}

/// Which split a corpus represents.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Dev,
    Test,
    Unlabeled,
}

/// A character-tokenized sentence with one tag per character.
#[derive(Clone, Debug, PartialEq)]
pub struct Sentence {
    pub chars: Vec<char>,
    pub tags: Vec<String>,
}

/// An immutable parsed corpus.
#[derive(Clone, Debug)]
pub struct Corpus {
    pub sentences: Vec<Sentence>,
    pub scheme: TagScheme,
    /// Sorted unique tags over all sentences; indices into this list
    /// are the CRF label ids.
    pub tag_set: Vec<String>,
    pub split: Split,
    /// Count of tokens violating the scheme's sequence grammar.
    pub scheme_violations: usize,
}

/// Simple counts matching the tok/ent/sent reporting convention.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct CorpusStats {
    pub tokens: usize,
    pub entities: usize,
    pub sentences: usize,
}

fn tag_is_valid(tag: &str, scheme: TagScheme) -> bool {
    if tag == "O" {
        return true;
    }
    match tag.split_once('-') {
        Some((p, label)) if p.len() == 1 && !label.is_empty() => {
            let c = p.chars().next().unwrap();
            c != 'O' && scheme.prefixes().contains(&c)
        }
        _ => false,
    }
}

/// Counts sequence-grammar violations: continuations without a head,
/// and (for BIOES) runs that are never closed by E.
fn count_violations(tags: &[String], scheme: TagScheme) -> usize {
    let part = |t: &str| -> (char, String) {
        match t.split_once('-') {
            Some((p, l)) => (p.chars().next().unwrap(), l.to_string()),
            None => ('O', String::new()),
        }
    };
    let mut violations = 0;
    for (i, tag) in tags.iter().enumerate() {
        let (p, label) = part(tag);
        let prev = if i > 0 { Some(part(&tags[i - 1])) } else { None };
        let next = if i + 1 < tags.len() { Some(part(&tags[i + 1])) } else { None };
        let continues_prev =
            matches!(&prev, Some((pp, pl)) if *pl == label && matches!(pp, 'B' | 'I'));
        match (scheme, p) {
            (TagScheme::Iob, 'I') if !continues_prev => violations += 1,
            (TagScheme::Bioes, 'I') | (TagScheme::Bioes, 'E') if !continues_prev => violations += 1,
            (TagScheme::Bioes, 'B') | (TagScheme::Bioes, 'I') => {
                let continued_by_next =
                    matches!(&next, Some((np, nl)) if *nl == label && matches!(np, 'I' | 'E'));
                if !continued_by_next {
                    violations += 1;
                }
            }
            _ => {}
        }
    }
    violations
}

/// Parses corpus text. Lines split on the first tab, or on the first
/// space when there is no tab; trailing whitespace is trimmed.
pub fn parse_conll_str(source: &str, scheme: TagScheme) -> Result<Corpus, CorpusError> {
    let mut sentences = Vec::new();
    let mut chars = Vec::new();
    let mut tags = Vec::new();
    let mut violations = 0;
    let mut flush = |chars: &mut Vec<char>, tags: &mut Vec<String>, sentences: &mut Vec<Sentence>| {
        if !chars.is_empty() {
            violations += count_violations(tags, scheme);
            sentences.push(Sentence { chars: std::mem::take(chars), tags: std::mem::take(tags) });
        }
    };
    for (i, raw) in source.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim_end();
        if line.is_empty() {
            flush(&mut chars, &mut tags, &mut sentences);
            continue;
        }
        let (tok, tag) = line
            .split_once('\t')
            .or_else(|| line.split_once(' '))
            .ok_or_else(|| CorpusError::BadLine {
                line: line_no,
                reason: format!("expected 2 fields, got 1: '{line}'"),
            })?;
        let mut it = tok.chars();
        let (Some(ch), None) = (it.next(), it.next()) else {
            return Err(CorpusError::BadLine {
                line: line_no,
                reason: format!("token '{tok}' is not a single character"),
            });
        };
        let tag = tag.trim();
        if tag.is_empty() || tag.contains(char::is_whitespace) {
            return Err(CorpusError::BadLine {
                line: line_no,
                reason: format!("expected 2 fields in '{line}'"),
            });
        }
        if !tag_is_valid(tag, scheme) {
            return Err(CorpusError::BadLine {
                line: line_no,
                reason: format!("tag '{tag}' is not valid under {scheme}"),
            });
        }
        chars.push(ch);
        tags.push(tag.to_string());
    }
    flush(&mut chars, &mut tags, &mut sentences);
    if sentences.is_empty() {
        return Err(CorpusError::Empty);
    }
    let tag_set: BTreeSet<String> =
        sentences.iter().flat_map(|s| s.tags.iter().cloned()).collect();
    Ok(Corpus {
        sentences,
        scheme,
        tag_set: tag_set.into_iter().collect(),
        split: Split::Unlabeled,
        scheme_violations: violations,
    })
}

pub fn parse_conll(path: &Path, scheme: TagScheme) -> Result<Corpus, CorpusError> {
    let source = std::fs::read_to_string(path)
        .map_err(|source| CorpusError::Io { path: path.to_path_buf(), source })?;
    parse_conll_str(&source, scheme)
}

/// Renders a corpus back into `char<TAB>tag` lines.
pub fn serialize_corpus(corpus: &Corpus) -> String {
    let mut out = String::new();
    for (i, s) in corpus.sentences.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        for (c, t) in s.chars.iter().zip(&s.tags) {
            out.push(*c);
            out.push('\t');
            out.push_str(t);
            out.push('\n');
        }
    }
    out
}

/// Re-tags every sentence in the target scheme; entity span sets are
/// preserved exactly (conversion goes through span extraction).
pub fn convert_scheme(corpus: &Corpus, target: TagScheme) -> Corpus {
    let sentences: Vec<Sentence> = corpus
        .sentences
        .iter()
        .map(|s| {
            let spans = extract_spans(&s.tags, corpus.scheme);
            Sentence { chars: s.chars.clone(), tags: render_spans(&spans, s.chars.len(), target) }
        })
        .collect();
    let tag_set: BTreeSet<String> =
        sentences.iter().flat_map(|s| s.tags.iter().cloned()).collect();
    let violations = sentences.iter().map(|s| count_violations(&s.tags, target)).sum();
    Corpus {
        sentences,
        scheme: target,
        tag_set: tag_set.into_iter().collect(),
        split: corpus.split,
        scheme_violations: violations,
    }
}

/// Token / entity / sentence counts.
pub fn corpus_stats(corpus: &Corpus) -> CorpusStats {
    let tokens = corpus.sentences.iter().map(|s| s.chars.len()).sum();
    let entities = corpus
        .sentences
        .iter()
        .map(|s| extract_spans(&s.tags, corpus.scheme).len())
        .sum();
    CorpusStats { tokens, entities, sentences: corpus.sentences.len() }
}

/// A right-padded mini-batch with a token mask.
#[derive(Clone, Debug)]
pub struct Batch {
    pub size: usize,
    pub width: usize,
    /// `[size * width]` row-major; padding slots hold `'\0'`.
    pub chars: Vec<char>,
    /// Tag ids into the corpus tag set; padding slots hold 0.
    pub tags: Vec<usize>,
    /// True exactly on real tokens.
    pub mask: Vec<bool>,
    /// Original corpus sentence index per row.
    pub sentence_ids: Vec<usize>,
}

impl Batch {
    pub fn row_len(&self, row: usize) -> usize {
        (0..self.width).take_while(|&t| self.mask[row * self.width + t]).count()
    }

    pub fn row_chars(&self, row: usize) -> &[char] {
        &self.chars[row * self.width..row * self.width + self.row_len(row)]
    }

    pub fn row_tags(&self, row: usize) -> &[usize] {
        &self.tags[row * self.width..row * self.width + self.row_len(row)]
    }
}

/// Splits the corpus into shuffled batches of at most `size` sentences.
/// Every sentence appears exactly once; the shuffle is a deterministic
/// function of `seed`.
pub fn make_batches(corpus: &Corpus, size: usize, seed: u64) -> Vec<Batch> {
    assert!(size >= 1, "batch size must be at least 1");
    let tag_index = |tag: &str| corpus.tag_set.iter().position(|t| t == tag).unwrap_or(0);
    let mut order: Vec<usize> = (0..corpus.sentences.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    order
        .chunks(size)
        .map(|chunk| {
            let width = chunk.iter().map(|&i| corpus.sentences[i].chars.len()).max().unwrap_or(0);
            let mut chars = vec!['\0'; chunk.len() * width];
            let mut tags = vec![0usize; chunk.len() * width];
            let mut mask = vec![false; chunk.len() * width];
            for (row, &i) in chunk.iter().enumerate() {
                let s = &corpus.sentences[i];
                for (t, (&c, tag)) in s.chars.iter().zip(&s.tags).enumerate() {
                    chars[row * width + t] = c;
                    tags[row * width + t] = tag_index(tag);
                    mask[row * width + t] = true;
                }
            }
            Batch { size: chunk.len(), width, chars, tags, mask, sentence_ids: chunk.to_vec() }
        })
        .collect()
}

/// Deterministically carves the first `fraction` of sentences off as a
/// dev split (the convention for corpora that ship without one).
pub fn carve_dev(corpus: &Corpus, fraction: f64) -> (Corpus, Corpus) {
    let n = corpus.sentences.len();
    let n_dev = ((n as f64 * fraction).floor() as usize).clamp(usize::from(n > 0), n);
    let mut dev = corpus.clone();
    let mut rest = corpus.clone();
    dev.sentences = corpus.sentences[..n_dev].to_vec();
    dev.split = Split::Dev;
    rest.sentences = corpus.sentences[n_dev..].to_vec();
    (dev, rest)
}
