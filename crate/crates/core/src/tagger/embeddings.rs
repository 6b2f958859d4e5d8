use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::corpus::Corpus;

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("cannot read embeddings '{path}': {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("bad embeddings magic {0:?} (expected CEMB or CSEQ)")]
    BadMagic([u8; 4]),
    #[error("embeddings file is truncated")]
    Truncated,
    #[error("embedding dimension must be positive")]
    ZeroDim,
    #[error("duplicate codepoint U+{0:04X} in static embeddings")]
    DuplicateCodepoint(u32),
    #[error("contextual embeddings need the corpus they were computed for")]
    MissingCorpus,
    #[error("contextual embeddings do not align with the corpus: {what} ({expected} expected, {got} in file)")]
    Misaligned { what: String, expected: usize, got: usize },
}

/// Frozen context vectors standing in for a pretrained language model.
///
/// Static tables map codepoints to vectors (unknown codepoints fall
/// back to the zero UNK vector); contextual embeddings carry one vector
/// per token of a specific corpus, in corpus order. Values stay in the
/// `f32` wire representation so the frozenness invariant is bitwise.
pub enum ContextEmbeddings {
    Static { dim: usize, table: BTreeMap<u32, Vec<f32>> },
    Contextual { dim: usize, sentences: Vec<Vec<Vec<f32>>> },
}

impl ContextEmbeddings {
    pub fn dim(&self) -> usize {
        match self {
            ContextEmbeddings::Static { dim, .. } => *dim,
            ContextEmbeddings::Contextual { dim, .. } => *dim,
        }
    }

    pub fn is_static(&self) -> bool {
        matches!(self, ContextEmbeddings::Static { .. })
    }

    /// Context rows for one sentence, widened to `f64` for the models.
    pub fn sentence_rows(
        &self,
        chars: &[char],
        sentence_id: usize,
    ) -> Result<Vec<f64>, EmbeddingError> {
        match self {
            ContextEmbeddings::Static { dim, table } => {
                let mut rows = Vec::with_capacity(chars.len() * dim);
                for &c in chars {
                    match table.get(&(c as u32)) {
                        Some(v) => rows.extend(v.iter().map(|&x| x as f64)),
                        None => rows.extend(vec![0.0; *dim]),
                    }
                }
                Ok(rows)
            }
            ContextEmbeddings::Contextual { dim, sentences } => {
                let sent = sentences.get(sentence_id).ok_or_else(|| EmbeddingError::Misaligned {
                    what: "sentence index".into(),
                    expected: sentences.len(),
                    got: sentence_id,
                })?;
                if sent.len() != chars.len() {
                    return Err(EmbeddingError::Misaligned {
                        what: format!("token count in sentence {sentence_id}"),
                        expected: chars.len(),
                        got: sent.len(),
                    });
                }
                let mut rows = Vec::with_capacity(chars.len() * dim);
                for v in sent {
                    rows.extend(v.iter().map(|&x| x as f64));
                }
                Ok(rows)
            }
        }
    }

    /// Bitwise fingerprint of every stored vector, in deterministic
    /// order; used to assert the embeddings never change.
    pub fn byte_fingerprint(&self) -> Vec<u8> {
        let mut out = Vec::new();
        match self {
            ContextEmbeddings::Static { table, .. } => {
                for (cp, v) in table {
                    out.extend_from_slice(&cp.to_le_bytes());
                    for x in v {
                        out.extend_from_slice(&x.to_le_bytes());
                    }
                }
            }
            ContextEmbeddings::Contextual { sentences, .. } => {
                for sent in sentences {
                    for v in sent {
                        for x in v {
                            out.extend_from_slice(&x.to_le_bytes());
                        }
                    }
                }
            }
        }
        out
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn u32(&mut self) -> Result<u32, EmbeddingError> {
        if self.pos + 4 > self.buf.len() {
            return Err(EmbeddingError::Truncated);
        }
        let v = u32::from_le_bytes(self.buf[self.pos..self.pos + 4].try_into().unwrap());
        self.pos += 4;
        Ok(v)
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>, EmbeddingError> {
        if self.pos + 4 * n > self.buf.len() {
            return Err(EmbeddingError::Truncated);
        }
        let out = self.buf[self.pos..self.pos + 4 * n]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        self.pos += 4 * n;
        Ok(out)
    }
}

/// Loads a `CEMB` (static) or `CSEQ` (contextual) embeddings file.
/// Contextual files are validated token-by-token against the corpus.
pub fn load_context_embeddings(
    path: &Path,
    corpus: Option<&Corpus>,
) -> Result<ContextEmbeddings, EmbeddingError> {
    let buf =
        fs::read(path).map_err(|source| EmbeddingError::Io { path: path.to_path_buf(), source })?;
    if buf.len() < 4 {
        return Err(EmbeddingError::Truncated);
    }
    let magic: [u8; 4] = buf[..4].try_into().unwrap();
    let mut r = Reader { buf: &buf, pos: 4 };
    match &magic {
        b"CEMB" => {
            let dim = r.u32()? as usize;
            if dim == 0 {
                return Err(EmbeddingError::ZeroDim);
            }
            let count = r.u32()?;
            let mut table = BTreeMap::new();
            for _ in 0..count {
                let cp = r.u32()?;
                let v = r.f32s(dim)?;
                if table.insert(cp, v).is_some() {
                    return Err(EmbeddingError::DuplicateCodepoint(cp));
                }
            }
            Ok(ContextEmbeddings::Static { dim, table })
        }
        b"CSEQ" => {
            let corpus = corpus.ok_or(EmbeddingError::MissingCorpus)?;
            let dim = r.u32()? as usize;
            if dim == 0 {
                return Err(EmbeddingError::ZeroDim);
            }
            let count = r.u32()? as usize;
            if count != corpus.sentences.len() {
                return Err(EmbeddingError::Misaligned {
                    what: "sentence count".into(),
                    expected: corpus.sentences.len(),
                    got: count,
                });
            }
            let mut sentences = Vec::with_capacity(count);
            for (i, sent) in corpus.sentences.iter().enumerate() {
                let tokens = r.u32()? as usize;
                if tokens != sent.chars.len() {
                    return Err(EmbeddingError::Misaligned {
                        what: format!("token count in sentence {i}"),
                        expected: sent.chars.len(),
                        got: tokens,
                    });
                }
                let mut vecs = Vec::with_capacity(tokens);
                for _ in 0..tokens {
                    vecs.push(r.f32s(dim)?);
                }
                sentences.push(vecs);
            }
            Ok(ContextEmbeddings::Contextual { dim, sentences })
        }
        other => Err(EmbeddingError::BadMagic(*other)),
    }
}

/// Writes a static `CEMB` table.
pub fn write_static_embeddings(
    path: &Path,
    dim: usize,
    table: &BTreeMap<u32, Vec<f32>>,
) -> Result<(), EmbeddingError> {
    let mut buf = Vec::new();
    buf.extend_from_slice(b"CEMB");
    buf.extend_from_slice(&(dim as u32).to_le_bytes());
    buf.extend_from_slice(&(table.len() as u32).to_le_bytes());
    for (cp, v) in table {
        debug_assert_eq!(v.len(), dim);
        buf.extend_from_slice(&cp.to_le_bytes());
        for x in v {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
    fs::write(path, buf).map_err(|source| EmbeddingError::Io { path: path.to_path_buf(), source })
}

/// Writes a contextual `CSEQ` file in corpus order.
pub fn write_contextual_embeddings(
    path: &Path,
    dim: usize,
    sentences: &[Vec<Vec<f32>>],
) -> Result<(), EmbeddingError> {
    let mut buf = Vec::new();
    buf.extend_from_slice(b"CSEQ");
    buf.extend_from_slice(&(dim as u32).to_le_bytes());
    buf.extend_from_slice(&(sentences.len() as u32).to_le_bytes());
    for sent in sentences {
        buf.extend_from_slice(&(sent.len() as u32).to_le_bytes());
        for v in sent {
            debug_assert_eq!(v.len(), dim);
            for x in v {
                buf.extend_from_slice(&x.to_le_bytes());
            }
        }
    }
    fs::write(path, buf).map_err(|source| EmbeddingError::Io { path: path.to_path_buf(), source })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{parse_conll_str, TagScheme};

    fn table3() -> BTreeMap<u32, Vec<f32>> {
        let mut t = BTreeMap::new();
        for (i, cp) in [0x4E00u32, 0x4E8C, 0x41].into_iter().enumerate() {
            t.insert(cp, (0..8).map(|j| (i * 8 + j) as f32 * 0.25).collect());
        }
        t
    }

    #[test]
    fn static_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.cemb");
        write_static_embeddings(&path, 8, &table3()).unwrap();
        let e = load_context_embeddings(&path, None).unwrap();
        assert_eq!(e.dim(), 8);
        match &e {
            ContextEmbeddings::Static { table, .. } => {
                assert_eq!(table.len(), 3);
                assert_eq!(table[&0x41][0], 16.0 * 0.25);
            }
            _ => panic!("expected static"),
        }
    }

    #[test]
    fn unseen_codepoint_gets_zero_unk() {
        let e = ContextEmbeddings::Static { dim: 4, table: BTreeMap::new() };
        let rows = e.sentence_rows(&['x'], 0).unwrap();
        assert_eq!(rows, vec![0.0; 4]);
    }

    #[test]
    fn contextual_requires_corpus_and_alignment() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.cseq");
        let sents = vec![vec![vec![1.0f32, 2.0]], vec![vec![3.0, 4.0], vec![5.0, 6.0]]];
        write_contextual_embeddings(&path, 2, &sents).unwrap();

        assert!(matches!(
            load_context_embeddings(&path, None),
            Err(EmbeddingError::MissingCorpus)
        ));

        let good = parse_conll_str("a\tO\n\nb\tO\nc\tO\n", TagScheme::Iob).unwrap();
        let e = load_context_embeddings(&path, Some(&good)).unwrap();
        assert_eq!(e.dim(), 2);
        let rows = e.sentence_rows(&['b', 'c'], 1).unwrap();
        assert_eq!(rows, vec![3.0, 4.0, 5.0, 6.0]);

        // One sentence too few in the corpus: hard error.
        let bad = parse_conll_str("a\tO\n", TagScheme::Iob).unwrap();
        assert!(matches!(
            load_context_embeddings(&path, Some(&bad)),
            Err(EmbeddingError::Misaligned { .. })
        ));
    }

    #[test]
    fn bad_magic_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.bin");
        std::fs::write(&path, b"XXXX123").unwrap();
        assert!(matches!(
            load_context_embeddings(&path, None),
            Err(EmbeddingError::BadMagic(m)) if &m == b"XXXX"
        ));
    }

    #[test]
    fn fingerprint_is_stable() {
        let e = ContextEmbeddings::Static { dim: 8, table: table3() };
        assert_eq!(e.byte_fingerprint(), e.byte_fingerprint());
        let _ = e.sentence_rows(&['\u{4E00}', 'Q'], 0).unwrap();
        assert_eq!(e.byte_fingerprint(), e.byte_fingerprint());
    }
}
