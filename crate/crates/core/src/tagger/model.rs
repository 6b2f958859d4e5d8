use std::collections::HashMap;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::bilstm::BiLstmParams;
use super::crf::{crf_decode, CrfParams, TagLattice};
use super::embeddings::ContextEmbeddings;
use super::TagError;
use crate::corpus::{Corpus, TagScheme};
use crate::encoders::{EncoderParams, GlynnParams, StridedParams};
use crate::glyphdict::{bitmaps_to_tensor, GlyphDictionary};
use crate::ndtensor::{Graph, NodeId, NormMode, ParamGroup, Parameter, Tensor};

/// Which glyph encoder (if any) feeds the character representation.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum EncoderChoice {
    None,
    Strided,
    Glynn,
}

impl EncoderChoice {
    pub fn as_str(&self) -> &'static str {
        match self {
            EncoderChoice::None => "none",
            EncoderChoice::Strided => "strided",
            EncoderChoice::Glynn => "glynn",
        }
    }
}

impl FromStr for EncoderChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(EncoderChoice::None),
            "strided" => Ok(EncoderChoice::Strided),
            "glynn" => Ok(EncoderChoice::Glynn),
            other => Err(format!("unknown encoder '{other}' (none|strided|glynn)")),
        }
    }
}

/// The assembled tagger: frozen context embedding concatenated with an
/// optional glyph-encoder vector, one BiLSTM layer, and a CRF head.
pub struct TaggerModel {
    pub scheme: TagScheme,
    pub tag_set: Vec<String>,
    pub ctx_dim: usize,
    pub encoder: Option<EncoderParams>,
    pub bilstm: BiLstmParams,
    pub crf: CrfParams,
}

impl TaggerModel {
    #[allow(clippy::too_many_arguments)]
    pub fn init<R: Rng>(
        rng: &mut R,
        choice: EncoderChoice,
        pretrained: Option<GlynnParams>,
        ctx_dim: usize,
        hidden: usize,
        lstm_dropout: f64,
        glynn_dropout: (f64, f64),
        tag_set: Vec<String>,
        scheme: TagScheme,
    ) -> Self {
        let encoder = match choice {
            EncoderChoice::None => None,
            EncoderChoice::Strided => Some(EncoderParams::Strided(StridedParams::init(rng))),
            EncoderChoice::Glynn => {
                let mut params = pretrained.unwrap_or_else(|| GlynnParams::init(rng));
                params.dropout1 = glynn_dropout.0;
                params.dropout2 = glynn_dropout.1;
                Some(EncoderParams::Glynn(params))
            }
        };
        let rep_dim = ctx_dim + encoder.as_ref().map_or(0, |e| e.out_dim());
        let bilstm = BiLstmParams::init(rng, rep_dim, hidden, lstm_dropout);
        let crf = CrfParams::init(rng, 2 * hidden, tag_set.len());
        TaggerModel { scheme, tag_set, ctx_dim, encoder, bilstm, crf }
    }

    pub fn encoder_choice(&self) -> EncoderChoice {
        match &self.encoder {
            None => EncoderChoice::None,
            Some(EncoderParams::Strided(_)) => EncoderChoice::Strided,
            Some(EncoderParams::Glynn(_)) => EncoderChoice::Glynn,
        }
    }

    /// Width of one character representation row.
    pub fn rep_dim(&self) -> usize {
        self.ctx_dim + self.encoder.as_ref().map_or(0, |e| e.out_dim())
    }

    pub fn tag_index(&self, tag: &str) -> Option<usize> {
        self.tag_set.iter().position(|t| t == tag)
    }

    /// Deep copy (used for best-epoch snapshots).
    pub fn snapshot(&self) -> TaggerModel {
        TaggerModel {
            scheme: self.scheme,
            tag_set: self.tag_set.clone(),
            ctx_dim: self.ctx_dim,
            encoder: self.encoder.as_ref().map(|e| match e {
                EncoderParams::Strided(p) => EncoderParams::Strided(p.clone()),
                EncoderParams::Glynn(p) => EncoderParams::Glynn(p.clone()),
            }),
            bilstm: self.bilstm.clone(),
            crf: self.crf.clone(),
        }
    }
}

impl ParamGroup for TaggerModel {
    fn params(&self) -> Vec<&Parameter> {
        let mut out = Vec::new();
        if let Some(e) = &self.encoder {
            out.extend(e.params());
        }
        out.extend(self.bilstm.params());
        out.extend(self.crf.params());
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        let mut out = Vec::new();
        if let Some(e) = &mut self.encoder {
            out.extend(e.params_mut());
        }
        out.extend(self.bilstm.params_mut());
        out.extend(self.crf.params_mut());
        out
    }
}

/// Glyph features for a set of characters, encoded once per batch:
/// the node holds `[U, glyph_dim]` rows and the map gives each
/// character its row.
pub struct GlyphBatch {
    pub node: NodeId,
    pub row_of: HashMap<char, usize>,
}

/// Encodes the unique characters' bitmaps through the model's encoder.
pub fn encode_glyph_batch(
    g: &mut Graph,
    model: &mut TaggerModel,
    dict: &GlyphDictionary,
    chars: impl IntoIterator<Item = char>,
    mode: NormMode,
    rng: &mut ChaCha8Rng,
) -> Result<Option<GlyphBatch>, TagError> {
    let Some(encoder) = model.encoder.as_mut() else {
        return Ok(None);
    };
    let mut row_of = HashMap::new();
    let mut unique = Vec::new();
    for c in chars {
        row_of.entry(c).or_insert_with(|| {
            unique.push(c);
            unique.len() - 1
        });
    }
    let bitmaps: Vec<_> = unique.iter().map(|&c| dict.resolve_bitmap(c)).collect();
    let refs: Vec<&_> = bitmaps.iter().collect();
    let x = g.constant(bitmaps_to_tensor(&refs));
    let node = encoder.forward(g, x, mode, rng)?;
    Ok(Some(GlyphBatch { node, row_of }))
}

/// Builds `[T, ctx_dim + glyph_dim]` representation rows for one
/// sentence: the frozen context vectors concatenated with the encoder
/// output for each character's resolved bitmap.
pub fn representation_rows(
    g: &mut Graph,
    model: &TaggerModel,
    chars: &[char],
    sentence_id: usize,
    embeddings: &ContextEmbeddings,
    glyphs: Option<&GlyphBatch>,
) -> Result<NodeId, TagError> {
    let ctx_data = embeddings.sentence_rows(chars, sentence_id)?;
    let ctx = g.constant(Tensor::from_vec(vec![chars.len(), model.ctx_dim], ctx_data)?);
    match glyphs {
        None => Ok(ctx),
        Some(gb) => {
            let rows: Vec<usize> = chars.iter().map(|c| gb.row_of[c]).collect();
            let picked = g.gather_rows(gb.node, rows)?;
            Ok(g.concat_last(&[ctx, picked])?)
        }
    }
}

/// Character representation for one sentence, encoder included.
///
/// This is the single-sentence entry point (prediction, evaluation);
/// the training loop encodes each batch's unique characters once and
/// shares [`GlyphBatch`] across its sentences instead.
#[allow(clippy::too_many_arguments)]
pub fn char_representation(
    g: &mut Graph,
    model: &mut TaggerModel,
    chars: &[char],
    sentence_id: usize,
    embeddings: &ContextEmbeddings,
    dict: Option<&GlyphDictionary>,
    mode: NormMode,
    rng: &mut ChaCha8Rng,
) -> Result<NodeId, TagError> {
    let glyphs = match (&model.encoder, dict) {
        (None, _) => None,
        (Some(_), Some(dict)) => {
            encode_glyph_batch(g, model, dict, chars.iter().copied(), mode, rng)?
        }
        (Some(_), None) => return Err(TagError::MissingDictionary),
    };
    representation_rows(g, model, chars, sentence_id, embeddings, glyphs.as_ref())
}

/// Graph handles for the BiLSTM and CRF parameters, inserted once and
/// shared by every sentence of a batch.
pub struct HeadNodes {
    bilstm: super::bilstm::BiLstmNodes,
    emission_w: NodeId,
    emission_b: NodeId,
    /// Raw transition leaf, fed to the CRF loss.
    pub transition: NodeId,
}

impl TaggerModel {
    pub fn insert_head(&self, g: &mut Graph) -> HeadNodes {
        HeadNodes {
            bilstm: self.bilstm.insert(g),
            emission_w: g.param(&self.crf.emission_w),
            emission_b: g.param(&self.crf.emission_b),
            transition: g.param(&self.crf.transition),
        }
    }
}

/// Emission scores `[T, L]` from representation rows.
pub fn emission_scores(
    g: &mut Graph,
    model: &TaggerModel,
    rep: NodeId,
    mode: NormMode,
    rng: &mut ChaCha8Rng,
) -> Result<NodeId, TagError> {
    let head = model.insert_head(g);
    emission_scores_nodes(g, &head, rep, mode, rng)
}

/// [`emission_scores`] over already-inserted parameter leaves.
pub fn emission_scores_nodes(
    g: &mut Graph,
    head: &HeadNodes,
    rep: NodeId,
    mode: NormMode,
    rng: &mut ChaCha8Rng,
) -> Result<NodeId, TagError> {
    let hidden = super::bilstm::bilstm_forward_nodes(g, rep, &head.bilstm, mode, rng)?;
    Ok(g.dense(hidden, head.emission_w, head.emission_b)?)
}

/// Decodes one sentence in infer mode.
pub fn predict_sentence(
    model: &mut TaggerModel,
    chars: &[char],
    sentence_id: usize,
    embeddings: &ContextEmbeddings,
    dict: Option<&GlyphDictionary>,
) -> Result<Vec<String>, TagError> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    use rand::SeedableRng;
    let mut g = Graph::new();
    let rep = char_representation(
        &mut g,
        model,
        chars,
        sentence_id,
        embeddings,
        dict,
        NormMode::Infer,
        &mut rng,
    )?;
    let emissions = emission_scores(&mut g, model, rep, NormMode::Infer, &mut rng)?;
    let lattice = TagLattice::dense(g.value(emissions).clone())?;
    let (path, _) = crf_decode(&lattice, &model.crf)?;
    Ok(path.iter().map(|&i| model.tag_set[i].clone()).collect())
}

/// Decodes a whole corpus in infer mode, sentence by sentence.
pub fn predict_corpus(
    model: &mut TaggerModel,
    corpus: &Corpus,
    embeddings: &ContextEmbeddings,
    dict: Option<&GlyphDictionary>,
) -> Result<Vec<Vec<String>>, TagError> {
    corpus
        .sentences
        .iter()
        .enumerate()
        .map(|(i, s)| predict_sentence(model, &s.chars, i, embeddings, dict))
        .collect()
}
