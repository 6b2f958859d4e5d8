use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::crf::{crf_nll, crf_nll_graph, TagLattice};
use super::embeddings::ContextEmbeddings;
use super::model::{
    emission_scores, emission_scores_nodes, encode_glyph_batch, predict_corpus,
    representation_rows, EncoderChoice, TaggerModel,
};
use super::TagError;
use crate::corpus::{make_batches, Batch, Corpus};
use crate::encoders::GlynnParams;
use crate::eval::score_f1;
use crate::glyphdict::GlyphDictionary;
use crate::ndtensor::{Graph, NormMode, ParamGroup};
use crate::optim::{clip_global_norm, lr_at_step, Optimizer, OptimizerKind, ScheduleConfig};

/// Training hyperparameters. Defaults: hidden 256, LSTM dropout .5,
/// Adafactor, clip 1, cosine schedule with 1000 first-decay steps,
/// weight decay .005, GLYNN dropouts .3/.5, 30 epochs, batches of 8.
#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub hidden: usize,
    pub lstm_dropout: f64,
    pub optimizer: OptimizerKind,
    /// Explicit base learning rate; `None` lets Adafactor use its
    /// relative step size (the schedule is then unused).
    pub lr: Option<f64>,
    pub first_decay_steps: u64,
    pub clip_grad_norm: f64,
    pub weight_decay: f64,
    pub encoder: EncoderChoice,
    pub glynn_dropout: (f64, f64),
    pub early_stop_patience: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 8,
            seed: 0,
            hidden: 256,
            lstm_dropout: 0.5,
            optimizer: OptimizerKind::Adafactor,
            lr: None,
            first_decay_steps: 1000,
            clip_grad_norm: 1.0,
            weight_decay: 0.005,
            encoder: EncoderChoice::None,
            glynn_dropout: (0.3, 0.5),
            early_stop_patience: None,
        }
    }
}

/// One epoch's worth of curve data.
#[derive(Clone, Copy, Debug)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_loss: Option<f64>,
    pub dev_f1: Option<f64>,
}

/// A finished training run.
pub struct TrainOutcome {
    /// Best-dev model when a dev set was given, else the final model.
    pub model: TaggerModel,
    pub metrics: Vec<EpochMetrics>,
    pub best_epoch: Option<usize>,
    pub stopped_early: bool,
}

fn derive_seed(seed: u64, salt: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(salt)
}

/// Mean CRF loss of one batch; builds the whole graph, backpropagates
/// when `train` is set, and returns the loss value.
#[allow(clippy::too_many_arguments)]
fn batch_loss(
    model: &mut TaggerModel,
    batch: &Batch,
    embeddings: &ContextEmbeddings,
    dict: Option<&GlyphDictionary>,
    mode: NormMode,
    rng: &mut ChaCha8Rng,
    backprop: bool,
) -> Result<f64, TagError> {
    let mut g = Graph::new();
    let glyphs = match (&model.encoder, dict) {
        (None, _) => None,
        (Some(_), Some(dict)) => {
            let all_chars =
                (0..batch.size).flat_map(|row| batch.row_chars(row).to_vec());
            encode_glyph_batch(&mut g, model, dict, all_chars, mode, rng)?
        }
        (Some(_), None) => return Err(TagError::MissingDictionary),
    };
    let head = model.insert_head(&mut g);
    let mut total = None;
    for row in 0..batch.size {
        let chars = batch.row_chars(row).to_vec();
        let gold = batch.row_tags(row).to_vec();
        let rep = representation_rows(
            &mut g,
            model,
            &chars,
            batch.sentence_ids[row],
            embeddings,
            glyphs.as_ref(),
        )?;
        let emissions = emission_scores_nodes(&mut g, &head, rep, mode, rng)?;
        let nll = crf_nll_graph(&mut g, emissions, head.transition, &gold, model.crf.num_tags)?;
        total = Some(match total {
            None => nll,
            Some(t) => g.add(t, nll)?,
        });
    }
    let total = total.expect("batch has at least one row");
    let loss = g.scale(total, 1.0 / batch.size as f64);
    let value = g.value(loss).to_scalar()?;
    if backprop {
        g.backward(loss)?;
        model.accumulate_grads(&g);
    }
    Ok(value)
}

fn dev_metrics(
    model: &mut TaggerModel,
    dev: &Corpus,
    dev_embeddings: &ContextEmbeddings,
    dict: Option<&GlyphDictionary>,
    batch_size: usize,
) -> Result<(f64, f64), TagError> {
    // Deterministic batching (seed 0) and infer mode everywhere.
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let batches = make_batches(dev, batch_size, 0);
    let mut loss_sum = 0.0;
    for batch in &batches {
        loss_sum += batch_loss(model, batch, dev_embeddings, dict, NormMode::Infer, &mut rng, false)?
            * batch.size as f64;
    }
    let dev_loss = loss_sum / dev.sentences.len() as f64;
    let predicted = predict_corpus(model, dev, dev_embeddings, dict)?;
    let gold: Vec<Vec<String>> = dev.sentences.iter().map(|s| s.tags.clone()).collect();
    let report = score_f1(&gold, &predicted, dev.scheme)?;
    Ok((dev_loss, report.overall.f1()))
}

/// Trains a tagger end to end: forward, CRF loss, backward, global-norm
/// clip, optimizer step. Context embeddings never receive gradients.
///
/// With a dev set the best-dev-F1 epoch's snapshot is returned and the
/// early-stopping patience (when set) watches the dev loss; without one
/// it watches the train loss and the final model is returned.
pub fn train(
    train_corpus: &Corpus,
    embeddings: &ContextEmbeddings,
    dev: Option<(&Corpus, &ContextEmbeddings)>,
    dict: Option<&GlyphDictionary>,
    pretrained: Option<GlynnParams>,
    config: &TrainConfig,
) -> Result<TrainOutcome, TagError> {
    if config.encoder != EncoderChoice::None && dict.is_none() {
        return Err(TagError::MissingDictionary);
    }
    let mut init_rng = ChaCha8Rng::seed_from_u64(config.seed);
    init_rng.set_stream(0);
    let mut model = TaggerModel::init(
        &mut init_rng,
        config.encoder,
        pretrained,
        embeddings.dim(),
        config.hidden,
        config.lstm_dropout,
        config.glynn_dropout,
        train_corpus.tag_set.clone(),
        train_corpus.scheme,
    );
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(config.seed);
    dropout_rng.set_stream(1);

    let mut optimizer = Optimizer::new(config.optimizer, config.weight_decay);
    let schedule = config.lr.map(|base| ScheduleConfig::new(base, config.first_decay_steps));

    let mut metrics = Vec::with_capacity(config.epochs);
    let mut best: Option<(usize, f64, TaggerModel)> = None;
    let mut monitored_best = f64::INFINITY;
    let mut since_improvement = 0usize;
    let mut stopped_early = false;

    for epoch in 1..=config.epochs {
        let batches = make_batches(train_corpus, config.batch_size, derive_seed(config.seed, epoch as u64));
        let mut loss_sum = 0.0;
        for (batch_index, batch) in batches.iter().enumerate() {
            model.zero_grads();
            let loss = batch_loss(
                &mut model,
                batch,
                embeddings,
                dict,
                NormMode::Train,
                &mut dropout_rng,
                true,
            )?;
            if !loss.is_finite() {
                return Err(TagError::NonFiniteLoss { epoch, batch: batch_index });
            }
            loss_sum += loss * batch.size as f64;
            clip_global_norm(&mut model.params_mut(), config.clip_grad_norm)?;
            let lr = schedule.as_ref().map(|s| lr_at_step(optimizer.step_count(), s));
            optimizer.step(&mut model.params_mut(), lr.or(config.lr))?;
        }
        let train_loss = loss_sum / train_corpus.sentences.len() as f64;
        let (dev_loss, dev_f1) = match dev {
            Some((dc, de)) => {
                let (l, f) = dev_metrics(&mut model, dc, de, dict, config.batch_size)?;
                (Some(l), Some(f))
            }
            None => (None, None),
        };
        metrics.push(EpochMetrics { epoch, train_loss, dev_loss, dev_f1 });

        if let Some(f1) = dev_f1 {
            let better = match &best {
                None => true,
                Some((_, best_f1, _)) => f1 > *best_f1,
            };
            if better {
                best = Some((epoch, f1, model.snapshot()));
            }
        }
        if let Some(patience) = config.early_stop_patience {
            let monitored = dev_loss.unwrap_or(train_loss);
            if monitored < monitored_best {
                monitored_best = monitored;
                since_improvement = 0;
            } else {
                since_improvement += 1;
                if since_improvement >= patience {
                    stopped_early = true;
                    break;
                }
            }
        }
    }

    let (model, best_epoch) = match best {
        Some((epoch, _, snapshot)) => (snapshot, Some(epoch)),
        None => (model, None),
    };
    Ok(TrainOutcome { model, metrics, best_epoch, stopped_early })
}

/// Mean CRF loss of a whole corpus under a fixed model (infer mode).
pub fn corpus_loss(
    model: &mut TaggerModel,
    corpus: &Corpus,
    embeddings: &ContextEmbeddings,
    dict: Option<&GlyphDictionary>,
) -> Result<f64, TagError> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut total = 0.0;
    for (i, sentence) in corpus.sentences.iter().enumerate() {
        let gold: Vec<usize> = sentence
            .tags
            .iter()
            .map(|t| model.tag_index(t).ok_or_else(|| TagError::UnknownTag(t.clone())))
            .collect::<Result<_, _>>()?;
        let mut g = Graph::new();
        let rep = super::model::char_representation(
            &mut g,
            model,
            &sentence.chars,
            i,
            embeddings,
            dict,
            NormMode::Infer,
            &mut rng,
        )?;
        let emissions = emission_scores(&mut g, model, rep, NormMode::Infer, &mut rng)?;
        let lattice = TagLattice::dense(g.value(emissions).clone())?;
        total += crf_nll(&lattice, &gold, &model.crf)?;
    }
    Ok(total / corpus.sentences.len() as f64)
}
