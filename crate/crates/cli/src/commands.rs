use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use glyphtag::corpus::{
    carve_dev, convert_scheme, corpus_stats, parse_conll, serialize_corpus, Corpus, CorpusError,
    Split, TagScheme,
};
use glyphtag::encoders::{extract_encoder, pretrain_autoencoder, AutoencoderStack, PretrainConfig};
use glyphtag::eval::{
    format_summary_table, score_f1, summarize, two_sample_ttest, SummaryRow, TTestKind,
};
use glyphtag::glyphdict::{import_pgm_dir, GlyphDictionary};
use glyphtag::tagger::{
    load_autoencoder, load_context_embeddings, load_tagger, predict_corpus, save_autoencoder,
    save_tagger, train, ContextEmbeddings, EncoderChoice, TaggerModel, TrainConfig, TrainOutcome,
};

use crate::config::{config_pairs, RunOverrides};
use crate::error::CliError;

/// Glyph-augmented BiLSTM-CRF sequence labeling toolkit.
#[derive(Parser)]
#[command(name = "glyphtag", version, about)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a glyph dictionary from a directory of U+XXXX.pgm images.
    BuildDict(BuildDictArgs),
    /// Pretrain the GLYNN autoencoder on a glyph dictionary.
    Pretrain(PretrainArgs),
    /// Train a tagger and write its checkpoint and metric curves.
    Train(TrainArgs),
    /// Score a checkpoint against gold data.
    Eval(EvalArgs),
    /// Tag data with a checkpoint, emitting CoNLL output.
    Predict(PredictArgs),
    /// Token / entity / sentence statistics of a corpus.
    Stats(StatsArgs),
    /// Convert a corpus between IOB and BIOES.
    Convert(ConvertArgs),
    /// Run seeded trials per model variant and print the significance table.
    Campaign(CampaignArgs),
    /// Two-sample t-test over two score files.
    Ttest(TtestArgs),
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::BuildDict(args) => build_dict(args),
        Command::Pretrain(args) => pretrain(args),
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Predict(args) => cmd_predict(args),
        Command::Stats(args) => cmd_stats(args),
        Command::Convert(args) => cmd_convert(args),
        Command::Campaign(args) => cmd_campaign(args),
        Command::Ttest(args) => cmd_ttest(args),
    }
}

// ---- build-dict ----

#[derive(Args)]
struct BuildDictArgs {
    /// Directory of U+XXXX.pgm glyph images.
    #[arg(long = "in")]
    input: PathBuf,
    /// Output dictionary file.
    #[arg(long)]
    out: PathBuf,
    /// Extend this base dictionary instead of building a fresh one.
    #[arg(long)]
    extend: Option<PathBuf>,
}

fn build_dict(args: BuildDictArgs) -> Result<(), CliError> {
    let imported = import_pgm_dir(&args.input)?;
    let dict = match &args.extend {
        None => GlyphDictionary::new_base(imported)?,
        Some(base_path) => {
            let base = GlyphDictionary::load_dictionary(base_path)?;
            GlyphDictionary::extend_dictionary(&base, imported)?
        }
    };
    dict.save_dictionary(&args.out)?;
    println!("dictionary\t{}\tentries\t{}", format!("{:?}", dict.mode()).to_lowercase(), dict.len());
    Ok(())
}

// ---- pretrain ----

#[derive(Args)]
struct PretrainArgs {
    /// Glyph dictionary to reconstruct.
    #[arg(long)]
    dict: PathBuf,
    /// Output autoencoder checkpoint.
    #[arg(long)]
    out: PathBuf,
    /// Per-epoch loss curve (TSV).
    #[arg(long)]
    curve: PathBuf,
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 16)]
    batch_size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn pretrain(args: PretrainArgs) -> Result<(), CliError> {
    if args.batch_size == 0 {
        return Err(CliError::config("batch_size must be at least 1"));
    }
    if !args.lr.is_finite() || args.lr <= 0.0 {
        return Err(CliError::config("lr must be positive"));
    }
    let dict = GlyphDictionary::load_dictionary(&args.dict)?;
    let mut stack = AutoencoderStack::glynn_mirror(args.seed);
    let config = PretrainConfig {
        epochs: args.epochs,
        learning_rate: args.lr,
        batch_size: args.batch_size,
        seed: args.seed,
        ..PretrainConfig::default()
    };
    let report = pretrain_autoencoder(&dict, &mut stack, &config)?;
    let mut curve = String::from("epoch\tloss\n");
    for (i, loss) in report.epoch_losses.iter().enumerate() {
        curve.push_str(&format!("{}\t{:.6}\n", i + 1, loss));
    }
    write_text(&args.curve, &curve)?;
    let extra = vec![
        ("epochs".to_string(), args.epochs.to_string()),
        ("lr".to_string(), args.lr.to_string()),
        ("batch_size".to_string(), args.batch_size.to_string()),
        ("seed".to_string(), args.seed.to_string()),
    ];
    save_autoencoder(&args.out, &stack, &extra)?;
    println!("initial_loss\t{:.6}", report.initial_loss);
    println!("final_loss\t{:.6}", report.final_loss());
    Ok(())
}

// ---- shared loading ----

fn parse_scheme(s: &str) -> Result<TagScheme, CliError> {
    s.parse::<TagScheme>().map_err(|e| CliError::config(e.to_string()))
}

fn load_corpus(path: &Path, scheme: TagScheme, split: Split) -> Result<Corpus, CliError> {
    let mut corpus = parse_conll(path, scheme)?;
    corpus.split = split;
    if corpus.scheme_violations > 0 {
        eprintln!(
            "note: {} scheme violation(s) in {}",
            corpus.scheme_violations,
            path.display()
        );
    }
    Ok(corpus)
}

fn load_embeddings(
    path: &Path,
    corpus: &Corpus,
    what: &str,
) -> Result<ContextEmbeddings, CliError> {
    let e = load_context_embeddings(path, Some(corpus))?;
    let _ = what;
    Ok(e)
}

/// Picks the embeddings for a secondary split: static tables are
/// shared, contextual files must be supplied per split.
fn secondary_embeddings(
    primary: &ContextEmbeddings,
    path: Option<&PathBuf>,
    corpus: &Corpus,
    what: &str,
) -> Result<Option<ContextEmbeddings>, CliError> {
    match path {
        Some(p) => Ok(Some(load_embeddings(p, corpus, what)?)),
        None if primary.is_static() => Ok(None), // reuse the primary table
        None => Err(CliError::config(format!(
            "contextual embeddings are per-corpus; supply --{what}-embeddings"
        ))),
    }
}

// ---- train ----

#[derive(Args)]
struct TrainArgs {
    /// Training corpus (CoNLL, character tokenized).
    #[arg(long)]
    train: PathBuf,
    /// Tag scheme of the corpora: iob or bioes.
    #[arg(long)]
    scheme: String,
    /// Context embeddings (CEMB or CSEQ) for the training corpus.
    #[arg(long)]
    embeddings: PathBuf,
    /// Output checkpoint (best dev epoch when --dev is given).
    #[arg(long)]
    out: PathBuf,
    /// Per-epoch train/dev metric curves (TSV).
    #[arg(long)]
    curves: Option<PathBuf>,
    #[arg(long)]
    dev: Option<PathBuf>,
    #[arg(long)]
    dev_embeddings: Option<PathBuf>,
    #[arg(long)]
    test: Option<PathBuf>,
    #[arg(long)]
    test_embeddings: Option<PathBuf>,
    /// Carve this fraction of the test set off as the dev set
    /// (static embeddings only).
    #[arg(long)]
    carve_dev: Option<f64>,
    /// Glyph dictionary (required when --encoder is not none).
    #[arg(long)]
    dict: Option<PathBuf>,
    /// Glyph encoder: none, strided, or glynn.
    #[arg(long)]
    encoder: Option<EncoderChoice>,
    /// Autoencoder checkpoint to initialize GLYNN from.
    #[arg(long)]
    pretrained_encoder: Option<PathBuf>,
    #[command(flatten)]
    overrides: RunOverrides,
}

struct TrainSetup {
    config: TrainConfig,
    corpus: Corpus,
    embeddings: ContextEmbeddings,
    dev: Option<(Corpus, ContextEmbeddings)>,
    test: Option<(Corpus, ContextEmbeddings)>,
    dict: Option<GlyphDictionary>,
    pretrained: Option<PathBuf>,
}

impl TrainSetup {
    fn outcome(&self) -> Result<TrainOutcome, CliError> {
        let pretrained = match &self.pretrained {
            None => None,
            Some(path) => {
                if self.config.encoder != EncoderChoice::Glynn {
                    return Err(CliError::config(
                        "--pretrained-encoder only applies to --encoder glynn",
                    ));
                }
                let (stack, _) = load_autoencoder(path)?;
                Some(extract_encoder(&stack)?)
            }
        };
        let dev_ref = self
            .dev
            .as_ref()
            .map(|(c, e)| (c, e));
        Ok(train(
            &self.corpus,
            &self.embeddings,
            dev_ref,
            self.dict.as_ref(),
            pretrained,
            &self.config,
        )?)
    }

    fn test_f1(&self, model: &mut TaggerModel) -> Result<Option<f64>, CliError> {
        let Some((test, test_emb)) = &self.test else { return Ok(None) };
        let predicted = predict_corpus(model, test, test_emb, self.dict.as_ref())?;
        let gold: Vec<Vec<String>> = test.sentences.iter().map(|s| s.tags.clone()).collect();
        let report = score_f1(&gold, &predicted, test.scheme)?;
        Ok(Some(report.overall.f1()))
    }
}

fn prepare_training(args: &TrainArgs) -> Result<TrainSetup, CliError> {
    let scheme = parse_scheme(&args.scheme)?;
    let (config, encoder) = args.overrides.resolve(args.encoder)?;
    let corpus = load_corpus(&args.train, scheme, Split::Train)?;
    let embeddings = load_embeddings(&args.embeddings, &corpus, "train")?;

    let dict = match &args.dict {
        Some(p) => Some(GlyphDictionary::load_dictionary(p)?),
        None => None,
    };
    if encoder != EncoderChoice::None && dict.is_none() {
        return Err(CliError::config("--encoder needs --dict"));
    }

    let mut test = match &args.test {
        Some(p) => {
            let c = load_corpus(p, scheme, Split::Test)?;
            let e = secondary_embeddings(&embeddings, args.test_embeddings.as_ref(), &c, "test")?;
            Some(match e {
                Some(e) => (c, e),
                None => {
                    let e = load_embeddings(&args.embeddings, &c, "test")?;
                    (c, e)
                }
            })
        }
        None => None,
    };

    let dev = match (&args.dev, args.carve_dev) {
        (Some(_), Some(_)) => {
            return Err(CliError::config("--dev and --carve-dev are mutually exclusive"))
        }
        (Some(p), None) => {
            let c = load_corpus(p, scheme, Split::Dev)?;
            let e = secondary_embeddings(&embeddings, args.dev_embeddings.as_ref(), &c, "dev")?;
            let e = match e {
                Some(e) => e,
                None => load_embeddings(&args.embeddings, &c, "dev")?,
            };
            Some((c, e))
        }
        (None, Some(fraction)) => {
            if !(0.0..1.0).contains(&fraction) || fraction <= 0.0 {
                return Err(CliError::config("--carve-dev must be in (0, 1)"));
            }
            if !embeddings.is_static() {
                return Err(CliError::config(
                    "--carve-dev needs static embeddings (contextual files cannot be re-sliced)",
                ));
            }
            let Some((test_corpus, _)) = test.take() else {
                return Err(CliError::config("--carve-dev carves from --test, which is missing"));
            };
            let (dev_corpus, rest) = carve_dev(&test_corpus, fraction);
            let dev_emb = load_embeddings(&args.embeddings, &dev_corpus, "dev")?;
            let rest_emb = load_embeddings(&args.embeddings, &rest, "test")?;
            test = Some((rest, rest_emb));
            Some((dev_corpus, dev_emb))
        }
        (None, None) => None,
    };

    Ok(TrainSetup {
        config,
        corpus,
        embeddings,
        dev,
        test,
        dict,
        pretrained: args.pretrained_encoder.clone(),
    })
}

fn write_curves(path: &Path, outcome: &TrainOutcome) -> Result<(), CliError> {
    let mut out = String::from("epoch\ttrain_loss\tdev_loss\tdev_f1\n");
    for m in &outcome.metrics {
        let dl = m.dev_loss.map_or("NA".to_string(), |v| format!("{v:.6}"));
        let df = m.dev_f1.map_or("NA".to_string(), |v| format!("{v:.6}"));
        out.push_str(&format!("{}\t{:.6}\t{}\t{}\n", m.epoch, m.train_loss, dl, df));
    }
    write_text(path, &out)
}

fn cmd_train(args: TrainArgs) -> Result<(), CliError> {
    let setup = prepare_training(&args)?;
    let outcome = setup.outcome()?;
    if let Some(curves) = &args.curves {
        write_curves(curves, &outcome)?;
    }
    let mut extra = config_pairs(&setup.config);
    if let Some(p) = &setup.pretrained {
        extra.push(("pretrained_encoder".to_string(), p.display().to_string()));
    }
    let mut model = outcome.model;
    save_tagger(&args.out, &model, &extra)?;
    println!("epochs_run\t{}", outcome.metrics.len());
    if outcome.stopped_early {
        println!("early_stopped\ttrue");
    }
    if let Some(best) = outcome.best_epoch {
        println!("best_epoch\t{best}");
    }
    if let Some(f1) = setup.test_f1(&mut model)? {
        println!("test_f1\t{f1:.6}");
    }
    Ok(())
}

// ---- eval ----

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    scheme: String,
    #[arg(long)]
    embeddings: PathBuf,
    #[arg(long)]
    dict: Option<PathBuf>,
}

fn load_model_for(
    checkpoint: &Path,
    scheme: TagScheme,
    dict: Option<&PathBuf>,
) -> Result<(TaggerModel, Option<GlyphDictionary>), CliError> {
    let (model, _) = load_tagger(checkpoint)?;
    if model.scheme != scheme {
        return Err(CliError::Generic(format!(
            "checkpoint is tagged in {}, request says {}",
            model.scheme, scheme
        )));
    }
    let dict = match dict {
        Some(p) => Some(GlyphDictionary::load_dictionary(p)?),
        None => None,
    };
    if model.encoder_choice() != EncoderChoice::None && dict.is_none() {
        return Err(CliError::config("this checkpoint uses a glyph encoder; supply --dict"));
    }
    Ok((model, dict))
}

fn check_ctx_dim(model: &TaggerModel, embeddings: &ContextEmbeddings) -> Result<(), CliError> {
    if embeddings.dim() != model.ctx_dim {
        return Err(CliError::Generic(format!(
            "embedding dimension {} does not match the checkpoint's context dimension {}",
            embeddings.dim(),
            model.ctx_dim
        )));
    }
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<(), CliError> {
    let scheme = parse_scheme(&args.scheme)?;
    let corpus = load_corpus(&args.data, scheme, Split::Test)?;
    let (mut model, dict) = load_model_for(&args.checkpoint, scheme, args.dict.as_ref())?;
    let embeddings = load_embeddings(&args.embeddings, &corpus, "eval")?;
    check_ctx_dim(&model, &embeddings)?;
    let predicted = predict_corpus(&mut model, &corpus, &embeddings, dict.as_ref())?;
    let gold: Vec<Vec<String>> = corpus.sentences.iter().map(|s| s.tags.clone()).collect();
    let report = score_f1(&gold, &predicted, scheme)?;
    println!("precision\t{:.6}", report.overall.precision());
    println!("recall\t{:.6}", report.overall.recall());
    println!("f1\t{:.6}", report.overall.f1());
    for (label, pr) in &report.per_type {
        println!("type\t{label}\t{:.6}\t{:.6}\t{:.6}", pr.precision(), pr.recall(), pr.f1());
    }
    Ok(())
}

// ---- predict ----

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    scheme: String,
    #[arg(long)]
    embeddings: PathBuf,
    #[arg(long)]
    dict: Option<PathBuf>,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn cmd_predict(args: PredictArgs) -> Result<(), CliError> {
    let scheme = parse_scheme(&args.scheme)?;
    let corpus = match parse_conll(&args.data, scheme) {
        Ok(c) => c,
        // Empty input tags to empty output.
        Err(CorpusError::Empty) => {
            emit(&args.out, "")?;
            return Ok(());
        }
        Err(e) => return Err(e.into()),
    };
    let (mut model, dict) = load_model_for(&args.checkpoint, scheme, args.dict.as_ref())?;
    let embeddings = load_embeddings(&args.embeddings, &corpus, "predict")?;
    check_ctx_dim(&model, &embeddings)?;
    let predicted = predict_corpus(&mut model, &corpus, &embeddings, dict.as_ref())?;
    let mut tagged = corpus.clone();
    for (sentence, tags) in tagged.sentences.iter_mut().zip(predicted) {
        sentence.tags = tags;
    }
    emit(&args.out, &serialize_corpus(&tagged))
}

// ---- stats ----

#[derive(Args)]
struct StatsArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    scheme: String,
}

fn cmd_stats(args: StatsArgs) -> Result<(), CliError> {
    let scheme = parse_scheme(&args.scheme)?;
    let corpus = parse_conll(&args.data, scheme)?;
    let stats = corpus_stats(&corpus);
    println!("tokens\t{}", stats.tokens);
    println!("entities\t{}", stats.entities);
    println!("sentences\t{}", stats.sentences);
    println!("scheme_violations\t{}", corpus.scheme_violations);
    Ok(())
}

// ---- convert ----

#[derive(Args)]
struct ConvertArgs {
    #[arg(long)]
    data: PathBuf,
    /// Scheme of the input data.
    #[arg(long)]
    scheme: String,
    /// Target scheme.
    #[arg(long)]
    to: String,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn cmd_convert(args: ConvertArgs) -> Result<(), CliError> {
    let scheme = parse_scheme(&args.scheme)?;
    let target = parse_scheme(&args.to)?;
    let corpus = parse_conll(&args.data, scheme)?;
    let converted = convert_scheme(&corpus, target);
    emit(&args.out, &serialize_corpus(&converted))
}

// ---- campaign ----

#[derive(Args)]
struct CampaignArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    scheme: String,
    #[arg(long)]
    embeddings: PathBuf,
    #[arg(long)]
    test: Option<PathBuf>,
    #[arg(long)]
    test_embeddings: Option<PathBuf>,
    #[arg(long)]
    dict: Option<PathBuf>,
    /// Seeded trials per variant.
    #[arg(long)]
    trials: usize,
    /// Comma list of encoder variants, e.g. none,glynn.
    #[arg(long, value_delimiter = ',')]
    variants: Vec<EncoderChoice>,
    /// Baseline variant for p-values (default: the first).
    #[arg(long)]
    baseline: Option<EncoderChoice>,
    /// Use the pooled-variance t-test instead of Welch.
    #[arg(long)]
    pooled: bool,
    /// Machine-readable per-trial scores (TSV).
    #[arg(long)]
    trials_tsv: Option<PathBuf>,
    /// Directory for per-trial epoch curves (one TSV per trial).
    #[arg(long)]
    curves_dir: Option<PathBuf>,
    #[command(flatten)]
    overrides: RunOverrides,
}

fn cmd_campaign(args: CampaignArgs) -> Result<(), CliError> {
    if args.trials < 2 {
        return Err(CliError::config("--trials must be at least 2 for significance"));
    }
    if args.variants.is_empty() {
        return Err(CliError::config("--variants must name at least one encoder"));
    }
    let baseline = args.baseline.unwrap_or(args.variants[0]);
    if !args.variants.contains(&baseline) {
        return Err(CliError::config("--baseline must be one of --variants"));
    }
    let scheme = parse_scheme(&args.scheme)?;
    let (base_config, _) = args.overrides.resolve(None)?;
    let corpus = load_corpus(&args.train, scheme, Split::Train)?;
    let embeddings = load_embeddings(&args.embeddings, &corpus, "train")?;
    let dict = match &args.dict {
        Some(p) => Some(GlyphDictionary::load_dictionary(p)?),
        None => None,
    };
    if args.variants.iter().any(|v| *v != EncoderChoice::None) && dict.is_none() {
        return Err(CliError::config("glyph variants need --dict"));
    }
    // Scoring set: the test split when given, otherwise the train set.
    let scoring: (Corpus, ContextEmbeddings) = match &args.test {
        Some(p) => {
            let c = load_corpus(p, scheme, Split::Test)?;
            let e = match secondary_embeddings(&embeddings, args.test_embeddings.as_ref(), &c, "test")? {
                Some(e) => e,
                None => load_embeddings(&args.embeddings, &c, "test")?,
            };
            (c, e)
        }
        None => {
            let e = load_embeddings(&args.embeddings, &corpus, "train")?;
            (corpus.clone(), e)
        }
    };
    let gold: Vec<Vec<String>> = scoring.0.sentences.iter().map(|s| s.tags.clone()).collect();

    if let Some(dir) = &args.curves_dir {
        std::fs::create_dir_all(dir)
            .map_err(|e| CliError::Io(format!("cannot create '{}': {e}", dir.display())))?;
    }
    let mut trial_rows = String::from("variant\ttrial\tseed\tf1\n");
    let mut scores_per_variant: Vec<(EncoderChoice, Vec<f64>)> = Vec::new();
    for (vi, &variant) in args.variants.iter().enumerate() {
        let mut scores = Vec::with_capacity(args.trials);
        for trial in 0..args.trials {
            let mut config = base_config.clone();
            config.encoder = variant;
            config.seed = base_config.seed.wrapping_add(trial as u64);
            let outcome = train(&corpus, &embeddings, None, dict.as_ref(), None, &config)?;
            if let Some(dir) = &args.curves_dir {
                let name = format!("{}-{}-trial{}.tsv", vi, variant.as_str(), trial);
                write_curves(&dir.join(name), &outcome)?;
            }
            let mut model = outcome.model;
            let predicted = predict_corpus(&mut model, &scoring.0, &scoring.1, dict.as_ref())?;
            let report = score_f1(&gold, &predicted, scheme)?;
            let f1 = report.overall.f1();
            trial_rows.push_str(&format!(
                "{}\t{}\t{}\t{:.6}\n",
                variant.as_str(),
                trial,
                config.seed,
                f1
            ));
            scores.push(f1);
        }
        scores_per_variant.push((variant, scores));
    }
    if let Some(path) = &args.trials_tsv {
        write_text(path, &trial_rows)?;
    }

    let kind = if args.pooled { TTestKind::Pooled } else { TTestKind::Welch };
    let baseline_index = scores_per_variant
        .iter()
        .position(|(v, _)| *v == baseline)
        .expect("baseline is one of the variants");
    let baseline_scores = scores_per_variant[baseline_index].1.clone();
    let mut rows = Vec::new();
    for (i, (variant, scores)) in scores_per_variant.iter().enumerate() {
        let p_value = if i == baseline_index {
            None
        } else {
            Some(two_sample_ttest(scores, &baseline_scores, kind)?.p)
        };
        rows.push(SummaryRow {
            name: variant.as_str().to_string(),
            summary: summarize(scores)?,
            p_value,
        });
    }
    print!("{}", format_summary_table(&rows));
    Ok(())
}

// ---- ttest ----

#[derive(Args)]
struct TtestArgs {
    /// First score file, one number per line.
    #[arg(long)]
    a: PathBuf,
    /// Second score file, one number per line.
    #[arg(long)]
    b: PathBuf,
    /// Pooled-variance Student's t instead of Welch.
    #[arg(long)]
    pooled: bool,
}

fn read_scores(path: &Path) -> Result<Vec<f64>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("cannot read scores '{}': {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        out.push(line.parse::<f64>().map_err(|_| {
            CliError::Generic(format!("{}:{}: '{line}' is not a number", path.display(), i + 1))
        })?);
    }
    Ok(out)
}

fn cmd_ttest(args: TtestArgs) -> Result<(), CliError> {
    let a = read_scores(&args.a)?;
    let b = read_scores(&args.b)?;
    let kind = if args.pooled { TTestKind::Pooled } else { TTestKind::Welch };
    let result = two_sample_ttest(&a, &b, kind)?;
    println!("t\t{:.6}", result.t);
    println!("df\t{:.6}", result.df);
    println!("p\t{:.6}", result.p);
    println!("significant_at_.05\t{}", result.p < 0.05);
    Ok(())
}

// ---- small helpers ----

fn write_text(path: &Path, content: &str) -> Result<(), CliError> {
    std::fs::write(path, content)
        .map_err(|e| CliError::Io(format!("cannot write '{}': {e}", path.display())))
}

fn emit(path: &Option<PathBuf>, content: &str) -> Result<(), CliError> {
    match path {
        Some(p) => write_text(p, content),
        None => {
            std::io::stdout()
                .write_all(content.as_bytes())
                .map_err(|e| CliError::Io(e.to_string()))
        }
    }
}
