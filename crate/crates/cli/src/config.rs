use std::collections::BTreeMap;
use std::path::Path;

use glyphtag::optim::OptimizerKind;
use glyphtag::tagger::{EncoderChoice, TrainConfig};

use crate::error::CliError;

/// Training knobs shared by `train` and `campaign`. Every field mirrors
/// a config-file key; command-line flags override file values, and
/// anything left unset falls back to the built-in defaults.
#[derive(Clone, Debug, Default, clap::Args)]
pub struct RunOverrides {
    /// Flat key=value config file.
    #[arg(long)]
    pub config: Option<std::path::PathBuf>,
    /// Training epochs.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Mini batch size.
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// BiLSTM hidden size per direction.
    #[arg(long)]
    pub hidden_size_lstm: Option<usize>,
    /// Dropout on the BiLSTM output.
    #[arg(long)]
    pub dropout_lstm: Option<f64>,
    /// Optimizer: adafactor, adam, or rmsprop.
    #[arg(long)]
    pub optimizer: Option<String>,
    /// Explicit base learning rate (omit for Adafactor's relative step).
    #[arg(long)]
    pub lr: Option<f64>,
    /// First decay steps of the cosine schedule.
    #[arg(long)]
    pub first_decay_steps: Option<u64>,
    /// Global gradient-norm clip.
    #[arg(long)]
    pub clip_grad_norm: Option<f64>,
    /// Decoupled weight decay on matrix parameters.
    #[arg(long)]
    pub weight_decay: Option<f64>,
    /// Dropout after GLYNN's first pooling stage.
    #[arg(long)]
    pub glynn_dropout1: Option<f64>,
    /// Dropout after GLYNN's second pooling stage.
    #[arg(long)]
    pub glynn_dropout2: Option<f64>,
    /// Stop when the monitored loss has not decreased for this many epochs.
    #[arg(long)]
    pub early_stop_patience: Option<usize>,
    /// Random seed for initialization, shuffling, and dropout.
    #[arg(long)]
    pub seed: Option<u64>,
}

fn parse_key<T: std::str::FromStr>(map: &BTreeMap<String, String>, key: &str) -> Result<Option<T>, CliError> {
    match map.get(key) {
        None => Ok(None),
        Some(raw) => raw
            .parse::<T>()
            .map(Some)
            .map_err(|_| CliError::config(format!("bad value '{raw}' for config key '{key}'"))),
    }
}

pub fn parse_optimizer(name: &str) -> Result<OptimizerKind, CliError> {
    match name.to_ascii_lowercase().as_str() {
        "adafactor" => Ok(OptimizerKind::Adafactor),
        "adam" => Ok(OptimizerKind::adam_default()),
        "rmsprop" => Ok(OptimizerKind::rmsprop_default()),
        other => Err(CliError::config(format!(
            "unknown optimizer '{other}' (adafactor|adam|rmsprop)"
        ))),
    }
}

/// Reads a flat key=value file; `#` starts a comment line.
pub fn read_config_file(path: &Path) -> Result<BTreeMap<String, String>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("cannot read config '{}': {e}", path.display())))?;
    let mut map = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(CliError::config(format!(
                "config line {} is not key=value: '{line}'",
                i + 1
            )));
        };
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(map)
}

const KNOWN_KEYS: &[&str] = &[
    "epochs",
    "batch_size",
    "hidden_size_lstm",
    "dropout_lstm",
    "optimizer",
    "lr",
    "first_decay_steps",
    "clip_grad_norm",
    "weight_decay",
    "glynn_dropout1",
    "glynn_dropout2",
    "early_stop_patience",
    "seed",
    "encoder",
];

impl RunOverrides {
    /// Resolves defaults, config file, and flags (in that precedence)
    /// into a [`TrainConfig`]. The encoder choice comes from the
    /// dedicated flag but may also be set by the file's `encoder` key.
    pub fn resolve(&self, encoder_flag: Option<EncoderChoice>) -> Result<(TrainConfig, EncoderChoice), CliError> {
        let file = match &self.config {
            Some(path) => read_config_file(path)?,
            None => BTreeMap::new(),
        };
        if let Some(bad) = file.keys().find(|k| !KNOWN_KEYS.contains(&k.as_str())) {
            return Err(CliError::config(format!("unknown config key '{bad}'")));
        }
        let mut cfg = TrainConfig::default();
        if let Some(v) = parse_key(&file, "epochs")? {
            cfg.epochs = v;
        }
        if let Some(v) = parse_key(&file, "batch_size")? {
            cfg.batch_size = v;
        }
        if let Some(v) = parse_key(&file, "hidden_size_lstm")? {
            cfg.hidden = v;
        }
        if let Some(v) = parse_key(&file, "dropout_lstm")? {
            cfg.lstm_dropout = v;
        }
        if let Some(name) = file.get("optimizer") {
            cfg.optimizer = parse_optimizer(name)?;
        }
        if let Some(v) = parse_key(&file, "lr")? {
            cfg.lr = Some(v);
        }
        if let Some(v) = parse_key(&file, "first_decay_steps")? {
            cfg.first_decay_steps = v;
        }
        if let Some(v) = parse_key(&file, "clip_grad_norm")? {
            cfg.clip_grad_norm = v;
        }
        if let Some(v) = parse_key(&file, "weight_decay")? {
            cfg.weight_decay = v;
        }
        if let Some(v) = parse_key(&file, "glynn_dropout1")? {
            cfg.glynn_dropout.0 = v;
        }
        if let Some(v) = parse_key(&file, "glynn_dropout2")? {
            cfg.glynn_dropout.1 = v;
        }
        if let Some(v) = parse_key(&file, "early_stop_patience")? {
            cfg.early_stop_patience = Some(v);
        }
        if let Some(v) = parse_key(&file, "seed")? {
            cfg.seed = v;
        }
        let file_encoder: Option<EncoderChoice> = match file.get("encoder") {
            Some(name) => Some(name.parse().map_err(CliError::Config)?),
            None => None,
        };

        if let Some(v) = self.epochs {
            cfg.epochs = v;
        }
        if let Some(v) = self.batch_size {
            cfg.batch_size = v;
        }
        if let Some(v) = self.hidden_size_lstm {
            cfg.hidden = v;
        }
        if let Some(v) = self.dropout_lstm {
            cfg.lstm_dropout = v;
        }
        if let Some(name) = &self.optimizer {
            cfg.optimizer = parse_optimizer(name)?;
        }
        if let Some(v) = self.lr {
            cfg.lr = Some(v);
        }
        if let Some(v) = self.first_decay_steps {
            cfg.first_decay_steps = v;
        }
        if let Some(v) = self.clip_grad_norm {
            cfg.clip_grad_norm = v;
        }
        if let Some(v) = self.weight_decay {
            cfg.weight_decay = v;
        }
        if let Some(v) = self.glynn_dropout1 {
            cfg.glynn_dropout.0 = v;
        }
        if let Some(v) = self.glynn_dropout2 {
            cfg.glynn_dropout.1 = v;
        }
        if let Some(v) = self.early_stop_patience {
            cfg.early_stop_patience = Some(v);
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }

        if cfg.batch_size == 0 {
            return Err(CliError::config("batch_size must be at least 1"));
        }
        if !(0.0..1.0).contains(&cfg.lstm_dropout)
            || !(0.0..1.0).contains(&cfg.glynn_dropout.0)
            || !(0.0..1.0).contains(&cfg.glynn_dropout.1)
        {
            return Err(CliError::config("dropout rates must be in [0, 1)"));
        }
        if cfg.first_decay_steps == 0 {
            return Err(CliError::config("first_decay_steps must be at least 1"));
        }
        let encoder = encoder_flag.or(file_encoder).unwrap_or(EncoderChoice::None);
        cfg.encoder = encoder;
        Ok((cfg, encoder))
    }
}

/// The resolved settings as `key=value` pairs, recorded in checkpoints.
pub fn config_pairs(cfg: &TrainConfig) -> Vec<(String, String)> {
    let optimizer = match cfg.optimizer {
        OptimizerKind::Adafactor => "adafactor",
        OptimizerKind::Adam { .. } => "adam",
        OptimizerKind::RmsProp { .. } => "rmsprop",
    };
    let mut pairs = vec![
        ("epochs".to_string(), cfg.epochs.to_string()),
        ("batch_size".to_string(), cfg.batch_size.to_string()),
        ("hidden_size_lstm".to_string(), cfg.hidden.to_string()),
        ("dropout_lstm".to_string(), cfg.lstm_dropout.to_string()),
        ("optimizer".to_string(), optimizer.to_string()),
        ("first_decay_steps".to_string(), cfg.first_decay_steps.to_string()),
        ("clip_grad_norm".to_string(), cfg.clip_grad_norm.to_string()),
        ("weight_decay".to_string(), cfg.weight_decay.to_string()),
        ("glynn_dropout1".to_string(), cfg.glynn_dropout.0.to_string()),
        ("glynn_dropout2".to_string(), cfg.glynn_dropout.1.to_string()),
        ("encoder".to_string(), cfg.encoder.as_str().to_string()),
        ("seed".to_string(), cfg.seed.to_string()),
    ];
    if let Some(lr) = cfg.lr {
        pairs.push(("lr".to_string(), lr.to_string()));
    }
    if let Some(p) = cfg.early_stop_patience {
        pairs.push(("early_stop_patience".to_string(), p.to_string()));
    }
    pairs
}
