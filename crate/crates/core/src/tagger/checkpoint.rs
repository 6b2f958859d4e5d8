use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::model::{EncoderChoice, TaggerModel};
use crate::corpus::TagScheme;
use crate::encoders::AutoencoderStack;
use crate::ndtensor::{ParamGroup, Tensor};

const MAGIC: &[u8; 4] = b"GTCK";
const VERSION: u8 = 0x01;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("cannot access checkpoint '{path}': {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("bad checkpoint magic {0:?} (expected \"GTCK\")")]
    BadMagic([u8; 4]),
    #[error("unsupported checkpoint version {0:#04x}")]
    BadVersion(u8),
    #[error("checkpoint is truncated or corrupt: {0}")]
    Corrupt(String),
    #[error("checkpoint config digest does not match its config block")]
    DigestMismatch,
    #[error("checkpoint is missing tensor '{0}'")]
    MissingTensor(String),
    #[error("checkpoint holds unknown tensor '{0}'")]
    UnknownTensor(String),
    #[error("tensor '{name}' has shape {got:?}, expected {want:?}")]
    ShapeMismatch { name: String, want: Vec<usize>, got: Vec<usize> },
    #[error("bad checkpoint config: {0}")]
    BadConfig(String),
    #[error("checkpoint tag set {stored:?} does not match the requested tag set {requested:?}")]
    TagSetMismatch { stored: Vec<String>, requested: Vec<String> },
}

/// Writes the binary checkpoint container: magic, version, a
/// length-prefixed canonical config block with its SHA-256 digest, then
/// named tensor records `[name][rank][extents][f64 little-endian data]`.
pub fn write_container(
    path: &Path,
    config: &str,
    tensors: &[(String, Tensor)],
) -> Result<(), CheckpointError> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.push(VERSION);
    let cb = config.as_bytes();
    buf.extend_from_slice(&(cb.len() as u32).to_le_bytes());
    buf.extend_from_slice(cb);
    buf.extend_from_slice(&Sha256::digest(cb));
    buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        let nb = name.as_bytes();
        buf.extend_from_slice(&(nb.len() as u32).to_le_bytes());
        buf.extend_from_slice(nb);
        buf.push(t.rank() as u8);
        for &e in t.shape() {
            buf.extend_from_slice(&(e as u32).to_le_bytes());
        }
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, buf).map_err(|source| CheckpointError::Io { path: path.to_path_buf(), source })
}

/// Reads a checkpoint container back; the digest is verified.
pub fn read_container(path: &Path) -> Result<(String, Vec<(String, Tensor)>), CheckpointError> {
    let buf =
        fs::read(path).map_err(|source| CheckpointError::Io { path: path.to_path_buf(), source })?;
    let mut pos = 0usize;
    let take = |pos: &mut usize, n: usize, what: &str| -> Result<&[u8], CheckpointError> {
        if *pos + n > buf.len() {
            return Err(CheckpointError::Corrupt(format!("truncated at {what}")));
        }
        let s = &buf[*pos..*pos + n];
        *pos += n;
        Ok(s)
    };
    let magic = take(&mut pos, 4, "magic")?;
    if magic != MAGIC {
        return Err(CheckpointError::BadMagic(magic.try_into().unwrap()));
    }
    let version = take(&mut pos, 1, "version")?[0];
    if version != VERSION {
        return Err(CheckpointError::BadVersion(version));
    }
    let clen = u32::from_le_bytes(take(&mut pos, 4, "config length")?.try_into().unwrap()) as usize;
    let config_bytes = take(&mut pos, clen, "config block")?.to_vec();
    let digest = take(&mut pos, 32, "config digest")?;
    if digest != Sha256::digest(&config_bytes).as_slice() {
        return Err(CheckpointError::DigestMismatch);
    }
    let config = String::from_utf8(config_bytes)
        .map_err(|_| CheckpointError::Corrupt("config is not UTF-8".into()))?;
    let count = u32::from_le_bytes(take(&mut pos, 4, "tensor count")?.try_into().unwrap());
    let mut tensors = Vec::with_capacity(count as usize);
    for i in 0..count {
        let nlen =
            u32::from_le_bytes(take(&mut pos, 4, "name length")?.try_into().unwrap()) as usize;
        let name = String::from_utf8(take(&mut pos, nlen, "name")?.to_vec())
            .map_err(|_| CheckpointError::Corrupt(format!("tensor {i} name is not UTF-8")))?;
        let rank = take(&mut pos, 1, "rank")?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(u32::from_le_bytes(take(&mut pos, 4, "extent")?.try_into().unwrap()) as usize);
        }
        let numel: usize = shape.iter().product();
        let raw = take(&mut pos, numel * 8, "tensor data")?;
        let data: Vec<f64> =
            raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        tensors.push((
            name,
            Tensor::from_vec(shape, data)
                .map_err(|e| CheckpointError::Corrupt(e.to_string()))?,
        ));
    }
    if pos != buf.len() {
        return Err(CheckpointError::Corrupt("trailing bytes after records".into()));
    }
    Ok((config, tensors))
}

fn parse_config(config: &str) -> BTreeMap<String, String> {
    config
        .lines()
        .filter_map(|l| l.split_once('=').map(|(k, v)| (k.trim().to_string(), v.to_string())))
        .collect()
}

fn require<'a>(
    map: &'a BTreeMap<String, String>,
    key: &str,
) -> Result<&'a str, CheckpointError> {
    map.get(key).map(|s| s.as_str()).ok_or_else(|| CheckpointError::BadConfig(format!("missing key '{key}'")))
}

/// Saves a tagger model. `extra` pairs are recorded under `run.` keys
/// for provenance (they do not affect loading).
pub fn save_tagger(
    path: &Path,
    model: &TaggerModel,
    extra: &[(String, String)],
) -> Result<(), CheckpointError> {
    if let Some(bad) = model.tag_set.iter().find(|t| t.contains(',')) {
        return Err(CheckpointError::BadConfig(format!("tag '{bad}' contains a comma")));
    }
    let mut config = String::new();
    config.push_str("model=tagger\n");
    config.push_str(&format!("scheme={}\n", model.scheme));
    config.push_str(&format!("tags={}\n", model.tag_set.join(",")));
    config.push_str(&format!("ctx_dim={}\n", model.ctx_dim));
    config.push_str(&format!("hidden={}\n", model.bilstm.hidden));
    config.push_str(&format!("lstm_dropout={}\n", model.bilstm.dropout));
    config.push_str(&format!("encoder={}\n", model.encoder_choice().as_str()));
    if let Some(crate::encoders::EncoderParams::Glynn(p)) = &model.encoder {
        config.push_str(&format!("glynn_dropout1={}\n", p.dropout1));
        config.push_str(&format!("glynn_dropout2={}\n", p.dropout2));
    }
    for (k, v) in extra {
        config.push_str(&format!("run.{k}={v}\n"));
    }
    let mut tensors: Vec<(String, Tensor)> =
        model.params().into_iter().map(|p| (p.name.clone(), p.value.clone())).collect();
    if let Some(e) = &model.encoder {
        tensors.extend(e.state_tensors());
    }
    write_container(path, &config, &tensors)
}

/// Reconstructs a tagger model and returns it with the parsed config.
pub fn load_tagger(path: &Path) -> Result<(TaggerModel, BTreeMap<String, String>), CheckpointError> {
    let (config, tensors) = read_container(path)?;
    let map = parse_config(&config);
    if require(&map, "model")? != "tagger" {
        return Err(CheckpointError::BadConfig(format!(
            "expected a tagger checkpoint, found model={}",
            map["model"]
        )));
    }
    let scheme: TagScheme = require(&map, "scheme")?
        .parse()
        .map_err(|_| CheckpointError::BadConfig("bad scheme".into()))?;
    let tags: Vec<String> = require(&map, "tags")?.split(',').map(|s| s.to_string()).collect();
    let parse_num = |key: &str| -> Result<f64, CheckpointError> {
        require(&map, key)?
            .parse::<f64>()
            .map_err(|_| CheckpointError::BadConfig(format!("bad number for '{key}'")))
    };
    let ctx_dim = parse_num("ctx_dim")? as usize;
    let hidden = parse_num("hidden")? as usize;
    let lstm_dropout = parse_num("lstm_dropout")?;
    let encoder: EncoderChoice = require(&map, "encoder")?
        .parse()
        .map_err(CheckpointError::BadConfig)?;
    let glynn_dropout = if encoder == EncoderChoice::Glynn {
        (parse_num("glynn_dropout1")?, parse_num("glynn_dropout2")?)
    } else {
        (0.3, 0.5)
    };
    // Build a shell of the right extents, then overwrite every tensor.
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut model = TaggerModel::init(
        &mut rng,
        encoder,
        None,
        ctx_dim,
        hidden,
        lstm_dropout,
        glynn_dropout,
        tags,
        scheme,
    );
    let mut stored: BTreeMap<String, Tensor> = tensors.into_iter().collect();
    for p in model.params_mut() {
        let t = stored
            .remove(&p.name)
            .ok_or_else(|| CheckpointError::MissingTensor(p.name.clone()))?;
        if t.shape() != p.value.shape() {
            return Err(CheckpointError::ShapeMismatch {
                name: p.name.clone(),
                want: p.value.shape().to_vec(),
                got: t.shape().to_vec(),
            });
        }
        p.value = t;
    }
    if let Some(e) = &mut model.encoder {
        let state_names: Vec<String> = e.state_tensors().into_iter().map(|(n, _)| n).collect();
        for name in state_names {
            let t = stored
                .remove(&name)
                .ok_or_else(|| CheckpointError::MissingTensor(name.clone()))?;
            e.set_state_tensor(&name, t);
        }
    }
    if let Some((name, _)) = stored.into_iter().next() {
        return Err(CheckpointError::UnknownTensor(name));
    }
    Ok((model, map))
}

/// Loads a tagger and verifies its tag set matches the request.
pub fn load_tagger_checked(
    path: &Path,
    expected_tags: &[String],
) -> Result<(TaggerModel, BTreeMap<String, String>), CheckpointError> {
    let (model, config) = load_tagger(path)?;
    if model.tag_set != expected_tags {
        return Err(CheckpointError::TagSetMismatch {
            stored: model.tag_set,
            requested: expected_tags.to_vec(),
        });
    }
    Ok((model, config))
}

/// Saves the GLYNN-mirror autoencoder stack.
pub fn save_autoencoder(
    path: &Path,
    stack: &AutoencoderStack,
    extra: &[(String, String)],
) -> Result<(), CheckpointError> {
    let mut config = String::from("model=autoencoder\narch=glynn_mirror\n");
    for (k, v) in extra {
        config.push_str(&format!("run.{k}={v}\n"));
    }
    let tensors: Vec<(String, Tensor)> =
        stack.params().into_iter().map(|p| (p.name.clone(), p.value.clone())).collect();
    write_container(path, &config, &tensors)
}

/// Loads a GLYNN-mirror autoencoder stack.
pub fn load_autoencoder(
    path: &Path,
) -> Result<(AutoencoderStack, BTreeMap<String, String>), CheckpointError> {
    let (config, tensors) = read_container(path)?;
    let map = parse_config(&config);
    if require(&map, "model")? != "autoencoder" || require(&map, "arch")? != "glynn_mirror" {
        return Err(CheckpointError::BadConfig("not a glynn_mirror autoencoder checkpoint".into()));
    }
    let mut stack = AutoencoderStack::glynn_mirror(0);
    let mut stored: BTreeMap<String, Tensor> = tensors.into_iter().collect();
    for p in stack.params_mut() {
        let t = stored
            .remove(&p.name)
            .ok_or_else(|| CheckpointError::MissingTensor(p.name.clone()))?;
        if t.shape() != p.value.shape() {
            return Err(CheckpointError::ShapeMismatch {
                name: p.name.clone(),
                want: p.value.shape().to_vec(),
                got: t.shape().to_vec(),
            });
        }
        p.value = t;
    }
    if let Some((name, _)) = stored.into_iter().next() {
        return Err(CheckpointError::UnknownTensor(name));
    }
    Ok((stack, map))
}
