//! Glyph bitmaps and the codepoint-keyed dictionary that serves them.
//!
//! Bitmaps are 64x64 grayscale with ink polarity 1.0 = full ink. A
//! character resolves three ways: a stored bitmap if the dictionary has
//! one, the all-ink BLACK image for an out-of-vocabulary CJK character,
//! and the blank WHITE image otherwise. Extended mode additionally
//! serves stored bitmaps for non-CJK codepoints (the robustness setup
//! with pictures of Latin letters and punctuation thrown in).

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::ndtensor::Tensor;

/// Side length of every glyph image.
pub const GLYPH_SIDE: usize = 64;
/// Pixel count of every glyph image.
pub const GLYPH_PIXELS: usize = GLYPH_SIDE * GLYPH_SIDE;

const MAGIC: &[u8; 4] = b"GLYD";
const VERSION: u8 = 0x01;

#[derive(Debug, Error)]
pub enum GlyphError {
    #[error("cannot open dictionary '{path}': {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("bad magic bytes {0:?} (expected \"GLYD\")")]
    BadMagic([u8; 4]),
    #[error("unsupported dictionary version {0:#04x}")]
    BadVersion(u8),
    #[error("truncated dictionary: record {index} of {count} is incomplete")]
    Truncated { index: u32, count: u32 },
    #[error("duplicate codepoint U+{0:04X}")]
    DuplicateCodepoint(u32),
    #[error("records out of order: U+{prev:04X} then U+{next:04X}")]
    Unsorted { prev: u32, next: u32 },
    #[error("codepoint U+{0:04X} is not a Unicode scalar value")]
    InvalidCodepoint(u32),
    #[error("base dictionary may only hold CJK codepoints, got U+{0:04X}")]
    NonCjkInBase(u32),
    #[error("codepoint U+{0:04X} already present in the base dictionary")]
    Collision(u32),
    #[error("bad glyph image '{path}': {reason}")]
    BadImage { path: PathBuf, reason: String },
    #[error("import file name '{0}' is not of the form U+XXXX.pgm")]
    BadImportName(String),
}

/// A 64x64 grayscale glyph stored as bytes, 255 = full ink.
///
/// Values expose as reals in [0,1] via division by 255; byte storage
/// keeps save/load round-trips bit-exact.
#[derive(Clone, PartialEq, Eq)]
pub struct GlyphBitmap {
    pixels: Box<[u8; GLYPH_PIXELS]>,
}

impl fmt::Debug for GlyphBitmap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let ink: usize = self.pixels.iter().map(|&b| b as usize).sum();
        write!(f, "GlyphBitmap(mean ink {:.3})", ink as f64 / (255.0 * GLYPH_PIXELS as f64))
    }
}

impl GlyphBitmap {
    /// The all-ink fallback for out-of-vocabulary CJK characters.
    pub fn black() -> Self {
        GlyphBitmap { pixels: Box::new([255; GLYPH_PIXELS]) }
    }

    /// The blank fallback for non-CJK characters.
    pub fn white() -> Self {
        GlyphBitmap { pixels: Box::new([0; GLYPH_PIXELS]) }
    }

    pub fn from_bytes(pixels: [u8; GLYPH_PIXELS]) -> Self {
        GlyphBitmap { pixels: Box::new(pixels) }
    }

    /// Quantizes unit-interval values to bytes (`round(v * 255)`).
    pub fn from_unit_values(values: &[f64]) -> Option<Self> {
        if values.len() != GLYPH_PIXELS {
            return None;
        }
        let mut pixels = [0u8; GLYPH_PIXELS];
        for (p, &v) in pixels.iter_mut().zip(values) {
            *p = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        }
        Some(GlyphBitmap { pixels: Box::new(pixels) })
    }

    pub fn bytes(&self) -> &[u8; GLYPH_PIXELS] {
        &self.pixels
    }

    /// Pixel value in [0,1]; row-major.
    pub fn value(&self, i: usize) -> f64 {
        self.pixels[i] as f64 / 255.0
    }

    /// The image as a `[64, 64, 1]` tensor of unit-interval values.
    pub fn to_tensor(&self) -> Tensor {
        let data = self.pixels.iter().map(|&b| b as f64 / 255.0).collect();
        Tensor::from_vec(vec![GLYPH_SIDE, GLYPH_SIDE, 1], data).unwrap()
    }
}

/// Stacks bitmaps into a `[N, 64, 64, 1]` batch tensor.
pub fn bitmaps_to_tensor(batch: &[&GlyphBitmap]) -> Tensor {
    let mut data = Vec::with_capacity(batch.len() * GLYPH_PIXELS);
    for bm in batch {
        data.extend(bm.pixels.iter().map(|&b| b as f64 / 255.0));
    }
    Tensor::from_vec(vec![batch.len(), GLYPH_SIDE, GLYPH_SIDE, 1], data).unwrap()
}

/// How a codepoint relates to the dictionary.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum CharClass {
    ChineseInDict,
    ChineseOov,
    NonChinese,
}

/// Whether a dictionary is the CJK-only base or the extended variant.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum DictMode {
    Base,
    Extended,
}

/// Treats the unified ideographs, extension A, and the compatibility
/// ideographs as "Chinese characters".
pub fn is_cjk(cp: u32) -> bool {
    matches!(cp, 0x4E00..=0x9FFF | 0x3400..=0x4DBF | 0xF900..=0xFAFF)
}

/// Immutable map from codepoint to glyph bitmap.
#[derive(Clone, Debug)]
pub struct GlyphDictionary {
    entries: BTreeMap<u32, GlyphBitmap>,
    mode: DictMode,
}

impl GlyphDictionary {
    /// Builds a base (CJK-only) dictionary.
    pub fn new_base(entries: BTreeMap<u32, GlyphBitmap>) -> Result<Self, GlyphError> {
        if let Some(&cp) = entries.keys().find(|&&cp| !is_cjk(cp)) {
            return Err(GlyphError::NonCjkInBase(cp));
        }
        Ok(GlyphDictionary { entries, mode: DictMode::Base })
    }

    pub fn empty_base() -> Self {
        GlyphDictionary { entries: BTreeMap::new(), mode: DictMode::Base }
    }

    pub fn mode(&self) -> DictMode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, cp: u32) -> bool {
        self.entries.contains_key(&cp)
    }

    pub fn get(&self, cp: u32) -> Option<&GlyphBitmap> {
        self.entries.get(&cp)
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, &GlyphBitmap)> {
        self.entries.iter().map(|(&cp, bm)| (cp, bm))
    }

    /// Classifies a codepoint; total over all Unicode scalars.
    pub fn classify_char(&self, cp: char) -> CharClass {
        let cp = cp as u32;
        if is_cjk(cp) {
            if self.entries.contains_key(&cp) {
                CharClass::ChineseInDict
            } else {
                CharClass::ChineseOov
            }
        } else {
            CharClass::NonChinese
        }
    }

    /// Resolves a codepoint to the bitmap the encoder will see.
    ///
    /// Base mode: stored bitmap for in-dictionary CJK, BLACK for
    /// out-of-vocabulary CJK, WHITE for everything else. Extended mode:
    /// stored bitmap whenever the codepoint is a key (CJK or not), with
    /// the same fallbacks otherwise.
    pub fn resolve_bitmap(&self, cp: char) -> GlyphBitmap {
        let code = cp as u32;
        match self.mode {
            DictMode::Base => match self.classify_char(cp) {
                CharClass::ChineseInDict => self.entries[&code].clone(),
                CharClass::ChineseOov => GlyphBitmap::black(),
                CharClass::NonChinese => GlyphBitmap::white(),
            },
            DictMode::Extended => match self.entries.get(&code) {
                Some(bm) => bm.clone(),
                None if is_cjk(code) => GlyphBitmap::black(),
                None => GlyphBitmap::white(),
            },
        }
    }

    /// Merges extra bitmaps into a base dictionary, producing the
    /// extended variant. The extra keys must be disjoint from the base.
    pub fn extend_dictionary(
        base: &GlyphDictionary,
        extra: BTreeMap<u32, GlyphBitmap>,
    ) -> Result<GlyphDictionary, GlyphError> {
        let mut entries = base.entries.clone();
        for (cp, bm) in extra {
            if entries.insert(cp, bm).is_some() {
                return Err(GlyphError::Collision(cp));
            }
        }
        Ok(GlyphDictionary { entries, mode: DictMode::Extended })
    }

    /// Writes the binary dictionary format: `"GLYD"`, version byte,
    /// little-endian record count, then `[u32 codepoint][4096 bytes]`
    /// records sorted ascending by codepoint.
    pub fn save_dictionary(&self, path: &Path) -> Result<(), GlyphError> {
        let mut buf = Vec::with_capacity(9 + self.entries.len() * (4 + GLYPH_PIXELS));
        buf.extend_from_slice(MAGIC);
        buf.push(VERSION);
        buf.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (&cp, bm) in &self.entries {
            buf.extend_from_slice(&cp.to_le_bytes());
            buf.extend_from_slice(&bm.pixels[..]);
        }
        let mut file = fs::File::create(path)
            .map_err(|source| GlyphError::Io { path: path.to_path_buf(), source })?;
        file.write_all(&buf)
            .map_err(|source| GlyphError::Io { path: path.to_path_buf(), source })?;
        Ok(())
    }

    /// Reads the binary dictionary format. Mode is inferred: a file
    /// containing any non-CJK codepoint loads as extended.
    pub fn load_dictionary(path: &Path) -> Result<GlyphDictionary, GlyphError> {
        let mut file = fs::File::open(path)
            .map_err(|source| GlyphError::Io { path: path.to_path_buf(), source })?;
        let mut buf = Vec::new();
        file.read_to_end(&mut buf)
            .map_err(|source| GlyphError::Io { path: path.to_path_buf(), source })?;
        if buf.len() < 4 {
            return Err(GlyphError::BadMagic({
                let mut m = [0u8; 4];
                m[..buf.len()].copy_from_slice(&buf);
                m
            }));
        }
        if &buf[..4] != MAGIC {
            return Err(GlyphError::BadMagic([buf[0], buf[1], buf[2], buf[3]]));
        }
        if buf.len() < 9 {
            return Err(GlyphError::Truncated { index: 0, count: 0 });
        }
        if buf[4] != VERSION {
            return Err(GlyphError::BadVersion(buf[4]));
        }
        let count = u32::from_le_bytes([buf[5], buf[6], buf[7], buf[8]]);
        let record = 4 + GLYPH_PIXELS;
        let mut entries = BTreeMap::new();
        let mut prev: Option<u32> = None;
        let mut offset = 9;
        for index in 0..count {
            if offset + record > buf.len() {
                return Err(GlyphError::Truncated { index, count });
            }
            let cp = u32::from_le_bytes([buf[offset], buf[offset + 1], buf[offset + 2], buf[offset + 3]]);
            if char::from_u32(cp).is_none() {
                return Err(GlyphError::InvalidCodepoint(cp));
            }
            match prev {
                Some(p) if p == cp => return Err(GlyphError::DuplicateCodepoint(cp)),
                Some(p) if p > cp => return Err(GlyphError::Unsorted { prev: p, next: cp }),
                _ => {}
            }
            prev = Some(cp);
            let mut pixels = [0u8; GLYPH_PIXELS];
            pixels.copy_from_slice(&buf[offset + 4..offset + record]);
            entries.insert(cp, GlyphBitmap::from_bytes(pixels));
            offset += record;
        }
        let mode = if entries.keys().all(|&cp| is_cjk(cp)) { DictMode::Base } else { DictMode::Extended };
        Ok(GlyphDictionary { entries, mode })
    }
}

/// Parses a binary (P5) PGM with 64x64 extents and maxval 255, and
/// inverts it to ink polarity: white paper (255) becomes 0.
pub fn pgm_to_glyph(bytes: &[u8], path: &Path) -> Result<GlyphBitmap, GlyphError> {
    let bad = |reason: &str| GlyphError::BadImage { path: path.to_path_buf(), reason: reason.into() };
    let mut pos = 0;
    let token = |pos: &mut usize| -> Result<String, GlyphError> {
        // Skip whitespace and '#' comments between header tokens.
        loop {
            while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
                *pos += 1;
            }
            if *pos < bytes.len() && bytes[*pos] == b'#' {
                while *pos < bytes.len() && bytes[*pos] != b'\n' {
                    *pos += 1;
                }
            } else {
                break;
            }
        }
        let start = *pos;
        while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if start == *pos {
            return Err(GlyphError::BadImage { path: path.to_path_buf(), reason: "truncated header".into() });
        }
        Ok(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
    };
    if token(&mut pos)? != "P5" {
        return Err(bad("not a binary PGM (expected P5)"));
    }
    let width: usize = token(&mut pos)?.parse().map_err(|_| bad("bad width"))?;
    let height: usize = token(&mut pos)?.parse().map_err(|_| bad("bad height"))?;
    let maxval: usize = token(&mut pos)?.parse().map_err(|_| bad("bad maxval"))?;
    if width != GLYPH_SIDE || height != GLYPH_SIDE {
        return Err(bad(&format!("expected 64x64, got {width}x{height}")));
    }
    if maxval != 255 {
        return Err(bad(&format!("expected maxval 255, got {maxval}")));
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    if bytes.len() < pos + GLYPH_PIXELS {
        return Err(bad("truncated raster"));
    }
    let mut pixels = [0u8; GLYPH_PIXELS];
    for (p, &b) in pixels.iter_mut().zip(&bytes[pos..pos + GLYPH_PIXELS]) {
        *p = 255 - b;
    }
    Ok(GlyphBitmap::from_bytes(pixels))
}

/// Parses `U+XXXX` (hex, 4-6 digits) out of an import file name.
pub fn codepoint_from_file_name(name: &str) -> Result<u32, GlyphError> {
    let stem = name
        .strip_suffix(".pgm")
        .or_else(|| name.strip_suffix(".PGM"))
        .ok_or_else(|| GlyphError::BadImportName(name.into()))?;
    let hex = stem
        .strip_prefix("U+")
        .or_else(|| stem.strip_prefix("u+"))
        .ok_or_else(|| GlyphError::BadImportName(name.into()))?;
    let cp = u32::from_str_radix(hex, 16).map_err(|_| GlyphError::BadImportName(name.into()))?;
    if char::from_u32(cp).is_none() {
        return Err(GlyphError::InvalidCodepoint(cp));
    }
    Ok(cp)
}

/// Reads every `U+XXXX.pgm` in a directory into a codepoint map.
pub fn import_pgm_dir(dir: &Path) -> Result<BTreeMap<u32, GlyphBitmap>, GlyphError> {
    let mut out = BTreeMap::new();
    let rd = fs::read_dir(dir).map_err(|source| GlyphError::Io { path: dir.to_path_buf(), source })?;
    for entry in rd {
        let entry = entry.map_err(|source| GlyphError::Io { path: dir.to_path_buf(), source })?;
        let path = entry.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else { continue };
        if !name.to_ascii_lowercase().ends_with(".pgm") {
            continue;
        }
        let cp = codepoint_from_file_name(name)?;
        let bytes = fs::read(&path).map_err(|source| GlyphError::Io { path: path.clone(), source })?;
        let glyph = pgm_to_glyph(&bytes, &path)?;
        if out.insert(cp, glyph).is_some() {
            return Err(GlyphError::DuplicateCodepoint(cp));
        }
    }
    Ok(out)
}
