//! Deterministic fixtures and independent reference implementations
//! shared by the unit, integration, and acceptance suites.
//!
//! Nothing here is used by the production paths; the reference
//! implementations deliberately avoid the code they are checked
//! against.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{parse_conll_str, Corpus, TagScheme};
use crate::glyphdict::{GlyphBitmap, GlyphDictionary, GLYPH_PIXELS};

/// Person-name characters of the synthetic corpus (always tagged PER).
pub const PER_CHARS: [char; 3] = ['\u{5F20}', '\u{738B}', '\u{674E}'];
/// Location characters of the synthetic corpus (always tagged LOC).
pub const LOC_CHARS: [char; 4] = ['\u{4EAC}', '\u{6CAA}', '\u{5DDE}', '\u{6E2F}'];
/// Filler characters (always tagged O).
pub const FILLER_CHARS: [char; 6] =
    ['\u{7684}', '\u{4E00}', '\u{662F}', '\u{5728}', '\u{4E86}', '\u{6709}'];

/// Every character the synthetic corpus can produce.
pub fn synthetic_vocab() -> Vec<char> {
    PER_CHARS.iter().chain(&LOC_CHARS).chain(&FILLER_CHARS).copied().collect()
}

/// A small character-tokenized IOB corpus with PER and LOC entities.
/// Entity membership is a function of character identity, so the task
/// is learnable from either embeddings or glyphs alone.
pub fn synthetic_ner_text(seed: u64, sentences: usize) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = String::new();
    for _ in 0..sentences {
        let push_filler = |out: &mut String, rng: &mut ChaCha8Rng| {
            let c = FILLER_CHARS[rng.gen_range(0..FILLER_CHARS.len())];
            out.push(c);
            out.push_str("\tO\n");
        };
        for _ in 0..rng.gen_range(1..=2) {
            push_filler(&mut out, &mut rng);
        }
        let per_len = rng.gen_range(1..=2);
        for (i, _) in (0..per_len).enumerate() {
            let c = PER_CHARS[rng.gen_range(0..PER_CHARS.len())];
            out.push(c);
            out.push_str(if i == 0 { "\tB-PER\n" } else { "\tI-PER\n" });
        }
        for _ in 0..rng.gen_range(1..=2) {
            push_filler(&mut out, &mut rng);
        }
        let loc_len = rng.gen_range(1..=2);
        for (i, _) in (0..loc_len).enumerate() {
            let c = LOC_CHARS[rng.gen_range(0..LOC_CHARS.len())];
            out.push(c);
            out.push_str(if i == 0 { "\tB-LOC\n" } else { "\tI-LOC\n" });
        }
        push_filler(&mut out, &mut rng);
        out.push('\n');
    }
    out
}

/// Parsed form of [`synthetic_ner_text`].
pub fn synthetic_ner_corpus(seed: u64, sentences: usize) -> Corpus {
    parse_conll_str(&synthetic_ner_text(seed, sentences), TagScheme::Iob).unwrap()
}

/// A glyph bitmap whose ink pattern is a deterministic function of the
/// codepoint, so distinct characters get visibly distinct images.
pub fn patterned_bitmap(cp: u32) -> GlyphBitmap {
    let mut pixels = [0u8; GLYPH_PIXELS];
    let mut state = cp.wrapping_mul(0x9E37_79B9) | 1;
    for (i, p) in pixels.iter_mut().enumerate() {
        state = state.wrapping_mul(1_664_525).wrapping_add(1_013_904_223);
        let stripe = ((i / 64 + (cp as usize % 7)) % 5) < 2;
        *p = if stripe { (state >> 24) as u8 } else { 0 };
    }
    GlyphBitmap::from_bytes(pixels)
}

/// A base dictionary holding patterned bitmaps for the given CJK chars.
pub fn synthetic_dictionary(chars: &[char]) -> GlyphDictionary {
    let entries: BTreeMap<u32, GlyphBitmap> =
        chars.iter().map(|&c| (c as u32, patterned_bitmap(c as u32))).collect();
    GlyphDictionary::new_base(entries).unwrap()
}

/// A dictionary of `count` consecutive CJK codepoints, for pretraining.
pub fn synthetic_dictionary_range(count: usize) -> GlyphDictionary {
    let entries: BTreeMap<u32, GlyphBitmap> = (0..count)
        .map(|i| {
            let cp = 0x4E00 + i as u32;
            (cp, patterned_bitmap(cp))
        })
        .collect();
    GlyphDictionary::new_base(entries).unwrap()
}

/// Random static context vectors for a character set.
pub fn random_static_table(seed: u64, dim: usize, chars: &[char]) -> BTreeMap<u32, Vec<f32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    chars
        .iter()
        .map(|&c| {
            let v: Vec<f32> = (0..dim).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
            (c as u32, v)
        })
        .collect()
}

/// Two-sided Student-t p-value by numerical integration of the
/// unnormalized density, independent of the incomplete-beta route:
/// `p = 2 * I(|t|) / (2 * I(0))` with `I(a) = integral of
/// (1 + x^2/df)^(-(df+1)/2) from a to infinity`.
pub fn t_two_sided_p_by_quadrature(t: f64, df: f64) -> f64 {
    let tail = |a: f64| -> f64 {
        // Substitute x = a + u/(1-u); the integrand vanishes at u = 1.
        let f = |u: f64| -> f64 {
            if u >= 1.0 {
                return 0.0;
            }
            let x = a + u / (1.0 - u);
            let density = (1.0 + x * x / df).powf(-(df + 1.0) / 2.0);
            density / ((1.0 - u) * (1.0 - u))
        };
        // Composite Simpson over [0, 1].
        let n = 200_000usize; // even
        let h = 1.0 / n as f64;
        let mut sum = f(0.0) + f(1.0);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            sum += w * f(i as f64 * h);
        }
        sum * h / 3.0
    };
    (tail(t.abs()) / tail(0.0)).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::corpus_stats;
    use crate::eval::student_t_two_sided_p;

    #[test]
    fn synthetic_corpus_has_two_entity_types() {
        let c = synthetic_ner_corpus(1, 20);
        assert_eq!(c.sentences.len(), 20);
        let types: std::collections::BTreeSet<&str> = c
            .tag_set
            .iter()
            .filter_map(|t| t.split_once('-').map(|(_, l)| l))
            .collect();
        assert_eq!(types.into_iter().collect::<Vec<_>>(), vec!["LOC", "PER"]);
        assert!(corpus_stats(&c).entities >= 20);
    }

    #[test]
    fn patterned_bitmaps_differ_between_chars() {
        let a = patterned_bitmap(0x4E00);
        let b = patterned_bitmap(0x4E01);
        assert_ne!(a, b);
        assert_eq!(a, patterned_bitmap(0x4E00));
    }

    #[test]
    fn quadrature_oracle_agrees_with_the_beta_route() {
        for df in [2.0, 5.0, 10.0, 30.0] {
            for t in [0.0, 0.5, 1.3, 2.7] {
                let a = t_two_sided_p_by_quadrature(t, df);
                let b = student_t_two_sided_p(t, df);
                assert!((a - b).abs() < 1e-6, "df={df} t={t}: {a} vs {b}");
            }
        }
    }
}
