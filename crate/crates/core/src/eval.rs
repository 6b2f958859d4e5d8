//! Entity-level scoring, trial summaries, and significance testing.
//!
//! Scores are micro-averaged over exact `(start, end, type)` matches,
//! the CoNLL convention. Multi-trial results are reported as
//! average / sample standard deviation / maximum, with a two-sample
//! t-test (Welch by default) against a designated baseline.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::corpus::TagScheme;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("cannot summarize an empty score list")]
    EmptyScores,
    #[error("t-test needs at least 2 samples per side, got {0} and {1}")]
    TooFewSamples(usize, usize),
    #[error("length mismatch: gold has {gold}, prediction has {pred} ({what})")]
    LengthMismatch { what: &'static str, gold: usize, pred: usize },
}

/// An entity occupying tokens `start..=end` with a type label.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SpanEntity {
    pub start: usize,
    pub end: usize,
    pub label: String,
}

impl SpanEntity {
    pub fn new(start: usize, end: usize, label: impl Into<String>) -> Self {
        SpanEntity { start, end, label: label.into() }
    }
}

fn split_tag(tag: &str) -> (char, Option<&str>) {
    match tag.split_once('-') {
        Some((p, label)) if p.len() == 1 => (p.chars().next().unwrap(), Some(label)),
        _ => (if tag == "O" { 'O' } else { '?' }, None),
    }
}

/// Extracts maximal well-formed spans; malformed continuations start a
/// new span (conservative repair), and a run cut off by the sequence
/// end still counts.
pub fn extract_spans(tags: &[String], scheme: TagScheme) -> BTreeSet<SpanEntity> {
    let mut spans = BTreeSet::new();
    let mut open: Option<(usize, String)> = None;
    let close = |open: &mut Option<(usize, String)>, end: usize, spans: &mut BTreeSet<SpanEntity>| {
        if let Some((start, label)) = open.take() {
            spans.insert(SpanEntity { start, end, label });
        }
    };
    for (t, tag) in tags.iter().enumerate() {
        let (prefix, label) = split_tag(tag);
        match (scheme, prefix, label) {
            (_, 'O', _) | (_, '?', _) => close(&mut open, t.saturating_sub(1), &mut spans),
            (_, 'I', Some(l)) => match &open {
                Some((_, ol)) if ol == l => {}
                _ => {
                    close(&mut open, t.saturating_sub(1), &mut spans);
                    open = Some((t, l.to_string()));
                }
            },
            (TagScheme::Bioes, 'S', Some(l)) => {
                close(&mut open, t.saturating_sub(1), &mut spans);
                spans.insert(SpanEntity::new(t, t, l));
            }
            (TagScheme::Bioes, 'E', Some(l)) => match open.take() {
                Some((start, ol)) if ol == l => {
                    spans.insert(SpanEntity { start, end: t, label: ol });
                }
                other => {
                    open = other;
                    close(&mut open, t.saturating_sub(1), &mut spans);
                    spans.insert(SpanEntity::new(t, t, l.to_string()));
                }
            },
            // B-, and anything prefix-like under IOB, starts a span.
            (_, _, Some(l)) => {
                close(&mut open, t.saturating_sub(1), &mut spans);
                open = Some((t, l.to_string()));
            }
            (_, _, None) => close(&mut open, t.saturating_sub(1), &mut spans),
        }
    }
    let last = tags.len().saturating_sub(1);
    close(&mut open, last, &mut spans);
    spans
}

/// Renders a set of non-overlapping spans back into tags.
#[allow(clippy::needless_range_loop)]
pub fn render_spans(spans: &BTreeSet<SpanEntity>, len: usize, scheme: TagScheme) -> Vec<String> {
    let mut tags = vec!["O".to_string(); len];
    for span in spans {
        debug_assert!(span.end < len && span.start <= span.end);
        match scheme {
            TagScheme::Iob => {
                tags[span.start] = format!("B-{}", span.label);
                for t in span.start + 1..=span.end {
                    tags[t] = format!("I-{}", span.label);
                }
            }
            TagScheme::Bioes => {
                if span.start == span.end {
                    tags[span.start] = format!("S-{}", span.label);
                } else {
                    tags[span.start] = format!("B-{}", span.label);
                    for t in span.start + 1..span.end {
                        tags[t] = format!("I-{}", span.label);
                    }
                    tags[span.end] = format!("E-{}", span.label);
                }
            }
        }
    }
    tags
}

/// Precision / recall / F1 over exact span matches.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PrF1 {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl PrF1 {
    pub fn precision(&self) -> f64 {
        if self.tp + self.fp == 0 {
            0.0
        } else {
            self.tp as f64 / (self.tp + self.fp) as f64
        }
    }

    pub fn recall(&self) -> f64 {
        if self.tp + self.fn_ == 0 {
            0.0
        } else {
            self.tp as f64 / (self.tp + self.fn_) as f64
        }
    }

    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }
}

/// Corpus-level score with a per-type breakdown.
#[derive(Clone, Debug, Default)]
pub struct F1Report {
    pub overall: PrF1,
    pub per_type: BTreeMap<String, PrF1>,
}

/// Micro-averaged entity F1 of predicted tags against gold tags.
pub fn score_f1(
    gold: &[Vec<String>],
    pred: &[Vec<String>],
    scheme: TagScheme,
) -> Result<F1Report, EvalError> {
    if gold.len() != pred.len() {
        return Err(EvalError::LengthMismatch { what: "sentences", gold: gold.len(), pred: pred.len() });
    }
    let mut report = F1Report::default();
    for (g, p) in gold.iter().zip(pred) {
        if g.len() != p.len() {
            return Err(EvalError::LengthMismatch { what: "tokens", gold: g.len(), pred: p.len() });
        }
        let gs = extract_spans(g, scheme);
        let ps = extract_spans(p, scheme);
        for span in ps.intersection(&gs) {
            report.overall.tp += 1;
            report.per_type.entry(span.label.clone()).or_default().tp += 1;
        }
        for span in ps.difference(&gs) {
            report.overall.fp += 1;
            report.per_type.entry(span.label.clone()).or_default().fp += 1;
        }
        for span in gs.difference(&ps) {
            report.overall.fn_ += 1;
            report.per_type.entry(span.label.clone()).or_default().fn_ += 1;
        }
    }
    Ok(report)
}

/// Average, sample standard deviation, and maximum of trial scores.
#[derive(Clone, Debug)]
pub struct TrialSummary {
    pub scores: Vec<f64>,
    pub avg: f64,
    pub std: Option<f64>,
    pub max: f64,
}

pub fn summarize(scores: &[f64]) -> Result<TrialSummary, EvalError> {
    if scores.is_empty() {
        return Err(EvalError::EmptyScores);
    }
    let n = scores.len() as f64;
    let avg = scores.iter().sum::<f64>() / n;
    let std = if scores.len() >= 2 {
        Some((scores.iter().map(|s| (s - avg) * (s - avg)).sum::<f64>() / (n - 1.0)).sqrt())
    } else {
        None
    };
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok(TrialSummary { scores: scores.to_vec(), avg, std, max })
}

/// Which two-sample t-test variant to run.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum TTestKind {
    /// Unequal-variance (Welch) t with Welch-Satterthwaite df.
    Welch,
    /// Pooled-variance Student's t.
    Pooled,
}

#[derive(Clone, Copy, Debug)]
pub struct TTestResult {
    pub t: f64,
    pub df: f64,
    pub p: f64,
}

fn sample_var(xs: &[f64], mean: f64) -> f64 {
    xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

/// Two-sample t-test; two-sided p-value via the regularized incomplete
/// beta function.
///
/// Degenerate inputs follow the stated conventions: zero variance on
/// both sides yields p = 1 for equal means and p = 0 otherwise.
pub fn two_sample_ttest(a: &[f64], b: &[f64], kind: TTestKind) -> Result<TTestResult, EvalError> {
    if a.len() < 2 || b.len() < 2 {
        return Err(EvalError::TooFewSamples(a.len(), b.len()));
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let ma = a.iter().sum::<f64>() / na;
    let mb = b.iter().sum::<f64>() / nb;
    let va = sample_var(a, ma);
    let vb = sample_var(b, mb);
    let (se2, df) = match kind {
        TTestKind::Welch => {
            let se2 = va / na + vb / nb;
            let df = if se2 == 0.0 {
                na + nb - 2.0
            } else {
                se2 * se2 / ((va / na).powi(2) / (na - 1.0) + (vb / nb).powi(2) / (nb - 1.0))
            };
            (se2, df)
        }
        TTestKind::Pooled => {
            let sp2 = ((na - 1.0) * va + (nb - 1.0) * vb) / (na + nb - 2.0);
            (sp2 * (1.0 / na + 1.0 / nb), na + nb - 2.0)
        }
    };
    if se2 == 0.0 {
        return Ok(if ma == mb {
            TTestResult { t: 0.0, df, p: 1.0 }
        } else {
            TTestResult { t: if ma > mb { f64::INFINITY } else { f64::NEG_INFINITY }, df, p: 0.0 }
        });
    }
    let t = (ma - mb) / se2.sqrt();
    let p = student_t_two_sided_p(t, df);
    Ok(TTestResult { t, df, p })
}

/// `P(|T| >= |t|)` for Student's t with `df` degrees of freedom,
/// computed as `I_x(df/2, 1/2)` with `x = df / (df + t^2)`.
pub fn student_t_two_sided_p(t: f64, df: f64) -> f64 {
    if t == 0.0 {
        return 1.0;
    }
    if t.is_infinite() {
        return 0.0;
    }
    let x = df / (df + t * t);
    reg_inc_beta(0.5 * df, 0.5, x).clamp(0.0, 1.0)
}

/// Lanczos approximation of `ln Gamma(x)` for positive `x`.
fn ln_gamma(x: f64) -> f64 {
    const COEFFS: [f64; 6] = [
        76.18009172947146,
        -86.50532032941677,
        24.01409824083091,
        -1.231739572450155,
        0.1208650973866179e-2,
        -0.5395239384953e-5,
    ];
    let mut y = x;
    let tmp = x + 5.5;
    let tmp = tmp - (x + 0.5) * tmp.ln();
    let mut ser = 1.000000000190015;
    for c in COEFFS {
        y += 1.0;
        ser += c / y;
    }
    -tmp + (2.5066282746310005 * ser / x).ln()
}

/// Regularized incomplete beta `I_x(a, b)` via Lentz's continued
/// fraction, using the symmetry that keeps the fraction convergent.
pub fn reg_inc_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(a, b, x) / a
    } else {
        1.0 - front * beta_cf(b, a, 1.0 - x) / b
    }
}

fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const MAX_ITER: usize = 300;
    const EPS: f64 = 3e-16;
    const TINY: f64 = 1e-300;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// One row of the significance table.
#[derive(Clone, Debug)]
pub struct SummaryRow {
    pub name: String,
    pub summary: TrialSummary,
    pub p_value: Option<f64>,
}

/// Renders the Avg / Std dev / Max / p-value table.
pub fn format_summary_table(rows: &[SummaryRow]) -> String {
    let mut cells: Vec<[String; 5]> = vec![[
        "Models".into(),
        "Avg".into(),
        "Std dev".into(),
        "Max".into(),
        "p-value".into(),
    ]];
    for row in rows {
        let std = row.summary.std.map_or("N/A".to_string(), |s| format!("{:.2}", s));
        let p = match row.p_value {
            None => "N/A".to_string(),
            Some(p) if p < 0.001 => "<.001".to_string(),
            Some(p) => format!("{:.3}", p),
        };
        cells.push([
            row.name.clone(),
            format!("{:.2}", row.summary.avg),
            std,
            format!("{:.2}", row.summary.max),
            p,
        ]);
    }
    let mut widths = [0usize; 5];
    for row in &cells {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let mut out = String::new();
    for row in &cells {
        let line: Vec<String> = row
            .iter()
            .zip(&widths)
            .map(|(cell, w)| format!("{:<width$}", cell, width = w))
            .collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
    }
    out
}
