//! Thresholded pixel precision over an evaluation set.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write as _;
use core::str::FromStr;

use crate::dataset::{LabelMap, TrainingExample};
use crate::postprocess::{map_from_tensor, process_map, ProbabilityMap};
use crate::{Error, Result, UNet};

pub const DEFAULT_THRESHOLDS: [f64; 2] = [0.98, 0.85];

fn check(op: &'static str, pred: &ProbabilityMap, label: &LabelMap) -> Result<()> {
    if pred.dims() != label.dims() {
        return Err(Error::shape(op, format!("prediction {:?} vs label {:?}", pred.dims(), label.dims())));
    }
    Ok(())
}

/// Pixels at or above `t` divided by positive label pixels. Can exceed 1;
/// `None` when the label has no positives.
pub fn precision_literal(pred: &ProbabilityMap, label: &LabelMap, t: f64) -> Result<Option<f64>> {
    check("precision_literal", pred, label)?;
    let positives = label.iter().filter(|&&y| y != 0).count();
    if positives == 0 {
        return Ok(None);
    }
    let above = pred.iter().filter(|&&p| p >= t).count();
    Ok(Some(above as f64 / positives as f64))
}

/// Fraction of pixels at or above `t` that are labeled positive; `None`
/// when no pixel reaches `t` or the label has no positives.
pub fn precision_standard(pred: &ProbabilityMap, label: &LabelMap, t: f64) -> Result<Option<f64>> {
    check("precision_standard", pred, label)?;
    if label.iter().all(|&y| y == 0) {
        return Ok(None);
    }
    let (mut above, mut hits) = (0usize, 0usize);
    for (&p, &y) in pred.iter().zip(label.iter()) {
        if p >= t {
            above += 1;
            hits += usize::from(y != 0);
        }
    }
    Ok((above > 0).then(|| hits as f64 / above as f64))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Metric {
    Literal,
    #[default]
    Standard,
}

impl Metric {
    pub fn score(self, pred: &ProbabilityMap, label: &LabelMap, t: f64) -> Result<Option<f64>> {
        match self {
            Metric::Literal => precision_literal(pred, label, t),
            Metric::Standard => precision_standard(pred, label, t),
        }
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "literal" => Ok(Metric::Literal),
            "standard" => Ok(Metric::Standard),
            other => Err(Error::invalid("metric", format!("`{other}` (expected literal or standard)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalConfig {
    pub thresholds: Vec<f64>,
    pub metric: Metric,
    pub use_gaussian: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { thresholds: DEFAULT_THRESHOLDS.to_vec(), metric: Metric::Standard, use_gaussian: true }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.thresholds.is_empty() {
            return Err(Error::invalid("thresholds", "at least one threshold is required"));
        }
        if let Some(t) = self.thresholds.iter().find(|t| !(**t > 0.0 && **t <= 1.0)) {
            return Err(Error::invalid("thresholds", format!("{t} is not in (0, 1]")));
        }
        Ok(())
    }
}

/// Mean metric per threshold over the samples where it is defined.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalColumn {
    pub name: String,
    pub means: Vec<Option<f64>>,
    /// Samples contributing to each mean.
    pub defined: Vec<usize>,
    pub samples: usize,
}

/// Score already-processed maps against their labels.
pub fn evaluate_maps(name: &str, maps: &[ProbabilityMap], labels: &[LabelMap], cfg: &EvalConfig) -> Result<EvalColumn> {
    cfg.validate()?;
    if maps.is_empty() {
        return Err(Error::Empty { what: "evaluation set" });
    }
    if maps.len() != labels.len() {
        return Err(Error::shape("evaluate_maps", format!("{} maps vs {} labels", maps.len(), labels.len())));
    }
    let mut sums = alloc::vec![0.0; cfg.thresholds.len()];
    let mut defined = alloc::vec![0usize; cfg.thresholds.len()];
    for (map, label) in maps.iter().zip(labels) {
        for (i, &t) in cfg.thresholds.iter().enumerate() {
            if let Some(v) = cfg.metric.score(map, label, t)? {
                sums[i] += v;
                defined[i] += 1;
            }
        }
    }
    let means = sums.iter().zip(&defined).map(|(&s, &d)| (d > 0).then(|| s / d as f64)).collect();
    Ok(EvalColumn { name: String::from(name), means, defined, samples: maps.len() })
}

/// Raw eval-mode maps for every example, one forward pass each.
pub fn predict_maps(model: &UNet<f32>, examples: &[TrainingExample]) -> Result<Vec<ProbabilityMap>> {
    examples.iter().map(|e| map_from_tensor(&model.predict(&e.input)?, 0)).collect()
}

/// Evaluate a model; the column is named after its input mode.
pub fn evaluate(model: &UNet<f32>, examples: &[TrainingExample], cfg: &EvalConfig) -> Result<EvalColumn> {
    if examples.is_empty() {
        return Err(Error::Empty { what: "evaluation set" });
    }
    let raw = predict_maps(model, examples)?;
    evaluate_raw(model.mode().label(), &raw, examples, cfg)
}

/// Post-process raw maps per `cfg` and score them.
pub fn evaluate_raw(name: &str, raw: &[ProbabilityMap], examples: &[TrainingExample], cfg: &EvalConfig) -> Result<EvalColumn> {
    let maps: Vec<_> = raw.iter().map(|m| process_map(m, cfg.use_gaussian)).collect();
    let labels: Vec<_> = examples.iter().map(TrainingExample::label).collect();
    evaluate_maps(name, &maps, &labels, cfg)
}

/// Tab-separated table: a `threshold` header followed by one column per
/// evaluated model, one row per threshold.
pub fn format_table(thresholds: &[f64], columns: &[EvalColumn]) -> String {
    let mut out = String::from("threshold");
    for c in columns {
        out.push('\t');
        out.push_str(&c.name);
    }
    out.push('\n');
    for (i, t) in thresholds.iter().enumerate() {
        let _ = write!(out, "{t}");
        for c in columns {
            match c.means.get(i).copied().flatten() {
                Some(v) => {
                    let _ = write!(out, "\t{v:.4}");
                }
                None => out.push_str("\tNA"),
            }
        }
        out.push('\n');
    }
    out
}
