//! Building-level validation metrics.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::footprint::{BuildingPrediction, Label};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Weighting {
    #[default]
    Area,
    Count,
}

impl Weighting {
    pub fn weight(self, area: f64) -> f64 {
        match self {
            Weighting::Area => area,
            Weighting::Count => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct WeightedConfusion {
    pub tp: f64,
    pub fp: f64,
    pub tn: f64,
    #[serde(rename = "fn")]
    pub fn_: f64,
}

impl WeightedConfusion {
    pub fn total(&self) -> f64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn add(&mut self, predicted: bool, actual: bool, w: f64) {
        match (predicted, actual) {
            (true, true) => self.tp += w,
            (true, false) => self.fp += w,
            (false, false) => self.tn += w,
            (false, true) => self.fn_ += w,
        }
    }
}

/// Ground truth for one building.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Truth {
    pub label: Label,
    pub area: f64,
}

pub fn confusion(
    predictions: &[BuildingPrediction],
    truth: &HashMap<String, Truth>,
    weighting: Weighting,
) -> Result<WeightedConfusion> {
    let mut c = WeightedConfusion::default();
    for p in predictions {
        let t = truth
            .get(&p.footprint_id)
            .ok_or_else(|| Error::MissingLabel(p.footprint_id.clone()))?;
        c.add(
            p.predicted.is_damaged(),
            t.label.is_damaged(),
            weighting.weight(t.area),
        );
    }
    Ok(c)
}

/// Precision, recall and F1; `None` marks an undefined value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
}

pub fn precision_recall_f1(c: &WeightedConfusion) -> Prf {
    let precision = (c.tp + c.fp > 0.0).then(|| c.tp / (c.tp + c.fp));
    let recall = (c.tp + c.fn_ > 0.0).then(|| c.tp / (c.tp + c.fn_));
    let f1 = match (precision, recall) {
        (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
        (Some(_), Some(_)) => Some(0.0),
        _ => None,
    };
    Prf {
        precision,
        recall,
        f1,
    }
}

/// One building's score, label and weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scored {
    pub score: f64,
    pub positive: bool,
    pub weight: f64,
}

fn serialize_threshold<S: Serializer>(t: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if t.is_finite() {
        s.serialize_some(t)
    } else {
        s.serialize_none()
    }
}

fn deserialize_threshold<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NEG_INFINITY))
}

/// A curve vertex. Buildings with `score > threshold` are positive; the last
/// vertex uses `-inf` (serialized as null) and calls everything positive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    #[serde(serialize_with = "serialize_threshold", deserialize_with = "deserialize_threshold")]
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    #[serde(serialize_with = "serialize_threshold", deserialize_with = "deserialize_threshold")]
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

impl PrPoint {
    pub fn f1(&self) -> f64 {
        let s = self.precision + self.recall;
        if s > 0.0 {
            2.0 * self.precision * self.recall / s
        } else {
            0.0
        }
    }
}

/// Cumulative (threshold, tp, fp) at every distinct-score cut, from the
/// highest threshold (nothing positive) down to `-inf` (everything positive).
/// Tied scores move together.
fn sweep(scored: &[Scored]) -> Result<(Vec<(f64, f64, f64)>, f64, f64)> {
    if let Some(s) = scored.iter().find(|s| !s.score.is_finite() || !(s.weight >= 0.0)) {
        return Err(Error::InvalidArgument(format!(
            "scores must be finite with non-negative weight, got {s:?}"
        )));
    }
    let pos: f64 = scored.iter().filter(|s| s.positive).map(|s| s.weight).sum();
    let neg: f64 = scored.iter().filter(|s| !s.positive).map(|s| s.weight).sum();
    if !(pos > 0.0 && neg > 0.0) {
        return Err(Error::SingleClass("need at least one positive and one negative label".into()));
    }
    let mut sorted: Vec<&Scored> = scored.iter().collect();
    sorted.sort_by(|a, b| b.score.total_cmp(&a.score));
    let mut out = Vec::new();
    let (mut tp, mut fp) = (0.0, 0.0);
    let mut i = 0;
    while i < sorted.len() {
        let t = sorted[i].score;
        out.push((t, tp, fp));
        while i < sorted.len() && sorted[i].score == t {
            if sorted[i].positive {
                tp += sorted[i].weight;
            } else {
                fp += sorted[i].weight;
            }
            i += 1;
        }
    }
    out.push((f64::NEG_INFINITY, tp, fp));
    // totals in sweep order so the last vertex is exactly (1, 1)
    Ok((out, tp, fp))
}

/// ROC curve and trapezoidal AUC. Weights replace counts in the rates.
pub fn roc_curve(scored: &[Scored]) -> Result<(Vec<RocPoint>, f64)> {
    let (cuts, pos, neg) = sweep(scored)?;
    let points = cuts
        .iter()
        .map(|&(threshold, tp, fp)| RocPoint {
            threshold,
            fpr: fp / neg,
            tpr: tp / pos,
        })
        .collect();
    // Σ Δfp·(tp_i + tp_{i-1}) / (2·P·N); exact for integer weights.
    let mut area = 0.0;
    for w in cuts.windows(2) {
        let (_, tp0, fp0) = w[0];
        let (_, tp1, fp1) = w[1];
        area += (fp1 - fp0) * (tp1 + tp0);
    }
    Ok((points, area / (2.0 * pos * neg)))
}

/// Precision-recall curve; the cut with no predicted positives is omitted
/// because precision is undefined there.
pub fn pr_curve(scored: &[Scored]) -> Result<Vec<PrPoint>> {
    let (cuts, pos, _) = sweep(scored)?;
    Ok(cuts
        .iter()
        .filter(|(_, tp, fp)| tp + fp > 0.0)
        .map(|&(threshold, tp, fp)| PrPoint {
            threshold,
            precision: tp / (tp + fp),
            recall: tp / pos,
        })
        .collect())
}

/// Threshold maximizing F1 over the curve; ties go to the higher threshold.
pub fn select_threshold(pr: &[PrPoint]) -> Result<PrPoint> {
    let mut best: Option<PrPoint> = None;
    for p in pr {
        best = match best {
            None => Some(*p),
            Some(b) => {
                let (f, fb) = (p.f1(), b.f1());
                if f > fb || (f == fb && p.threshold > b.threshold) {
                    Some(*p)
                } else {
                    Some(b)
                }
            }
        };
    }
    best.ok_or_else(|| Error::InvalidArgument("empty precision-recall curve".into()))
}

/// All damaged items plus an equally sized uniform subset of undamaged
/// ones, in input order.
pub fn balanced_sample<T: Clone>(items: &[T], is_damaged: impl Fn(&T) -> bool, seed: u64) -> Result<Vec<T>> {
    let damaged: Vec<usize> = (0..items.len()).filter(|&i| is_damaged(&items[i])).collect();
    let undamaged: Vec<usize> = (0..items.len()).filter(|&i| !is_damaged(&items[i])).collect();
    if damaged.is_empty() {
        return Err(Error::InvalidArgument("balanced sample needs at least one damaged building".into()));
    }
    let mut keep = vec![false; items.len()];
    for &i in &damaged {
        keep[i] = true;
    }
    if damaged.len() >= undamaged.len() {
        if damaged.len() > undamaged.len() {
            log::warn!(
                "{} damaged but only {} undamaged buildings; keeping all undamaged",
                damaged.len(),
                undamaged.len()
            );
        }
        for &i in &undamaged {
            keep[i] = true;
        }
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for j in rand::seq::index::sample(&mut rng, undamaged.len(), damaged.len()) {
            keep[undamaged[j]] = true;
        }
    }
    Ok(items
        .iter()
        .zip(keep)
        .filter(|(_, k)| *k)
        .map(|(t, _)| t.clone())
        .collect())
}

/// One row of the per-city metrics table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub city: String,
    pub auc: Option<f64>,
    pub f1: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub n: usize,
    pub weighting: Weighting,
    #[serde(serialize_with = "serialize_threshold", deserialize_with = "deserialize_threshold")]
    pub threshold_used: f64,
    pub confusion: WeightedConfusion,
}

/// A building joined with its score and ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub id: String,
    pub city: String,
    pub mean_t: f64,
    pub label: Label,
    pub area: f64,
}

impl EvalRecord {
    pub fn scored(&self, weighting: Weighting) -> Scored {
        Scored {
            score: self.mean_t,
            positive: self.label.is_damaged(),
            weight: weighting.weight(self.area),
        }
    }
}

/// Metrics for one set of buildings at a fixed threshold.
pub fn evaluate(city: &str, records: &[EvalRecord], threshold: f64, weighting: Weighting) -> MetricsReport {
    let mut c = WeightedConfusion::default();
    for r in records {
        c.add(r.mean_t > threshold, r.label.is_damaged(), weighting.weight(r.area));
    }
    let prf = precision_recall_f1(&c);
    let scored: Vec<Scored> = records.iter().map(|r| r.scored(weighting)).collect();
    let auc = roc_curve(&scored).ok().map(|(_, a)| a);
    MetricsReport {
        city: city.to_string(),
        auc,
        f1: prf.f1,
        precision: prf.precision,
        recall: prf.recall,
        n: records.len(),
        weighting,
        threshold_used: threshold,
        confusion: c,
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

/// `City,AUC,F1,Precision,Recall,N` rows; undefined values are left empty.
pub fn metrics_table_csv(rows: &[MetricsReport]) -> String {
    crate::table::csv_text(
        &["City", "AUC", "F1", "Precision", "Recall", "N"],
        rows.iter()
            .map(|r| [r.city.clone(), opt(r.auc), opt(r.f1), opt(r.precision), opt(r.recall), r.n.to_string()]),
    )
}

fn threshold_cell(t: f64) -> String {
    if t.is_finite() {
        format!("{t}")
    } else {
        "-inf".into()
    }
}

pub fn roc_csv(points: &[RocPoint]) -> String {
    let mut s = String::from("threshold,fpr,tpr\n");
    for p in points {
        s.push_str(&format!("{},{},{}\n", threshold_cell(p.threshold), p.fpr, p.tpr));
    }
    s
}

pub fn pr_csv(points: &[PrPoint]) -> String {
    let mut s = String::from("threshold,precision,recall\n");
    for p in points {
        s.push_str(&format!("{},{},{}\n", threshold_cell(p.threshold), p.precision, p.recall));
    }
    s
}
