//! Facet-level scoring, clustering baselines and synthetic textured meshes.

mod synth;

pub use synth::{synth_textured_mesh, Mask, Pattern, SynthSpec};

use serde::Serialize;
use thiserror::Error;

use crate::cluster::{self, ClusterError, Samples, NOISE};
use crate::features::FeatureVector;
use crate::labels::{LabelState, EXCLUDED, NON_TEXTURE, TEXTURE};
use crate::rng;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("label vectors differ in length: {pred} vs {truth}")]
    LengthMismatch { pred: usize, truth: usize },
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error("bad synthetic spec: {0}")]
    BadSpec(String),
    #[error("no runs to report")]
    EmptyReport,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

/// Texture is the positive class; facets excluded on either side are skipped.
pub fn confusion(pred: &LabelState, truth: &LabelState) -> Result<ConfusionCounts, EvalError> {
    if pred.len() != truth.len() {
        return Err(EvalError::LengthMismatch {
            pred: pred.len(),
            truth: truth.len(),
        });
    }
    let mut c = ConfusionCounts::default();
    for (&p, &t) in pred.labels().iter().zip(truth.labels()) {
        match (p, t) {
            (TEXTURE, TEXTURE) => c.tp += 1,
            (TEXTURE, NON_TEXTURE) => c.fp += 1,
            (NON_TEXTURE, TEXTURE) => c.fn_ += 1,
            (NON_TEXTURE, NON_TEXTURE) => c.tn += 1,
            _ => {}
        }
    }
    Ok(c)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct Metrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub miou: f64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Precision, recall, F1 and two-class mean IoU. A zero denominator gives 0.
pub fn metrics(c: ConfusionCounts) -> Metrics {
    let precision = ratio(c.tp, c.tp + c.fp);
    let recall = ratio(c.tp, c.tp + c.fn_);
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    let miou = 0.5 * (ratio(c.tp, c.tp + c.fp + c.fn_) + ratio(c.tn, c.tn + c.fp + c.fn_));
    Metrics {
        precision,
        recall,
        f1,
        miou,
    }
}

pub fn evaluate(pred: &LabelState, truth: &LabelState) -> Result<Metrics, EvalError> {
    Ok(metrics(confusion(pred, truth)?))
}

/// Swaps the two classes of `pred`.
pub fn flip(pred: &LabelState) -> LabelState {
    LabelState::from_labels(
        pred.labels()
            .iter()
            .map(|&l| match l {
                TEXTURE => NON_TEXTURE,
                NON_TEXTURE => TEXTURE,
                other => other,
            })
            .collect(),
    )
}

/// Picks the class assignment of an unordered two-way partition with the
/// higher F1 against `truth`. Returns the aligned labels and whether they
/// were swapped.
pub fn align_to_truth(pred: &LabelState, truth: &LabelState) -> Result<(LabelState, bool), EvalError> {
    let flipped = flip(pred);
    if evaluate(&flipped, truth)?.f1 > evaluate(pred, truth)?.f1 {
        Ok((flipped, true))
    } else {
        Ok((pred.clone(), false))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BaselineMethod {
    KMeans2,
    Gmm2,
    Dbscan { eps: f64, min_pts: usize },
}

impl BaselineMethod {
    pub fn name(&self) -> &'static str {
        match self {
            Self::KMeans2 => "kmeans2",
            Self::Gmm2 => "gmm2",
            Self::Dbscan { .. } => "dbscan",
        }
    }
}

pub fn feature_matrix(features: &[FeatureVector]) -> Vec<f64> {
    features.iter().flat_map(|f| f.values.iter().map(|&v| v as f64)).collect()
}

/// Two-way partition of the feature rows, written at each row's center
/// facet (other facets stay excluded). Cluster 0 is the larger one and maps
/// to non-texture; use [`align_to_truth`] before scoring.
pub fn baseline_segment(
    features: &[FeatureVector],
    facet_count: usize,
    method: BaselineMethod,
    seed: u64,
) -> Result<LabelState, EvalError> {
    let dim = features.first().map_or(1, FeatureVector::dim).max(1);
    let data = feature_matrix(features);
    let x = Samples::new(&data, dim)?;
    if x.len() < 2 {
        return Err(ClusterError::TooFewSamples {
            samples: x.len(),
            clusters: 2,
        }
        .into());
    }
    let mut r = rng::stream(seed, method.name());
    let two: Vec<usize> = match method {
        BaselineMethod::KMeans2 => cluster::kmeans(x, 2, 100, &mut r)?.assignment,
        BaselineMethod::Gmm2 => cluster::gmm(x, 2, 100, &mut r)?.assignment,
        BaselineMethod::Dbscan { eps, min_pts } => {
            let raw = cluster::dbscan(x, eps, min_pts)?;
            let k = raw.iter().filter(|&&l| l != NOISE).max().map_or(0, |m| m + 1);
            let mut sizes = vec![0usize; k];
            for &l in raw.iter().filter(|&&l| l != NOISE) {
                sizes[l] += 1;
            }
            let largest = (0..k).fold(0, |b, c| if sizes[c] > sizes[b] { c } else { b });
            // everything outside the dominant cluster, noise included, forms
            // the smaller side
            raw.iter().map(|&l| usize::from(l != largest)).collect()
        }
    };
    let ones = two.iter().filter(|&&a| a == 1).count();
    let larger = usize::from(ones * 2 > two.len());
    let mut labels = vec![EXCLUDED; facet_count];
    for (f, &a) in features.iter().zip(&two) {
        labels[f.center] = if a == larger { NON_TEXTURE } else { TEXTURE };
    }
    Ok(LabelState::from_labels(labels))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunRecord {
    pub name: String,
    #[serde(flatten)]
    pub metrics: Metrics,
    pub runtime_seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    /// One JSON object per line.
    pub records: String,
    pub table: String,
}

pub fn emit_report(runs: &[RunRecord]) -> Result<Report, EvalError> {
    if runs.is_empty() {
        return Err(EvalError::EmptyReport);
    }
    let records = runs
        .iter()
        .map(|r| serde_json::to_string(r).expect("record serialises") + "\n")
        .collect();
    let width = runs.iter().map(|r| r.name.len()).max().unwrap_or(0).max(7);
    let mut table = format!(
        "{:<width$}  {:>9}  {:>6}  {:>6}  {:>6}  {:>8}\n",
        "variant", "precision", "recall", "f1", "miou", "time_s"
    );
    for r in runs {
        let m = &r.metrics;
        table.push_str(&format!(
            "{:<width$}  {:>9.1}  {:>6.1}  {:>6.1}  {:>6.1}  {:>8.1}\n",
            r.name,
            100.0 * m.precision,
            100.0 * m.recall,
            100.0 * m.f1,
            100.0 * m.miou,
            r.runtime_seconds
        ));
    }
    Ok(Report { records, table })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ls(v: &[i8]) -> LabelState {
        LabelState::from_labels(v.to_vec())
    }

    #[test]
    fn perfect_and_total_miss() {
        let a = ls(&[1, 0, 1, 0]);
        let c = confusion(&a, &a).unwrap();
        assert_eq!((c.fp, c.fn_), (0, 0));
        let m = metrics(c);
        assert_eq!((m.precision, m.recall, m.f1, m.miou), (1.0, 1.0, 1.0, 1.0));
        let c = confusion(&ls(&[1; 10]), &ls(&[0; 10])).unwrap();
        assert_eq!(c, ConfusionCounts { tp: 0, fp: 10, fn_: 0, tn: 0 });
    }

    #[test]
    fn hand_example() {
        let m = metrics(ConfusionCounts { tp: 3, fp: 1, fn_: 1, tn: 5 });
        assert_eq!((m.precision, m.recall, m.f1), (0.75, 0.75, 0.75));
        assert!((m.miou - 0.5 * (3.0 / 5.0 + 5.0 / 7.0)).abs() < 1e-15);
    }

    #[test]
    fn degenerate_convention() {
        let m = metrics(ConfusionCounts { tp: 0, fp: 0, fn_: 0, tn: 10 });
        assert_eq!((m.precision, m.recall, m.f1, m.miou), (0.0, 0.0, 0.0, 0.5));
    }

    #[test]
    fn excluded_and_mismatch() {
        let c = confusion(&ls(&[1, -1, 0]), &ls(&[-1, 1, 0])).unwrap();
        assert_eq!(c, ConfusionCounts { tp: 0, fp: 0, fn_: 0, tn: 1 });
        assert!(matches!(confusion(&ls(&[1]), &ls(&[1, 0])), Err(EvalError::LengthMismatch { .. })));
    }

    #[test]
    fn alignment_swaps_when_better() {
        let truth = ls(&[1, 1, 0, 0]);
        let (a, swapped) = align_to_truth(&ls(&[0, 0, 1, 1]), &truth).unwrap();
        assert!(swapped);
        assert_eq!(a.labels(), truth.labels());
    }

    #[test]
    fn kmeans2_on_blobs_is_exact_up_to_swap() {
        let feats: Vec<FeatureVector> = (0..40)
            .map(|i| FeatureVector {
                center: i,
                values: vec![if i < 20 { -5.0 } else { 5.0 } + (i % 7) as f32 * 0.1, (i % 3) as f32 * 0.1],
            })
            .collect();
        let truth = LabelState::from_labels((0..40).map(|i| i8::from(i >= 20)).collect());
        let pred = baseline_segment(&feats, 40, BaselineMethod::KMeans2, 1).unwrap();
        let (aligned, _) = align_to_truth(&pred, &truth).unwrap();
        assert_eq!(aligned.labels(), truth.labels());
    }

    #[test]
    fn dbscan_degenerate_radius() {
        let feats: Vec<FeatureVector> = (0..10)
            .map(|i| FeatureVector { center: i, values: vec![i as f32] })
            .collect();
        assert_eq!(
            baseline_segment(&feats, 10, BaselineMethod::Dbscan { eps: 1e-9, min_pts: 3 }, 0),
            Err(EvalError::Cluster(ClusterError::AllNoise))
        );
    }

    #[test]
    fn report_layout() {
        let run = |name: &str| RunRecord {
            name: name.into(),
            metrics: Metrics { precision: 0.8766, recall: 0.5, f1: 0.6, miou: 0.55 },
            runtime_seconds: 1.25,
        };
        let r = emit_report(&[run("full")]).unwrap();
        assert_eq!(r.records.lines().count(), 1);
        assert_eq!(r.table.lines().count(), 2);
        assert!(r.table.contains("87.7"));
        assert!(r.records.contains("0.8766"));
        let names = ["w/o-ipc", "w/o-cleaner", "w/o-generator", "w/o-dl", "alg+mlc", "full"];
        let runs: Vec<_> = names.iter().map(|n| run(n)).collect();
        let r = emit_report(&runs).unwrap();
        let rows: Vec<&str> = r.table.lines().skip(1).map(|l| l.split_whitespace().next().unwrap()).collect();
        assert_eq!(rows, names);
        assert_eq!(emit_report(&[]), Err(EvalError::EmptyReport));
    }
}
