//! Detection F1 with one-to-one IoU matching, and the confidence threshold
//! search that maximizes it over a whole image collection.
//!
//! Only mitotic detections and mitotic ground truth take part; the
//! non-mitotic class is a training cue and is filtered out before matching.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};

use crate::dataset::{Annotation, Label, Manifest};
use crate::error::EvalError;
use crate::geometry::iou;
use crate::postprocess::{apply_threshold, nms, score_order, Detection};

/// Default IoU for counting a detection as a hit.
pub const DEFAULT_EVAL_IOU: f64 = 0.1;

/// True/false positive and false negative counts. Sums are order independent.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl Add for Counts {
    type Output = Counts;

    fn add(self, rhs: Counts) -> Counts {
        Counts {
            tp: self.tp + rhs.tp,
            fp: self.fp + rhs.fp,
            fn_: self.fn_ + rhs.fn_,
        }
    }
}

impl AddAssign for Counts {
    fn add_assign(&mut self, rhs: Counts) {
        *self = *self + rhs;
    }
}

impl std::iter::Sum for Counts {
    fn sum<I: Iterator<Item = Counts>>(iter: I) -> Counts {
        iter.fold(Counts::default(), Add::add)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Precision, recall and F1 with every `0/0` taken as 0.
///
/// F1 is evaluated as `2tp / (2tp + fp + fn)`, which equals `2PR / (P + R)`
/// and gives bit-identical results for equal ratios.
pub fn compute_prf(tp: u64, fp: u64, fn_: u64) -> Prf {
    Prf {
        precision: ratio(tp, tp + fp),
        recall: ratio(tp, tp + fn_),
        f1: ratio(2 * tp, 2 * tp + fp + fn_),
    }
}

/// Harmonic mean of a precision/recall pair, 0 when both are 0.
pub fn f1_from_pr(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchPair {
    /// Index into the detection slice passed to [`match_detections`].
    pub det: usize,
    /// Index into the ground-truth slice.
    pub gt: usize,
    pub iou: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub counts: Counts,
    pub matches: Vec<MatchPair>,
}

/// Greedy one-to-one matching of mitotic detections to mitotic ground truth.
///
/// Detections are visited by descending score (input order on ties). Each
/// claims the still-unmatched ground-truth box of highest IoU, provided that
/// IoU is `>= iou_threshold`; ties go to the lowest ground-truth index.
pub fn match_detections(dets: &[Detection], gt: &[Annotation], iou_threshold: f64) -> MatchResult {
    let gt_idx: Vec<usize> = (0..gt.len()).filter(|&i| gt[i].is_mitotic()).collect();
    let mut taken = vec![false; gt_idx.len()];
    let mut matches = Vec::new();
    let mut fp = 0u64;

    for d in score_order(dets) {
        let det = &dets[d];
        if det.label != Label::Mitotic {
            continue;
        }
        let mut best: Option<(usize, f64)> = None;
        for (slot, &g) in gt_idx.iter().enumerate() {
            if taken[slot] {
                continue;
            }
            let v = iou(&det.bbox, &gt[g].bbox);
            if v >= iou_threshold && best.is_none_or(|(_, bv)| v > bv) {
                best = Some((slot, v));
            }
        }
        match best {
            Some((slot, v)) => {
                taken[slot] = true;
                matches.push(MatchPair {
                    det: d,
                    gt: gt_idx[slot],
                    iou: v,
                });
            }
            None => fp += 1,
        }
    }
    let tp = matches.len() as u64;
    MatchResult {
        counts: Counts {
            tp,
            fp,
            fn_: gt_idx.len() as u64 - tp,
        },
        matches,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub threshold: f64,
    pub iou_threshold: f64,
}

impl EvalReport {
    pub fn from_counts(counts: Counts, threshold: f64, iou_threshold: f64) -> Self {
        let Prf {
            precision,
            recall,
            f1,
        } = compute_prf(counts.tp, counts.fp, counts.fn_);
        Self {
            tp: counts.tp,
            fp: counts.fp,
            fn_: counts.fn_,
            precision,
            recall,
            f1,
            threshold,
            iou_threshold,
        }
    }

    pub fn counts(&self) -> Counts {
        Counts {
            tp: self.tp,
            fp: self.fp,
            fn_: self.fn_,
        }
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<14} {:>10}", "metric", "value")?;
        writeln!(f, "{:-<25}", "")?;
        writeln!(f, "{:<14} {:>10}", "tp", self.tp)?;
        writeln!(f, "{:<14} {:>10}", "fp", self.fp)?;
        writeln!(f, "{:<14} {:>10}", "fn", self.fn_)?;
        writeln!(f, "{:<14} {:>10.4}", "precision", self.precision)?;
        writeln!(f, "{:<14} {:>10.4}", "recall", self.recall)?;
        writeln!(f, "{:<14} {:>10.4}", "f1", self.f1)?;
        writeln!(f, "{:<14} {:>10.4}", "threshold", self.threshold)?;
        write!(f, "{:<14} {:>10.4}", "iou_threshold", self.iou_threshold)
    }
}

/// Detections and ground truth of one image, in the same frame.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ImageEval {
    pub detections: Vec<Detection>,
    pub ground_truth: Vec<Annotation>,
}

/// Counts summed over images after thresholding each at `tau`.
pub fn counts_at_threshold(images: &[ImageEval], tau: f64, iou_threshold: f64) -> Counts {
    images
        .iter()
        .map(|img| {
            match_detections(
                &apply_threshold(&img.detections, tau),
                &img.ground_truth,
                iou_threshold,
            )
            .counts
        })
        .sum()
}

/// One row of the precision/recall curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub threshold: f64,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSearch {
    pub threshold: f64,
    pub report: EvalReport,
    /// No mitotic detection anywhere: the threshold is meaningless.
    pub degenerate: bool,
    /// Every candidate threshold, ascending.
    pub curve: Vec<CurvePoint>,
}

/// Picks the confidence threshold that maximizes F1 over all images pooled.
///
/// Candidates are 0 and every distinct mitotic detection score; F1 can only
/// change at those values, so the search is exact. Ties go to the largest
/// threshold.
///
/// Greedy matching visits detections in score order, so thresholding at `t`
/// keeps a prefix of that order and the prefix's matches are unchanged. One
/// matching pass per image therefore labels every detection as hit or miss
/// for all thresholds at once.
pub fn tune_threshold(
    images: &[ImageEval],
    iou_threshold: f64,
) -> Result<ThresholdSearch, EvalError> {
    if images.is_empty() {
        return Err(EvalError::NoImages);
    }
    let mut hits: Vec<(f64, bool)> = Vec::new();
    let mut n_gt = 0u64;
    for img in images {
        let result = match_detections(&img.detections, &img.ground_truth, iou_threshold);
        n_gt += result.counts.tp + result.counts.fn_;
        let mut is_tp = vec![false; img.detections.len()];
        for m in &result.matches {
            is_tp[m.det] = true;
        }
        hits.extend(
            img.detections
                .iter()
                .zip(is_tp)
                .filter(|(d, _)| d.label == Label::Mitotic)
                .map(|(d, tp)| (d.score, tp)),
        );
    }

    let point = |threshold: f64, tp: u64, fp: u64| {
        let prf = compute_prf(tp, fp, n_gt - tp);
        CurvePoint {
            threshold,
            tp,
            fp,
            fn_: n_gt - tp,
            precision: prf.precision,
            recall: prf.recall,
            f1: prf.f1,
        }
    };

    // Walk thresholds from high to low, admitting one score group at a time.
    hits.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut curve = Vec::new();
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut i = 0;
    while i < hits.len() {
        let score = hits[i].0;
        while i < hits.len() && hits[i].0 == score {
            if hits[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        curve.push(point(score, tp, fp));
    }
    if curve.last().is_none_or(|p| p.threshold > 0.0) {
        curve.push(point(0.0, tp, fp));
    }
    curve.reverse();

    let degenerate = hits.is_empty();
    // Ascending curve: a later point with equal F1 has the larger threshold.
    let best = curve
        .iter()
        .copied()
        .reduce(|best, p| if p.f1 >= best.f1 { p } else { best })
        .expect("curve has at least the zero threshold");
    let report = EvalReport::from_counts(
        Counts {
            tp: best.tp,
            fp: best.fp,
            fn_: best.fn_,
        },
        best.threshold,
        iou_threshold,
    );
    Ok(ThresholdSearch {
        threshold: best.threshold,
        report,
        degenerate,
        curve,
    })
}

/// Parameters of an end-to-end evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunParams {
    pub score_threshold: f64,
    pub nms_iou: f64,
    pub eval_iou: f64,
}

impl Default for RunParams {
    fn default() -> Self {
        Self {
            score_threshold: 0.0,
            nms_iou: crate::postprocess::DEFAULT_NMS_IOU,
            eval_iou: DEFAULT_EVAL_IOU,
        }
    }
}

/// Per-slide detections, keyed by slide id.
pub type Predictions = BTreeMap<String, Vec<Detection>>;

/// Builds one [`ImageEval`] per manifest slide, with detections moved into
/// slide coordinates and passed through NMS (no thresholding).
pub fn slide_images(
    predictions: &Predictions,
    manifest: &Manifest,
    nms_iou: f64,
) -> Result<Vec<ImageEval>, EvalError> {
    if let Some(unknown) = predictions.keys().find(|id| manifest.get(id).is_none()) {
        return Err(EvalError::UnknownSlide(unknown.clone()));
    }
    Ok(manifest
        .slides
        .iter()
        .map(|slide| {
            let dets: Vec<Detection> = predictions
                .get(&slide.slide_id)
                .map(|d| d.iter().map(Detection::to_slide_frame).collect())
                .unwrap_or_default();
            ImageEval {
                detections: nms(&dets, nms_iou),
                ground_truth: slide.annotations.clone(),
            }
        })
        .collect())
}

/// Threshold, per-class NMS and matching on every slide; counts are pooled
/// into one report. Slides without predictions count their mitoses as misses.
pub fn evaluate_run(
    predictions: &Predictions,
    manifest: &Manifest,
    params: RunParams,
) -> Result<EvalReport, EvalError> {
    if let Some(unknown) = predictions.keys().find(|id| manifest.get(id).is_none()) {
        return Err(EvalError::UnknownSlide(unknown.clone()));
    }
    let counts: Counts = manifest
        .slides
        .iter()
        .map(|slide| {
            let dets: Vec<Detection> = predictions
                .get(&slide.slide_id)
                .map(|d| d.iter().map(Detection::to_slide_frame).collect())
                .unwrap_or_default();
            let kept =
                crate::postprocess::postprocess(&dets, params.score_threshold, params.nms_iou);
            match_detections(&kept, &slide.annotations, params.eval_iou).counts
        })
        .sum();
    Ok(EvalReport::from_counts(
        counts,
        params.score_threshold,
        params.eval_iou,
    ))
}
