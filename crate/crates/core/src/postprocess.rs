//! Confidence thresholding and per-class greedy non-maximum suppression.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::dataset::Label;
use crate::geometry::{iou, BBox};

/// Default IoU for suppression; matches the evaluation IoU.
pub const DEFAULT_NMS_IOU: f64 = 0.1;

/// Coordinate frame a detection's box is expressed in.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Frame {
    #[default]
    Slide,
    Tile {
        origin_x: u32,
        origin_y: u32,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: BBox,
    pub score: f64,
    pub label: Label,
    #[serde(default)]
    pub frame: Frame,
}

impl Detection {
    pub fn new(bbox: BBox, score: f64, label: Label) -> Self {
        Self {
            bbox,
            score,
            label,
            frame: Frame::Slide,
        }
    }

    /// Moves a tile-frame detection into slide coordinates; slide-frame
    /// detections are returned unchanged.
    pub fn to_slide_frame(&self) -> Detection {
        match self.frame {
            Frame::Slide => self.clone(),
            Frame::Tile { origin_x, origin_y } => Detection {
                bbox: self.bbox.translate(origin_x as f64, origin_y as f64),
                frame: Frame::Slide,
                ..self.clone()
            },
        }
    }
}

/// Orders indices by descending score, ties by ascending index.
pub(crate) fn score_order(dets: &[Detection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| {
        dets[b]
            .score
            .partial_cmp(&dets[a].score)
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    order
}

/// Indices of the detections kept by [`nms`], in output order.
pub fn nms_indices(dets: &[Detection], iou_threshold: f64) -> Vec<usize> {
    let order = score_order(dets);
    let mut kept: Vec<usize> = Vec::new();
    for &i in &order {
        let suppressed = kept.iter().any(|&k| {
            dets[k].label == dets[i].label && iou(&dets[k].bbox, &dets[i].bbox) >= iou_threshold
        });
        if !suppressed {
            kept.push(i);
        }
    }
    kept
}

/// Greedy NMS run independently per class label.
///
/// Detections are visited by descending score (input order on ties); each
/// one survives unless a survivor of the same class overlaps it with
/// IoU `>= iou_threshold`. Survivors come back by descending score.
pub fn nms(dets: &[Detection], iou_threshold: f64) -> Vec<Detection> {
    nms_indices(dets, iou_threshold)
        .into_iter()
        .map(|i| dets[i].clone())
        .collect()
}

/// Keeps detections with `score >= tau`, preserving order.
pub fn apply_threshold(dets: &[Detection], tau: f64) -> Vec<Detection> {
    dets.iter().filter(|d| d.score >= tau).cloned().collect()
}

/// Threshold first, then NMS.
pub fn postprocess(dets: &[Detection], tau: f64, iou_threshold: f64) -> Vec<Detection> {
    nms(&apply_threshold(dets, tau), iou_threshold)
}
