//! Square single-scale anchors, anchor/ground-truth matching and minibatch
//! sampling for region-proposal training targets.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Annotation;
use crate::error::ConfigError;
use crate::geometry::{iou, BBox};

/// Anchors over one feature-map level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorGrid {
    pub tile_size: u32,
    pub stride: u32,
    pub scale: f64,
    pub ratio: f64,
    /// Cells per side of the feature map.
    pub cells: u32,
    /// Row-major over cells: index = row * cells + col.
    pub anchors: Vec<BBox>,
}

/// One `scale x scale` anchor per `stride` cell of a square `tile_size` tile,
/// centred at `((col + 0.5) * stride, (row + 0.5) * stride)`.
pub fn generate_anchors(
    tile_size: u32,
    stride: u32,
    scale: f64,
) -> Result<AnchorGrid, ConfigError> {
    if stride == 0 {
        return Err(ConfigError::invalid("anchors.stride", "must be at least 1"));
    }
    if !(scale >= 1.0 && scale.is_finite()) {
        return Err(ConfigError::invalid(
            "anchors.scale",
            format!("{scale} is below 1"),
        ));
    }
    if tile_size < stride {
        return Err(ConfigError::invalid(
            "anchors.stride",
            format!("stride {stride} exceeds tile size {tile_size}"),
        ));
    }
    let cells = tile_size.div_ceil(stride);
    let s = stride as f64;
    let anchors = (0..cells)
        .flat_map(|row| (0..cells).map(move |col| (row, col)))
        .map(|(row, col)| {
            BBox::centered((col as f64 + 0.5) * s, (row as f64 + 0.5) * s, scale)
                .expect("scale is positive")
        })
        .collect();
    Ok(AnchorGrid {
        tile_size,
        stride,
        scale,
        ratio: 1.0,
        cells,
        anchors,
    })
}

/// Concatenates the anchors of several levels, in level order.
pub fn concat_levels(levels: &[AnchorGrid]) -> Vec<BBox> {
    levels
        .iter()
        .flat_map(|g| g.anchors.iter().copied())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnchorLabel {
    Positive,
    Negative,
    Ignore,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorLabels {
    pub labels: Vec<AnchorLabel>,
    /// Ground-truth index each positive anchor regresses to.
    pub matched_gt: Vec<Option<usize>>,
}

impl AnchorLabels {
    pub fn count(&self, label: AnchorLabel) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }

    pub fn indices(&self, label: AnchorLabel) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == label)
            .map(|(i, _)| i)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchThresholds {
    pub positive_iou: f64,
    pub negative_iou: f64,
}

impl Default for MatchThresholds {
    fn default() -> Self {
        Self {
            positive_iou: 0.7,
            negative_iou: 0.3,
        }
    }
}

/// Share of an anchor's area that must lie inside the tile for it to take part.
pub const MIN_INSIDE_FRACTION: f64 = 0.5;

/// Labels every anchor against the ground truth of one tile.
///
/// Anchors with less than half their area inside the tile are `Ignore` and
/// take no further part. Of the rest, an anchor is `Positive` when its best
/// IoU reaches `positive_iou`, `Negative` when it stays below `negative_iou`,
/// and `Ignore` in between. Then each ground-truth box, in order, forces its
/// highest-IoU anchor to `Positive` (lowest index on ties, skipping anchors
/// already forced by an earlier box) so no object is left without a target.
pub fn match_anchors(
    anchors: &[BBox],
    tile_size: u32,
    gt: &[Annotation],
    thresholds: MatchThresholds,
) -> Result<AnchorLabels, ConfigError> {
    let MatchThresholds {
        positive_iou,
        negative_iou,
    } = thresholds;
    if positive_iou.partial_cmp(&negative_iou) != Some(std::cmp::Ordering::Greater) {
        return Err(ConfigError::invalid(
            "anchors.positive_iou",
            format!("{positive_iou} must exceed negative_iou {negative_iou}"),
        ));
    }
    let ts = tile_size as f64;
    let inside: Vec<bool> = anchors
        .iter()
        .map(|a| {
            let kept = a.clip(ts, ts).map_or(0.0, |c| c.area());
            kept >= MIN_INSIDE_FRACTION * a.area()
        })
        .collect();

    let mut labels = vec![AnchorLabel::Ignore; anchors.len()];
    let mut matched_gt = vec![None; anchors.len()];
    let n_gt = gt.len();
    // overlaps[a * n_gt + g]
    let overlaps: Vec<f64> = anchors
        .iter()
        .flat_map(|a| gt.iter().map(move |g| iou(a, &g.bbox)))
        .collect();

    for i in (0..anchors.len()).filter(|&i| inside[i]) {
        let row = &overlaps[i * n_gt..(i + 1) * n_gt];
        let best = row
            .iter()
            .enumerate()
            .fold(None::<(usize, f64)>, |acc, (g, &v)| match acc {
                Some((_, bv)) if bv >= v => acc,
                _ => Some((g, v)),
            });
        match best {
            Some((g, v)) if v >= positive_iou => {
                labels[i] = AnchorLabel::Positive;
                matched_gt[i] = Some(g);
            }
            Some((_, v)) if v >= negative_iou => {}
            _ => labels[i] = AnchorLabel::Negative,
        }
    }

    let mut forced = vec![false; anchors.len()];
    for g in 0..n_gt {
        let best = (0..anchors.len())
            .filter(|&i| inside[i] && !forced[i])
            .fold(None::<(usize, f64)>, |acc, i| {
                let v = overlaps[i * n_gt + g];
                match acc {
                    Some((_, bv)) if bv >= v => acc,
                    _ => Some((i, v)),
                }
            });
        if let Some((i, v)) = best {
            if v > 0.0 {
                forced[i] = true;
                labels[i] = AnchorLabel::Positive;
                matched_gt[i] = Some(g);
            }
        }
    }

    Ok(AnchorLabels { labels, matched_gt })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledAnchor {
    pub index: usize,
    pub label: AnchorLabel,
}

/// Samples a training minibatch: up to `round(batch_size * positive_fraction)`
/// positives, then negatives to fill the batch, both uniformly without
/// replacement. Ignore anchors are never drawn. The result lists positives
/// then negatives, each by ascending anchor index.
pub fn sample_minibatch<R: Rng + ?Sized>(
    labels: &AnchorLabels,
    batch_size: usize,
    positive_fraction: f64,
    rng: &mut R,
) -> Result<Vec<SampledAnchor>, ConfigError> {
    if !(positive_fraction > 0.0 && positive_fraction <= 1.0) {
        return Err(ConfigError::invalid(
            "anchors.positive_fraction",
            format!("{positive_fraction} is outside (0, 1]"),
        ));
    }
    let positives = labels.indices(AnchorLabel::Positive);
    let negatives = labels.indices(AnchorLabel::Negative);
    let pos_quota = (batch_size as f64 * positive_fraction).round() as usize;
    let n_pos = positives.len().min(pos_quota);
    let n_neg = negatives.len().min(batch_size - n_pos);

    let mut pick = |pool: &[usize], n: usize, label: AnchorLabel| -> Vec<SampledAnchor> {
        let mut chosen: Vec<usize> = index::sample(rng, pool.len(), n)
            .into_iter()
            .map(|k| pool[k])
            .collect();
        chosen.sort_unstable();
        chosen
            .into_iter()
            .map(|index| SampledAnchor { index, label })
            .collect()
    };
    let mut batch = pick(&positives, n_pos, AnchorLabel::Positive);
    batch.extend(pick(&negatives, n_neg, AnchorLabel::Negative));
    Ok(batch)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Label;
    use crate::rng;

    fn gt(x: f64, y: f64) -> Annotation {
        Annotation::new(BBox::new(x, y, 50.0, 50.0).unwrap(), Label::Mitotic)
    }

    fn labels_with(pos: usize, neg: usize, ign: usize) -> AnchorLabels {
        let labels: Vec<_> = std::iter::repeat_n(AnchorLabel::Positive, pos)
            .chain(std::iter::repeat_n(AnchorLabel::Ignore, ign))
            .chain(std::iter::repeat_n(AnchorLabel::Negative, neg))
            .collect();
        let matched_gt = vec![None; labels.len()];
        AnchorLabels { labels, matched_gt }
    }

    #[test]
    fn grid_sizes() {
        let g = generate_anchors(1024, 16, 50.0).unwrap();
        assert_eq!(g.anchors.len(), 4096);
        assert!(g.anchors.iter().all(|a| a.w() == 50.0 && a.h() == 50.0));
        let one = generate_anchors(1024, 1024, 50.0).unwrap();
        assert_eq!(one.anchors.len(), 1);
        assert_eq!(one.anchors[0].center(), (512.0, 512.0));
        assert_eq!(generate_anchors(100, 30, 50.0).unwrap().anchors.len(), 16);
        assert!(generate_anchors(10, 0, 50.0).is_err());
        assert!(generate_anchors(10, 20, 50.0).is_err());
    }

    #[test]
    fn grid_count_formula() {
        for stride in [1u32, 2, 4, 8, 16, 32, 64, 128] {
            for mult in [1u32, 3, 8] {
                let ts = stride * mult;
                let g = generate_anchors(ts, stride, 50.0).unwrap();
                assert_eq!(g.anchors.len(), (mult * mult) as usize);
            }
        }
    }

    #[test]
    fn coincident_gt_is_positive_disjoint_negative() {
        let g = generate_anchors(1024, 16, 50.0).unwrap();
        // anchor centred at (8 + 16*20, 8 + 16*20) = (328, 328)
        let target = gt(303.0, 303.0);
        let labels = match_anchors(
            &g.anchors,
            1024,
            std::slice::from_ref(&target),
            MatchThresholds::default(),
        )
        .unwrap();
        let idx = 20 * 64 + 20;
        assert_eq!(g.anchors[idx], target.bbox);
        assert_eq!(labels.labels[idx], AnchorLabel::Positive);
        assert_eq!(labels.matched_gt[idx], Some(0));
        let far = 60 * 64 + 60;
        assert_eq!(labels.labels[far], AnchorLabel::Negative);
    }

    #[test]
    fn middle_band_is_ignored() {
        let gt_box = gt(150.0, 25.0);
        // IoU 0.5: overlap (100/3) x 50 against a union of 5000 - overlap
        let shifted = BBox::new(150.0 + 50.0 / 3.0, 25.0, 50.0, 50.0).unwrap();
        assert!((iou(&shifted, &gt_box.bbox) - 0.5).abs() < 1e-12);
        let anchors = vec![
            BBox::new(25.0, 25.0, 50.0, 50.0).unwrap(),
            gt_box.bbox,
            shifted,
        ];
        let labels = match_anchors(&anchors, 300, &[gt_box], MatchThresholds::default()).unwrap();
        assert_eq!(
            labels.labels,
            vec![
                AnchorLabel::Negative,
                AnchorLabel::Positive,
                AnchorLabel::Ignore
            ]
        );
        assert_eq!(labels.matched_gt, vec![None, Some(0), None]);
    }

    #[test]
    fn empty_gt_gives_all_negative_inside() {
        let g = generate_anchors(256, 64, 50.0).unwrap();
        let labels = match_anchors(&g.anchors, 256, &[], MatchThresholds::default()).unwrap();
        assert!(labels.labels.iter().all(|&l| l == AnchorLabel::Negative));
    }

    #[test]
    fn border_anchors_are_ignored() {
        // stride 8 scale 50: the first anchor spans [-21, 29], 29/50 per axis inside
        let g = generate_anchors(256, 8, 50.0).unwrap();
        let labels = match_anchors(&g.anchors, 256, &[], MatchThresholds::default()).unwrap();
        assert_eq!(labels.labels[0], AnchorLabel::Ignore);
        // cell (3,3) is centred at 28: fully inside
        assert_eq!(labels.labels[3 * 32 + 3], AnchorLabel::Negative);
    }

    #[test]
    fn forced_match_reaches_every_gt() {
        let g = generate_anchors(1024, 32, 50.0).unwrap();
        // Overlapping gts sharing the same best anchor still each get one.
        let gts = vec![
            gt(500.0, 500.0),
            gt(502.0, 501.0),
            gt(0.0, 0.0),
            gt(974.0, 974.0),
        ];
        let labels = match_anchors(&g.anchors, 1024, &gts, MatchThresholds::default()).unwrap();
        for k in 0..gts.len() {
            assert!(
                labels.matched_gt.contains(&Some(k)),
                "gt {k} has no positive"
            );
        }
    }

    #[test]
    fn rejects_inverted_thresholds() {
        let t = MatchThresholds {
            positive_iou: 0.3,
            negative_iou: 0.3,
        };
        assert!(match_anchors(&[], 10, &[], t).is_err());
    }

    #[test]
    fn minibatch_examples() {
        let mut r = rng::stream(11);
        let batch = sample_minibatch(&labels_with(10, 1000, 50), 256, 0.25, &mut r).unwrap();
        let pos = batch
            .iter()
            .filter(|s| s.label == AnchorLabel::Positive)
            .count();
        assert_eq!((pos, batch.len() - pos), (10, 246));

        let batch = sample_minibatch(&labels_with(100, 1000, 50), 256, 0.25, &mut r).unwrap();
        let pos = batch
            .iter()
            .filter(|s| s.label == AnchorLabel::Positive)
            .count();
        assert_eq!((pos, batch.len() - pos), (64, 192));

        let batch = sample_minibatch(&labels_with(10, 1000, 0), 4, 1.0, &mut r).unwrap();
        assert_eq!(batch.len(), 4);
        assert!(batch.iter().all(|s| s.label == AnchorLabel::Positive));

        let batch = sample_minibatch(&labels_with(0, 0, 30), 256, 0.25, &mut r).unwrap();
        assert!(batch.is_empty());

        let batch = sample_minibatch(&labels_with(3, 20, 30), 256, 0.25, &mut r).unwrap();
        assert_eq!(batch.len(), 23);
        assert!(sample_minibatch(&labels_with(3, 20, 30), 256, 0.0, &mut r).is_err());
    }

    #[test]
    fn minibatch_never_picks_ignore_and_is_deterministic() {
        let labels = labels_with(80, 400, 400);
        let a = sample_minibatch(&labels, 256, 0.25, &mut rng::stream(4)).unwrap();
        let b = sample_minibatch(&labels, 256, 0.25, &mut rng::stream(4)).unwrap();
        assert_eq!(a, b);
        for s in &a {
            assert_eq!(labels.labels[s.index], s.label);
            assert_ne!(s.label, AnchorLabel::Ignore);
        }
    }
}
