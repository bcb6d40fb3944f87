//! Slide records, dataset splits, tiling and empty-tile rejection sampling.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use image::RgbImage;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::DatasetError;
use crate::geometry::BBox;
use crate::rng;

/// Clipped annotations keeping less than this share of their original area
/// are flagged `truncated`.
pub const TRUNCATION_AREA_RATIO: f64 = 0.25;

/// Object class of an annotation or detection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Mitotic,
    NonMitotic,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Mitotic => "mitotic",
            Label::NonMitotic => "non_mitotic",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mitotic" => Ok(Label::Mitotic),
            "non_mitotic" => Ok(Label::NonMitotic),
            other => Err(format!(
                "unknown label `{other}` (expected `mitotic` or `non_mitotic`)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    #[serde(flatten)]
    pub bbox: BBox,
    pub label: Label,
    /// Set when tiling clipped away most of the box.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub truncated: bool,
}

impl Annotation {
    pub fn new(bbox: BBox, label: Label) -> Self {
        Self {
            bbox,
            label,
            truncated: false,
        }
    }

    pub fn is_mitotic(&self) -> bool {
        self.label == Label::Mitotic
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlideRecord {
    pub slide_id: String,
    pub scanner_id: String,
    pub width: u32,
    pub height: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<PathBuf>,
    #[serde(default)]
    pub annotations: Vec<Annotation>,
}

impl SlideRecord {
    /// Checks dimensions and annotation placement. When `box_size` is given,
    /// every annotation must also be a `box_size` square.
    pub fn validate(&self, box_size: Option<f64>) -> Result<(), DatasetError> {
        let invalid = |reason: String| DatasetError::InvalidSlide {
            slide_id: self.slide_id.clone(),
            reason,
        };
        if self.slide_id.is_empty() {
            return Err(invalid("empty slide id".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(invalid(format!(
                "dimensions must be at least 1, got {}x{}",
                self.width, self.height
            )));
        }
        for (i, a) in self.annotations.iter().enumerate() {
            if !a.bbox.within_frame(self.width as f64, self.height as f64) {
                return Err(invalid(format!(
                    "annotation {i} {:?} lies outside the {}x{} slide",
                    a.bbox, self.width, self.height
                )));
            }
            if let Some(size) = box_size {
                if a.bbox.w() != size || a.bbox.h() != size {
                    return Err(invalid(format!(
                        "annotation {i} is {}x{}, expected {size}x{size}",
                        a.bbox.w(),
                        a.bbox.h()
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn mitotic_count(&self) -> usize {
        self.annotations.iter().filter(|a| a.is_mitotic()).count()
    }
}

/// The dataset manifest: every slide with its scanner, size and annotations.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub slides: Vec<SlideRecord>,
}

impl Manifest {
    pub fn validate(&self, box_size: Option<f64>) -> Result<(), DatasetError> {
        let mut seen = BTreeSet::new();
        for slide in &self.slides {
            if !seen.insert(slide.slide_id.as_str()) {
                return Err(DatasetError::DuplicateSlide(slide.slide_id.clone()));
            }
            slide.validate(box_size)?;
        }
        Ok(())
    }

    pub fn get(&self, slide_id: &str) -> Option<&SlideRecord> {
        self.slides.iter().find(|s| s.slide_id == slide_id)
    }

    /// Subset of the manifest restricted to `ids`, in manifest order.
    pub fn select(&self, ids: &[String]) -> Manifest {
        let wanted: BTreeSet<&str> = ids.iter().map(String::as_str).collect();
        Manifest {
            slides: self
                .slides
                .iter()
                .filter(|s| wanted.contains(s.slide_id.as_str()))
                .cloned()
                .collect(),
        }
    }
}

/// A square crop of a slide with its annotations in tile coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tile {
    pub slide_id: String,
    pub origin_x: u32,
    pub origin_y: u32,
    pub size: u32,
    pub annotations: Vec<Annotation>,
    /// RGB pixels, zero-padded past the slide edge. Absent for metadata-only runs.
    #[serde(skip)]
    pub pixels: Option<RgbImage>,
}

impl Tile {
    pub fn is_empty(&self) -> bool {
        self.annotations.is_empty()
    }

    /// `<slide_id>_x<origin_x>_y<origin_y>.png`
    pub fn file_name(&self) -> String {
        format!(
            "{}_x{}_y{}.png",
            self.slide_id, self.origin_x, self.origin_y
        )
    }

    /// Per-tile random stream for `purpose`.
    pub fn stream(&self, global_seed: u64, purpose: rng::Purpose, epoch: u64) -> rng::Stream {
        rng::tile_stream(
            global_seed,
            purpose,
            &self.slide_id,
            self.origin_x,
            self.origin_y,
            epoch,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
    /// Seed of the random split; 0 for scanner folds, which draw nothing.
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub held_out_scanner: Option<String>,
}

fn unique_ids(slides: &[SlideRecord]) -> Result<Vec<String>, DatasetError> {
    let mut ids: Vec<String> = slides.iter().map(|s| s.slide_id.clone()).collect();
    ids.sort();
    if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
        return Err(DatasetError::DuplicateSlide(w[0].clone()));
    }
    Ok(ids)
}

/// Random train/validation/test partition of whole slides.
///
/// Slide ids are sorted before shuffling, so the plan depends only on the
/// slide set and `seed`, not on manifest order. Each part is listed sorted.
pub fn split_random(
    slides: &[SlideRecord],
    n_train: usize,
    n_val: usize,
    n_test: usize,
    seed: u64,
) -> Result<SplitPlan, DatasetError> {
    let expected = n_train + n_val + n_test;
    if expected != slides.len() {
        return Err(DatasetError::SplitCountMismatch {
            expected,
            actual: slides.len(),
        });
    }
    let mut ids = unique_ids(slides)?;
    let mut stream = rng::stream(seed);
    ids.shuffle(&mut stream);

    let mut test = ids.split_off(n_train + n_val);
    let mut validation = ids.split_off(n_train);
    let mut train = ids;
    train.sort();
    validation.sort();
    test.sort();
    Ok(SplitPlan {
        train,
        validation,
        test,
        seed,
        held_out_scanner: None,
    })
}

/// One fold per scanner: that scanner's slides are the test set, every other
/// slide trains. Folds are ordered by scanner id.
pub fn split_leave_one_scanner_out(slides: &[SlideRecord]) -> Result<Vec<SplitPlan>, DatasetError> {
    unique_ids(slides)?;
    let mut by_scanner: BTreeMap<&str, Vec<String>> = BTreeMap::new();
    for s in slides {
        by_scanner
            .entry(s.scanner_id.as_str())
            .or_default()
            .push(s.slide_id.clone());
    }
    if by_scanner.len() < 2 {
        return Err(DatasetError::TooFewScanners {
            found: by_scanner.len(),
        });
    }
    let plans = by_scanner
        .keys()
        .map(|&held_out| {
            let mut train: Vec<String> = by_scanner
                .iter()
                .filter(|(k, _)| **k != held_out)
                .flat_map(|(_, v)| v.iter().cloned())
                .collect();
            let mut test = by_scanner[held_out].clone();
            train.sort();
            test.sort();
            SplitPlan {
                train,
                validation: Vec::new(),
                test,
                seed: 0,
                held_out_scanner: Some(held_out.to_string()),
            }
        })
        .collect();
    Ok(plans)
}

/// How annotations are distributed over tiles.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssignRule {
    /// Each annotation goes to the one tile containing its centre. A centre on
    /// a tile boundary goes to the tile with the larger origin.
    #[default]
    Center,
    /// Each annotation is copied (clipped) into every tile it overlaps.
    Overlap,
}

/// Number of tiles a `width x height` slide yields.
pub fn tile_count(width: u32, height: u32, tile_size: u32) -> usize {
    (width.div_ceil(tile_size) as usize) * (height.div_ceil(tile_size) as usize)
}

/// Cuts a slide into a non-overlapping grid of `tile_size` tiles (metadata only).
pub fn tile_slide(
    slide: &SlideRecord,
    tile_size: u32,
    rule: AssignRule,
) -> Result<Vec<Tile>, DatasetError> {
    tile_impl(slide, None, tile_size, rule)
}

/// Like [`tile_slide`], also cropping pixels from `image`. Edge tiles are
/// zero-padded to the full tile size.
pub fn tile_slide_image(
    slide: &SlideRecord,
    image: &RgbImage,
    tile_size: u32,
    rule: AssignRule,
) -> Result<Vec<Tile>, DatasetError> {
    if image.width() != slide.width || image.height() != slide.height {
        return Err(DatasetError::ImageSizeMismatch {
            slide_id: slide.slide_id.clone(),
            width: slide.width,
            height: slide.height,
            actual_w: image.width(),
            actual_h: image.height(),
        });
    }
    tile_impl(slide, Some(image), tile_size, rule)
}

fn tile_impl(
    slide: &SlideRecord,
    image: Option<&RgbImage>,
    tile_size: u32,
    rule: AssignRule,
) -> Result<Vec<Tile>, DatasetError> {
    if tile_size == 0 {
        return Err(DatasetError::InvalidTileSize);
    }
    let cols = slide.width.div_ceil(tile_size);
    let rows = slide.height.div_ceil(tile_size);
    let mut tiles: Vec<Tile> = (0..rows)
        .flat_map(|r| (0..cols).map(move |c| (c, r)))
        .map(|(c, r)| {
            let origin_x = c * tile_size;
            let origin_y = r * tile_size;
            Tile {
                slide_id: slide.slide_id.clone(),
                origin_x,
                origin_y,
                size: tile_size,
                annotations: Vec::new(),
                pixels: image.map(|img| crop_padded(img, origin_x, origin_y, tile_size)),
            }
        })
        .collect();

    let ts = tile_size as f64;
    for ann in &slide.annotations {
        match rule {
            AssignRule::Center => {
                let (cx, cy) = ann.bbox.center();
                let c = ((cx / ts).floor().max(0.0) as u32).min(cols - 1);
                let r = ((cy / ts).floor().max(0.0) as u32).min(rows - 1);
                let tile = &mut tiles[(r * cols + c) as usize];
                // The centre lies inside the tile, so the clip is never empty.
                if let Some(a) = to_tile_frame(ann, tile, slide) {
                    tile.annotations.push(a);
                }
            }
            AssignRule::Overlap => {
                for tile in tiles.iter_mut() {
                    if let Some(a) = to_tile_frame(ann, tile, slide) {
                        tile.annotations.push(a);
                    }
                }
            }
        }
    }
    Ok(tiles)
}

/// Clips `ann` to the part of `tile` that lies on the slide, then moves it
/// into tile coordinates.
fn to_tile_frame(ann: &Annotation, tile: &Tile, slide: &SlideRecord) -> Option<Annotation> {
    let x0 = tile.origin_x as f64;
    let y0 = tile.origin_y as f64;
    let x1 = (tile.origin_x + tile.size).min(slide.width) as f64;
    let y1 = (tile.origin_y + tile.size).min(slide.height) as f64;
    let clipped = ann.bbox.clip_to(x0, y0, x1, y1)?;
    Some(Annotation {
        bbox: clipped.translate(-x0, -y0),
        label: ann.label,
        truncated: ann.truncated || clipped.area() < TRUNCATION_AREA_RATIO * ann.bbox.area(),
    })
}

fn crop_padded(img: &RgbImage, origin_x: u32, origin_y: u32, size: u32) -> RgbImage {
    let mut out = RgbImage::new(size, size);
    let w = size.min(img.width().saturating_sub(origin_x));
    let h = size.min(img.height().saturating_sub(origin_y));
    for y in 0..h {
        for x in 0..w {
            out.put_pixel(x, y, *img.get_pixel(origin_x + x, origin_y + y));
        }
    }
    out
}

/// Keeps every tile with an annotation; keeps each empty tile only when a
/// fresh uniform draw in `[0, 1)` is at least `drop_prob`. Draws are consumed
/// only for empty tiles, in input order.
pub fn sample_training_tiles<R: Rng + ?Sized>(
    tiles: Vec<Tile>,
    drop_prob: f64,
    rng: &mut R,
) -> Result<Vec<Tile>, DatasetError> {
    if !(0.0..=1.0).contains(&drop_prob) {
        return Err(DatasetError::InvalidProbability(drop_prob));
    }
    Ok(tiles
        .into_iter()
        .filter(|t| !t.is_empty() || rng.random::<f64>() >= drop_prob)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ann(x: f64, y: f64, label: Label) -> Annotation {
        Annotation::new(BBox::new(x, y, 50.0, 50.0).unwrap(), label)
    }

    fn slide(id: &str, scanner: &str, w: u32, h: u32) -> SlideRecord {
        SlideRecord {
            slide_id: id.into(),
            scanner_id: scanner.into(),
            width: w,
            height: h,
            image: None,
            annotations: Vec::new(),
        }
    }

    fn slides(n: usize) -> Vec<SlideRecord> {
        (0..n)
            .map(|i| slide(&format!("s{i:03}"), ["A", "B", "C"][i % 3], 6000, 6000))
            .collect()
    }

    #[test]
    fn random_split_cardinalities() {
        let s = slides(150);
        let plan = split_random(&s, 105, 15, 30, 1).unwrap();
        assert_eq!(
            (plan.train.len(), plan.validation.len(), plan.test.len()),
            (105, 15, 30)
        );
        let all: BTreeSet<_> = plan
            .train
            .iter()
            .chain(&plan.validation)
            .chain(&plan.test)
            .collect();
        assert_eq!(all.len(), 150);
    }

    #[test]
    fn random_split_degenerate_and_deterministic() {
        let s = slides(3);
        let plan = split_random(&s, 3, 0, 0, 9).unwrap();
        assert_eq!(plan.train, vec!["s000", "s001", "s002"]);
        let s = slides(150);
        let a = serde_json::to_string(&split_random(&s, 105, 15, 30, 7).unwrap()).unwrap();
        let b = serde_json::to_string(&split_random(&s, 105, 15, 30, 7).unwrap()).unwrap();
        assert_eq!(a, b);
        let mut rev = s.clone();
        rev.reverse();
        assert_eq!(
            split_random(&rev, 105, 15, 30, 7).unwrap(),
            split_random(&s, 105, 15, 30, 7).unwrap()
        );
    }

    #[test]
    fn random_split_count_mismatch() {
        let err = split_random(&slides(10), 5, 2, 2, 0).unwrap_err();
        assert!(matches!(
            err,
            DatasetError::SplitCountMismatch {
                expected: 9,
                actual: 10
            }
        ));
    }

    #[test]
    fn duplicate_ids_rejected() {
        let s = vec![slide("a", "A", 10, 10), slide("a", "B", 10, 10)];
        assert!(matches!(
            split_random(&s, 2, 0, 0, 0),
            Err(DatasetError::DuplicateSlide(_))
        ));
    }

    #[test]
    fn scanner_folds() {
        let s = slides(9);
        let plans = split_leave_one_scanner_out(&s).unwrap();
        assert_eq!(plans.len(), 3);
        let c = &plans[2];
        assert_eq!(c.held_out_scanner.as_deref(), Some("C"));
        assert_eq!(c.test, vec!["s002", "s005", "s008"]);
        assert_eq!(c.train.len(), 6);
        assert!(c.validation.is_empty());

        let two = vec![slide("x", "A", 10, 10), slide("y", "B", 10, 10)];
        let plans = split_leave_one_scanner_out(&two).unwrap();
        assert_eq!(plans.len(), 2);
        assert!(plans
            .iter()
            .all(|p| p.train.len() == 1 && p.test.len() == 1));

        let one = vec![slide("x", "A", 10, 10)];
        assert!(matches!(
            split_leave_one_scanner_out(&one),
            Err(DatasetError::TooFewScanners { found: 1 })
        ));
    }

    #[test]
    fn tile_counts() {
        let s = slide("s", "A", 6144, 6144);
        assert_eq!(tile_slide(&s, 1024, AssignRule::Center).unwrap().len(), 36);
        let s = slide("s", "A", 5000, 7000);
        assert_eq!(tile_slide(&s, 1024, AssignRule::Center).unwrap().len(), 35);
        assert_eq!(tile_count(5000, 7000, 1024), 35);
        assert!(matches!(
            tile_slide(&s, 0, AssignRule::Center),
            Err(DatasetError::InvalidTileSize)
        ));
    }

    #[test]
    fn border_annotation_follows_centre() {
        let mut s = slide("s", "A", 4096, 4096);
        s.annotations.push(ann(1000.0, 10.0, Label::Mitotic));
        let tiles = tile_slide(&s, 1024, AssignRule::Center).unwrap();
        let owners: Vec<_> = tiles.iter().filter(|t| !t.is_empty()).collect();
        assert_eq!(owners.len(), 1);
        let t = owners[0];
        assert_eq!((t.origin_x, t.origin_y), (1024, 0));
        assert_eq!(
            t.annotations[0].bbox,
            BBox::new(0.0, 10.0, 26.0, 50.0).unwrap()
        );
        assert!(!t.annotations[0].truncated);
    }

    #[test]
    fn centre_on_boundary_goes_right() {
        let mut s = slide("s", "A", 2048, 2048);
        // centre (1024, 1024)
        s.annotations.push(ann(999.0, 999.0, Label::NonMitotic));
        let tiles = tile_slide(&s, 1024, AssignRule::Center).unwrap();
        let t = tiles.iter().find(|t| !t.is_empty()).unwrap();
        assert_eq!((t.origin_x, t.origin_y), (1024, 1024));
        assert_eq!(
            t.annotations[0].bbox,
            BBox::new(0.0, 0.0, 25.0, 25.0).unwrap()
        );
        // exactly a quarter of the area survives: not below the cut-off
        assert!(!t.annotations[0].truncated);
    }

    #[test]
    fn overlap_rule_duplicates() {
        let mut s = slide("s", "A", 2048, 2048);
        s.annotations.push(ann(999.0, 999.0, Label::Mitotic));
        s.annotations.push(ann(1014.0, 1014.0, Label::Mitotic));
        let tiles = tile_slide(&s, 1024, AssignRule::Overlap).unwrap();
        assert_eq!(tiles.iter().map(|t| t.annotations.len()).sum::<usize>(), 8);
        // the second box keeps 10x10 of its 50x50 in the first tile
        let first = &tiles[0].annotations;
        assert_eq!(
            first[1].bbox,
            BBox::new(1014.0, 1014.0, 10.0, 10.0).unwrap()
        );
        assert!(first[1].truncated);
        assert!(!first[0].truncated);
    }

    #[test]
    fn edge_clipping_uses_slide_extent() {
        let mut s = slide("s", "A", 1100, 1024);
        s.annotations.push(ann(1050.0, 0.0, Label::Mitotic));
        let tiles = tile_slide(&s, 1024, AssignRule::Center).unwrap();
        let t = &tiles[1];
        assert_eq!(t.origin_x, 1024);
        assert_eq!(
            t.annotations[0].bbox,
            BBox::new(26.0, 0.0, 50.0, 50.0).unwrap()
        );
    }

    #[test]
    fn pixel_tiles_are_zero_padded() {
        let s = slide("s", "A", 5, 3);
        let img = RgbImage::from_fn(5, 3, |x, y| image::Rgb([x as u8 + 1, y as u8 + 1, 7]));
        let tiles = tile_slide_image(&s, &img, 4, AssignRule::Center).unwrap();
        assert_eq!(tiles.len(), 2);
        let right = tiles[1].pixels.as_ref().unwrap();
        assert_eq!(right.dimensions(), (4, 4));
        assert_eq!(right.get_pixel(0, 0).0, [5, 1, 7]);
        assert_eq!(right.get_pixel(1, 0).0, [0, 0, 0]);
        assert_eq!(right.get_pixel(0, 3).0, [0, 0, 0]);
        assert_eq!(tiles[0].file_name(), "s_x0_y0.png");

        let wrong = RgbImage::new(4, 3);
        assert!(tile_slide_image(&s, &wrong, 4, AssignRule::Center).is_err());
    }

    #[test]
    fn validation_catches_bad_annotations() {
        let mut s = slide("s", "A", 100, 100);
        s.annotations.push(ann(60.0, 0.0, Label::Mitotic));
        assert!(s.validate(None).is_err());
        let mut s = slide("s", "A", 100, 100);
        s.annotations.push(Annotation::new(
            BBox::new(0.0, 0.0, 40.0, 40.0).unwrap(),
            Label::Mitotic,
        ));
        assert!(s.validate(None).is_ok());
        assert!(s.validate(Some(50.0)).is_err());
    }

    fn empty_tile(i: u32) -> Tile {
        Tile {
            slide_id: "s".into(),
            origin_x: i,
            origin_y: 0,
            size: 1024,
            annotations: Vec::new(),
            pixels: None,
        }
    }

    #[test]
    fn sampling_keeps_non_empty() {
        let tiles: Vec<Tile> = (0..20)
            .map(|i| {
                let mut t = empty_tile(i);
                t.annotations.push(ann(0.0, 0.0, Label::NonMitotic));
                t
            })
            .collect();
        let mut r = rng::stream(3);
        let kept = sample_training_tiles(tiles.clone(), 0.8, &mut r).unwrap();
        assert_eq!(kept, tiles);

        let mut mixed = tiles.clone();
        mixed.extend((100..200).map(empty_tile));
        let kept = sample_training_tiles(mixed, 1.0, &mut r).unwrap();
        assert_eq!(kept, tiles);
    }

    #[test]
    fn sampling_rejects_bad_probability() {
        let mut r = rng::stream(0);
        assert!(sample_training_tiles(vec![], 1.5, &mut r).is_err());
    }

    proptest! {
        #[test]
        fn tiling_partitions_pixels_and_conserves_annotations(
            w in 1u32..5000, h in 1u32..5000, ts in 64u32..1500,
            seeds in proptest::collection::vec((0.0..1.0f64, 0.0..1.0f64), 0..30),
        ) {
            let mut s = slide("p", "A", w, h);
            let bw = (w as f64).min(50.0);
            let bh = (h as f64).min(50.0);
            for (u, v) in seeds {
                let b = BBox::new(u * (w as f64 - bw), v * (h as f64 - bh), bw, bh).unwrap();
                s.annotations.push(Annotation::new(b, Label::Mitotic));
            }
            let tiles = tile_slide(&s, ts, AssignRule::Center).unwrap();
            prop_assert_eq!(tiles.len(), tile_count(w, h, ts));
            let covered: u64 = tiles
                .iter()
                .map(|t| {
                    let cw = (t.origin_x + ts).min(w) - t.origin_x;
                    let ch = (t.origin_y + ts).min(h) - t.origin_y;
                    cw as u64 * ch as u64
                })
                .sum();
            prop_assert_eq!(covered, w as u64 * h as u64);
            let n: usize = tiles.iter().map(|t| t.annotations.len()).sum();
            prop_assert_eq!(n, s.annotations.len());
            for t in &tiles {
                prop_assert_eq!(t.origin_x % ts, 0);
                prop_assert_eq!(t.origin_y % ts, 0);
                for a in &t.annotations {
                    prop_assert!(a.bbox.within_frame(ts as f64, ts as f64));
                }
            }
        }
    }
}
