//! Stage drivers shared by the command-line front end and the demo run.
//!
//! Each driver is a pure function of its inputs and the config; all
//! randomness comes from streams derived from `config.seed`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::anchors::{self, AnchorGrid, AnchorLabel, SampledAnchor};
use crate::augmentation::{self, AugmentTrace, ImageBuffer};
use crate::config::PipelineConfig;
use crate::dataset::{self, Manifest, SplitPlan, Tile};
use crate::error::{Error, Result};
use crate::evaluation::{self, EvalReport, Predictions, RunParams, ThresholdSearch};
use crate::io;
use crate::postprocess::{self, Detection};
use crate::rng::{self, Purpose};
use crate::scorer::{OracleScorer, Scorer};
use crate::synth::{self, SynthSpec};

/// Tiles every slide of `manifest` (or only `slide_ids`, when given). Slides
/// with an image path get pixel tiles.
pub fn tile_manifest(
    manifest: &Manifest,
    slide_ids: Option<&[String]>,
    config: &PipelineConfig,
) -> Result<Vec<Tile>> {
    let selected = match slide_ids {
        Some(ids) => manifest.select(ids),
        None => manifest.clone(),
    };
    let mut tiles = Vec::new();
    for slide in &selected.slides {
        let mut t = match &slide.image {
            Some(path) => {
                let img = io::load_png(path)?;
                dataset::tile_slide_image(slide, &img, config.tile_size, config.assign_rule)?
            }
            None => dataset::tile_slide(slide, config.tile_size, config.assign_rule)?,
        };
        tiles.append(&mut t);
    }
    Ok(tiles)
}

/// Empty-tile rejection sampling for one epoch.
pub fn sample_epoch(tiles: Vec<Tile>, config: &PipelineConfig) -> Result<Vec<Tile>> {
    let mut stream = rng::stage_stream(config.seed, Purpose::Drop, config.epoch);
    Ok(dataset::sample_training_tiles(
        tiles,
        config.drop_prob,
        &mut stream,
    )?)
}

/// One line of the augmentation audit log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub slide_id: String,
    pub origin_x: u32,
    pub origin_y: u32,
    pub epoch: u64,
    #[serde(flatten)]
    pub trace: AugmentTrace,
}

/// Augments every tile with its own stream. Tiles without pixels still get
/// their draws and box flips, so the trace is the same either way.
pub fn augment_tiles(
    tiles: &[Tile],
    config: &PipelineConfig,
) -> Result<(Vec<Tile>, Vec<TraceRecord>)> {
    config.augmentation.validate()?;
    let mut out = Vec::with_capacity(tiles.len());
    let mut traces = Vec::with_capacity(tiles.len());
    for tile in tiles {
        let mut stream = tile.stream(config.seed, Purpose::Augment, config.epoch);
        let trace = augmentation::draw_trace(&config.augmentation, &mut stream);
        let boxes: Vec<_> = tile.annotations.iter().map(|a| a.bbox).collect();
        let size = tile.size as f64;
        let (pixels, boxes) = match &tile.pixels {
            Some(px) => {
                let (img, boxes) =
                    augmentation::apply_trace(&ImageBuffer::from_rgb8(px), &boxes, &trace)?;
                (Some(img.to_rgb8()), boxes)
            }
            None => (
                None,
                augmentation::flip_boxes(&boxes, size, size, trace.flip_h, trace.flip_v)?,
            ),
        };
        let annotations = tile
            .annotations
            .iter()
            .zip(boxes)
            .map(|(a, bbox)| dataset::Annotation { bbox, ..a.clone() })
            .collect();
        out.push(Tile {
            annotations,
            pixels,
            ..tile.clone()
        });
        traces.push(TraceRecord {
            slide_id: tile.slide_id.clone(),
            origin_x: tile.origin_x,
            origin_y: tile.origin_y,
            epoch: config.epoch,
            trace,
        });
    }
    Ok((out, traces))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelInfo {
    pub stride: u32,
    pub cells: u32,
    pub anchors: usize,
    /// Index of this level's first anchor in the concatenated list.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TileAnchors {
    pub slide_id: String,
    pub origin_x: u32,
    pub origin_y: u32,
    pub gt: usize,
    /// Ground-truth boxes that own at least one positive anchor.
    pub gt_covered: usize,
    pub positives: usize,
    pub negatives: usize,
    pub ignored: usize,
    pub batch: Vec<SampledAnchor>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorReport {
    pub tile_size: u32,
    pub scale: f64,
    pub levels: Vec<LevelInfo>,
    pub tiles: Vec<TileAnchors>,
}

pub fn anchor_levels(config: &PipelineConfig) -> Result<Vec<AnchorGrid>> {
    config
        .anchors
        .strides
        .iter()
        .map(|&s| anchors::generate_anchors(config.tile_size, s, config.anchors.scale))
        .collect::<std::result::Result<_, _>>()
        .map_err(Error::from)
}

/// Matches and samples anchors for every tile over all configured levels.
pub fn anchor_report(tiles: &[Tile], config: &PipelineConfig) -> Result<AnchorReport> {
    let levels = anchor_levels(config)?;
    let all = anchors::concat_levels(&levels);
    let mut offset = 0;
    let level_info = levels
        .iter()
        .map(|g| {
            let info = LevelInfo {
                stride: g.stride,
                cells: g.cells,
                anchors: g.anchors.len(),
                offset,
            };
            offset += g.anchors.len();
            info
        })
        .collect();

    let mut out = Vec::with_capacity(tiles.len());
    for tile in tiles {
        let labels = anchors::match_anchors(
            &all,
            config.tile_size,
            &tile.annotations,
            config.anchors.thresholds(),
        )?;
        let mut stream = tile.stream(config.seed, Purpose::Anchors, config.epoch);
        let batch = anchors::sample_minibatch(
            &labels,
            config.anchors.batch_size,
            config.anchors.positive_fraction,
            &mut stream,
        )?;
        let gt_covered = (0..tile.annotations.len())
            .filter(|g| labels.matched_gt.contains(&Some(*g)))
            .count();
        out.push(TileAnchors {
            slide_id: tile.slide_id.clone(),
            origin_x: tile.origin_x,
            origin_y: tile.origin_y,
            gt: tile.annotations.len(),
            gt_covered,
            positives: labels.count(AnchorLabel::Positive),
            negatives: labels.count(AnchorLabel::Negative),
            ignored: labels.count(AnchorLabel::Ignore),
            batch,
        });
    }
    Ok(AnchorReport {
        tile_size: config.tile_size,
        scale: config.anchors.scale,
        levels: level_info,
        tiles: out,
    })
}

/// Runs `scorer` over every tile and collects slide-frame detections.
pub fn score_tiles(tiles: &[Tile], scorer: &dyn Scorer, config: &PipelineConfig) -> Predictions {
    let mut out = Predictions::new();
    for tile in tiles {
        let mut stream = tile.stream(config.seed, Purpose::Score, config.epoch);
        let dets = scorer.score_tile(tile, &mut stream);
        let entry = out.entry(tile.slide_id.clone()).or_default();
        entry.extend(dets.iter().map(Detection::to_slide_frame));
    }
    out.retain(|_, v| !v.is_empty());
    out
}

/// Threshold then per-class NMS on every slide.
pub fn postprocess_predictions(predictions: &Predictions, tau: f64, nms_iou: f64) -> Predictions {
    predictions
        .iter()
        .map(|(k, v)| {
            let dets: Vec<_> = v.iter().map(Detection::to_slide_frame).collect();
            (k.clone(), postprocess::postprocess(&dets, tau, nms_iou))
        })
        .filter(|(_, v)| !v.is_empty())
        .collect()
}

/// Threshold search over the slides of `manifest`, after per-class NMS.
pub fn tune_predictions(
    predictions: &Predictions,
    manifest: &Manifest,
    config: &PipelineConfig,
) -> Result<ThresholdSearch> {
    let images = evaluation::slide_images(predictions, manifest, config.nms_iou)?;
    Ok(evaluation::tune_threshold(&images, config.eval_iou)?)
}

pub fn curve_csv(search: &ThresholdSearch) -> String {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    wtr.write_record(["threshold", "tp", "fp", "fn", "precision", "recall", "f1"])
        .expect("in-memory write");
    for p in &search.curve {
        wtr.write_record([
            p.threshold.to_string(),
            p.tp.to_string(),
            p.fp.to_string(),
            p.fn_.to_string(),
            p.precision.to_string(),
            p.recall.to_string(),
            p.f1.to_string(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(wtr.into_inner().expect("in-memory flush")).expect("utf-8")
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemoOutcome {
    pub manifest: Manifest,
    pub plan: SplitPlan,
    pub folds: Vec<SplitPlan>,
    pub training_tiles: usize,
    pub traces: Vec<TraceRecord>,
    pub anchors: AnchorReport,
    pub predictions: Predictions,
    pub search: ThresholdSearch,
    pub report: EvalReport,
    /// Files written, relative to the output directory, in write order.
    pub files: Vec<PathBuf>,
}

/// Synthetic end-to-end run: generate slides, split, tile, drop-sample,
/// augment, label anchors, score the test slides with the oracle, tune the
/// threshold and evaluate. With `out_dir`, every artifact is written there.
pub fn run_demo(config: &PipelineConfig, out_dir: Option<&Path>) -> Result<DemoOutcome> {
    config.validate()?;
    let demo = &config.demo;
    let spec = SynthSpec {
        scanners: demo.scanners.clone(),
        slides_per_scanner: demo.slides_per_scanner,
        min_side: demo.min_side,
        max_side: demo.max_side,
        mitotic_per_slide: demo.mitotic_per_slide,
        non_mitotic_per_slide: demo.non_mitotic_per_slide,
        box_size: config.box_size,
    };
    let manifest = synth::generate_manifest(
        &spec,
        &mut rng::stage_stream(config.seed, Purpose::Synth, 0),
    );
    let plan = dataset::split_random(
        &manifest.slides,
        demo.split.train,
        demo.split.validation,
        demo.split.test,
        config.seed,
    )?;
    let folds = if demo.scanners.len() >= 2 {
        dataset::split_leave_one_scanner_out(&manifest.slides)?
    } else {
        Vec::new()
    };

    let train_tiles = tile_manifest(&manifest, Some(&plan.train), config)?;
    let mut sampled = sample_epoch(train_tiles, config)?;
    for tile in sampled.iter_mut().take(demo.pixel_tiles) {
        let mut stream = tile.stream(config.seed, Purpose::Synth, 0);
        tile.pixels = Some(synth::render_tile(tile, &mut stream));
    }
    let (augmented, traces) = augment_tiles(&sampled, config)?;
    let anchor_summary = anchor_report(&augmented, config)?;

    let test_manifest = manifest.select(&plan.test);
    let test_tiles = tile_manifest(&test_manifest, None, config)?;
    let scorer = OracleScorer::new(config.oracle)?;
    let predictions = score_tiles(&test_tiles, &scorer, config);
    let search = tune_predictions(&predictions, &test_manifest, config)?;
    let report = evaluation::evaluate_run(
        &predictions,
        &test_manifest,
        RunParams {
            score_threshold: search.threshold,
            nms_iou: config.nms_iou,
            eval_iou: config.eval_iou,
        },
    )?;

    let mut files = Vec::new();
    if let Some(dir) = out_dir {
        let mut put = |name: &str, bytes: &[u8]| -> Result<()> {
            io::write_atomic(&dir.join(name), bytes)?;
            files.push(PathBuf::from(name));
            Ok(())
        };
        put("config.toml", config.to_toml()?.as_bytes())?;
        put("manifest.json", io::to_json_string(&manifest).as_bytes())?;
        put("split.json", io::to_json_string(&plan).as_bytes())?;
        put("folds.json", io::to_json_string(&folds).as_bytes())?;
        let traces_text: String = traces
            .iter()
            .map(|t| serde_json::to_string(t).expect("serializable") + "\n")
            .collect();
        put("trace.jsonl", traces_text.as_bytes())?;
        put(
            "anchors.json",
            io::to_json_string(&anchor_summary).as_bytes(),
        )?;
        put(
            "predictions.csv",
            io::predictions_to_string(&predictions).as_bytes(),
        )?;
        put("curve.csv", curve_csv(&search).as_bytes())?;
        put(
            "threshold.json",
            io::to_json_string(&search.report).as_bytes(),
        )?;
        put("report.json", io::to_json_string(&report).as_bytes())?;
        let tiles_dir = dir.join("train_tiles");
        io::save_tiles(&tiles_dir, config.tile_size, &augmented)?;
        files.push(PathBuf::from("train_tiles").join(io::TILE_MANIFEST));
        for t in augmented.iter().filter(|t| t.pixels.is_some()) {
            files.push(PathBuf::from("train_tiles").join(t.file_name()));
        }
    }

    Ok(DemoOutcome {
        manifest,
        plan,
        folds,
        training_tiles: augmented.len(),
        traces,
        anchors: anchor_summary,
        predictions,
        search,
        report,
        files,
    })
}
