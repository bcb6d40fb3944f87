//! Detection scorers and the predictions interchange file.
//!
//! A [`Scorer`] turns a tile into scored detections. Two implementations ship
//! here: [`OracleScorer`], which perturbs the tile's ground truth in a
//! controlled way, and [`FileScorer`], which replays detections loaded from a
//! predictions file. A trained network plugs in as a third implementation.

use std::io::{Read, Write};

use rand::{Rng, RngCore};
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::dataset::{Label, Tile};
use crate::error::{ConfigError, PredictionsError};
use crate::evaluation::Predictions;
use crate::geometry::BBox;
use crate::postprocess::{Detection, Frame};

/// Column names of the predictions file, in order.
pub const PREDICTIONS_HEADER: [&str; 7] = ["slide_id", "x", "y", "w", "h", "score", "label"];

pub trait Scorer {
    /// Scores one tile. Returned detections are in the tile's frame.
    fn score_tile(&self, tile: &Tile, rng: &mut dyn RngCore) -> Vec<Detection>;
}

/// Score distribution of oracle detections.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ScoreDist {
    Uniform { lo: f64, hi: f64 },
    Constant { value: f64 },
}

impl ScoreDist {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            ScoreDist::Uniform { lo, hi } => lo + (hi - lo) * rng.random::<f64>(),
            ScoreDist::Constant { value } => value,
        }
    }

    fn validate(&self, field: &str) -> Result<(), ConfigError> {
        let (lo, hi) = match *self {
            ScoreDist::Uniform { lo, hi } => (lo, hi),
            ScoreDist::Constant { value } => (value, value),
        };
        if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
            return Err(ConfigError::invalid(
                field,
                format!("support [{lo}, {hi}] is not inside [0, 1]"),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    /// Probability that a mitotic annotation produces a detection.
    pub recall_sim: f64,
    /// Mean number of spurious detections per tile.
    pub fp_rate: f64,
    /// Half-width of the per-axis uniform centre displacement, in pixels.
    pub jitter: f64,
    /// Side of spurious boxes.
    pub box_size: f64,
    pub tp_score: ScoreDist,
    pub fp_score: ScoreDist,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            recall_sim: 1.0,
            fp_rate: 0.0,
            jitter: 0.0,
            box_size: 50.0,
            tp_score: ScoreDist::Uniform { lo: 0.6, hi: 1.0 },
            fp_score: ScoreDist::Uniform { lo: 0.0, hi: 0.7 },
        }
    }
}

impl OracleConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(0.0..=1.0).contains(&self.recall_sim) {
            return Err(ConfigError::invalid(
                "oracle.recall_sim",
                format!("{} is outside [0, 1]", self.recall_sim),
            ));
        }
        if !(self.fp_rate >= 0.0 && self.fp_rate.is_finite()) {
            return Err(ConfigError::invalid(
                "oracle.fp_rate",
                "must be finite and >= 0",
            ));
        }
        if !(self.jitter >= 0.0 && self.jitter.is_finite()) {
            return Err(ConfigError::invalid(
                "oracle.jitter",
                "must be finite and >= 0",
            ));
        }
        if !(self.box_size > 0.0 && self.box_size.is_finite()) {
            return Err(ConfigError::invalid("oracle.box_size", "must be positive"));
        }
        self.tp_score.validate("oracle.tp_score")?;
        self.fp_score.validate("oracle.fp_score")
    }
}

/// Synthetic scorer built from the tile's own annotations.
///
/// Per mitotic annotation, in order: one draw decides emission; an emitted
/// box then consumes two displacement draws and one score draw, and is
/// clipped to the tile. After the annotations, a Poisson count of spurious
/// boxes is drawn, each with two position draws and one score draw.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleScorer {
    pub config: OracleConfig,
}

impl OracleScorer {
    pub fn new(config: OracleConfig) -> Result<Self, ConfigError> {
        config.validate()?;
        Ok(Self { config })
    }
}

impl Scorer for OracleScorer {
    fn score_tile(&self, tile: &Tile, rng: &mut dyn RngCore) -> Vec<Detection> {
        let cfg = &self.config;
        let size = tile.size as f64;
        let frame = Frame::Tile {
            origin_x: tile.origin_x,
            origin_y: tile.origin_y,
        };
        let mut out = Vec::new();
        for ann in tile.annotations.iter().filter(|a| a.is_mitotic()) {
            if rng.random::<f64>() >= cfg.recall_sim {
                continue;
            }
            let dx = cfg.jitter * (2.0 * rng.random::<f64>() - 1.0);
            let dy = cfg.jitter * (2.0 * rng.random::<f64>() - 1.0);
            let score = cfg.tp_score.sample(rng);
            if let Some(bbox) = ann.bbox.translate(dx, dy).clip(size, size) {
                out.push(Detection {
                    bbox,
                    score,
                    label: Label::Mitotic,
                    frame,
                });
            }
        }
        if cfg.fp_rate > 0.0 {
            let n = Poisson::new(cfg.fp_rate)
                .expect("fp_rate is positive and finite")
                .sample(rng) as u64;
            let span = (size - cfg.box_size).max(0.0);
            let side = cfg.box_size.min(size);
            for _ in 0..n {
                let x = span * rng.random::<f64>();
                let y = span * rng.random::<f64>();
                let score = cfg.fp_score.sample(rng);
                out.push(Detection {
                    bbox: BBox::new(x, y, side, side).expect("positive side"),
                    score,
                    label: Label::Mitotic,
                    frame,
                });
            }
        }
        out
    }
}

/// Replays stored slide-frame detections: a tile receives the detections of
/// its slide whose centre falls inside it, moved into tile coordinates.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FileScorer {
    pub predictions: Predictions,
}

impl Scorer for FileScorer {
    fn score_tile(&self, tile: &Tile, _rng: &mut dyn RngCore) -> Vec<Detection> {
        let Some(dets) = self.predictions.get(&tile.slide_id) else {
            return Vec::new();
        };
        let (x0, y0) = (tile.origin_x as f64, tile.origin_y as f64);
        let (x1, y1) = (x0 + tile.size as f64, y0 + tile.size as f64);
        dets.iter()
            .map(Detection::to_slide_frame)
            .filter(|d| {
                let (cx, cy) = d.bbox.center();
                cx >= x0 && cx < x1 && cy >= y0 && cy < y1
            })
            .map(|d| Detection {
                bbox: d.bbox.translate(-x0, -y0),
                frame: Frame::Tile {
                    origin_x: tile.origin_x,
                    origin_y: tile.origin_y,
                },
                ..d
            })
            .collect()
    }
}

/// Reads a predictions file: a mandatory header row, then one detection per
/// row as `slide_id,x,y,w,h,score,label` in slide coordinates.
pub fn read_predictions<R: Read>(reader: R) -> Result<Predictions, PredictionsError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut records = rdr.records();
    let header = match records.next() {
        Some(r) => r?,
        None => {
            return Err(PredictionsError::Header {
                line: 1,
                expected: PREDICTIONS_HEADER.join(","),
                found: String::new(),
            })
        }
    };
    if header.iter().ne(PREDICTIONS_HEADER.iter().copied()) {
        return Err(PredictionsError::Header {
            line: 1,
            expected: PREDICTIONS_HEADER.join(","),
            found: header.iter().collect::<Vec<_>>().join(","),
        });
    }

    let mut out = Predictions::new();
    for record in records {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != PREDICTIONS_HEADER.len() {
            return Err(PredictionsError::Arity {
                line,
                found: record.len(),
            });
        }
        let num = |i: usize| -> Result<f64, PredictionsError> {
            let field = PREDICTIONS_HEADER[i];
            let v: f64 = record[i].parse().map_err(|e| PredictionsError::Field {
                line,
                field,
                reason: format!("`{}`: {e}", &record[i]),
            })?;
            if !v.is_finite() {
                return Err(PredictionsError::Field {
                    line,
                    field,
                    reason: format!("`{}` is not finite", &record[i]),
                });
            }
            Ok(v)
        };
        let slide_id = &record[0];
        if slide_id.is_empty() {
            return Err(PredictionsError::Field {
                line,
                field: "slide_id",
                reason: "empty".into(),
            });
        }
        let bbox =
            BBox::new(num(1)?, num(2)?, num(3)?, num(4)?).map_err(|e| PredictionsError::Field {
                line,
                field: "w",
                reason: e.to_string(),
            })?;
        let score = num(5)?;
        if !(0.0..=1.0).contains(&score) {
            return Err(PredictionsError::Field {
                line,
                field: "score",
                reason: format!("{score} is outside [0, 1]"),
            });
        }
        let label: Label = record[6]
            .parse()
            .map_err(|reason| PredictionsError::Field {
                line,
                field: "label",
                reason,
            })?;
        out.entry(slide_id.to_string())
            .or_default()
            .push(Detection::new(bbox, score, label));
    }
    Ok(out)
}

/// Writes slide-frame detections, slides in key order. Floats use the
/// shortest representation that parses back to the same value.
pub fn write_predictions<W: Write>(
    writer: W,
    predictions: &Predictions,
) -> Result<(), PredictionsError> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(PREDICTIONS_HEADER)?;
    for (slide_id, dets) in predictions {
        for d in dets {
            let d = d.to_slide_frame();
            wtr.write_record([
                slide_id.clone(),
                d.bbox.x().to_string(),
                d.bbox.y().to_string(),
                d.bbox.w().to_string(),
                d.bbox.h().to_string(),
                d.score.to_string(),
                d.label.to_string(),
            ])?;
        }
    }
    wtr.flush().map_err(|e| PredictionsError::Csv(e.into()))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Annotation;
    use crate::rng;
    use proptest::prelude::*;

    fn tile_with(anns: Vec<Annotation>) -> Tile {
        Tile {
            slide_id: "s".into(),
            origin_x: 1024,
            origin_y: 0,
            size: 1024,
            annotations: anns,
            pixels: None,
        }
    }

    fn ann(x: f64, y: f64, label: Label) -> Annotation {
        Annotation::new(BBox::new(x, y, 50.0, 50.0).unwrap(), label)
    }

    #[test]
    fn perfect_oracle_returns_mitotic_gt() {
        let tile = tile_with(vec![
            ann(10.0, 10.0, Label::Mitotic),
            ann(100.0, 10.0, Label::NonMitotic),
            ann(300.0, 500.0, Label::Mitotic),
        ]);
        let scorer = OracleScorer::new(OracleConfig::default()).unwrap();
        let dets = scorer.score_tile(&tile, &mut rng::stream(1));
        let boxes: Vec<_> = dets.iter().map(|d| d.bbox).collect();
        assert_eq!(
            boxes,
            vec![tile.annotations[0].bbox, tile.annotations[2].bbox]
        );
        assert!(dets.iter().all(|d| (0.6..=1.0).contains(&d.score)));
        assert_eq!(
            dets[0].to_slide_frame().bbox,
            BBox::new(1034.0, 10.0, 50.0, 50.0).unwrap()
        );
    }

    #[test]
    fn silent_oracle_is_empty() {
        let tile = tile_with(vec![ann(10.0, 10.0, Label::Mitotic)]);
        let scorer = OracleScorer::new(OracleConfig {
            recall_sim: 0.0,
            ..Default::default()
        })
        .unwrap();
        assert!(scorer.score_tile(&tile, &mut rng::stream(2)).is_empty());
    }

    #[test]
    fn jitter_is_bounded() {
        let tile = tile_with(vec![ann(500.0, 500.0, Label::Mitotic)]);
        let scorer = OracleScorer::new(OracleConfig {
            jitter: 5.0,
            ..Default::default()
        })
        .unwrap();
        for seed in 0..200 {
            let d = &scorer.score_tile(&tile, &mut rng::stream(seed))[0];
            assert!((d.bbox.x() - 500.0).abs() <= 5.0);
            assert!((d.bbox.y() - 500.0).abs() <= 5.0);
        }
    }

    #[test]
    fn oracle_config_validation() {
        let bad = [
            OracleConfig {
                recall_sim: 1.2,
                ..Default::default()
            },
            OracleConfig {
                fp_rate: -1.0,
                ..Default::default()
            },
            OracleConfig {
                tp_score: ScoreDist::Uniform { lo: 0.5, hi: 1.5 },
                ..Default::default()
            },
        ];
        for cfg in bad {
            assert!(OracleScorer::new(cfg).is_err());
        }
    }

    #[test]
    fn file_scorer_routes_by_centre() {
        let mut preds = Predictions::new();
        preds.insert(
            "s".into(),
            vec![
                Detection::new(
                    BBox::new(1000.0, 0.0, 50.0, 50.0).unwrap(),
                    0.5,
                    Label::Mitotic,
                ),
                Detection::new(
                    BBox::new(10.0, 0.0, 50.0, 50.0).unwrap(),
                    0.5,
                    Label::Mitotic,
                ),
            ],
        );
        let scorer = FileScorer { predictions: preds };
        let dets = scorer.score_tile(&tile_with(vec![]), &mut rng::stream(0));
        assert_eq!(dets.len(), 1);
        assert_eq!(dets[0].bbox, BBox::new(-24.0, 0.0, 50.0, 50.0).unwrap());
    }

    #[test]
    fn empty_file_with_header() {
        let p = read_predictions("slide_id,x,y,w,h,score,label\n".as_bytes()).unwrap();
        assert!(p.is_empty());
        assert!(matches!(
            read_predictions("".as_bytes()),
            Err(PredictionsError::Header { .. })
        ));
        assert!(matches!(
            read_predictions("id,x,y,w,h,score,label\n".as_bytes()),
            Err(PredictionsError::Header { .. })
        ));
    }

    #[test]
    fn bad_rows_name_line_and_field() {
        let text =
            "slide_id,x,y,w,h,score,label\ns1,0,0,50,50,0.5,mitotic\ns1,0,0,50,50,1.2,mitotic\n";
        match read_predictions(text.as_bytes()) {
            Err(PredictionsError::Field { line, field, .. }) => {
                assert_eq!((line, field), (3, "score"));
            }
            other => panic!("unexpected {other:?}"),
        }
        let text = "slide_id,x,y,w,h,score,label\ns1,0,0,50,50,0.5,mitosis\n";
        assert!(matches!(
            read_predictions(text.as_bytes()),
            Err(PredictionsError::Field {
                field: "label",
                line: 2,
                ..
            })
        ));
        let text = "slide_id,x,y,w,h,score,label\ns1,zero,0,50,50,0.5,mitotic\n";
        assert!(matches!(
            read_predictions(text.as_bytes()),
            Err(PredictionsError::Field { field: "x", .. })
        ));
        let text = "slide_id,x,y,w,h,score,label\ns1,0,0,50,50,0.5\n";
        assert!(matches!(
            read_predictions(text.as_bytes()),
            Err(PredictionsError::Arity { line: 2, found: 6 })
        ));
        let text = "slide_id,x,y,w,h,score,label\ns1,0,0,NaN,50,0.5,mitotic\n";
        assert!(read_predictions(text.as_bytes()).is_err());
    }

    fn arb_predictions() -> impl Strategy<Value = Predictions> {
        proptest::collection::btree_map(
            "[a-z][a-z0-9_-]{0,8}",
            proptest::collection::vec(
                (
                    -1e4..1e4f64,
                    -1e4..1e4f64,
                    1e-3..500.0f64,
                    1e-3..500.0f64,
                    0.0..=1.0f64,
                    any::<bool>(),
                ),
                1..6,
            ),
            0..5,
        )
        .prop_map(|m| {
            m.into_iter()
                .map(|(k, v)| {
                    let dets = v
                        .into_iter()
                        .map(|(x, y, w, h, s, mitotic)| {
                            let label = if mitotic {
                                Label::Mitotic
                            } else {
                                Label::NonMitotic
                            };
                            Detection::new(BBox::new(x, y, w, h).unwrap(), s, label)
                        })
                        .collect();
                    (k, dets)
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn predictions_round_trip(p in arb_predictions()) {
            let mut buf = Vec::new();
            write_predictions(&mut buf, &p).unwrap();
            prop_assert_eq!(read_predictions(buf.as_slice()).unwrap(), p);
        }
    }
}
