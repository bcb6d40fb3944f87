//! Synthetic slides for demos and tests: random sizes, non-overlapping
//! annotations, and stain-like tile renderings.

use image::{Rgb, RgbImage};
use rand::Rng;

use crate::dataset::{Annotation, Label, Manifest, SlideRecord, Tile};
use crate::geometry::BBox;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub scanners: Vec<String>,
    pub slides_per_scanner: usize,
    pub min_side: u32,
    pub max_side: u32,
    pub mitotic_per_slide: usize,
    pub non_mitotic_per_slide: usize,
    pub box_size: f64,
}

const MAX_PLACEMENT_TRIES: usize = 10_000;

/// Generates a manifest. Slide ids are `<scanner>_<nn>`; annotation boxes sit
/// on integer coordinates and never touch each other.
pub fn generate_manifest<R: Rng + ?Sized>(spec: &SynthSpec, rng: &mut R) -> Manifest {
    let mut slides = Vec::new();
    for scanner in &spec.scanners {
        for i in 0..spec.slides_per_scanner {
            let width = rng.random_range(spec.min_side..=spec.max_side);
            let height = rng.random_range(spec.min_side..=spec.max_side);
            let mut annotations: Vec<Annotation> = Vec::new();
            let wanted = std::iter::repeat_n(Label::Mitotic, spec.mitotic_per_slide).chain(
                std::iter::repeat_n(Label::NonMitotic, spec.non_mitotic_per_slide),
            );
            for label in wanted {
                if let Some(b) = place_box(&annotations, width, height, spec.box_size, rng) {
                    annotations.push(Annotation::new(b, label));
                }
            }
            slides.push(SlideRecord {
                slide_id: format!("{scanner}_{i:02}"),
                scanner_id: scanner.clone(),
                width,
                height,
                image: None,
                annotations,
            });
        }
    }
    Manifest { slides }
}

fn place_box<R: Rng + ?Sized>(
    existing: &[Annotation],
    width: u32,
    height: u32,
    size: f64,
    rng: &mut R,
) -> Option<BBox> {
    let max_x = (width as f64 - size).floor();
    let max_y = (height as f64 - size).floor();
    if max_x < 0.0 || max_y < 0.0 {
        return None;
    }
    for _ in 0..MAX_PLACEMENT_TRIES {
        let x = (rng.random::<f64>() * (max_x + 1.0)).floor().min(max_x);
        let y = (rng.random::<f64>() * (max_y + 1.0)).floor().min(max_y);
        let b = BBox::new(x, y, size, size).ok()?;
        // one box of clearance on each side
        let halo = BBox::new(x - size, y - size, 3.0 * size, 3.0 * size).ok()?;
        if existing
            .iter()
            .all(|a| halo.intersection_area(&a.bbox) == 0.0)
        {
            return Some(b);
        }
    }
    None
}

/// Paints a tile: eosin-pink background with noise, dark hematoxylin blobs
/// over mitotic annotations and paler ones over non-mitotic ones.
pub fn render_tile<R: Rng + ?Sized>(tile: &Tile, rng: &mut R) -> RgbImage {
    let mut img = RgbImage::from_fn(tile.size, tile.size, |_, _| {
        let n: i16 = rng.random_range(-12..=12);
        Rgb([
            (230 + n).clamp(0, 255) as u8,
            (170 + n).clamp(0, 255) as u8,
            (200 + n).clamp(0, 255) as u8,
        ])
    });
    for ann in &tile.annotations {
        let color = match ann.label {
            Label::Mitotic => Rgb([70, 30, 110]),
            Label::NonMitotic => Rgb([150, 110, 180]),
        };
        let (cx, cy) = ann.bbox.center();
        let r = ann.bbox.w().min(ann.bbox.h()) / 2.0 * 0.8;
        let x0 = ann.bbox.x().max(0.0) as u32;
        let y0 = ann.bbox.y().max(0.0) as u32;
        let x1 = (ann.bbox.right().ceil() as u32).min(tile.size);
        let y1 = (ann.bbox.bottom().ceil() as u32).min(tile.size);
        for y in y0..y1 {
            for x in x0..x1 {
                let dx = x as f64 + 0.5 - cx;
                let dy = y as f64 + 0.5 - cy;
                if dx * dx + dy * dy <= r * r {
                    img.put_pixel(x, y, color);
                }
            }
        }
    }
    img
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn spec() -> SynthSpec {
        SynthSpec {
            scanners: vec!["a".into(), "b".into()],
            slides_per_scanner: 3,
            min_side: 1000,
            max_side: 1500,
            mitotic_per_slide: 10,
            non_mitotic_per_slide: 5,
            box_size: 50.0,
        }
    }

    #[test]
    fn manifest_is_valid_and_disjoint() {
        let m = generate_manifest(&spec(), &mut rng::stream(1));
        assert_eq!(m.slides.len(), 6);
        m.validate(Some(50.0)).unwrap();
        for s in &m.slides {
            assert_eq!(s.annotations.len(), 15);
            assert_eq!(s.mitotic_count(), 10);
            for (i, a) in s.annotations.iter().enumerate() {
                for b in &s.annotations[i + 1..] {
                    assert_eq!(a.bbox.intersection_area(&b.bbox), 0.0);
                }
            }
        }
        assert_eq!(m, generate_manifest(&spec(), &mut rng::stream(1)));
    }

    #[test]
    fn rendering_marks_annotations() {
        let tile = Tile {
            slide_id: "t".into(),
            origin_x: 0,
            origin_y: 0,
            size: 128,
            annotations: vec![Annotation::new(
                BBox::new(10.0, 10.0, 50.0, 50.0).unwrap(),
                Label::Mitotic,
            )],
            pixels: None,
        };
        let img = render_tile(&tile, &mut rng::stream(0));
        assert_eq!(img.get_pixel(35, 35).0, [70, 30, 110]);
        assert_ne!(img.get_pixel(100, 100).0, [70, 30, 110]);
    }
}
