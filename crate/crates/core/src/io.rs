//! File helpers. Every write goes to a temporary file in the target
//! directory and is renamed into place.

use std::io::Write;
use std::path::{Path, PathBuf};

use image::{ImageEncoder, RgbImage};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::dataset::{Manifest, Tile};
use crate::error::{Error, Result};
use crate::evaluation::Predictions;
use crate::scorer;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err(dir))?;
    tmp.write_all(bytes).map_err(io_err(path))?;
    tmp.persist(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e.error,
    })?;
    Ok(())
}

pub fn read_to_string(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(io_err(path))
}

pub fn to_json_string<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("in-memory values serialize");
    s.push('\n');
    s
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, to_json_string(value).as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = read_to_string(path)?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes one JSON object per line.
pub fn write_json_lines<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut out = String::new();
    for row in rows {
        out.push_str(&serde_json::to_string(row).expect("in-memory values serialize"));
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}

/// Loads and validates a manifest. Relative image paths are resolved against
/// the manifest's directory.
pub fn load_manifest(path: &Path, box_size: Option<f64>) -> Result<Manifest> {
    let mut manifest: Manifest = read_json(path)?;
    manifest.validate(box_size)?;
    let base = path.parent().unwrap_or(Path::new(""));
    for slide in &mut manifest.slides {
        if let Some(img) = &slide.image {
            if img.is_relative() {
                slide.image = Some(base.join(img));
            }
        }
    }
    Ok(manifest)
}

pub fn save_manifest(path: &Path, manifest: &Manifest) -> Result<()> {
    write_json(path, manifest)
}

pub fn load_png(path: &Path) -> Result<RgbImage> {
    let img = image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(img.to_rgb8())
}

pub fn encode_png(img: &RgbImage) -> Vec<u8> {
    let mut buf = Vec::new();
    image::codecs::png::PngEncoder::new(&mut buf)
        .write_image(
            img.as_raw(),
            img.width(),
            img.height(),
            image::ExtendedColorType::Rgb8,
        )
        .expect("encoding into memory cannot fail");
    buf
}

pub fn save_png(path: &Path, img: &RgbImage) -> Result<()> {
    write_atomic(path, &encode_png(img))
}

/// Sidecar listing the tiles written to a directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TileManifest {
    pub tile_size: u32,
    pub tiles: Vec<TileEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TileEntry {
    #[serde(flatten)]
    pub tile: Tile,
    /// File name of the tile image, relative to the sidecar.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<String>,
}

pub const TILE_MANIFEST: &str = "tiles.json";

/// Writes tile images (for tiles carrying pixels) and the `tiles.json` sidecar.
pub fn save_tiles(dir: &Path, tile_size: u32, tiles: &[Tile]) -> Result<PathBuf> {
    let mut entries = Vec::with_capacity(tiles.len());
    for tile in tiles {
        let image = match &tile.pixels {
            Some(px) => {
                let name = tile.file_name();
                save_png(&dir.join(&name), px)?;
                Some(name)
            }
            None => None,
        };
        entries.push(TileEntry {
            tile: Tile {
                pixels: None,
                ..tile.clone()
            },
            image,
        });
    }
    let path = dir.join(TILE_MANIFEST);
    write_json(
        &path,
        &TileManifest {
            tile_size,
            tiles: entries,
        },
    )?;
    Ok(path)
}

/// Reads a `tiles.json` sidecar, loading tile images when `with_pixels`.
pub fn load_tiles(path: &Path, with_pixels: bool) -> Result<(u32, Vec<Tile>)> {
    let manifest: TileManifest = read_json(path)?;
    let base = path.parent().unwrap_or(Path::new(""));
    let mut tiles = Vec::with_capacity(manifest.tiles.len());
    for entry in manifest.tiles {
        let mut tile = entry.tile;
        if with_pixels {
            if let Some(name) = &entry.image {
                tile.pixels = Some(load_png(&base.join(name))?);
            }
        }
        tiles.push(tile);
    }
    Ok((manifest.tile_size, tiles))
}

pub fn load_predictions(path: &Path) -> Result<Predictions> {
    let file = std::fs::File::open(path).map_err(io_err(path))?;
    Ok(scorer::read_predictions(std::io::BufReader::new(file))?)
}

pub fn predictions_to_string(predictions: &Predictions) -> String {
    let mut buf = Vec::new();
    scorer::write_predictions(&mut buf, predictions).expect("writing to memory cannot fail");
    String::from_utf8(buf).expect("csv output is utf-8")
}

pub fn save_predictions(path: &Path, predictions: &Predictions) -> Result<()> {
    write_atomic(path, predictions_to_string(predictions).as_bytes())
}
