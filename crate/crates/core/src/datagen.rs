//! Training-sample generation over a directory of PNG images.
//!
//! Each sample takes a base image with its peg and hole keypoints, blends a
//! second image over it using a third one (as grayscale) for alpha, then
//! augments the result. Keypoints come from a `<stem>.json` sidecar
//! (`{"peg": [x, y], "hole": [x, y]}`) when present and are drawn uniformly
//! over the image otherwise.

use std::path::{Path, PathBuf};

use image::imageops::{self, FilterType};
use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::heatmap::{augment, composite_overlay, heatmaps_to_image, AugmentParams, Image, PixelPoint};

/// Keypoint annotation of one image, pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub peg: [f64; 2],
    pub hole: [f64; 2],
}

impl Annotation {
    pub fn points(&self) -> [PixelPoint; 2] {
        [
            PixelPoint::new(self.peg[0], self.peg[1]),
            PixelPoint::new(self.hole[0], self.hole[1]),
        ]
    }
}

/// Written next to each generated image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub image: String,
    pub targets: String,
    pub source: String,
    pub peg: [f64; 2],
    pub hole: [f64; 2],
}

#[derive(Debug, Clone)]
pub struct SourceImage {
    pub name: String,
    pub image: Image,
    pub annotation: Option<Annotation>,
}

/// Loads every `*.png` of `dir` in file-name order with its sidecar, if any.
pub fn load_sources(dir: &Path) -> Result<Vec<SourceImage>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths: Vec<PathBuf> = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")) {
            paths.push(path);
        }
    }
    paths.sort();
    let mut out = Vec::with_capacity(paths.len());
    for path in paths {
        let image = image::open(&path).map_err(|e| Error::format(&path, e))?.to_rgb8();
        let sidecar = path.with_extension("json");
        let annotation = if sidecar.exists() {
            let text = std::fs::read_to_string(&sidecar).map_err(|e| Error::io(&sidecar, e))?;
            Some(serde_json::from_str(&text).map_err(|e| Error::format(&sidecar, e))?)
        } else {
            None
        };
        out.push(SourceImage {
            name: path.file_name().unwrap_or_default().to_string_lossy().into_owned(),
            image,
            annotation,
        });
    }
    Ok(out)
}

/// Output of [`make_sample`].
#[derive(Debug, Clone)]
pub struct Sample {
    pub image: Image,
    pub targets: Image,
    pub annotation: Annotation,
    pub source: String,
}

/// Builds one sample from randomly chosen sources.
pub fn make_sample<R: Rng + ?Sized>(sources: &[SourceImage], params: &AugmentParams, rng: &mut R) -> Result<Sample> {
    let base = sources
        .choose(rng)
        .ok_or_else(|| Error::InvalidArgument("no source images".into()))?;
    let overlay = sources.choose(rng).expect("non-empty");
    let alpha = sources.choose(rng).expect("non-empty");
    let (w, h) = base.image.dimensions();
    let fit = |img: &Image| {
        if img.dimensions() == (w, h) {
            img.clone()
        } else {
            imageops::resize(img, w, h, FilterType::Triangle)
        }
    };
    let blended = composite_overlay(&base.image, &fit(&overlay.image), &fit(&alpha.image))?;
    let points = match base.annotation {
        Some(a) => a.points(),
        None => {
            let p = |rng: &mut R| PixelPoint::new(rng.random_range(0.0..w as f64), rng.random_range(0.0..h as f64));
            [p(rng), p(rng)]
        }
    };
    let aug = augment(&blended, &points, params, rng)?;
    let targets = heatmaps_to_image(&aug.heatmaps[0], &aug.heatmaps[1])?;
    let (peg, hole) = (aug.keypoints[0], aug.keypoints[1]);
    Ok(Sample {
        image: aug.image,
        targets,
        annotation: Annotation {
            peg: [peg.x, peg.y],
            hole: [hole.x, hole.y],
        },
        source: base.name.clone(),
    })
}

/// Writes `count` samples into `out_dir` as `NNNNN.png` and
/// `NNNNN_targets.png`, plus `annotations.json` listing all records.
pub fn generate<R: Rng + ?Sized>(
    sources: &[SourceImage],
    out_dir: &Path,
    count: usize,
    params: &AugmentParams,
    rng: &mut R,
) -> Result<Vec<SampleRecord>> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut records = Vec::with_capacity(count);
    for i in 0..count {
        let s = make_sample(sources, params, rng)?;
        let image = format!("{i:05}.png");
        let targets = format!("{i:05}_targets.png");
        for (name, img) in [(&image, &s.image), (&targets, &s.targets)] {
            let path = out_dir.join(name);
            img.save(&path).map_err(|e| Error::format(&path, e))?;
        }
        records.push(SampleRecord {
            image,
            targets,
            source: s.source,
            peg: s.annotation.peg,
            hole: s.annotation.hole,
        });
    }
    let path = out_dir.join("annotations.json");
    let json = serde_json::to_string_pretty(&records).map_err(|e| Error::format(&path, e))?;
    std::fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(records)
}
