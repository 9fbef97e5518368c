//! Keypoint heatmaps and the image side of training-data generation.
//!
//! A target heatmap for a keypoint `p*` holds `exp(-|p - p*|² / 2σ²)` at every
//! integer pixel `p`. Decoding picks the pixel with the largest value. The
//! overlay compositing and the crop/flip/blur/resize augmentation operate on
//! 8-bit RGB images supplied by the caller.

use image::imageops::{self, FilterType};
use image::{Rgb, RgbImage};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// 8-bit RGB image.
pub type Image = RgbImage;

/// Side length of the images handed to the point estimator.
pub const MODEL_INPUT_SIZE: u32 = 224;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PixelPoint {
    pub x: f64,
    pub y: f64,
}

impl PixelPoint {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &PixelPoint) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeatmapParams {
    /// Kernel width in pixels.
    pub sigma: f64,
}

impl Default for HeatmapParams {
    fn default() -> Self {
        Self { sigma: 3.0 }
    }
}

impl HeatmapParams {
    pub fn new(sigma: f64) -> Result<Self> {
        if sigma > 0.0 && sigma.is_finite() {
            Ok(Self { sigma })
        } else {
            Err(Error::InvalidArgument(format!("sigma must be positive, got {sigma}")))
        }
    }
}

/// Row-major grid of scores.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    width: u32,
    height: u32,
    values: Vec<f64>,
}

impl Heatmap {
    pub fn zeros(width: u32, height: u32) -> Result<Self> {
        Self::from_values(width, height, vec![0.0; width as usize * height as usize])
    }

    pub fn from_values(width: u32, height: u32, values: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument("heatmap dimensions must be positive".into()));
        }
        if values.len() != width as usize * height as usize {
            return Err(Error::DimensionMismatch(format!(
                "{} values for a {width}x{height} heatmap",
                values.len()
            )));
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, x: u32, y: u32) -> f64 {
        self.values[y as usize * self.width as usize + x as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, v: f64) {
        self.values[y as usize * self.width as usize + x as usize] = v;
    }
}

/// Gaussian target heatmap centered on `p_star`. `p_star` may lie outside the
/// image.
pub fn gaussian_heatmap(p_star: &PixelPoint, params: &HeatmapParams, width: u32, height: u32) -> Result<Heatmap> {
    let mut h = Heatmap::zeros(width, height)?;
    let denom = 2.0 * params.sigma * params.sigma;
    for y in 0..height {
        let dy = y as f64 - p_star.y;
        for x in 0..width {
            let dx = x as f64 - p_star.x;
            h.set(x, y, (-(dx * dx + dy * dy) / denom).exp());
        }
    }
    Ok(h)
}

/// Integer pixel with the largest value, and that value. Ties go to the
/// smallest row-major index.
pub fn argmax_point(h: &Heatmap) -> (PixelPoint, f64) {
    let mut best = 0usize;
    let mut best_v = h.values[0];
    for (i, &v) in h.values.iter().enumerate().skip(1) {
        if v > best_v {
            best = i;
            best_v = v;
        }
    }
    let w = h.width as usize;
    (PixelPoint::new((best % w) as f64, (best / w) as f64), best_v)
}

/// Mean squared difference over all pixels.
pub fn heatmap_mse(a: &Heatmap, b: &Heatmap) -> Result<f64> {
    if a.width != b.width || a.height != b.height {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    let sum: f64 = a
        .values
        .iter()
        .zip(&b.values)
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    Ok(sum / a.values.len() as f64)
}

/// Integer BT.601 luma.
pub fn luma(px: &Rgb<u8>) -> u8 {
    let [r, g, b] = px.0;
    ((299 * r as u32 + 587 * g as u32 + 114 * b as u32) / 1000) as u8
}

fn check_same_dims(images: &[&Image]) -> Result<()> {
    let (w, h) = images[0].dimensions();
    for img in &images[1..] {
        if img.dimensions() != (w, h) {
            return Err(Error::DimensionMismatch(format!(
                "{w}x{h} vs {}x{}",
                img.width(),
                img.height()
            )));
        }
    }
    Ok(())
}

/// Blends `overlay` over `render` using the luma of `alpha_source` as alpha.
pub fn composite_overlay(render: &Image, overlay: &Image, alpha_source: &Image) -> Result<Image> {
    check_same_dims(&[render, overlay, alpha_source])?;
    let mut out = render.clone();
    for (x, y, px) in out.enumerate_pixels_mut() {
        let a = luma(alpha_source.get_pixel(x, y)) as u32;
        let o = overlay.get_pixel(x, y);
        for c in 0..3 {
            let blended = (px.0[c] as u32 * (255 - a) + o.0[c] as u32 * a + 127) / 255;
            px.0[c] = blended as u8;
        }
    }
    Ok(out)
}

/// Mean filter over a `kernel`×`kernel` window with clamped borders.
pub fn box_blur(image: &Image, kernel: u32) -> Image {
    let r = (kernel / 2) as i64;
    let (w, h) = (image.width() as i64, image.height() as i64);
    let n = (kernel * kernel) as u32;
    RgbImage::from_fn(image.width(), image.height(), |x, y| {
        let mut acc = [0u32; 3];
        for dy in -r..=r {
            let yy = (y as i64 + dy).clamp(0, h - 1) as u32;
            for dx in -r..=r {
                let xx = (x as i64 + dx).clamp(0, w - 1) as u32;
                let p = image.get_pixel(xx, yy);
                for c in 0..3 {
                    acc[c] += p.0[c] as u32;
                }
            }
        }
        Rgb(acc.map(|s| ((s + n / 2) / n) as u8))
    })
}

/// Mirrors an image and keypoints about the vertical center line.
pub fn flip_horizontal(image: &Image, keypoints: &[PixelPoint]) -> (Image, Vec<PixelPoint>) {
    let w = image.width() as f64;
    let flipped = keypoints
        .iter()
        .map(|p| PixelPoint::new(w - 1.0 - p.x, p.y))
        .collect();
    (imageops::flip_horizontal(image), flipped)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentParams {
    /// Side of the square crop as a fraction of the shorter image side;
    /// `None` disables cropping.
    pub crop_fraction: Option<f64>,
    pub flip_prob: f64,
    pub blur_prob: f64,
    pub output_size: u32,
    pub heatmap: HeatmapParams,
}

impl Default for AugmentParams {
    fn default() -> Self {
        Self {
            crop_fraction: Some(0.875),
            flip_prob: 0.5,
            blur_prob: 0.5,
            output_size: MODEL_INPUT_SIZE,
            heatmap: HeatmapParams::default(),
        }
    }
}

impl AugmentParams {
    /// Everything disabled except the final resize.
    pub fn identity() -> Self {
        Self {
            crop_fraction: None,
            flip_prob: 0.0,
            blur_prob: 0.0,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone)]
pub struct Augmented {
    pub image: Image,
    pub keypoints: Vec<PixelPoint>,
    /// One target heatmap per keypoint, regenerated at the output resolution.
    pub heatmaps: Vec<Heatmap>,
}

/// Random crop, random horizontal flip, random 3 or 5 px box blur, then a
/// bilinear resize to `output_size`².
///
/// Geometric steps are applied to the keypoints; target heatmaps are
/// regenerated from the transformed keypoints so they stay exact Gaussians.
pub fn augment<R: Rng + ?Sized>(
    image: &Image,
    keypoints: &[PixelPoint],
    params: &AugmentParams,
    rng: &mut R,
) -> Result<Augmented> {
    let (w, h) = image.dimensions();
    if w == 0 || h == 0 || params.output_size == 0 {
        return Err(Error::InvalidArgument("empty image".into()));
    }
    let mut img = image.clone();
    let mut pts = keypoints.to_vec();

    if let Some(frac) = params.crop_fraction {
        let side = (frac * w.min(h) as f64).round();
        if !(frac > 0.0) || side > w.min(h) as f64 || side < 1.0 {
            return Err(Error::InvalidArgument(format!(
                "crop of {side} px does not fit a {w}x{h} image"
            )));
        }
        let side = side as u32;
        let x0 = rng.random_range(0..=w - side);
        let y0 = rng.random_range(0..=h - side);
        img = imageops::crop_imm(&img, x0, y0, side, side).to_image();
        for p in &mut pts {
            p.x -= x0 as f64;
            p.y -= y0 as f64;
        }
    }

    if rng.random_bool(params.flip_prob.clamp(0.0, 1.0)) {
        let (flipped, fp) = flip_horizontal(&img, &pts);
        img = flipped;
        pts = fp;
    }

    if rng.random_bool(params.blur_prob.clamp(0.0, 1.0)) {
        let kernel = if rng.random_bool(0.5) { 3 } else { 5 };
        img = box_blur(&img, kernel);
    }

    let out = params.output_size;
    let (cw, ch) = img.dimensions();
    if (cw, ch) != (out, out) {
        img = imageops::resize(&img, out, out, FilterType::Triangle);
        let sx = out as f64 / cw as f64;
        let sy = out as f64 / ch as f64;
        for p in &mut pts {
            p.x = (p.x + 0.5) * sx - 0.5;
            p.y = (p.y + 0.5) * sy - 0.5;
        }
    }

    let heatmaps = pts
        .iter()
        .map(|p| gaussian_heatmap(p, &params.heatmap, out, out))
        .collect::<Result<Vec<_>>>()?;
    Ok(Augmented {
        image: img,
        keypoints: pts,
        heatmaps,
    })
}

/// Packs a peg and a hole heatmap into an RGB image (peg red, hole blue).
pub fn heatmaps_to_image(peg: &Heatmap, hole: &Heatmap) -> Result<Image> {
    if peg.width != hole.width || peg.height != hole.height {
        return Err(Error::DimensionMismatch("peg and hole heatmaps differ in size".into()));
    }
    let q = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    Ok(RgbImage::from_fn(peg.width, peg.height, |x, y| {
        Rgb([q(peg.get(x, y)), 0, q(hole.get(x, y))])
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng_from_seed;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn peak_value_is_one() {
        let h = gaussian_heatmap(&PixelPoint::new(50.0, 60.0), &HeatmapParams::default(), 224, 224).unwrap();
        assert_eq!(h.get(50, 60), 1.0);
    }

    #[test]
    fn value_at_one_sigma() {
        let h = gaussian_heatmap(&PixelPoint::new(50.0, 60.0), &HeatmapParams::default(), 224, 224).unwrap();
        let expected = (-0.5f64).exp();
        assert!((h.get(53, 60) - expected).abs() < 1e-12);
        assert!((h.get(50, 57) - 0.606531).abs() < 1e-6);
    }

    #[test]
    fn default_sigma() {
        assert_eq!(HeatmapParams::default().sigma, 3.0);
        assert!(HeatmapParams::new(0.0).is_err());
    }

    #[test]
    fn off_image_center_is_well_defined() {
        let h = gaussian_heatmap(&PixelPoint::new(-10.0, 300.0), &HeatmapParams::default(), 16, 16).unwrap();
        assert!(h.values().iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v)));
    }

    #[test]
    fn argmax_recovers_peak() {
        let h = gaussian_heatmap(&PixelPoint::new(50.0, 60.0), &HeatmapParams::default(), 224, 224).unwrap();
        let (p, v) = argmax_point(&h);
        assert_eq!((p.x, p.y, v), (50.0, 60.0, 1.0));
    }

    #[test]
    fn argmax_tie_break_is_row_major() {
        let mut h = Heatmap::zeros(224, 224).unwrap();
        h.set(3, 4, 0.8);
        h.set(10, 2, 0.8);
        let (p, _) = argmax_point(&h);
        assert_eq!((p.x, p.y), (10.0, 2.0));
    }

    #[test]
    fn argmax_of_zeros() {
        let (p, v) = argmax_point(&Heatmap::zeros(7, 5).unwrap());
        assert_eq!((p.x, p.y, v), (0.0, 0.0, 0.0));
    }

    #[test]
    fn mse_examples() {
        let a = Heatmap::from_values(2, 1, vec![0.0, 0.0]).unwrap();
        let b = Heatmap::from_values(2, 1, vec![1.0, 0.0]).unwrap();
        assert_eq!(heatmap_mse(&a, &b).unwrap(), 0.5);
        assert_eq!(heatmap_mse(&b, &a).unwrap(), 0.5);
        assert_eq!(heatmap_mse(&a, &a).unwrap(), 0.0);
        let c = Heatmap::zeros(1, 2).unwrap();
        assert!(matches!(heatmap_mse(&a, &c), Err(Error::DimensionMismatch(_))));
        assert!(Heatmap::from_values(2, 2, vec![0.0]).is_err());
    }

    fn solid(w: u32, h: u32, c: [u8; 3]) -> Image {
        RgbImage::from_pixel(w, h, Rgb(c))
    }

    fn noise_image(w: u32, h: u32, seed: u64) -> Image {
        let mut rng = rng_from_seed(seed);
        RgbImage::from_fn(w, h, |_, _| Rgb([rng.random(), rng.random(), rng.random()]))
    }

    #[test]
    fn composite_alpha_extremes() {
        let render = noise_image(8, 6, 1);
        let overlay = noise_image(8, 6, 2);
        let black = solid(8, 6, [0, 0, 0]);
        let white = solid(8, 6, [255, 255, 255]);
        assert_eq!(composite_overlay(&render, &overlay, &black).unwrap(), render);
        assert_eq!(composite_overlay(&render, &overlay, &white).unwrap(), overlay);
    }

    #[test]
    fn composite_half_alpha() {
        let out = composite_overlay(
            &solid(1, 1, [100, 100, 100]),
            &solid(1, 1, [200, 200, 200]),
            &solid(1, 1, [128, 128, 128]),
        )
        .unwrap();
        assert_eq!(out.get_pixel(0, 0).0, [150, 150, 150]);
    }

    #[test]
    fn composite_dimension_mismatch() {
        let a = solid(2, 2, [0; 3]);
        let b = solid(2, 3, [0; 3]);
        assert!(composite_overlay(&a, &a, &b).is_err());
    }

    #[test]
    fn luma_weights() {
        assert_eq!(luma(&Rgb([255, 255, 255])), 255);
        assert_eq!(luma(&Rgb([255, 0, 0])), 76);
        assert_eq!(luma(&Rgb([0, 255, 0])), 149);
        assert_eq!(luma(&Rgb([0, 0, 255])), 29);
    }

    #[test]
    fn identity_augmentation() {
        let img = noise_image(224, 224, 3);
        let pts = [PixelPoint::new(50.0, 60.0), PixelPoint::new(120.5, 33.25)];
        let out = augment(&img, &pts, &AugmentParams::identity(), &mut rng_from_seed(0)).unwrap();
        assert_eq!(out.image, img);
        assert_eq!(out.keypoints, pts.to_vec());
        assert_eq!(argmax_point(&out.heatmaps[0]).0, pts[0]);
    }

    #[test]
    fn identity_augmentation_resizes() {
        let img = noise_image(448, 448, 3);
        let out = augment(&img, &[PixelPoint::new(100.5, 200.5)], &AugmentParams::identity(), &mut rng_from_seed(0)).unwrap();
        assert_eq!(out.image.dimensions(), (224, 224));
        assert_eq!(out.keypoints[0], PixelPoint::new(50.0, 100.0));
    }

    #[test]
    fn forced_flip_moves_peak() {
        let img = noise_image(224, 224, 4);
        let params = AugmentParams {
            flip_prob: 1.0,
            ..AugmentParams::identity()
        };
        let out = augment(&img, &[PixelPoint::new(50.0, 60.0)], &params, &mut rng_from_seed(0)).unwrap();
        assert_eq!(out.keypoints[0], PixelPoint::new(173.0, 60.0));
        assert_eq!(argmax_point(&out.heatmaps[0]).0, PixelPoint::new(173.0, 60.0));
    }

    #[test]
    fn default_blur_probability() {
        assert_eq!(AugmentParams::default().blur_prob, 0.5);
    }

    #[test]
    fn crop_too_large_is_an_error() {
        let img = noise_image(32, 32, 5);
        let params = AugmentParams {
            crop_fraction: Some(1.5),
            ..AugmentParams::default()
        };
        assert!(augment(&img, &[], &params, &mut rng_from_seed(0)).is_err());
    }

    #[test]
    fn crop_keeps_keypoint_on_same_content() {
        // A single bright pixel must stay under its keypoint through a crop.
        let mut img = solid(300, 260, [0, 0, 0]);
        img.put_pixel(150, 130, Rgb([255, 255, 255]));
        let params = AugmentParams {
            crop_fraction: Some(0.8),
            flip_prob: 0.5,
            blur_prob: 0.0,
            output_size: 208,
            heatmap: HeatmapParams::default(),
        };
        for seed in 0..20 {
            let out = augment(&img, &[PixelPoint::new(150.0, 130.0)], &params, &mut rng_from_seed(seed)).unwrap();
            assert_eq!(out.image.dimensions(), (208, 208));
            let p = out.keypoints[0];
            assert_eq!(out.image.get_pixel(p.x as u32, p.y as u32).0, [255, 255, 255], "seed {seed}");
        }
    }

    #[test]
    fn blur_kernel_is_three_or_five() {
        let mut img = solid(11, 11, [0, 0, 0]);
        img.put_pixel(5, 5, Rgb([225, 225, 225]));
        let params = AugmentParams {
            blur_prob: 1.0,
            output_size: 11,
            ..AugmentParams::identity()
        };
        let mut seen = [false; 2];
        for seed in 0..40 {
            let out = augment(&img, &[], &params, &mut rng_from_seed(seed)).unwrap();
            match out.image.get_pixel(5, 5).0[0] {
                25 => seen[0] = true,
                9 => seen[1] = true,
                v => panic!("unexpected blurred value {v}"),
            }
        }
        assert!(seen[0] && seen[1]);
    }

    #[test]
    fn heatmap_image_channels() {
        let peg = gaussian_heatmap(&PixelPoint::new(1.0, 1.0), &HeatmapParams::default(), 4, 4).unwrap();
        let hole = Heatmap::zeros(4, 4).unwrap();
        let img = heatmaps_to_image(&peg, &hole).unwrap();
        assert_eq!(img.get_pixel(1, 1).0, [255, 0, 0]);
    }

    proptest! {
        #[test]
        fn flip_twice_is_identity(seed in 0u64..1000, x in 0.0..40.0f64, y in 0.0..30.0f64) {
            let img = noise_image(40, 30, seed);
            let pts = [PixelPoint::new(x, y)];
            let (once, p1) = flip_horizontal(&img, &pts);
            let (twice, p2) = flip_horizontal(&once, &p1);
            prop_assert_eq!(twice, img);
            prop_assert!((p2[0].x - x).abs() < 1e-12 && p2[0].y == y);
        }

        #[test]
        fn composite_with_black_alpha_is_idempotent(seed in 0u64..1000) {
            let render = noise_image(6, 5, seed);
            let overlay = noise_image(6, 5, seed + 1);
            let black = solid(6, 5, [0; 3]);
            let once = composite_overlay(&render, &overlay, &black).unwrap();
            let twice = composite_overlay(&once, &overlay, &black).unwrap();
            prop_assert_eq!(twice, render);
        }

        #[test]
        fn heatmap_is_radially_symmetric(cx in 10u32..30, cy in 10u32..30, dx in 0u32..8, dy in 0u32..8) {
            let h = gaussian_heatmap(&PixelPoint::new(cx as f64, cy as f64), &HeatmapParams::default(), 40, 40).unwrap();
            let v = h.get(cx + dx, cy + dy);
            for (x, y) in [(cx - dx, cy + dy), (cx + dx, cy - dy), (cx - dx, cy - dy), (cx + dy, cy + dx)] {
                prop_assert!((h.get(x, y) - v).abs() <= 1e-12);
            }
        }
    }
}
