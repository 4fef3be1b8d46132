//! Training-time augmentation: intensity shift/scale plus a spatial transform
//! (translation, rotation, scaling about the image center, elastic warp)
//! applied identically to the image and its landmarks.

use rand::Rng;

use crate::error::{Error, Result};
use crate::gaussmath::{HeatmapGrid, Point};
use crate::rng;

/// Ranges are half-widths around the identity: shifts and translations are
/// drawn from `[-r, r]`, scales from `[1 - r, 1 + r]`, rotations (radians)
/// from `[-r, r]`. The elastic warp displaces a coarse `grid x grid` lattice
/// of control points by up to `elastic_magnitude` pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentConfig {
    pub intensity_shift_enabled: bool,
    pub intensity_shift_range: f64,
    pub intensity_scale_enabled: bool,
    pub intensity_scale_range: f64,
    pub translation_enabled: bool,
    pub translation_range: f64,
    pub rotation_enabled: bool,
    pub rotation_range: f64,
    pub scale_enabled: bool,
    pub scale_range: f64,
    pub elastic_enabled: bool,
    pub elastic_grid_size: usize,
    pub elastic_magnitude: f64,
}

impl AugmentConfig {
    /// Everything disabled.
    pub fn identity() -> Self {
        Self {
            intensity_shift_enabled: false,
            intensity_shift_range: 0.0,
            intensity_scale_enabled: false,
            intensity_scale_range: 0.0,
            translation_enabled: false,
            translation_range: 0.0,
            rotation_enabled: false,
            rotation_range: 0.0,
            scale_enabled: false,
            scale_range: 0.0,
            elastic_enabled: false,
            elastic_grid_size: 4,
            elastic_magnitude: 0.0,
        }
    }

    /// Every augmentation enabled with modest ranges.
    pub fn standard() -> Self {
        Self {
            intensity_shift_enabled: true,
            intensity_shift_range: 0.1,
            intensity_scale_enabled: true,
            intensity_scale_range: 0.1,
            translation_enabled: true,
            translation_range: 4.0,
            rotation_enabled: true,
            rotation_range: 0.1,
            scale_enabled: true,
            scale_range: 0.05,
            elastic_enabled: true,
            elastic_grid_size: 4,
            elastic_magnitude: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ranges = [
            ("intensity_shift_range", self.intensity_shift_range),
            ("intensity_scale_range", self.intensity_scale_range),
            ("translation_range", self.translation_range),
            ("rotation_range", self.rotation_range),
            ("scale_range", self.scale_range),
            ("elastic_magnitude", self.elastic_magnitude),
        ];
        for (name, r) in ranges {
            if !(r >= 0.0 && r.is_finite()) {
                return Err(Error::invalid(format!("{name} must be a non-negative half-width, got {r}")));
            }
        }
        if self.intensity_scale_range >= 1.0 || self.scale_range >= 1.0 {
            return Err(Error::invalid("scale ranges must be below 1"));
        }
        if self.elastic_enabled && self.elastic_grid_size < 2 {
            return Err(Error::invalid("elastic_grid_size must be at least 2"));
        }
        Ok(())
    }
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self::identity()
    }
}

/// Displacements (pixels) on a regular lattice spanning the image, bilinearly
/// interpolated in between.
#[derive(Debug, Clone, PartialEq)]
pub struct ElasticField {
    pub grid: usize,
    pub offsets: Vec<Point>,
}

impl ElasticField {
    fn at(&self, p: Point, width: usize, height: usize) -> Point {
        let g = self.grid;
        let fx = (p.x / (width.max(2) - 1) as f64 * (g - 1) as f64).clamp(0.0, (g - 1) as f64);
        let fy = (p.y / (height.max(2) - 1) as f64 * (g - 1) as f64).clamp(0.0, (g - 1) as f64);
        let (x0, y0) = ((fx.floor() as usize).min(g - 2), (fy.floor() as usize).min(g - 2));
        let (tx, ty) = (fx - x0 as f64, fy - y0 as f64);
        let o = |x: usize, y: usize| self.offsets[y * g + x];
        let lerp = |a: Point, b: Point, t: f64| Point::new(a.x + (b.x - a.x) * t, a.y + (b.y - a.y) * t);
        lerp(lerp(o(x0, y0), o(x0 + 1, y0), tx), lerp(o(x0, y0 + 1), o(x0 + 1, y0 + 1), tx), ty)
    }
}

/// Similarity transform about the image center followed by an optional warp.
/// The output pixel `o` samples the input at
/// `c + R(-φ)(o - c - t)/s + e(o)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialTransform {
    pub translation: Point,
    pub rotation: f64,
    pub scale: f64,
    pub elastic: Option<ElasticField>,
}

impl SpatialTransform {
    pub fn identity() -> Self {
        Self {
            translation: Point::default(),
            rotation: 0.0,
            scale: 1.0,
            elastic: None,
        }
    }

    pub fn is_identity(&self) -> bool {
        self.translation == Point::default() && self.rotation == 0.0 && self.scale == 1.0 && self.elastic.is_none()
    }

    fn center(width: usize, height: usize) -> Point {
        Point::new((width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0)
    }

    /// Input location sampled by output location `o`.
    pub fn source_of(&self, o: Point, width: usize, height: usize) -> Point {
        let c = Self::center(width, height);
        let d = o - c - self.translation;
        let (s, co) = (-self.rotation).sin_cos();
        let r = Point::new(co * d.x - s * d.y, s * d.x + co * d.y).scale(1.0 / self.scale);
        let warp = self.elastic.as_ref().map_or(Point::default(), |e| e.at(o, width, height));
        c + r + warp
    }

    /// Output location of input point `p` (inverse of [`Self::source_of`],
    /// solved by fixed-point iteration when a warp is present).
    pub fn target_of(&self, p: Point, width: usize, height: usize) -> Point {
        let c = Self::center(width, height);
        let (s, co) = self.rotation.sin_cos();
        let forward = |q: Point| {
            let d = (q - c).scale(self.scale);
            c + self.translation + Point::new(co * d.x - s * d.y, s * d.x + co * d.y)
        };
        let mut o = forward(p);
        if let Some(e) = &self.elastic {
            for _ in 0..50 {
                let next = forward(p - e.at(o, width, height));
                let delta = next - o;
                o = next;
                if delta.x.abs() + delta.y.abs() < 1e-12 {
                    break;
                }
            }
        }
        o
    }
}

/// Augmented image and landmarks. Landmarks mapped outside the image are
/// kept and flagged.
#[derive(Debug, Clone, PartialEq)]
pub struct Augmented {
    pub image: HeatmapGrid,
    pub coords: Vec<Point>,
    pub out_of_bounds: Vec<bool>,
}

fn bilinear(img: &HeatmapGrid, p: Point) -> f64 {
    let (w, h) = (img.width as isize, img.height as isize);
    let (x0, y0) = (p.x.floor(), p.y.floor());
    let (tx, ty) = (p.x - x0, p.y - y0);
    let (x0, y0) = (x0 as isize, y0 as isize);
    let px = |x: isize, y: isize| {
        if x < 0 || y < 0 || x >= w || y >= h {
            0.0
        } else {
            img.values[(y * w + x) as usize]
        }
    };
    let top = px(x0, y0) * (1.0 - tx) + px(x0 + 1, y0) * tx;
    let bottom = px(x0, y0 + 1) * (1.0 - tx) + px(x0 + 1, y0 + 1) * tx;
    top * (1.0 - ty) + bottom * ty
}

/// Applies a spatial transform to the image (bilinear, zero fill) and landmarks.
pub fn apply_spatial(image: &HeatmapGrid, coords: &[Point], t: &SpatialTransform) -> Augmented {
    let shape = image.shape();
    let (w, h) = (image.width, image.height);
    let (out_image, out_coords) = if t.is_identity() {
        (image.clone(), coords.to_vec())
    } else {
        let mut out = HeatmapGrid::zeros(shape);
        for row in 0..h {
            for col in 0..w {
                let src = t.source_of(Point::new(col as f64, row as f64), w, h);
                out.values[row * w + col] = bilinear(image, src);
            }
        }
        (out, coords.iter().map(|&p| t.target_of(p, w, h)).collect())
    };
    // Tolerate round-off from the rotation when a landmark lands on the border.
    let eps = 1e-9;
    let out_of_bounds = out_coords
        .iter()
        .map(|p| !(p.x >= -eps && p.y >= -eps && p.x <= (w - 1) as f64 + eps && p.y <= (h - 1) as f64 + eps))
        .collect();
    Augmented {
        image: out_image,
        coords: out_coords,
        out_of_bounds,
    }
}

/// Draws a random augmentation from `cfg` and applies it.
pub fn augment(image: &HeatmapGrid, coords: &[Point], cfg: &AugmentConfig, seed: u64) -> Result<Augmented> {
    cfg.validate()?;
    let mut rng = rng::seeded(seed);
    let mut sym = |enabled: bool, r: f64| if enabled && r > 0.0 { rng.random_range(-r..=r) } else { 0.0 };
    let translation = Point::new(
        sym(cfg.translation_enabled, cfg.translation_range),
        sym(cfg.translation_enabled, cfg.translation_range),
    );
    let rotation = sym(cfg.rotation_enabled, cfg.rotation_range);
    let scale = 1.0 + sym(cfg.scale_enabled, cfg.scale_range);
    let shift = sym(cfg.intensity_shift_enabled, cfg.intensity_shift_range);
    let iscale = 1.0 + sym(cfg.intensity_scale_enabled, cfg.intensity_scale_range);
    let elastic = (cfg.elastic_enabled && cfg.elastic_magnitude > 0.0).then(|| {
        let g = cfg.elastic_grid_size;
        let m = cfg.elastic_magnitude;
        ElasticField {
            grid: g,
            offsets: (0..g * g)
                .map(|_| Point::new(rng.random_range(-m..=m), rng.random_range(-m..=m)))
                .collect(),
        }
    });
    let transform = SpatialTransform {
        translation,
        rotation,
        scale,
        elastic,
    };
    let mut out = apply_spatial(image, coords, &transform);
    if shift != 0.0 || iscale != 1.0 {
        out.image.values.iter_mut().for_each(|v| *v = *v * iscale + shift);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussmath::GridShape;
    use std::f64::consts::FRAC_PI_2;

    fn ramp(w: usize, h: usize) -> HeatmapGrid {
        let mut g = HeatmapGrid::zeros(GridShape::pixels(w, h));
        for (i, v) in g.values.iter_mut().enumerate() {
            *v = (i % 7) as f64 * 0.1 + (i / w) as f64 * 0.01;
        }
        g
    }

    #[test]
    fn identity_config_returns_inputs() {
        let img = ramp(16, 16);
        let pts = vec![Point::new(3.0, 4.5), Point::new(10.2, 7.7)];
        let out = augment(&img, &pts, &AugmentConfig::identity(), 9).unwrap();
        assert_eq!(out.image, img);
        assert_eq!(out.coords, pts);
        assert_eq!(out.out_of_bounds, vec![false, false]);
    }

    #[test]
    fn pure_translation_shifts_coordinates_and_pixels() {
        let img = ramp(16, 16);
        let t = SpatialTransform {
            translation: Point::new(5.0, -3.0),
            ..SpatialTransform::identity()
        };
        let out = apply_spatial(&img, &[Point::new(4.0, 9.0)], &t);
        assert!((out.coords[0].x - 9.0).abs() < 1e-12 && (out.coords[0].y - 6.0).abs() < 1e-12);
        assert!((out.image.get(9, 6) - img.get(4, 9)).abs() < 1e-12);
        assert_eq!(out.image.get(0, 0), 0.0);
    }

    #[test]
    fn quarter_turn_maps_corner_to_corner() {
        let mut img = HeatmapGrid::zeros(GridShape::pixels(16, 16));
        img.set(0, 0, 1.0);
        let t = SpatialTransform {
            rotation: FRAC_PI_2,
            ..SpatialTransform::identity()
        };
        let out = apply_spatial(&img, &[Point::new(0.0, 0.0)], &t);
        assert!((out.coords[0].x - 15.0).abs() < 1e-9 && out.coords[0].y.abs() < 1e-9);
        assert!((out.image.get(15, 0) - 1.0).abs() < 1e-9);
        assert!(!out.out_of_bounds[0]);
    }

    #[test]
    fn landmarks_follow_elastic_warp() {
        let img = ramp(32, 32);
        let cfg = AugmentConfig {
            elastic_enabled: true,
            elastic_magnitude: 2.0,
            rotation_enabled: true,
            rotation_range: 0.2,
            ..AugmentConfig::identity()
        };
        let p = Point::new(12.3, 17.8);
        let out = augment(&img, &[p], &cfg, 4).unwrap();
        // Re-derive the transform with the same seed by probing the image map:
        // the landmark's output position must sample the original location.
        let mut marker = HeatmapGrid::zeros(img.shape());
        marker.set(12, 18, 1.0);
        let moved = augment(&marker, &[Point::new(12.0, 18.0)], &cfg, 4).unwrap();
        let peak = crate::heatmapfit::argmax_coord(&moved.image);
        let q = moved.coords[0];
        assert!((peak.x - q.x).abs() <= 1.0 && (peak.y - q.y).abs() <= 1.0);
        assert!(out.coords[0] != p);
    }

    #[test]
    fn out_of_image_landmarks_are_flagged() {
        let img = ramp(16, 16);
        let t = SpatialTransform {
            translation: Point::new(10.0, 0.0),
            ..SpatialTransform::identity()
        };
        let out = apply_spatial(&img, &[Point::new(8.0, 8.0), Point::new(2.0, 2.0)], &t);
        assert_eq!(out.out_of_bounds, vec![true, false]);
        assert_eq!(out.coords.len(), 2);
    }

    #[test]
    fn intensity_only_leaves_coordinates() {
        let img = ramp(8, 8);
        let cfg = AugmentConfig {
            intensity_shift_enabled: true,
            intensity_shift_range: 0.3,
            intensity_scale_enabled: true,
            intensity_scale_range: 0.3,
            ..AugmentConfig::identity()
        };
        let pts = [Point::new(1.0, 2.0)];
        let out = augment(&img, &pts, &cfg, 1).unwrap();
        assert_eq!(out.coords, pts);
        assert_ne!(out.image, img);
        assert_eq!(out, augment(&img, &pts, &cfg, 1).unwrap());
    }
}
