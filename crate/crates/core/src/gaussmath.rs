//! Gaussian primitives: covariance (de)composition, heatmap rendering,
//! analytic parameter gradients and seeded sampling.
//!
//! Coordinates are `(x, y)` in pixels with `x` the column and `y` the row.
//! Pixel centers sit on integer coordinates and heatmaps are evaluated
//! pointwise (no per-pixel area integration).

use std::f64::consts::{FRAC_PI_2, PI};

use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::rng;

/// A 2-D coordinate `(x, y)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn scale(self, s: f64) -> Self {
        Self::new(self.x * s, self.y * s)
    }
}

impl std::ops::Add for Point {
    type Output = Point;
    fn add(self, o: Point) -> Point {
        Point::new(self.x + o.x, self.y + o.y)
    }
}

impl std::ops::Sub for Point {
    type Output = Point;
    fn sub(self, o: Point) -> Point {
        Point::new(self.x - o.x, self.y - o.y)
    }
}

/// Wraps an angle into the canonical half-open interval `(-pi/2, pi/2]`.
pub fn wrap_half_pi(theta: f64) -> f64 {
    let mut t = theta.rem_euclid(PI);
    if t > FRAC_PI_2 {
        t -= PI;
    }
    // rem_euclid maps -pi/2 to pi/2 already; only guard float edge cases.
    if t <= -FRAC_PI_2 {
        t += PI;
    }
    t
}

/// Orientation and axis extents of a 2x2 covariance, `Σ = R diag(σmaj², σmin²) Rᵀ`.
///
/// Canonical form has `sigma_maj >= sigma_min` and `theta` in `(-pi/2, pi/2]`,
/// with `theta = 0` whenever the two extents coincide. Extents of zero only
/// appear in degenerate (rank-deficient) estimates such as MC-dropout spreads.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CovarianceDecomposition {
    /// Angle of the major axis against the x-axis, radians.
    pub theta: f64,
    pub sigma_maj: f64,
    pub sigma_min: f64,
}

impl CovarianceDecomposition {
    /// Builds a decomposition with strictly positive extents, returned canonical.
    pub fn new(theta: f64, sigma_maj: f64, sigma_min: f64) -> Result<Self> {
        let d = Self {
            theta,
            sigma_maj,
            sigma_min,
        };
        d.validate()?;
        Ok(d.canonical())
    }

    pub fn isotropic(sigma: f64) -> Result<Self> {
        Self::new(0.0, sigma, sigma)
    }

    fn validate(&self) -> Result<()> {
        if !(self.sigma_maj > 0.0 && self.sigma_min > 0.0) || !self.sigma_maj.is_finite() || !self.sigma_min.is_finite() {
            return Err(Error::invalid(format!(
                "sigmas must be positive and finite, got ({}, {})",
                self.sigma_maj, self.sigma_min
            )));
        }
        if !self.theta.is_finite() {
            return Err(Error::invalid("theta must be finite"));
        }
        Ok(())
    }

    /// Swaps axes if needed so the major extent comes first and wraps the angle.
    pub fn canonical(&self) -> Self {
        let (mut theta, mut maj, mut min) = (self.theta, self.sigma_maj.abs(), self.sigma_min.abs());
        if min > maj {
            std::mem::swap(&mut maj, &mut min);
            theta += FRAC_PI_2;
        }
        if maj == min {
            theta = 0.0;
        }
        Self {
            theta: wrap_half_pi(theta),
            sigma_maj: maj,
            sigma_min: min,
        }
    }

    /// `σmaj / σmin`; infinite for a degenerate minor axis.
    pub fn ratio(&self) -> f64 {
        self.sigma_maj / self.sigma_min
    }

    /// `σmaj · σmin`.
    pub fn product(&self) -> f64 {
        self.sigma_maj * self.sigma_min
    }

    pub fn theta_deg(&self) -> f64 {
        self.theta.to_degrees()
    }

    pub fn is_degenerate(&self) -> bool {
        !(self.sigma_min > 0.0)
    }

    /// Extents multiplied by a length scale (e.g. pixel spacing).
    pub fn scaled(&self, s: f64) -> Self {
        Self {
            theta: self.theta,
            sigma_maj: self.sigma_maj * s,
            sigma_min: self.sigma_min * s,
        }
    }
}

/// Symmetric 2x2 covariance stored by its three distinct entries.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CovarianceMatrix {
    pub xx: f64,
    pub xy: f64,
    pub yy: f64,
}

impl CovarianceMatrix {
    pub const fn new(xx: f64, xy: f64, yy: f64) -> Self {
        Self { xx, xy, yy }
    }

    /// Builds from full rows, rejecting asymmetric input.
    pub fn from_rows(m: [[f64; 2]; 2]) -> Result<Self> {
        let tol = 1e-12 * (m[0][1].abs() + m[1][0].abs()).max(1.0);
        if (m[0][1] - m[1][0]).abs() > tol {
            return Err(Error::invalid("covariance matrix is not symmetric"));
        }
        Ok(Self::new(m[0][0], 0.5 * (m[0][1] + m[1][0]), m[1][1]))
    }

    pub fn rows(&self) -> [[f64; 2]; 2] {
        [[self.xx, self.xy], [self.xy, self.yy]]
    }

    pub fn det(&self) -> f64 {
        self.xx * self.yy - self.xy * self.xy
    }

    pub fn trace(&self) -> f64 {
        self.xx + self.yy
    }

    /// Eigenvalues `(largest, smallest)` and the major-axis angle.
    fn eigen(&self) -> (f64, f64, f64) {
        let half_diff = 0.5 * (self.xx - self.yy);
        let mean = 0.5 * (self.xx + self.yy);
        let disc = half_diff.hypot(self.xy);
        let scale = self.xx.abs() + self.yy.abs() + self.xy.abs();
        // Equal eigenvalues leave the orientation unidentifiable; pin it to 0.
        let theta = if disc <= 1e-15 * scale {
            0.0
        } else {
            0.5 * self.xy.atan2(half_diff)
        };
        (mean + disc, mean - disc, theta)
    }

    pub fn is_positive_definite(&self) -> bool {
        self.xx.is_finite() && self.xy.is_finite() && self.yy.is_finite() && self.xx > 0.0 && self.det() > 0.0
    }
}

/// `R(θ) diag(σmaj², σmin²) R(θ)ᵀ`.
pub fn compose_covariance(d: &CovarianceDecomposition) -> Result<CovarianceMatrix> {
    d.validate()?;
    Ok(compose_unchecked(d))
}

pub(crate) fn compose_unchecked(d: &CovarianceDecomposition) -> CovarianceMatrix {
    let (s, c) = d.theta.sin_cos();
    let a = d.sigma_maj * d.sigma_maj;
    let b = d.sigma_min * d.sigma_min;
    CovarianceMatrix {
        xx: a * c * c + b * s * s,
        xy: (a - b) * s * c,
        yy: a * s * s + b * c * c,
    }
}

/// Canonical decomposition of a symmetric positive definite matrix.
pub fn decompose_covariance(m: &CovarianceMatrix) -> Result<CovarianceDecomposition> {
    if !m.is_positive_definite() {
        return Err(Error::invalid(format!("covariance {:?} is not positive definite", m.rows())));
    }
    let (hi, lo, theta) = m.eigen();
    if lo <= 0.0 {
        return Err(Error::invalid("covariance has a non-positive eigenvalue"));
    }
    Ok(CovarianceDecomposition {
        theta,
        sigma_maj: hi.sqrt(),
        sigma_min: lo.sqrt(),
    }
    .canonical())
}

/// Decomposition of a positive semi-definite matrix. Returns the decomposition
/// (extents clamped at zero) and whether it is degenerate (`σmin == 0`).
pub fn decompose_psd(m: &CovarianceMatrix) -> (CovarianceDecomposition, bool) {
    let (hi, lo, theta) = m.eigen();
    let scale = m.trace().abs().max(f64::MIN_POSITIVE);
    let lo = if lo <= 1e-14 * scale { 0.0 } else { lo };
    let hi = hi.max(0.0);
    let d = CovarianceDecomposition {
        theta,
        sigma_maj: hi.sqrt(),
        sigma_min: lo.sqrt(),
    }
    .canonical();
    (d, lo == 0.0)
}

/// Arithmetic mean and population (divisor `n`) covariance of a point set.
pub fn population_covariance(points: &[Point]) -> Result<(Point, CovarianceMatrix)> {
    if points.is_empty() {
        return Err(Error::UndefinedInput("covariance of an empty point set".into()));
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.x).sum::<f64>() / n;
    let my = points.iter().map(|p| p.y).sum::<f64>() / n;
    let (mut xx, mut xy, mut yy) = (0.0, 0.0, 0.0);
    for p in points {
        let (dx, dy) = (p.x - mx, p.y - my);
        xx += dx * dx;
        xy += dx * dy;
        yy += dy * dy;
    }
    Ok((Point::new(mx, my), CovarianceMatrix::new(xx / n, xy / n, yy / n)))
}

/// Grid geometry of a heatmap or image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridShape {
    pub width: usize,
    pub height: usize,
    /// mm per pixel.
    pub spacing: f64,
}

impl GridShape {
    pub fn new(width: usize, height: usize, spacing: f64) -> Result<Self> {
        let s = Self { width, height, spacing };
        s.validate()?;
        Ok(s)
    }

    /// Unit-spacing grid.
    pub fn pixels(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            spacing: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("grid must be at least 1x1"));
        }
        if !(self.spacing > 0.0 && self.spacing.is_finite()) {
            return Err(Error::invalid(format!("spacing must be positive, got {}", self.spacing)));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, p: Point) -> bool {
        p.x >= 0.0 && p.y >= 0.0 && p.x <= (self.width - 1) as f64 && p.y <= (self.height - 1) as f64
    }
}

/// Row-major grid of intensities.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapGrid {
    pub width: usize,
    pub height: usize,
    pub spacing: f64,
    pub values: Vec<f64>,
}

impl HeatmapGrid {
    pub fn zeros(shape: GridShape) -> Self {
        Self {
            width: shape.width,
            height: shape.height,
            spacing: shape.spacing,
            values: vec![0.0; shape.len()],
        }
    }

    pub fn from_values(shape: GridShape, values: Vec<f64>) -> Result<Self> {
        shape.validate()?;
        if values.len() != shape.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {}x{} grid",
                values.len(),
                shape.width,
                shape.height
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("heatmap values must be finite"));
        }
        Ok(Self {
            width: shape.width,
            height: shape.height,
            spacing: shape.spacing,
            values,
        })
    }

    pub fn shape(&self) -> GridShape {
        GridShape {
            width: self.width,
            height: self.height,
            spacing: self.spacing,
        }
    }

    #[inline]
    pub fn get(&self, col: usize, row: usize) -> f64 {
        self.values[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, col: usize, row: usize, v: f64) {
        self.values[row * self.width + col] = v;
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }
}

/// Mean, covariance decomposition and amplitude `γ` of an unnormalized 2-D Gaussian.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnisotropicGaussian {
    pub mean: Point,
    pub decomp: CovarianceDecomposition,
    pub amplitude: f64,
}

impl AnisotropicGaussian {
    pub fn new(mean: Point, decomp: CovarianceDecomposition, amplitude: f64) -> Result<Self> {
        if !mean.is_finite() {
            return Err(Error::invalid("mean must be finite"));
        }
        if !(amplitude > 0.0 && amplitude.is_finite()) {
            return Err(Error::invalid(format!("amplitude must be positive, got {amplitude}")));
        }
        decomp.validate()?;
        Ok(Self { mean, decomp, amplitude })
    }

    /// Value at an arbitrary point.
    #[inline]
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        Kernel::new(self).eval(x, y).0
    }
}

/// Precomputed trigonometric and normalization terms for repeated evaluation.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Kernel {
    mx: f64,
    my: f64,
    cos: f64,
    sin: f64,
    inv_maj2: f64,
    inv_min2: f64,
    norm: f64,
}

impl Kernel {
    pub(crate) fn new(g: &AnisotropicGaussian) -> Self {
        let (sin, cos) = g.decomp.theta.sin_cos();
        let (a, b) = (g.decomp.sigma_maj, g.decomp.sigma_min);
        Self {
            mx: g.mean.x,
            my: g.mean.y,
            cos,
            sin,
            inv_maj2: 1.0 / (a * a),
            inv_min2: 1.0 / (b * b),
            norm: g.amplitude / (2.0 * PI * a * b),
        }
    }

    /// Returns `(h, u, v)` with `(u, v)` the offset expressed in the major/minor frame.
    #[inline]
    pub(crate) fn eval(&self, x: f64, y: f64) -> (f64, f64, f64) {
        let dx = x - self.mx;
        let dy = y - self.my;
        let u = self.cos * dx + self.sin * dy;
        let v = -self.sin * dx + self.cos * dy;
        let q = u * u * self.inv_maj2 + v * v * self.inv_min2;
        (self.norm * (-0.5 * q).exp(), u, v)
    }
}

/// Renders the anisotropic Gaussian pointwise on the pixel grid.
pub fn render_anisotropic(g: &AnisotropicGaussian, shape: GridShape) -> Result<HeatmapGrid> {
    shape.validate()?;
    let k = Kernel::new(g);
    let mut out = HeatmapGrid::zeros(shape);
    for row in 0..shape.height {
        for col in 0..shape.width {
            out.values[row * shape.width + col] = k.eval(col as f64, row as f64).0;
        }
    }
    Ok(out)
}

/// Renders `γ/(2πσ²) exp(-‖x-µ‖²/(2σ²))`.
pub fn render_isotropic(mean: Point, sigma: f64, gamma: f64, shape: GridShape) -> Result<HeatmapGrid> {
    if !(sigma > 0.0) {
        return Err(Error::invalid(format!("sigma must be positive, got {sigma}")));
    }
    shape.validate()?;
    let norm = gamma / (2.0 * PI * sigma * sigma);
    let inv = 1.0 / (2.0 * sigma * sigma);
    let mut out = HeatmapGrid::zeros(shape);
    for row in 0..shape.height {
        let dy = row as f64 - mean.y;
        for col in 0..shape.width {
            let dx = col as f64 - mean.x;
            out.values[row * shape.width + col] = norm * (-(dx * dx + dy * dy) * inv).exp();
        }
    }
    Ok(out)
}

/// Per-pixel partial derivatives of the rendered heatmap.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGradients {
    pub d_theta: HeatmapGrid,
    pub d_sigma_maj: HeatmapGrid,
    pub d_sigma_min: HeatmapGrid,
}

/// Analytic `∂h/∂θ`, `∂h/∂σmaj`, `∂h/∂σmin` at every pixel.
pub fn heatmap_param_gradients(g: &AnisotropicGaussian, shape: GridShape) -> Result<ParamGradients> {
    shape.validate()?;
    let k = Kernel::new(g);
    let (a, b) = (g.decomp.sigma_maj, g.decomp.sigma_min);
    let mut d_theta = HeatmapGrid::zeros(shape);
    let mut d_maj = HeatmapGrid::zeros(shape);
    let mut d_min = HeatmapGrid::zeros(shape);
    let aniso = k.inv_maj2 - k.inv_min2;
    for row in 0..shape.height {
        for col in 0..shape.width {
            let i = row * shape.width + col;
            let (h, u, v) = k.eval(col as f64, row as f64);
            d_theta.values[i] = -h * u * v * aniso;
            d_maj.values[i] = h * (u * u / (a * a * a) - 1.0 / a);
            d_min.values[i] = h * (v * v / (b * b * b) - 1.0 / b);
        }
    }
    Ok(ParamGradients {
        d_theta,
        d_sigma_maj: d_maj,
        d_sigma_min: d_min,
    })
}

/// Draws `n` points from `N(µ, Σ)` as `µ + R diag(σmaj, σmin) z`.
pub fn sample_gaussian(g: &AnisotropicGaussian, n: usize, seed: u64) -> Result<Vec<Point>> {
    if n == 0 {
        return Err(Error::invalid("sample count must be at least 1"));
    }
    let mut rng = rng::seeded(seed);
    let mut out = Vec::with_capacity(n);
    let sampler = GaussianSampler::new(g.mean, &g.decomp);
    for _ in 0..n {
        out.push(sampler.draw(&mut rng));
    }
    Ok(out)
}

/// Reusable sampler for `N(µ, Σ)`; accepts degenerate (zero) extents.
#[derive(Debug, Clone, Copy)]
pub struct GaussianSampler {
    pub mean: Point,
    cos: f64,
    sin: f64,
    maj: f64,
    min: f64,
}

impl GaussianSampler {
    pub fn new(mean: Point, d: &CovarianceDecomposition) -> Self {
        let (sin, cos) = d.theta.sin_cos();
        Self {
            mean,
            cos,
            sin,
            maj: d.sigma_maj,
            min: d.sigma_min,
        }
    }

    pub fn draw<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> Point {
        let z0: f64 = StandardNormal.sample(rng);
        let z1: f64 = StandardNormal.sample(rng);
        let a = self.maj * z0;
        let b = self.min * z1;
        Point::new(
            self.mean.x + self.cos * a - self.sin * b,
            self.mean.y + self.sin * a + self.cos * b,
        )
    }
}
