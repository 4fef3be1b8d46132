//! Sample-based uncertainty (a Gaussian fitted to one predicted heatmap),
//! dataset-based uncertainty (the learned target covariances) and the two
//! Monte-Carlo dropout baselines.

use std::fmt;

use crate::error::{Error, Result};
use crate::gaussmath::{decompose_psd, population_covariance, CovarianceDecomposition, HeatmapGrid, Point};
use crate::heatmapfit::{argmax_coord, fit_gaussian, FitConfig};
use crate::rng::derive_seed;
use crate::trainer::{predict, TrainedModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PredictionSource {
    Fit,
    McdMax,
    McdHeatmapFit,
}

impl fmt::Display for PredictionSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PredictionSource::Fit => "fit",
            PredictionSource::McdMax => "mcd_max",
            PredictionSource::McdHeatmapFit => "mcd_heatmap_fit",
        })
    }
}

/// Predicted coordinate `x̂` with its covariance `Σ̂`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LandmarkPrediction {
    pub coord: Point,
    pub covariance: CovarianceDecomposition,
    pub source: PredictionSource,
    pub converged: bool,
    /// Rank-deficient covariance (`σmin == 0`).
    pub degenerate: bool,
    /// Full-grid L2 residual of the fit; `None` for `McdMax`.
    pub residual_norm: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct McdConfig {
    pub k: usize,
    pub seed: u64,
}

impl Default for McdConfig {
    fn default() -> Self {
        Self { k: 20, seed: 0 }
    }
}

impl McdConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::invalid(format!("MC dropout needs k >= 2 passes, got {}", self.k)));
        }
        Ok(())
    }
}

/// Fits an anisotropic Gaussian to one predicted heatmap.
pub fn sample_uncertainty(h: &HeatmapGrid, cfg: &FitConfig) -> Result<LandmarkPrediction> {
    let fit = fit_gaussian(h, cfg)?;
    Ok(LandmarkPrediction {
        coord: fit.gaussian.mean,
        covariance: fit.gaussian.decomp,
        source: PredictionSource::Fit,
        converged: fit.converged,
        degenerate: false,
        residual_norm: Some(fit.residual_norm),
    })
}

/// Mean and population covariance of a set of point predictions.
pub fn point_spread(points: &[Point]) -> Result<LandmarkPrediction> {
    if points.len() < 2 {
        return Err(Error::invalid(format!("need at least 2 predictions, got {}", points.len())));
    }
    let (mean, cov) = population_covariance(points)?;
    let (covariance, degenerate) = decompose_psd(&cov);
    Ok(LandmarkPrediction {
        coord: mean,
        covariance,
        source: PredictionSource::McdMax,
        converged: true,
        degenerate,
        residual_norm: None,
    })
}

/// MCD baseline on the maxima: mean and population covariance of the `K`
/// per-heatmap argmax coordinates.
pub fn mcd_max(heatmaps: &[HeatmapGrid]) -> Result<LandmarkPrediction> {
    let points: Vec<Point> = heatmaps.iter().map(argmax_coord).collect();
    point_spread(&points)
}

/// Pixel-wise mean of equally sized heatmaps.
pub fn mean_heatmap(heatmaps: &[HeatmapGrid]) -> Result<HeatmapGrid> {
    let first = heatmaps.first().ok_or_else(|| Error::UndefinedInput("no heatmaps".into()))?;
    if heatmaps.iter().any(|h| h.width != first.width || h.height != first.height) {
        return Err(Error::ShapeMismatch("heatmaps differ in size".into()));
    }
    let mut mean = HeatmapGrid::zeros(first.shape());
    for h in heatmaps {
        for (m, v) in mean.values.iter_mut().zip(&h.values) {
            *m += v;
        }
    }
    let k = heatmaps.len() as f64;
    mean.values.iter_mut().for_each(|m| *m /= k);
    Ok(mean)
}

/// MCD baseline on the heatmaps: fit a Gaussian to the pixel-wise mean.
pub fn mcd_heatmap_fit(heatmaps: &[HeatmapGrid], cfg: &FitConfig) -> Result<LandmarkPrediction> {
    if heatmaps.len() < 2 {
        return Err(Error::invalid(format!("need at least 2 heatmaps, got {}", heatmaps.len())));
    }
    let p = sample_uncertainty(&mean_heatmap(heatmaps)?, cfg)?;
    Ok(LandmarkPrediction {
        source: PredictionSource::McdHeatmapFit,
        ..p
    })
}

/// The learned target covariances `Σ̃_i`, canonical.
pub fn dataset_uncertainty(model: &TrainedModel) -> Vec<CovarianceDecomposition> {
    model.target_decomps.iter().map(CovarianceDecomposition::canonical).collect()
}

/// `K` dropout-enabled forward passes, regrouped per landmark:
/// `result[landmark][pass]`.
pub fn mcd_heatmaps(model: &TrainedModel, image: &HeatmapGrid, cfg: &McdConfig) -> Result<Vec<Vec<HeatmapGrid>>> {
    cfg.validate()?;
    let mut per_landmark = vec![Vec::with_capacity(cfg.k); model.landmarks];
    for pass in 0..cfg.k {
        let maps = predict(model, image, true, derive_seed(cfg.seed, &[pass as u64]))?;
        for (slot, h) in per_landmark.iter_mut().zip(maps) {
            slot.push(h);
        }
    }
    Ok(per_landmark)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussmath::{render_anisotropic, sample_gaussian, AnisotropicGaussian, GridShape};

    fn render(x: f64, y: f64, theta_deg: f64, a: f64, b: f64) -> HeatmapGrid {
        let g = AnisotropicGaussian::new(
            Point::new(x, y),
            CovarianceDecomposition::new(theta_deg.to_radians(), a, b).unwrap(),
            100.0,
        )
        .unwrap();
        render_anisotropic(&g, GridShape::pixels(64, 64)).unwrap()
    }

    fn impulse(x: usize, y: usize) -> HeatmapGrid {
        let mut h = HeatmapGrid::zeros(GridShape::pixels(8, 8));
        h.set(x, y, 1.0);
        h
    }

    #[test]
    fn sample_uncertainty_wraps_the_fit() {
        let h = render(32.3, 30.7, 25.0, 4.0, 2.0);
        let p = sample_uncertainty(&h, &FitConfig::default()).unwrap();
        assert_eq!(p.source, PredictionSource::Fit);
        assert!(p.converged);
        assert!((p.coord.x - 32.3).abs() < 0.01 && (p.coord.y - 30.7).abs() < 0.01);
        assert!((p.covariance.theta_deg() - 25.0).abs() < 0.5);
    }

    #[test]
    fn mcd_max_population_covariance() {
        let maps = [impulse(0, 0), impulse(2, 0), impulse(4, 0)];
        let p = mcd_max(&maps).unwrap();
        assert_eq!(p.coord, Point::new(2.0, 0.0));
        assert!((p.covariance.sigma_maj.powi(2) - 8.0 / 3.0).abs() < 1e-12);
        assert_eq!(p.covariance.sigma_min, 0.0);
        assert_eq!(p.covariance.theta, 0.0);
        assert!(p.degenerate);

        let same = mcd_max(&[impulse(3, 3), impulse(3, 3)]).unwrap();
        assert_eq!(same.covariance.sigma_maj, 0.0);
        assert!(same.degenerate);
        assert!(mcd_max(&[impulse(1, 1)]).is_err());
    }

    #[test]
    fn point_spread_recovers_sampling_covariance() {
        let d = CovarianceDecomposition::new(0.6, 3.0, 1.2).unwrap();
        let g = AnisotropicGaussian::new(Point::new(5.0, -2.0), d, 1.0).unwrap();
        let pts = sample_gaussian(&g, 100_000, 11).unwrap();
        let p = point_spread(&pts).unwrap();
        let truth = crate::gaussmath::compose_covariance(&d).unwrap();
        let got = crate::gaussmath::compose_covariance(&p.covariance).unwrap();
        let tol = 0.03 * truth.xx.max(truth.yy);
        for (a, b) in [(got.xx, truth.xx), (got.xy, truth.xy), (got.yy, truth.yy)] {
            assert!((a - b).abs() < tol, "{a} vs {b}");
        }
    }

    #[test]
    fn mcd_is_permutation_invariant() {
        let maps = vec![impulse(1, 2), impulse(5, 3), impulse(2, 7), impulse(6, 6)];
        let mut rev = maps.clone();
        rev.reverse();
        assert_eq!(mcd_max(&maps).unwrap().covariance, mcd_max(&rev).unwrap().covariance);

        let hm: Vec<_> = (0..4).map(|i| render(30.0 + i as f64 * 0.7, 31.0 - i as f64 * 0.3, 10.0, 3.0, 2.0)).collect();
        let mut hr = hm.clone();
        hr.reverse();
        let cfg = FitConfig::default();
        let a = mcd_heatmap_fit(&hm, &cfg).unwrap();
        let b = mcd_heatmap_fit(&hr, &cfg).unwrap();
        assert!((a.covariance.sigma_maj - b.covariance.sigma_maj).abs() < 1e-9);
        assert!((a.coord.x - b.coord.x).abs() < 1e-9);
    }

    #[test]
    fn identical_heatmaps_match_single_fit() {
        let h = render(20.0, 40.0, -30.0, 3.5, 2.0);
        let cfg = FitConfig::default();
        let single = sample_uncertainty(&h, &cfg).unwrap();
        let mcd = mcd_heatmap_fit(&[h.clone(), h.clone(), h], &cfg).unwrap();
        assert_eq!(mcd.source, PredictionSource::McdHeatmapFit);
        assert_eq!(mcd.coord, single.coord);
        assert_eq!(mcd.covariance, single.covariance);
    }

    #[test]
    fn jittered_means_broaden_the_fit() {
        let offsets = [(-1.0, 0.0), (1.0, 0.0), (0.0, -1.0), (0.0, 1.0), (1.0, 1.0), (-1.0, -1.0)];
        let maps: Vec<_> = offsets.iter().map(|(dx, dy)| render(32.0 + dx, 32.0 + dy, 0.0, 2.5, 2.5)).collect();
        let p = mcd_heatmap_fit(&maps, &FitConfig::default()).unwrap();
        assert!(p.covariance.sigma_min > 2.5, "{:?}", p.covariance);
    }

    #[test]
    fn bimodal_mean_fits_one_mode() {
        let a = render(15.0, 15.0, 0.0, 2.0, 2.0);
        let mut b = render(48.0, 48.0, 0.0, 2.0, 2.0);
        // Slightly weaker second mode so the global maximum is unambiguous.
        b.values.iter_mut().for_each(|v| *v *= 0.9);
        let p = mcd_heatmap_fit(&[a, b], &FitConfig::default()).unwrap();
        assert!(p.converged);
        assert!((p.coord.x - 15.0).abs() < 0.5 && (p.coord.y - 15.0).abs() < 0.5, "{:?}", p.coord);
        assert!(p.residual_norm.unwrap() > 0.1);
    }

    #[test]
    fn dataset_uncertainty_per_mode() {
        use crate::dataset::{Dataset, Sample};
        use crate::trainer::{train, PredictorKind, TargetMode, TrainConfig};
        let data = Dataset {
            landmark_count: 2,
            samples: vec![Sample {
                id: "a".into(),
                image: HeatmapGrid::zeros(GridShape::pixels(32, 32)),
                landmarks: vec![Point::new(10.0, 12.0), Point::new(20.0, 16.0)],
            }],
        };
        for (mode, check) in [
            (TargetMode::LearnedIso, 0usize),
            (TargetMode::FixedIso, 1),
        ] {
            let cfg = TrainConfig {
                predictor: PredictorKind::Zero,
                target_mode: mode,
                iterations: 30,
                learning_rate: 1e-3,
                batch_size: 1,
                ..TrainConfig::default()
            };
            let m = train(&data, &cfg).unwrap();
            for d in dataset_uncertainty(&m) {
                if check == 0 {
                    assert_eq!(d.ratio(), 1.0);
                    assert_ne!(d.sigma_maj, 3.0);
                } else {
                    assert_eq!(d, CovarianceDecomposition::isotropic(3.0).unwrap());
                }
            }
        }
    }

    #[test]
    fn tight_maxima_underestimate_relative_to_fit() {
        let maps: Vec<_> = (0..5).map(|i| render(32.0 + (i % 2) as f64, 32.0, 0.0, 3.0, 2.0)).collect();
        let max = mcd_max(&maps).unwrap();
        let fit = mcd_heatmap_fit(&maps, &FitConfig::default()).unwrap();
        assert!(max.covariance.product() < fit.covariance.product());
    }
}
