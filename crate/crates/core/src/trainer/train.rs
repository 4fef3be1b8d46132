//! Training loop: SGD with momentum over the predictor weights and the
//! per-landmark target covariances, plus inference.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;

use crate::config::{parse_list, write_kv, KvReader};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::gaussmath::{CovarianceDecomposition, GridShape, HeatmapGrid, Point};
use crate::rng::{self, derive_seed};

use super::augment::{augment, AugmentConfig};
use super::loss::{heatmap_loss, Regularizer};
use super::predictor::{DropoutMode, PredictorSpec, ReferencePredictor, Tensor};

/// Which target heatmaps are used and which covariance parameters learn.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetMode {
    /// Isotropic targets with `σ = sigma_init`, plain L2.
    FixedIso,
    /// One learned `σ` per landmark, L2 plus `α Σ σ²`.
    LearnedIso,
    /// Learned `(θ, σmaj, σmin)` per landmark, L2 plus `α Σ σmaj σmin`.
    LearnedAniso,
}

impl fmt::Display for TargetMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TargetMode::FixedIso => "fixed_iso",
            TargetMode::LearnedIso => "learned_iso",
            TargetMode::LearnedAniso => "learned_aniso",
        })
    }
}

impl FromStr for TargetMode {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "fixed_iso" => Ok(TargetMode::FixedIso),
            "learned_iso" => Ok(TargetMode::LearnedIso),
            "learned_aniso" => Ok(TargetMode::LearnedAniso),
            _ => Err(format!("unknown target mode `{s}` (fixed_iso, learned_iso, learned_aniso)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PredictorKind {
    Reference,
    /// No parameters, every output pixel is 0. Only the covariances learn.
    Zero,
}

impl fmt::Display for PredictorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PredictorKind::Reference => "reference",
            PredictorKind::Zero => "zero",
        })
    }
}

impl FromStr for PredictorKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "reference" => Ok(PredictorKind::Reference),
            "zero" => Ok(PredictorKind::Zero),
            _ => Err(format!("unknown predictor `{s}` (reference, zero)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub alpha: f64,
    pub gamma: f64,
    /// Weight decay on the predictor parameters.
    pub lambda: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub covariance_lr_multiplier: f64,
    pub momentum: f64,
    pub dropout_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub target_mode: TargetMode,
    pub sigma_init: f64,
    pub augmentation: AugmentConfig,
    pub predictor: PredictorKind,
    pub widths: [usize; 3],
    /// Global gradient-norm clip for the predictor; 0 disables.
    pub grad_clip: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha: 5.0,
            gamma: 100.0,
            lambda: 0.001,
            iterations: 40_000,
            learning_rate: 1e-4,
            covariance_lr_multiplier: 1.0,
            momentum: 0.9,
            dropout_rate: 0.1,
            batch_size: 4,
            seed: 0,
            target_mode: TargetMode::LearnedAniso,
            sigma_init: 3.0,
            augmentation: AugmentConfig::identity(),
            predictor: PredictorKind::Reference,
            widths: [8, 16, 16],
            grad_clip: 1000.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = [
            ("alpha", self.alpha),
            ("gamma", self.gamma),
            ("learning_rate", self.learning_rate),
            ("covariance_lr_multiplier", self.covariance_lr_multiplier),
            ("sigma_init", self.sigma_init),
        ];
        for (name, v) in pos {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.lambda >= 0.0 && self.grad_clip >= 0.0) {
            return Err(Error::invalid("lambda and grad_clip must be non-negative"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid(format!("momentum must be in [0, 1), got {}", self.momentum)));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::invalid(format!("dropout_rate must be in [0, 1), got {}", self.dropout_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be at least 1"));
        }
        self.augmentation.validate()
    }

    /// Every field as `key = value` pairs, in a fixed order.
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let a = &self.augmentation;
        let [w1, w2, w3] = self.widths;
        let mut v: Vec<(String, String)> = vec![
            ("alpha".into(), self.alpha.to_string()),
            ("gamma".into(), self.gamma.to_string()),
            ("lambda".into(), self.lambda.to_string()),
            ("iterations".into(), self.iterations.to_string()),
            ("learning_rate".into(), self.learning_rate.to_string()),
            ("covariance_lr_multiplier".into(), self.covariance_lr_multiplier.to_string()),
            ("momentum".into(), self.momentum.to_string()),
            ("dropout_rate".into(), self.dropout_rate.to_string()),
            ("batch_size".into(), self.batch_size.to_string()),
            ("seed".into(), self.seed.to_string()),
            ("target_mode".into(), self.target_mode.to_string()),
            ("sigma_init".into(), self.sigma_init.to_string()),
            ("predictor".into(), self.predictor.to_string()),
            ("widths".into(), format!("{w1},{w2},{w3}")),
            ("grad_clip".into(), self.grad_clip.to_string()),
        ];
        let aug = [
            ("intensity_shift_enabled", a.intensity_shift_enabled.to_string()),
            ("intensity_shift_range", a.intensity_shift_range.to_string()),
            ("intensity_scale_enabled", a.intensity_scale_enabled.to_string()),
            ("intensity_scale_range", a.intensity_scale_range.to_string()),
            ("translation_enabled", a.translation_enabled.to_string()),
            ("translation_range", a.translation_range.to_string()),
            ("rotation_enabled", a.rotation_enabled.to_string()),
            ("rotation_range", a.rotation_range.to_string()),
            ("scale_enabled", a.scale_enabled.to_string()),
            ("scale_range", a.scale_range.to_string()),
            ("elastic_enabled", a.elastic_enabled.to_string()),
            ("elastic_grid_size", a.elastic_grid_size.to_string()),
            ("elastic_magnitude", a.elastic_magnitude.to_string()),
        ];
        v.extend(aug.into_iter().map(|(k, val)| (format!("augment.{k}"), val)));
        v
    }

    pub fn to_kv_string(&self) -> String {
        write_kv(&self.to_pairs())
    }

    /// Overrides fields from whichever keys are present.
    pub fn read_kv(&mut self, r: &mut KvReader<'_>) -> Result<()> {
        r.set("alpha", &mut self.alpha)?;
        r.set("gamma", &mut self.gamma)?;
        r.set("lambda", &mut self.lambda)?;
        r.set("iterations", &mut self.iterations)?;
        r.set("learning_rate", &mut self.learning_rate)?;
        r.set("covariance_lr_multiplier", &mut self.covariance_lr_multiplier)?;
        r.set("momentum", &mut self.momentum)?;
        r.set("dropout_rate", &mut self.dropout_rate)?;
        r.set("batch_size", &mut self.batch_size)?;
        r.set("seed", &mut self.seed)?;
        r.set("target_mode", &mut self.target_mode)?;
        r.set("sigma_init", &mut self.sigma_init)?;
        r.set("predictor", &mut self.predictor)?;
        r.set_with("widths", &mut self.widths, |s| {
            let v = parse_list::<usize>(s)?;
            <[usize; 3]>::try_from(v).map_err(|v| format!("expected 3 widths, got {}", v.len()))
        })?;
        r.set("grad_clip", &mut self.grad_clip)?;
        let a = &mut self.augmentation;
        r.set("augment.intensity_shift_enabled", &mut a.intensity_shift_enabled)?;
        r.set("augment.intensity_shift_range", &mut a.intensity_shift_range)?;
        r.set("augment.intensity_scale_enabled", &mut a.intensity_scale_enabled)?;
        r.set("augment.intensity_scale_range", &mut a.intensity_scale_range)?;
        r.set("augment.translation_enabled", &mut a.translation_enabled)?;
        r.set("augment.translation_range", &mut a.translation_range)?;
        r.set("augment.rotation_enabled", &mut a.rotation_enabled)?;
        r.set("augment.rotation_range", &mut a.rotation_range)?;
        r.set("augment.scale_enabled", &mut a.scale_enabled)?;
        r.set("augment.scale_range", &mut a.scale_range)?;
        r.set("augment.elastic_enabled", &mut a.elastic_enabled)?;
        r.set("augment.elastic_grid_size", &mut a.elastic_grid_size)?;
        r.set("augment.elastic_magnitude", &mut a.elastic_magnitude)?;
        Ok(())
    }
}

/// Predictor weights plus the learned dataset-level target covariances.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub config: TrainConfig,
    pub width: usize,
    pub height: usize,
    pub landmarks: usize,
    /// Stored in single precision, the checkpoint format.
    pub predictor_params: Vec<f32>,
    /// Canonical `Σ̃_i`, one per landmark.
    pub target_decomps: Vec<CovarianceDecomposition>,
    /// Mean per-sample loss at every iteration.
    pub loss_trace: Vec<f64>,
}

impl TrainedModel {
    pub fn spec(&self) -> Result<PredictorSpec> {
        PredictorSpec::new(self.config.widths, self.landmarks)
    }

    fn params_f64(&self) -> Vec<f64> {
        self.predictor_params.iter().map(|&p| p as f64).collect()
    }
}

/// Covariance parameters in unconstrained form: `(θ, ln σmaj, ln σmin)`.
#[derive(Debug, Clone, Copy)]
struct CovParams {
    theta: f64,
    log_a: f64,
    log_b: f64,
}

impl CovParams {
    fn decomp(&self) -> CovarianceDecomposition {
        CovarianceDecomposition {
            theta: self.theta,
            sigma_maj: self.log_a.exp(),
            sigma_min: self.log_b.exp(),
        }
    }
}

fn predictor_for(cfg: &TrainConfig, landmarks: usize) -> Result<Option<ReferencePredictor>> {
    Ok(match cfg.predictor {
        PredictorKind::Reference => Some(ReferencePredictor::new(PredictorSpec::new(cfg.widths, landmarks)?)),
        PredictorKind::Zero => None,
    })
}

fn split_heatmaps(out: &Tensor, shape: GridShape) -> Vec<HeatmapGrid> {
    let n = out.h * out.w;
    (0..out.c)
        .map(|c| HeatmapGrid {
            width: shape.width,
            height: shape.height,
            spacing: shape.spacing,
            values: out.data[c * n..(c + 1) * n].to_vec(),
        })
        .collect()
}

const STREAM_INIT: u64 = 1;
const STREAM_SHUFFLE: u64 = 2;
const STREAM_AUGMENT: u64 = 3;
const STREAM_DROPOUT: u64 = 4;

/// Trains predictor and target covariances jointly.
///
/// Each iteration draws `batch_size` samples from a per-epoch shuffle,
/// augments them, and takes one momentum step on the batch-mean loss. The
/// covariance step size is `learning_rate * covariance_lr_multiplier`.
pub fn train(dataset: &Dataset, cfg: &TrainConfig) -> Result<TrainedModel> {
    cfg.validate()?;
    dataset.validate()?;
    let shape = dataset.shape().expect("validated dataset has a shape");
    let n_lm = dataset.landmark_count;
    let net = predictor_for(cfg, n_lm)?;
    if let Some(net) = &net {
        net.spec.check_geometry(shape.width, shape.height)?;
    }
    let mut params = net.as_ref().map_or_else(Vec::new, |n| n.spec.init_params(derive_seed(cfg.seed, &[STREAM_INIT])));
    let mut vel = vec![0.0; params.len()];

    let log_init = cfg.sigma_init.ln();
    let mut cov = vec![
        CovParams {
            theta: 0.0,
            log_a: log_init,
            log_b: log_init,
        };
        n_lm
    ];
    let mut cov_vel = vec![[0.0f64; 3]; n_lm];
    let reg = match cfg.target_mode {
        TargetMode::FixedIso => Regularizer::None,
        TargetMode::LearnedIso => Regularizer::SigmaSquared(cfg.alpha),
        TargetMode::LearnedAniso => Regularizer::AxisProduct(cfg.alpha),
    };

    // Fixed targets bypass the log round trip so σ stays exactly sigma_init.
    let current = |c: &CovParams| match cfg.target_mode {
        TargetMode::FixedIso => CovarianceDecomposition {
            theta: 0.0,
            sigma_maj: cfg.sigma_init,
            sigma_min: cfg.sigma_init,
        },
        _ => c.decomp(),
    };

    let n = dataset.samples.len();
    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0usize;
    let mut epoch = 0u64;
    let mut loss_trace = Vec::with_capacity(cfg.iterations);
    let zero_maps = vec![HeatmapGrid::zeros(shape); n_lm];

    for it in 0..cfg.iterations {
        let decomps: Vec<CovarianceDecomposition> = cov.iter().map(|c| current(c)).collect();
        if let Some((i, d)) = decomps
            .iter()
            .enumerate()
            .find(|(_, d)| !(d.theta.is_finite() && d.sigma_maj > 0.0 && d.sigma_min > 0.0 && d.sigma_maj.is_finite() && d.sigma_min.is_finite()))
        {
            return Err(Error::NonFiniteLoss {
                iteration: it,
                detail: format!("target covariance of landmark {i} left the valid range: {d:?}"),
            });
        }
        let mut grad = vec![0.0; params.len()];
        let mut cov_grad = vec![[0.0f64; 3]; n_lm];
        let mut loss = 0.0;
        for _ in 0..cfg.batch_size {
            if cursor == order.len() {
                order = (0..n).collect();
                order.shuffle(&mut rng::seeded(derive_seed(cfg.seed, &[STREAM_SHUFFLE, epoch])));
                cursor = 0;
                epoch += 1;
            }
            let idx = order[cursor];
            cursor += 1;
            let sample = &dataset.samples[idx];
            let aug_seed = derive_seed(cfg.seed, &[STREAM_AUGMENT, epoch, idx as u64]);
            let aug = augment(&sample.image, &sample.landmarks, &cfg.augmentation, aug_seed)?;
            // A landmark pushed off the image would truncate its target; fall
            // back to the untransformed sample in that case.
            let (image, coords): (&HeatmapGrid, &[Point]) = if aug.out_of_bounds.iter().any(|&o| o) {
                (&sample.image, &sample.landmarks)
            } else {
                (&aug.image, &aug.coords)
            };

            let (preds, cache) = match &net {
                Some(net) => {
                    let dropout = DropoutMode::On {
                        rate: cfg.dropout_rate,
                        seed: derive_seed(cfg.seed, &[STREAM_DROPOUT, epoch, idx as u64]),
                    };
                    let (out, cache) = net.forward(&params, &image.values, shape.width, shape.height, dropout)?;
                    (split_heatmaps(&out, shape), Some((out, cache)))
                }
                None => (zero_maps.clone(), None),
            };
            let ev = heatmap_loss(&preds, coords, &decomps, cfg.gamma, reg)?;
            if !ev.value.is_finite() {
                return Err(Error::NonFiniteLoss {
                    iteration: it,
                    detail: format!("sample {} produced loss {}", sample.id, ev.value),
                });
            }
            loss += ev.value;
            if let (Some(net), Some((out, cache))) = (&net, cache) {
                let g_out = Tensor {
                    c: out.c,
                    h: out.h,
                    w: out.w,
                    data: ev.d_pred.concat(),
                };
                for (g, d) in grad.iter_mut().zip(net.backward(&params, &cache, &g_out)) {
                    *g += d;
                }
            }
            for (acc, d) in cov_grad.iter_mut().zip(&ev.d_decomp) {
                for k in 0..3 {
                    acc[k] += d[k];
                }
            }
        }
        let scale = 1.0 / cfg.batch_size as f64;
        loss *= scale;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                iteration: it,
                detail: format!("batch loss {loss}"),
            });
        }
        loss_trace.push(loss);

        // Predictor step.
        for (g, &w) in grad.iter_mut().zip(&params) {
            *g = *g * scale + cfg.lambda * w;
        }
        if cfg.grad_clip > 0.0 {
            let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            if norm > cfg.grad_clip {
                let s = cfg.grad_clip / norm;
                grad.iter_mut().for_each(|g| *g *= s);
            }
        }
        for ((w, v), g) in params.iter_mut().zip(vel.iter_mut()).zip(&grad) {
            *v = cfg.momentum * *v + g;
            *w -= cfg.learning_rate * *v;
        }

        // Covariance step in (θ, ln σmaj, ln σmin).
        let cov_lr = cfg.learning_rate * cfg.covariance_lr_multiplier;
        for ((c, v), g) in cov.iter_mut().zip(cov_vel.iter_mut()).zip(&cov_grad) {
            let (a, b) = (c.log_a.exp(), c.log_b.exp());
            let g = match cfg.target_mode {
                TargetMode::FixedIso => continue,
                // Both slots carry the same σ, so the step is shared.
                TargetMode::LearnedIso => {
                    let gs = (g[1] + g[2]) * scale * a;
                    [0.0, gs, gs]
                }
                TargetMode::LearnedAniso => [g[0] * scale, g[1] * scale * a, g[2] * scale * b],
            };
            for k in 0..3 {
                v[k] = cfg.momentum * v[k] + g[k];
            }
            c.theta -= cov_lr * v[0];
            c.log_a -= cov_lr * v[1];
            c.log_b -= cov_lr * v[2];
        }
    }

    let target_decomps = cov
        .iter()
        .map(|c| {
            let d = current(c);
            CovarianceDecomposition::new(d.theta, d.sigma_maj, d.sigma_min)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TrainedModel {
        config: cfg.clone(),
        width: shape.width,
        height: shape.height,
        landmarks: n_lm,
        predictor_params: params.iter().map(|&p| p as f32).collect(),
        target_decomps,
        loss_trace,
    })
}

/// One heatmap per landmark. With `dropout_enabled` the model's dropout rate
/// is applied with masks drawn from `seed`.
pub fn predict(model: &TrainedModel, image: &HeatmapGrid, dropout_enabled: bool, seed: u64) -> Result<Vec<HeatmapGrid>> {
    if image.width != model.width || image.height != model.height {
        return Err(Error::ShapeMismatch(format!(
            "image is {}x{}, model was trained on {}x{}",
            image.width, image.height, model.width, model.height
        )));
    }
    let shape = image.shape();
    match predictor_for(&model.config, model.landmarks)? {
        None => Ok(vec![HeatmapGrid::zeros(shape); model.landmarks]),
        Some(net) => {
            let dropout = if dropout_enabled {
                DropoutMode::On {
                    rate: model.config.dropout_rate,
                    seed,
                }
            } else {
                DropoutMode::Off
            };
            let (out, _) = net.forward(&model.params_f64(), &image.values, image.width, image.height, dropout)?;
            Ok(split_heatmaps(&out, shape))
        }
    }
}
