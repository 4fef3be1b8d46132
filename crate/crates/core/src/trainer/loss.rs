//! Pixel-wise L2 heatmap losses with fixed, learned isotropic and learned
//! anisotropic Gaussian targets, with gradients for both the predicted
//! heatmaps and the target covariance parameters.

use crate::error::{Error, Result};
use crate::gaussmath::{AnisotropicGaussian, CovarianceDecomposition, HeatmapGrid, Kernel, Point};

/// Value and gradients of a heatmap loss.
#[derive(Debug, Clone, PartialEq)]
pub struct LossEval {
    pub value: f64,
    /// `∂L/∂ĥ_i` per landmark, same layout as the predictions.
    pub d_pred: Vec<Vec<f64>>,
    /// `(∂L/∂θ_i, ∂L/∂σmaj_i, ∂L/∂σmin_i)`, regularizer included.
    pub d_decomp: Vec<[f64; 3]>,
}

/// Which penalty accompanies the data term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Regularizer {
    None,
    /// `α Σ σ_i²` on isotropic targets.
    SigmaSquared(f64),
    /// `α Σ σmaj_i σmin_i`.
    AxisProduct(f64),
}

fn check_shapes(pred: &[HeatmapGrid], gt: &[Point], n_targets: usize) -> Result<()> {
    if pred.len() != gt.len() || pred.len() != n_targets {
        return Err(Error::ShapeMismatch(format!(
            "{} predicted heatmaps, {} landmarks, {} target covariances",
            pred.len(),
            gt.len(),
            n_targets
        )));
    }
    if let Some(first) = pred.first() {
        if pred.iter().any(|h| h.width != first.width || h.height != first.height) {
            return Err(Error::ShapeMismatch("predicted heatmaps differ in size".into()));
        }
    }
    Ok(())
}

/// Data term plus regularizer, with all gradients. `decomps[i]` need not be
/// canonical; gradients refer to the parameters exactly as given.
pub fn heatmap_loss(
    pred: &[HeatmapGrid],
    gt: &[Point],
    decomps: &[CovarianceDecomposition],
    gamma: f64,
    reg: Regularizer,
) -> Result<LossEval> {
    check_shapes(pred, gt, decomps.len())?;
    let mut value = 0.0;
    let mut d_pred = Vec::with_capacity(pred.len());
    let mut d_decomp = Vec::with_capacity(pred.len());
    for ((h, &mean), d) in pred.iter().zip(gt).zip(decomps) {
        let g = AnisotropicGaussian::new(mean, *d, gamma)?;
        let k = Kernel::new(&g);
        let (a, b) = (d.sigma_maj, d.sigma_min);
        let (ia2, ib2) = (1.0 / (a * a), 1.0 / (b * b));
        let mut dp = vec![0.0; h.values.len()];
        let (mut dt, mut da, mut db) = (0.0, 0.0, 0.0);
        for row in 0..h.height {
            for col in 0..h.width {
                let i = row * h.width + col;
                let (t, u, v) = k.eval(col as f64, row as f64);
                let r = h.values[i] - t;
                value += r * r;
                dp[i] = 2.0 * r;
                // ∂L/∂t = -2r; chain through the analytic target derivatives.
                let gt_ = -2.0 * r * t;
                dt += gt_ * (-u * v * (ia2 - ib2));
                da += gt_ * (u * u * ia2 - 1.0) / a;
                db += gt_ * (v * v * ib2 - 1.0) / b;
            }
        }
        match reg {
            Regularizer::None => {}
            Regularizer::SigmaSquared(alpha) => {
                // Isotropic targets carry σ in both slots.
                value += alpha * a * a;
                da += alpha * a;
                db += alpha * b;
            }
            Regularizer::AxisProduct(alpha) => {
                value += alpha * a * b;
                da += alpha * b;
                db += alpha * a;
            }
        }
        d_pred.push(dp);
        d_decomp.push([dt, da, db]);
    }
    Ok(LossEval { value, d_pred, d_decomp })
}

/// `Σ_i Σ_x (ĥ_i(x) - h̃_i(x; σ))²` with isotropic targets of fixed size.
pub fn loss_fixed(pred: &[HeatmapGrid], gt: &[Point], sigma: f64, gamma: f64) -> Result<f64> {
    let d = CovarianceDecomposition::isotropic(sigma)?;
    Ok(heatmap_loss(pred, gt, &vec![d; gt.len()], gamma, Regularizer::None)?.value)
}

/// Learned per-landmark isotropic σ with `α Σ σ_i²`.
pub fn loss_learned_iso(pred: &[HeatmapGrid], gt: &[Point], sigmas: &[f64], alpha: f64, gamma: f64) -> Result<f64> {
    Ok(loss_learned_iso_grad(pred, gt, sigmas, alpha, gamma)?.0)
}

/// Value and `∂L/∂σ_i`.
pub fn loss_learned_iso_grad(pred: &[HeatmapGrid], gt: &[Point], sigmas: &[f64], alpha: f64, gamma: f64) -> Result<(f64, Vec<f64>)> {
    let decomps = sigmas
        .iter()
        .map(|&s| CovarianceDecomposition::isotropic(s))
        .collect::<Result<Vec<_>>>()?;
    let eval = heatmap_loss(pred, gt, &decomps, gamma, Regularizer::SigmaSquared(alpha))?;
    // dσ collects both axis contributions since σmaj = σmin = σ.
    let grads = eval.d_decomp.iter().map(|g| g[1] + g[2]).collect();
    Ok((eval.value, grads))
}

/// Learned anisotropic targets with `α Σ σmaj_i σmin_i`.
pub fn loss_learned_aniso(pred: &[HeatmapGrid], gt: &[Point], decomps: &[CovarianceDecomposition], alpha: f64, gamma: f64) -> Result<f64> {
    Ok(heatmap_loss(pred, gt, decomps, gamma, Regularizer::AxisProduct(alpha))?.value)
}
