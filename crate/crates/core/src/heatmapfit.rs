//! Robust fit of an anisotropic Gaussian to a predicted heatmap.
//!
//! Levenberg–Marquardt on soft-L1 robustified residuals (iteratively
//! reweighted normal equations). Parameters are
//! `[mean_x, mean_y, theta, ln σmaj, ln σmin, amplitude]`; the log extents keep
//! the sigmas positive without constraints. The fit runs on a window of
//! `±window_halfwidth_sigmas · σ` around the heatmap maximum, re-centred and
//! resized once after ten iterations.

use std::f64::consts::PI;

use nalgebra::{Matrix6, Vector6};

use crate::config::KvReader;
use crate::error::{Error, Result};
use crate::gaussmath::{AnisotropicGaussian, CovarianceDecomposition, HeatmapGrid, Point};

const N_PARAMS: usize = 6;
const INIT_SIGMA: f64 = 3.0;
const WINDOW_UPDATE_ITER: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitConfig {
    pub max_iterations: usize,
    /// Stop once an accepted step lowers the cost by less than this fraction.
    pub tolerance: f64,
    /// Residual scale of the soft-L1 loss, in heatmap intensity units.
    pub robust_loss_scale: f64,
    pub window_halfwidth_sigmas: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            tolerance: 1e-8,
            robust_loss_scale: 1.0,
            window_halfwidth_sigmas: 5.0,
        }
    }
}

impl FitConfig {
    /// Reads `fit.*` keys.
    pub fn read_kv(&mut self, r: &mut KvReader<'_>) -> Result<()> {
        r.set("fit.max_iterations", &mut self.max_iterations)?;
        r.set("fit.tolerance", &mut self.tolerance)?;
        r.set("fit.robust_loss_scale", &mut self.robust_loss_scale)?;
        r.set("fit.window_halfwidth_sigmas", &mut self.window_halfwidth_sigmas)
    }

    pub fn to_pairs(&self) -> Vec<(String, String)> {
        vec![
            ("fit.max_iterations".into(), self.max_iterations.to_string()),
            ("fit.tolerance".into(), self.tolerance.to_string()),
            ("fit.robust_loss_scale".into(), self.robust_loss_scale.to_string()),
            ("fit.window_halfwidth_sigmas".into(), self.window_halfwidth_sigmas.to_string()),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::invalid("max_iterations must be positive"));
        }
        for (name, v) in [
            ("tolerance", self.tolerance),
            ("robust_loss_scale", self.robust_loss_scale),
            ("window_halfwidth_sigmas", self.window_halfwidth_sigmas),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitResult {
    /// Fitted mean `x̂` and covariance `Σ̂` (canonical), plus amplitude.
    pub gaussian: AnisotropicGaussian,
    /// L2 norm of the plain residual over the whole heatmap.
    pub residual_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Coordinate of the largest pixel; ties go to the smallest row, then column.
pub fn argmax_coord(h: &HeatmapGrid) -> Point {
    let (mut best, mut best_i) = (f64::NEG_INFINITY, 0);
    // Row-major scan with strict `>` keeps the first occurrence in (row, col) order.
    for (i, &v) in h.values.iter().enumerate() {
        if v > best {
            best = v;
            best_i = i;
        }
    }
    Point::new((best_i % h.width) as f64, (best_i / h.width) as f64)
}

#[derive(Debug, Clone, Copy)]
struct Window {
    c0: usize,
    c1: usize,
    r0: usize,
    r1: usize,
}

impl Window {
    fn around(h: &HeatmapGrid, center: Point, half: f64) -> Self {
        let clamp = |v: f64, hi: usize| -> usize { v.max(0.0).min(hi as f64) as usize };
        let half = half.max(2.0);
        Window {
            c0: clamp((center.x - half).floor(), h.width - 1),
            c1: clamp((center.x + half).ceil(), h.width - 1),
            r0: clamp((center.y - half).floor(), h.height - 1),
            r1: clamp((center.y + half).ceil(), h.height - 1),
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Params([f64; N_PARAMS]);

impl Params {
    fn gaussian(&self) -> AnisotropicGaussian {
        let p = &self.0;
        AnisotropicGaussian {
            mean: Point::new(p[0], p[1]),
            decomp: CovarianceDecomposition {
                theta: p[2],
                sigma_maj: p[3].exp(),
                sigma_min: p[4].exp(),
            },
            amplitude: p[5],
        }
    }

    fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

/// Model value and Jacobian row with respect to the six optimizer parameters.
#[inline]
fn model_and_jacobian(p: &Params, x: f64, y: f64) -> (f64, [f64; N_PARAMS]) {
    let [mx, my, theta, la, lb, amp] = p.0;
    let (a, b) = (la.exp(), lb.exp());
    let (s, c) = theta.sin_cos();
    let (dx, dy) = (x - mx, y - my);
    let u = c * dx + s * dy;
    let v = -s * dx + c * dy;
    let (ia2, ib2) = (1.0 / (a * a), 1.0 / (b * b));
    let f = amp / (2.0 * PI * a * b) * (-0.5 * (u * u * ia2 + v * v * ib2)).exp();
    let jac = [
        f * (u * c * ia2 - v * s * ib2),
        f * (u * s * ia2 + v * c * ib2),
        -f * u * v * (ia2 - ib2),
        f * (u * u * ia2 - 1.0),
        f * (v * v * ib2 - 1.0),
        if amp != 0.0 { f / amp } else { (-0.5 * (u * u * ia2 + v * v * ib2)).exp() / (2.0 * PI * a * b) },
    ];
    (f, jac)
}

/// Soft-L1 loss `2 s² (sqrt(1 + r²/s²) - 1)` and its IRLS weight `1/sqrt(1 + r²/s²)`.
#[inline]
fn soft_l1(r: f64, scale: f64) -> (f64, f64) {
    let z = (r / scale) * (r / scale);
    let root = (1.0 + z).sqrt();
    (2.0 * scale * scale * (root - 1.0), 1.0 / root)
}

fn robust_cost(h: &HeatmapGrid, w: &Window, p: &Params, scale: f64) -> f64 {
    let g = p.gaussian();
    let k = crate::gaussmath::Kernel::new(&g);
    let mut cost = 0.0;
    for row in w.r0..=w.r1 {
        for col in w.c0..=w.c1 {
            let r = k.eval(col as f64, row as f64).0 - h.get(col, row);
            cost += soft_l1(r, scale).0;
        }
    }
    cost
}

/// Argmax of the 3x3 box sum; single-pixel spikes cannot dominate it.
fn smoothed_argmax(h: &HeatmapGrid) -> Point {
    let (mut best, mut at) = (f64::NEG_INFINITY, Point::new(0.0, 0.0));
    for row in 0..h.height {
        for col in 0..h.width {
            let mut sum = 0.0;
            for r in row.saturating_sub(1)..=(row + 1).min(h.height - 1) {
                for c in col.saturating_sub(1)..=(col + 1).min(h.width - 1) {
                    sum += h.get(c, r);
                }
            }
            if sum > best {
                best = sum;
                at = Point::new(col as f64, row as f64);
            }
        }
    }
    at
}

struct Run {
    p: Params,
    iterations: usize,
    converged: bool,
}

/// Robust Gaussian fit initialized at the heatmap maximum with
/// `σmaj = σmin = 3`, `θ = 0` and the amplitude matching the peak value.
///
/// When the maximum of the 3x3-smoothed heatmap lies elsewhere (an isolated
/// spike outranks the peak), a second fit starts there and the result with
/// the lower whole-grid robust cost is kept.
pub fn fit_gaussian(h: &HeatmapGrid, cfg: &FitConfig) -> Result<FitResult> {
    cfg.validate()?;
    let peak = h.max_value();
    if !(peak > 0.0) || !peak.is_finite() {
        return Err(Error::FitDegenerate(format!("heatmap maximum {peak} is not positive")));
    }
    let support = h.values.iter().filter(|&&v| v > 0.01 * peak).count();
    if support < N_PARAMS {
        return Err(Error::FitDegenerate(format!(
            "only {support} pixels above 1% of the maximum; at least {N_PARAMS} are required"
        )));
    }

    let start = argmax_coord(h);
    let mut run = run_lm(h, cfg, start, peak);
    let alt = smoothed_argmax(h);
    if alt != start {
        let other = run_lm(h, cfg, alt, h.get(alt.x as usize, alt.y as usize).max(f64::MIN_POSITIVE));
        let cost = |r: &Run| {
            if r.p.is_finite() {
                full_robust_cost(h, &r.p.gaussian(), cfg.robust_loss_scale)
            } else {
                f64::INFINITY
            }
        };
        if cost(&other) < cost(&run) {
            run = Run {
                iterations: run.iterations + other.iterations,
                ..other
            };
        } else {
            run.iterations += other.iterations;
        }
    }

    let Run { p, iterations, converged } = run;
    let raw = p.gaussian();
    let amplitude_ok = raw.amplitude > 0.0 && raw.amplitude.is_finite();
    let gaussian = AnisotropicGaussian {
        mean: raw.mean,
        decomp: raw.decomp.canonical(),
        amplitude: raw.amplitude.abs(),
    };
    let residual_norm = full_residual_norm(h, &gaussian);
    Ok(FitResult {
        gaussian,
        residual_norm,
        iterations,
        converged: converged && amplitude_ok && p.is_finite(),
    })
}

/// Trial parameters must keep the Gaussian finite and roughly on the grid.
fn plausible(h: &HeatmapGrid, p: &Params) -> bool {
    let (w, hh) = (h.width as f64, h.height as f64);
    let extent = w.max(hh);
    p.is_finite()
        && (-w..2.0 * w).contains(&p.0[0])
        && (-hh..2.0 * hh).contains(&p.0[1])
        && [p.0[3], p.0[4]].iter().all(|&l| (1e-3f64.ln()..(10.0 * extent).ln()).contains(&l))
}

fn run_lm(h: &HeatmapGrid, cfg: &FitConfig, start: Point, peak: f64) -> Run {
    let mut p = Params([
        start.x,
        start.y,
        0.0,
        INIT_SIGMA.ln(),
        INIT_SIGMA.ln(),
        peak * 2.0 * PI * INIT_SIGMA * INIT_SIGMA,
    ]);
    let scale = cfg.robust_loss_scale;
    let mut window = Window::around(h, start, cfg.window_halfwidth_sigmas * INIT_SIGMA);
    let mut cost = robust_cost(h, &window, &p, scale);
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;

    let mut window_updated = false;

    while iterations < cfg.max_iterations {
        if iterations == WINDOW_UPDATE_ITER && !window_updated {
            window = refit_window(h, &p, cfg);
            cost = robust_cost(h, &window, &p, scale);
            window_updated = true;
        }
        iterations += 1;

        let mut jtj = Matrix6::<f64>::zeros();
        let mut jtr = Vector6::<f64>::zeros();
        for row in window.r0..=window.r1 {
            for col in window.c0..=window.c1 {
                let (f, jac) = model_and_jacobian(&p, col as f64, row as f64);
                let r = f - h.get(col, row);
                let w = soft_l1(r, scale).1;
                let jv = Vector6::from_column_slice(&jac);
                jtj.syger(w, &jv, &jv, 1.0);
                jtr.axpy(w * r, &jv, 1.0);
            }
        }

        let mut step_converged = jtr.amax() == 0.0;
        // Raise damping until a step lowers the robust cost.
        let mut accepted = step_converged;
        while !accepted && lambda < 1e16 {
            let mut damped = jtj;
            for i in 0..N_PARAMS {
                damped[(i, i)] += lambda * jtj[(i, i)].max(1e-12);
            }
            let Some(ch) = damped.cholesky() else {
                lambda *= 10.0;
                continue;
            };
            let step = ch.solve(&(-jtr));
            let mut trial = p;
            for i in 0..N_PARAMS {
                trial.0[i] += step[i];
            }
            let trial_cost = if plausible(h, &trial) {
                robust_cost(h, &window, &trial, scale)
            } else {
                f64::INFINITY
            };
            if trial_cost < cost {
                let decrease = (cost - trial_cost) / cost.max(f64::MIN_POSITIVE);
                let largest = p.0.iter().fold(1.0f64, |m, v| m.max(v.abs()));
                step_converged = decrease < cfg.tolerance || step.amax() <= 1e-12 * largest;
                p = trial;
                cost = trial_cost;
                lambda = (lambda * 0.1).max(1e-12);
                accepted = true;
            } else {
                lambda *= 10.0;
            }
        }
        // No step lowers the cost at machine precision: a stationary point.
        if !accepted {
            step_converged = true;
            lambda = 1e-3;
        }
        if step_converged {
            if window_updated {
                converged = true;
                break;
            }
            window = refit_window(h, &p, cfg);
            cost = robust_cost(h, &window, &p, scale);
            window_updated = true;
        }
    }
    Run { p, iterations, converged }
}

fn full_robust_cost(h: &HeatmapGrid, g: &AnisotropicGaussian, scale: f64) -> f64 {
    let k = crate::gaussmath::Kernel::new(g);
    let mut cost = 0.0;
    for row in 0..h.height {
        for col in 0..h.width {
            cost += soft_l1(k.eval(col as f64, row as f64).0 - h.get(col, row), scale).0;
        }
    }
    cost
}

fn refit_window(h: &HeatmapGrid, p: &Params, cfg: &FitConfig) -> Window {
    let g = p.gaussian();
    let sigma = g.decomp.sigma_maj.max(g.decomp.sigma_min);
    let center = if g.mean.is_finite() { g.mean } else { argmax_coord(h) };
    Window::around(h, center, cfg.window_halfwidth_sigmas * sigma.min(h.width.max(h.height) as f64))
}

fn full_residual_norm(h: &HeatmapGrid, g: &AnisotropicGaussian) -> f64 {
    let k = crate::gaussmath::Kernel::new(g);
    let mut sum = 0.0;
    for row in 0..h.height {
        for col in 0..h.width {
            let r = k.eval(col as f64, row as f64).0 - h.get(col, row);
            sum += r * r;
        }
    }
    sum.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussmath::{render_anisotropic, GridShape};

    fn render(mx: f64, my: f64, theta_deg: f64, maj: f64, min: f64) -> (AnisotropicGaussian, HeatmapGrid) {
        let g = AnisotropicGaussian::new(
            Point::new(mx, my),
            CovarianceDecomposition::new(theta_deg.to_radians(), maj, min).unwrap(),
            100.0,
        )
        .unwrap();
        (g, render_anisotropic(&g, GridShape::pixels(64, 64)).unwrap())
    }

    fn angle_diff_deg(a: f64, b: f64) -> f64 {
        let d = (a - b).to_degrees().rem_euclid(180.0);
        d.min(180.0 - d)
    }

    #[test]
    fn argmax_examples() {
        let (_, h) = render(20.0, 31.0, 10.0, 4.0, 2.0);
        assert_eq!(argmax_coord(&h), Point::new(20.0, 31.0));

        let mut h = HeatmapGrid::zeros(GridShape::pixels(12, 12));
        h.set(3, 7, 5.0);
        h.set(9, 2, 5.0);
        assert_eq!(argmax_coord(&h), Point::new(9.0, 2.0));

        let z = HeatmapGrid::zeros(GridShape::pixels(5, 5));
        assert_eq!(argmax_coord(&z), Point::new(0.0, 0.0));
    }

    #[test]
    fn round_trip_recovers_parameters() {
        let (truth, h) = render(32.3, 30.7, 25.0, 4.0, 2.0);
        let fit = fit_gaussian(&h, &FitConfig::default()).unwrap();
        assert!(fit.converged);
        let g = fit.gaussian;
        assert!((g.mean.x - 32.3).abs() < 0.01 && (g.mean.y - 30.7).abs() < 0.01);
        assert!((g.decomp.sigma_maj / 4.0 - 1.0).abs() < 0.01);
        assert!((g.decomp.sigma_min / 2.0 - 1.0).abs() < 0.01);
        assert!(angle_diff_deg(g.decomp.theta, truth.decomp.theta) < 0.5);
        assert!(fit.residual_norm < 1e-6 * h.max_value(), "residual {}", fit.residual_norm);
    }

    #[test]
    fn isotropic_round_trip_ratio_near_one() {
        let (_, h) = render(30.0, 33.4, 0.0, 3.0, 3.0);
        let fit = fit_gaussian(&h, &FitConfig::default()).unwrap();
        let r = fit.gaussian.decomp.ratio();
        assert!((1.0..=1.02).contains(&r), "ratio {r}");
    }

    /// Robust vs plain least squares on a heatmap with impulse outliers.
    #[test]
    fn impulse_outliers_barely_move_the_mean() {
        let (_, mut h) = render(32.3, 30.7, 25.0, 4.0, 2.0);
        let peak = h.max_value();
        for (c, r) in [(36, 30), (28, 33), (33, 26), (30, 28), (35, 34)] {
            h.set(c, r, h.get(c, r) + peak);
        }
        let robust = fit_gaussian(&h, &FitConfig::default()).unwrap();
        let err = (robust.gaussian.mean - Point::new(32.3, 30.7)).scale(1.0);
        assert!(err.x.hypot(err.y) < 0.1, "robust mean error {:?}", err);

        // Effectively quadratic loss for comparison.
        let plain_cfg = FitConfig {
            robust_loss_scale: 1e6,
            ..FitConfig::default()
        };
        let plain = fit_gaussian(&h, &plain_cfg).unwrap();
        let perr = plain.gaussian.mean - Point::new(32.3, 30.7);
        assert!(perr.x.hypot(perr.y) >= err.x.hypot(err.y));
    }

    #[test]
    fn degenerate_heatmaps_are_rejected() {
        let z = HeatmapGrid::zeros(GridShape::pixels(8, 8));
        assert!(matches!(fit_gaussian(&z, &FitConfig::default()), Err(Error::FitDegenerate(_))));
        let mut spike = HeatmapGrid::zeros(GridShape::pixels(8, 8));
        spike.set(4, 4, 1.0);
        spike.set(4, 5, 1.0);
        assert!(matches!(fit_gaussian(&spike, &FitConfig::default()), Err(Error::FitDegenerate(_))));
    }

    #[test]
    fn iteration_cap_flags_non_convergence() {
        let (_, h) = render(32.3, 30.7, 25.0, 6.0, 1.5);
        let cfg = FitConfig {
            max_iterations: 2,
            ..FitConfig::default()
        };
        let fit = fit_gaussian(&h, &cfg).unwrap();
        assert_eq!(fit.iterations, 2);
        assert!(!fit.converged);
    }

    #[test]
    fn translation_equivariance() {
        let (_, h) = render(30.3, 29.6, 40.0, 5.0, 2.0);
        let base = fit_gaussian(&h, &FitConfig::default()).unwrap();
        let (dx, dy) = (5usize, 3usize);
        let mut shifted = HeatmapGrid::zeros(h.shape());
        for r in 0..h.height - dy {
            for c in 0..h.width - dx {
                shifted.set(c + dx, r + dy, h.get(c, r));
            }
        }
        let moved = fit_gaussian(&shifted, &FitConfig::default()).unwrap();
        assert!((moved.gaussian.mean.x - base.gaussian.mean.x - dx as f64).abs() < 1e-6);
        assert!((moved.gaussian.mean.y - base.gaussian.mean.y - dy as f64).abs() < 1e-6);
        assert!((moved.gaussian.decomp.sigma_maj - base.gaussian.decomp.sigma_maj).abs() < 1e-6);
        assert!((moved.gaussian.decomp.sigma_min - base.gaussian.decomp.sigma_min).abs() < 1e-6);
    }

    #[test]
    fn rotation_consistency() {
        for delta in [15.0, 50.0, -70.0] {
            let (_, a) = render(32.0, 32.0, 10.0, 4.5, 2.0);
            let (_, b) = render(32.0, 32.0, 10.0 + delta, 4.5, 2.0);
            let fa = fit_gaussian(&a, &FitConfig::default()).unwrap();
            let fb = fit_gaussian(&b, &FitConfig::default()).unwrap();
            let got = fb.gaussian.decomp.theta - fa.gaussian.decomp.theta;
            assert!(angle_diff_deg(got, f64::to_radians(delta)) < 0.5);
        }
    }
}
