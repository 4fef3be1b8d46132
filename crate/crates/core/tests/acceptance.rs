//! Acceptance suite. Each test prints one line:
//! `ACCEPTANCE <n> PASS|FAIL|UNVERIFIED <name>: <detail>`.
//!
//! Run with `cargo test --release -p hmuq-core --test acceptance`; the
//! synthetic training run behind criteria 4 and 6 takes about two minutes
//! on one core.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_2, LN_2, PI};
use std::io::Write;
use std::sync::OnceLock;
use std::time::Instant;

use rand::Rng;

use hmuq_core::clinical::{
    accuracy_uncertainty_curve, classify, evaluate_measurement, mc_classify, synthetic_clinical_experiment, ClassThresholds,
    ClinicalExperiment, LandmarkBelief, LandmarkMap, MeasurementDef, MeasurementSet,
};
use hmuq_core::dataset::{Dataset, Sample};
use hmuq_core::gaussmath::{render_anisotropic, wrap_half_pi};
use hmuq_core::heatmapfit::{fit_gaussian, FitConfig};
use hmuq_core::io;
use hmuq_core::metrics::{aggregate_stats, inter_observer_stats, metrics_csv, point_error, sdr, MetricsRow, METRICS_HEADER};
use hmuq_core::rng::{derive_seed, seeded};
use hmuq_core::synth::{generate, SynthConfig};
use hmuq_core::trainer::loss::{heatmap_loss, Regularizer};
use hmuq_core::trainer::predictor::Tensor;
use hmuq_core::trainer::{train, DropoutMode, PredictorKind, PredictorSpec, ReferencePredictor, TrainConfig, TrainedModel};
use hmuq_core::uncertainty::{mcd_heatmap_fit, mcd_heatmaps, mcd_max, sample_uncertainty, McdConfig};
use hmuq_core::{AnisotropicGaussian, CovarianceDecomposition, GridShape, HeatmapGrid, Point};

#[derive(Clone, Copy, PartialEq)]
enum Outcome {
    Pass,
    Fail,
    Unverified,
}

/// Writes the result line past the test harness's output capture, then
/// fails the test on `Fail`.
fn report(n: usize, name: &str, outcome: Outcome, detail: &str) {
    let tag = match outcome {
        Outcome::Pass => "PASS",
        Outcome::Fail => "FAIL",
        Outcome::Unverified => "UNVERIFIED",
    };
    let line = format!("ACCEPTANCE {n:>2} {tag} {name}: {detail}\n");
    let _ = std::io::stderr().write_all(line.as_bytes());
    assert!(outcome != Outcome::Fail, "criterion {n} failed: {detail}");
}

fn verdict(ok: bool) -> Outcome {
    if ok {
        Outcome::Pass
    } else {
        Outcome::Fail
    }
}

fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

fn axial_diff_deg(a: f64, b: f64) -> f64 {
    wrap_half_pi((a - b).to_radians()).to_degrees().abs()
}

// ---------------------------------------------------------------- 1

#[test]
fn c01_gradient_correctness() {
    let t0 = Instant::now();
    let (gamma, alpha) = (100.0, 5.0);
    let shape = GridShape::pixels(8, 8);
    let spec = PredictorSpec::new([4, 8, 8], 2).unwrap();
    let net = ReferencePredictor::new(spec);
    let n_params = spec.param_count();
    let (mut worst_cov, mut worst_pred, mut checked) = (0.0f64, 0.0f64, 0usize);

    for case in 0..100u64 {
        let mut r = seeded(derive_seed(1, &[case]));
        let gt: Vec<Point> = (0..2).map(|_| Point::new(r.random_range(2.0..5.0), r.random_range(2.0..5.0))).collect();
        let decomps: Vec<CovarianceDecomposition> = (0..2)
            .map(|_| CovarianceDecomposition {
                theta: r.random_range(-FRAC_PI_2..FRAC_PI_2),
                sigma_maj: r.random_range(1.0..2.5),
                sigma_min: r.random_range(0.8..2.0),
            })
            .collect();
        let mut params = spec.init_params(case);
        for p in params.iter_mut() {
            *p += r.random_range(-0.05..0.05);
        }
        let image: Vec<f64> = (0..64).map(|_| r.random_range(0.0..1.0)).collect();
        let dropout = if case % 2 == 0 {
            DropoutMode::Off
        } else {
            DropoutMode::On { rate: 0.1, seed: case }
        };
        let heatmaps = |out: &Tensor| -> Vec<HeatmapGrid> {
            (0..out.c)
                .map(|i| HeatmapGrid::from_values(shape, out.channel(i).to_vec()).unwrap())
                .collect()
        };
        let loss_at = |p: &[f64], d: &[CovarianceDecomposition]| {
            let (out, _) = net.forward(p, &image, 8, 8, dropout).unwrap();
            heatmap_loss(&heatmaps(&out), &gt, d, gamma, Regularizer::AxisProduct(alpha)).unwrap().value
        };

        let (out, cache) = net.forward(&params, &image, 8, 8, dropout).unwrap();
        let eval = heatmap_loss(&heatmaps(&out), &gt, &decomps, gamma, Regularizer::AxisProduct(alpha)).unwrap();

        // Covariance parameters.
        let h = 1e-5;
        for (i, g) in eval.d_decomp.iter().enumerate() {
            for k in 0..3 {
                let bump = |delta: f64| {
                    let mut d = decomps.clone();
                    match k {
                        0 => d[i].theta += delta,
                        1 => d[i].sigma_maj += delta,
                        _ => d[i].sigma_min += delta,
                    }
                    loss_at(&params, &d)
                };
                let fd = (bump(h) - bump(-h)) / (2.0 * h);
                worst_cov = worst_cov.max(rel_err(fd, g[k], 1e-6));
            }
        }

        // Predictor parameters: every tenth one, offset by case, so the
        // 100 cases cover each parameter ten times. Gradients here go down
        // to ~1e-6 against a loss of order 1e2, so the step is larger than
        // for the covariance to keep cancellation below the tolerance.
        let h = 1e-4;
        let grad_out = Tensor {
            data: eval.d_pred.concat(),
            ..out.clone()
        };
        let grad = net.backward(&params, &cache, &grad_out);
        for j in (case as usize % 10..n_params).step_by(10) {
            let mut pp = params.clone();
            pp[j] += h;
            let mut pm = params.clone();
            pm[j] -= h;
            let fd = (loss_at(&pp, &decomps) - loss_at(&pm, &decomps)) / (2.0 * h);
            worst_pred = worst_pred.max(rel_err(fd, grad[j], 1e-6));
            checked += 1;
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    let ok = worst_cov < 1e-4 && worst_pred < 1e-3 && secs < 60.0 && n_params <= 5000;
    report(
        1,
        "gradient correctness",
        verdict(ok),
        &format!(
            "100 cases, max rel err covariance {worst_cov:.2e} (< 1e-4), predictor {worst_pred:.2e} (< 1e-3) over {checked} checks of {n_params} params, {secs:.1} s"
        ),
    );
}

// ---------------------------------------------------------------- 2

#[test]
fn c02_fit_round_trip() {
    let t0 = Instant::now();
    let shape = GridShape::pixels(96, 96);
    let cfg = FitConfig::default();
    let (mut worst_mean, mut worst_sigma, mut worst_theta) = (0.0f64, 0.0f64, 0.0f64);
    let mut failures = 0;
    for case in 0..500u64 {
        let mut r = seeded(derive_seed(2, &[case]));
        let maj: f64 = r.random_range(1.5..8.0);
        let ratio = r.random_range(1.0..=(maj / 1.5).min(4.0));
        let truth = CovarianceDecomposition::new(r.random_range(-FRAC_PI_2..FRAC_PI_2), maj, maj / ratio).unwrap();
        let mean = Point::new(r.random_range(45.0..51.0), r.random_range(45.0..51.0));
        let g = AnisotropicGaussian::new(mean, truth, r.random_range(50.0..200.0)).unwrap();
        let h = render_anisotropic(&g, shape).unwrap();
        let Ok(fit) = fit_gaussian(&h, &cfg) else {
            failures += 1;
            continue;
        };
        let d = fit.gaussian.decomp;
        worst_mean = worst_mean.max(point_error(mean, fit.gaussian.mean));
        worst_sigma = worst_sigma.max(rel_err(d.sigma_maj, truth.sigma_maj, 0.0)).max(rel_err(d.sigma_min, truth.sigma_min, 0.0));
        // θ is undefined for (near) circles.
        if truth.ratio() > 1.02 {
            worst_theta = worst_theta.max(axial_diff_deg(d.theta_deg(), truth.theta_deg()));
        }
    }

    // Impulse outliers at peak magnitude.
    let mut worst_robust = 0.0f64;
    for case in 0..20u64 {
        let mut r = seeded(derive_seed(2, &[1000 + case]));
        let truth = CovarianceDecomposition::new(r.random_range(-1.5..1.5), r.random_range(2.0..6.0), 1.5).unwrap();
        let mean = Point::new(r.random_range(40.0..56.0), r.random_range(40.0..56.0));
        let mut h = render_anisotropic(&AnisotropicGaussian::new(mean, truth, 100.0).unwrap(), shape).unwrap();
        let peak = h.max_value();
        for _ in 0..5 {
            let (x, y) = (r.random_range(0..96), r.random_range(0..96));
            h.set(x, y, peak);
        }
        match fit_gaussian(&h, &cfg) {
            Ok(f) => worst_robust = worst_robust.max(point_error(mean, f.gaussian.mean)),
            Err(_) => worst_robust = f64::INFINITY,
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    let ok = failures == 0 && worst_mean < 0.01 && worst_sigma < 0.01 && worst_theta < 0.5 && worst_robust < 0.1 && secs < 60.0;
    report(
        2,
        "fit round trip",
        verdict(ok),
        &format!(
            "500 draws: {failures} failed, max mean err {worst_mean:.1e} px, max sigma rel err {worst_sigma:.1e}, max theta err {worst_theta:.1e} deg; 5 impulses: max mean err {worst_robust:.3} px; {secs:.1} s"
        ),
    );
}

// ---------------------------------------------------------------- 3

#[test]
fn c03_closed_form_equilibrium() {
    let t0 = Instant::now();
    let sample = Sample {
        id: "eq".into(),
        image: HeatmapGrid::zeros(GridShape::pixels(64, 64)),
        landmarks: vec![Point::new(32.0, 32.0)],
    };
    let data = Dataset {
        landmark_count: 1,
        samples: vec![sample],
    };
    let cfg = TrainConfig {
        predictor: PredictorKind::Zero,
        iterations: 3000,
        learning_rate: 1e-3,
        batch_size: 1,
        gamma: 100.0,
        alpha: 5.0,
        ..TrainConfig::default()
    };
    let m = train(&data, &cfg).unwrap();
    let p = m.target_decomps[0].product();
    let expected = 100.0 / (2.0 * (PI * 5.0).sqrt());
    let secs = t0.elapsed().as_secs_f64();
    let ok = (p / expected - 1.0).abs() < 0.05 && secs < 120.0;
    report(
        3,
        "closed-form sigma equilibrium",
        verdict(ok),
        &format!("sigma_maj*sigma_min = {p:.3}, closed form {expected:.3} ({:+.2}%), {secs:.1} s", 100.0 * (p / expected - 1.0)),
    );
}

// ---------------------------------------------------------------- 4, 6

const TRAIN_ITERATIONS: usize = 2000;

struct Trained {
    model: TrainedModel,
    held_out: Dataset,
    secs: f64,
}

/// The synthetic model shared by criteria 4 and 6.
fn trained() -> &'static Trained {
    static CELL: OnceLock<Trained> = OnceLock::new();
    CELL.get_or_init(|| {
        let t0 = Instant::now();
        let data = generate(&SynthConfig::default()).unwrap();
        let cfg = TrainConfig {
            iterations: TRAIN_ITERATIONS,
            ..TrainConfig::default()
        };
        let model = train(&data.dataset, &cfg).unwrap();
        let held_out = generate(&SynthConfig {
            seed: 777,
            num_images: 40,
            ..SynthConfig::default()
        })
        .unwrap()
        .dataset;
        Trained {
            model,
            held_out,
            secs: t0.elapsed().as_secs_f64(),
        }
    })
}

#[test]
fn c04_synthetic_uncertainty_recovery() {
    let t = trained();
    let t0 = Instant::now();
    let learned: Vec<CovarianceDecomposition> = t.model.target_decomps.iter().map(|d| d.canonical()).collect();
    let (aniso, iso) = (learned[0], learned[1]);

    let fit = FitConfig::default();
    let mut fitted: Vec<Vec<CovarianceDecomposition>> = vec![Vec::new(); t.model.landmarks];
    let mut fit_failures = 0;
    for s in &t.held_out.samples {
        let maps = hmuq_core::trainer::predict(&t.model, &s.image, false, 0).unwrap();
        for (l, h) in maps.iter().enumerate() {
            match sample_uncertainty(h, &fit) {
                Ok(p) => fitted[l].push(p.covariance),
                Err(_) => fit_failures += 1,
            }
        }
    }
    let a = aggregate_stats(&fitted[0]).unwrap();
    let b = aggregate_stats(&fitted[1]).unwrap();
    let secs = t.secs + t0.elapsed().as_secs_f64();

    let learned_ok = aniso.ratio() > 1.8 && axial_diff_deg(aniso.theta_deg(), 30.0) <= 15.0 && iso.ratio() < 1.3;
    let fitted_ok = a.ratio_mean > 1.8 && axial_diff_deg(a.theta_mean_deg, 30.0) <= 15.0 && b.ratio_mean < 1.3;
    report(
        4,
        "synthetic uncertainty recovery",
        verdict(learned_ok && fitted_ok && secs <= 900.0),
        &format!(
            "learned L0 ratio {:.2} theta {:.1} deg, L1 ratio {:.2}; held-out fit (n={}) L0 ratio {:.2} theta {:.1} deg, L1 ratio {:.2}; {} fit failures; {TRAIN_ITERATIONS} iterations, {secs:.0} s",
            aniso.ratio(),
            aniso.theta_deg(),
            iso.ratio(),
            a.n,
            a.ratio_mean,
            a.theta_mean_deg,
            b.ratio_mean,
            fit_failures
        ),
    );
}

#[test]
fn c06_mcd_underestimation() {
    let t = trained();
    assert_eq!(t.model.config.dropout_rate, 0.1);
    let fit = FitConfig::default();
    let lc = t.model.landmarks;
    let mut max_products: Vec<Vec<CovarianceDecomposition>> = vec![Vec::new(); lc];
    let mut fit_products: Vec<Vec<CovarianceDecomposition>> = vec![Vec::new(); lc];
    for (i, s) in t.held_out.samples.iter().take(20).enumerate() {
        let cfg = McdConfig {
            k: 20,
            seed: derive_seed(6, &[i as u64]),
        };
        for (l, maps) in mcd_heatmaps(&t.model, &s.image, &cfg).unwrap().iter().enumerate() {
            max_products[l].push(mcd_max(maps).unwrap().covariance);
            if let Ok(p) = mcd_heatmap_fit(maps, &fit) {
                fit_products[l].push(p.covariance);
            }
        }
    }
    let mut ok = true;
    let mut parts = Vec::new();
    for l in 0..lc {
        let m = aggregate_stats(&max_products[l]).unwrap().product_mean;
        let f = aggregate_stats(&fit_products[l]).map(|a| a.product_mean).unwrap_or(f64::NAN);
        ok &= m < f;
        parts.push(format!("L{l} {m:.3} < {f:.3}"));
    }
    report(
        6,
        "MCD underestimation (max vs heatmap fit, px^2)",
        verdict(ok),
        &format!("K=20, dropout 0.1, 20 held-out images: {}", parts.join(", ")),
    );
}

// ---------------------------------------------------------------- 5

#[test]
fn c05_inter_observer_reproduction() {
    let t0 = Instant::now();
    let Ok(path) = std::env::var("HMUQ_INTEROBS_MANIFEST") else {
        report(
            5,
            "inter-observer reproduction",
            Outcome::Unverified,
            "released 11-observer annotations not available offline; set HMUQ_INTEROBS_MANIFEST to a dataset manifest with an observers table (landmarks L1..L5 as ids 0..4)",
        );
        return;
    };
    let manifest = io::load_manifest(std::path::Path::new(&path)).unwrap();
    let ann = io::load_observers(&manifest, manifest.observers.as_ref().expect("manifest lacks observers")).unwrap();
    let stats: BTreeMap<usize, _> = inter_observer_stats(&ann).unwrap().into_iter().collect();
    let (l1, l4) = (stats[&0], stats[&3]);
    let secs = t0.elapsed().as_secs_f64();
    let ok = ann.len() == 5500
        && (l1.ratio_mean - 2.57).abs() <= 0.05
        && (l1.product_mean - 0.37).abs() <= 0.02
        && (l1.theta_mean_deg - 39.33).abs() <= 1.0
        && (l4.ratio_mean - 1.11).abs() <= 0.05
        && (l4.product_mean - 0.26).abs() <= 0.02
        && secs < 10.0;
    report(
        5,
        "inter-observer reproduction",
        verdict(ok),
        &format!(
            "{} rows; L1 ratio {:.2} product {:.2} theta {:.2} (2.57, 0.37, 39.33); L4 ratio {:.2} product {:.2} (1.11, 0.26); {secs:.1} s",
            ann.len(),
            l1.ratio_mean,
            l1.product_mean,
            l1.theta_mean_deg,
            l4.ratio_mean,
            l4.product_mean
        ),
    );
}

// ---------------------------------------------------------------- 7

fn random_ceph(seed: u64) -> LandmarkMap {
    let mut r = seeded(seed);
    (0..19).map(|i| (i, Point::new(r.random_range(0.0..200.0), r.random_range(0.0..200.0)))).collect()
}

#[test]
fn c07_clinical_properties() {
    let set = MeasurementSet::default_set();
    let zero = CovarianceDecomposition {
        theta: 0.0,
        sigma_maj: 0.0,
        sigma_min: 0.0,
    };
    let mut point_mass_ok = true;
    let mut checked = 0;
    for case in 0..20u64 {
        let lm = random_ceph(derive_seed(7, &[case]));
        let beliefs: BTreeMap<usize, LandmarkBelief> = lm.iter().map(|(&i, &p)| (i, LandmarkBelief { mean: p, cov: zero })).collect();
        for def in &set.defs {
            let Ok(v) = evaluate_measurement(&lm, def) else { continue };
            let res = mc_classify(&beliefs, def, 50, case).unwrap();
            point_mass_ok &= res.entropy_nats == 0.0 && res.hard_label() == classify(v, &def.thresholds).unwrap();
            checked += 1;
        }
    }

    // A right angle with its free arm end spread isotropically straddles the
    // 90 degree breakpoint symmetrically.
    let thresholds = ClassThresholds::new(vec![90.0], vec!["acute".into(), "obtuse".into()]).unwrap();
    let def = MeasurementDef::new("right", "angle(#0, #1, #2)", &BTreeMap::new(), thresholds).unwrap();
    let mut beliefs = BTreeMap::new();
    beliefs.insert(0, LandmarkBelief { mean: Point::new(10.0, 0.0), cov: zero });
    beliefs.insert(1, LandmarkBelief { mean: Point::new(0.0, 0.0), cov: zero });
    beliefs.insert(
        2,
        LandmarkBelief {
            mean: Point::new(0.0, 10.0),
            cov: CovarianceDecomposition::isotropic(1.0).unwrap(),
        },
    );
    let h = mc_classify(&beliefs, &def, 100_000, 7).unwrap().entropy_nats;

    let (_, cases) = synthetic_clinical_experiment(&ClinicalExperiment::default()).unwrap();
    let curve = accuracy_uncertainty_curve(&cases).unwrap();
    let half = curve[curve.len() / 2 - 1];
    let full = *curve.last().unwrap();

    let ok = point_mass_ok && checked > 100 && (h - LN_2).abs() <= 0.02 && half.accuracy_percent >= full.accuracy_percent;
    report(
        7,
        "clinical properties",
        verdict(ok),
        &format!(
            "point mass: {checked} evaluations, entropy 0 and deterministic class {}; breakpoint entropy {h:.4} vs ln 2 = {LN_2:.4}; accuracy lowest-entropy half {:.1}% vs all {:.1}%",
            if point_mass_ok { "held" } else { "VIOLATED" },
            half.accuracy_percent,
            full.accuracy_percent
        ),
    );
}

// ---------------------------------------------------------------- 8

#[test]
fn c08_metric_invariants() {
    let mut r = seeded(8);
    let mut sdr_ok = true;
    for _ in 0..200 {
        let n = r.random_range(1..50);
        let errors: Vec<f64> = (0..n).map(|_| r.random_range(0.0..10.0)).collect();
        let mut radii: Vec<f64> = (0..10).map(|_| r.random_range(0.01..12.0)).collect();
        radii.sort_by(f64::total_cmp);
        let v: Vec<f64> = radii.iter().map(|&rad| sdr(&errors, rad).unwrap()).collect();
        sdr_ok &= v.windows(2).all(|w| w[0] <= w[1]);
    }

    let mut pe_ok = true;
    for _ in 0..1000 {
        let mut p = || Point::new(r.random_range(-100.0..100.0), r.random_range(-100.0..100.0));
        let (a, b, c) = (p(), p(), p());
        pe_ok &= point_error(a, b) == point_error(b, a);
        pe_ok &= point_error(a, c) <= point_error(a, b) + point_error(b, c) + 1e-12;
        pe_ok &= point_error(a, a) == 0.0;
    }

    // Angle-valued and ratio measurements from the shipped table.
    let set = MeasurementSet::default_set();
    let invariant: Vec<&MeasurementDef> = set.defs.iter().filter(|d| d.name != "MW").collect();
    let mut worst = 0.0f64;
    for case in 0..1000u64 {
        let lm = random_ceph(derive_seed(8, &[case % 50]));
        let rot = r.random_range(-PI..PI);
        let scale = r.random_range(0.1..10.0);
        let shift = Point::new(r.random_range(-500.0..500.0), r.random_range(-500.0..500.0));
        let (c, s) = (rot.cos(), rot.sin());
        let moved: LandmarkMap = lm
            .iter()
            .map(|(&i, p)| (i, Point::new(scale * (c * p.x - s * p.y), scale * (s * p.x + c * p.y)) + shift))
            .collect();
        for def in &invariant {
            let (Ok(a), Ok(b)) = (evaluate_measurement(&lm, def), evaluate_measurement(&moved, def)) else { continue };
            // FHI is a dimensionless ratio; compare it relatively.
            let err = if def.name == "FHI" { (a - b).abs() / a.abs().max(1e-12) } else { (a - b).abs() };
            worst = worst.max(err);
        }
    }
    let ok = sdr_ok && pe_ok && worst < 1e-9;
    report(
        8,
        "metric invariants",
        verdict(ok),
        &format!(
            "SDR monotone: {sdr_ok}; PE symmetric + triangle on 1000 triples: {pe_ok}; max change over 1000 similarity transforms {worst:.1e} deg ({} measurements)",
            invariant.len()
        ),
    );
}

// ---------------------------------------------------------------- 9

#[test]
fn c09_eval_table_structure() {
    let cols: Vec<&str> = METRICS_HEADER.split(',').collect();
    // PE mean and SD, then SDR at 2, 2.5, 3 and 4 mm, as in the published
    // result tables; distribution statistics precede them.
    let pe_block = ["pe_mean", "pe_sd", "sdr_2", "sdr_2.5", "sdr_3", "sdr_4"];
    let start = cols.iter().position(|c| *c == "pe_mean").unwrap_or(usize::MAX);
    let block_ok = start != usize::MAX && cols[start..] == pe_block;
    let dist_ok = cols[1..7] == ["ratio_mean", "ratio_sd", "product_mean", "product_sd", "theta_mean_deg", "theta_sd_deg"];

    let errors = [0.5, 1.0, 2.0, 2.5, 3.5, 5.0];
    let row = MetricsRow::new("all", &[], &errors).unwrap();
    let csv = metrics_csv(&[row]);
    let cells: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
    let values_ok = cells.len() == cols.len()
        && cells[start + 2].parse::<f64>().unwrap() == 50.0
        && cells[start + 3].parse::<f64>().unwrap() == 400.0 / 6.0
        && cells[start + 5].parse::<f64>().unwrap() == 500.0 / 6.0
        && cells[1].is_empty();
    report(
        9,
        "eval table structure (full-scale numbers not targets)",
        verdict(block_ok && dist_ok && values_ok),
        "metrics.csv columns: landmark, ratio/product/theta mean+sd, pe_mean, pe_sd, sdr_2/2.5/3/4; hand PE 0.61 +- 0.67 mm and ceph PE 0.99 +- 1.07 mm need the full datasets and a stronger predictor and are not reproduced here",
    );
}

// ---------------------------------------------------------------- 10

#[test]
fn c10_determinism() {
    let run = || -> Vec<String> {
        let cfg = SynthConfig {
            num_images: 12,
            seed: 10,
            ..SynthConfig::default()
        };
        let s = generate(&cfg).unwrap();
        let rows: Vec<io::AnnotationRow> = s
            .dataset
            .samples
            .iter()
            .flat_map(|smp| {
                smp.landmarks.iter().enumerate().map(|(l, p)| io::AnnotationRow {
                    image_id: smp.id.clone(),
                    landmark_id: l,
                    observer_id: None,
                    x: p.x,
                    y: p.y,
                })
            })
            .collect();
        let model = train(
            &s.dataset,
            &TrainConfig {
                iterations: 15,
                seed: 3,
                ..TrainConfig::default()
            },
        )
        .unwrap();
        let fit = FitConfig::default();
        let mut decomps = vec![Vec::new(); 4];
        let mut errors = vec![Vec::new(); 4];
        let mut mcd = String::new();
        for (i, smp) in s.dataset.samples.iter().enumerate() {
            let maps = hmuq_core::trainer::predict(&model, &smp.image, false, 0).unwrap();
            for (l, h) in maps.iter().enumerate() {
                if let Ok(p) = sample_uncertainty(h, &fit) {
                    decomps[l].push(p.covariance);
                    errors[l].push(point_error(smp.landmarks[l], p.coord));
                }
            }
            let cfg = McdConfig {
                k: 3,
                seed: derive_seed(10, &[i as u64]),
            };
            for maps in mcd_heatmaps(&model, &smp.image, &cfg).unwrap() {
                let m = mcd_max(&maps).unwrap();
                mcd.push_str(&format!("{},{},{}\n", m.coord.x, m.coord.y, m.covariance.product()));
            }
        }
        let metrics: Vec<MetricsRow> = (0..4).map(|l| MetricsRow::new(l.to_string(), &decomps[l], &errors[l]).unwrap()).collect();
        let (_, cases) = synthetic_clinical_experiment(&ClinicalExperiment {
            images: 30,
            samples_per_image: 300,
            ..ClinicalExperiment::default()
        })
        .unwrap();
        let curve = accuracy_uncertainty_curve(&cases).unwrap();
        let loss: String = model.loss_trace.iter().map(|v| format!("{v}\n")).collect();
        vec![
            io::annotations_csv(&rows),
            loss,
            metrics_csv(&metrics),
            mcd,
            hmuq_core::clinical::curve_csv(&curve),
        ]
    };
    let t0 = Instant::now();
    let (a, b) = (run(), run());
    let same = a.iter().zip(&b).filter(|(x, y)| x == y).count();
    report(
        10,
        "determinism",
        verdict(same == a.len()),
        &format!(
            "{same}/{} CSV outputs byte-identical across reruns (annotations, loss trace, metrics, MCD, clinical curve); {:.1} s",
            a.len(),
            t0.elapsed().as_secs_f64()
        ),
    );
}
