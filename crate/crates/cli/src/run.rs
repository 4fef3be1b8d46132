use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{anyhow, bail, Context, Result};

use hmuq_core::clinical::{
    accuracy_uncertainty_curve, curve_csv, evaluate_measurement, mc_classify, synthetic_clinical_experiment, ClassificationResult,
    ClinicalCase, ClinicalExperiment, LandmarkBelief, LandmarkMap, MeasurementDef, MeasurementSet,
};
use hmuq_core::config::{write_kv, KvConfig};
use hmuq_core::heatmapfit::{argmax_coord, fit_gaussian, FitConfig};
use hmuq_core::io::{self, pgm, table_csv, LoadedDataset, Table};
use hmuq_core::metrics::{aggregate_stats, inter_observer_stats, metrics_csv, point_error, MetricsRow};
use hmuq_core::plot::{self, PlotKind, PlotOptions, PlotSpec};
use hmuq_core::rng::derive_seed;
use hmuq_core::synth::{self, SynthConfig};
use hmuq_core::trainer::{checkpoint, predict, train, TargetMode, TrainConfig, TrainedModel};
use hmuq_core::uncertainty::{mcd_heatmap_fit, mcd_heatmaps, mcd_max, sample_uncertainty, McdConfig};
use hmuq_core::{CovarianceDecomposition, HeatmapGrid, Point};

use crate::{Command, Common};

struct Log(bool);

impl Log {
    fn say(&self, msg: impl AsRef<str>) {
        if !self.0 {
            eprintln!("{}", msg.as_ref());
        }
    }
}

fn kv(c: &Common) -> Result<KvConfig> {
    let mut cfg = match &c.config {
        Some(p) => KvConfig::load(p)?,
        None => KvConfig::parse("", "<defaults>")?,
    };
    for s in &c.sets {
        let (k, v) = s.split_once('=').ok_or_else(|| anyhow!("--set expects KEY=VALUE, got `{s}`"))?;
        cfg.set(k.trim(), v.trim());
    }
    Ok(cfg)
}

fn out_dir(c: &Common) -> Result<&Path> {
    std::fs::create_dir_all(&c.out).with_context(|| format!("creating {}", c.out.display()))?;
    Ok(&c.out)
}

fn manifest_path(p: &Path) -> PathBuf {
    if p.is_dir() {
        p.join("manifest.txt")
    } else {
        p.to_path_buf()
    }
}

fn load_model(p: &Path) -> Result<TrainedModel> {
    let path = if p.is_dir() { p.join("model.ckpt") } else { p.to_path_buf() };
    Ok(checkpoint::load(&path)?)
}

fn load_data(p: &Path, log: &Log) -> Result<LoadedDataset> {
    let d = io::load_dataset(&manifest_path(p))?;
    log.say(format!("loaded {} images, {} landmarks", d.dataset.samples.len(), d.dataset.landmark_count));
    Ok(d)
}

fn write(dir: &Path, name: &str, text: &str) -> Result<()> {
    Ok(io::write_text(&dir.join(name), text)?)
}

fn decomp_cells(d: &CovarianceDecomposition) -> [String; 3] {
    [d.theta_deg().to_string(), d.sigma_maj.to_string(), d.sigma_min.to_string()]
}

fn scaled(d: &CovarianceDecomposition, s: f64) -> CovarianceDecomposition {
    CovarianceDecomposition {
        sigma_maj: d.sigma_maj * s,
        sigma_min: d.sigma_min * s,
        ..*d
    }
}

/// Settings shared by the prediction subcommands: `fit.*`, `mcd.k`, `seed`.
struct PredictSettings {
    fit: FitConfig,
    mcd: McdConfig,
}

fn predict_settings(c: &Common, k: Option<usize>) -> Result<PredictSettings> {
    let cfg = kv(c)?;
    let mut r = cfg.reader();
    let mut fit = FitConfig::default();
    fit.read_kv(&mut r)?;
    let mut mcd = McdConfig::default();
    r.set("mcd.k", &mut mcd.k)?;
    r.set("seed", &mut mcd.seed)?;
    r.finish()?;
    fit.validate()?;
    if let Some(k) = k {
        mcd.k = k;
    }
    if let Some(s) = c.seed {
        mcd.seed = s;
    }
    Ok(PredictSettings { fit, mcd })
}

/// A landmark estimate; `cov` is `None` when no Gaussian could be fitted.
#[derive(Clone, Copy)]
struct Estimate {
    coord: Point,
    cov: Option<CovarianceDecomposition>,
}

fn fit_or_argmax(h: &HeatmapGrid, fit: &FitConfig) -> Estimate {
    match sample_uncertainty(h, fit) {
        Ok(p) => Estimate {
            coord: p.coord,
            cov: Some(p.covariance),
        },
        Err(_) => Estimate {
            coord: argmax_coord(h),
            cov: None,
        },
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Method {
    Fit,
    McdMax,
    McdHeatmapFit,
}

impl std::str::FromStr for Method {
    type Err = anyhow::Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "fit" => Method::Fit,
            "mcd_max" => Method::McdMax,
            "mcd_heatmap_fit" => Method::McdHeatmapFit,
            _ => bail!("unknown method `{s}` (expected fit, mcd_max or mcd_heatmap_fit)"),
        })
    }
}

/// Per-landmark estimates for image `index`.
fn estimate_image(model: &TrainedModel, image: &HeatmapGrid, index: usize, method: Method, s: &PredictSettings) -> Result<Vec<Estimate>> {
    if method == Method::Fit {
        let maps = predict(model, image, false, 0)?;
        return Ok(maps.iter().map(|h| fit_or_argmax(h, &s.fit)).collect());
    }
    let cfg = McdConfig {
        k: s.mcd.k,
        seed: derive_seed(s.mcd.seed, &[index as u64]),
    };
    mcd_heatmaps(model, image, &cfg)?
        .iter()
        .map(|maps| {
            let p = if method == Method::McdMax { mcd_max(maps) } else { mcd_heatmap_fit(maps, &s.fit) };
            Ok(match p {
                Ok(p) => Estimate {
                    coord: p.coord,
                    cov: Some(p.covariance),
                },
                Err(_) => fit_or_argmax(&hmuq_core::uncertainty::mean_heatmap(maps)?, &s.fit),
            })
        })
        .collect()
}

fn estimate_cells(e: &Estimate) -> Vec<String> {
    let mut v = vec![e.coord.x.to_string(), e.coord.y.to_string()];
    match &e.cov {
        Some(d) => v.extend(decomp_cells(d)),
        None => v.extend(["", "", ""].map(String::from)),
    }
    v
}

pub fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Synth { common } => cmd_synth(&common),
        Command::Train { common, data, mode } => cmd_train(&common, &data, mode.as_deref()),
        Command::Predict { common, model, data } => cmd_predict(&common, &model, &data),
        Command::Fit { common, heatmaps } => cmd_fit(&common, &heatmaps),
        Command::Mcd { common, model, data, k } => cmd_mcd(&common, &model, &data, k),
        Command::Eval {
            common,
            model,
            data,
            method,
            k,
        } => cmd_eval(&common, &model, &data, method.parse()?, k),
        Command::Interobs { common, data } => cmd_interobs(&common, &data),
        Command::Clinical {
            common,
            model,
            data,
            measurements,
            synthetic,
        } => {
            if synthetic {
                cmd_clinical_synthetic(&common)
            } else {
                let (m, d) = model.zip(data).ok_or_else(|| anyhow!("clinical needs --model and --data, or --synthetic"))?;
                cmd_clinical(&common, &m, &d, measurements.as_deref())
            }
        }
        Command::Plot {
            common,
            kind,
            input,
            scale,
            image_id,
            data,
            title,
            no_timestamp,
        } => {
            let spec = PlotSpec {
                kind: kind.parse()?,
                ellipse_scale: scale,
            };
            spec.validate()?;
            let opts = PlotOptions {
                title,
                timestamp: (!no_timestamp).then(timestamp),
            };
            cmd_plot(&common, &spec, &input, image_id.as_deref(), data.as_deref(), &opts)
        }
    }
}

fn timestamp() -> String {
    let secs = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    format!("unix time {secs}")
}

fn cmd_synth(c: &Common) -> Result<()> {
    let log = Log(c.quiet);
    let kv = kv(c)?;
    let mut cfg = SynthConfig::default();
    let mut r = kv.reader();
    cfg.read_kv(&mut r)?;
    r.finish()?;
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    let s = synth::generate(&cfg)?;
    let dir = out_dir(c)?;
    io::write_dataset(dir, &s.dataset, &vec![1.0; s.dataset.samples.len()], Some(&s.truth))?;
    let rows: Vec<Vec<String>> = s
        .injected
        .iter()
        .enumerate()
        .map(|(l, d)| {
            let mut v = vec![l.to_string()];
            v.extend(decomp_cells(d));
            v
        })
        .collect();
    write(dir, "injected.csv", &table_csv(&["landmark_id", "theta_deg", "sigma_maj_px", "sigma_min_px"], &rows))?;
    write(dir, "synth_config.txt", &write_kv(&cfg.to_pairs()))?;
    log.say(format!("wrote {} images to {}", cfg.num_images, dir.display()));
    Ok(())
}

fn cmd_train(c: &Common, data: &Path, mode: Option<&str>) -> Result<()> {
    let log = Log(c.quiet);
    let kv = kv(c)?;
    let mut cfg = TrainConfig::default();
    let mut r = kv.reader();
    cfg.read_kv(&mut r)?;
    r.finish()?;
    if let Some(m) = mode {
        cfg.target_mode = m.parse::<TargetMode>().map_err(|e| anyhow!(e))?;
    }
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    let d = load_data(data, &log)?;
    log.say(format!("training {} for {} iterations", cfg.target_mode, cfg.iterations));
    let model = train(&d.dataset, &cfg)?;
    let dir = out_dir(c)?;
    checkpoint::save(&model, &dir.join("model.ckpt"))?;
    write(dir, "train_config.txt", &cfg.to_kv_string())?;
    let loss: Vec<Vec<String>> = model
        .loss_trace
        .iter()
        .enumerate()
        .map(|(i, l)| vec![i.to_string(), l.to_string()])
        .collect();
    write(dir, "loss.csv", &table_csv(&["iteration", "loss"], &loss))?;
    let sig: Vec<Vec<String>> = model
        .target_decomps
        .iter()
        .enumerate()
        .map(|(l, d)| {
            let d = d.canonical();
            let mut v = vec![l.to_string()];
            v.extend(decomp_cells(&d));
            v.push(d.ratio().to_string());
            v.push(d.product().to_string());
            v
        })
        .collect();
    write(
        dir,
        "target_sigma.csv",
        &table_csv(&["landmark_id", "theta_deg", "sigma_maj_px", "sigma_min_px", "ratio", "product_px2"], &sig),
    )?;
    if let Some(last) = model.loss_trace.last() {
        log.say(format!("final loss {last:.4}; model written to {}", dir.display()));
    }
    Ok(())
}

const PRED_HEADER: [&str; 7] = ["image_id", "landmark_id", "x_px", "y_px", "theta_deg", "sigma_maj_px", "sigma_min_px"];

fn cmd_predict(c: &Common, model: &Path, data: &Path) -> Result<()> {
    let log = Log(c.quiet);
    let s = predict_settings(c, None)?;
    let model = load_model(model)?;
    let d = load_data(data, &log)?;
    let mut rows = Vec::new();
    for (i, sample) in d.dataset.samples.iter().enumerate() {
        for (l, e) in estimate_image(&model, &sample.image, i, Method::Fit, &s)?.iter().enumerate() {
            let mut v = vec![sample.id.clone(), l.to_string()];
            v.extend(estimate_cells(e));
            rows.push(v);
        }
    }
    let dir = out_dir(c)?;
    write(dir, "predictions.csv", &table_csv(&PRED_HEADER, &rows))?;
    log.say(format!("wrote {} predictions", rows.len()));
    Ok(())
}

fn cmd_fit(c: &Common, heatmaps: &[PathBuf]) -> Result<()> {
    let log = Log(c.quiet);
    let s = predict_settings(c, None)?;
    let mut rows = Vec::new();
    for p in heatmaps {
        let h = pgm::read(p, 1.0)?;
        let f = fit_gaussian(&h, &s.fit).with_context(|| format!("fitting {}", p.display()))?;
        let g = f.gaussian;
        let mut v = vec![p.display().to_string(), g.mean.x.to_string(), g.mean.y.to_string()];
        v.extend(decomp_cells(&g.decomp));
        v.extend([
            g.amplitude.to_string(),
            f.converged.to_string(),
            f.iterations.to_string(),
            f.residual_norm.to_string(),
        ]);
        rows.push(v);
    }
    let header = [
        "file",
        "x_px",
        "y_px",
        "theta_deg",
        "sigma_maj_px",
        "sigma_min_px",
        "amplitude",
        "converged",
        "iterations",
        "residual_norm",
    ];
    write(out_dir(c)?, "fits.csv", &table_csv(&header, &rows))?;
    log.say(format!("fitted {} heatmaps", rows.len()));
    Ok(())
}

fn cmd_mcd(c: &Common, model: &Path, data: &Path, k: Option<usize>) -> Result<()> {
    let log = Log(c.quiet);
    let s = predict_settings(c, k)?;
    s.mcd.validate()?;
    let model = load_model(model)?;
    let d = load_data(data, &log)?;
    let mut rows = Vec::new();
    let mut products: BTreeMap<(usize, &str), Vec<CovarianceDecomposition>> = BTreeMap::new();
    for (i, sample) in d.dataset.samples.iter().enumerate() {
        let cfg = McdConfig {
            k: s.mcd.k,
            seed: derive_seed(s.mcd.seed, &[i as u64]),
        };
        for (l, maps) in mcd_heatmaps(&model, &sample.image, &cfg)?.iter().enumerate() {
            let results = [("mcd_max", mcd_max(maps)), ("mcd_heatmap_fit", mcd_heatmap_fit(maps, &s.fit))];
            for (name, p) in results {
                let mut v = vec![sample.id.clone(), l.to_string(), name.to_string()];
                match p {
                    Ok(p) => {
                        v.extend(estimate_cells(&Estimate {
                            coord: p.coord,
                            cov: Some(p.covariance),
                        }));
                        v.push(p.covariance.product().to_string());
                        products.entry((l, name)).or_default().push(p.covariance);
                    }
                    Err(e) => {
                        log.say(format!("{} landmark {l} {name}: {e}", sample.id));
                        v.extend(["", "", "", "", "", ""].map(String::from));
                    }
                }
                rows.push(v);
            }
        }
    }
    let dir = out_dir(c)?;
    let header = [
        "image_id",
        "landmark_id",
        "method",
        "x_px",
        "y_px",
        "theta_deg",
        "sigma_maj_px",
        "sigma_min_px",
        "product_px2",
    ];
    write(dir, "mcd.csv", &table_csv(&header, &rows))?;
    let mut summary = Vec::new();
    for ((l, name), ds) in &products {
        let a = aggregate_stats(ds)?;
        summary.push(vec![
            l.to_string(),
            name.to_string(),
            a.n.to_string(),
            a.product_mean.to_string(),
            a.product_sd.to_string(),
            a.ratio_mean.to_string(),
        ]);
    }
    write(
        dir,
        "mcd_summary.csv",
        &table_csv(&["landmark_id", "method", "n", "product_mean_px2", "product_sd_px2", "ratio_mean"], &summary),
    )?;
    log.say(format!("{} passes per image, {} images", s.mcd.k, d.dataset.samples.len()));
    Ok(())
}

/// Metrics rows (per landmark and `all`) in mm.
fn metric_rows(per_landmark: &[(Vec<CovarianceDecomposition>, Vec<f64>)]) -> Result<Vec<MetricsRow>> {
    let mut rows = Vec::new();
    let (mut all_d, mut all_e) = (Vec::new(), Vec::new());
    for (l, (ds, es)) in per_landmark.iter().enumerate() {
        rows.push(MetricsRow::new(l.to_string(), ds, es)?);
        all_d.extend_from_slice(ds);
        all_e.extend_from_slice(es);
    }
    rows.push(MetricsRow::new("all", &all_d, &all_e)?);
    Ok(rows)
}

fn cmd_eval(c: &Common, model: &Path, data: &Path, method: Method, k: Option<usize>) -> Result<()> {
    let log = Log(c.quiet);
    let s = predict_settings(c, k)?;
    if method != Method::Fit {
        s.mcd.validate()?;
    }
    let model = load_model(model)?;
    let d = load_data(data, &log)?;
    let lc = d.dataset.landmark_count;
    let mut vs_ann = vec![(Vec::new(), Vec::new()); lc];
    let mut vs_truth = vec![(Vec::new(), Vec::new()); lc];
    let mut rows = Vec::new();
    for (i, sample) in d.dataset.samples.iter().enumerate() {
        let sp = d.spacing[i];
        let est = estimate_image(&model, &sample.image, i, method, &s)?;
        for (l, e) in est.iter().enumerate() {
            let gt = sample.landmarks[l];
            let pe = point_error(gt, e.coord) * sp;
            vs_ann[l].1.push(pe);
            if let Some(cov) = &e.cov {
                vs_ann[l].0.push(scaled(cov, sp));
                vs_truth[l].0.push(scaled(cov, sp));
            }
            let mut v = vec![sample.id.clone(), l.to_string()];
            v.extend(estimate_cells(e));
            v.extend([gt.x.to_string(), gt.y.to_string(), pe.to_string()]);
            if let Some(t) = &d.truth {
                vs_truth[l].1.push(point_error(t[i][l], e.coord) * sp);
            }
            rows.push(v);
        }
    }
    let dir = out_dir(c)?;
    let mut header = PRED_HEADER.to_vec();
    header.extend(["gt_x_px", "gt_y_px", "pe_mm"]);
    write(dir, "predictions.csv", &table_csv(&header, &rows))?;
    write(dir, "metrics.csv", &metrics_csv(&metric_rows(&vs_ann)?))?;
    if d.truth.is_some() {
        write(dir, "metrics_truth.csv", &metrics_csv(&metric_rows(&vs_truth)?))?;
    }
    let fails = vs_ann.iter().map(|(ds, es)| es.len() - ds.len()).sum::<usize>();
    if fails > 0 {
        log.say(format!("{fails} estimates had no fitted covariance (argmax used)"));
    }
    log.say(format!("metrics written to {}", dir.join("metrics.csv").display()));
    Ok(())
}

fn cmd_interobs(c: &Common, data: &Path) -> Result<()> {
    let log = Log(c.quiet);
    let manifest = io::load_manifest(&manifest_path(data))?;
    let obs_path = manifest
        .observers
        .clone()
        .ok_or_else(|| anyhow!("manifest has no `observers` table"))?;
    let ann = io::load_observers(&manifest, &obs_path)?;
    log.say(format!("{} observer annotations", ann.len()));
    let rows: Vec<MetricsRow> = inter_observer_stats(&ann)?
        .into_iter()
        .map(|(l, stats)| MetricsRow {
            landmark: l.to_string(),
            stats: Some(stats),
            pe_mean: None,
            pe_sd: None,
            sdr: None,
        })
        .collect();
    write(out_dir(c)?, "interobs.csv", &metrics_csv(&rows))?;
    Ok(())
}

fn clinical_row(id: &str, name: &str, value: Option<f64>, r: &ClassificationResult, gt: usize) -> Vec<String> {
    vec![
        id.to_string(),
        name.to_string(),
        value.map(|v| v.to_string()).unwrap_or_default(),
        r.labels[gt].clone(),
        r.hard_label().to_string(),
        r.entropy_nats.to_string(),
        r.class_probs.iter().map(|p| p.to_string()).collect::<Vec<_>>().join(";"),
    ]
}

const CLINICAL_HEADER: [&str; 7] = ["image_id", "measurement", "value_gt", "gt_label", "pred_label", "entropy_nats", "class_probs"];

fn write_curve(dir: &Path, name: &str, cases: &[ClinicalCase]) -> Result<()> {
    let curve = accuracy_uncertainty_curve(cases)?;
    write(dir, &format!("curve_{name}.csv"), &curve_csv(&curve))?;
    let opts = PlotOptions {
        title: name.to_string(),
        timestamp: None,
    };
    write(dir, &format!("curve_{name}.svg"), &plot::accuracy_curve(&[(name.to_string(), curve)], &opts)?)
}

fn cmd_clinical_synthetic(c: &Common) -> Result<()> {
    let log = Log(c.quiet);
    let kv = kv(c)?;
    let mut r = kv.reader();
    let mut cfg = ClinicalExperiment::default();
    r.set("clinical.images", &mut cfg.images)?;
    r.set("clinical.samples", &mut cfg.samples_per_image)?;
    r.set("clinical.sigma_lo", &mut cfg.sigma_range.0)?;
    r.set("clinical.sigma_hi", &mut cfg.sigma_range.1)?;
    r.set("seed", &mut cfg.seed)?;
    r.finish()?;
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    let (def, cases) = synthetic_clinical_experiment(&cfg)?;
    let rows: Vec<Vec<String>> = cases
        .iter()
        .map(|k| clinical_row(&k.image_id, &def.name, None, &k.result, k.gt_class))
        .collect();
    let dir = out_dir(c)?;
    write(dir, "clinical.csv", &table_csv(&CLINICAL_HEADER, &rows))?;
    write_curve(dir, &def.name, &cases)?;
    log.say(format!("{} synthetic cases", cases.len()));
    Ok(())
}

fn cmd_clinical(c: &Common, model: &Path, data: &Path, measurements: Option<&Path>) -> Result<()> {
    let log = Log(c.quiet);
    let kv = kv(c)?;
    let mut r = kv.reader();
    let mut fit = FitConfig::default();
    fit.read_kv(&mut r)?;
    let mut samples = 2000usize;
    let mut seed = 0u64;
    r.set("clinical.samples", &mut samples)?;
    r.set("seed", &mut seed)?;
    r.finish()?;
    if let Some(s) = c.seed {
        seed = s;
    }
    let set = match measurements {
        Some(p) => MeasurementSet::load(p)?,
        None => MeasurementSet::default_set(),
    };
    let model = load_model(model)?;
    let d = load_data(data, &log)?;
    let lc = d.dataset.landmark_count;
    let defs: Vec<&MeasurementDef> = set.defs.iter().filter(|m| m.landmarks().iter().all(|&l| l < lc)).collect();
    for m in set.defs.iter().filter(|m| !defs.contains(m)) {
        log.say(format!("skipping {}: needs landmarks beyond {lc}", m.name));
    }
    if defs.is_empty() {
        bail!("no measurement applies to a dataset with {lc} landmarks");
    }
    let mut cases: Vec<Vec<ClinicalCase>> = vec![Vec::new(); defs.len()];
    let mut rows = Vec::new();
    for (i, sample) in d.dataset.samples.iter().enumerate() {
        let sp = d.spacing[i];
        let maps = predict(&model, &sample.image, false, 0)?;
        let beliefs: BTreeMap<usize, LandmarkBelief> = maps
            .iter()
            .enumerate()
            .map(|(l, h)| {
                let e = fit_or_argmax(h, &fit);
                let cov = e.cov.map_or(CovarianceDecomposition { theta: 0.0, sigma_maj: 0.0, sigma_min: 0.0 }, |d| scaled(&d, sp));
                (l, LandmarkBelief { mean: e.coord.scale(sp), cov })
            })
            .collect();
        let gt: LandmarkMap = sample.landmarks.iter().enumerate().map(|(l, p)| (l, p.scale(sp))).collect();
        for (j, def) in defs.iter().enumerate() {
            let value = evaluate_measurement(&gt, def).with_context(|| format!("{} on {}", def.name, sample.id))?;
            let gt_class = def.thresholds.classify(value)?;
            let res = mc_classify(&beliefs, def, samples, derive_seed(seed, &[i as u64, j as u64]))?;
            rows.push(clinical_row(&sample.id, &def.name, Some(value), &res, gt_class));
            cases[j].push(ClinicalCase {
                image_id: sample.id.clone(),
                result: res,
                gt_class,
            });
        }
    }
    let dir = out_dir(c)?;
    write(dir, "clinical.csv", &table_csv(&CLINICAL_HEADER, &rows))?;
    for (def, cs) in defs.iter().zip(&cases) {
        write_curve(dir, &def.name, cs)?;
    }
    log.say(format!("classified {} measurements on {} images", defs.len(), d.dataset.samples.len()));
    Ok(())
}

fn predictions_table(path: &Path) -> Result<(Table, [usize; 7])> {
    let t = Table::read(path)?;
    let cols = PRED_HEADER.map(|h| t.column(h));
    let mut out = [0; 7];
    for (o, c) in out.iter_mut().zip(cols) {
        *o = c?;
    }
    Ok((t, out))
}

fn opt_cell(t: &Table, row: usize, col: usize) -> Result<Option<f64>> {
    if t.rows[row][col].is_empty() {
        Ok(None)
    } else {
        Ok(Some(t.get(row, col)?))
    }
}

fn cmd_plot(c: &Common, spec: &PlotSpec, inputs: &[PathBuf], image_id: Option<&str>, data: Option<&Path>, opts: &PlotOptions) -> Result<()> {
    let log = Log(c.quiet);
    let svg = match spec.kind {
        PlotKind::AccuracyCurve => {
            let mut series = Vec::new();
            for p in inputs {
                let t = Table::read(p)?;
                let (f, a) = (t.column("fraction")?, t.column("accuracy_percent")?);
                let pts = (0..t.rows.len())
                    .map(|i| {
                        Ok(hmuq_core::clinical::CurvePoint {
                            fraction: t.get(i, f)?,
                            accuracy_percent: t.get(i, a)?,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                let name = p.file_stem().map_or("curve".into(), |s| s.to_string_lossy().trim_start_matches("curve_").to_string());
                series.push((name, pts));
            }
            plot::accuracy_curve(&series, opts)?
        }
        PlotKind::OffsetScatter | PlotKind::SigmaVsError => {
            let mut by_landmark: BTreeMap<usize, Vec<(Point, Option<f64>, f64)>> = BTreeMap::new();
            for p in inputs {
                let (t, [_, lc, xc, yc, _, majc, minc]) = predictions_table(p)?;
                let (gx, gy, pe) = (t.column("gt_x_px")?, t.column("gt_y_px")?, t.column("pe_mm")?);
                for i in 0..t.rows.len() {
                    let off = Point::new(t.get::<f64>(i, xc)? - t.get::<f64>(i, gx)?, t.get::<f64>(i, yc)? - t.get::<f64>(i, gy)?);
                    let size = match (opt_cell(&t, i, majc)?, opt_cell(&t, i, minc)?) {
                        (Some(a), Some(b)) => Some((a * b).sqrt()),
                        _ => None,
                    };
                    by_landmark.entry(t.get(i, lc)?).or_default().push((off, size, t.get(i, pe)?));
                }
            }
            if spec.kind == PlotKind::OffsetScatter {
                let series: Vec<(String, Vec<Point>)> = by_landmark
                    .iter()
                    .map(|(l, v)| (format!("L{l}"), v.iter().map(|e| e.0).collect()))
                    .collect();
                plot::offset_scatter(&series, opts)?
            } else {
                let series: Vec<(String, Vec<(f64, f64)>)> = by_landmark
                    .iter()
                    .map(|(l, v)| (format!("L{l}"), v.iter().filter_map(|e| e.1.map(|s| (s, e.2))).collect()))
                    .collect();
                plot::sigma_vs_error(&series, "sqrt(sigma_maj sigma_min) (px)", opts)?
            }
        }
        PlotKind::EllipseOverlay => {
            let [input] = inputs else {
                bail!("ellipse_overlay takes exactly one --input");
            };
            let (t, [ic, _, xc, yc, tc, majc, minc]) = predictions_table(input)?;
            let id = match image_id {
                Some(id) => id.to_string(),
                None => t.rows.first().map(|r| r[ic].clone()).ok_or_else(|| anyhow!("{} has no rows", input.display()))?,
            };
            let mut lms = Vec::new();
            for i in (0..t.rows.len()).filter(|&i| t.rows[i][ic] == id) {
                let (Some(th), Some(a), Some(b)) = (opt_cell(&t, i, tc)?, opt_cell(&t, i, majc)?, opt_cell(&t, i, minc)?) else {
                    log.say(format!("row {} has no covariance; skipped", i + 2));
                    continue;
                };
                let d = CovarianceDecomposition {
                    theta: th.to_radians(),
                    sigma_maj: a,
                    sigma_min: b,
                };
                lms.push((Point::new(t.get(i, xc)?, t.get(i, yc)?), d));
            }
            if lms.is_empty() {
                bail!("no landmarks with covariance for image `{id}`");
            }
            let image = match data {
                Some(dp) => {
                    let m = io::load_manifest(&manifest_path(dp))?;
                    let e = m
                        .images
                        .iter()
                        .find(|e| e.id == id)
                        .ok_or_else(|| anyhow!("image `{id}` not in {}", dp.display()))?;
                    Some(pgm::read(&e.path, e.spacing)?)
                }
                None => None,
            };
            plot::ellipse_overlay(image.as_ref(), &lms, spec, opts)?
        }
    };
    let dir = out_dir(c)?;
    let path = dir.join(format!("{}.svg", spec.kind));
    write(dir, &format!("{}.svg", spec.kind), &svg)?;
    log.say(format!("wrote {}", path.display()));
    Ok(())
}
