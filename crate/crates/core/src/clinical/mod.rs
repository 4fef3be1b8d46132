//! Clinical measurements from landmarks, threshold classification, and
//! Monte-Carlo propagation of landmark uncertainty into class probabilities.

pub mod expr;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::gaussmath::{CovarianceDecomposition, GaussianSampler, Point};
use crate::rng::{self, derive_seed};

pub use expr::{parse_expr, Expr};

/// Default measurement table shipped with the crate.
pub const DEFAULT_MEASUREMENTS: &str = include_str!("../../data/wang2016_approx.cfg");

/// Ordered breakpoints and one more label than breakpoints. Intervals are
/// right-inclusive: label `i` covers `(b[i-1], b[i]]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassThresholds {
    pub breakpoints: Vec<f64>,
    pub labels: Vec<String>,
}

impl ClassThresholds {
    pub fn new(breakpoints: Vec<f64>, labels: Vec<String>) -> Result<Self> {
        if labels.len() != breakpoints.len() + 1 {
            return Err(Error::invalid(format!(
                "{} breakpoints need {} labels, got {}",
                breakpoints.len(),
                breakpoints.len() + 1,
                labels.len()
            )));
        }
        if breakpoints.iter().any(|b| !b.is_finite()) || breakpoints.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("breakpoints must be finite and strictly increasing"));
        }
        for (i, l) in labels.iter().enumerate() {
            if labels[..i].contains(l) {
                return Err(Error::invalid(format!("duplicate label `{l}`")));
            }
        }
        Ok(Self { breakpoints, labels })
    }

    /// Index of the label for `value`.
    pub fn classify(&self, value: f64) -> Result<usize> {
        if value.is_nan() {
            return Err(Error::UndefinedInput("cannot classify NaN".into()));
        }
        Ok(self.breakpoints.iter().take_while(|&&b| value > b).count())
    }
}

/// Label of `value`.
pub fn classify(value: f64, t: &ClassThresholds) -> Result<&str> {
    Ok(&t.labels[t.classify(value)?])
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementDef {
    pub name: String,
    pub source: String,
    pub expr: Expr,
    pub thresholds: ClassThresholds,
}

impl MeasurementDef {
    pub fn new(name: &str, source: &str, names: &BTreeMap<String, usize>, thresholds: ClassThresholds) -> Result<Self> {
        let expr = parse_expr(source, names).map_err(|e| Error::invalid(format!("measurement {name}: {e}")))?;
        Ok(Self {
            name: name.to_string(),
            source: source.to_string(),
            expr,
            thresholds,
        })
    }

    pub fn landmarks(&self) -> Vec<usize> {
        self.expr.landmarks().into_iter().collect()
    }
}

/// Landmark coordinates keyed by id.
pub type LandmarkMap = BTreeMap<usize, Point>;

pub fn evaluate_measurement(landmarks: &LandmarkMap, def: &MeasurementDef) -> Result<f64> {
    def.expr
        .eval(&|id| landmarks.get(&id).copied())
        .map_err(|e| match e {
            Error::MissingLandmark(m) => Error::MissingLandmark(format!("{m} (needed by {})", def.name)),
            other => other,
        })
}

/// Parsed measurement file: landmark names and measurement sections.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MeasurementSet {
    pub names: BTreeMap<String, usize>,
    pub defs: Vec<MeasurementDef>,
}

impl MeasurementSet {
    /// File syntax:
    ///
    /// ```text
    /// landmark <name> = <id>
    /// [<measurement>]
    /// expr = <expression>
    /// breakpoints = <b1>, <b2>, ...
    /// labels = <l0>, <l1>, ...
    /// ```
    pub fn parse(text: &str, path: impl Into<PathBuf>) -> Result<Self> {
        let path = path.into();
        let err = |line: usize, msg: String| Error::Parse {
            path: path.clone(),
            line,
            msg,
        };
        let mut names = BTreeMap::new();
        // (name, header line, key -> (value, line))
        let mut sections: Vec<(String, usize, BTreeMap<String, (String, usize)>)> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let ln = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest.strip_suffix(']').ok_or_else(|| err(ln, "unterminated section header".into()))?.trim();
                if name.is_empty() || sections.iter().any(|s| s.0 == name) {
                    return Err(err(ln, format!("empty or duplicate measurement name `{name}`")));
                }
                sections.push((name.to_string(), ln, BTreeMap::new()));
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| err(ln, format!("expected `key = value`, got `{line}`")))?;
            let (k, v) = (k.trim(), v.trim());
            if let Some(name) = k.strip_prefix("landmark ") {
                if !sections.is_empty() {
                    return Err(err(ln, "landmark names must precede measurement sections".into()));
                }
                let name = name.trim();
                let id: usize = v.parse().map_err(|_| err(ln, format!("bad landmark id `{v}`")))?;
                if names.insert(name.to_string(), id).is_some() {
                    return Err(err(ln, format!("landmark `{name}` defined twice")));
                }
                continue;
            }
            let Some(section) = sections.last_mut() else {
                return Err(err(ln, format!("`{k}` outside a measurement section")));
            };
            if !matches!(k, "expr" | "breakpoints" | "labels") {
                return Err(err(ln, format!("unknown key `{k}`")));
            }
            if section.2.insert(k.to_string(), (v.to_string(), ln)).is_some() {
                return Err(err(ln, format!("duplicate key `{k}`")));
            }
        }
        let mut defs = Vec::with_capacity(sections.len());
        for (name, header, keys) in sections {
            let get = |k: &str| keys.get(k).ok_or_else(|| err(header, format!("measurement {name} lacks `{k}`")));
            let (src, src_line) = get("expr")?;
            let (bps, bp_line) = get("breakpoints")?;
            let (labels, _) = get("labels")?;
            let breakpoints = crate::config::parse_list::<f64>(bps).map_err(|e| err(*bp_line, e))?;
            let labels: Vec<String> = labels.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect();
            let thresholds = ClassThresholds::new(breakpoints, labels).map_err(|e| err(*bp_line, e.to_string()))?;
            let def = MeasurementDef::new(&name, src, &names, thresholds).map_err(|e| err(*src_line, e.to_string()))?;
            defs.push(def);
        }
        Ok(Self { names, defs })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    /// The shipped approximate table.
    pub fn default_set() -> Self {
        Self::parse(DEFAULT_MEASUREMENTS, "wang2016_approx.cfg").expect("shipped measurement file parses")
    }

    pub fn get(&self, name: &str) -> Option<&MeasurementDef> {
        self.defs.iter().find(|d| d.name == name)
    }
}

/// Class probabilities from Monte-Carlo sampling.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassificationResult {
    pub labels: Vec<String>,
    pub class_probs: Vec<f64>,
    pub entropy_nats: f64,
    /// Index of the most probable label (first on ties).
    pub hard_class: usize,
}

impl ClassificationResult {
    pub fn from_counts(labels: &[String], counts: &[usize]) -> Self {
        let n: usize = counts.iter().sum();
        let class_probs: Vec<f64> = counts.iter().map(|&c| c as f64 / n as f64).collect();
        let mut hard_class = 0;
        for (i, &c) in counts.iter().enumerate() {
            if c > counts[hard_class] {
                hard_class = i;
            }
        }
        Self {
            labels: labels.to_vec(),
            entropy_nats: entropy(&class_probs),
            class_probs,
            hard_class,
        }
    }

    pub fn hard_label(&self) -> &str {
        &self.labels[self.hard_class]
    }
}

/// Shannon entropy in nats; zero-probability classes contribute nothing.
pub fn entropy(probs: &[f64]) -> f64 {
    let h: f64 = probs.iter().filter(|&&p| p > 0.0).map(|&p| -p * p.ln()).sum();
    h.max(0.0)
}

/// A landmark's predicted distribution. Zero extents are allowed (point mass).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LandmarkBelief {
    pub mean: Point,
    pub cov: CovarianceDecomposition,
}

impl From<&crate::gaussmath::AnisotropicGaussian> for LandmarkBelief {
    fn from(g: &crate::gaussmath::AnisotropicGaussian) -> Self {
        Self {
            mean: g.mean,
            cov: g.decomp,
        }
    }
}

/// Redraws allowed per Monte-Carlo sample before giving up.
pub const MAX_REDRAWS: usize = 100;

/// Samples every landmark independently `n` times, evaluates and classifies
/// each joint sample. Samples with degenerate geometry are redrawn.
pub fn mc_classify(pred: &BTreeMap<usize, LandmarkBelief>, def: &MeasurementDef, n: usize, seed: u64) -> Result<ClassificationResult> {
    if n == 0 {
        return Err(Error::invalid("mc_classify needs n >= 1"));
    }
    let ids = def.landmarks();
    let samplers: Vec<(usize, GaussianSampler)> = ids
        .iter()
        .map(|&id| {
            let b = pred.get(&id).ok_or_else(|| Error::MissingLandmark(format!("#{id} (needed by {})", def.name)))?;
            Ok((id, GaussianSampler::new(b.mean, &b.cov)))
        })
        .collect::<Result<_>>()?;
    let mut rng = rng::seeded(seed);
    let mut counts = vec![0usize; def.thresholds.labels.len()];
    let mut sample = LandmarkMap::new();
    for _ in 0..n {
        let mut tries = 0;
        let value = loop {
            sample.clear();
            for (id, s) in &samplers {
                sample.insert(*id, s.draw(&mut rng));
            }
            match evaluate_measurement(&sample, def) {
                Ok(v) => break v,
                Err(Error::DegenerateGeometry(msg)) => {
                    tries += 1;
                    if tries > MAX_REDRAWS {
                        return Err(Error::DegenerateGeometry(format!("{}: {MAX_REDRAWS} redraws exhausted ({msg})", def.name)));
                    }
                }
                Err(e) => return Err(e),
            }
        };
        counts[def.thresholds.classify(value)?] += 1;
    }
    Ok(ClassificationResult::from_counts(&def.thresholds.labels, &counts))
}

/// One image's classification with its reference label index.
#[derive(Debug, Clone, PartialEq)]
pub struct ClinicalCase {
    pub image_id: String,
    pub result: ClassificationResult,
    pub gt_class: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    /// Fraction of images considered, in `(0, 1]`.
    pub fraction: f64,
    pub accuracy_percent: f64,
}

/// Sorts by entropy (ties by image id) and reports the cumulative accuracy
/// of every prefix.
pub fn accuracy_uncertainty_curve(cases: &[ClinicalCase]) -> Result<Vec<CurvePoint>> {
    if cases.is_empty() {
        return Err(Error::UndefinedInput("no classification results".into()));
    }
    let mut order: Vec<&ClinicalCase> = cases.iter().collect();
    order.sort_by(|a, b| {
        a.result
            .entropy_nats
            .total_cmp(&b.result.entropy_nats)
            .then_with(|| a.image_id.cmp(&b.image_id))
    });
    let n = order.len() as f64;
    let mut correct = 0usize;
    Ok(order
        .iter()
        .enumerate()
        .map(|(i, c)| {
            if c.result.hard_class == c.gt_class {
                correct += 1;
            }
            CurvePoint {
                fraction: (i + 1) as f64 / n,
                accuracy_percent: 100.0 * correct as f64 / (i + 1) as f64,
            }
        })
        .collect())
}

/// Same as [`accuracy_uncertainty_curve`] but with separate result and
/// label lists.
pub fn accuracy_uncertainty_curve_from(ids: &[String], results: &[ClassificationResult], gt: &[usize]) -> Result<Vec<CurvePoint>> {
    if ids.len() != results.len() || results.len() != gt.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} ids, {} results, {} labels",
            ids.len(),
            results.len(),
            gt.len()
        )));
    }
    let cases: Vec<ClinicalCase> = ids
        .iter()
        .zip(results)
        .zip(gt)
        .map(|((id, r), &g)| ClinicalCase {
            image_id: id.clone(),
            result: r.clone(),
            gt_class: g,
        })
        .collect();
    accuracy_uncertainty_curve(&cases)
}

pub fn curve_csv(curve: &[CurvePoint]) -> String {
    let mut out = String::from("fraction,accuracy_percent\n");
    for p in curve {
        out.push_str(&format!("{},{}\n", p.fraction, p.accuracy_percent));
    }
    out
}

/// Settings of the synthetic clinical experiment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClinicalExperiment {
    pub images: usize,
    pub samples_per_image: usize,
    /// Range of per-image landmark uncertainty (isotropic σ, mm).
    pub sigma_range: (f64, f64),
    pub seed: u64,
}

impl Default for ClinicalExperiment {
    fn default() -> Self {
        Self {
            images: 200,
            samples_per_image: 2000,
            sigma_range: (0.3, 4.0),
            seed: 0,
        }
    }
}

/// A three-landmark angle measurement with classes at 80° and 100°, applied
/// to random triangles. Each image gets its own uncertainty level: the
/// predicted landmarks are the truth plus noise of that size, and the
/// prediction carries the same isotropic covariance. The reference label
/// comes from the noise-free geometry.
pub fn synthetic_clinical_experiment(cfg: &ClinicalExperiment) -> Result<(MeasurementDef, Vec<ClinicalCase>)> {
    let (lo, hi) = cfg.sigma_range;
    if !(lo > 0.0 && hi >= lo) || cfg.images == 0 {
        return Err(Error::invalid("synthetic clinical experiment needs images >= 1 and 0 < sigma_lo <= sigma_hi"));
    }
    let thresholds = ClassThresholds::new(vec![80.0, 100.0], vec!["acute".into(), "right".into(), "obtuse".into()])?;
    let def = MeasurementDef::new("angle", "angle(#0, #1, #2)", &BTreeMap::new(), thresholds)?;
    let mut cases = Vec::with_capacity(cfg.images);
    for i in 0..cfg.images {
        let mut rng = rng::seeded(derive_seed(cfg.seed, &[0, i as u64]));
        let vertex = Point::new(rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0));
        let base: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let opening: f64 = rng.random_range(60f64..120.0).to_radians();
        let arm = |a: f64, len: f64| vertex + Point::new(a.cos(), a.sin()).scale(len);
        let truth = [arm(base, rng.random_range(30.0..50.0)), vertex, arm(base + opening, rng.random_range(30.0..50.0))];
        let sigma = rng.random_range(lo..=hi);
        let cov = CovarianceDecomposition {
            theta: 0.0,
            sigma_maj: sigma,
            sigma_min: sigma,
        };
        let noise = GaussianSampler::new(Point::new(0.0, 0.0), &cov);
        let mut pred = BTreeMap::new();
        let mut truth_map = LandmarkMap::new();
        for (id, &p) in truth.iter().enumerate() {
            truth_map.insert(id, p);
            pred.insert(
                id,
                LandmarkBelief {
                    mean: p + noise.draw(&mut rng),
                    cov,
                },
            );
        }
        let gt_class = def.thresholds.classify(evaluate_measurement(&truth_map, &def)?)?;
        let result = mc_classify(&pred, &def, cfg.samples_per_image, derive_seed(cfg.seed, &[1, i as u64]))?;
        cases.push(ClinicalCase {
            image_id: format!("case_{i:05}"),
            result,
            gt_class,
        });
    }
    Ok((def, cases))
}
