//! Localization and distribution metrics, inter-observer distribution
//! fitting, and the per-landmark metrics table.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::gaussmath::{decompose_psd, population_covariance, wrap_half_pi, CovarianceDecomposition, Point};

/// Euclidean point-to-point error.
pub fn point_error(gt: Point, pred: Point) -> f64 {
    (gt.x - pred.x).hypot(gt.y - pred.y)
}

/// Success detection rate in percent: share of errors `<= r`.
pub fn sdr(errors: &[f64], r: f64) -> Result<f64> {
    if errors.is_empty() {
        return Err(Error::UndefinedInput("SDR of an empty error list".into()));
    }
    if !(r > 0.0) {
        return Err(Error::invalid(format!("SDR radius must be positive, got {r}")));
    }
    let hits = errors.iter().filter(|&&e| e <= r).count();
    Ok(100.0 * hits as f64 / errors.len() as f64)
}

/// `pred - gt` per sample.
pub fn error_offsets(gts: &[Point], preds: &[Point]) -> Result<Vec<Point>> {
    if gts.len() != preds.len() {
        return Err(Error::ShapeMismatch(format!("{} ground truths, {} predictions", gts.len(), preds.len())));
    }
    Ok(gts.iter().zip(preds).map(|(&g, &p)| p - g).collect())
}

/// Gaussian fitted to a point set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointDistribution {
    pub mean: Point,
    pub decomp: CovarianceDecomposition,
    /// Collinear or coincident points (`σmin == 0`).
    pub degenerate: bool,
}

/// Arithmetic mean and population covariance of at least three points.
pub fn fit_annotation_distribution(points: &[Point]) -> Result<PointDistribution> {
    if points.len() < 3 {
        return Err(Error::UndefinedInput(format!("need at least 3 annotations, got {}", points.len())));
    }
    let (mean, cov) = population_covariance(points)?;
    let (decomp, degenerate) = decompose_psd(&cov);
    Ok(PointDistribution { mean, decomp, degenerate })
}

/// Shape summary of one covariance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistributionStats {
    pub ratio: f64,
    pub product: f64,
    pub theta_deg: f64,
}

impl From<&CovarianceDecomposition> for DistributionStats {
    fn from(d: &CovarianceDecomposition) -> Self {
        let c = d.canonical();
        Self {
            ratio: c.ratio(),
            product: c.product(),
            theta_deg: c.theta_deg(),
        }
    }
}

/// Mean and standard deviation of [`DistributionStats`] over images.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AggregateStats {
    pub n: usize,
    pub ratio_mean: f64,
    pub ratio_sd: f64,
    pub product_mean: f64,
    pub product_sd: f64,
    pub theta_mean_deg: f64,
    pub theta_sd_deg: f64,
}

fn mean_sd(v: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = v.clone().count() as f64;
    let mean = v.clone().sum::<f64>() / n;
    let var = v.map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Circular mean and standard deviation of axial angles (period π), radians.
pub fn axial_mean_sd(thetas: &[f64]) -> (f64, f64) {
    let n = thetas.len() as f64;
    let c = thetas.iter().map(|t| (2.0 * t).cos()).sum::<f64>() / n;
    let s = thetas.iter().map(|t| (2.0 * t).sin()).sum::<f64>() / n;
    let r = c.hypot(s).min(1.0);
    let mean = wrap_half_pi(0.5 * s.atan2(c));
    // Circular SD on the doubled angle, halved back.
    let sd = if r > 0.0 { 0.5 * (-2.0 * r.ln()).sqrt() } else { PI / 2.0 };
    (mean, sd)
}

/// Averages ratio, product and θ over images. θ uses the axial circular
/// mean; standard deviations use divisor `n`.
pub fn aggregate_stats(per_image: &[CovarianceDecomposition]) -> Result<AggregateStats> {
    if per_image.is_empty() {
        return Err(Error::UndefinedInput("no distributions to aggregate".into()));
    }
    let stats: Vec<DistributionStats> = per_image.iter().map(DistributionStats::from).collect();
    let (ratio_mean, ratio_sd) = mean_sd(stats.iter().map(|s| s.ratio));
    let (product_mean, product_sd) = mean_sd(stats.iter().map(|s| s.product));
    let thetas: Vec<f64> = per_image.iter().map(|d| d.canonical().theta).collect();
    let (tm, tsd) = axial_mean_sd(&thetas);
    Ok(AggregateStats {
        n: per_image.len(),
        ratio_mean,
        ratio_sd,
        product_mean,
        product_sd,
        theta_mean_deg: tm.to_degrees(),
        theta_sd_deg: tsd.to_degrees(),
    })
}

/// Multi-observer annotations keyed by `(image_id, landmark_id)`, in pixels,
/// with each image's spacing (mm/px).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ObserverAnnotations {
    pub entries: BTreeMap<(String, usize), Vec<(String, Point)>>,
    pub spacing: BTreeMap<String, f64>,
}

impl ObserverAnnotations {
    pub fn insert(&mut self, image_id: &str, landmark: usize, observer: &str, p: Point) -> Result<()> {
        let list = self.entries.entry((image_id.to_string(), landmark)).or_default();
        if list.iter().any(|(o, _)| o == observer) {
            return Err(Error::invalid(format!(
                "observer `{observer}` annotated landmark {landmark} of image {image_id} twice"
            )));
        }
        list.push((observer.to_string(), p));
        Ok(())
    }

    pub fn landmarks(&self) -> Vec<usize> {
        let mut l: Vec<usize> = self.entries.keys().map(|(_, l)| *l).collect();
        l.sort_unstable();
        l.dedup();
        l
    }

    pub fn len(&self) -> usize {
        self.entries.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Per landmark: a Gaussian fitted to each image's annotations (in mm),
/// averaged over images.
pub fn inter_observer_stats(ann: &ObserverAnnotations) -> Result<Vec<(usize, AggregateStats)>> {
    let mut per_landmark: BTreeMap<usize, Vec<CovarianceDecomposition>> = BTreeMap::new();
    for ((image, landmark), list) in &ann.entries {
        let spacing = *ann.spacing.get(image).unwrap_or(&1.0);
        let pts: Vec<Point> = list.iter().map(|(_, p)| p.scale(spacing)).collect();
        let fit = fit_annotation_distribution(&pts)?;
        per_landmark.entry(*landmark).or_default().push(fit.decomp);
    }
    per_landmark
        .into_iter()
        .map(|(l, ds)| Ok((l, aggregate_stats(&ds)?)))
        .collect()
}

pub const SDR_RADII: [f64; 4] = [2.0, 2.5, 3.0, 4.0];

/// One row of the metrics table. Empty cells are `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub landmark: String,
    pub stats: Option<AggregateStats>,
    pub pe_mean: Option<f64>,
    pub pe_sd: Option<f64>,
    pub sdr: Option<[f64; 4]>,
}

impl MetricsRow {
    /// Builds a row from per-image covariances and point errors (either may
    /// be empty).
    pub fn new(landmark: impl Into<String>, decomps: &[CovarianceDecomposition], errors: &[f64]) -> Result<Self> {
        let stats = if decomps.is_empty() { None } else { Some(aggregate_stats(decomps)?) };
        let (pe_mean, pe_sd, sdr_v) = if errors.is_empty() {
            (None, None, None)
        } else {
            let (m, s) = mean_sd(errors.iter().copied());
            let mut v = [0.0; 4];
            for (slot, r) in v.iter_mut().zip(SDR_RADII) {
                *slot = sdr(errors, r)?;
            }
            (Some(m), Some(s), Some(v))
        };
        Ok(Self {
            landmark: landmark.into(),
            stats,
            pe_mean,
            pe_sd,
            sdr: sdr_v,
        })
    }
}

pub const METRICS_HEADER: &str =
    "landmark,ratio_mean,ratio_sd,product_mean,product_sd,theta_mean_deg,theta_sd_deg,pe_mean,pe_sd,sdr_2,sdr_2.5,sdr_3,sdr_4";

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// The metrics table as CSV text (LF line endings, header first).
pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in rows {
        let s = r.stats;
        let sdr = r.sdr;
        let cells = [
            r.landmark.clone(),
            cell(s.map(|s| s.ratio_mean)),
            cell(s.map(|s| s.ratio_sd)),
            cell(s.map(|s| s.product_mean)),
            cell(s.map(|s| s.product_sd)),
            cell(s.map(|s| s.theta_mean_deg)),
            cell(s.map(|s| s.theta_sd_deg)),
            cell(r.pe_mean),
            cell(r.pe_sd),
            cell(sdr.map(|v| v[0])),
            cell(sdr.map(|v| v[1])),
            cell(sdr.map(|v| v[2])),
            cell(sdr.map(|v| v[3])),
        ];
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn d(theta_deg: f64, a: f64, b: f64) -> CovarianceDecomposition {
        CovarianceDecomposition::new(theta_deg.to_radians(), a, b).unwrap()
    }

    #[test]
    fn point_error_examples() {
        assert_eq!(point_error(Point::new(0.0, 0.0), Point::new(3.0, 4.0)), 5.0);
        assert_eq!(point_error(Point::new(1.5, 2.0), Point::new(1.5, 2.0)), 0.0);
    }

    #[test]
    fn sdr_examples() {
        assert_abs_diff_eq!(sdr(&[1.0, 2.0, 3.0], 2.0).unwrap(), 200.0 / 3.0, epsilon = 1e-12);
        assert_eq!(sdr(&[1.0, 2.0, 3.0], 1e300).unwrap(), 100.0);
        assert_eq!(sdr(&[1.0, 2.0, 3.0], 3.0).unwrap(), 100.0);
        assert!(sdr(&[], 2.0).is_err());
        assert!(sdr(&[1.0], 0.0).is_err());
    }

    #[test]
    fn offsets() {
        let z = error_offsets(&[Point::new(1.0, 2.0)], &[Point::new(1.0, 2.0)]).unwrap();
        assert_eq!(z, vec![Point::new(0.0, 0.0)]);
        let o = error_offsets(&[Point::new(1.0, 1.0)], &[Point::new(2.0, 3.0)]).unwrap();
        assert_eq!(o, vec![Point::new(1.0, 2.0)]);
        assert!(error_offsets(&[Point::new(0.0, 0.0)], &[]).is_err());
    }

    #[test]
    fn annotation_fit_axis_aligned() {
        // Population covariance diag(8, 2): ratio exactly 2.
        let pts = [
            Point::new(-4.0, 0.0),
            Point::new(4.0, 0.0),
            Point::new(0.0, -2.0),
            Point::new(0.0, 2.0),
        ];
        let f = fit_annotation_distribution(&pts).unwrap();
        assert_eq!(f.mean, Point::new(0.0, 0.0));
        assert_abs_diff_eq!(f.decomp.theta, 0.0);
        assert_abs_diff_eq!(f.decomp.ratio(), 2.0, epsilon = 1e-12);
        assert!(!f.degenerate);

        let same = fit_annotation_distribution(&[Point::new(2.0, 2.0); 4]).unwrap();
        assert!(same.degenerate);
        assert_eq!(same.decomp.product(), 0.0);
        assert!(fit_annotation_distribution(&pts[..2]).is_err());
    }

    #[test]
    fn aggregate_single_and_wraparound() {
        let one = aggregate_stats(&[d(20.0, 3.0, 1.5)]).unwrap();
        assert_abs_diff_eq!(one.ratio_mean, 2.0, epsilon = 1e-12);
        assert_eq!(one.ratio_sd, 0.0);
        assert_abs_diff_eq!(one.theta_mean_deg, 20.0, epsilon = 1e-9);
        assert_abs_diff_eq!(one.theta_sd_deg, 0.0, epsilon = 1e-6);

        let wrap = aggregate_stats(&[d(89.0, 2.0, 1.0), d(-89.0, 2.0, 1.0)]).unwrap();
        assert_abs_diff_eq!(wrap.theta_mean_deg.abs(), 90.0, epsilon = 1e-9);
        assert!(wrap.theta_sd_deg < 1.5, "{}", wrap.theta_sd_deg);
        assert!(aggregate_stats(&[]).is_err());
    }

    #[test]
    fn observers_must_be_unique_per_pair() {
        let mut a = ObserverAnnotations::default();
        a.insert("img", 0, "o1", Point::new(1.0, 1.0)).unwrap();
        assert!(a.insert("img", 0, "o1", Point::new(2.0, 1.0)).is_err());
        a.insert("img", 1, "o1", Point::new(2.0, 1.0)).unwrap();
        assert_eq!(a.len(), 2);
        assert_eq!(a.landmarks(), vec![0, 1]);
    }

    #[test]
    fn inter_observer_uses_spacing() {
        let mut a = ObserverAnnotations::default();
        for (i, p) in [(-4.0, 0.0), (4.0, 0.0), (0.0, -2.0), (0.0, 2.0)].iter().enumerate() {
            a.insert("img", 3, &format!("o{i}"), Point::new(10.0 + p.0, 10.0 + p.1)).unwrap();
        }
        a.spacing.insert("img".into(), 0.1);
        let s = inter_observer_stats(&a).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].0, 3);
        // σ² = 8 and 2 px², times 0.01 mm²/px².
        assert_abs_diff_eq!(s[0].1.product_mean, 4.0 * 0.01, epsilon = 1e-12);
    }

    #[test]
    fn csv_layout() {
        let row = MetricsRow::new("0", &[d(10.0, 2.0, 1.0)], &[1.0, 3.0]).unwrap();
        let empty = MetricsRow::new("1", &[], &[]).unwrap();
        let csv = metrics_csv(&[row, empty]);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], METRICS_HEADER);
        assert_eq!(lines[1].split(',').count(), 13);
        assert!(lines[1].starts_with("0,2,0,2,0,"));
        assert!(lines[1].ends_with(",2,1,50,50,100,100"));
        assert_eq!(lines[2], "1,,,,,,,,,,,,");
        assert!(!csv.contains('\r'));
    }
}
