//! On-disk dataset layout.
//!
//! A dataset directory holds `manifest.txt` (flat `key = value`):
//!
//! ```text
//! landmark_count = 4
//! images = images.csv            # image_id,image_path,spacing_mm
//! annotations = annotations.csv  # image_id,landmark_id,observer_id,x_px,y_px
//! observers = observers.csv      # optional, same schema, one row per observer
//! truth = truth.csv              # optional, same schema (synthetic data)
//! ```
//!
//! Paths are relative to the manifest. Images are 8/16-bit binary PGM.
//! All CSV files are comma-separated with a header row and LF line endings.

pub mod pgm;

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use crate::config::KvConfig;
use crate::dataset::{Dataset, Sample};
use crate::error::{Error, Result};
use crate::gaussmath::{GridShape, Point};
use crate::metrics::ObserverAnnotations;

pub const ANNOTATION_HEADER: [&str; 5] = ["image_id", "landmark_id", "observer_id", "x_px", "y_px"];
pub const IMAGES_HEADER: [&str; 3] = ["image_id", "image_path", "spacing_mm"];

#[derive(Debug, Clone, PartialEq)]
pub struct ImageEntry {
    pub id: String,
    pub path: PathBuf,
    pub spacing: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    /// Directory containing the manifest; relative paths resolve against it.
    pub dir: PathBuf,
    pub landmark_count: usize,
    pub images: Vec<ImageEntry>,
    pub annotations: PathBuf,
    pub observers: Option<PathBuf>,
    pub truth: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationRow {
    pub image_id: String,
    pub landmark_id: usize,
    pub observer_id: Option<String>,
    pub x: f64,
    pub y: f64,
}

fn parse_err(path: &Path, line: u64, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line: line as usize,
        msg: msg.into(),
    }
}

fn csv_reader(path: &Path, header: &[&str]) -> Result<csv::Reader<std::fs::File>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(file);
    let got = r.headers().map_err(|e| parse_err(path, 1, e.to_string()))?;
    if got.iter().collect::<Vec<_>>() != header {
        return Err(parse_err(path, 1, format!("expected header `{}`, found `{}`", header.join(","), got.iter().collect::<Vec<_>>().join(","))));
    }
    Ok(r)
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, name: &str, path: &Path, line: u64) -> Result<T> {
    let raw = rec.get(i).ok_or_else(|| parse_err(path, line, format!("missing column {name}")))?;
    raw.parse().map_err(|_| parse_err(path, line, format!("bad {name} `{raw}`")))
}

pub fn read_annotations(path: &Path) -> Result<Vec<AnnotationRow>> {
    let mut r = csv_reader(path, &ANNOTATION_HEADER)?;
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| parse_err(path, e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        let x: f64 = field(&rec, 3, "x_px", path, line)?;
        let y: f64 = field(&rec, 4, "y_px", path, line)?;
        if !(x.is_finite() && y.is_finite()) {
            return Err(parse_err(path, line, "non-finite coordinate"));
        }
        let obs = rec.get(2).unwrap_or("");
        rows.push(AnnotationRow {
            image_id: field(&rec, 0, "image_id", path, line)?,
            landmark_id: field(&rec, 1, "landmark_id", path, line)?,
            observer_id: (!obs.is_empty()).then(|| obs.to_string()),
            x,
            y,
        });
    }
    Ok(rows)
}

/// Serializes rows in the annotation schema.
pub fn annotations_csv(rows: &[AnnotationRow]) -> String {
    let mut w = csv_writer();
    w.write_record(ANNOTATION_HEADER).expect("in-memory write");
    for r in rows {
        w.write_record([
            r.image_id.as_str(),
            &r.landmark_id.to_string(),
            r.observer_id.as_deref().unwrap_or(""),
            &r.x.to_string(),
            &r.y.to_string(),
        ])
        .expect("in-memory write");
    }
    finish(w)
}

fn csv_writer() -> csv::Writer<Vec<u8>> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new())
}

fn finish(w: csv::Writer<Vec<u8>>) -> String {
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("CSV output is UTF-8")
}

/// Generic CSV text from a header and rows of cells.
pub fn table_csv<S: AsRef<str>>(header: &[&str], rows: &[Vec<S>]) -> String {
    let mut w = csv_writer();
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(r.iter().map(AsRef::as_ref)).expect("in-memory write");
    }
    finish(w)
}

/// A CSV file read as strings, with columns looked up by header name.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub path: PathBuf,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn read(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
        let header = r
            .headers()
            .map_err(|e| parse_err(path, 1, e.to_string()))?
            .iter()
            .map(str::to_string)
            .collect();
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(|e| parse_err(path, e.position().map_or(0, |p| p.line()), e.to_string()))?;
            rows.push(rec.iter().map(str::to_string).collect());
        }
        Ok(Self {
            path: path.to_path_buf(),
            header,
            rows,
        })
    }

    pub fn column(&self, name: &str) -> Result<usize> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| parse_err(&self.path, 1, format!("missing column `{name}`")))
    }

    /// Parses cell `(row, col)`; `row` is 0-based over data rows.
    pub fn get<T: std::str::FromStr>(&self, row: usize, col: usize) -> Result<T> {
        let raw = &self.rows[row][col];
        raw.parse()
            .map_err(|_| parse_err(&self.path, row as u64 + 2, format!("bad value `{raw}` in column `{}`", self.header[col])))
    }
}

pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let kv = KvConfig::load(path)?;
    let mut r = kv.reader();
    let mut landmark_count = 0usize;
    let mut images = String::new();
    let mut annotations = String::new();
    let mut observers = String::new();
    let mut truth = String::new();
    r.set("landmark_count", &mut landmark_count)?;
    r.set("images", &mut images)?;
    r.set("annotations", &mut annotations)?;
    r.set("observers", &mut observers)?;
    r.set("truth", &mut truth)?;
    r.finish()?;
    if landmark_count == 0 || images.is_empty() || annotations.is_empty() {
        return Err(parse_err(path, 0, "manifest needs landmark_count >= 1, images and annotations"));
    }
    let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let opt = |s: String| (!s.is_empty()).then(|| dir.join(s));

    let images_path = dir.join(&images);
    let mut rdr = csv_reader(&images_path, &IMAGES_HEADER)?;
    let mut entries = Vec::new();
    let mut seen = BTreeSet::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| parse_err(&images_path, e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        let id: String = field(&rec, 0, "image_id", &images_path, line)?;
        let spacing: f64 = field(&rec, 2, "spacing_mm", &images_path, line)?;
        if !(spacing > 0.0 && spacing.is_finite()) {
            return Err(parse_err(&images_path, line, format!("spacing must be positive, got {spacing}")));
        }
        if !seen.insert(id.clone()) {
            return Err(parse_err(&images_path, line, format!("duplicate image id `{id}`")));
        }
        let rel: String = field(&rec, 1, "image_path", &images_path, line)?;
        entries.push(ImageEntry {
            id,
            path: dir.join(rel),
            spacing,
        });
    }
    Ok(DatasetManifest {
        landmark_count,
        images: entries,
        annotations: dir.join(annotations),
        observers: opt(observers),
        truth: opt(truth),
        dir,
    })
}

/// Loaded images and annotations, plus optional observer and truth tables.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedDataset {
    pub manifest: DatasetManifest,
    pub dataset: Dataset,
    /// Spacing (mm/px) per sample, same order as `dataset.samples`.
    pub spacing: Vec<f64>,
    pub observers: Option<ObserverAnnotations>,
    /// True positions `[sample][landmark]` when the dataset provides them.
    pub truth: Option<Vec<Vec<Point>>>,
}

/// Groups single-annotator rows into per-image landmark lists, validating
/// coverage and extents.
fn landmark_table(
    rows: &[AnnotationRow],
    path: &Path,
    manifest: &DatasetManifest,
    shapes: &BTreeMap<String, GridShape>,
) -> Result<BTreeMap<String, Vec<Point>>> {
    let mut table: BTreeMap<String, Vec<Option<Point>>> = manifest
        .images
        .iter()
        .map(|e| (e.id.clone(), vec![None; manifest.landmark_count]))
        .collect();
    for r in rows {
        let slots = table
            .get_mut(&r.image_id)
            .ok_or_else(|| parse_err(path, 0, format!("annotation for unknown image `{}`", r.image_id)))?;
        if r.landmark_id >= manifest.landmark_count {
            return Err(parse_err(
                path,
                0,
                format!("landmark {} of image {} exceeds landmark_count {}", r.landmark_id, r.image_id, manifest.landmark_count),
            ));
        }
        if slots[r.landmark_id].replace(Point::new(r.x, r.y)).is_some() {
            return Err(parse_err(path, 0, format!("landmark {} of image {} annotated twice", r.landmark_id, r.image_id)));
        }
        let shape = shapes[&r.image_id];
        if !shape.contains(Point::new(r.x, r.y)) {
            return Err(Error::OutOfBounds {
                image_id: r.image_id.clone(),
                landmark_id: r.landmark_id,
                x: r.x,
                y: r.y,
                width: shape.width,
                height: shape.height,
            });
        }
    }
    table
        .into_iter()
        .map(|(id, slots)| {
            let pts = slots
                .into_iter()
                .enumerate()
                .map(|(l, p)| p.ok_or_else(|| Error::MissingLandmark(format!("{l} of image {id} in {}", path.display()))))
                .collect::<Result<Vec<_>>>()?;
            Ok((id, pts))
        })
        .collect()
}

pub fn load_observers(manifest: &DatasetManifest, path: &Path) -> Result<ObserverAnnotations> {
    let spacing: BTreeMap<&str, f64> = manifest.images.iter().map(|e| (e.id.as_str(), e.spacing)).collect();
    let mut ann = ObserverAnnotations::default();
    for r in read_annotations(path)? {
        let s = *spacing
            .get(r.image_id.as_str())
            .ok_or_else(|| parse_err(path, 0, format!("observer row for unknown image `{}`", r.image_id)))?;
        ann.spacing.insert(r.image_id.clone(), s);
        let obs = r.observer_id.as_deref().unwrap_or("");
        ann.insert(&r.image_id, r.landmark_id, obs, Point::new(r.x, r.y))?;
    }
    Ok(ann)
}

pub fn load_dataset(manifest_path: &Path) -> Result<LoadedDataset> {
    let manifest = load_manifest(manifest_path)?;
    let mut images = Vec::with_capacity(manifest.images.len());
    let mut shapes = BTreeMap::new();
    for e in &manifest.images {
        let img = pgm::read(&e.path, e.spacing)?;
        shapes.insert(e.id.clone(), img.shape());
        images.push(img);
    }
    let rows = read_annotations(&manifest.annotations)?;
    let table = landmark_table(&rows, &manifest.annotations, &manifest, &shapes)?;
    let truth = match &manifest.truth {
        Some(p) => {
            let t = landmark_table(&read_annotations(p)?, p, &manifest, &shapes)?;
            Some(manifest.images.iter().map(|e| t[&e.id].clone()).collect())
        }
        None => None,
    };
    let observers = match &manifest.observers {
        Some(p) => Some(load_observers(&manifest, p)?),
        None => None,
    };
    let samples = manifest
        .images
        .iter()
        .zip(images)
        .map(|(e, image)| Sample {
            id: e.id.clone(),
            image,
            landmarks: table[&e.id].clone(),
        })
        .collect();
    let dataset = Dataset {
        landmark_count: manifest.landmark_count,
        samples,
    };
    dataset.validate()?;
    Ok(LoadedDataset {
        spacing: manifest.images.iter().map(|e| e.spacing).collect(),
        manifest,
        dataset,
        observers,
        truth,
    })
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn rows_of(samples: &[(String, Vec<Point>)], observer: Option<&str>) -> Vec<AnnotationRow> {
    samples
        .iter()
        .flat_map(|(id, pts)| {
            pts.iter().enumerate().map(move |(l, p)| AnnotationRow {
                image_id: id.clone(),
                landmark_id: l,
                observer_id: observer.map(str::to_string),
                x: p.x,
                y: p.y,
            })
        })
        .collect()
}

/// Writes a dataset directory (16-bit images). `spacing` is per sample.
pub fn write_dataset(dir: &Path, dataset: &Dataset, spacing: &[f64], truth: Option<&[Vec<Point>]>) -> Result<()> {
    if spacing.len() != dataset.samples.len() {
        return Err(Error::ShapeMismatch(format!("{} spacings for {} images", spacing.len(), dataset.samples.len())));
    }
    let img_dir = dir.join("images");
    std::fs::create_dir_all(&img_dir).map_err(|e| Error::io(&img_dir, e))?;
    let mut image_rows = Vec::with_capacity(dataset.samples.len());
    for (s, &sp) in dataset.samples.iter().zip(spacing) {
        let rel = format!("images/{}.pgm", s.id);
        pgm::write(&dir.join(&rel), &s.image, pgm::Depth::Sixteen)?;
        image_rows.push(vec![s.id.clone(), rel, sp.to_string()]);
    }
    write_text(&dir.join("images.csv"), &table_csv(&IMAGES_HEADER, &image_rows))?;
    let ann: Vec<(String, Vec<Point>)> = dataset.samples.iter().map(|s| (s.id.clone(), s.landmarks.clone())).collect();
    write_text(&dir.join("annotations.csv"), &annotations_csv(&rows_of(&ann, None)))?;
    let mut manifest = format!(
        "landmark_count = {}\nimages = images.csv\nannotations = annotations.csv\n",
        dataset.landmark_count
    );
    if let Some(truth) = truth {
        let t: Vec<(String, Vec<Point>)> = dataset.samples.iter().zip(truth).map(|(s, t)| (s.id.clone(), t.clone())).collect();
        write_text(&dir.join("truth.csv"), &annotations_csv(&rows_of(&t, None)))?;
        manifest.push_str("truth = truth.csv\n");
    }
    write_text(&dir.join("manifest.txt"), &manifest)
}
