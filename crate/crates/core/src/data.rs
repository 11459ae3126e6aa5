//! Datasets of pre-vectorised samples.
//!
//! # JSONL
//!
//! One JSON object per line. An optional first line declares the class
//! vocabulary; every other line is a sample:
//!
//! ```text
//! {"classes": ["world", "sports", "business", "tech"]}
//! {"id": 0, "features": [0.12, -1.5, 3.0], "label": 2, "payload": "Stocks rally"}
//! {"id": 1, "features": [0.40, 0.25, -0.7], "label": "sports"}
//! {"id": 2, "features": [1.10, -0.3, 0.0]}
//! ```
//!
//! `label` is optional and is either a class index or a class name. Without a
//! header, integer labels produce the vocabulary `"0"..="max"` and string
//! labels are indexed in order of first appearance. Mixing the two is an
//! error. [`Dataset::write_jsonl`] always writes the header line and integer
//! labels.
//!
//! # CSV
//!
//! Header `id,label,f0,f1,...,f{D-1}`, one row per sample. `label` is a class
//! index or empty for unlabeled samples. Values are written at full
//! (round-trip) precision.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::classifier::Example;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: u64,
    pub features: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload: Option<String>,
}

impl Sample {
    pub fn example(&self) -> Option<Example<'_>> {
        self.label.map(|label| Example {
            features: &self.features,
            label,
        })
    }
}

/// Validated, immutable collection of samples sharing one feature length.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: Vec<Sample>,
    classes: Vec<String>,
    d_in: usize,
    index: HashMap<u64, usize>,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>, classes: Vec<String>) -> Result<Self> {
        let first = samples.first().ok_or(Error::EmptyDataset)?;
        let d_in = first.features.len();
        if d_in == 0 {
            return Err(Error::Schema("feature vectors must not be empty".into()));
        }
        let mut index = HashMap::with_capacity(samples.len());
        for (i, s) in samples.iter().enumerate() {
            if s.features.len() != d_in {
                return Err(Error::Schema(format!(
                    "sample {} has {} features, expected {d_in}",
                    s.id,
                    s.features.len()
                )));
            }
            if s.features.iter().any(|v| !v.is_finite()) {
                return Err(Error::Schema(format!(
                    "sample {} has a non-finite feature",
                    s.id
                )));
            }
            if let Some(label) = s.label {
                if label >= classes.len() {
                    return Err(Error::Schema(format!(
                        "sample {} has label {label} but only {} classes are declared",
                        s.id,
                        classes.len()
                    )));
                }
            }
            if index.insert(s.id, i).is_some() {
                return Err(Error::DuplicateId(s.id));
            }
        }
        Ok(Dataset {
            samples,
            classes,
            d_in,
            index,
        })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn d_in(&self) -> usize {
        self.d_in
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn get(&self, id: u64) -> Option<&Sample> {
        self.index.get(&id).map(|&i| &self.samples[i])
    }

    pub fn ids(&self) -> Vec<u64> {
        self.samples.iter().map(|s| s.id).collect()
    }

    /// Training view of every labelled sample.
    pub fn examples(&self) -> Vec<Example<'_>> {
        self.samples.iter().filter_map(Sample::example).collect()
    }

    /// Replaces the vocabulary, e.g. with names supplied by a caller.
    pub fn with_classes(self, classes: Vec<String>) -> Result<Self> {
        Dataset::new(self.samples, classes)
    }

    fn subset(&self, idx: &[usize]) -> Result<Dataset> {
        Dataset::new(
            idx.iter().map(|&i| self.samples[i].clone()).collect(),
            self.classes.clone(),
        )
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        match path.extension().and_then(|e| e.to_str()) {
            Some("csv") => Self::load_csv(path),
            _ => Self::load_jsonl(path),
        }
    }

    pub fn load_jsonl(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_jsonl(BufReader::new(file)).map_err(|e| match e {
            Error::Io { source, .. } => Error::io(path, source),
            other => other,
        })
    }

    pub fn read_jsonl(reader: impl BufRead) -> Result<Self> {
        let mut header: Option<Vec<String>> = None;
        let mut rows: Vec<RawRow> = Vec::new();
        for (n, line) in reader.lines().enumerate() {
            let line_no = n + 1;
            let line = line.map_err(|e| Error::io("<jsonl>", e))?;
            if line.trim().is_empty() {
                continue;
            }
            let value: serde_json::Value =
                serde_json::from_str(&line).map_err(|e| Error::Parse {
                    line: line_no,
                    detail: e.to_string(),
                })?;
            if rows.is_empty() && header.is_none() && value.get("classes").is_some() {
                let h: Header = serde_json::from_value(value)
                    .map_err(|e| Error::Schema(format!("line {line_no}: bad header: {e}")))?;
                header = Some(h.classes);
                continue;
            }
            let row: RawSample = serde_json::from_value(value)
                .map_err(|e| Error::Schema(format!("line {line_no}: {e}")))?;
            rows.push((row.id, row.features, row.label, row.payload));
        }

        let classes = match header {
            Some(c) => c,
            None => infer_classes(rows.iter().filter_map(|r| r.2.as_ref()))?,
        };
        let lookup: HashMap<&str, usize> = classes
            .iter()
            .enumerate()
            .map(|(i, c)| (c.as_str(), i))
            .collect();
        let mut samples = Vec::with_capacity(rows.len());
        for (id, features, label, payload) in rows {
            let label = match label {
                None => None,
                Some(RawLabel::Index(i)) => Some(i),
                Some(RawLabel::Name(name)) => {
                    Some(*lookup.get(name.as_str()).ok_or_else(|| {
                        Error::Schema(format!("sample {id}: unknown class name {name:?}"))
                    })?)
                }
            };
            samples.push(Sample {
                id,
                features,
                label,
                payload,
            });
        }
        Dataset::new(samples, classes)
    }

    pub fn write_jsonl(&self, mut w: impl Write) -> Result<()> {
        let header = Header {
            classes: self.classes.clone(),
        };
        let io = |e| Error::io("<jsonl>", e);
        serde_json::to_writer(&mut w, &header)?;
        w.write_all(b"\n").map_err(io)?;
        for s in &self.samples {
            serde_json::to_writer(&mut w, s)?;
            w.write_all(b"\n").map_err(io)?;
        }
        Ok(())
    }

    pub fn save_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.write_jsonl(&mut w)?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(file)
    }

    pub fn read_csv(reader: impl std::io::Read) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_reader(reader);
        let headers = rdr.headers()?.clone();
        if headers.len() < 3 || &headers[0] != "id" || &headers[1] != "label" {
            return Err(Error::Schema("CSV header must be id,label,f0,...".into()));
        }
        for (k, h) in headers.iter().skip(2).enumerate() {
            if h != format!("f{k}") {
                return Err(Error::Schema(format!(
                    "CSV column {} should be f{k}",
                    k + 2
                )));
            }
        }
        let mut samples = Vec::new();
        for (n, rec) in rdr.records().enumerate() {
            let line = n + 2;
            let rec = rec?;
            let parse_err = |detail: String| Error::Parse { line, detail };
            let id = rec[0]
                .trim()
                .parse::<u64>()
                .map_err(|e| parse_err(format!("id: {e}")))?;
            let label = match rec[1].trim() {
                "" => None,
                s => Some(
                    s.parse::<usize>()
                        .map_err(|e| parse_err(format!("label: {e}")))?,
                ),
            };
            let features = rec
                .iter()
                .skip(2)
                .map(|v| v.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| parse_err(format!("feature: {e}")))?;
            samples.push(Sample {
                id,
                features,
                label,
                payload: None,
            });
        }
        let max = samples.iter().filter_map(|s| s.label).max();
        Dataset::new(samples, default_classes(max.map_or(0, |m| m + 1)))
    }

    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let mut header = vec!["id".to_string(), "label".to_string()];
        header.extend((0..self.d_in).map(|k| format!("f{k}")));
        wtr.write_record(&header)?;
        for s in &self.samples {
            let mut row = vec![
                s.id.to_string(),
                s.label.map(|l| l.to_string()).unwrap_or_default(),
            ];
            row.extend(s.features.iter().map(|v| v.to_string()));
            wtr.write_record(&row)?;
        }
        wtr.flush().map_err(|e| Error::io("<csv>", e))
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    classes: Vec<String>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum RawLabel {
    Index(usize),
    Name(String),
}

/// id, features, label, payload
type RawRow = (u64, Vec<f64>, Option<RawLabel>, Option<String>);

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSample {
    id: u64,
    features: Vec<f64>,
    #[serde(default)]
    label: Option<RawLabel>,
    #[serde(default)]
    payload: Option<String>,
}

pub fn default_classes(n: usize) -> Vec<String> {
    (0..n).map(|i| i.to_string()).collect()
}

fn infer_classes<'a>(labels: impl Iterator<Item = &'a RawLabel>) -> Result<Vec<String>> {
    let mut max_index: Option<usize> = None;
    let mut names: Vec<String> = Vec::new();
    let mut seen = HashSet::new();
    for l in labels {
        match l {
            RawLabel::Index(i) => max_index = Some(max_index.map_or(*i, |m| m.max(*i))),
            RawLabel::Name(n) => {
                if seen.insert(n.clone()) {
                    names.push(n.clone());
                }
            }
        }
    }
    match (max_index, names.is_empty()) {
        (Some(_), false) => Err(Error::Schema(
            "labels mix class indices and class names".into(),
        )),
        (Some(m), true) => Ok(default_classes(m + 1)),
        (None, _) => Ok(names),
    }
}

/// Seeded shuffle-then-cut into `(train, test)`; each part keeps the original sample order.
pub fn split(dataset: &Dataset, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "test_fraction must lie in (0, 1), got {test_fraction}"
        )));
    }
    let n = dataset.len();
    let n_test = (test_fraction * n as f64).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (test_idx, train_idx) = order.split_at(n_test);
    let mut train_idx = train_idx.to_vec();
    let mut test_idx = test_idx.to_vec();
    train_idx.sort_unstable();
    test_idx.sort_unstable();
    Ok((dataset.subset(&train_idx)?, dataset.subset(&test_idx)?))
}

/// Gaussian blob generator settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub num_classes: usize,
    pub points_per_class: usize,
    pub d_in: usize,
    /// Distance of each pair anchor from the shared offset, and the distance
    /// between the two classes of a pair when `overlap = 0`.
    pub center_spread: f64,
    /// Standard deviation of the isotropic within-class noise.
    pub noise_sigma: f64,
    /// 0 keeps paired centres `center_spread` apart; 1 makes them coincide.
    pub overlap: f64,
    /// Length of a shared random offset added to every sample, keeping the
    /// blobs away from the origin (inputs are compared by direction).
    #[serde(default)]
    pub offset: f64,
    pub seed: u64,
}

impl SynthConfig {
    /// Shipped presets: `"overlap-blobs"` and `"separable-blobs"`.
    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "overlap-blobs" => Ok(SynthConfig {
                num_classes: 6,
                points_per_class: 500,
                d_in: 16,
                center_spread: 4.0,
                noise_sigma: 0.5,
                overlap: 0.5,
                offset: 0.0,
                seed: 2024,
            }),
            "separable-blobs" => Ok(SynthConfig {
                num_classes: 4,
                points_per_class: 250,
                d_in: 16,
                center_spread: 3.0,
                noise_sigma: 0.05,
                overlap: 0.0,
                offset: 0.0,
                seed: 7,
            }),
            other => Err(Error::UnknownPreset(other.to_string())),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.num_classes > 0
            && self.points_per_class > 0
            && self.d_in > 0
            && self.center_spread > 0.0
            && self.noise_sigma > 0.0
            && self.offset >= 0.0
            && (0.0..=1.0).contains(&self.overlap);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!(
                "invalid synthetic config {self:?}"
            )))
        }
    }
}

/// Isotropic Gaussian clusters, one per class; labels are cluster indices and
/// ids run from 0 in class-major order.
pub fn gen_blobs(cfg: &SynthConfig) -> Result<Dataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let std_normal = Normal::new(0.0, 1.0).expect("valid normal");
    let direction = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        loop {
            let v: Vec<f64> = (0..cfg.d_in).map(|_| std_normal.sample(rng)).collect();
            let n = crate::hypersphere::norm(&v);
            if n > 1e-9 {
                return v.into_iter().map(|x| x / n).collect();
            }
        }
    };
    let offset: Vec<f64> = direction(&mut rng)
        .into_iter()
        .map(|v| v * cfg.offset)
        .collect();
    // Classes 2k and 2k+1 share an anchor and sit on opposite sides of it;
    // overlap pulls each pair together. An odd last class sits on its anchor.
    let half_gap = 0.5 * cfg.center_spread * (1.0 - cfg.overlap);
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(cfg.num_classes);
    while centers.len() < cfg.num_classes {
        let anchor: Vec<f64> = direction(&mut rng)
            .into_iter()
            .zip(&offset)
            .map(|(v, o)| o + v * cfg.center_spread)
            .collect();
        let axis = direction(&mut rng);
        if centers.len() + 1 == cfg.num_classes {
            centers.push(anchor);
            break;
        }
        for sign in [1.0, -1.0] {
            centers.push(
                anchor
                    .iter()
                    .zip(&axis)
                    .map(|(a, u)| a + sign * half_gap * u)
                    .collect(),
            );
        }
    }
    let noise = Normal::new(0.0, cfg.noise_sigma).expect("valid sigma");
    let mut samples = Vec::with_capacity(cfg.num_classes * cfg.points_per_class);
    for (label, center) in centers.iter().enumerate() {
        for _ in 0..cfg.points_per_class {
            let features = center.iter().map(|c| c + noise.sample(&mut rng)).collect();
            samples.push(Sample {
                id: samples.len() as u64,
                features,
                label: Some(label),
                payload: None,
            });
        }
    }
    Dataset::new(samples, default_classes(cfg.num_classes))
}
