//! Region-by-time signals, labeled datasets, windowing and the synthetic
//! generator with planted class-dependent coupling.
//!
//! On disk a dataset is a directory holding `manifest.csv` with the header
//! `subject_id,filename,label,split` (lines starting with `#` are comments)
//! and one headerless CSV per subject: one row per timepoint, one column per
//! region.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{contract, Error, Result};
use crate::tensor::Tensor;

pub const MANIFEST_FILE: &str = "manifest.csv";

/// One subject's time series, `timepoints × regions`.
#[derive(Clone, Debug, PartialEq)]
pub struct BoldSignal {
    pub subject_id: String,
    pub series: Tensor,
}

impl BoldSignal {
    pub fn new(subject_id: impl Into<String>, series: Tensor) -> Result<Self> {
        let subject_id = subject_id.into();
        if series.dims2().is_none() {
            return Err(Error::Ingest {
                subject: subject_id,
                reason: format!("series must be 2-D, got {:?}", series.shape()),
            });
        }
        if !series.is_finite() {
            return Err(Error::Ingest {
                subject: subject_id,
                reason: "non-finite entry".into(),
            });
        }
        Ok(Self { subject_id, series })
    }

    pub fn timepoints(&self) -> usize {
        self.series.rows()
    }

    pub fn regions(&self) -> usize {
        self.series.cols()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Subject {
    pub signal: BoldSignal,
    pub label: u8,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    subjects: Vec<Subject>,
    train: Vec<usize>,
    test: Vec<usize>,
}

impl LabeledDataset {
    /// Validates binary labels, a uniform region count and a disjoint,
    /// covering split.
    pub fn new(subjects: Vec<Subject>, splits: Vec<Split>) -> Result<Self> {
        if subjects.len() != splits.len() {
            return contract("one split entry per subject required");
        }
        if let Some(first) = subjects.first() {
            let v = first.signal.regions();
            for s in &subjects {
                if s.label > 1 {
                    return Err(Error::Ingest {
                        subject: s.signal.subject_id.clone(),
                        reason: format!("non-binary label {}", s.label),
                    });
                }
                if s.signal.regions() != v {
                    return Err(Error::Ingest {
                        subject: s.signal.subject_id.clone(),
                        reason: format!(
                            "region count {} differs from dataset region count {v}",
                            s.signal.regions()
                        ),
                    });
                }
            }
        }
        let train = (0..splits.len())
            .filter(|&i| splits[i] == Split::Train)
            .collect();
        let test = (0..splits.len())
            .filter(|&i| splits[i] == Split::Test)
            .collect();
        Ok(Self {
            subjects,
            train,
            test,
        })
    }

    pub fn subjects(&self) -> &[Subject] {
        &self.subjects
    }

    pub fn len(&self) -> usize {
        self.subjects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subjects.is_empty()
    }

    pub fn regions(&self) -> Option<usize> {
        self.subjects.first().map(|s| s.signal.regions())
    }

    pub fn indices(&self, split: Split) -> &[usize] {
        match split {
            Split::Train => &self.train,
            Split::Test => &self.test,
        }
    }

    pub fn split_of(&self, idx: usize) -> Split {
        if self.test.binary_search(&idx).is_ok() {
            Split::Test
        } else {
            Split::Train
        }
    }
}

/// Non-overlapping `window_size × regions` slices of one signal, in order.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowSet {
    pub windows: Vec<Tensor>,
    pub window_size: usize,
}

impl WindowSet {
    pub fn count(&self) -> usize {
        self.windows.len()
    }
}

/// Splits `s` into `floor(T'/p)` windows; trailing timepoints are dropped.
pub fn window(s: &BoldSignal, p: usize) -> Result<WindowSet> {
    let t = s.timepoints();
    if p == 0 || p > t {
        return contract(format!(
            "window size {p} must be in 1..={t} for subject {}",
            s.subject_id
        ));
    }
    let v = s.regions();
    let data = s.series.data();
    let windows = (0..t / p)
        .map(|w| Tensor::matrix(p, v, data[w * p * v..(w + 1) * p * v].to_vec()))
        .collect::<Result<_>>()?;
    Ok(WindowSet {
        windows,
        window_size: p,
    })
}

/// Per-region z-score with population standard deviation. Constant regions
/// become all zeros.
pub fn zscore_normalize(s: &BoldSignal) -> BoldSignal {
    let (t, v) = (s.timepoints(), s.regions());
    let x = s.series.data();
    let mut out = vec![0.0; t * v];
    for r in 0..v {
        let mean = (0..t).map(|i| x[i * v + r]).sum::<f64>() / t as f64;
        let var = (0..t).map(|i| (x[i * v + r] - mean).powi(2)).sum::<f64>() / t as f64;
        let std = var.sqrt();
        if std <= 1e-12 * mean.abs().max(1.0) {
            continue;
        }
        for i in 0..t {
            out[i * v + r] = (x[i * v + r] - mean) / std;
        }
    }
    BoldSignal {
        subject_id: s.subject_id.clone(),
        series: Tensor::matrix(t, v, out).expect("same shape as input"),
    }
}

/// Settings of the synthetic generator.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub subjects: usize,
    pub regions: usize,
    pub timepoints: usize,
    pub coupling: f64,
    /// Window length that defines the even/odd windows of the planted coupling.
    pub window_size: usize,
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            subjects: 64,
            regions: 20,
            timepoints: 100,
            coupling: 2.0,
            window_size: 20,
            test_fraction: 0.25,
            seed: 0,
        }
    }
}

/// Balanced synthetic dataset. Every region is independent unit-variance
/// Gaussian noise `e_r`; for class-1 subjects regions 0 and 1 additionally
/// share a latent signal during even-indexed windows: `x_r = e_r + c·z`.
/// Both classes draw the same noise, so with `c = 0` they are identical in
/// distribution.
///
/// Labels alternate `0, 1, 0, …`; the last `round(n·test_fraction)` subjects
/// form the test split.
pub fn synth_generate(spec: &SynthSpec) -> Result<LabeledDataset> {
    let SynthSpec {
        subjects: n,
        regions: v,
        timepoints: t,
        coupling: c,
        window_size: p,
        test_fraction,
        seed,
    } = *spec;
    if n == 0 || v == 0 || t == 0 || p == 0 {
        return contract("synthetic sizes must be positive");
    }
    if !(c >= 0.0) || !(0.0..=1.0).contains(&test_fraction) {
        return contract("coupling must be >= 0 and test fraction in [0, 1]");
    }
    if v < 2 {
        return contract("at least two regions are needed for the coupled pair");
    }
    let n_test = (n as f64 * test_fraction).round() as usize;
    let mut subjects = Vec::with_capacity(n);
    let mut splits = Vec::with_capacity(n);
    for i in 0..n {
        let label = (i % 2) as u8;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        let mut x: Vec<f64> = (0..t * v)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        for ti in 0..t {
            let z: f64 = StandardNormal.sample(&mut rng);
            if label == 1 && (ti / p) % 2 == 0 {
                for r in 0..2 {
                    x[ti * v + r] += c * z;
                }
            }
        }
        let signal = BoldSignal::new(format!("sub-{i:04}"), Tensor::matrix(t, v, x)?)?;
        subjects.push(Subject { signal, label });
        splits.push(if i >= n - n_test {
            Split::Test
        } else {
            Split::Train
        });
    }
    LabeledDataset::new(subjects, splits)
}

fn ingest_err(subject: &str, reason: impl Into<String>) -> Error {
    Error::Ingest {
        subject: subject.to_string(),
        reason: reason.into(),
    }
}

fn read_series(path: &Path, subject: &str) -> Result<Tensor> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| ingest_err(subject, format!("cannot read {}: {e}", path.display())))?;
    let mut data = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for rec in reader.records() {
        let rec = rec.map_err(|e| ingest_err(subject, e.to_string()))?;
        if *cols.get_or_insert(rec.len()) != rec.len() {
            return Err(ingest_err(
                subject,
                format!(
                    "ragged row {} ({} columns, expected {})",
                    rows + 1,
                    rec.len(),
                    cols.unwrap()
                ),
            ));
        }
        for field in rec.iter() {
            let v: f64 = field
                .parse()
                .map_err(|_| ingest_err(subject, format!("unparseable value {field:?}")))?;
            if !v.is_finite() {
                return Err(ingest_err(subject, format!("non-finite value {field:?}")));
            }
            data.push(v);
        }
        rows += 1;
    }
    match cols {
        Some(c) if rows > 0 && c > 0 => Tensor::matrix(rows, c, data),
        _ => Err(ingest_err(subject, "empty series")),
    }
}

/// Loads a dataset from `dir` using the manifest at `manifest` (relative
/// paths are resolved against `dir`).
pub fn load_dataset(dir: &Path, manifest: &Path) -> Result<LabeledDataset> {
    let manifest = if manifest.is_relative() {
        dir.join(manifest)
    } else {
        manifest.to_path_buf()
    };
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(&manifest)
        .map_err(|e| Error::Config(format!("cannot read manifest {}: {e}", manifest.display())))?;
    let headers = reader.headers()?.clone();
    let expected = ["subject_id", "filename", "label", "split"];
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(Error::Config(format!(
            "manifest header must be {}, got {}",
            expected.join(","),
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut subjects = Vec::new();
    let mut splits = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        let id = rec.get(0).unwrap_or_default().to_string();
        let file = rec.get(1).unwrap_or_default();
        let label = match rec.get(2).unwrap_or_default() {
            "0" => 0,
            "1" => 1,
            other => return Err(ingest_err(&id, format!("non-binary label {other:?}"))),
        };
        let split = rec
            .get(3)
            .unwrap_or_default()
            .parse::<Split>()
            .map_err(|e| ingest_err(&id, e.to_string()))?;
        let series = read_series(&dir.join(file), &id)?;
        subjects.push(Subject {
            signal: BoldSignal::new(id, series)?,
            label,
        });
        splits.push(split);
    }
    LabeledDataset::new(subjects, splits)
}

/// Writes `ds` under `dir` as `manifest.csv` plus `series/<subject>.csv`.
/// `comments` become leading `#` lines of the manifest.
pub fn write_dataset(dir: &Path, ds: &LabeledDataset, comments: &[String]) -> Result<()> {
    fs::create_dir_all(dir.join("series"))?;
    let mut manifest = String::new();
    for c in comments {
        manifest.push_str("# ");
        manifest.push_str(c);
        manifest.push('\n');
    }
    manifest.push_str("subject_id,filename,label,split\n");
    for (i, s) in ds.subjects().iter().enumerate() {
        let file = format!("series/{}.csv", s.signal.subject_id);
        manifest.push_str(&format!(
            "{},{},{},{}\n",
            s.signal.subject_id,
            file,
            s.label,
            ds.split_of(i).as_str()
        ));
        let mut body = String::new();
        let v = s.signal.regions();
        for row in s.signal.series.data().chunks(v) {
            let line: Vec<String> = row.iter().map(|x| format!("{x:?}")).collect();
            body.push_str(&line.join(","));
            body.push('\n');
        }
        fs::write(dir.join(&file), body)?;
    }
    fs::write(dir.join(MANIFEST_FILE), manifest)?;
    Ok(())
}
