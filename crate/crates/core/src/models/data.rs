//! Datasets: CSV ingestion, train/test splits, standardization and the
//! bundled synthetic generators.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Row-major feature matrix with optional regression targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    targets: Option<Vec<f64>>,
    n: usize,
    d: usize,
    pub split: Option<Split>,
}

/// Train/test partition of row indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
}

/// Which CSV columns are features and which one is the target.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColumnRoles {
    /// Feature column names; empty means every column except the target.
    #[serde(default)]
    pub features: Vec<String>,
    #[serde(default)]
    pub target: Option<String>,
}

/// Per-column affine standardization fitted on the training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub feature_mean: Vec<f64>,
    pub feature_sd: Vec<f64>,
    pub target_mean: f64,
    pub target_sd: f64,
}

impl Dataset {
    pub fn new(features: Vec<f64>, d: usize, targets: Option<Vec<f64>>) -> Result<Self> {
        if d == 0 || !features.len().is_multiple_of(d) {
            return Err(Error::InvalidDataset(format!(
                "{} values do not form rows of width {d}",
                features.len()
            )));
        }
        let n = features.len() / d;
        if let Some(t) = &targets {
            if t.len() != n {
                return Err(Error::InvalidDataset(format!("{} targets for {n} rows", t.len())));
            }
            if t.iter().any(|v| v.is_nan()) {
                return Err(Error::InvalidDataset("NaN target".into()));
            }
        }
        if features.iter().any(|v| v.is_nan()) {
            return Err(Error::InvalidDataset("NaN feature".into()));
        }
        Ok(Self {
            features,
            targets,
            n,
            d,
            split: None,
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.d..(i + 1) * self.d]
    }

    pub fn target(&self, i: usize) -> Option<f64> {
        self.targets.as_ref().map(|t| t[i])
    }

    pub fn targets(&self) -> Option<&[f64]> {
        self.targets.as_deref()
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        let mut features = Vec::with_capacity(idx.len() * self.d);
        for &i in idx {
            features.extend_from_slice(self.row(i));
        }
        let targets = self.targets.as_ref().map(|t| idx.iter().map(|&i| t[i]).collect());
        Self {
            features,
            targets,
            n: idx.len(),
            d: self.d,
            split: None,
        }
    }

    /// Shuffled split with `test_fraction` of the rows held out.
    pub fn with_random_split(mut self, test_fraction: f64, seed: u64) -> Result<Self> {
        if !(0.0..1.0).contains(&test_fraction) {
            return Err(Error::InvalidDataset(format!("test fraction {test_fraction} not in [0, 1)")));
        }
        let mut idx: Vec<usize> = (0..self.n).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let n_test = (self.n as f64 * test_fraction).round() as usize;
        let test = idx[..n_test].to_vec();
        let train = idx[n_test..].to_vec();
        self.split = Some(Split { train, test, seed });
        Ok(self)
    }

    /// The first `n_train` rows train, the rest test.
    pub fn with_ordered_split(mut self, n_train: usize) -> Result<Self> {
        if n_train > self.n {
            return Err(Error::InvalidDataset(format!("{n_train} training rows of {}", self.n)));
        }
        self.split = Some(Split {
            train: (0..n_train).collect(),
            test: (n_train..self.n).collect(),
            seed: 0,
        });
        Ok(self)
    }

    pub fn train(&self) -> Self {
        match &self.split {
            Some(s) => self.subset(&s.train),
            None => self.clone(),
        }
    }

    pub fn test(&self) -> Self {
        match &self.split {
            Some(s) => self.subset(&s.test),
            None => self.subset(&[]),
        }
    }

    /// Z-scoring statistics from the training rows (all rows if unsplit).
    pub fn fit_standardizer(&self) -> Standardizer {
        let rows: Vec<usize> = match &self.split {
            Some(s) => s.train.clone(),
            None => (0..self.n).collect(),
        };
        let m = rows.len().max(1) as f64;
        let mut feature_mean = vec![0.0; self.d];
        let mut feature_sd = vec![0.0; self.d];
        for &i in &rows {
            for (j, v) in self.row(i).iter().enumerate() {
                feature_mean[j] += v / m;
            }
        }
        for &i in &rows {
            for (j, v) in self.row(i).iter().enumerate() {
                feature_sd[j] += (v - feature_mean[j]).powi(2) / m;
            }
        }
        for s in &mut feature_sd {
            *s = if *s > 0.0 { s.sqrt() } else { 1.0 };
        }
        let (target_mean, target_sd) = match &self.targets {
            Some(t) => {
                let mean = rows.iter().map(|&i| t[i]).sum::<f64>() / m;
                let var = rows.iter().map(|&i| (t[i] - mean).powi(2)).sum::<f64>() / m;
                (mean, if var > 0.0 { var.sqrt() } else { 1.0 })
            }
            None => (0.0, 1.0),
        };
        Standardizer {
            feature_mean,
            feature_sd,
            target_mean,
            target_sd,
        }
    }

    pub fn standardized(&self, s: &Standardizer) -> Self {
        let mut out = self.clone();
        for i in 0..self.n {
            for j in 0..self.d {
                let v = &mut out.features[i * self.d + j];
                *v = (*v - s.feature_mean[j]) / s.feature_sd[j];
            }
        }
        if let Some(t) = &mut out.targets {
            for v in t.iter_mut() {
                *v = (*v - s.target_mean) / s.target_sd;
            }
        }
        out
    }

    /// SHA-256 over the shape and little-endian values.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.n as u64).to_le_bytes());
        h.update((self.d as u64).to_le_bytes());
        for v in &self.features {
            h.update(v.to_le_bytes());
        }
        if let Some(t) = &self.targets {
            for v in t {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    pub fn from_csv(path: impl AsRef<Path>, roles: &ColumnRoles) -> Result<Self> {
        let rdr = csv::Reader::from_path(path.as_ref())?;
        Self::from_csv_reader(rdr, roles)
    }

    pub fn from_csv_str(text: &str, roles: &ColumnRoles) -> Result<Self> {
        Self::from_csv_reader(csv::Reader::from_reader(text.as_bytes()), roles)
    }

    fn from_csv_reader<R: std::io::Read>(mut rdr: csv::Reader<R>, roles: &ColumnRoles) -> Result<Self> {
        let header: Vec<String> = rdr.headers()?.iter().map(|s| s.trim().to_string()).collect();
        let find = |name: &str| {
            header
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::InvalidDataset(format!("column {name:?} not in header")))
        };
        let target_col = roles.target.as_deref().map(find).transpose()?;
        let feature_cols: Vec<usize> = if roles.features.is_empty() {
            (0..header.len()).filter(|&c| Some(c) != target_col).collect()
        } else {
            roles.features.iter().map(|f| find(f)).collect::<Result<_>>()?
        };
        if feature_cols.is_empty() {
            return Err(Error::InvalidDataset("no feature columns".into()));
        }
        let mut features = Vec::new();
        let mut targets = target_col.map(|_| Vec::new());
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let parse = |c: usize| -> Result<f64> {
                let s = rec.get(c).unwrap_or("").trim();
                s.parse::<f64>()
                    .map_err(|_| Error::InvalidDataset(format!("row {}: column {c} value {s:?}", line + 1)))
            };
            for &c in &feature_cols {
                features.push(parse(c)?);
            }
            if let (Some(t), Some(c)) = (targets.as_mut(), target_col) {
                t.push(parse(c)?);
            }
        }
        Self::new(features, feature_cols.len(), targets)
    }

    pub fn to_csv(&self, path: impl AsRef<Path>, prefix: &str) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header: Vec<String> = (0..self.d).map(|j| format!("{prefix}{j}")).collect();
        if self.targets.is_some() {
            header.push("y".into());
        }
        w.write_record(&header)?;
        for i in 0..self.n {
            let mut rec: Vec<String> = self.row(i).iter().map(|v| format_value(*v)).collect();
            if let Some(t) = self.target(i) {
                rec.push(format_value(t));
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn format_value(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}

/// Noisy sinusoid regression: `y = sin(x·w) + 0.1 (x·1) + noise`, `x ~ N(0, I)`.
pub fn synthetic_regression(n: usize, d: usize, noise_sd: f64, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
    let mut features = Vec::with_capacity(n * d);
    let mut targets = Vec::with_capacity(n);
    for _ in 0..n {
        let x: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let proj: f64 = x.iter().zip(&w).map(|(a, b)| a * b).sum();
        let e: f64 = rng.sample(StandardNormal);
        targets.push(proj.sin() + 0.1 * x.iter().sum::<f64>() + noise_sd * e);
        features.extend(x);
    }
    Dataset::new(features, d, Some(targets)).expect("generated data is finite")
}

const DIGIT_GLYPHS: [[&str; 8]; 10] = [
    [
        "..####..", ".##..##.", ".##..##.", ".##..##.", ".##..##.", ".##..##.", "..####..", "........",
    ],
    [
        "...##...", "..###...", "...##...", "...##...", "...##...", "...##...", "..####..", "........",
    ],
    [
        "..####..", ".##..##.", ".....##.", "....##..", "...##...", "..##....", ".######.", "........",
    ],
    [
        "..####..", ".##..##.", ".....##.", "...###..", ".....##.", ".##..##.", "..####..", "........",
    ],
    [
        "....##..", "...###..", "..#.##..", ".#..##..", ".######.", "....##..", "....##..", "........",
    ],
    [
        ".######.", ".##.....", ".#####..", ".....##.", ".....##.", ".##..##.", "..####..", "........",
    ],
    [
        "..####..", ".##.....", ".#####..", ".##..##.", ".##..##.", ".##..##.", "..####..", "........",
    ],
    [
        ".######.", ".....##.", "....##..", "...##...", "...##...", "...##...", "...##...", "........",
    ],
    [
        "..####..", ".##..##.", ".##..##.", "..####..", ".##..##.", ".##..##.", "..####..", "........",
    ],
    [
        "..####..", ".##..##.", ".##..##.", "..#####.", ".....##.", "....##..", "..###...", "........",
    ],
];

/// Binarized 8×8 digit images: a random glyph, shifted by up to one pixel in
/// each direction, with every pixel flipped independently with `flip_prob`.
pub fn synthetic_digits(n: usize, flip_prob: f64, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut features = Vec::with_capacity(n * 64);
    for _ in 0..n {
        let glyph = &DIGIT_GLYPHS[rng.random_range(0..10)];
        let dx: i32 = rng.random_range(-1..=1);
        let dy: i32 = rng.random_range(-1..=1);
        for r in 0..8i32 {
            for c in 0..8i32 {
                let (sr, sc) = (r - dy, c - dx);
                let on = (0..8).contains(&sr)
                    && (0..8).contains(&sc)
                    && glyph[sr as usize].as_bytes()[sc as usize] == b'#';
                let flip = rng.random::<f64>() < flip_prob;
                features.push(if on ^ flip { 1.0 } else { 0.0 });
            }
        }
    }
    Dataset::new(features, 64, None).expect("generated data is finite")
}

/// Seed, size and flip rate of the bundled `digits8x8.csv`.
pub const BUNDLED_DIGITS_SEED: u64 = 20_160_101;
pub const BUNDLED_DIGITS_ROWS: usize = 700;
pub const BUNDLED_DIGITS_TRAIN: usize = 500;
pub const BUNDLED_DIGITS_FLIP: f64 = 0.02;

/// The bundled 8×8 binary digits (500 train / 200 test rows).
pub fn bundled_digits() -> Dataset {
    let text = include_str!("../../data/digits8x8.csv");
    Dataset::from_csv_str(text, &ColumnRoles::default())
        .expect("bundled CSV parses")
        .with_ordered_split(BUNDLED_DIGITS_TRAIN)
        .expect("bundled CSV has enough rows")
}
