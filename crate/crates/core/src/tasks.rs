//! Synthetic classification tasks and CSV ingestion with seeded splits.

use std::f64::consts::PI;
use std::path::Path;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::Matrix;
use crate::error::{Error, Result};
use crate::objective::{Batch, Split};

/// Train/validation/test fractions used by the generators: test takes a
/// quarter and the rest is halved into equal train and validation sets.
pub const GENERATOR_FRACTIONS: SplitFractions = SplitFractions {
    train: 0.375,
    val: 0.375,
    test: 0.25,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl SplitFractions {
    pub fn new(train: f64, val: f64, test: f64) -> Result<Self> {
        let f = SplitFractions { train, val, test };
        if [train, val, test].iter().any(|x| !(*x >= 0.0)) {
            return Err(Error::Data(format!("split fractions must be nonnegative: {f:?}")));
        }
        if ((train + val + test) - 1.0).abs() > 1e-9 {
            return Err(Error::Data(format!(
                "split fractions sum to {} instead of 1",
                train + val + test
            )));
        }
        Ok(f)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskMeta {
    pub name: String,
    pub seed: u64,
    pub noise: f64,
}

/// A labelled dataset with disjoint splits covering every row.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskData {
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub classes: usize,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    pub meta: TaskMeta,
}

impl TaskData {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn in_dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn indices(&self, split: Split) -> &[usize] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    pub fn batch(&self, split: Split) -> Batch {
        self.rows(self.indices(split))
    }

    /// Train and validation rows together.
    pub fn train_val_batch(&self) -> Batch {
        let rows: Vec<usize> = self.train.iter().chain(&self.val).copied().collect();
        self.rows(&rows)
    }

    fn rows(&self, rows: &[usize]) -> Batch {
        Batch {
            features: self.features.select(Axis(0), rows),
            labels: rows.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
        }
    }

    /// Zero mean, unit variance per column using train-split statistics.
    pub fn standardized(mut self) -> Self {
        if self.train.is_empty() {
            return self;
        }
        let train = self.features.select(Axis(0), &self.train);
        let n = train.nrows() as f64;
        for c in 0..self.features.ncols() {
            let col = train.column(c);
            let mean = col.sum() / n;
            let var = col.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
            let sd = if var > 0.0 { var.sqrt() } else { 1.0 };
            self.features
                .column_mut(c)
                .mapv_inplace(|x| (x - mean) / sd);
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        if self.features.nrows() != n {
            return Err(Error::Data(format!(
                "{} feature rows for {n} labels",
                self.features.nrows()
            )));
        }
        if let Some((row, &label)) = self.labels.iter().enumerate().find(|(_, &l)| l >= self.classes) {
            return Err(Error::LabelOutOfRange {
                row,
                label,
                classes: self.classes,
            });
        }
        let mut seen = vec![false; n];
        for &i in self.train.iter().chain(&self.val).chain(&self.test) {
            if i >= n || seen[i] {
                return Err(Error::Data(format!("row {i} is out of range or in two splits")));
            }
            seen[i] = true;
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::Data("splits do not cover every row".into()));
        }
        Ok(())
    }

    /// Sum of all feature values plus labels; a cheap determinism fingerprint.
    pub fn checksum(&self) -> f64 {
        self.features.sum() + self.labels.iter().sum::<usize>() as f64
    }
}

fn split_indices(n: usize, fractions: SplitFractions, rng: &mut ChaCha8Rng) -> [Vec<usize>; 3] {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let train = ((n as f64) * fractions.train).round() as usize;
    let val = (((n as f64) * fractions.val).round() as usize).min(n - train);
    let test = order.split_off(train + val);
    let val_rows = order.split_off(train);
    [order, val_rows, test]
}

fn assemble_task(
    name: &str,
    points: Vec<[f64; 2]>,
    labels: Vec<usize>,
    classes: usize,
    seed: u64,
    noise: f64,
    rng: &mut ChaCha8Rng,
) -> TaskData {
    let n = points.len();
    let features =
        Array2::from_shape_vec((n, 2), points.into_iter().flatten().collect()).expect("n×2");
    let [train, val, test] = split_indices(n, GENERATOR_FRACTIONS, rng);
    TaskData {
        features,
        labels,
        classes,
        train,
        val,
        test,
        meta: TaskMeta {
            name: name.to_string(),
            seed,
            noise,
        },
    }
}

fn check_generator(n: usize, min: usize, noise: f64) -> Result<()> {
    if n < min {
        return Err(Error::Data(format!("need at least {min} samples, got {n}")));
    }
    if !(noise >= 0.0) || !noise.is_finite() {
        return Err(Error::Data(format!("noise must be finite and >= 0, got {noise}")));
    }
    Ok(())
}

fn gaussian(rng: &mut ChaCha8Rng, sd: f64) -> f64 {
    if sd == 0.0 {
        return 0.0;
    }
    Normal::new(0.0, sd).expect("finite sd").sample(rng)
}

/// Two interleaving half circles.
pub fn gen_two_moons(n: usize, noise: f64, seed: u64) -> Result<TaskData> {
    check_generator(n, 4, noise)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let outer = n.div_ceil(2);
    let inner = n - outer;
    let angle = |i: usize, m: usize| {
        if m <= 1 {
            0.0
        } else {
            PI * i as f64 / (m - 1) as f64
        }
    };
    let mut points = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..outer {
        let t = angle(i, outer);
        points.push([t.cos(), t.sin()]);
        labels.push(0);
    }
    for i in 0..inner {
        let t = angle(i, inner);
        points.push([1.0 - t.cos(), 0.5 - t.sin()]);
        labels.push(1);
    }
    for p in &mut points {
        p[0] += gaussian(&mut rng, noise);
        p[1] += gaussian(&mut rng, noise);
    }
    Ok(assemble_task("two-moons", points, labels, 2, seed, noise, &mut rng))
}

/// Isotropic Gaussian clusters with centers evenly spaced on a circle of radius 4.
pub fn gen_blobs(n: usize, centers: usize, spread: f64, seed: u64) -> Result<TaskData> {
    check_generator(n, 4, spread)?;
    if centers < 2 {
        return Err(Error::Data(format!("need at least two centers, got {centers}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % centers;
        let theta = 2.0 * PI * c as f64 / centers as f64;
        points.push([
            4.0 * theta.cos() + gaussian(&mut rng, spread),
            4.0 * theta.sin() + gaussian(&mut rng, spread),
        ]);
        labels.push(c);
    }
    Ok(assemble_task("blobs", points, labels, centers, seed, spread, &mut rng))
}

/// Two interleaved Archimedean spirals making `turns` revolutions each.
pub fn gen_spirals(n: usize, turns: f64, noise: f64, seed: u64) -> Result<TaskData> {
    check_generator(n, 4, noise)?;
    if !(turns > 0.0) || !turns.is_finite() {
        return Err(Error::Data(format!("turns must be positive, got {turns}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let first = n.div_ceil(2);
    let mut points = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let arm = usize::from(i >= first);
        let m = if arm == 0 { first } else { n - first };
        let j = if arm == 0 { i } else { i - first };
        // Radius grows from 0.1 to 1 along the arm.
        let r = 0.1 + 0.9 * (j as f64 + 1.0) / m as f64;
        let theta = 2.0 * PI * turns * r + PI * arm as f64;
        points.push([
            r * theta.cos() + gaussian(&mut rng, noise),
            r * theta.sin() + gaussian(&mut rng, noise),
        ]);
        labels.push(arm);
    }
    Ok(assemble_task("spirals", points, labels, 2, seed, noise, &mut rng))
}

/// Parses a numeric CSV with a header row; `label_column` holds class indices.
pub fn load_csv(
    path: impl AsRef<Path>,
    label_column: &str,
    fractions: SplitFractions,
    seed: u64,
) -> Result<TaskData> {
    let path = path.as_ref();
    let fractions = SplitFractions::new(fractions.train, fractions.val, fractions.test)?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)?;
    let headers = reader.headers()?.clone();
    let label_idx = headers
        .iter()
        .position(|h| h.trim() == label_column)
        .ok_or_else(|| {
            Error::Data(format!(
                "{}: label column {label_column:?} not found in header {:?}",
                path.display(),
                headers.iter().collect::<Vec<_>>()
            ))
        })?;

    let width = headers.len();
    let mut values = Vec::new();
    let mut labels = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let record = record?;
        let row = r + 2;
        if record.len() != width {
            return Err(Error::Data(format!(
                "row {row}: expected {width} columns, found {}",
                record.len()
            )));
        }
        for (c, cell) in record.iter().enumerate() {
            let x: f64 = cell.trim().parse().map_err(|_| {
                Error::Data(format!(
                    "row {row}, column {} ({:?}): non-numeric cell {cell:?}",
                    c + 1,
                    &headers[c]
                ))
            })?;
            if c == label_idx {
                if x < 0.0 || x.fract() != 0.0 || !x.is_finite() {
                    return Err(Error::Data(format!(
                        "row {row}, column {}: label {cell:?} is not a nonnegative integer",
                        c + 1
                    )));
                }
                labels.push(x as usize);
            } else {
                values.push(x);
            }
        }
    }
    if labels.is_empty() {
        return Err(Error::Data(format!("{}: no data rows", path.display())));
    }
    let n = labels.len();
    let features = Array2::from_shape_vec((n, width - 1), values).expect("rectangular");
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let [train, val, test] = split_indices(n, fractions, &mut rng);
    Ok(TaskData {
        features,
        labels,
        classes,
        train,
        val,
        test,
        meta: TaskMeta {
            name: path.display().to_string(),
            seed,
            noise: 0.0,
        },
    })
}
