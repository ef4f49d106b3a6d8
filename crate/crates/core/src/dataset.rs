//! Tabular datasets: CSV loading and writing, the A/B row split, and the
//! synthetic planted-feature generator.
//!
//! Every [`Dataset`] remembers the original row index of each of its rows
//! (`row_ids`). Splits and row selections carry those ids along, which is
//! what lets the pipeline audit which rows each stage was handed.

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, seeded};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Classification,
    Regression,
}

impl std::str::FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "classification" | "c" | "clf" => Ok(TaskKind::Classification),
            "regression" | "r" | "reg" => Ok(TaskKind::Regression),
            other => Err(Error::Config(format!("unknown task kind `{other}`"))),
        }
    }
}

/// How the target column is addressed in a CSV header.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TargetColumn {
    Name(String),
    Index(usize),
}

impl From<&str> for TargetColumn {
    fn from(s: &str) -> Self {
        TargetColumn::Name(s.to_string())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Array2<f64>,
    target: Vec<f64>,
    task: TaskKind,
    feature_names: Vec<String>,
    target_name: String,
    row_ids: Vec<usize>,
    n_classes: usize,
}

impl Dataset {
    /// Builds a dataset, validating shape, finiteness and (for
    /// classification) that labels are contiguous integers `0..C` with `C >= 2`.
    pub fn new(
        features: Array2<f64>,
        target: Vec<f64>,
        task: TaskKind,
        feature_names: Vec<String>,
        target_name: impl Into<String>,
    ) -> Result<Self> {
        let row_ids = (0..target.len()).collect();
        Self::with_row_ids(features, target, task, feature_names, target_name.into(), row_ids)
    }

    fn with_row_ids(
        features: Array2<f64>,
        target: Vec<f64>,
        task: TaskKind,
        feature_names: Vec<String>,
        target_name: String,
        row_ids: Vec<usize>,
    ) -> Result<Self> {
        if features.nrows() != target.len() {
            return Err(Error::InvalidDataset(format!(
                "{} feature rows but {} targets",
                features.nrows(),
                target.len()
            )));
        }
        if features.ncols() == 0 {
            return Err(Error::InvalidDataset("no feature columns".into()));
        }
        if feature_names.len() != features.ncols() {
            return Err(Error::InvalidDataset(format!(
                "{} feature names for {} columns",
                feature_names.len(),
                features.ncols()
            )));
        }
        if features.iter().chain(target.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidDataset("NaN or infinite entry".into()));
        }
        let n_classes = match task {
            TaskKind::Regression => 0,
            TaskKind::Classification => {
                let mut seen = BTreeSet::new();
                for &y in &target {
                    if y < 0.0 || y.fract() != 0.0 {
                        return Err(Error::InvalidDataset(format!(
                            "classification label {y} is not a non-negative integer"
                        )));
                    }
                    seen.insert(y as usize);
                }
                let c = seen.len();
                if seen.iter().copied().ne(0..c) {
                    return Err(Error::InvalidDataset(
                        "classification labels must be contiguous 0..C-1".into(),
                    ));
                }
                c
            }
        };
        Ok(Dataset {
            features,
            target,
            task,
            feature_names,
            target_name,
            row_ids,
            n_classes,
        })
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn target(&self) -> &[f64] {
        &self.target
    }

    pub fn task(&self) -> TaskKind {
        self.task
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn target_name(&self) -> &str {
        &self.target_name
    }

    /// Original row index (in the loaded or generated source) of each row.
    pub fn row_ids(&self) -> &[usize] {
        &self.row_ids
    }

    pub fn n_samples(&self) -> usize {
        self.target.len()
    }

    pub fn n_features(&self) -> usize {
        self.features.ncols()
    }

    /// Number of classes `C` for classification, 0 for regression.
    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    /// Class labels as indices. Only meaningful for classification.
    pub fn labels(&self) -> Vec<usize> {
        self.target.iter().map(|&y| y as usize).collect()
    }

    /// Subset of rows by position. Classification labels are kept as-is, so
    /// the result may not contain every class; `n_classes` is inherited.
    pub fn select_rows(&self, positions: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select(Axis(0), positions),
            target: positions.iter().map(|&i| self.target[i]).collect(),
            task: self.task,
            feature_names: self.feature_names.clone(),
            target_name: self.target_name.clone(),
            row_ids: positions.iter().map(|&i| self.row_ids[i]).collect(),
            n_classes: self.n_classes,
        }
    }

    /// Feature submatrix restricted to `columns`, in the given order.
    pub fn columns(&self, columns: &[usize]) -> Array2<f64> {
        self.features.select(Axis(1), columns)
    }
}

/// Reads a CSV file with a header row. See [`read_csv`].
pub fn load_csv(path: impl AsRef<Path>, target: &TargetColumn, task: TaskKind) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, target, task)
}

/// Parses CSV text. Feature cells must be decimal reals; empty cells are
/// rejected. Classification targets may be arbitrary strings and are
/// encoded `0..C-1` in order of first appearance.
pub fn read_csv<R: Read>(reader: R, target: &TargetColumn, task: TaskKind) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let target_idx = match target {
        TargetColumn::Name(name) => headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingTarget(name.clone()))?,
        TargetColumn::Index(i) if *i < headers.len() => *i,
        TargetColumn::Index(i) => return Err(Error::MissingTarget(format!("#{i}"))),
    };
    let feature_names: Vec<String> = headers
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != target_idx)
        .map(|(_, h)| h.clone())
        .collect();

    let mut values = Vec::new();
    let mut target_vals = Vec::new();
    let mut label_codes: HashMap<String, usize> = HashMap::new();
    for (r, record) in rdr.records().enumerate() {
        let record = record?;
        // header is line 1
        let line = r + 2;
        for (c, cell) in record.iter().enumerate() {
            let cell = cell.trim();
            let column = headers.get(c).cloned().unwrap_or_else(|| format!("#{c}"));
            if cell.is_empty() {
                return Err(Error::EmptyCell { row: line, column });
            }
            if c == target_idx {
                match task {
                    TaskKind::Classification => {
                        let next = label_codes.len();
                        let code = *label_codes.entry(cell.to_string()).or_insert(next);
                        target_vals.push(code as f64);
                    }
                    TaskKind::Regression => target_vals.push(parse_real(cell, line, &column)?),
                }
            } else {
                values.push(parse_real(cell, line, &column)?);
            }
        }
    }
    if task == TaskKind::Classification && label_codes.len() < 2 {
        return Err(Error::DegenerateTarget(format!(
            "classification target has {} class(es)",
            label_codes.len()
        )));
    }
    let n = target_vals.len();
    let features = Array2::from_shape_vec((n, feature_names.len()), values)
        .map_err(|e| Error::InvalidDataset(e.to_string()))?;
    let target_name = headers[target_idx].clone();
    Dataset::new(features, target_vals, task, feature_names, target_name)
}

fn parse_real(cell: &str, row: usize, column: &str) -> Result<f64> {
    match cell.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(Error::NonNumeric {
            row,
            column: column.to_string(),
            value: cell.to_string(),
        }),
    }
}

/// Writes features followed by the target column. Reals use the shortest
/// representation that round-trips exactly.
pub fn write_csv<W: Write>(dataset: &Dataset, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header: Vec<&str> = dataset.feature_names.iter().map(String::as_str).collect();
    header.push(&dataset.target_name);
    wtr.write_record(&header)?;
    for (row, y) in dataset.features.rows().into_iter().zip(&dataset.target) {
        let mut rec: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        rec.push(match dataset.task {
            TaskKind::Classification => (*y as usize).to_string(),
            TaskKind::Regression => y.to_string(),
        });
        wtr.write_record(&rec)?;
    }
    wtr.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

pub fn save_csv(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_csv(dataset, std::io::BufWriter::new(file))
}

const MAX_SPLIT_RETRIES: usize = 100;

/// Random disjoint row partition into A (`floor(ratio_a * n)` rows) and B.
///
/// For classification every class must land in both halves; the permutation
/// is redrawn up to 100 times until that holds. Rows keep their original
/// relative order inside each half.
pub fn split_ab(dataset: &Dataset, ratio_a: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(ratio_a > 0.0 && ratio_a < 1.0) {
        return Err(Error::Split(format!("ratio {ratio_a} not in (0,1)")));
    }
    let n = dataset.n_samples();
    let n_a = (ratio_a * n as f64).floor() as usize;
    if n_a == 0 || n_a == n {
        return Err(Error::Split(format!(
            "ratio {ratio_a} on {n} rows leaves an empty side"
        )));
    }
    if dataset.task == TaskKind::Classification {
        let mut counts = vec![0usize; dataset.n_classes];
        for l in dataset.labels() {
            counts[l] += 1;
        }
        if let Some(c) = counts.iter().position(|&k| k < 2) {
            return Err(Error::Split(format!(
                "class {c} has {} sample(s); cannot appear in both splits",
                counts[c]
            )));
        }
    }

    let mut rng = seeded(seed);
    let mut perm: Vec<usize> = (0..n).collect();
    for _ in 0..MAX_SPLIT_RETRIES {
        perm.shuffle(&mut rng);
        let mut a: Vec<usize> = perm[..n_a].to_vec();
        let mut b: Vec<usize> = perm[n_a..].to_vec();
        a.sort_unstable();
        b.sort_unstable();
        if dataset.task == TaskKind::Regression
            || (covers_all_classes(dataset, &a) && covers_all_classes(dataset, &b))
        {
            return Ok((dataset.select_rows(&a), dataset.select_rows(&b)));
        }
    }
    Err(Error::Split(format!(
        "no stratified split found after {MAX_SPLIT_RETRIES} attempts"
    )))
}

fn covers_all_classes(dataset: &Dataset, rows: &[usize]) -> bool {
    let mut seen = vec![false; dataset.n_classes];
    for &r in rows {
        seen[dataset.target[r] as usize] = true;
    }
    seen.into_iter().all(|s| s)
}

/// Parameters of a planted-feature regression problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_real: usize,
    pub n_fake: usize,
    pub n_samples: usize,
    pub noise_std: f64,
    pub seed: u64,
    /// Adds the `w' * x0 * x1` term over the first two informative columns.
    #[serde(default = "default_true")]
    pub interaction: bool,
}

fn default_true() -> bool {
    true
}

impl SyntheticSpec {
    pub fn new(n_real: usize, n_fake: usize, n_samples: usize, noise_std: f64, seed: u64) -> Self {
        SyntheticSpec {
            n_real,
            n_fake,
            n_samples,
            noise_std,
            seed,
            interaction: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_real == 0 {
            return Err(Error::Config("synthetic n_real must be >= 1".into()));
        }
        if self.n_samples < 2 {
            return Err(Error::Config("synthetic n_samples must be >= 2".into()));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::Config("synthetic noise_std must be finite and >= 0".into()));
        }
        Ok(())
    }
}

/// A generated dataset together with the generating function.
#[derive(Debug, Clone)]
pub struct PlantedDataset {
    pub dataset: Dataset,
    /// Column indices of the informative features (sorted).
    pub informative: BTreeSet<usize>,
    /// Linear weight of each informative column, in the order of `informative`.
    pub weights: Vec<f64>,
    /// Weight of the product of the first two informative columns (0 when
    /// the interaction is off or `n_real < 2`).
    pub interaction_weight: f64,
}

impl PlantedDataset {
    /// Noise-free target for one row of features.
    pub fn signal(&self, row: &[f64]) -> f64 {
        let idx: Vec<usize> = self.informative.iter().copied().collect();
        planted_signal(&idx, &self.weights, self.interaction_weight, |i| row[i])
    }
}

/// Regression data where `n_real` randomly placed columns drive the target
/// through `sum_i w_i x_i + w' x_a x_b + noise` and the remaining `n_fake`
/// columns are independent standard normal noise.
///
/// Linear weights have magnitude in `[1, 2]` with random sign; the
/// interaction weight is in `[0.5, 1]`.
pub fn make_synthetic_planted(spec: &SyntheticSpec) -> Result<PlantedDataset> {
    spec.validate()?;
    let n_features = spec.n_real + spec.n_fake;
    let mut data_rng = seeded(derive_seed(spec.seed, 0));
    let mut param_rng = seeded(derive_seed(spec.seed, 1));

    let mut columns: Vec<usize> = (0..n_features).collect();
    columns.shuffle(&mut param_rng);
    let informative: BTreeSet<usize> = columns[..spec.n_real].iter().copied().collect();
    let weights: Vec<f64> = (0..spec.n_real)
        .map(|_| {
            let mag = param_rng.random_range(1.0..=2.0);
            if param_rng.random_bool(0.5) {
                mag
            } else {
                -mag
            }
        })
        .collect();
    let interaction_weight = if spec.interaction && spec.n_real >= 2 {
        param_rng.random_range(0.5..=1.0)
    } else {
        0.0
    };

    let features = Array2::from_shape_fn((spec.n_samples, n_features), |_| {
        data_rng.sample::<f64, _>(StandardNormal)
    });
    let informative_idx: Vec<usize> = informative.iter().copied().collect();
    let mut noise_rng = seeded(derive_seed(spec.seed, 2));
    let target: Vec<f64> = features
        .rows()
        .into_iter()
        .map(|row| {
            let noise = if spec.noise_std > 0.0 {
                spec.noise_std * noise_rng.sample::<f64, _>(StandardNormal)
            } else {
                0.0
            };
            planted_signal(&informative_idx, &weights, interaction_weight, |i| row[i]) + noise
        })
        .collect();
    let names = (0..n_features).map(|i| format!("x{i}")).collect();
    Ok(PlantedDataset {
        dataset: Dataset::new(features, target, TaskKind::Regression, names, "y")?,
        informative,
        weights,
        interaction_weight,
    })
}

fn planted_signal(
    informative: &[usize],
    weights: &[f64],
    interaction_weight: f64,
    x: impl Fn(usize) -> f64,
) -> f64 {
    let mut y: f64 = informative.iter().zip(weights).map(|(&i, w)| w * x(i)).sum();
    if informative.len() >= 2 {
        y += interaction_weight * x(informative[0]) * x(informative[1]);
    }
    y
}
