//! Dataset ingestion, seeded train/test splits, train-only z-scoring and
//! inversion of z-space thresholds back to natural units.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{ConfigError, DataError};
use crate::expr::Node;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Regression,
    Binary,
}

impl FromStr for Task {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "regression" | "reg" => Ok(Task::Regression),
            "binary" | "classification" => Ok(Task::Binary),
            other => Err(ConfigError::UnknownTask(other.to_string())),
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Regression => "regression",
            Task::Binary => "binary",
        })
    }
}

/// Canonical seed list used when none is given.
pub const CANONICAL_SEEDS: [u64; 10] = [1, 2, 3, 5, 8, 13, 21, 34, 55, 89];

/// Named numeric columns in natural units plus a target.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub feature_names: Vec<String>,
    /// Optional unit per feature, aligned with `feature_names`.
    pub units: Vec<Option<String>>,
    /// Column-major feature values.
    pub columns: Vec<Vec<f64>>,
    pub y: Vec<f64>,
    pub task: Task,
    /// Rows removed at ingestion because of missing values.
    pub dropped_rows: usize,
}

impl Dataset {
    pub fn new(
        feature_names: Vec<String>,
        columns: Vec<Vec<f64>>,
        y: Vec<f64>,
        task: Task,
    ) -> Result<Self, DataError> {
        if feature_names.len() != columns.len() {
            return Err(DataError::Other("feature name/column count mismatch".into()));
        }
        if columns.iter().any(|c| c.len() != y.len()) {
            return Err(DataError::Other("ragged columns".into()));
        }
        for (i, n) in feature_names.iter().enumerate() {
            if feature_names[..i].contains(n) {
                return Err(DataError::DuplicateColumn(n.clone()));
            }
        }
        Ok(Dataset {
            units: vec![None; feature_names.len()],
            feature_names,
            columns,
            y,
            task,
            dropped_rows: 0,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.y.len()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.feature_names.iter().position(|n| n == name)
    }

    pub fn unit(&self, feature: usize) -> Option<&str> {
        self.units.get(feature).and_then(|u| u.as_deref())
    }

    pub fn set_unit(&mut self, feature: &str, unit: &str) -> bool {
        match self.feature_index(feature) {
            Some(i) => {
                self.units[i] = Some(unit.to_string());
                true
            }
            None => false,
        }
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.columns.iter().map(|c| c[i]).collect()
    }

    /// Rows at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            feature_names: self.feature_names.clone(),
            units: self.units.clone(),
            columns: self
                .columns
                .iter()
                .map(|c| indices.iter().map(|&i| c[i]).collect())
                .collect(),
            y: indices.iter().map(|&i| self.y[i]).collect(),
            task: self.task,
            dropped_rows: 0,
        }
    }

    /// Writes the dataset as CSV with the target as the last column.
    pub fn write_csv(&self, path: &Path, target: &str) -> Result<(), DataError> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header: Vec<&str> = self.feature_names.iter().map(String::as_str).collect();
        header.push(target);
        w.write_record(&header)?;
        for i in 0..self.n_rows() {
            let mut rec: Vec<String> = self.columns.iter().map(|c| c[i].to_string()).collect();
            rec.push(self.y[i].to_string());
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| DataError::io(path, e))?;
        Ok(())
    }
}

fn is_missing(field: &str) -> bool {
    matches!(
        field.trim().to_ascii_lowercase().as_str(),
        "" | "na" | "nan" | "null" | "none" | "?"
    )
}

/// Reads a comma-separated file with a header row. Rows with any missing
/// entry are dropped and counted.
pub fn load_csv(path: &Path, target_column: &str, task: Task) -> Result<Dataset, DataError> {
    let file = std::fs::File::open(path).map_err(|e| DataError::io(path, e))?;
    read_csv(file, target_column, task)
}

pub fn read_csv<R: std::io::Read>(
    reader: R,
    target_column: &str,
    task: Task,
) -> Result<Dataset, DataError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let target_idx = headers
        .iter()
        .position(|h| h == target_column)
        .ok_or_else(|| DataError::MissingTarget(target_column.to_string()))?;
    for (i, h) in headers.iter().enumerate() {
        if headers[..i].contains(h) {
            return Err(DataError::DuplicateColumn(h.clone()));
        }
    }
    let feature_cols: Vec<usize> = (0..headers.len()).filter(|&i| i != target_idx).collect();
    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); feature_cols.len()];
    let mut y = Vec::new();
    let mut dropped = 0;
    for (row_no, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if (0..headers.len()).any(|i| rec.get(i).is_none_or(is_missing)) {
            dropped += 1;
            continue;
        }
        let parse = |i: usize| -> Result<f64, DataError> {
            let raw = rec.get(i).unwrap_or("").trim();
            raw.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| DataError::NonNumeric {
                    column: headers[i].clone(),
                    value: raw.to_string(),
                    row: row_no + 1,
                })
        };
        y.push(parse(target_idx)?);
        for (slot, &ci) in feature_cols.iter().enumerate() {
            columns[slot].push(parse(ci)?);
        }
    }
    if y.is_empty() {
        return Err(DataError::Empty { dropped });
    }
    let names = feature_cols.iter().map(|&i| headers[i].clone()).collect();
    let mut ds = Dataset::new(names, columns, y, task)?;
    ds.dropped_rows = dropped;
    if dropped > 0 {
        log::info!("dropped {dropped} rows with missing values");
    }
    Ok(ds)
}

/// Row indices of a seeded train/test partition; both sides sorted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

pub const DEFAULT_TEST_FRACTION: f64 = 0.2;

pub fn split_indices(n: usize, seed: u64, test_fraction: f64) -> Result<Split, DataError> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(DataError::BadFraction(test_fraction));
    }
    let n_test = (n as f64 * test_fraction).round() as usize;
    if n_test == 0 || n_test >= n {
        return Err(DataError::TooSmall {
            n,
            fraction: test_fraction,
        });
    }
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    let mut test = idx[..n_test].to_vec();
    let mut train = idx[n_test..].to_vec();
    test.sort_unstable();
    train.sort_unstable();
    Ok(Split { train, test })
}

pub fn split(dataset: &Dataset, seed: u64, test_fraction: f64) -> Result<(Dataset, Dataset), DataError> {
    let s = split_indices(dataset.n_rows(), seed, test_fraction)?;
    Ok((dataset.subset(&s.train), dataset.subset(&s.test)))
}

/// Degrees-of-freedom correction for the standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
pub enum StdDdof {
    /// Denominator `n`.
    Population,
    /// Denominator `n - 1`.
    #[default]
    Sample,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ConstantColumnPolicy {
    Reject,
    /// Keep the column in natural units (`mu = 0`, `sigma = 1`) and warn.
    #[default]
    PassThrough,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StandardizeOptions {
    pub ddof: StdDdof,
    pub constant_columns: ConstantColumnPolicy,
}

impl Default for StandardizeOptions {
    fn default() -> Self {
        StandardizeOptions {
            ddof: StdDdof::Sample,
            constant_columns: ConstantColumnPolicy::PassThrough,
        }
    }
}

/// Per-feature location/scale estimated on one split.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStats {
    pub names: Vec<String>,
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    /// Features left unstandardized because they were constant on train.
    pub passthrough: Vec<bool>,
    pub computed_on: &'static str,
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

pub fn std_dev(values: &[f64], ddof: StdDdof) -> f64 {
    let n = values.len();
    let denom = match ddof {
        StdDdof::Population => n as f64,
        StdDdof::Sample => n.saturating_sub(1) as f64,
    };
    if denom <= 0.0 {
        return 0.0;
    }
    let m = mean(values);
    (values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / denom).sqrt()
}

impl FeatureStats {
    pub fn fit(train: &Dataset, opts: StandardizeOptions) -> Result<FeatureStats, DataError> {
        if train.n_rows() == 0 {
            return Err(DataError::Empty { dropped: 0 });
        }
        let mut mu = Vec::with_capacity(train.n_features());
        let mut sigma = Vec::with_capacity(train.n_features());
        let mut passthrough = Vec::with_capacity(train.n_features());
        for (name, col) in train.feature_names.iter().zip(&train.columns) {
            let m = mean(col);
            let s = std_dev(col, opts.ddof);
            if s > 0.0 && s.is_finite() {
                mu.push(m);
                sigma.push(s);
                passthrough.push(false);
            } else {
                match opts.constant_columns {
                    ConstantColumnPolicy::Reject => return Err(DataError::ZeroVariance(name.clone())),
                    ConstantColumnPolicy::PassThrough => {
                        log::warn!("feature `{name}` is constant on train; left unstandardized");
                        mu.push(0.0);
                        sigma.push(1.0);
                        passthrough.push(true);
                    }
                }
            }
        }
        Ok(FeatureStats {
            names: train.feature_names.clone(),
            mu,
            sigma,
            passthrough,
            computed_on: "train",
        })
    }

    pub fn index(&self, feature: &str) -> Option<usize> {
        self.names.iter().position(|n| n == feature)
    }

    #[inline]
    pub fn standardize_value(&self, feature: usize, v: f64) -> f64 {
        (v - self.mu[feature]) / self.sigma[feature]
    }

    #[inline]
    pub fn invert_value(&self, feature: usize, z: f64) -> f64 {
        self.mu[feature] + self.sigma[feature] * z
    }

    pub fn transform(&self, data: &Dataset) -> Dataset {
        let mut out = data.clone();
        for (j, col) in out.columns.iter_mut().enumerate() {
            col.iter_mut().for_each(|v| *v = self.standardize_value(j, *v));
        }
        out
    }

    /// `(feature, mu, sigma)` rows.
    pub fn write_csv(&self, path: &Path) -> Result<(), DataError> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["feature", "mu", "sigma"])?;
        for i in 0..self.names.len() {
            w.write_record([
                self.names[i].clone(),
                self.mu[i].to_string(),
                self.sigma[i].to_string(),
            ])?;
        }
        w.flush().map_err(|e| DataError::io(path, e))?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<FeatureStats, DataError> {
        let mut rdr = csv::Reader::from_path(path)?;
        let headers = rdr.headers()?.clone();
        let expect = ["feature", "mu", "sigma"];
        if headers.iter().collect::<Vec<_>>() != expect {
            return Err(DataError::Schema {
                file: path.display().to_string(),
                message: format!("expected columns {expect:?}, found {headers:?}"),
            });
        }
        let mut stats = FeatureStats {
            names: Vec::new(),
            mu: Vec::new(),
            sigma: Vec::new(),
            passthrough: Vec::new(),
            computed_on: "train",
        };
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let num = |i: usize, col: &str| -> Result<f64, DataError> {
                rec[i].trim().parse().map_err(|_| DataError::NonNumeric {
                    column: col.into(),
                    value: rec[i].to_string(),
                    row: row + 1,
                })
            };
            stats.names.push(rec[0].to_string());
            stats.mu.push(num(1, "mu")?);
            stats.sigma.push(num(2, "sigma")?);
            stats.passthrough.push(false);
        }
        Ok(stats)
    }
}

/// z-scores `train` and `test` using statistics estimated on `train` only.
pub fn standardize(
    train: &Dataset,
    test: &Dataset,
    opts: StandardizeOptions,
) -> Result<(Dataset, Dataset, FeatureStats), DataError> {
    let stats = FeatureStats::fit(train, opts)?;
    Ok((stats.transform(train), stats.transform(test), stats))
}

/// Maps a z-space threshold to natural units: `mu + sigma * b_z`.
pub fn invert_threshold(b_z: f64, feature: &str, stats: &FeatureStats) -> Result<f64, DataError> {
    let i = stats
        .index(feature)
        .ok_or_else(|| DataError::UnknownFeature(feature.to_string()))?;
    Ok(stats.invert_value(i, b_z))
}

/// Location/scale of a subexpression on the training fold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SubexprStats {
    Invertible { mu: f64, sigma: f64 },
    /// Degenerate spread: the gate cannot be mapped back and is left out of audits.
    NonInvertible { mu: f64 },
}

impl SubexprStats {
    pub fn invert(&self, b_z: f64) -> Option<f64> {
        match self {
            SubexprStats::Invertible { mu, sigma } => Some(mu + sigma * b_z),
            SubexprStats::NonInvertible { .. } => None,
        }
    }
}

pub fn fit_subexpr_stats(subtree: &Node, z_train: &Dataset, ddof: StdDdof) -> SubexprStats {
    let values = subtree.eval(&z_train.columns, z_train.n_rows());
    let mu = mean(&values);
    let sigma = std_dev(&values, ddof);
    let spread_floor = 1e-12 * mu.abs().max(1.0);
    if sigma.is_finite() && mu.is_finite() && sigma > spread_floor {
        SubexprStats::Invertible { mu, sigma }
    } else {
        SubexprStats::NonInvertible { mu }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{parse_expr, Prim};

    fn tiny() -> Dataset {
        Dataset::new(
            vec!["a".into(), "b".into()],
            vec![(0..10).map(f64::from).collect(), (0..10).map(|v| f64::from(v * v)).collect()],
            (0..10).map(|v| f64::from(v) * 0.5).collect(),
            Task::Regression,
        )
        .unwrap()
    }

    #[test]
    fn loads_three_column_file() {
        let csv = "a,b,y\n1,2,3\n4,5,6\n";
        let ds = read_csv(csv.as_bytes(), "y", Task::Regression).unwrap();
        assert_eq!(ds.n_features(), 2);
        assert_eq!(ds.columns[1], vec![2.0, 5.0]);
        assert_eq!(ds.y, vec![3.0, 6.0]);
        assert_eq!(ds.dropped_rows, 0);
    }

    #[test]
    fn drops_missing_rows() {
        let csv = "a,b,y\n1,2,3\n,,\n4,NA,6\n7,8,9\n";
        let ds = read_csv(csv.as_bytes(), "y", Task::Regression).unwrap();
        assert_eq!(ds.n_rows(), 2);
        assert_eq!(ds.dropped_rows, 2);
        let csv = "a,b,y\n1,2,3\n,,\n";
        assert_eq!(read_csv(csv.as_bytes(), "y", Task::Regression).unwrap().dropped_rows, 1);
    }

    #[test]
    fn ingestion_errors() {
        assert!(matches!(
            read_csv("a,b\n1,2\n".as_bytes(), "y", Task::Regression),
            Err(DataError::MissingTarget(_))
        ));
        match read_csv("a,y\n1,2\nx,3\n".as_bytes(), "y", Task::Regression) {
            Err(DataError::NonNumeric { column, value, row }) => {
                assert_eq!((column.as_str(), value.as_str(), row), ("a", "x", 2));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            read_csv("a,y\n,\n".as_bytes(), "y", Task::Regression),
            Err(DataError::Empty { dropped: 1 })
        ));
    }

    #[test]
    fn split_sizes_and_determinism() {
        let s = split_indices(10, 1, 0.2).unwrap();
        assert_eq!((s.train.len(), s.test.len()), (8, 2));
        assert_eq!(s, split_indices(10, 1, 0.2).unwrap());
        let mut all: Vec<usize> = s.train.iter().chain(&s.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        for seed in CANONICAL_SEEDS {
            assert!(split_indices(10, seed, 0.2).is_ok());
        }
        assert!(matches!(split_indices(3, 1, 0.1), Err(DataError::TooSmall { .. })));
        assert!(matches!(split_indices(10, 1, 1.0), Err(DataError::BadFraction(_))));
    }

    #[test]
    fn standardize_two_points() {
        let train = Dataset::new(vec!["x".into()], vec![vec![0.0, 2.0]], vec![0.0, 0.0], Task::Regression).unwrap();
        let test = Dataset::new(vec!["x".into()], vec![vec![1.0]], vec![0.0], Task::Regression).unwrap();
        let pop = StandardizeOptions {
            ddof: StdDdof::Population,
            ..Default::default()
        };
        let (zt, zs, st) = standardize(&train, &test, pop).unwrap();
        assert_eq!((st.mu[0], st.sigma[0]), (1.0, 1.0));
        assert_eq!(zt.columns[0], vec![-1.0, 1.0]);
        assert_eq!(zs.columns[0], vec![0.0]);
        // default: n-1 denominator
        let (zt, _, st) = standardize(&train, &test, Default::default()).unwrap();
        assert_eq!(st.sigma[0], 2f64.sqrt());
        assert!((zt.columns[0][1] - 1.0 / 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn constant_column_policies() {
        let train = Dataset::new(vec!["c".into()], vec![vec![5.0; 4]], vec![0.0; 4], Task::Regression).unwrap();
        let st = FeatureStats::fit(&train, Default::default()).unwrap();
        assert!(st.passthrough[0]);
        assert_eq!(st.transform(&train).columns[0], vec![5.0; 4]);
        let reject = StandardizeOptions {
            constant_columns: ConstantColumnPolicy::Reject,
            ..Default::default()
        };
        assert!(matches!(FeatureStats::fit(&train, reject), Err(DataError::ZeroVariance(_))));
    }

    #[test]
    fn inversion_arithmetic() {
        let st = FeatureStats {
            names: vec!["map".into()],
            mu: vec![90.0],
            sigma: vec![10.0],
            passthrough: vec![false],
            computed_on: "train",
        };
        assert_eq!(invert_threshold(1.5, "map", &st).unwrap(), 105.0);
        assert_eq!(invert_threshold(0.0, "map", &st).unwrap(), 90.0);
        assert!(matches!(invert_threshold(0.0, "hr", &st), Err(DataError::UnknownFeature(_))));
    }

    #[test]
    fn test_rows_never_move_train_stats() {
        let ds = tiny();
        let s = split_indices(ds.n_rows(), 3, 0.3).unwrap();
        let train = ds.subset(&s.train);
        let mut test = ds.subset(&s.test);
        let (_, _, before) = standardize(&train, &test, Default::default()).unwrap();
        test.columns[0].iter_mut().for_each(|v| *v += 1e6);
        let (_, _, after) = standardize(&train, &test, Default::default()).unwrap();
        assert_eq!(before, after);
    }

    #[test]
    fn subexpression_stats() {
        let ds = tiny();
        let (z, _, _) = standardize(&ds, &ds, Default::default()).unwrap();
        let names = ds.feature_names.clone();
        let ident = parse_expr("a", &names).unwrap();
        match fit_subexpr_stats(&ident.root, &z, StdDdof::Sample) {
            SubexprStats::Invertible { mu, sigma } => {
                assert!(mu.abs() < 1e-12);
                assert!((sigma - 1.0).abs() < 1e-12);
            }
            other => panic!("{other:?}"),
        }
        let konst = Node::op(Prim::Add, vec![Node::Const(1.0), Node::Const(2.0)]);
        assert!(matches!(
            fit_subexpr_stats(&konst, &z, StdDdof::Sample),
            SubexprStats::NonInvertible { .. }
        ));
        let doubled = parse_expr("mul(2.0, a)", &names).unwrap();
        // oracle: sample statistics of 2*z computed directly
        let vals: Vec<f64> = z.columns[0].iter().map(|v| 2.0 * v).collect();
        let m = vals.iter().sum::<f64>() / vals.len() as f64;
        let sd = (vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (vals.len() - 1) as f64).sqrt();
        match fit_subexpr_stats(&doubled.root, &z, StdDdof::Sample) {
            SubexprStats::Invertible { sigma, .. } => {
                assert!((sigma - sd).abs() < 1e-12);
                assert!((sigma - 2.0).abs() < 1e-12);
            }
            other => panic!("{other:?}"),
        }
    }
}
