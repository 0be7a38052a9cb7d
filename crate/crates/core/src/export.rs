//! Fixed-schema CSV exports and the run manifest.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::audit::{AggregateRow, AuditRow, GateUsageRow, MetricRecord, PoolRecord, ThresholdRow, ThresholdSummary};
use crate::error::DataError;
use crate::search::GenerationLog;

/// A CSV row type with a fixed column order.
pub trait CsvRow: Serialize {
    const HEADER: &'static [&'static str];
}

impl CsvRow for MetricRecord {
    const HEADER: &'static [&'static str] = &["dataset", "method", "experiment", "seed", "metric", "value"];
}

impl CsvRow for ThresholdSummary {
    const HEADER: &'static [&'static str] = &[
        "dataset",
        "feature",
        "unit",
        "gate_cnt",
        "models_with_gate_N",
        "models_with_gate_pct",
        "median",
        "q1",
        "q3",
        "gate_type",
    ];
}

impl CsvRow for AuditRow {
    const HEADER: &'static [&'static str] = &["feature", "unit", "median", "q1", "q3", "anchor", "rel_dev", "band"];
}

impl CsvRow for GateUsageRow {
    const HEADER: &'static [&'static str] = &[
        "dataset",
        "experiment",
        "top_k",
        "usage_pct",
        "median_gates",
        "complexity_median",
        "cv_loss_median",
    ];
}

impl CsvRow for ThresholdRow {
    const HEADER: &'static [&'static str] = &["seed", "model", "feature", "input", "gate_type", "b_z", "b_raw", "unit"];
}

impl CsvRow for AggregateRow {
    const HEADER: &'static [&'static str] = &[
        "dataset",
        "method",
        "experiment",
        "metric",
        "mean",
        "std",
        "n_seeds",
        "n_excluded",
    ];
}

impl CsvRow for PoolRecord {
    const HEADER: &'static [&'static str] = &["seed", "rank", "expression", "cv_loss", "complexity", "gates"];
}

impl CsvRow for GenerationLog {
    const HEADER: &'static [&'static str] = &["generation", "best_cv_loss", "median_complexity", "gate_count_best"];
}

/// One line of `topk_expressions.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopKRow {
    pub rank: usize,
    pub raw: String,
    pub simplified: String,
    /// `ok`, or `flagged` when a rewrite stage was rejected.
    pub equivalence_flag: String,
    pub cv_loss: f64,
    pub complexity: usize,
    pub seed: u64,
}

impl CsvRow for TopKRow {
    const HEADER: &'static [&'static str] = &[
        "rank",
        "raw",
        "simplified",
        "equivalence_flag",
        "cv_loss",
        "complexity",
        "seed",
    ];
}

/// Per-seed Pareto pool dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolRow {
    pub rank: usize,
    pub expression: String,
    pub cv_loss: f64,
    pub complexity: usize,
    pub seed: u64,
    pub generation: usize,
    pub train_loss: f64,
    pub gates: usize,
    pub on_front: bool,
}

impl CsvRow for PoolRow {
    const HEADER: &'static [&'static str] = &[
        "rank",
        "expression",
        "cv_loss",
        "complexity",
        "seed",
        "generation",
        "train_loss",
        "gates",
        "on_front",
    ];
}

/// Writes `rows` under `T::HEADER`; the header is present even with no rows.
pub fn write_rows<T: CsvRow>(path: &Path, rows: &[T]) -> Result<(), DataError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| DataError::io(dir, e))?;
    }
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| schema(path, e.to_string()))?;
    w.write_record(T::HEADER)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| DataError::io(path, e))?;
    Ok(())
}

fn schema(path: &Path, message: String) -> DataError {
    DataError::Schema {
        file: path.display().to_string(),
        message,
    }
}

/// Reads rows, first checking that every column in `required` is present.
pub fn read_rows<T: DeserializeOwned>(path: &Path, required: &[&str]) -> Result<Vec<T>, DataError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| match e.kind() {
        csv::ErrorKind::Io(_) => DataError::io(path, std::io::Error::other(e.to_string())),
        _ => schema(path, e.to_string()),
    })?;
    let headers = r.headers()?.clone();
    let missing: Vec<&str> = required.iter().copied().filter(|c| !headers.iter().any(|h| h == *c)).collect();
    if !missing.is_empty() {
        return Err(schema(path, format!("missing column(s): {}", missing.join(", "))));
    }
    let mut out = Vec::new();
    for (i, row) in r.deserialize().enumerate() {
        out.push(row.map_err(|e: csv::Error| schema(path, format!("row {}: {e}", i + 1)))?);
    }
    Ok(out)
}

pub fn sha256_file(path: &Path) -> Result<String, DataError> {
    let bytes = std::fs::read(path).map_err(|e| DataError::io(path, e))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    /// Path relative to the output directory, `/`-separated.
    pub file: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub dataset: String,
    pub data_path: Option<String>,
    pub method: String,
    pub experiment: String,
    pub seeds: Vec<u64>,
    pub config: serde_json::Value,
    pub output_dir: String,
    pub artifacts: Vec<Artifact>,
    pub self_check_failures: Vec<String>,
}

pub const MANIFEST: &str = "manifest.json";

fn collect_files(dir: &Path, out: &mut Vec<PathBuf>) -> Result<(), DataError> {
    let rd = std::fs::read_dir(dir).map_err(|e| DataError::io(dir, e))?;
    for entry in rd {
        let entry = entry.map_err(|e| DataError::io(dir, e))?;
        let p = entry.path();
        if p.is_dir() {
            collect_files(&p, out)?;
        } else {
            out.push(p);
        }
    }
    Ok(())
}

/// Hashes every file under `dir` except the manifest, sorted by path.
pub fn hash_artifacts(dir: &Path) -> Result<Vec<Artifact>, DataError> {
    let mut files = Vec::new();
    collect_files(dir, &mut files)?;
    let mut out = Vec::new();
    for f in files {
        let rel = f.strip_prefix(dir).unwrap_or(&f);
        let rel = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
        if rel == MANIFEST {
            continue;
        }
        out.push(Artifact {
            sha256: sha256_file(&f)?,
            file: rel,
        });
    }
    out.sort_by(|a, b| a.file.cmp(&b.file));
    Ok(out)
}

pub fn write_manifest(dir: &Path, manifest: &RunManifest) -> Result<PathBuf, DataError> {
    let path = dir.join(MANIFEST);
    let json = serde_json::to_string_pretty(manifest).map_err(|e| DataError::Other(e.to_string()))?;
    std::fs::write(&path, json + "\n").map_err(|e| DataError::io(&path, e))?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header_of<T: CsvRow>(row: &T) -> Vec<String> {
        let mut w = csv::Writer::from_writer(vec![]);
        w.serialize(row).unwrap();
        let text = String::from_utf8(w.into_inner().unwrap()).unwrap();
        text.lines().next().unwrap().split(',').map(String::from).collect()
    }

    #[test]
    fn serde_order_matches_declared_headers() {
        let m = MetricRecord {
            dataset: "d".into(),
            method: "lgo".into(),
            experiment: "lgo_hard".into(),
            seed: 1,
            metric: "r2".into(),
            value: 0.5,
        };
        assert_eq!(header_of(&m), MetricRecord::HEADER);
        let t = TopKRow {
            rank: 0,
            raw: "x".into(),
            simplified: "x".into(),
            equivalence_flag: "ok".into(),
            cv_loss: 0.1,
            complexity: 1,
            seed: 1,
        };
        assert_eq!(header_of(&t), TopKRow::HEADER);
        let p = PoolRow {
            rank: 0,
            expression: "x".into(),
            cv_loss: 0.0,
            complexity: 1,
            seed: 1,
            generation: 0,
            train_loss: 0.0,
            gates: 0,
            on_front: true,
        };
        assert_eq!(header_of(&p), PoolRow::HEADER);
    }

    #[test]
    fn empty_export_keeps_header_and_schema_errors_name_columns() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        write_rows::<ThresholdSummary>(&p, &[]).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap().trim(), ThresholdSummary::HEADER.join(","));
        let rows: Vec<ThresholdSummary> = read_rows(&p, ThresholdSummary::HEADER).unwrap();
        assert!(rows.is_empty());
        std::fs::write(&p, "feature,unit\nx,cm\n").unwrap();
        let err = read_rows::<ThresholdSummary>(&p, &["feature", "median"]).unwrap_err();
        assert!(err.to_string().contains("median"), "{err}");
    }

    #[test]
    fn artifact_hashes_are_sorted_and_skip_manifest() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir_all(dir.path().join("seed_1")).unwrap();
        std::fs::write(dir.path().join("b.csv"), "b").unwrap();
        std::fs::write(dir.path().join("seed_1/a.csv"), "a").unwrap();
        std::fs::write(dir.path().join(MANIFEST), "{}").unwrap();
        let arts = hash_artifacts(dir.path()).unwrap();
        assert_eq!(arts.iter().map(|a| a.file.as_str()).collect::<Vec<_>>(), vec!["b.csv", "seed_1/a.csv"]);
        // sha256("a")
        assert_eq!(arts[1].sha256, "ca978112ca1bbdcafac231b39a23dc4da786eff8147c4e72b9807785afee48bb");
    }
}
