//! End-to-end runs: split, standardize, evolve, refine, simplify, score,
//! extract thresholds, aggregate and export.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audit::{
    aggregate_seeds, audit_thresholds, extract_thresholds, gate_usage, select_top_k, summarize_per_seed,
    summarize_thresholds, AnchorCatalogue, AuditOutcome, Coverage, GateUsageRow, MetricRecord, PoolRecord,
    ThresholdRow, ThresholdSummary, TopKMode,
};
use crate::data::{split, standardize, Dataset, FeatureStats, StandardizeOptions, CANONICAL_SEEDS, DEFAULT_TEST_FRACTION};
use crate::error::{DataError, LgoError};
use crate::export::{hash_artifacts, write_manifest, write_rows, PoolRow, RunManifest, TopKRow};
use crate::expr::{print_expr, Expression};
use crate::metrics::{compute_metrics, self_check, Finding, MetricReport};
use crate::refine::{refine, RefineConfig};
use crate::search::{engine_rmse, evolve, CvProxy, GenerationLog, SearchConfig};
use crate::simplify::{merge_near_duplicate_gates, simplify, EquivalenceReport, MergeReport, DEFAULT_MERGE_TOL};

pub const METHOD: &str = "lgo";
pub const DEFAULT_TOP_K: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub dataset: String,
    pub search: SearchConfig,
    pub seeds: Vec<u64>,
    pub test_fraction: f64,
    pub refine: RefineConfig,
    /// Pool members refined, simplified and audited per seed.
    pub top_k: usize,
    pub top_k_mode: TopKMode,
    pub merge_tol: f64,
    #[serde(skip)]
    pub standardize: StandardizeOptions,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset: "dataset".into(),
            search: SearchConfig::default(),
            seeds: CANONICAL_SEEDS.to_vec(),
            test_fraction: DEFAULT_TEST_FRACTION,
            refine: RefineConfig::default(),
            top_k: DEFAULT_TOP_K,
            top_k_mode: TopKMode::Union,
            merge_tol: DEFAULT_MERGE_TOL,
            standardize: StandardizeOptions::default(),
        }
    }
}

impl RunConfig {
    pub fn experiment(&self) -> &'static str {
        self.search.operator_set.experiment()
    }
}

/// A refined pool member.
#[derive(Debug, Clone)]
pub struct ModelRecord {
    pub rank: usize,
    pub expression: Expression,
    pub simplified: Expression,
    pub equivalence: EquivalenceReport,
    pub merge: MergeReport,
    pub cv_loss: f64,
    pub complexity: usize,
    pub train_loss: f64,
    pub gates: usize,
}

#[derive(Debug, Clone)]
pub struct SeedResult {
    pub seed: u64,
    pub stats: FeatureStats,
    /// Sorted by post-refit objective; the first is the selected model.
    pub models: Vec<ModelRecord>,
    pub test_metrics: MetricReport,
    pub internal_rmse: f64,
    pub findings: Vec<Finding>,
    pub thresholds: Vec<ThresholdRow>,
    pub logs: Vec<GenerationLog>,
    /// Final Pareto pool before refinement: `(key, cv_loss, complexity, train_loss, gates, on_front)`.
    pub pool: Vec<PoolRow>,
    pub evaluations: usize,
}

impl SeedResult {
    pub fn best(&self) -> &ModelRecord {
        &self.models[0]
    }

    /// Findings that fail the run (anomalies are only flagged).
    pub fn failures(&self) -> Vec<&Finding> {
        self.findings.iter().filter(|f| !f.is_anomaly()).collect()
    }
}

/// Runs the full per-seed pipeline on a dataset in natural units.
pub fn run_seed(data: &Dataset, config: &RunConfig, seed: u64) -> Result<SeedResult, LgoError> {
    let (train, test) = split(data, seed, config.test_fraction)?;
    let (z_train, z_test, stats) = standardize(&train, &test, config.standardize)?;
    let search = SearchConfig {
        seed,
        ..config.search.clone()
    };
    let evolved = evolve(&search, &z_train)?;
    // same draw as inside the search, so post-refit losses share its subsample
    let proxy = CvProxy::new(&z_train, &search.cv, &mut ChaCha8Rng::seed_from_u64(seed));
    let phase = proxy.phase(search.gen, search.gen);

    let front_keys: Vec<&str> = evolved.pool.front().iter().map(|e| e.key.as_str()).collect();
    let entries = evolved.pool.entries();
    let names = &z_train.feature_names;
    let pool: Vec<PoolRow> = entries
        .iter()
        .enumerate()
        .map(|(rank, e)| PoolRow {
            rank,
            expression: e.key.clone(),
            cv_loss: e.cv_loss,
            complexity: e.complexity,
            seed: e.seed,
            generation: e.generation,
            train_loss: e.train_loss,
            gates: e.gate_count(),
            on_front: front_keys.contains(&e.key.as_str()),
        })
        .collect();

    let mut refined: Vec<(Expression, f64, f64)> = entries
        .par_iter()
        .take(config.top_k.max(1))
        .map(|e| {
            let (r, _) = refine(&e.expression, &z_train, &config.refine);
            let cv = proxy.loss(&r, phase);
            let tr = proxy.full_train_loss(&r);
            (r, cv, tr)
        })
        .collect();
    if refined.is_empty() {
        let e = &evolved.best;
        refined.push((e.expression.clone(), e.cv_loss, e.train_loss));
    }
    let mut keyed: Vec<(String, Expression, f64, f64)> = refined
        .into_iter()
        .map(|(e, cv, tr)| (print_expr(&e, names), e, cv, tr))
        .collect();
    keyed.sort_by(|a, b| {
        a.2.total_cmp(&b.2)
            .then(a.1.complexity().cmp(&b.1.complexity()))
            .then_with(|| a.0.cmp(&b.0))
    });
    keyed.dedup_by(|a, b| a.0 == b.0);

    let models: Vec<ModelRecord> = keyed
        .into_par_iter()
        .enumerate()
        .map(|(rank, (_, expression, cv_loss, train_loss))| {
            let pred = expression.eval(&z_test.columns, z_test.n_rows());
            let metrics = compute_metrics(data.task, &z_test.y, &pred);
            let (simp, equivalence) = simplify(&expression, &z_test, &metrics);
            let (simplified, merge) = merge_near_duplicate_gates(&simp, config.merge_tol, &z_test, &metrics);
            ModelRecord {
                rank,
                complexity: expression.complexity(),
                gates: expression.gate_count(),
                expression,
                simplified,
                equivalence,
                merge,
                cv_loss,
                train_loss,
            }
        })
        .collect();

    let best = &models[0];
    let pred = best.expression.eval(&z_test.columns, z_test.n_rows());
    let test_metrics = compute_metrics(data.task, &z_test.y, &pred);
    let internal_rmse = engine_rmse(&pred, &z_test.y);
    let findings = self_check(&test_metrics, internal_rmse);

    let mut thresholds = Vec::new();
    for m in &models {
        thresholds.extend(extract_thresholds(
            &m.expression,
            &z_train,
            &stats,
            config.standardize.ddof,
            seed,
            m.rank,
        )?);
    }

    Ok(SeedResult {
        seed,
        stats,
        models,
        test_metrics,
        internal_rmse,
        findings,
        thresholds,
        logs: evolved.logs,
        pool,
        evaluations: evolved.evaluations,
    })
}

/// Per-seed results plus cross-seed summaries.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub seeds: Vec<SeedResult>,
    pub metrics: Vec<MetricRecord>,
    pub thresholds_pooled: Vec<ThresholdSummary>,
    pub thresholds_seed_view: Vec<ThresholdSummary>,
    pub usage: Option<GateUsageRow>,
    pub audit: Option<AuditOutcome>,
    pub coverage: Option<Coverage>,
}

impl RunResult {
    pub fn self_check_failures(&self) -> Vec<String> {
        self.seeds
            .iter()
            .flat_map(|s| s.failures().into_iter().map(move |f| format!("seed {}: {}", s.seed, f.describe())))
            .collect()
    }
}

pub fn pool_records(seeds: &[SeedResult]) -> Vec<PoolRecord> {
    seeds
        .iter()
        .flat_map(|s| {
            s.models.iter().map(move |m| PoolRecord {
                seed: s.seed,
                rank: m.rank,
                expression: print_expr(&m.expression, &s.stats.names),
                cv_loss: m.cv_loss,
                complexity: m.complexity,
                gates: m.gates,
            })
        })
        .collect()
}

/// Runs every seed in order and aggregates.
pub fn run_experiment(data: &Dataset, config: &RunConfig, anchors: Option<&AnchorCatalogue>) -> Result<RunResult, LgoError> {
    let mut data = data.clone();
    if let Some(cat) = anchors {
        cat.apply_units(&mut data);
    }
    let mut seeds = Vec::with_capacity(config.seeds.len());
    for &seed in &config.seeds {
        log::info!("seed {seed}: {} / {}", config.dataset, config.experiment());
        seeds.push(run_seed(&data, config, seed)?);
    }
    let metrics: Vec<MetricRecord> = seeds
        .iter()
        .flat_map(|s| {
            s.test_metrics.named_values().into_iter().map(move |(metric, value)| MetricRecord {
                dataset: config.dataset.clone(),
                method: METHOD.into(),
                experiment: config.experiment().into(),
                seed: s.seed,
                metric: metric.into(),
                value,
            })
        })
        .collect();
    let all_rows: Vec<ThresholdRow> = seeds.iter().flat_map(|s| s.thresholds.iter().cloned()).collect();
    let n_models: usize = seeds.iter().map(|s| s.models.len()).sum();
    let thresholds_pooled = summarize_thresholds(&config.dataset, &all_rows, n_models);
    let thresholds_seed_view = summarize_per_seed(&config.dataset, &all_rows, n_models);
    let records = select_top_k(&pool_records(&seeds), config.top_k, config.top_k_mode);
    let usage = gate_usage(&config.dataset, config.experiment(), &records, records.len());
    let audit = anchors.map(|cat| audit_thresholds(&thresholds_pooled, cat));
    let coverage = anchors.map(|cat| cat.coverage(&data.feature_names));
    Ok(RunResult {
        seeds,
        metrics,
        thresholds_pooled,
        thresholds_seed_view,
        usage,
        audit,
        coverage,
    })
}

pub const OVERALL_METRICS: &str = "overall_metrics.csv";
pub const AGGREGATED_METRICS: &str = "aggregated_metrics.csv";
pub const THRESHOLDS_UNITS: &str = "thresholds_units.csv";
pub const THRESHOLDS_SEED_VIEW: &str = "thresholds_seed_medians.csv";
pub const THRESHOLDS_PER_SEED: &str = "thresholds_per_seed.csv";
pub const THRESHOLD_AUDIT: &str = "threshold_audit.csv";
pub const GATING_USAGE: &str = "gating_usage.csv";
pub const TOPK_EXPRESSIONS: &str = "topk_expressions.csv";
pub const ANCHOR_COVERAGE: &str = "anchor_coverage.json";

fn flag_of(m: &ModelRecord) -> &'static str {
    if m.equivalence.flagged() || m.merge.rolled_back {
        "flagged"
    } else {
        "ok"
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), DataError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| DataError::Other(e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(|e| DataError::io(path, e))
}

#[derive(Serialize)]
struct CoverageJson<'a> {
    anchored: &'a [String],
    unanchored: &'a [String],
    unknown: &'a [String],
}

/// Writes every export and the manifest; returns the manifest.
pub fn write_exports(
    result: &RunResult,
    config: &RunConfig,
    out: &Path,
    data_path: Option<&Path>,
) -> Result<RunManifest, LgoError> {
    std::fs::create_dir_all(out).map_err(|e| DataError::io(out, e))?;
    write_rows(&out.join(OVERALL_METRICS), &result.metrics)?;
    write_rows(&out.join(AGGREGATED_METRICS), &aggregate_seeds(&result.metrics))?;
    write_rows(&out.join(THRESHOLDS_UNITS), &result.thresholds_pooled)?;
    write_rows(&out.join(THRESHOLDS_SEED_VIEW), &result.thresholds_seed_view)?;
    let rows: Vec<ThresholdRow> = result.seeds.iter().flat_map(|s| s.thresholds.iter().cloned()).collect();
    write_rows(&out.join(THRESHOLDS_PER_SEED), &rows)?;
    write_rows(&out.join(GATING_USAGE), result.usage.as_slice())?;
    let topk: Vec<TopKRow> = result
        .seeds
        .iter()
        .flat_map(|s| {
            s.models.iter().map(move |m| TopKRow {
                rank: m.rank,
                raw: print_expr(&m.expression, &s.stats.names),
                simplified: print_expr(&m.simplified, &s.stats.names),
                equivalence_flag: flag_of(m).into(),
                cv_loss: m.cv_loss,
                complexity: m.complexity,
                seed: s.seed,
            })
        })
        .collect();
    write_rows(&out.join(TOPK_EXPRESSIONS), &topk)?;
    if let Some(audit) = &result.audit {
        write_rows(&out.join(THRESHOLD_AUDIT), &audit.rows)?;
    }
    if let Some(cov) = &result.coverage {
        write_json(
            &out.join(ANCHOR_COVERAGE),
            &CoverageJson {
                anchored: &cov.anchored,
                unanchored: &cov.unanchored,
                unknown: &cov.unknown,
            },
        )?;
    }
    for s in &result.seeds {
        let dir = out.join(format!("seed_{}", s.seed));
        write_rows(&dir.join("gen_log.csv"), &s.logs)?;
        write_rows(&dir.join("pool.csv"), &s.pool)?;
        s.stats.write_csv(&dir.join("feature_stats.csv"))?;
    }
    let manifest = RunManifest {
        dataset: config.dataset.clone(),
        data_path: data_path.map(|p| p.display().to_string()),
        method: METHOD.into(),
        experiment: config.experiment().into(),
        seeds: config.seeds.clone(),
        config: serde_json::to_value(config).map_err(|e| DataError::Other(e.to_string()))?,
        output_dir: out.display().to_string(),
        artifacts: hash_artifacts(out)?,
        self_check_failures: result.self_check_failures(),
    };
    write_manifest(out, &manifest)?;
    Ok(manifest)
}

/// Tidy inputs for the four standard figures, gathered from run directories.
pub fn plot_data(runs: &[PathBuf], out: &Path) -> Result<Vec<PathBuf>, LgoError> {
    use crate::audit::AuditRow;
    use crate::export::{read_rows, CsvRow};
    std::fs::create_dir_all(out).map_err(|e| DataError::io(out, e))?;
    let mut metrics: Vec<MetricRecord> = Vec::new();
    let mut usage: Vec<GateUsageRow> = Vec::new();
    let mut audit: Vec<AuditRow> = Vec::new();
    let mut pareto: Vec<ParetoPoint> = Vec::new();
    for run in runs {
        let ms: Vec<MetricRecord> = read_rows(&run.join(OVERALL_METRICS), MetricRecord::HEADER)?;
        let (dataset, experiment) = ms
            .first()
            .map(|m| (m.dataset.clone(), m.experiment.clone()))
            .unwrap_or_default();
        metrics.extend(ms);
        let gu = run.join(GATING_USAGE);
        if gu.exists() {
            usage.extend(read_rows::<GateUsageRow>(&gu, GateUsageRow::HEADER)?);
        }
        let au = run.join(THRESHOLD_AUDIT);
        if au.exists() {
            audit.extend(read_rows::<AuditRow>(&au, AuditRow::HEADER)?);
        }
        let mut seed_dirs: Vec<(u64, PathBuf)> = std::fs::read_dir(run)
            .map_err(|e| DataError::io(run, e))?
            .filter_map(|e| e.ok())
            .filter_map(|e| {
                let name = e.file_name().to_string_lossy().to_string();
                name.strip_prefix("seed_").and_then(|s| s.parse().ok()).map(|s| (s, e.path()))
            })
            .collect();
        seed_dirs.sort();
        for (seed, dir) in seed_dirs {
            let rows: Vec<PoolRow> = read_rows(&dir.join("pool.csv"), PoolRow::HEADER)?;
            pareto.extend(rows.into_iter().map(|r| ParetoPoint {
                dataset: dataset.clone(),
                experiment: experiment.clone(),
                seed,
                cv_loss: r.cv_loss,
                complexity: r.complexity,
                gates: r.gates,
                on_front: r.on_front,
            }));
        }
    }
    let files = [
        out.join("violin_metrics.csv"),
        out.join("pareto_points.csv"),
        out.join("gate_usage.csv"),
        out.join("threshold_alignment.csv"),
    ];
    write_rows(&files[0], &metrics)?;
    write_rows(&files[1], &pareto)?;
    write_rows(&files[2], &usage)?;
    write_rows(&files[3], &audit)?;
    Ok(files.to_vec())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoPoint {
    pub dataset: String,
    pub experiment: String,
    pub seed: u64,
    pub cv_loss: f64,
    pub complexity: usize,
    pub gates: usize,
    pub on_front: bool,
}

impl crate::export::CsvRow for ParetoPoint {
    const HEADER: &'static [&'static str] = &["dataset", "experiment", "seed", "cv_loss", "complexity", "gates", "on_front"];
}

/// One line of a re-simplified pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimplifiedRow {
    pub rank: usize,
    pub expression: String,
    pub simplified: String,
    pub equivalence_flag: String,
    pub max_deviation: f64,
    pub complexity_before: usize,
    pub complexity_after: usize,
}

impl crate::export::CsvRow for SimplifiedRow {
    const HEADER: &'static [&'static str] = &[
        "rank",
        "expression",
        "simplified",
        "equivalence_flag",
        "max_deviation",
        "complexity_before",
        "complexity_after",
    ];
}

#[derive(Deserialize)]
struct PoolInput {
    expression: Option<String>,
    raw: Option<String>,
}

/// Re-simplifies every expression of an exported pool against `data`.
///
/// Expressions live in z-space; without `stats` the scaling is fitted on all of `data`.
pub fn simplify_pool(
    pool_path: &Path,
    data: &Dataset,
    stats: Option<&FeatureStats>,
    opts: StandardizeOptions,
) -> Result<Vec<SimplifiedRow>, LgoError> {
    use crate::export::read_rows;
    let inputs: Vec<PoolInput> = read_rows(pool_path, &[])?;
    let fitted;
    let stats = match stats {
        Some(s) => s,
        None => {
            fitted = FeatureStats::fit(data, opts)?;
            &fitted
        }
    };
    let z = stats.transform(data);
    let names = &z.feature_names;
    let mut out = Vec::with_capacity(inputs.len());
    for (rank, row) in inputs.into_iter().enumerate() {
        let src = row.expression.or(row.raw).ok_or_else(|| DataError::Schema {
            file: pool_path.display().to_string(),
            message: "missing column(s): expression".into(),
        })?;
        let expr = crate::expr::parse_expr(&src, names)?;
        let pred = expr.eval(&z.columns, z.n_rows());
        let metrics = compute_metrics(data.task, &z.y, &pred);
        let (simp, eq) = simplify(&expr, &z, &metrics);
        let (simplified, merge) = merge_near_duplicate_gates(&simp, DEFAULT_MERGE_TOL, &z, &metrics);
        let flagged = eq.flagged() || merge.rolled_back;
        out.push(SimplifiedRow {
            rank,
            expression: src,
            simplified: print_expr(&simplified, names),
            equivalence_flag: if flagged { "flagged" } else { "ok" }.into(),
            max_deviation: eq.max_deviation.max(merge.max_deviation),
            complexity_before: expr.complexity(),
            complexity_after: simplified.complexity(),
        });
    }
    Ok(out)
}

#[derive(Deserialize)]
struct SummaryInput {
    #[serde(default)]
    dataset: String,
    feature: String,
    #[serde(default)]
    unit: String,
    median: f64,
    q1: Option<f64>,
    q3: Option<f64>,
}

/// Reads a threshold summary; only `feature` and `median` are required.
pub fn read_threshold_summaries(path: &Path) -> Result<Vec<ThresholdSummary>, DataError> {
    use crate::export::read_rows;
    let rows: Vec<SummaryInput> = read_rows(path, &["feature", "median"])?;
    Ok(rows
        .into_iter()
        .map(|r| ThresholdSummary {
            dataset: r.dataset,
            feature: r.feature,
            unit: r.unit,
            gate_cnt: 0,
            models_with_gate_n: 0,
            models_with_gate_pct: 0.0,
            median: r.median,
            q1: r.q1.unwrap_or(f64::NAN),
            q3: r.q3.unwrap_or(f64::NAN),
            gate_type: String::new(),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::OperatorSet;
    use crate::synth::{gen_synth, SynthKind, SynthSpec};

    fn small(set: OperatorSet) -> RunConfig {
        RunConfig {
            dataset: "step".into(),
            search: SearchConfig {
                pop: 60,
                gen: 6,
                operator_set: set,
                ..SearchConfig::default()
            },
            seeds: vec![1, 2],
            top_k: 10,
            ..RunConfig::default()
        }
    }

    #[test]
    fn seed_pipeline_produces_consistent_records() {
        let (d, _) = gen_synth(&SynthSpec::new(SynthKind::Step1d, 300, 0.1, 4)).unwrap();
        let r = run_seed(&d, &small(OperatorSet::Hard), 3).unwrap();
        assert!(!r.models.is_empty() && r.models.len() <= 10);
        for w in r.models.windows(2) {
            assert!(w[0].cv_loss <= w[1].cv_loss);
        }
        let gates: usize = r.models.iter().map(|m| m.gates).sum();
        assert_eq!(r.thresholds.len(), gates);
        assert!(r.failures().is_empty(), "{:?}", r.findings);
        for m in &r.models {
            assert!(m.equivalence.passed());
        }
    }

    #[test]
    fn base_run_exports_empty_threshold_table() {
        let (d, _) = gen_synth(&SynthSpec::new(SynthKind::Step1d, 200, 0.1, 4)).unwrap();
        let cfg = small(OperatorSet::Base);
        let res = run_experiment(&d, &cfg, None).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let m = write_exports(&res, &cfg, dir.path(), None).unwrap();
        let text = std::fs::read_to_string(dir.path().join(THRESHOLDS_UNITS)).unwrap();
        assert_eq!(text.lines().count(), 1);
        assert_eq!(res.usage.as_ref().unwrap().usage_pct, 0.0);
        assert!(m.artifacts.iter().any(|a| a.file == "seed_2/pool.csv"));
        let plots = plot_data(&[dir.path().to_path_buf()], &dir.path().join("plots")).unwrap();
        let violin = std::fs::read_to_string(&plots[0]).unwrap();
        // one row per (seed, metric) plus the header
        assert_eq!(violin.lines().count(), 1 + 2 * 3);
    }
}
