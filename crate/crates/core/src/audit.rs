//! Anchor catalogues, threshold extraction in natural units, traffic-light
//! scoring and cross-seed aggregation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{fit_subexpr_stats, Dataset, FeatureStats, StdDdof};
use crate::error::{AnchorError, DataError};
use crate::expr::{print_expr, Expression, Node, Prim};
use crate::metrics::R2_ANOMALY_FLOOR;

/// Unit marking a standardized indicator; such features are never banded.
pub const STD_UNIT: &str = "(std)";
/// Unit reported for thresholds on gated subexpressions.
pub const EXPR_UNIT: &str = "(expr)";

#[derive(Debug, Clone, PartialEq)]
pub struct Anchor {
    pub feature: String,
    pub unit: String,
    pub anchor: Option<f64>,
    pub note: Option<String>,
}

impl Anchor {
    /// Has a numeric anchor and a natural unit.
    pub fn is_scorable(&self) -> bool {
        self.anchor.is_some() && self.unit != STD_UNIT
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AnchorCatalogue {
    entries: Vec<Anchor>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Coverage {
    /// Dataset features with a scorable anchor.
    pub anchored: Vec<String>,
    /// Remaining dataset features.
    pub unanchored: Vec<String>,
    /// Catalogue entries naming no dataset feature.
    pub unknown: Vec<String>,
}

impl AnchorCatalogue {
    pub fn entries(&self) -> &[Anchor] {
        &self.entries
    }

    pub fn get(&self, feature: &str) -> Option<&Anchor> {
        self.entries.iter().find(|a| a.feature == feature)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn coverage(&self, features: &[String]) -> Coverage {
        let (anchored, unanchored) = features
            .iter()
            .cloned()
            .partition(|f| self.get(f).is_some_and(Anchor::is_scorable));
        let unknown = self
            .entries
            .iter()
            .filter(|a| !features.contains(&a.feature))
            .map(|a| a.feature.clone())
            .collect();
        Coverage {
            anchored,
            unanchored,
            unknown,
        }
    }

    /// Copies catalogue units onto matching dataset features.
    pub fn apply_units(&self, data: &mut Dataset) {
        for a in &self.entries {
            data.set_unit(&a.feature, &a.unit);
        }
    }
}

pub fn load_anchors(path: &Path) -> Result<AnchorCatalogue, AnchorError> {
    let text = std::fs::read_to_string(path).map_err(|e| AnchorError::Yaml(format!("{}: {e}", path.display())))?;
    parse_anchors(&text)
}

fn duplicate_key(message: &str) -> Option<String> {
    let rest = message.split("duplicate entry with key").nth(1)?;
    let key = rest.trim().split_whitespace().next()?;
    Some(key.trim_matches(|c| c == '"' || c == '\'' || c == ',').to_string())
}

/// Parses the `feature: {unit, anchor, note}` schema.
pub fn parse_anchors(text: &str) -> Result<AnchorCatalogue, AnchorError> {
    let doc: serde_yaml::Value = serde_yaml::from_str(text).map_err(|e| {
        let msg = e.to_string();
        match duplicate_key(&msg) {
            Some(k) => AnchorError::DuplicateFeature(k),
            None => AnchorError::Yaml(msg),
        }
    })?;
    let map = match doc {
        serde_yaml::Value::Mapping(m) => m,
        serde_yaml::Value::Null => return Ok(AnchorCatalogue::default()),
        _ => return Err(AnchorError::Yaml("top level must be a mapping of features".into())),
    };
    let mut entries: Vec<Anchor> = Vec::with_capacity(map.len());
    for (k, v) in map {
        let feature = match k {
            serde_yaml::Value::String(s) => s,
            other => serde_yaml::to_string(&other).unwrap_or_default().trim().to_string(),
        };
        if entries.iter().any(|a| a.feature == feature) {
            return Err(AnchorError::DuplicateFeature(feature));
        }
        let serde_yaml::Value::Mapping(fields) = v else {
            return Err(AnchorError::BadEntry(feature));
        };
        let field = |name: &str| fields.get(serde_yaml::Value::String(name.into()));
        let unit = match field("unit") {
            Some(serde_yaml::Value::String(u)) if !u.trim().is_empty() => u.trim().to_string(),
            _ => return Err(AnchorError::MissingUnit(feature)),
        };
        let anchor = match field("anchor") {
            None | Some(serde_yaml::Value::Null) => None,
            Some(serde_yaml::Value::Number(n)) => n.as_f64(),
            Some(serde_yaml::Value::String(s)) => match s.trim().parse::<f64>() {
                Ok(v) if v.is_finite() => Some(v),
                _ => {
                    return Err(AnchorError::NonNumericAnchor {
                        feature,
                        value: s.clone(),
                    })
                }
            },
            Some(other) => {
                return Err(AnchorError::NonNumericAnchor {
                    feature,
                    value: serde_yaml::to_string(other).unwrap_or_default().trim().to_string(),
                })
            }
        };
        let note = match field("note") {
            Some(serde_yaml::Value::String(s)) => Some(s.clone()),
            _ => None,
        };
        entries.push(Anchor {
            feature,
            unit,
            anchor,
            note,
        });
    }
    Ok(AnchorCatalogue { entries })
}

/// What a gate thresholds: a raw feature, a subexpression, or several inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GateInput {
    Feature,
    Subexpr,
    Multi,
}

/// One gate occurrence in one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRow {
    pub seed: u64,
    /// Position of the model in its pool.
    pub model: usize,
    pub feature: String,
    pub input: GateInput,
    pub gate_type: String,
    pub b_z: f64,
    pub b_raw: Option<f64>,
    pub unit: String,
}

impl ThresholdRow {
    pub fn invertible(&self) -> bool {
        self.b_raw.is_some()
    }
}

fn collect_gates<'a>(node: &'a Node, out: &mut Vec<&'a Node>) {
    if matches!(node, Node::Gate { .. }) {
        out.push(node);
    }
    for c in node.children() {
        collect_gates(c, out);
    }
}

/// One row per gate in depth-first order. Feature gates are inverted with
/// `stats`; gated subexpressions use their own statistics on `z_train`;
/// multi-input gates are reported but left non-invertible.
pub fn extract_thresholds(
    expr: &Expression,
    z_train: &Dataset,
    stats: &FeatureStats,
    ddof: StdDdof,
    seed: u64,
    model: usize,
) -> Result<Vec<ThresholdRow>, DataError> {
    let names = &z_train.feature_names;
    let mut gates = Vec::new();
    collect_gates(&expr.root, &mut gates);
    let mut rows = Vec::with_capacity(gates.len());
    for g in gates {
        let Node::Gate { prim, inputs, params } = g else { unreachable!() };
        let b_z = params.b_z;
        let row = match (prim, inputs.as_slice()) {
            (Prim::Lgo | Prim::LgoThre | Prim::GateExpr | Prim::Gate, [Node::Var(i)]) => {
                let name = names.get(*i).ok_or_else(|| DataError::UnknownFeature(format!("x{i}")))?;
                let s = stats.index(name).ok_or_else(|| DataError::UnknownFeature(name.clone()))?;
                ThresholdRow {
                    seed,
                    model,
                    feature: name.clone(),
                    input: GateInput::Feature,
                    gate_type: prim.name().to_string(),
                    b_z,
                    b_raw: Some(stats.invert_value(s, b_z)),
                    unit: z_train.unit(*i).unwrap_or("").to_string(),
                }
            }
            (Prim::Lgo | Prim::LgoThre | Prim::GateExpr | Prim::Gate, [f]) => ThresholdRow {
                seed,
                model,
                feature: print_expr(&Expression::new(f.clone()), names),
                input: GateInput::Subexpr,
                gate_type: prim.name().to_string(),
                b_z,
                b_raw: fit_subexpr_stats(f, z_train, ddof).invert(b_z),
                unit: EXPR_UNIT.to_string(),
            },
            _ => ThresholdRow {
                seed,
                model,
                feature: inputs
                    .iter()
                    .map(|n| print_expr(&Expression::new(n.clone()), names))
                    .collect::<Vec<_>>()
                    .join(";"),
                input: GateInput::Multi,
                gate_type: prim.name().to_string(),
                b_z,
                b_raw: None,
                unit: EXPR_UNIT.to_string(),
            },
        };
        rows.push(row);
    }
    Ok(rows)
}

/// Linear-interpolation quantile (type 7) of unsorted values.
pub fn quantile(values: &[f64], p: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let h = (v.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

pub fn median(values: &[f64]) -> f64 {
    quantile(values, 0.5)
}

/// Per-feature threshold distribution in natural units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSummary {
    pub dataset: String,
    pub feature: String,
    pub unit: String,
    pub gate_cnt: usize,
    #[serde(rename = "models_with_gate_N")]
    pub models_with_gate_n: usize,
    pub models_with_gate_pct: f64,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub gate_type: String,
}

/// Pools invertible rows per feature. `n_models` is the number of models
/// the rows were drawn from.
pub fn summarize_thresholds(dataset: &str, rows: &[ThresholdRow], n_models: usize) -> Vec<ThresholdSummary> {
    let mut groups: BTreeMap<&str, Vec<&ThresholdRow>> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.invertible()) {
        groups.entry(&r.feature).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|(feature, rs)| {
            let vals: Vec<f64> = rs.iter().filter_map(|r| r.b_raw).collect();
            let models: BTreeSet<(u64, usize)> = rs.iter().map(|r| (r.seed, r.model)).collect();
            let types: BTreeSet<&str> = rs.iter().map(|r| r.gate_type.as_str()).collect();
            ThresholdSummary {
                dataset: dataset.to_string(),
                feature: feature.to_string(),
                unit: rs[0].unit.clone(),
                gate_cnt: rs.len(),
                models_with_gate_n: models.len(),
                models_with_gate_pct: if n_models == 0 {
                    0.0
                } else {
                    100.0 * models.len() as f64 / n_models as f64
                },
                median: median(&vals),
                q1: quantile(&vals, 0.25),
                q3: quantile(&vals, 0.75),
                gate_type: types.into_iter().collect::<Vec<_>>().join("|"),
            }
        })
        .collect()
}

/// Seed-level view: the median per seed, then median and IQR across seeds.
pub fn summarize_per_seed(dataset: &str, rows: &[ThresholdRow], n_models: usize) -> Vec<ThresholdSummary> {
    let mut by_seed: BTreeMap<u64, Vec<ThresholdRow>> = BTreeMap::new();
    for r in rows {
        by_seed.entry(r.seed).or_default().push(r.clone());
    }
    let mut medians: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for seed_rows in by_seed.values() {
        for s in summarize_thresholds(dataset, seed_rows, n_models) {
            medians.entry(s.feature).or_default().push(s.median);
        }
    }
    let pooled = summarize_thresholds(dataset, rows, n_models);
    pooled
        .into_iter()
        .map(|mut s| {
            let m = &medians[&s.feature];
            s.median = median(m);
            s.q1 = quantile(m, 0.25);
            s.q3 = quantile(m, 0.75);
            s
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Band {
    Green,
    Yellow,
    Red,
}

impl fmt::Display for Band {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Band::Green => "green",
            Band::Yellow => "yellow",
            Band::Red => "red",
        })
    }
}

pub const GREEN_MAX: f64 = 0.10;
pub const YELLOW_MAX: f64 = 0.20;

pub fn band(rel_dev: f64) -> Band {
    if rel_dev <= GREEN_MAX {
        Band::Green
    } else if rel_dev <= YELLOW_MAX {
        Band::Yellow
    } else {
        Band::Red
    }
}

/// `|median - anchor| / |anchor|`; `None` for a zero anchor.
pub fn rel_dev(median: f64, anchor: f64) -> Option<f64> {
    (anchor != 0.0 && anchor.is_finite()).then(|| (median - anchor).abs() / anchor.abs())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRow {
    pub feature: String,
    pub unit: String,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub anchor: f64,
    pub rel_dev: f64,
    pub band: Band,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Exclusion {
    pub feature: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BandCounts {
    pub green: usize,
    pub yellow: usize,
    pub red: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditOutcome {
    pub rows: Vec<AuditRow>,
    pub excluded: Vec<Exclusion>,
    pub counts: BandCounts,
}

/// Scores each summarized feature against its anchor.
pub fn audit_thresholds(summaries: &[ThresholdSummary], catalogue: &AnchorCatalogue) -> AuditOutcome {
    let mut rows = Vec::new();
    let mut excluded = Vec::new();
    let mut counts = BandCounts::default();
    for s in summaries {
        let exclude = |reason: &str| Exclusion {
            feature: s.feature.clone(),
            reason: reason.to_string(),
        };
        let Some(a) = catalogue.get(&s.feature) else {
            excluded.push(exclude("no anchor entry"));
            continue;
        };
        if a.unit == STD_UNIT {
            excluded.push(exclude("standardized indicator"));
            continue;
        }
        let Some(anchor) = a.anchor else {
            excluded.push(exclude("no anchor value"));
            continue;
        };
        let Some(rd) = rel_dev(s.median, anchor) else {
            excluded.push(exclude("anchor is zero"));
            continue;
        };
        if !s.median.is_finite() {
            excluded.push(exclude("no finite median"));
            continue;
        }
        let b = band(rd);
        match b {
            Band::Green => counts.green += 1,
            Band::Yellow => counts.yellow += 1,
            Band::Red => counts.red += 1,
        }
        rows.push(AuditRow {
            feature: s.feature.clone(),
            unit: a.unit.clone(),
            median: s.median,
            q1: s.q1,
            q3: s.q3,
            anchor,
            rel_dev: rd,
            band: b,
        });
    }
    AuditOutcome { rows, excluded, counts }
}

/// A pool member as seen by usage statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolRecord {
    pub seed: u64,
    pub rank: usize,
    pub expression: String,
    pub cv_loss: f64,
    pub complexity: usize,
    pub gates: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopKMode {
    /// Best `k` over the union of all seeds.
    #[default]
    Union,
    /// Best `k` of every seed.
    PerSeed,
}

fn pool_order(a: &PoolRecord, b: &PoolRecord) -> std::cmp::Ordering {
    a.cv_loss
        .total_cmp(&b.cv_loss)
        .then(a.complexity.cmp(&b.complexity))
        .then_with(|| a.expression.cmp(&b.expression))
        .then(a.seed.cmp(&b.seed))
}

pub fn select_top_k(records: &[PoolRecord], k: usize, mode: TopKMode) -> Vec<PoolRecord> {
    match mode {
        TopKMode::Union => {
            let mut all = records.to_vec();
            all.sort_by(pool_order);
            all.truncate(k);
            all
        }
        TopKMode::PerSeed => {
            let mut by_seed: BTreeMap<u64, Vec<PoolRecord>> = BTreeMap::new();
            for r in records {
                by_seed.entry(r.seed).or_default().push(r.clone());
            }
            by_seed
                .into_values()
                .flat_map(|mut v| {
                    v.sort_by(pool_order);
                    v.truncate(k);
                    v
                })
                .collect()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateUsageRow {
    pub dataset: String,
    pub experiment: String,
    pub top_k: usize,
    pub usage_pct: f64,
    pub median_gates: f64,
    pub complexity_median: f64,
    pub cv_loss_median: f64,
}

/// Usage over the first `k` records of an objective-sorted pool; `None`
/// for an empty pool. The row records the count actually used.
pub fn gate_usage(dataset: &str, experiment: &str, pool: &[PoolRecord], k: usize) -> Option<GateUsageRow> {
    let top = &pool[..k.min(pool.len())];
    if top.is_empty() {
        return None;
    }
    let n = top.len() as f64;
    let gates: Vec<f64> = top.iter().map(|r| r.gates as f64).collect();
    let cx: Vec<f64> = top.iter().map(|r| r.complexity as f64).collect();
    let loss: Vec<f64> = top.iter().map(|r| r.cv_loss).collect();
    Some(GateUsageRow {
        dataset: dataset.to_string(),
        experiment: experiment.to_string(),
        top_k: top.len(),
        usage_pct: 100.0 * top.iter().filter(|r| r.gates > 0).count() as f64 / n,
        median_gates: median(&gates),
        complexity_median: median(&cx),
        cv_loss_median: median(&loss),
    })
}

/// One line of `overall_metrics.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub dataset: String,
    pub method: String,
    pub experiment: String,
    pub seed: u64,
    pub metric: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub dataset: String,
    pub method: String,
    pub experiment: String,
    pub metric: String,
    pub mean: f64,
    pub std: f64,
    pub n_seeds: usize,
    /// Seeds left out because their `R²` fell below the anomaly floor.
    pub n_excluded: usize,
}

/// Mean and sample standard deviation across seeds per
/// (dataset, method, experiment, metric). Seeds whose `r2` is anomalous are
/// left out of every metric of their group.
pub fn aggregate_seeds(records: &[MetricRecord]) -> Vec<AggregateRow> {
    type Group<'a> = (&'a str, &'a str, &'a str);
    let mut anomalous: BTreeSet<(Group, u64)> = BTreeSet::new();
    for r in records {
        if r.metric == "r2" && r.value < R2_ANOMALY_FLOOR {
            anomalous.insert(((&r.dataset, &r.method, &r.experiment), r.seed));
        }
    }
    let mut values: BTreeMap<(Group, &str), (Vec<f64>, BTreeSet<u64>)> = BTreeMap::new();
    for r in records {
        let g: Group = (&r.dataset, &r.method, &r.experiment);
        let slot = values.entry((g, &r.metric)).or_default();
        if anomalous.contains(&(g, r.seed)) {
            slot.1.insert(r.seed);
        } else {
            slot.0.push(r.value);
        }
    }
    values
        .into_iter()
        .map(|(((dataset, method, experiment), metric), (v, excl))| {
            let n = v.len();
            let mean = if n == 0 { f64::NAN } else { v.iter().sum::<f64>() / n as f64 };
            let std = if n < 2 {
                0.0
            } else {
                (v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
            };
            AggregateRow {
                dataset: dataset.to_string(),
                method: method.to_string(),
                experiment: experiment.to_string(),
                metric: metric.to_string(),
                mean,
                std,
                n_seeds: n,
                n_excluded: excl.len(),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Task;
    use crate::expr::parse_expr;

    const SBP: &str = "systolic_bp:\n  unit: \"mmHg\"\n  anchor: 130.0\n  note: \"ACC/AHA threshold for elevated SBP\"\n";

    #[test]
    fn loads_schema_entry() {
        let cat = parse_anchors(SBP).unwrap();
        let a = cat.get("systolic_bp").unwrap();
        assert_eq!(a.unit, "mmHg");
        assert_eq!(a.anchor, Some(130.0));
        assert!(a.note.as_deref().unwrap().starts_with("ACC/AHA"));
    }

    #[test]
    fn anchor_errors() {
        assert_eq!(
            parse_anchors("x:\n  unit: mmHg\n  anchor: abc\n").unwrap_err(),
            AnchorError::NonNumericAnchor {
                feature: "x".into(),
                value: "abc".into()
            }
        );
        assert_eq!(
            parse_anchors("x:\n  anchor: 3\n").unwrap_err(),
            AnchorError::MissingUnit("x".into())
        );
        assert_eq!(
            parse_anchors("x:\n  unit: cm\ny:\n  unit: cm\nx:\n  unit: mm\n").unwrap_err(),
            AnchorError::DuplicateFeature("x".into())
        );
        assert!(matches!(parse_anchors("- 1\n- 2\n"), Err(AnchorError::Yaml(_))));
    }

    #[test]
    fn coverage_partitions_features() {
        let cat = parse_anchors(&format!("{SBP}age:\n  unit: years\nflag:\n  unit: \"(std)\"\n  anchor: 0.5\nghost:\n  unit: cm\n  anchor: 1\n")).unwrap();
        let feats: Vec<String> = ["systolic_bp", "age", "flag", "bmi"].map(String::from).to_vec();
        let cov = cat.coverage(&feats);
        assert_eq!(cov.anchored, vec!["systolic_bp"]);
        assert_eq!(cov.unanchored, vec!["age", "flag", "bmi"]);
        assert_eq!(cov.unknown, vec!["ghost"]);
        let all: BTreeSet<_> = cov.anchored.iter().chain(&cov.unanchored).collect();
        assert_eq!(all.len(), feats.len());
    }

    fn stats_for(names: &[&str], mu: &[f64], sigma: &[f64]) -> FeatureStats {
        FeatureStats {
            names: names.iter().map(|s| s.to_string()).collect(),
            mu: mu.to_vec(),
            sigma: sigma.to_vec(),
            passthrough: vec![false; names.len()],
            computed_on: "train",
        }
    }

    fn z_train() -> Dataset {
        let a: Vec<f64> = (0..20).map(|i| f64::from(i) / 10.0 - 1.0).collect();
        let b: Vec<f64> = a.iter().map(|v| v * v).collect();
        let mut d = Dataset::new(vec!["lactate".into(), "map".into()], vec![a, b], vec![0.0; 20], Task::Regression).unwrap();
        d.set_unit("lactate", "mmol/L");
        d
    }

    #[test]
    fn extraction_inverts_and_counts() {
        let d = z_train();
        let stats = stats_for(&["lactate", "map"], &[1.5, 70.0], &[0.8, 12.0]);
        let e = parse_expr(
            "add(lgo_thre(lactate, 1.0, 0.5), mul(lgo(map, 0.0, -0.25), gate_expr(add(lactate, map), 1.0, 0.1)), lgo_and2(lactate, map, 1.0, 0.0))",
            &d.feature_names,
        )
        .unwrap();
        let rows = extract_thresholds(&e, &d, &stats, StdDdof::Sample, 7, 0).unwrap();
        // oracle: structural gate count
        assert_eq!(rows.len(), e.gate_count());
        assert_eq!(rows[0].b_raw, Some(1.5 + 0.8 * 0.5));
        assert_eq!(rows[0].unit, "mmol/L");
        assert_eq!(rows[1].b_raw, Some(70.0 - 12.0 * 0.25));
        assert_eq!(rows[2].input, GateInput::Subexpr);
        assert_eq!(rows[2].unit, EXPR_UNIT);
        let f: Vec<f64> = (0..20).map(|i| d.columns[0][i] + d.columns[1][i]).collect();
        let mu = f.iter().sum::<f64>() / 20.0;
        let sd = (f.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / 19.0).sqrt();
        assert!((rows[2].b_raw.unwrap() - (mu + sd * 0.1)).abs() < 1e-12);
        assert_eq!(rows[3].input, GateInput::Multi);
        assert!(!rows[3].invertible());
        let none = parse_expr("add(lactate, map)", &d.feature_names).unwrap();
        assert!(extract_thresholds(&none, &d, &stats, StdDdof::Sample, 7, 0).unwrap().is_empty());
        let missing = stats_for(&["map"], &[0.0], &[1.0]);
        assert!(extract_thresholds(&e, &d, &missing, StdDdof::Sample, 7, 0).is_err());
    }

    #[test]
    fn type7_quantiles() {
        let v = [7.0, 1.0, 3.0, 5.0];
        assert_eq!(median(&v), 4.0);
        assert_eq!(quantile(&v, 0.25), 2.5);
        assert_eq!(quantile(&v, 0.75), 5.5);
        assert_eq!(quantile(&[2.0], 0.25), 2.0);
        assert!(median(&[]).is_nan());
    }

    #[test]
    fn band_boundaries() {
        assert_eq!(band(0.0), Band::Green);
        assert_eq!(band(0.10), Band::Green);
        assert_eq!(band(0.1000001), Band::Yellow);
        assert_eq!(band(0.20), Band::Yellow);
        assert_eq!(band(0.2000001), Band::Red);
        assert_eq!(rel_dev(1.0, 0.0), None);
    }

    fn summary(feature: &str, median: f64) -> ThresholdSummary {
        ThresholdSummary {
            dataset: "d".into(),
            feature: feature.into(),
            unit: String::new(),
            gate_cnt: 1,
            models_with_gate_n: 1,
            models_with_gate_pct: 100.0,
            median,
            q1: median,
            q3: median,
            gate_type: "lgo_thre".into(),
        }
    }

    #[test]
    fn audit_excludes_unscorable() {
        let cat = parse_anchors("a:\n  unit: cm\n  anchor: 0\nb:\n  unit: \"(std)\"\n  anchor: 1\nc:\n  unit: cm\nd:\n  unit: cm\n  anchor: 10\n").unwrap();
        let out = audit_thresholds(
            &[summary("a", 1.0), summary("b", 1.0), summary("c", 1.0), summary("d", 12.5), summary("e", 3.0)],
            &cat,
        );
        assert_eq!(out.rows.len(), 1);
        assert_eq!(out.rows[0].band, Band::Red);
        assert!((out.rows[0].rel_dev - 0.25).abs() < 1e-15);
        assert_eq!(out.excluded.len(), 4);
        assert_eq!(out.counts, BandCounts { green: 0, yellow: 0, red: 1 });
    }

    fn record(seed: u64, gates: usize, loss: f64) -> PoolRecord {
        PoolRecord {
            seed,
            rank: 0,
            expression: format!("e{seed}_{gates}_{loss}"),
            cv_loss: loss,
            complexity: 5 + gates,
            gates,
        }
    }

    #[test]
    fn usage_statistics() {
        let base: Vec<PoolRecord> = (0..5).map(|i| record(1, 0, f64::from(i))).collect();
        let u = gate_usage("d", "base", &base, 100).unwrap();
        assert_eq!((u.usage_pct, u.median_gates, u.top_k), (0.0, 0.0, 5));
        let ones: Vec<PoolRecord> = (0..4).map(|i| record(1, 1, f64::from(i))).collect();
        let u = gate_usage("d", "lgo_hard", &ones, 3).unwrap();
        assert_eq!((u.usage_pct, u.median_gates, u.top_k), (100.0, 1.0, 3));
        let mixed = vec![record(1, 0, 0.1), record(1, 0, 0.2), record(1, 4, 0.3)];
        assert_eq!(gate_usage("d", "x", &mixed, 3).unwrap().median_gates, 0.0);
        assert!(gate_usage("d", "x", &[], 3).is_none());
    }

    #[test]
    fn top_k_modes() {
        let recs = vec![record(1, 0, 0.5), record(1, 1, 0.1), record(2, 2, 0.3), record(2, 3, 0.9)];
        let union = select_top_k(&recs, 2, TopKMode::Union);
        assert_eq!(union.iter().map(|r| r.cv_loss).collect::<Vec<_>>(), vec![0.1, 0.3]);
        let per = select_top_k(&recs, 1, TopKMode::PerSeed);
        assert_eq!(per.iter().map(|r| r.cv_loss).collect::<Vec<_>>(), vec![0.1, 0.3]);
    }

    fn metric(seed: u64, metric: &str, value: f64) -> MetricRecord {
        MetricRecord {
            dataset: "d".into(),
            method: "lgo".into(),
            experiment: "lgo_hard".into(),
            seed,
            metric: metric.into(),
            value,
        }
    }

    #[test]
    fn seed_aggregation() {
        let agg = aggregate_seeds(&[metric(1, "rmse", 1.0), metric(2, "rmse", 2.0), metric(3, "rmse", 3.0)]);
        assert_eq!((agg[0].mean, agg[0].std, agg[0].n_seeds), (2.0, 1.0, 3));
        let single = aggregate_seeds(&[metric(1, "mae", 0.7)]);
        assert_eq!(single[0].std, 0.0);
        let agg = aggregate_seeds(&[
            metric(1, "r2", 0.9),
            metric(1, "rmse", 1.0),
            metric(2, "r2", -5.0),
            metric(2, "rmse", 9.0),
        ]);
        let rmse = agg.iter().find(|r| r.metric == "rmse").unwrap();
        assert_eq!((rmse.mean, rmse.n_excluded), (1.0, 1));
    }

    fn trow(seed: u64, model: usize, v: f64) -> ThresholdRow {
        ThresholdRow {
            seed,
            model,
            feature: "x".into(),
            input: GateInput::Feature,
            gate_type: "lgo_thre".into(),
            b_z: 0.0,
            b_raw: Some(v),
            unit: "cm".into(),
        }
    }

    #[test]
    fn pooled_and_per_seed_views_differ() {
        let rows: Vec<ThresholdRow> = [1.0, 2.0, 3.0, 4.0, 5.0]
            .iter()
            .enumerate()
            .map(|(i, v)| trow(1, i, *v))
            .chain(std::iter::once(trow(2, 0, 10.0)))
            .collect();
        let pooled = summarize_thresholds("d", &rows, 10);
        let per_seed = summarize_per_seed("d", &rows, 10);
        assert_eq!(pooled[0].median, 3.5);
        assert_eq!(per_seed[0].median, 6.5);
        assert_eq!(pooled[0].models_with_gate_n, 6);
        assert_eq!(pooled[0].models_with_gate_pct, 60.0);
    }
}
