//! Synthetic benchmarks with known cut-points in natural units.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Task};
use crate::error::{ConfigError, DataError, LgoError};

pub const MIN_ROWS: usize = 50;
pub const TARGET: &str = "y";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthKind {
    /// `c·1{map > 65}` plus a nuisance feature.
    Step1d,
    /// Sum of two independent single-feature steps.
    TwoGate,
    /// Product of two indicators.
    And2,
    /// Polynomial with no threshold.
    Smooth,
}

impl SynthKind {
    pub const ALL: [SynthKind; 4] = [SynthKind::Step1d, SynthKind::TwoGate, SynthKind::And2, SynthKind::Smooth];

    pub fn name(self) -> &'static str {
        match self {
            SynthKind::Step1d => "step1d",
            SynthKind::TwoGate => "two_gate",
            SynthKind::And2 => "and2",
            SynthKind::Smooth => "smooth",
        }
    }
}

impl fmt::Display for SynthKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SynthKind {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SynthKind::ALL
            .into_iter()
            .find(|k| k.name() == s.trim())
            .ok_or_else(|| ConfigError::UnknownSynthKind(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub kind: SynthKind,
    pub n: usize,
    /// Noise standard deviation as a fraction of the signal amplitude `c`.
    pub noise: f64,
    pub seed: u64,
    pub c: f64,
}

impl SynthSpec {
    pub fn new(kind: SynthKind, n: usize, noise: f64, seed: u64) -> Self {
        SynthSpec {
            kind,
            n,
            noise,
            seed,
            c: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    pub unit: String,
    pub low: f64,
    pub high: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrueThreshold {
    pub feature: String,
    pub unit: String,
    pub b_star: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub kind: SynthKind,
    pub n: usize,
    pub seed: u64,
    pub c: f64,
    pub noise: f64,
    pub noise_sigma: f64,
    pub target: String,
    pub formula: String,
    pub features: Vec<FeatureSpec>,
    pub thresholds: Vec<TrueThreshold>,
}

fn feature(name: &str, unit: &str, low: f64, high: f64) -> FeatureSpec {
    FeatureSpec {
        name: name.into(),
        unit: unit.into(),
        low,
        high,
    }
}

fn threshold(feature: &str, unit: &str, b_star: f64) -> TrueThreshold {
    TrueThreshold {
        feature: feature.into(),
        unit: unit.into(),
        b_star,
    }
}

fn layout(kind: SynthKind) -> (Vec<FeatureSpec>, Vec<TrueThreshold>, &'static str) {
    match kind {
        SynthKind::Step1d => (
            vec![feature("map", "mmHg", 40.0, 110.0), feature("age", "years", 20.0, 90.0)],
            vec![threshold("map", "mmHg", 65.0)],
            "c*1{map > 65}",
        ),
        SynthKind::TwoGate => (
            vec![
                feature("map", "mmHg", 40.0, 110.0),
                feature("lactate", "mmol/L", 0.5, 6.0),
                feature("age", "years", 20.0, 90.0),
            ],
            vec![threshold("map", "mmHg", 65.0), threshold("lactate", "mmol/L", 2.0)],
            "c*1{map > 65} + c*1{lactate > 2}",
        ),
        SynthKind::And2 => (
            vec![feature("sbp", "mmHg", 90.0, 170.0), feature("glucose", "mg/dL", 60.0, 160.0)],
            vec![threshold("sbp", "mmHg", 130.0), threshold("glucose", "mg/dL", 100.0)],
            "c*1{sbp > 130}*1{glucose > 100}",
        ),
        SynthKind::Smooth => (
            vec![feature("map", "mmHg", 40.0, 110.0), feature("lactate", "mmol/L", 0.5, 6.0)],
            vec![],
            "c*(u + 0.5*u^2 - 0.3*v), u = (map - 75)/20, v = (lactate - 3)/1.5",
        ),
    }
}

fn signal(kind: SynthKind, x: &[f64], c: f64) -> f64 {
    let step = |v: f64, b: f64| if v > b { 1.0 } else { 0.0 };
    match kind {
        SynthKind::Step1d => c * step(x[0], 65.0),
        SynthKind::TwoGate => c * step(x[0], 65.0) + c * step(x[1], 2.0),
        SynthKind::And2 => c * step(x[0], 130.0) * step(x[1], 100.0),
        SynthKind::Smooth => {
            let u = (x[0] - 75.0) / 20.0;
            let v = (x[1] - 3.0) / 1.5;
            c * (u + 0.5 * u * u - 0.3 * v)
        }
    }
}

/// Draws a regression dataset and its ground truth.
pub fn gen_synth(spec: &SynthSpec) -> Result<(Dataset, GroundTruth), ConfigError> {
    if spec.n < MIN_ROWS {
        return Err(ConfigError::Invalid(format!("n must be at least {MIN_ROWS}, got {}", spec.n)));
    }
    if !(spec.noise >= 0.0 && spec.noise.is_finite()) {
        return Err(ConfigError::Invalid(format!("noise must be finite and non-negative, got {}", spec.noise)));
    }
    let (features, thresholds, formula) = layout(spec.kind);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let sigma = spec.noise * spec.c.abs();
    let eps = Normal::new(0.0, sigma).map_err(|e| ConfigError::Invalid(e.to_string()))?;
    let mut columns: Vec<Vec<f64>> = vec![Vec::with_capacity(spec.n); features.len()];
    let mut y = Vec::with_capacity(spec.n);
    let mut row = vec![0.0; features.len()];
    for _ in 0..spec.n {
        for (j, f) in features.iter().enumerate() {
            row[j] = rng.random_range(f.low..f.high);
            columns[j].push(row[j]);
        }
        let noise = if sigma > 0.0 { eps.sample(&mut rng) } else { 0.0 };
        y.push(signal(spec.kind, &row, spec.c) + noise);
    }
    let names = features.iter().map(|f| f.name.clone()).collect();
    let mut data = Dataset::new(names, columns, y, Task::Regression)
        .map_err(|e| ConfigError::Invalid(e.to_string()))?;
    for f in &features {
        data.set_unit(&f.name, &f.unit);
    }
    let truth = GroundTruth {
        kind: spec.kind,
        n: spec.n,
        seed: spec.seed,
        c: spec.c,
        noise: spec.noise,
        noise_sigma: sigma,
        target: TARGET.into(),
        formula: formula.into(),
        features,
        thresholds,
    };
    Ok((data, truth))
}

/// Anchor YAML with every threshold as its own anchor; other features get
/// a unit only.
pub fn anchors_yaml(truth: &GroundTruth) -> String {
    let mut out = String::new();
    for f in &truth.features {
        out.push_str(&format!("{}:\n  unit: \"{}\"\n", f.name, f.unit));
        if let Some(t) = truth.thresholds.iter().find(|t| t.feature == f.name) {
            out.push_str(&format!("  anchor: {:?}\n  note: \"generating cut-point\"\n", t.b_star));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthFiles {
    pub data: PathBuf,
    pub truth: PathBuf,
    pub anchors: PathBuf,
}

/// Writes `<kind>.csv`, `<kind>_truth.json` and `<kind>_anchors.yaml` into `dir`.
pub fn write_synth(data: &Dataset, truth: &GroundTruth, dir: &Path) -> Result<SynthFiles, LgoError> {
    std::fs::create_dir_all(dir).map_err(|e| DataError::io(dir, e))?;
    let stem = truth.kind.name();
    let files = SynthFiles {
        data: dir.join(format!("{stem}.csv")),
        truth: dir.join(format!("{stem}_truth.json")),
        anchors: dir.join(format!("{stem}_anchors.yaml")),
    };
    data.write_csv(&files.data, TARGET)?;
    let json = serde_json::to_string_pretty(truth).map_err(|e| DataError::Other(e.to_string()))?;
    std::fs::write(&files.truth, json + "\n").map_err(|e| DataError::io(&files.truth, e))?;
    std::fs::write(&files.anchors, anchors_yaml(truth)).map_err(|e| DataError::io(&files.anchors, e))?;
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audit::parse_anchors;

    #[test]
    fn noiseless_step_labels_are_exact() {
        let (d, t) = gen_synth(&SynthSpec::new(SynthKind::Step1d, 500, 0.0, 3)).unwrap();
        assert_eq!(t.thresholds[0].b_star, 65.0);
        for i in 0..d.n_rows() {
            let expect = if d.columns[0][i] > 65.0 { 1.0 } else { 0.0 };
            assert_eq!(d.y[i], expect);
            assert!((40.0..110.0).contains(&d.columns[0][i]));
        }
        assert_eq!(d.unit(0), Some("mmHg"));
    }

    #[test]
    fn kinds_and_validation() {
        let (d, t) = gen_synth(&SynthSpec::new(SynthKind::Smooth, 60, 0.1, 1)).unwrap();
        assert!(t.thresholds.is_empty());
        assert_eq!(d.n_rows(), 60);
        let (_, t) = gen_synth(&SynthSpec::new(SynthKind::And2, 60, 0.1, 1)).unwrap();
        assert_eq!(t.thresholds.len(), 2);
        assert!(gen_synth(&SynthSpec::new(SynthKind::Step1d, 49, 0.1, 1)).is_err());
        assert!("ramp".parse::<SynthKind>().is_err());
        assert_eq!("two_gate".parse::<SynthKind>().unwrap(), SynthKind::TwoGate);
    }

    #[test]
    fn noise_scale_matches_request() {
        let (d, t) = gen_synth(&SynthSpec::new(SynthKind::Step1d, 20_000, 0.1, 9)).unwrap();
        let resid: Vec<f64> = (0..d.n_rows())
            .map(|i| d.y[i] - if d.columns[0][i] > 65.0 { 1.0 } else { 0.0 })
            .collect();
        let sd = (resid.iter().map(|r| r * r).sum::<f64>() / resid.len() as f64).sqrt();
        assert!((sd - t.noise_sigma).abs() < 0.005, "{sd}");
    }

    #[test]
    fn same_seed_same_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SynthSpec::new(SynthKind::TwoGate, 80, 0.2, 11);
        let (d, t) = gen_synth(&spec).unwrap();
        let a = write_synth(&d, &t, &dir.path().join("a")).unwrap();
        let (d, t) = gen_synth(&spec).unwrap();
        let b = write_synth(&d, &t, &dir.path().join("b")).unwrap();
        for (x, y) in [(a.data, b.data), (a.truth, b.truth), (a.anchors.clone(), b.anchors)] {
            assert_eq!(std::fs::read(x).unwrap(), std::fs::read(y).unwrap());
        }
        let cat = parse_anchors(&std::fs::read_to_string(a.anchors).unwrap()).unwrap();
        assert_eq!(cat.get("lactate").unwrap().anchor, Some(2.0));
        assert_eq!(cat.get("age").unwrap().anchor, None);
    }
}
