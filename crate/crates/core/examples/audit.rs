//! Banding recovered thresholds against a guideline anchor catalogue.

use lgo::audit::{audit_thresholds, parse_anchors, ThresholdSummary};

const ANCHORS: &str = r#"
lactate_mmol_l: { unit: mmol/L, anchor: 2.0 }
map_mmhg:       { unit: mmHg,   anchor: 65 }
resp_rate:      { unit: breaths/min, anchor: 24 }
sbp:            { unit: mmHg,   anchor: 130 }
bmi:            { unit: kg/m^2, anchor: 40 }
hdl:            { unit: mg/dL,  anchor: 40 }
waist:          { unit: cm,     anchor: 94 }
glucose:        { unit: mg/dL,  anchor: 100 }
gcs_flag:       { unit: (std) }
"#;

fn summary(feature: &str, median: f64) -> ThresholdSummary {
    ThresholdSummary {
        dataset: "example".into(),
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

fn main() {
    let catalogue = parse_anchors(ANCHORS).unwrap();
    let medians = [
        ("lactate_mmol_l", 1.886),
        ("map_mmhg", 63.71),
        ("resp_rate", 27.04),
        ("sbp", 128.335),
        ("hdl", 39.65),
        ("waist", 93.94),
        ("glucose", 85.452),
        ("gcs_flag", 0.3),
    ];
    let summaries: Vec<ThresholdSummary> = medians.iter().map(|(f, m)| summary(f, *m)).collect();
    let outcome = audit_thresholds(&summaries, &catalogue);
    for r in &outcome.rows {
        println!("{:<15} {:>9.3} {:>8} {:>6.2}%  {}", r.feature, r.median, r.anchor, 100.0 * r.rel_dev, r.band);
    }
    for e in &outcome.excluded {
        println!("{:<15} excluded ({})", e.feature, e.reason);
    }
    let c = outcome.counts;
    println!("{} green, {} yellow, {} red", c.green, c.yellow, c.red);
}
