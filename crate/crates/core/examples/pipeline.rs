//! Full multi-seed run with anchors, exports and manifest.

use lgo::audit::parse_anchors;
use lgo::expr::{print_expr, OperatorSet};
use lgo::experiment::{run_experiment, write_exports, RunConfig};
use lgo::search::SearchConfig;
use lgo::synth::{anchors_yaml, gen_synth, SynthKind, SynthSpec};

fn main() {
    let (data, truth) = gen_synth(&SynthSpec::new(SynthKind::And2, 1500, 0.1, 9)).unwrap();
    let anchors = parse_anchors(&anchors_yaml(&truth)).unwrap();
    let config = RunConfig {
        dataset: "and2".into(),
        search: SearchConfig {
            pop: 200,
            gen: 30,
            operator_set: OperatorSet::Hard,
            ..SearchConfig::default()
        },
        seeds: vec![1, 2, 3],
        ..RunConfig::default()
    };
    let result = run_experiment(&data, &config, Some(&anchors)).unwrap();
    for s in &result.seeds {
        println!("seed {}: r2 {:.4}  {}", s.seed, s.test_metrics.r2, print_expr(&s.best().simplified, &s.stats.names));
    }
    for t in &result.thresholds_pooled {
        if t.unit != "(expr)" {
            println!("{:<8} median {:>8.2} {:<7} in {:.0}% of models", t.feature, t.median, t.unit, t.models_with_gate_pct);
        }
    }
    if let Some(a) = &result.audit {
        for r in &a.rows {
            println!("{} vs {}: {}", r.feature, r.anchor, r.band);
        }
    }
    let out = std::env::temp_dir().join("lgo_pipeline_example");
    let manifest = write_exports(&result, &config, &out, None).unwrap();
    println!("{} artifacts under {}", manifest.artifacts.len(), out.display());
}
