//! Synthetic benchmarks with recorded ground-truth thresholds.

use lgo::synth::{gen_synth, write_synth, SynthKind, SynthSpec};

fn main() {
    let dir = std::env::temp_dir().join("lgo_synth_example");
    for kind in [SynthKind::Step1d, SynthKind::TwoGate, SynthKind::And2, SynthKind::Smooth] {
        let (data, truth) = gen_synth(&SynthSpec::new(kind, 500, 0.1, 1)).unwrap();
        let files = write_synth(&data, &truth, &dir).unwrap();
        let cuts: Vec<String> = truth
            .thresholds
            .iter()
            .map(|t| format!("{} > {} {}", t.feature, t.b_star, t.unit))
            .collect();
        println!("{:<9} {}  [{}]", kind.name(), truth.formula, cuts.join(", "));
        println!("          {}", files.data.display());
    }
}
