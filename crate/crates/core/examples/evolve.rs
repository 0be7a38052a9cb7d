//! One evolutionary search on a two-threshold synthetic benchmark.

use lgo::data::{split, standardize, StandardizeOptions};
use lgo::expr::{print_expr, OperatorSet};
use lgo::search::{evolve, SearchConfig};
use lgo::synth::{gen_synth, SynthKind, SynthSpec};

fn main() {
    let (data, _) = gen_synth(&SynthSpec::new(SynthKind::TwoGate, 1000, 0.1, 11)).unwrap();
    let (train, test) = split(&data, 1, 0.2).unwrap();
    let (z_train, _, _) = standardize(&train, &test, StandardizeOptions::default()).unwrap();

    let config = SearchConfig {
        pop: 200,
        gen: 30,
        operator_set: OperatorSet::Hard,
        seed: 1,
        ..SearchConfig::default()
    };
    let result = evolve(&config, &z_train).unwrap();
    for log in result.logs.iter().step_by(5) {
        println!(
            "gen {:>3}  best cv {:.5}  median complexity {:.1}",
            log.generation, log.best_cv_loss, log.median_complexity
        );
    }
    println!("evaluations: {}", result.evaluations);
    println!("Pareto front:");
    for e in result.pool.front() {
        println!("  {:>3}  {:.5}  {}", e.complexity, e.cv_loss, print_expr(&e.expression, &z_train.feature_names));
    }
}
