//! Train-only z-scoring and mapping a gate threshold back to natural units.

use lgo::data::{invert_threshold, split, standardize, StandardizeOptions};
use lgo::synth::{gen_synth, SynthKind, SynthSpec};

fn main() {
    let (data, truth) = gen_synth(&SynthSpec::new(SynthKind::Step1d, 1000, 0.0, 3)).unwrap();
    let (train, test) = split(&data, 1, 0.2).unwrap();
    let (_z_train, _z_test, stats) = standardize(&train, &test, StandardizeOptions::default()).unwrap();

    for (i, name) in stats.names.iter().enumerate() {
        println!("{name:>5}: mu = {:.4}, sigma = {:.4}", stats.mu[i], stats.sigma[i]);
    }

    let b_star = truth.thresholds[0].b_star;
    let i = stats.index("map").unwrap();
    let b_z = stats.standardize_value(i, b_star);
    let back = invert_threshold(b_z, "map", &stats).unwrap();
    println!("b* = {b_star} mmHg -> b_z = {b_z:.6} -> {back:.12} mmHg");
}
