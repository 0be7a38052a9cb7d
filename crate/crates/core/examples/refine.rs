//! Coordinate descent on gate parameters from a a rough start.

use lgo::data::{split, standardize, StandardizeOptions};
use lgo::expr::{parse_expr, print_expr, Node};
use lgo::refine::{refine, RefineConfig};
use lgo::synth::{gen_synth, SynthKind, SynthSpec};

fn main() {
    let (data, truth) = gen_synth(&SynthSpec::new(SynthKind::Step1d, 1000, 0.05, 5)).unwrap();
    let (train, test) = split(&data, 1, 0.2).unwrap();
    let (z_train, _, stats) = standardize(&train, &test, StandardizeOptions::default()).unwrap();
    let names = &z_train.feature_names;

    let start = parse_expr("mul(0.5, lgo_thre(map, 2.0, 0.3))", names).unwrap();
    let (out, report) = refine(&start, &z_train, &RefineConfig::default());
    println!("start : {}", print_expr(&start, names));
    println!("refined: {}", print_expr(&out, names));
    println!("loss {:.5} -> {:.5} after {} accepted moves", report.initial_loss, report.final_loss, report.accepted.len());

    let Node::Gate { params, .. } = out.gates()[0] else { unreachable!() };
    let b_z = params.b_z;
    let map = stats.index("map").unwrap();
    println!("threshold: {:.2} mmHg (true {})", stats.invert_value(map, b_z), truth.thresholds[0].b_star);
}
