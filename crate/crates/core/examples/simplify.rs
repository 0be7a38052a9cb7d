//! Staged simplification under the equivalence check, then gate merging.

use lgo::data::Task;
use lgo::expr::{parse_expr, print_expr};
use lgo::metrics::compute_metrics;
use lgo::simplify::{merge_gates_unchecked, merge_near_duplicate_gates, simplify, DEFAULT_MERGE_TOL};
use lgo::synth::{gen_synth, SynthKind, SynthSpec};

fn main() {
    let (data, _) = gen_synth(&SynthSpec::new(SynthKind::TwoGate, 400, 0.1, 2)).unwrap();
    let stats = lgo::data::FeatureStats::fit(&data, Default::default()).unwrap();
    let z = stats.transform(&data);
    let names = &z.feature_names;

    let src = "add(mul(1.0, lgo_thre(map, 2.0, 0.10)), add(0.0, lgo_thre(map, 2.0, 0.12)), \
               sqrt(pow(sqrt(lactate), 2)), mul(sub(age, age), 3.0))";
    let expr = parse_expr(src, names).unwrap();
    let pred = expr.eval(&z.columns, z.n_rows());
    let metrics = compute_metrics(Task::Regression, &z.y, &pred);

    let (simp, report) = simplify(&expr, &z, &metrics);
    println!("raw       : {}", print_expr(&expr, names));
    println!("simplified: {}", print_expr(&simp, names));
    println!("max deviation {:.3e}, metrics identical {}, skipped {:?}", report.max_deviation, report.metrics_identical, report.skipped);

    let (merged, m) = merge_near_duplicate_gates(&simp, DEFAULT_MERGE_TOL, &z, &metrics);
    println!("merged    : {}", print_expr(&merged, names));
    println!("groups {}, rolled back {} (deviation {:.3e})", m.groups, m.rolled_back, m.max_deviation);

    // the unchecked merge shows what the equivalence gate refused
    let (loose, groups) = merge_gates_unchecked(&simp, DEFAULT_MERGE_TOL, names);
    println!("unchecked : {} ({groups} group)", print_expr(&loose, names));
}
