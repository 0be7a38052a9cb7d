//! Regression and binary metrics with the self-checks run on every report.

use lgo::data::Task;
use lgo::metrics::{compute_metrics, self_check};
use lgo::search::engine_rmse;

fn main() {
    let y = [1.0, 2.0, 3.0, 4.0, 5.0];
    let pred = [1.1, 1.9, 3.2, 3.8, 5.1];
    let reg = compute_metrics(Task::Regression, &y, &pred);
    println!("regression: {:?}", reg.named_values());
    println!("self-check: {:?}", self_check(&reg, engine_rmse(&pred, &y)));

    let labels = [0.0, 0.0, 1.0, 1.0, 0.0, 1.0];
    let scores = [-2.0, -0.5, 0.3, 1.5, 0.1, -0.2];
    let bin = compute_metrics(Task::Binary, &labels, &scores);
    println!("binary: {:?}", bin.named_values());

    // a model far worse than the mean triggers the anomaly flag
    let bad = [50.0, -40.0, 30.0, -20.0, 10.0];
    let report = compute_metrics(Task::Regression, &y, &bad);
    for f in self_check(&report, engine_rmse(&bad, &y)) {
        println!("finding: {}", f.describe());
    }
}
