//! Gate shapes across steepness, and their parameter partials.

use lgo::ops::{gate_gradients, lgo_and2, lgo_hard, lgo_or2, lgo_soft, softplus, GateKind};

fn main() {
    let b = 0.5;
    println!("{:>6} {:>10} {:>10} {:>10}", "x", "a=1", "a=10", "a=1000");
    for i in 0..=8 {
        let x = -0.5 + 0.25 * i as f64;
        let row: Vec<String> = [1.0, 10.0, 1000.0]
            .iter()
            .map(|&a| format!("{:>10.6}", lgo_hard(x, a, b)))
            .collect();
        println!("{x:>6.2} {}", row.join(" "));
    }

    // a is stored as a_tilde and mapped through softplus
    let a = softplus(2.0);
    println!("\nsoftplus(2.0) = {a:.6}");
    println!("soft(1.2)  = {:.6}", lgo_soft(1.2, a, b));
    println!("and2(1, 1) = {:.6}", lgo_and2(1.0, 1.0, a, b));
    println!("or2(1, 0)  = {:.6}", lgo_or2(1.0, 0.0, a, b));

    for kind in [GateKind::Hard, GateKind::Soft] {
        let (da, db) = gate_gradients(kind, 0.8, a, b);
        println!("{kind:?}: d/da = {da:.6}, d/db = {db:.6}");
    }
}
