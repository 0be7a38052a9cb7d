//! Parse, type-check, evaluate and print typed expressions.

use lgo::expr::{parse_expr, print_expr, OperatorSet, PrimitiveRegistry};

fn main() {
    let names: Vec<String> = ["map", "lactate"].iter().map(|s| s.to_string()).collect();
    let src = "add(mul(2.0, lgo_thre(lactate, 1.5, 0.3)), lgo(map, 0.7, -0.2))";
    let expr = parse_expr(src, &names).expect("valid expression");

    println!("printed    : {}", print_expr(&expr, &names));
    println!("size       : {}", expr.size());
    println!("complexity : {}", expr.complexity());
    println!("gates      : {}", expr.gate_count());

    let columns = vec![vec![-1.0, 0.0, 1.0], vec![0.0, 0.5, 2.0]];
    println!("values     : {:?}", expr.eval(&columns, 3));

    for bad in ["lgo_thre(map, 1.0, 9.0)", "mul(map)", "foo(map)"] {
        match parse_expr(bad, &names) {
            Ok(e) => match e.type_check(&PrimitiveRegistry::new(OperatorSet::Hard), names.len()) {
                Ok(()) => println!("{bad} -> {}", print_expr(&e, &names)),
                Err(t) => println!("{bad} -> type error: {t}"),
            },
            Err(e) => println!("{bad} -> error: {e}"),
        }
    }
}
