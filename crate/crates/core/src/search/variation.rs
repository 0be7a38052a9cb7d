use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::expr::{Expression, Node, TreeGenerator};
use crate::ops;

/// Fitness record the selection operators rank by.
pub trait Scored {
    fn objective(&self) -> f64;
    fn complexity(&self) -> usize;
}

fn better(a: &impl Scored, b: &impl Scored) -> bool {
    let (fa, fb) = (a.objective(), b.objective());
    let fa = if fa.is_nan() { f64::INFINITY } else { fa };
    let fb = if fb.is_nan() { f64::INFINITY } else { fb };
    fa < fb || (fa == fb && a.complexity() < b.complexity())
}

/// Best of `tourn` distinct random contestants (minimization); ties on both
/// objective and complexity go to the earliest drawn contestant.
pub fn tournament_select<S: Scored, R: Rng + ?Sized>(population: &[S], tourn: usize, rng: &mut R) -> usize {
    assert!(!population.is_empty(), "empty population");
    let k = tourn.clamp(1, population.len());
    let picks = rand::seq::index::sample(rng, population.len(), k);
    let mut best = picks.index(0);
    for i in picks.iter().skip(1) {
        if better(&population[i], &population[best]) {
            best = i;
        }
    }
    best
}

/// Maximum attempts before crossover gives up and returns the parents.
pub const CROSSOVER_ATTEMPTS: usize = 8;

/// Subtree crossover at type-compatible positions under a depth limit.
pub fn crossover<R: Rng + ?Sized>(
    parent_a: &Expression,
    parent_b: &Expression,
    max_depth: usize,
    rng: &mut R,
) -> (Expression, Expression) {
    let pos_a = parent_a.positions();
    let pos_b = parent_b.positions();
    let nodes_a = parent_a.preorder();
    let nodes_b = parent_b.preorder();
    for _ in 0..CROSSOVER_ATTEMPTS {
        let i = rng.random_range(0..pos_a.len());
        let sub_a = nodes_a[i];
        let compatible: Vec<usize> = (0..pos_b.len())
            .filter(|&j| {
                let sub_b = nodes_b[j];
                (!pos_a[i].wants_feature || matches!(sub_b, Node::Var(_)))
                    && (!pos_b[j].wants_feature || matches!(sub_a, Node::Var(_)))
            })
            .collect();
        if compatible.is_empty() {
            continue;
        }
        let j = compatible[rng.random_range(0..compatible.len())];
        let sub_b = nodes_b[j];
        if pos_a[i].depth + sub_b.depth() > max_depth || pos_b[j].depth + sub_a.depth() > max_depth {
            continue;
        }
        let mut child_a = parent_a.clone();
        let mut child_b = parent_b.clone();
        *child_a.subtree_mut(i).expect("index in range") = sub_b.clone();
        *child_b.subtree_mut(j).expect("index in range") = sub_a.clone();
        return (child_a, child_b);
    }
    (parent_a.clone(), parent_b.clone())
}

/// Depth bound of freshly grown mutation subtrees.
pub const MUTATION_DEPTH: usize = 3;

/// Replaces a uniformly chosen subtree with a fresh typed one. Returns the
/// mutant and the preorder index that was replaced.
pub fn mutate<R: Rng + ?Sized>(
    individual: &Expression,
    generator: &TreeGenerator,
    max_depth: usize,
    rng: &mut R,
) -> (Expression, usize) {
    let positions = individual.positions();
    let i = rng.random_range(0..positions.len());
    let slot = positions[i];
    let fresh = if slot.wants_feature {
        generator.feature(rng)
    } else {
        let room = max_depth.saturating_sub(slot.depth).min(MUTATION_DEPTH);
        generator.grow(rng, room)
    };
    let mut out = individual.clone();
    *out.subtree_mut(i).expect("index in range") = fresh;
    (out, i)
}

/// Standard deviations of the per-gate Gaussian nudges.
pub const MICRO_SIGMA_A: f64 = 0.25;
pub const MICRO_SIGMA_B: f64 = 0.1;

/// Perturbs each gate's `(a_tilde, b_z)` independently with probability `prob`.
pub fn micro_mutate_gates<R: Rng + ?Sized>(individual: &mut Expression, prob: f64, rng: &mut R) -> usize {
    if prob <= 0.0 {
        return 0;
    }
    let na = Normal::new(0.0, MICRO_SIGMA_A).expect("valid sigma");
    let nb = Normal::new(0.0, MICRO_SIGMA_B).expect("valid sigma");
    let mut touched = 0;
    for params in individual.gate_params_mut() {
        if rng.random_bool(prob.min(1.0)) {
            params.a_tilde = (params.a_tilde + na.sample(rng)).clamp(-ops::SOFTPLUS_CLIP, ops::SOFTPLUS_CLIP);
            params.b_z = ops::clip_threshold(params.b_z + nb.sample(rng));
            touched += 1;
        }
    }
    touched
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{parse_expr, print_expr, OperatorSet, PrimitiveRegistry};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    struct F(f64, usize);
    impl Scored for F {
        fn objective(&self) -> f64 {
            self.0
        }
        fn complexity(&self) -> usize {
            self.1
        }
    }

    fn names() -> Vec<String> {
        vec!["x".into(), "y".into(), "z".into()]
    }

    #[test]
    fn tournament_extremes() {
        let pop: Vec<F> = (0..20).map(|i| F(f64::from((i * 7) % 20), 3)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            assert_eq!(pop[tournament_select(&pop, 20, &mut rng)].0, 0.0);
        }
        let mut counts = [0usize; 20];
        for _ in 0..20_000 {
            counts[tournament_select(&pop, 1, &mut rng)] += 1;
        }
        assert!(counts.iter().all(|c| (800..1200).contains(c)), "{counts:?}");
    }

    #[test]
    fn tournament_breaks_ties_on_complexity() {
        let pop = vec![F(1.0, 9), F(1.0, 4), F(1.0, 6)];
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        assert_eq!(tournament_select(&pop, 3, &mut rng), 1);
        let pop = vec![F(f64::NAN, 1), F(5.0, 9)];
        assert_eq!(tournament_select(&pop, 2, &mut rng), 1);
    }

    #[test]
    fn crossover_of_identical_parents() {
        let e = parse_expr("add(mul(x, 1.5), lgo_thre(y, 0.2, 0.3))", &names()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let (a, b) = crossover(&e, &e, 10, &mut rng);
            assert!(a.type_check(&PrimitiveRegistry::full(), 3).is_ok());
            assert!(b.type_check(&PrimitiveRegistry::full(), 3).is_ok());
            assert!(a.positions().len() + b.positions().len() == 2 * e.positions().len());
        }
    }

    #[test]
    fn gate_feature_slot_keeps_terminal() {
        let a = parse_expr("lgo_thre(x, 0.2, 0.3)", &names()).unwrap();
        let b = parse_expr("add(mul(y, z), sqrt(x))", &names()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..500 {
            let (c, _) = crossover(&a, &b, 10, &mut rng);
            for node in c.gates() {
                assert!(node.children().iter().all(|n| matches!(n, Node::Var(_))));
            }
        }
    }

    #[test]
    fn mutation_is_local_and_deterministic() {
        let reg = PrimitiveRegistry::new(OperatorSet::Hard);
        let gen = TreeGenerator::new(&reg, 3);
        let e = parse_expr("add(mul(x, 1.5), sub(lgo_thre(y, 0.2, 0.3), z))", &names()).unwrap();
        let (m1, i1) = mutate(&e, &gen, 10, &mut ChaCha8Rng::seed_from_u64(4));
        let (m2, i2) = mutate(&e, &gen, 10, &mut ChaCha8Rng::seed_from_u64(4));
        assert_eq!((print_expr(&m1, &names()), i1), (print_expr(&m2, &names()), i2));
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..300 {
            let (m, i) = mutate(&e, &gen, 10, &mut rng);
            // restoring the original subtree at the chosen index recovers the parent
            let mut restored = m.clone();
            *restored.subtree_mut(i).unwrap() = e.subtree(i).unwrap().clone();
            assert_eq!(restored, e);
        }
    }

    #[test]
    fn micro_mutation_edge_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut plain = parse_expr("add(x, y)", &names()).unwrap();
        let before = plain.clone();
        assert_eq!(micro_mutate_gates(&mut plain, 1.0, &mut rng), 0);
        assert_eq!(plain, before);
        let mut gated = parse_expr("lgo_thre(x, 0.2, 2.95)", &names()).unwrap();
        let g0 = gated.clone();
        micro_mutate_gates(&mut gated, 0.0, &mut rng);
        assert_eq!(gated, g0);
    }
}
