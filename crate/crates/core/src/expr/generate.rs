use rand::seq::IndexedRandom;
use rand::Rng;

use super::{Expression, GateParams, Node, Prim, PrimitiveRegistry};

/// Random typed tree construction (grow/full) under a registry.
#[derive(Debug, Clone)]
pub struct TreeGenerator {
    prims: Vec<Prim>,
    n_features: usize,
    /// Probability that a Feat terminal is an ephemeral constant.
    pub const_prob: f64,
    /// Ephemeral constants are drawn uniform in `[-const_range, const_range]`.
    pub const_range: f64,
    /// Initial thresholds are drawn uniform in `[-b_init, b_init]`.
    pub b_init: f64,
    /// Initial effective steepness is drawn uniform in this range.
    pub a_init: (f64, f64),
}

impl TreeGenerator {
    pub fn new(registry: &PrimitiveRegistry, n_features: usize) -> Self {
        assert!(n_features > 0, "need at least one feature");
        TreeGenerator {
            prims: registry.primitives().iter().map(|p| p.prim).collect(),
            n_features,
            const_prob: 0.3,
            const_range: 2.0,
            b_init: 1.5,
            a_init: (1.0, 5.0),
        }
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn feature<R: Rng + ?Sized>(&self, rng: &mut R) -> Node {
        Node::Var(rng.random_range(0..self.n_features))
    }

    pub fn terminal<R: Rng + ?Sized>(&self, rng: &mut R) -> Node {
        if rng.random_bool(self.const_prob) {
            Node::Const(rng.random_range(-self.const_range..=self.const_range))
        } else {
            self.feature(rng)
        }
    }

    pub fn gate_params<R: Rng + ?Sized>(&self, rng: &mut R) -> GateParams {
        let a = rng.random_range(self.a_init.0..=self.a_init.1);
        let b = rng.random_range(-self.b_init..=self.b_init);
        GateParams::from_steepness(a, b)
    }

    fn function<R: Rng + ?Sized>(&self, rng: &mut R, depth: usize, max_depth: usize, full: bool) -> Node {
        let prim = *self.prims.choose(rng).expect("registry is empty");
        let child = |rng: &mut R| self.build(rng, depth + 1, max_depth, full);
        match prim {
            Prim::Pow => {
                let base = child(rng);
                let exponent = if rng.random_bool(0.5) { 2 } else { 3 };
                Node::pow(base, exponent)
            }
            p if p.is_gate() => {
                let inputs = (0..p.feat_arity())
                    .map(|_| {
                        if p.wants_feature_inputs() {
                            self.feature(rng)
                        } else {
                            child(rng)
                        }
                    })
                    .collect();
                let params = self.gate_params(rng);
                Node::gate(p, inputs, params)
            }
            p => {
                let args = (0..p.feat_arity()).map(|_| child(rng)).collect();
                Node::op(p, args)
            }
        }
    }

    fn build<R: Rng + ?Sized>(&self, rng: &mut R, depth: usize, max_depth: usize, full: bool) -> Node {
        if depth >= max_depth {
            return self.terminal(rng);
        }
        let stop_early = !full && depth > 0 && {
            let t = 1.0 + self.n_features as f64;
            rng.random_bool(t / (t + self.prims.len() as f64))
        };
        if stop_early {
            self.terminal(rng)
        } else {
            self.function(rng, depth, max_depth, full)
        }
    }

    /// Grow method: terminals may appear above `max_depth`.
    pub fn grow<R: Rng + ?Sized>(&self, rng: &mut R, max_depth: usize) -> Node {
        self.build(rng, 0, max_depth, false)
    }

    /// Full method: every branch reaches `max_depth` (gate feature slots excepted).
    pub fn full<R: Rng + ?Sized>(&self, rng: &mut R, max_depth: usize) -> Node {
        self.build(rng, 0, max_depth, true)
    }

    /// Ramped half-and-half over depths `min_depth..=max_depth`.
    pub fn ramped<R: Rng + ?Sized>(
        &self,
        rng: &mut R,
        count: usize,
        min_depth: usize,
        max_depth: usize,
    ) -> Vec<Expression> {
        let span = max_depth - min_depth + 1;
        (0..count)
            .map(|i| {
                let depth = min_depth + i % span;
                let root = if (i / span) % 2 == 0 {
                    self.grow(rng, depth)
                } else {
                    self.full(rng, depth)
                };
                Expression::new(root)
            })
            .collect()
    }
}
