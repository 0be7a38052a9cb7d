//! Numerically guarded semantics for the arithmetic and logistic-gated
//! primitives, plus the closed-form gate gradients used by local refinement.

/// Pre-sigmoid arguments are clipped to `[-CLIP, CLIP]`.
pub const SIGMOID_CLIP: f64 = 60.0;
/// Raw steepness parameters are clipped to this range before softplus.
pub const SOFTPLUS_CLIP: f64 = 60.0;
/// Floor used by the protected division, inverse and logarithm.
pub const PROTECT_EPS: f64 = 1e-12;
/// Gate thresholds live in z-space and are kept inside `[-B_Z_LIMIT, B_Z_LIMIT]`.
pub const B_Z_LIMIT: f64 = 3.0;
/// Argument clip for `exp`.
pub const EXP_CLIP: f64 = 60.0;

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    let z = z.clamp(-SIGMOID_CLIP, SIGMOID_CLIP);
    1.0 / (1.0 + (-z).exp())
}

/// `ln(1 + e^t)` with `t` clipped to `[-60, 60]`.
#[inline]
pub fn softplus(a_tilde: f64) -> f64 {
    let t = a_tilde.clamp(-SOFTPLUS_CLIP, SOFTPLUS_CLIP);
    if t > 30.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

/// Derivative of [`softplus`] with respect to its raw argument (zero where clipped).
#[inline]
pub fn softplus_grad(a_tilde: f64) -> f64 {
    if a_tilde.abs() > SOFTPLUS_CLIP {
        0.0
    } else {
        1.0 / (1.0 + (-a_tilde).exp())
    }
}

/// Inverse of softplus, used to seed raw steepness from a target `a > 0`.
pub fn softplus_inv(a: f64) -> f64 {
    assert!(a > 0.0, "softplus_inv requires a > 0");
    if a > 30.0 {
        a + (-(-a).exp()).ln_1p()
    } else {
        a.exp_m1().ln()
    }
}

#[inline]
pub fn clip_threshold(b_z: f64) -> f64 {
    b_z.clamp(-B_Z_LIMIT, B_Z_LIMIT)
}

/// The logistic gate `σ(a(u - b))`.
#[inline]
pub fn gate(u: f64, a: f64, b: f64) -> f64 {
    sigmoid(a * (u - b))
}

/// Magnitude-preserving gate `x·σ(a(x-b))`.
#[inline]
pub fn lgo_soft(x: f64, a: f64, b: f64) -> f64 {
    x * gate(x, a, b)
}

/// Pure logistic gate `σ(a(x-b))`, values in `(0, 1)`.
#[inline]
pub fn lgo_hard(x: f64, a: f64, b: f64) -> f64 {
    gate(x, a, b)
}

#[inline]
pub fn lgo_pair(x: f64, y: f64, a: f64, b: f64) -> f64 {
    (x * y) * gate(x - y, a, b)
}

#[inline]
pub fn lgo_and2(x: f64, y: f64, a: f64, b: f64) -> f64 {
    (x * y) * gate(x, a, b) * gate(y, a, b)
}

#[inline]
pub fn lgo_or2(x: f64, y: f64, a: f64, b: f64) -> f64 {
    (x + y) * (1.0 - (1.0 - gate(x, a, b)) * (1.0 - gate(y, a, b)))
}

#[inline]
pub fn lgo_and3(x: f64, y: f64, z: f64, a: f64, b: f64) -> f64 {
    (x * y * z) * gate(x, a, b) * gate(y, a, b) * gate(z, a, b)
}

/// Expression-level gate `f·σ(a(f-b))` applied to an evaluated subexpression.
#[inline]
pub fn gate_expr(f: f64, a: f64, b: f64) -> f64 {
    f * gate(f, a, b)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GateKind {
    /// `σ(a(u-b))`
    Hard,
    /// `u·σ(a(u-b))`
    Soft,
}

/// Partial derivatives `(∂/∂a, ∂/∂b)` of a one-input gate at `u`.
///
/// Where the pre-sigmoid argument is clipped the gate is flat and both
/// partials are zero.
pub fn gate_gradients(kind: GateKind, u: f64, a: f64, b: f64) -> (f64, f64) {
    let arg = a * (u - b);
    if arg.abs() > SIGMOID_CLIP {
        return (0.0, 0.0);
    }
    let s = sigmoid(arg);
    let ds = s * (1.0 - s);
    match kind {
        GateKind::Hard => ((u - b) * ds, -a * ds),
        GateKind::Soft => (u * (u - b) * ds, -a * u * ds),
    }
}

/// `∂σ(a(u-b))/∂u`, zero in the clipped region.
#[inline]
pub fn gate_du(u: f64, a: f64, b: f64) -> f64 {
    let arg = a * (u - b);
    if arg.abs() > SIGMOID_CLIP {
        return 0.0;
    }
    let s = sigmoid(arg);
    a * s * (1.0 - s)
}

#[inline]
fn guard_denominator(y: f64) -> f64 {
    // sign(0) is taken as +1
    let sign = if y < 0.0 { -1.0 } else { 1.0 };
    sign * y.abs().max(PROTECT_EPS)
}

#[inline]
pub fn protected_div(x: f64, y: f64) -> f64 {
    x / guard_denominator(y)
}

#[inline]
pub fn protected_inv(x: f64) -> f64 {
    1.0 / guard_denominator(x)
}

#[inline]
pub fn protected_log(x: f64) -> f64 {
    x.max(PROTECT_EPS).ln()
}

#[inline]
pub fn protected_sqrt(x: f64) -> f64 {
    x.abs().sqrt()
}

#[inline]
pub fn protected_exp(x: f64) -> f64 {
    x.min(EXP_CLIP).exp()
}

#[inline]
pub fn int_pow(x: f64, exponent: u8) -> f64 {
    x.powi(i32::from(exponent))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn soft_gate_at_threshold_halves() {
        for a in [0.1, 1.0, 7.5] {
            assert_eq!(lgo_soft(1.7, a, 1.7), 1.7 * 0.5);
        }
        assert_eq!(lgo_soft(0.0, 3.0, -1.0), 0.0);
    }

    #[test]
    fn hard_gate_values() {
        assert_eq!(lgo_hard(0.3, 2.0, 0.3), 0.5);
        let v = lgo_hard(1.0 + 3f64.ln(), 1.0, 1.0);
        assert!((v - 0.75).abs() < 1e-15);
        assert!(lgo_hard(-1.0, 1e4, 0.0) < 1e-9);
    }

    #[test]
    fn multi_input_gates_at_threshold() {
        let b = 0.8;
        assert!((lgo_and2(b, b, 3.0, b) - b * b * 0.25).abs() < 1e-15);
        assert!((lgo_or2(b, b, 3.0, b) - 2.0 * b * 0.75).abs() < 1e-15);
        let v = lgo_and3(1.5, 2.0, 2.5, 1e4, 0.5);
        assert!((v - 1.5 * 2.0 * 2.5).abs() < 1e-9);
    }

    #[test]
    fn gate_expr_matches_soft_gate() {
        for &(f, a, b) in &[(0.3, 1.0, 0.1), (-2.0, 5.0, 1.0), (4.0, 0.2, -3.0)] {
            assert_eq!(gate_expr(f, a, b), lgo_soft(f, a, b));
        }
        assert_eq!(gate_expr(0.0, 1.0, 1.0), 0.0);
        assert_eq!(gate_expr(1.25, 4.0, 1.25), 1.25 / 2.0);
    }

    #[test]
    fn gradient_special_cases() {
        assert_eq!(gate_gradients(GateKind::Hard, 1.0, 2.0, 1.0), (0.0, -0.5));
        let (da, db) = gate_gradients(GateKind::Soft, 0.0, 2.0, 1.0);
        assert_eq!(da, 0.0);
        assert_eq!(db, 0.0);
        // deep in the clipped region the gate is flat
        assert_eq!(gate_gradients(GateKind::Hard, 100.0, 1.0, 0.0), (0.0, 0.0));
    }

    #[test]
    fn saturated_gradients_match_differences_absolutely() {
        let h = 1e-6;
        for kind in [GateKind::Hard, GateKind::Soft] {
            let f = |u: f64, a: f64, b: f64| match kind {
                GateKind::Hard => lgo_hard(u, a, b),
                GateKind::Soft => lgo_soft(u, a, b),
            };
            for &(u, a, b) in &[(2.9, 4.0, -2.0), (-3.0, 5.0, 2.5), (1.0, 20.0, -0.5), (-2.0, 9.0, 1.0)] {
                let (ga, gb) = gate_gradients(kind, u, a, b);
                let fa = (f(u, a + h, b) - f(u, a - h, b)) / (2.0 * h);
                let fb = (f(u, a, b + h) - f(u, a, b - h)) / (2.0 * h);
                assert!((ga - fa).abs() < 1e-8 && (gb - fb).abs() < 1e-8, "{kind:?} at {u},{a},{b}");
            }
        }
    }

    #[test]
    fn softplus_roundtrip_and_positivity() {
        for a in [1e-3, 0.5, 1.0, 5.0, 25.0, 40.0] {
            let t = softplus_inv(a);
            assert!((softplus(t) - a).abs() < 1e-9 * a.max(1.0), "a={a}");
        }
        assert!(softplus(-60.0) > 0.0);
        assert!(softplus(-1e6) > 0.0);
        assert!(softplus(1e6).is_finite());
    }

    #[test]
    fn protected_operators() {
        assert_eq!(protected_div(1.0, 0.0), 1e12);
        assert_eq!(protected_div(1.0, -0.0), 1e12);
        assert_eq!(protected_div(3.0, -1e-20), -3e12);
        assert_eq!(protected_inv(2.0), 0.5);
        assert_eq!(protected_log(0.0), PROTECT_EPS.ln());
        assert_eq!(protected_sqrt(-4.0), 2.0);
        assert!(protected_exp(1e9).is_finite());
    }
}
