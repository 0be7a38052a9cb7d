//! Canonical rewrites for readable expressions, guarded by a strict numeric
//! equivalence check against the raw model on held-out data.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use crate::data::{Dataset, FeatureStats};
use crate::expr::{print_expr, Expression, GateParams, Node, Prim};
use crate::metrics::{compute_metrics, MetricReport};
use crate::ops;

/// Largest pointwise deviation a simplified model may show.
pub const POINTWISE_TOL: f64 = 1e-9;

/// Default tolerance, in z-units, for merging gates on the same input.
pub const DEFAULT_MERGE_TOL: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    /// Constant folding, neutral/absorbing removal, denormal flush.
    Fold,
    /// `sqrt(pow(x,2))`, `log(exp x)`, `exp(log x)` under interval guards.
    Domain,
    /// Gate primitives rewritten through the display `gate`.
    Compact,
    Flatten,
    Sort,
}

impl Stage {
    pub const ALL: [Stage; 5] = [Stage::Fold, Stage::Domain, Stage::Compact, Stage::Flatten, Stage::Sort];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Fold => "fold",
            Stage::Domain => "domain",
            Stage::Compact => "compact",
            Stage::Flatten => "flatten",
            Stage::Sort => "sort",
        }
    }
}

/// Domain condition under which a rule is sound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Guard {
    None,
    NonNegative,
    /// Argument range in which the rewrite is exact up to rounding.
    Within(f64, f64),
}

impl Guard {
    pub fn admits(self, x: f64) -> bool {
        match self {
            Guard::None => true,
            Guard::NonNegative => x >= 0.0,
            Guard::Within(lo, hi) => x >= lo && x <= hi,
        }
    }
}

/// One rewrite of the canonical table, as prefix templates over the
/// placeholders `x`, `y`, `z`.
#[derive(Debug, Clone, Copy)]
pub struct RewriteRule {
    pub name: &'static str,
    pub stage: Stage,
    pub pattern: &'static str,
    pub replacement: &'static str,
    pub guard: Guard,
}

fn log_exp_lo() -> f64 {
    ops::PROTECT_EPS.ln()
}

pub fn rules() -> Vec<RewriteRule> {
    let r = |name, stage, pattern, replacement, guard| RewriteRule {
        name,
        stage,
        pattern,
        replacement,
        guard,
    };
    vec![
        r("add_zero", Stage::Fold, "add(x, 0.0)", "x", Guard::None),
        r("sub_zero", Stage::Fold, "sub(x, 0.0)", "x", Guard::None),
        r("mul_one", Stage::Fold, "mul(x, 1.0)", "x", Guard::None),
        r("mul_zero", Stage::Fold, "mul(x, 0.0)", "0.0", Guard::None),
        r("div_one", Stage::Fold, "div(x, 1.0)", "x", Guard::None),
        r("pow_one", Stage::Fold, "pow(x, 1)", "x", Guard::None),
        r("pow_zero", Stage::Fold, "pow(x, 0)", "1.0", Guard::None),
        r("sqrt_square", Stage::Domain, "sqrt(pow(x, 2))", "x", Guard::NonNegative),
        r("log_exp", Stage::Domain, "log(exp(x))", "x", Guard::Within(log_exp_lo(), ops::EXP_CLIP)),
        r("exp_log", Stage::Domain, "exp(log(x))", "x", Guard::Within(ops::PROTECT_EPS, ops::EXP_CLIP.exp())),
        r("flatten_add", Stage::Flatten, "add(add(x, y), z)", "add(x, y, z)", Guard::None),
        r("flatten_mul", Stage::Flatten, "mul(mul(x, y), z)", "mul(x, y, z)", Guard::None),
        r("sort_add", Stage::Sort, "add(y, x)", "add(x, y)", Guard::None),
        r("sort_mul", Stage::Sort, "mul(y, x)", "mul(x, y)", Guard::None),
        r("compact_soft", Stage::Compact, "lgo(x, 0.7, 0.3)", "mul(x, gate(x, 0.7, 0.3))", Guard::None),
        r("compact_hard", Stage::Compact, "lgo_thre(x, 0.7, 0.3)", "gate(x, 0.7, 0.3)", Guard::None),
        r(
            "compact_expr",
            Stage::Compact,
            "gate_expr(mul(x, y), 0.7, 0.3)",
            "mul(mul(x, y), gate(mul(x, y), 0.7, 0.3))",
            Guard::None,
        ),
    ]
}

/// Closed interval bound on the values a subtree can take.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    const ALL: Interval = Interval {
        lo: f64::NEG_INFINITY,
        hi: f64::INFINITY,
    };

    fn new(lo: f64, hi: f64) -> Interval {
        if lo.is_nan() || hi.is_nan() {
            Interval::ALL
        } else {
            Interval { lo, hi }
        }
    }

    fn hull(vals: [f64; 4]) -> Interval {
        if vals.iter().any(|v| v.is_nan()) {
            return Interval::ALL;
        }
        let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Interval::new(lo, hi)
    }

    fn mul(self, o: Interval) -> Interval {
        Interval::hull([self.lo * o.lo, self.lo * o.hi, self.hi * o.lo, self.hi * o.hi])
    }
}

/// Conservative range of a subtree for unbounded features.
pub fn interval(node: &Node) -> Interval {
    match node {
        Node::Var(_) => Interval::ALL,
        Node::Const(c) => Interval::new(*c, *c),
        Node::Pow { base, exponent } => {
            let b = interval(base);
            match exponent {
                0 => Interval::new(1.0, 1.0),
                1 => b,
                3 => Interval::new(b.lo.powi(3), b.hi.powi(3)),
                _ => {
                    let (l, h) = (b.lo.powi(2), b.hi.powi(2));
                    if b.lo <= 0.0 && b.hi >= 0.0 {
                        Interval::new(0.0, l.max(h))
                    } else {
                        Interval::new(l.min(h), l.max(h))
                    }
                }
            }
        }
        Node::Op { prim, args } => {
            let iv: Vec<Interval> = args.iter().map(interval).collect();
            match prim {
                Prim::Add => iv[1..].iter().fold(iv[0], |a, b| Interval::new(a.lo + b.lo, a.hi + b.hi)),
                Prim::Sub => Interval::new(iv[0].lo - iv[1].hi, iv[0].hi - iv[1].lo),
                Prim::Mul => iv[1..].iter().fold(iv[0], |a, b| a.mul(*b)),
                Prim::Div => {
                    if iv[0].lo >= 0.0 && iv[1].lo >= 0.0 {
                        Interval::new(0.0, f64::INFINITY)
                    } else {
                        Interval::ALL
                    }
                }
                Prim::Sqrt => Interval::new(0.0, iv[0].lo.abs().max(iv[0].hi.abs()).sqrt()),
                Prim::Log => {
                    let f = |v: f64| v.max(ops::PROTECT_EPS).ln();
                    Interval::new(f(iv[0].lo), f(iv[0].hi))
                }
                Prim::Exp => Interval::new(ops::protected_exp(iv[0].lo), ops::protected_exp(iv[0].hi)),
                Prim::Inv => {
                    if iv[0].lo >= 0.0 {
                        Interval::new(0.0, f64::INFINITY)
                    } else if iv[0].hi < 0.0 {
                        Interval::new(f64::NEG_INFINITY, 0.0)
                    } else {
                        Interval::ALL
                    }
                }
                _ => Interval::ALL,
            }
        }
        Node::Gate { prim, inputs, .. } => match prim {
            Prim::LgoThre | Prim::Gate => Interval::new(0.0, 1.0),
            Prim::Lgo | Prim::GateExpr => {
                let u = interval(&inputs[0]);
                Interval::new(u.lo.min(0.0), u.hi.max(0.0))
            }
            _ => Interval::ALL,
        },
    }
}

fn is_const(node: &Node, v: f64) -> bool {
    matches!(node, Node::Const(c) if *c == v)
}

fn map_children(node: &Node, f: &mut impl FnMut(&Node) -> Node) -> Node {
    let mut out = node.clone();
    for c in out.children_mut() {
        *c = f(c);
    }
    out
}

fn fold(node: &Node) -> Node {
    let node = map_children(node, &mut fold);
    if let Node::Const(c) = node {
        return if c != 0.0 && c.abs() < f64::MIN_POSITIVE {
            Node::Const(0.0)
        } else {
            node
        };
    }
    if !node.has_var() {
        let v = node.eval_point(&[]);
        if v.is_finite() {
            return Node::Const(if v.abs() < f64::MIN_POSITIVE { 0.0 } else { v });
        }
    }
    match node {
        Node::Pow { base, exponent } => match exponent {
            0 => Node::Const(1.0),
            1 => *base,
            _ => Node::Pow { base, exponent },
        },
        Node::Op { prim, mut args } => match prim {
            Prim::Add => {
                if args.len() > 1 {
                    let keep: Vec<Node> = args.iter().filter(|a| !is_const(a, 0.0)).cloned().collect();
                    args = if keep.is_empty() { vec![args[0].clone()] } else { keep };
                }
                collapse(prim, args)
            }
            Prim::Mul => {
                if args.iter().any(|a| is_const(a, 0.0)) {
                    return Node::Const(0.0);
                }
                if args.len() > 1 {
                    let keep: Vec<Node> = args.iter().filter(|a| !is_const(a, 1.0)).cloned().collect();
                    args = if keep.is_empty() { vec![args[0].clone()] } else { keep };
                }
                collapse(prim, args)
            }
            Prim::Sub if is_const(&args[1], 0.0) => args.swap_remove(0),
            Prim::Div if is_const(&args[1], 1.0) => args.swap_remove(0),
            _ => Node::Op { prim, args },
        },
        other => other,
    }
}

fn collapse(prim: Prim, mut args: Vec<Node>) -> Node {
    if args.len() == 1 {
        args.pop().expect("one argument")
    } else {
        Node::Op { prim, args }
    }
}

fn domain(node: &Node) -> Node {
    let node = map_children(node, &mut domain);
    let Node::Op { prim, args } = &node else {
        return node;
    };
    let inner = &args[0];
    match (prim, inner) {
        (Prim::Sqrt, Node::Pow { base, exponent: 2 }) if interval(base).lo >= 0.0 => (**base).clone(),
        (Prim::Log, Node::Op { prim: Prim::Exp, args: a }) => {
            let iv = interval(&a[0]);
            if iv.lo >= log_exp_lo() && iv.hi <= ops::EXP_CLIP {
                a[0].clone()
            } else {
                node
            }
        }
        (Prim::Exp, Node::Op { prim: Prim::Log, args: a }) => {
            let iv = interval(&a[0]);
            if iv.lo >= ops::PROTECT_EPS && iv.hi <= ops::EXP_CLIP.exp() {
                a[0].clone()
            } else {
                node
            }
        }
        _ => node,
    }
}

fn compact(node: &Node) -> Node {
    let node = map_children(node, &mut compact);
    match node {
        Node::Gate {
            prim: Prim::LgoThre,
            inputs,
            params,
        } => Node::gate(Prim::Gate, inputs, params),
        Node::Gate {
            prim: Prim::Lgo | Prim::GateExpr,
            inputs,
            params,
        } => {
            let u = inputs[0].clone();
            Node::op(Prim::Mul, vec![u, Node::gate(Prim::Gate, inputs, params)])
        }
        other => other,
    }
}

fn flatten(node: &Node) -> Node {
    let node = map_children(node, &mut flatten);
    match node {
        Node::Op { prim, args } if prim.is_variadic() => {
            let mut flat = Vec::with_capacity(args.len());
            for a in args {
                match a {
                    Node::Op { prim: p, args: inner } if p == prim => flat.extend(inner),
                    other => flat.push(other),
                }
            }
            Node::Op { prim, args: flat }
        }
        other => other,
    }
}

fn kind_rank(node: &Node) -> u8 {
    match node {
        Node::Const(_) => 0,
        Node::Var(_) => 1,
        Node::Pow { .. } => 2,
        Node::Op { .. } => 3,
        Node::Gate { .. } => 4,
    }
}

fn node_name<'a>(node: &Node, names: &'a [String]) -> &'a str {
    match node {
        Node::Var(i) => names.get(*i).map_or("", String::as_str),
        Node::Const(_) => "",
        other => other.prim().map_or("", Prim::name),
    }
}

fn serialized(node: &Node, names: &[String]) -> String {
    print_expr(&Expression::new(node.clone()), names)
}

/// Canonical argument order: node kind, then name, then serialized form.
pub fn canonical_order(a: &Node, b: &Node, names: &[String]) -> Ordering {
    kind_rank(a)
        .cmp(&kind_rank(b))
        .then_with(|| node_name(a, names).cmp(node_name(b, names)))
        .then_with(|| serialized(a, names).cmp(&serialized(b, names)))
}

fn sort(node: &Node, names: &[String]) -> Node {
    let node = map_children(node, &mut |c| sort(c, names));
    match node {
        Node::Op { prim, mut args } if prim.is_variadic() => {
            args.sort_by(|a, b| canonical_order(a, b, names));
            Node::Op { prim, args }
        }
        other => other,
    }
}

/// Applies one stage everywhere in the tree, without any equivalence check.
pub fn apply_stage(stage: Stage, expr: &Expression, names: &[String]) -> Expression {
    let root = match stage {
        Stage::Fold => fold(&expr.root),
        Stage::Domain => domain(&expr.root),
        Stage::Compact => compact(&expr.root),
        Stage::Flatten => flatten(&expr.root),
        Stage::Sort => sort(&expr.root, names),
    };
    Expression::new(root)
}

/// All stages to fixpoint with no numeric check.
pub fn simplify_unchecked(expr: &Expression, names: &[String]) -> Expression {
    let mut current = expr.clone();
    for _ in 0..=expr.size() {
        let before = current.clone();
        for stage in Stage::ALL {
            current = apply_stage(stage, &current, names);
        }
        if current == before {
            break;
        }
    }
    current
}

#[derive(Debug, Clone, PartialEq)]
pub struct EquivalenceReport {
    pub max_deviation: f64,
    pub metrics_identical: bool,
    /// Stages rejected by the equivalence check.
    pub skipped: Vec<Stage>,
    /// Full sweeps over the stage list.
    pub passes: usize,
}

impl EquivalenceReport {
    pub fn passed(&self) -> bool {
        self.max_deviation < POINTWISE_TOL && self.metrics_identical
    }

    /// The result is less simplified than the rewrite system allows.
    pub fn flagged(&self) -> bool {
        !self.skipped.is_empty()
    }
}

/// Largest `|a_i - b_i|`; matching non-finite values count as equal.
pub fn max_deviation(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            if x.to_bits() == y.to_bits() || (x.is_nan() && y.is_nan()) {
                0.0
            } else {
                let d = (x - y).abs();
                if d.is_nan() {
                    f64::INFINITY
                } else {
                    d
                }
            }
        })
        .fold(0.0, f64::max)
}

struct Checker<'a> {
    data: &'a Dataset,
    raw_pred: Vec<f64>,
    metrics: &'a MetricReport,
}

impl Checker<'_> {
    fn check(&self, cand: &Expression) -> (f64, bool) {
        let pred = cand.eval(&self.data.columns, self.data.n_rows());
        let dev = max_deviation(&self.raw_pred, &pred);
        let same = compute_metrics(self.metrics.task, &self.data.y, &pred).identical(self.metrics);
        (dev, same)
    }

    fn accepts(&self, cand: &Expression) -> bool {
        let (dev, same) = self.check(cand);
        dev < POINTWISE_TOL && same
    }
}

/// Simplifies `expr`, keeping only stages whose output stays within the
/// pointwise tolerance of the raw model on `z_test` and reproduces
/// `test_metrics` bit for bit.
pub fn simplify(expr: &Expression, z_test: &Dataset, test_metrics: &MetricReport) -> (Expression, EquivalenceReport) {
    let names = &z_test.feature_names;
    let checker = Checker {
        data: z_test,
        raw_pred: expr.eval(&z_test.columns, z_test.n_rows()),
        metrics: test_metrics,
    };
    let mut current = expr.clone();
    let mut skipped: Vec<Stage> = Vec::new();
    let mut passes = 0;
    let bound = expr.size() + 1;
    loop {
        passes += 1;
        assert!(passes <= bound, "rewrite system failed to terminate");
        let mut changed = false;
        for stage in Stage::ALL {
            if skipped.contains(&stage) {
                continue;
            }
            let cand = apply_stage(stage, &current, names);
            if cand == current {
                continue;
            }
            if checker.accepts(&cand) {
                current = cand;
                changed = true;
            } else {
                skipped.push(stage);
            }
        }
        if !changed {
            break;
        }
    }
    let (max_deviation, metrics_identical) = checker.check(&current);
    (
        current,
        EquivalenceReport {
            max_deviation,
            metrics_identical,
            skipped,
            passes,
        },
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct MergeReport {
    /// Groups of gates collapsed to shared parameters.
    pub groups: usize,
    pub rolled_back: bool,
    pub max_deviation: f64,
}

fn gate_keys(node: &Node, names: &[String], out: &mut Vec<String>) {
    if let Node::Gate { prim, inputs, .. } = node {
        let ins: Vec<String> = inputs.iter().map(|n| serialized(n, names)).collect();
        out.push(format!("{}|{}", prim.name(), ins.join(",")));
    }
    for c in node.children() {
        gate_keys(c, names, out);
    }
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Collapses gates of the same kind on the same input whose thresholds lie
/// within `tolerance_z` of each other onto their median parameters.
pub fn merge_gates_unchecked(expr: &Expression, tolerance_z: f64, names: &[String]) -> (Expression, usize) {
    let mut keys = Vec::new();
    gate_keys(&expr.root, names, &mut keys);
    let mut out = expr.clone();
    let mut params: Vec<&mut GateParams> = out.gate_params_mut();
    let mut by_key: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, k) in keys.iter().enumerate() {
        by_key.entry(k).or_default().push(i);
    }
    let mut groups = 0;
    for members in by_key.values() {
        let mut order = members.clone();
        order.sort_by(|&a, &b| params[a].b_z.total_cmp(&params[b].b_z).then(a.cmp(&b)));
        let mut start = 0;
        while start < order.len() {
            let b0 = params[order[start]].b_z;
            let mut end = start + 1;
            while end < order.len() && params[order[end]].b_z - b0 < tolerance_z {
                end += 1;
            }
            if end - start > 1 {
                let cluster = &order[start..end];
                let mut a: Vec<f64> = cluster.iter().map(|&i| params[i].a_tilde).collect();
                let mut b: Vec<f64> = cluster.iter().map(|&i| params[i].b_z).collect();
                let merged = GateParams::new(median(&mut a), median(&mut b));
                for &i in cluster {
                    *params[i] = merged;
                }
                groups += 1;
            }
            start = end;
        }
    }
    (out, groups)
}

/// Checked gate merge; the original is returned if equivalence fails.
pub fn merge_near_duplicate_gates(
    expr: &Expression,
    tolerance_z: f64,
    z_test: &Dataset,
    test_metrics: &MetricReport,
) -> (Expression, MergeReport) {
    let (merged, groups) = merge_gates_unchecked(expr, tolerance_z.max(0.0), &z_test.feature_names);
    if groups == 0 {
        return (
            expr.clone(),
            MergeReport {
                groups,
                rolled_back: false,
                max_deviation: 0.0,
            },
        );
    }
    let checker = Checker {
        data: z_test,
        raw_pred: expr.eval(&z_test.columns, z_test.n_rows()),
        metrics: test_metrics,
    };
    let (dev, same) = checker.check(&merged);
    if dev < POINTWISE_TOL && same {
        (
            merged,
            MergeReport {
                groups,
                rolled_back: false,
                max_deviation: dev,
            },
        )
    } else {
        (
            expr.clone(),
            MergeReport {
                groups,
                rolled_back: true,
                max_deviation: dev,
            },
        )
    }
}

/// Decimal places used when printing a value in `unit`.
pub fn unit_precision(unit: &str) -> usize {
    match unit.trim() {
        "mmHg" | "mmol/L" => 1,
        "mg/dL" => 0,
        _ => 3,
    }
}

pub fn format_in_unit(value: f64, unit: &str) -> String {
    format!("{:.*}", unit_precision(unit), value)
}

fn format_const(v: f64) -> String {
    let m = v.abs();
    if m == 0.0 || (1e-3..1e4).contains(&m) {
        format!("{v:.3}")
    } else {
        format!("{v:.3e}")
    }
}

fn display_node(node: &Node, names: &[String], units: &[Option<String>], stats: &FeatureStats, out: &mut String) {
    match node {
        Node::Var(i) => out.push_str(names.get(*i).map_or("?", String::as_str)),
        Node::Const(c) => out.push_str(&format_const(*c)),
        Node::Pow { base, exponent } => {
            out.push_str("pow(");
            display_node(base, names, units, stats, out);
            out.push_str(&format!(", {exponent})"));
        }
        Node::Op { prim, args } => {
            out.push_str(prim.name());
            out.push('(');
            for (k, a) in args.iter().enumerate() {
                if k > 0 {
                    out.push_str(", ");
                }
                display_node(a, names, units, stats, out);
            }
            out.push(')');
        }
        Node::Gate { prim, inputs, params } => {
            out.push_str(prim.name());
            out.push('(');
            let single_feature = match inputs.as_slice() {
                [Node::Var(i)] => Some(*i),
                _ => None,
            };
            for (k, a) in inputs.iter().enumerate() {
                if k > 0 {
                    out.push_str(", ");
                }
                display_node(a, names, units, stats, out);
            }
            let natural = single_feature.and_then(|i| {
                let name = names.get(i)?;
                let s = stats.index(name)?;
                Some((stats.invert_value(s, params.b_z), units.get(i).cloned().flatten()))
            });
            match natural {
                Some((b, Some(unit))) => out.push_str(&format!(" > {} {unit}", format_in_unit(b, &unit))),
                Some((b, None)) => out.push_str(&format!(" > {}", format_in_unit(b, ""))),
                None => out.push_str(&format!(" > {} z", format_in_unit(params.b_z, ""))),
            }
            out.push(')');
        }
    }
}

/// Human-readable rendering with thresholds mapped to natural units and
/// printed at unit precision. Evaluation is unaffected.
pub fn display_format(expr: &Expression, names: &[String], units: &[Option<String>], stats: &FeatureStats) -> String {
    let mut out = String::new();
    display_node(&expr.root, names, units, stats, &mut out);
    out
}
