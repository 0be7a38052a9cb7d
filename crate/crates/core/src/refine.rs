//! Post-search refit of constants and coordinate descent on gate parameters
//! with the tree structure held fixed.
//!
//! Each coordinate move goes in the direction opposite to the sign of the
//! analytic loss gradient and is accepted only when the training RMSE
//! strictly decreases; rejected moves halve the step.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::expr::{Expression, Node, Prim};
use crate::ops;
use crate::search::engine_rmse;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefineConfig {
    /// Full cycles over all coordinates.
    pub steps: usize,
    /// Initial step for pre-softplus steepness.
    pub step_a: f64,
    /// Initial step for z-space thresholds.
    pub step_b: f64,
    pub shrink: f64,
    /// Step multiplier after an accepted move.
    pub grow: f64,
    pub min_step: f64,
}

impl Default for RefineConfig {
    fn default() -> Self {
        RefineConfig {
            steps: 60,
            step_a: 0.5,
            step_b: 0.25,
            shrink: 0.5,
            grow: 2.0,
            min_step: 1e-4,
        }
    }
}

impl RefineConfig {
    /// Settings for constant refit: same scheme, finer resolution.
    pub fn constants() -> Self {
        RefineConfig {
            steps: 60,
            min_step: 1e-10,
            ..RefineConfig::default()
        }
    }
}

/// A tunable scalar inside an expression, indexed in depth-first order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Coord {
    GateA(usize),
    GateB(usize),
    Const(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefineReport {
    pub initial_loss: f64,
    pub final_loss: f64,
    /// Loss after every accepted move.
    pub accepted: Vec<f64>,
    pub cycles: usize,
    /// Starting loss was not finite; the expression was left unchanged.
    pub non_finite_start: bool,
}

fn coord_value(expr: &mut Expression, c: Coord) -> &mut f64 {
    match c {
        Coord::GateA(i) => &mut expr.gate_params_mut().into_iter().nth(i).expect("gate index").a_tilde,
        Coord::GateB(i) => &mut expr.gate_params_mut().into_iter().nth(i).expect("gate index").b_z,
        Coord::Const(i) => expr.constants_mut().into_iter().nth(i).expect("const index"),
    }
}

fn loss_of(expr: &Expression, data: &Dataset) -> f64 {
    engine_rmse(&expr.eval(&data.columns, data.n_rows()), &data.y)
}

struct Tangent<'a> {
    coord: Coord,
    gate_counter: usize,
    const_counter: usize,
    columns: &'a [Vec<f64>],
    n: usize,
}

impl Tangent<'_> {
    /// Values and derivatives w.r.t. `coord`; `None` means identically zero.
    fn eval(&mut self, node: &Node) -> (Vec<f64>, Option<Vec<f64>>) {
        let (gates, consts) = (node.gate_count(), node.const_count());
        let inside = match self.coord {
            Coord::GateA(i) | Coord::GateB(i) => (self.gate_counter..self.gate_counter + gates).contains(&i),
            Coord::Const(i) => (self.const_counter..self.const_counter + consts).contains(&i),
        };
        if !inside {
            // no path to the coordinate: plain values, zero tangent
            self.gate_counter += gates;
            self.const_counter += consts;
            return (node.eval(self.columns, self.n), None);
        }
        if let Node::Const(c) = node {
            self.const_counter += 1;
            return (vec![*c; self.n], Some(vec![1.0; self.n]));
        }
        let seed = match node {
            Node::Gate { params, .. } => {
                self.gate_counter += 1;
                gate_seed(self.coord, self.gate_counter - 1, params)
            }
            _ => (0.0, 0.0),
        };
        let kids: Vec<(Vec<f64>, Option<Vec<f64>>)> = node.children().iter().map(|c| self.eval(c)).collect();
        let vals: Vec<&[f64]> = kids.iter().map(|k| k.0.as_slice()).collect();
        let ds: Vec<Option<&[f64]>> = kids.iter().map(|k| k.1.as_deref()).collect();
        let value = node.combine(&vals, self.columns, self.n);
        let d = node_tangent(node, &vals, &ds, seed, self.n);
        (value, d)
    }
}

/// Tangent seed `(da, db)` of gate number `me` for `coord`.
fn gate_seed(coord: Coord, me: usize, params: &crate::expr::GateParams) -> (f64, f64) {
    match coord {
        Coord::GateA(i) if i == me => (ops::softplus_grad(params.a_tilde), 0.0),
        Coord::GateB(i) if i == me => (0.0, 1.0),
        _ => (0.0, 0.0),
    }
}

/// Derivative of one node's output from its children's values and derivatives.
fn node_tangent(node: &Node, vals: &[&[f64]], ds: &[Option<&[f64]>], seed: (f64, f64), n: usize) -> Option<Vec<f64>> {
    match node {
        Node::Var(_) | Node::Const(_) => None,
        Node::Pow { exponent, .. } => {
            let k = i32::from(*exponent);
            ds[0].map(|d| {
                vals[0]
                    .iter()
                    .zip(d)
                    .map(|(x, d)| if k == 0 { 0.0 } else { f64::from(k) * x.powi(k - 1) * d })
                    .collect()
            })
        }
        Node::Op { prim, .. } => match prim {
            Prim::Add | Prim::Sub | Prim::Mul | Prim::Div => {
                let f = crate::expr::binary_fn(*prim);
                let mut acc = vals[0].to_vec();
                let mut dacc = ds[0].map(<[f64]>::to_vec);
                for (r, dr) in vals[1..].iter().zip(&ds[1..]) {
                    dacc = combine_binary(*prim, &acc, dacc, r, dr.map(<[f64]>::to_vec));
                    acc.iter_mut().zip(r.iter()).for_each(|(l, r)| *l = f(*l, *r));
                }
                dacc
            }
            _ => ds[0].map(|d| vals[0].iter().zip(d).map(|(x, d)| unary_derivative(*prim, *x) * d).collect()),
        },
        Node::Gate { prim, params, .. } => {
            let (da, db) = seed;
            if da == 0.0 && db == 0.0 && ds.iter().all(Option::is_none) {
                return None;
            }
            let (a, b) = (params.a(), params.b_z);
            let k = vals.len();
            let (mut u, mut du) = ([0.0; 3], [0.0; 3]);
            Some(
                (0..n)
                    .map(|i| {
                        for j in 0..k {
                            u[j] = vals[j][i];
                            du[j] = ds[j].map_or(0.0, |d| d[i]);
                        }
                        gate_row(*prim, &u[..k], &du[..k], a, b, da, db).1
                    })
                    .collect(),
            )
        }
    }
}

/// Training-loss derivative from output values and their tangent.
fn rmse_gradient(pred: &[f64], d: &[f64], y: &[f64]) -> f64 {
    let loss = engine_rmse(pred, y);
    if loss == 0.0 || !loss.is_finite() {
        return 0.0;
    }
    let n = y.len() as f64;
    pred.iter().zip(y).zip(d).map(|((p, y), d)| (p - y) * d).sum::<f64>() / (n * loss)
}

/// Node outputs of a fixed-structure tree in preorder. A move on one
/// coordinate only changes the outputs on the path from its node to the root.
struct PathCache {
    parent: Vec<usize>,
    kids: Vec<Vec<usize>>,
    gate_node: Vec<usize>,
    const_node: Vec<usize>,
    values: Vec<Vec<f64>>,
}

impl PathCache {
    fn build(expr: &Expression, data: &Dataset) -> PathCache {
        fn assign(node: &Node, idx: usize, next: &mut usize, parent: &mut [usize], kids: &mut [Vec<usize>]) {
            for c in node.children() {
                let ci = *next;
                *next += 1;
                parent[ci] = idx;
                kids[idx].push(ci);
                assign(c, ci, next, parent, kids);
            }
        }
        let nodes = expr.preorder();
        let m = nodes.len();
        let mut parent = vec![usize::MAX; m];
        let mut kids = vec![Vec::new(); m];
        assign(&expr.root, 0, &mut 1, &mut parent, &mut kids);
        let of_kind = |f: fn(&Node) -> bool| (0..m).filter(|&i| f(nodes[i])).collect::<Vec<_>>();
        let gate_node = of_kind(|n| matches!(n, Node::Gate { .. }));
        let const_node = of_kind(|n| matches!(n, Node::Const(_)));
        let mut values: Vec<Vec<f64>> = vec![Vec::new(); m];
        for i in (0..m).rev() {
            let v = {
                let vals: Vec<&[f64]> = kids[i].iter().map(|&c| values[c].as_slice()).collect();
                nodes[i].combine(&vals, &data.columns, data.n_rows())
            };
            values[i] = v;
        }
        PathCache {
            parent,
            kids,
            gate_node,
            const_node,
            values,
        }
    }

    fn path(&self, coord: Coord) -> Vec<usize> {
        let mut q = match coord {
            Coord::GateA(i) | Coord::GateB(i) => self.gate_node[i],
            Coord::Const(i) => self.const_node[i],
        };
        let mut out = vec![q];
        while q != 0 {
            q = self.parent[q];
            out.push(q);
        }
        out
    }

    fn kid_values<'a>(&'a self, q: usize, below: Option<(usize, &'a [f64])>) -> Vec<&'a [f64]> {
        self.kids[q]
            .iter()
            .map(|&c| match below {
                Some((b, v)) if b == c => v,
                _ => self.values[c].as_slice(),
            })
            .collect()
    }

    /// Outputs along `path` after its first node changed; the last is the model output.
    fn refresh(&self, nodes: &[&Node], path: &[usize], data: &Dataset) -> Vec<Vec<f64>> {
        let mut out: Vec<Vec<f64>> = Vec::with_capacity(path.len());
        for (step, &q) in path.iter().enumerate() {
            let below = (step > 0).then(|| (path[step - 1], out[step - 1].as_slice()));
            let v = nodes[q].combine(&self.kid_values(q, below), &data.columns, data.n_rows());
            out.push(v);
        }
        out
    }

    /// Loss derivative along `path`, seeded at its first node.
    fn gradient(&self, nodes: &[&Node], path: &[usize], coord: Coord, data: &Dataset) -> f64 {
        let n = data.n_rows();
        let p = path[0];
        let mut d = match (coord, nodes[p]) {
            (Coord::Const(_), _) => Some(vec![1.0; n]),
            (Coord::GateA(i) | Coord::GateB(i), Node::Gate { params, .. }) => {
                let vals = self.kid_values(p, None);
                let ds = vec![None; vals.len()];
                node_tangent(nodes[p], &vals, &ds, gate_seed(coord, i, params), n)
            }
            _ => None,
        };
        for step in 1..path.len() {
            let Some(dv) = d else { return 0.0 };
            let q = path[step];
            let vals = self.kid_values(q, None);
            let ds: Vec<Option<&[f64]>> = self.kids[q]
                .iter()
                .map(|&c| (c == path[step - 1]).then_some(dv.as_slice()))
                .collect();
            d = node_tangent(nodes[q], &vals, &ds, (0.0, 0.0), n);
        }
        d.map_or(0.0, |d| rmse_gradient(&self.values[0], &d, &data.y))
    }
}

fn combine_binary(prim: Prim, l: &[f64], dl: Option<Vec<f64>>, r: &[f64], dr: Option<Vec<f64>>) -> Option<Vec<f64>> {
    if dl.is_none() && dr.is_none() {
        return None;
    }
    let n = l.len();
    let dl = dl.unwrap_or_else(|| vec![0.0; n]);
    let dr = dr.unwrap_or_else(|| vec![0.0; n]);
    Some(
        (0..n)
            .map(|i| match prim {
                Prim::Add => dl[i] + dr[i],
                Prim::Sub => dl[i] - dr[i],
                Prim::Mul => dl[i] * r[i] + l[i] * dr[i],
                Prim::Div => {
                    let y = r[i];
                    if y.abs() < ops::PROTECT_EPS {
                        // guarded denominator is locally constant
                        dl[i] / (if y < 0.0 { -ops::PROTECT_EPS } else { ops::PROTECT_EPS })
                    } else {
                        (dl[i] * y - l[i] * dr[i]) / (y * y)
                    }
                }
                _ => unreachable!(),
            })
            .collect(),
    )
}

fn unary_derivative(prim: Prim, x: f64) -> f64 {
    match prim {
        Prim::Sqrt => {
            let s = x.abs().sqrt();
            if s == 0.0 {
                0.0
            } else {
                x.signum() / (2.0 * s)
            }
        }
        Prim::Log => {
            if x > ops::PROTECT_EPS {
                1.0 / x
            } else {
                0.0
            }
        }
        Prim::Exp => {
            if x < ops::EXP_CLIP {
                x.exp()
            } else {
                0.0
            }
        }
        Prim::Inv => {
            if x.abs() < ops::PROTECT_EPS {
                0.0
            } else {
                -1.0 / (x * x)
            }
        }
        _ => unreachable!(),
    }
}

/// Value and directional derivative of one gate at one row.
fn gate_row(prim: Prim, u: &[f64], du: &[f64], a: f64, b: f64, da: f64, db: f64) -> (f64, f64) {
    // s(w) and its derivative along the tangent for gated argument w
    let sig = |w: f64, dw: f64| {
        let arg = a * (w - b);
        let s = ops::sigmoid(arg);
        if arg.abs() > ops::SIGMOID_CLIP {
            return (s, 0.0);
        }
        let ds = s * (1.0 - s);
        (s, (a * ds) * dw + ((w - b) * ds) * da + (-a * ds) * db)
    };
    match prim {
        Prim::LgoThre | Prim::Gate => sig(u[0], du[0]),
        Prim::Lgo | Prim::GateExpr => {
            let (s, ds) = sig(u[0], du[0]);
            (u[0] * s, du[0] * s + u[0] * ds)
        }
        Prim::LgoPair => {
            let (s, ds) = sig(u[0] - u[1], du[0] - du[1]);
            let p = u[0] * u[1];
            let dp = du[0] * u[1] + u[0] * du[1];
            (p * s, dp * s + p * ds)
        }
        Prim::LgoAnd2 | Prim::LgoAnd3 => {
            let mut val = 1.0;
            let mut d = 0.0;
            // product of the inputs and of their gates, via the product rule
            for k in 0..u.len() {
                let (s, ds) = sig(u[k], du[k]);
                for (f, df) in [(u[k], du[k]), (s, ds)] {
                    d = d * f + val * df;
                    val *= f;
                }
            }
            (val, d)
        }
        Prim::LgoOr2 => {
            let (s1, ds1) = sig(u[0], du[0]);
            let (s2, ds2) = sig(u[1], du[1]);
            let g = 1.0 - (1.0 - s1) * (1.0 - s2);
            let dg = ds1 * (1.0 - s2) + (1.0 - s1) * ds2;
            let sum = u[0] + u[1];
            (sum * g, (du[0] + du[1]) * g + sum * dg)
        }
        _ => unreachable!("not a gate"),
    }
}

/// Analytic derivative of the training RMSE with respect to `coord`.
pub fn loss_gradient(expr: &Expression, data: &Dataset, coord: Coord) -> f64 {
    let mut t = Tangent {
        coord,
        gate_counter: 0,
        const_counter: 0,
        columns: &data.columns,
        n: data.n_rows(),
    };
    let (pred, d) = t.eval(&expr.root);
    d.map_or(0.0, |d| rmse_gradient(&pred, &d, &data.y))
}

/// Derivative of the model output w.r.t. `coord` at every row.
pub fn output_tangent(expr: &Expression, data: &Dataset, coord: Coord) -> Vec<f64> {
    let mut t = Tangent {
        coord,
        gate_counter: 0,
        const_counter: 0,
        columns: &data.columns,
        n: data.n_rows(),
    };
    t.eval(&expr.root).1.unwrap_or_else(|| vec![0.0; data.n_rows()])
}

fn descend(
    expr: &Expression,
    data: &Dataset,
    coords: &[(Coord, f64)],
    config: &RefineConfig,
) -> (Expression, RefineReport) {
    let mut current = expr.clone();
    let mut loss = loss_of(&current, data);
    let mut report = RefineReport {
        initial_loss: loss,
        final_loss: loss,
        accepted: Vec::new(),
        cycles: 0,
        non_finite_start: !loss.is_finite(),
    };
    if !loss.is_finite() || coords.is_empty() {
        return (current, report);
    }
    let mut steps: Vec<f64> = coords.iter().map(|c| c.1).collect();
    let mut cache = PathCache::build(&current, data);
    for _ in 0..config.steps {
        if steps.iter().all(|s| *s < config.min_step) {
            break;
        }
        report.cycles += 1;
        for (k, &(coord, _)) in coords.iter().enumerate() {
            if steps[k] < config.min_step {
                continue;
            }
            let path = cache.path(coord);
            let g = cache.gradient(&current.preorder(), &path, coord, data);
            if g == 0.0 || !g.is_finite() {
                steps[k] *= config.shrink;
                continue;
            }
            let dir = -g.signum();
            loop {
                let before = *coord_value(&mut current, coord);
                let moved = match coord {
                    Coord::GateB(_) => ops::clip_threshold(before + dir * steps[k]),
                    Coord::GateA(_) => (before + dir * steps[k]).clamp(-ops::SOFTPLUS_CLIP, ops::SOFTPLUS_CLIP),
                    Coord::Const(_) => before + dir * steps[k],
                };
                // a move pinned by the clip cannot lower the loss
                if moved != before {
                    *coord_value(&mut current, coord) = moved;
                    let fresh = cache.refresh(&current.preorder(), &path, data);
                    let trial_loss = engine_rmse(fresh.last().expect("path reaches the root"), &data.y);
                    if trial_loss < loss {
                        for (&q, v) in path.iter().zip(fresh) {
                            cache.values[q] = v;
                        }
                        loss = trial_loss;
                        report.accepted.push(loss);
                        steps[k] *= config.grow;
                        break;
                    }
                    *coord_value(&mut current, coord) = before;
                }
                steps[k] *= config.shrink;
                if steps[k] < config.min_step {
                    break;
                }
            }
        }
    }
    report.final_loss = loss;
    (current, report)
}

/// Gate coordinates in depth-first order, `a_tilde` before `b_z` per gate.
pub fn gate_coords(expr: &Expression) -> Vec<Coord> {
    (0..expr.gate_count())
        .flat_map(|i| [Coord::GateA(i), Coord::GateB(i)])
        .collect()
}

pub fn coordinate_descent_gates(expr: &Expression, z_train: &Dataset, config: &RefineConfig) -> (Expression, RefineReport) {
    let coords: Vec<(Coord, f64)> = gate_coords(expr)
        .into_iter()
        .map(|c| {
            let step = if matches!(c, Coord::GateA(_)) { config.step_a } else { config.step_b };
            (c, step)
        })
        .collect();
    descend(expr, z_train, &coords, config)
}

pub fn refit_constants(expr: &Expression, z_train: &Dataset, config: &RefineConfig) -> (Expression, RefineReport) {
    let mut probe = expr.clone();
    let coords: Vec<(Coord, f64)> = probe
        .constants_mut()
        .into_iter()
        .enumerate()
        .map(|(i, c)| (Coord::Const(i), config.step_a.max(0.1 * c.abs())))
        .collect();
    descend(expr, z_train, &coords, config)
}

/// Constant refit followed by gate coordinate descent.
pub fn refine(expr: &Expression, z_train: &Dataset, gates: &RefineConfig) -> (Expression, RefineReport) {
    let (refit, r1) = refit_constants(expr, z_train, &RefineConfig::constants());
    let (out, r2) = coordinate_descent_gates(&refit, z_train, gates);
    let mut accepted = r1.accepted;
    accepted.extend(r2.accepted);
    (
        out,
        RefineReport {
            initial_loss: r1.initial_loss,
            final_loss: r2.final_loss,
            accepted,
            cycles: r1.cycles + r2.cycles,
            non_finite_start: r1.non_finite_start,
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Task;
    use crate::expr::parse_expr;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ds(x: Vec<f64>, y: Vec<f64>) -> Dataset {
        Dataset::new(vec!["x".into()], vec![x], y, Task::Regression).unwrap()
    }

    #[test]
    fn constant_refit_reaches_mean() {
        let y: Vec<f64> = (0..40).map(|i| f64::from(i).sin() * 3.0 + 7.25).collect();
        let data = ds(vec![0.0; 40], y.clone());
        let e = parse_expr("1.3", &data.feature_names).unwrap();
        let (out, rep) = refit_constants(&e, &data, &RefineConfig::constants());
        let m = y.iter().sum::<f64>() / 40.0;
        match out.root {
            Node::Const(c) => assert!((c - m).abs() < 1e-6, "{c} vs {m}"),
            _ => unreachable!(),
        }
        assert!(rep.final_loss <= rep.initial_loss);
    }

    #[test]
    fn no_coordinates_is_identity() {
        let data = ds(vec![0.1, 0.2, 0.3], vec![1.0, 2.0, 3.0]);
        let e = parse_expr("add(x, x)", &data.feature_names).unwrap();
        assert_eq!(refit_constants(&e, &data, &RefineConfig::constants()).0, e);
        assert_eq!(coordinate_descent_gates(&e, &data, &RefineConfig::default()).0, e);
    }

    #[test]
    fn non_finite_start_is_flagged() {
        let data = ds(vec![1e200, 2e200], vec![0.0, 1.0]);
        let e = parse_expr("mul(pow(x, 3), 2.0)", &data.feature_names).unwrap();
        let (out, rep) = refit_constants(&e, &data, &RefineConfig::constants());
        assert!(rep.non_finite_start);
        assert_eq!(out, e);
    }

    fn step_problem() -> Dataset {
        let x: Vec<f64> = (0..400).map(|i| f64::from(i) / 100.0 - 2.0).collect();
        let y = x.iter().map(|v| f64::from(*v > 0.4)).collect();
        ds(x, y)
    }

    #[test]
    fn hard_gate_threshold_recovered() {
        let data = step_problem();
        let e = parse_expr("lgo_thre(x, 1.0, 0.9)", &data.feature_names).unwrap();
        let (out, rep) = coordinate_descent_gates(&e, &data, &RefineConfig::default());
        let b = match out.root {
            Node::Gate { params, .. } => params.b_z,
            _ => unreachable!(),
        };
        // oracle: grid search over b at 1e-3 with the refined steepness
        let a_tilde = match out.root {
            Node::Gate { params, .. } => params.a_tilde,
            _ => unreachable!(),
        };
        let mut best = (f64::INFINITY, 0.0);
        for k in -3000..=3000 {
            let bb = f64::from(k) * 1e-3;
            let cand = Expression::new(Node::gate(Prim::LgoThre, vec![Node::Var(0)], crate::expr::GateParams::new(a_tilde, bb)));
            let l = loss_of(&cand, &data);
            if l < best.0 {
                best = (l, bb);
            }
        }
        assert!((b - best.1).abs() < 0.05, "cd {b} vs grid {}", best.1);
        assert!((b - 0.4).abs() < 0.05, "b = {b}");
        for w in rep.accepted.windows(2) {
            assert!(w[1] < w[0]);
        }
    }

    fn fd_loss(expr: &Expression, data: &Dataset, coord: Coord, h: f64) -> f64 {
        let mut p = expr.clone();
        *coord_value(&mut p, coord) += h;
        let mut m = expr.clone();
        *coord_value(&mut m, coord) -= h;
        (loss_of(&p, data) - loss_of(&m, data)) / (2.0 * h)
    }

    #[test]
    fn gradient_sign_agrees_with_finite_differences() {
        let data = step_problem();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut checked = 0;
        for _ in 0..100 {
            let a = rng.random_range(-1.0..3.0);
            let b = rng.random_range(-1.5..1.5);
            let e = Expression::new(Node::gate(Prim::LgoThre, vec![Node::Var(0)], crate::expr::GateParams::new(a, b)));
            let g = loss_gradient(&e, &data, Coord::GateB(0));
            let fd = fd_loss(&e, &data, Coord::GateB(0), 1e-6);
            if fd.abs() > 1e-8 {
                assert_eq!(g.signum(), fd.signum(), "a={a} b={b} g={g} fd={fd}");
                checked += 1;
            }
        }
        assert!(checked > 90);
    }

    #[test]
    fn path_cache_agrees_with_full_passes() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x: Vec<f64> = (0..40).map(|_| rng.random_range(-2.0..2.0)).collect();
        let w: Vec<f64> = (0..40).map(|_| rng.random_range(-2.0..2.0)).collect();
        let y: Vec<f64> = x.iter().map(|v| if *v > 0.3 { 1.0 } else { 0.0 }).collect();
        let data = Dataset::new(vec!["x".into(), "w".into()], vec![x, w], y, Task::Regression).unwrap();
        let src = "add(gate_expr(gate_expr(lgo_thre(x, 0.4, 0.2), 0.7, -0.1), 1.1, 0.3), mul(0.5, lgo_and2(x, w, 0.2, 0.1)))";
        let e = parse_expr(src, &data.feature_names).unwrap();
        let cache = PathCache::build(&e, &data);
        assert_eq!(cache.values[0], e.eval(&data.columns, data.n_rows()));
        let coords: Vec<Coord> = gate_coords(&e).into_iter().chain([Coord::Const(0)]).collect();
        for c in coords {
            let path = cache.path(c);
            assert_eq!(cache.gradient(&e.preorder(), &path, c, &data).to_bits(), loss_gradient(&e, &data, c).to_bits());
            let mut moved = e.clone();
            *coord_value(&mut moved, c) += 0.3;
            let fresh = cache.refresh(&moved.preorder(), &path, &data);
            assert_eq!(fresh.last().unwrap(), &moved.eval(&data.columns, data.n_rows()), "{c:?}");
        }
        let (out, report) = refine(&e, &data, &RefineConfig::default());
        assert_eq!(report.final_loss, loss_of(&out, &data));
    }

    #[test]
    fn tangents_match_finite_differences_for_nested_gates() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x: Vec<f64> = (0..30).map(|_| rng.random_range(-2.0..2.0)).collect();
        let x2: Vec<f64> = (0..30).map(|_| rng.random_range(-2.0..2.0)).collect();
        let y: Vec<f64> = (0..30).map(|_| rng.random_range(-1.0..1.0)).collect();
        let data = Dataset::new(vec!["x".into(), "w".into()], vec![x, x2], y, Task::Regression).unwrap();
        let srcs = [
            "gate_expr(mul(1.3, lgo(x, 0.4, 0.2)), 0.7, -0.1)",
            "add(lgo_and2(x, w, 0.2, 0.1), lgo_or2(w, x, -0.5, 0.3))",
            "mul(lgo_and3(x, w, x, 0.9, -0.2), lgo_pair(x, w, 0.1, 0.5))",
            "div(sqrt(add(x, 2.5)), add(exp(lgo_thre(w, 0.3, 0.0)), log(add(pow(x, 2), 1.0))))",
        ];
        for src in srcs {
            let e = parse_expr(src, &data.feature_names).unwrap();
            let n_const = e.clone().constants_mut().len();
            let coords: Vec<Coord> = gate_coords(&e).into_iter().chain((0..n_const).map(Coord::Const)).collect();
            for c in coords {
                let g = loss_gradient(&e, &data, c);
                let fd = fd_loss(&e, &data, c, 1e-6);
                assert!((g - fd).abs() <= 1e-5 * (1.0 + fd.abs()), "{src} {c:?}: {g} vs {fd}");
            }
        }
    }
}
