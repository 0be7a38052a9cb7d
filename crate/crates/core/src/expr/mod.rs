//! Strongly typed expression trees over standardized features.
//!
//! Every node returns a `Feat` value. Gate primitives additionally carry one
//! `Pos` slot (pre-softplus steepness) and one `Thr` slot (z-space threshold)
//! stored inline as [`GateParams`]; those slots are terminals and count toward
//! [`Expression::complexity`], but they are not addressable subtrees for the
//! variation operators.

mod generate;
mod parse;
mod registry;

pub use generate::TreeGenerator;
pub use parse::{parse_expr, print_expr, ParseError, ParseErrorKind};
pub use registry::{register_primitives, OperatorSet, Primitive, PrimitiveRegistry};

use crate::ops;

/// Type domains of the typed search.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TypeTag {
    Feat,
    Pos,
    Thr,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Prim {
    Add,
    Sub,
    Mul,
    Div,
    Sqrt,
    Log,
    Pow,
    Exp,
    Inv,
    /// Soft gate `x·σ(a(x-b))`.
    Lgo,
    /// Hard gate `σ(a(x-b))`.
    LgoThre,
    LgoPair,
    LgoAnd2,
    LgoOr2,
    LgoAnd3,
    GateExpr,
    /// Compacted gate `σ(a(u-b))` over an arbitrary subexpression.
    Gate,
}

impl Prim {
    pub const ALL: [Prim; 17] = [
        Prim::Add,
        Prim::Sub,
        Prim::Mul,
        Prim::Div,
        Prim::Sqrt,
        Prim::Log,
        Prim::Pow,
        Prim::Exp,
        Prim::Inv,
        Prim::Lgo,
        Prim::LgoThre,
        Prim::LgoPair,
        Prim::LgoAnd2,
        Prim::LgoOr2,
        Prim::LgoAnd3,
        Prim::GateExpr,
        Prim::Gate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Prim::Add => "add",
            Prim::Sub => "sub",
            Prim::Mul => "mul",
            Prim::Div => "div",
            Prim::Sqrt => "sqrt",
            Prim::Log => "log",
            Prim::Pow => "pow",
            Prim::Exp => "exp",
            Prim::Inv => "inv",
            Prim::Lgo => "lgo",
            Prim::LgoThre => "lgo_thre",
            Prim::LgoPair => "lgo_pair",
            Prim::LgoAnd2 => "lgo_and2",
            Prim::LgoOr2 => "lgo_or2",
            Prim::LgoAnd3 => "lgo_and3",
            Prim::GateExpr => "gate_expr",
            Prim::Gate => "gate",
        }
    }

    /// Resolves a printed name, accepting the `lgo_soft`/`lgo_hard` aliases
    /// found in raw engine dumps.
    pub fn from_name(name: &str) -> Option<Prim> {
        match name {
            "lgo_soft" => Some(Prim::Lgo),
            "lgo_hard" => Some(Prim::LgoThre),
            _ => Prim::ALL.iter().copied().find(|p| p.name() == name),
        }
    }

    /// Number of `Feat` inputs (the `pow` exponent literal and gate
    /// parameter slots are not counted).
    pub fn feat_arity(self) -> usize {
        match self {
            Prim::Add | Prim::Sub | Prim::Mul | Prim::Div => 2,
            Prim::Sqrt | Prim::Log | Prim::Exp | Prim::Inv | Prim::Pow => 1,
            Prim::Lgo | Prim::LgoThre | Prim::GateExpr | Prim::Gate => 1,
            Prim::LgoPair | Prim::LgoAnd2 | Prim::LgoOr2 => 2,
            Prim::LgoAnd3 => 3,
        }
    }

    pub fn is_gate(self) -> bool {
        matches!(
            self,
            Prim::Lgo
                | Prim::LgoThre
                | Prim::LgoPair
                | Prim::LgoAnd2
                | Prim::LgoOr2
                | Prim::LgoAnd3
                | Prim::GateExpr
                | Prim::Gate
        )
    }

    /// `add` and `mul` accept more than two arguments after flattening.
    pub fn is_variadic(self) -> bool {
        matches!(self, Prim::Add | Prim::Mul)
    }

    /// Gates whose inputs are restricted to raw feature terminals during search.
    pub fn wants_feature_inputs(self) -> bool {
        self.is_gate() && !matches!(self, Prim::GateExpr | Prim::Gate)
    }
}

/// Learnable parameters of one gate node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GateParams {
    /// Pre-softplus steepness; the effective steepness is `softplus(a_tilde)`.
    pub a_tilde: f64,
    /// Threshold in z-score space, kept in `[-3, 3]`.
    pub b_z: f64,
}

impl GateParams {
    pub fn new(a_tilde: f64, b_z: f64) -> Self {
        GateParams {
            a_tilde,
            b_z: ops::clip_threshold(b_z),
        }
    }

    pub fn from_steepness(a: f64, b_z: f64) -> Self {
        GateParams::new(ops::softplus_inv(a), b_z)
    }

    #[inline]
    pub fn a(&self) -> f64 {
        ops::softplus(self.a_tilde)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    /// Feature column by index.
    Var(usize),
    /// Ephemeral real constant.
    Const(f64),
    /// Arithmetic primitive (everything except `pow` and the gates).
    Op { prim: Prim, args: Vec<Node> },
    /// Integer power.
    Pow { base: Box<Node>, exponent: u8 },
    Gate {
        prim: Prim,
        inputs: Vec<Node>,
        params: GateParams,
    },
}

impl Node {
    pub fn op(prim: Prim, args: Vec<Node>) -> Node {
        debug_assert!(!prim.is_gate() && prim != Prim::Pow);
        Node::Op { prim, args }
    }

    pub fn gate(prim: Prim, inputs: Vec<Node>, params: GateParams) -> Node {
        debug_assert!(prim.is_gate());
        Node::Gate {
            prim,
            inputs,
            params,
        }
    }

    pub fn pow(base: Node, exponent: u8) -> Node {
        Node::Pow {
            base: Box::new(base),
            exponent,
        }
    }

    /// Feat-typed children in order.
    pub fn children(&self) -> &[Node] {
        match self {
            Node::Var(_) | Node::Const(_) => &[],
            Node::Op { args, .. } => args,
            Node::Pow { base, .. } => std::slice::from_ref(base.as_ref()),
            Node::Gate { inputs, .. } => inputs,
        }
    }

    pub fn children_mut(&mut self) -> &mut [Node] {
        match self {
            Node::Var(_) | Node::Const(_) => &mut [],
            Node::Op { args, .. } => args,
            Node::Pow { base, .. } => std::slice::from_mut(base.as_mut()),
            Node::Gate { inputs, .. } => inputs,
        }
    }

    pub fn prim(&self) -> Option<Prim> {
        match self {
            Node::Op { prim, .. } | Node::Gate { prim, .. } => Some(*prim),
            Node::Pow { .. } => Some(Prim::Pow),
            _ => None,
        }
    }

    pub fn is_terminal(&self) -> bool {
        matches!(self, Node::Var(_) | Node::Const(_))
    }

    /// Typed node count: functional nodes plus all terminals, including the
    /// `pow` exponent literal and gate `Pos`/`Thr` slots.
    pub fn complexity(&self) -> usize {
        match self {
            Node::Var(_) | Node::Const(_) => 1,
            Node::Op { args, .. } => 1 + args.iter().map(Node::complexity).sum::<usize>(),
            Node::Pow { base, .. } => 2 + base.complexity(),
            Node::Gate { inputs, .. } => 3 + inputs.iter().map(Node::complexity).sum::<usize>(),
        }
    }

    /// Height with terminals at depth 0; gate parameter slots sit one level
    /// below their gate.
    pub fn depth(&self) -> usize {
        match self {
            Node::Var(_) | Node::Const(_) => 0,
            Node::Pow { base, .. } => 1 + base.depth(),
            Node::Op { args, .. } => 1 + args.iter().map(Node::depth).max().unwrap_or(0),
            Node::Gate { inputs, .. } => 1 + inputs.iter().map(Node::depth).max().unwrap_or(0),
        }
    }

    /// Number of Feat-typed nodes (the addressable positions).
    pub fn size(&self) -> usize {
        1 + self.children().iter().map(Node::size).sum::<usize>()
    }

    pub fn gate_count(&self) -> usize {
        let own = usize::from(matches!(self, Node::Gate { .. }));
        own + self.children().iter().map(Node::gate_count).sum::<usize>()
    }

    pub fn has_var(&self) -> bool {
        matches!(self, Node::Var(_)) || self.children().iter().any(Node::has_var)
    }

    pub fn const_count(&self) -> usize {
        let own = usize::from(matches!(self, Node::Const(_)));
        own + self.children().iter().map(Node::const_count).sum::<usize>()
    }

    /// Evaluates the subtree on column-major data.
    pub fn eval(&self, columns: &[Vec<f64>], n_rows: usize) -> Vec<f64> {
        let kids: Vec<Vec<f64>> = self.children().iter().map(|c| c.eval(columns, n_rows)).collect();
        let refs: Vec<&[f64]> = kids.iter().map(Vec::as_slice).collect();
        self.combine(&refs, columns, n_rows)
    }

    /// Output of this node given the outputs of its children.
    pub fn combine(&self, kids: &[&[f64]], columns: &[Vec<f64>], n_rows: usize) -> Vec<f64> {
        match self {
            Node::Var(i) => columns[*i][..n_rows].to_vec(),
            Node::Const(c) => vec![*c; n_rows],
            Node::Pow { exponent, .. } => kids[0].iter().map(|x| ops::int_pow(*x, *exponent)).collect(),
            Node::Op { prim, .. } => {
                let mut acc = kids[0].to_vec();
                match prim {
                    Prim::Add | Prim::Mul | Prim::Sub | Prim::Div => {
                        let f = binary_fn(*prim);
                        for rhs in &kids[1..] {
                            acc.iter_mut().zip(rhs.iter()).for_each(|(l, r)| *l = f(*l, *r));
                        }
                    }
                    _ => {
                        let f = unary_fn(*prim);
                        acc.iter_mut().for_each(|x| *x = f(*x));
                    }
                }
                acc
            }
            Node::Gate { prim, params, .. } => {
                let a = params.a();
                let b = params.b_z;
                (0..n_rows)
                    .map(|i| match prim {
                        Prim::Lgo => ops::lgo_soft(kids[0][i], a, b),
                        Prim::LgoThre | Prim::Gate => ops::lgo_hard(kids[0][i], a, b),
                        Prim::GateExpr => ops::gate_expr(kids[0][i], a, b),
                        Prim::LgoPair => ops::lgo_pair(kids[0][i], kids[1][i], a, b),
                        Prim::LgoAnd2 => ops::lgo_and2(kids[0][i], kids[1][i], a, b),
                        Prim::LgoOr2 => ops::lgo_or2(kids[0][i], kids[1][i], a, b),
                        Prim::LgoAnd3 => ops::lgo_and3(kids[0][i], kids[1][i], kids[2][i], a, b),
                        _ => unreachable!("non-gate primitive in gate node"),
                    })
                    .collect()
            }
        }
    }

    /// Evaluates the subtree at a single point.
    pub fn eval_point(&self, x: &[f64]) -> f64 {
        match self {
            Node::Var(i) => x[*i],
            Node::Const(c) => *c,
            Node::Pow { base, exponent } => ops::int_pow(base.eval_point(x), *exponent),
            Node::Op { prim, args } => {
                let first = args[0].eval_point(x);
                match prim {
                    Prim::Add | Prim::Mul | Prim::Sub | Prim::Div => {
                        let f = binary_fn(*prim);
                        args[1..].iter().fold(first, |acc, a| f(acc, a.eval_point(x)))
                    }
                    _ => unary_fn(*prim)(first),
                }
            }
            Node::Gate {
                prim,
                inputs,
                params,
            } => {
                let a = params.a();
                let b = params.b_z;
                let v: Vec<f64> = inputs.iter().map(|n| n.eval_point(x)).collect();
                match prim {
                    Prim::Lgo => ops::lgo_soft(v[0], a, b),
                    Prim::LgoThre | Prim::Gate => ops::lgo_hard(v[0], a, b),
                    Prim::GateExpr => ops::gate_expr(v[0], a, b),
                    Prim::LgoPair => ops::lgo_pair(v[0], v[1], a, b),
                    Prim::LgoAnd2 => ops::lgo_and2(v[0], v[1], a, b),
                    Prim::LgoOr2 => ops::lgo_or2(v[0], v[1], a, b),
                    Prim::LgoAnd3 => ops::lgo_and3(v[0], v[1], v[2], a, b),
                    _ => unreachable!("non-gate primitive in gate node"),
                }
            }
        }
    }

    fn visit<'a>(&'a self, out: &mut Vec<&'a Node>) {
        out.push(self);
        for c in self.children() {
            c.visit(out);
        }
    }

    fn nth_mut(&mut self, target: usize, counter: &mut usize) -> Option<&mut Node> {
        if *counter == target {
            return Some(self);
        }
        *counter += 1;
        for c in self.children_mut() {
            if let Some(found) = c.nth_mut(target, counter) {
                return Some(found);
            }
        }
        None
    }
}

pub(crate) fn binary_fn(prim: Prim) -> fn(f64, f64) -> f64 {
    match prim {
        Prim::Add => |l, r| l + r,
        Prim::Sub => |l, r| l - r,
        Prim::Mul => |l, r| l * r,
        Prim::Div => ops::protected_div,
        _ => unreachable!("not a binary primitive"),
    }
}

pub(crate) fn unary_fn(prim: Prim) -> fn(f64) -> f64 {
    match prim {
        Prim::Sqrt => ops::protected_sqrt,
        Prim::Log => ops::protected_log,
        Prim::Exp => ops::protected_exp,
        Prim::Inv => ops::protected_inv,
        _ => unreachable!("not a unary primitive"),
    }
}

/// Whether the Feat child at `slot` of `parent` must be a feature terminal
/// during search.
pub fn slot_wants_feature(parent: &Node) -> bool {
    matches!(parent, Node::Gate { prim, .. } if prim.wants_feature_inputs())
}

/// Structural problems found by [`Expression::type_check`].
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TypeError {
    #[error("primitive `{0}` is not in the registry")]
    NotRegistered(&'static str),
    #[error("`{prim}` expects {expected} Feat inputs, found {found}")]
    Arity {
        prim: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("feature index {0} out of range")]
    UnknownFeature(usize),
    #[error("`pow` exponent {0} not allowed")]
    Exponent(u8),
    #[error("gate parameters out of domain (a_tilde={a_tilde}, b_z={b_z})")]
    GateParams { a_tilde: f64, b_z: f64 },
    #[error("non-finite constant")]
    Constant,
}

/// A candidate model: a Feat-typed tree.
#[derive(Debug, Clone, PartialEq)]
pub struct Expression {
    pub root: Node,
}

impl Expression {
    pub fn new(root: Node) -> Self {
        Expression { root }
    }

    pub fn complexity(&self) -> usize {
        self.root.complexity()
    }

    pub fn depth(&self) -> usize {
        self.root.depth()
    }

    pub fn size(&self) -> usize {
        self.root.size()
    }

    pub fn gate_count(&self) -> usize {
        self.root.gate_count()
    }

    pub fn eval(&self, columns: &[Vec<f64>], n_rows: usize) -> Vec<f64> {
        self.root.eval(columns, n_rows)
    }

    pub fn eval_point(&self, x: &[f64]) -> f64 {
        self.root.eval_point(x)
    }

    /// Feat-typed nodes in depth-first preorder.
    pub fn preorder(&self) -> Vec<&Node> {
        let mut out = Vec::with_capacity(self.size());
        self.root.visit(&mut out);
        out
    }

    pub fn subtree(&self, index: usize) -> Option<&Node> {
        self.preorder().into_iter().nth(index)
    }

    pub fn subtree_mut(&mut self, index: usize) -> Option<&mut Node> {
        let mut counter = 0;
        self.root.nth_mut(index, &mut counter)
    }

    /// Per preorder position: its depth and whether search operators must
    /// keep a feature terminal there.
    pub fn positions(&self) -> Vec<Position> {
        fn walk(node: &Node, depth: usize, wants_feature: bool, out: &mut Vec<Position>) {
            out.push(Position {
                depth,
                wants_feature,
            });
            let restrict = slot_wants_feature(node);
            for c in node.children() {
                walk(c, depth + 1, restrict, out);
            }
        }
        let mut out = Vec::with_capacity(self.size());
        walk(&self.root, 0, false, &mut out);
        out
    }

    /// Gate nodes in depth-first preorder.
    pub fn gates(&self) -> Vec<&Node> {
        self.preorder()
            .into_iter()
            .filter(|n| matches!(n, Node::Gate { .. }))
            .collect()
    }

    pub fn gate_params_mut(&mut self) -> Vec<&mut GateParams> {
        fn walk<'a>(node: &'a mut Node, out: &mut Vec<&'a mut GateParams>) {
            match node {
                Node::Gate { inputs, params, .. } => {
                    out.push(params);
                    for c in inputs {
                        walk(c, out);
                    }
                }
                Node::Op { args, .. } => args.iter_mut().for_each(|c| walk(c, out)),
                Node::Pow { base, .. } => walk(base, out),
                _ => {}
            }
        }
        let mut out = Vec::new();
        walk(&mut self.root, &mut out);
        out
    }

    pub fn constants_mut(&mut self) -> Vec<&mut f64> {
        fn walk<'a>(node: &'a mut Node, out: &mut Vec<&'a mut f64>) {
            match node {
                Node::Const(c) => out.push(c),
                Node::Op { args, .. } => args.iter_mut().for_each(|c| walk(c, out)),
                Node::Gate { inputs, .. } => inputs.iter_mut().for_each(|c| walk(c, out)),
                Node::Pow { base, .. } => walk(base, out),
                Node::Var(_) => {}
            }
        }
        let mut out = Vec::new();
        walk(&mut self.root, &mut out);
        out
    }

    /// Checks arities, registry membership, feature indices and parameter domains.
    pub fn type_check(
        &self,
        registry: &PrimitiveRegistry,
        n_features: usize,
    ) -> Result<(), TypeError> {
        fn check(
            node: &Node,
            reg: &PrimitiveRegistry,
            n_features: usize,
        ) -> Result<(), TypeError> {
            match node {
                Node::Var(i) if *i >= n_features => return Err(TypeError::UnknownFeature(*i)),
                Node::Const(c) if !c.is_finite() => return Err(TypeError::Constant),
                Node::Var(_) | Node::Const(_) => return Ok(()),
                Node::Pow { exponent, .. } if *exponent > 3 => {
                    return Err(TypeError::Exponent(*exponent))
                }
                Node::Gate { params, .. }
                    if !params.a_tilde.is_finite()
                        || !params.b_z.is_finite()
                        || params.b_z.abs() > ops::B_Z_LIMIT =>
                {
                    return Err(TypeError::GateParams {
                        a_tilde: params.a_tilde,
                        b_z: params.b_z,
                    })
                }
                _ => {}
            }
            let prim = node.prim().expect("functional node");
            if !reg.contains(prim) {
                return Err(TypeError::NotRegistered(prim.name()));
            }
            let found = node.children().len();
            let expected = prim.feat_arity();
            let ok = if prim.is_variadic() {
                found >= expected
            } else {
                found == expected
            };
            if !ok {
                return Err(TypeError::Arity {
                    prim: prim.name(),
                    expected,
                    found,
                });
            }
            node.children()
                .iter()
                .try_for_each(|c| check(c, reg, n_features))
        }
        check(&self.root, registry, n_features)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Position {
    pub depth: usize,
    pub wants_feature: bool,
}

/// Free-function form of [`Expression::complexity`].
pub fn complexity(expr: &Expression) -> usize {
    expr.complexity()
}
