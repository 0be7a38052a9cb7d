use std::fmt;
use std::str::FromStr;

use super::{Prim, TypeTag};
use crate::error::ConfigError;

/// Named operator configurations available to the search.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OperatorSet {
    /// Arithmetic only.
    Base,
    /// Arithmetic plus magnitude-preserving gates.
    Soft,
    /// Arithmetic plus the hard threshold gate and AND/OR/expression gating.
    Hard,
}

impl OperatorSet {
    pub fn name(self) -> &'static str {
        match self {
            OperatorSet::Base => "base",
            OperatorSet::Soft => "soft",
            OperatorSet::Hard => "hard",
        }
    }

    /// Experiment tag used in exports.
    pub fn experiment(self) -> &'static str {
        match self {
            OperatorSet::Base => "base",
            OperatorSet::Soft => "lgo_soft",
            OperatorSet::Hard => "lgo_hard",
        }
    }
}

impl fmt::Display for OperatorSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OperatorSet {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "base" => Ok(OperatorSet::Base),
            "soft" | "lgo_soft" => Ok(OperatorSet::Soft),
            "hard" | "lgo_hard" => Ok(OperatorSet::Hard),
            other => Err(ConfigError::UnknownOperatorSet(other.to_string())),
        }
    }
}

/// Signature of one primitive.
#[derive(Debug, Clone, PartialEq)]
pub struct Primitive {
    pub prim: Prim,
    pub name: &'static str,
    pub arity: usize,
    pub arg_types: Vec<TypeTag>,
    pub return_type: TypeTag,
    pub cost_weight: f64,
}

impl Primitive {
    pub fn of(prim: Prim) -> Primitive {
        let feat_inputs = prim.feat_arity();
        let mut arg_types = vec![TypeTag::Feat; feat_inputs];
        if prim == Prim::Pow {
            // integer exponent literal
            arg_types.push(TypeTag::Feat);
        }
        if prim.is_gate() {
            arg_types.push(TypeTag::Pos);
            arg_types.push(TypeTag::Thr);
        }
        let cost_weight = match prim {
            Prim::Add | Prim::Sub | Prim::Mul => 1.0,
            Prim::Div | Prim::Sqrt | Prim::Inv => 1.5,
            Prim::Log | Prim::Exp | Prim::Pow => 2.0,
            _ => 2.0,
        };
        Primitive {
            prim,
            name: prim.name(),
            arity: arg_types.len(),
            arg_types,
            return_type: TypeTag::Feat,
            cost_weight,
        }
    }
}

/// The set of primitives a search may use.
#[derive(Debug, Clone, PartialEq)]
pub struct PrimitiveRegistry {
    set: Option<OperatorSet>,
    primitives: Vec<Primitive>,
}

const ARITHMETIC: [Prim; 9] = [
    Prim::Add,
    Prim::Sub,
    Prim::Mul,
    Prim::Div,
    Prim::Sqrt,
    Prim::Log,
    Prim::Pow,
    Prim::Exp,
    Prim::Inv,
];

const SOFT_GATES: [Prim; 6] = [
    Prim::Lgo,
    Prim::LgoPair,
    Prim::LgoAnd2,
    Prim::LgoOr2,
    Prim::LgoAnd3,
    Prim::GateExpr,
];

const HARD_GATES: [Prim; 4] = [Prim::LgoThre, Prim::LgoAnd2, Prim::LgoOr2, Prim::GateExpr];

impl PrimitiveRegistry {
    pub fn new(set: OperatorSet) -> PrimitiveRegistry {
        let mut prims: Vec<Prim> = ARITHMETIC.to_vec();
        match set {
            OperatorSet::Base => {}
            OperatorSet::Soft => prims.extend_from_slice(&SOFT_GATES),
            OperatorSet::Hard => prims.extend_from_slice(&HARD_GATES),
        }
        PrimitiveRegistry {
            set: Some(set),
            primitives: prims.into_iter().map(Primitive::of).collect(),
        }
    }

    /// Every primitive known to the parser, including the compacted `gate` form
    /// emitted by the simplifier.
    pub fn full() -> PrimitiveRegistry {
        let mut prims: Vec<Prim> = ARITHMETIC.to_vec();
        prims.extend_from_slice(&SOFT_GATES);
        prims.push(Prim::LgoThre);
        prims.push(Prim::Gate);
        PrimitiveRegistry {
            set: None,
            primitives: prims.into_iter().map(Primitive::of).collect(),
        }
    }

    pub fn operator_set(&self) -> Option<OperatorSet> {
        self.set
    }

    pub fn primitives(&self) -> &[Primitive] {
        &self.primitives
    }

    pub fn contains(&self, prim: Prim) -> bool {
        self.primitives.iter().any(|p| p.prim == prim)
    }

    pub fn get(&self, name: &str) -> Option<&Primitive> {
        self.primitives.iter().find(|p| p.name == name)
    }

    pub fn gate_primitives(&self) -> impl Iterator<Item = &Primitive> {
        self.primitives.iter().filter(|p| p.prim.is_gate())
    }

    pub fn gate_count(&self) -> usize {
        self.gate_primitives().count()
    }

    pub fn len(&self) -> usize {
        self.primitives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.primitives.is_empty()
    }
}

/// Builds the registry for a named operator set.
pub fn register_primitives(name: &str) -> Result<PrimitiveRegistry, ConfigError> {
    Ok(PrimitiveRegistry::new(name.parse()?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn base_has_no_gates() {
        let reg = register_primitives("base").unwrap();
        assert_eq!(reg.gate_count(), 0);
        assert_eq!(reg.len(), 9);
    }

    #[test]
    fn hard_and_soft_contents() {
        let hard = register_primitives("hard").unwrap();
        assert!(hard.get("lgo_thre").is_some());
        assert!(hard.get("gate_expr").is_some());
        assert!(hard.get("lgo").is_none());
        let soft = register_primitives("soft").unwrap();
        assert!(soft.get("lgo_and3").is_some());
        assert!(soft.get("lgo_thre").is_none());
        for name in ["lgo", "lgo_pair", "lgo_and2", "lgo_or2", "lgo_and3", "gate_expr"] {
            assert!(soft.get(name).is_some(), "{name}");
        }
    }

    #[test]
    fn unknown_set_is_config_error() {
        assert!(matches!(
            register_primitives("medium"),
            Err(ConfigError::UnknownOperatorSet(_))
        ));
    }

    #[test]
    fn names_unique_and_gate_slots() {
        let reg = PrimitiveRegistry::full();
        let names: HashSet<_> = reg.primitives().iter().map(|p| p.name).collect();
        assert_eq!(names.len(), reg.len());
        for p in reg.gate_primitives() {
            let pos = p.arg_types.iter().filter(|t| **t == TypeTag::Pos).count();
            let thr = p.arg_types.iter().filter(|t| **t == TypeTag::Thr).count();
            assert_eq!((pos, thr), (1, 1), "{}", p.name);
        }
    }
}
