//! Factored states, their schema, dependency masks and transition records.

use serde::{Deserialize, Serialize};
use std::ops::Range;
use thiserror::Error;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FactorKind {
    Categorical { classes: usize },
    Real { dim: usize },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Factor {
    pub name: String,
    #[serde(flatten)]
    pub kind: FactorKind,
}

impl Factor {
    pub fn categorical(name: &str, classes: usize) -> Self {
        Self {
            name: name.into(),
            kind: FactorKind::Categorical { classes },
        }
    }

    pub fn real(name: &str, dim: usize) -> Self {
        Self {
            name: name.into(),
            kind: FactorKind::Real { dim },
        }
    }

    /// Width of the encoded input (one-hot width or real dimension).
    pub fn encoded_dim(&self) -> usize {
        match self.kind {
            FactorKind::Categorical { classes } => classes,
            FactorKind::Real { dim } => dim,
        }
    }

    /// Number of slots the factor occupies in a [`FactoredState`].
    pub fn slots(&self) -> usize {
        match self.kind {
            FactorKind::Categorical { .. } => 1,
            FactorKind::Real { dim } => dim,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum SchemaError {
    #[error("schema needs at least 2 factors, got {0}")]
    TooFewFactors(usize),
    #[error("factor {0} has a degenerate domain")]
    DegenerateFactor(String),
    #[error("action space needs at least 1 primitive")]
    NoActions,
    #[error("state has {got} slots, schema expects {expected}")]
    StateWidth { expected: usize, got: usize },
    #[error("factor {factor}: value {value} outside 0..{classes}")]
    CategoryOutOfRange { factor: String, value: f64, classes: usize },
    #[error("action {action} outside 0..{actions}")]
    ActionOutOfRange { action: usize, actions: usize },
    #[error("factor {0}: non-finite value")]
    NonFinite(String),
}

/// Per-factor domains plus the categorical action space.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FactorSchema {
    pub factors: Vec<Factor>,
    pub actions: usize,
}

impl FactorSchema {
    pub fn new(factors: Vec<Factor>, actions: usize) -> Result<Self, SchemaError> {
        if factors.len() < 2 {
            return Err(SchemaError::TooFewFactors(factors.len()));
        }
        for f in &factors {
            let ok = match f.kind {
                FactorKind::Categorical { classes } => classes >= 2,
                FactorKind::Real { dim } => dim >= 1,
            };
            if !ok {
                return Err(SchemaError::DegenerateFactor(f.name.clone()));
            }
        }
        if actions == 0 {
            return Err(SchemaError::NoActions);
        }
        Ok(Self { factors, actions })
    }

    pub fn n_factors(&self) -> usize {
        self.factors.len()
    }

    /// Number of model inputs: every factor plus the action.
    pub fn n_inputs(&self) -> usize {
        self.factors.len() + 1
    }

    pub fn state_width(&self) -> usize {
        self.factors.iter().map(Factor::slots).sum()
    }

    pub fn slot_range(&self, factor: usize) -> Range<usize> {
        let start: usize = self.factors[..factor].iter().map(Factor::slots).sum();
        start..start + self.factors[factor].slots()
    }

    /// Encoded width of input `i` (the action is input `n_factors()`).
    pub fn input_dim(&self, i: usize) -> usize {
        if i == self.factors.len() {
            self.actions
        } else {
            self.factors[i].encoded_dim()
        }
    }

    pub fn is_discrete(&self) -> bool {
        self.factors
            .iter()
            .all(|f| matches!(f.kind, FactorKind::Categorical { .. }))
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.factors.iter().position(|f| f.name == name)
    }

    pub fn validate(&self, state: &FactoredState) -> Result<(), SchemaError> {
        if state.0.len() != self.state_width() {
            return Err(SchemaError::StateWidth {
                expected: self.state_width(),
                got: state.0.len(),
            });
        }
        for (i, f) in self.factors.iter().enumerate() {
            let vals = &state.0[self.slot_range(i)];
            if vals.iter().any(|v| !v.is_finite()) {
                return Err(SchemaError::NonFinite(f.name.clone()));
            }
            if let FactorKind::Categorical { classes } = f.kind {
                let v = vals[0];
                if v < 0.0 || v.fract() != 0.0 || v as usize >= classes {
                    return Err(SchemaError::CategoryOutOfRange {
                        factor: f.name.clone(),
                        value: v,
                        classes,
                    });
                }
            }
        }
        Ok(())
    }

    pub fn validate_action(&self, action: usize) -> Result<(), SchemaError> {
        if action >= self.actions {
            return Err(SchemaError::ActionOutOfRange {
                action,
                actions: self.actions,
            });
        }
        Ok(())
    }
}

/// Flat factored state: one slot per categorical factor (the class index)
/// and `dim` slots per real factor, in schema order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactoredState(pub Vec<f64>);

impl FactoredState {
    pub fn class(&self, schema: &FactorSchema, factor: usize) -> usize {
        self.0[schema.slot_range(factor).start] as usize
    }

    pub fn values<'a>(&'a self, schema: &FactorSchema, factor: usize) -> &'a [f64] {
        &self.0[schema.slot_range(factor)]
    }
}

/// Binary `(N+1) × N` matrix: row = input factor (row `N` is the action),
/// column = next-state factor.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EdgeMask {
    n: usize,
    bits: Vec<bool>,
}

impl EdgeMask {
    pub fn empty(n_factors: usize) -> Self {
        Self {
            n: n_factors,
            bits: vec![false; (n_factors + 1) * n_factors],
        }
    }

    pub fn from_bits(n_factors: usize, bits: Vec<bool>) -> Self {
        assert_eq!(bits.len(), (n_factors + 1) * n_factors);
        Self { n: n_factors, bits }
    }

    pub fn n_factors(&self) -> usize {
        self.n
    }

    pub fn action_row(&self) -> usize {
        self.n
    }

    pub fn get(&self, input: usize, target: usize) -> bool {
        self.bits[input * self.n + target]
    }

    pub fn set(&mut self, input: usize, target: usize, on: bool) {
        self.bits[input * self.n + target] = on;
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Active edges `i → j` with `i != j` (the action row always counts).
    pub fn count_non_self(&self) -> usize {
        let mut c = 0;
        for i in 0..=self.n {
            for j in 0..self.n {
                if i != j && self.get(i, j) {
                    c += 1;
                }
            }
        }
        c
    }

    /// Little-endian bit packing, row-major.
    pub fn pack(&self) -> Vec<u8> {
        let mut out = vec![0u8; self.bits.len().div_ceil(8)];
        for (k, &b) in self.bits.iter().enumerate() {
            if b {
                out[k / 8] |= 1 << (k % 8);
            }
        }
        out
    }

    pub fn unpack(n_factors: usize, bytes: &[u8]) -> Self {
        let len = (n_factors + 1) * n_factors;
        let bits = (0..len).map(|k| bytes[k / 8] & (1 << (k % 8)) != 0).collect();
        Self { n: n_factors, bits }
    }

    pub fn packed_len(n_factors: usize) -> usize {
        ((n_factors + 1) * n_factors).div_ceil(8)
    }
}

/// One environment step together with its ground-truth dependency graph.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransitionRecord {
    pub state: FactoredState,
    pub action: usize,
    pub next: FactoredState,
    pub reward: f64,
    pub done: bool,
    pub graph: EdgeMask,
    pub stage: usize,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema() -> FactorSchema {
        FactorSchema::new(
            vec![Factor::categorical("a", 4), Factor::real("b", 2), Factor::categorical("c", 2)],
            3,
        )
        .unwrap()
    }

    #[test]
    fn slot_layout_and_dims() {
        let s = schema();
        assert_eq!(s.state_width(), 4);
        assert_eq!(s.slot_range(1), 1..3);
        assert_eq!(s.slot_range(2), 3..4);
        assert_eq!(s.input_dim(0), 4);
        assert_eq!(s.input_dim(3), 3);
        assert!(!s.is_discrete());
    }

    #[test]
    fn validation_rejects_bad_states() {
        let s = schema();
        assert!(s.validate(&FactoredState(vec![3.0, 0.3, -1.2, 1.0])).is_ok());
        assert!(matches!(
            s.validate(&FactoredState(vec![4.0, 0.0, 0.0, 0.0])),
            Err(SchemaError::CategoryOutOfRange { .. })
        ));
        assert!(s.validate(&FactoredState(vec![1.0, 0.0])).is_err());
        assert!(s.validate_action(3).is_err());
        assert_eq!(
            FactorSchema::new(vec![Factor::categorical("x", 2)], 1).unwrap_err(),
            SchemaError::TooFewFactors(1)
        );
        assert!(FactorSchema::new(vec![Factor::categorical("x", 1), Factor::real("y", 1)], 1).is_err());
    }

    #[test]
    fn mask_pack_round_trip() {
        let mut m = EdgeMask::empty(3);
        m.set(0, 0, true);
        m.set(3, 2, true);
        m.set(1, 2, true);
        let packed = m.pack();
        assert_eq!(packed.len(), EdgeMask::packed_len(3));
        assert_eq!(EdgeMask::unpack(3, &packed), m);
        assert_eq!(m.count(), 3);
        assert_eq!(m.count_non_self(), 2);
    }
}
