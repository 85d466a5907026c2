use super::tape::{Gradients, Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Ordered collection of named parameter tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor) {
        let name = name.into();
        assert!(!self.names.contains(&name), "duplicate parameter `{name}`");
        self.names.push(name);
        self.tensors.push(tensor);
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.position(name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.position(name).map(move |i| &mut self.tensors[i])
    }

    fn position(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// A zero-valued set with identical names and shapes.
    pub fn zeros_like(&self) -> Self {
        Self {
            names: self.names.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|t| Tensor::zeros(t.rows(), t.cols()))
                .collect(),
        }
    }

    pub fn num_entries(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Global L2 norm over the concatenation of every entry.
    pub fn global_norm(&self) -> f64 {
        self.tensors
            .iter()
            .map(Tensor::squared_norm)
            .sum::<f64>()
            .sqrt()
    }

    pub fn dot(&self, other: &ParamSet) -> Result<f64> {
        self.check_mirrors(other)?;
        Ok(self
            .tensors
            .iter()
            .zip(&other.tensors)
            .map(|(a, b)| a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum::<f64>())
            .sum())
    }

    pub fn check_mirrors(&self, other: &ParamSet) -> Result<()> {
        if self.names != other.names {
            return Err(Error::Shape {
                op: "param_set",
                lhs: vec![self.len()],
                rhs: vec![other.len()],
            });
        }
        for (a, b) in self.tensors.iter().zip(&other.tensors) {
            a.check_same_shape(b, "param_set")?;
        }
        Ok(())
    }

    /// Elementwise `self + factor * other` into a fresh set.
    pub fn add_scaled(&self, other: &ParamSet, factor: f64) -> Result<ParamSet> {
        self.check_mirrors(other)?;
        let mut out = self.clone();
        for (t, o) in out.tensors.iter_mut().zip(&other.tensors) {
            for (x, y) in t.data_mut().iter_mut().zip(o.data()) {
                *x += factor * y;
            }
        }
        Ok(out)
    }

    /// Registers every tensor as a gradient-tracked leaf on `tape`.
    pub fn register(&self, tape: &mut Tape) -> ParamVars {
        ParamVars {
            names: self.names.clone(),
            vars: self.tensors.iter().map(|t| tape.variable(t.clone())).collect(),
        }
    }

    /// Registers every tensor as a constant on `tape`.
    pub fn register_constant(&self, tape: &mut Tape) -> ParamVars {
        ParamVars {
            names: self.names.clone(),
            vars: self.tensors.iter().map(|t| tape.constant(t.clone())).collect(),
        }
    }
}

impl Default for ParamSet {
    fn default() -> Self {
        Self::new()
    }
}

/// Tape handles for a registered [`ParamSet`], in the same order.
#[derive(Debug, Clone)]
pub struct ParamVars {
    names: Vec<String>,
    vars: Vec<Var>,
}

impl ParamVars {
    pub fn get(&self, name: &str) -> Var {
        let i = self
            .names
            .iter()
            .position(|n| n == name)
            .unwrap_or_else(|| panic!("unknown parameter `{name}`"));
        self.vars[i]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    /// Collects the gradient of every parameter into a set mirroring `params`.
    pub fn collect_grads(&self, grads: &mut Gradients, params: &ParamSet) -> Result<ParamSet> {
        let mut out = ParamSet::new();
        for ((name, var), t) in self.names.iter().zip(&self.vars).zip(params.tensors()) {
            let g = grads
                .take(*var)
                .unwrap_or_else(|| Tensor::zeros(t.rows(), t.cols()));
            out.push(name.clone(), g);
        }
        Ok(out)
    }
}
