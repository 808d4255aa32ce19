//! Named parameter storage.

use std::collections::HashMap;

use crate::error::{shape_err, Result};
use crate::numerics::graph::{Graph, Var};
use crate::numerics::real::Real;
use crate::numerics::rng::RngStream;
use crate::numerics::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub enum Init {
    Zeros,
    Ones,
    Normal(f64),
    /// Glorot uniform over `[fan_in, fan_out] = shape[0], shape[1..]`.
    XavierUniform,
    Values(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl ParamSpec {
    pub fn new(name: impl Into<String>, shape: &[usize], init: Init) -> Self {
        Self {
            name: name.into(),
            shape: shape.to_vec(),
            init,
        }
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    fn materialize<T: Real>(&self, rng: &mut RngStream) -> Tensor<T> {
        match &self.init {
            Init::Zeros => Tensor::zeros(&self.shape),
            Init::Ones => Tensor::full(&self.shape, T::one()),
            Init::Normal(std) => Tensor::randn(&self.shape, *std, rng),
            Init::XavierUniform => {
                let fan_in = self.shape[0];
                let fan_out: usize = self.shape[1..].iter().product();
                let lim = (6.0 / (fan_in + fan_out) as f64).sqrt();
                Tensor::uniform(&self.shape, -lim, lim, rng)
            }
            Init::Values(v) => Tensor::new(&self.shape, v.iter().map(|&x| T::of(x)).collect()).expect("init size"),
        }
    }
}

/// Ordered collection of named tensors.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
    index: HashMap<String, usize>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
            index: HashMap::new(),
        }
    }

    /// Materializes specs in order, drawing every random init from `rng`.
    pub fn from_specs(specs: &[ParamSpec], rng: &mut RngStream) -> Self {
        let mut store = Self::new();
        for s in specs {
            store
                .insert(&s.name, s.materialize(rng))
                .expect("duplicate parameter name");
        }
        store
    }

    pub fn insert(&mut self, name: &str, t: Tensor<T>) -> Result<()> {
        if self.index.contains_key(name) {
            return shape_err(format!("duplicate parameter {name}"));
        }
        self.index.insert(name.to_string(), self.names.len());
        self.names.push(name.to_string());
        self.tensors.push(t);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.index.get(name).map(|&i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.index.get(name).map(|&i| &mut self.tensors[i])
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
            index: self.index.clone(),
        }
    }

    /// True when names and shapes agree entry by entry.
    pub fn same_layout<U: Real>(&self, other: &ParamStore<U>) -> bool {
        self.names == other.names
            && self
                .tensors
                .iter()
                .zip(&other.tensors)
                .all(|(a, b)| a.shape() == b.shape())
    }

    /// Loads every tensor as a gradient-tracked leaf.
    pub fn bind<'a>(&'a self, g: &mut Graph<T>) -> Bound<'a> {
        let vars = self.tensors.iter().map(|t| g.param(t.clone())).collect();
        Bound {
            index: &self.index,
            vars,
        }
    }
}

/// Parameters of a store loaded into a particular graph.
pub struct Bound<'a> {
    index: &'a HashMap<String, usize>,
    vars: Vec<Var>,
}

impl<'a> Bound<'a> {
    /// Binds `vars`, given in store order, under the names of `store`.
    pub fn from_vars<T: Real>(store: &'a ParamStore<T>, vars: Vec<Var>) -> Result<Self> {
        if vars.len() != store.len() {
            return shape_err(format!("{} vars for {} parameters", vars.len(), store.len()));
        }
        Ok(Self {
            index: &store.index,
            vars,
        })
    }

    pub fn get(&self, name: &str) -> Var {
        let i = self
            .index
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"));
        self.vars[*i]
    }

    pub fn try_get(&self, name: &str) -> Option<Var> {
        self.index.get(name).map(|&i| self.vars[i])
    }

    /// Vars in store order.
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}
