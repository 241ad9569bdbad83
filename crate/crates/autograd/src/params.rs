use std::collections::HashMap;
use std::sync::Arc;

use crate::{Gradients, Graph, Real, Tensor, Var};

/// Ordered collection of named parameter tensors.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<R: Real> {
    names: Vec<String>,
    values: Vec<Arc<Tensor<R>>>,
    index: HashMap<String, usize>,
}

impl<R: Real> PartialEq for ParamStore<R> {
    fn eq(&self, other: &Self) -> bool {
        self.names == other.names && self.values.iter().zip(&other.values).all(|(a, b)| a == b)
    }
}

impl<R: Real> ParamStore<R> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            values: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<R>) {
        let name = name.into();
        if let Some(&i) = self.index.get(&name) {
            self.values[i] = Arc::new(value);
            return;
        }
        self.index.insert(name.clone(), self.names.len());
        self.names.push(name);
        self.values.push(Arc::new(value));
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<R>> {
        self.index.get(name).map(|&i| &*self.values[i])
    }

    /// Mutable access; clones the tensor only if a graph still shares it.
    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<R>> {
        let i = *self.index.get(name)?;
        Some(Arc::make_mut(&mut self.values[i]))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<R>)> {
        self.names.iter().map(String::as_str).zip(self.values.iter().map(|v| &**v))
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|v| v.numel()).sum()
    }

    /// Registers every parameter in `g`, trainable or frozen.
    pub fn bind(&self, g: &Graph<R>, trainable: bool) -> Bound {
        let vars = self
            .values
            .iter()
            .map(|v| if trainable { g.param_arc(v.clone()) } else { g.constant_arc(v.clone()) })
            .collect();
        Bound {
            vars,
            index: self.index.clone(),
        }
    }

    /// Gradients aligned with this store's order; missing entries are zero.
    pub fn collect_grads(&self, bound: &Bound, grads: &mut Gradients<R>) -> Vec<Tensor<R>> {
        self.values
            .iter()
            .zip(&bound.vars)
            .map(|(v, &var)| grads.take(var).unwrap_or_else(|| Tensor::zeros(v.shape())))
            .collect()
    }

    pub fn zero_grads(&self) -> Vec<Tensor<R>> {
        self.values.iter().map(|v| Tensor::zeros(v.shape())).collect()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn value_at_mut(&mut self, i: usize) -> &mut Tensor<R> {
        Arc::make_mut(&mut self.values[i])
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Graph variables for a [`ParamStore`], looked up by parameter name.
pub struct Bound {
    vars: Vec<Var>,
    index: HashMap<String, usize>,
}

impl Bound {
    pub fn get(&self, name: &str) -> Var {
        match self.index.get(name) {
            Some(&i) => self.vars[i],
            None => panic!("unknown parameter {name}"),
        }
    }
}

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam<R: Real> {
    pub lr: R,
    pub beta1: R,
    pub beta2: R,
    pub eps: R,
    step: u64,
    m: Vec<Tensor<R>>,
    v: Vec<Tensor<R>>,
}

impl<R: Real> Adam<R> {
    pub fn new(params: &ParamStore<R>, lr: R, beta1: R, beta2: R) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps: R::lit(1e-8),
            step: 0,
            m: params.zero_grads(),
            v: params.zero_grads(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn update(&mut self, params: &mut ParamStore<R>, grads: &[Tensor<R>]) {
        assert_eq!(grads.len(), params.len(), "gradient count mismatch");
        self.step += 1;
        let t = self.step as i32;
        let c1 = R::one() - self.beta1.powi(t);
        let c2 = R::one() - self.beta2.powi(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        for (i, g) in grads.iter().enumerate() {
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            let p = params.value_at_mut(i).data_mut();
            for j in 0..g.numel() {
                let gj = g.data()[j];
                m[j] = b1 * m[j] + (R::one() - b1) * gj;
                v[j] = b2 * v[j] + (R::one() - b2) * gj * gj;
                let mh = m[j] / c1;
                let vh = v[j] / c2;
                p[j] -= lr * mh / (vh.sqrt() + eps);
            }
        }
    }
}
