use rand::Rng;
use rand_distr::StandardNormal;

use super::tape::{Gradients, Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named, ordered collection of trainable tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(value);
        ParamId(self.tensors.len() - 1)
    }

    /// Normal(0, std) initialization.
    pub fn add_normal<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        std: f64,
        rng: &mut R,
    ) -> ParamId {
        let n = shape.iter().product();
        let data = (0..n).map(|_| std * rng.sample::<f64, _>(StandardNormal)).collect();
        self.add(name, Tensor::new(shape.to_vec(), data).expect("shape product"))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn total_len(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Replaces the tensor values of every parameter, keeping names and
    /// requiring identical shapes.
    pub fn assign(&mut self, other: &ParamStore) -> Result<()> {
        if other.names != self.names {
            return Err(Error::Checkpoint("parameter names differ".into()));
        }
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            if a.shape() != b.shape() {
                return Err(Error::Shape {
                    op: "assign",
                    left: a.shape().to_vec(),
                    right: b.shape().to_vec(),
                });
            }
            *a = b.clone();
        }
        Ok(())
    }
}

/// A tape plus lazily bound parameter leaves. Each parameter is placed on
/// the tape at most once, so gradients from every use accumulate into one
/// leaf.
pub struct Session<'p> {
    pub tape: Tape,
    params: &'p ParamStore,
    bound: Vec<Option<Var>>,
    trainable: bool,
}

impl<'p> Session<'p> {
    pub fn new(params: &'p ParamStore, tape: Tape) -> Self {
        Session {
            tape,
            params,
            bound: vec![None; params.len()],
            trainable: true,
        }
    }

    /// Parameters enter as constants; nothing records gradients.
    pub fn inference(params: &'p ParamStore) -> Self {
        Session {
            trainable: false,
            ..Session::new(params, Tape::new())
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        let v = self.tape.leaf(self.params.get(id).clone(), self.trainable);
        self.bound[id.0] = Some(v);
        v
    }

    /// Gradients aligned with the parameter store; unused parameters get
    /// zero tensors.
    pub fn param_grads(&self, loss: Var) -> Result<Vec<Tensor>> {
        let grads: Gradients = self.tape.backward(loss)?;
        Ok(self
            .params
            .ids()
            .map(|id| match self.bound[id.0] {
                Some(v) => grads.get_or_zeros(v),
                None => Tensor::zeros(self.params.get(id).shape()),
            })
            .collect())
    }
}
