use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{ParamId, ParamStore, Session, Tensor, Var};
use crate::tokenizer::Span;

/// `sigmoid(W2 · tanh(W1 · E_cls + b1) + b2)` over the `[CLS]` row.
#[derive(Debug, Clone)]
pub struct BinaryHead {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

impl BinaryHead {
    pub(super) fn new<R: Rng + ?Sized>(p: &mut ParamStore, name: &str, d: usize, std: f64, rng: &mut R) -> Self {
        BinaryHead {
            w1: p.add_normal(format!("{name}.w1"), &[d, d], std, rng),
            b1: p.add(format!("{name}.b1"), Tensor::zeros(&[1, d])),
            w2: p.add_normal(format!("{name}.w2"), &[d, 1], std, rng),
            b2: p.add(format!("{name}.b2"), Tensor::zeros(&[1, 1])),
        }
    }

    /// Pre-sigmoid score.
    pub fn logit(&self, s: &mut Session, h: Var) -> Result<Var> {
        let cls = s.tape.slice_rows(h, 0, 1)?;
        let (w1, b1, w2, b2) = (s.param(self.w1), s.param(self.b1), s.param(self.w2), s.param(self.b2));
        let z = s.tape.matmul(cls, w1)?;
        let z = s.tape.add(z, b1)?;
        let z = s.tape.tanh(z)?;
        let z = s.tape.matmul(z, w2)?;
        s.tape.add(z, b2)
    }

    pub fn score(&self, s: &mut Session, h: Var) -> Result<Var> {
        let z = self.logit(s, h)?;
        s.tape.sigmoid(z)
    }
}

/// Token restoration: `softmax(W' · gelu(W · E_j + b) + b')` per masked row.
#[derive(Debug, Clone)]
pub struct UrHead {
    pub w: ParamId,
    pub b: ParamId,
    pub w_out: ParamId,
    pub b_out: ParamId,
}

impl UrHead {
    pub(super) fn new<R: Rng + ?Sized>(p: &mut ParamStore, d: usize, v: usize, std: f64, rng: &mut R) -> Self {
        UrHead {
            w: p.add_normal("ur.w", &[d, d], std, rng),
            b: p.add("ur.b", Tensor::zeros(&[1, d])),
            w_out: p.add_normal("ur.w_out", &[d, v], std, rng),
            b_out: p.add("ur.b_out", Tensor::zeros(&[1, v])),
        }
    }

    /// Row-wise vocabulary distributions `[l, V]` for the masked span.
    pub fn probs(&self, s: &mut Session, h: Var, (start, end): (usize, usize)) -> Result<Var> {
        if start >= end {
            return Err(Error::Model("empty mask span".into()));
        }
        let rows = s.tape.slice_rows(h, start, end)?;
        let (w, b, wo, bo) = (s.param(self.w), s.param(self.b), s.param(self.w_out), s.param(self.b_out));
        let z = s.tape.matmul(rows, w)?;
        let z = s.tape.add(z, b)?;
        let z = s.tape.gelu(z)?;
        let z = s.tape.matmul(z, wo)?;
        let z = s.tape.add(z, bo)?;
        s.tape.softmax(z)
    }
}

/// Softmax over utterances of `W · [mean; max] + b`.
#[derive(Debug, Clone)]
pub struct IdHead {
    pub w: ParamId,
    pub b: ParamId,
}

impl IdHead {
    pub(super) fn new<R: Rng + ?Sized>(p: &mut ParamStore, d: usize, std: f64, rng: &mut R) -> Self {
        IdHead {
            w: p.add_normal("id.w", &[2 * d, 1], std, rng),
            b: p.add("id.b", Tensor::zeros(&[1, 1])),
        }
    }

    /// Mean and max pooled representation `[1, 2d]` of one span.
    pub fn pool(s: &mut Session, h: Var, span: Span) -> Result<Var> {
        if span.is_empty() {
            return Err(Error::Model(format!("empty utterance span for turn {}", span.turn)));
        }
        let rows = s.tape.slice_rows(h, span.start, span.end)?;
        let mean = s.tape.mean(rows, 0)?;
        let max = s.tape.max(rows, 0)?;
        s.tape.concat(&[mean, max], 1)
    }

    /// Distribution `[1, m]` over the given utterance spans.
    pub fn probs(&self, s: &mut Session, h: Var, spans: &[Span]) -> Result<Var> {
        if spans.len() < 2 {
            return Err(Error::Model("incoherence detection needs at least 2 utterances".into()));
        }
        let pooled = spans
            .iter()
            .map(|&sp| Self::pool(s, h, sp))
            .collect::<Result<Vec<_>>>()?;
        let u = s.tape.concat(&pooled, 0)?;
        let (w, b) = (s.param(self.w), s.param(self.b));
        let z = s.tape.matmul(u, w)?;
        let z = s.tape.add(z, b)?;
        let z = s.tape.transpose(z)?;
        s.tape.softmax(z)
    }
}
