use serde::{Deserialize, Serialize};

use super::MatcherModel;
use crate::error::{Error, Result};
use crate::numerics::{Session, Tape, Tensor, Var};
use crate::seeding::{stream, StreamRng};
use crate::taskgen::Batch;

/// Probabilities fed to a log are clamped into `[PROB_CLAMP, 1 - PROB_CLAMP]`.
pub const PROB_CLAMP: f64 = 1e-12;

pub fn tape_binary_ce(tape: &mut Tape, g: Var, y: u8) -> Result<Var> {
    let g = tape.clamp(g, PROB_CLAMP, 1.0 - PROB_CLAMP)?;
    let p = match y {
        1 => g,
        0 => {
            let neg = tape.scale(g, -1.0)?;
            tape.add_scalar(neg, 1.0)?
        }
        _ => return Err(Error::Model(format!("binary label must be 0 or 1, got {y}"))),
    };
    let l = tape.ln(p)?;
    tape.scale(l, -1.0)
}

/// Mean negative log-likelihood of `targets` under row distributions.
pub fn tape_loss_ur(tape: &mut Tape, probs: Var, targets: &[u32]) -> Result<Var> {
    if tape.value(probs).rows() != targets.len() {
        return Err(Error::Shape {
            op: "loss_ur",
            left: tape.shape(probs).to_vec(),
            right: vec![targets.len()],
        });
    }
    let idx: Vec<usize> = targets.iter().map(|&t| t as usize).collect();
    let picked = tape.gather(probs, &idx)?;
    let logs = tape.ln(picked)?;
    let mean = tape.mean_all(logs)?;
    tape.scale(mean, -1.0)
}

pub fn tape_loss_id(tape: &mut Tape, probs: Var, z: &[u8]) -> Result<Var> {
    let m = tape.value(probs).numel();
    if z.len() != m || z.iter().filter(|&&v| v == 1).count() != 1 || z.iter().any(|&v| v > 1) {
        return Err(Error::Model(format!("malformed one-hot label {z:?} for {m} utterances")));
    }
    let k = z.iter().position(|&v| v == 1).expect("checked above");
    let p = tape.slice_cols(probs, k, k + 1)?;
    let l = tape.ln(p)?;
    tape.scale(l, -1.0)
}

/// `max(0, delta - g_pos + g_neg)`
pub fn tape_loss_cd(tape: &mut Tape, g_pos: Var, g_neg: Var, delta: f64) -> Result<Var> {
    let diff = tape.sub(g_neg, g_pos)?;
    let shifted = tape.add_scalar(diff, delta)?;
    tape.relu(shifted)
}

pub fn binary_ce(g: f64, y: u8) -> Result<f64> {
    let mut t = Tape::new();
    let gv = t.constant(Tensor::scalar(g));
    let l = tape_binary_ce(&mut t, gv, y)?;
    Ok(t.value(l).item())
}

pub fn loss_ur(probs: &Tensor, targets: &[u32]) -> Result<f64> {
    let mut t = Tape::new();
    let p = t.constant(probs.clone());
    let l = tape_loss_ur(&mut t, p, targets)?;
    Ok(t.value(l).item())
}

pub fn loss_id(probs: &[f64], z: &[u8]) -> Result<f64> {
    let mut t = Tape::new();
    let p = t.constant(Tensor::row(probs.to_vec()));
    let l = tape_loss_id(&mut t, p, z)?;
    Ok(t.value(l).item())
}

pub fn loss_cd(g_pos: f64, g_neg: f64, delta: f64) -> Result<f64> {
    let mut t = Tape::new();
    let a = t.constant(Tensor::scalar(g_pos));
    let b = t.constant(Tensor::scalar(g_neg));
    let l = tape_loss_cd(&mut t, a, b, delta)?;
    Ok(t.value(l).item())
}

/// `l_crm + alpha * (l_nsp + l_ur + l_id + l_cd)`
pub fn loss_final(bundle: &LossBundle, alpha: f64) -> f64 {
    bundle.l_crm + alpha * (bundle.l_nsp + bundle.l_ur + bundle.l_id + bundle.l_cd)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskCounts {
    pub crm: usize,
    pub nsp: usize,
    pub ur: usize,
    pub id: usize,
    pub cd: usize,
}

/// Per-task batch means; absent tasks contribute zero.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBundle {
    pub l_crm: f64,
    pub l_nsp: f64,
    pub l_ur: f64,
    pub l_id: f64,
    pub l_cd: f64,
    pub l_final: f64,
    pub counts: TaskCounts,
}

impl LossBundle {
    pub fn is_finite(&self) -> bool {
        [self.l_crm, self.l_nsp, self.l_ur, self.l_id, self.l_cd, self.l_final]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// Per-task dropout streams, split like the generator streams.
#[derive(Debug, Clone)]
pub struct DropoutStreams {
    pub crm: StreamRng,
    pub nsp: StreamRng,
    pub ur: StreamRng,
    pub id: StreamRng,
    pub cd: StreamRng,
}

impl DropoutStreams {
    pub fn new(seed: u64, step: u64) -> Self {
        let s = |t: u64| stream(seed, &[0xd50b, step, t]);
        DropoutStreams {
            crm: s(0),
            nsp: s(1),
            ur: s(2),
            id: s(3),
            cd: s(4),
        }
    }
}

fn mean_of(tape: &mut Tape, terms: &[Var]) -> Result<Option<Var>> {
    if terms.is_empty() {
        return Ok(None);
    }
    let stacked = if terms.len() == 1 { terms[0] } else { tape.concat(terms, 0)? };
    Ok(Some(tape.mean_all(stacked)?))
}

/// Builds the joint objective for a batch on `s`. Returns the scalar to
/// differentiate and the per-task values.
pub fn batch_loss(
    model: &MatcherModel,
    s: &mut Session,
    batch: &Batch,
    alpha: f64,
    delta: f64,
    mut dropout: Option<&mut DropoutStreams>,
) -> Result<(Var, LossBundle)> {
    let mut crm = Vec::with_capacity(batch.crm.len());
    for x in &batch.crm {
        let h = model.encode(s, &x.packed, dropout.as_deref_mut().map(|d| &mut d.crm))?;
        let g = model.crm_score(s, h)?;
        crm.push(tape_binary_ce(&mut s.tape, g, x.label)?);
    }
    let mut nsp = Vec::with_capacity(batch.nsp.len());
    for x in &batch.nsp {
        let h = model.encode(s, &x.packed, dropout.as_deref_mut().map(|d| &mut d.nsp))?;
        let g = model.nsp_score(s, h)?;
        nsp.push(tape_binary_ce(&mut s.tape, g, x.label)?);
    }
    let mut ur = Vec::with_capacity(batch.ur.len());
    for x in &batch.ur {
        let h = model.encode(s, &x.packed, dropout.as_deref_mut().map(|d| &mut d.ur))?;
        let span = x.packed.mask_span.ok_or_else(|| Error::Model("UR instance without mask".into()))?;
        let p = model.ur_token_logits(s, h, span)?;
        ur.push(tape_loss_ur(&mut s.tape, p, &x.target_ids)?);
    }
    let mut id = Vec::with_capacity(batch.id.len());
    for x in &batch.id {
        let h = model.encode(s, &x.packed, dropout.as_deref_mut().map(|d| &mut d.id))?;
        let p = model.id_utterance_probs(s, h, &x.packed.utterance_spans)?;
        id.push(tape_loss_id(&mut s.tape, p, &x.label)?);
    }
    let mut cd = Vec::with_capacity(batch.cd.len());
    for x in &batch.cd {
        let hp = model.encode(s, &x.packed_pos, dropout.as_deref_mut().map(|d| &mut d.cd))?;
        let gp = model.cd_score(s, hp)?;
        let hn = model.encode(s, &x.packed_neg, dropout.as_deref_mut().map(|d| &mut d.cd))?;
        let gn = model.cd_score(s, hn)?;
        cd.push(tape_loss_cd(&mut s.tape, gp, gn, delta)?);
    }

    let t = &mut s.tape;
    let means = [
        mean_of(t, &crm)?,
        mean_of(t, &nsp)?,
        mean_of(t, &ur)?,
        mean_of(t, &id)?,
        mean_of(t, &cd)?,
    ];
    let val = |t: &Tape, v: &Option<Var>| v.map_or(0.0, |v| t.value(v).item());
    let mut bundle = LossBundle {
        l_crm: val(t, &means[0]),
        l_nsp: val(t, &means[1]),
        l_ur: val(t, &means[2]),
        l_id: val(t, &means[3]),
        l_cd: val(t, &means[4]),
        l_final: 0.0,
        counts: TaskCounts {
            crm: crm.len(),
            nsp: nsp.len(),
            ur: ur.len(),
            id: id.len(),
            cd: cd.len(),
        },
    };
    let aux: Vec<Var> = means[1..].iter().flatten().copied().collect();
    let mut total = match means[0] {
        Some(v) => v,
        None => t.constant(Tensor::scalar(0.0)),
    };
    if !aux.is_empty() && alpha != 0.0 {
        let stacked = if aux.len() == 1 { aux[0] } else { t.concat(&aux, 0)? };
        let sum = t.sum_all(stacked)?;
        let weighted = t.scale(sum, alpha)?;
        total = t.add(total, weighted)?;
    }
    bundle.l_final = t.value(total).item();
    Ok((total, bundle))
}
