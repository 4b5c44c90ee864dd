//! Transformer encoder shared by five task heads.

mod heads;
mod loss;

use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{load_checkpoint, save_checkpoint, ParamId, ParamStore, Session, Tensor, Var};
use crate::seeding::StreamRng;
use crate::tokenizer::{PackedSequence, PAD_ID};

pub use heads::{BinaryHead, IdHead, UrHead};
pub use loss::{
    batch_loss, binary_ce, loss_cd, loss_final, loss_id, loss_ur, tape_binary_ce, tape_loss_cd,
    tape_loss_id, tape_loss_ur, DropoutStreams, LossBundle, TaskCounts, PROB_CLAMP,
};

/// Additive attention bias on padded key positions.
const MASK_BIAS: f64 = -1e9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub layers: usize,
    pub heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub vocab_size: usize,
    pub max_len: usize,
    pub dropout: f64,
    pub init_std: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            layers: 2,
            heads: 4,
            d_model: 64,
            d_ff: 256,
            vocab_size: 0,
            max_len: 256,
            dropout: 0.1,
            init_std: 0.02,
        }
    }
}

impl EncoderConfig {
    pub fn with_vocab(vocab_size: usize) -> Self {
        EncoderConfig {
            vocab_size,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || !self.d_model.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "d_model {} not divisible by {} heads",
                self.d_model, self.heads
            )));
        }
        if self.vocab_size == 0 || self.max_len == 0 || self.d_ff == 0 {
            return Err(Error::Config("vocab_size, max_len and d_ff must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[derive(Debug, Clone)]
struct LayerParams {
    wq: ParamId,
    bq: ParamId,
    wk: ParamId,
    bk: ParamId,
    wv: ParamId,
    bv: ParamId,
    wo: ParamId,
    bo: ParamId,
    ln1_g: ParamId,
    ln1_b: ParamId,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
    ln2_g: ParamId,
    ln2_b: ParamId,
}

#[derive(Debug, Clone)]
pub struct MatcherModel {
    pub config: EncoderConfig,
    pub params: ParamStore,
    tok_emb: ParamId,
    pos_emb: ParamId,
    seg_emb: ParamId,
    layers: Vec<LayerParams>,
    pub crm: BinaryHead,
    pub nsp: BinaryHead,
    pub ur: UrHead,
    pub id: IdHead,
    pub cd: BinaryHead,
}

impl MatcherModel {
    pub fn new(config: EncoderConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::with_rng(config, &mut rng)
    }

    pub fn with_rng<R: Rng + ?Sized>(config: EncoderConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let (d, f, v, std) = (config.d_model, config.d_ff, config.vocab_size, config.init_std);
        let mut p = ParamStore::new();
        let tok_emb = p.add_normal("emb.token", &[v, d], std, rng);
        let pos_emb = p.add_normal("emb.position", &[config.max_len, d], std, rng);
        let seg_emb = p.add_normal("emb.segment", &[2, d], std, rng);
        let layers = (0..config.layers)
            .map(|l| {
                let n = |s: &str| format!("enc.{l}.{s}");
                let mut w = |p: &mut ParamStore, s: &str, r: usize, c: usize| {
                    p.add_normal(n(s), &[r, c], std, rng)
                };
                let wq = w(&mut p, "attn.wq", d, d);
                let wk = w(&mut p, "attn.wk", d, d);
                let wv = w(&mut p, "attn.wv", d, d);
                let wo = w(&mut p, "attn.wo", d, d);
                let w1 = w(&mut p, "ffn.w1", d, f);
                let w2 = w(&mut p, "ffn.w2", f, d);
                LayerParams {
                    wq,
                    bq: p.add(n("attn.bq"), Tensor::zeros(&[1, d])),
                    wk,
                    bk: p.add(n("attn.bk"), Tensor::zeros(&[1, d])),
                    wv,
                    bv: p.add(n("attn.bv"), Tensor::zeros(&[1, d])),
                    wo,
                    bo: p.add(n("attn.bo"), Tensor::zeros(&[1, d])),
                    ln1_g: p.add(n("ln1.gamma"), Tensor::full(&[1, d], 1.0)),
                    ln1_b: p.add(n("ln1.beta"), Tensor::zeros(&[1, d])),
                    w1,
                    b1: p.add(n("ffn.b1"), Tensor::zeros(&[1, f])),
                    w2,
                    b2: p.add(n("ffn.b2"), Tensor::zeros(&[1, d])),
                    ln2_g: p.add(n("ln2.gamma"), Tensor::full(&[1, d], 1.0)),
                    ln2_b: p.add(n("ln2.beta"), Tensor::zeros(&[1, d])),
                }
            })
            .collect();
        let crm = BinaryHead::new(&mut p, "crm", d, std, rng);
        let nsp = BinaryHead::new(&mut p, "nsp", d, std, rng);
        let ur = UrHead::new(&mut p, d, v, std, rng);
        let id = IdHead::new(&mut p, d, std, rng);
        let cd = BinaryHead::new(&mut p, "cd", d, std, rng);
        Ok(MatcherModel {
            config,
            params: p,
            tok_emb,
            pos_emb,
            seg_emb,
            layers,
            crm,
            nsp,
            ur,
            id,
            cd,
        })
    }

    /// Rebuilds the parameter layout from `config` and loads values from a
    /// checkpoint, which must match it name for name.
    pub fn load(config: EncoderConfig, checkpoint: impl AsRef<Path>) -> Result<Self> {
        let mut model = Self::new(config, 0)?;
        let stored = load_checkpoint(checkpoint)?;
        model.params.assign(&stored)?;
        Ok(model)
    }

    pub fn save(&self, checkpoint: impl AsRef<Path>) -> Result<()> {
        save_checkpoint(&self.params, checkpoint)
    }

    /// Contextual embeddings `[L, d_model]` for one packed sequence.
    /// Dropout applies only when `rng` is given.
    pub fn encode(
        &self,
        s: &mut Session,
        packed: &PackedSequence,
        mut rng: Option<&mut StreamRng>,
    ) -> Result<Var> {
        let cfg = &self.config;
        let len = packed.len();
        if len == 0 {
            return Err(Error::Model("empty sequence".into()));
        }
        if len > cfg.max_len {
            return Err(Error::Model(format!("sequence of {len} exceeds max_len {}", cfg.max_len)));
        }
        if let Some(&bad) = packed.token_ids.iter().find(|&&t| t as usize >= cfg.vocab_size) {
            return Err(Error::Model(format!("token id {bad} out of range for vocab of {}", cfg.vocab_size)));
        }
        let ids: Vec<usize> = packed.token_ids.iter().map(|&t| t as usize).collect();
        let segs: Vec<usize> = packed.segment_ids.iter().map(|&t| t as usize).collect();
        let (te, pe, se) = (s.param(self.tok_emb), s.param(self.pos_emb), s.param(self.seg_emb));
        let tok = s.tape.embedding(te, &ids)?;
        let pos = s.tape.embedding(pe, &packed.positions)?;
        let seg = s.tape.embedding(se, &segs)?;
        let x = s.tape.add(tok, pos)?;
        let mut x = s.tape.add(x, seg)?;
        if let Some(r) = rng.as_deref_mut() {
            x = s.tape.dropout(x, cfg.dropout, r)?;
        }
        let mask = if packed.token_ids.contains(&PAD_ID) {
            let bias = packed
                .token_ids
                .iter()
                .map(|&t| if t == PAD_ID { MASK_BIAS } else { 0.0 })
                .collect();
            Some(s.tape.constant(Tensor::row(bias)))
        } else {
            None
        };
        for layer in &self.layers {
            x = self.encoder_layer(s, layer, x, mask, rng.as_deref_mut())?;
        }
        Ok(x)
    }

    fn linear(&self, s: &mut Session, x: Var, w: ParamId, b: ParamId) -> Result<Var> {
        let (w, b) = (s.param(w), s.param(b));
        let y = s.tape.matmul(x, w)?;
        s.tape.add(y, b)
    }

    fn encoder_layer(
        &self,
        s: &mut Session,
        p: &LayerParams,
        x: Var,
        mask: Option<Var>,
        mut rng: Option<&mut StreamRng>,
    ) -> Result<Var> {
        let d = self.config.d_model;
        let dh = d / self.config.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let q = self.linear(s, x, p.wq, p.bq)?;
        let k = self.linear(s, x, p.wk, p.bk)?;
        let v = self.linear(s, x, p.wv, p.bv)?;
        let mut heads = Vec::with_capacity(self.config.heads);
        for h in 0..self.config.heads {
            let (a, b) = (h * dh, (h + 1) * dh);
            let qh = s.tape.slice_cols(q, a, b)?;
            let kh = s.tape.slice_cols(k, a, b)?;
            let vh = s.tape.slice_cols(v, a, b)?;
            let kt = s.tape.transpose(kh)?;
            let scores = s.tape.matmul(qh, kt)?;
            let mut scores = s.tape.scale(scores, scale)?;
            if let Some(m) = mask {
                scores = s.tape.add(scores, m)?;
            }
            let attn = s.tape.softmax(scores)?;
            heads.push(s.tape.matmul(attn, vh)?);
        }
        let ctx = if heads.len() == 1 { heads[0] } else { s.tape.concat(&heads, 1)? };
        let mut attn_out = self.linear(s, ctx, p.wo, p.bo)?;
        if let Some(r) = rng.as_deref_mut() {
            attn_out = s.tape.dropout(attn_out, self.config.dropout, r)?;
        }
        let res = s.tape.add(x, attn_out)?;
        let (g1, b1) = (s.param(p.ln1_g), s.param(p.ln1_b));
        let x = s.tape.layer_norm(res, g1, b1)?;
        let hidden = self.linear(s, x, p.w1, p.b1)?;
        let hidden = s.tape.gelu(hidden)?;
        let mut ff = self.linear(s, hidden, p.w2, p.b2)?;
        if let Some(r) = rng {
            ff = s.tape.dropout(ff, self.config.dropout, r)?;
        }
        let res = s.tape.add(x, ff)?;
        let (g2, b2) = (s.param(p.ln2_g), s.param(p.ln2_b));
        s.tape.layer_norm(res, g2, b2)
    }

    /// Matching score for each packed context-response sequence, in order.
    pub fn score_sequences(&self, packed: &[PackedSequence]) -> Result<Vec<f64>> {
        packed
            .iter()
            .map(|p| {
                let mut s = Session::inference(&self.params);
                let h = self.encode(&mut s, p, None)?;
                let g = self.crm_score(&mut s, h)?;
                Ok(s.tape.value(g).item())
            })
            .collect()
    }

    pub fn crm_score(&self, s: &mut Session, h: Var) -> Result<Var> {
        self.crm.score(s, h)
    }

    pub fn nsp_score(&self, s: &mut Session, h: Var) -> Result<Var> {
        self.nsp.score(s, h)
    }

    pub fn cd_score(&self, s: &mut Session, h: Var) -> Result<Var> {
        self.cd.score(s, h)
    }

    pub fn ur_token_logits(&self, s: &mut Session, h: Var, mask_span: (usize, usize)) -> Result<Var> {
        self.ur.probs(s, h, mask_span)
    }

    pub fn id_utterance_probs(
        &self,
        s: &mut Session,
        h: Var,
        spans: &[crate::tokenizer::Span],
    ) -> Result<Var> {
        self.id.probs(s, h, spans)
    }
}
