//! Training-instance generators for the matching task and the four
//! self-supervised dialogue tasks.
//!
//! All randomness comes from the caller's RNG, so an instance is a pure
//! function of its inputs and the RNG state.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::corpus::{Corpus, Dialogue, LabeledPair, Utterance};
use crate::error::{Error, Result};
use crate::seeding::{stream, StreamRng};
use crate::tokenizer::{
    pack_context, pack_context_response, pack_masked_context, pack_session_pair,
    pack_utterance_pair, PackedSequence, Vocab, DEFAULT_MAX_CTX, DEFAULT_MAX_RESP,
    MAX_SEQUENCE_LEN,
};

/// Replacement sampling attempts before ID generation gives up.
pub const ID_MAX_RESAMPLES: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Crm,
    Nsp,
    Ur,
    Id,
    Cd,
}

impl Task {
    pub const AUXILIARY: [Task; 4] = [Task::Nsp, Task::Ur, Task::Id, Task::Cd];

    pub fn name(self) -> &'static str {
        match self {
            Task::Crm => "crm",
            Task::Nsp => "nsp",
            Task::Ur => "ur",
            Task::Id => "id",
            Task::Cd => "cd",
        }
    }

    /// Smallest context length the generator accepts.
    pub fn min_turns(self) -> usize {
        match self {
            Task::Crm => 1,
            Task::Nsp | Task::Ur | Task::Id => 2,
            Task::Cd => 3,
        }
    }

    fn stream_label(self) -> u64 {
        self as u64 + 1
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "crm" => Ok(Task::Crm),
            "nsp" => Ok(Task::Nsp),
            "ur" => Ok(Task::Ur),
            "id" => Ok(Task::Id),
            "cd" => Ok(Task::Cd),
            other => Err(Error::Config(format!("unknown task {other:?}"))),
        }
    }
}

/// Enabled auxiliary tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSet {
    pub nsp: bool,
    pub ur: bool,
    pub id: bool,
    pub cd: bool,
}

impl TaskSet {
    pub fn all() -> Self {
        TaskSet {
            nsp: true,
            ur: true,
            id: true,
            cd: true,
        }
    }

    pub fn none() -> Self {
        TaskSet {
            nsp: false,
            ur: false,
            id: false,
            cd: false,
        }
    }

    pub fn contains(&self, task: Task) -> bool {
        match task {
            Task::Crm => true,
            Task::Nsp => self.nsp,
            Task::Ur => self.ur,
            Task::Id => self.id,
            Task::Cd => self.cd,
        }
    }

    pub fn without(mut self, task: Task) -> Self {
        match task {
            Task::Nsp => self.nsp = false,
            Task::Ur => self.ur = false,
            Task::Id => self.id = false,
            Task::Cd => self.cd = false,
            Task::Crm => {}
        }
        self
    }

    pub fn enabled(&self) -> impl Iterator<Item = Task> + '_ {
        Task::AUXILIARY.into_iter().filter(|t| self.contains(*t))
    }

    pub fn is_empty(&self) -> bool {
        self.enabled().next().is_none()
    }

    /// Parses `nsp,ur,id,cd`. An empty string yields an empty set.
    pub fn parse(s: &str) -> Result<Self> {
        let mut set = TaskSet::none();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            match part.parse::<Task>()? {
                Task::Nsp => set.nsp = true,
                Task::Ur => set.ur = true,
                Task::Id => set.id = true,
                Task::Cd => set.cd = true,
                Task::Crm => {}
            }
        }
        Ok(set)
    }
}

impl Default for TaskSet {
    fn default() -> Self {
        TaskSet::all()
    }
}

/// Sequence budgets for every packer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PackConfig {
    pub max_ctx: usize,
    pub max_resp: usize,
    /// Cap for the auxiliary-task packings.
    pub max_len: usize,
}

impl Default for PackConfig {
    fn default() -> Self {
        PackConfig {
            max_ctx: DEFAULT_MAX_CTX,
            max_resp: DEFAULT_MAX_RESP,
            max_len: MAX_SEQUENCE_LEN,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrmInstance {
    pub packed: PackedSequence,
    pub label: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReplacedSide {
    None,
    Left,
    Right,
}

/// Contiguous 1-based turn range `[start, end]` of a source dialogue.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PieceSource {
    pub dialogue_id: String,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NspInstance {
    pub packed: PackedSequence,
    pub label: u8,
    pub split_point: usize,
    pub replaced_side: ReplacedSide,
    pub left: PieceSource,
    pub right: PieceSource,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UrInstance {
    pub packed: PackedSequence,
    pub masked_turn: usize,
    pub target_ids: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IdInstance {
    pub packed: PackedSequence,
    /// One-hot over the packed utterance spans.
    pub label: Vec<u8>,
    pub replaced_turn: usize,
    pub replacement: String,
    pub donor_id: String,
}

impl IdInstance {
    pub fn label_index(&self) -> usize {
        self.label.iter().position(|&z| z == 1).expect("one-hot label")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CdInstance {
    pub packed_pos: PackedSequence,
    pub packed_neg: PackedSequence,
    pub turns: (usize, usize),
    pub donor_id: String,
    pub donor_turn: usize,
}

pub fn gen_crm(pair: &LabeledPair, vocab: &Vocab, pack: &PackConfig) -> Result<CrmInstance> {
    let packed = pack_context_response(&pair.context, &pair.response, vocab, pack.max_ctx, pack.max_resp)?;
    Ok(CrmInstance {
        packed,
        label: pair.label,
    })
}

/// Renumbers utterances so that the piece reads as turns `1..`.
fn renumber(utts: &[Utterance], first_turn: usize) -> Vec<Utterance> {
    utts.iter()
        .enumerate()
        .map(|(i, u)| Utterance {
            turn_index: first_turn + i,
            ..u.clone()
        })
        .collect()
}

pub fn gen_nsp<R: Rng + ?Sized>(
    dialogue: &Dialogue,
    corpus: &Corpus,
    rng: &mut R,
    vocab: &Vocab,
    max_len: usize,
) -> Result<NspInstance> {
    let m = dialogue.len();
    if m < 2 {
        return Err(Error::Generation("too short for NSP".into()));
    }
    if corpus.len() < 2 {
        return Err(Error::Corpus("no replacement source".into()));
    }
    let t = rng.gen_range(1..m);
    let piece = |d: &Dialogue, start: usize, end: usize| PieceSource {
        dialogue_id: d.id.clone(),
        start,
        end,
    };
    let mut left_src = piece(dialogue, 1, t);
    let mut right_src = piece(dialogue, t + 1, m);
    let mut left = dialogue.utterances[..t].to_vec();
    let mut right = dialogue.utterances[t..].to_vec();
    let side = if rng.gen_bool(0.5) {
        ReplacedSide::None
    } else if rng.gen_bool(0.5) {
        ReplacedSide::Left
    } else {
        ReplacedSide::Right
    };
    match side {
        ReplacedSide::None => {}
        ReplacedSide::Left => {
            let donor = corpus.sample_other(&dialogue.id, rng)?;
            let len = rng.gen_range(1..=donor.len());
            left = donor.utterances[..len].to_vec();
            left_src = piece(donor, 1, len);
        }
        ReplacedSide::Right => {
            let donor = corpus.sample_other(&dialogue.id, rng)?;
            let start = rng.gen_range(0..donor.len());
            right = donor.utterances[start..].to_vec();
            right_src = piece(donor, start + 1, donor.len());
        }
    }
    let left = renumber(&left, 1);
    let right = renumber(&right, left.len() + 1);
    let packed = pack_session_pair(&left, &right, vocab, max_len)?;
    Ok(NspInstance {
        packed,
        label: u8::from(side == ReplacedSide::None),
        split_point: t,
        replaced_side: side,
        left: left_src,
        right: right_src,
    })
}

/// Turns that keep at least one token in the plain context packing.
fn retained_turns(dialogue: &Dialogue, vocab: &Vocab, max_len: usize) -> Result<Vec<usize>> {
    Ok(pack_context(dialogue, vocab, max_len)?
        .utterance_spans
        .iter()
        .map(|s| s.turn)
        .collect())
}

fn uniform_turn<R: Rng + ?Sized>(
    dialogue: &Dialogue,
    vocab: &Vocab,
    max_len: usize,
    rng: &mut R,
) -> Result<usize> {
    let retained = retained_turns(dialogue, vocab, max_len)?;
    if retained.len() == dialogue.len() {
        Ok(rng.gen_range(1..=dialogue.len()))
    } else {
        Ok(retained[rng.gen_range(0..retained.len())])
    }
}

pub fn gen_ur<R: Rng + ?Sized>(
    dialogue: &Dialogue,
    rng: &mut R,
    vocab: &Vocab,
    max_len: usize,
) -> Result<UrInstance> {
    if dialogue.len() < 2 {
        return Err(Error::Generation("too short for utterance restoration".into()));
    }
    let t = uniform_turn(dialogue, vocab, max_len, rng)?;
    let packed = pack_masked_context(dialogue, t, vocab, max_len)?;
    let (start, end) = packed.mask_span.expect("masked packing has a span");
    let ids = vocab.encode(&dialogue.utterances[t - 1].tokens);
    let target_ids = ids[ids.len() - (end - start)..].to_vec();
    Ok(UrInstance {
        packed,
        masked_turn: t,
        target_ids,
    })
}

pub fn gen_id<R: Rng + ?Sized>(
    dialogue: &Dialogue,
    corpus: &Corpus,
    rng: &mut R,
    vocab: &Vocab,
    max_len: usize,
) -> Result<IdInstance> {
    if dialogue.len() < 2 {
        return Err(Error::Generation("too short for incoherence detection".into()));
    }
    if corpus.len() < 2 {
        return Err(Error::Corpus("no replacement source".into()));
    }
    let k = uniform_turn(dialogue, vocab, max_len, rng)?;
    let original = &dialogue.utterances[k - 1];
    for _ in 0..ID_MAX_RESAMPLES {
        let donor = corpus.sample_other(&dialogue.id, rng)?;
        let candidate = &donor.utterances[rng.gen_range(0..donor.len())];
        if candidate.text == original.text {
            continue;
        }
        let mut edited = dialogue.clone();
        edited.utterances[k - 1] = Utterance {
            turn_index: k,
            speaker: original.speaker,
            ..candidate.clone()
        };
        let packed = pack_context(&edited, vocab, max_len)?;
        let Some(pos) = packed.utterance_spans.iter().position(|s| s.turn == k) else {
            continue;
        };
        let mut label = vec![0u8; packed.utterance_spans.len()];
        label[pos] = 1;
        return Ok(IdInstance {
            packed,
            label,
            replaced_turn: k,
            replacement: candidate.text.clone(),
            donor_id: donor.id.clone(),
        });
    }
    Err(Error::Generation("degenerate corpus".into()))
}

pub fn gen_cd<R: Rng + ?Sized>(
    dialogue: &Dialogue,
    corpus: &Corpus,
    rng: &mut R,
    vocab: &Vocab,
    max_len: usize,
) -> Result<CdInstance> {
    let m = dialogue.len();
    let odd: Vec<usize> = (1..=m).step_by(2).collect();
    let even: Vec<usize> = (2..=m).step_by(2).collect();
    let classes: Vec<&Vec<usize>> = [&odd, &even].into_iter().filter(|c| c.len() >= 2).collect();
    if classes.is_empty() {
        return Err(Error::Generation("no same-speaker pair".into()));
    }
    if corpus.len() < 2 {
        return Err(Error::Corpus("no replacement source".into()));
    }
    let class = classes[rng.gen_range(0..classes.len())];
    let a = rng.gen_range(0..class.len());
    let mut b = rng.gen_range(0..class.len() - 1);
    if b >= a {
        b += 1;
    }
    let (i, j) = (class[a], class[b]);
    let donor = corpus.sample_other(&dialogue.id, rng)?;
    let dt = rng.gen_range(0..donor.len());
    let u = &dialogue.utterances[i - 1];
    let v = &dialogue.utterances[j - 1];
    let v_neg = &donor.utterances[dt];
    Ok(CdInstance {
        packed_pos: pack_utterance_pair(u, v, vocab, max_len)?,
        packed_neg: pack_utterance_pair(u, v_neg, vocab, max_len)?,
        turns: (i, j),
        donor_id: donor.id.clone(),
        donor_turn: dt + 1,
    })
}

/// Independent per-task RNG streams, so that enabling or disabling one task
/// does not perturb the randomness seen by another.
#[derive(Debug, Clone)]
pub struct TaskRngs {
    pub nsp: StreamRng,
    pub ur: StreamRng,
    pub id: StreamRng,
    pub cd: StreamRng,
}

impl TaskRngs {
    pub fn new(seed: u64, step: u64) -> Self {
        let s = |t: Task| stream(seed, &[0x7a5c, step, t.stream_label()]);
        TaskRngs {
            nsp: s(Task::Nsp),
            ur: s(Task::Ur),
            id: s(Task::Id),
            cd: s(Task::Cd),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Skip {
    pub pair_index: usize,
    pub task: Task,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Batch {
    pub crm: Vec<CrmInstance>,
    pub nsp: Vec<NspInstance>,
    pub ur: Vec<UrInstance>,
    pub id: Vec<IdInstance>,
    pub cd: Vec<CdInstance>,
    pub skipped: Vec<Skip>,
}

impl Batch {
    pub fn aux_len(&self) -> usize {
        self.nsp.len() + self.ur.len() + self.id.len() + self.cd.len()
    }

    pub fn count(&self, task: Task) -> usize {
        match task {
            Task::Crm => self.crm.len(),
            Task::Nsp => self.nsp.len(),
            Task::Ur => self.ur.len(),
            Task::Id => self.id.len(),
            Task::Cd => self.cd.len(),
        }
    }
}

/// One matching instance per pair plus, for each positive pair's context,
/// one instance per enabled auxiliary task whose preconditions hold.
pub fn make_training_batch(
    pairs: &[LabeledPair],
    corpus: &Corpus,
    rngs: &mut TaskRngs,
    vocab: &Vocab,
    tasks: TaskSet,
    pack: &PackConfig,
) -> Result<Batch> {
    let mut batch = Batch::default();
    for (pi, pair) in pairs.iter().enumerate() {
        batch.crm.push(gen_crm(pair, vocab, pack)?);
        if !pair.is_positive() {
            continue;
        }
        let ctx = &pair.context;
        for task in tasks.enabled() {
            let reason = if ctx.len() < task.min_turns() {
                Some(format!("context has {} turns, {task} needs {}", ctx.len(), task.min_turns()))
            } else if task != Task::Ur && corpus.len() < 2 {
                Some("no replacement source".to_string())
            } else {
                None
            };
            if let Some(reason) = reason {
                batch.skipped.push(Skip {
                    pair_index: pi,
                    task,
                    reason,
                });
                continue;
            }
            match task {
                Task::Nsp => batch.nsp.push(gen_nsp(ctx, corpus, &mut rngs.nsp, vocab, pack.max_len)?),
                Task::Ur => batch.ur.push(gen_ur(ctx, &mut rngs.ur, vocab, pack.max_len)?),
                Task::Id => batch.id.push(gen_id(ctx, corpus, &mut rngs.id, vocab, pack.max_len)?),
                Task::Cd => batch.cd.push(gen_cd(ctx, corpus, &mut rngs.cd, vocab, pack.max_len)?),
                Task::Crm => unreachable!("not auxiliary"),
            }
        }
    }
    Ok(batch)
}

/// One line of the `gen` JSONL dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub task: Task,
    pub ids: Vec<u32>,
    pub segments: Vec<u8>,
    pub label: serde_json::Value,
    pub meta: serde_json::Value,
}

impl From<&CrmInstance> for InstanceRecord {
    fn from(x: &CrmInstance) -> Self {
        InstanceRecord {
            task: Task::Crm,
            ids: x.packed.token_ids.clone(),
            segments: x.packed.segment_ids.clone(),
            label: json!(x.label),
            meta: json!({}),
        }
    }
}

impl From<&NspInstance> for InstanceRecord {
    fn from(x: &NspInstance) -> Self {
        InstanceRecord {
            task: Task::Nsp,
            ids: x.packed.token_ids.clone(),
            segments: x.packed.segment_ids.clone(),
            label: json!(x.label),
            meta: json!({
                "split_point": x.split_point,
                "replaced_side": x.replaced_side,
                "left": x.left,
                "right": x.right,
            }),
        }
    }
}

impl From<&UrInstance> for InstanceRecord {
    fn from(x: &UrInstance) -> Self {
        InstanceRecord {
            task: Task::Ur,
            ids: x.packed.token_ids.clone(),
            segments: x.packed.segment_ids.clone(),
            label: json!(x.target_ids),
            meta: json!({
                "masked_turn": x.masked_turn,
                "mask_span": x.packed.mask_span,
            }),
        }
    }
}

impl From<&IdInstance> for InstanceRecord {
    fn from(x: &IdInstance) -> Self {
        InstanceRecord {
            task: Task::Id,
            ids: x.packed.token_ids.clone(),
            segments: x.packed.segment_ids.clone(),
            label: json!(x.label),
            meta: json!({
                "replaced_turn": x.replaced_turn,
                "donor": x.donor_id,
                "spans": x.packed.utterance_spans,
            }),
        }
    }
}

impl From<&CdInstance> for InstanceRecord {
    fn from(x: &CdInstance) -> Self {
        InstanceRecord {
            task: Task::Cd,
            ids: x.packed_pos.token_ids.clone(),
            segments: x.packed_pos.segment_ids.clone(),
            label: json!(1),
            meta: json!({
                "turns": [x.turns.0, x.turns.1],
                "neg_ids": x.packed_neg.token_ids,
                "neg_segments": x.packed_neg.segment_ids,
                "donor": x.donor_id,
                "donor_turn": x.donor_turn,
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::{build_vocab, MASK_ID};
    use rand::rngs::mock::StepRng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn corpus() -> Corpus {
        Corpus::new(vec![
            Dialogue::new("d1", &["a b", "c", "d e f"]).unwrap(),
            Dialogue::new("d2", &["g", "h i", "j", "k"]).unwrap(),
            Dialogue::new("d3", &["l m", "n"]).unwrap(),
        ])
        .unwrap()
    }

    fn vocab(c: &Corpus) -> Vocab {
        build_vocab(c.dialogues().iter().flat_map(|d| &d.utterances), 1, 100).unwrap()
    }

    #[test]
    fn crm_copies_label() {
        let c = corpus();
        let v = vocab(&c);
        let ctx = c.get("d1").unwrap().clone();
        for label in [0, 1] {
            let pair = LabeledPair::new(ctx.clone(), "x", label).unwrap();
            assert_eq!(gen_crm(&pair, &v, &PackConfig::default()).unwrap().label, label);
        }
        let mut bad = LabeledPair::new(ctx, "x", 1).unwrap();
        bad.response.tokens.clear();
        assert!(gen_crm(&bad, &v, &PackConfig::default()).is_err());
    }

    #[test]
    fn nsp_without_replacement_splits_source() {
        let c = corpus();
        let v = vocab(&c);
        let d = c.get("d3").unwrap();
        // StepRng(0, 0) makes every draw 0: t=1 and gen_bool(0.5) is true
        let mut rng = StepRng::new(0, 0);
        let x = gen_nsp(d, &c, &mut rng, &v, 512).unwrap();
        assert_eq!((x.split_point, x.label, x.replaced_side), (1, 1, ReplacedSide::None));
        assert_eq!((x.left.start, x.left.end, x.right.start, x.right.end), (1, 1, 2, 2));
    }

    #[test]
    fn nsp_errors() {
        let c = corpus();
        let v = vocab(&c);
        let short = Dialogue::new("s", &["a"]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let err = gen_nsp(&short, &c, &mut rng, &v, 512).unwrap_err().to_string();
        assert!(err.contains("too short for NSP"));
        let lone = Corpus::new(vec![c.get("d1").unwrap().clone()]).unwrap();
        assert!(gen_nsp(c.get("d1").unwrap(), &lone, &mut rng, &v, 512).is_err());
    }

    #[test]
    fn nsp_replacement_comes_from_another_dialogue() {
        let c = corpus();
        let v = vocab(&c);
        let d = c.get("d2").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut seen_right = false;
        for _ in 0..200 {
            let x = gen_nsp(d, &c, &mut rng, &v, 512).unwrap();
            match x.replaced_side {
                ReplacedSide::Right => {
                    seen_right = true;
                    assert_ne!(x.right.dialogue_id, "d2");
                    assert_eq!(x.label, 0);
                }
                ReplacedSide::Left => assert_ne!(x.left.dialogue_id, "d2"),
                ReplacedSide::None => assert_eq!(x.label, 1),
            }
        }
        assert!(seen_right);
    }

    #[test]
    fn ur_masks_chosen_turn() {
        let c = corpus();
        let v = vocab(&c);
        let d = c.get("d1").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let x = gen_ur(d, &mut rng, &v, 512).unwrap();
            let (s, e) = x.packed.mask_span.unwrap();
            assert_eq!(e - s, x.target_ids.len());
            assert!(x.packed.token_ids[s..e].iter().all(|&t| t == MASK_ID));
            assert_eq!(x.target_ids, v.encode(&d.utterances[x.masked_turn - 1].tokens));
        }
        let d3 = Dialogue::new("x", &["a b c"]).unwrap();
        assert!(gen_ur(&d3, &mut rng, &v, 512).is_err());
    }

    #[test]
    fn id_label_marks_replaced_turn() {
        let c = corpus();
        let v = vocab(&c);
        let d = c.get("d3").unwrap();
        let mut rng = StepRng::new(0, 0);
        let x = gen_id(d, &c, &mut rng, &v, 512).unwrap();
        assert_eq!(x.label, vec![1, 0]);
        assert_eq!(x.replaced_turn, 1);
    }

    #[test]
    fn id_degenerate_corpus() {
        let same = Corpus::new(vec![
            Dialogue::new("a", &["x", "x"]).unwrap(),
            Dialogue::new("b", &["x"]).unwrap(),
        ])
        .unwrap();
        let v = vocab(&same);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let err = gen_id(same.get("a").unwrap(), &same, &mut rng, &v, 512).unwrap_err();
        assert!(err.to_string().contains("degenerate corpus"));
    }

    #[test]
    fn cd_three_turns_uses_odd_class() {
        let c = corpus();
        let v = vocab(&c);
        let d = c.get("d1").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let x = gen_cd(d, &c, &mut rng, &v, 512).unwrap();
            let mut t = [x.turns.0, x.turns.1];
            t.sort();
            assert_eq!(t, [1, 3]);
            assert_ne!(x.donor_id, "d1");
        }
        let err = gen_cd(c.get("d3").unwrap(), &c, &mut rng, &v, 512).unwrap_err();
        assert!(err.to_string().contains("no same-speaker pair"));
    }

    #[test]
    fn batch_counts_and_skips() {
        let c = corpus();
        let v = vocab(&c);
        let pairs: Vec<LabeledPair> = c
            .dialogues()
            .iter()
            .map(|d| LabeledPair::new(d.clone(), "z", 1).unwrap())
            .collect();
        let mut rngs = TaskRngs::new(1, 0);
        let b = make_training_batch(&pairs, &c, &mut rngs, &v, TaskSet::all(), &PackConfig::default()).unwrap();
        assert_eq!(b.crm.len(), 3);
        // d3 has 2 turns, so CD is skipped for it
        assert_eq!(b.aux_len(), 11);
        assert_eq!(b.skipped.len(), 1);
        assert_eq!(b.skipped[0].task, Task::Cd);

        let short: Vec<LabeledPair> = (0..3)
            .map(|i| LabeledPair::new(Dialogue::new(format!("s{i}"), &["q"]).unwrap(), "z", 1).unwrap())
            .collect();
        let b = make_training_batch(&short, &c, &mut rngs, &v, TaskSet::all(), &PackConfig::default()).unwrap();
        assert_eq!(b.aux_len(), 0);
        assert_eq!(b.skipped.len(), 12);
    }

    #[test]
    fn task_set_parsing() {
        assert_eq!(TaskSet::parse("nsp,ur,id,cd").unwrap(), TaskSet::all());
        assert!(TaskSet::parse("").unwrap().is_empty());
        assert!(TaskSet::parse("nsp,bogus").is_err());
        let only_id = TaskSet::parse("id").unwrap();
        assert_eq!(only_id.enabled().collect::<Vec<_>>(), vec![Task::Id]);
    }
}
