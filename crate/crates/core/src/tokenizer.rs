//! Word-level tokenizer, vocabulary, and input packing.
//!
//! Every packed sequence starts with `[CLS]`, separates its two segments
//! with `[SEP]`, and appends `[EOT]` after each dialogue utterance. Special
//! tokens count against the budget of the block they belong to, so a
//! sequence never exceeds its configured maximum.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{Dialogue, Utterance};
use crate::error::{Error, Result};

pub const PAD: &str = "[PAD]";
pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";
pub const EOT: &str = "[EOT]";
pub const MASK: &str = "[MASK]";
pub const UNK: &str = "[UNK]";

pub const PAD_ID: u32 = 0;
pub const CLS_ID: u32 = 1;
pub const SEP_ID: u32 = 2;
pub const EOT_ID: u32 = 3;
pub const MASK_ID: u32 = 4;
pub const UNK_ID: u32 = 5;

pub const RESERVED: [&str; 6] = [PAD, CLS, SEP, EOT, MASK, UNK];

/// Hard cap on any packed input.
pub const MAX_SEQUENCE_LEN: usize = 512;
pub const DEFAULT_MAX_CTX: usize = 448;
pub const DEFAULT_MAX_RESP: usize = 64;

/// Lowercases, splits on whitespace, and detaches every non-alphanumeric
/// character as its own token.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut word = String::new();
    for ch in text.chars() {
        if ch.is_whitespace() {
            if !word.is_empty() {
                out.push(std::mem::take(&mut word));
            }
        } else if ch.is_alphanumeric() || ch == '_' {
            word.extend(ch.to_lowercase());
        } else {
            if !word.is_empty() {
                out.push(std::mem::take(&mut word));
            }
            out.push(ch.to_lowercase().collect());
        }
    }
    if !word.is_empty() {
        out.push(word);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    ids: HashMap<String, u32>,
}

impl Vocab {
    fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        for (i, r) in RESERVED.iter().enumerate() {
            if tokens.get(i).map(String::as_str) != Some(*r) {
                return Err(Error::Config(format!("vocab id {i} must be {r}")));
            }
        }
        let mut ids = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if ids.insert(t.clone(), i as u32).is_some() {
                return Err(Error::Config(format!("duplicate vocab token {t:?}")));
            }
        }
        Ok(Vocab { tokens, ids })
    }

    /// Reserved tokens only.
    pub fn reserved() -> Self {
        Self::from_tokens(RESERVED.iter().map(|s| s.to_string()).collect()).expect("reserved vocab")
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> u32 {
        self.ids.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.ids.contains_key(token)
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<u32> {
        tokens.iter().map(|t| self.id(t)).collect()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write(&mut f).map_err(|e| Error::io(path, e))
    }

    pub fn write(&self, mut out: impl Write) -> std::io::Result<()> {
        for t in &self.tokens {
            writeln!(out, "{t}")?;
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_tokens(text.lines().map(String::from).collect())
    }
}

/// Keeps tokens seen at least `min_freq` times, ordered by descending
/// frequency then lexicographically, after the six reserved ids.
pub fn build_vocab<'a, I>(utterances: I, min_freq: usize, max_size: usize) -> Result<Vocab>
where
    I: IntoIterator<Item = &'a Utterance>,
{
    if min_freq == 0 {
        return Err(Error::Config("min_freq must be at least 1".into()));
    }
    if max_size < RESERVED.len() {
        return Err(Error::Config(format!(
            "max vocab size {max_size} cannot hold the {} reserved tokens",
            RESERVED.len()
        )));
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    let mut seen_any = false;
    for u in utterances {
        seen_any = true;
        for t in &u.tokens {
            *counts.entry(t.as_str()).or_default() += 1;
        }
    }
    if !seen_any {
        return Err(Error::Corpus("empty corpus".into()));
    }
    let mut ranked: Vec<(&str, usize)> = counts
        .into_iter()
        .filter(|&(t, c)| c >= min_freq && !RESERVED.contains(&t))
        .collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    ranked.truncate(max_size - RESERVED.len());
    let tokens = RESERVED
        .iter()
        .map(|s| s.to_string())
        .chain(ranked.into_iter().map(|(t, _)| t.to_string()))
        .collect();
    Vocab::from_tokens(tokens)
}

/// Token range `[start, end)` covered by one source utterance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
    /// 1-based index of the source utterance within the packed pieces.
    pub turn: usize,
}

impl Span {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PackedSequence {
    pub token_ids: Vec<u32>,
    pub segment_ids: Vec<u8>,
    pub positions: Vec<usize>,
    pub utterance_spans: Vec<Span>,
    pub mask_span: Option<(usize, usize)>,
}

impl PackedSequence {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    /// Number of leading non-pad tokens.
    pub fn content_len(&self) -> usize {
        self.token_ids.iter().rposition(|&t| t != PAD_ID).map_or(0, |i| i + 1)
    }

    /// Right-pads with `[PAD]` up to `len`. Pads take segment 1 and
    /// continue the position counter.
    pub fn padded(&self, len: usize) -> PackedSequence {
        let mut out = self.clone();
        while out.token_ids.len() < len {
            out.positions.push(out.token_ids.len());
            out.token_ids.push(PAD_ID);
            out.segment_ids.push(1);
        }
        out
    }

    pub fn span_for_turn(&self, turn: usize) -> Option<Span> {
        self.utterance_spans.iter().copied().find(|s| s.turn == turn)
    }
}

#[derive(Debug, Clone, Copy)]
struct Item {
    id: u32,
    turn: Option<usize>,
}

fn utterance_items(vocab: &Vocab, tokens: &[String], turn: usize, eot: bool) -> Vec<Item> {
    let mut items: Vec<Item> = tokens
        .iter()
        .map(|t| Item {
            id: vocab.id(t),
            turn: Some(turn),
        })
        .collect();
    if eot {
        items.push(Item { id: EOT_ID, turn: None });
    }
    items
}

/// Drops leading items until at most `budget` remain. An `[EOT]` left at the
/// front has lost its whole utterance and is dropped too.
fn keep_tail(mut body: Vec<Item>, budget: usize) -> Vec<Item> {
    if body.len() > budget {
        body.drain(..body.len() - budget);
        while body.first().is_some_and(|it| it.turn.is_none()) {
            body.remove(0);
        }
    }
    body
}

fn keep_head(mut body: Vec<Item>, budget: usize) -> Vec<Item> {
    body.truncate(budget);
    body
}

/// Budgets for a two-block sequence of at most `max_len` ids. Block lengths
/// include their special tokens. A block that fits within half keeps all of
/// it and the other block takes the remainder.
fn split_budget(left: usize, right: usize, max_len: usize) -> (usize, usize) {
    if left + right <= max_len {
        return (left, right);
    }
    let half = max_len / 2;
    if left <= half {
        (left, max_len - left)
    } else if right <= max_len - half {
        (max_len - right, right)
    } else {
        (half, max_len - half)
    }
}

fn assemble(left: Vec<Item>, right: Option<Vec<Item>>) -> PackedSequence {
    let mut items = Vec::with_capacity(left.len() + 4);
    items.push(Item { id: CLS_ID, turn: None });
    items.extend(left);
    items.push(Item { id: SEP_ID, turn: None });
    let seg_break = items.len();
    if let Some(right) = right {
        items.extend(right);
        items.push(Item { id: SEP_ID, turn: None });
    }
    let mut spans: Vec<Span> = Vec::new();
    for (i, it) in items.iter().enumerate() {
        if let Some(turn) = it.turn {
            match spans.last_mut() {
                Some(s) if s.turn == turn && s.end == i => s.end = i + 1,
                _ => spans.push(Span {
                    start: i,
                    end: i + 1,
                    turn,
                }),
            }
        }
    }
    let n = items.len();
    PackedSequence {
        token_ids: items.iter().map(|it| it.id).collect(),
        segment_ids: (0..n).map(|i| u8::from(i >= seg_break)).collect(),
        positions: (0..n).collect(),
        utterance_spans: spans,
        mask_span: None,
    }
}

fn check_cap(max_len: usize, min: usize) -> Result<()> {
    if max_len > MAX_SEQUENCE_LEN {
        return Err(Error::Packing(format!(
            "max_len {max_len} exceeds the {MAX_SEQUENCE_LEN}-token cap"
        )));
    }
    if max_len < min {
        return Err(Error::Packing(format!("max_len {max_len} too small (need {min})")));
    }
    Ok(())
}

fn context_body(vocab: &Vocab, utts: &[Utterance], first_turn: usize) -> Vec<Item> {
    utts.iter()
        .enumerate()
        .flat_map(|(i, u)| utterance_items(vocab, &u.tokens, first_turn + i, true))
        .collect()
}

/// `[CLS] u_1 [EOT] ... u_m [EOT] [SEP] r [SEP]`
pub fn pack_context_response(
    context: &Dialogue,
    response: &Utterance,
    vocab: &Vocab,
    max_ctx: usize,
    max_resp: usize,
) -> Result<PackedSequence> {
    if context.is_empty() {
        return Err(Error::Packing("empty context".into()));
    }
    if response.is_empty() {
        return Err(Error::Packing("empty response".into()));
    }
    if max_ctx < 3 || max_resp < 2 {
        return Err(Error::Packing(format!(
            "budgets too small: max_ctx={max_ctx} max_resp={max_resp}"
        )));
    }
    check_cap(max_ctx + max_resp, 5)?;
    let ctx = keep_tail(context_body(vocab, &context.utterances, 1), max_ctx - 2);
    let resp = keep_head(
        utterance_items(vocab, &response.tokens, context.len() + 1, false),
        max_resp - 1,
    );
    Ok(assemble(ctx, Some(resp)))
}

/// `[CLS] u_1 [EOT] ... u_m [EOT] [SEP]`
pub fn pack_context(context: &Dialogue, vocab: &Vocab, max_len: usize) -> Result<PackedSequence> {
    if context.is_empty() {
        return Err(Error::Packing("empty context".into()));
    }
    check_cap(max_len, 3)?;
    let body = keep_tail(context_body(vocab, &context.utterances, 1), max_len - 2);
    Ok(assemble(body, None))
}

/// Context packing with every token of turn `masked_turn` (1-based)
/// replaced by `[MASK]`.
pub fn pack_masked_context(
    context: &Dialogue,
    masked_turn: usize,
    vocab: &Vocab,
    max_len: usize,
) -> Result<PackedSequence> {
    if context.len() < 2 {
        return Err(Error::Packing("masking needs at least 2 utterances".into()));
    }
    if masked_turn == 0 || masked_turn > context.len() {
        return Err(Error::Packing(format!(
            "masked turn {masked_turn} outside 1..={}",
            context.len()
        )));
    }
    check_cap(max_len, 3)?;
    let mut body = context_body(vocab, &context.utterances, 1);
    for it in body.iter_mut() {
        if it.turn == Some(masked_turn) {
            it.id = MASK_ID;
        }
    }
    let mut packed = assemble(keep_tail(body, max_len - 2), None);
    packed.mask_span = packed.span_for_turn(masked_turn).map(|s| (s.start, s.end));
    if packed.mask_span.is_none() {
        return Err(Error::Packing(format!(
            "masked turn {masked_turn} truncated away"
        )));
    }
    Ok(packed)
}

/// `[CLS] left-utts-with-[EOT] [SEP] right-utts-with-[EOT] [SEP]`. Left
/// keeps its tail and right its head when over budget.
pub fn pack_session_pair(
    left: &[Utterance],
    right: &[Utterance],
    vocab: &Vocab,
    max_len: usize,
) -> Result<PackedSequence> {
    if left.is_empty() || right.is_empty() {
        return Err(Error::Packing("empty session piece".into()));
    }
    check_cap(max_len, 5)?;
    let l = context_body(vocab, left, 1);
    let r = context_body(vocab, right, left.len() + 1);
    let (lb, rb) = split_budget(l.len() + 2, r.len() + 1, max_len);
    Ok(assemble(keep_tail(l, lb - 2), Some(keep_head(r, rb - 1))))
}

/// `[CLS] u [SEP] v [SEP]`
pub fn pack_utterance_pair(
    u: &Utterance,
    v: &Utterance,
    vocab: &Vocab,
    max_len: usize,
) -> Result<PackedSequence> {
    if u.is_empty() || v.is_empty() {
        return Err(Error::Packing("empty utterance".into()));
    }
    check_cap(max_len, 5)?;
    let l = utterance_items(vocab, &u.tokens, 1, false);
    let r = utterance_items(vocab, &v.tokens, 2, false);
    let (lb, rb) = split_budget(l.len() + 2, r.len() + 1, max_len);
    Ok(assemble(keep_tail(l, lb - 2), Some(keep_head(r, rb - 1))))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab_for(words: &[&str]) -> Vocab {
        let utts: Vec<Utterance> = words
            .iter()
            .enumerate()
            .map(|(i, w)| Utterance::new(i + 1, *w).unwrap())
            .collect();
        build_vocab(&utts, 1, 1000).unwrap()
    }

    fn names(vocab: &Vocab, p: &PackedSequence) -> Vec<String> {
        p.token_ids.iter().map(|&i| vocab.token(i).unwrap().to_string()).collect()
    }

    fn u(turn: usize, s: &str) -> Utterance {
        Utterance::new(turn, s).unwrap()
    }

    #[test]
    fn tokenize_examples() {
        assert_eq!(tokenize("Hello, world"), vec!["hello", ",", "world"]);
        assert_eq!(tokenize("a  b"), vec!["a", "b"]);
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("Don't!"), vec!["don", "'", "t", "!"]);
    }

    #[test]
    fn vocab_frequency_and_ties() {
        let utts = vec![u(1, "a a a b")];
        let v = build_vocab(&utts, 2, 100).unwrap();
        assert_eq!(v.len(), 7);
        assert_eq!(v.token(6), Some("a"));
        assert!(!v.contains("b"));

        let utts = vec![u(1, "b a b a")];
        let v = build_vocab(&utts, 1, 100).unwrap();
        assert_eq!(v.token(6), Some("a"));
        assert_eq!(v.token(7), Some("b"));

        let utts = vec![u(1, "a b c d e f g h i j")];
        assert_eq!(build_vocab(&utts, 1, 7).unwrap().len(), 7);

        let none: Vec<Utterance> = vec![];
        assert!(build_vocab(&none, 1, 10).is_err());
        assert!(build_vocab(&utts, 0, 10).is_err());
    }

    #[test]
    fn vocab_file_round_trip() {
        let v = vocab_for(&["x y", "y z"]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.txt");
        v.save(&path).unwrap();
        assert_eq!(Vocab::load(&path).unwrap(), v);
        assert_eq!(v.id("never-seen"), UNK_ID);
    }

    #[test]
    fn context_response_layout() {
        let v = vocab_for(&["hi", "yo"]);
        let c = Dialogue::new("c", &["hi"]).unwrap();
        let p = pack_context_response(&c, &u(2, "yo"), &v, 448, 64).unwrap();
        assert_eq!(names(&v, &p), ["[CLS]", "hi", "[EOT]", "[SEP]", "yo", "[SEP]"]);
        assert_eq!(p.segment_ids, vec![0, 0, 0, 0, 1, 1]);
        assert_eq!(p.positions, (0..6).collect::<Vec<_>>());
        assert_eq!(p.utterance_spans.len(), 2);
    }

    #[test]
    fn tail_truncation_drops_orphan_eot() {
        let v = vocab_for(&["a b c d"]);
        let c = Dialogue::new("c", &["a b", "c d"]).unwrap();
        // body = a b EOT c d EOT (6); budget 4 keeps "EOT c d EOT" minus the orphan
        let p = pack_context(&c, &v, 6).unwrap();
        assert_eq!(names(&v, &p), ["[CLS]", "c", "d", "[EOT]", "[SEP]"]);
        assert_eq!(p.utterance_spans, vec![Span { start: 1, end: 3, turn: 2 }]);
    }

    #[test]
    fn masked_context_example() {
        let v = vocab_for(&["a b", "c"]);
        let c = Dialogue::new("c", &["a b", "c"]).unwrap();
        let p = pack_masked_context(&c, 1, &v, 512).unwrap();
        assert_eq!(names(&v, &p), ["[CLS]", "[MASK]", "[MASK]", "[EOT]", "c", "[EOT]", "[SEP]"]);
        assert_eq!(p.mask_span, Some((1, 3)));
        let last = pack_masked_context(&c, 2, &v, 512).unwrap();
        assert_eq!(last.mask_span, Some((4, 5)));
        let single = Dialogue::new("s", &["a"]).unwrap();
        assert!(pack_masked_context(&single, 1, &v, 512).is_err());
        assert!(pack_masked_context(&c, 3, &v, 512).is_err());
    }

    #[test]
    fn session_pair_layout() {
        let v = vocab_for(&["a", "b"]);
        let p = pack_session_pair(&[u(1, "a")], &[u(2, "b")], &v, 512).unwrap();
        assert_eq!(names(&v, &p), ["[CLS]", "a", "[EOT]", "[SEP]", "b", "[EOT]", "[SEP]"]);
        assert_eq!(p.segment_ids, vec![0, 0, 0, 0, 1, 1, 1]);
        assert!(pack_session_pair(&[u(1, "a")], &[], &v, 512).is_err());
    }

    #[test]
    fn utterance_pair_layout() {
        let v = vocab_for(&["a", "b"]);
        let p = pack_utterance_pair(&u(1, "a"), &u(3, "b"), &v, 512).unwrap();
        assert_eq!(p.len(), 5);
        assert_eq!(p.segment_ids, vec![0, 0, 0, 1, 1]);
    }

    #[test]
    fn oversized_cap_rejected() {
        let v = vocab_for(&["a"]);
        let c = Dialogue::new("c", &["a"]).unwrap();
        assert!(pack_context_response(&c, &u(2, "a"), &v, 500, 64).is_err());
        assert!(pack_context(&c, &v, 513).is_err());
    }

    #[test]
    fn padding_extends_with_pad_ids() {
        let v = vocab_for(&["a"]);
        let c = Dialogue::new("c", &["a"]).unwrap();
        let p = pack_context(&c, &v, 16).unwrap().padded(8);
        assert_eq!(p.len(), 8);
        assert_eq!(p.content_len(), 4);
        assert_eq!(&p.token_ids[4..], &[PAD_ID; 4]);
    }
}
