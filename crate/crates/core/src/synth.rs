//! Synthetic dialogues with planted topic and speaker-style tokens.
//!
//! Every dialogue draws one topic and one style per speaker. Each utterance
//! mixes topic words, its speaker's style word and shared filler, so a
//! response can be matched to its context through topic and style alone.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Dialogue, LabeledPair};
use crate::error::{Error, Result};
use crate::eval::CandidateGroup;
use crate::seeding::stream;
use crate::tokenizer::{build_vocab, Vocab};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub topics: usize,
    pub words_per_topic: usize,
    pub styles: usize,
    pub filler_words: usize,
    pub min_turns: usize,
    pub max_turns: usize,
    pub words_per_utterance: usize,
    /// Chance that a word slot holds a topic word rather than filler.
    pub topic_rate: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            topics: 8,
            words_per_topic: 4,
            styles: 8,
            filler_words: 20,
            min_turns: 3,
            max_turns: 5,
            words_per_utterance: 3,
            topic_rate: 0.7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.topics < 2 || self.styles < 2 || self.words_per_topic == 0 || self.filler_words == 0 {
            return Err(Error::Config("synthetic corpus needs >= 2 topics and styles and non-empty word lists".into()));
        }
        if self.min_turns < 3 || self.min_turns > self.max_turns {
            return Err(Error::Config("synthetic turns need 3 <= min_turns <= max_turns".into()));
        }
        if self.words_per_utterance == 0 || !(0.0..=1.0).contains(&self.topic_rate) {
            return Err(Error::Config("bad utterance shape".into()));
        }
        Ok(())
    }
}

/// A generated dialogue and the structure planted in it.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantedDialogue {
    pub dialogue: Dialogue,
    pub topic: usize,
    pub styles: [usize; 2],
}

fn topic_word(t: usize, i: usize) -> String {
    format!("t{t}w{i}")
}

fn utterance<R: Rng + ?Sized>(cfg: &SynthConfig, topic: usize, style: usize, rng: &mut R) -> String {
    let mut words: Vec<String> = (0..cfg.words_per_utterance)
        .map(|_| {
            if rng.gen_bool(cfg.topic_rate) {
                topic_word(topic, rng.gen_range(0..cfg.words_per_topic))
            } else {
                format!("f{}", rng.gen_range(0..cfg.filler_words))
            }
        })
        .collect();
    let at = rng.gen_range(0..=words.len());
    words.insert(at, format!("s{style}"));
    words.join(" ")
}

pub fn generate<R: Rng + ?Sized>(cfg: &SynthConfig, n: usize, rng: &mut R) -> Result<Vec<PlantedDialogue>> {
    cfg.validate()?;
    (0..n)
        .map(|i| {
            let topic = rng.gen_range(0..cfg.topics);
            let a = rng.gen_range(0..cfg.styles);
            let b = (a + rng.gen_range(1..cfg.styles)) % cfg.styles;
            let turns = rng.gen_range(cfg.min_turns..=cfg.max_turns);
            let texts: Vec<String> = (0..turns)
                .map(|t| utterance(cfg, topic, [a, b][t % 2], rng))
                .collect();
            Ok(PlantedDialogue {
                dialogue: Dialogue::new(format!("synth-{i}"), &texts)?,
                topic,
                styles: [a, b],
            })
        })
        .collect()
}

fn split_last(d: &Dialogue) -> Result<(Dialogue, String)> {
    let texts = d.texts();
    let (last, ctx) = texts.split_last().ok_or_else(|| Error::Corpus("empty dialogue".into()))?;
    Ok((Dialogue::new(d.id.clone(), ctx)?, last.to_string()))
}

fn other_last<'a, R: Rng + ?Sized>(pool: &'a [PlantedDialogue], skip: usize, rng: &mut R) -> &'a Dialogue {
    let j = rng.gen_range(0..pool.len() - 1);
    let j = if j >= skip { j + 1 } else { j };
    &pool[j].dialogue
}

/// One positive (the true last turn) and `negatives` random last turns of
/// other dialogues per dialogue.
pub fn training_pairs<R: Rng + ?Sized>(
    pool: &[PlantedDialogue],
    negatives: usize,
    rng: &mut R,
) -> Result<Vec<LabeledPair>> {
    if pool.len() < 2 {
        return Err(Error::Corpus("need at least 2 dialogues".into()));
    }
    let mut pairs = Vec::with_capacity(pool.len() * (1 + negatives));
    for (i, p) in pool.iter().enumerate() {
        let (ctx, last) = split_last(&p.dialogue)?;
        pairs.push(LabeledPair::new(ctx.clone(), &last, 1)?);
        for _ in 0..negatives {
            let (_, neg) = split_last(other_last(pool, i, rng))?;
            pairs.push(LabeledPair::new(ctx.clone(), &neg, 0)?);
        }
    }
    Ok(pairs)
}

/// Groups of `n` candidates with the positive at a random position.
pub fn ranking_groups<R: Rng + ?Sized>(
    pool: &[PlantedDialogue],
    n: usize,
    rng: &mut R,
) -> Result<Vec<CandidateGroup>> {
    let pairs = ranking_pairs(pool, n, rng)?;
    crate::eval::group_pairs(&pairs)
}

/// The pair-file form of [`ranking_groups`].
pub fn ranking_pairs<R: Rng + ?Sized>(pool: &[PlantedDialogue], n: usize, rng: &mut R) -> Result<Vec<LabeledPair>> {
    if n < 2 || pool.len() < n {
        return Err(Error::Corpus(format!("cannot build {n}-candidate groups from {} dialogues", pool.len())));
    }
    let mut pairs = Vec::with_capacity(pool.len() * n);
    for (i, p) in pool.iter().enumerate() {
        let (ctx, last) = split_last(&p.dialogue)?;
        let mut others: Vec<usize> = (0..pool.len()).filter(|&j| j != i).collect();
        others.shuffle(rng);
        let mut cands: Vec<(String, u8)> = vec![(last, 1)];
        for &j in &others[..n - 1] {
            cands.push((split_last(&pool[j].dialogue)?.1, 0));
        }
        cands.shuffle(rng);
        for (text, label) in cands {
            pairs.push(LabeledPair::new(ctx.clone(), &text, label)?);
        }
    }
    Ok(pairs)
}

pub fn dialogues(pool: &[PlantedDialogue]) -> Vec<Dialogue> {
    pool.iter().map(|p| p.dialogue.clone()).collect()
}

/// Train/validation/test split of one generated corpus.
pub struct PlantedSplit {
    pub train_pairs: Vec<LabeledPair>,
    /// Training dialogues, the donor pool for auxiliary tasks.
    pub corpus: Corpus,
    pub valid: Vec<CandidateGroup>,
    pub test: Vec<CandidateGroup>,
    pub vocab: Vocab,
}

impl PlantedSplit {
    /// Generates `n` dialogues and holds out `held_out` each for validation
    /// and test, as groups of 10 candidates. Training pairs are 1:1
    /// positive to negative.
    pub fn generate(cfg: &SynthConfig, n: usize, held_out: usize, seed: u64) -> Result<Self> {
        if n < 2 * held_out + 2 || held_out < 10 {
            return Err(Error::Config(format!("cannot hold out 2x{held_out} of {n} dialogues")));
        }
        let pool = generate(cfg, n, &mut stream(seed, &[1]))?;
        let (train, rest) = pool.split_at(n - 2 * held_out);
        let (valid, test) = rest.split_at(held_out);
        let corpus = Corpus::new(dialogues(train))?;
        let vocab = build_vocab(corpus.dialogues().iter().flat_map(|d| &d.utterances), 1, 100_000)?;
        Ok(PlantedSplit {
            train_pairs: training_pairs(train, 1, &mut stream(seed, &[2]))?,
            corpus,
            valid: ranking_groups(valid, 10, &mut stream(seed, &[3]))?,
            test: ranking_groups(test, 10, &mut stream(seed, &[4]))?,
            vocab,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn planted_structure_is_visible() {
        let cfg = SynthConfig::default();
        let pool = generate(&cfg, 50, &mut stream(1, &[])).unwrap();
        for p in &pool {
            assert_ne!(p.styles[0], p.styles[1]);
            for u in &p.dialogue.utterances {
                let style = format!("s{}", p.styles[(u.turn_index - 1) % 2]);
                assert!(u.tokens.contains(&style));
                let prefix = format!("t{}w", p.topic);
                assert!(u.tokens.iter().all(|t| !t.starts_with('t') || t.starts_with(&prefix)));
            }
        }
    }

    #[test]
    fn ranking_groups_have_one_positive() {
        let pool = generate(&SynthConfig::default(), 30, &mut stream(2, &[])).unwrap();
        let groups = ranking_groups(&pool, 10, &mut stream(3, &[])).unwrap();
        assert_eq!(groups.len(), 30);
        assert!(groups.iter().all(|g| g.len() == 10));
        let pairs = training_pairs(&pool, 1, &mut stream(4, &[])).unwrap();
        assert_eq!(pairs.len(), 60);
        assert_eq!(pairs.iter().filter(|p| p.is_positive()).count(), 30);
    }
}
