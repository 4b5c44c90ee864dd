#![allow(dead_code)]

use dialog_match::corpus::{Corpus, Dialogue, LabeledPair};
use dialog_match::model::{batch_loss, EncoderConfig, LossBundle, MatcherModel};
use dialog_match::numerics::{ParamStore, Session, Tape, Tensor};
use dialog_match::seeding::stream;
use dialog_match::synth::{self, SynthConfig};
use dialog_match::taskgen::{
    make_training_batch, Batch, CdInstance, IdInstance, NspInstance, PackConfig, ReplacedSide, TaskRngs, TaskSet,
    UrInstance,
};
use dialog_match::tokenizer::{build_vocab, tokenize, PackedSequence, Vocab, CLS_ID, EOT_ID, MASK_ID, SEP_ID};

pub struct Tiny {
    pub vocab: Vocab,
    pub corpus: Corpus,
    pub pairs: Vec<LabeledPair>,
    pub model: MatcherModel,
}

pub fn tiny_synth() -> SynthConfig {
    SynthConfig {
        topics: 3,
        words_per_topic: 4,
        styles: 3,
        filler_words: 6,
        min_turns: 3,
        max_turns: 4,
        words_per_utterance: 2,
        topic_rate: 0.5,
    }
}

pub fn tiny(seed: u64) -> Tiny {
    let pool = synth::generate(&tiny_synth(), 12, &mut stream(seed, &[1])).unwrap();
    let pairs = synth::training_pairs(&pool, 1, &mut stream(seed, &[2])).unwrap();
    let corpus = Corpus::new(synth::dialogues(&pool)).unwrap();
    let vocab = build_vocab(corpus.dialogues().iter().flat_map(|d| &d.utterances), 1, 100).unwrap();
    let config = EncoderConfig {
        layers: 1,
        heads: 2,
        d_model: 8,
        d_ff: 12,
        max_len: 64,
        dropout: 0.0,
        init_std: 0.3,
        ..EncoderConfig::with_vocab(vocab.len())
    };
    let model = MatcherModel::new(config, seed).unwrap();
    Tiny {
        vocab,
        corpus,
        pairs,
        model,
    }
}

pub fn small_pack() -> PackConfig {
    PackConfig {
        max_ctx: 40,
        max_resp: 12,
        max_len: 52,
    }
}

impl Tiny {
    pub fn batch(&self, pairs: &[LabeledPair], tasks: TaskSet, step: u64) -> Batch {
        let mut rngs = TaskRngs::new(11, step);
        make_training_batch(pairs, &self.corpus, &mut rngs, &self.vocab, tasks, &small_pack()).unwrap()
    }

    /// Loss and gradients of `batch` evaluated at `params`.
    pub fn loss_and_grads(
        &self,
        params: &ParamStore,
        batch: &Batch,
        alpha: f64,
    ) -> dialog_match::Result<(f64, Vec<Tensor>, LossBundle)> {
        let mut model = self.model.clone();
        model.params = params.clone();
        let mut s = Session::new(&model.params, Tape::new());
        let (loss, bundle) = batch_loss(&model, &mut s, batch, alpha, 0.6, None)?;
        let grads = s.param_grads(loss)?;
        Ok((s.tape.value(loss).item(), grads, bundle))
    }
}


/// Splits a packed sequence on its raw ids: one entry per `[SEP]`-closed
/// block, each a list of utterances. An utterance ends at `[EOT]` or at the
/// closing `[SEP]`.
pub fn blocks(p: &PackedSequence) -> Vec<Vec<Vec<u32>>> {
    assert_eq!(p.token_ids.first(), Some(&CLS_ID));
    let mut out = Vec::new();
    let mut block = Vec::new();
    let mut utt = Vec::new();
    for &id in &p.token_ids[1..] {
        match id {
            EOT_ID => block.push(std::mem::take(&mut utt)),
            SEP_ID => {
                if !utt.is_empty() {
                    block.push(std::mem::take(&mut utt));
                }
                out.push(std::mem::take(&mut block));
            }
            _ => utt.push(id),
        }
    }
    out
}

fn enc(vocab: &Vocab, text: &str) -> Vec<u32> {
    tokenize(text).iter().map(|t| vocab.id(t)).collect()
}

fn enc_turns(vocab: &Vocab, d: &Dialogue, from: usize, to: usize) -> Vec<Vec<u32>> {
    d.utterances[from - 1..to].iter().map(|u| enc(vocab, &u.text)).collect()
}

fn check(ok: bool, what: &str) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(what.to_string())
    }
}

pub fn nsp_sound(x: &NspInstance, d: &Dialogue, corpus: &Corpus, vocab: &Vocab) -> Result<(), String> {
    let b = blocks(&x.packed);
    check(b.len() == 2, "two blocks")?;
    let m = d.len();
    let t = x.split_point;
    check((1..m).contains(&t), "split point in 1..m")?;
    check((x.label == 1) == (x.replaced_side == ReplacedSide::None), "label matches side")?;
    let own_left = enc_turns(vocab, d, 1, t);
    let own_right = enc_turns(vocab, d, t + 1, m);
    let donor_piece = |src: &dialog_match::taskgen::PieceSource| -> Result<Vec<Vec<u32>>, String> {
        check(src.dialogue_id != d.id, "donor differs from source")?;
        let donor = corpus.get(&src.dialogue_id).ok_or("donor in corpus")?;
        Ok(enc_turns(vocab, donor, src.start, src.end))
    };
    match x.replaced_side {
        ReplacedSide::None => {
            check(x.left.dialogue_id == d.id && x.right.dialogue_id == d.id, "positive pieces from source")?;
            check(b[0] == own_left && b[1] == own_right, "positive halves are the split")
        }
        ReplacedSide::Left => {
            check(x.left.start == 1, "left donor piece starts at turn 1")?;
            check(b[0] == donor_piece(&x.left)? && b[1] == own_right, "left replaced")
        }
        ReplacedSide::Right => {
            let donor = corpus.get(&x.right.dialogue_id).ok_or("donor in corpus")?;
            check(x.right.end == donor.len(), "right donor piece runs to the end")?;
            check(b[0] == own_left && b[1] == donor_piece(&x.right)?, "right replaced")
        }
    }
}

pub fn ur_sound(x: &UrInstance, d: &Dialogue, vocab: &Vocab) -> Result<(), String> {
    let (s, e) = x.packed.mask_span.ok_or("mask span")?;
    check(x.packed.token_ids[s..e].iter().all(|&i| i == MASK_ID), "span fully masked")?;
    check(x.target_ids.len() == e - s, "targets cover the span")?;
    let mut restored = x.packed.token_ids.clone();
    restored[s..e].copy_from_slice(&x.target_ids);
    let mut expected = vec![CLS_ID];
    for u in &d.utterances {
        expected.extend(enc(vocab, &u.text));
        expected.push(EOT_ID);
    }
    expected.push(SEP_ID);
    check(restored == expected, "substituting targets restores the packing")
}

pub fn id_sound(x: &IdInstance, d: &Dialogue, corpus: &Corpus, vocab: &Vocab) -> Result<(), String> {
    let b = blocks(&x.packed);
    check(b.len() == 1 && b[0].len() == d.len(), "one block, all turns")?;
    check(x.label.len() == d.len() && x.label.iter().filter(|&&z| z == 1).count() == 1, "one-hot label")?;
    let k = x.replaced_turn;
    check(x.label[k - 1] == 1, "label marks the edited turn")?;
    check(x.donor_id != d.id, "donor differs")?;
    let donor = corpus.get(&x.donor_id).ok_or("donor in corpus")?;
    check(donor.utterances.iter().any(|u| u.text == x.replacement), "replacement from donor")?;
    check(x.replacement != d.utterances[k - 1].text, "replacement differs from original")?;
    for (i, utt) in b[0].iter().enumerate() {
        let want = if i + 1 == k { enc(vocab, &x.replacement) } else { enc(vocab, &d.utterances[i].text) };
        check(*utt == want, "utterances match the edit")?;
    }
    Ok(())
}

pub fn cd_sound(x: &CdInstance, d: &Dialogue, corpus: &Corpus, vocab: &Vocab) -> Result<(), String> {
    let (i, j) = x.turns;
    check(i != j && i % 2 == j % 2 && i.max(j) <= d.len() && i.min(j) >= 1, "distinct same-speaker turns")?;
    check(x.donor_id != d.id, "negative from another dialogue")?;
    let donor = corpus.get(&x.donor_id).ok_or("donor in corpus")?;
    let u = enc(vocab, &d.utterances[i - 1].text);
    let pos = blocks(&x.packed_pos);
    let neg = blocks(&x.packed_neg);
    check(pos == vec![vec![u.clone()], vec![enc(vocab, &d.utterances[j - 1].text)]], "positive pair")?;
    check(neg == vec![vec![u], vec![enc(vocab, &donor.utterances[x.donor_turn - 1].text)]], "negative pair")
}

/// `p = 1 - F(chi2)` for observed counts against expected probabilities.
pub fn chi_square_p(observed: &[u64], probs: &[f64]) -> f64 {
    use statrs::distribution::{ChiSquared, ContinuousCDF};
    let n: u64 = observed.iter().sum();
    let stat: f64 = observed
        .iter()
        .zip(probs)
        .map(|(&o, &p)| {
            let e = p * n as f64;
            (o as f64 - e).powi(2) / e
        })
        .sum();
    let dist = ChiSquared::new((observed.len() - 1) as f64).unwrap();
    1.0 - dist.cdf(stat)
}

/// Planted corpus of short dialogues, sized for sampling tests.
pub fn sampling_corpus(n: usize, seed: u64) -> (Corpus, Vocab) {
    let pool = synth::generate(&SynthConfig::default(), n, &mut stream(seed, &[9])).unwrap();
    let corpus = Corpus::new(synth::dialogues(&pool)).unwrap();
    let vocab = build_vocab(corpus.dialogues().iter().flat_map(|d| &d.utterances), 1, 1000).unwrap();
    (corpus, vocab)
}

/// Generates `n` instances of `task` from random dialogues and returns the
/// oracle failures.
pub fn soundness_failures(task: dialog_match::taskgen::Task, n: usize, seed: u64) -> Vec<String> {
    use dialog_match::taskgen::{gen_cd, gen_id, gen_nsp, gen_ur, Task};
    use rand::Rng;
    let (corpus, vocab) = sampling_corpus(300, seed);
    let mut rng = stream(seed, &[task as u64]);
    let mut failures = Vec::new();
    for _ in 0..n {
        let d = &corpus.dialogues()[rng.gen_range(0..corpus.len())];
        let verdict = match task {
            Task::Nsp => gen_nsp(d, &corpus, &mut rng, &vocab, 512).map(|x| nsp_sound(&x, d, &corpus, &vocab)),
            Task::Ur => gen_ur(d, &mut rng, &vocab, 512).map(|x| ur_sound(&x, d, &vocab)),
            Task::Id => gen_id(d, &corpus, &mut rng, &vocab, 512).map(|x| id_sound(&x, d, &corpus, &vocab)),
            Task::Cd => gen_cd(d, &corpus, &mut rng, &vocab, 512).map(|x| cd_sound(&x, d, &corpus, &vocab)),
            Task::Crm => unreachable!(),
        };
        match verdict {
            Ok(Ok(())) => {}
            Ok(Err(why)) => failures.push(format!("{}: {why}", d.id)),
            Err(e) => failures.push(format!("{}: {e}", d.id)),
        }
    }
    failures
}

/// Chi-square p-values for the generators' random choices over `draws`
/// draws each.
pub fn sampling_p_values(draws: usize, seed: u64) -> Vec<(&'static str, f64)> {
    use dialog_match::taskgen::{gen_cd, gen_id, gen_nsp, gen_ur};
    let (corpus, vocab) = sampling_corpus(50, seed);
    // five turns: both parity classes have at least two members
    let d = Dialogue::new("five", &["a b", "c d", "e f", "g h", "i j"]).unwrap();
    let mut rng = stream(seed, &[77]);

    let (mut label, mut side) = ([0u64; 2], [0u64; 3]);
    for _ in 0..draws {
        let x = gen_nsp(&d, &corpus, &mut rng, &vocab, 512).unwrap();
        label[x.label as usize] += 1;
        side[x.replaced_side as usize] += 1;
    }
    let (mut ur, mut id, mut parity) = ([0u64; 5], [0u64; 5], [0u64; 2]);
    for _ in 0..draws {
        ur[gen_ur(&d, &mut rng, &vocab, 512).unwrap().masked_turn - 1] += 1;
        id[gen_id(&d, &corpus, &mut rng, &vocab, 512).unwrap().replaced_turn - 1] += 1;
        parity[gen_cd(&d, &corpus, &mut rng, &vocab, 512).unwrap().turns.0 % 2] += 1;
    }
    let negatives = [side[1], side[2]];
    vec![
        ("nsp label balance", chi_square_p(&label, &[0.5, 0.5])),
        ("nsp replaced side", chi_square_p(&negatives, &[0.5, 0.5])),
        ("nsp side incl. none", chi_square_p(&side, &[0.5, 0.25, 0.25])),
        ("ur turn", chi_square_p(&ur, &[0.2; 5])),
        ("id turn", chi_square_p(&id, &[0.2; 5])),
        ("cd parity class", chi_square_p(&parity, &[0.5, 0.5])),
    ]
}

use dialog_match::eval::RankingResult;

/// Rank by fully sorting the group, ties kept in input order.
pub fn brute_force_rank(r: &RankingResult) -> usize {
    let mut order: Vec<usize> = (0..r.scores.len()).collect();
    order.sort_by(|&a, &b| r.scores[b].partial_cmp(&r.scores[a]).unwrap());
    order.iter().position(|&i| i == r.positive_index).unwrap() + 1
}

pub fn brute_force_recall(results: &[RankingResult], k: usize) -> f64 {
    results.iter().filter(|r| brute_force_rank(r) <= k).count() as f64 / results.len() as f64
}

/// Random groups of `n` candidates. With `levels` set, scores take only
/// that many distinct values so ties are common.
pub fn random_results(count: usize, n: usize, levels: Option<u32>, seed: u64) -> Vec<RankingResult> {
    use rand::Rng;
    let mut rng = stream(seed, &[31]);
    (0..count)
        .map(|i| RankingResult {
            context_id: format!("g{i}"),
            scores: (0..n)
                .map(|_| match levels {
                    Some(l) => f64::from(rng.gen_range(0..l)) / f64::from(l),
                    None => rng.gen::<f64>(),
                })
                .collect(),
            positive_index: rng.gen_range(0..n),
            turns: rng.gen_range(1..12),
            tokens: rng.gen_range(1..200),
        })
        .collect()
}

/// Context-response layout computed by direct counting: flatten the
/// context with `[EOT]`s, keep the last `max_ctx - 2` ids, drop a leading
/// orphan `[EOT]`, keep the first `max_resp - 1` response ids.
pub fn counted_context_response(ctx: &[Vec<u32>], resp: &[u32], max_ctx: usize, max_resp: usize) -> Vec<u32> {
    let mut flat: Vec<u32> = Vec::new();
    for u in ctx {
        flat.extend(u);
        flat.push(EOT_ID);
    }
    let keep = max_ctx - 2;
    if flat.len() > keep {
        flat = flat[flat.len() - keep..].to_vec();
        while flat.first() == Some(&EOT_ID) {
            flat.remove(0);
        }
    }
    let mut out = vec![CLS_ID];
    out.extend(flat);
    out.push(SEP_ID);
    out.extend(&resp[..resp.len().min(max_resp - 1)]);
    out.push(SEP_ID);
    out
}

/// A dialogue whose utterances have the given token counts, every token
/// distinct, plus the vocabulary over all of them.
pub fn sized_dialogue(lengths: &[usize], response_len: usize) -> (Dialogue, dialog_match::corpus::Utterance, Vocab) {
    let mut next = 0usize;
    let mut words = |n: usize| {
        let w: Vec<String> = (next..next + n).map(|i| format!("w{i}")).collect();
        next += n;
        w.join(" ")
    };
    let texts: Vec<String> = lengths.iter().map(|&n| words(n)).collect();
    let d = Dialogue::new("sized", &texts).unwrap();
    let r = dialog_match::corpus::Utterance::new(lengths.len() + 1, words(response_len)).unwrap();
    let vocab = build_vocab(d.utterances.iter().chain(std::iter::once(&r)), 1, usize::MAX).unwrap();
    (d, r, vocab)
}

/// Adversarial shapes around the 448/64 budgets: (context lengths, response length).
pub fn adversarial_packing_cases() -> Vec<(Vec<usize>, usize)> {
    vec![
        (vec![1; 600], 3),
        (vec![1000], 64),
        (vec![445], 63),
        (vec![446], 64),
        (vec![444, 1], 65),
        (vec![100, 100, 100, 100, 100], 200),
        (vec![2; 149], 1),
        (vec![300, 1, 300], 500),
        (vec![1, 1, 1], 1),
        (vec![223, 222], 62),
    ]
}
