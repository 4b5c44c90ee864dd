mod common;

use dialog_match::tokenizer::{
    pack_context_response, pack_session_pair, DEFAULT_MAX_CTX, DEFAULT_MAX_RESP, MAX_SEQUENCE_LEN,
};
use proptest::prelude::*;

fn check(lengths: &[usize], resp_len: usize, max_ctx: usize, max_resp: usize) -> Result<(), TestCaseError> {
    let (d, r, vocab) = common::sized_dialogue(lengths, resp_len);
    let packed = pack_context_response(&d, &r, &vocab, max_ctx, max_resp).unwrap();
    let ctx: Vec<Vec<u32>> = d.utterances.iter().map(|u| vocab.encode(&u.tokens)).collect();
    let want = common::counted_context_response(&ctx, &vocab.encode(&r.tokens), max_ctx, max_resp);
    prop_assert_eq!(&packed.token_ids, &want);
    prop_assert!(packed.len() <= max_ctx + max_resp);
    let ctx_block = packed.segment_ids.iter().filter(|&&s| s == 0).count();
    prop_assert!(ctx_block <= max_ctx);
    Ok(())
}

#[test]
fn default_budgets_on_adversarial_inputs() {
    for (lengths, resp) in common::adversarial_packing_cases() {
        check(&lengths, resp, DEFAULT_MAX_CTX, DEFAULT_MAX_RESP).unwrap();
    }
}

#[test]
fn six_hundred_short_turns_fill_the_context_block() {
    let (d, r, vocab) = common::sized_dialogue(&[1; 600], 3);
    let packed = pack_context_response(&d, &r, &vocab, 448, 64).unwrap();
    let ctx_block = packed.segment_ids.iter().filter(|&&s| s == 0).count();
    assert_eq!(ctx_block, 448);
    // the earliest 377 utterances are gone, the last one survives
    assert_eq!(packed.utterance_spans.first().unwrap().turn, 378);
    assert_eq!(packed.utterance_spans.iter().filter(|s| s.turn <= 600).count(), 223);
}

proptest! {
    #[test]
    fn context_response_matches_counting(
        lengths in prop::collection::vec(1usize..40, 1..30),
        resp in 1usize..90,
        max_ctx in 3usize..100,
        max_resp in 2usize..40,
    ) {
        check(&lengths, resp, max_ctx, max_resp)?;
    }

    #[test]
    fn session_pairs_respect_the_cap(
        left in prop::collection::vec(1usize..200, 1..6),
        right in prop::collection::vec(1usize..200, 1..6),
    ) {
        let all: Vec<usize> = left.iter().chain(&right).copied().collect();
        let (d, _, vocab) = common::sized_dialogue(&all, 1);
        let (l, r) = d.utterances.split_at(left.len());
        let packed = pack_session_pair(l, r, &vocab, MAX_SEQUENCE_LEN).unwrap();
        prop_assert!(packed.len() <= MAX_SEQUENCE_LEN);
        let total: usize = all.iter().sum::<usize>() + all.len() + 3;
        if total <= MAX_SEQUENCE_LEN {
            prop_assert_eq!(packed.len(), total);
        }
    }
}
