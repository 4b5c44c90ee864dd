//! Shows every input layout the model sees for one short dialogue.
//!
//!     cargo run --example packing

use dialog_match::corpus::{Dialogue, Utterance};
use dialog_match::tokenizer::{
    build_vocab, pack_context, pack_context_response, pack_masked_context, pack_session_pair,
    pack_utterance_pair, PackedSequence, Vocab,
};

fn show(name: &str, p: &PackedSequence, vocab: &Vocab) {
    let tokens: Vec<&str> = p.token_ids.iter().map(|&id| vocab.token(id).unwrap_or("?")).collect();
    println!("{name:<16} {}", tokens.join(" "));
    println!("{:<16} {:?}", "", p.segment_ids);
}

fn main() -> dialog_match::Result<()> {
    let d = Dialogue::new(
        "demo",
        &["my wifi keeps dropping", "which driver are you on", "the default one", "try the backport driver"],
    )?;
    let response = Utterance::new(5, "that fixed it thanks")?;
    let vocab = build_vocab(d.utterances.iter().chain([&response]), 1, 1000)?;

    show("context+resp", &pack_context_response(&d, &response, &vocab, 448, 64)?, &vocab);
    // a 12-token context budget keeps only the most recent turns
    show("tight budget", &pack_context_response(&d, &response, &vocab, 12, 4)?, &vocab);
    show("context", &pack_context(&d, &vocab, 512)?, &vocab);
    show("masked turn 2", &pack_masked_context(&d, 2, &vocab, 512)?, &vocab);
    let (left, right) = d.utterances.split_at(2);
    show("session pair", &pack_session_pair(left, right, &vocab, 512)?, &vocab);
    show("utterance pair", &pack_utterance_pair(&d.utterances[0], &d.utterances[2], &vocab, 512)?, &vocab);
    Ok(())
}
