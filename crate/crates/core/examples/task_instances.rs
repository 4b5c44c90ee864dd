//! Draws one instance of each auxiliary task from a synthetic corpus and
//! prints it decoded.
//!
//!     cargo run --example task_instances -- [seed]

use dialog_match::corpus::Corpus;
use dialog_match::seeding::stream;
use dialog_match::synth::{self, SynthConfig};
use dialog_match::taskgen::{gen_cd, gen_id, gen_nsp, gen_ur};
use dialog_match::tokenizer::{build_vocab, PackedSequence, Vocab};

fn decode(p: &PackedSequence, vocab: &Vocab) -> String {
    let tokens: Vec<&str> = p.token_ids.iter().map(|&id| vocab.token(id).unwrap_or("?")).collect();
    tokens.join(" ")
}

fn main() -> dialog_match::Result<()> {
    let seed: u64 = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(0);
    let pool = synth::generate(&SynthConfig::default(), 20, &mut stream(seed, &[0]))?;
    let corpus = Corpus::new(synth::dialogues(&pool))?;
    let vocab = build_vocab(corpus.dialogues().iter().flat_map(|d| &d.utterances), 1, 1000)?;
    let d = &corpus.dialogues()[0];
    let mut rng = stream(seed, &[1]);

    println!("dialogue {}: {}", d.id, d.texts().join(" | "));

    let nsp = gen_nsp(d, &corpus, &mut rng, &vocab, 512)?;
    println!("\nNSP label {} split after turn {} replaced {:?}", nsp.label, nsp.split_point, nsp.replaced_side);
    println!("  {}", decode(&nsp.packed, &vocab));

    let ur = gen_ur(d, &mut rng, &vocab, 512)?;
    let target: Vec<&str> = ur.target_ids.iter().map(|&id| vocab.token(id).unwrap_or("?")).collect();
    println!("\nUR masked turn {} target [{}]", ur.masked_turn, target.join(" "));
    println!("  {}", decode(&ur.packed, &vocab));

    let id = gen_id(d, &corpus, &mut rng, &vocab, 512)?;
    println!("\nID replaced turn {} with \"{}\" from {}", id.replaced_turn, id.replacement, id.donor_id);
    println!("  {}", decode(&id.packed, &vocab));
    println!("  label {:?}", id.label);

    let cd = gen_cd(d, &corpus, &mut rng, &vocab, 512)?;
    println!("\nCD same speaker turns {:?}, foreign turn {} of {}", cd.turns, cd.donor_turn, cd.donor_id);
    println!("  pos {}", decode(&cd.packed_pos, &vocab));
    println!("  neg {}", decode(&cd.packed_neg, &vocab));
    Ok(())
}
