//! Checks the joint loss gradient of a small model against central
//! differences.
//!
//!     cargo run --release --example gradient_check

use dialog_match::corpus::Corpus;
use dialog_match::model::{batch_loss, EncoderConfig, MatcherModel};
use dialog_match::numerics::{finite_diff_check, Session, Tape};
use dialog_match::seeding::stream;
use dialog_match::synth::{self, SynthConfig};
use dialog_match::taskgen::{make_training_batch, PackConfig, TaskRngs, TaskSet};
use dialog_match::tokenizer::build_vocab;

fn main() -> dialog_match::Result<()> {
    let pool = synth::generate(&SynthConfig::default(), 12, &mut stream(1, &[]))?;
    let corpus = Corpus::new(synth::dialogues(&pool))?;
    let vocab = build_vocab(corpus.dialogues().iter().flat_map(|d| &d.utterances), 1, 1000)?;
    let pairs = synth::training_pairs(&pool, 1, &mut stream(2, &[]))?;
    let pack = PackConfig { max_ctx: 40, max_resp: 12, max_len: 52 };
    let batch = make_training_batch(&pairs[..6], &corpus, &mut TaskRngs::new(3, 0), &vocab, TaskSet::all(), &pack)?;

    let encoder = EncoderConfig {
        layers: 1,
        heads: 2,
        d_model: 8,
        d_ff: 12,
        max_len: 64,
        dropout: 0.0,
        init_std: 0.3,
        ..EncoderConfig::with_vocab(vocab.len())
    };
    let model = MatcherModel::new(encoder, 4)?;
    let mut params = model.params.clone();
    let report = finite_diff_check(
        &mut params,
        |p| {
            let mut m = model.clone();
            m.params = p.clone();
            let mut s = Session::new(&m.params, Tape::new());
            let (loss, _) = batch_loss(&m, &mut s, &batch, 1.0, 0.6, None)?;
            let grads = s.param_grads(loss)?;
            Ok((s.tape.value(loss).item(), grads))
        },
        1e-5,
        20,
        &mut stream(5, &[]),
    )?;
    for c in &report.coords {
        println!("{c:?}");
    }
    println!("max relative error {:.3e}", report.max_rel_error);
    Ok(())
}
