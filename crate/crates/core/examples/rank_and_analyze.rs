//! Trains briefly on the planted corpus, ranks the test groups and breaks
//! R_n@k down by context length.
//!
//!     cargo run --release --example rank_and_analyze -- [steps]

use dialog_match::eval::{breakdown_csv, length_breakdown, rank_groups, LengthMode, MetricReport};
use dialog_match::model::{EncoderConfig, MatcherModel};
use dialog_match::synth::{PlantedSplit, SynthConfig};
use dialog_match::trainer::{train, TrainConfig};

fn main() -> dialog_match::Result<()> {
    let steps: u64 = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(150);
    let data = PlantedSplit::generate(&SynthConfig::default(), 800, 100, 1)?;
    let encoder = EncoderConfig {
        layers: 2,
        heads: 2,
        d_model: 32,
        d_ff: 64,
        max_len: 64,
        dropout: 0.0,
        init_std: 0.2,
        ..EncoderConfig::with_vocab(data.vocab.len())
    };
    let config = TrainConfig { lr: 2e-3, max_steps: Some(steps), eval_interval: Some(50), ..TrainConfig::default() };
    let trained = train(
        MatcherModel::new(encoder, 0)?,
        &data.vocab,
        &data.train_pairs,
        &data.corpus,
        &data.valid,
        &config,
    )?;
    for v in trained.log.validations() {
        println!("step {:>4}  {} {:.3}", v.step, v.metric, v.value);
    }

    let results = rank_groups(&trained.model, &data.vocab, &config.pack, &data.test)?;
    print!("\n{}", MetricReport::from_results(&results)?.to_table());
    println!("\nby context turns");
    print!("{}", breakdown_csv(&length_breakdown(&results, LengthMode::Turns, &[2, 3, 4, 5])?));
    Ok(())
}
