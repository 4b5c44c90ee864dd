//! Multi-task vs matching-only training on the planted synthetic corpus.
//!
//! Trains one model per seed with all auxiliary tasks (alpha = 1) and one
//! with matching alone (alpha = 0), then compares test R_10@1.
//!
//!     cargo run --release --example planted_ablation -- [seeds]

use std::time::Instant;

use dialog_match::eval::{rank_groups, MetricReport};
use dialog_match::model::{EncoderConfig, MatcherModel};
use dialog_match::synth::{PlantedSplit, SynthConfig};
use dialog_match::trainer::{train, TrainConfig};

fn main() -> dialog_match::Result<()> {
    let seeds: u64 = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(3);
    let data = PlantedSplit::generate(&SynthConfig::default(), 2000, 200, 7)?;
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

    println!("seed  alpha  R_10@1  R_10@5  seconds");
    for seed in 0..seeds {
        for alpha in [1.0, 0.0] {
            let config = TrainConfig {
                alpha,
                lr: 2e-3,
                max_steps: Some(600),
                eval_interval: Some(150),
                seed,
                ..TrainConfig::default()
            };
            let start = Instant::now();
            let model = MatcherModel::new(encoder.clone(), seed)?;
            let trained = train(model, &data.vocab, &data.train_pairs, &data.corpus, &data.valid, &config)?;
            let results = rank_groups(&trained.model, &data.vocab, &config.pack, &data.test)?;
            let report = MetricReport::from_results(&results)?;
            println!(
                "{seed:>4}  {alpha:>5}  {:.4}  {:.4}  {:>7.1}",
                report.r10_at_1.unwrap_or(f64::NAN),
                report.r10_at_5.unwrap_or(f64::NAN),
                start.elapsed().as_secs_f64()
            );
        }
    }
    Ok(())
}
