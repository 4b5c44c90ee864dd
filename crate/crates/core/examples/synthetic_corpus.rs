//! Writes a planted-structure corpus in the file formats the CLI reads.
//!
//!     cargo run --example synthetic_corpus -- out_dir [dialogues] [seed]
//!
//! Produces `dialogues.jsonl`, `train.tsv` (1:1 labels) and
//! `valid.tsv` / `test.tsv` (groups of 10 candidates).

use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;

use dialog_match::corpus::{write_dialogues_jsonl, write_pairs_tsv, LabeledPair};
use dialog_match::seeding::stream;
use dialog_match::synth::{self, SynthConfig};

fn create(path: PathBuf) -> BufWriter<File> {
    BufWriter::new(File::create(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display())))
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let dir = PathBuf::from(args.next().unwrap_or_else(|| "synthetic".into()));
    let n: usize = args.next().map(|a| a.parse()).transpose()?.unwrap_or(400);
    let seed: u64 = args.next().map(|a| a.parse()).transpose()?.unwrap_or(1);
    std::fs::create_dir_all(&dir)?;

    let pool = synth::generate(&SynthConfig::default(), n, &mut stream(seed, &[0]))?;
    let held_out = (n / 10).max(10);
    let (train, rest) = pool.split_at(n - 2 * held_out);
    let (valid, test) = rest.split_at(held_out);

    write_dialogues_jsonl(&synth::dialogues(train), create(dir.join("dialogues.jsonl")))?;
    let sets: [(&str, Vec<LabeledPair>); 3] = [
        ("train.tsv", synth::training_pairs(train, 1, &mut stream(seed, &[1]))?),
        ("valid.tsv", synth::ranking_pairs(valid, 10, &mut stream(seed, &[2]))?),
        ("test.tsv", synth::ranking_pairs(test, 10, &mut stream(seed, &[3]))?),
    ];
    for (name, pairs) in &sets {
        write_pairs_tsv(pairs, create(dir.join(name)))?;
        println!("{name}: {} pairs", pairs.len());
    }
    Ok(())
}
