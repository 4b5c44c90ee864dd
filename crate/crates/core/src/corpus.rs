//! Dialogue corpora: TSV context-response pairs and JSONL dialogues.
//!
//! Every utterance is tokenized at load time so that empty utterances can be
//! rejected before they shift turn parity.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tokenizer::tokenize;

/// Delimiter between utterances inside a TSV context field.
pub const EOT_DELIMITER: &str = "__eot__";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Speaker {
    A,
    B,
}

impl Speaker {
    /// Odd turns belong to `A`, even turns to `B`.
    pub fn for_turn(turn_index: usize) -> Speaker {
        if turn_index % 2 == 1 {
            Speaker::A
        } else {
            Speaker::B
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    /// 1-based.
    pub turn_index: usize,
    pub speaker: Speaker,
    pub text: String,
    pub tokens: Vec<String>,
}

impl Utterance {
    pub fn new(turn_index: usize, text: impl Into<String>) -> Result<Self> {
        if turn_index == 0 {
            return Err(Error::Corpus("turn_index is 1-based".into()));
        }
        let text = text.into().trim().to_string();
        let tokens = tokenize(&text);
        if tokens.is_empty() {
            return Err(Error::Corpus("empty utterance".into()));
        }
        Ok(Utterance {
            turn_index,
            speaker: Speaker::for_turn(turn_index),
            text,
            tokens,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dialogue {
    pub id: String,
    pub utterances: Vec<Utterance>,
}

impl Dialogue {
    pub fn new<S: AsRef<str>>(id: impl Into<String>, texts: &[S]) -> Result<Self> {
        if texts.is_empty() {
            return Err(Error::Corpus("empty dialogue".into()));
        }
        let utterances = texts
            .iter()
            .enumerate()
            .map(|(i, t)| Utterance::new(i + 1, t.as_ref()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Dialogue {
            id: id.into(),
            utterances,
        })
    }

    /// Number of turns, `m`.
    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    pub fn token_count(&self) -> usize {
        self.utterances.iter().map(Utterance::len).sum()
    }

    pub fn texts(&self) -> Vec<&str> {
        self.utterances.iter().map(|u| u.text.as_str()).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPair {
    pub context: Dialogue,
    pub response: Utterance,
    pub label: u8,
}

impl LabeledPair {
    pub fn new(context: Dialogue, response_text: &str, label: u8) -> Result<Self> {
        if label > 1 {
            return Err(Error::Corpus(format!("invalid label {label}")));
        }
        let response = Utterance::new(context.len() + 1, response_text)?;
        Ok(LabeledPair {
            context,
            response,
            label,
        })
    }

    pub fn is_positive(&self) -> bool {
        self.label == 1
    }
}

/// An immutable set of dialogues with unique ids.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    dialogues: Vec<Dialogue>,
    index: HashMap<String, usize>,
}

impl Corpus {
    pub fn new(dialogues: Vec<Dialogue>) -> Result<Self> {
        let mut index = HashMap::with_capacity(dialogues.len());
        for (i, d) in dialogues.iter().enumerate() {
            if index.insert(d.id.clone(), i).is_some() {
                return Err(Error::Corpus(format!("duplicate dialogue id {:?}", d.id)));
            }
        }
        Ok(Corpus { dialogues, index })
    }

    /// Collects the distinct contexts of a pair file into a corpus, keeping
    /// first occurrence order.
    pub fn from_pair_contexts(pairs: &[LabeledPair]) -> Result<Self> {
        let mut seen = HashMap::new();
        let mut dialogues = Vec::new();
        for p in pairs {
            let key = p.context.texts().join(EOT_DELIMITER);
            if seen.insert(key, ()).is_none() {
                dialogues.push(p.context.clone());
            }
        }
        Corpus::new(dialogues)
    }

    pub fn dialogues(&self) -> &[Dialogue] {
        &self.dialogues
    }

    pub fn len(&self) -> usize {
        self.dialogues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dialogues.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Dialogue> {
        self.index.get(id).map(|&i| &self.dialogues[i])
    }

    /// Uniform draw over every dialogue whose id differs from `exclude_id`.
    pub fn sample_other<R: Rng + ?Sized>(&self, exclude_id: &str, rng: &mut R) -> Result<&Dialogue> {
        sample_other_dialogue(self, exclude_id, rng)
    }
}

pub fn sample_other_dialogue<'c, R: Rng + ?Sized>(
    corpus: &'c Corpus,
    exclude_id: &str,
    rng: &mut R,
) -> Result<&'c Dialogue> {
    let n = corpus.len();
    if n < 2 {
        return Err(Error::Corpus("no replacement source".into()));
    }
    match corpus.index.get(exclude_id) {
        Some(&skip) => {
            let mut i = rng.gen_range(0..n - 1);
            if i >= skip {
                i += 1;
            }
            Ok(&corpus.dialogues[i])
        }
        None => Ok(&corpus.dialogues[rng.gen_range(0..n)]),
    }
}

fn read_lines(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Parses `label<TAB>context<TAB>response` lines. Blank lines are skipped.
pub fn load_pairs_tsv(path: impl AsRef<Path>) -> Result<Vec<LabeledPair>> {
    let path = path.as_ref();
    parse_pairs_tsv(&read_lines(path)?, path)
}

pub fn parse_pairs_tsv(contents: &str, path: &Path) -> Result<Vec<LabeledPair>> {
    let mut pairs = Vec::new();
    for (i, raw) in contents.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::load(
                path,
                line_no,
                format!("expected 3 tab-separated fields, found {}", fields.len()),
            ));
        }
        let label = match fields[0].trim() {
            "0" => 0,
            "1" => 1,
            _ => return Err(Error::load(path, line_no, "invalid label")),
        };
        if fields[1].trim().is_empty() {
            return Err(Error::load(path, line_no, "empty context"));
        }
        if fields[2].trim().is_empty() {
            return Err(Error::load(path, line_no, "empty response"));
        }
        let texts: Vec<&str> = fields[1].split(EOT_DELIMITER).map(str::trim).collect();
        let context = Dialogue::new(format!("pair-{line_no}"), &texts)
            .map_err(|e| Error::load(path, line_no, strip_prefix(e)))?;
        let pair = LabeledPair::new(context, fields[2], label)
            .map_err(|e| Error::load(path, line_no, strip_prefix(e)))?;
        pairs.push(pair);
    }
    Ok(pairs)
}

fn strip_prefix(e: Error) -> String {
    match e {
        Error::Corpus(m) => m,
        other => other.to_string(),
    }
}

pub fn write_pairs_tsv(pairs: &[LabeledPair], mut out: impl Write) -> std::io::Result<()> {
    for p in pairs {
        writeln!(
            out,
            "{}\t{}\t{}",
            p.label,
            p.context.texts().join(EOT_DELIMITER),
            p.response.text
        )?;
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct DialogueRecord {
    id: String,
    utterances: Vec<String>,
}

pub fn load_dialogues_jsonl(path: impl AsRef<Path>) -> Result<Vec<Dialogue>> {
    let path = path.as_ref();
    parse_dialogues_jsonl(&read_lines(path)?, path)
}

pub fn parse_dialogues_jsonl(contents: &str, path: &Path) -> Result<Vec<Dialogue>> {
    let mut out = Vec::new();
    let mut ids = HashMap::new();
    for (i, raw) in contents.lines().enumerate() {
        let line_no = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let rec: DialogueRecord = serde_json::from_str(raw)
            .map_err(|_| Error::load(path, line_no, "invalid JSON"))?;
        if rec.utterances.is_empty() {
            return Err(Error::load(path, line_no, "empty dialogue"));
        }
        if ids.insert(rec.id.clone(), ()).is_some() {
            return Err(Error::load(path, line_no, format!("duplicate id {:?}", rec.id)));
        }
        let d = Dialogue::new(rec.id, &rec.utterances)
            .map_err(|e| Error::load(path, line_no, strip_prefix(e)))?;
        out.push(d);
    }
    Ok(out)
}

pub fn write_dialogues_jsonl(dialogues: &[Dialogue], mut out: impl Write) -> std::io::Result<()> {
    for d in dialogues {
        let rec = DialogueRecord {
            id: d.id.clone(),
            utterances: d.texts().into_iter().map(String::from).collect(),
        };
        let line = serde_json::to_string(&rec).map_err(std::io::Error::other)?;
        writeln!(out, "{line}")?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub dialogues: usize,
    /// turns per dialogue -> dialogue count
    pub turn_histogram: BTreeMap<usize, usize>,
    /// total context tokens -> dialogue count
    pub token_length_histogram: BTreeMap<usize, usize>,
    pub positives: usize,
    pub negatives: usize,
    pub positive_ratio: Option<f64>,
}

pub fn corpus_stats(dialogues: &[Dialogue]) -> Result<CorpusStats> {
    if dialogues.is_empty() {
        return Err(Error::Corpus("empty corpus".into()));
    }
    let mut turn_histogram = BTreeMap::new();
    let mut token_length_histogram = BTreeMap::new();
    for d in dialogues {
        *turn_histogram.entry(d.len()).or_insert(0) += 1;
        *token_length_histogram.entry(d.token_count()).or_insert(0) += 1;
    }
    Ok(CorpusStats {
        dialogues: dialogues.len(),
        turn_histogram,
        token_length_histogram,
        positives: 0,
        negatives: 0,
        positive_ratio: None,
    })
}

/// Stats over pair contexts plus the label balance.
pub fn pair_stats(pairs: &[LabeledPair]) -> Result<CorpusStats> {
    let contexts: Vec<Dialogue> = pairs.iter().map(|p| p.context.clone()).collect();
    let mut stats = corpus_stats(&contexts)?;
    stats.positives = pairs.iter().filter(|p| p.is_positive()).count();
    stats.negatives = pairs.len() - stats.positives;
    stats.positive_ratio = Some(stats.positives as f64 / pairs.len() as f64);
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tsv(s: &str) -> Result<Vec<LabeledPair>> {
        parse_pairs_tsv(s, Path::new("t.tsv"))
    }

    fn jsonl(s: &str) -> Result<Vec<Dialogue>> {
        parse_dialogues_jsonl(s, Path::new("d.jsonl"))
    }

    #[test]
    fn parses_pair_line() {
        let pairs = tsv("1\thi there__eot__hello\tgood to see you\n").unwrap();
        assert_eq!(pairs.len(), 1);
        assert_eq!(pairs[0].label, 1);
        assert_eq!(pairs[0].context.len(), 2);
        assert_eq!(pairs[0].context.utterances[0].text, "hi there");
        assert_eq!(pairs[0].response.text, "good to see you");

        let pairs = tsv("0\tfoo\tbar").unwrap();
        assert_eq!(pairs[0].label, 0);
        assert_eq!(pairs[0].context.len(), 1);
    }

    #[test]
    fn rejects_bad_label_with_line_number() {
        let err = tsv("2\tfoo\tbar").unwrap_err().to_string();
        assert!(err.contains("invalid label at line 1"), "{err}");
        let err = tsv("1\ta\tb\n1\ta\tb\tc").unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");
    }

    #[test]
    fn rejects_empty_fields_and_utterances() {
        assert!(tsv("1\t \tb").unwrap_err().to_string().contains("empty context"));
        assert!(tsv("1\ta\t  ").unwrap_err().to_string().contains("empty response"));
        let err = tsv("1\ta__eot__ __eot__c\tb").unwrap_err().to_string();
        assert!(err.contains("empty utterance"), "{err}");
    }

    #[test]
    fn parses_dialogue_jsonl() {
        let ds = jsonl(r#"{"id":"d1","utterances":["a","b","c"]}"#).unwrap();
        let speakers: Vec<Speaker> = ds[0].utterances.iter().map(|u| u.speaker).collect();
        assert_eq!(speakers, vec![Speaker::A, Speaker::B, Speaker::A]);

        let err = jsonl(r#"{"id":"d2","utterances":[]}"#).unwrap_err().to_string();
        assert!(err.contains("empty dialogue"), "{err}");
        let err = jsonl("not json").unwrap_err().to_string();
        assert!(err.contains("invalid JSON at line 1"), "{err}");
        let err = jsonl(r#"{"id":"d3","utterances":["a",""]}"#).unwrap_err().to_string();
        assert!(err.contains("empty utterance"), "{err}");
    }

    #[test]
    fn round_trips_canonical_files() {
        let src = "1\thi there__eot__hello\tgood to see you\n0\tfoo\tbar\n";
        let mut out = Vec::new();
        write_pairs_tsv(&tsv(src).unwrap(), &mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), src);

        let src = "{\"id\":\"d1\",\"utterances\":[\"a b\",\"c\"]}\n";
        let mut out = Vec::new();
        write_dialogues_jsonl(&jsonl(src).unwrap(), &mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), src);
    }

    #[test]
    fn stats_histograms() {
        let ds = vec![
            Dialogue::new("a", &["x", "y"]).unwrap(),
            Dialogue::new("b", &["x", "y", "z", "w"]).unwrap(),
        ];
        let s = corpus_stats(&ds).unwrap();
        assert_eq!(s.turn_histogram, BTreeMap::from([(2, 1), (4, 1)]));
        assert_eq!(corpus_stats(&ds[..1]).unwrap().dialogues, 1);
        assert!(corpus_stats(&[]).is_err());
    }

    #[test]
    fn sample_other_excludes_current() {
        let corpus = Corpus::new(vec![
            Dialogue::new("d1", &["a"]).unwrap(),
            Dialogue::new("d2", &["b"]).unwrap(),
        ])
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            assert_eq!(corpus.sample_other("d1", &mut rng).unwrap().id, "d2");
        }
        let single = Corpus::new(vec![Dialogue::new("d1", &["a"]).unwrap()]).unwrap();
        let err = single.sample_other("d1", &mut rng).unwrap_err().to_string();
        assert!(err.contains("no replacement source"));
    }

    #[test]
    fn duplicate_ids_rejected() {
        let d = Dialogue::new("x", &["a"]).unwrap();
        assert!(Corpus::new(vec![d.clone(), d]).is_err());
    }
}
