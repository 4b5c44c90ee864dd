//! Candidate ranking and `R_n@k` recall metrics.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{Dialogue, LabeledPair, Utterance, EOT_DELIMITER};
use crate::error::{Error, Result};
use crate::model::MatcherModel;
use crate::taskgen::PackConfig;
use crate::tokenizer::{pack_context_response, Vocab};

/// One context with its candidate responses, exactly one of them positive.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateGroup {
    pub context: Dialogue,
    pub candidates: Vec<Utterance>,
    pub labels: Vec<u8>,
}

impl CandidateGroup {
    pub fn new(context: Dialogue, candidates: Vec<Utterance>, labels: Vec<u8>) -> Result<Self> {
        if candidates.is_empty() || candidates.len() != labels.len() {
            return Err(Error::Eval("candidate group needs matching candidates and labels".into()));
        }
        let positives = labels.iter().filter(|&&l| l == 1).count();
        if positives != 1 {
            return Err(Error::Eval(format!(
                "group {:?} has {positives} positives, expected exactly 1",
                context.id
            )));
        }
        Ok(CandidateGroup {
            context,
            candidates,
            labels,
        })
    }

    pub fn positive_index(&self) -> usize {
        self.labels.iter().position(|&l| l == 1).expect("validated")
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }
}

/// Groups consecutive pairs that share the same context text.
pub fn group_pairs(pairs: &[LabeledPair]) -> Result<Vec<CandidateGroup>> {
    let key = |p: &LabeledPair| p.context.texts().join(EOT_DELIMITER);
    let mut groups = Vec::new();
    let mut i = 0;
    while i < pairs.len() {
        let k = key(&pairs[i]);
        let mut j = i + 1;
        while j < pairs.len() && key(&pairs[j]) == k {
            j += 1;
        }
        let chunk = &pairs[i..j];
        groups.push(CandidateGroup::new(
            chunk[0].context.clone(),
            chunk.iter().map(|p| p.response.clone()).collect(),
            chunk.iter().map(|p| p.label).collect(),
        )?);
        i = j;
    }
    Ok(groups)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingResult {
    pub context_id: String,
    pub scores: Vec<f64>,
    pub positive_index: usize,
    pub turns: usize,
    /// Context tokens before truncation.
    pub tokens: usize,
}

impl RankingResult {
    pub fn n(&self) -> usize {
        self.scores.len()
    }

    /// 1-based rank of the positive. Ties go to the earlier candidate.
    pub fn rank(&self) -> usize {
        let p = self.positive_index;
        let sp = self.scores[p];
        1 + self
            .scores
            .iter()
            .enumerate()
            .filter(|&(j, &s)| s > sp || (s == sp && j < p))
            .count()
    }
}

/// Scores every candidate of `group` with the matching head.
///
/// Candidates are padded to a common length before scoring; padding is
/// masked, so scores equal unpadded one-at-a-time scoring.
pub fn rank_group(
    model: &MatcherModel,
    vocab: &Vocab,
    pack: &PackConfig,
    group: &CandidateGroup,
) -> Result<RankingResult> {
    let packed = group
        .candidates
        .iter()
        .map(|c| pack_context_response(&group.context, c, vocab, pack.max_ctx, pack.max_resp))
        .collect::<Result<Vec<_>>>()?;
    let width = packed.iter().map(|p| p.len()).max().unwrap_or(0);
    let padded: Vec<_> = packed.iter().map(|p| p.padded(width)).collect();
    let scores = model.score_sequences(&padded)?;
    Ok(RankingResult {
        context_id: group.context.id.clone(),
        scores,
        positive_index: group.positive_index(),
        turns: group.context.len(),
        tokens: group.context.token_count(),
    })
}

pub fn rank_groups(
    model: &MatcherModel,
    vocab: &Vocab,
    pack: &PackConfig,
    groups: &[CandidateGroup],
) -> Result<Vec<RankingResult>> {
    groups.iter().map(|g| rank_group(model, vocab, pack, g)).collect()
}

/// Fraction of groups whose positive ranks within the top `k` of `n`.
pub fn recall_at_k(results: &[RankingResult], n: usize, k: usize) -> Result<f64> {
    if results.is_empty() {
        return Err(Error::Eval("no groups".into()));
    }
    if k == 0 || k > n {
        return Err(Error::Eval(format!("k={k} outside 1..={n}")));
    }
    if let Some(bad) = results.iter().find(|r| r.n() != n) {
        return Err(Error::Eval(format!(
            "mixed group sizes: expected {n} candidates, group {:?} has {}",
            bad.context_id,
            bad.n()
        )));
    }
    let hits = results.iter().filter(|r| r.rank() <= k).count();
    Ok(hits as f64 / results.len() as f64)
}

/// The four standard recall figures, computed over the groups whose size
/// matches each metric.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    #[serde(rename = "R_2@1")]
    pub r2_at_1: Option<f64>,
    #[serde(rename = "R_10@1")]
    pub r10_at_1: Option<f64>,
    #[serde(rename = "R_10@2")]
    pub r10_at_2: Option<f64>,
    #[serde(rename = "R_10@5")]
    pub r10_at_5: Option<f64>,
    /// metric name -> number of groups it was computed over
    pub groups: BTreeMap<String, usize>,
}

impl MetricReport {
    pub fn from_results(results: &[RankingResult]) -> Result<Self> {
        let of_size = |n: usize| -> Vec<RankingResult> {
            results.iter().filter(|r| r.n() == n).cloned().collect()
        };
        let mut report = MetricReport::default();
        let two = of_size(2);
        if !two.is_empty() {
            report.r2_at_1 = Some(recall_at_k(&two, 2, 1)?);
            report.groups.insert("R_2@1".into(), two.len());
        }
        let ten = of_size(10);
        if !ten.is_empty() {
            report.r10_at_1 = Some(recall_at_k(&ten, 10, 1)?);
            report.r10_at_2 = Some(recall_at_k(&ten, 10, 2)?);
            report.r10_at_5 = Some(recall_at_k(&ten, 10, 5)?);
            for k in ["R_10@1", "R_10@2", "R_10@5"] {
                report.groups.insert(k.into(), ten.len());
            }
        }
        Ok(report)
    }

    pub fn entries(&self) -> [(&'static str, Option<f64>); 4] {
        [
            ("R_2@1", self.r2_at_1),
            ("R_10@1", self.r10_at_1),
            ("R_10@2", self.r10_at_2),
            ("R_10@5", self.r10_at_5),
        ]
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<8} {:>8} {:>8}", "metric", "value", "groups");
        for (name, v) in self.entries() {
            let value = v.map_or("n/a".to_string(), |v| format!("{v:.4}"));
            let groups = self.groups.get(name).copied().unwrap_or(0);
            let _ = writeln!(out, "{name:<8} {value:>8} {groups:>8}");
        }
        out
    }
}

/// Primary validation metric: `R_10@1` when 10-candidate groups exist,
/// else `R_2@1`.
pub fn selection_metric(results: &[RankingResult]) -> Result<(&'static str, f64)> {
    let report = MetricReport::from_results(results)?;
    match (report.r10_at_1, report.r2_at_1) {
        (Some(v), _) => Ok(("R_10@1", v)),
        (None, Some(v)) => Ok(("R_2@1", v)),
        _ => Err(Error::Eval("validation needs groups of 10 or 2 candidates".into())),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LengthMode {
    Turns,
    Tokens,
}

impl FromStr for LengthMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "turns" => Ok(LengthMode::Turns),
            "tokens" => Ok(LengthMode::Tokens),
            other => Err(Error::Config(format!("unknown length mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketReport {
    /// inclusive
    pub lo: usize,
    /// exclusive
    pub hi: usize,
    pub groups: usize,
    /// `None` when the bucket is empty.
    pub report: Option<MetricReport>,
}

/// Partitions groups into `[edges[i], edges[i+1])` buckets by context length
/// and reports recall per bucket. Groups outside every bucket are dropped.
pub fn length_breakdown(
    results: &[RankingResult],
    mode: LengthMode,
    edges: &[usize],
) -> Result<Vec<BucketReport>> {
    if edges.len() < 2 {
        return Err(Error::Eval("need at least two bucket edges".into()));
    }
    if edges.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Eval(format!("bucket edges {edges:?} must be strictly increasing")));
    }
    edges
        .windows(2)
        .map(|w| {
            let (lo, hi) = (w[0], w[1]);
            let members: Vec<RankingResult> = results
                .iter()
                .filter(|r| {
                    let len = match mode {
                        LengthMode::Turns => r.turns,
                        LengthMode::Tokens => r.tokens,
                    };
                    (lo..hi).contains(&len)
                })
                .cloned()
                .collect();
            let report = if members.is_empty() {
                None
            } else {
                Some(MetricReport::from_results(&members)?)
            };
            Ok(BucketReport {
                lo,
                hi,
                groups: members.len(),
                report,
            })
        })
        .collect()
}

pub fn breakdown_csv(buckets: &[BucketReport]) -> String {
    let mut out = String::from("lo,hi,groups,R_2@1,R_10@1,R_10@2,R_10@5\n");
    for b in buckets {
        let cells: Vec<String> = match &b.report {
            None => vec!["n/a".into(); 4],
            Some(r) => r
                .entries()
                .iter()
                .map(|(_, v)| v.map_or(String::new(), |v| format!("{v}")))
                .collect(),
        };
        let _ = writeln!(out, "{},{},{},{}", b.lo, b.hi, b.groups, cells.join(","));
    }
    out
}
