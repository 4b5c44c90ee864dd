//! Joint training loop with validation-driven model selection.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, LabeledPair};
use crate::error::{Error, Result};
use crate::eval::{rank_groups, selection_metric, CandidateGroup};
use crate::model::{batch_loss, DropoutStreams, LossBundle, MatcherModel};
use crate::numerics::{adam_step, AdamConfig, AdamState, ParamStore, Session, Tape};
use crate::seeding::stream;
use crate::taskgen::{make_training_batch, PackConfig, TaskRngs, TaskSet};
use crate::tokenizer::Vocab;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub alpha: f64,
    pub delta: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Stop after this many optimizer steps even mid-epoch.
    pub max_steps: Option<u64>,
    /// Validations without improvement before stopping.
    pub patience: usize,
    /// Validate every this many steps; end of epoch when `None`.
    pub eval_interval: Option<u64>,
    pub seed: u64,
    pub tasks: TaskSet,
    pub pack: PackConfig,
    /// Fail on the first non-finite kernel output instead of at the loss.
    pub checked: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            alpha: 1.0,
            delta: 0.6,
            lr: 1e-3,
            batch_size: 32,
            max_epochs: 10,
            max_steps: None,
            patience: 3,
            eval_interval: None,
            seed: 0,
            tasks: TaskSet::all(),
            pack: PackConfig::default(),
            checked: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!("alpha must be a finite non-negative number, got {}", self.alpha)));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if self.patience == 0 {
            return Err(Error::Config("patience must be at least 1".into()));
        }
        if self.eval_interval == Some(0) {
            return Err(Error::Config("eval_interval must be positive".into()));
        }
        Ok(())
    }

    /// Tasks actually generated: none at all when `alpha` is zero.
    pub fn effective_tasks(&self) -> TaskSet {
        if self.alpha == 0.0 {
            TaskSet::none()
        } else {
            self.tasks
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub epoch: usize,
    pub losses: LossBundle,
    pub skipped: usize,
    pub clamp_events: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationRecord {
    pub step: u64,
    pub epoch: usize,
    pub metric: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LogEvent {
    Step(StepRecord),
    Validation(ValidationRecord),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub events: Vec<LogEvent>,
    /// Index into `validations()` of the selected checkpoint.
    pub best: Option<usize>,
    pub stopped_early: bool,
}

#[derive(Serialize)]
struct Summary<'a> {
    kind: &'static str,
    best_step: Option<u64>,
    best_value: Option<f64>,
    metric: Option<&'a str>,
    stopped_early: bool,
    steps: usize,
}

impl TrainLog {
    pub fn steps(&self) -> impl Iterator<Item = &StepRecord> {
        self.events.iter().filter_map(|e| match e {
            LogEvent::Step(s) => Some(s),
            _ => None,
        })
    }

    pub fn validations(&self) -> Vec<&ValidationRecord> {
        self.events
            .iter()
            .filter_map(|e| match e {
                LogEvent::Validation(v) => Some(v),
                _ => None,
            })
            .collect()
    }

    pub fn best_validation(&self) -> Option<&ValidationRecord> {
        self.best.map(|i| self.validations()[i])
    }

    /// One JSON object per event, then a closing summary line.
    pub fn write_jsonl(&self, mut out: impl Write) -> Result<()> {
        let io = |e| Error::io("training log", e);
        for e in &self.events {
            serde_json::to_writer(&mut out, e)?;
            out.write_all(b"\n").map_err(io)?;
        }
        let best = self.best_validation();
        let summary = Summary {
            kind: "summary",
            best_step: best.map(|v| v.step),
            best_value: best.map(|v| v.value),
            metric: best.map(|v| v.metric.as_str()),
            stopped_early: self.stopped_early,
            steps: self.steps().count(),
        };
        serde_json::to_writer(&mut out, &summary)?;
        out.write_all(b"\n").map_err(io)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.write_jsonl(&mut w)?;
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// True once the last `patience` values all fail to beat the best value
/// seen before them.
pub fn early_stop_check(history: &[f64], patience: usize) -> bool {
    if patience == 0 || history.len() <= patience {
        return false;
    }
    let split = history.len() - patience;
    let best = history[..split].iter().copied().fold(f64::NEG_INFINITY, f64::max);
    history[split..].iter().all(|&v| v <= best)
}

/// Outcome of [`train`]: the model restored to its best validation point.
pub struct Trained {
    pub model: MatcherModel,
    pub log: TrainLog,
}

/// Trains `model` and returns it with the parameters of its best
/// validation checkpoint.
pub fn train(
    model: MatcherModel,
    vocab: &Vocab,
    train_pairs: &[LabeledPair],
    corpus: &Corpus,
    valid: &[CandidateGroup],
    config: &TrainConfig,
) -> Result<Trained> {
    train_with(model, vocab, train_pairs, corpus, valid, config, |_| {})
}

/// [`train`] with a callback invoked on every logged event.
pub fn train_with(
    mut model: MatcherModel,
    vocab: &Vocab,
    train_pairs: &[LabeledPair],
    corpus: &Corpus,
    valid: &[CandidateGroup],
    config: &TrainConfig,
    mut observe: impl FnMut(&LogEvent),
) -> Result<Trained> {
    config.validate()?;
    if train_pairs.is_empty() {
        return Err(Error::Training("no training pairs".into()));
    }
    if valid.is_empty() {
        return Err(Error::Training("no validation groups".into()));
    }
    let tasks = config.effective_tasks();
    let adam_config = AdamConfig {
        lr: config.lr,
        ..AdamConfig::default()
    };
    let mut adam = AdamState::new(&model.params, adam_config);
    let mut log = TrainLog::default();
    let mut history: Vec<f64> = Vec::new();
    let mut best_params: Option<ParamStore> = None;
    let mut step: u64 = 0;
    let mut last_validated: Option<u64> = None;

    let mut validate = |model: &MatcherModel, log: &mut TrainLog, step: u64, epoch: usize| -> Result<bool> {
        let results = rank_groups(model, vocab, &config.pack, valid)?;
        let (metric, value) = selection_metric(&results)?;
        let improved = history.iter().all(|&h| value > h);
        history.push(value);
        if improved {
            best_params = Some(model.params.clone());
            log.best = Some(history.len() - 1);
        }
        log.events.push(LogEvent::Validation(ValidationRecord {
            step,
            epoch,
            metric: metric.to_string(),
            value,
        }));
        Ok(early_stop_check(&history, config.patience))
    };

    let mut order: Vec<usize> = (0..train_pairs.len()).collect();
    'epochs: for epoch in 0..config.max_epochs {
        order.shuffle(&mut stream(config.seed, &[0x5bff, epoch as u64]));
        for chunk in order.chunks(config.batch_size) {
            step += 1;
            let pairs: Vec<LabeledPair> = chunk.iter().map(|&i| train_pairs[i].clone()).collect();
            let mut rngs = TaskRngs::new(config.seed, step);
            let batch = make_training_batch(&pairs, corpus, &mut rngs, vocab, tasks, &config.pack)?;
            let mut dropout = DropoutStreams::new(config.seed, step);
            let tape = if config.checked { Tape::checked() } else { Tape::new() };
            let mut session = Session::new(&model.params, tape);
            let streams = (model.config.dropout > 0.0).then_some(&mut dropout);
            let (loss, losses) = batch_loss(&model, &mut session, &batch, config.alpha, config.delta, streams)
                .map_err(|e| Error::Training(format!("step {step}: {e}")))?;
            if !losses.is_finite() {
                return Err(Error::Training(format!("non-finite loss at step {step}: {losses:?}")));
            }
            let grads = session.param_grads(loss)?;
            if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
                return Err(Error::Training(format!(
                    "non-finite gradient for {} at step {step}: {losses:?}",
                    model.params.name(model.params.ids().nth(i).expect("aligned"))
                )));
            }
            let clamp_events = session.tape.clamp_events();
            drop(session);
            adam_step(&mut model.params, &grads, &mut adam)?;

            let event = LogEvent::Step(StepRecord {
                step,
                epoch,
                losses,
                skipped: batch.skipped.len(),
                clamp_events,
            });
            observe(&event);
            log.events.push(event);

            let at_interval = config.eval_interval.is_some_and(|n| step.is_multiple_of(n));
            let at_limit = config.max_steps.is_some_and(|n| step >= n);
            if at_interval || at_limit {
                last_validated = Some(step);
                let stop = validate(&model, &mut log, step, epoch)?;
                observe(log.events.last().expect("just pushed"));
                if stop {
                    log.stopped_early = true;
                    break 'epochs;
                }
            }
            if at_limit {
                break 'epochs;
            }
        }
        if config.eval_interval.is_none() && last_validated != Some(step) {
            last_validated = Some(step);
            let stop = validate(&model, &mut log, step, epoch)?;
            observe(log.events.last().expect("just pushed"));
            if stop {
                log.stopped_early = true;
                break;
            }
        }
    }
    if last_validated != Some(step) {
        validate(&model, &mut log, step, config.max_epochs.saturating_sub(1))?;
        observe(log.events.last().expect("just pushed"));
    }
    if let Some(best) = best_params {
        model.params = best;
    }
    Ok(Trained { model, log })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn early_stopping_examples() {
        assert!(early_stop_check(&[0.5, 0.6, 0.55, 0.54, 0.53], 3));
        assert!(!early_stop_check(&[0.5, 0.6, 0.55, 0.54], 3));
        assert!(!early_stop_check(&[0.5, 0.6, 0.55, 0.61, 0.53], 3));
        assert!(early_stop_check(&[0.5, 0.49], 1));
        assert!(early_stop_check(&[0.5, 0.5], 1));
        assert!(!early_stop_check(&[0.5, 0.51], 1));
        assert!(!early_stop_check(&[], 1));
    }

    #[test]
    fn zero_alpha_disables_generation() {
        let c = TrainConfig {
            alpha: 0.0,
            ..TrainConfig::default()
        };
        assert!(c.effective_tasks().is_empty());
        assert_eq!(TrainConfig::default().effective_tasks(), TaskSet::all());
    }

    #[test]
    fn config_validation() {
        let bad = TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            alpha: f64::NAN,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn log_lines_are_tagged() {
        let log = TrainLog {
            events: vec![LogEvent::Validation(ValidationRecord {
                step: 3,
                epoch: 0,
                metric: "R_2@1".into(),
                value: 0.75,
            })],
            best: Some(0),
            stopped_early: false,
        };
        let mut buf = Vec::new();
        log.write_jsonl(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<serde_json::Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(lines[0]["kind"], "validation");
        assert_eq!(lines[1]["kind"], "summary");
        assert_eq!(lines[1]["best_step"], 3);
    }
}
