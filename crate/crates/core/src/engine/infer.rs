use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::history::History;
use super::model::VipModel;
use crate::concept::LabeledDataset;
use crate::error::{Error, Result};
use crate::trajectory::{
    argmax, AnswerSource, RowSource, Step, StopReason, StopRule, TrajectoryRecord,
};

/// Temperature used by the querier at inference. Selection is the argmax,
/// which does not depend on it; it only shapes the reported soft scores.
pub const INFER_TAU: f64 = 0.2;

/// Incremental inference: the querier proposes, someone answers, the
/// predictor updates. Holds no reference to the model so it can live inside
/// long-running sessions.
#[derive(Debug, Clone, PartialEq)]
pub struct InferenceRun {
    rule: StopRule,
    history: History,
    steps: Vec<Step>,
    posterior: Vec<f64>,
    stopped: Option<StopReason>,
}

impl InferenceRun {
    pub fn new(model: &VipModel, rule: StopRule) -> Result<Self> {
        if rule.budget > model.n_queries() {
            return Err(Error::AllQueriesSelected);
        }
        let history = History::empty(model.n_queries());
        let posterior = model.predictor_forward(&history)?;
        let stopped = (rule.budget == 0).then_some(StopReason::Budget);
        Ok(InferenceRun {
            rule,
            history,
            steps: Vec::new(),
            posterior,
            stopped,
        })
    }

    /// Rebuild a run from recorded (query, answer) pairs, recomputing every
    /// posterior with the predictor. The stopping rule is applied only
    /// after the last pair.
    pub fn from_answers(
        model: &VipModel,
        rule: StopRule,
        answers: &[(usize, f64)],
    ) -> Result<Self> {
        let mut run = InferenceRun::new(model, rule)?;
        run.stopped = None;
        for &(q, a) in answers {
            run.push(model, q, a)?;
        }
        run.update_status();
        Ok(run)
    }

    pub fn rule(&self) -> StopRule {
        self.rule
    }

    pub fn history(&self) -> &History {
        &self.history
    }

    pub fn steps(&self) -> &[Step] {
        &self.steps
    }

    pub fn posterior(&self) -> &[f64] {
        &self.posterior
    }

    pub fn stop_reason(&self) -> Option<StopReason> {
        self.stopped
    }

    pub fn is_stopped(&self) -> bool {
        self.stopped.is_some()
    }

    pub fn prediction(&self) -> usize {
        argmax(&self.posterior)
    }

    /// The querier's next pick, or `None` once stopped.
    pub fn propose(&self, model: &VipModel) -> Result<Option<usize>> {
        if self.stopped.is_some() {
            return Ok(None);
        }
        Ok(Some(model.querier_forward(&self.history, INFER_TAU)?.index))
    }

    /// Answer the proposed query and apply the stopping rule.
    pub fn answer(&mut self, model: &VipModel, answer: f64) -> Result<usize> {
        let query = self
            .propose(model)?
            .ok_or_else(|| Error::invalid("run has already stopped"))?;
        self.push(model, query, answer)?;
        self.update_status();
        Ok(query)
    }

    /// Ask the proposed query of `source` and record the answer.
    pub fn step(
        &mut self,
        model: &VipModel,
        source: &mut dyn AnswerSource,
    ) -> Result<Option<usize>> {
        let Some(query) = self.propose(model)? else {
            return Ok(None);
        };
        let answer = source.answer(query)?;
        self.push(model, query, answer)?;
        self.update_status();
        Ok(Some(query))
    }

    fn push(&mut self, model: &VipModel, query: usize, answer: f64) -> Result<()> {
        if !answer.is_finite() {
            return Err(Error::invalid(format!("answer {answer} is not finite")));
        }
        self.history.add(query, answer)?;
        self.posterior = model.predictor_forward(&self.history)?;
        self.steps.push(Step {
            query,
            answer,
            posterior: self.posterior.clone(),
        });
        Ok(())
    }

    fn update_status(&mut self) {
        if self.steps.is_empty() && self.rule.budget > 0 {
            self.stopped = None;
        } else if self.rule.reached(&self.posterior) {
            self.stopped = Some(StopReason::Threshold);
        } else if self.steps.len() >= self.rule.budget || self.history.is_full() {
            self.stopped = Some(StopReason::Budget);
        } else {
            self.stopped = None;
        }
    }

    pub fn record(&self) -> TrajectoryRecord {
        TrajectoryRecord {
            steps: self.steps.clone(),
            stop_reason: self.stopped.unwrap_or(StopReason::Budget),
            prediction: self.prediction(),
        }
    }
}

/// Run the querier/predictor loop until the stopping rule fires. The rule
/// is checked after every answer, so at least one query is asked whenever
/// the budget allows.
pub fn infer(
    model: &VipModel,
    source: &mut dyn AnswerSource,
    rule: StopRule,
) -> Result<TrajectoryRecord> {
    let mut run = InferenceRun::new(model, rule)?;
    while run.step(model, source)?.is_some() {}
    Ok(run.record())
}

/// Trajectories for every sample of a split, in sample order.
pub fn infer_dataset(
    model: &VipModel,
    data: &LabeledDataset,
    rule: StopRule,
) -> Result<Vec<TrajectoryRecord>> {
    (0..data.len())
        .into_par_iter()
        .map(|i| infer(model, &mut RowSource(data.answers.row(i)), rule))
        .collect()
}

/// How an intervention continues after the edited step.
pub enum Intervention<'a> {
    /// Keep the recorded query sequence and recompute every posterior.
    Reanswer,
    /// Drop everything after the edited step and let the querier resume,
    /// drawing further answers from the source.
    Replay(&'a mut dyn AnswerSource),
}

/// Substitute `new_answer` at `step` of a recorded trajectory.
pub fn intervene(
    model: &VipModel,
    record: &TrajectoryRecord,
    step: usize,
    new_answer: f64,
    rule: StopRule,
    mode: Intervention<'_>,
) -> Result<TrajectoryRecord> {
    if step >= record.len() {
        return Err(Error::IndexOutOfRange {
            index: step,
            len: record.len(),
        });
    }
    let mut answers: Vec<(usize, f64)> = record.steps.iter().map(|s| (s.query, s.answer)).collect();
    answers[step].1 = new_answer;
    match mode {
        Intervention::Reanswer => {
            let budget = rule.budget.max(answers.len());
            let run =
                InferenceRun::from_answers(model, StopRule::new(rule.threshold, budget), &answers)?;
            Ok(run.record())
        }
        Intervention::Replay(source) => {
            answers.truncate(step + 1);
            let mut run = InferenceRun::from_answers(model, rule, &answers)?;
            while run.step(model, source)?.is_some() {}
            Ok(run.record())
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TradeoffPoint {
    pub threshold: f64,
    pub avg_queries: f64,
    pub accuracy: f64,
}

/// Accuracy and mean trajectory length for a summary of trajectories.
pub fn summarize(trajectories: &[TrajectoryRecord], labels: &[usize]) -> (f64, f64) {
    let n = trajectories.len().max(1) as f64;
    let correct = trajectories
        .iter()
        .zip(labels)
        .filter(|(t, &y)| t.prediction == y)
        .count();
    let lengths: usize = trajectories.iter().map(TrajectoryRecord::len).sum();
    (correct as f64 / n, lengths as f64 / n)
}

/// Run inference on every sample at each threshold. `budget` defaults to
/// the full query set.
pub fn sweep_tradeoff(
    model: &VipModel,
    data: &LabeledDataset,
    thresholds: &[f64],
    budget: Option<usize>,
) -> Result<Vec<TradeoffPoint>> {
    let budget = budget.unwrap_or(model.n_queries());
    thresholds
        .iter()
        .map(|&threshold| {
            let ts = infer_dataset(model, data, StopRule::new(threshold, budget))?;
            let (accuracy, avg_queries) = summarize(&ts, &data.labels);
            Ok(TradeoffPoint {
                threshold,
                avg_queries,
                accuracy,
            })
        })
        .collect()
}

pub fn write_tradeoff_csv(points: &[TradeoffPoint], out: impl std::io::Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for p in points {
        w.serialize(p)?;
    }
    w.flush()?;
    Ok(())
}
