//! Human-in-the-loop annotation session.
//!
//! A session is one [`Learner`] whose oracle is a person. The phase machine is
//!
//! ```text
//! Idle --next_batch--> Training --> AwaitingLabels --submit_labels--> Idle
//!                                                                  \-> Finished
//! ```
//!
//! Sessions are plain data: they serialise to a single JSON document and can
//! be restored from it. The dataset itself is referenced by path.

use std::collections::{BTreeMap, HashSet};
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::acquisition::ConfidenceScore;
use crate::data::{self, Dataset};
use crate::engine::{AlConfig, Learner, RoundRecord, StagedRound};
use crate::error::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Idle,
    Training,
    AwaitingLabels,
    Finished,
}

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("session is {actual:?}, expected {expected:?}")]
    WrongPhase { expected: Phase, actual: Phase },
    #[error("the unlabeled pool is exhausted")]
    PoolExhausted,
    #[error("sample {0} is not part of the pending batch")]
    UnknownSample(u64),
    #[error("submission is missing labels for {missing} pending samples")]
    PartialBatch { missing: usize },
    #[error("class index {class} is invalid for {num_classes} classes")]
    InvalidClass { class: usize, num_classes: usize },
    #[error(transparent)]
    Engine(#[from] Error),
}

/// Where a session's samples come from and how they are split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRef {
    pub path: PathBuf,
    /// Optional class names overriding the dataset vocabulary.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classes: Option<Vec<String>>,
}

/// Train/test views of a session's dataset.
#[derive(Debug, Clone)]
pub struct SessionData {
    pub train: Dataset,
    pub test: Dataset,
}

impl SessionData {
    pub fn load(dataset: &DatasetRef, config: &AlConfig) -> Result<Self, Error> {
        let mut full = Dataset::load(&dataset.path)?;
        if let Some(classes) = &dataset.classes {
            full = full.with_classes(classes.clone())?;
        }
        let (train, test) = data::split(&full, config.test_fraction, config.split_seed)?;
        if test.examples().is_empty() {
            return Err(Error::Schema(
                "the test split has no labelled samples".into(),
            ));
        }
        Ok(SessionData { train, test })
    }
}

/// A staged batch sample as shown to an annotator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchItem {
    pub id: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub payload: Option<String>,
    pub score: f64,
    /// Per-class sigmoid outputs of the current model.
    pub probs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub id: String,
    pub dataset: DatasetRef,
    pub phase: Phase,
    pub learner: Learner,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pending: Option<StagedRound>,
}

impl Session {
    pub fn create(
        id: String,
        config: &AlConfig,
        dataset: DatasetRef,
        seed: u64,
        data: &SessionData,
    ) -> Result<Self, Error> {
        let learner = Learner::new(config, &data.train, seed)?;
        Ok(Session {
            id,
            dataset,
            phase: Phase::Idle,
            learner,
            pending: None,
        })
    }

    pub fn history(&self) -> &[RoundRecord] {
        &self.learner.history
    }

    pub fn classes<'a>(&self, data: &'a SessionData) -> &'a [String] {
        data.train.classes()
    }

    fn expect_phase(&self, expected: Phase) -> Result<(), SessionError> {
        if self.phase == expected {
            Ok(())
        } else {
            Err(SessionError::WrongPhase {
                expected,
                actual: self.phase,
            })
        }
    }

    /// Phase guard for [`Session::next_batch`]; moves an idle session into `Training`.
    pub fn begin_batch(&mut self) -> Result<(), SessionError> {
        if self.phase == Phase::Finished {
            return Err(SessionError::PoolExhausted);
        }
        self.expect_phase(Phase::Idle)?;
        if self.learner.is_finished()
            || self.learner.pool.num_unlabeled() < self.learner.config.budget
        {
            self.phase = Phase::Finished;
            return Err(SessionError::PoolExhausted);
        }
        self.phase = Phase::Training;
        Ok(())
    }

    /// Trains if needed, scores the pool and stages the next batch.
    pub fn finish_batch(&mut self, data: &SessionData) -> Result<&StagedRound, SessionError> {
        self.expect_phase(Phase::Training)?;
        match self.learner.prepare_round(&data.train, &data.test) {
            Ok(staged) => {
                self.pending = Some(staged);
                self.phase = Phase::AwaitingLabels;
                Ok(self.pending.as_ref().expect("just staged"))
            }
            Err(e) => {
                self.phase = Phase::Idle;
                Err(e.into())
            }
        }
    }

    pub fn next_batch(&mut self, data: &SessionData) -> Result<&StagedRound, SessionError> {
        self.begin_batch()?;
        self.finish_batch(data)
    }

    /// Staged samples with payloads and current probabilities.
    pub fn pending_items(&self, data: &SessionData) -> Result<Vec<BatchItem>, SessionError> {
        self.expect_phase(Phase::AwaitingLabels)?;
        let staged = self
            .pending
            .as_ref()
            .expect("pending batch while awaiting labels");
        let scores: BTreeMap<u64, f64> = staged
            .scores
            .iter()
            .map(|&ConfidenceScore { sample_id, score }| (sample_id, score))
            .collect();
        staged
            .selected
            .iter()
            .map(|&id| {
                let s = data.train.get(id).ok_or(Error::UnknownId(id))?;
                Ok(BatchItem {
                    id,
                    payload: s.payload.clone(),
                    score: scores[&id],
                    probs: self.learner.model.probs(&s.features, &self.learner.hyper)?,
                })
            })
            .collect()
    }

    /// Records labels for the whole pending batch, or changes nothing.
    pub fn submit_labels(&mut self, labels: &[(u64, usize)]) -> Result<RoundRecord, SessionError> {
        self.expect_phase(Phase::AwaitingLabels)?;
        let staged = self
            .pending
            .as_ref()
            .expect("pending batch while awaiting labels");
        let expected: HashSet<u64> = staged.selected.iter().copied().collect();
        let mut given = HashSet::with_capacity(labels.len());
        for &(id, _) in labels {
            if !expected.contains(&id) || !given.insert(id) {
                return Err(SessionError::UnknownSample(id));
            }
        }
        if given.len() < expected.len() {
            return Err(SessionError::PartialBatch {
                missing: expected.len() - given.len(),
            });
        }
        let num_classes = self.learner.num_classes;
        if let Some(&(_, class)) = labels.iter().find(|(_, c)| *c >= num_classes) {
            return Err(SessionError::InvalidClass { class, num_classes });
        }
        let record = self.learner.commit_round(staged, labels)?;
        self.pending = None;
        self.phase = if self.learner.is_finished() {
            Phase::Finished
        } else {
            Phase::Idle
        };
        Ok(record)
    }

    /// A restored session never resumes mid-training; it goes back to `Idle`
    /// and the deterministic training step is simply redone.
    pub fn recover(mut self) -> Self {
        if self.phase == Phase::Training {
            self.phase = Phase::Idle;
        }
        self
    }

    pub fn to_json(&self) -> Result<String, Error> {
        Ok(serde_json::to_string(self)?)
    }

    /// Rejects deserialised sessions whose parts contradict each other.
    pub fn check(&self) -> Result<(), Error> {
        let consistent = match self.phase {
            Phase::AwaitingLabels => self.pending.is_some(),
            _ => self.pending.is_none(),
        };
        if !consistent {
            return Err(Error::Schema(
                "pending batch does not match the session phase".into(),
            ));
        }
        let pool = &self.learner.pool;
        if pool.labeled().iter().any(|&id| pool.is_unlabeled(id)) {
            return Err(Error::Schema(
                "a sample is both labeled and unlabeled".into(),
            ));
        }
        if !self.learner.model.is_finite() {
            return Err(Error::Schema("model parameters are not finite".into()));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, Error> {
        let s: Session = serde_json::from_str(text)?;
        s.check()?;
        Ok(s.recover())
    }
}
