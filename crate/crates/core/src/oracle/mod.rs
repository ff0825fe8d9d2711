//! The black-box classifier abstraction and exact query accounting.
//!
//! Attack code only ever holds a [`QueryGate`], which exposes the top-1
//! label and score. Full probability vectors are reachable through
//! [`WhiteBox`], a port reserved for training and invariant checks.

mod dataset;
mod toy;

pub use dataset::{
    export_dataset, generate_dataset, load_manifest, scene_tone, ClassSpec, Direction, Sample, Shape,
    SyntheticDataset, CLASS_COUNT, SAMPLE_DIMS,
};
pub use toy::{
    train_classifier, FeatureExtractor, LinearSoftmax, ToyClassifier, TrainedModel, FILTER_COUNT,
};

use serde::{Deserialize, Serialize};

use crate::error::{LsfError, Result};
use crate::video::{LabelScore, VideoTensor};

/// What an attacker observes from one query.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleResponse {
    pub top1: LabelScore,
}

/// A classifier that reveals only its top-1 decision.
pub trait BlackBox: Sync {
    fn top1(&self, video: &VideoTensor) -> OracleResponse;
    fn class_count(&self) -> usize;
}

/// Test-only access to the full softmax output.
pub trait WhiteBox {
    fn probabilities(&self, video: &VideoTensor) -> Vec<f64>;
}

/// Attack stage a query is charged to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Stage {
    StyleSearch,
    Direct,
    Optimize,
}

impl Stage {
    fn slot(self) -> usize {
        match self {
            Stage::StyleSearch => 0,
            Stage::Direct => 1,
            Stage::Optimize => 2,
        }
    }
}

pub const DEFAULT_QUERY_LIMIT: u64 = 300_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryBudget {
    pub limit: u64,
    pub used: u64,
}

impl QueryBudget {
    pub fn new(limit: u64) -> Self {
        Self { limit, used: 0 }
    }

    pub fn remaining(&self) -> u64 {
        self.limit - self.used
    }

    pub fn is_exhausted(&self) -> bool {
        self.used >= self.limit
    }
}

impl Default for QueryBudget {
    fn default() -> Self {
        Self::new(DEFAULT_QUERY_LIMIT)
    }
}

/// The single accounting point through which an attack episode queries.
pub struct QueryGate<'a> {
    oracle: &'a dyn BlackBox,
    budget: QueryBudget,
    per_stage: [u64; 3],
}

impl<'a> QueryGate<'a> {
    pub fn new(oracle: &'a dyn BlackBox, budget: QueryBudget) -> Self {
        Self {
            oracle,
            budget,
            per_stage: [0; 3],
        }
    }

    pub fn query(&mut self, video: &VideoTensor, stage: Stage) -> Result<OracleResponse> {
        if self.budget.is_exhausted() {
            return Err(LsfError::BudgetExhausted {
                used: self.budget.used,
            });
        }
        self.budget.used += 1;
        self.per_stage[stage.slot()] += 1;
        Ok(self.oracle.top1(video))
    }

    pub fn budget(&self) -> QueryBudget {
        self.budget
    }

    pub fn used(&self) -> u64 {
        self.budget.used
    }

    pub fn stage_queries(&self, stage: Stage) -> u64 {
        self.per_stage[stage.slot()]
    }

    pub fn class_count(&self) -> usize {
        self.oracle.class_count()
    }
}

/// Attack objective.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Goal {
    Untargeted { original: usize },
    Targeted { target: usize },
}

impl Goal {
    pub fn is_met(&self, r: &LabelScore) -> bool {
        match *self {
            Goal::Untargeted { original } => r.label != original,
            Goal::Targeted { target } => r.label == target,
        }
    }

    /// Progress score computed from the top-1 response alone; higher is
    /// better and every goal-satisfying response outranks every other.
    ///
    /// Untargeted: `-p(y0)` while `y0` is top-1, `0` once it is not.
    /// Targeted: `p(yt)` once `yt` is top-1, otherwise `-p(top1)`, i.e. the
    /// search pushes the incumbent class toward a decision boundary.
    pub fn objective(&self, r: &LabelScore) -> f64 {
        match *self {
            Goal::Untargeted { original } => {
                if r.label == original {
                    -r.score
                } else {
                    0.0
                }
            }
            Goal::Targeted { target } => {
                if r.label == target {
                    r.score
                } else {
                    -r.score
                }
            }
        }
    }

    /// Observable goal probability used by the stage-2 reward:
    /// `p(yt|x)` (targeted) or `1 - p(y0|x)` (untargeted), each `None` when
    /// top-1 does not reveal it.
    pub fn reward_probability(&self, r: &LabelScore) -> Option<f64> {
        match *self {
            Goal::Untargeted { original } => {
                if r.label == original {
                    Some(1.0 - r.score)
                } else {
                    Some(1.0)
                }
            }
            Goal::Targeted { target } => (r.label == target).then_some(r.score),
        }
    }

    pub fn label(&self) -> usize {
        match *self {
            Goal::Untargeted { original } => original,
            Goal::Targeted { target } => target,
        }
    }

    pub fn is_targeted(&self) -> bool {
        matches!(self, Goal::Targeted { .. })
    }
}

pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - m).exp()).collect();
    let s: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / s).collect()
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}
