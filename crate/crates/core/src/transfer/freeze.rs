//! Freeze schedules: which parameter groups train at which epoch.
//!
//! Two interchangeable policies live behind the `FreezePolicy` trait and a
//! name registry: plain fine-tuning (nothing frozen) and staged unfreezing
//! driven by an `{n, k}` epoch pair.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::GroupName;
use crate::registry::Registry;

/// Unfreeze epochs: LSTM groups at epoch `n`, embedding at epoch `k`
/// (1-based, `1 < n < k`). The output and attention groups train from the
/// first epoch; the attention layer has no pretrained counterpart, so it is
/// grouped with the task-specific head.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SguSchedule {
    pub n: usize,
    pub k: usize,
}

impl SguSchedule {
    pub fn new(n: usize, k: usize) -> Result<Self> {
        if !(1 < n && n < k) {
            return Err(Error::config(format!(
                "staged unfreezing requires 1 < n < k, got n={n}, k={k}"
            )));
        }
        Ok(SguSchedule { n, k })
    }
}

/// Set of groups excluded from updates for one epoch.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FreezeState {
    frozen: BTreeSet<GroupName>,
}

impl FreezeState {
    pub fn none() -> Self {
        FreezeState::default()
    }

    pub fn freeze(&mut self, group: GroupName) {
        self.frozen.insert(group);
    }

    pub fn is_frozen(&self, group: GroupName) -> bool {
        self.frozen.contains(&group)
    }

    pub fn frozen_groups(&self) -> impl Iterator<Item = GroupName> + '_ {
        self.frozen.iter().copied()
    }

    pub fn trainable(&self, all: &[GroupName]) -> Vec<GroupName> {
        all.iter()
            .copied()
            .filter(|g| !self.is_frozen(*g))
            .collect()
    }
}

/// A freeze schedule over 1-based epochs.
pub trait FreezePolicy: Send + Sync {
    fn name(&self) -> &'static str;

    /// Schedule-level freeze state at `epoch` (>= 1). Group-level permanent
    /// freeze flags are OR-ed on top by the trainer.
    fn at_epoch(&self, epoch: usize) -> FreezeState;
}

/// Every group trains from epoch 1.
pub struct SimpleFineTune;

impl FreezePolicy for SimpleFineTune {
    fn name(&self) -> &'static str {
        "simple"
    }

    fn at_epoch(&self, _epoch: usize) -> FreezeState {
        FreezeState::none()
    }
}

/// Staged unfreezing: epochs `[1, n)` train only the task-specific head
/// (output + attention); `[n, k)` additionally train both LSTM groups;
/// from `k` on everything trains.
pub struct GradualUnfreeze {
    pub schedule: SguSchedule,
}

impl FreezePolicy for GradualUnfreeze {
    fn name(&self) -> &'static str {
        "sgu"
    }

    fn at_epoch(&self, epoch: usize) -> FreezeState {
        let mut state = FreezeState::none();
        if epoch < self.schedule.n {
            state.freeze(GroupName::Lstm1);
            state.freeze(GroupName::Lstm2);
        }
        if epoch < self.schedule.k {
            state.freeze(GroupName::Embedding);
        }
        state
    }
}

/// Mode selector carried by configs; resolves to a policy via the registry.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "mode")]
pub enum FtMode {
    Simple,
    Sgu { n: usize, k: usize },
}

impl FtMode {
    pub fn policy_name(&self) -> &'static str {
        match self {
            FtMode::Simple => "simple",
            FtMode::Sgu { .. } => "sgu",
        }
    }

    pub fn policy(&self) -> Result<Box<dyn FreezePolicy>> {
        let registry = freeze_policies();
        let factory = registry.resolve(self.policy_name())?;
        factory(self)
    }
}

type PolicyFactory = dyn Fn(&FtMode) -> Result<Box<dyn FreezePolicy>> + Send + Sync;

/// Registry of freeze-policy factories, keyed by mode name.
pub fn freeze_policies() -> Registry<PolicyFactory> {
    let mut registry: Registry<PolicyFactory> = Registry::new("fine-tune mode");
    registry.register(
        "simple",
        Box::new(|_mode| Ok(Box::new(SimpleFineTune) as Box<dyn FreezePolicy>)),
    );
    registry.register(
        "sgu",
        Box::new(|mode| match mode {
            FtMode::Sgu { n, k } => Ok(Box::new(GradualUnfreeze {
                schedule: SguSchedule::new(*n, *k)?,
            }) as Box<dyn FreezePolicy>),
            FtMode::Simple => Err(Error::config(
                "sgu policy requires an {n, k} schedule".to_string(),
            )),
        }),
    );
    registry
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn invalid_schedules_are_rejected() {
        assert!(SguSchedule::new(3, 3).is_err());
        assert!(SguSchedule::new(5, 3).is_err());
        assert!(SguSchedule::new(1, 5).is_err());
        assert!(SguSchedule::new(3, 5).is_ok());
    }

    #[test]
    fn sgu_3_5_epoch_2_freezes_embedding_and_lstms() {
        let policy = GradualUnfreeze {
            schedule: SguSchedule::new(3, 5).unwrap(),
        };
        let state = policy.at_epoch(2);
        assert!(state.is_frozen(GroupName::Embedding));
        assert!(state.is_frozen(GroupName::Lstm1));
        assert!(state.is_frozen(GroupName::Lstm2));
        assert!(!state.is_frozen(GroupName::Attention));
        assert!(!state.is_frozen(GroupName::Output));
    }

    #[test]
    fn sgu_3_5_epoch_4_freezes_only_embedding() {
        let policy = GradualUnfreeze {
            schedule: SguSchedule::new(3, 5).unwrap(),
        };
        let state = policy.at_epoch(4);
        assert!(state.is_frozen(GroupName::Embedding));
        assert!(!state.is_frozen(GroupName::Lstm1));
        assert!(!state.is_frozen(GroupName::Lstm2));
    }

    #[test]
    fn sgu_unfreezes_everything_at_k() {
        let policy = GradualUnfreeze {
            schedule: SguSchedule::new(3, 5).unwrap(),
        };
        assert_eq!(policy.at_epoch(5), FreezeState::none());
        assert_eq!(policy.at_epoch(100), FreezeState::none());
    }

    #[test]
    fn simple_mode_never_freezes() {
        let policy = SimpleFineTune;
        for epoch in 1..10 {
            assert_eq!(policy.at_epoch(epoch), FreezeState::none());
        }
    }

    #[test]
    fn trainable_set_is_monotone_under_sgu() {
        let policy = GradualUnfreeze {
            schedule: SguSchedule::new(3, 5).unwrap(),
        };
        let mut prev = 0;
        for epoch in 1..8 {
            let trainable = policy.at_epoch(epoch).trainable(&GroupName::ALL).len();
            assert!(trainable >= prev, "trainable set shrank at epoch {epoch}");
            prev = trainable;
        }
    }

    #[test]
    fn registry_resolves_modes() {
        let simple = FtMode::Simple.policy().unwrap();
        assert_eq!(simple.name(), "simple");
        let sgu = FtMode::Sgu { n: 3, k: 5 }.policy().unwrap();
        assert_eq!(sgu.name(), "sgu");
        assert!(FtMode::Sgu { n: 5, k: 3 }.policy().is_err());
    }
}
