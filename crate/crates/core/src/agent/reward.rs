use serde::{Deserialize, Serialize};

use crate::env::{Engagement, StepOutcome};
use crate::error::{Error, Result};
use crate::metrics::cosine_similarity;

/// Immediate reward per realized behavior.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ImmediateRewards {
    pub like: f64,
    pub comment: f64,
    pub share: f64,
    pub full_watch: f64,
    pub early_exit: f64,
    pub no_interaction: f64,
}

impl Default for ImmediateRewards {
    fn default() -> Self {
        ImmediateRewards {
            like: 1.0,
            comment: 1.2,
            share: 1.5,
            full_watch: 0.5,
            early_exit: -0.5,
            no_interaction: -0.1,
        }
    }
}

impl ImmediateRewards {
    pub fn of(&self, e: Engagement) -> f64 {
        match e {
            Engagement::Like => self.like,
            Engagement::Comment => self.comment,
            Engagement::Share => self.share,
            Engagement::FullWatch => self.full_watch,
            Engagement::EarlyExit => self.early_exit,
            Engagement::NoInteraction => self.no_interaction,
        }
    }
}

/// `r = r_immediate + λ1·r_retention + λ2·r_interest`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardWeights {
    pub lambda_retention: f64,
    pub lambda_interest: f64,
    pub immediate: ImmediateRewards,
}

impl Default for RewardWeights {
    fn default() -> Self {
        RewardWeights {
            lambda_retention: 0.3,
            lambda_interest: 0.2,
            immediate: ImmediateRewards::default(),
        }
    }
}

impl RewardWeights {
    pub fn validate(&self) -> Result<()> {
        let t = &self.immediate;
        let all = [
            self.lambda_retention,
            self.lambda_interest,
            t.like,
            t.comment,
            t.share,
            t.full_watch,
            t.early_exit,
            t.no_interaction,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("reward constants must be finite".into()));
        }
        if self.lambda_retention < 0.0 || self.lambda_interest < 0.0 {
            return Err(Error::Config("reward lambdas must be nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RewardBreakdown {
    pub immediate: f64,
    /// +1 if the user stays for another step, −1 otherwise.
    pub retention: f64,
    /// Cosine between the interest vector before and after the step.
    pub interest: f64,
    pub total: f64,
}

pub fn reward_breakdown(outcome: &StepOutcome, weights: &RewardWeights) -> RewardBreakdown {
    let immediate = weights.immediate.of(outcome.behavior);
    let retention = if outcome.continued { 1.0 } else { -1.0 };
    let interest = cosine_similarity(&outcome.interest_before, &outcome.interest_after);
    RewardBreakdown {
        immediate,
        retention,
        interest,
        total: immediate + weights.lambda_retention * retention + weights.lambda_interest * interest,
    }
}

pub fn compute_reward(outcome: &StepOutcome, weights: &RewardWeights) -> f64 {
    reward_breakdown(outcome, weights).total
}

#[cfg(test)]
mod tests {
    use super::*;

    fn outcome(behavior: Engagement, continued: bool) -> StepOutcome {
        StepOutcome {
            behavior,
            watch_fraction: 0.5,
            continued,
            interest_before: vec![1.0, 0.0],
            interest_after: vec![1.0, 0.0],
        }
    }

    #[test]
    fn table_cases() {
        let zero = RewardWeights {
            lambda_retention: 0.0,
            lambda_interest: 0.0,
            ..RewardWeights::default()
        };
        assert_eq!(compute_reward(&outcome(Engagement::Like, true), &zero), 1.0);
        let ret = RewardWeights {
            lambda_retention: 0.3,
            lambda_interest: 0.0,
            ..RewardWeights::default()
        };
        let r = compute_reward(&outcome(Engagement::EarlyExit, false), &ret);
        assert!((r - (-0.8)).abs() < 1e-15);
        let b = reward_breakdown(&outcome(Engagement::Share, true), &RewardWeights::default());
        assert_eq!(b.interest, 1.0);
        assert!((b.total - (1.5 + 0.3 + 0.2)).abs() < 1e-15);
    }
}
