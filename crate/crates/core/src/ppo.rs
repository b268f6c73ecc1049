//! Per-token rewards, advantages and the PPO loss for generations made of
//! an explanation segment followed by a code segment.
//!
//! Positions are 0-based. With `|e|` explanation tokens and `T` tokens in
//! total, the explanation reward lands on index `|e| - 1` (the last
//! explanation token) and the code reward on index `T - 1`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_GAMMA: f64 = 0.99;
pub const DEFAULT_KL_COEFF: f64 = 0.1;
pub const DEFAULT_ALPHA: f64 = 0.5;
pub const DEFAULT_CLIP_EPS: f64 = 0.2;

#[derive(Debug, Error, PartialEq)]
pub enum PpoError {
    #[error("length mismatch: {what} has {got}, expected {expected}")]
    LengthMismatch {
        what: &'static str,
        got: usize,
        expected: usize,
    },
    #[error("layout error: {0}")]
    Layout(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
}

fn same_len(what: &'static str, got: usize, expected: usize) -> Result<(), PpoError> {
    if got != expected {
        return Err(PpoError::LengthMismatch {
            what,
            got,
            expected,
        });
    }
    Ok(())
}

fn finite(what: &'static str, xs: &[f64]) -> Result<(), PpoError> {
    if xs.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(PpoError::NonFinite(what))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentLayout {
    pub len_explanation: usize,
    pub len_refinement: usize,
}

impl SegmentLayout {
    pub fn total(&self) -> usize {
        self.len_explanation + self.len_refinement
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenLogprobs {
    pub new_policy: Vec<f64>,
    pub old_policy: Vec<f64>,
}

/// `new - old` per token. Individual entries may be negative.
pub fn kl_per_token(lp: &TokenLogprobs) -> Result<Vec<f64>, PpoError> {
    same_len("old_policy", lp.old_policy.len(), lp.new_policy.len())?;
    finite("new_policy", &lp.new_policy)?;
    finite("old_policy", &lp.old_policy)?;
    Ok(lp
        .new_policy
        .iter()
        .zip(&lp.old_policy)
        .map(|(n, o)| n - o)
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardAssembly {
    pub kl_coeff: f64,
    /// Adds `+kl_coeff * kl` on non-boundary tokens, the sign-less reading
    /// of the published formula. Off by default.
    pub literal_unsigned_kl: bool,
}

impl Default for RewardAssembly {
    fn default() -> Self {
        Self {
            kl_coeff: DEFAULT_KL_COEFF,
            literal_unsigned_kl: false,
        }
    }
}

/// Per-token rewards: a KL penalty everywhere, plus `r_expl` on the last
/// explanation token and `r_code` on the last token.
pub fn assemble_rewards(
    layout: SegmentLayout,
    r_expl: Option<f64>,
    r_code: f64,
    kl: &[f64],
    opts: &RewardAssembly,
) -> Result<Vec<f64>, PpoError> {
    let t = layout.total();
    if layout.len_refinement == 0 {
        return Err(PpoError::Layout("refinement segment is empty".into()));
    }
    same_len("kl", kl.len(), t)?;
    match (layout.len_explanation, r_expl) {
        (0, Some(_)) => {
            return Err(PpoError::Layout(
                "explanation reward given without explanation tokens".into(),
            ))
        }
        (n, None) if n > 0 => {
            return Err(PpoError::Layout(
                "explanation tokens present but no explanation reward".into(),
            ))
        }
        _ => {}
    }
    finite("kl", kl)?;
    let boundary = layout.len_explanation.checked_sub(1);
    let mut rewards: Vec<f64> = kl
        .iter()
        .enumerate()
        .map(|(i, k)| {
            let on_boundary = Some(i) == boundary || i == t - 1;
            if opts.literal_unsigned_kl && !on_boundary {
                opts.kl_coeff * k
            } else {
                -opts.kl_coeff * k
            }
        })
        .collect();
    if let (Some(b), Some(r)) = (boundary, r_expl) {
        rewards[b] += r;
    }
    rewards[t - 1] += r_code;
    Ok(rewards)
}

/// `delta[t] = rewards[t] - values[t] + gamma * values[t + 1]`. `values` has
/// one more entry than `rewards`; the last is the terminal value and must be 0.
pub fn deltas(rewards: &[f64], values: &[f64], gamma: f64) -> Result<Vec<f64>, PpoError> {
    same_len("values", values.len(), rewards.len() + 1)?;
    finite("values", values)?;
    finite("rewards", rewards)?;
    if values[rewards.len()] != 0.0 {
        return Err(PpoError::Layout("terminal value must be 0".into()));
    }
    Ok(rewards
        .iter()
        .enumerate()
        .map(|(t, r)| r - values[t] + gamma * values[t + 1])
        .collect())
}

/// Discounted suffix sums of `delta`, by backward recursion.
pub fn advantages(delta: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; delta.len()];
    let mut acc = 0.0;
    for t in (0..delta.len()).rev() {
        acc = delta[t] + gamma * acc;
        out[t] = acc;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossOptions {
    pub alpha: f64,
    pub clip_eps: Option<f64>,
    /// Uses `new / old` of the log-probabilities themselves as the ratio,
    /// as the published formula is typeset. Off by default.
    pub literal_log_ratio: bool,
}

impl Default for LossOptions {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
            clip_eps: None,
            literal_log_ratio: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PpoLosses {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub total: f64,
}

pub fn ppo_loss(
    lp: &TokenLogprobs,
    adv: &[f64],
    values_new: &[f64],
    values_old: &[f64],
    opts: &LossOptions,
) -> Result<PpoLosses, PpoError> {
    let n = adv.len();
    same_len("new_policy", lp.new_policy.len(), n)?;
    same_len("old_policy", lp.old_policy.len(), n)?;
    same_len("values_new", values_new.len(), n)?;
    same_len("values_old", values_old.len(), n)?;
    for (what, xs) in [
        ("new_policy", &lp.new_policy[..]),
        ("old_policy", &lp.old_policy[..]),
        ("advantages", adv),
        ("values_new", values_new),
        ("values_old", values_old),
    ] {
        finite(what, xs)?;
    }
    if !(opts.alpha >= 0.0 && opts.alpha.is_finite()) {
        return Err(PpoError::Layout(format!("alpha {} must be >= 0", opts.alpha)));
    }
    if n == 0 {
        return Err(PpoError::Layout("no tokens".into()));
    }
    let mut policy = 0.0;
    let mut value = 0.0;
    for t in 0..n {
        let ratio = if opts.literal_log_ratio {
            lp.new_policy[t] / lp.old_policy[t]
        } else {
            (lp.new_policy[t] - lp.old_policy[t]).exp()
        };
        let a = adv[t];
        let term = match opts.clip_eps {
            Some(eps) => (ratio * a).min(ratio.clamp(1.0 - eps, 1.0 + eps) * a),
            None => ratio * a,
        };
        policy += term;
        let residual = values_new[t] - (a + values_old[t]);
        value += residual * residual;
    }
    let policy_loss = -policy / n as f64;
    let value_loss = value / n as f64;
    let total = policy_loss + opts.alpha * value_loss;
    if !total.is_finite() {
        return Err(PpoError::NonFinite("loss"));
    }
    Ok(PpoLosses {
        policy_loss,
        value_loss,
        total,
    })
}

/// One sample of the trainer interchange format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchInput {
    pub sample_id: String,
    pub layout: SegmentLayout,
    pub logprobs_new: Vec<f64>,
    pub logprobs_old: Vec<f64>,
    /// `T + 1` entries, the last being the terminal 0.
    pub values: Vec<f64>,
    #[serde(default)]
    pub r_expl: Option<f64>,
    pub r_code: f64,
    /// Value-head outputs under the updated policy; the loss is reported
    /// only when present.
    #[serde(default)]
    pub values_new: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchOutput {
    pub sample_id: String,
    pub rewards: Vec<f64>,
    pub advantages: Vec<f64>,
    pub losses: Option<PpoLosses>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KernelConfig {
    pub gamma: f64,
    pub assembly: RewardAssembly,
    pub loss: LossOptions,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self {
            gamma: DEFAULT_GAMMA,
            assembly: RewardAssembly::default(),
            loss: LossOptions::default(),
        }
    }
}

pub fn process_sample(input: &BatchInput, cfg: &KernelConfig) -> Result<BatchOutput, PpoError> {
    let lp = TokenLogprobs {
        new_policy: input.logprobs_new.clone(),
        old_policy: input.logprobs_old.clone(),
    };
    same_len("logprobs_new", lp.new_policy.len(), input.layout.total())?;
    let kl = kl_per_token(&lp)?;
    let rewards = assemble_rewards(input.layout, input.r_expl, input.r_code, &kl, &cfg.assembly)?;
    let delta = deltas(&rewards, &input.values, cfg.gamma)?;
    let adv = advantages(&delta, cfg.gamma);
    let losses = match &input.values_new {
        Some(vn) => {
            let old = &input.values[..input.layout.total()];
            Some(ppo_loss(&lp, &adv, vn, old, &cfg.loss)?)
        }
        None => None,
    };
    Ok(BatchOutput {
        sample_id: input.sample_id.clone(),
        rewards,
        advantages: adv,
        losses,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &[f64], b: &[f64]) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-12)
    }

    #[test]
    fn kl_examples() {
        let lp = TokenLogprobs {
            new_policy: vec![0.9f64.ln()],
            old_policy: vec![0.45f64.ln()],
        };
        assert!((kl_per_token(&lp).unwrap()[0] - std::f64::consts::LN_2).abs() < 1e-9);
        let flipped = TokenLogprobs {
            new_policy: lp.old_policy.clone(),
            old_policy: lp.new_policy.clone(),
        };
        assert!((kl_per_token(&flipped).unwrap()[0] + std::f64::consts::LN_2).abs() < 1e-9);
        let bad = TokenLogprobs {
            new_policy: vec![0.0],
            old_policy: vec![],
        };
        assert!(matches!(kl_per_token(&bad), Err(PpoError::LengthMismatch { .. })));
    }

    #[test]
    fn reward_placement() {
        let d = RewardAssembly::default();
        let layout = SegmentLayout {
            len_explanation: 2,
            len_refinement: 2,
        };
        assert_eq!(
            assemble_rewards(layout, Some(3.0), 5.0, &[0.0; 4], &d).unwrap(),
            [0.0, 3.0, 0.0, 5.0]
        );
        let refine_only = SegmentLayout {
            len_explanation: 0,
            len_refinement: 3,
        };
        assert_eq!(
            assemble_rewards(refine_only, None, -5.0, &[0.0; 3], &d).unwrap(),
            [0.0, 0.0, -5.0]
        );
        assert!(close(
            &assemble_rewards(layout, Some(0.0), 0.0, &[1.0; 4], &d).unwrap(),
            &[-0.1; 4]
        ));
        assert!(assemble_rewards(refine_only, Some(1.0), 0.0, &[0.0; 3], &d).is_err());
    }

    #[test]
    fn literal_flag_flips_interior_sign_only() {
        let opts = RewardAssembly {
            kl_coeff: 0.1,
            literal_unsigned_kl: true,
        };
        let layout = SegmentLayout {
            len_explanation: 2,
            len_refinement: 2,
        };
        let r = assemble_rewards(layout, Some(0.0), 0.0, &[1.0; 4], &opts).unwrap();
        assert!(close(&r, &[0.1, -0.1, 0.1, -0.1]));
    }

    #[test]
    fn delta_examples() {
        assert_eq!(deltas(&[1.0, 2.0], &[0.0; 3], 0.99).unwrap(), [1.0, 2.0]);
        assert_eq!(deltas(&[0.0, 1.0], &[1.0, 1.0, 0.0], 1.0).unwrap(), [0.0, 0.0]);
        assert_eq!(deltas(&[3.0, 1.0], &[1.0, 2.0, 0.0], 0.0).unwrap(), [2.0, -1.0]);
        assert!(deltas(&[0.0], &[0.0, 1.0], 0.9).is_err());
    }

    #[test]
    fn advantage_examples() {
        assert_eq!(advantages(&[1.0, 1.0, 1.0], 1.0), [3.0, 2.0, 1.0]);
        assert_eq!(advantages(&[1.0, -2.0], 0.0), [1.0, -2.0]);
        assert_eq!(advantages(&[1.0, 2.0], 0.5), [2.0, 2.0]);
    }

    #[test]
    fn loss_examples() {
        let same = TokenLogprobs {
            new_policy: vec![-1.0, -2.0, -0.5],
            old_policy: vec![-1.0, -2.0, -0.5],
        };
        let adv = [1.0, -3.0, 0.5];
        let old = [0.2, 0.1, 0.0];
        let vn: Vec<f64> = adv.iter().zip(&old).map(|(a, v)| a + v).collect();
        let l = ppo_loss(&same, &adv, &vn, &old, &LossOptions::default()).unwrap();
        assert!((l.policy_loss - 0.5).abs() < 1e-15);
        assert_eq!(l.value_loss, 0.0);

        let doubled = TokenLogprobs {
            new_policy: vec![2f64.ln()],
            old_policy: vec![0.0],
        };
        let clipped = LossOptions {
            clip_eps: Some(0.2),
            ..Default::default()
        };
        let l = ppo_loss(&doubled, &[1.0], &[0.0], &[0.0], &clipped).unwrap();
        assert!((l.policy_loss + 1.2).abs() < 1e-12);
        assert!((l.total - (-1.2 + 0.5 * 1.0)).abs() < 1e-12);
    }
}
