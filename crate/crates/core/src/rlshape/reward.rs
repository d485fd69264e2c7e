use std::fmt;
use std::str::FromStr;

use crate::cohort::Outcome;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum RewardKind {
    TerminalOnly,
    /// `c·(d(s) − d(s′))`.
    R1,
    /// `c·(d(s) − d(s′)) − p·1{d(s′) > θ}·d(s′)`.
    R2,
}

impl RewardKind {
    pub fn as_str(self) -> &'static str {
        match self {
            RewardKind::TerminalOnly => "terminal",
            RewardKind::R1 => "r1",
            RewardKind::R2 => "r2",
        }
    }
}

impl fmt::Display for RewardKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RewardKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "terminal" | "terminal_only" => Ok(RewardKind::TerminalOnly),
            "r1" => Ok(RewardKind::R1),
            "r2" => Ok(RewardKind::R2),
            other => Err(Error::Config(format!("unknown reward `{other}` (expected terminal, r1 or r2)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RewardSpec {
    pub kind: RewardKind,
    pub death_reward: f64,
    /// Terminal release reward is `release_scale·(1 − d)`.
    pub release_scale: f64,
    pub r1_coef: f64,
    pub r2_coef: f64,
    pub r2_penalty: f64,
    pub r2_threshold: f64,
}

impl RewardSpec {
    pub fn new(kind: RewardKind) -> Self {
        Self {
            kind,
            death_reward: -15.0,
            release_scale: 15.0,
            r1_coef: 0.375,
            r2_coef: 3.75,
            r2_penalty: 0.25,
            r2_threshold: 0.5,
        }
    }

    pub fn terminal(&self, outcome: Outcome, d: f64) -> f64 {
        match outcome {
            Outcome::Death => self.death_reward,
            Outcome::Release => self.release_scale * (1.0 - d),
        }
    }

    /// Reward of a non-terminal step from `d(s)` to `d(s′)`.
    pub fn intermediate(&self, d_s: f64, d_next: f64) -> f64 {
        match self.kind {
            RewardKind::TerminalOnly => 0.0,
            RewardKind::R1 => self.r1_coef * (d_s - d_next),
            RewardKind::R2 => {
                let dwell = if d_next > self.r2_threshold { d_next } else { 0.0 };
                self.r2_coef * (d_s - d_next) - self.r2_penalty * dwell
            }
        }
    }

    /// `terminal_outcome` is `Some` only on a stay's last transition, where the
    /// terminal reward replaces the intermediate one; `d_s` is then the risk of
    /// the state the reward is attributed to.
    pub fn reward(&self, d_s: f64, d_next: f64, terminal_outcome: Option<Outcome>) -> f64 {
        match terminal_outcome {
            Some(o) => self.terminal(o, d_s),
            None => self.intermediate(d_s, d_next),
        }
    }

    pub fn to_kv(&self) -> Vec<(String, String)> {
        [
            ("reward", self.kind.to_string()),
            ("death_reward", self.death_reward.to_string()),
            ("release_scale", self.release_scale.to_string()),
            ("r1_coef", self.r1_coef.to_string()),
            ("r2_coef", self.r2_coef.to_string()),
            ("r2_penalty", self.r2_penalty.to_string()),
            ("r2_threshold", self.r2_threshold.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let num = || -> Result<f64> {
            value
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{value}`")))
        };
        match key {
            "reward" => self.kind = value.parse()?,
            "death_reward" => self.death_reward = num()?,
            "release_scale" => self.release_scale = num()?,
            "r1_coef" => self.r1_coef = num()?,
            "r2_coef" => self.r2_coef = num()?,
            "r2_penalty" => self.r2_penalty = num()?,
            "r2_threshold" => self.r2_threshold = num()?,
            _ => return Err(Error::Config(format!("unknown reward setting `{key}`"))),
        }
        Ok(())
    }
}
