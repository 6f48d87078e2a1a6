//! Keyframe selection for refinement iterations.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMode {
    Random,
    WorstFirst,
    LossWeighted,
}

impl std::fmt::Display for SamplingMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SamplingMode::Random => "random",
            SamplingMode::WorstFirst => "worst_first",
            SamplingMode::LossWeighted => "loss_weighted",
        })
    }
}

impl std::str::FromStr for SamplingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(SamplingMode::Random),
            "worst_first" => Ok(SamplingMode::WorstFirst),
            "loss_weighted" => Ok(SamplingMode::LossWeighted),
            _ => Err(Error::invalid(format!("unknown sampling mode {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingStrategy {
    pub mode: SamplingMode,
    /// Probability of a loss-proportional draw; otherwise uniform.
    pub mix_p: f64,
}

impl Default for SamplingStrategy {
    fn default() -> Self {
        Self {
            mode: SamplingMode::LossWeighted,
            mix_p: 0.4,
        }
    }
}

impl SamplingStrategy {
    pub fn new(mode: SamplingMode, mix_p: f64) -> Result<Self> {
        let s = Self { mode, mix_p };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.mix_p) {
            return Err(Error::invalid("mix_p must lie in [0, 1]"));
        }
        Ok(())
    }

    /// Probability of each index under this strategy (argmax indicator for worst-first).
    pub fn distribution(&self, losses: &[f64]) -> Vec<f64> {
        let n = losses.len() as f64;
        match self.mode {
            SamplingMode::Random => vec![1.0 / n; losses.len()],
            SamplingMode::WorstFirst => {
                let best = argmax(losses);
                (0..losses.len()).map(|i| if i == best { 1.0 } else { 0.0 }).collect()
            }
            SamplingMode::LossWeighted => {
                let total: f64 = losses.iter().sum();
                losses
                    .iter()
                    .map(|l| {
                        let prop = if total > 0.0 { l / total } else { 1.0 / n };
                        self.mix_p * prop + (1.0 - self.mix_p) / n
                    })
                    .collect()
            }
        }
    }
}

fn argmax(losses: &[f64]) -> usize {
    let mut best = 0;
    for (i, l) in losses.iter().enumerate() {
        if *l > losses[best] {
            best = i;
        }
    }
    best
}

pub fn sample_keyframe<R: Rng + ?Sized>(losses: &[f64], strategy: &SamplingStrategy, rng: &mut R) -> Result<usize> {
    if losses.is_empty() {
        return Err(Error::EmptyKeyframeSet);
    }
    if losses.iter().any(|l| !(*l >= 0.0) || !l.is_finite()) {
        return Err(Error::invalid("keyframe losses must be finite and non-negative"));
    }
    let n = losses.len();
    Ok(match strategy.mode {
        SamplingMode::Random => rng.random_range(0..n),
        SamplingMode::WorstFirst => argmax(losses),
        SamplingMode::LossWeighted => {
            let total: f64 = losses.iter().sum();
            if rng.random::<f64>() < strategy.mix_p && total > 0.0 {
                let target = rng.random::<f64>() * total;
                let mut acc = 0.0;
                let mut pick = n - 1;
                for (i, l) in losses.iter().enumerate() {
                    acc += l;
                    if target < acc {
                        pick = i;
                        break;
                    }
                }
                pick
            } else {
                rng.random_range(0..n)
            }
        }
    })
}
