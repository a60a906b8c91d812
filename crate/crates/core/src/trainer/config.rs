use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::council::CouncilConfig;
use crate::losses::DEFAULT_EPSILON;
use crate::nn::Algorithm;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Adaptive agreement with a co-trained bias council.
    AdaAbc,
    /// Plain cross entropy.
    Erm,
    /// Cross entropy for the second model, council co-trained alongside.
    AgreeOnly,
    /// Opposite-prediction loss against the co-trained council.
    DisagreeOnly,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::AdaAbc, Method::Erm, Method::AgreeOnly, Method::DisagreeOnly];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::AdaAbc => "ada_abc",
            Method::Erm => "erm",
            Method::AgreeOnly => "agree_only",
            Method::DisagreeOnly => "disagree_only",
        }
    }

    pub fn uses_council(self) -> bool {
        self != Method::Erm
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::config(format!("unknown method {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainerConfig {
    pub method: Method,
    pub lambda: f64,
    pub epsilon: f64,
    pub council: CouncilConfig,
    pub optimizer: Algorithm,
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without a validation improvement before stopping; 0 disables.
    pub patience: usize,
    pub seed: u64,
    /// Hidden widths of the debiasing model (a sigmoid output unit follows).
    pub hidden: Vec<usize>,
    /// Widths of the council trunk after the input; heads sit on the last one.
    pub trunk: Vec<usize>,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            method: Method::AdaAbc,
            lambda: 1.0,
            epsilon: DEFAULT_EPSILON,
            council: CouncilConfig::default(),
            optimizer: Algorithm::Adam,
            lr: 1e-4,
            batch_size: 128,
            max_epochs: 50,
            patience: 0,
            seed: 0,
            hidden: vec![64, 32],
            trunk: vec![64, 32],
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::config(format!("lambda must be non-negative, got {}", self.lambda)));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::config(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be at least 1"));
        }
        if self.max_epochs == 0 {
            return Err(Error::config("need at least one epoch"));
        }
        if self.trunk.is_empty() {
            return Err(Error::config("the council trunk needs at least one layer"));
        }
        if self.hidden.iter().chain(&self.trunk).any(|&w| w == 0) {
            return Err(Error::config("layer widths must be positive"));
        }
        self.council.validate()
    }

    pub fn model_sizes(&self, input: usize) -> Vec<usize> {
        let mut sizes = vec![input];
        sizes.extend(&self.hidden);
        sizes.push(1);
        sizes
    }

    pub fn trunk_sizes(&self, input: usize) -> Vec<usize> {
        let mut sizes = vec![input];
        sizes.extend(&self.trunk);
        sizes
    }
}
