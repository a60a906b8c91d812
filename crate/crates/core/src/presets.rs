//! Named data and training setups.

use std::fmt;
use std::str::FromStr;

use crate::council::CouncilConfig;
use crate::synth::{GroupCounts, SplitCounts, SynthSpec};
use crate::trainer::{Method, TrainerConfig};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Sbp99,
    Sbp95,
    Sbp90,
    Toy2d,
}

impl Preset {
    pub const ALL: [Preset; 4] = [Preset::Sbp99, Preset::Sbp95, Preset::Sbp90, Preset::Toy2d];

    pub fn as_str(self) -> &'static str {
        match self {
            Preset::Sbp99 => "sbp99",
            Preset::Sbp95 => "sbp95",
            Preset::Sbp90 => "sbp90",
            Preset::Toy2d => "toy2d",
        }
    }

    pub fn counts(self) -> SplitCounts {
        let sbp = |conflicting| SplitCounts {
            train: GroupCounts::new(5000, conflicting, conflicting, 5000),
            val: GroupCounts::balanced(200),
            test: GroupCounts::balanced(400),
        };
        match self {
            Preset::Sbp99 => sbp(50),
            Preset::Sbp95 => sbp(250),
            Preset::Sbp90 => sbp(500),
            Preset::Toy2d => SplitCounts {
                train: GroupCounts::new(990, 10, 10, 990),
                val: GroupCounts::balanced(50),
                test: GroupCounts::balanced(100),
            },
        }
    }

    pub fn synth(self, seed: u64) -> SynthSpec {
        match self {
            // A wider bias margin than the generator default, so that cross entropy
            // settles on the bias axis within the training budget below.
            Preset::Toy2d => SynthSpec {
                bias_margin: 4.0,
                ..SynthSpec::toy2d(self.counts(), seed)
            },
            _ => SynthSpec::high_dim(self.counts(), seed),
        }
    }

    /// Training setup for `method` on this preset's data.
    pub fn trainer(self, method: Method, seed: u64) -> TrainerConfig {
        let (lambda, n_heads) = match self {
            Preset::Sbp99 => (100.0, 16),
            Preset::Sbp95 => (10.0, 64),
            Preset::Sbp90 => (5.0, 2),
            Preset::Toy2d => (1.0, 4),
        };
        let base = TrainerConfig {
            method,
            lambda,
            council: CouncilConfig {
                n_heads,
                ..CouncilConfig::default()
            },
            seed,
            ..TrainerConfig::default()
        };
        match self {
            Preset::Toy2d => TrainerConfig {
                lr: 5e-4,
                max_epochs: 20,
                hidden: vec![16, 16],
                trunk: vec![16, 16],
                ..base
            },
            _ => TrainerConfig {
                lr: 1e-3,
                max_epochs: 20,
                ..base
            },
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| Error::config(format!("unknown preset {s:?}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sbp_counts_and_hyper_parameters() {
        let want = [(Preset::Sbp99, 50, 100.0, 16), (Preset::Sbp95, 250, 10.0, 64), (Preset::Sbp90, 500, 5.0, 2)];
        for (p, conflicting, lambda, heads) in want {
            let c = p.counts();
            assert_eq!(c.train.as_array(), [5000, conflicting, conflicting, 5000]);
            assert_eq!(c.val.as_array(), [200; 4]);
            assert_eq!(c.test.as_array(), [400; 4]);
            let cfg = p.trainer(Method::AdaAbc, 0);
            assert_eq!((cfg.lambda, cfg.council.n_heads), (lambda, heads));
            cfg.validate().unwrap();
            p.synth(0).validate().unwrap();
        }
    }

    #[test]
    fn names_parse() {
        for p in Preset::ALL {
            assert_eq!(p.as_str().parse::<Preset>().unwrap(), p);
        }
        assert!("sbp80".parse::<Preset>().is_err());
    }

    #[test]
    fn toy_is_two_dimensional_at_rho_99() {
        let spec = Preset::Toy2d.synth(1);
        assert_eq!(spec.kind.dim(), 2);
        assert_eq!(spec.counts.train.aligned_ratio(), Some(0.99));
    }
}
