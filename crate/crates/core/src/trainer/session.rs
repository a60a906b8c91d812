use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Method, TrainerConfig};
use crate::council::{BiasCouncil, CouncilOptimizer};
use crate::losses::{adaptive_agreement_loss, ce_loss, opp_loss, to_class1_grad, true_label_prob, Detached, PredPair};
use crate::nn::{Activation, Matrix, Mlp, OptimizerState};
use crate::synth::Dataset;
use crate::{Error, Result};

/// Stream of the debiasing model's initialization.
const MODEL_STREAM: u64 = u64::MAX - 1;
/// Stream of the per-epoch shuffles.
const SHUFFLE_STREAM: u64 = u64::MAX;

fn stream(seed: u64, k: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(k);
    rng
}

/// Hook points inside a training step.
#[derive(Debug)]
pub enum TrainEvent<'a> {
    /// The debiasing loss is about to be formed. `biased` holds the council's
    /// class-1 probabilities for `indices`, computed from `council` as it is now.
    BeforeDebiasUpdate {
        indices: &'a [usize],
        biased: &'a [Detached],
        council: Option<&'a BiasCouncil>,
        model: &'a Mlp,
    },
    /// The debiasing model has been stepped; the council has not.
    AfterDebiasUpdate {
        indices: &'a [usize],
        council: Option<&'a BiasCouncil>,
        model: &'a Mlp,
    },
}

pub trait TrainObserver {
    fn on_event(&mut self, event: TrainEvent<'_>);
}

impl TrainObserver for () {
    fn on_event(&mut self, _: TrainEvent<'_>) {}
}

impl<F: FnMut(TrainEvent<'_>)> TrainObserver for F {
    fn on_event(&mut self, event: TrainEvent<'_>) {
        self(event)
    }
}

/// Mean losses of one batch.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BatchLosses {
    pub agreement: f64,
    pub disagreement: f64,
    pub objective: f64,
    pub gce: Option<f64>,
}

impl BatchLosses {
    pub fn is_finite(&self) -> bool {
        self.agreement.is_finite()
            && self.disagreement.is_finite()
            && self.objective.is_finite()
            && self.gce.is_none_or(f64::is_finite)
    }
}

/// Training state for one run: the debiasing model, the council and their optimizers.
#[derive(Debug, Clone)]
pub struct Session<'a> {
    cfg: TrainerConfig,
    train: &'a Dataset,
    model: Mlp,
    model_opt: OptimizerState,
    council: Option<(BiasCouncil, CouncilOptimizer)>,
    shuffle: ChaCha8Rng,
}

impl<'a> Session<'a> {
    pub fn new(train: &'a Dataset, cfg: TrainerConfig) -> Result<Self> {
        cfg.validate()?;
        if train.is_empty() {
            return Err(Error::config("training split is empty"));
        }
        let dim = train.dim();
        let model = Mlp::init(
            &cfg.model_sizes(dim),
            Activation::Relu,
            Activation::Sigmoid,
            &mut stream(cfg.seed, MODEL_STREAM),
        )?;
        Self::with_model(train, cfg, model)
    }

    /// Like [`Session::new`] but starting from a given debiasing model.
    pub fn with_model(train: &'a Dataset, cfg: TrainerConfig, model: Mlp) -> Result<Self> {
        cfg.validate()?;
        if model.input_dim() != train.dim() || model.output_dim() != 1 {
            return Err(Error::shape(format!(
                "model maps {} -> {}, data has {} features",
                model.input_dim(),
                model.output_dim(),
                train.dim()
            )));
        }
        let council = if cfg.method.uses_council() {
            let council = BiasCouncil::build(cfg.council, &cfg.trunk_sizes(train.dim()), train.len(), cfg.seed)?;
            let opt = CouncilOptimizer::new(&council, cfg.optimizer, cfg.lr)?;
            Some((council, opt))
        } else {
            None
        };
        Ok(Self {
            model_opt: OptimizerState::new(cfg.optimizer, cfg.lr)?,
            shuffle: stream(cfg.seed, SHUFFLE_STREAM),
            cfg,
            train,
            model,
            council,
        })
    }

    /// Replaces the council, e.g. with a hand-built one in tests.
    pub fn set_council(&mut self, council: BiasCouncil) -> Result<()> {
        if !self.cfg.method.uses_council() {
            return Err(Error::config(format!("method {} trains no council", self.cfg.method)));
        }
        if council.input_dim() != self.train.dim() || council.dataset_size() != self.train.len() {
            return Err(Error::shape("council does not match the training split"));
        }
        let opt = CouncilOptimizer::new(&council, self.cfg.optimizer, self.cfg.lr)?;
        self.council = Some((council, opt));
        Ok(())
    }

    pub fn config(&self) -> &TrainerConfig {
        &self.cfg
    }

    pub fn model(&self) -> &Mlp {
        &self.model
    }

    pub fn council(&self) -> Option<&BiasCouncil> {
        self.council.as_ref().map(|(c, _)| c)
    }

    pub fn into_parts(self) -> (Mlp, Option<BiasCouncil>) {
        (self.model, self.council.map(|(c, _)| c))
    }

    /// A fresh shuffled order of the training indices.
    pub fn epoch_order(&mut self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.train.len()).collect();
        order.shuffle(&mut self.shuffle);
        order
    }

    /// One step on the samples `indices`: council prediction, debiasing loss,
    /// debiasing update, then the council's GCE update.
    pub fn step(&mut self, indices: &[usize], observer: &mut dyn TrainObserver) -> Result<BatchLosses> {
        if indices.is_empty() {
            return Err(Error::shape("empty batch"));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.train.len()) {
            return Err(Error::shape(format!("sample index {bad} outside the training split")));
        }
        let (x, labels) = self.train.batch(indices);
        let n = indices.len() as f64;

        let biased = match &self.council {
            Some((council, _)) => council.predict(&x)?,
            None => Vec::new(),
        };
        observer.on_event(TrainEvent::BeforeDebiasUpdate {
            indices,
            biased: &biased,
            council: self.council(),
            model: &self.model,
        });

        let probs = self.model.forward_proba(&x)?;
        if let Some(bad) = probs.iter().find(|p| !p.is_finite()) {
            return Ok(BatchLosses {
                agreement: *bad,
                disagreement: *bad,
                objective: *bad,
                gce: None,
            });
        }
        let mut upstream = Vec::with_capacity(indices.len());
        let mut losses = BatchLosses::default();
        for (r, (&p1, &y)) in probs.iter().zip(&labels).enumerate() {
            let debias = true_label_prob(p1, y);
            let c = || Detached::new(true_label_prob(biased[r].get(), y));
            let (agr, dis, value, grad) = match self.cfg.method {
                Method::AdaAbc => {
                    let l = adaptive_agreement_loss(PredPair::new(c(), debias)?, self.cfg.lambda, self.cfg.epsilon)?;
                    (l.agreement, l.disagreement, l.total.value, l.total.grad)
                }
                Method::Erm | Method::AgreeOnly => {
                    let l = ce_loss(debias)?;
                    (l.value, 0.0, l.value, l.grad)
                }
                Method::DisagreeOnly => {
                    let l = opp_loss(PredPair::new(c(), debias)?, self.cfg.epsilon)?;
                    (0.0, l.value, l.value, l.grad)
                }
            };
            losses.agreement += agr / n;
            losses.disagreement += dis / n;
            losses.objective += value / n;
            upstream.push(to_class1_grad(grad, y));
        }
        if !losses.is_finite() {
            return Ok(losses);
        }

        let grads = self.model.backward(&Matrix::from_vec_unchecked(indices.len(), 1, upstream))?;
        self.model_opt.step(&mut self.model, &grads)?;
        observer.on_event(TrainEvent::AfterDebiasUpdate {
            indices,
            council: self.council(),
            model: &self.model,
        });

        if let Some((council, opt)) = self.council.as_mut() {
            losses.gce = Some(council.gce_step(&x, indices, &labels, opt)?);
        }
        Ok(losses)
    }
}
