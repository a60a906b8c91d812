//! The bias council: a shared trunk feeding `n` sigmoid heads, each trained with GCE
//! on its own random subset of the training set. Its prediction is the mean of the
//! head probabilities.

use std::io::{Read, Write};
use std::path::Path;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::losses::{gce_loss, to_class1_grad, true_label_prob, Detached, GceConfig};
use crate::metrics::Scorer;
use crate::nn::{
    read_f64, read_header, read_mlp_body, read_u32, read_u64, read_u8, write_f64, write_header,
    write_mlp_body, write_u32, write_u64, Activation, Algorithm, CheckpointKind, DenseLayer,
    Matrix, Mlp, OptimizerState,
};
use crate::{Error, Result};

pub const DEFAULT_SUBSET_FRACTION: f64 = 0.7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CouncilConfig {
    pub n_heads: usize,
    pub subset_fraction: f64,
    pub with_replacement: bool,
    pub gce: GceConfig,
}

impl Default for CouncilConfig {
    fn default() -> Self {
        Self {
            n_heads: 16,
            subset_fraction: DEFAULT_SUBSET_FRACTION,
            with_replacement: false,
            gce: GceConfig::default(),
        }
    }
}

impl CouncilConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_heads == 0 {
            return Err(Error::config("a council needs at least one head"));
        }
        if !(self.subset_fraction > 0.0 && self.subset_fraction <= 1.0) {
            return Err(Error::config(format!(
                "subset fraction must lie in (0, 1], got {}",
                self.subset_fraction
            )));
        }
        Ok(())
    }
}

/// Seed streams: trunk init, then interleaved head init / head subset per head.
fn stream(seed: u64, k: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(k);
    r
}

pub(crate) const TRUNK_STREAM: u64 = 0;

pub(crate) fn head_init_stream(i: usize) -> u64 {
    1 + 2 * i as u64
}

fn head_mask_stream(i: usize) -> u64 {
    2 + 2 * i as u64
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiasCouncil {
    trunk: Mlp,
    heads: Vec<Mlp>,
    masks: Vec<Vec<bool>>,
    cfg: CouncilConfig,
}

/// Adam or SGD state for the trunk and each head.
#[derive(Debug, Clone)]
pub struct CouncilOptimizer {
    pub trunk: OptimizerState,
    pub heads: Vec<OptimizerState>,
}

impl CouncilOptimizer {
    pub fn new(council: &BiasCouncil, algorithm: Algorithm, lr: f64) -> Result<Self> {
        Ok(Self {
            trunk: OptimizerState::new(algorithm, lr)?,
            heads: (0..council.n_heads())
                .map(|_| OptimizerState::new(algorithm, lr))
                .collect::<Result<_>>()?,
        })
    }
}

fn draw_mask(cfg: &CouncilConfig, dataset_size: usize, rng: &mut ChaCha8Rng) -> Vec<bool> {
    let k = (cfg.subset_fraction * dataset_size as f64).ceil() as usize;
    let k = k.min(dataset_size);
    let mut mask = vec![false; dataset_size];
    if cfg.with_replacement {
        for _ in 0..k {
            mask[rng.random_range(0..dataset_size)] = true;
        }
    } else if k == dataset_size {
        mask.iter_mut().for_each(|m| *m = true);
    } else {
        for i in index::sample(rng, dataset_size, k) {
            mask[i] = true;
        }
    }
    mask
}

impl BiasCouncil {
    /// Builds a council whose trunk has widths `trunk_sizes` (input first, feature last).
    pub fn build(
        cfg: CouncilConfig,
        trunk_sizes: &[usize],
        dataset_size: usize,
        seed: u64,
    ) -> Result<Self> {
        cfg.validate()?;
        if dataset_size == 0 {
            return Err(Error::config("dataset is empty"));
        }
        if cfg.subset_fraction * (dataset_size as f64) < 1.0 {
            return Err(Error::config(format!(
                "subset fraction {} of {dataset_size} samples selects nothing",
                cfg.subset_fraction
            )));
        }
        let trunk = Mlp::init(trunk_sizes, Activation::Relu, Activation::Relu, &mut stream(seed, TRUNK_STREAM))?;
        let feature = trunk.output_dim();
        let mut heads = Vec::with_capacity(cfg.n_heads);
        let mut masks = Vec::with_capacity(cfg.n_heads);
        for i in 0..cfg.n_heads {
            let layer = DenseLayer::glorot(feature, 1, Activation::Sigmoid, &mut stream(seed, head_init_stream(i)))?;
            heads.push(Mlp::new(vec![layer])?);
            masks.push(draw_mask(&cfg, dataset_size, &mut stream(seed, head_mask_stream(i))));
        }
        Ok(Self {
            trunk,
            heads,
            masks,
            cfg,
        })
    }

    pub fn from_parts(trunk: Mlp, heads: Vec<Mlp>, masks: Vec<Vec<bool>>, cfg: CouncilConfig) -> Result<Self> {
        cfg.validate()?;
        if heads.len() != cfg.n_heads || masks.len() != cfg.n_heads {
            return Err(Error::shape("head count, mask count and configuration disagree"));
        }
        let size = masks.first().map_or(0, Vec::len);
        for (i, (h, m)) in heads.iter().zip(&masks).enumerate() {
            if h.input_dim() != trunk.output_dim() || h.output_dim() != 1 {
                return Err(Error::shape(format!("head {i} does not fit the trunk")));
            }
            if m.len() != size || !m.iter().any(|&b| b) {
                return Err(Error::shape(format!("mask {i} is empty or mis-sized")));
            }
        }
        Ok(Self {
            trunk,
            heads,
            masks,
            cfg,
        })
    }

    pub fn n_heads(&self) -> usize {
        self.heads.len()
    }

    pub fn config(&self) -> &CouncilConfig {
        &self.cfg
    }

    pub fn trunk(&self) -> &Mlp {
        &self.trunk
    }

    pub fn heads(&self) -> &[Mlp] {
        &self.heads
    }

    pub fn masks(&self) -> &[Vec<bool>] {
        &self.masks
    }

    pub fn input_dim(&self) -> usize {
        self.trunk.input_dim()
    }

    pub fn dataset_size(&self) -> usize {
        self.masks[0].len()
    }

    /// Bit patterns of every trunk and head parameter.
    pub fn param_bits(&self) -> Vec<u64> {
        let mut bits = self.trunk.param_bits();
        for h in &self.heads {
            bits.extend(h.param_bits());
        }
        bits
    }

    /// Class-1 probability of each head for each row, `heads × rows`.
    pub fn head_predictions(&self, batch: &Matrix) -> Result<Vec<Vec<f64>>> {
        let z = self.trunk.predict(batch)?;
        self.heads.iter().map(|h| h.predict_proba(&z)).collect()
    }

    /// Mean head probability of class 1, detached from the council's parameters.
    pub fn predict(&self, batch: &Matrix) -> Result<Vec<Detached>> {
        let per_head = self.head_predictions(batch)?;
        let n = per_head.len() as f64;
        let mut mean = vec![0.0; batch.rows()];
        for probs in &per_head {
            for (m, p) in mean.iter_mut().zip(probs) {
                *m += p;
            }
        }
        Ok(mean.into_iter().map(|m| Detached::new(m / n)).collect())
    }

    /// One GCE step on a batch. Head `i` sees only the batch rows inside its mask and
    /// follows the gradient of its own masked mean loss; the trunk follows the mean
    /// over heads. Returns that mean loss.
    pub fn gce_step(
        &mut self,
        batch: &Matrix,
        batch_indices: &[usize],
        labels: &[u8],
        opt: &mut CouncilOptimizer,
    ) -> Result<f64> {
        let rows = batch.rows();
        if batch_indices.len() != rows || labels.len() != rows {
            return Err(Error::shape("batch, index and label lengths differ"));
        }
        if let Some(&bad) = batch_indices.iter().find(|&&i| i >= self.dataset_size()) {
            return Err(Error::shape(format!("sample index {bad} outside the council's dataset")));
        }
        if opt.heads.len() != self.heads.len() {
            return Err(Error::shape("optimizer head count differs from council"));
        }

        let gce = self.cfg.gce;
        let z = self.trunk.forward(batch)?;
        let n_heads = self.heads.len() as f64;
        let mut loss_sum = 0.0;
        let mut trunk_upstream: Option<Matrix> = None;

        for ((head, mask), head_opt) in self.heads.iter_mut().zip(&self.masks).zip(opt.heads.iter_mut()) {
            let probs = head.forward_proba(&z)?;
            let inside: Vec<bool> = batch_indices.iter().map(|&i| mask[i]).collect();
            let m = inside.iter().filter(|&&b| b).count();

            let mut upstream = vec![0.0; rows];
            let mut loss = 0.0;
            if m > 0 {
                let count = m as f64;
                for r in (0..rows).filter(|&r| inside[r]) {
                    let c = true_label_prob(probs[r], labels[r]);
                    let l = gce_loss(c, gce)?;
                    loss += l.value;
                    upstream[r] = to_class1_grad(l.grad, labels[r]) / count;
                }
                loss /= count;
            }
            if !loss.is_finite() {
                return Err(Error::domain("non-finite GCE loss"));
            }
            loss_sum += loss;

            let bp = head.backward_sum(&Matrix::from_vec_unchecked(rows, 1, upstream))?;
            head_opt.step(head, &bp.grads)?;
            match trunk_upstream.as_mut() {
                None => trunk_upstream = Some(bp.input_grad),
                Some(acc) => {
                    for (a, g) in acc.as_mut_slice().iter_mut().zip(bp.input_grad.as_slice()) {
                        *a += g;
                    }
                }
            }
        }

        let mut trunk_upstream = trunk_upstream.expect("at least one head");
        for g in trunk_upstream.as_mut_slice() {
            *g /= n_heads;
        }
        let bp = self.trunk.backward_sum(&trunk_upstream)?;
        opt.trunk.step(&mut self.trunk, &bp.grads)?;
        Ok(loss_sum / n_heads)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        write_header(&mut w, CheckpointKind::Council)?;
        write_f64(&mut w, self.cfg.gce.q())?;
        write_f64(&mut w, self.cfg.subset_fraction)?;
        w.write_all(&[self.cfg.with_replacement as u8])?;
        write_mlp_body(&mut w, &self.trunk)?;
        write_u32(&mut w, self.heads.len() as u32)?;
        for h in &self.heads {
            write_mlp_body(&mut w, h)?;
        }
        write_u64(&mut w, self.dataset_size() as u64)?;
        for mask in &self.masks {
            let bytes: Vec<u8> = mask.iter().map(|&b| b as u8).collect();
            w.write_all(&bytes)?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        read_header(&mut r, CheckpointKind::Council)?;
        let q = read_f64(&mut r)?;
        let subset_fraction = read_f64(&mut r)?;
        let with_replacement = read_u8(&mut r)? != 0;
        let trunk = read_mlp_body(&mut r)?;
        let n = read_u32(&mut r)? as usize;
        let heads = (0..n).map(|_| read_mlp_body(&mut r)).collect::<Result<Vec<_>>>()?;
        let size = read_u64(&mut r)? as usize;
        let mut masks = Vec::with_capacity(n);
        for _ in 0..n {
            let mut bytes = vec![0u8; size];
            r.read_exact(&mut bytes)?;
            masks.push(bytes.into_iter().map(|b| b != 0).collect());
        }
        let cfg = CouncilConfig {
            n_heads: n,
            subset_fraction,
            with_replacement,
            gce: GceConfig::new(q)?,
        };
        Self::from_parts(trunk, heads, masks, cfg).map_err(|e| Error::Checkpoint(e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(std::fs::read(path)?.as_slice())
    }
}

impl Scorer for BiasCouncil {
    fn input_dim(&self) -> usize {
        BiasCouncil::input_dim(self)
    }

    fn scores(&self, batch: &Matrix) -> Result<Vec<f64>> {
        Ok(self.predict(batch)?.into_iter().map(Detached::get).collect())
    }
}
