use rand::Rng;

use super::layer::{Activation, DenseLayer, LayerGrad};
use super::Matrix;
use crate::{Error, Result};

/// Feed-forward stack of dense layers with an activation cache for one backward pass.
#[derive(Debug, Clone)]
pub struct Mlp {
    layers: Vec<DenseLayer>,
    /// Activations `a_0 = input, a_1, ..., a_L` of the last cached forward pass.
    cache: Option<Vec<Matrix>>,
}

/// Gradients for every layer of an [`Mlp`], in layer order.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub layers: Vec<LayerGrad>,
}

/// Result of a summed backward pass.
#[derive(Debug, Clone)]
pub struct Backprop {
    pub grads: GradientSet,
    /// `dL/d(input)` for the batch fed to the cached forward pass.
    pub input_grad: Matrix,
}

impl PartialEq for Mlp {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers
    }
}

impl Mlp {
    pub fn new(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::shape("a network needs at least one layer"));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].output_dim() != pair[1].input_dim() {
                return Err(Error::shape(format!(
                    "layer {i} emits {} values but layer {} expects {}",
                    pair[0].output_dim(),
                    i + 1,
                    pair[1].input_dim()
                )));
            }
        }
        Ok(Self {
            layers,
            cache: None,
        })
    }

    /// Glorot-initialized network with layer widths `sizes` (input first).
    pub fn init<R: Rng + ?Sized>(
        sizes: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(Error::shape("need an input and an output width"));
        }
        let last = sizes.len() - 2;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let act = if i == last { output } else { hidden };
                DenseLayer::glorot(w[0], w[1], act, rng)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(layers)
    }

    /// Concatenates two networks whose boundary widths match.
    pub fn stack(self, top: Mlp) -> Result<Self> {
        let mut layers = self.layers;
        layers.extend(top.layers);
        Self::new(layers)
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim()
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DenseLayer] {
        self.cache = None;
        &mut self.layers
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.as_slice().len() + l.bias.len())
            .sum()
    }

    fn check_input(&self, batch: &Matrix) -> Result<()> {
        if batch.cols() != self.input_dim() {
            return Err(Error::shape(format!(
                "batch has {} columns, network expects {}",
                batch.cols(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// Forward pass without touching the cache.
    pub fn predict(&self, batch: &Matrix) -> Result<Matrix> {
        self.check_input(batch)?;
        let mut a = self.layers[0].forward(batch);
        for layer in &self.layers[1..] {
            a = layer.forward(&a);
        }
        Ok(a)
    }

    /// Forward pass that caches every activation for [`Mlp::backward`].
    pub fn forward(&mut self, batch: &Matrix) -> Result<Matrix> {
        self.check_input(batch)?;
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(batch.clone());
        for layer in &self.layers {
            let next = layer.forward(acts.last().expect("non-empty"));
            acts.push(next);
        }
        let out = acts.last().expect("non-empty").clone();
        self.cache = Some(acts);
        Ok(out)
    }

    fn require_scalar_output(&self) -> Result<()> {
        if self.output_dim() != 1 {
            return Err(Error::shape(format!(
                "expected a single-output network, found {} outputs",
                self.output_dim()
            )));
        }
        Ok(())
    }

    /// Cached forward pass of a single-output network, one value per row.
    pub fn forward_proba(&mut self, batch: &Matrix) -> Result<Vec<f64>> {
        self.require_scalar_output()?;
        Ok(self.forward(batch)?.into_vec())
    }

    pub fn predict_proba(&self, batch: &Matrix) -> Result<Vec<f64>> {
        self.require_scalar_output()?;
        Ok(self.predict(batch)?.into_vec())
    }

    /// Gradients of the batch-mean loss, given each row's `dloss_i/d(output_i)`.
    pub fn backward(&self, upstream: &Matrix) -> Result<GradientSet> {
        let rows = upstream.rows();
        if rows == 0 {
            return Err(Error::shape("empty upstream gradient"));
        }
        let n = rows as f64;
        let scaled: Vec<f64> = upstream.as_slice().iter().map(|g| g / n).collect();
        let scaled = Matrix::from_vec_unchecked(rows, upstream.cols(), scaled);
        Ok(self.backprop(&scaled, false)?.0)
    }

    /// Backward pass with the upstream gradient used as given (no averaging).
    pub fn backward_sum(&self, upstream: &Matrix) -> Result<Backprop> {
        let (grads, input_grad) = self.backprop(upstream, true)?;
        Ok(Backprop {
            grads,
            input_grad: input_grad.expect("requested"),
        })
    }

    fn backprop(&self, upstream: &Matrix, want_input: bool) -> Result<(GradientSet, Option<Matrix>)> {
        let acts = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::State("backward called before forward".into()))?;
        let out = acts.last().expect("non-empty");
        if !out.same_shape(upstream) {
            return Err(Error::shape(format!(
                "upstream gradient is {}x{}, cached output is {}x{}",
                upstream.rows(),
                upstream.cols(),
                out.rows(),
                out.cols()
            )));
        }

        let mut grads = Vec::with_capacity(self.layers.len());
        let mut g = upstream.clone();
        let mut input_grad = None;
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let need_dx = i > 0 || want_input;
            let (lg, dx) = layer.backward(&acts[i], &acts[i + 1], &g, need_dx);
            grads.push(lg);
            match dx {
                Some(dx) if i > 0 => g = dx,
                other => input_grad = other,
            }
        }
        grads.reverse();
        Ok((GradientSet { layers: grads }, input_grad))
    }

    /// Visits every parameter in a fixed order: per layer, weights then bias.
    pub fn params(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers.iter().flat_map(|l| {
            l.weights
                .as_slice()
                .iter()
                .copied()
                .chain(l.bias.iter().copied())
        })
    }

    pub(crate) fn param_mut(&mut self, mut index: usize) -> &mut f64 {
        for layer in &mut self.layers {
            let nw = layer.weights.as_slice().len();
            if index < nw {
                return &mut layer.weights.as_mut_slice()[index];
            }
            index -= nw;
            if index < layer.bias.len() {
                return &mut layer.bias[index];
            }
            index -= layer.bias.len();
        }
        panic!("parameter index out of range");
    }

    /// Largest absolute parameter difference against a same-shaped network.
    pub fn max_abs_diff(&self, other: &Mlp) -> Result<f64> {
        if self.num_params() != other.num_params() || self.layers.len() != other.layers.len() {
            return Err(Error::shape("networks differ in shape"));
        }
        Ok(self
            .params()
            .zip(other.params())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    /// Bit patterns of all parameters, for exact equality checks.
    pub fn param_bits(&self) -> Vec<u64> {
        self.params().map(f64::to_bits).collect()
    }
}

impl GradientSet {
    pub fn zeros_like(model: &Mlp) -> Self {
        Self {
            layers: model
                .layers()
                .iter()
                .map(|l| LayerGrad {
                    weights: Matrix::zeros(l.output_dim(), l.input_dim()),
                    bias: vec![0.0; l.output_dim()],
                })
                .collect(),
        }
    }

    pub fn is_congruent(&self, model: &Mlp) -> bool {
        self.layers.len() == model.layers().len()
            && self.layers.iter().zip(model.layers()).all(|(g, l)| {
                g.weights.same_shape(&l.weights) && g.bias.len() == l.bias.len()
            })
    }

    /// Index of the first layer holding a NaN or infinite entry.
    pub fn first_non_finite_layer(&self) -> Option<usize> {
        self.layers.iter().position(|g| {
            !g.weights.is_finite() || g.bias.iter().any(|b| !b.is_finite())
        })
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers.iter().flat_map(|g| {
            g.weights
                .as_slice()
                .iter()
                .copied()
                .chain(g.bias.iter().copied())
        })
    }

    pub fn value_mut(&mut self, mut index: usize) -> &mut f64 {
        for g in &mut self.layers {
            let nw = g.weights.as_slice().len();
            if index < nw {
                return &mut g.weights.as_mut_slice()[index];
            }
            index -= nw;
            if index < g.bias.len() {
                return &mut g.bias[index];
            }
            index -= g.bias.len();
        }
        panic!("gradient index out of range");
    }

    pub fn max_abs(&self) -> f64 {
        self.values().map(f64::abs).fold(0.0, f64::max)
    }
}
