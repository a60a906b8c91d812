use rand::Rng;
use rand_distr::{Distribution, Uniform};

use super::Matrix;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Sigmoid => {
                if z >= 0.0 {
                    1.0 / (1.0 + (-z).exp())
                } else {
                    let e = z.exp();
                    e / (1.0 + e)
                }
            }
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the activation's output.
    #[inline]
    pub fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => a * (1.0 - a),
            Activation::Identity => 1.0,
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Sigmoid => 1,
            Activation::Identity => 2,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Activation::Relu),
            1 => Some(Activation::Sigmoid),
            2 => Some(Activation::Identity),
            _ => None,
        }
    }
}

/// `activation(W x + b)` with `W` stored as an `(out, in)` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub(crate) weights: Matrix,
    pub(crate) bias: Vec<f64>,
    pub(crate) activation: Activation,
}

/// Parameter gradients of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl DenseLayer {
    pub fn new(weights: Matrix, bias: Vec<f64>, activation: Activation) -> Result<Self> {
        if bias.len() != weights.rows() {
            return Err(Error::shape(format!(
                "bias length {} does not match {} output units",
                bias.len(),
                weights.rows()
            )));
        }
        if weights.rows() == 0 || weights.cols() == 0 {
            return Err(Error::shape("layer dimensions must be non-zero"));
        }
        if bias.iter().any(|b| !b.is_finite()) {
            return Err(Error::domain("non-finite bias"));
        }
        Ok(Self {
            weights,
            bias,
            activation,
        })
    }

    /// Glorot-uniform weights, zero bias.
    pub fn glorot<R: Rng + ?Sized>(
        input: usize,
        output: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        if input == 0 || output == 0 {
            return Err(Error::shape("layer dimensions must be non-zero"));
        }
        let limit = (6.0 / (input + output) as f64).sqrt();
        let dist = Uniform::new_inclusive(-limit, limit)
            .map_err(|e| Error::config(format!("init range: {e}")))?;
        let weights = (0..input * output).map(|_| dist.sample(rng)).collect();
        Ok(Self {
            weights: Matrix::from_vec_unchecked(output, input, weights),
            bias: vec![0.0; output],
            activation,
        })
    }

    #[inline]
    pub fn input_dim(&self) -> usize {
        self.weights.cols()
    }

    #[inline]
    pub fn output_dim(&self) -> usize {
        self.weights.rows()
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn weights(&self) -> &Matrix {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn weights_mut(&mut self) -> &mut Matrix {
        &mut self.weights
    }

    pub fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.bias
    }

    pub(crate) fn forward(&self, input: &Matrix) -> Matrix {
        let (n_in, n_out) = (self.input_dim(), self.output_dim());
        debug_assert_eq!(input.cols(), n_in);
        let w = self.weights.as_slice();
        let mut out = Vec::with_capacity(input.rows() * n_out);
        for r in 0..input.rows() {
            let x = input.row(r);
            for o in 0..n_out {
                let row = &w[o * n_in..(o + 1) * n_in];
                let mut z = self.bias[o];
                for (wi, xi) in row.iter().zip(x) {
                    z += wi * xi;
                }
                out.push(self.activation.apply(z));
            }
        }
        Matrix::from_vec_unchecked(input.rows(), n_out, out)
    }

    /// Backpropagates `upstream = dL/d(output)` (summed over rows, no averaging).
    ///
    /// Returns the parameter gradients and, when `want_input` is set, `dL/d(input)`.
    pub(crate) fn backward(
        &self,
        input: &Matrix,
        output: &Matrix,
        upstream: &Matrix,
        want_input: bool,
    ) -> (LayerGrad, Option<Matrix>) {
        let (n_in, n_out) = (self.input_dim(), self.output_dim());
        let rows = input.rows();
        let mut delta = Vec::with_capacity(rows * n_out);
        for (a, g) in output.as_slice().iter().zip(upstream.as_slice()) {
            delta.push(g * self.activation.derivative_from_output(*a));
        }

        let mut dw = vec![0.0; n_out * n_in];
        let mut db = vec![0.0; n_out];
        for r in 0..rows {
            let x = input.row(r);
            let d = &delta[r * n_out..(r + 1) * n_out];
            for o in 0..n_out {
                let dro = d[o];
                db[o] += dro;
                if dro != 0.0 {
                    let gw = &mut dw[o * n_in..(o + 1) * n_in];
                    for (g, xi) in gw.iter_mut().zip(x) {
                        *g += dro * xi;
                    }
                }
            }
        }

        let dx = want_input.then(|| {
            let w = self.weights.as_slice();
            let mut dx = vec![0.0; rows * n_in];
            for r in 0..rows {
                let d = &delta[r * n_out..(r + 1) * n_out];
                let gx = &mut dx[r * n_in..(r + 1) * n_in];
                for o in 0..n_out {
                    let dro = d[o];
                    if dro != 0.0 {
                        for (g, wi) in gx.iter_mut().zip(&w[o * n_in..(o + 1) * n_in]) {
                            *g += wi * dro;
                        }
                    }
                }
            }
            Matrix::from_vec_unchecked(rows, n_in, dx)
        });

        (
            LayerGrad {
                weights: Matrix::from_vec_unchecked(n_out, n_in, dw),
                bias: db,
            },
            dx,
        )
    }
}
