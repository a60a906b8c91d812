use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::metrics::{Scorer, THRESHOLD};
use crate::nn::Matrix;
use crate::synth::Dataset;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Bounds {
    pub fn square(half_width: f64) -> Self {
        Self {
            x_min: -half_width,
            x_max: half_width,
            y_min: -half_width,
            y_max: half_width,
        }
    }

    /// Smallest box holding every sample of a two-feature dataset, widened by `pad` on each side.
    pub fn covering(data: &Dataset, pad: f64) -> Result<Self> {
        if data.dim() != 2 || data.is_empty() {
            return Err(Error::config("covering bounds need a non-empty two-feature dataset"));
        }
        let mut b = Self {
            x_min: f64::INFINITY,
            x_max: f64::NEG_INFINITY,
            y_min: f64::INFINITY,
            y_max: f64::NEG_INFINITY,
        };
        for s in data.samples() {
            b.x_min = b.x_min.min(s.x[0]);
            b.x_max = b.x_max.max(s.x[0]);
            b.y_min = b.y_min.min(s.x[1]);
            b.y_max = b.y_max.max(s.x[1]);
        }
        b.x_min -= pad;
        b.x_max += pad;
        b.y_min -= pad;
        b.y_max += pad;
        Ok(b)
    }

    fn validate(&self) -> Result<()> {
        let ok = [self.x_min, self.x_max, self.y_min, self.y_max].iter().all(|v| v.is_finite())
            && self.x_min <= self.x_max
            && self.y_min <= self.y_max;
        if ok {
            Ok(())
        } else {
            Err(Error::config(format!("invalid grid bounds {self:?}")))
        }
    }
}

fn coord(min: f64, max: f64, i: usize, n: usize) -> f64 {
    if n == 1 {
        (min + max) / 2.0
    } else {
        min + (max - min) * i as f64 / (n - 1) as f64
    }
}

/// Class-1 probabilities on a regular grid, row-major with `y` as the row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionGrid {
    pub bounds: Bounds,
    pub nx: usize,
    pub ny: usize,
    pub values: Vec<f64>,
}

/// Fractions of grid cells whose decision matches the sign of each axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisAlignment {
    /// Agreement with `x > 0`, the target feature.
    pub target: f64,
    /// Agreement with `y > 0`, the bias feature.
    pub bias: f64,
}

impl DecisionGrid {
    pub fn point(&self, ix: usize, iy: usize) -> (f64, f64) {
        (
            coord(self.bounds.x_min, self.bounds.x_max, ix, self.nx),
            coord(self.bounds.y_min, self.bounds.y_max, iy, self.ny),
        )
    }

    pub fn value(&self, ix: usize, iy: usize) -> f64 {
        self.values[iy * self.nx + ix]
    }

    fn decisions(&self) -> impl Iterator<Item = bool> + '_ {
        self.values.iter().map(|&v| v >= THRESHOLD)
    }

    /// Share of cells where both grids predict the same class.
    pub fn sign_agreement(&self, other: &DecisionGrid) -> Result<f64> {
        if self.nx != other.nx || self.ny != other.ny || self.bounds != other.bounds {
            return Err(Error::shape("grids cover different points"));
        }
        let same = self.decisions().zip(other.decisions()).filter(|(a, b)| a == b).count();
        Ok(same as f64 / self.values.len() as f64)
    }

    pub fn axis_alignment(&self) -> AxisAlignment {
        let (mut target, mut bias) = (0usize, 0usize);
        for iy in 0..self.ny {
            for ix in 0..self.nx {
                let (x, y) = self.point(ix, iy);
                let d = self.value(ix, iy) >= THRESHOLD;
                target += usize::from(d == (x > 0.0));
                bias += usize::from(d == (y > 0.0));
            }
        }
        let total = self.values.len() as f64;
        AxisAlignment {
            target: target as f64 / total,
            bias: bias as f64 / total,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("x,y,p\n");
        for iy in 0..self.ny {
            for ix in 0..self.nx {
                let (x, y) = self.point(ix, iy);
                writeln!(out, "{x},{y},{}", self.value(ix, iy)).expect("write to string");
            }
        }
        out
    }
}

/// Evaluates a two-input model on an `nx` by `ny` grid spanning `bounds`.
pub fn export_decision_grid(model: &dyn Scorer, bounds: Bounds, nx: usize, ny: usize) -> Result<DecisionGrid> {
    if model.input_dim() != 2 {
        return Err(Error::config(format!(
            "decision grids need a 2-input model, got {} inputs",
            model.input_dim()
        )));
    }
    if nx == 0 || ny == 0 {
        return Err(Error::config("grid resolution must be positive"));
    }
    bounds.validate()?;
    let mut grid = DecisionGrid {
        bounds,
        nx,
        ny,
        values: Vec::new(),
    };
    let mut points = Vec::with_capacity(2 * nx * ny);
    for iy in 0..ny {
        for ix in 0..nx {
            let (x, y) = grid.point(ix, iy);
            points.extend([x, y]);
        }
    }
    grid.values = model.scores(&Matrix::from_vec(nx * ny, 2, points)?)?;
    Ok(grid)
}
