//! Closed-form expected adaptive loss over the four (t, b) cells, and its minimizer.
//!
//! Labels follow the target attribute, so in cell `(t, b)` the only outcome is `y = t`.
//! Cells are always listed in the order `(1,1), (0,0), (0,1), (1,0)`.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// `(t, b)` per cell, in table order: the two aligned cells first.
pub const CELLS: [(u8, u8); 4] = [(1, 1), (0, 0), (0, 1), (1, 0)];
pub const SATURATION_CLAMP: f64 = 1e-6;
pub const DEFAULT_GRID_STEP: f64 = 0.001;
const TRISECTION_ROUNDS: usize = 3;

pub fn cell_name(cell: usize) -> String {
    let (t, b) = CELLS[cell];
    format!("{t}{b}")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellDistribution([f64; 4]);

impl CellDistribution {
    pub fn new(pi: [f64; 4]) -> Result<Self> {
        if pi.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::domain(format!("cell masses must be non-negative, got {pi:?}")));
        }
        let total: f64 = pi.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::domain(format!("cell masses sum to {total}, not 1")));
        }
        Ok(Self(pi))
    }

    pub fn uniform() -> Self {
        Self([0.25; 4])
    }

    /// `aligned` split evenly over the aligned cells, the rest over the conflicting ones.
    pub fn with_aligned_mass(aligned: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&aligned) {
            return Err(Error::domain(format!("aligned mass {aligned} outside [0, 1]")));
        }
        let (a, c) = (aligned / 2.0, (1.0 - aligned) / 2.0);
        Self::new([a, a, c, c])
    }

    pub fn as_array(&self) -> [f64; 4] {
        self.0
    }
}

/// `P(Y = 1 | t, b)` per cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PosteriorTable([f64; 4]);

impl PosteriorTable {
    pub fn new(p: [f64; 4]) -> Result<Self> {
        if p.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::domain(format!("posterior entries must lie in [0, 1], got {p:?}")));
        }
        Ok(Self(p))
    }

    /// `P(Y=1 | t, b) = t`.
    pub fn target() -> Self {
        Self(CELLS.map(|(t, _)| f64::from(t)))
    }

    /// `P(Y=1 | t, b) = b`: a model that learned only the bias.
    pub fn bias() -> Self {
        Self(CELLS.map(|(_, b)| f64::from(b)))
    }

    pub fn as_array(&self) -> [f64; 4] {
        self.0
    }

    pub fn max_abs_diff(&self, other: &PosteriorTable) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    /// Moves every entry toward 0.5: `(1 - 2α)·p + α`.
    pub fn corrupted(&self, alpha: f64) -> Result<Self> {
        if !(0.0..=0.5).contains(&alpha) {
            return Err(Error::domain(format!("corruption {alpha} outside [0, 0.5]")));
        }
        Ok(Self(self.0.map(|p| (1.0 - 2.0 * alpha) * p + alpha)))
    }
}

fn check_lambda_epsilon(lambda: f64, epsilon: f64) -> Result<()> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::domain(format!("lambda must be non-negative, got {lambda}")));
    }
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::domain(format!("epsilon must be positive, got {epsilon}")));
    }
    Ok(())
}

/// Adaptive loss of one cell, whose label is `t`, for class-1 probabilities
/// `biased` and `candidate`. The candidate is held inside the saturation clamp.
pub fn cell_loss(t: u8, biased: f64, candidate: f64, lambda: f64, epsilon: f64) -> f64 {
    let x = candidate.clamp(SATURATION_CLAMP, 1.0 - SATURATION_CLAMP);
    let (c, d) = if t == 1 { (biased, x) } else { (1.0 - biased, 1.0 - x) };
    let mut loss = 0.0;
    if c > 0.0 {
        loss += c * -d.ln();
    }
    if c < 1.0 && lambda > 0.0 {
        loss += lambda * (1.0 - c) * -(d * (1.0 - c) + c * (1.0 - d) + epsilon).ln();
    }
    loss
}

/// Expected adaptive loss of `candidate` under the cell masses `pi`.
pub fn expected_ad_loss(
    pi: &CellDistribution,
    biased: &PosteriorTable,
    candidate: &PosteriorTable,
    lambda: f64,
    epsilon: f64,
) -> Result<f64> {
    check_lambda_epsilon(lambda, epsilon)?;
    Ok((0..4)
        .filter(|&k| pi.0[k] > 0.0)
        .map(|k| pi.0[k] * cell_loss(CELLS[k].0, biased.0[k], candidate.0[k], lambda, epsilon))
        .sum())
}

/// Arg-min of the per-cell losses, with the objective at that point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Minimizer {
    pub table: PosteriorTable,
    /// Per-cell loss at the minimizer, not weighted by the cell mass.
    pub cell_losses: [f64; 4],
    /// Expected loss at the minimizer.
    pub objective: f64,
}

fn minimize_cell(f: impl Fn(f64) -> f64, grid_step: f64) -> f64 {
    let (lo, hi) = (SATURATION_CLAMP, 1.0 - SATURATION_CLAMP);
    let steps = (1.0 / grid_step).round() as usize;
    let candidates = std::iter::once(lo)
        .chain((1..steps).map(|k| k as f64 * grid_step).filter(|x| *x > lo && *x < hi))
        .chain(std::iter::once(hi));
    let mut best = (lo, f(lo));
    for x in candidates {
        let v = f(x);
        if v < best.1 {
            best = (x, v);
        }
    }

    let mut half = grid_step;
    for _ in 0..TRISECTION_ROUNDS {
        let a = (best.0 - half).max(lo);
        let b = (best.0 + half).min(hi);
        let w = b - a;
        for x in [a, a + w / 3.0, a + 2.0 * w / 3.0, b] {
            let v = f(x);
            if v < best.1 {
                best = (x, v);
            }
        }
        half = w / 3.0;
    }

    let x = best.0;
    if x <= lo {
        0.0
    } else if x >= hi {
        1.0
    } else {
        x
    }
}

/// Minimizes each cell on a grid of spacing `grid_step`, then refines locally.
///
/// Cells are minimized independently because the objective is a mass-weighted sum
/// of per-cell terms. A cell without mass is still minimized on its own term.
pub fn minimize_posterior(
    pi: &CellDistribution,
    biased: &PosteriorTable,
    lambda: f64,
    epsilon: f64,
    grid_step: f64,
) -> Result<Minimizer> {
    check_lambda_epsilon(lambda, epsilon)?;
    if !(grid_step > 0.0 && grid_step <= 0.5) {
        return Err(Error::domain(format!("grid step {grid_step} outside (0, 0.5]")));
    }
    let mut table = [0.0; 4];
    let mut cell_losses = [0.0; 4];
    for k in 0..4 {
        let t = CELLS[k].0;
        let f = |x: f64| cell_loss(t, biased.0[k], x, lambda, epsilon);
        table[k] = minimize_cell(f, grid_step);
        cell_losses[k] = f(table[k]);
    }
    let table = PosteriorTable(table);
    Ok(Minimizer {
        objective: expected_ad_loss(pi, biased, &table, lambda, epsilon)?,
        table,
        cell_losses,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub corruption: f64,
    pub biased: PosteriorTable,
    pub minimizer: Minimizer,
}

/// Minimizers when the biased posterior `b` is blended toward 0.5 by each level.
pub fn sweep_bias_quality(
    pi: &CellDistribution,
    lambda: f64,
    epsilon: f64,
    corruption: &[f64],
    grid_step: f64,
) -> Result<Vec<SweepRow>> {
    corruption
        .iter()
        .map(|&alpha| {
            let biased = PosteriorTable::bias().corrupted(alpha)?;
            Ok(SweepRow {
                corruption: alpha,
                biased,
                minimizer: minimize_posterior(pi, &biased, lambda, epsilon, grid_step)?,
            })
        })
        .collect()
}

pub const SWEEP_CSV_HEADER: &str = "corruption,cell,biased,minimizer,objective";

/// One line per (level, cell); `objective` is that cell's unweighted loss.
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = format!("{SWEEP_CSV_HEADER}\n");
    for row in rows {
        for k in 0..4 {
            writeln!(
                out,
                "{},{},{},{},{}",
                row.corruption,
                cell_name(k),
                row.biased.0[k],
                row.minimizer.table.0[k],
                row.minimizer.cell_losses[k]
            )
            .expect("write to string");
        }
    }
    out
}
