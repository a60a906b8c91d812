use super::{GradientSet, Matrix, Mlp};
use crate::Result;

pub const FD_STEP: f64 = 1e-5;

/// A batch loss: returns the mean loss and, per row, `dloss_i/d(output_i)`.
pub trait BatchLoss {
    fn evaluate(&self, outputs: &Matrix) -> (f64, Matrix);
}

impl<F> BatchLoss for F
where
    F: Fn(&Matrix) -> (f64, Matrix),
{
    fn evaluate(&self, outputs: &Matrix) -> (f64, Matrix) {
        self(outputs)
    }
}

/// Max relative error between backprop gradients and central differences.
/// Entries where both are below `1e-7` in magnitude are compared absolutely.
pub fn finite_difference_check(model: &Mlp, loss: &dyn BatchLoss, batch: &Matrix) -> Result<f64> {
    let mut work = model.clone();
    let out = work.forward(batch)?;
    let (_, upstream) = loss.evaluate(&out);
    let analytic = work.backward(&upstream)?;
    compare_with_finite_differences(model, loss, batch, &analytic)
}

/// Same figure as [`finite_difference_check`] for a caller-supplied gradient.
pub fn compare_with_finite_differences(
    model: &Mlp,
    loss: &dyn BatchLoss,
    batch: &Matrix,
    analytic: &GradientSet,
) -> Result<f64> {
    let mut work = model.clone();
    let mut worst = 0.0f64;
    for (i, a) in analytic.values().enumerate() {
        let orig = *work.param_mut(i);
        *work.param_mut(i) = orig + FD_STEP;
        let plus = loss.evaluate(&work.predict(batch)?).0;
        *work.param_mut(i) = orig - FD_STEP;
        let minus = loss.evaluate(&work.predict(batch)?).0;
        *work.param_mut(i) = orig;
        let numeric = (plus - minus) / (2.0 * FD_STEP);
        worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-7));
    }
    Ok(worst)
}
