//! Central finite-difference check of the analytic gradients.

use super::backward::{batch_gradients, example_loss, Example};
use super::lora::LoraAdapter;
use super::weights::MicroLmWeights;
use crate::error::Result;

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    pub step: f64,
    /// Also check base weights (every `base_stride`-th entry of each tensor).
    pub include_base: bool,
    pub base_stride: usize,
    /// Denominator floor for the relative error. With a 1e-5 step the
    /// central difference of an O(1) loss carries roughly 1e-10 of roundoff,
    /// so gradients much below 1e-6 cannot be resolved relatively.
    pub floor: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self { step: 1e-5, include_base: false, base_stride: 97, floor: 1e-6 }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub checked: usize,
    /// Parameter with the largest error, as `tensor[index]`.
    pub worst: String,
}

/// `|analytic - numeric| / max(|analytic| + |numeric|, floor)`
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(floor)
}

/// Compares every adapter gradient (and optionally a strided subset of base
/// gradients) of the summed batch loss with central differences.
pub fn gradient_check(
    weights: &MicroLmWeights,
    adapter: &LoraAdapter,
    batch: &[Example],
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    let grads = batch_gradients(weights, Some(adapter), batch, opts.include_base)?;
    let mut report = GradCheckReport { max_relative_error: 0.0, checked: 0, worst: String::new() };
    let h = opts.step;

    let analytic = grads.lora.expect("adapter given");
    let names: Vec<(String, Vec<f64>)> =
        analytic.tensors().into_iter().map(|t| (t.name, t.data.to_vec())).collect();
    let mut probe = adapter.clone();
    for (ti, (name, grad)) in names.iter().enumerate() {
        for (i, &g) in grad.iter().enumerate() {
            let orig = probe.tensors_mut()[ti].data[i];
            probe.tensors_mut()[ti].data[i] = orig + h;
            let up = example_losses(weights, Some(&probe), batch)?;
            probe.tensors_mut()[ti].data[i] = orig - h;
            let down = example_losses(weights, Some(&probe), batch)?;
            probe.tensors_mut()[ti].data[i] = orig;
            record(&mut report, g, central_difference(&up, &down, h), opts.floor, || format!("lora.{name}[{i}]"));
        }
    }

    if let Some(base_grad) = grads.base {
        let names: Vec<(String, Vec<f64>)> =
            base_grad.tensors().into_iter().map(|t| (t.name, t.data.to_vec())).collect();
        let mut probe = weights.clone();
        for (ti, (name, grad)) in names.iter().enumerate() {
            for i in (0..grad.len()).step_by(opts.base_stride.max(1)) {
                let orig = probe.tensors_mut()[ti].data[i];
                probe.tensors_mut()[ti].data[i] = orig + h;
                let up = example_losses(&probe, Some(adapter), batch)?;
                probe.tensors_mut()[ti].data[i] = orig - h;
                let down = example_losses(&probe, Some(adapter), batch)?;
                probe.tensors_mut()[ti].data[i] = orig;
                record(&mut report, grad[i], central_difference(&up, &down, h), opts.floor, || format!("{name}[{i}]"));
            }
        }
    }
    Ok(report)
}

fn example_losses(weights: &MicroLmWeights, adapter: Option<&LoraAdapter>, batch: &[Example]) -> Result<Vec<f64>> {
    batch.iter().map(|e| example_loss(weights, adapter, e)).collect()
}

/// Differences each example's loss before summing. Subtracting two summed
/// losses instead loses about `ulp(batch loss) / h` to cancellation.
fn central_difference(up: &[f64], down: &[f64], h: f64) -> f64 {
    up.iter().zip(down).map(|(u, d)| u - d).sum::<f64>() / (2.0 * h)
}

fn record(report: &mut GradCheckReport, analytic: f64, numeric: f64, floor: f64, name: impl FnOnce() -> String) {
    let err = relative_error(analytic, numeric, floor);
    report.checked += 1;
    if err > report.max_relative_error || report.worst.is_empty() {
        report.max_relative_error = report.max_relative_error.max(err);
        report.worst = name();
    }
}
