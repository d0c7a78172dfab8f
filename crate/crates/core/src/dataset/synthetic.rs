use super::{PatientRecord, QuestionnaireSchema};
use crate::error::{Error, Result};
use crate::rng::SeededRng;

/// Parameters of the planted logistic label model.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub n: usize,
    pub seed: u64,
    /// Target fraction of positive labels.
    pub prevalence: f64,
    /// One weight per feature; most are zero.
    pub signal_weights: Vec<f64>,
}

/// Draws a cohort whose labels follow `sigmoid(w·x + b)`.
///
/// Feature `j` is Bernoulli with a per-feature rate drawn uniformly from
/// `[0.15, 0.55)`. The intercept `b` is found by bisection so that the mean
/// label probability over the drawn features equals `prevalence`.
pub fn generate_synthetic_dataset(
    spec: &SyntheticSpec,
    schema: &QuestionnaireSchema,
) -> Result<Vec<PatientRecord>> {
    let d = schema.d();
    if spec.n == 0 {
        return Err(Error::arg("n must be at least 1"));
    }
    if !(spec.prevalence > 0.0 && spec.prevalence < 1.0) {
        return Err(Error::arg(format!("prevalence {} outside (0, 1)", spec.prevalence)));
    }
    if spec.signal_weights.len() != d {
        return Err(Error::arg(format!(
            "expected {d} signal weights, got {}",
            spec.signal_weights.len()
        )));
    }
    if spec.signal_weights.iter().any(|w| !w.is_finite()) {
        return Err(Error::arg("signal weights must be finite"));
    }

    let mut rng = SeededRng::new(spec.seed);
    let rates: Vec<f64> = (0..d).map(|_| 0.15 + 0.4 * rng.uniform()).collect();
    let features: Vec<Vec<u8>> = (0..spec.n)
        .map(|_| rates.iter().map(|&p| u8::from(rng.bernoulli(p))).collect())
        .collect();
    let margins: Vec<f64> = features
        .iter()
        .map(|x| x.iter().zip(&spec.signal_weights).map(|(&v, w)| f64::from(v) * w).sum())
        .collect();
    let bias = calibrate_intercept(&margins, spec.prevalence);

    features
        .into_iter()
        .zip(margins)
        .map(|(values, m)| {
            let label = u8::from(rng.bernoulli(sigmoid(m + bias)));
            PatientRecord::new(values, Some(label))
        })
        .collect()
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn calibrate_intercept(margins: &[f64], prevalence: f64) -> f64 {
    let mean_prob =
        |b: f64| margins.iter().map(|m| sigmoid(m + b)).sum::<f64>() / margins.len() as f64;
    let (mut lo, mut hi) = (-60.0, 60.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mean_prob(mid) < prevalence {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}
