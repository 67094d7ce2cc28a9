use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Mode, ModelSpec, Network, Params, Real};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub eps: f64,
    /// Compare at most this many seeded coordinates; `None` checks all.
    pub max_coords: Option<usize>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            max_coords: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckReport {
    /// Max over compared coordinates of
    /// `|analytic - numeric| / max(1e-8, |analytic| + |numeric|)`.
    pub max_rel_error: f64,
    pub compared: usize,
    /// Coordinates whose perturbation moved some relu input across zero.
    pub skipped_kinks: usize,
}

/// Checks the backpropagated gradient of the mean cross-entropy, computed
/// in `T` arithmetic, against central finite differences evaluated in
/// double precision on the same parameter values. Dropout masks are frozen
/// from one training pass.
pub fn grad_check<T: Real>(
    spec: &ModelSpec,
    batch: &[T],
    labels: &[usize],
    seed: u64,
    opts: GradCheckOptions,
) -> Result<GradCheckReport> {
    if !(opts.eps.is_finite() && opts.eps > 0.0) {
        return Err(Error::config(format!("finite-difference step {} must be positive", opts.eps)));
    }
    let net = Network::<T>::init(spec.clone(), seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let (_, trace) = net.forward(batch, Mode::Train(&mut rng))?;
    let trace = trace.expect("train mode records a trace");
    let analytic = net.backward(&trace, labels)?;

    let widen = |v: &[T]| -> Vec<f64> { v.iter().map(|x| x.to_f64().expect("finite")).collect() };
    let masks: Vec<Option<Vec<f64>>> = trace.masks().iter().map(|m| m.as_deref().map(widen)).collect();
    let wide_batch = widen(batch);
    let mut reference = Network::<f64>::new(spec.clone(), Params::from_values(spec, widen(&net.params().values))?)?;
    let base_pattern = reference
        .forward(&wide_batch, Mode::Frozen(&masks))?
        .1
        .expect("trace")
        .relu_pattern(spec);

    let n = analytic.len();
    let coords: Vec<usize> = match opts.max_coords {
        Some(k) if k < n => {
            let mut c = index::sample(&mut rng, n, k).into_vec();
            c.sort_unstable();
            c
        }
        _ => (0..n).collect(),
    };
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        compared: 0,
        skipped_kinks: 0,
    };
    let loss_at = |net: &mut Network<f64>, i: usize, value: f64| -> Result<(f64, bool)> {
        net.params_mut().values[i] = value;
        let (logits, trace) = net.forward(&wide_batch, Mode::Frozen(&masks))?;
        let same_side = trace.expect("trace").relu_pattern(spec) == base_pattern;
        let probs = super::softmax_rows(&logits, spec.num_classes);
        Ok((super::cross_entropy_loss(&probs, spec.num_classes, labels)?, same_side))
    };
    for i in coords {
        let orig = reference.params().values[i];
        let (plus, ok_plus) = loss_at(&mut reference, i, orig + opts.eps)?;
        let (minus, ok_minus) = loss_at(&mut reference, i, orig - opts.eps)?;
        reference.params_mut().values[i] = orig;
        if !(ok_plus && ok_minus) {
            report.skipped_kinks += 1;
            continue;
        }
        let h = (orig + opts.eps) - (orig - opts.eps);
        let numeric = (plus - minus) / h;
        let a = analytic[i].to_f64().expect("finite");
        let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
        report.max_rel_error = report.max_rel_error.max(rel);
        report.compared += 1;
    }
    Ok(report)
}
