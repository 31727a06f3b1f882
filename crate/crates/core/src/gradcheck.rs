//! Central finite-difference verification of hand-written backward passes.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::tensor::Param;

/// A scalar objective over a set of 64-bit parameters.
pub trait Differentiable {
    /// Objective at the current parameter values.
    fn loss(&self) -> f64;

    /// Objective at the current values; analytic gradients are accumulated
    /// into each parameter's `grad`.
    fn loss_and_grad(&mut self) -> f64;

    /// Parameters in a fixed order.
    fn params_mut(&mut self) -> Vec<&mut Param<f64>>;
}

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub eps: f64,
    /// Check at most this many randomly chosen entries per parameter
    /// tensor; `None` checks every entry.
    pub max_entries_per_param: Option<usize>,
    pub seed: u64,
    /// Relative errors are taken against `max(|analytic|, |numeric|, floor)`
    /// with `floor = floor_fraction · max |numeric|` over all checked entries.
    pub floor_fraction: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            eps: 1e-5,
            max_entries_per_param: None,
            seed: 0,
            floor_fraction: 1e-3,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// (parameter index, entry index) of the worst entry.
    pub worst: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

/// Compares analytic parameter gradients against central differences.
pub fn grad_check<M: Differentiable>(module: &mut M, opts: &GradCheckOptions) -> GradCheckReport {
    for p in module.params_mut() {
        p.zero_grad();
    }
    module.loss_and_grad();

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let selections: Vec<Vec<usize>> = module
        .params_mut()
        .iter()
        .map(|p| match opts.max_entries_per_param {
            Some(k) if k < p.len() => {
                let mut idx = sample(&mut rng, p.len(), k).into_vec();
                idx.sort_unstable();
                idx
            }
            _ => (0..p.len()).collect(),
        })
        .collect();

    let mut samples = Vec::new();
    for (pi, entries) in selections.iter().enumerate() {
        for &ei in entries {
            let (orig, analytic) = {
                let mut params = module.params_mut();
                let p = &mut params[pi];
                (p.value.data()[ei], p.grad.data()[ei])
            };
            module.params_mut()[pi].value.data_mut()[ei] = orig + opts.eps;
            let plus = module.loss();
            module.params_mut()[pi].value.data_mut()[ei] = orig - opts.eps;
            let minus = module.loss();
            module.params_mut()[pi].value.data_mut()[ei] = orig;
            let numeric = (plus - minus) / (2.0 * opts.eps);
            samples.push((pi, ei, analytic, numeric));
        }
    }

    let scale = samples.iter().map(|s| s.3.abs()).fold(0.0f64, f64::max);
    let floor = (scale * opts.floor_fraction).max(f64::MIN_POSITIVE);
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: (0, 0),
        analytic: 0.0,
        numeric: 0.0,
        checked: samples.len(),
    };
    for (pi, ei, a, n) in samples {
        let rel = (a - n).abs() / a.abs().max(n.abs()).max(floor);
        if rel > report.max_rel_err || !rel.is_finite() {
            report.max_rel_err = if rel.is_finite() { rel } else { f64::INFINITY };
            report.worst = (pi, ei);
            report.analytic = a;
            report.numeric = n;
        }
    }
    report
}
