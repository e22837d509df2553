//! Finite-difference verification of the full model's analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::exec::Exec;
use crate::model::{Model, ModelInput};
use crate::params::ParamStore;

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    pub eps: f64,
    /// Lower bound on the number of checked scalars.
    pub min_params: usize,
    pub seed: u64,
    /// Test hook: doubles the analytic gradient of the named tensor.
    pub corrupt: Option<String>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            min_params: 50,
            seed: 0,
            corrupt: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckEntry {
    pub name: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_error: f64,
    pub entries: Vec<GradCheckEntry>,
}

impl GradCheckReport {
    pub fn worst(&self) -> Option<&GradCheckEntry> {
        self.entries.iter().max_by(|a, b| a.error.total_cmp(&b.error))
    }
}

/// Relative error against the numeric value; absolute when both sides are
/// below `1e-8`.
pub fn gradient_error(analytic: f64, numeric: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    if analytic.abs().max(numeric.abs()) < 1e-8 {
        diff
    } else {
        diff / numeric.abs().max(1e-8)
    }
}

/// Checks a deterministic sample of every trainable tensor.
pub fn gradient_check(
    model: &Model,
    store: &ParamStore,
    batch: &[&ModelInput],
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    let exec = Exec::Sequential;
    let (_, grads) = model.loss_and_grad(store, batch, exec)?;
    let tensors: Vec<_> = store
        .iter()
        .filter(|(_, p)| p.trainable && !p.is_empty())
        .map(|(id, _)| id)
        .collect();
    let per_tensor = opts.min_params.div_ceil(tensors.len().max(1)).max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut probe = store.clone();
    let mut entries = Vec::new();
    for id in tensors {
        let len = store.get(id).len();
        let mut picks = sample(&mut rng, len, per_tensor.min(len)).into_vec();
        picks.sort_unstable();
        let name = store.get(id).name.clone();
        let factor = if opts.corrupt.as_deref() == Some(name.as_str()) {
            2.0
        } else {
            1.0
        };
        for j in picks {
            let orig = probe.get(id).data[j];
            probe.get_mut(id).data[j] = orig + opts.eps;
            let plus = model.forward(&probe, batch, exec)?.loss;
            probe.get_mut(id).data[j] = orig - opts.eps;
            let minus = model.forward(&probe, batch, exec)?.loss;
            probe.get_mut(id).data[j] = orig;
            let numeric = (plus - minus) / (2.0 * opts.eps);
            let analytic = grads.get(id)[j] * factor;
            entries.push(GradCheckEntry {
                name: name.clone(),
                index: j,
                analytic,
                numeric,
                error: gradient_error(analytic, numeric),
            });
        }
    }
    let max_error = entries.iter().map(|e| e.error).fold(0.0, f64::max);
    Ok(GradCheckReport { max_error, entries })
}
