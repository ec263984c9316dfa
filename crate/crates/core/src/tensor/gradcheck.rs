//! Central finite-difference verification of analytic gradients.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Graph, ParamStore, TensorError, Var};

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub eps: f64,
    /// Probe at most this many entries per parameter tensor (all when `None`).
    pub max_per_param: Option<usize>,
    /// Skip entries whose one-sided differences disagree by more than this
    /// relative amount; those straddle a ReLU or max-pool switch.
    pub kink_tolerance: f64,
    /// Entries whose analytic gradient is nonzero but smaller than this are
    /// not sampled: central differences cannot resolve them to the required
    /// relative precision. Zero disables the filter.
    pub min_magnitude: f64,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            max_per_param: None,
            kink_tolerance: 1e-2,
            min_magnitude: 0.0,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub probed: usize,
    pub skipped_kinks: usize,
    pub skipped_small: usize,
}

#[derive(Debug, thiserror::Error)]
pub enum GradCheckError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("non-finite loss {value} while probing `{param}`[{index}]")]
    NonFinite {
        param: String,
        index: usize,
        value: f64,
    },
}

/// `|a − n| / max(1e-8, |a| + |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / f64::max(1e-8, analytic.abs() + numeric.abs())
}

fn eval<F>(store: &ParamStore, loss_fn: &F) -> Result<f64, TensorError>
where
    F: Fn(&mut Graph<'_>) -> Result<Var, TensorError>,
{
    let mut g = Graph::new(store);
    let out = loss_fn(&mut g)?;
    Ok(g.value(out).data()[0])
}

/// Compares the tape gradient of the scalar built by `loss_fn` against
/// central differences for every parameter of `store`.
pub fn grad_check<F>(
    store: &ParamStore,
    loss_fn: F,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport, GradCheckError>
where
    F: Fn(&mut Graph<'_>) -> Result<Var, TensorError>,
{
    let grads = {
        let mut g = Graph::new(store);
        let out = loss_fn(&mut g)?;
        g.backward(out)
    };
    let base = eval(store, &loss_fn)?;
    if !base.is_finite() {
        return Err(GradCheckError::NonFinite {
            param: "<base>".into(),
            index: 0,
            value: base,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut work = store.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        probed: 0,
        skipped_kinks: 0,
        skipped_small: 0,
    };
    let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
    for id in ids {
        let n = store.get(id).value.len();
        let analytic = grads.get(id);
        let mut idx: Vec<usize> = (0..n)
            .filter(|&i| {
                let a = analytic.map_or(0.0, |g| g.data()[i].abs());
                let small = a != 0.0 && a < opts.min_magnitude;
                report.skipped_small += usize::from(small);
                !small
            })
            .collect();
        if let Some(k) = opts.max_per_param {
            if n > k {
                // Entries with a nonzero analytic gradient are the informative ones.
                let (mut live, dead): (Vec<usize>, Vec<usize>) = idx
                    .into_iter()
                    .partition(|&i| analytic.is_some_and(|g| g.data()[i] != 0.0));
                live.shuffle(&mut rng);
                live.truncate(k);
                live.extend(dead.choose(&mut rng).copied());
                idx = live;
            }
        }
        for i in idx {
            let orig = store.get(id).value.data()[i];
            work.get_mut(id).value.data_mut()[i] = orig + opts.eps;
            let plus = eval(&work, &loss_fn)?;
            work.get_mut(id).value.data_mut()[i] = orig - opts.eps;
            let minus = eval(&work, &loss_fn)?;
            work.get_mut(id).value.data_mut()[i] = orig;
            for value in [plus, minus] {
                if !value.is_finite() {
                    return Err(GradCheckError::NonFinite {
                        param: store.get(id).name.clone(),
                        index: i,
                        value,
                    });
                }
            }
            let forward = (plus - base) / opts.eps;
            let backward = (base - minus) / opts.eps;
            let spread = (forward - backward).abs();
            if spread > opts.kink_tolerance * f64::max(forward.abs().max(backward.abs()), 1e-3) {
                report.skipped_kinks += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * opts.eps);
            let analytic = grads.get(id).map_or(0.0, |g| g.data()[i]);
            let err = relative_error(analytic, numeric);
            report.probed += 1;
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst_param = store.get(id).name.clone();
                report.worst_index = i;
                report.analytic = analytic;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}
