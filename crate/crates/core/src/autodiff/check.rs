use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{AutodiffError, Gradients, ParamStore};

/// Compares `grads` against central differences of `f` on every coordinate.
/// Returns max `|analytic - fd| / max(1, |fd|)`.
pub fn grad_check<F>(f: F, params: &ParamStore, grads: &Gradients, eps: f64) -> Result<f64, AutodiffError>
where
    F: Fn(&ParamStore) -> Result<f64, AutodiffError>,
{
    grad_check_coords(f, params, grads, eps, usize::MAX, 0)
}

/// As [`grad_check`], but probes at most `max_coords` coordinates sampled
/// uniformly (with `seed`) when the parameter count exceeds it.
pub fn grad_check_coords<F>(
    f: F,
    params: &ParamStore,
    grads: &Gradients,
    eps: f64,
    max_coords: usize,
    seed: u64,
) -> Result<f64, AutodiffError>
where
    F: Fn(&ParamStore) -> Result<f64, AutodiffError>,
{
    let mut coords: Vec<(usize, usize)> = Vec::new();
    for id in params.ids() {
        coords.extend((0..params.get(id).numel()).map(|j| (id.index(), j)));
    }
    if coords.len() > max_coords {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // partial Fisher-Yates
        for i in 0..max_coords {
            let j = rng.random_range(i..coords.len());
            coords.swap(i, j);
        }
        coords.truncate(max_coords);
    }
    let ids: Vec<_> = params.ids().collect();
    let mut work = params.clone();
    let mut worst = 0.0f64;
    for (p, j) in coords {
        let id = ids[p];
        let orig = work.get(id).data()[j];
        work.get_mut(id).data_mut()[j] = orig + eps;
        let up = f(&work)?;
        work.get_mut(id).data_mut()[j] = orig - eps;
        let down = f(&work)?;
        work.get_mut(id).data_mut()[j] = orig;
        let fd = (up - down) / (2.0 * eps);
        let analytic = grads.raw(id).map_or(0.0, |g| g[j]);
        worst = worst.max((analytic - fd).abs() / fd.abs().max(1.0));
    }
    Ok(worst)
}
