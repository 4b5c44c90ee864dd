use rand::Rng;

use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::Result;

/// Gradients below this magnitude are compared absolutely rather than
/// relatively.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct CoordCheck {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FdReport {
    pub max_rel_error: f64,
    pub coords: Vec<CoordCheck>,
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_ERROR_FLOOR)
}

/// Compares the analytic gradient returned by `loss_fn` against central
/// differences on `n_coords` sampled coordinates. Half of the coordinates
/// are drawn from entries with non-zero analytic gradient, the rest by
/// picking a parameter tensor uniformly and then an entry uniformly.
pub fn finite_diff_check<F, R>(
    params: &mut ParamStore,
    mut loss_fn: F,
    eps: f64,
    n_coords: usize,
    rng: &mut R,
) -> Result<FdReport>
where
    F: FnMut(&ParamStore) -> Result<(f64, Vec<Tensor>)>,
    R: Rng + ?Sized,
{
    let (_, grads) = loss_fn(params)?;
    let active: Vec<(usize, usize)> = grads
        .iter()
        .enumerate()
        .flat_map(|(p, g)| {
            g.data()
                .iter()
                .enumerate()
                .filter(|(_, v)| v.abs() > 0.0)
                .map(move |(i, _)| (p, i))
        })
        .collect();
    let mut coords = Vec::with_capacity(n_coords);
    for k in 0..n_coords {
        let (p, i) = if k % 2 == 0 && !active.is_empty() {
            active[rng.gen_range(0..active.len())]
        } else {
            let p = rng.gen_range(0..params.len());
            (p, rng.gen_range(0..params.tensors()[p].numel()))
        };
        let orig = params.tensors()[p].data()[i];
        params.tensors_mut()[p].data_mut()[i] = orig + eps;
        let (plus, _) = loss_fn(params)?;
        params.tensors_mut()[p].data_mut()[i] = orig - eps;
        let (minus, _) = loss_fn(params)?;
        params.tensors_mut()[p].data_mut()[i] = orig;
        let numeric = (plus - minus) / (2.0 * eps);
        let analytic = grads[p].data()[i];
        coords.push(CoordCheck {
            param: params.names()[p].clone(),
            index: i,
            analytic,
            numeric,
            rel_error: relative_error(analytic, numeric),
        });
    }
    let max_rel_error = coords.iter().map(|c| c.rel_error).fold(0.0, f64::max);
    Ok(FdReport { max_rel_error, coords })
}
