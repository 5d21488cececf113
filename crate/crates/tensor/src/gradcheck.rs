//! Central finite-difference check of reverse-mode gradients (f64 only).

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{contract, Result, TensorError};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    /// Finite-difference step, within `[1e-6, 1e-4]`.
    pub eps: f64,
    /// Coordinates sampled per parameter; all of them when the parameter is
    /// smaller.
    pub coords_per_param: usize,
    /// Gradients below this magnitude are compared in absolute terms.
    pub abs_floor: f64,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            coords_per_param: 16,
            abs_floor: 1e-7,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub coords_checked: usize,
    /// (parameter index, flat coordinate) of the worst coordinate.
    pub worst: (usize, usize),
}

fn evaluate<F>(f: &mut F, params: &[Tensor<f64>]) -> Result<(Graph<f64>, Vec<Var>, Var)>
where
    F: FnMut(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars = params
        .iter()
        .map(|p| g.param(p.clone()))
        .collect::<Result<Vec<_>>>()?;
    let out = f(&mut g, &vars)?;
    if g.value(out).numel() != 1 {
        return Err(TensorError::NonScalar(g.shape(out).to_vec()));
    }
    Ok((g, vars, out))
}

/// Compares the reverse-mode gradient of the scalar `f(params)` against
/// central differences on sampled coordinates and returns the largest
/// relative error `|a - n| / max(|a|, |n|, abs_floor)`.
pub fn grad_check<F>(mut f: F, params: &[Tensor<f64>], opts: GradCheckOptions) -> Result<GradCheckReport>
where
    F: FnMut(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    if !(1e-6..=1e-4).contains(&opts.eps) {
        return Err(contract("grad_check", format!("eps {} outside [1e-6, 1e-4]", opts.eps)));
    }
    let (g, vars, out) = evaluate(&mut f, params)?;
    let grads = g.backward(out)?;
    drop(g);

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        coords_checked: 0,
        worst: (0, 0),
    };
    let mut probe = params.to_vec();
    for (pi, var) in vars.iter().enumerate() {
        let n = params[pi].numel();
        let coords: Vec<usize> = if n <= opts.coords_per_param {
            (0..n).collect()
        } else {
            let mut c = sample(&mut rng, n, opts.coords_per_param).into_vec();
            c.sort_unstable();
            c
        };
        for ci in coords {
            let analytic = grads.get(*var).map_or(0.0, |t| t.data()[ci]);
            let orig = params[pi].data()[ci];
            probe[pi].data_mut()[ci] = orig + opts.eps;
            let (gp, _, op) = evaluate(&mut f, &probe)?;
            let plus = gp.value(op).item();
            probe[pi].data_mut()[ci] = orig - opts.eps;
            let (gm, _, om) = evaluate(&mut f, &probe)?;
            let minus = gm.value(om).item();
            probe[pi].data_mut()[ci] = orig;
            let numeric = (plus - minus) / (2.0 * opts.eps);
            let denom = analytic.abs().max(numeric.abs()).max(opts.abs_floor);
            let rel = (analytic - numeric).abs() / denom;
            report.coords_checked += 1;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = (pi, ci);
            }
        }
    }
    Ok(report)
}
