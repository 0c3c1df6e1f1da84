//! Central-difference gradient checking (double precision only).

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Builds a scalar loss on a fresh tape from the given parameter leaves.
pub trait LossBuilder: Fn(&mut Tape<f64>, &[Var]) -> Result<Var> {}
impl<F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>> LossBuilder for F {}

/// One analytic forward/backward pass: loss value and per-parameter grads.
pub fn analytic_grads<F: LossBuilder>(
    params: &[Tensor<f64>],
    build: &F,
) -> Result<(f64, Vec<Tensor<f64>>)> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.leaf(p.clone(), true)).collect();
    let loss = build(&mut tape, &vars)?;
    let value = tape.value(loss).data()[0];
    if !value.is_finite() {
        return Err(Error::Numeric(format!("non-finite loss {value}")));
    }
    let g = tape.backward(loss)?;
    let grads = vars
        .iter()
        .zip(params)
        .map(|(v, p)| g.wrt(*v).cloned().unwrap_or_else(|| Tensor::zeros(p.shape())))
        .collect();
    Ok((value, grads))
}

fn eval_loss<F: LossBuilder>(params: &[Tensor<f64>], build: &F) -> Result<f64> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.leaf(p.clone(), false)).collect();
    let loss = build(&mut tape, &vars)?;
    Ok(tape.value(loss).data()[0])
}

/// Max relative error between `analytic` and central differences of the
/// loss, over up to `max_coords` coordinates per parameter (all when the
/// parameter is small enough, a seeded sample otherwise).
pub fn max_rel_error<F: LossBuilder>(
    params: &[Tensor<f64>],
    build: &F,
    analytic: &[Tensor<f64>],
    h: f64,
    max_coords: usize,
    seed: u64,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let mut work: Vec<Tensor<f64>> = params.to_vec();
    for (pi, p) in params.iter().enumerate() {
        let coords: Vec<usize> = if p.len() <= max_coords {
            (0..p.len()).collect()
        } else {
            (0..max_coords).map(|_| rng.random_range(0..p.len())).collect()
        };
        for ci in coords {
            let orig = p.data()[ci];
            work[pi].make_mut()[ci] = orig + h;
            let up = eval_loss(&work, build)?;
            work[pi].make_mut()[ci] = orig - h;
            let down = eval_loss(&work, build)?;
            work[pi].make_mut()[ci] = orig;
            if !up.is_finite() || !down.is_finite() {
                return Err(Error::Numeric("non-finite loss during perturbation".into()));
            }
            let numeric = (up - down) / (2.0 * h);
            let a = analytic[pi].data()[ci];
            let denom = a.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max((a - numeric).abs() / denom);
        }
    }
    Ok(worst)
}

/// Convenience wrapper: analytic grads via the tape, then the comparison.
pub fn gradient_check<F: LossBuilder>(
    params: &[Tensor<f64>],
    build: &F,
    h: f64,
    max_coords: usize,
    seed: u64,
) -> Result<f64> {
    let (_, analytic) = analytic_grads(params, build)?;
    max_rel_error(params, build, &analytic, h, max_coords, seed)
}
