//! Central finite-difference checks of tape gradients (64-bit only).
//!
//! The error of one coordinate is `|analytic − numeric| / max(|analytic|,
//! |numeric|, floor)`; the floor keeps near-zero gradients from turning
//! round-off into large relative errors.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ParamStore, Tape, Tensor, TensorError, Var};

pub const STEP: f64 = 1e-5;
pub const FLOOR: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckReport {
    pub max_rel_error: f64,
    /// Where the largest error occurred.
    pub worst: String,
    pub checked: usize,
}

impl CheckReport {
    fn new() -> Self {
        CheckReport {
            max_rel_error: 0.0,
            worst: String::new(),
            checked: 0,
        }
    }

    fn record(&mut self, analytic: f64, numeric: f64, at: impl FnOnce() -> String) {
        self.checked += 1;
        let err = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR);
        if err > self.max_rel_error || err.is_nan() {
            self.max_rel_error = err;
            self.worst = format!("{} (analytic {analytic:e}, numeric {numeric:e})", at());
        }
    }
}

fn coords(n: usize, limit: Option<usize>, rng: &mut ChaCha8Rng) -> Vec<usize> {
    match limit {
        Some(k) if k < n => {
            let mut v = sample(rng, n, k).into_vec();
            v.sort_unstable();
            v
        }
        _ => (0..n).collect(),
    }
}

/// Checks the gradient of `f` with respect to free input tensors.
pub fn check_inputs<F>(inputs: &[Tensor<f64>], f: F) -> Result<CheckReport, TensorError>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var, TensorError>,
{
    let eval = |xs: &[Tensor<f64>]| -> Result<f64, TensorError> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|x| tape.leaf(x.clone())).collect();
        let loss = f(&mut tape, &vars)?;
        Ok(tape.value(loss).scalar())
    };
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| tape.leaf(x.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;
    let mut report = CheckReport::new();
    let mut xs = inputs.to_vec();
    for (k, v) in vars.iter().enumerate() {
        let analytic = grads.get(*v).cloned().unwrap_or_else(|| Tensor::zeros(inputs[k].shape()));
        for i in 0..inputs[k].numel() {
            let orig = xs[k].data()[i];
            xs[k].data_mut()[i] = orig + STEP;
            let up = eval(&xs)?;
            xs[k].data_mut()[i] = orig - STEP;
            let down = eval(&xs)?;
            xs[k].data_mut()[i] = orig;
            report.record(analytic.data()[i], (up - down) / (2.0 * STEP), || format!("input {k}[{i}]"));
        }
    }
    Ok(report)
}

/// Checks the gradient of `f` with respect to every trainable parameter in
/// `store`, probing at most `per_param` coordinates of each (all when `None`).
pub fn check_params<F, E>(store: &mut ParamStore<f64>, per_param: Option<usize>, seed: u64, f: F) -> Result<CheckReport, E>
where
    F: Fn(&mut Tape<f64>, &ParamStore<f64>) -> Result<Var, E>,
    E: From<TensorError>,
{
    let mut tape = Tape::new();
    let loss = f(&mut tape, store)?;
    store.zero_grad();
    tape.backward_into(loss, store)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = CheckReport::new();
    let ids: Vec<_> = store.iter().filter(|(_, p)| p.trainable).map(|(id, _)| id).collect();
    for id in ids {
        let n = store.get(id).value.numel();
        for i in coords(n, per_param, &mut rng) {
            let analytic = store.get(id).grad.data()[i];
            let orig = store.get(id).value.data()[i];
            let mut eval = |x: f64| -> Result<f64, E> {
                store.get_mut(id).value.data_mut()[i] = x;
                let mut tape = Tape::new();
                let loss = f(&mut tape, store)?;
                Ok(tape.value(loss).scalar())
            };
            let up = eval(orig + STEP)?;
            let down = eval(orig - STEP)?;
            store.get_mut(id).value.data_mut()[i] = orig;
            let name = store.get(id).name.clone();
            report.record(analytic, (up - down) / (2.0 * STEP), || format!("{name}[{i}]"));
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn input() -> Vec<Tensor<f64>> {
        vec![Tensor::from_vec(&[2, 2], vec![0.3, -1.2, 0.7, 2.0]).unwrap()]
    }

    #[test]
    fn correct_gradient_passes() {
        let r = check_inputs(&input(), |t, v| {
            let sq = t.mul(v[0], v[0])?;
            t.sum(sq)
        })
        .unwrap();
        assert_eq!(r.checked, 4);
        assert!(r.max_rel_error < 1e-8);
    }

    #[test]
    fn detached_path_is_caught() {
        // the value flows through a constant, so the tape sees no gradient
        let r = check_inputs(&input(), |t, v| {
            let copy = t.value(v[0]).clone();
            let c = t.constant(copy);
            let sq = t.mul(c, v[0])?;
            t.sum(sq)
        })
        .unwrap();
        assert!(r.max_rel_error > 0.3, "{r:?}");
    }
}
