//! Shared test oracles.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::numerics::{Params, Tape, Tensor, Var};

/// Builds a scalar from the named leaves.
pub type Build<'a> = dyn Fn(&mut Tape<f64>, &Params<f64>) -> Var + 'a;

pub fn eval(build: &Build, params: &Params<f64>) -> f64 {
    let mut tape = Tape::new();
    let root = build(&mut tape, params);
    tape.value(root).item().unwrap()
}

/// Central differences, step 1e-5; returns max relative error (components
/// below 1e-8 compared absolutely).
pub fn fd_max_rel_err(build: &Build, params: &Params<f64>) -> f64 {
    fd_report(build, params).0
}

/// Like [`fd_max_rel_err`], also naming the worst parameter.
pub fn fd_report(build: &Build, params: &Params<f64>) -> (f64, String) {
    let mut tape = Tape::new();
    let root = build(&mut tape, params);
    let grads = tape.backward(root).unwrap();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let mut at = String::new();
    for (name, p) in params.iter() {
        let zeros = Tensor::zeros(p.shape());
        let analytic = grads.get(name).unwrap_or(&zeros);
        for i in 0..p.len() {
            let mut plus = params.clone();
            plus.get_mut(name).unwrap().data_mut()[i] += h;
            let mut minus = params.clone();
            minus.get_mut(name).unwrap().data_mut()[i] -= h;
            let numeric = (eval(build, &plus) - eval(build, &minus)) / (2.0 * h);
            let a = analytic.data()[i];
            let scale = a.abs().max(numeric.abs());
            let err = if scale < 1e-8 { (a - numeric).abs() } else { (a - numeric).abs() / scale };
            if err > worst {
                worst = err;
                at = format!("{name}[{i}] analytic {a} numeric {numeric}");
            }
        }
    }
    (worst, at)
}

/// Glorot tensors scaled by 2 so activations leave the linear regime.
pub fn rand_params(shapes: &[(&str, &[usize])], seed: u64) -> Params<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = Params::new();
    for (name, shape) in shapes {
        let mut t = Tensor::<f64>::glorot(shape, &mut rng);
        for x in t.data_mut() {
            *x *= 2.0;
        }
        p.insert(*name, t);
    }
    p
}
