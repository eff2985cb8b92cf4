//! Sequential encoder: a neural tensor layer fuses each day's indicators
//! and sentiment, then a gated recurrent unit summarizes the window.
//!
//! Parameters live in a [`Params`] map under the `fusion.*` and `gru.*`
//! names so the optimizer sees one flat set. [`FusionParams`] and
//! [`GruParams`] are typed views used to create and inspect them.

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{Params, Scalar, Tape, Tensor, Var};
use crate::signals::DailySignals;

pub const FUSION_W_T: &str = "fusion.w_t";
pub const FUSION_V: &str = "fusion.v";
pub const FUSION_B: &str = "fusion.b";

pub const GRU_NAMES: [&str; 9] = [
    "gru.w_z", "gru.u_z", "gru.b_z", "gru.w_r", "gru.u_r", "gru.b_r", "gru.w_h", "gru.u_h", "gru.b_h",
];

fn fetch<'a, T: Scalar>(params: &'a Params<T>, name: &str) -> Result<&'a Tensor<T>> {
    params
        .get(name)
        .ok_or_else(|| Error::contract(format!("missing parameter {name}")))
}

fn expect_shape<T: Scalar>(name: &'static str, t: &Tensor<T>, shape: &[usize]) -> Result<()> {
    if t.shape() == shape {
        Ok(())
    } else {
        Err(Error::dim(name, t.shape(), shape))
    }
}

/// Bilinear fusion of `p ∈ ℝ⁵` and `q ∈ ℝ³` into `x ∈ ℝ^M`, shared by all
/// stocks.
#[derive(Clone, Debug, PartialEq)]
pub struct FusionParams<T> {
    /// `[5, 3, M]`; slice `k` is `w_t[.., .., k]`.
    pub w_t: Tensor<T>,
    /// `[M, 8]`, applied to `[p ‖ q]`.
    pub v: Tensor<T>,
    pub b: Tensor<T>,
}

impl<T: Scalar> FusionParams<T> {
    pub fn zeros(m: usize) -> Self {
        FusionParams {
            w_t: Tensor::zeros(&[5, 3, m]),
            v: Tensor::zeros(&[m, 8]),
            b: Tensor::zeros(&[m]),
        }
    }

    pub fn glorot<R: Rng + ?Sized>(m: usize, rng: &mut R) -> Self {
        FusionParams {
            w_t: Tensor::glorot(&[5, 3, m], rng),
            v: Tensor::glorot(&[m, 8], rng),
            b: Tensor::zeros(&[m]),
        }
    }

    pub fn slices(&self) -> usize {
        self.b.len()
    }

    pub fn insert_into(&self, params: &mut Params<T>) {
        params.insert(FUSION_W_T, self.w_t.clone());
        params.insert(FUSION_V, self.v.clone());
        params.insert(FUSION_B, self.b.clone());
    }

    pub fn from_params(params: &Params<T>) -> Result<Self> {
        let b = fetch(params, FUSION_B)?.clone();
        let m = b.len();
        let fp = FusionParams {
            w_t: fetch(params, FUSION_W_T)?.clone(),
            v: fetch(params, FUSION_V)?.clone(),
            b,
        };
        fp.validate(m)?;
        Ok(fp)
    }

    fn validate(&self, m: usize) -> Result<()> {
        expect_shape(FUSION_W_T, &self.w_t, &[5, 3, m])?;
        expect_shape(FUSION_V, &self.v, &[m, 8])?;
        expect_shape(FUSION_B, &self.b, &[m])
    }
}

/// Gated recurrent unit with input width M and hidden width F.
#[derive(Clone, Debug, PartialEq)]
pub struct GruParams<T> {
    pub w_z: Tensor<T>,
    pub u_z: Tensor<T>,
    pub b_z: Tensor<T>,
    pub w_r: Tensor<T>,
    pub u_r: Tensor<T>,
    pub b_r: Tensor<T>,
    pub w_h: Tensor<T>,
    pub u_h: Tensor<T>,
    pub b_h: Tensor<T>,
}

impl<T: Scalar> GruParams<T> {
    pub fn zeros(m: usize, f: usize) -> Self {
        let w = || Tensor::zeros(&[f, m]);
        let u = || Tensor::zeros(&[f, f]);
        let b = || Tensor::zeros(&[f]);
        GruParams {
            w_z: w(),
            u_z: u(),
            b_z: b(),
            w_r: w(),
            u_r: u(),
            b_r: b(),
            w_h: w(),
            u_h: u(),
            b_h: b(),
        }
    }

    pub fn glorot<R: Rng + ?Sized>(m: usize, f: usize, rng: &mut R) -> Self {
        let mut g = Self::zeros(m, f);
        for (t, shape) in [
            (&mut g.w_z, [f, m]),
            (&mut g.u_z, [f, f]),
            (&mut g.w_r, [f, m]),
            (&mut g.u_r, [f, f]),
            (&mut g.w_h, [f, m]),
            (&mut g.u_h, [f, f]),
        ] {
            *t = Tensor::glorot(&shape, rng);
        }
        g
    }

    pub fn hidden(&self) -> usize {
        self.b_z.len()
    }

    fn parts(&self) -> [&Tensor<T>; 9] {
        [
            &self.w_z, &self.u_z, &self.b_z, &self.w_r, &self.u_r, &self.b_r, &self.w_h, &self.u_h,
            &self.b_h,
        ]
    }

    pub fn insert_into(&self, params: &mut Params<T>) {
        for (name, t) in GRU_NAMES.iter().zip(self.parts()) {
            params.insert(*name, t.clone());
        }
    }

    pub fn from_params(params: &Params<T>) -> Result<Self> {
        let get = |i: usize| fetch(params, GRU_NAMES[i]).cloned();
        let g = GruParams {
            w_z: get(0)?,
            u_z: get(1)?,
            b_z: get(2)?,
            w_r: get(3)?,
            u_r: get(4)?,
            b_r: get(5)?,
            w_h: get(6)?,
            u_h: get(7)?,
            b_h: get(8)?,
        };
        let f = g.hidden();
        let m = g.w_z.shape().get(1).copied().unwrap_or(0);
        for (i, t) in g.parts().into_iter().enumerate() {
            let shape: &[usize] = match i % 3 {
                0 => &[f, m],
                1 => &[f, f],
                _ => &[f],
            };
            expect_shape(GRU_NAMES[i], t, shape)?;
        }
        Ok(g)
    }
}

/// Tape handles of the fusion parameters.
#[derive(Clone, Copy, Debug)]
pub struct FusionVars {
    w_t: Var,
    v: Var,
    b: Var,
    slices: usize,
}

impl FusionVars {
    pub fn bind<T: Scalar>(tape: &mut Tape<T>, params: &Params<T>) -> Result<Self> {
        let b = fetch(params, FUSION_B)?;
        let slices = b.len();
        let b = tape.param(FUSION_B, b);
        let w_t = fetch(params, FUSION_W_T)?;
        expect_shape(FUSION_W_T, w_t, &[5, 3, slices])?;
        let w_t = tape.param(FUSION_W_T, w_t);
        let v = tape.param(FUSION_V, fetch(params, FUSION_V)?);
        Ok(FusionVars { w_t, v, b, slices })
    }
}

/// Tape handles of the recurrent parameters, in [`GRU_NAMES`] order.
#[derive(Clone, Copy, Debug)]
pub struct GruVars {
    vars: [Var; 9],
    hidden: usize,
}

impl GruVars {
    pub fn bind<T: Scalar>(tape: &mut Tape<T>, params: &Params<T>) -> Result<Self> {
        let mut vars = [Var::default(); 9];
        for (v, name) in vars.iter_mut().zip(GRU_NAMES) {
            *v = tape.param(name, fetch(params, name)?);
        }
        let hidden = tape.shape(vars[2])[0];
        Ok(GruVars { vars, hidden })
    }
}

/// Fuses a batch: `p: [N×5]`, `q: [N×3]` → `[N×M]`.
pub fn fuse_batch<T: Scalar>(tape: &mut Tape<T>, fv: &FusionVars, p: Var, q: Var) -> Result<Var> {
    let outer = tape.row_outer(p, q)?;
    let w = tape.reshape(fv.w_t, &[15, fv.slices])?;
    let bilinear = tape.matmul(outer, w)?;
    let pq = tape.concat_cols(p, q)?;
    let linear = tape.matmul_nt(pq, fv.v)?;
    let sum = tape.add(bilinear, linear)?;
    let pre = tape.add_row(sum, fv.b)?;
    Ok(tape.tanh(pre))
}

/// One recurrent step for a batch: `x: [N×M]`, `h: [N×F]`.
pub fn gru_step<T: Scalar>(tape: &mut Tape<T>, gv: &GruVars, x: Var, h: Var) -> Result<Var> {
    let [w_z, u_z, b_z, w_r, u_r, b_r, w_h, u_h, b_h] = gv.vars;
    let gate = |tape: &mut Tape<T>, w: Var, u: Var, b: Var, state: Var| -> Result<Var> {
        let a = tape.matmul_nt(x, w)?;
        let c = tape.matmul_nt(state, u)?;
        let s = tape.add(a, c)?;
        tape.add_row(s, b)
    };
    let z_pre = gate(tape, w_z, u_z, b_z, h)?;
    let z = tape.sigmoid(z_pre);
    let r_pre = gate(tape, w_r, u_r, b_r, h)?;
    let r = tape.sigmoid(r_pre);
    let rh = tape.mul(r, h)?;
    let n_pre = gate(tape, w_h, u_h, b_h, rh)?;
    let n = tape.tanh(n_pre);
    // h' = h + z ⊙ (n − h)
    let delta = tape.sub(n, h)?;
    let step = tape.mul(z, delta)?;
    tape.add(h, step)
}

/// Runs the recurrence from a zero state over `xs` (each `[N×M]`) and
/// returns the final state `[N×F]`.
pub fn encode_batch<T: Scalar>(tape: &mut Tape<T>, gv: &GruVars, xs: &[Var]) -> Result<Var> {
    let first = *xs
        .first()
        .ok_or_else(|| Error::contract("encode_sequence needs at least one step"))?;
    let n = tape.shape(first)[0];
    let mut h = tape.constant(Tensor::zeros(&[n, gv.hidden]));
    for &x in xs {
        h = gru_step(tape, gv, x, h)?;
    }
    Ok(h)
}

/// Encodes equal-length windows of many stocks at once; returns `s` with
/// one row per window.
pub fn encode_windows<T: Scalar>(
    tape: &mut Tape<T>,
    fv: &FusionVars,
    gv: &GruVars,
    windows: &[&[DailySignals]],
) -> Result<Var> {
    let n = windows.len();
    let steps = windows.first().map_or(0, |w| w.len());
    if n == 0 || steps == 0 {
        return Err(Error::contract("encode_windows needs a non-empty batch"));
    }
    if windows.iter().any(|w| w.len() != steps) {
        return Err(Error::contract("windows differ in length"));
    }
    // Step-major rows: step k occupies rows k·N .. (k+1)·N.
    let mut p = Vec::with_capacity(steps * n * 5);
    let mut q = Vec::with_capacity(steps * n * 3);
    for k in 0..steps {
        for w in windows {
            p.extend(w[k].p.iter().map(|&x| T::of(x)));
            q.extend(w[k].q.iter().map(|&x| T::of(x)));
        }
    }
    let p = tape.constant(Tensor::new(vec![steps * n, 5], p)?);
    let q = tape.constant(Tensor::new(vec![steps * n, 3], q)?);
    let x = fuse_batch(tape, fv, p, q)?;
    let xs = (0..steps)
        .map(|k| tape.slice_rows(x, k * n, n))
        .collect::<Result<Vec<_>>>()?;
    encode_batch(tape, gv, &xs)
}

/// Fused vector of a single day.
pub fn fuse<T: Scalar>(p: &[T; 5], q: &[T; 3], fp: &FusionParams<T>) -> Result<Vec<T>> {
    fp.validate(fp.slices())?;
    let mut params = Params::new();
    fp.insert_into(&mut params);
    let mut tape = Tape::new();
    let fv = FusionVars::bind(&mut tape, &params)?;
    let pv = tape.constant(Tensor::new(vec![1, 5], p.to_vec())?);
    let qv = tape.constant(Tensor::new(vec![1, 3], q.to_vec())?);
    let x = fuse_batch(&mut tape, &fv, pv, qv)?;
    Ok(tape.value(x).data().to_vec())
}

/// Final hidden state after reading `xs` in order.
pub fn encode_sequence<T: Scalar>(xs: &[Vec<T>], gp: &GruParams<T>) -> Result<Vec<T>> {
    let mut params = Params::new();
    gp.insert_into(&mut params);
    let mut tape = Tape::new();
    let gv = GruVars::bind(&mut tape, &params)?;
    let vars = xs
        .iter()
        .map(|x| Ok(tape.constant(Tensor::new(vec![1, x.len()], x.clone())?)))
        .collect::<Result<Vec<_>>>()?;
    let s = encode_batch(&mut tape, &gv, &vars)?;
    Ok(tape.value(s).data().to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{fd_report, rand_params};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_gru(m: usize, f: usize, seed: u64) -> GruParams<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut g = GruParams::glorot(m, f, &mut rng);
        for b in [&mut g.b_z, &mut g.b_r, &mut g.b_h] {
            *b = Tensor::glorot(&[f], &mut rng);
        }
        g
    }

    fn random_inputs(t: usize, m: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..t).map(|_| (0..m).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
    }

    #[test]
    fn zero_fusion_gives_zero() {
        let x = fuse(&[0.3; 5], &[0.5, 0.5, 0.0], &FusionParams::<f64>::zeros(4)).unwrap();
        assert_eq!(x, vec![0.0; 4]);
    }

    #[test]
    fn bilinear_hand_case() {
        // All-ones slice: pᵀWq = (Σp)(Σq) = 5a with q = e₁.
        let mut fp = FusionParams::<f64>::zeros(1);
        fp.w_t = Tensor::full(&[5, 3, 1], 1.0);
        let x = fuse(&[0.02; 5], &[1.0, 0.0, 0.0], &fp).unwrap();
        assert!((x[0] - 0.1f64.tanh()).abs() < 1e-15);
        assert!((x[0] - 0.099668).abs() < 1e-6);
    }

    #[test]
    fn bilinear_matches_index_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let fp = FusionParams::<f64> {
            b: Tensor::glorot(&[4], &mut rng),
            ..FusionParams::glorot(4, &mut rng)
        };
        let p = [0.1, -0.2, 0.05, 0.3, 1.2];
        let q = [0.6, 0.4, 0.2];
        let x = fuse(&p, &q, &fp).unwrap();
        let pq: Vec<f64> = p.iter().chain(&q).copied().collect();
        for k in 0..4 {
            let mut acc = fp.b.data()[k];
            for i in 0..5 {
                for j in 0..3 {
                    acc += p[i] * fp.w_t.data()[(i * 3 + j) * 4 + k] * q[j];
                }
            }
            for (c, v) in pq.iter().enumerate() {
                acc += fp.v.at(k, c) * v;
            }
            assert!((x[k] - acc.tanh()).abs() < 1e-12);
        }
    }

    #[test]
    fn fusion_gradient_matches_finite_differences() {
        let params = rand_params(&[(FUSION_W_T, &[5, 3, 3]), (FUSION_V, &[3, 8]), (FUSION_B, &[3])], 5);
        let build = |tape: &mut Tape<f64>, p: &Params<f64>| {
            let fv = FusionVars::bind(tape, p).unwrap();
            let pv = tape.constant(Tensor::from_f64(&[2, 5], &[0.1, -0.3, 0.2, 0.05, 1.1, -0.2, 0.1, 0.0, 0.3, 0.9]).unwrap());
            let qv = tape.constant(Tensor::from_f64(&[2, 3], &[0.75, 0.25, 0.5, 0.0, 1.0, -1.0]).unwrap());
            let x = fuse_batch(tape, &fv, pv, qv).unwrap();
            tape.sum_all(x)
        };
        let (err, at) = fd_report(&build, &params);
        assert!(err < 1e-4, "{at}");
    }

    #[test]
    fn fusion_shape_mismatch() {
        let mut fp = FusionParams::<f64>::zeros(3);
        fp.v = Tensor::zeros(&[3, 7]);
        assert!(matches!(fuse(&[0.0; 5], &[0.0; 3], &fp), Err(Error::Dimension { .. })));
    }

    #[test]
    fn zero_gru_gives_zero_state() {
        let s = encode_sequence(&random_inputs(4, 3, 1), &GruParams::<f64>::zeros(3, 5)).unwrap();
        assert_eq!(s, vec![0.0; 5]);
    }

    #[test]
    fn state_carries_history() {
        let gp = random_gru(3, 4, 9);
        let xs = random_inputs(2, 3, 10);
        let one = encode_sequence(&xs[1..], &gp).unwrap();
        let two = encode_sequence(&xs, &gp).unwrap();
        assert_ne!(one, two);
    }

    #[test]
    fn empty_sequence_is_contract_error() {
        let gp = GruParams::<f64>::zeros(3, 4);
        assert!(matches!(encode_sequence(&[], &gp), Err(Error::Contract(_))));
    }

    #[test]
    fn single_step_matches_scalar_oracle() {
        let (m, f) = (3, 2);
        let gp = random_gru(m, f, 21);
        let x = &random_inputs(1, m, 22)[0];
        let s = encode_sequence(&[x.clone()], &gp).unwrap();
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        // Zero initial state: r has no effect and h' = z ⊙ n.
        for i in 0..f {
            let lin = |w: &Tensor<f64>, b: &Tensor<f64>| {
                b.data()[i] + (0..m).map(|j| w.at(i, j) * x[j]).sum::<f64>()
            };
            let z = sig(lin(&gp.w_z, &gp.b_z));
            let n = lin(&gp.w_h, &gp.b_h).tanh();
            assert!((s[i] - z * n).abs() < 1e-12);
        }
    }

    #[test]
    fn gru_gradient_matches_finite_differences() {
        let (m, f) = (3, 4);
        let mut params = Params::new();
        random_gru(m, f, 31).insert_into(&mut params);
        let xs = random_inputs(3, m, 32);
        let build = |tape: &mut Tape<f64>, p: &Params<f64>| {
            let gv = GruVars::bind(tape, p).unwrap();
            let vars: Vec<Var> = xs
                .iter()
                .map(|x| tape.constant(Tensor::new(vec![1, m], x.clone()).unwrap()))
                .collect();
            let s = encode_batch(tape, &gv, &vars).unwrap();
            tape.sum_all(s)
        };
        let (err, at) = fd_report(&build, &params);
        assert!(err < 1e-4, "{at}");
    }

    #[test]
    fn batched_windows_match_single_stock_encoding() {
        let (m, f) = (4, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        let mut params = Params::new();
        FusionParams::<f64>::glorot(m, &mut rng).insert_into(&mut params);
        random_gru(m, f, 41).insert_into(&mut params);
        let windows: Vec<Vec<DailySignals>> = (0..3)
            .map(|_| {
                (0..4)
                    .map(|_| DailySignals {
                        p: std::array::from_fn(|_| rng.random_range(-0.1..0.1)),
                        q: [0.5, 0.5, 0.0],
                    })
                    .collect()
            })
            .collect();
        let refs: Vec<&[DailySignals]> = windows.iter().map(|w| w.as_slice()).collect();
        let mut tape = Tape::new();
        let fv = FusionVars::bind(&mut tape, &params).unwrap();
        let gv = GruVars::bind(&mut tape, &params).unwrap();
        let s = encode_windows(&mut tape, &fv, &gv, &refs).unwrap();
        let batch = tape.value(s).clone();

        let fp = FusionParams::from_params(&params).unwrap();
        let gp = GruParams::from_params(&params).unwrap();
        for (i, w) in windows.iter().enumerate() {
            let xs: Vec<Vec<f64>> = w.iter().map(|d| fuse(&d.p, &d.q, &fp).unwrap()).collect();
            assert_eq!(encode_sequence(&xs, &gp).unwrap(), batch.row(i));
        }
    }

    proptest! {
        #[test]
        fn fusion_is_bounded(seed in any::<u64>(), scale in 0.1f64..50.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let fp = FusionParams::<f64>::glorot(6, &mut rng);
            let p: [f64; 5] = std::array::from_fn(|_| rng.random_range(-scale..scale));
            let x = fuse(&p, &[0.3, 0.7, -0.4], &fp).unwrap();
            prop_assert!(x.iter().all(|v| (-1.0..=1.0).contains(v)));
        }

        #[test]
        fn encoding_is_causal(seed in any::<u64>(), j in 1usize..5) {
            let gp = random_gru(3, 4, seed);
            let xs = random_inputs(5, 3, seed ^ 1);
            let mut perturbed = xs.clone();
            for x in &mut perturbed[j..] {
                x[0] += 10.0;
            }
            prop_assert_eq!(encode_sequence(&xs[..j], &gp).unwrap(), encode_sequence(&perturbed[..j], &gp).unwrap());
        }
    }
}
