use proptest::prelude::*;

use super::*;
use crate::error::Error;
use crate::testutil::{fd_max_rel_err, rand_params};

#[test]
fn leaky_relu_values() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::vector(vec![0.0, 2.0, -2.0]));
    let y = tape.leaky_relu(x, 0.2);
    assert_eq!(tape.value(y).data(), &[0.0, 2.0, -0.4]);
}

#[test]
fn leaky_relu_gradient_matches_finite_differences() {
    let mut p = Params::new();
    p.insert("x", Tensor::vector(vec![1.0, -1.0]));
    let build = |t: &mut Tape<f64>, p: &Params<f64>| {
        let x = t.param("x", p.get("x").unwrap());
        let y = t.leaky_relu(x, 0.2);
        t.sum_all(y)
    };
    let mut tape = Tape::new();
    let root = build(&mut tape, &p);
    let g = tape.backward(root).unwrap();
    assert_eq!(g.get("x").unwrap().data(), &[1.0, 0.2]);
    assert!(fd_max_rel_err(&build, &p) < 1e-6);
}

#[test]
fn masked_softmax_examples() {
    let (single, empty) = masked_softmax(&[5.0f64], &[true]);
    assert_eq!(single, vec![1.0]);
    assert!(!empty);

    for c in [-300.0, 0.0, 7.5, 800.0] {
        let (p, _) = masked_softmax(&[c, c], &[true, true]);
        assert_eq!(p, vec![0.5, 0.5]);
    }

    // exp(k)/Σexp evaluated directly
    let direct: Vec<f64> = {
        let e: Vec<f64> = [1.0f64, 2.0, 3.0].iter().map(|x| x.exp()).collect();
        let s: f64 = e.iter().sum();
        e.iter().map(|x| x / s).collect()
    };
    let (p, _) = masked_softmax(&[1.0f64, 2.0, 3.0], &[true; 3]);
    let frozen = [0.09003057, 0.24472847, 0.66524096];
    for i in 0..3 {
        assert!((p[i] - frozen[i]).abs() < 1e-7);
        assert!((p[i] - direct[i]).abs() < 1e-15);
    }
}

#[test]
fn masked_softmax_empty_support_is_flagged() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::vector(vec![1.0, 2.0]));
    let (y, empty) = tape.masked_softmax(x, &[false, false]).unwrap();
    assert!(empty);
    assert_eq!(tape.value(y).data(), &[0.0, 0.0]);
}

#[test]
fn masked_out_entries_are_exactly_zero() {
    let (p, _) = masked_softmax(&[1.0f64, 50.0, -3.0], &[true, false, true]);
    assert_eq!(p[1], 0.0);
    assert!((p[0] + p[2] - 1.0).abs() < 1e-12);
}

#[test]
fn backward_of_sum_is_ones() {
    let mut p = Params::new();
    p.insert("p", Tensor::<f64>::matrix(2, 3, vec![0.1, -0.2, 0.3, 0.4, 0.5, -0.6]).unwrap());
    let mut tape = Tape::new();
    let x = tape.param("p", p.get("p").unwrap());
    let s = tape.sum_all(x);
    let g = tape.backward(s).unwrap();
    assert_eq!(g.get("p").unwrap().data(), &[1.0; 6]);
}

#[test]
fn backward_of_half_square_is_identity() {
    let data = vec![0.1, -0.2, 0.3, 1.5];
    let mut p = Params::new();
    p.insert("p", Tensor::<f64>::vector(data.clone()));
    let mut tape = Tape::new();
    let x = tape.param("p", p.get("p").unwrap());
    let sq = tape.mul(x, x).unwrap();
    let s = tape.sum_all(sq);
    let half = tape.scale(s, 0.5);
    let g = tape.backward(half).unwrap();
    assert_eq!(g.get("p").unwrap().data(), data.as_slice());
}

#[test]
fn unused_parameters_get_zero_gradient() {
    let mut tape = Tape::<f64>::new();
    let a = tape.param("a", &Tensor::vector(vec![1.0, 2.0]));
    let _b = tape.param("b", &Tensor::vector(vec![3.0]));
    let s = tape.sum_all(a);
    let g = tape.backward(s).unwrap();
    assert_eq!(g.get("b").unwrap().data(), &[0.0]);
}

#[test]
fn non_scalar_root_is_rejected() {
    let mut tape = Tape::<f64>::new();
    let a = tape.param("a", &Tensor::vector(vec![1.0, 2.0]));
    assert!(matches!(tape.backward(a), Err(Error::Contract(_))));
}

#[test]
fn matmul_shape_mismatch_is_dimension_error() {
    let mut tape = Tape::<f64>::new();
    let a = tape.constant(Tensor::zeros(&[2, 3]));
    let b = tape.constant(Tensor::zeros(&[4, 2]));
    assert!(matches!(tape.matmul(a, b), Err(Error::Dimension { .. })));
}

#[test]
fn composite_expression_gradients_match_finite_differences() {
    // Touches every op kind the model uses.
    let params = rand_params(
        &[
            ("a", &[4, 3]),
            ("b", &[3, 2]),
            ("c", &[5, 2]),
            ("bias", &[2]),
            ("v", &[4]),
            ("w", &[6]),
        ],
        11,
    );
    let build = |t: &mut Tape<f64>, p: &Params<f64>| {
        let a = t.param("a", p.get("a").unwrap());
        let b = t.param("b", p.get("b").unwrap());
        let c = t.param("c", p.get("c").unwrap());
        let bias = t.param("bias", p.get("bias").unwrap());
        let v = t.param("v", p.get("v").unwrap());
        let w = t.param("w", p.get("w").unwrap());

        let ab = t.matmul(a, b).unwrap(); // 4×2
        let ab = t.add_row(ab, bias).unwrap();
        let th = t.tanh(ab);
        let sg = t.sigmoid(th);
        let cat = t.concat_cols(th, sg).unwrap(); // 4×4
        let outer = t.row_outer(th, sg).unwrap(); // 4×4
        let mix = t.mul(cat, outer).unwrap();
        let nt = t.matmul_nt(mix, cat).unwrap(); // 4×4
        let lr = t.leaky_relu(nt, 0.2);
        let scores = t.matmul(lr, v).unwrap(); // 4
        let seg = [0, 0, 1, 1];
        let sm = t.segment_softmax(scores, &seg).unwrap();
        let (ms, _) = t.masked_softmax(scores, &[true, false, true, true]).unwrap();
        let gathered = t.gather_rows(c, &[0, 2, 4, 1]).unwrap(); // 4×2
        let weighted = t.mul_col(gathered, sm).unwrap();
        let pooled = t.segment_sum(weighted, &seg, 2).unwrap(); // 2×2
        let pooled2 = t.mul_col(gathered, ms).unwrap();
        let top = t.slice_rows(pooled2, 1, 2).unwrap();
        let both = t.sub(pooled, top).unwrap();
        let mean = t.mean_rows(both).unwrap(); // 2
        let ws = t.slice(w, 1, 2).unwrap();
        let d = t.dot(mean, ws).unwrap();
        let parts = t.concat(&[d, ws]).unwrap(); // 3
        let bc = t.broadcast_rows(parts, 2).unwrap(); // 2×3
        let msr = t.masked_softmax_rows(bc, &[true, true, false, false, true, true]).unwrap();
        let col = t.select_col(msr, 1).unwrap();
        let e = t.exp(col);
        let ln = t.ln_clamped(e, 1e-12);
        let sm_rows = t.softmax_rows(lr).unwrap();
        let picked = t.pick(sm_rows, &[0, 3, 1, 2]).unwrap();
        let flat = t.reshape(picked, &[2, 2]).unwrap();
        let fr = t.sum_all(flat);
        let s1 = t.sum_all(ln);
        let s = t.add(s1, fr).unwrap();
        t.scale(s, 0.7)
    };
    let err = fd_max_rel_err(&build, &params);
    assert!(err <= 1e-4, "max relative error {err}");
}

#[test]
fn injected_fault_breaks_gradient_check() {
    let params = rand_params(&[("a", &[3, 3])], 5);
    let build = |t: &mut Tape<f64>, p: &Params<f64>| {
        let a = t.param("a", p.get("a").unwrap());
        let y = t.tanh(a);
        t.sum_all(y)
    };
    let mut tape = Tape::new();
    tape.inject_backward_fault(OpKind::Tanh);
    let root = build(&mut tape, &params);
    let g = tape.backward(root).unwrap();
    let clean = {
        let mut tape = Tape::new();
        let root = build(&mut tape, &params);
        tape.backward(root).unwrap()
    };
    let a = g.get("a").unwrap().data();
    let b = clean.get("a").unwrap().data();
    assert!(a.iter().zip(b).all(|(x, y)| (x - 1.5 * y).abs() < 1e-12));
}

#[test]
fn repeated_evaluation_is_bit_identical() {
    let params = rand_params(&[("a", &[3, 4]), ("b", &[4, 2])], 9);
    let run = || {
        let mut t = Tape::new();
        let a = t.param("a", params.get("a").unwrap());
        let b = t.param("b", params.get("b").unwrap());
        let m = t.matmul(a, b).unwrap();
        let s = t.softmax_rows(m).unwrap();
        let r = t.sum_all(s);
        (t.value(s).clone(), t.backward(r).unwrap().get("a").unwrap().clone())
    };
    assert_eq!(run(), run());
}

proptest! {
    #[test]
    fn masked_softmax_is_a_distribution(
        scores in proptest::collection::vec(-50.0f64..50.0, 1..12),
        mask_bits in proptest::collection::vec(any::<bool>(), 12),
    ) {
        let mask: Vec<bool> = mask_bits[..scores.len()].to_vec();
        let (p, empty) = masked_softmax(&scores, &mask);
        if empty {
            prop_assert!(p.iter().all(|&x| x == 0.0));
        } else {
            let s: f64 = p.iter().sum();
            prop_assert!((s - 1.0).abs() <= 1e-9);
            for (x, m) in p.iter().zip(&mask) {
                prop_assert!(*x >= 0.0);
                if !m { prop_assert_eq!(*x, 0.0); }
            }
        }
    }
}
