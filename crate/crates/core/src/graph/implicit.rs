use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{leaky_relu, Scalar, Tensor, LEAKY_SLOPE};

/// Directed implicit edge: `dst` is a neighbor of `src` on that day.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImplicitEdge<T> {
    pub src: usize,
    pub dst: usize,
    /// `leaky_relu(uᵀ[s_src ‖ s_dst])`.
    pub alpha: T,
    /// `sigmoid(alpha)`, the message multiplier.
    pub gate: T,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImplicitRelationParams<T> {
    /// Scoring vector of length 2F.
    pub u: Tensor<T>,
    pub eta: f64,
}

/// Pairwise score halves: `(s·u[..F], s·u[F..])`.
pub(crate) fn score_halves<T: Scalar>(s: &Tensor<T>, u: &Tensor<T>) -> Result<(Vec<T>, Vec<T>)> {
    let (n, f) = match s.shape() {
        [n, f] => (*n, *f),
        other => return Err(Error::dim("infer_implicit_edges", other, u.shape())),
    };
    if u.rank() != 1 || u.len() != 2 * f {
        return Err(Error::dim("infer_implicit_edges", &[n, 2 * f], u.shape()));
    }
    let ua = Tensor::vector(u.data()[..f].to_vec());
    let ub = Tensor::vector(u.data()[f..].to_vec());
    Ok((s.matmul(&ua)?.into_data(), s.matmul(&ub)?.into_data()))
}

pub(crate) fn pair_alpha<T: Scalar>(a_i: T, b_j: T) -> T {
    leaky_relu(a_i + b_j, T::of(LEAKY_SLOPE))
}

fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Scores every ordered company pair `(i, j)`, `i ≠ j`, from one day's
/// sequential embeddings `s` (one row per company) and keeps those with
/// `alpha > eta`. Output is sorted by `(src, dst)`.
pub fn infer_implicit_edges<T: Scalar>(
    s: &Tensor<T>,
    params: &ImplicitRelationParams<T>,
) -> Result<Vec<ImplicitEdge<T>>> {
    let (a, b) = score_halves(s, &params.u)?;
    let n = a.len();
    let mut out = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let alpha = pair_alpha(a[i], b[j]);
            if alpha.as_f64() > params.eta {
                out.push(ImplicitEdge {
                    src: i,
                    dst: j,
                    alpha,
                    gate: sigmoid(alpha),
                });
            }
        }
    }
    Ok(out)
}
