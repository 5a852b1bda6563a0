use super::{Result, Tensor, TensorError};
use crate::scalar::{sc, Scalar};

/// `C = A·B` for `A: [m×k]`, `B: [k×n]`.
pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, k) = a.dims2("matmul")?;
    let (k2, n) = b.dims2("matmul")?;
    if k != k2 {
        return Err(TensorError::DimMismatch {
            op: "matmul",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let mut out = vec![T::zero(); m * n];
    let (ad, bd) = (a.data(), b.data());
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for l in 0..k {
            let x = ad[i * k + l];
            if x == T::zero() {
                continue;
            }
            let brow = &bd[l * n..(l + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += x * bv;
            }
        }
    }
    Tensor::new(vec![m, n], out)
}

/// `C = A·Bᵀ` for `A: [m×k]`, `B: [n×k]`.
pub fn matmul_t<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, k) = a.dims2("matmul_t")?;
    let (n, k2) = b.dims2("matmul_t")?;
    if k != k2 {
        return Err(TensorError::DimMismatch {
            op: "matmul_t",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let mut out = vec![T::zero(); m * n];
    let (ad, bd) = (a.data(), b.data());
    for i in 0..m {
        let arow = &ad[i * k..(i + 1) * k];
        for j in 0..n {
            out[i * n + j] = dot(arow, &bd[j * k..(j + 1) * k]);
        }
    }
    Tensor::new(vec![m, n], out)
}

/// `C = Aᵀ·B` for `A: [k×m]`, `B: [k×n]`.
pub fn t_matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (k, m) = a.dims2("t_matmul")?;
    let (k2, n) = b.dims2("t_matmul")?;
    if k != k2 {
        return Err(TensorError::DimMismatch {
            op: "t_matmul",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let mut out = vec![T::zero(); m * n];
    let (ad, bd) = (a.data(), b.data());
    for l in 0..k {
        let brow = &bd[l * n..(l + 1) * n];
        for i in 0..m {
            let x = ad[l * m + i];
            if x == T::zero() {
                continue;
            }
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += x * bv;
            }
        }
    }
    Tensor::new(vec![m, n], out)
}

#[inline]
pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    // Four accumulators let the compiler vectorize without reassociation flags.
    let mut acc = [T::zero(); 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in chunks * 4..a.len() {
        s += a[i] * b[i];
    }
    s
}

/// Row-wise softmax with max subtraction. `-inf` entries map to exactly zero.
pub fn softmax_rows<T: Scalar>(m: &Tensor<T>) -> Result<Tensor<T>> {
    let mut out = m.clone();
    softmax_rows_in_place(&mut out)?;
    Ok(out)
}

pub fn softmax_rows_in_place<T: Scalar>(m: &mut Tensor<T>) -> Result<()> {
    let (_, n) = m.dims2("softmax_rows")?;
    if n == 0 {
        return Err(TensorError::Contract("softmax over zero columns".into()));
    }
    for (r, row) in m.data_mut().chunks_mut(n).enumerate() {
        softmax_slice(row).map_err(|_| TensorError::DegenerateRow { row: r })?;
    }
    Ok(())
}

pub(crate) fn softmax_slice<T: Scalar>(row: &mut [T]) -> std::result::Result<(), ()> {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    if !max.is_finite() {
        return Err(());
    }
    let mut total = T::zero();
    for x in row.iter_mut() {
        *x = if *x == T::neg_infinity() {
            T::zero()
        } else {
            (*x - max).exp()
        };
        total += *x;
    }
    for x in row.iter_mut() {
        *x /= total;
    }
    Ok(())
}

/// `log softmax` of one row; `-inf` entries stay `-inf`.
pub fn log_softmax_slice<T: Scalar>(row: &[T]) -> Vec<T> {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let lse = max
        + row
            .iter()
            .map(|&x| (x - max).exp())
            .sum::<T>()
            .ln();
    row.iter().map(|&x| x - lse).collect()
}

/// `x·Φ(x)` with the exact error-function CDF.
#[inline]
pub fn gelu_scalar<T: Scalar>(x: T) -> T {
    x * sc::<T>(0.5) * (T::one() + (x * sc::<T>(std::f64::consts::FRAC_1_SQRT_2)).erf())
}

/// `d/dx [x·Φ(x)] = Φ(x) + x·φ(x)`.
#[inline]
pub(crate) fn gelu_grad_scalar<T: Scalar>(x: T) -> T {
    let cdf = sc::<T>(0.5) * (T::one() + (x * sc::<T>(std::f64::consts::FRAC_1_SQRT_2)).erf());
    let pdf = (-(x * x) * sc::<T>(0.5)).exp() * sc::<T>(0.398_942_280_401_432_7);
    cdf + x * pdf
}

/// Layer normalisation over the last axis with affine `gamma`, `beta`.
pub fn layer_norm_rows<T: Scalar>(
    x: &Tensor<T>,
    gamma: &[T],
    beta: &[T],
    eps: T,
) -> Result<Tensor<T>> {
    let (_, n) = x.dims2("layer_norm")?;
    if gamma.len() != n || beta.len() != n {
        return Err(TensorError::DimMismatch {
            op: "layer_norm",
            lhs: x.shape().to_vec(),
            rhs: vec![gamma.len()],
        });
    }
    let mut out = x.clone();
    for row in out.data_mut().chunks_mut(n) {
        let (mean, rstd) = row_stats(row, eps);
        for ((v, &g), &b) in row.iter_mut().zip(gamma).zip(beta) {
            *v = (*v - mean) * rstd * g + b;
        }
    }
    Ok(out)
}

pub(crate) fn row_stats<T: Scalar>(row: &[T], eps: T) -> (T, T) {
    let n = sc::<T>(row.len() as f64);
    let mean = row.iter().copied().sum::<T>() / n;
    let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
    (mean, (var + eps).sqrt().recip())
}
