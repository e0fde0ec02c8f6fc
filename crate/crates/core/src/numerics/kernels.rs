//! Shared computational kernels used by both the tape ops and the pure
//! loss functions.

/// C[m,n] += A[m,k] @ B[k,n]. i-k-j loop order so the inner loop runs over
/// contiguous rows of B and C and vectorizes.
pub fn matmul_accum(c: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let c_row = &mut c[i * n..(i + 1) * n];
        for (p, &av) in a_row.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for j in 0..n {
                c_row[j] += av * b_row[j];
            }
        }
    }
}

pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    matmul_accum(&mut c, a, b, m, k, n);
    c
}

/// C[m,n] += A[k,m]^T @ B[k,n] without materializing the transpose.
pub fn matmul_at_b_accum(c: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for p in 0..k {
        let a_row = &a[p * m..(p + 1) * m];
        let b_row = &b[p * n..(p + 1) * n];
        for (i, &av) in a_row.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let c_row = &mut c[i * n..(i + 1) * n];
            for j in 0..n {
                c_row[j] += av * b_row[j];
            }
        }
    }
}

/// C[m,n] += A[m,k] @ B[n,k]^T without materializing the transpose.
pub fn matmul_a_bt_accum(c: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let c_row = &mut c[i * n..(i + 1) * n];
        for j in 0..n {
            let b_row = &b[j * k..(j + 1) * k];
            let mut s = 0.0;
            for p in 0..k {
                s += a_row[p] * b_row[p];
            }
            c_row[j] += s;
        }
    }
}

/// In-place stable softmax of one row.
pub fn softmax_row(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// log(softmax(row)[index]) via the log-sum-exp trick.
pub fn log_softmax_at(row: &[f64], index: usize) -> f64 {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
    row[index] - lse
}

/// Mean squared difference over selected cells; `None` if nothing selected.
pub fn masked_mse(pred: &[f64], target: &[f64], mask: Option<&[bool]>) -> Option<f64> {
    match mask {
        None => {
            if pred.is_empty() {
                return None;
            }
            let mut s = 0.0;
            for (p, t) in pred.iter().zip(target) {
                let d = p - t;
                s += d * d;
            }
            Some(s / pred.len() as f64)
        }
        Some(m) => {
            let mut s = 0.0;
            let mut count = 0usize;
            for ((p, t), &keep) in pred.iter().zip(target).zip(m) {
                if keep {
                    let d = p - t;
                    s += d * d;
                    count += 1;
                }
            }
            if count == 0 {
                None
            } else {
                Some(s / count as f64)
            }
        }
    }
}

/// Layer-norm forward over the last dimension. Returns (output, per-row mean,
/// per-row 1/sqrt(var + eps)); the caches feed the backward pass.
pub fn layernorm_forward(
    x: &[f64],
    gamma: &[f64],
    beta: &[f64],
    cols: usize,
    eps: f64,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let rows = x.len() / cols;
    let mut out = vec![0.0; x.len()];
    let mut means = vec![0.0; rows];
    let mut inv_stds = vec![0.0; rows];
    for r in 0..rows {
        let row = &x[r * cols..(r + 1) * cols];
        let mean = row.iter().sum::<f64>() / cols as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
        let inv_std = 1.0 / (var + eps).sqrt();
        means[r] = mean;
        inv_stds[r] = inv_std;
        let out_row = &mut out[r * cols..(r + 1) * cols];
        for j in 0..cols {
            out_row[j] = (row[j] - mean) * inv_std * gamma[j] + beta[j];
        }
    }
    (out, means, inv_stds)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_small() {
        // [1 2; 3 4] @ [5 6; 7 8] = [19 22; 43 50]
        let c = matmul(&[1.0, 2.0, 3.0, 4.0], &[5.0, 6.0, 7.0, 8.0], 2, 2, 2);
        assert_eq!(c, vec![19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn transposed_variants_agree() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]; // 2x3
        let b = [1.0, -1.0, 0.5, 2.0, -0.5, 3.0]; // 3x2
        let base = matmul(&a, &b, 2, 3, 2);
        // A^T path: (A^T)^T @ B with A stored transposed
        let at = [1.0, 4.0, 2.0, 5.0, 3.0, 6.0]; // 3x2 = A^T
        let mut c = vec![0.0; 4];
        matmul_at_b_accum(&mut c, &at, &b, 2, 3, 2);
        assert_eq!(c, base);
        let bt = [1.0, 0.5, -0.5, -1.0, 2.0, 3.0]; // 2x3 = B^T
        let mut c2 = vec![0.0; 4];
        matmul_a_bt_accum(&mut c2, &a, &bt, 2, 3, 2);
        assert_eq!(c2, base);
    }
}
