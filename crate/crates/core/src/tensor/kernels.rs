// Dense kernels over row-major buffers.

use super::Real;

/// c[m×n] += a[m×k] · b[k×n]
pub fn gemm_nn<T: Real>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    let (ki, ni) = (k as isize, n as isize);
    T::gemm_acc(m, k, n, a, (ki, 1), b, (ni, 1), c, (ni, 1));
}

/// c[k×n] += aᵀ · b  where a is [m×k], b is [m×n]
pub fn gemm_tn<T: Real>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    let (ki, ni) = (k as isize, n as isize);
    T::gemm_acc(k, m, n, a, (1, ki), b, (ni, 1), c, (ni, 1));
}

/// c[m×n] += a[m×k] · bᵀ  where b is [n×k]
pub fn gemm_nt<T: Real>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    let (ki, ni) = (k as isize, n as isize);
    T::gemm_acc(m, k, n, a, (ki, 1), b, (1, ki), c, (ni, 1));
}

/// Transpose of a [rows×cols] matrix.
#[cfg(test)]
fn transpose2<T: Real>(a: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * cols + c];
        }
    }
    out
}

/// General axis permutation of a row-major tensor.
pub fn permute<T: Real>(data: &[T], shape: &[usize], perm: &[usize]) -> (Vec<T>, Vec<usize>) {
    let rank = shape.len();
    let in_strides = super::strides(shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    // stride in the input for each output axis
    let walk: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let mut out = Vec::with_capacity(data.len());
    let mut idx = vec![0usize; rank];
    let inner = out_shape[rank - 1];
    let inner_stride = walk[rank - 1];
    let outer: usize = out_shape[..rank - 1].iter().product();
    for _ in 0..outer {
        let base: usize = idx.iter().zip(&walk).map(|(i, s)| i * s).sum();
        if inner_stride == 1 {
            out.extend_from_slice(&data[base..base + inner]);
        } else {
            out.extend((0..inner).map(|j| data[base + j * inner_stride]));
        }
        // increment all axes except the last
        for ax in (0..rank - 1).rev() {
            idx[ax] += 1;
            if idx[ax] < out_shape[ax] {
                break;
            }
            idx[ax] = 0;
        }
    }
    (out, out_shape)
}

pub fn inverse_perm(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    c[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        c
    }

    #[test]
    fn gemm_variants_agree_with_triple_loop() {
        let (m, k, n) = (3, 5, 4);
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.11).cos()).collect();
        let want = naive(&a, &b, m, k, n);

        let mut c = vec![0.0; m * n];
        gemm_nn(&a, &b, &mut c, m, k, n);
        assert!(c.iter().zip(&want).all(|(x, y)| (x - y).abs() < 1e-12));

        let mut c = vec![0.0; m * n];
        gemm_nt(&a, &transpose2(&b, k, n), &mut c, m, k, n);
        assert!(c.iter().zip(&want).all(|(x, y)| (x - y).abs() < 1e-12));

        let mut c = vec![0.0; m * n];
        gemm_tn(&transpose2(&a, m, k), &b, &mut c, k, m, n);
        assert!(c.iter().zip(&want).all(|(x, y)| (x - y).abs() < 1e-12));
    }

    #[test]
    fn permute_roundtrip() {
        let shape = [2, 3, 4, 5];
        let data: Vec<f64> = (0..120).map(|i| i as f64).collect();
        let perm = [2, 0, 3, 1];
        let (p, s) = permute(&data, &shape, &perm);
        assert_eq!(s, vec![4, 2, 5, 3]);
        // element [a,b,c,d] of input lands at [c,a,d,b]
        assert_eq!(
            p[((2 + 1) * 5 + 3) * 3 + 2],
            data[((3 + 2) * 4 + 1) * 5 + 3]
        );
        let (back, bs) = permute(&p, &s, &inverse_perm(&perm));
        assert_eq!(bs, shape.to_vec());
        assert_eq!(back, data);
    }
}
