/// `c = a·b + beta·c` for row/column-strided `f64` matrices.
///
/// `a` is `m×k` with strides `sa`, `b` is `k×n` with strides `sb`, `c` is a
/// dense row-major `m×n` buffer. Transposed operands are expressed through
/// the strides alone.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    sa: (usize, usize),
    b: &[f64],
    sb: (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    assert!(m == 0 || k == 0 || (m - 1) * sa.0 + (k - 1) * sa.1 < a.len());
    assert!(k == 0 || n == 0 || (k - 1) * sb.0 + (n - 1) * sb.1 < b.len());
    assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|v| *v *= beta);
        return;
    }
    // SAFETY: the asserts above bound every strided access inside the slices.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            sa.0 as isize,
            sa.1 as isize,
            b.as_ptr(),
            sb.0 as isize,
            sb.1 as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(m: usize, k: usize, n: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for l in 0..k {
                    c[i * n + j] += a[i * k + l] * b[l * n + j];
                }
            }
        }
        c
    }

    #[test]
    fn matches_naive_product_and_transposes() {
        let (m, k, n) = (3, 4, 5);
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.11).cos()).collect();
        let mut c = vec![0.0; m * n];
        gemm(m, k, n, &a, (k, 1), &b, (n, 1), 0.0, &mut c);
        let want = naive(m, k, n, &a, &b);
        for (x, y) in c.iter().zip(&want) {
            assert!((x - y).abs() < 1e-12);
        }

        // aᵀ·a via strides (k×m times m×k).
        let mut ata = vec![0.0; k * k];
        gemm(k, m, k, &a, (1, k), &a, (k, 1), 0.0, &mut ata);
        for i in 0..k {
            for j in 0..k {
                let want: f64 = (0..m).map(|r| a[r * k + i] * a[r * k + j]).sum();
                assert!((ata[i * k + j] - want).abs() < 1e-12);
            }
        }
    }
}
