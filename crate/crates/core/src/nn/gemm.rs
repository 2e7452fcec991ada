/// `C = alpha·A·B + beta·C` for strided row/column layouts.
///
/// `a` is `m×k`, `b` is `k×n`, `c` is `m×n`, each described by a
/// `(row_stride, col_stride)` pair. Strides are non-negative and every
/// addressed element must lie inside its slice; this is checked before
/// handing raw pointers to the kernel. When `beta == 0`, `c` is overwritten.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f32,
    a: &[f32],
    a_strides: (usize, usize),
    b: &[f32],
    b_strides: (usize, usize),
    beta: f32,
    c: &mut [f32],
    c_strides: (usize, usize),
) {
    if m == 0 || n == 0 {
        return;
    }
    let last = |rows: usize, cols: usize, (rs, cs): (usize, usize)| {
        (rows - 1) * rs + (cols - 1) * cs
    };
    assert!(last(m, n, c_strides) < c.len(), "gemm: C out of bounds");
    if k == 0 {
        for i in 0..m {
            for j in 0..n {
                let idx = i * c_strides.0 + j * c_strides.1;
                c[idx] = if beta == 0.0 { 0.0 } else { beta * c[idx] };
            }
        }
        return;
    }
    assert!(last(m, k, a_strides) < a.len(), "gemm: A out of bounds");
    assert!(last(k, n, b_strides) < b.len(), "gemm: B out of bounds");
    // SAFETY: all addressed elements were bounds-checked above and `c`
    // is uniquely borrowed.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            a_strides.0 as isize,
            a_strides.1 as isize,
            b.as_ptr(),
            b_strides.0 as isize,
            b_strides.1 as isize,
            beta,
            c.as_mut_ptr(),
            c_strides.0 as isize,
            c_strides.1 as isize,
        );
    }
}
