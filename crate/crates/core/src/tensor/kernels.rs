//! Matrix-product kernel shared by taped and untaped code.

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Transpose {
    No,
    Yes,
}

/// `out = beta * out + op(a) · op(b)` where `op(a)` is `m×k` and `op(b)` is `k×n`.
///
/// `a` and `b` are row-major buffers of their *stored* shape, so a transposed
/// operand of logical shape `m×k` is stored as `k×m`.
#[allow(clippy::too_many_arguments)]
pub fn matmul_into(
    a: &[f32],
    ta: Transpose,
    b: &[f32],
    tb: Transpose,
    out: &mut [f32],
    m: usize,
    k: usize,
    n: usize,
    beta: f32,
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = match ta {
        Transpose::No => (k as isize, 1),
        Transpose::Yes => (1, m as isize),
    };
    let (rsb, csb) = match tb {
        Transpose::No => (n as isize, 1),
        Transpose::Yes => (1, k as isize),
    };
    // SAFETY: strides describe the row-major buffers checked above.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
