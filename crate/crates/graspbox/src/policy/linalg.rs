//! Fixed-order dense kernels for the network's forward and backward
//! passes.
//!
//! Everything here could be a nalgebra `Mul`, and would run at the same
//! speed at these sizes.  The reason these loops are written out is
//! *reproducibility of summation order*: the stepwise inference path and
//! the whole-sequence training path must produce bit-identical numbers,
//! so both are routed through the same kernels, and a single-column call
//! performs exactly the per-column operations of the batched call.  All
//! matrices are column-major `DMatrix<f64>`.

use nalgebra::DMatrix;

/// `out += a · b`.  Accumulation runs down each output column in `k`
/// order (axpy style), identically for one column or many.
pub fn gemm_acc(out: &mut DMatrix<f64>, a: &DMatrix<f64>, b: &DMatrix<f64>) {
    let (m, ka) = a.shape();
    let (kb, n) = b.shape();
    assert_eq!(ka, kb, "inner dimensions differ");
    assert_eq!(out.shape(), (m, n), "output shape mismatch");
    let a_s = a.as_slice();
    let b_s = b.as_slice();
    let o_s = out.as_mut_slice();
    for j in 0..n {
        let out_col = &mut o_s[j * m..(j + 1) * m];
        for k in 0..ka {
            let scale = b_s[j * kb + k];
            if scale == 0.0 {
                continue;
            }
            let a_col = &a_s[k * m..(k + 1) * m];
            for i in 0..m {
                out_col[i] += scale * a_col[i];
            }
        }
    }
}

/// `out += aᵀ · b` without materializing the transpose.
pub fn gemm_tn_acc(out: &mut DMatrix<f64>, a: &DMatrix<f64>, b: &DMatrix<f64>) {
    let (ka, m) = a.shape();
    let (kb, n) = b.shape();
    assert_eq!(ka, kb, "inner dimensions differ");
    assert_eq!(out.shape(), (m, n), "output shape mismatch");
    let a_s = a.as_slice();
    let b_s = b.as_slice();
    let o_s = out.as_mut_slice();
    for j in 0..n {
        let b_col = &b_s[j * kb..(j + 1) * kb];
        let out_col = &mut o_s[j * m..(j + 1) * m];
        for (i, out_ij) in out_col.iter_mut().enumerate() {
            let a_col = &a_s[i * ka..(i + 1) * ka];
            let mut acc = 0.0;
            for k in 0..ka {
                acc += a_col[k] * b_col[k];
            }
            *out_ij += acc;
        }
    }
}

/// `out += a · bᵀ` without materializing the transpose.
pub fn gemm_nt_acc(out: &mut DMatrix<f64>, a: &DMatrix<f64>, b: &DMatrix<f64>) {
    let (m, ka) = a.shape();
    let (n, kb) = b.shape();
    assert_eq!(ka, kb, "inner dimensions differ");
    assert_eq!(out.shape(), (m, n), "output shape mismatch");
    let a_s = a.as_slice();
    let b_s = b.as_slice();
    let o_s = out.as_mut_slice();
    for j in 0..n {
        let out_col = &mut o_s[j * m..(j + 1) * m];
        for k in 0..ka {
            let scale = b_s[k * n + j];
            if scale == 0.0 {
                continue;
            }
            let a_col = &a_s[k * m..(k + 1) * m];
            for i in 0..m {
                out_col[i] += scale * a_col[i];
            }
        }
    }
}

/// `y += a · x` for a single column vector held as a slice.
///
/// Same operation order as one column of [`gemm_acc`].
pub fn gemv_acc(y: &mut [f64], a: &DMatrix<f64>, x: &[f64]) {
    let (m, k) = a.shape();
    assert_eq!(y.len(), m);
    assert_eq!(x.len(), k);
    let a_s = a.as_slice();
    for (kk, &scale) in x.iter().enumerate() {
        if scale == 0.0 {
            continue;
        }
        let a_col = &a_s[kk * m..(kk + 1) * m];
        for i in 0..m {
            y[i] += scale * a_col[i];
        }
    }
}

/// `y += aᵀ · x` for a single column vector held as a slice.
pub fn gemv_tn_acc(y: &mut [f64], a: &DMatrix<f64>, x: &[f64]) {
    let (k, m) = a.shape();
    assert_eq!(y.len(), m);
    assert_eq!(x.len(), k);
    let a_s = a.as_slice();
    for (i, y_i) in y.iter_mut().enumerate() {
        let a_col = &a_s[i * k..(i + 1) * k];
        let mut acc = 0.0;
        for kk in 0..k {
            acc += a_col[kk] * x[kk];
        }
        *y_i += acc;
    }
}

/// Add `v` to every column of `m` (bias broadcast).
pub fn add_col_broadcast(m: &mut DMatrix<f64>, v: &[f64]) {
    let rows = m.nrows();
    assert_eq!(v.len(), rows);
    for mut col in m.column_iter_mut() {
        for i in 0..rows {
            col[i] += v[i];
        }
    }
}

/// Row-wise sum of `m` added into `v` (bias gradient).
pub fn row_sum_acc(v: &mut [f64], m: &DMatrix<f64>) {
    let rows = m.nrows();
    assert_eq!(v.len(), rows);
    for col in m.column_iter() {
        for i in 0..rows {
            v[i] += col[i];
        }
    }
}
