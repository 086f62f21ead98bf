//! Dense loops behind the graph ops. Reductions accumulate in `f64` in a
//! fixed order, so every output element depends only on its own inputs and
//! results are independent of how many rows are processed together.

/// `out[m×n] = a[m×k] · b[k×n]`
pub(crate) fn matmul(a: &[f32], b: &[f32], m: usize, k: usize, n: usize, out: &mut [f32]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    let b64: Vec<f64> = b.iter().map(|&v| v as f64).collect();
    let mut acc = vec![0f64; n];
    for (a_row, out_row) in a.chunks_exact(k).zip(out.chunks_exact_mut(n)) {
        acc.iter_mut().for_each(|v| *v = 0.0);
        for (&av, b_row) in a_row.iter().zip(b64.chunks_exact(n)) {
            let av = av as f64;
            for (s, &bv) in acc.iter_mut().zip(b_row) {
                *s += av * bv;
            }
        }
        for (o, &s) in out_row.iter_mut().zip(&acc) {
            *o = s as f32;
        }
    }
}

/// Row-major transpose of an `rows×cols` matrix.
pub(crate) fn transpose(a: &[f32], rows: usize, cols: usize) -> Vec<f32> {
    let mut out = vec![0f32; a.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * cols + c];
        }
    }
    out
}

/// General axis permutation: output axis `i` is input axis `axes[i]`.
pub(crate) fn permute(data: &[f32], shape: &[usize], axes: &[usize]) -> (Vec<f32>, Vec<usize>) {
    let rank = shape.len();
    let mut in_strides = vec![1usize; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * shape[i + 1];
    }
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let mut out = Vec::with_capacity(data.len());
    let mut idx = vec![0usize; rank];
    let mut offset = 0usize;
    let inner = out_shape[rank - 1];
    let inner_stride = strides[rank - 1];
    loop {
        let mut o = offset;
        for _ in 0..inner {
            out.push(data[o]);
            o += inner_stride;
        }
        // advance the outer multi-index
        let mut axis = rank - 1;
        loop {
            if axis == 0 {
                return (out, out_shape);
            }
            axis -= 1;
            idx[axis] += 1;
            offset += strides[axis];
            if idx[axis] < out_shape[axis] {
                break;
            }
            offset -= strides[axis] * idx[axis];
            idx[axis] = 0;
        }
    }
}

pub(crate) fn inverse_axes(axes: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; axes.len()];
    for (i, &a) in axes.iter().enumerate() {
        inv[a] = i;
    }
    inv
}

pub(crate) fn softmax_rows(x: &[f32], width: usize) -> Vec<f32> {
    let mut out = vec![0f32; x.len()];
    let mut buf = vec![0f64; width];
    for (row, out_row) in x.chunks_exact(width).zip(out.chunks_exact_mut(width)) {
        let max = row.iter().fold(f32::NEG_INFINITY, |m, &v| m.max(v)) as f64;
        let mut sum = 0f64;
        for (b, &v) in buf.iter_mut().zip(row) {
            *b = (v as f64 - max).exp();
            sum += *b;
        }
        for (o, &b) in out_row.iter_mut().zip(&buf) {
            *o = (b / sum) as f32;
        }
    }
    out
}

/// Log-softmax of one row, in `f64`.
pub(crate) fn log_softmax_row(row: &[f32]) -> Vec<f64> {
    let max = row.iter().fold(f32::NEG_INFINITY, |m, &v| m.max(v)) as f64;
    let sum: f64 = row.iter().map(|&v| (v as f64 - max).exp()).sum();
    let lse = max + sum.ln();
    row.iter().map(|&v| v as f64 - lse).collect()
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

pub(crate) fn gelu(x: f32) -> f32 {
    let x = x as f64;
    let u = GELU_C * (x + 0.044715 * x * x * x);
    (0.5 * x * (1.0 + u.tanh())) as f32
}

pub(crate) fn gelu_grad(x: f32) -> f64 {
    let x = x as f64;
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    let du = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn permute_matches_naive_transpose() {
        let data: Vec<f32> = (0..6).map(|v| v as f32).collect();
        let (out, shape) = permute(&data, &[2, 3], &[1, 0]);
        assert_eq!(shape, vec![3, 2]);
        assert_eq!(out, transpose(&data, 2, 3));
    }

    #[test]
    fn permute_three_axes_roundtrip() {
        let data: Vec<f32> = (0..24).map(|v| v as f32).collect();
        let axes = [2, 0, 1];
        let (p, shape) = permute(&data, &[2, 3, 4], &axes);
        assert_eq!(shape, vec![4, 2, 3]);
        // element (i,j,k) of input lands at (k,i,j)
        assert_eq!(p[(3 * 2 + 1) * 3 + 2], data[(3 + 2) * 4 + 3]);
        let (back, shape_back) = permute(&p, &shape, &inverse_axes(&axes));
        assert_eq!(shape_back, vec![2, 3, 4]);
        assert_eq!(back, data);
    }

    #[test]
    fn matmul_small() {
        let mut out = vec![0.0; 4];
        matmul(&[1.0, 2.0, 3.0, 4.0], &[5.0, 6.0, 7.0, 8.0], 2, 2, 2, &mut out);
        assert_eq!(out, vec![19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn gelu_derivative_matches_difference() {
        for &x in &[-2.0f32, -0.3, 0.0, 0.7, 1.9] {
            let h = 1e-3f64;
            let fd = (gelu((x as f64 + h) as f32) as f64 - gelu((x as f64 - h) as f32) as f64) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-3, "x={x}");
        }
    }
}
