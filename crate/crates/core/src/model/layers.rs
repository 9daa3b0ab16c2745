//! Per-sample layer kernels on `[channels][width][height]` activations.

fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_strides: (isize, isize),
    b: &[f64],
    b_strides: (isize, isize),
    beta: f64,
    c: &mut [f64],
) {
    debug_assert!(c.len() >= m * n);
    // SAFETY: the callers size `a`, `b` and `c` for the given shapes and
    // strides; `c` is row-major m x n and does not alias the inputs.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0,
            a_strides.1,
            b.as_ptr(),
            b_strides.0,
            b_strides.1,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `[cin * 9][w * h]` patch matrix for a 3x3 kernel with zero padding 1.
fn im2col(x: &[f64], cin: usize, w: usize, h: usize) -> Vec<f64> {
    let hw = w * h;
    let mut cols = vec![0.0; cin * 9 * hw];
    for c in 0..cin {
        let plane = &x[c * hw..(c + 1) * hw];
        for di in 0..3 {
            for dj in 0..3 {
                let row = &mut cols[(c * 9 + di * 3 + dj) * hw..][..hw];
                let (i0, i1) = (1usize.saturating_sub(di), (w + 1 - di).min(w));
                let (j0, j1) = (1usize.saturating_sub(dj), (h + 1 - dj).min(h));
                for i in i0..i1 {
                    let src = (i + di - 1) * h;
                    row[i * h + j0..i * h + j1]
                        .copy_from_slice(&plane[src + j0 + dj - 1..src + j1 + dj - 1]);
                }
            }
        }
    }
    cols
}

fn col2im(cols: &[f64], cin: usize, w: usize, h: usize) -> Vec<f64> {
    let hw = w * h;
    let mut x = vec![0.0; cin * hw];
    for c in 0..cin {
        let plane = &mut x[c * hw..(c + 1) * hw];
        for di in 0..3 {
            for dj in 0..3 {
                let row = &cols[(c * 9 + di * 3 + dj) * hw..][..hw];
                let (i0, i1) = (1usize.saturating_sub(di), (w + 1 - di).min(w));
                let (j0, j1) = (1usize.saturating_sub(dj), (h + 1 - dj).min(h));
                for i in i0..i1 {
                    let dst = (i + di - 1) * h;
                    for (d, s) in plane[dst + j0 + dj - 1..dst + j1 + dj - 1]
                        .iter_mut()
                        .zip(&row[i * h + j0..i * h + j1])
                    {
                        *d += s;
                    }
                }
            }
        }
    }
    x
}

/// Same-size convolution with a `k x k` kernel, `k` in {1, 3}. `weight` is
/// `[cout][cin * k * k]`.
pub fn conv_forward(
    x: &[f64],
    cin: usize,
    w: usize,
    h: usize,
    weight: &[f64],
    bias: &[f64],
    cout: usize,
    k: usize,
) -> Vec<f64> {
    let hw = w * h;
    let mut out = vec![0.0; cout * hw];
    for (o, b) in bias.iter().enumerate() {
        out[o * hw..(o + 1) * hw].fill(*b);
    }
    let kk = cin * k * k;
    let cols;
    let patches = if k == 1 {
        x
    } else {
        cols = im2col(x, cin, w, h);
        &cols
    };
    gemm(cout, kk, hw, weight, (kk as isize, 1), patches, (hw as isize, 1), 1.0, &mut out);
    out
}

/// Accumulates weight and bias gradients and returns the input gradient.
#[allow(clippy::too_many_arguments)]
pub fn conv_backward(
    x: &[f64],
    cin: usize,
    w: usize,
    h: usize,
    weight: &[f64],
    cout: usize,
    k: usize,
    dout: &[f64],
    dweight: &mut [f64],
    dbias: &mut [f64],
) -> Vec<f64> {
    let hw = w * h;
    let kk = cin * k * k;
    for (o, db) in dbias.iter_mut().enumerate() {
        *db += dout[o * hw..(o + 1) * hw].iter().sum::<f64>();
    }
    let cols;
    let patches = if k == 1 {
        x
    } else {
        cols = im2col(x, cin, w, h);
        &cols
    };
    // dW[cout][kk] += dout[cout][hw] * patches^T
    gemm(cout, hw, kk, dout, (hw as isize, 1), patches, (1, hw as isize), 1.0, dweight);
    // dpatches[kk][hw] = W^T * dout
    let mut dpatches = vec![0.0; kk * hw];
    gemm(kk, cout, hw, weight, (1, kk as isize), dout, (hw as isize, 1), 0.0, &mut dpatches);
    if k == 1 {
        dpatches
    } else {
        col2im(&dpatches, cin, w, h)
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn silu_forward(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| v * sigmoid(v)).collect()
}

pub fn silu_backward(x: &[f64], dout: &[f64]) -> Vec<f64> {
    x.iter()
        .zip(dout)
        .map(|(&v, &g)| {
            let s = sigmoid(v);
            g * s * (1.0 + v * (1.0 - s))
        })
        .collect()
}

/// 2x2 average pooling.
pub fn pool_forward(x: &[f64], c: usize, w: usize, h: usize) -> Vec<f64> {
    let (w2, h2) = (w / 2, h / 2);
    let mut out = vec![0.0; c * w2 * h2];
    for ch in 0..c {
        let src = &x[ch * w * h..];
        let dst = &mut out[ch * w2 * h2..];
        for i in 0..w2 {
            for j in 0..h2 {
                let a = src[2 * i * h + 2 * j] + src[2 * i * h + 2 * j + 1];
                let b = src[(2 * i + 1) * h + 2 * j] + src[(2 * i + 1) * h + 2 * j + 1];
                dst[i * h2 + j] = 0.25 * (a + b);
            }
        }
    }
    out
}

pub fn pool_backward(dout: &[f64], c: usize, w: usize, h: usize) -> Vec<f64> {
    let (w2, h2) = (w / 2, h / 2);
    let mut dx = vec![0.0; c * w * h];
    for ch in 0..c {
        for i in 0..w {
            for j in 0..h {
                dx[ch * w * h + i * h + j] = 0.25 * dout[ch * w2 * h2 + (i / 2) * h2 + j / 2];
            }
        }
    }
    dx
}

/// Nearest-neighbour 2x upsampling from `w x h`.
pub fn upsample_forward(x: &[f64], c: usize, w: usize, h: usize) -> Vec<f64> {
    let (w2, h2) = (2 * w, 2 * h);
    let mut out = vec![0.0; c * w2 * h2];
    for ch in 0..c {
        for i in 0..w2 {
            for j in 0..h2 {
                out[ch * w2 * h2 + i * h2 + j] = x[ch * w * h + (i / 2) * h + j / 2];
            }
        }
    }
    out
}

pub fn upsample_backward(dout: &[f64], c: usize, w: usize, h: usize) -> Vec<f64> {
    let (w2, h2) = (2 * w, 2 * h);
    let mut dx = vec![0.0; c * w * h];
    for ch in 0..c {
        for i in 0..w2 {
            for j in 0..h2 {
                dx[ch * w * h + (i / 2) * h + j / 2] += dout[ch * w2 * h2 + i * h2 + j];
            }
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn rand(n: usize, rng: &mut Rng) -> Vec<f64> {
        (0..n).map(|_| rng.uniform_in(-1.0, 1.0)).collect()
    }

    /// Direct nested-loop convolution as the oracle.
    #[allow(clippy::too_many_arguments)]
    fn conv_direct(x: &[f64], cin: usize, w: usize, h: usize, wt: &[f64], b: &[f64], cout: usize, k: usize) -> Vec<f64> {
        let r = (k / 2) as isize;
        let mut out = vec![0.0; cout * w * h];
        for o in 0..cout {
            for i in 0..w as isize {
                for j in 0..h as isize {
                    let mut s = b[o];
                    for c in 0..cin {
                        for di in -r..=r {
                            for dj in -r..=r {
                                let (ii, jj) = (i + di, j + dj);
                                if ii < 0 || jj < 0 || ii >= w as isize || jj >= h as isize {
                                    continue;
                                }
                                let widx = o * cin * k * k + c * k * k + ((di + r) as usize) * k + (dj + r) as usize;
                                s += wt[widx] * x[c * w * h + ii as usize * h + jj as usize];
                            }
                        }
                    }
                    out[o * w * h + i as usize * h + j as usize] = s;
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_direct() {
        let mut rng = Rng::new(1);
        for k in [1, 3] {
            let (cin, cout, w, h) = (3, 4, 5, 7);
            let x = rand(cin * w * h, &mut rng);
            let wt = rand(cout * cin * k * k, &mut rng);
            let b = rand(cout, &mut rng);
            let got = conv_forward(&x, cin, w, h, &wt, &b, cout, k);
            let want = conv_direct(&x, cin, w, h, &wt, &b, cout, k);
            for (a, b) in got.iter().zip(&want) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conv_backward_is_adjoint() {
        // <dout, conv(x)> linear part: <dout, W x> = <W^T dout, x>
        let mut rng = Rng::new(2);
        let (cin, cout, w, h, k) = (2, 3, 6, 4, 3);
        let x = rand(cin * w * h, &mut rng);
        let wt = rand(cout * cin * 9, &mut rng);
        let zero_b = vec![0.0; cout];
        let dout = rand(cout * w * h, &mut rng);
        let y = conv_forward(&x, cin, w, h, &wt, &zero_b, cout, k);
        let mut dw = vec![0.0; wt.len()];
        let mut db = vec![0.0; cout];
        let dx = conv_backward(&x, cin, w, h, &wt, cout, k, &dout, &mut dw, &mut db);
        let lhs: f64 = dout.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = dx.iter().zip(&x).map(|(a, b)| a * b).sum();
        let rhs_w: f64 = dw.iter().zip(&wt).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
        assert!((lhs - rhs_w).abs() < 1e-10);
    }

    #[test]
    fn pool_and_upsample_are_adjoint_pairs() {
        let mut rng = Rng::new(3);
        let (c, w, h) = (2, 4, 6);
        let x = rand(c * w * h, &mut rng);
        let g = rand(c * w * h / 4, &mut rng);
        let lhs: f64 = pool_forward(&x, c, w, h).iter().zip(&g).map(|(a, b)| a * b).sum();
        let rhs: f64 = pool_backward(&g, c, w, h).iter().zip(&x).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
        let small = rand(c * 6, &mut rng);
        let g = rand(c * 24, &mut rng);
        let lhs: f64 = upsample_forward(&small, c, 2, 3).iter().zip(&g).map(|(a, b)| a * b).sum();
        let rhs: f64 = upsample_backward(&g, c, 2, 3).iter().zip(&small).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn silu_derivative() {
        let x = [-3.0, -0.5, 0.0, 0.7, 4.0];
        let d = silu_backward(&x, &[1.0; 5]);
        let h = 1e-6;
        for (i, &v) in x.iter().enumerate() {
            let fd = (silu_forward(&[v + h])[0] - silu_forward(&[v - h])[0]) / (2.0 * h);
            assert!((fd - d[i]).abs() < 1e-8);
        }
    }
}
