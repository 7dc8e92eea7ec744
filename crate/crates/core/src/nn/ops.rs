//! Dense kernels: GEMM wrapper, 3×3 same-padding convolution via im2col,
//! 2×2 max-pooling.

/// `c = beta * c + op(a) · op(b)` with `op(a)` m×k and `op(b)` k×n, all row-major.
/// A transposed operand is stored in its untransposed shape (k×m or n×k).
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    beta: f64,
    c: &mut [f64],
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|v| *v *= beta);
        return;
    }
    let (rsa, csa) = if a_t {
        (1, m as isize)
    } else {
        (k as isize, 1)
    };
    let (rsb, csb) = if b_t {
        (1, k as isize)
    } else {
        (n as isize, 1)
    };
    // SAFETY: the strides describe matrices lying entirely within the
    // slices, whose lengths are asserted above, and `c` does not alias.
    unsafe {
        matrixmultiply::dgemm(
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
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `(c·9) × (h·w)` patch matrix for a 3×3 kernel with zero padding 1.
pub(crate) fn im2col(x: &[f64], c: usize, h: usize, w: usize, col: &mut [f64]) {
    debug_assert_eq!(x.len(), c * h * w);
    debug_assert_eq!(col.len(), c * 9 * h * w);
    let hw = h * w;
    for ci in 0..c {
        let plane = &x[ci * hw..(ci + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut col[((ci * 9) + ky * 3 + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    let out = &mut row[y * w..(y + 1) * w];
                    if sy < 0 || sy >= h as isize {
                        out.fill(0.0);
                        continue;
                    }
                    let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                    match kx {
                        0 => {
                            out[0] = 0.0;
                            out[1..].copy_from_slice(&src[..w - 1]);
                        }
                        1 => out.copy_from_slice(src),
                        _ => {
                            out[..w - 1].copy_from_slice(&src[1..]);
                            out[w - 1] = 0.0;
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates patch gradients back into `dx`.
pub(crate) fn col2im(col: &[f64], c: usize, h: usize, w: usize, dx: &mut [f64]) {
    let hw = h * w;
    for ci in 0..c {
        let plane = &mut dx[ci * hw..(ci + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &col[((ci * 9) + ky * 3 + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src = &row[y * w..(y + 1) * w];
                    let dst = &mut plane[sy as usize * w..(sy as usize + 1) * w];
                    match kx {
                        0 => dst[..w - 1]
                            .iter_mut()
                            .zip(&src[1..])
                            .for_each(|(d, s)| *d += s),
                        1 => dst.iter_mut().zip(src).for_each(|(d, s)| *d += s),
                        _ => dst[1..]
                            .iter_mut()
                            .zip(&src[..w - 1])
                            .for_each(|(d, s)| *d += s),
                    }
                }
            }
        }
    }
}

/// 2×2 stride-2 max-pool; `argmax` records the winning input offset per output.
pub(crate) fn maxpool(
    x: &[f64],
    c: usize,
    h: usize,
    w: usize,
    out: &mut [f64],
    argmax: &mut [u32],
) {
    let (oh, ow) = (h / 2, w / 2);
    for ci in 0..c {
        for y in 0..oh {
            for xo in 0..ow {
                let base = ci * h * w + 2 * y * w + 2 * xo;
                let mut best = base;
                for off in [base + 1, base + w, base + w + 1] {
                    if x[off] > x[best] {
                        best = off;
                    }
                }
                let o = ci * oh * ow + y * ow + xo;
                out[o] = x[best];
                argmax[o] = best as u32;
            }
        }
    }
}

pub(crate) fn maxpool_backward(dout: &[f64], argmax: &[u32], dx: &mut [f64]) {
    dx.fill(0.0);
    for (d, &a) in dout.iter().zip(argmax) {
        dx[a as usize] += d;
    }
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use rand::Rng;

    use super::*;

    fn naive_conv(x: &[f64], c: usize, h: usize, w: usize, k: &[f64], cout: usize) -> Vec<f64> {
        let mut out = vec![0.0; cout * h * w];
        for o in 0..cout {
            for y in 0..h as isize {
                for xx in 0..w as isize {
                    let mut s = 0.0;
                    for ci in 0..c {
                        for ky in 0..3isize {
                            for kx in 0..3isize {
                                let (sy, sx) = (y + ky - 1, xx + kx - 1);
                                if sy >= 0 && sy < h as isize && sx >= 0 && sx < w as isize {
                                    s += k[o * c * 9 + ci * 9 + (ky * 3 + kx) as usize]
                                        * x[ci * h * w + sy as usize * w + sx as usize];
                                }
                            }
                        }
                    }
                    out[o * h * w + y as usize * w + xx as usize] = s;
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_direct_loops() {
        let mut rng = crate::seeded_rng(1);
        let (c, h, w, cout) = (3, 6, 5, 4);
        let x: Vec<f64> = (0..c * h * w)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let k: Vec<f64> = (0..cout * c * 9)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let mut col = vec![0.0; c * 9 * h * w];
        im2col(&x, c, h, w, &mut col);
        let mut out = vec![0.0; cout * h * w];
        gemm(cout, c * 9, h * w, &k, false, &col, false, 0.0, &mut out);
        for (a, b) in out.iter().zip(naive_conv(&x, c, h, w, &k, cout)) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn col2im_is_adjoint() {
        // <im2col(x), y> == <x, col2im(y)>
        let mut rng = crate::seeded_rng(2);
        let (c, h, w) = (2, 4, 7);
        let x: Vec<f64> = (0..c * h * w).map(|_| rng.random()).collect();
        let y: Vec<f64> = (0..c * 9 * h * w).map(|_| rng.random()).collect();
        let mut col = vec![0.0; y.len()];
        im2col(&x, c, h, w, &mut col);
        let mut back = vec![0.0; x.len()];
        col2im(&y, c, h, w, &mut back);
        let lhs: f64 = col.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn gemm_transposes() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]; // 2×3
        let b = [1.0, 0.0, 0.0, 1.0, 1.0, 1.0]; // 3×2
        let mut c = [0.0; 4];
        gemm(2, 3, 2, &a, false, &b, false, 0.0, &mut c);
        assert_eq!(c, [4.0, 5.0, 10.0, 11.0]);
        // aᵀ·a with a stored 2×3: 3×3 result.
        let mut c = [0.0; 9];
        gemm(3, 2, 3, &a, true, &a, false, 0.0, &mut c);
        assert_eq!(c, [17.0, 22.0, 27.0, 22.0, 29.0, 36.0, 27.0, 36.0, 45.0]);
        // a·aᵀ: 2×2.
        let mut c = [1.0; 4];
        gemm(2, 3, 2, &a, false, &a, true, 1.0, &mut c);
        assert_eq!(c, [15.0, 33.0, 33.0, 78.0]);
    }

    #[test]
    fn pooling_routes_gradient_to_max() {
        let x = [1.0, 5.0, 2.0, 0.0, 3.0, 4.0, 9.0, 8.0];
        let (mut out, mut arg) = ([0.0; 2], [0u32; 2]);
        maxpool(&x, 1, 2, 4, &mut out, &mut arg);
        assert_eq!(out, [5.0, 9.0]);
        let mut dx = [0.0; 8];
        maxpool_backward(&[1.0, 2.0], &arg, &mut dx);
        assert_eq!(dx, [0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 2.0, 0.0]);
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
        assert!((sigmoid(2.0) + sigmoid(-2.0) - 1.0).abs() < 1e-15);
    }
}
