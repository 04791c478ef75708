//! Flat-slice numeric kernels behind the tape operations.
//!
//! Convolution is im2col plus GEMM. The GEMM inner loops are written so
//! each output row accumulates in a fixed order: results are identical
//! across machines and worker counts, and the loops still vectorize.

use super::Scalar;
use crate::{Error, Result};

/// Spatial padding policy for convolutions.
///
/// `Same` pads so the output keeps `ceil(in / stride)` pixels per side,
/// putting the extra pixel on the bottom/right when the total is odd.
/// `Valid` applies no padding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    Same,
    Valid,
}

/// Resolved geometry of one convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad_top: usize,
    pub pad_left: usize,
    pub hout: usize,
    pub wout: usize,
}

impl ConvGeom {
    pub fn new(
        cin: usize,
        h: usize,
        w: usize,
        cout: usize,
        kh: usize,
        kw: usize,
        stride: usize,
        padding: Padding,
    ) -> Result<Self> {
        if stride == 0 {
            return Err(Error::Shape("convolution stride must be positive".into()));
        }
        let (pad_top, pad_left, hout, wout) = match padding {
            Padding::Same => {
                let hout = h.div_ceil(stride);
                let wout = w.div_ceil(stride);
                let pad_h = ((hout - 1) * stride + kh).saturating_sub(h);
                let pad_w = ((wout - 1) * stride + kw).saturating_sub(w);
                (pad_h / 2, pad_w / 2, hout, wout)
            }
            Padding::Valid => {
                if kh > h || kw > w {
                    return Err(Error::Shape(format!(
                        "kernel {kh}x{kw} larger than input {h}x{w} without padding"
                    )));
                }
                (0, 0, (h - kh) / stride + 1, (w - kw) / stride + 1)
            }
        };
        if hout == 0 || wout == 0 {
            return Err(Error::Shape(format!(
                "convolution of {h}x{w} with kernel {kh}x{kw} stride {stride} has empty output"
            )));
        }
        Ok(ConvGeom { cin, h, w, cout, kh, kw, stride, pad_top, pad_left, hout, wout })
    }

    pub fn patch(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    pub fn out_pixels(&self) -> usize {
        self.hout * self.wout
    }

    pub fn out_len(&self) -> usize {
        self.cout * self.out_pixels()
    }
}

/// Fused multiply-add where the target supports it as an instruction,
/// plain multiply-add elsewhere (a software fma would be a libcall).
#[inline(always)]
fn fmadd<E: Scalar>(a: E, b: E, c: E) -> E {
    #[cfg(target_feature = "fma")]
    {
        a.mul_add(b, c)
    }
    #[cfg(not(target_feature = "fma"))]
    {
        c + a * b
    }
}

/// `c += a @ b` for row-major `a: [m,k]`, `b: [k,n]`, `c: [m,n]`.
///
/// Full tiles accumulate a 4x16 block of `c` in registers across the
/// whole `k` loop; ragged edges fall back to row-at-a-time accumulation.
/// Each `c` element receives its terms in ascending `p` order and the
/// tile boundaries are compile-time constants, so results are identical
/// across runs, machines, and worker counts.
pub(crate) fn matmul_acc<E: Scalar>(a: &[E], b: &[E], c: &mut [E], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    const MR: usize = 4;
    const NR: usize = 16;

    fn rows_acc<E: Scalar>(a: &[E], b: &[E], c: &mut [E], rows: std::ops::Range<usize>, jlo: usize, k: usize, n: usize) {
        for i in rows {
            let arow = &a[i * k..(i + 1) * k];
            let crow = &mut c[i * n + jlo..(i + 1) * n];
            for (p, &av) in arow.iter().enumerate() {
                let brow = &b[p * n + jlo..(p + 1) * n];
                for (cv, &bv) in crow.iter_mut().zip(brow) {
                    *cv = fmadd(av, bv, *cv);
                }
            }
        }
    }

    let mut i = 0;
    while i + MR <= m {
        let mut jt = 0;
        while jt + NR <= n {
            let mut acc = [[E::zero(); NR]; MR];
            for p in 0..k {
                let bseg = &b[p * n + jt..p * n + jt + NR];
                for r in 0..MR {
                    let av = a[(i + r) * k + p];
                    for j in 0..NR {
                        acc[r][j] = fmadd(av, bseg[j], acc[r][j]);
                    }
                }
            }
            for r in 0..MR {
                let crow = &mut c[(i + r) * n + jt..(i + r) * n + jt + NR];
                for j in 0..NR {
                    crow[j] += acc[r][j];
                }
            }
            jt += NR;
        }
        if jt < n {
            rows_acc(a, b, c, i..i + MR, jt, k, n);
        }
        i += MR;
    }
    if i < m {
        rows_acc(a, b, c, i..m, 0, k, n);
    }
}

/// `c += a @ b^T` for row-major `a: [m,k]`, `b: [n,k]`, `c: [m,n]`.
///
/// Full 4x4 blocks keep eight-lane partial sums in registers; every
/// element, blocked or not, reduces with exactly the [`dot`] lane
/// structure, so the result is bitwise independent of the blocking.
pub(crate) fn matmul_nt_acc<E: Scalar>(
    a: &[E],
    b: &[E],
    c: &mut [E],
    m: usize,
    n: usize,
    k: usize,
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(c.len(), m * n);
    const MR: usize = 4;
    const NC: usize = 4;
    let mut i = 0;
    while i + MR <= m {
        let mut j = 0;
        while j + NC <= n {
            let mut lanes = [[[E::zero(); 8]; NC]; MR];
            let chunks = k / 8;
            for ch in 0..chunks {
                let off = ch * 8;
                for r in 0..MR {
                    let aseg = &a[(i + r) * k + off..(i + r) * k + off + 8];
                    for s in 0..NC {
                        let bseg = &b[(j + s) * k + off..(j + s) * k + off + 8];
                        for l in 0..8 {
                            lanes[r][s][l] = fmadd(aseg[l], bseg[l], lanes[r][s][l]);
                        }
                    }
                }
            }
            for t in chunks * 8..k {
                for r in 0..MR {
                    let av = a[(i + r) * k + t];
                    for s in 0..NC {
                        lanes[r][s][t % 8] = fmadd(av, b[(j + s) * k + t], lanes[r][s][t % 8]);
                    }
                }
            }
            for r in 0..MR {
                for s in 0..NC {
                    let mut acc = E::zero();
                    for l in 0..8 {
                        acc += lanes[r][s][l];
                    }
                    c[(i + r) * n + j + s] += acc;
                }
            }
            j += NC;
        }
        while j < n {
            for r in 0..MR {
                c[(i + r) * n + j] += dot(&a[(i + r) * k..(i + r + 1) * k], &b[j * k..(j + 1) * k]);
            }
            j += 1;
        }
        i += MR;
    }
    for r in i..m {
        for j in 0..n {
            c[r * n + j] += dot(&a[r * k..(r + 1) * k], &b[j * k..(j + 1) * k]);
        }
    }
}

/// `y += a * x`.
pub(crate) fn axpy<E: Scalar>(y: &mut [E], a: E, x: &[E]) {
    debug_assert_eq!(y.len(), x.len());
    for (yv, &xv) in y.iter_mut().zip(x) {
        *yv = fmadd(a, xv, *yv);
    }
}

/// Dot product with eight fixed accumulator lanes. The lane split makes
/// the reduction order machine-independent while the compiler can still
/// vectorize it.
pub(crate) fn dot<E: Scalar>(a: &[E], b: &[E]) -> E {
    debug_assert_eq!(a.len(), b.len());
    let mut lanes = [E::zero(); 8];
    let chunks = a.len() / 8;
    for i in 0..chunks {
        let av = &a[i * 8..i * 8 + 8];
        let bv = &b[i * 8..i * 8 + 8];
        for l in 0..8 {
            lanes[l] = fmadd(av[l], bv[l], lanes[l]);
        }
    }
    for i in chunks * 8..a.len() {
        lanes[i % 8] = fmadd(a[i], b[i], lanes[i % 8]);
    }
    let mut acc = E::zero();
    for l in lanes {
        acc += l;
    }
    acc
}

/// Unfold `x: [cin,h,w]` into `cols: [cin*kh*kw, hout*wout]`.
pub(crate) fn im2col<E: Scalar>(x: &[E], g: &ConvGeom, cols: &mut [E]) {
    debug_assert_eq!(x.len(), g.cin * g.h * g.w);
    debug_assert_eq!(cols.len(), g.patch() * g.out_pixels());
    let np = g.out_pixels();
    let mut r = 0;
    for c in 0..g.cin {
        let xc = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = &mut cols[r * np..(r + 1) * np];
                r += 1;
                for oh in 0..g.hout {
                    let seg = &mut row[oh * g.wout..(oh + 1) * g.wout];
                    let ih = (oh * g.stride + ki) as isize - g.pad_top as isize;
                    if ih < 0 || ih >= g.h as isize {
                        seg.fill(E::zero());
                        continue;
                    }
                    let xrow = &xc[ih as usize * g.w..(ih as usize + 1) * g.w];
                    let off = kj as isize - g.pad_left as isize;
                    if g.stride == 1 {
                        let lo = (-off).max(0) as usize;
                        let hi = ((g.w as isize - off).clamp(0, g.wout as isize)) as usize;
                        let hi = hi.max(lo);
                        seg[..lo].fill(E::zero());
                        seg[lo..hi]
                            .copy_from_slice(&xrow[(lo as isize + off) as usize..(hi as isize + off) as usize]);
                        seg[hi..].fill(E::zero());
                    } else {
                        for (ow, s) in seg.iter_mut().enumerate() {
                            let iw = (ow * g.stride) as isize + off;
                            *s = if iw < 0 || iw >= g.w as isize {
                                E::zero()
                            } else {
                                xrow[iw as usize]
                            };
                        }
                    }
                }
            }
        }
    }
}

/// Fold `cols` gradients back onto `dx += fold(cols)`, the adjoint of
/// [`im2col`].
pub(crate) fn col2im_acc<E: Scalar>(cols: &[E], g: &ConvGeom, dx: &mut [E]) {
    debug_assert_eq!(dx.len(), g.cin * g.h * g.w);
    let np = g.out_pixels();
    let mut r = 0;
    for c in 0..g.cin {
        let base = c * g.h * g.w;
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = &cols[r * np..(r + 1) * np];
                r += 1;
                for oh in 0..g.hout {
                    let ih = (oh * g.stride + ki) as isize - g.pad_top as isize;
                    if ih < 0 || ih >= g.h as isize {
                        continue;
                    }
                    let seg = &row[oh * g.wout..(oh + 1) * g.wout];
                    for (ow, &v) in seg.iter().enumerate() {
                        let iw = (ow * g.stride + kj) as isize - g.pad_left as isize;
                        if iw >= 0 && iw < g.w as isize {
                            dx[base + ih as usize * g.w + iw as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

/// Forward convolution: `y = k * x + b` with `y: [cout,hout,wout]`.
/// `cols` is scratch of size `patch * out_pixels`.
pub(crate) fn conv2d_fwd<E: Scalar>(x: &[E], k: &[E], b: &[E], g: &ConvGeom, cols: &mut [E], y: &mut [E]) {
    im2col(x, g, cols);
    let np = g.out_pixels();
    for (o, yo) in y.chunks_exact_mut(np).enumerate() {
        yo.fill(b[o]);
    }
    matmul_acc(k, cols, y, g.cout, g.patch(), np);
}

/// 2x2 max pooling with stride 2 (floor on odd sizes). Records the flat
/// input index of each maximum for the backward pass.
pub(crate) fn maxpool2_fwd<E: Scalar>(
    x: &[E],
    c: usize,
    h: usize,
    w: usize,
    y: &mut [E],
    argmax: &mut Vec<u32>,
) {
    let h2 = h / 2;
    let w2 = w / 2;
    argmax.clear();
    argmax.reserve(c * h2 * w2);
    let mut out = 0;
    for ch in 0..c {
        let base = ch * h * w;
        for oh in 0..h2 {
            for ow in 0..w2 {
                let i00 = base + (2 * oh) * w + 2 * ow;
                let cands = [i00, i00 + 1, i00 + w, i00 + w + 1];
                let mut best = cands[0];
                for &i in &cands[1..] {
                    if x[i] > x[best] {
                        best = i;
                    }
                }
                y[out] = x[best];
                argmax.push(best as u32);
                out += 1;
            }
        }
    }
}

/// Row-wise stabilized softmax over the trailing axis of length `d`.
pub(crate) fn softmax_rows<E: Scalar>(x: &[E], d: usize, y: &mut [E]) {
    debug_assert_eq!(x.len() % d, 0);
    for (xr, yr) in x.chunks_exact(d).zip(y.chunks_exact_mut(d)) {
        let mut m = xr[0];
        for &v in &xr[1..] {
            if v > m {
                m = v;
            }
        }
        let mut sum = E::zero();
        for (yv, &xv) in yr.iter_mut().zip(xr) {
            let e = (xv - m).exp();
            *yv = e;
            sum += e;
        }
        for yv in yr.iter_mut() {
            *yv /= sum;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use rand::Rng;

    fn randv(n: usize, name: &str) -> Vec<f64> {
        let mut r = stream(11, name, &[n as u64]);
        (0..n).map(|_| r.random_range(-1.0..1.0)).collect()
    }

    fn matmul_naive(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
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

    fn conv_naive(
        x: &[f64],
        k: &[f64],
        b: &[f64],
        g: &ConvGeom,
    ) -> Vec<f64> {
        let mut y = vec![0.0; g.out_len()];
        for o in 0..g.cout {
            for oh in 0..g.hout {
                for ow in 0..g.wout {
                    let mut acc = b[o];
                    for c in 0..g.cin {
                        for ki in 0..g.kh {
                            for kj in 0..g.kw {
                                let ih = (oh * g.stride + ki) as isize - g.pad_top as isize;
                                let iw = (ow * g.stride + kj) as isize - g.pad_left as isize;
                                if ih < 0 || ih >= g.h as isize || iw < 0 || iw >= g.w as isize {
                                    continue;
                                }
                                acc += x[(c * g.h + ih as usize) * g.w + iw as usize]
                                    * k[((o * g.cin + c) * g.kh + ki) * g.kw + kj];
                            }
                        }
                    }
                    y[(o * g.hout + oh) * g.wout + ow] = acc;
                }
            }
        }
        y
    }

    fn assert_close(a: &[f64], b: &[f64], tol: f64) {
        assert_eq!(a.len(), b.len());
        for (i, (&x, &y)) in a.iter().zip(b).enumerate() {
            assert!((x - y).abs() <= tol, "index {i}: {x} vs {y}");
        }
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let (m, k, n) = (5, 7, 9);
        let a = randv(m * k, "mm-a");
        let b = randv(k * n, "mm-b");
        let mut c = vec![0.0; m * n];
        matmul_acc(&a, &b, &mut c, m, k, n);
        assert_close(&c, &matmul_naive(&a, &b, m, k, n), 1e-12);
    }

    #[test]
    fn matmul_nt_matches_triple_loop() {
        let (m, n, k) = (4, 6, 19);
        let a = randv(m * k, "nt-a");
        let bt = randv(n * k, "nt-b");
        let mut b = vec![0.0; k * n];
        for j in 0..n {
            for p in 0..k {
                b[p * n + j] = bt[j * k + p];
            }
        }
        let mut c = vec![0.0; m * n];
        matmul_nt_acc(&a, &bt, &mut c, m, n, k);
        assert_close(&c, &matmul_naive(&a, &b, m, k, n), 1e-12);
    }

    #[test]
    fn dot_handles_remainders() {
        for n in [0, 1, 7, 8, 9, 31] {
            let a = randv(n, "dot-a");
            let b = randv(n, "dot-b");
            let expect: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
            assert!((dot(&a, &b) - expect).abs() < 1e-12, "n={n}");
        }
    }

    #[test]
    fn same_padding_follows_ceil_rule() {
        let g = ConvGeom::new(3, 28, 28, 8, 3, 3, 1, Padding::Same).unwrap();
        assert_eq!((g.hout, g.wout), (28, 28));
        assert_eq!((g.pad_top, g.pad_left), (1, 1));

        let g = ConvGeom::new(3, 32, 32, 8, 3, 3, 2, Padding::Same).unwrap();
        assert_eq!((g.hout, g.wout), (16, 16));
        assert_eq!((g.pad_top, g.pad_left), (0, 0));

        let g = ConvGeom::new(1, 7, 7, 8, 3, 3, 2, Padding::Same).unwrap();
        assert_eq!((g.hout, g.wout), (4, 4));
        assert_eq!((g.pad_top, g.pad_left), (1, 1));

        let g = ConvGeom::new(1, 5, 5, 2, 3, 3, 1, Padding::Valid).unwrap();
        assert_eq!((g.hout, g.wout), (3, 3));
    }

    #[test]
    fn conv_matches_quadruple_loop() {
        let cases = [
            ConvGeom::new(3, 9, 11, 4, 3, 3, 1, Padding::Same).unwrap(),
            ConvGeom::new(2, 8, 8, 3, 3, 3, 2, Padding::Same).unwrap(),
            ConvGeom::new(3, 7, 7, 2, 3, 3, 1, Padding::Valid).unwrap(),
            ConvGeom::new(4, 6, 6, 5, 1, 1, 1, Padding::Same).unwrap(),
        ];
        for (ci, g) in cases.iter().enumerate() {
            let x = randv(g.cin * g.h * g.w, &format!("cx{ci}"));
            let k = randv(g.cout * g.patch(), &format!("ck{ci}"));
            let b = randv(g.cout, &format!("cb{ci}"));
            let mut cols = vec![0.0; g.patch() * g.out_pixels()];
            let mut y = vec![0.0; g.out_len()];
            conv2d_fwd(&x, &k, &b, g, &mut cols, &mut y);
            assert_close(&y, &conv_naive(&x, &k, &b, g), 1e-10);
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        let g = ConvGeom::new(2, 6, 5, 1, 3, 3, 1, Padding::Same).unwrap();
        let x = randv(g.cin * g.h * g.w, "adj-x");
        let u = randv(g.patch() * g.out_pixels(), "adj-u");
        let mut cols = vec![0.0; u.len()];
        im2col(&x, &g, &mut cols);
        let lhs: f64 = cols.iter().zip(&u).map(|(a, b)| a * b).sum();
        let mut back = vec![0.0; x.len()];
        col2im_acc(&u, &g, &mut back);
        let rhs: f64 = back.iter().zip(&x).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn maxpool_tracks_argmax_and_floors_odd_sizes() {
        let x: Vec<f64> = vec![
            1.0, 2.0, 3.0, //
            4.0, 5.0, 6.0, //
            7.0, 8.0, 9.0,
        ];
        let mut y = vec![0.0; 1];
        let mut am = Vec::new();
        maxpool2_fwd(&x, 1, 3, 3, &mut y, &mut am);
        assert_eq!(y, vec![5.0]);
        assert_eq!(am, vec![4]);
    }

    #[test]
    fn softmax_matches_exp_normalize() {
        let x = randv(12, "sm");
        let mut y = vec![0.0; 12];
        softmax_rows(&x, 4, &mut y);
        for (xr, yr) in x.chunks(4).zip(y.chunks(4)) {
            let exps: Vec<f64> = xr.iter().map(|v| v.exp()).collect();
            let sum: f64 = exps.iter().sum();
            for (a, b) in yr.iter().zip(exps.iter().map(|e| e / sum)) {
                assert!((a - b).abs() < 1e-12);
            }
            let s: f64 = yr.iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }
}
