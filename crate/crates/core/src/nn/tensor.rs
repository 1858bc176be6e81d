//! Channel-major activations and the primitive operations of the network,
//! each with a hand-written backward pass.

/// A `c × h × w` activation, channel-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Tensor { c, h, w, data: vec![0.0; c * h * w] }
    }

    pub fn new(c: usize, h: usize, w: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), c * h * w);
        Tensor { c, h, w, data }
    }

    pub fn plane_len(&self) -> usize {
        self.h * self.w
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.plane_len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn same_shape(&self, o: &Tensor) -> bool {
        self.c == o.c && self.h == o.h && self.w == o.w
    }

    /// Stacks along the channel axis.
    pub fn concat(parts: &[&Tensor]) -> Tensor {
        let (h, w) = (parts[0].h, parts[0].w);
        let mut data = Vec::with_capacity(parts.iter().map(|p| p.data.len()).sum());
        let mut c = 0;
        for p in parts {
            assert!(p.h == h && p.w == w);
            data.extend_from_slice(&p.data);
            c += p.c;
        }
        Tensor { c, h, w, data }
    }

    /// Inverse of [`Tensor::concat`].
    pub fn split(&self, channels: &[usize]) -> Vec<Tensor> {
        let n = self.plane_len();
        let mut at = 0;
        channels
            .iter()
            .map(|&c| {
                let t = Tensor::new(c, self.h, self.w, self.data[at * n..(at + c) * n].to_vec());
                at += c;
                t
            })
            .collect()
    }

    pub fn add_assign(&mut self, o: &Tensor) {
        debug_assert!(self.same_shape(o));
        self.data.iter_mut().zip(&o.data).for_each(|(a, b)| *a += b);
    }
}

/// `c = op(a)·op(b) + beta·c` for row-major operands; `ta`/`tb` read the
/// stored matrix transposed. `op(a)` is `m × k`, `op(b)` is `k × n`.
#[allow(clippy::too_many_arguments)]
pub fn gemm(m: usize, k: usize, n: usize, a: &[f64], ta: bool, b: &[f64], tb: bool, beta: f64, c: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|v| *v *= beta);
        return;
    }
    // SAFETY: the strides describe matrices lying inside the checked slices.
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

/// Square-kernel convolution geometry with "same"-style zero padding.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub kernel: usize,
    pub stride: usize,
    pub dilation: usize,
}

impl ConvGeom {
    pub fn pad(&self) -> usize {
        self.dilation * (self.kernel - 1) / 2
    }

    pub fn out_size(&self, n: usize) -> usize {
        (n + 2 * self.pad() - self.dilation * (self.kernel - 1) - 1) / self.stride + 1
    }
}

/// Unfolds `x` into a `(c·k²) × (ho·wo)` patch matrix.
pub fn im2col(x: &Tensor, g: ConvGeom) -> Vec<f64> {
    let (ho, wo) = (g.out_size(x.h), g.out_size(x.w));
    let k = g.kernel;
    let pad = g.pad() as isize;
    let mut cols = vec![0.0; x.c * k * k * ho * wo];
    for c in 0..x.c {
        let plane = x.plane(c);
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let out = &mut cols[row * ho * wo..(row + 1) * ho * wo];
                for oy in 0..ho {
                    let iy = (oy * g.stride + ky * g.dilation) as isize - pad;
                    if iy < 0 || iy >= x.h as isize {
                        continue;
                    }
                    let src = &plane[iy as usize * x.w..(iy as usize + 1) * x.w];
                    for ox in 0..wo {
                        let ix = (ox * g.stride + kx * g.dilation) as isize - pad;
                        if ix >= 0 && ix < x.w as isize {
                            out[oy * wo + ox] = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`].
pub fn col2im(cols: &[f64], c: usize, h: usize, w: usize, g: ConvGeom) -> Tensor {
    let (ho, wo) = (g.out_size(h), g.out_size(w));
    let k = g.kernel;
    let pad = g.pad() as isize;
    let mut x = Tensor::zeros(c, h, w);
    for ch in 0..c {
        let plane = &mut x.data[ch * h * w..(ch + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ch * k + ky) * k + kx;
                let src = &cols[row * ho * wo..(row + 1) * ho * wo];
                for oy in 0..ho {
                    let iy = (oy * g.stride + ky * g.dilation) as isize - pad;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for ox in 0..wo {
                        let ix = (ox * g.stride + kx * g.dilation) as isize - pad;
                        if ix >= 0 && ix < w as isize {
                            plane[iy as usize * w + ix as usize] += src[oy * wo + ox];
                        }
                    }
                }
            }
        }
    }
    x
}

pub struct ConvCache {
    cols: Vec<f64>,
    in_c: usize,
    in_h: usize,
    in_w: usize,
}

/// `weight` is `co × ci × k × k`.
pub fn conv_forward(x: &Tensor, weight: &[f64], bias: Option<&[f64]>, co: usize, g: ConvGeom) -> (Tensor, ConvCache) {
    let (ho, wo) = (g.out_size(x.h), g.out_size(x.w));
    let kk = x.c * g.kernel * g.kernel;
    let cols = im2col(x, g);
    let mut y = Tensor::zeros(co, ho, wo);
    gemm(co, kk, ho * wo, weight, false, &cols, false, 0.0, &mut y.data);
    if let Some(b) = bias {
        for (c, bc) in b.iter().enumerate() {
            y.data[c * ho * wo..(c + 1) * ho * wo].iter_mut().for_each(|v| *v += bc);
        }
    }
    (y, ConvCache { cols, in_c: x.c, in_h: x.h, in_w: x.w })
}

/// Accumulates weight/bias gradients; returns the input gradient when
/// `need_dx`.
pub fn conv_backward(
    dy: &Tensor,
    cache: &ConvCache,
    weight: &[f64],
    g: ConvGeom,
    dweight: &mut [f64],
    dbias: Option<&mut [f64]>,
    need_dx: bool,
) -> Option<Tensor> {
    let n = dy.plane_len();
    let kk = cache.in_c * g.kernel * g.kernel;
    gemm(dy.c, n, kk, &dy.data, false, &cache.cols, true, 1.0, dweight);
    if let Some(db) = dbias {
        for (c, d) in db.iter_mut().enumerate() {
            *d += dy.plane(c).iter().sum::<f64>();
        }
    }
    if !need_dx {
        return None;
    }
    let mut dcols = vec![0.0; kk * n];
    gemm(kk, dy.c, n, weight, true, &dy.data, false, 0.0, &mut dcols);
    Some(col2im(&dcols, cache.in_c, cache.in_h, cache.in_w, g))
}

pub const GN_EPS: f64 = 1e-5;

/// Four channels per group when the count allows, otherwise one group.
pub fn norm_groups(c: usize) -> usize {
    if c % 4 == 0 { c / 4 } else { 1 }
}

pub struct NormCache {
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
    groups: usize,
}

pub fn group_norm_forward(x: &Tensor, gamma: &[f64], beta: &[f64], groups: usize) -> (Tensor, NormCache) {
    let per = x.c / groups * x.plane_len();
    let mut xhat = vec![0.0; x.data.len()];
    let mut inv_std = vec![0.0; groups];
    for g in 0..groups {
        let src = &x.data[g * per..(g + 1) * per];
        let mean = src.iter().sum::<f64>() / per as f64;
        let var = src.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / per as f64;
        let is = 1.0 / (var + GN_EPS).sqrt();
        inv_std[g] = is;
        for (o, v) in xhat[g * per..(g + 1) * per].iter_mut().zip(src) {
            *o = (v - mean) * is;
        }
    }
    let n = x.plane_len();
    let mut y = Tensor::zeros(x.c, x.h, x.w);
    for c in 0..x.c {
        for k in c * n..(c + 1) * n {
            y.data[k] = gamma[c] * xhat[k] + beta[c];
        }
    }
    (y, NormCache { xhat, inv_std, groups })
}

pub fn group_norm_backward(
    dy: &Tensor,
    cache: &NormCache,
    gamma: &[f64],
    dgamma: &mut [f64],
    dbeta: &mut [f64],
) -> Tensor {
    let n = dy.plane_len();
    let mut dxhat = vec![0.0; dy.data.len()];
    for c in 0..dy.c {
        let (mut sg, mut sb) = (0.0, 0.0);
        for k in c * n..(c + 1) * n {
            sg += dy.data[k] * cache.xhat[k];
            sb += dy.data[k];
            dxhat[k] = dy.data[k] * gamma[c];
        }
        dgamma[c] += sg;
        dbeta[c] += sb;
    }
    let per = dy.c / cache.groups * n;
    let mut dx = Tensor::zeros(dy.c, dy.h, dy.w);
    for g in 0..cache.groups {
        let r = g * per..(g + 1) * per;
        let (s1, s2) = dxhat[r.clone()]
            .iter()
            .zip(&cache.xhat[r.clone()])
            .fold((0.0, 0.0), |(a, b), (d, x)| (a + d, b + d * x));
        let m = per as f64;
        let is = cache.inv_std[g];
        for k in r {
            dx.data[k] = is / m * (m * dxhat[k] - s1 - cache.xhat[k] * s2);
        }
    }
    dx
}

pub fn relu_forward(x: &mut Tensor) {
    x.data.iter_mut().for_each(|v| *v = v.max(0.0));
}

/// `y` is the forward output.
pub fn relu_backward(dy: &mut Tensor, y: &Tensor) {
    dy.data.iter_mut().zip(&y.data).for_each(|(d, v)| {
        if *v <= 0.0 {
            *d = 0.0
        }
    });
}

/// `y = w·x + b` on an `in_dim × n` matrix (row-major, one row per channel).
pub fn linear_forward(w: &[f64], b: &[f64], x: &[f64], out_dim: usize, n: usize) -> Vec<f64> {
    let in_dim = x.len() / n;
    let mut y = vec![0.0; out_dim * n];
    gemm(out_dim, in_dim, n, w, false, x, false, 0.0, &mut y);
    for (r, br) in b.iter().enumerate() {
        y[r * n..(r + 1) * n].iter_mut().for_each(|v| *v += br);
    }
    y
}

pub fn linear_backward(
    dy: &[f64],
    x: &[f64],
    w: &[f64],
    out_dim: usize,
    n: usize,
    dw: &mut [f64],
    db: &mut [f64],
) -> Vec<f64> {
    let in_dim = x.len() / n;
    gemm(out_dim, n, in_dim, dy, false, x, true, 1.0, dw);
    for (r, d) in db.iter_mut().enumerate() {
        *d += dy[r * n..(r + 1) * n].iter().sum::<f64>();
    }
    let mut dx = vec![0.0; in_dim * n];
    gemm(in_dim, out_dim, n, w, true, dy, false, 0.0, &mut dx);
    dx
}

pub fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}
