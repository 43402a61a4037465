//! Raw numeric kernels behind the graph operations. Everything here works on
//! flat slices; shape validation happens in `graph`.

use super::Float;

/// Upper bound on im2col scratch size, in elements.
const COL_BUDGET: usize = 1 << 21;

/// Geometry of a strided, zero-padded square-kernel correlation from an
/// image of `channels x height x width` to an `out_h x out_w` grid.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    fn patch(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    fn image_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    fn positions(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Output rows processed per im2col chunk.
    fn rows_per_chunk(&self) -> usize {
        (COL_BUDGET / (self.patch() * self.out_w).max(1)).clamp(1, self.out_h.max(1))
    }

    fn chunks(&self) -> impl Iterator<Item = (usize, usize)> {
        let step = self.rows_per_chunk();
        let out_h = self.out_h;
        (0..out_h).step_by(step).map(move |r0| (r0, (r0 + step).min(out_h)))
    }
}

/// Expands output rows `r0..r1` into a `[C*k*k, (r1-r0)*out_w]` column matrix.
fn im2col<T: Float>(img: &[T], g: &ConvGeom, r0: usize, r1: usize, cols: &mut [T]) {
    let nc = (r1 - r0) * g.out_w;
    let k = g.kernel;
    for c in 0..g.channels {
        let plane = &img[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let dst = &mut cols[row * nc..(row + 1) * nc];
                for oy in r0..r1 {
                    let line = &mut dst[(oy - r0) * g.out_w..(oy - r0 + 1) * g.out_w];
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.height as isize {
                        line.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    for (ox, d) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        *d = if ix >= 0 && ix < g.width as isize {
                            src[ix as usize]
                        } else {
                            T::zero()
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters columns back into the image, accumulating.
fn col2im<T: Float>(cols: &[T], g: &ConvGeom, r0: usize, r1: usize, img: &mut [T]) {
    let nc = (r1 - r0) * g.out_w;
    let k = g.kernel;
    for c in 0..g.channels {
        let plane = &mut img[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let src = &cols[row * nc..(row + 1) * nc];
                for oy in r0..r1 {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    let line = &src[(oy - r0) * g.out_w..(oy - r0 + 1) * g.out_w];
                    let dst = &mut plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    for (ox, &v) in line.iter().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.width as isize {
                            dst[ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

fn add_bias<T: Float>(out: &mut [T], bias: &[T], per_channel: usize) {
    for (chunk, &b) in out.chunks_mut(per_channel).zip(bias.iter().cycle()) {
        for v in chunk {
            *v += b;
        }
    }
}

fn bias_grad<T: Float>(grad: &[T], channels: usize, per_channel: usize) -> Vec<T> {
    let mut gb = vec![T::zero(); channels];
    for (i, chunk) in grad.chunks(per_channel).enumerate() {
        gb[i % channels] += chunk.iter().copied().sum::<T>();
    }
    gb
}

/// `x: [N, C_in, H, W]`, `w: [C_out, C_in, k, k]` -> `[N, C_out, out_h, out_w]`.
pub(crate) fn conv2d_forward<T: Float>(x: &[T], batch: usize, g: &ConvGeom, w: &[T], b: &[T], cout: usize) -> Vec<T> {
    let p = g.positions();
    let kk = g.patch();
    let mut out = vec![T::zero(); batch * cout * p];
    let mut cols = vec![T::zero(); kk * g.rows_per_chunk() * g.out_w];
    for n in 0..batch {
        let img = &x[n * g.image_len()..(n + 1) * g.image_len()];
        let dst = &mut out[n * cout * p..(n + 1) * cout * p];
        for (r0, r1) in g.chunks() {
            let nc = (r1 - r0) * g.out_w;
            im2col(img, g, r0, r1, &mut cols[..kk * nc]);
            T::gemm(cout, kk, nc, w, (kk, 1), &cols[..kk * nc], (nc, 1), T::zero(), &mut dst[r0 * g.out_w..], (p, 1));
        }
    }
    add_bias(&mut out, b, p);
    out
}

pub(crate) struct ConvGrads<T> {
    pub x: Option<Vec<T>>,
    pub w: Option<Vec<T>>,
    pub b: Option<Vec<T>>,
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv2d_backward<T: Float>(
    x: &[T],
    batch: usize,
    g: &ConvGeom,
    w: &[T],
    cout: usize,
    gy: &[T],
    need: (bool, bool, bool),
) -> ConvGrads<T> {
    let p = g.positions();
    let kk = g.patch();
    let mut gx = need.0.then(|| vec![T::zero(); x.len()]);
    let mut gw = need.1.then(|| vec![T::zero(); w.len()]);
    let mut cols = vec![T::zero(); kk * g.rows_per_chunk() * g.out_w];
    let mut dcols = vec![T::zero(); if need.0 { cols.len() } else { 0 }];
    for n in 0..batch {
        let img = &x[n * g.image_len()..(n + 1) * g.image_len()];
        let gy_n = &gy[n * cout * p..(n + 1) * cout * p];
        for (r0, r1) in g.chunks() {
            let nc = (r1 - r0) * g.out_w;
            let gy_chunk = &gy_n[r0 * g.out_w..];
            if let Some(gw) = gw.as_mut() {
                im2col(img, g, r0, r1, &mut cols[..kk * nc]);
                T::gemm(cout, nc, kk, gy_chunk, (p, 1), &cols[..kk * nc], (1, nc), T::one(), gw, (kk, 1));
            }
            if let Some(gx) = gx.as_mut() {
                T::gemm(kk, cout, nc, w, (1, kk), gy_chunk, (p, 1), T::zero(), &mut dcols[..kk * nc], (nc, 1));
                col2im(&dcols[..kk * nc], g, r0, r1, &mut gx[n * g.image_len()..(n + 1) * g.image_len()]);
            }
        }
    }
    ConvGrads {
        x: gx,
        w: gw,
        b: need.2.then(|| bias_grad(gy, cout, p)),
    }
}

/// Transposed convolution. `x: [N, C_in, in_h, in_w]`, `w: [C_in, C_out, k, k]`.
/// `g` describes the forward correlation from the output image
/// (`C_out x out_h x out_w`) down to the input grid.
pub(crate) fn conv_t_forward<T: Float>(x: &[T], batch: usize, g: &ConvGeom, w: &[T], b: &[T], cin: usize) -> Vec<T> {
    let p = g.positions();
    let kk = g.patch();
    let mut out = vec![T::zero(); batch * g.image_len()];
    let mut cols = vec![T::zero(); kk * g.rows_per_chunk() * g.out_w];
    for n in 0..batch {
        let xn = &x[n * cin * p..(n + 1) * cin * p];
        let dst = &mut out[n * g.image_len()..(n + 1) * g.image_len()];
        for (r0, r1) in g.chunks() {
            let nc = (r1 - r0) * g.out_w;
            T::gemm(kk, cin, nc, w, (1, kk), &xn[r0 * g.out_w..], (p, 1), T::zero(), &mut cols[..kk * nc], (nc, 1));
            col2im(&cols[..kk * nc], g, r0, r1, dst);
        }
    }
    add_bias(&mut out, b, g.height * g.width);
    out
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_t_backward<T: Float>(
    x: &[T],
    batch: usize,
    g: &ConvGeom,
    w: &[T],
    cin: usize,
    gy: &[T],
    need: (bool, bool, bool),
) -> ConvGrads<T> {
    let p = g.positions();
    let kk = g.patch();
    let mut gx = need.0.then(|| vec![T::zero(); x.len()]);
    let mut gw = need.1.then(|| vec![T::zero(); w.len()]);
    let mut cols = vec![T::zero(); kk * g.rows_per_chunk() * g.out_w];
    for n in 0..batch {
        let xn = &x[n * cin * p..(n + 1) * cin * p];
        let gy_n = &gy[n * g.image_len()..(n + 1) * g.image_len()];
        for (r0, r1) in g.chunks() {
            let nc = (r1 - r0) * g.out_w;
            im2col(gy_n, g, r0, r1, &mut cols[..kk * nc]);
            if let Some(gx) = gx.as_mut() {
                let dst = &mut gx[n * cin * p + r0 * g.out_w..];
                T::gemm(cin, kk, nc, w, (kk, 1), &cols[..kk * nc], (nc, 1), T::zero(), dst, (p, 1));
            }
            if let Some(gw) = gw.as_mut() {
                T::gemm(cin, nc, kk, &xn[r0 * g.out_w..], (p, 1), &cols[..kk * nc], (1, nc), T::one(), gw, (kk, 1));
            }
        }
    }
    ConvGrads {
        x: gx,
        w: gw,
        b: need.2.then(|| bias_grad(gy, g.channels, g.height * g.width)),
    }
}

/// `norm = beta + gamma @ x^2` per pixel, `x: [N, C, P]`.
fn gdn_norm<T: Float>(x: &[T], batch: usize, c: usize, p: usize, beta: &[T], gamma: &[T]) -> Vec<T> {
    let sq: Vec<T> = x.iter().map(|&v| v * v).collect();
    let mut norm = vec![T::zero(); x.len()];
    for n in 0..batch {
        let dst = &mut norm[n * c * p..(n + 1) * c * p];
        for (i, chunk) in dst.chunks_mut(p).enumerate() {
            chunk.fill(beta[i]);
        }
        T::gemm(c, c, p, gamma, (c, 1), &sq[n * c * p..], (p, 1), T::one(), dst, (p, 1));
    }
    norm
}

pub(crate) fn gdn_forward<T: Float>(
    x: &[T],
    batch: usize,
    c: usize,
    p: usize,
    beta: &[T],
    gamma: &[T],
    inverse: bool,
) -> Vec<T> {
    let norm = gdn_norm(x, batch, c, p, beta, gamma);
    x.iter()
        .zip(&norm)
        .map(|(&v, &s)| if inverse { v * s.sqrt() } else { v / s.sqrt() })
        .collect()
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn gdn_backward<T: Float>(
    x: &[T],
    batch: usize,
    c: usize,
    p: usize,
    beta: &[T],
    gamma: &[T],
    inverse: bool,
    gy: &[T],
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let norm = gdn_norm(x, batch, c, p, beta, gamma);
    let half = T::of(0.5);
    // d loss / d norm
    let mut dnorm = Vec::with_capacity(x.len());
    let mut gx = Vec::with_capacity(x.len());
    for ((&v, &s), &g) in x.iter().zip(&norm).zip(gy) {
        let r = s.sqrt();
        if inverse {
            gx.push(g * r);
            dnorm.push(g * v * half / r);
        } else {
            gx.push(g / r);
            dnorm.push(-g * v * half / (s * r));
        }
    }
    let sq: Vec<T> = x.iter().map(|&v| v * v).collect();
    let mut ggamma = vec![T::zero(); c * c];
    let mut tmp = vec![T::zero(); c * p];
    for n in 0..batch {
        let dn = &dnorm[n * c * p..(n + 1) * c * p];
        T::gemm(c, p, c, dn, (p, 1), &sq[n * c * p..], (1, p), T::one(), &mut ggamma, (c, 1));
        T::gemm(c, c, p, gamma, (1, c), dn, (p, 1), T::zero(), &mut tmp, (p, 1));
        let two = T::of(2.0);
        for ((gxv, &t), &v) in gx[n * c * p..(n + 1) * c * p].iter_mut().zip(&tmp).zip(&x[n * c * p..]) {
            *gxv += two * v * t;
        }
    }
    let gbeta = bias_grad(&dnorm, c, p);
    (gx, gbeta, ggamma)
}

/// Separable depthwise "valid" filtering of `[N*C, H, W]` planes.
pub(crate) fn blur_forward<T: Float>(x: &[T], planes: usize, h: usize, w: usize, kernel: &[T]) -> Vec<T> {
    let k = kernel.len();
    let (oh, ow) = (h + 1 - k, w + 1 - k);
    let mut tmp = vec![T::zero(); h * ow];
    let mut out = vec![T::zero(); planes * oh * ow];
    for pl in 0..planes {
        let src = &x[pl * h * w..(pl + 1) * h * w];
        for y in 0..h {
            for xo in 0..ow {
                let row = &src[y * w + xo..y * w + xo + k];
                tmp[y * ow + xo] = row.iter().zip(kernel).map(|(&a, &b)| a * b).sum();
            }
        }
        let dst = &mut out[pl * oh * ow..(pl + 1) * oh * ow];
        for (i, &kv) in kernel.iter().enumerate() {
            for yo in 0..oh {
                let s = &tmp[(yo + i) * ow..(yo + i + 1) * ow];
                for (d, &v) in dst[yo * ow..(yo + 1) * ow].iter_mut().zip(s) {
                    *d += kv * v;
                }
            }
        }
    }
    out
}

pub(crate) fn blur_backward<T: Float>(gy: &[T], planes: usize, h: usize, w: usize, kernel: &[T]) -> Vec<T> {
    let k = kernel.len();
    let (oh, ow) = (h + 1 - k, w + 1 - k);
    let mut gx = vec![T::zero(); planes * h * w];
    let mut gtmp = vec![T::zero(); h * ow];
    for pl in 0..planes {
        gtmp.fill(T::zero());
        let g = &gy[pl * oh * ow..(pl + 1) * oh * ow];
        for (i, &kv) in kernel.iter().enumerate() {
            for yo in 0..oh {
                for (d, &v) in gtmp[(yo + i) * ow..(yo + i + 1) * ow].iter_mut().zip(&g[yo * ow..(yo + 1) * ow]) {
                    *d += kv * v;
                }
            }
        }
        let dst = &mut gx[pl * h * w..(pl + 1) * h * w];
        for y in 0..h {
            for xo in 0..ow {
                let v = gtmp[y * ow + xo];
                for (d, &kv) in dst[y * w + xo..y * w + xo + k].iter_mut().zip(kernel) {
                    *d += kv * v;
                }
            }
        }
    }
    gx
}

/// 2x2 mean pooling of `[N*C, H, W]` planes; odd trailing rows/columns are dropped.
pub(crate) fn avg_pool2_forward<T: Float>(x: &[T], planes: usize, h: usize, w: usize) -> Vec<T> {
    let (oh, ow) = (h / 2, w / 2);
    let q = T::of(0.25);
    let mut out = Vec::with_capacity(planes * oh * ow);
    for pl in 0..planes {
        let s = &x[pl * h * w..(pl + 1) * h * w];
        for y in 0..oh {
            for xo in 0..ow {
                let i = 2 * y * w + 2 * xo;
                out.push((s[i] + s[i + 1] + s[i + w] + s[i + w + 1]) * q);
            }
        }
    }
    out
}

pub(crate) fn avg_pool2_backward<T: Float>(gy: &[T], planes: usize, h: usize, w: usize) -> Vec<T> {
    let (oh, ow) = (h / 2, w / 2);
    let q = T::of(0.25);
    let mut gx = vec![T::zero(); planes * h * w];
    for pl in 0..planes {
        let d = &mut gx[pl * h * w..(pl + 1) * h * w];
        for y in 0..oh {
            for xo in 0..ow {
                let g = gy[(pl * oh + y) * ow + xo] * q;
                let i = 2 * y * w + 2 * xo;
                d[i] += g;
                d[i + 1] += g;
                d[i + w] += g;
                d[i + w + 1] += g;
            }
        }
    }
    gx
}

pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// For each element of `shape`, the linear index into a tensor whose
/// per-axis strides are `src_strides` (zero on broadcast axes).
pub(crate) fn gather_index(shape: &[usize], src_strides: &[usize]) -> Vec<usize> {
    let numel: usize = shape.iter().product();
    let mut out = Vec::with_capacity(numel);
    let mut idx = vec![0usize; shape.len()];
    let mut lin = 0usize;
    for _ in 0..numel {
        out.push(lin);
        for ax in (0..shape.len()).rev() {
            idx[ax] += 1;
            lin += src_strides[ax];
            if idx[ax] < shape[ax] {
                break;
            }
            lin -= src_strides[ax] * shape[ax];
            idx[ax] = 0;
        }
    }
    out
}

/// Strides of `b` when broadcast against `a` (zero where `b` has extent 1).
pub(crate) fn bcast_strides(b_shape: &[usize]) -> Vec<usize> {
    strides(b_shape)
        .into_iter()
        .zip(b_shape)
        .map(|(s, &d)| if d == 1 { 0 } else { s })
        .collect()
}

pub(crate) fn permute<T: Float>(data: &[T], shape: &[usize], perm: &[usize]) -> (Vec<usize>, Vec<T>) {
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let src: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let index = gather_index(&out_shape, &src);
    (out_shape, index.into_iter().map(|i| data[i]).collect())
}

/// `w: [B, O, I]` times `x: [B, I, L]` -> `[B, O, L]`.
pub(crate) fn channel_matmul<T: Float>(w: &[T], x: &[T], b: usize, o: usize, i: usize, l: usize) -> Vec<T> {
    let mut out = vec![T::zero(); b * o * l];
    for c in 0..b {
        T::gemm(o, i, l, &w[c * o * i..], (i, 1), &x[c * i * l..], (l, 1), T::zero(), &mut out[c * o * l..], (l, 1));
    }
    out
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn channel_matmul_backward<T: Float>(
    w: &[T],
    x: &[T],
    gy: &[T],
    b: usize,
    o: usize,
    i: usize,
    l: usize,
) -> (Vec<T>, Vec<T>) {
    let mut gw = vec![T::zero(); w.len()];
    let mut gx = vec![T::zero(); x.len()];
    for c in 0..b {
        T::gemm(o, l, i, &gy[c * o * l..], (l, 1), &x[c * i * l..], (1, l), T::zero(), &mut gw[c * o * i..], (i, 1));
        T::gemm(i, o, l, &w[c * o * i..], (1, i), &gy[c * o * l..], (l, 1), T::zero(), &mut gx[c * i * l..], (l, 1));
    }
    (gw, gx)
}
