//! Forward and backward kernels for the primitives recorded on the tape.
//!
//! Convolution lowers to `im2col` followed by a single-threaded SGEMM, so
//! results are bit-reproducible for a given build.

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// Spatial padding applied symmetrically before a convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Padding {
    Zero(usize),
    Reflect(usize),
}

impl Padding {
    pub fn amount(self) -> usize {
        match self {
            Padding::Zero(n) | Padding::Reflect(n) => n,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    Relu,
    LeakyRelu(f32),
    Tanh,
}

/// Static description of one convolution call.
#[derive(Clone, Copy, Debug)]
pub struct ConvGeometry {
    pub input: Shape,
    pub cout: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: Padding,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    pub fn new(input: Shape, weight: Shape, bias: Shape, stride: usize, padding: Padding) -> Result<Self> {
        if weight.c != input.c {
            return Err(Error::dim(
                "input C / weight Cin",
                format!("input has {} channels, weight expects {}", input.c, weight.c),
            ));
        }
        if weight.h != weight.w {
            return Err(Error::dim(
                "weight kH/kW",
                format!("only square kernels are supported, got {}x{}", weight.h, weight.w),
            ));
        }
        if bias.numel() != weight.n {
            return Err(Error::dim(
                "bias / weight Cout",
                format!("bias has {} entries, weight has {} output channels", bias.numel(), weight.n),
            ));
        }
        if !(1..=2).contains(&stride) {
            return Err(Error::Config(format!("stride must be 1 or 2, got {stride}")));
        }
        let k = weight.h;
        let pad = padding.amount();
        if let Padding::Reflect(n) = padding {
            if n >= input.h || n >= input.w {
                return Err(Error::Config(format!(
                    "reflect padding {n} needs spatial size > {n}, got {}x{}",
                    input.h, input.w
                )));
            }
        }
        let (ph, pw) = (input.h + 2 * pad, input.w + 2 * pad);
        if ph < k || pw < k {
            return Err(Error::Config(format!(
                "padded input {ph}x{pw} is smaller than the {k}x{k} kernel"
            )));
        }
        Ok(ConvGeometry {
            input,
            cout: weight.n,
            kernel: k,
            stride,
            padding,
            out_h: (ph - k) / stride + 1,
            out_w: (pw - k) / stride + 1,
        })
    }

    pub fn output_shape(&self) -> Shape {
        Shape::new(self.input.n, self.cout, self.out_h, self.out_w)
    }

    fn patch_len(&self) -> usize {
        self.input.c * self.kernel * self.kernel
    }

    fn out_plane(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Source index along one axis for every (kernel tap, output position),
    /// or `None` where zero padding applies.
    fn axis_table(&self, len: usize, out_len: usize) -> Vec<Option<usize>> {
        let pad = self.padding.amount() as isize;
        let len_i = len as isize;
        let mut table = Vec::with_capacity(self.kernel * out_len);
        for tap in 0..self.kernel {
            for o in 0..out_len {
                let i = (o * self.stride + tap) as isize - pad;
                let src = match self.padding {
                    Padding::Zero(_) => (0..len_i).contains(&i).then_some(i as usize),
                    Padding::Reflect(_) => Some(reflect(i, len_i)),
                };
                table.push(src);
            }
        }
        table
    }
}

fn reflect(i: isize, len: isize) -> usize {
    let mut i = i;
    if i < 0 {
        i = -i;
    }
    if i >= len {
        i = 2 * (len - 1) - i;
    }
    i as usize
}

/// Source lookup along one axis for every (kernel tap, output position).
struct AxisMap {
    out_len: usize,
    stride: usize,
    table: Vec<Option<usize>>,
    /// Per tap, the output range `[lo, hi)` that reads `o * stride + tap - pad`
    /// directly, without padding.
    interior: Vec<(usize, usize)>,
    offset: Vec<isize>,
}

impl AxisMap {
    fn new(g: &ConvGeometry, len: usize, out_len: usize) -> Self {
        let table = g.axis_table(len, out_len);
        let pad = g.padding.amount() as isize;
        let mut interior = Vec::with_capacity(g.kernel);
        let mut offset = Vec::with_capacity(g.kernel);
        for tap in 0..g.kernel {
            let off = tap as isize - pad;
            let direct = |o: usize| {
                let i = (o * g.stride) as isize + off;
                (0..len as isize).contains(&i)
            };
            let lo = (0..out_len).find(|&o| direct(o)).unwrap_or(out_len);
            let hi = (lo..out_len).find(|&o| !direct(o)).unwrap_or(out_len);
            interior.push((lo, hi));
            offset.push(off);
        }
        AxisMap {
            out_len,
            stride: g.stride,
            table,
            interior,
            offset,
        }
    }

    fn src(&self, tap: usize, o: usize) -> Option<usize> {
        self.table[tap * self.out_len + o]
    }

    /// `line[o] = row[src(tap, o)]`, zero where padding applies.
    fn gather_line(&self, tap: usize, row: &[f32], line: &mut [f32]) {
        let (lo, hi) = self.interior[tap];
        for (o, v) in line.iter_mut().enumerate().take(lo) {
            *v = self.src(tap, o).map_or(0.0, |i| row[i]);
        }
        if lo < hi {
            let first = ((lo * self.stride) as isize + self.offset[tap]) as usize;
            if self.stride == 1 {
                line[lo..hi].copy_from_slice(&row[first..first + (hi - lo)]);
            } else {
                for (j, v) in line[lo..hi].iter_mut().enumerate() {
                    *v = row[first + j * self.stride];
                }
            }
        }
        for (o, v) in line.iter_mut().enumerate().skip(hi) {
            *v = self.src(tap, o).map_or(0.0, |i| row[i]);
        }
    }

    /// Adjoint of [`AxisMap::gather_line`].
    fn scatter_line(&self, tap: usize, line: &[f32], row: &mut [f32]) {
        let (lo, hi) = self.interior[tap];
        for (o, &v) in line.iter().enumerate().take(lo) {
            if let Some(i) = self.src(tap, o) {
                row[i] += v;
            }
        }
        if lo < hi {
            let first = ((lo * self.stride) as isize + self.offset[tap]) as usize;
            if self.stride == 1 {
                for (d, &v) in row[first..first + (hi - lo)].iter_mut().zip(&line[lo..hi]) {
                    *d += v;
                }
            } else {
                for (j, &v) in line[lo..hi].iter().enumerate() {
                    row[first + j * self.stride] += v;
                }
            }
        }
        for (o, &v) in line.iter().enumerate().skip(hi) {
            if let Some(i) = self.src(tap, o) {
                row[i] += v;
            }
        }
    }
}

struct Im2Col {
    rows: AxisMap,
    cols: AxisMap,
}

impl Im2Col {
    fn new(g: &ConvGeometry) -> Self {
        Im2Col {
            rows: AxisMap::new(g, g.input.h, g.out_h),
            cols: AxisMap::new(g, g.input.w, g.out_w),
        }
    }

    /// Fills `col` (patch_len x out_plane, row-major) from one input sample.
    fn gather(&self, g: &ConvGeometry, sample: &[f32], col: &mut [f32]) {
        let (k, oh, ow) = (g.kernel, g.out_h, g.out_w);
        let plane = g.input.plane();
        let w = g.input.w;
        let mut row = 0;
        for ci in 0..g.input.c {
            let src = &sample[ci * plane..(ci + 1) * plane];
            for ky in 0..k {
                for kx in 0..k {
                    let dst = &mut col[row * oh * ow..(row + 1) * oh * ow];
                    for (oy, line) in dst.chunks_exact_mut(ow).enumerate() {
                        match self.rows.src(ky, oy) {
                            None => line.fill(0.0),
                            Some(iy) => self.cols.gather_line(kx, &src[iy * w..(iy + 1) * w], line),
                        }
                    }
                    row += 1;
                }
            }
        }
    }

    /// Adjoint of [`Im2Col::gather`]: accumulates `col` back into one input sample.
    fn scatter_add(&self, g: &ConvGeometry, col: &[f32], sample: &mut [f32]) {
        let (k, oh, ow) = (g.kernel, g.out_h, g.out_w);
        let plane = g.input.plane();
        let w = g.input.w;
        let mut row = 0;
        for ci in 0..g.input.c {
            let dst = &mut sample[ci * plane..(ci + 1) * plane];
            for ky in 0..k {
                for kx in 0..k {
                    let src = &col[row * oh * ow..(row + 1) * oh * ow];
                    for (oy, line) in src.chunks_exact(ow).enumerate() {
                        if let Some(iy) = self.rows.src(ky, oy) {
                            self.cols.scatter_line(kx, line, &mut dst[iy * w..(iy + 1) * w]);
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

/// `c = op(a) * op(b) + beta * c` on row-major buffers.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    a_trans: bool,
    b: &[f32],
    b_trans: bool,
    beta: f32,
    c: &mut [f32],
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above bound every index the strides can reach.
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
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Output widths up to this use the direct kernel at stride 1; SGEMM packing
/// dominates for such thin matrices.
const DIRECT_MAX_COUT: usize = 4;

fn use_direct(g: &ConvGeometry) -> bool {
    g.stride == 1 && g.cout <= DIRECT_MAX_COUT
}

pub fn conv2d_forward(g: &ConvGeometry, input: &Tensor, weight: &Tensor, bias: &Tensor) -> Tensor {
    if use_direct(g) {
        return direct::forward(g, input, weight, bias);
    }
    let out_shape = g.output_shape();
    let (kk, op) = (g.patch_len(), g.out_plane());
    let im2col = Im2Col::new(g);
    let mut col = vec![0.0f32; kk * op];
    let mut out = vec![0.0f32; out_shape.numel()];
    let in_per = g.input.c * g.input.plane();
    let out_per = g.cout * op;
    for n in 0..g.input.n {
        im2col.gather(g, &input.data()[n * in_per..(n + 1) * in_per], &mut col);
        let dst = &mut out[n * out_per..(n + 1) * out_per];
        for (co, row) in dst.chunks_exact_mut(op).enumerate() {
            row.fill(bias.data()[co]);
        }
        gemm(g.cout, kk, op, weight.data(), false, &col, false, 1.0, dst);
    }
    Tensor::from_parts(out_shape, out)
}

/// Gradients of a convolution. Each output buffer is optional so callers
/// skip work for inputs that do not require gradients.
pub struct ConvGrads<'a> {
    pub input: Option<&'a mut [f32]>,
    pub weight: Option<&'a mut [f32]>,
    pub bias: Option<&'a mut [f32]>,
}

pub fn conv2d_backward(
    g: &ConvGeometry,
    input: &Tensor,
    weight: &Tensor,
    grad_out: &[f32],
    grads: ConvGrads<'_>,
) {
    if use_direct(g) {
        return direct::backward(g, input, weight, grad_out, grads);
    }
    let ConvGrads {
        input: mut g_input,
        weight: mut g_weight,
        bias: mut g_bias,
    } = grads;
    let (kk, op) = (g.patch_len(), g.out_plane());
    let im2col = Im2Col::new(g);
    let in_per = g.input.c * g.input.plane();
    let out_per = g.cout * op;
    let mut col = vec![0.0f32; kk * op];
    for n in 0..g.input.n {
        let go = &grad_out[n * out_per..(n + 1) * out_per];
        if let Some(gb) = g_bias.as_deref_mut() {
            for (co, row) in go.chunks_exact(op).enumerate() {
                gb[co] += row.iter().sum::<f32>();
            }
        }
        if let Some(gw) = g_weight.as_deref_mut() {
            im2col.gather(g, &input.data()[n * in_per..(n + 1) * in_per], &mut col);
            // dW (cout x kk) += dOut (cout x op) * col^T (op x kk)
            gemm(g.cout, op, kk, go, false, &col, true, 1.0, gw);
        }
        if let Some(gi) = g_input.as_deref_mut() {
            // dCol (kk x op) = W^T (kk x cout) * dOut (cout x op)
            gemm(kk, g.cout, op, weight.data(), true, go, false, 0.0, &mut col);
            im2col.scatter_add(g, &col, &mut gi[n * in_per..(n + 1) * in_per]);
        }
    }
}

/// Stride-1 convolution over an explicitly padded copy of each sample.
mod direct {
    use super::{reflect, ConvGeometry, ConvGrads, Padding};
    use crate::tensor::Tensor;

    struct Padded {
        h: usize,
        w: usize,
        data: Vec<f32>,
    }

    fn source(padding: Padding, i: isize, len: usize) -> Option<usize> {
        match padding {
            Padding::Zero(_) => (0..len as isize).contains(&i).then_some(i as usize),
            Padding::Reflect(_) => Some(reflect(i, len as isize)),
        }
    }

    fn pad(g: &ConvGeometry, sample: &[f32]) -> Padded {
        let p = g.padding.amount();
        let (h, w) = (g.input.h, g.input.w);
        let (ph, pw) = (h + 2 * p, w + 2 * p);
        let mut data = vec![0.0f32; g.input.c * ph * pw];
        for c in 0..g.input.c {
            let src = &sample[c * h * w..(c + 1) * h * w];
            let dst = &mut data[c * ph * pw..(c + 1) * ph * pw];
            for y in 0..ph {
                let Some(sy) = source(g.padding, y as isize - p as isize, h) else {
                    continue;
                };
                let row = &src[sy * w..(sy + 1) * w];
                let out = &mut dst[y * pw..(y + 1) * pw];
                out[p..p + w].copy_from_slice(row);
                for x in (0..p).chain(p + w..pw) {
                    if let Some(sx) = source(g.padding, x as isize - p as isize, w) {
                        out[x] = row[sx];
                    }
                }
            }
        }
        Padded { h: ph, w: pw, data }
    }

    /// Adjoint of [`pad`]: folds a padded-layout gradient into the input.
    fn unpad_add(g: &ConvGeometry, padded: &Padded, sample: &mut [f32]) {
        let p = g.padding.amount();
        let (h, w) = (g.input.h, g.input.w);
        let (ph, pw) = (padded.h, padded.w);
        for c in 0..g.input.c {
            let src = &padded.data[c * ph * pw..(c + 1) * ph * pw];
            let dst = &mut sample[c * h * w..(c + 1) * h * w];
            for y in 0..ph {
                let Some(sy) = source(g.padding, y as isize - p as isize, h) else {
                    continue;
                };
                let row = &src[y * pw..(y + 1) * pw];
                let out = &mut dst[sy * w..(sy + 1) * w];
                for (o, &v) in out.iter_mut().zip(&row[p..p + w]) {
                    *o += v;
                }
                for x in (0..p).chain(p + w..pw) {
                    if let Some(sx) = source(g.padding, x as isize - p as isize, w) {
                        out[sx] += row[x];
                    }
                }
            }
        }
    }

    /// Dot product with sixteen independent lanes so it vectorizes.
    fn dot(a: &[f32], b: &[f32]) -> f32 {
        let mut lanes = [0.0f32; 16];
        let (ca, cb) = (a.chunks_exact(16), b.chunks_exact(16));
        let tail: f32 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
        for (xa, xb) in ca.zip(cb) {
            for i in 0..16 {
                lanes[i] += xa[i] * xb[i];
            }
        }
        lanes.iter().sum::<f32>() + tail
    }

    pub(super) fn forward(g: &ConvGeometry, input: &Tensor, weight: &Tensor, bias: &Tensor) -> Tensor {
        let out_shape = g.output_shape();
        let (k, oh, ow) = (g.kernel, g.out_h, g.out_w);
        let cin = g.input.c;
        let in_per = cin * g.input.plane();
        let mut out = vec![0.0f32; out_shape.numel()];
        let wd = weight.data();
        for (n, out_sample) in out.chunks_exact_mut(g.cout * oh * ow).enumerate() {
            let padded = pad(g, &input.data()[n * in_per..(n + 1) * in_per]);
            let pw = padded.w;
            for (co, plane) in out_sample.chunks_exact_mut(oh * ow).enumerate() {
                plane.fill(bias.data()[co]);
                for ci in 0..cin {
                    let src = &padded.data[ci * padded.h * pw..(ci + 1) * padded.h * pw];
                    for ky in 0..k {
                        for kx in 0..k {
                            let wv = wd[((co * cin + ci) * k + ky) * k + kx];
                            for (oy, line) in plane.chunks_exact_mut(ow).enumerate() {
                                let row = &src[(oy + ky) * pw + kx..(oy + ky) * pw + kx + ow];
                                for (o, &x) in line.iter_mut().zip(row) {
                                    *o += wv * x;
                                }
                            }
                        }
                    }
                }
            }
        }
        Tensor::from_parts(out_shape, out)
    }

    pub(super) fn backward(g: &ConvGeometry, input: &Tensor, weight: &Tensor, grad_out: &[f32], grads: ConvGrads<'_>) {
        let ConvGrads {
            input: mut g_input,
            weight: mut g_weight,
            bias: mut g_bias,
        } = grads;
        let (k, oh, ow) = (g.kernel, g.out_h, g.out_w);
        let cin = g.input.c;
        let in_per = cin * g.input.plane();
        let wd = weight.data();
        for (n, go_sample) in grad_out.chunks_exact(g.cout * oh * ow).enumerate() {
            let padded = pad(g, &input.data()[n * in_per..(n + 1) * in_per]);
            let (ph, pw) = (padded.h, padded.w);
            let mut g_padded = g_input.is_some().then(|| Padded {
                h: ph,
                w: pw,
                data: vec![0.0f32; cin * ph * pw],
            });
            for (co, go) in go_sample.chunks_exact(oh * ow).enumerate() {
                if let Some(gb) = g_bias.as_deref_mut() {
                    gb[co] += go.iter().sum::<f32>();
                }
                for ci in 0..cin {
                    let src = &padded.data[ci * ph * pw..(ci + 1) * ph * pw];
                    for ky in 0..k {
                        for kx in 0..k {
                            let widx = ((co * cin + ci) * k + ky) * k + kx;
                            if let Some(gw) = g_weight.as_deref_mut() {
                                let mut acc = 0.0f32;
                                for (oy, line) in go.chunks_exact(ow).enumerate() {
                                    let row = &src[(oy + ky) * pw + kx..(oy + ky) * pw + kx + ow];
                                    acc += dot(line, row);
                                }
                                gw[widx] += acc;
                            }
                            if let Some(gp) = g_padded.as_mut() {
                                let wv = wd[widx];
                                let dst = &mut gp.data[ci * ph * pw..(ci + 1) * ph * pw];
                                for (oy, line) in go.chunks_exact(ow).enumerate() {
                                    let row = &mut dst[(oy + ky) * pw + kx..(oy + ky) * pw + kx + ow];
                                    for (d, &v) in row.iter_mut().zip(line) {
                                        *d += wv * v;
                                    }
                                }
                            }
                        }
                    }
                }
            }
            if let (Some(gi), Some(gp)) = (g_input.as_deref_mut(), g_padded.as_ref()) {
                unpad_add(g, gp, &mut gi[n * in_per..(n + 1) * in_per]);
            }
        }
    }
}

/// Per-plane statistics kept from the forward pass of instance norm.
pub struct NormCache {
    pub normalized: Vec<f32>,
    pub inv_std: Vec<f32>,
}

pub fn instance_norm_forward(input: &Tensor, gamma: &[f32], beta: &[f32], eps: f32) -> (Tensor, NormCache) {
    let s = input.shape();
    let plane = s.plane();
    let mut out = vec![0.0f32; s.numel()];
    let mut normalized = vec![0.0f32; s.numel()];
    let mut inv_std = vec![0.0f32; s.n * s.c];
    for (idx, src) in input.data().chunks_exact(plane).enumerate() {
        let c = idx % s.c;
        let mean = src.iter().map(|&v| v as f64).sum::<f64>() / plane as f64;
        let var = src.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / plane as f64;
        let istd = (1.0 / (var + eps as f64).sqrt()) as f32;
        let mean = mean as f32;
        inv_std[idx] = istd;
        let xhat = &mut normalized[idx * plane..(idx + 1) * plane];
        let dst = &mut out[idx * plane..(idx + 1) * plane];
        for ((x, h), o) in src.iter().zip(xhat.iter_mut()).zip(dst.iter_mut()) {
            *h = (x - mean) * istd;
            *o = gamma[c] * *h + beta[c];
        }
    }
    (Tensor::from_parts(s, out), NormCache { normalized, inv_std })
}

pub fn instance_norm_backward(
    shape: Shape,
    cache: &NormCache,
    gamma: &[f32],
    grad_out: &[f32],
    g_input: Option<&mut [f32]>,
    g_gamma: Option<&mut [f32]>,
    g_beta: Option<&mut [f32]>,
) {
    let plane = shape.plane();
    let count = plane as f32;
    let mut g_input = g_input;
    let mut g_gamma = g_gamma;
    let mut g_beta = g_beta;
    for (idx, go) in grad_out.chunks_exact(plane).enumerate() {
        let c = idx % shape.c;
        let xhat = &cache.normalized[idx * plane..(idx + 1) * plane];
        let sum_go: f32 = go.iter().sum();
        let sum_go_xhat: f32 = go.iter().zip(xhat).map(|(a, b)| a * b).sum();
        if let Some(gb) = g_beta.as_deref_mut() {
            gb[c] += sum_go;
        }
        if let Some(gg) = g_gamma.as_deref_mut() {
            gg[c] += sum_go_xhat;
        }
        if let Some(gi) = g_input.as_deref_mut() {
            let scale = gamma[c] * cache.inv_std[idx] / count;
            let dst = &mut gi[idx * plane..(idx + 1) * plane];
            for ((d, &g), &h) in dst.iter_mut().zip(go).zip(xhat) {
                *d += scale * (count * g - sum_go - h * sum_go_xhat);
            }
        }
    }
}

pub fn activation_forward(input: &Tensor, kind: Activation) -> Tensor {
    match kind {
        Activation::Relu => input.map(|v| v.max(0.0)),
        Activation::LeakyRelu(slope) => input.map(|v| if v > 0.0 { v } else { slope * v }),
        Activation::Tanh => input.map(|v| v.tanh().clamp(-TANH_BOUND, TANH_BOUND)),
    }
}

/// Largest `f32` below one; keeps tanh outputs strictly inside (-1, 1).
pub const TANH_BOUND: f32 = 1.0 - f32::EPSILON / 2.0;

/// Accumulates the input gradient; `output` is the forward result.
pub fn activation_backward(kind: Activation, input: &[f32], output: &[f32], grad_out: &[f32], g_input: &mut [f32]) {
    match kind {
        Activation::Relu => {
            for ((d, &g), &x) in g_input.iter_mut().zip(grad_out).zip(input) {
                if x > 0.0 {
                    *d += g;
                }
            }
        }
        Activation::LeakyRelu(slope) => {
            for ((d, &g), &x) in g_input.iter_mut().zip(grad_out).zip(input) {
                *d += if x > 0.0 { g } else { slope * g };
            }
        }
        Activation::Tanh => {
            for ((d, &g), &y) in g_input.iter_mut().zip(grad_out).zip(output) {
                *d += g * (1.0 - y * y);
            }
        }
    }
}

/// Two-tap interpolation stencil for one output coordinate.
#[derive(Clone, Copy, Debug)]
struct Tap {
    lo: usize,
    hi: usize,
    w_lo: f32,
    w_hi: f32,
}

/// Half-pixel-centre sampling positions for a 2x upsample, clamped to the edge.
fn upsample_taps(len: usize) -> Vec<Tap> {
    (0..2 * len)
        .map(|o| {
            let src = ((o as f32 + 0.5) / 2.0 - 0.5).clamp(0.0, (len - 1) as f32);
            let lo = src.floor() as usize;
            let hi = (lo + 1).min(len - 1);
            let frac = src - lo as f32;
            Tap {
                lo,
                hi,
                w_lo: 1.0 - frac,
                w_hi: frac,
            }
        })
        .collect()
}

pub fn upsample2x_forward(input: &Tensor) -> Tensor {
    let s = input.shape();
    let out_shape = Shape::new(s.n, s.c, 2 * s.h, 2 * s.w);
    let (ty, tx) = (upsample_taps(s.h), upsample_taps(s.w));
    let ow = 2 * s.w;
    let mut out = vec![0.0f32; out_shape.numel()];
    for (src, dst) in input
        .data()
        .chunks_exact(s.plane())
        .zip(out.chunks_exact_mut(out_shape.plane()))
    {
        for (oy, ry) in ty.iter().enumerate() {
            let (r0, r1) = (&src[ry.lo * s.w..(ry.lo + 1) * s.w], &src[ry.hi * s.w..(ry.hi + 1) * s.w]);
            for (ox, rx) in tx.iter().enumerate() {
                let top = rx.w_lo * r0[rx.lo] + rx.w_hi * r0[rx.hi];
                let bottom = rx.w_lo * r1[rx.lo] + rx.w_hi * r1[rx.hi];
                dst[oy * ow + ox] = ry.w_lo * top + ry.w_hi * bottom;
            }
        }
    }
    Tensor::from_parts(out_shape, out)
}

pub fn upsample2x_backward(input_shape: Shape, grad_out: &[f32], g_input: &mut [f32]) {
    let s = input_shape;
    let (ty, tx) = (upsample_taps(s.h), upsample_taps(s.w));
    let ow = 2 * s.w;
    for (go, gi) in grad_out
        .chunks_exact(4 * s.plane())
        .zip(g_input.chunks_exact_mut(s.plane()))
    {
        for (oy, ry) in ty.iter().enumerate() {
            for (ox, rx) in tx.iter().enumerate() {
                let g = go[oy * ow + ox];
                gi[ry.lo * s.w + rx.lo] += ry.w_lo * rx.w_lo * g;
                gi[ry.lo * s.w + rx.hi] += ry.w_lo * rx.w_hi * g;
                gi[ry.hi * s.w + rx.lo] += ry.w_hi * rx.w_lo * g;
                gi[ry.hi * s.w + rx.hi] += ry.w_hi * rx.w_hi * g;
            }
        }
    }
}
