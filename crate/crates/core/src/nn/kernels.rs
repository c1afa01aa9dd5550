//! Dense kernels behind the differentiable ops: dilated 1D convolution as a
//! sum of per-tap GEMMs and batched matrix products.
//!
//! A batch is laid out as one wide matrix: every item occupies a segment of
//! `pad_left + time + pad_right` columns, so each tap is a single GEMM over the
//! whole batch. Columns that straddle two segments are computed and dropped.

use std::sync::atomic::{AtomicUsize, Ordering};

use matrixmultiply::sgemm;

static MATH_THREADS: AtomicUsize = AtomicUsize::new(0);

pub const THREADS_ENV: &str = "CONVTTS_NUM_THREADS";

/// Number of worker threads for convolution GEMMs (default 1).
pub fn math_threads() -> usize {
    match MATH_THREADS.load(Ordering::Relaxed) {
        0 => {
            let n = std::env::var(THREADS_ENV)
                .ok()
                .and_then(|v| v.parse::<usize>().ok())
                .filter(|&n| n > 0)
                .unwrap_or(1);
            MATH_THREADS.store(n, Ordering::Relaxed);
            n
        }
        n => n,
    }
}

pub fn set_math_threads(n: usize) {
    MATH_THREADS.store(n.max(1), Ordering::Relaxed);
}

/// Plain strided GEMM: `c = alpha * a * b + beta * c`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    a_strides: (isize, isize),
    b: &[f32],
    b_strides: (isize, isize),
    beta: f32,
    c: &mut [f32],
    c_strides: (isize, isize),
) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!(span(m, k, a_strides) <= a.len());
    debug_assert!(span(k, n, b_strides) <= b.len());
    debug_assert!(span(m, n, c_strides) <= c.len());
    // SAFETY: the debug assertions above spell out the bound every caller
    // maintains: all strided accesses stay inside the provided slices.
    unsafe {
        sgemm(
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
            c_strides.0,
            c_strides.1,
        );
    }
}

fn span(rows: usize, cols: usize, strides: (isize, isize)) -> usize {
    if rows == 0 || cols == 0 {
        return 0;
    }
    ((rows - 1) as isize * strides.0 + (cols - 1) as isize * strides.1) as usize + 1
}

/// Geometry of a dilated 1D convolution over a batch.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub batch: usize,
    pub in_ch: usize,
    pub out_ch: usize,
    pub time: usize,
    pub kernel: usize,
    pub dilation: usize,
    pub pad_left: usize,
}

impl ConvGeom {
    pub fn new(
        batch: usize,
        in_ch: usize,
        out_ch: usize,
        time: usize,
        kernel: usize,
        dilation: usize,
        causal: bool,
    ) -> Self {
        let reach = (kernel - 1) * dilation;
        let pad_left = if causal { reach } else { reach / 2 };
        Self {
            batch,
            in_ch,
            out_ch,
            time,
            kernel,
            dilation,
            pad_left,
        }
    }

    fn reach(&self) -> usize {
        (self.kernel - 1) * self.dilation
    }

    fn segment(&self) -> usize {
        self.time + self.reach()
    }

    fn width(&self) -> usize {
        self.batch * self.segment()
    }

    /// Output columns of the wide product.
    fn columns(&self) -> usize {
        self.width() - self.reach()
    }

    /// Packs `(batch, in_ch, time)` into the padded `(in_ch, width)` layout.
    fn pack_input(&self, x: &[f32]) -> Vec<f32> {
        let (seg, width) = (self.segment(), self.width());
        let mut buf = vec![0.0; self.in_ch * width];
        for b in 0..self.batch {
            for i in 0..self.in_ch {
                let src = &x[(b * self.in_ch + i) * self.time..][..self.time];
                let dst = i * width + b * seg + self.pad_left;
                buf[dst..dst + self.time].copy_from_slice(src);
            }
        }
        buf
    }
}

/// `y[b,o,t] = bias[o] + sum_{i,k} w[o,i,k] x[b,i,t + k*d - pad_left]`.
pub(crate) fn conv1d_forward(g: &ConvGeom, x: &[f32], w: &[f32], bias: &[f32]) -> Vec<f32> {
    let xp = g.pack_input(x);
    let cols = g.columns();
    let mut wide = vec![0.0f32; g.out_ch * cols];
    let threads = math_threads().min(cols.max(1));
    if threads <= 1 {
        conv_columns(g, &xp, w, &mut wide, 0, cols, cols);
    } else {
        // split output columns; each chunk is written by exactly one thread
        let chunk = cols.div_ceil(threads);
        let mut parts: Vec<Vec<f32>> = Vec::with_capacity(threads);
        std::thread::scope(|s| {
            let handles: Vec<_> = (0..threads)
                .map(|ti| {
                    let xp = &xp;
                    s.spawn(move || {
                        let start = ti * chunk;
                        let len = chunk.min(cols.saturating_sub(start));
                        let mut part = vec![0.0f32; g.out_ch * len];
                        conv_columns(g, xp, w, &mut part, start, len, len);
                        part
                    })
                })
                .collect();
            for h in handles {
                parts.push(h.join().expect("conv worker panicked"));
            }
        });
        for (ti, part) in parts.iter().enumerate() {
            let start = ti * chunk;
            let len = chunk.min(cols.saturating_sub(start));
            for o in 0..g.out_ch {
                wide[o * cols + start..][..len].copy_from_slice(&part[o * len..][..len]);
            }
        }
    }

    let seg = g.segment();
    let mut y = vec![0.0f32; g.batch * g.out_ch * g.time];
    for b in 0..g.batch {
        for o in 0..g.out_ch {
            let src = &wide[o * cols + b * seg..][..g.time];
            let dst = &mut y[(b * g.out_ch + o) * g.time..][..g.time];
            let bo = bias[o];
            for (d, s) in dst.iter_mut().zip(src) {
                *d = s + bo;
            }
        }
    }
    y
}

/// Output columns computed per pass of [`plain_block_inference`]; small
/// enough that a tile of every output channel stays in L2.
const INFERENCE_TILE: usize = 256;

/// Per-channel affine map of eval-mode batch norm.
pub(crate) struct EvalNorm<'a> {
    pub gamma: &'a [f32],
    pub beta: &'a [f32],
    pub mean: &'a [f32],
    pub inv_std: &'a [f32],
}

/// `x + mask * norm(relu(conv(x) + bias))` without intermediate tensors.
///
/// The convolution runs over column tiles of the packed batch and each tile
/// is finished before the next one starts, so memory traffic stays flat as
/// the batch grows. Arithmetic matches the op-by-op composition.
pub(crate) fn plain_block_inference(
    g: &ConvGeom,
    x: &[f32],
    w: &[f32],
    bias: &[f32],
    norm: &EvalNorm,
    lengths: &[usize],
) -> Vec<f32> {
    debug_assert_eq!(g.in_ch, g.out_ch);
    let xp = g.pack_input(x);
    let (cols, seg) = (g.columns(), g.segment());
    let mut y = x.to_vec();
    let mut buf = vec![0.0f32; g.out_ch * INFERENCE_TILE.min(cols)];
    let mut start = 0;
    while start < cols {
        let len = INFERENCE_TILE.min(cols - start);
        conv_columns(g, &xp, w, &mut buf[..g.out_ch * len], start, len, len);
        for (b, &valid) in lengths.iter().enumerate() {
            // valid output columns of item b that fall inside this tile
            let lo = (b * seg).max(start);
            let hi = (b * seg + valid.min(g.time)).min(start + len);
            if lo >= hi {
                continue;
            }
            let t0 = lo - b * seg;
            for o in 0..g.out_ch {
                let src = &buf[o * len + (lo - start)..][..hi - lo];
                let dst = &mut y[(b * g.out_ch + o) * g.time + t0..][..hi - lo];
                let (bo, ga, be, m, inv) = (bias[o], norm.gamma[o], norm.beta[o], norm.mean[o], norm.inv_std[o]);
                for (d, &v) in dst.iter_mut().zip(src) {
                    let h = (v + bo).max(0.0);
                    *d += ga * (h - m) * inv + be;
                }
            }
        }
        start += len;
    }
    y
}

fn conv_columns(
    g: &ConvGeom,
    xp: &[f32],
    w: &[f32],
    out: &mut [f32],
    start: usize,
    len: usize,
    out_stride: usize,
) {
    if len == 0 {
        return;
    }
    let width = g.width() as isize;
    let ck = (g.in_ch * g.kernel) as isize;
    for k in 0..g.kernel {
        let off = start + k * g.dilation;
        gemm(
            g.out_ch,
            g.in_ch,
            len,
            &w[k..],
            (ck, g.kernel as isize),
            &xp[off..],
            (width, 1),
            if k == 0 { 0.0 } else { 1.0 },
            out,
            (out_stride as isize, 1),
        );
    }
}

/// Gradients of [`conv1d_forward`] with respect to input, weight and bias.
pub(crate) fn conv1d_backward(
    g: &ConvGeom,
    x: &[f32],
    w: &[f32],
    grad: &[f32],
    need_input: bool,
    need_weight: bool,
) -> (Option<Vec<f32>>, Option<Vec<f32>>, Vec<f32>) {
    let (seg, width, cols) = (g.segment(), g.width(), g.columns());
    let mut gy = vec![0.0f32; g.out_ch * cols];
    let mut gbias = vec![0.0f32; g.out_ch];
    for b in 0..g.batch {
        for o in 0..g.out_ch {
            let src = &grad[(b * g.out_ch + o) * g.time..][..g.time];
            gy[o * cols + b * seg..][..g.time].copy_from_slice(src);
            gbias[o] += src.iter().map(|&v| v as f64).sum::<f64>() as f32;
        }
    }
    let ck = (g.in_ch * g.kernel) as isize;

    let gw = need_weight.then(|| {
        let xp = g.pack_input(x);
        let mut gw = vec![0.0f32; g.out_ch * g.in_ch * g.kernel];
        for k in 0..g.kernel {
            // gw_k (out x in) = gy (out x cols) * xp_k^T (cols x in)
            gemm(
                g.out_ch,
                cols,
                g.in_ch,
                &gy,
                (cols as isize, 1),
                &xp[k * g.dilation..],
                (1, width as isize),
                0.0,
                &mut gw[k..],
                (ck, g.kernel as isize),
            );
        }
        gw
    });

    let gx = need_input.then(|| {
        let mut gxp = vec![0.0f32; g.in_ch * width];
        for k in 0..g.kernel {
            // gxp_k (in x cols) += w_k^T (in x out) * gy (out x cols)
            gemm(
                g.in_ch,
                g.out_ch,
                cols,
                &w[k..],
                (g.kernel as isize, ck),
                &gy,
                (cols as isize, 1),
                1.0,
                &mut gxp[k * g.dilation..],
                (width as isize, 1),
            );
        }
        let mut gx = vec![0.0f32; g.batch * g.in_ch * g.time];
        for b in 0..g.batch {
            for i in 0..g.in_ch {
                let src = &gxp[i * width + b * seg + g.pad_left..][..g.time];
                gx[(b * g.in_ch + i) * g.time..][..g.time].copy_from_slice(src);
            }
        }
        gx
    });

    (gx, gw, gbias)
}

/// Batched product `c[b] = op(a[b]) * op(b[b])` for row-major `(rows, cols)` items.
///
/// `a` items are `(m, k)` or, when `trans_a`, stored as `(k, m)`; likewise `b`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn batched_matmul(
    batch: usize,
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    trans_a: bool,
    b: &[f32],
    trans_b: bool,
) -> Vec<f32> {
    let mut c = vec![0.0f32; batch * m * n];
    let sa = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let sb = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    for i in 0..batch {
        gemm(
            m,
            k,
            n,
            &a[i * m * k..][..m * k],
            sa,
            &b[i * k * n..][..k * n],
            sb,
            0.0,
            &mut c[i * m * n..][..m * n],
            (n as isize, 1),
        );
    }
    c
}
