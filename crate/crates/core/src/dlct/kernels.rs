//! Plane-level kernels for the five layer kinds.
//!
//! Activations are stored channel-major as `channels × width × n_time`, time
//! fastest. A 3-tap convolution along either axis becomes, per channel, three
//! shifted copies of the input plane (`prev`, `mid`, `next`); stacking them
//! turns the layer into one matrix product.

use num_traits::{Float, FromPrimitive};

use super::Kernel;

pub trait Scalar:
    Float + FromPrimitive + Default + Send + Sync + std::fmt::Debug + std::iter::Sum + 'static
{
    /// `c (m × n, row stride ldc) = a (m × k) · b (k × n) + beta · c`, with
    /// `a` and `b` addressed through `(row stride, column stride)` pairs.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        a_strides: (usize, usize),
        b: &[Self],
        b_strides: (usize, usize),
        beta: Self,
        c: &mut [Self],
        ldc: usize,
    );
}

fn check_extent(len: usize, rows: usize, cols: usize, (rs, cs): (usize, usize)) {
    if rows > 0 && cols > 0 {
        assert!((rows - 1) * rs + (cols - 1) * cs < len, "gemm operand out of bounds");
    }
}

macro_rules! impl_scalar {
    ($t:ty, $gemm:path) => {
        impl Scalar for $t {
            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                a: &[Self],
                a_strides: (usize, usize),
                b: &[Self],
                b_strides: (usize, usize),
                beta: Self,
                c: &mut [Self],
                ldc: usize,
            ) {
                check_extent(a.len(), m, k, a_strides);
                check_extent(b.len(), k, n, b_strides);
                check_extent(c.len(), m, n, (ldc, 1));
                // SAFETY: every operand extent was bounds-checked above and
                // `c` is uniquely borrowed.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        1.0,
                        a.as_ptr(),
                        a_strides.0 as isize,
                        a_strides.1 as isize,
                        b.as_ptr(),
                        b_strides.0 as isize,
                        b_strides.1 as isize,
                        beta,
                        c.as_mut_ptr(),
                        ldc as isize,
                        1,
                    )
                }
            }
        }
    };
}

impl_scalar!(f32, matrixmultiply::sgemm);
impl_scalar!(f64, matrixmultiply::dgemm);

pub(crate) fn cast<T: Scalar>(v: f64) -> T {
    T::from_f64(v).expect("finite constant")
}

/// A `channels × width × n_time` activation block.
#[derive(Clone, Debug, PartialEq)]
pub struct Act<T> {
    pub channels: usize,
    pub width: usize,
    pub n_time: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> Act<T> {
    pub fn zeros(channels: usize, width: usize, n_time: usize) -> Self {
        Self {
            channels,
            width,
            n_time,
            data: vec![T::zero(); channels * width * n_time],
        }
    }

    pub fn plane_len(&self) -> usize {
        self.width * self.n_time
    }

    pub fn plane(&self, c: usize) -> &[T] {
        let n = self.plane_len();
        &self.data[c * n..(c + 1) * n]
    }
}

const LANES: usize = 16;

/// Sum of element-wise products, accumulated lane-wise.
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut lanes = [T::zero(); LANES];
    let body = a.len() - a.len() % LANES;
    for (ca, cb) in a[..body].chunks_exact(LANES).zip(b[..body].chunks_exact(LANES)) {
        for l in 0..LANES {
            lanes[l] = lanes[l] + ca[l] * cb[l];
        }
    }
    for (l, (&x, &y)) in a[body..].iter().zip(&b[body..]).enumerate() {
        lanes[l] = lanes[l] + x * y;
    }
    lanes.iter().fold(T::zero(), |s, &v| s + v)
}

pub fn lane_sum<T: Scalar>(x: &[T]) -> T {
    let mut lanes = [T::zero(); LANES];
    for chunk in x.chunks(LANES) {
        for (l, &v) in lanes.iter_mut().zip(chunk) {
            *l = *l + v;
        }
    }
    lanes.iter().fold(T::zero(), |s, &v| s + v)
}

/// Stacks `prev`, `mid`, `next` for every input channel into a
/// `(3·channels) × plane` matrix whose rows follow the weight layout.
fn im2col<T: Scalar>(x: &Act<T>, kernel: Kernel) -> Vec<T> {
    let (w, t) = (x.width, x.n_time);
    let n = w * t;
    let zero = T::zero();
    let mut cols = Vec::with_capacity(3 * x.data.len());
    for c in 0..x.channels {
        let src = x.plane(c);
        match kernel {
            Kernel::Time => {
                for row in src.chunks_exact(t) {
                    cols.push(zero);
                    cols.extend_from_slice(&row[..t - 1]);
                }
                cols.extend_from_slice(src);
                for row in src.chunks_exact(t) {
                    cols.extend_from_slice(&row[1..]);
                    cols.push(zero);
                }
            }
            Kernel::Space => {
                cols.extend(std::iter::repeat_n(zero, t));
                cols.extend_from_slice(&src[..n - t]);
                cols.extend_from_slice(src);
                cols.extend_from_slice(&src[t..]);
                cols.extend(std::iter::repeat_n(zero, t));
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: folds column-matrix gradients back onto the input.
fn col2im<T: Scalar>(cols: &[T], channels: usize, width: usize, n_time: usize, kernel: Kernel) -> Act<T> {
    let n = width * n_time;
    let mut gx = Act::zeros(channels, width, n_time);
    for c in 0..channels {
        let g_prev = &cols[(3 * c) * n..(3 * c + 1) * n];
        let g_mid = &cols[(3 * c + 1) * n..(3 * c + 2) * n];
        let g_next = &cols[(3 * c + 2) * n..(3 * c + 3) * n];
        let out = &mut gx.data[c * n..(c + 1) * n];
        out.copy_from_slice(g_mid);
        // prev[j] = x[j−1], so x[m] collects g_prev[m+1]; next[j] = x[j+1]
        // gives x[m] += g_next[m−1]
        match kernel {
            Kernel::Time => {
                for s in 0..width {
                    let o = &mut out[s * n_time..(s + 1) * n_time];
                    let gp = &g_prev[s * n_time..(s + 1) * n_time];
                    let gn = &g_next[s * n_time..(s + 1) * n_time];
                    for t in 0..n_time - 1 {
                        o[t] = o[t] + gp[t + 1];
                        o[t + 1] = o[t + 1] + gn[t];
                    }
                }
            }
            Kernel::Space => {
                for j in 0..n - n_time {
                    out[j] = out[j] + g_prev[j + n_time];
                    out[j + n_time] = out[j + n_time] + g_next[j];
                }
            }
        }
    }
    gx
}

pub fn conv_forward<T: Scalar>(
    x: &Act<T>,
    kernel: Kernel,
    weights: &[T],
    bias: &[T],
    out_ch: usize,
) -> Act<T> {
    let n = x.plane_len();
    let k = 3 * x.channels;
    let cols = im2col(x, kernel);
    let mut data = Vec::with_capacity(out_ch * n);
    for &b in bias {
        data.resize(data.len() + n, b);
    }
    let mut out = Act {
        channels: out_ch,
        width: x.width,
        n_time: x.n_time,
        data,
    };
    // out (out_ch × n) += W (out_ch × k) · cols (k × n)
    T::gemm(out_ch, k, n, weights, (k, 1), &cols, (n, 1), T::one(), &mut out.data, n);
    out
}

/// Returns `(grad_input, grad_weights, grad_bias)`.
pub fn conv_backward<T: Scalar>(
    x: &Act<T>,
    kernel: Kernel,
    weights: &[T],
    out_ch: usize,
    gy: &Act<T>,
    want_input_grad: bool,
) -> (Option<Act<T>>, Vec<T>, Vec<T>) {
    let n = x.plane_len();
    let k = 3 * x.channels;
    let cols = im2col(x, kernel);
    let gb = (0..out_ch).map(|o| lane_sum(gy.plane(o))).collect();
    // gW (out_ch × k) = gY (out_ch × n) · colsᵀ (n × k)
    let mut gw = vec![T::zero(); out_ch * k];
    T::gemm(out_ch, n, k, &gy.data, (n, 1), &cols, (1, n), T::zero(), &mut gw, k);
    let gx = want_input_grad.then(|| {
        // gcols (k × n) = Wᵀ (k × out_ch) · gY (out_ch × n)
        let mut gcols = vec![T::zero(); k * n];
        T::gemm(k, out_ch, n, weights, (1, k), &gy.data, (n, 1), T::zero(), &mut gcols, n);
        col2im(&gcols, x.channels, x.width, x.n_time, kernel)
    });
    (gx, gw, gb)
}

/// Per-channel batch statistics `(mean, biased variance)` over width × time.
pub fn channel_stats<T: Scalar>(x: &Act<T>) -> Vec<(f64, f64)> {
    (0..x.channels)
        .map(|c| {
            let p = x.plane(c);
            let n = p.len() as f64;
            let mean = lane_sum(p).to_f64().unwrap() / n;
            let mt: T = cast(mean);
            let mut lanes = [T::zero(); LANES];
            for chunk in p.chunks(LANES) {
                for (l, &v) in lanes.iter_mut().zip(chunk) {
                    let d = v - mt;
                    *l = *l + d * d;
                }
            }
            let ss = lanes.iter().fold(T::zero(), |s, &v| s + v);
            (mean, ss.to_f64().unwrap() / n)
        })
        .collect()
}

/// Normalizes each channel with the given `(mean, var)` and applies the
/// affine map, returning `(x̂, y, inverse standard deviations)`.
pub fn bn_apply<T: Scalar>(
    x: &Act<T>,
    stats: &[(f64, f64)],
    eps: f64,
    gamma: &[T],
    beta: &[T],
) -> (Act<T>, Act<T>, Vec<T>) {
    let n = x.plane_len();
    let mut xhat = Vec::with_capacity(x.data.len());
    let mut y = Vec::with_capacity(x.data.len());
    let mut inv = Vec::with_capacity(x.channels);
    for (c, &(mean, var)) in stats.iter().enumerate() {
        let inv_std: T = cast(1.0 / (var + eps).sqrt());
        let mean: T = cast(mean);
        let (g, b) = (gamma[c], beta[c]);
        xhat.extend(x.plane(c).iter().map(|&v| (v - mean) * inv_std));
        y.extend(xhat[c * n..].iter().map(|&h| g * h + b));
        inv.push(inv_std);
    }
    let shape = |data| Act {
        channels: x.channels,
        width: x.width,
        n_time: x.n_time,
        data,
    };
    (shape(xhat), shape(y), inv)
}

/// Returns `(grad_input, grad_gamma, grad_beta)`.
pub fn bn_backward<T: Scalar>(
    xhat: &Act<T>,
    inv_std: &[T],
    gamma: &[T],
    gy: &Act<T>,
    batch_stats: bool,
) -> (Act<T>, Vec<T>, Vec<T>) {
    let n = xhat.plane_len();
    let nf: T = cast(n as f64);
    let mut gx = Act::zeros(xhat.channels, xhat.width, xhat.n_time);
    let mut gg = Vec::with_capacity(xhat.channels);
    let mut gbeta = Vec::with_capacity(xhat.channels);
    for c in 0..xhat.channels {
        let g = gy.plane(c);
        let xh = xhat.plane(c);
        let sum_g = lane_sum(g);
        let sum_gx = dot(g, xh);
        gg.push(sum_gx);
        gbeta.push(sum_g);
        let out = &mut gx.data[c * n..(c + 1) * n];
        if batch_stats {
            let k = gamma[c] * inv_std[c] / nf;
            for j in 0..n {
                out[j] = k * (nf * g[j] - sum_g - xh[j] * sum_gx);
            }
        } else {
            let k = gamma[c] * inv_std[c];
            for j in 0..n {
                out[j] = k * g[j];
            }
        }
    }
    (gx, gg, gbeta)
}

pub fn relu<T: Scalar>(mut x: Act<T>) -> Act<T> {
    // written so that NaN passes through
    x.data.iter_mut().for_each(|v| {
        if *v < T::zero() {
            *v = T::zero()
        }
    });
    x
}

pub fn relu_backward<T: Scalar>(y: &Act<T>, mut gy: Act<T>) -> Act<T> {
    for (g, &v) in gy.data.iter_mut().zip(&y.data) {
        if v <= T::zero() {
            *g = T::zero();
        }
    }
    gy
}

/// Max over non-overlapping pairs along time; `picks[j]` records whether the
/// second element of pair `j` won.
pub fn maxpool_time<T: Scalar>(x: &Act<T>) -> (Act<T>, Vec<bool>) {
    let t_out = x.n_time / 2;
    let mut y = Act::zeros(x.channels, x.width, t_out);
    let mut picks = vec![false; y.data.len()];
    for (j, (o, pick)) in y.data.iter_mut().zip(picks.iter_mut()).enumerate() {
        let (a, b) = (x.data[2 * j], x.data[2 * j + 1]);
        if b > a {
            *o = b;
            *pick = true;
        } else {
            *o = a;
        }
    }
    (y, picks)
}

pub fn maxpool_backward<T: Scalar>(picks: &[bool], gy: &Act<T>) -> Act<T> {
    let mut gx = Act::zeros(gy.channels, gy.width, gy.n_time * 2);
    for (j, (&g, &second)) in gy.data.iter().zip(picks).enumerate() {
        gx.data[2 * j + usize::from(second)] = g;
    }
    gx
}

pub fn global_avg_time<T: Scalar>(x: &Act<T>) -> Act<T> {
    let mut y = Act::zeros(x.channels, x.width, 1);
    let inv: T = cast(1.0 / x.n_time as f64);
    for (o, row) in y.data.iter_mut().zip(x.data.chunks(x.n_time)) {
        *o = row.iter().fold(T::zero(), |s, &v| s + v) * inv;
    }
    y
}

pub fn global_avg_backward<T: Scalar>(n_time: usize, gy: &Act<T>) -> Act<T> {
    let mut gx = Act::zeros(gy.channels, gy.width, n_time);
    let inv: T = cast(1.0 / n_time as f64);
    for (row, &g) in gx.data.chunks_mut(n_time).zip(&gy.data) {
        row.iter_mut().for_each(|v| *v = g * inv);
    }
    gx
}
