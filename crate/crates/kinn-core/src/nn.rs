//! Neural primitives: linear maps, depthwise separable 1D convolution, layer
//! normalization, SiLU, and a two-layer MLP. Every op comes with a
//! hand-derived reverse pass; the finite-difference oracle in
//! [`crate::gradcheck`] is the correctness authority for all of them.
//!
//! Activations use the layout `[B, L, d]` treated as `B*L` rows over the
//! channel axis `d`.

use rand::Rng;

use crate::error::{Error, Result};
use crate::params::{join, Params};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[inline(always)]
pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp_fast())
    } else {
        let e = x.exp_fast();
        e / (T::one() + e)
    }
}

#[inline(always)]
pub fn silu_scalar<T: Scalar>(x: T) -> T {
    x * sigmoid(x)
}

/// d silu / dx expressed through s = sigmoid(x).
#[inline(always)]
pub fn silu_derivative<T: Scalar>(x: T) -> T {
    let s = sigmoid(x);
    s * (T::one() + x * (T::one() - s))
}

// ---------------------------------------------------------------------------
// linear
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct LinearParams<T> {
    /// `[fan_in, fan_out]`
    pub weight: Tensor<T>,
    /// `[fan_out]`
    pub bias: Tensor<T>,
}

impl<T: Scalar> Params<T> for LinearParams<T> {
    fn walk<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor<T>)) {
        f(join(prefix, "weight"), &self.weight);
        f(join(prefix, "bias"), &self.bias);
    }
    fn walk_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut Tensor<T>)) {
        f(join(prefix, "weight"), &mut self.weight);
        f(join(prefix, "bias"), &mut self.bias);
    }
}

impl<T: Scalar> LinearParams<T> {
    /// Uniform +-1/sqrt(fan_in) weights, zero bias.
    pub fn init<R: Rng>(rng: &mut R, fan_in: usize, fan_out: usize) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        Self {
            weight: Tensor::uniform(rng, &[fan_in, fan_out], -bound, bound),
            bias: Tensor::zeros(&[fan_out]),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn fan_out(&self) -> usize {
        self.weight.shape()[1]
    }
}

fn rows_for<T: Scalar>(x: &Tensor<T>, fan_in: usize, op: &str) -> Result<usize> {
    match x.shape().last() {
        Some(&d) if d == fan_in => Ok(x.len() / fan_in),
        other => Err(Error::Shape(format!(
            "{op}: input channel axis {:?} does not match fan-in {fan_in}",
            other
        ))),
    }
}

/// `y = x W + b` over the last axis.
pub fn linear<T: Scalar>(p: &LinearParams<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
    let (fi, fo) = (p.fan_in(), p.fan_out());
    let rows = rows_for(x, fi, "linear")?;
    let mut shape = x.shape().to_vec();
    *shape.last_mut().unwrap() = fo;
    let mut y = Tensor::zeros(&shape);
    T::gemm(rows, fi, fo, T::one(), x.data(), p.weight.data(), T::zero(), y.data_mut());
    let b = p.bias.data();
    for row in y.data_mut().chunks_exact_mut(fo) {
        for (v, &bo) in row.iter_mut().zip(b) {
            *v += bo;
        }
    }
    y.debug_assert_finite("linear");
    Ok(y)
}

/// Reverse pass of [`linear`]; returns parameter gradients and `dL/dx`.
pub fn linear_backward<T: Scalar>(
    p: &LinearParams<T>,
    x: &Tensor<T>,
    grad_y: &Tensor<T>,
) -> Result<(LinearParams<T>, Tensor<T>)> {
    let (fi, fo) = (p.fan_in(), p.fan_out());
    let rows = rows_for(x, fi, "linear_backward")?;
    if grad_y.len() != rows * fo {
        return Err(Error::Shape("linear_backward: grad shape".into()));
    }

    // dW = x^T gy   (read x transposed through strides)
    let mut grad_w = Tensor::zeros(&[fi, fo]);
    T::gemm_strided(
        fi, rows, fo, T::one(),
        x.data(), 1, fi as isize,
        grad_y.data(), fo as isize, 1,
        T::zero(), grad_w.data_mut(),
    );
    let mut grad_b = Tensor::zeros(&[fo]);
    {
        let gb = grad_b.data_mut();
        for row in grad_y.data().chunks_exact(fo) {
            for (g, &v) in gb.iter_mut().zip(row) {
                *g += v;
            }
        }
    }
    // dx = gy W^T
    let mut grad_x = Tensor::zeros(x.shape());
    T::gemm_strided(
        rows, fo, fi, T::one(),
        grad_y.data(), fo as isize, 1,
        p.weight.data(), 1, fo as isize,
        T::zero(), grad_x.data_mut(),
    );
    Ok((LinearParams { weight: grad_w, bias: grad_b }, grad_x))
}

// ---------------------------------------------------------------------------
// depthwise separable 1D convolution
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct DsConvParams<T> {
    /// Per-channel kernel `[c, k]`, k odd (symmetric zero padding).
    pub depth: Tensor<T>,
    /// Pointwise 1x1 mixing `[c, c]`.
    pub point: Tensor<T>,
}

impl<T: Scalar> Params<T> for DsConvParams<T> {
    fn walk<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor<T>)) {
        f(join(prefix, "depth"), &self.depth);
        f(join(prefix, "point"), &self.point);
    }
    fn walk_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut Tensor<T>)) {
        f(join(prefix, "depth"), &mut self.depth);
        f(join(prefix, "point"), &mut self.point);
    }
}

impl<T: Scalar> DsConvParams<T> {
    pub fn init<R: Rng>(rng: &mut R, channels: usize, kernel: usize) -> Result<Self> {
        if kernel % 2 == 0 {
            return Err(Error::Config(format!("dsconv kernel must be odd, got {kernel}")));
        }
        let bk = 1.0 / (kernel as f64).sqrt();
        let bc = 1.0 / (channels as f64).sqrt();
        Ok(Self {
            depth: Tensor::uniform(rng, &[channels, kernel], -bk, bk),
            point: Tensor::uniform(rng, &[channels, channels], -bc, bc),
        })
    }

    /// Identity configuration: centered delta kernel and identity mixing.
    pub fn identity(channels: usize, kernel: usize) -> Result<Self> {
        if kernel % 2 == 0 {
            return Err(Error::Config(format!("dsconv kernel must be odd, got {kernel}")));
        }
        let mut depth = Tensor::zeros(&[channels, kernel]);
        for c in 0..channels {
            depth.set(&[c, kernel / 2], T::one());
        }
        let mut point = Tensor::zeros(&[channels, channels]);
        for c in 0..channels {
            point.set(&[c, c], T::one());
        }
        Ok(Self { depth, point })
    }
}

fn conv_dims<T: Scalar>(x: &Tensor<T>, channels: usize) -> Result<(usize, usize)> {
    match x.shape() {
        [b, l, c] if *c == channels => Ok((*b, *l)),
        s => Err(Error::Shape(format!("dsconv1d expects [B, L, {channels}], got {s:?}"))),
    }
}

fn depthwise<T: Scalar>(depth: &Tensor<T>, x: &Tensor<T>, b: usize, l: usize, c: usize) -> Tensor<T> {
    let k = depth.shape()[1];
    let half = (k / 2) as isize;
    let mut mid = Tensor::zeros(x.shape());
    let xd = x.data();
    let kd = depth.data();
    let md = mid.data_mut();
    for bi in 0..b {
        let base = bi * l * c;
        for li in 0..l as isize {
            let row = base + li as usize * c;
            for j in 0..k as isize {
                let src = li + j - half;
                if src < 0 || src >= l as isize {
                    continue;
                }
                let src_row = base + src as usize * c;
                let jj = j as usize;
                for ci in 0..c {
                    md[row + ci] += kd[ci * k + jj] * xd[src_row + ci];
                }
            }
        }
    }
    mid
}

/// Per-channel convolution with symmetric zero padding, then 1x1 channel
/// mixing. Returns the output and the depthwise intermediate (needed by the
/// reverse pass).
pub fn dsconv1d<T: Scalar>(p: &DsConvParams<T>, x: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
    let c = p.depth.shape()[0];
    if p.depth.shape()[1] % 2 == 0 {
        return Err(Error::Config("dsconv kernel must be odd".into()));
    }
    let (b, l) = conv_dims(x, c)?;
    let mid = depthwise(&p.depth, x, b, l, c);
    let mut y = Tensor::zeros(x.shape());
    T::gemm(b * l, c, c, T::one(), mid.data(), p.point.data(), T::zero(), y.data_mut());
    y.debug_assert_finite("dsconv1d");
    Ok((y, mid))
}

pub fn dsconv1d_backward<T: Scalar>(
    p: &DsConvParams<T>,
    x: &Tensor<T>,
    mid: &Tensor<T>,
    grad_y: &Tensor<T>,
) -> Result<(DsConvParams<T>, Tensor<T>)> {
    let c = p.depth.shape()[0];
    let k = p.depth.shape()[1];
    let (b, l) = conv_dims(x, c)?;
    let rows = b * l;

    // pointwise: y = mid * point
    let mut grad_point = Tensor::zeros(&[c, c]);
    T::gemm_strided(
        c, rows, c, T::one(),
        mid.data(), 1, c as isize,
        grad_y.data(), c as isize, 1,
        T::zero(), grad_point.data_mut(),
    );
    let mut grad_mid = Tensor::zeros(x.shape());
    T::gemm_strided(
        rows, c, c, T::one(),
        grad_y.data(), c as isize, 1,
        p.point.data(), 1, c as isize,
        T::zero(), grad_mid.data_mut(),
    );

    // depthwise: mid[b,l,c] = sum_j depth[c,j] x[b, l+j-half, c]
    let half = (k / 2) as isize;
    let mut grad_depth = Tensor::zeros(&[c, k]);
    let mut grad_x = Tensor::zeros(x.shape());
    let xd = x.data();
    let kd = p.depth.data();
    let gm = grad_mid.data();
    let gx = grad_x.data_mut();
    let gk = grad_depth.data_mut();
    for bi in 0..b {
        let base = bi * l * c;
        for li in 0..l as isize {
            let row = base + li as usize * c;
            for j in 0..k as isize {
                let src = li + j - half;
                if src < 0 || src >= l as isize {
                    continue;
                }
                let src_row = base + src as usize * c;
                let jj = j as usize;
                for ci in 0..c {
                    gk[ci * k + jj] += gm[row + ci] * xd[src_row + ci];
                    gx[src_row + ci] += kd[ci * k + jj] * gm[row + ci];
                }
            }
        }
    }
    Ok((DsConvParams { depth: grad_depth, point: grad_point }, grad_x))
}

// ---------------------------------------------------------------------------
// layer normalization
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNormParams<T> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
}

impl<T: Scalar> Params<T> for LayerNormParams<T> {
    fn walk<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor<T>)) {
        f(join(prefix, "gamma"), &self.gamma);
        f(join(prefix, "beta"), &self.beta);
    }
    fn walk_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut Tensor<T>)) {
        f(join(prefix, "gamma"), &mut self.gamma);
        f(join(prefix, "beta"), &mut self.beta);
    }
}

impl<T: Scalar> LayerNormParams<T> {
    pub fn init(d: usize) -> Self {
        Self { gamma: Tensor::filled(&[d], T::one()), beta: Tensor::zeros(&[d]) }
    }
}

/// Per-row mean/inverse-std cache for the reverse pass.
#[derive(Debug, Clone)]
pub struct LayerNormCache<T> {
    mean: Vec<T>,
    inv_std: Vec<T>,
}

/// Mean-0/var-1 over the channel axis, then affine. Epsilon 1e-5 inside the
/// square root, so a constant row maps to beta.
pub fn layer_norm<T: Scalar>(
    p: &LayerNormParams<T>,
    x: &Tensor<T>,
) -> Result<(Tensor<T>, LayerNormCache<T>)> {
    let d = p.gamma.len();
    let rows = rows_for(x, d, "layer_norm")?;
    let eps = T::from_f64(LAYER_NORM_EPS);
    let inv_d = T::one() / T::from_f64(d as f64);
    let mut y = Tensor::zeros(x.shape());
    let mut cache = LayerNormCache { mean: Vec::with_capacity(rows), inv_std: Vec::with_capacity(rows) };
    let g = p.gamma.data();
    let b = p.beta.data();
    for (xr, yr) in x.data().chunks_exact(d).zip(y.data_mut().chunks_exact_mut(d)) {
        let mean = xr.iter().copied().sum::<T>() * inv_d;
        let var = xr.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
        let inv_std = T::one() / (var + eps).sqrt();
        for ((yv, &xv), (gv, bv)) in yr.iter_mut().zip(xr).zip(g.iter().zip(b)) {
            *yv = *gv * ((xv - mean) * inv_std) + *bv;
        }
        cache.mean.push(mean);
        cache.inv_std.push(inv_std);
    }
    y.debug_assert_finite("layer_norm");
    Ok((y, cache))
}

pub fn layer_norm_backward<T: Scalar>(
    p: &LayerNormParams<T>,
    x: &Tensor<T>,
    cache: &LayerNormCache<T>,
    grad_y: &Tensor<T>,
) -> Result<(LayerNormParams<T>, Tensor<T>)> {
    let d = p.gamma.len();
    let rows = rows_for(x, d, "layer_norm_backward")?;
    let inv_d = T::one() / T::from_f64(d as f64);
    let mut grad_gamma = Tensor::zeros(&[d]);
    let mut grad_beta = Tensor::zeros(&[d]);
    let mut grad_x = Tensor::zeros(x.shape());
    let g = p.gamma.data();
    for r in 0..rows {
        let xr = &x.data()[r * d..(r + 1) * d];
        let gyr = &grad_y.data()[r * d..(r + 1) * d];
        let gxr = &mut grad_x.data_mut()[r * d..(r + 1) * d];
        let (mean, inv_std) = (cache.mean[r], cache.inv_std[r]);

        // dxhat = gy * gamma; reduce its mean and its correlation with xhat
        let mut sum_dxhat = T::zero();
        let mut sum_dxhat_xhat = T::zero();
        for j in 0..d {
            let xhat = (xr[j] - mean) * inv_std;
            let dxhat = gyr[j] * g[j];
            sum_dxhat += dxhat;
            sum_dxhat_xhat += dxhat * xhat;
        }
        let m1 = sum_dxhat * inv_d;
        let m2 = sum_dxhat_xhat * inv_d;
        for j in 0..d {
            let xhat = (xr[j] - mean) * inv_std;
            let dxhat = gyr[j] * g[j];
            gxr[j] = inv_std * (dxhat - m1 - xhat * m2);
        }
        let gg = grad_gamma.data_mut();
        let gb = grad_beta.data_mut();
        for j in 0..d {
            let xhat = (xr[j] - mean) * inv_std;
            gg[j] += gyr[j] * xhat;
            gb[j] += gyr[j];
        }
    }
    Ok((LayerNormParams { gamma: grad_gamma, beta: grad_beta }, grad_x))
}

// ---------------------------------------------------------------------------
// silu
// ---------------------------------------------------------------------------

pub fn silu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let y = x.map(silu_scalar);
    y.debug_assert_finite("silu");
    y
}

pub fn silu_backward<T: Scalar>(x: &Tensor<T>, grad_y: &Tensor<T>) -> Tensor<T> {
    debug_assert_eq!(x.shape(), grad_y.shape());
    let mut gx = Tensor::zeros(x.shape());
    for ((g, &xv), &gy) in gx.data_mut().iter_mut().zip(x.data()).zip(grad_y.data()) {
        *g = gy * silu_derivative(xv);
    }
    gx
}

// ---------------------------------------------------------------------------
// mlp
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams<T> {
    pub fc1: LinearParams<T>,
    pub fc2: LinearParams<T>,
}

impl<T: Scalar> Params<T> for MlpParams<T> {
    fn walk<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor<T>)) {
        self.fc1.walk(&join(prefix, "fc1"), f);
        self.fc2.walk(&join(prefix, "fc2"), f);
    }
    fn walk_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut Tensor<T>)) {
        self.fc1.walk_mut(&join(prefix, "fc1"), f);
        self.fc2.walk_mut(&join(prefix, "fc2"), f);
    }
}

impl<T: Scalar> MlpParams<T> {
    /// `d -> hidden -> d` with SiLU in between.
    pub fn init<R: Rng>(rng: &mut R, d: usize, hidden: usize) -> Self {
        Self { fc1: LinearParams::init(rng, d, hidden), fc2: LinearParams::init(rng, hidden, d) }
    }
}

#[derive(Debug, Clone)]
pub struct MlpCache<T> {
    pre: Tensor<T>,
    act: Tensor<T>,
}

/// linear -> SiLU -> linear.
pub fn mlp<T: Scalar>(p: &MlpParams<T>, x: &Tensor<T>) -> Result<(Tensor<T>, MlpCache<T>)> {
    let pre = linear(&p.fc1, x)?;
    let act = silu(&pre);
    let y = linear(&p.fc2, &act)?;
    Ok((y, MlpCache { pre, act }))
}

pub fn mlp_backward<T: Scalar>(
    p: &MlpParams<T>,
    x: &Tensor<T>,
    cache: &MlpCache<T>,
    grad_y: &Tensor<T>,
) -> Result<(MlpParams<T>, Tensor<T>)> {
    let (g_fc2, g_act) = linear_backward(&p.fc2, &cache.act, grad_y)?;
    let g_pre = silu_backward(&cache.pre, &g_act);
    let (g_fc1, g_x) = linear_backward(&p.fc1, x, &g_pre)?;
    Ok((MlpParams { fc1: g_fc1, fc2: g_fc2 }, g_x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn silu_fixed_points() {
        assert_eq!(silu_scalar(0.0f64), 0.0);
        assert!((silu_scalar(100.0f64) - 100.0).abs() < 1e-10);
        assert!(silu_scalar(-100.0f64).abs() < 1e-10);
        assert!((silu_derivative(0.0f64) - 0.5).abs() < 1e-14);
    }

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        assert_eq!(sigmoid(800.0f64), 1.0);
        let tiny = sigmoid(-800.0f64);
        assert!(tiny >= 0.0 && tiny < 1e-300, "got {tiny:e}");
        assert!((sigmoid(0.0f64) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn linear_identity_and_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut p = LinearParams::<f64>::init(&mut rng, 3, 3);
        p.weight = Tensor::from_vec(&[3, 3], vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
        let x = Tensor::uniform(&mut rng, &[2, 4, 3], -1.0, 1.0);
        let y = linear(&p, &x).unwrap();
        assert_eq!(y, x);

        // x = 0 -> y = bias broadcast
        p.bias = Tensor::from_vec(&[3], vec![0.5, -1.0, 2.0]).unwrap();
        let y = linear(&p, &Tensor::zeros(&[2, 2, 3])).unwrap();
        for row in y.data().chunks_exact(3) {
            assert_eq!(row, p.bias.data());
        }
    }

    #[test]
    fn linear_rejects_shape_mismatch() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = LinearParams::<f64>::init(&mut rng, 3, 2);
        let x = Tensor::<f64>::zeros(&[2, 4]);
        assert!(linear(&p, &x).is_err());
    }

    #[test]
    fn dsconv_identity_config_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = DsConvParams::<f64>::identity(4, 3).unwrap();
        let x = Tensor::uniform(&mut rng, &[2, 5, 4], -1.0, 1.0);
        let (y, _) = dsconv1d(&p, &x).unwrap();
        for (a, b) in y.data().iter().zip(x.data()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn dsconv_dc_gain_preserves_constant_interior() {
        // kernel summing to 1 leaves interior positions of a constant input unchanged
        let c = 3;
        let mut p = DsConvParams::<f64>::identity(c, 3).unwrap();
        for ci in 0..c {
            p.depth.set(&[ci, 0], 0.25);
            p.depth.set(&[ci, 1], 0.5);
            p.depth.set(&[ci, 2], 0.25);
        }
        let x = Tensor::filled(&[1, 7, c], 2.0);
        let (y, _) = dsconv1d(&p, &x).unwrap();
        for l in 1..6 {
            for ci in 0..c {
                assert!((y.at(&[0, l, ci]) - 2.0).abs() < 1e-14, "l={l} c={ci}");
            }
        }
        // boundary rows see the zero padding
        assert!((y.at(&[0, 0, 0]) - 1.5).abs() < 1e-14);
    }

    #[test]
    fn dsconv_rejects_even_kernel() {
        assert!(DsConvParams::<f64>::identity(2, 4).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(DsConvParams::<f64>::init(&mut rng, 2, 2).is_err());
    }

    #[test]
    fn layer_norm_constant_row_maps_to_beta() {
        let d = 5;
        let mut p = LayerNormParams::<f64>::init(d);
        p.beta = Tensor::from_vec(&[d], vec![1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        let x = Tensor::filled(&[1, 2, d], 7.3);
        let (y, _) = layer_norm(&p, &x).unwrap();
        for row in y.data().chunks_exact(d) {
            for (a, b) in row.iter().zip(p.beta.data()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn layer_norm_output_is_standardized_before_affine() {
        let d = 64;
        let p = LayerNormParams::<f64>::init(d);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::uniform(&mut rng, &[1, 4, d], -2.0, 5.0);
        let (y, _) = layer_norm(&p, &x).unwrap();
        for row in y.data().chunks_exact(d) {
            let mean: f64 = row.iter().sum::<f64>() / d as f64;
            let var: f64 = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            assert!(mean.abs() < 1e-12, "mean {mean}");
            assert!((var - 1.0).abs() < 1e-3, "var {var}");
        }
    }

    #[test]
    fn mlp_zero_weights_give_bias_or_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut p = MlpParams::<f64>::init(&mut rng, 3, 6);
        p.fc1.weight.fill(0.0);
        p.fc2.weight.fill(0.0);
        p.fc2.bias = Tensor::from_vec(&[3], vec![0.1, 0.2, 0.3]).unwrap();
        let x = Tensor::uniform(&mut rng, &[2, 2, 3], -1.0, 1.0);
        let (y, _) = mlp(&p, &x).unwrap();
        for row in y.data().chunks_exact(3) {
            assert_eq!(row, p.fc2.bias.data());
        }

        // W2 = 0, b2 = 0 -> y = 0 regardless of x
        p.fc2.bias.fill(0.0);
        let (y, _) = mlp(&p, &x).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }
}
