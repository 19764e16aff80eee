//! Cascaded Kirchhoff Block: norm, dual-branch projection, DSConv + SiLU
//! preprocessing, N serial selective cells per scan direction with dense
//! aggregation, gating, optional MLP, and a residual connection.
//!
//! 2D fields are flattened row-major; each scan direction permutes the
//! flattened sequence, runs its own cascade stages, and un-permutes. The
//! direction outputs are averaged (order fixed) before gating, which keeps
//! the magnitude scale independent of the direction count.

use rand::Rng;

use crate::error::{Error, Result};
use crate::knc::{knc_scan, knc_scan_backward, KncForward, SelectiveKncParams};
use crate::nn::{
    dsconv1d, dsconv1d_backward, layer_norm, layer_norm_backward, linear, linear_backward, mlp,
    mlp_backward, silu, silu_backward, DsConvParams, LayerNormCache, LayerNormParams,
    LinearParams, MlpCache, MlpParams,
};
use crate::params::{join, Params};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// How stage outputs combine into the cascade output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Sum of all N stage outputs.
    DenseSum,
    /// Sum of the final two stage outputs (single output when N = 1).
    LastTwo,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CkbConfig {
    /// Channel width d of the block input/output.
    pub d: usize,
    /// Expansion factor E; the evolution/gate branches run at E*d channels.
    pub expansion: usize,
    /// State size S of each selective cell.
    pub state_size: usize,
    /// Cascade depth N (serial cells per direction).
    pub cascade_depth: usize,
    /// Depthwise conv kernel size (odd).
    pub conv_kernel: usize,
    /// Scan direction count: 1, 2, or 4.
    pub directions: usize,
    /// Apply the MLP integrator after the output projection.
    pub use_mlp: bool,
    pub aggregation: Aggregation,
}

impl CkbConfig {
    pub fn new(d: usize) -> Self {
        Self {
            d,
            expansion: 2,
            state_size: 8,
            cascade_depth: 2,
            conv_kernel: 3,
            directions: 1,
            use_mlp: false,
            aggregation: Aggregation::DenseSum,
        }
    }

    pub fn inner(&self) -> usize {
        self.expansion * self.d
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.expansion == 0 {
            return Err(Error::Config("channel width and expansion must be >= 1".into()));
        }
        if self.cascade_depth == 0 {
            return Err(Error::Config("cascade depth must be >= 1".into()));
        }
        if self.state_size == 0 {
            return Err(Error::Config("state size must be >= 1".into()));
        }
        if self.conv_kernel % 2 == 0 {
            return Err(Error::Config("conv kernel must be odd".into()));
        }
        if !matches!(self.directions, 1 | 2 | 4) {
            return Err(Error::Config(format!("directions must be 1, 2, or 4, got {}", self.directions)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CkbParams<T> {
    pub norm: LayerNormParams<T>,
    pub w_u: LinearParams<T>,
    pub w_g: LinearParams<T>,
    pub conv: DsConvParams<T>,
    /// `[directions][cascade_depth]` independent cell parameters.
    pub stages: Vec<Vec<SelectiveKncParams<T>>>,
    pub out_proj: LinearParams<T>,
    pub mlp: Option<MlpParams<T>>,
}

impl<T: Scalar> Params<T> for CkbParams<T> {
    fn walk<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor<T>)) {
        self.norm.walk(&join(prefix, "norm"), f);
        self.w_u.walk(&join(prefix, "w_u"), f);
        self.w_g.walk(&join(prefix, "w_g"), f);
        self.conv.walk(&join(prefix, "conv"), f);
        for (di, dir) in self.stages.iter().enumerate() {
            for (k, st) in dir.iter().enumerate() {
                st.walk(&join(prefix, &format!("dir{di}.stage{k}")), f);
            }
        }
        self.out_proj.walk(&join(prefix, "out_proj"), f);
        if let Some(m) = &self.mlp {
            m.walk(&join(prefix, "mlp"), f);
        }
    }
    fn walk_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut Tensor<T>)) {
        self.norm.walk_mut(&join(prefix, "norm"), f);
        self.w_u.walk_mut(&join(prefix, "w_u"), f);
        self.w_g.walk_mut(&join(prefix, "w_g"), f);
        self.conv.walk_mut(&join(prefix, "conv"), f);
        for (di, dir) in self.stages.iter_mut().enumerate() {
            for (k, st) in dir.iter_mut().enumerate() {
                st.walk_mut(&join(prefix, &format!("dir{di}.stage{k}")), f);
            }
        }
        self.out_proj.walk_mut(&join(prefix, "out_proj"), f);
        if let Some(m) = &mut self.mlp {
            m.walk_mut(&join(prefix, "mlp"), f);
        }
    }
}

impl<T: Scalar> CkbParams<T> {
    pub fn init<R: Rng>(rng: &mut R, cfg: &CkbConfig) -> Result<Self> {
        cfg.validate()?;
        let inner = cfg.inner();
        let stages = (0..cfg.directions)
            .map(|_| {
                (0..cfg.cascade_depth)
                    .map(|_| SelectiveKncParams::init(rng, inner, cfg.state_size))
                    .collect()
            })
            .collect();
        // gate starts open: SiLU(1.2785) ~ 1, so the cascade branch passes
        // through at full strength and the gate learns to close selectively
        let mut w_g = LinearParams::init(rng, cfg.d, inner);
        w_g.bias.fill(T::from_f64(1.2785));
        Ok(Self {
            norm: LayerNormParams::init(cfg.d),
            w_u: LinearParams::init(rng, cfg.d, inner),
            w_g,
            conv: DsConvParams::init(rng, inner, cfg.conv_kernel)?,
            stages,
            out_proj: LinearParams::init(rng, inner, cfg.d),
            mlp: if cfg.use_mlp { Some(MlpParams::init(rng, cfg.d, inner)) } else { None },
        })
    }

    fn check_config(&self, cfg: &CkbConfig) -> Result<()> {
        cfg.validate()?;
        if self.stages.len() != cfg.directions
            || self.stages.iter().any(|d| d.len() != cfg.cascade_depth)
        {
            return Err(Error::Config(format!(
                "stage grid {}x{:?} does not match directions {} x depth {}",
                self.stages.len(),
                self.stages.first().map(|d| d.len()),
                cfg.directions,
                cfg.cascade_depth
            )));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// traversal orderings
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Traversal {
    RowForward,
    ColForward,
    RowReverse,
    ColReverse,
}

fn traversals(directions: usize) -> &'static [Traversal] {
    match directions {
        1 => &[Traversal::RowForward],
        2 => &[Traversal::RowForward, Traversal::ColForward],
        4 => &[
            Traversal::RowForward,
            Traversal::ColForward,
            Traversal::RowReverse,
            Traversal::ColReverse,
        ],
        _ => unreachable!("validated direction count"),
    }
}

/// `perm[p]` = row-major flat index visited at scan position `p`.
fn traversal_perm(h: usize, w: usize, t: Traversal) -> Vec<usize> {
    let l = h * w;
    match t {
        Traversal::RowForward => (0..l).collect(),
        Traversal::RowReverse => (0..l).rev().collect(),
        Traversal::ColForward => (0..l).map(|p| (p % h) * w + p / h).collect(),
        Traversal::ColReverse => (0..l).rev().map(|p| (p % h) * w + p / h).collect(),
    }
}

fn gather_seq<T: Scalar>(x: &Tensor<T>, perm: &[usize], b: usize, l: usize, c: usize) -> Tensor<T> {
    let mut out = Tensor::zeros(x.shape());
    for bi in 0..b {
        let base = bi * l * c;
        for (p, &src) in perm.iter().enumerate() {
            out.data_mut()[base + p * c..base + (p + 1) * c]
                .copy_from_slice(&x.data()[base + src * c..base + (src + 1) * c]);
        }
    }
    out
}

fn scatter_seq<T: Scalar>(x: &Tensor<T>, perm: &[usize], b: usize, l: usize, c: usize) -> Tensor<T> {
    let mut out = Tensor::zeros(x.shape());
    for bi in 0..b {
        let base = bi * l * c;
        for (p, &dst) in perm.iter().enumerate() {
            out.data_mut()[base + dst * c..base + (dst + 1) * c]
                .copy_from_slice(&x.data()[base + p * c..base + (p + 1) * c]);
        }
    }
    out
}

// ---------------------------------------------------------------------------
// forward / backward
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
struct DirectionRun<T> {
    perm: Vec<usize>,
    u_perm: Tensor<T>,
    stage_fwds: Vec<KncForward<T>>,
}

#[derive(Debug, Clone)]
pub struct CkbCache<T> {
    ln: LayerNormCache<T>,
    xn: Tensor<T>,
    u0: Tensor<T>,
    g0: Tensor<T>,
    conv_mid: Tensor<T>,
    c0: Tensor<T>,
    u: Tensor<T>,
    g: Tensor<T>,
    runs: Vec<DirectionRun<T>>,
    ybar: Tensor<T>,
    gated: Tensor<T>,
    out0: Tensor<T>,
    mlp: Option<MlpCache<T>>,
    h: usize,
    w: usize,
}

/// Run one direction's cascade over an already-permuted input, returning the
/// per-stage forwards and the aggregated output in the permuted layout.
fn run_direction<T: Scalar>(
    stages: &[SelectiveKncParams<T>],
    u_perm: &Tensor<T>,
    aggregation: Aggregation,
) -> Result<(Vec<KncForward<T>>, Tensor<T>)> {
    let n = stages.len();
    let mut fwds: Vec<KncForward<T>> = Vec::with_capacity(n);
    for (k, stage) in stages.iter().enumerate() {
        let input = if k == 0 { u_perm } else { &fwds[k - 1].y };
        fwds.push(knc_scan(stage, input)?);
    }
    let mut agg = Tensor::zeros(u_perm.shape());
    for (k, fwd) in fwds.iter().enumerate() {
        if stage_in_aggregate(aggregation, n, k) {
            agg.add_scaled(&fwd.y, T::one());
        }
    }
    Ok((fwds, agg))
}

fn stage_in_aggregate(agg: Aggregation, n_stages: usize, k: usize) -> bool {
    match agg {
        Aggregation::DenseSum => true,
        Aggregation::LastTwo => k + 2 >= n_stages,
    }
}

fn ckb_core<T: Scalar>(
    p: &CkbParams<T>,
    cfg: &CkbConfig,
    x: &Tensor<T>,
    h: usize,
    w: usize,
) -> Result<(Tensor<T>, CkbCache<T>)> {
    p.check_config(cfg)?;
    let (b, l) = (x.shape()[0], h * w);
    debug_assert_eq!(x.shape(), [b, l, cfg.d]);

    let (xn, ln) = layer_norm(&p.norm, x)?;
    let u0 = linear(&p.w_u, &xn)?;
    let g0 = linear(&p.w_g, &xn)?;
    let (c0, conv_mid) = dsconv1d(&p.conv, &u0)?;
    let u = silu(&c0);
    let g = silu(&g0);

    let inner = cfg.inner();
    let dirs = traversals(cfg.directions);
    let mut runs = Vec::with_capacity(dirs.len());
    let mut ybar = Tensor::zeros(u.shape());
    let inv_dirs = T::one() / T::from_f64(dirs.len() as f64);
    for (di, &tr) in dirs.iter().enumerate() {
        let perm = traversal_perm(h, w, tr);
        let u_perm = gather_seq(&u, &perm, b, l, inner);
        let (stage_fwds, agg) = run_direction(&p.stages[di], &u_perm, cfg.aggregation)?;
        let agg_rm = scatter_seq(&agg, &perm, b, l, inner);
        ybar.add_scaled(&agg_rm, inv_dirs);
        runs.push(DirectionRun { perm, u_perm, stage_fwds });
    }

    let mut gated = Tensor::zeros(ybar.shape());
    for ((o, &a), &gv) in gated.data_mut().iter_mut().zip(ybar.data()).zip(g.data()) {
        *o = a * gv;
    }
    let out0 = linear(&p.out_proj, &gated)?;
    let (out, mlp_cache) = match &p.mlp {
        Some(m) => {
            let (o, c) = mlp(m, &out0)?;
            (o, Some(c))
        }
        None => (out0.clone(), None),
    };

    let mut y = x.clone();
    y.add_scaled(&out, T::one());
    y.debug_assert_finite("ckb_forward");

    Ok((
        y,
        CkbCache { ln, xn, u0, g0, conv_mid, c0, u, g, runs, ybar, gated, out0, mlp: mlp_cache, h, w },
    ))
}

fn ckb_core_backward<T: Scalar>(
    p: &CkbParams<T>,
    cfg: &CkbConfig,
    x: &Tensor<T>,
    cache: &CkbCache<T>,
    grad_y: &Tensor<T>,
) -> Result<(CkbParams<T>, Tensor<T>)> {
    p.check_config(cfg)?;
    let (b, l) = (x.shape()[0], cache.h * cache.w);
    let inner = cfg.inner();
    let mut grads = p.zeros_like();

    // residual: Y = X + out
    let (g_mlp_params, g_out0) = match (&p.mlp, &cache.mlp) {
        (Some(m), Some(mc)) => {
            let (gm, gx) = mlp_backward(m, &cache.out0, mc, grad_y)?;
            (Some(gm), gx)
        }
        _ => (None, grad_y.clone()),
    };
    if let (Some(gm), Some(dst)) = (g_mlp_params, grads.mlp.as_mut()) {
        *dst = gm;
    }

    let (g_out_proj, g_gated) = linear_backward(&p.out_proj, &cache.gated, &g_out0)?;
    grads.out_proj = g_out_proj;

    // gated = ybar . g
    let mut g_ybar = Tensor::zeros(cache.ybar.shape());
    let mut g_gate = Tensor::zeros(cache.g.shape());
    {
        let gyb = g_ybar.data_mut();
        let gg = g_gate.data_mut();
        for i in 0..gyb.len() {
            gyb[i] = g_gated.data()[i] * cache.g.data()[i];
            gg[i] = g_gated.data()[i] * cache.ybar.data()[i];
        }
    }

    // directions were averaged
    let dirs = traversals(cfg.directions);
    let inv_dirs = T::one() / T::from_f64(dirs.len() as f64);
    let mut g_u = Tensor::zeros(cache.u.shape());
    for (di, run) in cache.runs.iter().enumerate() {
        let mut g_agg = gather_seq(&g_ybar, &run.perm, b, l, inner);
        g_agg.scale(inv_dirs);

        let n = run.stage_fwds.len();
        let mut g_out_k = Tensor::zeros(g_agg.shape());
        for k in (0..n).rev() {
            if stage_in_aggregate(cfg.aggregation, n, k) {
                g_out_k.add_scaled(&g_agg, T::one());
            }
            let input = if k == 0 { &run.u_perm } else { &run.stage_fwds[k - 1].y };
            let (g_stage, g_input) =
                knc_scan_backward(&p.stages[di][k], input, &run.stage_fwds[k], &g_out_k)?;
            grads.stages[di][k] = g_stage;
            g_out_k = g_input;
        }
        // g_out_k now holds dL/du in the permuted layout
        let g_u_dir = scatter_seq(&g_out_k, &run.perm, b, l, inner);
        g_u.add_scaled(&g_u_dir, T::one());
    }

    // evolution branch preprocessing
    let g_c0 = silu_backward(&cache.c0, &g_u);
    let (g_conv, g_u0) = dsconv1d_backward(&p.conv, &cache.u0, &cache.conv_mid, &g_c0)?;
    grads.conv = g_conv;
    let g_g0 = silu_backward(&cache.g0, &g_gate);

    let (g_wu, g_xn_u) = linear_backward(&p.w_u, &cache.xn, &g_u0)?;
    let (g_wg, g_xn_g) = linear_backward(&p.w_g, &cache.xn, &g_g0)?;
    grads.w_u = g_wu;
    grads.w_g = g_wg;
    let mut g_xn = g_xn_u;
    g_xn.add_scaled(&g_xn_g, T::one());

    let (g_norm, mut g_x) = layer_norm_backward(&p.norm, x, &cache.ln, &g_xn)?;
    grads.norm = g_norm;
    g_x.add_scaled(grad_y, T::one());

    Ok((grads, g_x))
}

/// Block forward over a sequence `[B, L, d]` (treated as a 1 x L field).
pub fn ckb_forward<T: Scalar>(
    p: &CkbParams<T>,
    cfg: &CkbConfig,
    x: &Tensor<T>,
) -> Result<(Tensor<T>, CkbCache<T>)> {
    match x.shape() {
        [_, l, d] if *d == cfg.d => ckb_core(p, cfg, x, 1, *l),
        shape => Err(Error::Shape(format!("ckb_forward expects [B, L, {}], got {shape:?}", cfg.d))),
    }
}

pub fn ckb_backward<T: Scalar>(
    p: &CkbParams<T>,
    cfg: &CkbConfig,
    x: &Tensor<T>,
    cache: &CkbCache<T>,
    grad_y: &Tensor<T>,
) -> Result<(CkbParams<T>, Tensor<T>)> {
    ckb_core_backward(p, cfg, x, cache, grad_y)
}

/// Block forward over a field `[B, H, W, d]`: flatten row-major, scan along
/// the configured direction set, and restore the field shape.
pub fn directional_scan_2d<T: Scalar>(
    p: &CkbParams<T>,
    cfg: &CkbConfig,
    field: &Tensor<T>,
) -> Result<(Tensor<T>, CkbCache<T>)> {
    let (b, h, w) = match field.shape() {
        [b, h, w, d] if *d == cfg.d => (*b, *h, *w),
        shape => {
            return Err(Error::Shape(format!(
                "directional_scan_2d expects [B, H, W, {}], got {shape:?}",
                cfg.d
            )))
        }
    };
    let flat = field.clone().with_shape(&[b, h * w, cfg.d])?;
    let (y, cache) = ckb_core(p, cfg, &flat, h, w)?;
    Ok((y.with_shape(&[b, h, w, cfg.d])?, cache))
}

pub fn directional_scan_2d_backward<T: Scalar>(
    p: &CkbParams<T>,
    cfg: &CkbConfig,
    field: &Tensor<T>,
    cache: &CkbCache<T>,
    grad_y: &Tensor<T>,
) -> Result<(CkbParams<T>, Tensor<T>)> {
    let (b, h, w) = (field.shape()[0], cache.h, cache.w);
    let flat_x = field.clone().with_shape(&[b, h * w, cfg.d])?;
    let flat_g = grad_y.clone().with_shape(&[b, h * w, cfg.d])?;
    let (grads, gx) = ckb_core_backward(p, cfg, &flat_x, cache, &flat_g)?;
    Ok((grads, gx.with_shape(&[b, h, w, cfg.d])?))
}
