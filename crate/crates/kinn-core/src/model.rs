//! Field-to-field operator model: channel lift, a stack of cascaded
//! Kirchhoff blocks with directional 2D scanning, and a channel projection.
//! Input and output fields share the spatial shape.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::ckb::{
    directional_scan_2d, directional_scan_2d_backward, CkbCache, CkbConfig, CkbParams,
};
use crate::error::{Error, Result};
use crate::nn::{linear, linear_backward, LinearParams};
use crate::params::{join, Params};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

fn default_coords() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorConfig {
    pub in_ch: usize,
    pub out_ch: usize,
    /// Latent channel width d shared by every block.
    pub width: usize,
    /// Append normalized (x, y) grid coordinates to the lift input.
    #[serde(default = "default_coords")]
    pub with_coords: bool,
    pub blocks: Vec<CkbConfig>,
}

impl OperatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.in_ch == 0 || self.out_ch == 0 || self.width == 0 {
            return Err(Error::Config("channel counts must be >= 1".into()));
        }
        if self.blocks.is_empty() {
            return Err(Error::Config("operator needs at least one block".into()));
        }
        for (i, b) in self.blocks.iter().enumerate() {
            b.validate()?;
            if b.d != self.width {
                return Err(Error::Config(format!(
                    "block {i} width {} does not match operator width {}",
                    b.d, self.width
                )));
            }
        }
        Ok(())
    }

    /// Uniform stack: `n_blocks` identical block configs.
    pub fn uniform(in_ch: usize, out_ch: usize, width: usize, n_blocks: usize, block: CkbConfig) -> Self {
        Self { in_ch, out_ch, width, with_coords: true, blocks: vec![block; n_blocks] }
    }

    /// Lift fan-in including the coordinate channels.
    pub fn lift_in(&self) -> usize {
        self.in_ch + if self.with_coords { 2 } else { 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OperatorParams<T> {
    pub lift: LinearParams<T>,
    pub blocks: Vec<CkbParams<T>>,
    pub proj: LinearParams<T>,
}

impl<T: Scalar> Params<T> for OperatorParams<T> {
    fn walk<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor<T>)) {
        self.lift.walk(&join(prefix, "lift"), f);
        for (i, b) in self.blocks.iter().enumerate() {
            b.walk(&join(prefix, &format!("block{i}")), f);
        }
        self.proj.walk(&join(prefix, "proj"), f);
    }
    fn walk_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut Tensor<T>)) {
        self.lift.walk_mut(&join(prefix, "lift"), f);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.walk_mut(&join(prefix, &format!("block{i}")), f);
        }
        self.proj.walk_mut(&join(prefix, "proj"), f);
    }
}

impl<T: Scalar> OperatorParams<T> {
    pub fn init<R: Rng>(rng: &mut R, cfg: &OperatorConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            lift: LinearParams::init(rng, cfg.lift_in(), cfg.width),
            blocks: cfg
                .blocks
                .iter()
                .map(|b| CkbParams::init(rng, b))
                .collect::<Result<Vec<_>>>()?,
            proj: LinearParams::init(rng, cfg.width, cfg.out_ch),
        })
    }
}

#[derive(Debug, Clone)]
pub struct OperatorCache<T> {
    augmented: Tensor<T>,
    lifted: Tensor<T>,
    block_caches: Vec<CkbCache<T>>,
    block_outputs: Vec<Tensor<T>>,
}

/// `[B, H, W, in_ch + 2]` with normalized x (column) and y (row) channels.
fn append_coords<T: Scalar>(field: &Tensor<T>) -> Tensor<T> {
    let (b, h, w, c) = (field.shape()[0], field.shape()[1], field.shape()[2], field.shape()[3]);
    let mut out = Tensor::zeros(&[b, h, w, c + 2]);
    let src = field.data();
    let dst = out.data_mut();
    for bi in 0..b {
        for hi in 0..h {
            let yc = T::from_f64(hi as f64 / (h.max(2) - 1) as f64);
            for wi in 0..w {
                let xc = T::from_f64(wi as f64 / (w.max(2) - 1) as f64);
                let s = ((bi * h + hi) * w + wi) * c;
                let d = ((bi * h + hi) * w + wi) * (c + 2);
                dst[d..d + c].copy_from_slice(&src[s..s + c]);
                dst[d + c] = xc;
                dst[d + c + 1] = yc;
            }
        }
    }
    out
}

/// Forward over a field `[B, H, W, in_ch]` -> `[B, H, W, out_ch]`.
pub fn operator_forward<T: Scalar>(
    p: &OperatorParams<T>,
    cfg: &OperatorConfig,
    field: &Tensor<T>,
) -> Result<(Tensor<T>, OperatorCache<T>)> {
    match field.shape() {
        [_, _, _, c] if *c == cfg.in_ch => {}
        shape => {
            return Err(Error::Shape(format!(
                "operator expects [B, H, W, {}], got {shape:?}",
                cfg.in_ch
            )))
        }
    }
    let augmented = if cfg.with_coords { append_coords(field) } else { field.clone() };
    let lifted = linear(&p.lift, &augmented)?;
    let mut block_caches = Vec::with_capacity(p.blocks.len());
    let mut block_outputs = Vec::with_capacity(p.blocks.len());
    let mut x = lifted.clone();
    for (params, block_cfg) in p.blocks.iter().zip(&cfg.blocks) {
        let (y, cache) = directional_scan_2d(params, block_cfg, &x)?;
        block_caches.push(cache);
        block_outputs.push(y.clone());
        x = y;
    }
    let pred = linear(&p.proj, &x)?;
    Ok((pred, OperatorCache { augmented, lifted, block_caches, block_outputs }))
}

pub fn operator_backward<T: Scalar>(
    p: &OperatorParams<T>,
    cfg: &OperatorConfig,
    field: &Tensor<T>,
    cache: &OperatorCache<T>,
    grad_pred: &Tensor<T>,
) -> Result<(OperatorParams<T>, Tensor<T>)> {
    let n = p.blocks.len();
    let last = if n == 0 { &cache.lifted } else { &cache.block_outputs[n - 1] };
    let (g_proj, mut g) = linear_backward(&p.proj, last, grad_pred)?;

    let mut block_grads: Vec<Option<CkbParams<T>>> = (0..n).map(|_| None).collect();
    for k in (0..n).rev() {
        let input = if k == 0 { &cache.lifted } else { &cache.block_outputs[k - 1] };
        let (g_block, g_in) =
            directional_scan_2d_backward(&p.blocks[k], &cfg.blocks[k], input, &cache.block_caches[k], &g)?;
        block_grads[k] = Some(g_block);
        g = g_in;
    }
    let (g_lift, g_aug) = linear_backward(&p.lift, &cache.augmented, &g)?;
    // strip the coordinate channels from the input gradient
    let g_field = if cfg.with_coords {
        let (b, h, w, c) = (field.shape()[0], field.shape()[1], field.shape()[2], cfg.in_ch);
        let mut out = Tensor::zeros(field.shape());
        for pos in 0..b * h * w {
            out.data_mut()[pos * c..(pos + 1) * c]
                .copy_from_slice(&g_aug.data()[pos * (c + 2)..pos * (c + 2) + c]);
        }
        out
    } else {
        g_aug
    };
    Ok((
        OperatorParams {
            lift: g_lift,
            blocks: block_grads.into_iter().map(|g| g.expect("all blocks visited")).collect(),
            proj: g_proj,
        },
        g_field,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ckb::Aggregation;
    use crate::gradcheck::{fd_gradient_check, probe_like, weighted_sum, FD_EPS};
    use crate::poisson::stream_rng;

    fn tiny_operator() -> OperatorConfig {
        let block = CkbConfig {
            d: 6,
            expansion: 1,
            state_size: 2,
            cascade_depth: 2,
            conv_kernel: 3,
            directions: 2,
            use_mlp: false,
            aggregation: Aggregation::DenseSum,
        };
        OperatorConfig::uniform(1, 1, 6, 2, block)
    }

    #[test]
    fn operator_preserves_spatial_shape() {
        let cfg = tiny_operator();
        let mut rng = stream_rng(40, 0);
        let p = OperatorParams::<f64>::init(&mut rng, &cfg).unwrap();
        let field = Tensor::uniform(&mut rng, &[2, 5, 4, 1], -1.0, 1.0);
        let (pred, _) = operator_forward(&p, &cfg, &field).unwrap();
        assert_eq!(pred.shape(), &[2, 5, 4, 1]);
    }

    #[test]
    fn width_mismatch_rejected() {
        let mut cfg = tiny_operator();
        cfg.blocks[1].d = 4;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn operator_gradient_passes_fd_check() {
        let cfg = tiny_operator();
        let mut rng = stream_rng(41, 0);
        let p = OperatorParams::<f64>::init(&mut rng, &cfg).unwrap();
        let field = Tensor::uniform(&mut rng, &[1, 4, 3, 1], -1.0, 1.0);
        let gy = probe_like(&mut rng, &[1, 4, 3, 1]);
        let (_, cache) = operator_forward(&p, &cfg, &field).unwrap();
        let (grads, g_field) = operator_backward(&p, &cfg, &field, &cache, &gy).unwrap();

        let report = fd_gradient_check(&p, &grads, FD_EPS, |p| {
            weighted_sum(&operator_forward(p, &cfg, &field).unwrap().0, &gy)
        });
        assert!(report.passes_dual(), "params: {report:?}");

        let report = fd_gradient_check(&field, &g_field, FD_EPS, |x| {
            weighted_sum(&operator_forward(&p, &cfg, x).unwrap().0, &gy)
        });
        assert!(report.passes_dual(), "field: {report:?}");
    }
}
