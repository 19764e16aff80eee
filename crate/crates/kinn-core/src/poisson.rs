//! Poisson operator-learning benchmark: truncated sine-series sources, exact
//! spectral solutions, grid sampling, normalization, and splits.
//!
//! The source is `f(x,y) = (pi/K^2) sum_{i,j=1..K} a_ij (i^2+j^2)^{-r}
//! sin(pi i x) sin(pi j y)` with `r = -0.5` and `a_ij ~ U[-1, 1]`. Because
//! `-lap sin(pi i x) sin(pi j y) = pi^2 (i^2+j^2) sin sin`, the solution of
//! `-lap u = f, u|bd = 0` is available exactly in the same basis; the
//! five-point Laplacian residual is therefore pure O(h^2) discretization
//! error, which is what the convergence oracle checks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoissonConfig {
    /// Series truncation for train/val/test_id.
    pub k: usize,
    /// Truncation for the out-of-distribution test split.
    pub k_ood: usize,
    /// Spectral exponent; the benchmark uses -0.5 (amplifying high modes).
    pub r: f64,
    /// Grid points per side, boundaries included.
    pub grid: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test_id: usize,
    pub n_test_ood: usize,
    pub seed: u64,
}

impl PoissonConfig {
    /// Full-scale protocol: K=16 (OOD 20), 64x64 grid, 1024/128/256/256.
    pub fn paper() -> Self {
        Self {
            k: 16,
            k_ood: 20,
            r: -0.5,
            grid: 64,
            n_train: 1024,
            n_val: 128,
            n_test_id: 256,
            n_test_ood: 256,
            seed: 0,
        }
    }

    /// Small configuration for CPU-budget runs: 32x32 grid, K=8 (OOD 10),
    /// 128/32/32/32.
    pub fn desk(seed: u64) -> Self {
        Self {
            k: 8,
            k_ood: 10,
            r: -0.5,
            grid: 32,
            n_train: 128,
            n_val: 32,
            n_test_id: 32,
            n_test_ood: 32,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 1 || self.k_ood < 1 {
            return Err(Error::Config("series truncation must be >= 1".into()));
        }
        if self.grid < 4 {
            return Err(Error::Config("grid must have at least 4 points per side".into()));
        }
        if self.n_train < 1 || self.n_val < 1 || self.n_test_id < 1 || self.n_test_ood < 1 {
            return Err(Error::Config("every split needs at least one sample".into()));
        }
        Ok(())
    }
}

/// One paired sample: source field, exact solution field, raw coefficients.
#[derive(Debug, Clone)]
pub struct FieldSample {
    pub f: Tensor<f64>,
    pub u: Tensor<f64>,
    pub coeffs: Tensor<f64>,
}

/// Min-max constants computed on the training split only.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub min_f: f64,
    pub max_f: f64,
    pub min_u: f64,
    pub max_u: f64,
}

impl NormStats {
    pub fn normalize_f(&self, x: f64) -> f64 {
        (x - self.min_f) / (self.max_f - self.min_f)
    }
    pub fn normalize_u(&self, x: f64) -> f64 {
        (x - self.min_u) / (self.max_u - self.min_u)
    }
    pub fn denormalize_f(&self, x: f64) -> f64 {
        self.min_f + x * (self.max_f - self.min_f)
    }
    pub fn denormalize_u(&self, x: f64) -> f64 {
        self.min_u + x * (self.max_u - self.min_u)
    }

    /// Denormalize a whole tensor of solution fields.
    pub fn denormalize_u_tensor<T: Scalar>(&self, x: &Tensor<T>) -> Tensor<T> {
        let lo = T::from_f64(self.min_u);
        let span = T::from_f64(self.max_u - self.min_u);
        x.map(|v| lo + v * span)
    }
}

/// Deterministic per-purpose RNG stream; sample index i of each split gets
/// its own stream so generation order and worker count cannot matter.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub mod streams {
    pub const TRAIN: u64 = 0x0100_0000;
    pub const VAL: u64 = 0x0200_0000;
    pub const TEST_ID: u64 = 0x0300_0000;
    pub const TEST_OOD: u64 = 0x0400_0000;
    pub const INIT: u64 = 0x0500_0000;
    pub const SHUFFLE: u64 = 0x0600_0000;
    pub const SEQUENCE: u64 = 0x0700_0000;
    pub const PROBE: u64 = 0x0800_0000;
}

/// i.i.d. uniform coefficients on [-1, 1], drawn in fixed row-major order.
pub fn sample_coeffs(k: usize, rng: &mut impl Rng) -> Tensor<f64> {
    let data = (0..k * k).map(|_| 2.0 * rng.gen::<f64>() - 1.0).collect();
    Tensor::from_vec(&[k, k], data).expect("k*k coefficients")
}

/// `sin(pi (i+1) x_m)` table, `[k, n]`, with the mathematically exact zeros
/// at both boundaries written as exact zeros.
fn sine_table(k: usize, n: usize) -> Tensor<f64> {
    let mut t = Tensor::zeros(&[k, n]);
    for i in 0..k {
        for m in 0..n {
            let x = m as f64 / (n - 1) as f64;
            let v = if m == 0 || m == n - 1 {
                0.0
            } else {
                (std::f64::consts::PI * (i + 1) as f64 * x).sin()
            };
            t.set(&[i, m], v);
        }
    }
    t
}

/// Spectral weight `(pi/K^2) * (i^2+j^2)^{-r}` applied to raw coefficients.
fn source_coeffs(a: &Tensor<f64>, r: f64) -> Tensor<f64> {
    let k = a.shape()[0];
    let scale = std::f64::consts::PI / (k * k) as f64;
    let mut c = Tensor::zeros(&[k, k]);
    for i in 0..k {
        for j in 0..k {
            let freq = ((i + 1) * (i + 1) + (j + 1) * (j + 1)) as f64;
            c.set(&[i, j], scale * a.at(&[i, j]) * freq.powf(-r));
        }
    }
    c
}

fn eval_series(c: &Tensor<f64>, n: usize) -> Tensor<f64> {
    let k = c.shape()[0];
    let table = sine_table(k, n);
    // field = S^T (c S): [n,k][k,k][k,n]
    let mut tmp = Tensor::zeros(&[k, n]);
    f64::gemm(k, k, n, 1.0, c.data(), table.data(), 0.0, tmp.data_mut());
    let mut field = Tensor::zeros(&[n, n]);
    f64::gemm_strided(
        n, k, n, 1.0,
        table.data(), 1, n as isize,
        tmp.data(), n as isize, 1,
        0.0, field.data_mut(),
    );
    field
}

/// Evaluate the truncated sine-series source on an `n x n` grid,
/// `x_m = m/(n-1)` with boundaries included.
pub fn eval_source(a: &Tensor<f64>, r: f64, n: usize) -> Tensor<f64> {
    eval_series(&source_coeffs(a, r), n)
}

/// Exact solution of `-lap u = f, u|bd = 0`: each source mode divides by
/// `pi^2 (i^2 + j^2)`.
pub fn solve_poisson_spectral(a: &Tensor<f64>, r: f64, n: usize) -> Tensor<f64> {
    let mut c = source_coeffs(a, r);
    let k = c.shape()[0];
    for i in 0..k {
        for j in 0..k {
            let lap = std::f64::consts::PI.powi(2)
                * ((i + 1) * (i + 1) + (j + 1) * (j + 1)) as f64;
            let v = c.at(&[i, j]) / lap;
            c.set(&[i, j], v);
        }
    }
    eval_series(&c, n)
}

pub fn generate_sample(cfg: &PoissonConfig, k: usize, rng: &mut impl Rng) -> FieldSample {
    let coeffs = sample_coeffs(k, rng);
    let f = eval_source(&coeffs, cfg.r, cfg.grid);
    let u = solve_poisson_spectral(&coeffs, cfg.r, cfg.grid);
    FieldSample { f, u, coeffs }
}

/// Max interior residual of the five-point scheme: `|-lap_h u - f|`,
/// `h = 1/(n-1)`. Second order in h for smooth fields.
pub fn fd_laplacian_residual(f: &Tensor<f64>, u: &Tensor<f64>, n: usize) -> f64 {
    debug_assert_eq!(f.shape(), &[n, n]);
    debug_assert_eq!(u.shape(), &[n, n]);
    let h = 1.0 / (n - 1) as f64;
    let inv_h2 = 1.0 / (h * h);
    let mut worst = 0.0f64;
    for i in 1..n - 1 {
        for j in 1..n - 1 {
            let lap = (u.at(&[i + 1, j]) + u.at(&[i - 1, j]) + u.at(&[i, j + 1])
                + u.at(&[i, j - 1])
                - 4.0 * u.at(&[i, j]))
                * inv_h2;
            worst = worst.max((-lap - f.at(&[i, j])).abs());
        }
    }
    worst
}

/// One split of paired fields, stored stacked: `[count, n, n]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitData {
    pub f: Tensor<f64>,
    pub u: Tensor<f64>,
}

impl SplitData {
    pub fn count(&self) -> usize {
        self.f.shape()[0]
    }
}

#[derive(Debug, Clone)]
pub struct PoissonDataset {
    pub train: SplitData,
    pub val: SplitData,
    pub test_id: SplitData,
    pub test_ood: SplitData,
    pub stats: NormStats,
}

fn generate_split(cfg: &PoissonConfig, k: usize, count: usize, stream_base: u64) -> SplitData {
    let n = cfg.grid;
    let samples: Vec<FieldSample> = (0..count)
        .into_par_iter()
        .map(|idx| {
            let mut rng = stream_rng(cfg.seed, stream_base + idx as u64);
            generate_sample(cfg, k, &mut rng)
        })
        .collect();
    let mut f = Tensor::zeros(&[count, n, n]);
    let mut u = Tensor::zeros(&[count, n, n]);
    for (idx, s) in samples.iter().enumerate() {
        f.data_mut()[idx * n * n..(idx + 1) * n * n].copy_from_slice(s.f.data());
        u.data_mut()[idx * n * n..(idx + 1) * n * n].copy_from_slice(s.u.data());
    }
    SplitData { f, u }
}

fn min_max(x: &[f64]) -> (f64, f64) {
    x.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
}

/// Generate all four splits, compute normalization constants on the training
/// split only, and normalize every split with those same constants.
pub fn generate_dataset(cfg: &PoissonConfig) -> Result<PoissonDataset> {
    cfg.validate()?;
    let mut train = generate_split(cfg, cfg.k, cfg.n_train, streams::TRAIN);
    let mut val = generate_split(cfg, cfg.k, cfg.n_val, streams::VAL);
    let mut test_id = generate_split(cfg, cfg.k, cfg.n_test_id, streams::TEST_ID);
    let mut test_ood = generate_split(cfg, cfg.k_ood, cfg.n_test_ood, streams::TEST_OOD);

    let (min_f, max_f) = min_max(train.f.data());
    let (min_u, max_u) = min_max(train.u.data());
    if !(max_f > min_f) || !(max_u > min_u) {
        return Err(Error::DegenerateData(format!(
            "training split extrema collapsed: f [{min_f}, {max_f}], u [{min_u}, {max_u}]"
        )));
    }
    let stats = NormStats { min_f, max_f, min_u, max_u };

    for split in [&mut train, &mut val, &mut test_id, &mut test_ood] {
        for v in split.f.data_mut() {
            *v = stats.normalize_f(*v);
        }
        for v in split.u.data_mut() {
            *v = stats.normalize_u(*v);
        }
    }
    Ok(PoissonDataset { train, val, test_id, test_ood, stats })
}
