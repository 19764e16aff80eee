//! Real polynomials (ascending coefficients) and rational transfer functions.
//!
//! Arithmetic runs in the ambient scalar type; cascade orders stay small
//! (n <= 6 in every suite) so conditioning is benign, and integer-valued
//! inputs convolve exactly.

use num_complex::Complex;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct Polynomial<T> {
    coeffs: Vec<T>,
}

impl<T: Scalar> Polynomial<T> {
    /// Build from ascending coefficients, trimming trailing zeros. The zero
    /// polynomial is kept as a single zero coefficient.
    pub fn new(mut coeffs: Vec<T>) -> Self {
        while coeffs.len() > 1 && coeffs.last() == Some(&T::zero()) {
            coeffs.pop();
        }
        if coeffs.is_empty() {
            coeffs.push(T::zero());
        }
        Self { coeffs }
    }

    pub fn constant(c: T) -> Self {
        Self::new(vec![c])
    }

    pub fn zero() -> Self {
        Self::new(vec![T::zero()])
    }

    pub fn coeffs(&self) -> &[T] {
        &self.coeffs
    }

    /// Degree after trailing-zero trim; the zero polynomial reports 0.
    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.len() == 1 && self.coeffs[0] == T::zero()
    }

    /// Coefficient-list convolution.
    pub fn mul(&self, other: &Self) -> Self {
        if self.is_zero() || other.is_zero() {
            return Self::zero();
        }
        let mut out = vec![T::zero(); self.coeffs.len() + other.coeffs.len() - 1];
        for (i, &a) in self.coeffs.iter().enumerate() {
            for (j, &b) in other.coeffs.iter().enumerate() {
                out[i + j] += a * b;
            }
        }
        Self::new(out)
    }

    pub fn add(&self, other: &Self) -> Self {
        let n = self.coeffs.len().max(other.coeffs.len());
        let mut out = vec![T::zero(); n];
        for (i, o) in out.iter_mut().enumerate() {
            if i < self.coeffs.len() {
                *o += self.coeffs[i];
            }
            if i < other.coeffs.len() {
                *o += other.coeffs[i];
            }
        }
        Self::new(out)
    }

    pub fn scale(&self, k: T) -> Self {
        Self::new(self.coeffs.iter().map(|&c| c * k).collect())
    }

    /// Horner evaluation at a real point.
    pub fn eval(&self, s: T) -> T {
        self.coeffs.iter().rev().fold(T::zero(), |acc, &c| acc * s + c)
    }

    /// Horner evaluation at a complex point (frequency response at s = i omega).
    pub fn eval_complex(&self, s: Complex<T>) -> Complex<T> {
        self.coeffs
            .iter()
            .rev()
            .fold(Complex::new(T::zero(), T::zero()), |acc, &c| acc * s + Complex::new(c, T::zero()))
    }

    /// All complex roots via Durand-Kerner iteration (f64 internally).
    /// Intended for the small stable-pole checks, not production root finding.
    pub fn roots(&self) -> Vec<Complex<f64>> {
        let coeffs: Vec<f64> = self.coeffs.iter().map(|c| c.as_f64()).collect();
        durand_kerner(&coeffs)
    }
}

fn durand_kerner(coeffs: &[f64]) -> Vec<Complex<f64>> {
    let n = coeffs.len() - 1;
    if n == 0 {
        return Vec::new();
    }
    let lead = coeffs[n];
    assert!(lead != 0.0, "leading coefficient must be nonzero");
    let monic: Vec<f64> = coeffs.iter().map(|c| c / lead).collect();
    let eval = |z: Complex<f64>| -> Complex<f64> {
        monic.iter().rev().fold(Complex::new(0.0, 0.0), |acc, &c| acc * z + c)
    };

    let seed = Complex::new(0.4, 0.9);
    let mut z: Vec<Complex<f64>> = (0..n).map(|k| seed.powu(k as u32 + 1)).collect();
    for _ in 0..500 {
        let mut max_step = 0.0f64;
        for k in 0..n {
            let mut denom = Complex::new(1.0, 0.0);
            for j in 0..n {
                if j != k {
                    denom *= z[k] - z[j];
                }
            }
            let step = eval(z[k]) / denom;
            z[k] -= step;
            max_step = max_step.max(step.norm());
        }
        if max_step < 1e-13 {
            break;
        }
    }
    z
}

/// Rational transfer function `num(s) / den(s)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RationalTF<T> {
    pub num: Polynomial<T>,
    pub den: Polynomial<T>,
}

impl<T: Scalar> RationalTF<T> {
    pub fn new(num: Polynomial<T>, den: Polynomial<T>) -> Result<Self> {
        if den.is_zero() {
            return Err(Error::InvalidArgument("transfer function denominator is zero".into()));
        }
        Ok(Self { num, den })
    }

    pub fn eval_complex(&self, s: Complex<T>) -> Complex<T> {
        self.num.eval_complex(s) / self.den.eval_complex(s)
    }

    /// Gain at s = 0.
    pub fn dc_gain(&self) -> T {
        self.num.eval(T::zero()) / self.den.eval(T::zero())
    }

    /// Denominator roots (system poles).
    pub fn poles(&self) -> Vec<Complex<f64>> {
        self.den.roots()
    }

    /// True when every pole has strictly negative real part.
    pub fn is_stable(&self) -> bool {
        self.poles().iter().all(|p| p.re < 0.0)
    }
}
