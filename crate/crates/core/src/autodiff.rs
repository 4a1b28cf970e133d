//! Forward-mode automatic differentiation with dual scalars.
//!
//! Exactly one parameter (the reduced scattering coefficient) is ever
//! differentiated, so a value/derivative pair pushed through the forward
//! model is exact and allocation-free; no tape is needed. Seeding the
//! parameter with derivative 1 and every constant with 0 yields the exact
//! directional derivative.

use crate::diffusion::SceneGeometry;
use crate::error::{Error, Result};
use crate::forward::{predict_dual, ForwardScene};
use crate::tensor::{Image2D, Volume3D};
use std::ops::{Add, Div, Mul, Neg, Sub};

/// A value together with its derivative with respect to the seeded parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dual {
    pub value: f64,
    pub deriv: f64,
}

impl Dual {
    pub fn new(value: f64, deriv: f64) -> Self {
        Dual { value, deriv }
    }

    /// A constant: derivative seed 0.
    pub fn constant(value: f64) -> Self {
        Dual { value, deriv: 0.0 }
    }

    /// The differentiation variable: derivative seed 1.
    pub fn variable(value: f64) -> Self {
        Dual { value, deriv: 1.0 }
    }

    pub fn exp(self) -> Self {
        let e = self.value.exp();
        Dual { value: e, deriv: e * self.deriv }
    }

    pub fn ln(self) -> Self {
        Dual { value: self.value.ln(), deriv: self.deriv / self.value }
    }

    pub fn sqrt(self) -> Self {
        let s = self.value.sqrt();
        Dual { value: s, deriv: self.deriv / (2.0 * s) }
    }

    pub fn powf(self, p: f64) -> Self {
        Dual {
            value: self.value.powf(p),
            deriv: p * self.value.powf(p - 1.0) * self.deriv,
        }
    }

    pub fn powi(self, n: i32) -> Self {
        Dual {
            value: self.value.powi(n),
            deriv: f64::from(n) * self.value.powi(n - 1) * self.deriv,
        }
    }

    pub fn recip(self) -> Self {
        Dual {
            value: 1.0 / self.value,
            deriv: -self.deriv / (self.value * self.value),
        }
    }
}

impl Add for Dual {
    type Output = Dual;
    fn add(self, rhs: Dual) -> Dual {
        Dual { value: self.value + rhs.value, deriv: self.deriv + rhs.deriv }
    }
}

impl Sub for Dual {
    type Output = Dual;
    fn sub(self, rhs: Dual) -> Dual {
        Dual { value: self.value - rhs.value, deriv: self.deriv - rhs.deriv }
    }
}

impl Mul for Dual {
    type Output = Dual;
    fn mul(self, rhs: Dual) -> Dual {
        Dual {
            value: self.value * rhs.value,
            deriv: self.value * rhs.deriv + self.deriv * rhs.value,
        }
    }
}

impl Div for Dual {
    type Output = Dual;
    fn div(self, rhs: Dual) -> Dual {
        Dual {
            value: self.value / rhs.value,
            deriv: (self.deriv * rhs.value - self.value * rhs.deriv)
                / (rhs.value * rhs.value),
        }
    }
}

impl Neg for Dual {
    type Output = Dual;
    fn neg(self) -> Dual {
        Dual { value: -self.value, deriv: -self.deriv }
    }
}

/// Number type the analytic kernels are generic over. The `f64` and `Dual`
/// instantiations run the identical expression tree, so the value component
/// of a dual evaluation is bit-comparable to the plain-real evaluation.
pub trait Scalar:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    fn from_f64(x: f64) -> Self;
    fn value(self) -> f64;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;
    fn powf(self, p: f64) -> Self;
}

impl Scalar for f64 {
    fn from_f64(x: f64) -> Self {
        x
    }
    fn value(self) -> f64 {
        self
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn powf(self, p: f64) -> Self {
        f64::powf(self, p)
    }
}

impl Scalar for Dual {
    fn from_f64(x: f64) -> Self {
        Dual::constant(x)
    }
    fn value(self) -> f64 {
        self.value
    }
    fn exp(self) -> Self {
        Dual::exp(self)
    }
    fn ln(self) -> Self {
        Dual::ln(self)
    }
    fn sqrt(self) -> Self {
        Dual::sqrt(self)
    }
    fn powf(self, p: f64) -> Self {
        Dual::powf(self, p)
    }
}

/// RMSProp optimizer state for the scalar scattering parameter.
#[derive(Debug, Clone)]
pub struct RmsProp {
    pub step_size: f64,
    pub decay: f64,
    pub epsilon: f64,
    pub accumulator: f64,
}

impl RmsProp {
    pub fn new(step_size: f64, decay: f64, epsilon: f64) -> Self {
        RmsProp { step_size, decay, epsilon, accumulator: 0.0 }
    }

    /// accumulator <- decay*accumulator + (1-decay)*grad^2;
    /// param <- param - step_size*grad/(sqrt(accumulator) + epsilon)
    pub fn step(&mut self, param: f64, grad: f64) -> f64 {
        self.accumulator = self.decay * self.accumulator + (1.0 - self.decay) * grad * grad;
        param - self.step_size * grad / (self.accumulator.sqrt() + self.epsilon)
    }
}

/// Everything held fixed while the scattering coefficient is optimized.
#[derive(Debug, Clone)]
pub struct LossInputs {
    pub mu_a: f64,
    pub g: f64,
    pub refractive_index: f64,
    pub geometry: SceneGeometry,
    pub illumination: Volume3D,
    pub mask: Image2D,
    pub measurement: Volume3D,
}

/// Data-fidelity loss ||m - forward(mu_s')||^2 over unit-normalized shapes,
/// together with its exact derivative with respect to mu_s'.
///
/// Both the measurement and the prediction are normalized to unit l2 norm
/// before comparison (the linear system of the reconstruction stage uses the
/// same normalized vectorization), so the fit matches spatio-temporal shape,
/// not absolute photon counts.
pub fn loss_and_grad(mu_s_prime: f64, fixed: &LossInputs) -> Result<(f64, f64)> {
    let m_norm = fixed.measurement.l2_norm();
    if m_norm == 0.0 {
        return Err(Error::invalid("measurement is identically zero"));
    }
    let scene = ForwardScene::new(
        fixed.illumination.clone(),
        fixed.geometry.clone(),
        crate::diffusion::OpticalProperties::new(
            fixed.mu_a,
            mu_s_prime,
            fixed.g,
            fixed.refractive_index,
        )?,
        fixed.mask.clone(),
    )?;
    let (value, deriv) = predict_dual(&scene)?;

    let p = value.data();
    let dp = deriv.data();
    let m = fixed.measurement.data();

    let n2: f64 = p.iter().map(|x| x * x).sum();
    let n = n2.sqrt();
    if !(n > 0.0) || !n.is_finite() {
        return Err(Error::Numerical(format!(
            "forward model produced a degenerate prediction at mu_s' = {mu_s_prime}"
        )));
    }

    let dot_mp: f64 = m.iter().zip(p).map(|(a, b)| a * b).sum::<f64>() / m_norm;
    let dot_mdp: f64 = m.iter().zip(dp).map(|(a, b)| a * b).sum::<f64>() / m_norm;
    let dot_pdp: f64 = p.iter().zip(dp).map(|(a, b)| a * b).sum();

    let loss: f64 = m
        .iter()
        .zip(p)
        .map(|(a, b)| {
            let d = a / m_norm - b / n;
            d * d
        })
        .sum();
    // d/dmu of <m_hat, p/||p||>
    let dcos = dot_mdp / n - dot_mp * dot_pdp / (n * n2);
    let grad = -2.0 * dcos;

    if !loss.is_finite() || !grad.is_finite() {
        return Err(Error::Numerical(format!(
            "non-finite loss or gradient at mu_s' = {mu_s_prime}"
        )));
    }
    Ok((loss, grad))
}
