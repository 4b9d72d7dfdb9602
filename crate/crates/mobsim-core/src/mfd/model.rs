//! Exponential production models at the vehicle and passenger level.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MfdKind {
    #[serde(rename = "vmfd")]
    Vehicle,
    #[serde(rename = "pmfd")]
    Passenger,
}

impl std::str::FromStr for MfdKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vmfd" => Ok(MfdKind::Vehicle),
            "pmfd" => Ok(MfdKind::Passenger),
            other => Err(Error::domain(format!("unknown model kind `{other}`"))),
        }
    }
}

/// Coefficients of `P = a * A * exp(b A^3 + c A^2 + d A + r gamma [+ rho A_P])`.
/// `rho` is unused at the vehicle level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MfdParams {
    pub kind: MfdKind,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub r: f64,
    #[serde(default)]
    pub rho: f64,
}

impl MfdParams {
    pub fn vehicle(a: f64, b: f64, c: f64, d: f64, r: f64) -> Self {
        MfdParams { kind: MfdKind::Vehicle, a, b, c, d, r, rho: 0.0 }
    }

    pub fn passenger(a: f64, b: f64, c: f64, d: f64, r: f64, rho: f64) -> Self {
        MfdParams { kind: MfdKind::Passenger, a, b, c, d, r, rho }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.a > 0.0) {
            return Err(Error::domain("coefficient a must be positive"));
        }
        Ok(())
    }
}

const MAX_EXPONENT: f64 = 700.0;

fn eval(params: &MfdParams, a_v: f64, gamma: f64, a_p: f64) -> Result<f64> {
    if a_v < 0.0 {
        return Err(Error::domain("accumulation must be nonnegative"));
    }
    let exponent = params.b * a_v.powi(3)
        + params.c * a_v.powi(2)
        + params.d * a_v
        + params.r * gamma
        + params.rho * a_p;
    if exponent > MAX_EXPONENT {
        return Err(Error::ExponentOverflow { exponent, saturated: f64::MAX });
    }
    Ok(params.a * a_v * exponent.exp())
}

/// Vehicle production `P_V(A_V, gamma)`.
pub fn eval_vmfd(params: &MfdParams, a_v: f64, gamma: f64) -> Result<f64> {
    eval(params, a_v, gamma, 0.0)
}

/// Passenger production `P_P(A_V, gamma, A_P)`; reduces to the vehicle
/// model when `rho` or `A_P` is zero.
pub fn eval_pmfd(params: &MfdParams, a_v: f64, gamma: f64, a_p: f64) -> Result<f64> {
    if a_p < 0.0 {
        return Err(Error::domain("passenger accumulation must be nonnegative"));
    }
    eval(params, a_v, gamma, a_p)
}

/// Analytic `dP/dA` at fixed heterogeneity:
/// `a e^E (1 + A (3bA^2 + 2cA + d))`.
pub fn vmfd_slope(params: &MfdParams, a_v: f64, gamma: f64) -> f64 {
    let exponent = params.b * a_v.powi(3)
        + params.c * a_v.powi(2)
        + params.d * a_v
        + params.r * gamma;
    let poly = 3.0 * params.b * a_v.powi(2) + 2.0 * params.c * a_v + params.d;
    params.a * exponent.exp() * (1.0 + a_v * poly)
}
