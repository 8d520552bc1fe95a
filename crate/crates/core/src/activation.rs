use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, NlraError};
use crate::quadrature::gauss_hermite;

/// Built-in elementwise activations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Activation {
    Relu,
    Identity,
    LeakyRelu { alpha: f64 },
    Swish { beta: f64 },
}

impl Activation {
    pub fn eval(&self, t: f64) -> f64 {
        match *self {
            Activation::Relu => t.max(0.0),
            Activation::Identity => t,
            Activation::LeakyRelu { alpha } => {
                if t > 0.0 {
                    t
                } else {
                    alpha * t
                }
            }
            Activation::Swish { beta } => t * sigmoid(beta * t),
        }
    }

    /// Derivative, with the subgradient 0 (ReLU) / alpha (leaky) at the kink.
    pub fn deriv(&self, t: f64) -> f64 {
        match *self {
            Activation::Relu => {
                if t > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
            Activation::LeakyRelu { alpha } => {
                if t > 0.0 {
                    1.0
                } else {
                    alpha
                }
            }
            Activation::Swish { beta } => {
                let s = sigmoid(beta * t);
                s + beta * t * s * (1.0 - s)
            }
        }
    }

    /// First Hermite coefficient `E[z * sigma(z)]`, `z ~ N(0, 1)`.
    pub fn c1(&self) -> f64 {
        match *self {
            Activation::Relu => 0.5,
            Activation::Identity => 1.0,
            Activation::LeakyRelu { alpha } => 0.5 * (1.0 + alpha),
            Activation::Swish { .. } => gauss_hermite(96).integrate(|z| z * self.eval(z)),
        }
    }

    pub fn is_easily_invertible(&self) -> bool {
        self.c1() > 0.0
    }

    /// Piecewise linear with a single kink at 0 (and positively homogeneous).
    pub fn is_piecewise_linear(&self) -> bool {
        matches!(self, Activation::Relu | Activation::LeakyRelu { .. })
    }

    pub fn name(&self) -> String {
        self.to_string()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Activation::Relu => write!(f, "relu"),
            Activation::Identity => write!(f, "identity"),
            Activation::LeakyRelu { alpha } => write!(f, "leaky:{alpha}"),
            Activation::Swish { beta } => write!(f, "swish:{beta}"),
        }
    }
}

impl FromStr for Activation {
    type Err = NlraError;

    /// Parses `relu`, `identity`, `leaky:A` or `swish:B`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let param = |p: &str| -> Result<f64, NlraError> {
            p.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| invalid(format!("bad activation parameter `{p}`")))
        };
        match s.split_once(':') {
            None if s == "relu" => Ok(Activation::Relu),
            None if s == "identity" => Ok(Activation::Identity),
            Some(("leaky", p)) => Ok(Activation::LeakyRelu { alpha: param(p)? }),
            Some(("swish", p)) => Ok(Activation::Swish { beta: param(p)? }),
            _ => Err(invalid(format!(
                "unknown activation `{s}` (expected relu, identity, leaky:A or swish:B)"
            ))),
        }
    }
}
