//! Areal count data and the binomial-logit / Poisson-lognormal likelihood layer.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use statrs::function::factorial::ln_factorial;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Likelihood {
    /// `y ~ Bin(n, p)`, `logit(p) = gamma`.
    #[serde(rename = "binlogit")]
    BinomialLogit,
    /// `y ~ Poi(E eta)`, `log(eta) = gamma`.
    #[serde(rename = "poislognorm")]
    PoissonLognormal,
}

impl Likelihood {
    /// Mid-level parameter: the probability `p` or the relative risk `eta`.
    pub fn mid_level(self, gamma: f64) -> f64 {
        match self {
            Likelihood::BinomialLogit => logistic(gamma),
            Likelihood::PoissonLognormal => gamma.exp(),
        }
    }
}

impl FromStr for Likelihood {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "binlogit" => Ok(Likelihood::BinomialLogit),
            "poislognorm" => Ok(Likelihood::PoissonLognormal),
            other => Err(Error::Validation(format!(
                "unknown likelihood '{other}' (expected binlogit or poislognorm)"
            ))),
        }
    }
}

impl fmt::Display for Likelihood {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Likelihood::BinomialLogit => "binlogit",
            Likelihood::PoissonLognormal => "poislognorm",
        })
    }
}

pub(crate) fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn ln_choose(n: f64, k: f64) -> f64 {
    ln_gamma(n + 1.0) - ln_gamma(k + 1.0) - ln_gamma(n - k + 1.0)
}

/// Log-likelihood of one observation at linear predictor `gamma`.
pub fn loglik_element(y: u64, exposure: f64, gamma: f64, tag: Likelihood) -> f64 {
    let yf = y as f64;
    match tag {
        Likelihood::BinomialLogit => {
            if exposure == 0.0 {
                return 0.0;
            }
            ln_choose(exposure, yf) + yf * gamma - exposure * softplus(gamma)
        }
        Likelihood::PoissonLognormal => {
            let log_e = exposure.ln();
            -(log_e + gamma).exp() + yf * (log_e + gamma) - ln_factorial(y)
        }
    }
}

/// Log-likelihood of one observation at mid-level parameter `p` or `eta`.
pub fn loglik_mid_level(y: u64, exposure: f64, mid: f64, tag: Likelihood) -> f64 {
    let yf = y as f64;
    match tag {
        Likelihood::BinomialLogit => {
            if exposure == 0.0 {
                return 0.0;
            }
            let mut ll = ln_choose(exposure, yf);
            if y > 0 {
                ll += yf * mid.ln();
            }
            if exposure > yf {
                ll += (exposure - yf) * (-mid).ln_1p();
            }
            ll
        }
        Likelihood::PoissonLognormal => {
            let mean = exposure * mid;
            let mut ll = -mean - ln_factorial(y);
            if y > 0 {
                ll += yf * mean.ln();
            }
            ll
        }
    }
}

/// Counts `y_ij` with exposures (`n_ij` or `E_ij`) and one likelihood per
/// response. Element `(i, j)` is stored at `j * units + i`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArealDataset {
    units: usize,
    responses: usize,
    y: Vec<u64>,
    exposure: Vec<f64>,
    likelihood: Vec<Likelihood>,
}

impl ArealDataset {
    pub fn new(
        units: usize,
        responses: usize,
        y: Vec<u64>,
        exposure: Vec<f64>,
        likelihood: Vec<Likelihood>,
    ) -> Result<Self> {
        if units == 0 || responses == 0 {
            return Err(Error::Validation(
                "dataset needs at least one unit and one response".into(),
            ));
        }
        let n = units * responses;
        if y.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: y.len(),
            });
        }
        if exposure.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: exposure.len(),
            });
        }
        if likelihood.len() != responses {
            return Err(Error::DimensionMismatch {
                expected: responses,
                found: likelihood.len(),
            });
        }
        for (m, (&yv, &e)) in y.iter().zip(&exposure).enumerate() {
            let (i, j) = (m % units, m / units);
            let at = || format!("unit {}, response {}", i + 1, j + 1);
            match likelihood[j] {
                Likelihood::BinomialLogit => {
                    if !(e >= 0.0 && e.fract() == 0.0 && e.is_finite()) {
                        return Err(Error::Validation(format!(
                            "{}: binomial size must be a nonnegative integer",
                            at()
                        )));
                    }
                    if yv as f64 > e {
                        return Err(Error::Validation(format!("{}: y = {yv} exceeds n = {e}", at())));
                    }
                }
                Likelihood::PoissonLognormal => {
                    if !(e > 0.0 && e.is_finite()) {
                        return Err(Error::Validation(format!("{}: expected count must be positive", at())));
                    }
                }
            }
        }
        Ok(ArealDataset {
            units,
            responses,
            y,
            exposure,
            likelihood,
        })
    }

    pub fn units(&self) -> usize {
        self.units
    }

    pub fn responses(&self) -> usize {
        self.responses
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn y(&self) -> &[u64] {
        &self.y
    }

    pub fn exposure(&self) -> &[f64] {
        &self.exposure
    }

    pub fn likelihoods(&self) -> &[Likelihood] {
        &self.likelihood
    }

    pub fn likelihood(&self, j: usize) -> Likelihood {
        self.likelihood[j]
    }

    /// Log-likelihood of element `m` at linear predictor `gamma`.
    pub fn loglik_at(&self, m: usize, gamma: f64) -> f64 {
        loglik_element(self.y[m], self.exposure[m], gamma, self.likelihood[m / self.units])
    }

    /// Deviance `-2 sum log p(y | gamma)`.
    pub fn deviance(&self, gamma: &[f64]) -> f64 {
        -2.0 * gamma
            .iter()
            .enumerate()
            .map(|(m, &g)| self.loglik_at(m, g))
            .sum::<f64>()
    }

    /// Deviance at mid-level parameters (`p_ij` or `eta_ij`).
    pub fn deviance_mid_level(&self, mid: &[f64]) -> f64 {
        -2.0 * mid
            .iter()
            .enumerate()
            .map(|(m, &v)| loglik_mid_level(self.y[m], self.exposure[m], v, self.likelihood[m / self.units]))
            .sum::<f64>()
    }
}
