//! Simulation of MCAR fields and count data for ground-truth recovery.

use rand::Rng;
use rand_distr::{Binomial, Distribution, Poisson};

use crate::data::{logistic, ArealDataset, Likelihood};
use crate::error::{Error, Result};
use crate::precision::{validate, ModelGraphs, ModelParams};
use crate::sparse::cholesky;

/// One exact draw of `vec(U) ~ N(0, Q^{-1})` for the model's joint precision,
/// returned in column-major order (`j * I + i`).
pub fn simulate_u<R: Rng + ?Sized>(params: &ModelParams, graphs: &ModelGraphs, rng: &mut R) -> Result<Vec<f64>> {
    validate(params, graphs)?;
    let q = params.precision_unchecked(graphs);
    Ok(cholesky(&q)?.sample_gaussian(rng))
}

/// Counts at linear predictors `beta_j + u_ij`. `exposure` is `n_ij` for
/// binomial responses and `E_ij` for Poisson responses.
pub fn simulate_counts<R: Rng + ?Sized>(
    u: &[f64],
    beta: &[f64],
    exposure: &[f64],
    likelihood: &[Likelihood],
    rng: &mut R,
) -> Result<ArealDataset> {
    let responses = beta.len();
    if responses == 0 || likelihood.len() != responses || !u.len().is_multiple_of(responses) {
        return Err(Error::DimensionMismatch {
            expected: responses,
            found: likelihood.len(),
        });
    }
    if exposure.len() != u.len() {
        return Err(Error::DimensionMismatch {
            expected: u.len(),
            found: exposure.len(),
        });
    }
    let units = u.len() / responses;
    let mut y = Vec::with_capacity(u.len());
    for (m, (&um, &e)) in u.iter().zip(exposure).enumerate() {
        let j = m / units;
        let gamma = beta[j] + um;
        let draw = match likelihood[j] {
            Likelihood::BinomialLogit => {
                if e < 0.0 || e.fract() != 0.0 {
                    return Err(Error::Validation(format!(
                        "binomial size {e} is not a nonnegative integer"
                    )));
                }
                Binomial::new(e as u64, logistic(gamma))
                    .map_err(|err| Error::Numerical(err.to_string()))?
                    .sample(rng)
            }
            Likelihood::PoissonLognormal => {
                let mean = e * gamma.exp();
                Poisson::new(mean)
                    .map_err(|err| Error::Numerical(err.to_string()))?
                    .sample(rng) as u64
            }
        };
        y.push(draw);
    }
    ArealDataset::new(units, responses, y, exposure.to_vec(), likelihood.to_vec())
}
