//! Two-block Gibbs sampler for `(μ, α)` under a flat prior on `μ`.

use std::io::Write;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::em::{rho, tau};
use crate::error::{check_len, Error, Result};
use crate::model::{format_float, seeded_rng, ModelParams, Parametrization, TimeSeries};
use crate::tridiag::ModelMatrices;

pub const MIN_AUTOCORR_DRAWS: usize = 100;

/// Draws of `μ` kept after burn-in.
#[derive(Clone, Debug)]
pub struct Chain {
    pub mu_draws: Vec<f64>,
    pub seed: u64,
    pub scheme: Parametrization,
}

impl Chain {
    pub fn len(&self) -> usize {
        self.mu_draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu_draws.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.mu_draws.iter().sum::<f64>() / self.mu_draws.len() as f64
    }

    pub fn write_csv<W: Write>(&self, out: W) -> std::result::Result<(), csv::Error> {
        let mut wr = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
        wr.write_record(["mu"])?;
        for v in &self.mu_draws {
            wr.write_record([format_float(*v)])?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Quantities fixed across a chain: everything except `μ` is held.
struct Sampler<'a> {
    y: &'a TimeSeries,
    params: ModelParams,
    par: &'a Parametrization,
    mats: ModelMatrices,
    rho: Vec<f64>,
    tau: f64,
    yw: f64,
    scale: f64,
}

impl<'a> Sampler<'a> {
    fn new(y: &'a TimeSeries, params: &ModelParams, par: &'a Parametrization) -> Result<Self> {
        params.validate()?;
        let n = y.len();
        check_len(n, par.len())?;
        let mats = ModelMatrices::new(params, n)?;
        let rho = rho(params, &mats.omega, &par.w)?;
        let tau = tau(params, &mats.lambda, &par.w)?;
        let yw: f64 = y.values().iter().zip(&par.w).map(|(a, b)| a * b).sum();
        Ok(Self {
            y,
            params: *params,
            par,
            mats,
            rho,
            tau,
            yw: yw / params.sigma_eps_sq,
            scale: par.state_scale(params.sigma_eta_sq),
        })
    }

    fn states<R: Rng + ?Sized>(&self, mu: f64, rng: &mut R) -> Result<Vec<f64>> {
        let z: Vec<f64> = self.y.values().iter().map(|v| (v - mu) / self.params.sigma_eps_sq).collect();
        let g = self.mats.omega_factor.solve(&z)?;
        let e: Vec<f64> = (0..z.len()).map(|_| rng.sample(StandardNormal)).collect();
        let noise = self.mats.omega_factor.correlate(&e)?;
        Ok(g.iter()
            .zip(&noise)
            .zip(&self.par.w)
            .map(|((gi, ni), wi)| (gi + mu * (1.0 - wi) + ni) / self.scale)
            .collect())
    }

    fn mu<R: Rng + ?Sized>(&self, alpha: &[f64], rng: &mut R) -> Result<f64> {
        check_len(self.rho.len(), alpha.len())?;
        let ra: f64 = self.rho.iter().zip(alpha).map(|(a, b)| a * b).sum();
        let mean = (self.yw - self.scale * ra) / self.tau;
        let e: f64 = rng.sample(StandardNormal);
        Ok(mean + e / self.tau.sqrt())
    }
}

/// One exact draw from `α | μ, y ~ N(m, σ_η^{−2a} Ω⁻¹)`.
pub fn sample_states<R: Rng + ?Sized>(
    y: &TimeSeries,
    mu: f64,
    params: &ModelParams,
    par: &Parametrization,
    rng: &mut R,
) -> Result<Vec<f64>> {
    Sampler::new(y, params, par)?.states(mu, rng)
}

/// One draw from
/// `μ | α, y ~ N(τ⁻¹(σ_ε⁻² yᵀw − σ_η^a ρᵀα), τ⁻¹)`.
pub fn sample_mu<R: Rng + ?Sized>(
    y: &TimeSeries,
    alpha: &[f64],
    params: &ModelParams,
    par: &Parametrization,
    rng: &mut R,
) -> Result<f64> {
    Sampler::new(y, params, par)?.mu(alpha, rng)
}

/// Burn-in used when none is given: 5% of the chain length.
pub fn default_burnin(n_draws: usize) -> usize {
    n_draws / 20
}

/// Runs `n_draws` sweeps from `μ⁽⁰⁾ = params.mu` and keeps the draws after
/// the first `burnin`.
pub fn run_chain(
    y: &TimeSeries,
    params: &ModelParams,
    par: &Parametrization,
    n_draws: usize,
    burnin: usize,
    seed: u64,
) -> Result<Chain> {
    if n_draws <= burnin || n_draws - burnin < 2 {
        return Err(Error::InvalidParameter(format!(
            "chain length {n_draws} must exceed burn-in {burnin} by at least 2"
        )));
    }
    let sampler = Sampler::new(y, params, par)?;
    let mut rng = seeded_rng(seed);
    let mut mu = params.mu;
    let mut draws = Vec::with_capacity(n_draws - burnin);
    for i in 0..n_draws {
        let alpha = sampler.states(mu, &mut rng)?;
        mu = sampler.mu(&alpha, &mut rng)?;
        if i >= burnin {
            draws.push(mu);
        }
    }
    Ok(Chain { mu_draws: draws, seed, scheme: par.clone() })
}

/// Sample lag-1 autocorrelation of the `μ` draws.
pub fn lag1_autocorr(chain: &Chain) -> Result<f64> {
    lag1_autocorr_of(&chain.mu_draws)
}

pub fn lag1_autocorr_of(x: &[f64]) -> Result<f64> {
    if x.len() < MIN_AUTOCORR_DRAWS {
        return Err(Error::ChainTooShort { got: x.len(), need: MIN_AUTOCORR_DRAWS });
    }
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    let den: f64 = x.iter().map(|v| (v - mean) * (v - mean)).sum();
    if den == 0.0 {
        return Err(Error::InvalidParameter("constant chain has no autocorrelation".into()));
    }
    let num: f64 = x.windows(2).map(|p| (p[0] - mean) * (p[1] - mean)).sum();
    Ok(num / den)
}
