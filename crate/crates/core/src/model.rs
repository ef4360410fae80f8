//! AR(1)-plus-noise model: parameters, simulation, marginal likelihood and
//! the `(a, w)` reparametrization of the latent states.
//!
//! ```text
//! y_t = x_t + ε_t,                 ε_t ~ N(0, σ_ε²)
//! x_t = μ + φ (x_{t−1} − μ) + η_t, η_t ~ N(0, σ_η²)
//! x_0 ~ N(μ, σ_η² / (1 − φ²))
//! α_t = σ_η^{−a} (x_t − w_t μ)
//! ```
//!
//! `x_0` is drawn during simulation but never part of the missing data; it is
//! integrated out into the stationary precision `σ_η⁻² Λ` of `x_1..x_n`.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{check_len, Error, Result};
use crate::tridiag::{build_omega, ModelMatrices, TridiagFactor};

/// Random number generator used everywhere a draw is made.
///
/// ChaCha8 seeded from a `u64`; normal variates come from `rand_distr`'s
/// ziggurat `StandardNormal`. Replicate `k` of an experiment seeded with `s`
/// uses `replicate_rng(s, k)`.
pub type SimRng = ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn replicate_rng(seed: u64, replicate: u64) -> SimRng {
    seeded_rng(seed.wrapping_add(replicate))
}

/// `θ = (μ, σ_η², σ_ε², φ)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelParams {
    pub mu: f64,
    pub sigma_eta_sq: f64,
    pub sigma_eps_sq: f64,
    pub phi: f64,
}

impl ModelParams {
    pub fn new(mu: f64, sigma_eta_sq: f64, sigma_eps_sq: f64, phi: f64) -> Result<Self> {
        let p = Self { mu, sigma_eta_sq, sigma_eps_sq, phi };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.mu.is_finite() {
            return Err(Error::InvalidParameter(format!("mu must be finite, got {}", self.mu)));
        }
        if !(self.sigma_eta_sq > 0.0 && self.sigma_eta_sq.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "sigma_eta_sq must be positive, got {}",
                self.sigma_eta_sq
            )));
        }
        if !(self.sigma_eps_sq > 0.0 && self.sigma_eps_sq.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "sigma_eps_sq must be positive, got {}",
                self.sigma_eps_sq
            )));
        }
        if !(self.phi.abs() < 1.0) {
            return Err(Error::InvalidParameter(format!("|phi| must be < 1, got {}", self.phi)));
        }
        Ok(())
    }

    /// Signal-to-noise ratio `σ_η² / σ_ε²`.
    pub fn gamma(&self) -> f64 {
        self.sigma_eta_sq / self.sigma_eps_sq
    }

    pub fn with_mu(self, mu: f64) -> Self {
        Self { mu, ..self }
    }

    pub fn with_sigma_eta_sq(self, sigma_eta_sq: f64) -> Self {
        Self { sigma_eta_sq, ..self }
    }

    pub fn with_sigma_eps_sq(self, sigma_eps_sq: f64) -> Self {
        Self { sigma_eps_sq, ..self }
    }

    pub fn with_phi(self, phi: f64) -> Self {
        Self { phi, ..self }
    }
}

/// Working parameters of the augmentation. `(0, 0)` is the centered scheme,
/// `(1, 1)` the noncentered one.
#[derive(Clone, Debug, PartialEq)]
pub struct Parametrization {
    pub a: f64,
    pub w: Vec<f64>,
}

impl Parametrization {
    pub fn new(a: f64, w: Vec<f64>) -> Self {
        Self { a, w }
    }

    pub fn centered(n: usize) -> Self {
        Self { a: 0.0, w: vec![0.0; n] }
    }

    pub fn noncentered(n: usize) -> Self {
        Self { a: 1.0, w: vec![1.0; n] }
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }

    /// `w̃ = 1 − w`.
    pub fn w_tilde(&self) -> Vec<f64> {
        self.w.iter().map(|w| 1.0 - w).collect()
    }

    /// `σ_η^a`.
    pub fn state_scale(&self, sigma_eta_sq: f64) -> f64 {
        sigma_eta_sq.powf(0.5 * self.a)
    }
}

/// Observed series `y_1..y_n`.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeSeries {
    y: Vec<f64>,
}

impl TimeSeries {
    pub fn new(y: Vec<f64>) -> Result<Self> {
        if y.len() < 2 {
            return Err(Error::InvalidParameter(format!(
                "series needs at least 2 observations, got {}",
                y.len()
            )));
        }
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(format!("non-finite observation at index {i}")));
        }
        Ok(Self { y })
    }

    pub fn values(&self) -> &[f64] {
        &self.y
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.y.iter().sum::<f64>() / self.len() as f64
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.y.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (self.len() as f64 - 1.0)
    }

    pub fn lag1_autocorr(&self) -> f64 {
        let m = self.mean();
        let den: f64 = self.y.iter().map(|v| (v - m) * (v - m)).sum();
        if den == 0.0 {
            return 0.0;
        }
        let num: f64 = self.y.windows(2).map(|p| (p[0] - m) * (p[1] - m)).sum();
        num / den
    }

    /// Single-column CSV with header `y`.
    pub fn write_csv<W: Write>(&self, out: W) -> std::result::Result<(), csv::Error> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
        w.write_record(["y"])?;
        for v in &self.y {
            w.write_record([format_float(*v)])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let reader = BufReader::new(input);
        let mut values = Vec::new();
        let mut header_seen = false;
        for (lineno, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::Io { path: "<input>".into(), source: e })?;
            let field = line.trim_end_matches('\r').trim();
            if field.is_empty() {
                continue;
            }
            if !header_seen {
                if field != "y" {
                    return Err(Error::InvalidParameter(format!(
                        "expected header `y`, found `{field}`"
                    )));
                }
                header_seen = true;
                continue;
            }
            let v: f64 = field.parse().map_err(|_| {
                Error::InvalidParameter(format!("line {}: cannot parse `{field}`", lineno + 1))
            })?;
            values.push(v);
        }
        Self::new(values)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::Io { path: path.into(), source: e })?;
        self.write_csv(file).map_err(|e| Error::Csv { path: path.into(), source: e })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::Io { path: path.into(), source: e })?;
        Self::read_csv(file)
    }
}

/// Shortest round-trip representation.
pub(crate) fn format_float(v: f64) -> String {
    format!("{v:?}")
}

pub fn simulate(params: &ModelParams, n: usize, seed: u64) -> Result<TimeSeries> {
    simulate_with_rng(params, n, &mut seeded_rng(seed))
}

/// Draws `x_0` from the stationary law, runs the AR(1) recursion for
/// `x_1..x_n` and adds observation noise.
pub fn simulate_with_rng<R: Rng + ?Sized>(params: &ModelParams, n: usize, rng: &mut R) -> Result<TimeSeries> {
    params.validate()?;
    if n < 2 {
        return Err(Error::InvalidParameter(format!("n must be >= 2, got {n}")));
    }
    let sd_eta = params.sigma_eta_sq.sqrt();
    let sd_eps = params.sigma_eps_sq.sqrt();
    let sd_stat = (params.sigma_eta_sq / (1.0 - params.phi * params.phi)).sqrt();
    let mut x = params.mu + sd_stat * rng.sample::<f64, _>(StandardNormal);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        x = params.mu + params.phi * (x - params.mu) + sd_eta * rng.sample::<f64, _>(StandardNormal);
        y.push(x + sd_eps * rng.sample::<f64, _>(StandardNormal));
    }
    TimeSeries::new(y)
}

/// Marginal log-density of `y ~ N(μ1, S⁻¹)` with `S⁻¹ = σ_ε² I + σ_η² Λ⁻¹`.
///
/// With `r = y − μ1` and `z = σ_ε⁻² r`:
/// `rᵀ S r = σ_ε⁻² rᵀr − zᵀ Ω⁻¹ z` and
/// `log|S⁻¹| = n log σ_ε² + n log σ_η² + log|Ω| − log|Λ|`,
/// both from one factorization of `Ω`.
pub fn log_likelihood(params: &ModelParams, y: &TimeSeries) -> Result<f64> {
    params.validate()?;
    let omega = build_omega(params, y.len())?.factorize()?;
    log_likelihood_factored(params, y, &omega)
}

/// [`log_likelihood`] reusing the matrices of `params`.
pub fn log_likelihood_with(params: &ModelParams, y: &TimeSeries, mats: &ModelMatrices) -> Result<f64> {
    check_len(y.len(), mats.len())?;
    log_likelihood_factored(params, y, &mats.omega_factor)
}

fn log_likelihood_factored(params: &ModelParams, y: &TimeSeries, omega: &TridiagFactor) -> Result<f64> {
    let n = y.len();
    let r: Vec<f64> = y.values().iter().map(|v| v - params.mu).collect();
    let z: Vec<f64> = r.iter().map(|v| v / params.sigma_eps_sq).collect();
    let g = omega.solve(&z)?;
    let rr: f64 = r.iter().map(|v| v * v).sum();
    let zgz: f64 = z.iter().zip(&g).map(|(a, b)| a * b).sum();
    let quad = rr / params.sigma_eps_sq - zgz;
    let nf = n as f64;
    let log_det_cov = nf * params.sigma_eps_sq.ln() + nf * params.sigma_eta_sq.ln() + omega.log_det()
        - (1.0 - params.phi * params.phi).ln();
    Ok(-0.5 * nf * (2.0 * std::f64::consts::PI).ln() - 0.5 * log_det_cov - 0.5 * quad)
}

/// `α_t = σ_η^{−a} (x_t − w_t μ)`.
pub fn to_alpha(x: &[f64], params: &ModelParams, par: &Parametrization) -> Result<Vec<f64>> {
    check_len(par.len(), x.len())?;
    let s = par.state_scale(params.sigma_eta_sq);
    Ok(x.iter().zip(&par.w).map(|(xi, wi)| (xi - wi * params.mu) / s).collect())
}

/// `x_t = σ_η^a α_t + w_t μ`.
pub fn from_alpha(alpha: &[f64], params: &ModelParams, par: &Parametrization) -> Result<Vec<f64>> {
    check_len(par.len(), alpha.len())?;
    let s = par.state_scale(params.sigma_eta_sq);
    Ok(alpha.iter().zip(&par.w).map(|(ai, wi)| s * ai + wi * params.mu).collect())
}

/// `1ᵀ Λ 1 = n(1 − φ)² + 2φ(1 − φ)`, from the stencil of `Λ`.
pub fn ones_lambda_ones(phi: f64, n: usize) -> f64 {
    let nf = n as f64;
    nf * (1.0 - phi) * (1.0 - phi) + 2.0 * phi * (1.0 - phi)
}
