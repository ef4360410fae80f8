use std::fmt;
use std::io::Write;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::model::{format_float, log_likelihood, log_likelihood_with, ModelParams, Parametrization, TimeSeries};
use crate::tridiag::ModelMatrices;
use crate::workparam::{scale_approx_parametrization, scale_opt_with, w_opt_location_with};

use super::{
    e_step_with, posterior_mean_with, rate_location_with, update_mu, update_phi, update_sigma_eps,
    update_sigma_eta, SmoothedMoments,
};

/// Working-parameter choice for one block of an EM iteration.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Scheme {
    Centered,
    Noncentered,
    Partial,
    Approx,
}

impl Scheme {
    pub const ALL: [Scheme; 4] = [Scheme::Centered, Scheme::Noncentered, Scheme::Partial, Scheme::Approx];

    pub fn name(&self) -> &'static str {
        match self {
            Scheme::Centered => "centered",
            Scheme::Noncentered => "noncentered",
            Scheme::Partial => "partial",
            Scheme::Approx => "approx",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "centered" | "c" => Ok(Scheme::Centered),
            "noncentered" | "nc" => Ok(Scheme::Noncentered),
            "partial" | "pnc" => Ok(Scheme::Partial),
            "approx" | "approximate" => Ok(Scheme::Approx),
            other => Err(Error::Config(format!("unknown scheme `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Termination {
    Tolerance,
    MaxIterations,
}

#[derive(Clone, Copy, Debug)]
pub struct FitOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { tol: 1e-8, max_iter: 10_000 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WSummary {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

impl WSummary {
    pub fn of(w: &[f64]) -> Self {
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        let min = w.iter().copied().fold(f64::INFINITY, f64::min);
        let max = w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Self { mean, min, max }
    }
}

#[derive(Clone, Debug)]
pub struct FitStep {
    pub params: ModelParams,
    pub loglik: f64,
    pub a: Option<f64>,
    pub w: Option<WSummary>,
    pub rate: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct FitReport {
    /// Entry 0 is the starting point, entry `i` the state after iteration `i`.
    pub trajectory: Vec<FitStep>,
    pub iterations: usize,
    pub terminated_by: Termination,
    pub final_params: ModelParams,
    /// Log-likelihood after every cycle of Algorithm 3, empty otherwise.
    pub cycle_logliks: Vec<f64>,
    /// Updates that failed and kept the previous value.
    pub warnings: Vec<String>,
}

impl FitReport {
    pub fn final_loglik(&self) -> f64 {
        self.trajectory.last().map_or(f64::NAN, |s| s.loglik)
    }

    pub fn converged(&self) -> bool {
        self.terminated_by == Termination::Tolerance
    }

    /// Smallest change in log-likelihood between successive recorded points,
    /// cycles included when present.
    pub fn min_loglik_increase(&self) -> f64 {
        let seq: Vec<f64> = if self.cycle_logliks.is_empty() {
            self.trajectory.iter().map(|s| s.loglik).collect()
        } else {
            std::iter::once(self.trajectory[0].loglik)
                .chain(self.cycle_logliks.iter().copied())
                .collect()
        };
        seq.windows(2).map(|p| p[1] - p[0]).fold(f64::INFINITY, f64::min)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> std::result::Result<(), csv::Error> {
        let mut wr = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
        wr.write_record(["iter", "mu", "sigma_eta_sq", "sigma_eps_sq", "phi", "loglik", "a", "rate"])?;
        let opt = |v: Option<f64>| v.map(format_float).unwrap_or_default();
        for (i, s) in self.trajectory.iter().enumerate() {
            wr.write_record([
                i.to_string(),
                format_float(s.params.mu),
                format_float(s.params.sigma_eta_sq),
                format_float(s.params.sigma_eps_sq),
                format_float(s.params.phi),
                format_float(s.loglik),
                opt(s.a),
                opt(s.rate),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Starting point used when none is supplied.
pub fn default_init(y: &TimeSeries) -> ModelParams {
    let half_var = (0.5 * y.variance()).max(f64::MIN_POSITIVE.sqrt());
    ModelParams {
        mu: y.mean(),
        sigma_eta_sq: half_var,
        sigma_eps_sq: half_var,
        phi: y.lag1_autocorr().clamp(-0.9, 0.9),
    }
}

fn relative_increase(old: f64, new: f64) -> f64 {
    (new - old) / old.abs()
}

struct Driver {
    opts: FitOptions,
    trajectory: Vec<FitStep>,
    warnings: Vec<String>,
}

impl Driver {
    fn new(opts: FitOptions, start: FitStep) -> Self {
        Self { opts, trajectory: vec![start], warnings: Vec::new() }
    }

    /// Runs `step` until the relative log-likelihood increase drops below
    /// the tolerance or the iteration budget is spent.
    fn run<F>(mut self, mut step: F, cycle_logliks: Vec<f64>) -> Result<FitReport>
    where
        F: FnMut(&ModelParams, &mut Vec<String>) -> Result<FitStep>,
    {
        let mut terminated_by = Termination::MaxIterations;
        let mut iterations = 0;
        while iterations < self.opts.max_iter {
            let prev = self.trajectory.last().expect("trajectory is never empty").clone();
            let next = step(&prev.params, &mut self.warnings)?;
            iterations += 1;
            let inc = relative_increase(prev.loglik, next.loglik);
            self.trajectory.push(next);
            if inc < self.opts.tol {
                terminated_by = Termination::Tolerance;
                break;
            }
        }
        let final_params = self.trajectory.last().expect("trajectory is never empty").params;
        Ok(FitReport {
            trajectory: self.trajectory,
            iterations,
            terminated_by,
            final_params,
            cycle_logliks,
            warnings: self.warnings,
        })
    }
}

/// EM for `μ` with the variances and `φ` held at `known`.
pub fn algorithm1(
    y: &TimeSeries,
    init_mu: f64,
    known: &ModelParams,
    scheme: Scheme,
    opts: FitOptions,
) -> Result<FitReport> {
    let n = y.len();
    let theta0 = known.with_mu(init_mu);
    theta0.validate()?;
    let mats = ModelMatrices::new(&theta0, n)?;
    let w = match scheme {
        Scheme::Centered => vec![0.0; n],
        Scheme::Noncentered => vec![1.0; n],
        Scheme::Partial => w_opt_location_with(&theta0, &mats)?,
        Scheme::Approx => {
            return Err(Error::InvalidParameter("the approx scheme applies to the scale parameter only".into()))
        }
    };
    let par = Parametrization::new(0.0, w);
    let rate = rate_location_with(&theta0, &mats, &par.w)?;
    let summary = WSummary::of(&par.w);
    let mk = |params: ModelParams, loglik: f64| FitStep {
        params,
        loglik,
        a: Some(0.0),
        w: Some(summary),
        rate: Some(rate),
    };
    let start = mk(theta0, log_likelihood_with(&theta0, y, &mats)?);
    Driver::new(opts, start).run(
        |theta, _| {
            // only m enters the μ update, so the band of V is not needed here
            let m = posterior_mean_with(y, theta, &mats, &par)?;
            let moments = SmoothedMoments {
                m,
                v_diag: Vec::new(),
                v_offdiag: Vec::new(),
                tr_v: 0.0,
                tr_lambda_v: 0.0,
            };
            let mu = update_mu(y, &moments, theta, &par)?;
            let next = theta.with_mu(mu);
            Ok(mk(next, log_likelihood_with(&next, y, &mats)?))
        },
        Vec::new(),
    )
}

/// Working parameters for a `σ_η²` update at `θ`. A degenerate optimal
/// scale falls back to the approximate scheme.
fn scale_parametrization(
    y: &TimeSeries,
    theta: &ModelParams,
    mats: &ModelMatrices,
    scheme: Scheme,
    w_prev: &mut Vec<f64>,
    warnings: &mut Vec<String>,
) -> Result<Parametrization> {
    let n = y.len();
    Ok(match scheme {
        Scheme::Centered => Parametrization::centered(n),
        Scheme::Noncentered => Parametrization::noncentered(n),
        Scheme::Approx => scale_approx_parametrization(theta, n),
        Scheme::Partial => match scale_opt_with(y, theta, mats, w_prev) {
            Ok(s) => {
                w_prev.clone_from(&s.w_opt);
                s.parametrization()
            }
            Err(Error::DegenerateScale(a)) => {
                warnings.push(format!("degenerate optimal scale a = {a:e}; used the approximate scheme"));
                scale_approx_parametrization(theta, n)
            }
            Err(e) => return Err(e),
        },
    })
}

fn sigma_eta_or_keep(
    y: &TimeSeries,
    moments: &SmoothedMoments,
    theta: &ModelParams,
    par: &Parametrization,
    warnings: &mut Vec<String>,
) -> Result<f64> {
    match update_sigma_eta(y, moments, theta, par) {
        Ok(s) => Ok(s),
        Err(Error::NoRoot(what)) => {
            warnings.push(format!("no root for {what}; kept {:e}", theta.sigma_eta_sq));
            Ok(theta.sigma_eta_sq)
        }
        Err(e) => Err(e),
    }
}

/// EM for `σ_η²` with `μ`, `σ_ε²` and `φ` held at `known`.
pub fn algorithm2(
    y: &TimeSeries,
    init_sigma_eta_sq: f64,
    known: &ModelParams,
    scheme: Scheme,
    opts: FitOptions,
) -> Result<FitReport> {
    let n = y.len();
    let theta0 = known.with_sigma_eta_sq(init_sigma_eta_sq);
    theta0.validate()?;
    let start = FitStep { params: theta0, loglik: log_likelihood(&theta0, y)?, a: None, w: None, rate: None };
    let mut w_prev = vec![1.0; n];
    Driver::new(opts, start).run(
        |theta, warnings| {
            let mats = ModelMatrices::new(theta, n)?;
            let par = scale_parametrization(y, theta, &mats, scheme, &mut w_prev, warnings)?;
            let moments = e_step_with(y, theta, &mats, &par)?;
            let s = sigma_eta_or_keep(y, &moments, theta, &par, warnings)?;
            let next = theta.with_sigma_eta_sq(s);
            Ok(FitStep {
                params: next,
                loglik: log_likelihood(&next, y)?,
                a: Some(par.a),
                w: Some(WSummary::of(&par.w)),
                rate: None,
            })
        },
        Vec::new(),
    )
}

/// Three-cycle ECM for all of `θ`: `μ` under the optimal location scheme,
/// then `(φ, σ_ε²)` under `cycle2`, then `σ_η²` under `scale`.
pub fn algorithm3(
    y: &TimeSeries,
    init: &ModelParams,
    cycle2: Scheme,
    scale: Scheme,
    opts: FitOptions,
) -> Result<FitReport> {
    let n = y.len();
    init.validate()?;
    let par2 = match cycle2 {
        Scheme::Centered => Parametrization::centered(n),
        Scheme::Noncentered => Parametrization::noncentered(n),
        other => {
            return Err(Error::InvalidParameter(format!(
                "cycle 2 takes the centered or noncentered scheme, got {other}"
            )))
        }
    };
    let start = FitStep { params: *init, loglik: log_likelihood(init, y)?, a: None, w: None, rate: None };
    let mut w_prev = vec![1.0; n];
    let mut cycles = Vec::new();
    let cycles_ref = &mut cycles;
    let report = Driver::new(opts, start).run(
        |theta, warnings| {
            let mats = ModelMatrices::new(theta, n)?;
            let par1 = Parametrization::new(0.0, w_opt_location_with(theta, &mats)?);
            let mom = e_step_with(y, theta, &mats, &par1)?;
            let theta = theta.with_mu(update_mu(y, &mom, theta, &par1)?);
            cycles_ref.push(log_likelihood_with(&theta, y, &mats)?);

            let mom = e_step_with(y, &theta, &mats, &par2)?;
            let phi = match update_phi(&mom, &theta, &par2) {
                Ok(p) => p,
                Err(Error::NoRoot(what)) => {
                    warnings.push(format!("no root for {what}; kept {:e}", theta.phi));
                    theta.phi
                }
                Err(e) => return Err(e),
            };
            let se = update_sigma_eps(y, &mom, &theta, &par2)?;
            let theta = theta.with_phi(phi).with_sigma_eps_sq(se);
            let mats = ModelMatrices::new(&theta, n)?;
            cycles_ref.push(log_likelihood_with(&theta, y, &mats)?);

            let par3 = scale_parametrization(y, &theta, &mats, scale, &mut w_prev, warnings)?;
            let mom = e_step_with(y, &theta, &mats, &par3)?;
            let s = sigma_eta_or_keep(y, &mom, &theta, &par3, warnings)?;
            let theta = theta.with_sigma_eta_sq(s);
            let loglik = log_likelihood(&theta, y)?;
            cycles_ref.push(loglik);
            Ok(FitStep { params: theta, loglik, a: Some(par3.a), w: Some(WSummary::of(&par3.w)), rate: None })
        },
        Vec::new(),
    )?;
    Ok(FitReport { cycle_logliks: cycles, ..report })
}
