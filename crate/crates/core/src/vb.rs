//! Coordinate-ascent variational approximation `q(α) q(μ)` for the
//! location problem.

use crate::em::{rate_location, rho, tau};
use crate::error::{check_len, Error, Result};
use crate::model::{ModelParams, Parametrization, TimeSeries};
use crate::tridiag::ModelMatrices;

#[derive(Clone, Debug)]
pub struct VbState {
    pub m_alpha: Vec<f64>,
    pub m_mu: f64,
    pub var_mu: f64,
    pub converged: bool,
    /// Sweeps taken before the fixed point was confirmed by one further
    /// sweep.
    pub sweeps: usize,
}

/// Starting state with `m_μ` at the sample mean of `y`.
pub fn vb_init(y: &TimeSeries, params: &ModelParams, par: &Parametrization) -> Result<VbState> {
    let lambda = crate::tridiag::build_lambda(params.phi, y.len())?;
    check_len(y.len(), par.len())?;
    Ok(VbState {
        m_alpha: vec![0.0; y.len()],
        m_mu: y.mean(),
        var_mu: 1.0 / tau(params, &lambda, &par.w)?,
        converged: false,
        sweeps: 0,
    })
}

struct Updater<'a> {
    par: &'a Parametrization,
    mats: ModelMatrices,
    ys: Vec<f64>,
    rho: Vec<f64>,
    tau: f64,
    yw: f64,
    scale: f64,
}

impl<'a> Updater<'a> {
    fn new(y: &TimeSeries, params: &ModelParams, par: &'a Parametrization) -> Result<Self> {
        params.validate()?;
        let n = y.len();
        check_len(n, par.len())?;
        let mats = ModelMatrices::new(params, n)?;
        let ys: Vec<f64> = y.values().iter().map(|v| v / params.sigma_eps_sq).collect();
        let rho = rho(params, &mats.omega, &par.w)?;
        let tau = tau(params, &mats.lambda, &par.w)?;
        let yw = ys.iter().zip(&par.w).map(|(a, b)| a * b).sum();
        Ok(Self { par, mats, ys, rho, tau, yw, scale: par.state_scale(params.sigma_eta_sq) })
    }

    fn sweep(&self, state: &VbState) -> Result<VbState> {
        let rhs: Vec<f64> = self.ys.iter().zip(&self.rho).map(|(y, r)| y - r * state.m_mu).collect();
        let m_alpha: Vec<f64> = self.mats.omega_factor.solve(&rhs)?.iter().map(|v| v / self.scale).collect();
        let ra: f64 = self.rho.iter().zip(&m_alpha).map(|(a, b)| a * b).sum();
        let m_mu = (self.yw - self.scale * ra) / self.tau;
        debug_assert_eq!(self.par.len(), m_alpha.len());
        Ok(VbState { m_alpha, m_mu, var_mu: 1.0 / self.tau, converged: false, sweeps: state.sweeps + 1 })
    }
}

/// One sweep: `m_α = σ_η^{−a} Ω⁻¹(σ_ε⁻² y − ρ m_μ)`, then
/// `m_μ = τ⁻¹(σ_ε⁻² yᵀw − σ_η^a ρᵀ m_α)`.
pub fn vb_iterate(y: &TimeSeries, params: &ModelParams, par: &Parametrization, state: &VbState) -> Result<VbState> {
    Updater::new(y, params, par)?.sweep(state)
}

/// Sweeps until `|Δm_μ| < tol (1 + |m_μ|)`.
pub fn vb_fit(
    y: &TimeSeries,
    params: &ModelParams,
    par: &Parametrization,
    tol: f64,
    max_iter: usize,
) -> Result<VbState> {
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter(format!("tolerance must be positive, got {tol}")));
    }
    let up = Updater::new(y, params, par)?;
    let mut state = vb_init(y, params, par)?;
    for _ in 0..max_iter {
        let next = up.sweep(&state)?;
        if (next.m_mu - state.m_mu).abs() < tol * (1.0 + next.m_mu.abs()) {
            let sweeps = state.sweeps.max(1);
            return Ok(VbState { converged: true, sweeps, ..next });
        }
        state = next;
    }
    Ok(state)
}

/// Slope of the `m_μ` recursion measured from two sweeps started at
/// `m_μ ± h`; the recursion is affine, so this is its contraction factor.
pub fn vb_map_slope(y: &TimeSeries, params: &ModelParams, par: &Parametrization, h: f64) -> Result<f64> {
    let up = Updater::new(y, params, par)?;
    let base = vb_init(y, params, par)?;
    let at = |mu: f64| up.sweep(&VbState { m_mu: mu, ..base.clone() }).map(|s| s.m_mu);
    Ok((at(base.m_mu + h)? - at(base.m_mu - h)?) / (2.0 * h))
}

/// Contraction factor of the `m_μ` recursion; the same as the EM rate.
pub fn vb_rate(params: &ModelParams, par: &Parametrization) -> Result<f64> {
    rate_location(params, &par.w)
}
