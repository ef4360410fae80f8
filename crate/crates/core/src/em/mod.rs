//! E-step moments, conditional M-step updates and convergence diagnostics
//! for EM under a partially noncentered augmentation.
//!
//! Under `(a, w)` the missing data `α` has conditional law `N(m, V)` with
//! `V = σ_η^{−2a} Ω⁻¹` and `σ_η^a m = Ω⁻¹z + μw̃`, `z = σ_ε⁻² (y − μ1)`.
//! Only the tridiagonal band of `V` is ever needed.

mod algorithms;

pub use algorithms::{
    algorithm1, algorithm2, algorithm3, default_init, FitOptions, FitReport, FitStep, Scheme,
    Termination, WSummary,
};

use crate::error::{check_len, Error, Result};
use crate::model::{ModelParams, Parametrization, TimeSeries};
use crate::tridiag::{build_lambda, ModelMatrices, SelectedInverse, SymTridiag};
use crate::workparam::scale_information_with;

/// Conditional moments of `α` given `y` at one `θ` and one scheme.
#[derive(Clone, Debug)]
pub struct SmoothedMoments {
    pub m: Vec<f64>,
    pub v_diag: Vec<f64>,
    pub v_offdiag: Vec<f64>,
    pub tr_v: f64,
    pub tr_lambda_v: f64,
}

impl SmoothedMoments {
    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    fn band(&self) -> SelectedInverse {
        SelectedInverse { inv_diag: self.v_diag.clone(), inv_offdiag: self.v_offdiag.clone() }
    }
}

pub fn e_step(y: &TimeSeries, params: &ModelParams, par: &Parametrization) -> Result<SmoothedMoments> {
    let mats = ModelMatrices::new(params, y.len())?;
    e_step_with(y, params, &mats, par)
}

pub fn e_step_with(
    y: &TimeSeries,
    params: &ModelParams,
    mats: &ModelMatrices,
    par: &Parametrization,
) -> Result<SmoothedMoments> {
    let m = posterior_mean_with(y, params, mats, par)?;
    let var_scale = params.sigma_eta_sq.powf(-par.a);
    let band = mats.omega_factor.selected_inverse().scaled(var_scale);
    let tr_v = band.trace();
    let tr_lambda_v = mats.lambda.trace_product(&band);
    Ok(SmoothedMoments {
        m,
        v_diag: band.inv_diag,
        v_offdiag: band.inv_offdiag,
        tr_v,
        tr_lambda_v,
    })
}

/// `m = σ_η^{−a} (Ω⁻¹z + μw̃)`.
pub(crate) fn posterior_mean_with(
    y: &TimeSeries,
    params: &ModelParams,
    mats: &ModelMatrices,
    par: &Parametrization,
) -> Result<Vec<f64>> {
    let n = y.len();
    check_len(n, par.len())?;
    check_len(n, mats.len())?;
    let z: Vec<f64> = y
        .values()
        .iter()
        .map(|v| (v - params.mu) / params.sigma_eps_sq)
        .collect();
    let g = mats.omega_factor.solve(&z)?;
    let inv_scale = params.sigma_eta_sq.powf(-0.5 * par.a);
    Ok(g
        .iter()
        .zip(&par.w)
        .map(|(gi, wi)| inv_scale * (gi + params.mu * (1.0 - wi)))
        .collect())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `τ(w) = σ_ε⁻² wᵀw + σ_η⁻² w̃ᵀΛw̃`.
pub fn tau(params: &ModelParams, lambda: &SymTridiag, w: &[f64]) -> Result<f64> {
    let wt: Vec<f64> = w.iter().map(|v| 1.0 - v).collect();
    Ok(dot(w, w) / params.sigma_eps_sq + lambda.bilinear(&wt, &wt)? / params.sigma_eta_sq)
}

/// `ρ(w) = σ_ε⁻² 1 − Ω w̃`.
pub fn rho(params: &ModelParams, omega: &SymTridiag, w: &[f64]) -> Result<Vec<f64>> {
    let wt: Vec<f64> = w.iter().map(|v| 1.0 - v).collect();
    let ow = omega.mul_vec(&wt)?;
    Ok(ow.iter().map(|v| 1.0 / params.sigma_eps_sq - v).collect())
}

/// Expected complete-data log-likelihood `Q(θ | θ⁽ⁱ⁾)`: `moments` were
/// computed at `θ⁽ⁱ⁾` under `par`, `theta` is the point of evaluation.
pub fn q_function(
    y: &TimeSeries,
    theta: &ModelParams,
    moments: &SmoothedMoments,
    par: &Parametrization,
) -> Result<f64> {
    theta.validate()?;
    let n = y.len();
    check_len(n, moments.len())?;
    check_len(n, par.len())?;
    let nf = n as f64;
    let lambda = build_lambda(theta.phi, n)?;
    let s = par.state_scale(theta.sigma_eta_sq);
    let s2 = s * s;
    let resid: Vec<f64> = y
        .values()
        .iter()
        .zip(&par.w)
        .zip(&moments.m)
        .map(|((yi, wi), mi)| yi - theta.mu * wi - s * mi)
        .collect();
    let zeta: Vec<f64> = moments
        .m
        .iter()
        .zip(&par.w)
        .map(|(mi, wi)| s * mi - theta.mu * (1.0 - wi))
        .collect();
    let obs = (dot(&resid, &resid) + s2 * moments.tr_v) / theta.sigma_eps_sq;
    let state = (lambda.bilinear(&zeta, &zeta)? + s2 * lambda.trace_product(&moments.band()))
        / theta.sigma_eta_sq;
    Ok(0.5
        * ((1.0 - theta.phi * theta.phi).ln()
            - obs
            - nf * theta.sigma_eps_sq.ln()
            - nf * (1.0 - par.a) * theta.sigma_eta_sq.ln()
            - state)
        - nf * (2.0 * std::f64::consts::PI).ln())
}

/// Conditional maximizer of `Q` in `μ`:
/// `{σ_ε⁻² (y − σ_η^a m)ᵀw + σ_η^{a−2} mᵀΛw̃} / τ(w)`.
pub fn update_mu(
    y: &TimeSeries,
    moments: &SmoothedMoments,
    params: &ModelParams,
    par: &Parametrization,
) -> Result<f64> {
    let n = y.len();
    check_len(n, moments.len())?;
    check_len(n, par.len())?;
    let lambda = build_lambda(params.phi, n)?;
    let s = par.state_scale(params.sigma_eta_sq);
    let wt = par.w_tilde();
    let t = tau(params, &lambda, &par.w)?;
    assert!(t > 0.0, "tau(w) must be positive");
    let obs: f64 = y
        .values()
        .iter()
        .zip(&moments.m)
        .zip(&par.w)
        .map(|((yi, mi), wi)| (yi - s * mi) * wi)
        .sum();
    let state = lambda.bilinear(&moments.m, &wt)?;
    Ok((obs / params.sigma_eps_sq + s * state / params.sigma_eta_sq) / t)
}

/// `n⁻¹ {‖y − μw − σ_η^a m‖² + σ_η^{2a} tr V}`.
pub fn update_sigma_eps(
    y: &TimeSeries,
    moments: &SmoothedMoments,
    params: &ModelParams,
    par: &Parametrization,
) -> Result<f64> {
    let n = y.len();
    check_len(n, moments.len())?;
    check_len(n, par.len())?;
    let s = par.state_scale(params.sigma_eta_sq);
    let rss: f64 = y
        .values()
        .iter()
        .zip(&par.w)
        .zip(&moments.m)
        .map(|((yi, wi), mi)| {
            let r = yi - params.mu * wi - s * mi;
            r * r
        })
        .sum();
    Ok((rss + s * s * moments.tr_v) / n as f64)
}

/// Scalars the `σ_η²` update depends on; everything after this is O(1)
/// per evaluation.
#[derive(Clone, Copy, Debug)]
struct ScaleStats {
    n: f64,
    a: f64,
    mu: f64,
    inv_se: f64,
    m_lam_m: f64,
    tr_lam_v: f64,
    wt_lam_wt: f64,
    m_lam_wt: f64,
    ymw_m: f64,
    m_m: f64,
    tr_v: f64,
}

impl ScaleStats {
    fn new(
        y: &TimeSeries,
        moments: &SmoothedMoments,
        params: &ModelParams,
        par: &Parametrization,
        lambda: &SymTridiag,
    ) -> Result<Self> {
        let wt = par.w_tilde();
        let ymw: Vec<f64> = y
            .values()
            .iter()
            .zip(&par.w)
            .map(|(yi, wi)| yi - params.mu * wi)
            .collect();
        Ok(Self {
            n: y.len() as f64,
            a: par.a,
            mu: params.mu,
            inv_se: 1.0 / params.sigma_eps_sq,
            m_lam_m: lambda.bilinear(&moments.m, &moments.m)?,
            tr_lam_v: moments.tr_lambda_v,
            wt_lam_wt: lambda.bilinear(&wt, &wt)?,
            m_lam_wt: lambda.bilinear(&moments.m, &wt)?,
            ymw_m: dot(&ymw, &moments.m),
            m_m: dot(&moments.m, &moments.m),
            tr_v: moments.tr_v,
        })
    }

    /// `2s ∂Q/∂s`; its zeros are the stationary points in `s = σ_η²`.
    fn residual(&self, s: f64) -> f64 {
        let a = self.a;
        let sa = s.powf(a);
        let sh = s.powf(0.5 * a);
        (1.0 - a) * sa * (self.m_lam_m + self.tr_lam_v) + self.mu * self.mu * self.wt_lam_wt
            + (a - 2.0) * sh * self.mu * self.m_lam_wt
            + a * s * self.inv_se * (sh * self.ymw_m - sa * (self.m_m + self.tr_v))
            - self.n * (1.0 - a) * s
    }

    /// The `σ_η²`-dependent part of `Q`.
    fn q(&self, s: f64) -> f64 {
        let a = self.a;
        let sa = s.powf(a);
        let sh = s.powf(0.5 * a);
        -0.5 * self.inv_se * (-2.0 * sh * self.ymw_m + sa * (self.m_m + self.tr_v))
            - 0.5 * self.n * (1.0 - a) * s.ln()
            - 0.5
                * (sa / s * (self.m_lam_m + self.tr_lam_v) - 2.0 * sh / s * self.mu * self.m_lam_wt
                    + self.mu * self.mu * self.wt_lam_wt / s)
    }
}

/// Grid of the pre-scan used to bracket roots of the `σ_η²` equation.
const SCALE_SCAN_POINTS: usize = 64;
const SCALE_BRACKET: f64 = 1e8;

/// Conditional maximizer of `Q` in `σ_η²`.
///
/// Closed forms for `a = 0` and for `(a, w) = (1, 1)`; otherwise the
/// stationarity equation is bracketed on a 64-point log grid spanning
/// `[1e-8, 1e8] × σ_η²`, each local maximum is refined by bisection to
/// `1e-12` relative width and the one with the largest `Q` wins.
pub fn update_sigma_eta(
    y: &TimeSeries,
    moments: &SmoothedMoments,
    params: &ModelParams,
    par: &Parametrization,
) -> Result<f64> {
    let n = y.len();
    check_len(n, moments.len())?;
    check_len(n, par.len())?;
    let lambda = build_lambda(params.phi, n)?;
    let st = ScaleStats::new(y, moments, params, par, &lambda)?;

    if par.a == 0.0 {
        // (m − μw̃)ᵀΛ(m − μw̃) + tr(ΛV)
        let quad = st.m_lam_m - 2.0 * st.mu * st.m_lam_wt + st.mu * st.mu * st.wt_lam_wt;
        return Ok((quad + st.tr_lam_v) / st.n);
    }
    if par.a == 1.0 && par.w.iter().all(|&w| w == 1.0) {
        let r = st.ymw_m / (st.m_m + st.tr_v);
        return Ok(r * r);
    }

    let lo = params.sigma_eta_sq / SCALE_BRACKET;
    let hi = params.sigma_eta_sq * SCALE_BRACKET;
    let step = (hi / lo).ln() / (SCALE_SCAN_POINTS - 1) as f64;
    let grid: Vec<f64> = (0..SCALE_SCAN_POINTS)
        .map(|k| lo * (step * k as f64).exp())
        .collect();
    let vals: Vec<f64> = grid.iter().map(|&s| st.residual(s)).collect();

    let mut best: Option<(f64, f64)> = None;
    for k in 0..SCALE_SCAN_POINTS - 1 {
        // + to − crossings of 2s∂Q/∂s are local maxima of Q
        if !(vals[k] > 0.0 && vals[k + 1] <= 0.0) {
            continue;
        }
        let root = bisect_log(|s| st.residual(s), grid[k], grid[k + 1]);
        let q = st.q(root);
        if best.is_none_or(|(bq, _)| q > bq) {
            best = Some((q, root));
        }
    }
    best.map(|(_, s)| s).ok_or(Error::NoRoot("sigma_eta_sq"))
}

/// Bisection in `log s` on a bracket with `f(lo) > 0 ≥ f(hi)`.
fn bisect_log<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64) -> f64 {
    while hi / lo - 1.0 > 1e-12 {
        let mid = (lo * hi).sqrt();
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (lo * hi).sqrt()
}

/// Sums entering the `φ` update: `Σ_t A_t` over all `t`, over interior
/// `t`, and `Σ_t B_t`, with `A_t = ζ_t² + σ_η^{2a} V_tt` and
/// `B_t = ζ_t ζ_{t+1} + σ_η^{2a} V_{t,t+1}`.
fn phi_sums(moments: &SmoothedMoments, params: &ModelParams, par: &Parametrization) -> (f64, f64, f64) {
    let n = moments.len();
    let s = par.state_scale(params.sigma_eta_sq);
    let s2 = s * s;
    let zeta: Vec<f64> = moments
        .m
        .iter()
        .zip(&par.w)
        .map(|(mi, wi)| s * mi - params.mu * (1.0 - wi))
        .collect();
    let a: Vec<f64> = (0..n).map(|t| zeta[t] * zeta[t] + s2 * moments.v_diag[t]).collect();
    let all: f64 = a.iter().sum();
    let mid: f64 = a[1..n - 1].iter().sum();
    let b: f64 = (0..n - 1)
        .map(|t| zeta[t] * zeta[t + 1] + s2 * moments.v_offdiag[t])
        .sum();
    (all, mid, b)
}

/// Conditional maximizer of `Q` in `φ`: the root in `(−1, 1)` of
/// `A φ³ − B φ² − (A + σ_η²) φ + B = 0` (interior `A`) with the largest `Q`.
/// The cubic is `σ_η²` at `φ = −1` and `−σ_η²` at `φ = 1`, so such a root
/// always exists.
pub fn update_phi(moments: &SmoothedMoments, params: &ModelParams, par: &Parametrization) -> Result<f64> {
    check_len(moments.len(), par.len())?;
    let (all, mid, b) = phi_sums(moments, params, par);
    let se = params.sigma_eta_sq;
    let coeffs = [mid, -b, -(mid + se), b];
    let q = |phi: f64| 0.5 * (1.0 - phi * phi).ln() - (all + phi * phi * mid - 2.0 * phi * b) / (2.0 * se);
    let mut best: Option<(f64, f64)> = None;
    for root in real_cubic_roots(coeffs) {
        let root = polish_cubic(coeffs, root);
        if !(root.abs() < 1.0) {
            continue;
        }
        let val = q(root);
        let better = match best {
            None => true,
            Some((bv, br)) => {
                val > bv || (val == bv && (root - params.phi).abs() < (br - params.phi).abs())
            }
        };
        if better {
            best = Some((val, root));
        }
    }
    best.map(|(_, r)| r).ok_or(Error::NoRoot("phi"))
}

/// `Q(φ)` restricted to its `φ`-dependent part, for diagnostics and tests.
pub fn q_phi(moments: &SmoothedMoments, params: &ModelParams, par: &Parametrization, phi: f64) -> f64 {
    let (all, mid, b) = phi_sums(moments, params, par);
    0.5 * (1.0 - phi * phi).ln() - (all + phi * phi * mid - 2.0 * phi * b) / (2.0 * params.sigma_eta_sq)
}

/// Residual of the `φ` stationarity equation
/// `φσ_η² − (1−φ²) Σ B + φ(1−φ²) Σ_mid A`.
pub fn phi_equation_residual(moments: &SmoothedMoments, params: &ModelParams, par: &Parametrization, phi: f64) -> f64 {
    let (_, mid, b) = phi_sums(moments, params, par);
    phi * params.sigma_eta_sq - (1.0 - phi * phi) * b + phi * (1.0 - phi * phi) * mid
}

/// Residual of the `σ_η²` stationarity equation at `s`.
pub fn sigma_eta_equation_residual(
    y: &TimeSeries,
    moments: &SmoothedMoments,
    params: &ModelParams,
    par: &Parametrization,
    s: f64,
) -> Result<f64> {
    let lambda = build_lambda(params.phi, y.len())?;
    Ok(ScaleStats::new(y, moments, params, par, &lambda)?.residual(s))
}

fn eval_cubic(c: [f64; 4], x: f64) -> f64 {
    ((c[0] * x + c[1]) * x + c[2]) * x + c[3]
}

fn polish_cubic(c: [f64; 4], mut x: f64) -> f64 {
    for _ in 0..3 {
        let f = eval_cubic(c, x);
        let df = (3.0 * c[0] * x + 2.0 * c[1]) * x + c[2];
        if df == 0.0 || f == 0.0 {
            break;
        }
        let next = x - f / df;
        if (eval_cubic(c, next)).abs() >= f.abs() {
            break;
        }
        x = next;
    }
    x
}

/// Real roots of `c₀x³ + c₁x² + c₂x + c₃`, falling back to lower degree
/// when leading coefficients vanish.
fn real_cubic_roots(c: [f64; 4]) -> Vec<f64> {
    let scale = c.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return Vec::new();
    }
    let [a, b, cc, d] = c.map(|v| v / scale);
    if a.abs() < 1e-14 {
        return real_quadratic_roots(b, cc, d);
    }
    // depressed cubic t³ + p t + q with x = t − b/(3a)
    let (b, cc, d) = (b / a, cc / a, d / a);
    let shift = b / 3.0;
    let p = cc - b * b / 3.0;
    let q = 2.0 * b * b * b / 27.0 - b * cc / 3.0 + d;
    let disc = q * q / 4.0 + p * p * p / 27.0;
    if disc > 0.0 {
        let sq = disc.sqrt();
        let u = (-q / 2.0 + sq).cbrt();
        let v = (-q / 2.0 - sq).cbrt();
        vec![u + v - shift]
    } else if p == 0.0 {
        vec![-shift]
    } else {
        let r = (-p / 3.0).sqrt();
        let arg = (-q / (2.0 * r * r * r)).clamp(-1.0, 1.0);
        let theta = arg.acos() / 3.0;
        (0..3)
            .map(|k| 2.0 * r * (theta - 2.0 * std::f64::consts::PI * k as f64 / 3.0).cos() - shift)
            .collect()
    }
}

fn real_quadratic_roots(a: f64, b: f64, c: f64) -> Vec<f64> {
    if a.abs() < 1e-14 {
        if b == 0.0 {
            return Vec::new();
        }
        return vec![-c / b];
    }
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return Vec::new();
    }
    let sq = disc.sqrt();
    let q = -0.5 * (b + b.signum() * sq);
    if q == 0.0 {
        return vec![0.0];
    }
    vec![q / a, c / q]
}

/// Linear rate of the EM map for `μ`: `τ(w)⁻¹ ρ(w)ᵀ Ω⁻¹ ρ(w)`.
pub fn rate_location(params: &ModelParams, w: &[f64]) -> Result<f64> {
    let mats = ModelMatrices::new(params, w.len())?;
    rate_location_with(params, &mats, w)
}

pub fn rate_location_with(params: &ModelParams, mats: &ModelMatrices, w: &[f64]) -> Result<f64> {
    let (i_aug, i_mis) = location_information(params, mats, w)?;
    Ok(i_mis / i_aug)
}

/// `(I_aug, I_mis) = (τ(w), ρᵀΩ⁻¹ρ)` for `μ`.
fn location_information(params: &ModelParams, mats: &ModelMatrices, w: &[f64]) -> Result<(f64, f64)> {
    check_len(mats.len(), w.len())?;
    let t = tau(params, &mats.lambda, w)?;
    let r = rho(params, &mats.omega, w)?;
    let or = mats.omega_factor.solve(&r)?;
    Ok((t, dot(&r, &or)))
}

/// Central-difference slope of one EM update of `μ` (E-step then
/// [`update_mu`]) as a function of the incoming `μ`, at `params.mu`.
pub fn mu_map_slope(y: &TimeSeries, params: &ModelParams, par: &Parametrization, h: f64) -> Result<f64> {
    let mats = ModelMatrices::new(params, y.len())?;
    let step = |mu: f64| -> Result<f64> {
        let theta = params.with_mu(mu);
        let moments = SmoothedMoments {
            m: posterior_mean_with(y, &theta, &mats, par)?,
            v_diag: Vec::new(),
            v_offdiag: Vec::new(),
            tr_v: 0.0,
            tr_lambda_v: 0.0,
        };
        update_mu(y, &moments, &theta, par)
    };
    Ok((step(params.mu + h)? - step(params.mu - h)?) / (2.0 * h))
}

/// Entries of the augmented information matrix at `θ` under `par`.
#[derive(Clone, Copy, Debug)]
pub struct InfoEntries {
    pub i_mu: f64,
    pub i_mis_mu: f64,
    pub i_sig_eta: f64,
    pub i_sig_eps: f64,
    pub i_phi: f64,
    pub i_sig_eps_phi: f64,
}

impl InfoEntries {
    /// Fraction of missing information for `μ`.
    pub fn missing_fraction_mu(&self) -> f64 {
        self.i_mis_mu / self.i_mu
    }
}

/// Information entries. `i_phi` is always evaluated with the moments of the
/// `(a, w) = (0, 1)` scheme, which are computed here from `θ`.
pub fn info_entries(y: &TimeSeries, params: &ModelParams, par: &Parametrization) -> Result<InfoEntries> {
    let n = y.len();
    let mats = ModelMatrices::new(params, n)?;
    let (i_mu, i_mis_mu) = location_information(params, &mats, &par.w)?;
    let i_sig_eta = scale_information_with(y, params, &mats, par.a, &par.w)?
        / (2.0 * params.sigma_eta_sq * params.sigma_eta_sq);
    let i_sig_eps = n as f64 / (2.0 * params.sigma_eps_sq * params.sigma_eps_sq);
    let m01 = e_step_with(y, params, &mats, &Parametrization::new(0.0, vec![1.0; n]))?;
    let inner: f64 = (1..n - 1).map(|t| m01.m[t] * m01.m[t] + m01.v_diag[t]).sum();
    let phi2 = params.phi * params.phi;
    let i_phi = (1.0 + phi2) / ((1.0 - phi2) * (1.0 - phi2)) + inner / params.sigma_eta_sq;
    Ok(InfoEntries { i_mu, i_mis_mu, i_sig_eta, i_sig_eps, i_phi, i_sig_eps_phi: 0.0 })
}
