//! Optimal and approximate working parameters.
//!
//! Location (`μ` unknown): `w^opt = 1 − σ_ε⁻² Ω⁻¹ 1`, which removes all
//! missing information and makes the EM map for `μ` converge in one step.
//! Scale (`σ_η²` unknown): `(a^opt, w^opt)` minimize the augmented
//! information for `σ_η²` and depend on the data through
//! `z = σ_ε⁻² (y − μ1)`.

use crate::error::{check_len, Error, Result};
use crate::model::{ones_lambda_ones, ModelParams, Parametrization, TimeSeries};
use crate::tridiag::{ModelMatrices, QClosedForm};

/// Below this magnitude `a^opt` is treated as zero and the scale scheme
/// falls back to [`scale_approx`].
pub const DEGENERATE_A: f64 = 1e-10;

/// Optimal location weights together with their envelope.
#[derive(Clone, Debug)]
pub struct LocationScheme {
    pub w_opt: Vec<f64>,
    pub bounds_low: f64,
    pub bounds_high: f64,
}

impl LocationScheme {
    pub fn new(params: &ModelParams, n: usize) -> Result<Self> {
        let w_opt = w_opt_location(params, n)?;
        let (bounds_low, bounds_high) = corollary1_bounds(params);
        Ok(Self { w_opt, bounds_low, bounds_high })
    }

    pub fn parametrization(&self) -> Parametrization {
        Parametrization::new(0.0, self.w_opt.clone())
    }
}

/// `1 − σ_ε⁻² Ω⁻¹ 1` by one tridiagonal solve.
pub fn w_opt_location(params: &ModelParams, n: usize) -> Result<Vec<f64>> {
    let mats = ModelMatrices::new(params, n)?;
    w_opt_location_with(params, &mats)
}

pub fn w_opt_location_with(params: &ModelParams, mats: &ModelMatrices) -> Result<Vec<f64>> {
    let ones = vec![1.0; mats.len()];
    let s = mats.omega_factor.solve(&ones)?;
    Ok(s.iter().map(|v| 1.0 - v / params.sigma_eps_sq).collect())
}

/// Closed form
/// `w_t = {(1−φ)² + bγ(1−φ)(v_t + v_{n−t+1})} / {(1−φ)² + γ}`,
/// which only touches the first row of `Q⁻¹`; `(1+γ)⁻¹` when `φ = 0`.
pub fn w_opt_location_closed(params: &ModelParams, n: usize) -> Result<Vec<f64>> {
    params.validate()?;
    let gamma = params.gamma();
    if params.phi == 0.0 {
        if n < 2 {
            return Err(Error::InvalidParameter(format!("n must be >= 2, got {n}")));
        }
        return Ok(vec![1.0 / (1.0 + gamma); n]);
    }
    let q = QClosedForm::new(params.phi, gamma, n)?;
    let one_m_phi = 1.0 - params.phi;
    let base = one_m_phi * one_m_phi;
    Ok((0..n)
        .map(|t| (base + q.b * gamma * one_m_phi * (q.v[t] + q.v[n - 1 - t])) / (base + gamma))
        .collect())
}

/// Envelope `(low, high)` for every entry of `w^opt`.
pub fn corollary1_bounds(params: &ModelParams) -> (f64, f64) {
    let (b1, b2) = corollary1_b(params);
    if params.phi >= 0.0 {
        (1.0 - b1, 1.0 - b2)
    } else {
        (1.0 - b2, 1.0 + b2 - 2.0 * b1)
    }
}

/// `(B₁, B₂) = (γ/{(1−φ)² + γ}, γ/(1 − φ² + γ))`.
pub fn corollary1_b(params: &ModelParams) -> (f64, f64) {
    let g = params.gamma();
    let phi = params.phi;
    (g / ((1.0 - phi) * (1.0 - phi) + g), g / (1.0 - phi * phi + g))
}

/// Best single weight shared by all `t`: `{nγ/(1ᵀΛ1) + 1}⁻¹`.
pub fn w_opt_common(params: &ModelParams, n: usize) -> f64 {
    1.0 / (n as f64 * params.gamma() / ones_lambda_ones(params.phi, n) + 1.0)
}

/// Optimal scale-scheme working parameters for one `(y, θ)`.
#[derive(Clone, Debug)]
pub struct ScaleScheme {
    pub a_opt: f64,
    pub w_opt: Vec<f64>,
    pub a_hat: f64,
    pub a_approx: f64,
    pub z: Vec<f64>,
}

impl ScaleScheme {
    pub fn parametrization(&self) -> Parametrization {
        Parametrization::new(self.a_opt, self.w_opt.clone())
    }
}

/// Optimal `(a, w)` for the `σ_η²` update.
///
/// For `μ = 0` the information does not depend on `w`, so the supplied `w`
/// is returned unchanged with `a = {1 + (2nσ_ε⁴)⁻¹ yᵀΩ⁻¹y}⁻¹`. Otherwise
/// `a = 1 − (nσ_η²)⁻¹ zᵀΩ⁻¹ΛΩ⁻¹z` and
/// `w̃ = (μΩ)⁻¹ {2ΛΩ⁻¹z/(aσ_η²) − z}`; a vanishing `a` is reported as
/// [`Error::DegenerateScale`].
pub fn scale_opt(y: &TimeSeries, params: &ModelParams, w: &[f64]) -> Result<ScaleScheme> {
    let mats = ModelMatrices::new(params, y.len())?;
    scale_opt_with(y, params, &mats, w)
}

pub fn scale_opt_with(
    y: &TimeSeries,
    params: &ModelParams,
    mats: &ModelMatrices,
    w: &[f64],
) -> Result<ScaleScheme> {
    let n = y.len();
    check_len(n, w.len())?;
    check_len(n, mats.len())?;
    let nf = n as f64;
    let gamma = params.gamma();
    let a_hat = a_hat_asymptotic(gamma, params.phi);
    let a_approx = scale_approx(gamma, params.phi);
    let z: Vec<f64> = y
        .values()
        .iter()
        .map(|v| (v - params.mu) / params.sigma_eps_sq)
        .collect();
    let g = mats.omega_factor.solve(&z)?;

    if params.mu == 0.0 {
        // yᵀΩ⁻¹y = σ_ε⁴ zᵀΩ⁻¹z
        let zgz: f64 = z.iter().zip(&g).map(|(a, b)| a * b).sum();
        let a_opt = 1.0 / (1.0 + zgz / (2.0 * nf));
        return Ok(ScaleScheme { a_opt, w_opt: w.to_vec(), a_hat, a_approx, z });
    }

    let lg = mats.lambda.mul_vec(&g)?;
    let glg: f64 = g.iter().zip(&lg).map(|(a, b)| a * b).sum();
    let a_opt = 1.0 - glg / (nf * params.sigma_eta_sq);
    if a_opt.abs() < DEGENERATE_A {
        return Err(Error::DegenerateScale(a_opt));
    }
    let rhs: Vec<f64> = lg
        .iter()
        .zip(&z)
        .map(|(l, zi)| 2.0 * l / (a_opt * params.sigma_eta_sq) - zi)
        .collect();
    let w_tilde = mats.omega_factor.solve(&rhs)?;
    let w_opt = w_tilde.iter().map(|wt| 1.0 - wt / params.mu).collect();
    Ok(ScaleScheme { a_opt, w_opt, a_hat, a_approx, z })
}

/// The quantity `I` with `I_{σ_η², σ_η²} = I / (2σ_η⁴)`:
///
/// `I = μ²a² w̃ᵀΩw̃/2 + μa² zᵀw̃ − 2σ_η⁻² aμ zᵀΩ⁻¹Λw̃ + n(1−a)² + a² zᵀΩ⁻¹z/2`.
pub fn scale_information(y: &TimeSeries, params: &ModelParams, a: f64, w: &[f64]) -> Result<f64> {
    let mats = ModelMatrices::new(params, y.len())?;
    scale_information_with(y, params, &mats, a, w)
}

pub fn scale_information_with(
    y: &TimeSeries,
    params: &ModelParams,
    mats: &ModelMatrices,
    a: f64,
    w: &[f64],
) -> Result<f64> {
    let n = y.len();
    check_len(n, w.len())?;
    let mu = params.mu;
    let w_tilde: Vec<f64> = w.iter().map(|v| 1.0 - v).collect();
    let z: Vec<f64> = y.values().iter().map(|v| (v - mu) / params.sigma_eps_sq).collect();
    let g = mats.omega_factor.solve(&z)?;
    let wow = mats.omega.bilinear(&w_tilde, &w_tilde)?;
    let zw: f64 = z.iter().zip(&w_tilde).map(|(a, b)| a * b).sum();
    let glw = mats.lambda.bilinear(&g, &w_tilde)?;
    let zgz: f64 = z.iter().zip(&g).map(|(a, b)| a * b).sum();
    Ok(0.5 * mu * mu * a * a * wow + mu * a * a * zw - 2.0 * a * mu * glw / params.sigma_eta_sq
        + n as f64 * (1.0 - a) * (1.0 - a)
        + 0.5 * a * a * zgz)
}

/// Large-`n` limit `1 − γ [{(1−φ)² + γ}{(1+φ)² + γ}]^{−1/2}`.
pub fn a_hat_asymptotic(gamma: f64, phi: f64) -> f64 {
    let lo = (1.0 - phi) * (1.0 - phi) + gamma;
    let hi = (1.0 + phi) * (1.0 + phi) + gamma;
    1.0 - gamma / (lo * hi).sqrt()
}

/// `a = [1 + γ/{2(1 − φ²)}]⁻¹`, to be paired with `w = 1`.
pub fn scale_approx(gamma: f64, phi: f64) -> f64 {
    1.0 / (1.0 + gamma / (2.0 * (1.0 - phi * phi)))
}

/// `(scale_approx(γ, φ), 1)` as a parametrization of length `n`.
pub fn scale_approx_parametrization(params: &ModelParams, n: usize) -> Parametrization {
    Parametrization::new(scale_approx(params.gamma(), params.phi), vec![1.0; n])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::simulate;
    use crate::oracle::{
        dense_invert, dense_lambda, dense_quadratic_argmin, dot, golden_max_q, DenseMatrix,
    };
    use proptest::prelude::*;

    fn params(phi: f64, gamma: f64) -> ModelParams {
        ModelParams::new(0.0, gamma * 0.5, 0.5, phi).unwrap()
    }

    fn dense_w_opt(p: &ModelParams, n: usize) -> Vec<f64> {
        let omega = dense_lambda(p.phi, n)
            .scale(1.0 / p.sigma_eta_sq)
            .plus(&DenseMatrix::identity(n).scale(1.0 / p.sigma_eps_sq));
        let inv = dense_invert(&omega).unwrap();
        inv.mul_vec(&vec![1.0; n]).iter().map(|v| 1.0 - v / p.sigma_eps_sq).collect()
    }

    #[test]
    fn phi_zero_constant() {
        for (g, expect) in [(1.0, 0.5), (9.0, 0.1)] {
            let w = w_opt_location(&params(0.0, g), 6).unwrap();
            assert!(w.iter().all(|v| (v - expect).abs() < 1e-12));
            let w = w_opt_location_closed(&params(0.0, g), 6).unwrap();
            assert!(w.iter().all(|v| (v - expect).abs() < 1e-15));
        }
    }

    #[test]
    fn location_matches_dense_and_closed_form() {
        let p = params(0.5, 1.0);
        let w = w_opt_location(&p, 10).unwrap();
        let wd = dense_w_opt(&p, 10);
        let wc = w_opt_location_closed(&p, 10).unwrap();
        for t in 0..10 {
            assert!((w[t] - wd[t]).abs() < 1e-10);
            assert!((w[t] - wc[t]).abs() < 1e-10);
            assert_eq!(wc[t], wc[9 - t]);
        }
    }

    #[test]
    fn closed_form_agrees_on_grid() {
        for n in [2usize, 3, 7, 20, 50] {
            for phi in [-0.99, -0.5, -0.1, 0.1, 0.5, 0.99] {
                for g in [0.1, 1.0, 10.0] {
                    let p = params(phi, g);
                    let w = w_opt_location(&p, n).unwrap();
                    let wc = w_opt_location_closed(&p, n).unwrap();
                    for t in 0..n {
                        assert!((w[t] - wc[t]).abs() < 1e-10, "n={n} phi={phi} g={g}");
                    }
                }
            }
        }
    }

    #[test]
    fn near_unit_root_goes_to_zero() {
        let w = w_opt_location_closed(&params(0.999, 1.0), 50).unwrap();
        assert!(w.iter().all(|&v| v < 0.01));
    }

    #[test]
    fn bounds_examples() {
        let (lo, hi) = corollary1_bounds(&params(0.0, 1.0));
        assert!((lo - 0.5).abs() < 1e-15 && (hi - 0.5).abs() < 1e-15);
        let p = params(0.5, 1.0);
        let (b1, b2) = corollary1_b(&p);
        assert!((b1 - 0.8).abs() < 1e-15);
        assert!((b2 - 4.0 / 7.0).abs() < 1e-15);
        let (lo, hi) = corollary1_bounds(&p);
        assert!((lo - 0.2).abs() < 1e-15);
        assert!((hi - 3.0 / 7.0).abs() < 1e-15);
    }

    #[test]
    fn entries_within_bounds_on_grid() {
        for n in [2usize, 5, 10, 40] {
            for phi in [-0.95, -0.6, -0.2, 0.0, 0.2, 0.6, 0.95] {
                for g in [0.05, 0.5, 3.0, 20.0] {
                    let s = LocationScheme::new(&params(phi, g), n).unwrap();
                    for &w in &s.w_opt {
                        assert!(w >= s.bounds_low - 1e-12 && w <= s.bounds_high + 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn common_weight_examples() {
        let p = params(0.0, 3.0);
        assert!((w_opt_common(&p, 9) - 0.25).abs() < 1e-15);
        let p = params(0.5, 1.0);
        assert!((w_opt_common(&p, 10) - 3.0 / 13.0).abs() < 1e-15);
    }

    #[test]
    fn common_weight_minimizes_rate_among_constants() {
        // the rate along constant vectors is smallest at w_opt_common
        use crate::em::rate_location;
        let p = params(0.7, 2.0);
        let n = 12;
        let best = w_opt_common(&p, n);
        let rate = |c: f64| rate_location(&p, &vec![c; n]).unwrap();
        let found = golden_max_q(|c| -rate(c), -1.0, 2.0, 1e-10);
        assert!((found - best).abs() < 1e-5);
        assert!(rate(best) > 0.0);
    }

    #[test]
    fn a_hat_examples() {
        for g in [0.1, 1.0, 7.0] {
            assert!((a_hat_asymptotic(g, 0.0) - 1.0 / (1.0 + g)).abs() < 1e-15);
        }
        assert!((a_hat_asymptotic(1e-12, 0.4) - 1.0).abs() < 1e-11);
    }

    #[test]
    fn scale_approx_examples() {
        assert!((scale_approx(2.0, 0.0) - 0.5).abs() < 1e-15);
        assert!((scale_approx(1e-12, 0.3) - 1.0).abs() < 1e-11);
        let a = scale_approx(10.0, 0.95);
        assert!((a - 1.0 / (1.0 + 10.0 / (2.0 * 0.0975))).abs() < 1e-15);
        assert!((a - 0.01913).abs() < 1e-5);
    }

    #[test]
    fn scale_zero_mean_branch() {
        let p = ModelParams::new(0.0, 0.4, 0.2, 0.6).unwrap();
        let y = TimeSeries::new(vec![0.0; 7]).unwrap();
        let s = scale_opt(&y, &p, &[0.3; 7]).unwrap();
        assert_eq!(s.a_opt, 1.0);

        let y = simulate(&p, 50, 3).unwrap();
        let w1 = vec![0.0; 50];
        let w2: Vec<f64> = (0..50).map(|t| (t as f64).cos()).collect();
        let s1 = scale_opt(&y, &p, &w1).unwrap();
        let s2 = scale_opt(&y, &p, &w2).unwrap();
        assert_eq!(s1.a_opt, s2.a_opt);
        assert_eq!(s2.w_opt, w2);
        assert!(s1.a_opt > 0.0 && s1.a_opt <= 1.0);
        // information is flat in w when μ = 0
        let i1 = scale_information(&y, &p, 0.4, &w1).unwrap();
        let i2 = scale_information(&y, &p, 0.4, &w2).unwrap();
        assert!((i1 - i2).abs() < 1e-9 * i1.abs());
    }

    /// For fixed `a`, `I` is a quadratic in `w̃` with Hessian `μ²a²Ω` and
    /// gradient `μa² z − 2σ_η⁻² aμ ΛΩ⁻¹z`; minimize it densely, then run a
    /// golden-section search over `a` on the profile.
    #[test]
    fn scale_opt_matches_dense_minimization() {
        let n = 8;
        let p = ModelParams::new(1.0, 0.5, 0.5, 0.5).unwrap();
        let y = simulate(&p, n, 17).unwrap();
        let (mu, se, sh) = (p.mu, p.sigma_eps_sq, p.sigma_eta_sq);
        let lam = dense_lambda(p.phi, n);
        let omega = lam.scale(1.0 / sh).plus(&DenseMatrix::identity(n).scale(1.0 / se));
        let oinv = dense_invert(&omega).unwrap();
        let z: Vec<f64> = y.values().iter().map(|v| (v - mu) / se).collect();
        let g = oinv.mul_vec(&z);
        let lg = lam.mul_vec(&g);
        let zgz = dot(&z, &g);
        let profile = |a: f64| -> (f64, Vec<f64>) {
            let h = omega.scale(mu * mu * a * a);
            let grad: Vec<f64> = z
                .iter()
                .zip(&lg)
                .map(|(zi, li)| mu * a * a * zi - 2.0 * a * mu * li / sh)
                .collect();
            let wt = dense_quadratic_argmin(&h, &grad);
            let val = 0.5 * h.quad(&wt, &wt) + dot(&grad, &wt) + n as f64 * (1.0 - a) * (1.0 - a)
                + 0.5 * a * a * zgz;
            (val, wt)
        };
        let a_star = golden_max_q(|a| -profile(a).0, 0.05, 1.0, 1e-12);
        let (_, wt_star) = profile(a_star);

        let s = scale_opt(&y, &p, &vec![0.0; n]).unwrap();
        assert!((s.a_opt - a_star).abs() < 1e-6, "{} vs {}", s.a_opt, a_star);
        for t in 0..n {
            assert!(((1.0 - s.w_opt[t]) - wt_star[t]).abs() < 1e-6);
        }
        assert!(s.a_opt <= 1.0);
    }

    #[test]
    fn degenerate_scale_is_reported() {
        // pick μ and a y that put zᵀΩ⁻¹ΛΩ⁻¹z exactly at nσ_η²
        let p = ModelParams::new(1.0, 0.3, 0.2, 0.4).unwrap();
        let n = 6;
        let y0 = simulate(&p, n, 2).unwrap();
        let mats = ModelMatrices::new(&p, n).unwrap();
        let z: Vec<f64> = y0.values().iter().map(|v| (v - p.mu) / p.sigma_eps_sq).collect();
        let g = mats.omega_factor.solve(&z).unwrap();
        let glg = mats.lambda.bilinear(&g, &g).unwrap();
        let scale = (n as f64 * p.sigma_eta_sq / glg).sqrt();
        let y = TimeSeries::new(
            y0.values().iter().map(|v| p.mu + (v - p.mu) * scale).collect(),
        )
        .unwrap();
        match scale_opt(&y, &p, &vec![0.0; n]) {
            Err(Error::DegenerateScale(a)) => assert!(a.abs() < DEGENERATE_A),
            other => panic!("expected degenerate scale, got {other:?}"),
        }
    }

    proptest! {
        #[test]
        fn a_hat_is_even_in_phi(g in 0.001f64..100.0, phi in -0.999f64..0.999) {
            prop_assert_eq!(a_hat_asymptotic(g, phi), a_hat_asymptotic(g, -phi));
        }

        #[test]
        fn a_hat_decreases_in_gamma(g in 0.001f64..50.0, dg in 0.01f64..5.0, phi in -0.99f64..0.99) {
            prop_assert!(a_hat_asymptotic(g + dg, phi) < a_hat_asymptotic(g, phi));
            let a = a_hat_asymptotic(g, phi);
            prop_assert!(a > 0.0 && a < 1.0);
        }
    }
}
