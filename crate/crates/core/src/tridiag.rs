//! Symmetric tridiagonal algebra.
//!
//! Everything the fitting code needs from the state precision matrices
//! (solves, log-determinants, the diagonal and first off-diagonal of the
//! inverse, exact Gaussian draws) goes through an `L·D·Lᵀ` factorization in
//! O(n). The closed-form inverse of the scaled posterior precision
//! `Q = σ_η² Ω / |φ|` lives here as well, in [`QClosedForm`].

use crate::error::{check_len, Error, Result};
use crate::model::ModelParams;

/// Pivots at or below this value are treated as a failed factorization.
pub const PIVOT_FLOOR: f64 = 1e-300;

/// Symmetric tridiagonal matrix; only the first off-diagonal is stored.
#[derive(Clone, Debug, PartialEq)]
pub struct SymTridiag {
    diag: Vec<f64>,
    offdiag: Vec<f64>,
}

impl SymTridiag {
    pub fn new(diag: Vec<f64>, offdiag: Vec<f64>) -> Result<Self> {
        if diag.len() < 2 {
            return Err(Error::InvalidParameter(format!(
                "tridiagonal matrix needs n >= 2, got {}",
                diag.len()
            )));
        }
        check_len(diag.len() - 1, offdiag.len())?;
        Ok(Self { diag, offdiag })
    }

    pub fn identity(n: usize) -> Result<Self> {
        Self::new(vec![1.0; n], vec![0.0; n.saturating_sub(1)])
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    pub fn diag(&self) -> &[f64] {
        &self.diag
    }

    pub fn offdiag(&self) -> &[f64] {
        &self.offdiag
    }

    /// `self * x`.
    pub fn mul_vec(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len(self.len(), x.len())?;
        let n = self.len();
        let mut out = vec![0.0; n];
        for i in 0..n {
            let mut acc = self.diag[i] * x[i];
            if i > 0 {
                acc += self.offdiag[i - 1] * x[i - 1];
            }
            if i + 1 < n {
                acc += self.offdiag[i] * x[i + 1];
            }
            out[i] = acc;
        }
        Ok(out)
    }

    /// Bilinear form `xᵀ M y`.
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        check_len(self.len(), x.len())?;
        check_len(self.len(), y.len())?;
        let mut acc = 0.0;
        for i in 0..self.len() {
            acc += self.diag[i] * x[i] * y[i];
        }
        for i in 0..self.offdiag.len() {
            acc += self.offdiag[i] * (x[i] * y[i + 1] + x[i + 1] * y[i]);
        }
        Ok(acc)
    }

    /// `tr(M V)` for symmetric `V` given by its diagonal and first
    /// off-diagonal; the other entries of `V` do not contribute.
    pub fn trace_product(&self, inv: &SelectedInverse) -> f64 {
        let d: f64 = self
            .diag
            .iter()
            .zip(&inv.inv_diag)
            .map(|(a, b)| a * b)
            .sum();
        let o: f64 = self
            .offdiag
            .iter()
            .zip(&inv.inv_offdiag)
            .map(|(a, b)| a * b)
            .sum();
        d + 2.0 * o
    }

    /// `alpha * self + beta * I`.
    pub fn scaled_shift(&self, alpha: f64, beta: f64) -> Self {
        Self {
            diag: self.diag.iter().map(|d| alpha * d + beta).collect(),
            offdiag: self.offdiag.iter().map(|o| alpha * o).collect(),
        }
    }

    pub fn factorize(&self) -> Result<TridiagFactor> {
        factorize(self)
    }
}

/// `L·D·Lᵀ` factors of a symmetric positive definite tridiagonal matrix.
/// `L` is unit lower bidiagonal with subdiagonal `l`.
#[derive(Clone, Debug)]
pub struct TridiagFactor {
    pub d: Vec<f64>,
    pub l: Vec<f64>,
}

/// Diagonal and first off-diagonal of the inverse matrix.
#[derive(Clone, Debug)]
pub struct SelectedInverse {
    pub inv_diag: Vec<f64>,
    pub inv_offdiag: Vec<f64>,
}

impl SelectedInverse {
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            inv_diag: self.inv_diag.iter().map(|v| v * factor).collect(),
            inv_offdiag: self.inv_offdiag.iter().map(|v| v * factor).collect(),
        }
    }

    pub fn trace(&self) -> f64 {
        self.inv_diag.iter().sum()
    }
}

/// Stationary AR(1) precision stencil: diagonal `(1, 1+φ², …, 1+φ², 1)`,
/// off-diagonal `−φ`. Its determinant is `1 − φ²` for every `n`.
pub fn build_lambda(phi: f64, n: usize) -> Result<SymTridiag> {
    if !(phi.abs() < 1.0) {
        return Err(Error::InvalidParameter(format!("|phi| must be < 1, got {phi}")));
    }
    if n < 2 {
        return Err(Error::InvalidParameter(format!("n must be >= 2, got {n}")));
    }
    let mut diag = vec![1.0 + phi * phi; n];
    diag[0] = 1.0;
    diag[n - 1] = 1.0;
    SymTridiag::new(diag, vec![-phi; n - 1])
}

/// Posterior precision of the latent states, `Ω = σ_ε⁻² I + σ_η⁻² Λ`.
pub fn build_omega(params: &ModelParams, n: usize) -> Result<SymTridiag> {
    let lambda = build_lambda(params.phi, n)?;
    Ok(lambda.scaled_shift(1.0 / params.sigma_eta_sq, 1.0 / params.sigma_eps_sq))
}

/// `Λ`, `Ω` and the factorization of `Ω` for one `(θ, n)`.
#[derive(Clone, Debug)]
pub struct ModelMatrices {
    pub lambda: SymTridiag,
    pub omega: SymTridiag,
    pub omega_factor: TridiagFactor,
}

impl ModelMatrices {
    pub fn new(params: &ModelParams, n: usize) -> Result<Self> {
        params.validate()?;
        let lambda = build_lambda(params.phi, n)?;
        let omega = lambda.scaled_shift(1.0 / params.sigma_eta_sq, 1.0 / params.sigma_eps_sq);
        let omega_factor = omega.factorize()?;
        Ok(Self { lambda, omega, omega_factor })
    }

    pub fn len(&self) -> usize {
        self.lambda.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambda.is_empty()
    }
}

pub fn factorize(m: &SymTridiag) -> Result<TridiagFactor> {
    let n = m.len();
    let mut d = vec![0.0; n];
    let mut l = vec![0.0; n - 1];
    d[0] = m.diag[0];
    if !(d[0] > PIVOT_FLOOR) {
        return Err(Error::NotPositiveDefinite { row: 0, pivot: d[0] });
    }
    for i in 0..n - 1 {
        l[i] = m.offdiag[i] / d[i];
        let next = m.diag[i + 1] - l[i] * m.offdiag[i];
        if !(next > PIVOT_FLOOR) {
            return Err(Error::NotPositiveDefinite { row: i + 1, pivot: next });
        }
        d[i + 1] = next;
    }
    Ok(TridiagFactor { d, l })
}

impl TridiagFactor {
    pub fn len(&self) -> usize {
        self.d.len()
    }

    pub fn is_empty(&self) -> bool {
        self.d.is_empty()
    }

    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        solve(self, rhs)
    }

    pub fn selected_inverse(&self) -> SelectedInverse {
        selected_inverse(self)
    }

    pub fn log_det(&self) -> f64 {
        log_det(self)
    }

    /// Maps a standard normal vector `e` to `L⁻ᵀ D^{-1/2} e`, whose covariance
    /// is the inverse of the factored matrix.
    pub fn correlate(&self, e: &[f64]) -> Result<Vec<f64>> {
        check_len(self.len(), e.len())?;
        let n = self.len();
        let mut x: Vec<f64> = e
            .iter()
            .zip(&self.d)
            .map(|(ei, di)| ei / di.sqrt())
            .collect();
        for i in (0..n - 1).rev() {
            x[i] -= self.l[i] * x[i + 1];
        }
        Ok(x)
    }
}

pub fn solve(f: &TridiagFactor, rhs: &[f64]) -> Result<Vec<f64>> {
    check_len(f.len(), rhs.len())?;
    let n = f.len();
    let mut x = rhs.to_vec();
    for i in 1..n {
        x[i] -= f.l[i - 1] * x[i - 1];
    }
    for (xi, di) in x.iter_mut().zip(&f.d) {
        *xi /= di;
    }
    for i in (0..n - 1).rev() {
        x[i] -= f.l[i] * x[i + 1];
    }
    Ok(x)
}

/// Backward recursion for the tridiagonal band of the inverse.
pub fn selected_inverse(f: &TridiagFactor) -> SelectedInverse {
    let n = f.len();
    let mut inv_diag = vec![0.0; n];
    let mut inv_offdiag = vec![0.0; n - 1];
    inv_diag[n - 1] = 1.0 / f.d[n - 1];
    for i in (0..n - 1).rev() {
        inv_offdiag[i] = -f.l[i] * inv_diag[i + 1];
        inv_diag[i] = 1.0 / f.d[i] - f.l[i] * inv_offdiag[i];
    }
    SelectedInverse { inv_diag, inv_offdiag }
}

pub fn log_det(f: &TridiagFactor) -> f64 {
    let mut acc = 0.0;
    let mut prod = 1.0f64;
    for &d in &f.d {
        prod *= d;
        if !(1e-150..=1e150).contains(&prod) {
            acc += prod.ln();
            prod = 1.0;
        }
    }
    acc + prod.ln()
}

/// Closed-form inverse of `Q = σ_η² Ω / |φ|` (diagonal `(c₁, c, …, c, c₁)`,
/// off-diagonal `−b`), where `Q⁻¹[t][j] = u_t v_j` for `t ≤ j`.
///
/// The sequences `κ_t` grow like `r₊ᵗ`, so they are stored divided by that
/// growth: `kappa_seq[t] = κ_t / r₊ᵗ` and `kappa = κ / r₊ⁿ⁻¹`. `v` is stored
/// as is (it decays), while `u` grows and can overflow for long series;
/// [`QClosedForm::inverse_entry`] works with the scaled pair instead.
#[derive(Clone, Debug)]
pub struct QClosedForm {
    pub n: usize,
    pub phi: f64,
    pub gamma: f64,
    pub b: f64,
    pub c1: f64,
    pub c: f64,
    pub r_plus: f64,
    pub r_minus: f64,
    pub v_plus: f64,
    pub v_minus: f64,
    pub kappa: f64,
    pub kappa_seq: Vec<f64>,
    pub v: Vec<f64>,
    pub u: Vec<f64>,
    u_scaled: Vec<f64>,
    v_scaled: Vec<f64>,
}

pub fn q_closed_form(params: &ModelParams, n: usize) -> Result<QClosedForm> {
    QClosedForm::new(params.phi, params.gamma(), n)
}

impl QClosedForm {
    pub fn new(phi: f64, gamma: f64, n: usize) -> Result<Self> {
        if phi == 0.0 {
            return Err(Error::ZeroPhi);
        }
        if !(phi.abs() < 1.0) || !(gamma > 0.0) || n < 2 {
            return Err(Error::InvalidParameter(format!(
                "need |phi| < 1, gamma > 0, n >= 2; got phi={phi}, gamma={gamma}, n={n}"
            )));
        }
        let abs_phi = phi.abs();
        let b = phi.signum();
        let c1 = (1.0 + gamma) / abs_phi;
        let c = c1 + abs_phi;
        let r_plus = 0.5 * (c + (c * c - 4.0).sqrt());
        let r_minus = 1.0 / r_plus;
        let v_plus = r_plus - abs_phi;
        let v_minus = r_minus - abs_phi;
        // ratio = r₋/r₊ ∈ (0, 1)
        let ratio = r_minus * r_minus;

        let kappa_seq: Vec<f64> = (0..n)
            .map(|t| v_plus - v_minus * ratio.powi(t as i32))
            .collect();
        let kappa = v_plus * v_plus - v_minus * v_minus * ratio.powi(n as i32 - 1);
        let kappa0 = kappa_seq[0];

        let sign = |t: usize| if t.is_multiple_of(2) || b > 0.0 { 1.0 } else { -1.0 };
        // u_t = b^{t-1} κ_{t-1}/κ₀ = r₊^{t-1} ũ_t,  v_t = b^{t-1} κ_{n-t}/κ = r₋^{t-1} ṽ_t
        let u_scaled: Vec<f64> = (0..n).map(|t| sign(t) * kappa_seq[t] / kappa0).collect();
        let v_scaled: Vec<f64> = (0..n)
            .map(|t| sign(t) * kappa_seq[n - 1 - t] / kappa)
            .collect();
        let u = u_scaled
            .iter()
            .enumerate()
            .map(|(t, us)| us * r_plus.powi(t as i32))
            .collect();
        let v = v_scaled
            .iter()
            .enumerate()
            .map(|(t, vs)| vs * r_minus.powi(t as i32))
            .collect();

        Ok(Self {
            n,
            phi,
            gamma,
            b,
            c1,
            c,
            r_plus,
            r_minus,
            v_plus,
            v_minus,
            kappa,
            kappa_seq,
            v,
            u,
            u_scaled,
            v_scaled,
        })
    }

    /// `κ₀ = r₊ − r₋ = (c² − 4)^{1/2}`.
    pub fn kappa0(&self) -> f64 {
        self.kappa_seq[0]
    }

    /// Entry `(t, j)` of `Q⁻¹` (0-based, either order).
    pub fn inverse_entry(&self, t: usize, j: usize) -> f64 {
        let (lo, hi) = if t <= j { (t, j) } else { (j, t) };
        self.u_scaled[lo] * self.v_scaled[hi] * self.r_minus.powi((hi - lo) as i32)
    }

    /// Sum of row `t` (0-based) of `Q⁻¹`.
    pub fn row_sum(&self, t: usize) -> Result<f64> {
        q_row_sum(self, t)
    }

    pub fn traces(&self) -> (f64, f64) {
        q_traces(self)
    }
}

/// `s_t = (2b − c)⁻¹ {b(1 − φ)(v_t + v_{n−t+1}) − 1}` for 0-based `t`.
pub fn q_row_sum(qcf: &QClosedForm, t: usize) -> Result<f64> {
    let n = qcf.n;
    if t >= n {
        return Err(Error::IndexOutOfRange { index: t, len: n });
    }
    let QClosedForm { b, c, phi, .. } = *qcf;
    Ok((b * (1.0 - phi) * (qcf.v[t] + qcf.v[n - 1 - t]) - 1.0) / (2.0 * b - c))
}

/// `(tr Q⁻¹, tr Q⁻²)`. Both closed forms are evaluated after dividing
/// numerator and denominator by the dominant power of `r₊`.
pub fn q_traces(qcf: &QClosedForm) -> (f64, f64) {
    let n = qcf.n as f64;
    let ni = qcf.n as i32;
    let QClosedForm {
        gamma,
        phi,
        c,
        r_plus,
        r_minus,
        v_plus,
        v_minus,
        ..
    } = *qcf;
    let k0 = qcf.kappa0();
    let rho = r_minus * r_minus;
    let vp2 = v_plus * v_plus;
    let vm2 = v_minus * v_minus;
    // κ / r₊ⁿ⁻¹
    let kappa = vp2 - vm2 * rho.powi(ni - 1);

    let tr1 = (n * k0 * (vp2 + vm2 * rho.powi(ni - 1))
        + 2.0 * gamma * r_plus * (1.0 - rho.powi(ni)))
        / (k0 * k0 * kappa);

    let phi2m1 = phi * phi - 1.0;
    let rho_2n2 = rho.powi(2 * ni - 2);
    let constant = 4.0 * n * n * gamma * gamma + 8.0 * n * gamma * phi2m1
        - 4.0 * gamma * (1.0 + phi * phi)
        + 2.0 * phi2m1 * phi2m1
        + 16.0 * gamma * gamma / (k0 * k0);
    let s = constant * rho.powi(ni - 1)
        + n * c * (vp2 * vp2 - vm2 * vm2 * rho_2n2) / k0
        + 4.0 * gamma * c * (vp2 * r_plus + vm2 * r_minus * rho_2n2) / (k0 * k0)
        + 2.0 * phi2m1 * (vp2 * r_plus - vm2 * r_minus * rho_2n2) / k0;
    let tr2 = s / (k0 * k0 * kappa * kappa);
    (tr1, tr2)
}
