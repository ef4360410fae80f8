//! Dense brute-force reference computations used only by tests.
//!
//! Nothing in here calls into the library: matrices are built entrywise
//! from the model definition and inverted by textbook Gaussian elimination,
//! so agreement with the O(n) code paths is evidence rather than tautology.

#![allow(dead_code)]

#[derive(Clone, Debug)]
pub struct DenseMatrix {
    n: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(n: usize) -> Self {
        Self { n, data: vec![0.0; n * n] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
    }

    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] += v;
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| (0..self.n).map(|j| self.get(i, j) * x[j]).sum())
            .collect()
    }

    pub fn matmul(&self, other: &DenseMatrix) -> DenseMatrix {
        let n = self.n;
        let mut out = DenseMatrix::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                for j in 0..n {
                    out.add(i, j, a * other.get(k, j));
                }
            }
        }
        out
    }

    pub fn scale(&self, s: f64) -> DenseMatrix {
        DenseMatrix { n: self.n, data: self.data.iter().map(|v| v * s).collect() }
    }

    pub fn plus(&self, other: &DenseMatrix) -> DenseMatrix {
        DenseMatrix {
            n: self.n,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        }
    }

    pub fn trace(&self) -> f64 {
        (0..self.n).map(|i| self.get(i, i)).sum()
    }

    pub fn quad(&self, x: &[f64], y: &[f64]) -> f64 {
        dot(x, &self.mul_vec(y))
    }

    /// Determinant by elimination with partial pivoting.
    pub fn determinant(&self) -> f64 {
        let n = self.n;
        let mut a = self.data.clone();
        let mut det = 1.0;
        for col in 0..n {
            let piv = (col..n)
                .max_by(|&p, &q| a[p * n + col].abs().partial_cmp(&a[q * n + col].abs()).unwrap())
                .unwrap();
            if a[piv * n + col] == 0.0 {
                return 0.0;
            }
            if piv != col {
                for j in 0..n {
                    a.swap(piv * n + j, col * n + j);
                }
                det = -det;
            }
            let p = a[col * n + col];
            det *= p;
            for r in col + 1..n {
                let f = a[r * n + col] / p;
                for j in col..n {
                    a[r * n + j] -= f * a[col * n + j];
                }
            }
        }
        det
    }

    pub fn log_det(&self) -> f64 {
        let n = self.n;
        let mut a = self.data.clone();
        let mut acc = 0.0;
        for col in 0..n {
            let piv = (col..n)
                .max_by(|&p, &q| a[p * n + col].abs().partial_cmp(&a[q * n + col].abs()).unwrap())
                .unwrap();
            if piv != col {
                for j in 0..n {
                    a.swap(piv * n + j, col * n + j);
                }
            }
            let p = a[col * n + col];
            acc += p.abs().ln();
            for r in col + 1..n {
                let f = a[r * n + col] / p;
                for j in col..n {
                    a[r * n + j] -= f * a[col * n + j];
                }
            }
        }
        acc
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn dense_from_tridiag(diag: &[f64], offdiag: &[f64]) -> DenseMatrix {
    let n = diag.len();
    let mut m = DenseMatrix::zeros(n);
    for i in 0..n {
        m.set(i, i, diag[i]);
        if i + 1 < n {
            m.set(i, i + 1, offdiag[i]);
            m.set(i + 1, i, offdiag[i]);
        }
    }
    m
}

/// Gauss–Jordan inversion with partial pivoting.
pub fn dense_invert(m: &DenseMatrix) -> Result<DenseMatrix, String> {
    let n = m.n;
    let mut a = m.data.clone();
    let mut inv = DenseMatrix::identity(n).data;
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&p, &q| a[p * n + col].abs().partial_cmp(&a[q * n + col].abs()).unwrap())
            .unwrap();
        if a[piv * n + col].abs() < 1e-300 {
            return Err(format!("singular matrix at column {col}"));
        }
        if piv != col {
            for j in 0..n {
                a.swap(piv * n + j, col * n + j);
                inv.swap(piv * n + j, col * n + j);
            }
        }
        let p = a[col * n + col];
        for j in 0..n {
            a[col * n + j] /= p;
            inv[col * n + j] /= p;
        }
        for r in 0..n {
            if r == col {
                continue;
            }
            let f = a[r * n + col];
            if f == 0.0 {
                continue;
            }
            for j in 0..n {
                a[r * n + j] -= f * a[col * n + j];
                inv[r * n + j] -= f * inv[col * n + j];
            }
        }
    }
    Ok(DenseMatrix { n, data: inv })
}

/// Stationary AR(1) precision built entrywise.
pub fn dense_lambda(phi: f64, n: usize) -> DenseMatrix {
    let mut m = DenseMatrix::zeros(n);
    for i in 0..n {
        let edge = i == 0 || i == n - 1;
        m.set(i, i, if edge { 1.0 } else { 1.0 + phi * phi });
        if i + 1 < n {
            m.set(i, i + 1, -phi);
            m.set(i + 1, i, -phi);
        }
    }
    m
}

/// Stationary AR(1) covariance `σ² φ^{|i−j|}/(1−φ²)`, independent of the
/// precision stencil.
pub fn dense_ar1_cov(phi: f64, sigma_eta_sq: f64, n: usize) -> DenseMatrix {
    let mut m = DenseMatrix::zeros(n);
    for i in 0..n {
        for j in 0..n {
            let k = (i as i32 - j as i32).unsigned_abs() as i32;
            m.set(i, j, sigma_eta_sq * phi.powi(k) / (1.0 - phi * phi));
        }
    }
    m
}

/// Marginal covariance of `y`: `σ_ε² I + σ_η² Λ⁻¹`.
pub fn dense_marginal_cov(sigma_eta_sq: f64, sigma_eps_sq: f64, phi: f64, n: usize) -> DenseMatrix {
    dense_ar1_cov(phi, sigma_eta_sq, n).plus(&DenseMatrix::identity(n).scale(sigma_eps_sq))
}

pub fn dense_log_likelihood(y: &[f64], mu: f64, sigma_eta_sq: f64, sigma_eps_sq: f64, phi: f64) -> f64 {
    let n = y.len();
    let cov = dense_marginal_cov(sigma_eta_sq, sigma_eps_sq, phi, n);
    let prec = dense_invert(&cov).unwrap();
    let r: Vec<f64> = y.iter().map(|v| v - mu).collect();
    -0.5 * (n as f64) * (2.0 * std::f64::consts::PI).ln() - 0.5 * cov.log_det() - 0.5 * prec.quad(&r, &r)
}

/// Generalized least squares estimate of μ and its variance `(1ᵀS1)⁻¹`.
pub fn gls_mu(y: &[f64], sigma_eta_sq: f64, sigma_eps_sq: f64, phi: f64) -> (f64, f64) {
    let n = y.len();
    let s = dense_invert(&dense_marginal_cov(sigma_eta_sq, sigma_eps_sq, phi, n)).unwrap();
    let ones = vec![1.0; n];
    let s1 = s.mul_vec(&ones);
    let denom = dot(&ones, &s1);
    (dot(&s1, y) / denom, 1.0 / denom)
}

/// Posterior moments of the states `x` given `y` by conditioning the joint
/// Gaussian: mean `μ1 + C (C + σ_ε² I)⁻¹ (y − μ1)`, covariance
/// `C − C (C + σ_ε² I)⁻¹ C` with `C` the AR(1) covariance.
pub fn dense_state_posterior(
    y: &[f64],
    mu: f64,
    sigma_eta_sq: f64,
    sigma_eps_sq: f64,
    phi: f64,
) -> (Vec<f64>, DenseMatrix) {
    let n = y.len();
    let c = dense_ar1_cov(phi, sigma_eta_sq, n);
    let k = dense_invert(&dense_marginal_cov(sigma_eta_sq, sigma_eps_sq, phi, n)).unwrap();
    let ck = c.matmul(&k);
    let r: Vec<f64> = y.iter().map(|v| v - mu).collect();
    let shift = ck.mul_vec(&r);
    let mean = shift.iter().map(|s| mu + s).collect();
    let cov = c.plus(&ck.matmul(&c).scale(-1.0));
    (mean, cov)
}

/// Posterior of `α = σ_η^{-a}(x − wμ)`.
pub fn dense_alpha_posterior(
    y: &[f64],
    mu: f64,
    sigma_eta_sq: f64,
    sigma_eps_sq: f64,
    phi: f64,
    a: f64,
    w: &[f64],
) -> (Vec<f64>, DenseMatrix) {
    let (mx, cx) = dense_state_posterior(y, mu, sigma_eta_sq, sigma_eps_sq, phi);
    let s = sigma_eta_sq.powf(-0.5 * a);
    let mean = mx.iter().zip(w).map(|(m, wi)| s * (m - wi * mu)).collect();
    (mean, cx.scale(s * s))
}

/// Joint Gaussian posterior of `(μ, α)` under a flat prior on μ, built from
/// the two quadratic forms of the complete-data density. Returns the mean
/// (μ first) and covariance of the `n + 1` vector.
pub fn dense_joint_posterior(
    y: &[f64],
    sigma_eta_sq: f64,
    sigma_eps_sq: f64,
    phi: f64,
    a: f64,
    w: &[f64],
) -> (Vec<f64>, DenseMatrix) {
    let n = y.len();
    let m = n + 1;
    let sa = sigma_eta_sq.powf(0.5 * a);
    // residual y − A θ with A = [w | σ^a I]; state term B θ with B = [−w̃ | σ^a I]
    let mut a_mat = vec![vec![0.0; m]; n];
    let mut b_mat = vec![vec![0.0; m]; n];
    for t in 0..n {
        a_mat[t][0] = w[t];
        a_mat[t][t + 1] = sa;
        b_mat[t][0] = -(1.0 - w[t]);
        b_mat[t][t + 1] = sa;
    }
    let lam = dense_lambda(phi, n);
    let mut prec = DenseMatrix::zeros(m);
    let mut lin = vec![0.0; m];
    for i in 0..m {
        for j in 0..m {
            let mut acc = 0.0;
            for t in 0..n {
                acc += a_mat[t][i] * a_mat[t][j] / sigma_eps_sq;
            }
            for s in 0..n {
                for t in 0..n {
                    acc += b_mat[s][i] * lam.get(s, t) * b_mat[t][j] / sigma_eta_sq;
                }
            }
            prec.set(i, j, acc);
        }
        lin[i] = (0..n).map(|t| a_mat[t][i] * y[t] / sigma_eps_sq).sum();
    }
    let cov = dense_invert(&prec).unwrap();
    let mean = cov.mul_vec(&lin);
    (mean, cov)
}

/// Central difference of a scalar map; this is the numerical DM scalar
/// when `map` is one EM update of μ.
pub fn em_map_derivative<F: Fn(f64) -> f64>(map: F, at: f64, h: f64) -> f64 {
    assert!((1e-7..=1e-4).contains(&h), "step {h} outside [1e-7, 1e-4]");
    (map(at + h) - map(at - h)) / (2.0 * h)
}

/// Default step for [`em_map_derivative`].
pub fn fd_step(at: f64) -> f64 {
    (1e-5 * (1.0 + at.abs())).min(1e-4)
}

/// Golden-section maximization, restarted on 8 equal sub-brackets; the best
/// local maximizer wins.
pub fn golden_max_q<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64, tol: f64) -> f64 {
    assert!(lo < hi);
    let width = (hi - lo) / 8.0;
    let mut best = (f64::NEG_INFINITY, lo);
    for k in 0..8 {
        let a0 = lo + k as f64 * width;
        let x = golden_section(&f, a0, a0 + width, tol);
        let v = f(x);
        if v > best.0 {
            best = (v, x);
        }
    }
    best.1
}

fn golden_section<F: Fn(f64) -> f64>(f: &F, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while (b - a).abs() > tol {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Minimizes a quadratic `½ xᵀ H x + gᵀ x` densely: returns `−H⁻¹ g`.
pub fn dense_quadratic_argmin(h: &DenseMatrix, g: &[f64]) -> Vec<f64> {
    let inv = dense_invert(h).unwrap();
    inv.mul_vec(g).into_iter().map(|v| -v).collect()
}

/// GLS estimate of μ through a Kalman filter prediction-error decomposition:
/// the observed series and the constant regressor are whitened by the same
/// zero-mean filter. O(n), so it reaches series lengths the dense route
/// cannot, and it shares no code with the tridiagonal solver.
pub fn kalman_gls_mu(y: &[f64], sigma_eta_sq: f64, sigma_eps_sq: f64, phi: f64) -> (f64, f64) {
    let mut a_y = 0.0;
    let mut a_1 = 0.0;
    let mut p = sigma_eta_sq / (1.0 - phi * phi);
    let mut num = 0.0;
    let mut den = 0.0;
    for &yt in y {
        let f = p + sigma_eps_sq;
        let k = p / f;
        let e_y = yt - a_y;
        let e_1 = 1.0 - a_1;
        num += e_1 * e_y / f;
        den += e_1 * e_1 / f;
        a_y = phi * (a_y + k * e_y);
        a_1 = phi * (a_1 + k * e_1);
        p = phi * phi * p * (1.0 - k) + sigma_eta_sq;
    }
    (num / den, 1.0 / den)
}
