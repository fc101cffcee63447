//! Model data types, the sandwich covariance algebra, and likelihood
//! evaluation shared by the sampler and the robustness lab.
//!
//! The sampling model is `y_i | t_i ~ N_p(X_i beta, T_i Sigma T_i)` with
//! `T_i = diag(t_i)` and signed scales `|t_ik| >= 1`. Scaling leaves the
//! absolute correlation intact: `corr(y_ik, y_ik') = sgn(t_ik t_ik')
//! Sigma_kk' / sqrt(Sigma_kk Sigma_k'k')`.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};

/// Observations plus optional per-observation design matrices.
///
/// Designs absent means graphical mode (`X_i beta = 0`).
#[derive(Debug, Clone)]
pub struct Dataset {
    y: DMatrix<f64>,
    designs: Option<Vec<DMatrix<f64>>>,
}

impl Dataset {
    pub fn new(y: DMatrix<f64>, designs: Option<Vec<DMatrix<f64>>>) -> Result<Self> {
        if y.ncols() == 0 {
            return Err(Error::Dimension("observations must have positive dimension".into()));
        }
        // n = 0 is allowed in graphical mode: a chain on it draws from the prior.
        if y.nrows() == 0 && designs.is_some() {
            return Err(Error::Dimension(
                "regression mode requires at least one observation".into(),
            ));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("observations must be finite".into()));
        }
        if let Some(xs) = &designs {
            if xs.len() != y.nrows() {
                return Err(Error::Dimension(format!(
                    "{} designs for {} observations",
                    xs.len(),
                    y.nrows()
                )));
            }
            let q = xs[0].ncols();
            for (i, x) in xs.iter().enumerate() {
                if x.nrows() != y.ncols() || x.ncols() != q {
                    return Err(Error::Dimension(format!(
                        "design {i} is {}x{}, expected {}x{q}",
                        x.nrows(),
                        x.ncols(),
                        y.ncols()
                    )));
                }
                if x.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Domain(format!("design {i} has non-finite entries")));
                }
                for k in 0..x.nrows() {
                    if x.row(k).iter().all(|&v| v == 0.0) {
                        return Err(Error::Domain(format!(
                            "row {k} of design {i} is all zero"
                        )));
                    }
                }
            }
        }
        Ok(Self { y, designs })
    }

    /// Graphical-mode constructor (no regression part).
    pub fn graphical(y: DMatrix<f64>) -> Result<Self> {
        Self::new(y, None)
    }

    pub fn n(&self) -> usize {
        self.y.nrows()
    }

    pub fn p(&self) -> usize {
        self.y.ncols()
    }

    /// Number of regression coefficients (zero in graphical mode).
    pub fn q(&self) -> usize {
        self.designs.as_ref().map_or(0, |xs| xs[0].ncols())
    }

    pub fn has_designs(&self) -> bool {
        self.designs.is_some()
    }

    pub fn y(&self) -> &DMatrix<f64> {
        &self.y
    }

    pub fn y_row(&self, i: usize) -> DVector<f64> {
        self.y.row(i).transpose()
    }

    pub fn design(&self, i: usize) -> Option<&DMatrix<f64>> {
        self.designs.as_ref().map(|xs| &xs[i])
    }

    /// `X_i beta`, or the zero vector in graphical mode.
    pub fn mean(&self, i: usize, beta: &DVector<f64>) -> DVector<f64> {
        match self.design(i) {
            Some(x) => x * beta,
            None => DVector::zeros(self.p()),
        }
    }

    /// Residual `y_i - X_i beta`.
    pub fn residual(&self, i: usize, beta: &DVector<f64>) -> DVector<f64> {
        self.y_row(i) - self.mean(i, beta)
    }

    /// Replace a single cell (used by the contamination probe).
    pub fn set_cell(&mut self, i: usize, k: usize, value: f64) {
        self.y[(i, k)] = value;
    }
}

/// Hyperparameters of the normal / inverse-Wishart / beta / log-Pareto priors.
#[derive(Debug, Clone)]
pub struct PriorConfig {
    /// Normal prior mean for beta.
    pub b0: DVector<f64>,
    /// Normal prior covariance for beta.
    pub b0_cov: DMatrix<f64>,
    /// Inverse-Wishart degrees of freedom.
    pub nu0: f64,
    /// Moment matrix: `E[Sigma^-1] = nu0 * S0`.
    pub s0: DMatrix<f64>,
    /// Beta prior parameters for the outlier proportion phi.
    pub a0: f64,
    pub b0_beta: f64,
    /// Log-Pareto tail hyperparameter.
    pub gamma: f64,
}

impl PriorConfig {
    /// Defaults used throughout the numerical studies: `b0 = 0`,
    /// `B0 = 100 I`, `nu0 = p`, `S0 = (2p+1)^-1 I`, `Beta(0.05, 1)`,
    /// `gamma = 1`.
    pub fn default_for(p: usize, q: usize) -> Self {
        PriorConfig {
            b0: DVector::zeros(q),
            b0_cov: DMatrix::identity(q, q) * 100.0,
            nu0: p as f64,
            s0: DMatrix::identity(p, p) / (2.0 * p as f64 + 1.0),
            a0: 0.05,
            b0_beta: 1.0,
            gamma: 1.0,
        }
    }

    pub fn validate(&self, p: usize, q: usize) -> Result<()> {
        if self.b0.len() != q || self.b0_cov.nrows() != q || self.b0_cov.ncols() != q {
            return Err(Error::Dimension(format!(
                "beta prior blocks must have dimension q = {q}"
            )));
        }
        if self.s0.nrows() != p || self.s0.ncols() != p {
            return Err(Error::Dimension(format!("S0 must be {p}x{p}")));
        }
        if q > 0 && nalgebra::Cholesky::new(self.b0_cov.clone()).is_none() {
            return Err(Error::Domain("B0 must be positive definite".into()));
        }
        if nalgebra::Cholesky::new(self.s0.clone()).is_none() {
            return Err(Error::Domain("S0 must be positive definite".into()));
        }
        if !(self.nu0 > p as f64 - 1.0) {
            return Err(Error::Domain(format!(
                "nu0 must exceed p - 1 = {}, got {}",
                p as f64 - 1.0,
                self.nu0
            )));
        }
        if !(self.a0 > 0.0 && self.b0_beta > 0.0) {
            return Err(Error::Domain("beta prior parameters must be positive".into()));
        }
        if !(self.gamma > 0.0) {
            return Err(Error::Domain("gamma must be positive".into()));
        }
        Ok(())
    }

    /// Inverse-Wishart scale matrix `Psi0 = S0^-1` of the standard
    /// parameterization.
    pub fn iw_scale(&self) -> Result<DMatrix<f64>> {
        nalgebra::Cholesky::new(self.s0.clone())
            .map(|c| c.inverse())
            .ok_or_else(|| Error::Domain("S0 must be positive definite".into()))
    }
}

/// One Markov-chain state of the CSM sampler.
///
/// Latent scales are stored as signs plus log magnitudes (`log_scale[(i,k)]
/// = log |t_ik| >= 0`): the super-heavy prior produces magnitudes far beyond
/// the f64 range with non-negligible probability. The effective scale
/// entering the likelihood is [`ModelState::t`], which is one wherever
/// `z = 0`.
#[derive(Debug, Clone)]
pub struct ModelState {
    pub beta: DVector<f64>,
    pub sigma: DMatrix<f64>,
    pub phi: f64,
    /// Mixture indicators as 0/1.
    pub z: DMatrix<u8>,
    /// Signs of the latent scales, +-1.
    pub s: DMatrix<f64>,
    /// Log magnitudes of the latent scales, >= 0.
    pub log_scale: DMatrix<f64>,
    /// Slice variables.
    pub u: DMatrix<f64>,
    /// Augmentation vectors, stored rotated back (`H theta~_i` per row).
    pub theta: DMatrix<f64>,
    /// Stabilizer draws over the active coordinates of each observation.
    pub zeta: Vec<Vec<f64>>,
}

impl ModelState {
    /// Effective scale `t_ik`: one when `z_ik = 0`, else `s_ik exp(log r_ik)`.
    pub fn t(&self, i: usize, k: usize) -> f64 {
        if self.z[(i, k)] == 0 {
            1.0
        } else {
            self.s[(i, k)] * self.log_scale[(i, k)].exp()
        }
    }

    /// Reciprocal effective scale `1/t_ik`, computed without overflow.
    pub fn t_inv(&self, i: usize, k: usize) -> f64 {
        if self.z[(i, k)] == 0 {
            1.0
        } else {
            self.s[(i, k)] * (-self.log_scale[(i, k)]).exp()
        }
    }

    /// Log magnitude `log r_ik` carried by the chain even when the
    /// coordinate is inactive.
    pub fn log_r(&self, i: usize, k: usize) -> f64 {
        self.log_scale[(i, k)]
    }

    pub fn active_set(&self, i: usize) -> Vec<usize> {
        (0..self.z.ncols()).filter(|&k| self.z[(i, k)] == 1).collect()
    }
}

/// Outlier frame of the robustness theory: `y_ik = c_ik + d_ik * omega`,
/// with the outlier set `L(i) = {k : d_ik != 0}`.
#[derive(Debug, Clone)]
pub struct OutlierFrame {
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub omega: f64,
}

impl OutlierFrame {
    pub fn new(c: DMatrix<f64>, d: DMatrix<f64>, omega: f64) -> Result<Self> {
        if c.shape() != d.shape() {
            return Err(Error::Dimension("c and d must have equal shape".into()));
        }
        if !(omega > 0.0) {
            return Err(Error::Domain(format!("omega must be positive, got {omega}")));
        }
        Ok(Self { c, d, omega })
    }

    /// Implied observation matrix at the current omega.
    pub fn y(&self) -> DMatrix<f64> {
        &self.c + &self.d * self.omega
    }

    /// Indices of outlying coordinates of row `i`.
    pub fn outlier_set(&self, i: usize) -> Vec<usize> {
        (0..self.d.ncols()).filter(|&k| self.d[(i, k)] != 0.0).collect()
    }

    /// Indices of non-outlying coordinates of row `i`.
    pub fn clean_set(&self, i: usize) -> Vec<usize> {
        (0..self.d.ncols()).filter(|&k| self.d[(i, k)] == 0.0).collect()
    }
}

/// Sandwich covariance `diag(t) Sigma diag(t)`.
pub fn sandwich_covariance(sigma: &DMatrix<f64>, t: &DVector<f64>) -> Result<DMatrix<f64>> {
    let p = sigma.nrows();
    if sigma.ncols() != p || t.len() != p {
        return Err(Error::Dimension("sigma and t dimensions differ".into()));
    }
    if t.iter().any(|&v| v == 0.0 || !v.is_finite()) {
        return Err(Error::Domain(
            "sandwich covariance is degenerate at t_k = 0".into(),
        ));
    }
    let mut v = sigma.clone();
    for i in 0..p {
        for j in 0..p {
            v[(i, j)] *= t[i] * t[j];
        }
    }
    Ok(v)
}

/// Marginal correlation `sgn(t_k t_k') Sigma_kk' / sqrt(Sigma_kk Sigma_k'k')`.
pub fn marginal_correlation(
    sigma: &DMatrix<f64>,
    t: &DVector<f64>,
    k: usize,
    k2: usize,
) -> Result<f64> {
    if k == k2 {
        return Err(Error::Domain("requires two distinct coordinates".into()));
    }
    if t[k] == 0.0 || t[k2] == 0.0 {
        return Err(Error::Domain("scales must be nonzero".into()));
    }
    let denom = (sigma[(k, k)] * sigma[(k2, k2)]).sqrt();
    if !(denom > 0.0) {
        return Err(Error::Domain("non-positive marginal variances".into()));
    }
    Ok((t[k] * t[k2]).signum() * sigma[(k, k2)] / denom)
}

/// Log density of `N_p(X_i beta, T_i Sigma T_i)` at `y_i`, evaluated through
/// the scaled residual: `log N_p((y-Xb)/t | 0, Sigma) - sum_k log|t_k|`.
pub fn conditional_loglik(
    y_i: &DVector<f64>,
    mean_i: &DVector<f64>,
    sigma: &DMatrix<f64>,
    t_i: &DVector<f64>,
) -> Result<f64> {
    let p = y_i.len();
    if mean_i.len() != p || sigma.nrows() != p || t_i.len() != p {
        return Err(Error::Dimension("conditional_loglik inputs differ".into()));
    }
    if t_i.iter().any(|&v| v == 0.0) {
        return Err(Error::Domain("degenerate scale t_k = 0".into()));
    }
    let chol = nalgebra::Cholesky::new(sigma.clone())
        .ok_or_else(|| Error::Numerical("sigma is not positive definite".into()))?;
    let scaled = DVector::from_fn(p, |k, _| (y_i[k] - mean_i[k]) / t_i[k]);
    let half_quad = 0.5 * scaled.dot(&chol.solve(&scaled));
    let log_det_sigma: f64 = chol.l_dirty().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
    let log_abs_t: f64 = t_i.iter().map(|v| v.abs().ln()).sum();
    Ok(
        -0.5 * (p as f64) * (2.0 * std::f64::consts::PI).ln() - 0.5 * log_det_sigma - half_quad
            - log_abs_t,
    )
}

/// Residual quadratic `Psi_i = diag(y-Xb) Sigma^-1 diag(y-Xb)`.
pub fn residual_quadratic(residual: &DVector<f64>, sigma_inv: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let p = residual.len();
    if sigma_inv.nrows() != p || sigma_inv.ncols() != p {
        return Err(Error::Dimension("residual_quadratic inputs differ".into()));
    }
    let mut psi = sigma_inv.clone();
    for i in 0..p {
        for j in 0..p {
            psi[(i, j)] *= residual[i] * residual[j];
        }
    }
    Ok(psi)
}

/// Eigen structure of the precision correlation matrix, refreshed once per
/// sweep and shared by the theta and sign/indicator steps.
#[derive(Debug, Clone)]
pub struct PrecisionDecomposition {
    /// `Sigma^-1`.
    pub sigma_inv: DMatrix<f64>,
    /// `psi_k = sqrt((Sigma^-1)_kk)`.
    pub psi: DVector<f64>,
    /// Precision correlation `Q = diag(psi)^-1 Sigma^-1 diag(psi)^-1`.
    pub q: DMatrix<f64>,
    /// Orthonormal eigenvectors of `Q`, columns ordered by eigenvalue.
    pub h: DMatrix<f64>,
    /// Eigenvalues of `Q`, descending.
    pub lambda: DVector<f64>,
    /// True when the input needed a diagonal jitter before decomposing.
    pub jittered: bool,
}

/// Decompose `sigma` into the precision-correlation eigensystem.
///
/// Near-singular input (condition number above 1e12) receives a jitter of
/// `1e-10 (trace/p) I` before decomposition, with a logged warning.
pub fn precision_correlation_decomposition(sigma: &DMatrix<f64>) -> Result<PrecisionDecomposition> {
    let p = sigma.nrows();
    if sigma.ncols() != p {
        return Err(Error::Dimension("sigma must be square".into()));
    }
    let mut work = crate::distributions::symmetrize(sigma);
    let mut jittered = false;
    let eig0 = work.symmetric_eigenvalues();
    let (min0, max0) = (eig0.min(), eig0.max());
    if !(min0 > 0.0) || max0 / min0 > 1e12 {
        let bump = 1e-10 * (work.trace() / p as f64).abs().max(f64::MIN_POSITIVE);
        log::warn!(
            "near-singular covariance (eigen range [{min0:.3e}, {max0:.3e}]); \
             adding jitter {bump:.3e} to the diagonal"
        );
        for k in 0..p {
            work[(k, k)] += bump;
        }
        jittered = true;
    }
    let chol = nalgebra::Cholesky::new(work)
        .ok_or_else(|| Error::Numerical("covariance is not positive definite".into()))?;
    let sigma_inv = crate::distributions::symmetrize(&chol.inverse());
    let psi = DVector::from_fn(p, |k, _| sigma_inv[(k, k)].sqrt());
    let mut q = sigma_inv.clone();
    for i in 0..p {
        for j in 0..p {
            q[(i, j)] /= psi[i] * psi[j];
        }
    }
    q = crate::distributions::symmetrize(&q);
    let se = nalgebra::SymmetricEigen::new(q.clone());
    // Sort eigenpairs descending; ties keep the original order.
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| se.eigenvalues[b].total_cmp(&se.eigenvalues[a]).then(a.cmp(&b)));
    let lambda = DVector::from_fn(p, |k, _| se.eigenvalues[order[k]]);
    let mut h = DMatrix::zeros(p, p);
    for (col, &src) in order.iter().enumerate() {
        h.set_column(col, &se.eigenvectors.column(src));
    }
    if !(lambda[p - 1] > 0.0) {
        return Err(Error::Numerical(format!(
            "precision correlation has non-positive eigenvalue {:.3e}",
            lambda[p - 1]
        )));
    }
    Ok(PrecisionDecomposition {
        sigma_inv,
        psi,
        q,
        h,
        lambda,
        jittered,
    })
}
