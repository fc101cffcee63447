//! Probability kernel: the unfolded log-Pareto family, mixing distributions
//! for the latent scales, multivariate normal and inverse-Wishart draws, and
//! the exact-trajectory HMC sampler for box-truncated multivariate normals.
//!
//! The unfolded (and shifted) log-Pareto density is
//!
//! ```text
//! pi(t; gamma) = gamma / (2 |t| (1 + log|t|)^(1+gamma)),   |t| > 1,
//! ```
//!
//! a super-heavy-tailed (log-regularly varying) symmetric density. Its tail
//! is so heavy that draws can exceed the f64 range with non-negligible
//! probability, so a log-scale sampler is provided alongside the plain one.

mod tmvn;

pub use tmvn::BoxTruncatedMvn;

use crate::error::{Error, Result};
use crate::quadrature;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Exp1, Gamma, StandardNormal};

/// Tail hyperparameter of the unfolded log-Pareto distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogParetoParams {
    pub gamma: f64,
}

impl LogParetoParams {
    pub fn new(gamma: f64) -> Result<Self> {
        if !(gamma > 0.0) || !gamma.is_finite() {
            return Err(Error::Domain(format!("gamma must be positive, got {gamma}")));
        }
        Ok(Self { gamma })
    }
}

fn check_gamma(gamma: f64) -> Result<()> {
    LogParetoParams::new(gamma).map(|_| ())
}

/// Unfolded log-Pareto density at `t`.
///
/// Zero outside the support `|t| > 1`; even in `t`.
pub fn lp_density(t: f64, gamma: f64) -> Result<f64> {
    check_gamma(gamma)?;
    if !t.is_finite() {
        return Err(Error::Domain(format!("non-finite argument t = {t}")));
    }
    let a = t.abs();
    if a <= 1.0 {
        return Ok(0.0);
    }
    Ok(gamma / (2.0 * a * (1.0 + a.ln()).powf(1.0 + gamma)))
}

/// Log of the unfolded log-Pareto density as a function of `log|t|`.
///
/// Stable deep in the tail where `|t|` itself overflows. Returns `-inf`
/// outside the support (`log|t| <= 0`).
pub fn lp_log_density_abs(log_abs_t: f64, gamma: f64) -> f64 {
    if log_abs_t <= 0.0 || !log_abs_t.is_finite() {
        return f64::NEG_INFINITY;
    }
    (gamma / 2.0).ln() - log_abs_t - (1.0 + gamma) * log_abs_t.ln_1p()
}

/// Upper tail probability `P(|T| > x) = (1 + log x)^(-gamma)` for `x >= 1`.
pub fn lp_tail_prob(x: f64, gamma: f64) -> Result<f64> {
    check_gamma(gamma)?;
    if !(x >= 1.0) {
        return Err(Error::Domain(format!("tail point must satisfy x >= 1, got {x}")));
    }
    Ok((1.0 + x.ln()).powf(-gamma))
}

/// Draw from the unfolded log-Pareto distribution.
///
/// Uses the shape-mixture representation: `w ~ Gamma(gamma, 1)`, then `|t|`
/// is Pareto with shape `w`, negated with probability 1/2. Extreme draws can
/// overflow to infinity; use [`lp_sample_log`] when the magnitude is consumed
/// on the log scale.
pub fn lp_sample<R: Rng + ?Sized>(gamma: f64, rng: &mut R) -> Result<f64> {
    let (sign, log_abs) = lp_sample_log(gamma, rng)?;
    Ok(sign * log_abs.exp())
}

/// Draw `(sign, log|t|)` from the unfolded log-Pareto distribution.
pub fn lp_sample_log<R: Rng + ?Sized>(gamma: f64, rng: &mut R) -> Result<(f64, f64)> {
    check_gamma(gamma)?;
    let shape = Gamma::new(gamma, 1.0)
        .map_err(|e| Error::Domain(format!("gamma mixing draw: {e}")))?;
    let w: f64 = shape.sample(rng);
    let e: f64 = Exp1.sample(rng);
    // |t| = (1 - v)^(-1/w) with v ~ U(0,1), i.e. log|t| = Exp(1)/w.
    let log_abs = if w > 0.0 { e / w } else { f64::INFINITY };
    let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
    Ok((sign, log_abs.max(0.0)))
}

/// Mixing distribution of a latent scale entry.
///
/// `SymmetricLogPareto` is the slab of the two-component model (point mass at
/// one plus unfolded log-Pareto); the remaining variants are the pure
/// families used by the robustness lab.
#[derive(Debug, Clone, PartialEq)]
pub enum MixingSpec {
    SymmetricLogPareto { gamma: f64 },
    /// Supported on `t > 1` only.
    OneSidedLogPareto { gamma: f64 },
    /// Two-sided with weight `w_pos` on `t > 1` and per-side tail orders.
    AsymmetricLogPareto { w_pos: f64, gamma_pos: f64, gamma_neg: f64 },
    /// Density proportional to `|t|^-(1+c_prime) (1+log|t|)^-(1+c)` on `|t| > 1`.
    ThinTail { c: f64, c_prime: f64 },
}

impl MixingSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            MixingSpec::SymmetricLogPareto { gamma } | MixingSpec::OneSidedLogPareto { gamma } => {
                check_gamma(gamma)
            }
            MixingSpec::AsymmetricLogPareto { w_pos, gamma_pos, gamma_neg } => {
                check_gamma(gamma_pos)?;
                check_gamma(gamma_neg)?;
                if !(w_pos > 0.0 && w_pos < 1.0) {
                    return Err(Error::Domain(format!("w must lie in (0,1), got {w_pos}")));
                }
                Ok(())
            }
            MixingSpec::ThinTail { c, c_prime } => {
                if !(c >= 0.0 && c_prime >= 0.0 && c + c_prime > 0.0) {
                    return Err(Error::Domain(format!(
                        "thin tail requires c >= 0, c' >= 0, c + c' > 0; got c = {c}, c' = {c_prime}"
                    )));
                }
                Ok(())
            }
        }
    }

    /// Prepare an evaluator with the normalizing constant resolved.
    pub fn prepare(&self) -> Result<MixingDensity> {
        MixingDensity::new(self)
    }
}

/// Per-side closed form `norm * |t|^-(1+cp) * (1+log|t|)^-(1+g)` covering all
/// mixing families; normalizing constants are resolved at construction.
#[derive(Debug, Clone)]
pub struct MixingDensity {
    log_norm_pos: f64,
    log_norm_neg: f64,
    g_pos: f64,
    g_neg: f64,
    cp: f64,
}

impl MixingDensity {
    pub fn new(spec: &MixingSpec) -> Result<Self> {
        spec.validate()?;
        let d = match *spec {
            MixingSpec::SymmetricLogPareto { gamma } => MixingDensity {
                log_norm_pos: (gamma / 2.0).ln(),
                log_norm_neg: (gamma / 2.0).ln(),
                g_pos: gamma,
                g_neg: gamma,
                cp: 0.0,
            },
            MixingSpec::OneSidedLogPareto { gamma } => MixingDensity {
                log_norm_pos: gamma.ln(),
                log_norm_neg: f64::NEG_INFINITY,
                g_pos: gamma,
                g_neg: gamma,
                cp: 0.0,
            },
            MixingSpec::AsymmetricLogPareto { w_pos, gamma_pos, gamma_neg } => MixingDensity {
                log_norm_pos: (w_pos * gamma_pos).ln(),
                log_norm_neg: ((1.0 - w_pos) * gamma_neg).ln(),
                g_pos: gamma_pos,
                g_neg: gamma_neg,
                cp: 0.0,
            },
            MixingSpec::ThinTail { c, c_prime } => {
                let half_mass = if c_prime == 0.0 {
                    1.0 / c
                } else {
                    // Integral of exp(-c' s) (1+s)^-(1+c) over s > 0.
                    let s_max = 750.0 / c_prime;
                    quadrature::integrate(
                        |s| (-c_prime * s).exp() * (1.0 + s).powf(-(1.0 + c)),
                        0.0,
                        s_max,
                        1e-12,
                        1e-300,
                        20_000,
                    )?
                    .value
                };
                let log_norm = -(2.0 * half_mass).ln();
                MixingDensity {
                    log_norm_pos: log_norm,
                    log_norm_neg: log_norm,
                    g_pos: c,
                    g_neg: c,
                    cp: c_prime,
                }
            }
        };
        Ok(d)
    }

    /// Log density at a point with the given sign and log magnitude.
    pub fn log_density_abs(&self, positive: bool, log_abs_t: f64) -> f64 {
        if log_abs_t <= 0.0 || !log_abs_t.is_finite() {
            return f64::NEG_INFINITY;
        }
        let (norm, g) = if positive {
            (self.log_norm_pos, self.g_pos)
        } else {
            (self.log_norm_neg, self.g_neg)
        };
        norm - (1.0 + self.cp) * log_abs_t - (1.0 + g) * log_abs_t.ln_1p()
    }

    /// Density at `t` (zero outside the support).
    pub fn density(&self, t: f64) -> f64 {
        if t == 0.0 || !t.is_finite() {
            return 0.0;
        }
        self.log_density_abs(t > 0.0, t.abs().ln()).exp()
    }
}

/// Evaluate a mixing distribution at `t`, separating the point mass at one
/// from the continuous part.
///
/// `phi` is the slab weight of the two-component model; it applies to
/// `SymmetricLogPareto` only (pass 1.0 for the pure unfolded density). The
/// one-sided, asymmetric, and thin-tailed variants carry no atom.
pub fn mixing_density(spec: &MixingSpec, phi: f64, t: f64) -> Result<(f64, f64)> {
    if !t.is_finite() {
        return Err(Error::Domain(format!("non-finite argument t = {t}")));
    }
    let dens = spec.prepare()?;
    match spec {
        MixingSpec::SymmetricLogPareto { .. } => {
            if !(0.0..=1.0).contains(&phi) {
                return Err(Error::Domain(format!("phi must lie in [0,1], got {phi}")));
            }
            let atom = if t == 1.0 { 1.0 - phi } else { 0.0 };
            Ok((atom, phi * dens.density(t)))
        }
        _ => Ok((0.0, dens.density(t))),
    }
}

/// Exact multivariate normal draw via the Cholesky factor of `cov`.
pub fn sample_mvn<R: Rng + ?Sized>(
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    rng: &mut R,
) -> Result<DVector<f64>> {
    let p = mean.len();
    if cov.nrows() != p || cov.ncols() != p {
        return Err(Error::Dimension(format!(
            "mean has length {p} but covariance is {}x{}",
            cov.nrows(),
            cov.ncols()
        )));
    }
    let chol = nalgebra::Cholesky::new(cov.clone())
        .ok_or_else(|| Error::Numerical("covariance is not positive definite".into()))?;
    let z = DVector::from_fn(p, |_, _| StandardNormal.sample(rng));
    Ok(mean + chol.l() * z)
}

/// Inverse-Wishart draw with degrees of freedom `df` and scale matrix `scale`
/// (the convention with `E[Sigma^-1] = df * scale^-1`).
///
/// Bartlett decomposition: `W ~ Wishart(df, scale^-1)` and `Sigma = W^-1`.
pub fn sample_inverse_wishart<R: Rng + ?Sized>(
    df: f64,
    scale: &DMatrix<f64>,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    let p = scale.nrows();
    if scale.ncols() != p {
        return Err(Error::Dimension("scale matrix must be square".into()));
    }
    if !(df > p as f64 - 1.0) {
        return Err(Error::Domain(format!(
            "inverse-Wishart needs df > p - 1 = {}, got {df}",
            p as f64 - 1.0
        )));
    }
    let scale_chol = nalgebra::Cholesky::new(scale.clone())
        .ok_or_else(|| Error::Numerical("scale matrix is not positive definite".into()))?;
    let v = scale_chol.inverse();
    let lv = nalgebra::Cholesky::new(v)
        .ok_or_else(|| Error::Numerical("inverse scale is not positive definite".into()))?
        .unpack();

    // Bartlett factor: lower triangular, chi-square diagonal, normal strict lower.
    let mut a = DMatrix::zeros(p, p);
    for j in 0..p {
        let chi2 = Gamma::new((df - j as f64) / 2.0, 2.0)
            .map_err(|e| Error::Domain(format!("bartlett chi-square: {e}")))?;
        a[(j, j)] = chi2.sample(rng).max(f64::MIN_POSITIVE).sqrt();
        for i in (j + 1)..p {
            a[(i, j)] = StandardNormal.sample(rng);
        }
    }
    let w_chol = lv * a; // lower triangular factor of W
    let inv = w_chol
        .solve_lower_triangular(&DMatrix::identity(p, p))
        .ok_or_else(|| Error::Numerical("singular Bartlett factor".into()))?;
    let sigma = inv.transpose() * inv;
    Ok(symmetrize(&sigma))
}

/// Force exact symmetry after accumulated floating-point drift.
pub(crate) fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    0.5 * (m + m.transpose())
}
