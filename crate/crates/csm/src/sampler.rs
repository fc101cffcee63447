//! Collapsed Gibbs sampler for the CSM posterior, plus baseline chains.
//!
//! One sweep updates, in order: the augmentation vectors `theta_i`; the
//! joint signs and mixture indicators `(s_ik, z_ik)`; the conjugate block
//! `(beta, Sigma)`; the mixture weight `phi`; the slice variables `u_ik`;
//! and the latent scales (prior draws where inactive, a box-truncated-normal
//! HMC move over the reciprocals where active). The eigensystem of the
//! precision correlation matrix is refreshed once per sweep, right after the
//! `(beta, Sigma)` draw, and reused by the theta and sign/indicator steps of
//! the next sweep.
//!
//! Baselines: `Gaussian` runs only the conjugate block with unit scales;
//! `Pcs` restricts all signs to +1; `ClassicalT` replaces the element-wise
//! scales with one scalar scale per observation whose square is
//! inverse-gamma, with the degrees of freedom updated by random-walk
//! Metropolis under a uniform prior on [1, 100].

use crate::distributions::{lp_sample_log, sample_inverse_wishart, symmetrize, BoxTruncatedMvn};
use crate::error::{Error, Result};
use crate::model::{
    precision_correlation_decomposition, residual_quadratic, Dataset, ModelState,
    PrecisionDecomposition, PriorConfig,
};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Beta as BetaDist, Distribution, Gamma, StandardNormal};
use std::time::{Duration, Instant};

/// Which chain to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Csm,
    /// One-sided variant: latent scales restricted to be positive.
    Pcs,
    /// Plain Gaussian likelihood, no latent scales.
    Gaussian,
    /// Classical multivariate-t: one scalar scale per observation.
    ClassicalT,
}

impl ModelKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csm" => Ok(ModelKind::Csm),
            "pcs" => Ok(ModelKind::Pcs),
            "gaussian" | "gg" | "g" => Ok(ModelKind::Gaussian),
            "classical_t" | "classicalt" | "ct" => Ok(ModelKind::ClassicalT),
            other => Err(Error::Config(format!("unknown model kind '{other}'"))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            ModelKind::Csm => "csm",
            ModelKind::Pcs => "pcs",
            ModelKind::Gaussian => "gaussian",
            ModelKind::ClassicalT => "classical_t",
        }
    }

    /// True for the kinds that carry mixture indicators.
    pub fn has_indicators(&self) -> bool {
        matches!(self, ModelKind::Csm | ModelKind::Pcs)
    }
}

/// Chain length, bookkeeping, and tuning constants.
#[derive(Debug, Clone)]
pub struct SamplerConfig {
    pub n_iter: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    /// Augmentation offset: `c = c0 + lambda_1`.
    pub c0: f64,
    /// Variance scale of the stabilizer draws.
    pub delta: f64,
    /// Travel time of one exact-HMC event.
    pub hmc_travel_time: f64,
    /// Consecutive HMC events per scale update.
    pub hmc_events: usize,
    pub model_kind: ModelKind,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            n_iter: 2000,
            burn_in: 1000,
            thin: 1,
            seed: 1,
            c0: 1e-8,
            delta: 1.0,
            hmc_travel_time: std::f64::consts::FRAC_PI_2,
            hmc_events: 1,
            model_kind: ModelKind::Csm,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_iter == 0 || self.burn_in >= self.n_iter {
            return Err(Error::Config(format!(
                "need burn_in < n_iter, got {} / {}",
                self.burn_in, self.n_iter
            )));
        }
        if self.thin == 0 {
            return Err(Error::Config("thin must be at least 1".into()));
        }
        if !(self.c0 > 0.0) || !(self.delta > 0.0) {
            return Err(Error::Config("c0 and delta must be positive".into()));
        }
        if !(self.hmc_travel_time > 0.0) || self.hmc_events == 0 {
            return Err(Error::Config(
                "HMC travel time and event count must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Number of draws the chain will store.
    pub fn stored_draws(&self) -> usize {
        (self.n_iter - self.burn_in) / self.thin
    }
}

/// Counters accumulated while a chain runs.
#[derive(Debug, Clone, Default)]
pub struct ChainDiagnostics {
    /// HMC moves retried with halved travel time.
    pub hmc_retries: usize,
    /// Covariance decompositions that needed a diagonal jitter.
    pub jitter_events: usize,
    /// Accepted / attempted Metropolis moves of the t degrees of freedom.
    pub df_accepted: usize,
    pub df_attempted: usize,
}

/// Stored posterior draws with bookkeeping metadata.
#[derive(Debug, Clone)]
pub struct ChainOutput {
    pub model_kind: ModelKind,
    pub beta_draws: Vec<DVector<f64>>,
    pub sigma_draws: Vec<DMatrix<f64>>,
    /// Mixture-weight draws (empty for Gaussian and classical-t chains).
    pub phi_draws: Vec<f64>,
    /// Degrees-of-freedom draws (classical-t only).
    pub nu_draws: Vec<f64>,
    /// Running mean of the indicators over stored draws (CSM/PCS only).
    pub z_freq: Option<DMatrix<f64>>,
    pub config: SamplerConfig,
    pub diagnostics: ChainDiagnostics,
    pub wall_clock: Duration,
}

impl ChainOutput {
    pub fn n_stored(&self) -> usize {
        self.sigma_draws.len()
    }
}

/// Clamp a Beta draw away from the endpoints so logits stay finite.
fn clamp_phi(phi: f64) -> f64 {
    phi.clamp(f64::MIN_POSITIVE, 1.0 - 1e-16)
}

/// Standardized residual `psi .* (y_i - X_i beta) ./ t^z` for one observation.
fn standardized_residual(
    state: &ModelState,
    data: &Dataset,
    decomp: &PrecisionDecomposition,
    i: usize,
) -> DVector<f64> {
    let res = data.residual(i, &state.beta);
    DVector::from_fn(data.p(), |k, _| decomp.psi[k] * res[k] * state.t_inv(i, k))
}

/// Draw the augmentation vectors: rotated coordinates are independent
/// normals `N((c - lambda_k)(H' y~_i)_k, c - lambda_k)` with
/// `c = c0 + lambda_1`; the stored row is the rotated-back `H theta~_i`.
pub fn sample_theta<R: Rng + ?Sized>(
    state: &mut ModelState,
    data: &Dataset,
    decomp: &PrecisionDecomposition,
    c0: f64,
    rng: &mut R,
) -> Result<()> {
    let p = data.p();
    let c = c0 + decomp.lambda[0];
    for k in 0..p {
        if !(c - decomp.lambda[k] > 0.0) {
            return Err(Error::Numerical(format!(
                "augmentation variance c - lambda_{k} = {} is not positive",
                c - decomp.lambda[k]
            )));
        }
    }
    for i in 0..data.n() {
        let ytilde = standardized_residual(state, data, decomp, i);
        let rotated = decomp.h.tr_mul(&ytilde);
        let theta_rot = DVector::from_fn(p, |k, _| {
            let var = c - decomp.lambda[k];
            let noise: f64 = StandardNormal.sample(rng);
            var * rotated[k] + var.sqrt() * noise
        });
        let back = &decomp.h * theta_rot;
        for k in 0..p {
            state.theta[(i, k)] = back[k];
        }
    }
    Ok(())
}

/// Unnormalized log masses of the four `(s, z)` categories for one cell, in
/// the order `(+1, 0), (-1, 0), (+1, 1), (-1, 1)`.
///
/// `h_theta` is `(H theta~_i)_k`, `log_r` the log magnitude of the latent
/// scale, `c = c0 + lambda_1`.
pub fn sign_z_log_masses(
    residual: f64,
    psi: f64,
    h_theta: f64,
    log_r: f64,
    phi: f64,
    c: f64,
) -> [f64; 4] {
    let phi = clamp_phi(phi);
    let logit = phi.ln() - (1.0 - phi).ln() - log_r;
    let mut masses = [0.0f64; 4];
    for (idx, (sign, z)) in [(1.0, 0u8), (-1.0, 0), (1.0, 1), (-1.0, 1)].iter().enumerate() {
        let w = if *z == 0 {
            psi * residual
        } else {
            psi * residual * sign * (-log_r).exp()
        };
        masses[idx] = f64::from(*z) * logit + h_theta * w - 0.5 * c * w * w;
    }
    masses
}

/// Joint draw of the signs and mixture indicators, cell by cell. In
/// one-sided (PCS) mode the negative-sign categories carry zero mass.
pub fn sample_sign_and_z<R: Rng + ?Sized>(
    state: &mut ModelState,
    data: &Dataset,
    decomp: &PrecisionDecomposition,
    c0: f64,
    one_sided: bool,
    rng: &mut R,
) -> Result<()> {
    let c = c0 + decomp.lambda[0];
    for i in 0..data.n() {
        let res = data.residual(i, &state.beta);
        for k in 0..data.p() {
            let masses = sign_z_log_masses(
                res[k],
                decomp.psi[k],
                state.theta[(i, k)],
                state.log_scale[(i, k)],
                state.phi,
                c,
            );
            let allowed: &[usize] = if one_sided { &[0, 2] } else { &[0, 1, 2, 3] };
            // Normalize in log space; subtracting the maximum first makes
            // simultaneous underflow of every category impossible.
            let max = allowed
                .iter()
                .map(|&j| masses[j])
                .fold(f64::NEG_INFINITY, f64::max);
            if !max.is_finite() {
                return Err(Error::Numerical(format!(
                    "sign/indicator masses degenerate at cell ({i}, {k})"
                )));
            }
            let weights: Vec<f64> = allowed.iter().map(|&j| (masses[j] - max).exp()).collect();
            let total: f64 = weights.iter().sum();
            let mut pick = rng.gen::<f64>() * total;
            let mut chosen = allowed[allowed.len() - 1];
            for (j, w) in allowed.iter().zip(&weights) {
                if pick < *w {
                    chosen = *j;
                    break;
                }
                pick -= *w;
            }
            let (sign, z) = match chosen {
                0 => (1.0, 0),
                1 => (-1.0, 0),
                2 => (1.0, 1),
                _ => (-1.0, 1),
            };
            state.s[(i, k)] = sign;
            state.z[(i, k)] = z;
        }
    }
    Ok(())
}

fn chol_with_jitter(
    mut a: DMatrix<f64>,
    what: &str,
) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    match nalgebra::Cholesky::new(a.clone()) {
        Some(c) => Ok(c),
        None => {
            let bump = 1e-8 * (a.trace() / a.nrows() as f64).abs().max(f64::MIN_POSITIVE);
            log::warn!("{what} not positive definite; retrying with jitter {bump:.3e}");
            for k in 0..a.nrows() {
                a[(k, k)] += bump;
            }
            nalgebra::Cholesky::new(a).ok_or_else(|| {
                Error::Numerical(format!("{what} not positive definite after jitter"))
            })
        }
    }
}

/// Conjugate block: `beta | Sigma` from its normal full conditional (skipped
/// in graphical mode), then `Sigma | beta` from the inverse-Wishart with
/// scale `S0^-1 + sum_i r_i r_i'`, `r_i = T_i^-1 (y_i - X_i beta)`.
pub fn sample_beta_sigma<R: Rng + ?Sized>(
    state: &mut ModelState,
    data: &Dataset,
    prior: &PriorConfig,
    rng: &mut R,
) -> Result<()> {
    let p = data.p();
    let n = data.n();
    let sigma_inv = chol_with_jitter(state.sigma.clone(), "covariance")?.inverse();

    if data.has_designs() {
        let q = data.q();
        let b0_inv = nalgebra::Cholesky::new(prior.b0_cov.clone())
            .ok_or_else(|| Error::Domain("B0 must be positive definite".into()))?
            .inverse();
        let mut a = b0_inv.clone();
        let mut rhs = &b0_inv * &prior.b0;
        for i in 0..n {
            let x = data.design(i).expect("designs present");
            let mut w = x.clone();
            let mut y_scaled = data.y_row(i);
            for k in 0..p {
                let ti = state.t_inv(i, k);
                for j in 0..q {
                    w[(k, j)] *= ti;
                }
                y_scaled[k] *= ti;
            }
            let siw = &sigma_inv * &w;
            a += w.tr_mul(&siw);
            rhs += siw.tr_mul(&y_scaled);
        }
        let chol = chol_with_jitter(symmetrize(&a), "posterior precision of beta")?;
        let mean = chol.solve(&rhs);
        let noise = DVector::from_fn(q, |_, _| StandardNormal.sample(rng));
        let draw = chol
            .unpack()
            .transpose()
            .solve_upper_triangular(&noise)
            .ok_or_else(|| Error::Numerical("singular posterior Cholesky factor".into()))?;
        state.beta = mean + draw;
    }

    let mut scale = prior.iw_scale()?;
    for i in 0..n {
        let res = data.residual(i, &state.beta);
        let r = DVector::from_fn(p, |k, _| res[k] * state.t_inv(i, k));
        scale += &r * r.transpose();
    }
    state.sigma = sample_inverse_wishart(prior.nu0 + n as f64, &symmetrize(&scale), rng)?;
    Ok(())
}

/// `phi ~ Beta(sum z + a0, sum (1-z) + b0)`.
pub fn sample_phi<R: Rng + ?Sized>(
    state: &mut ModelState,
    prior: &PriorConfig,
    rng: &mut R,
) -> Result<()> {
    let total = state.z.len() as f64;
    let active: f64 = state.z.iter().map(|&z| f64::from(z)).sum();
    let dist = BetaDist::new(active + prior.a0, total - active + prior.b0_beta)
        .map_err(|e| Error::Domain(format!("phi full conditional: {e}")))?;
    state.phi = clamp_phi(dist.sample(rng));
    Ok(())
}

/// Slice variables: `u_ik ~ Uniform(0, (1 + log r_ik)^-(1+gamma))`.
pub fn sample_u<R: Rng + ?Sized>(state: &mut ModelState, gamma: f64, rng: &mut R) -> Result<()> {
    if !(gamma > 0.0) {
        return Err(Error::Domain("gamma must be positive".into()));
    }
    for i in 0..state.u.nrows() {
        for k in 0..state.u.ncols() {
            let bound = (-(1.0 + gamma) * state.log_scale[(i, k)].ln_1p()).exp();
            state.u[(i, k)] = bound * rng.gen::<f64>();
        }
    }
    Ok(())
}

/// Slice lower bound `exp{1 - u^(-1/(1+gamma))}` for the reciprocal scale.
pub fn slice_lower_bound(u: f64, gamma: f64) -> f64 {
    if u <= 0.0 {
        return 0.0;
    }
    (1.0 - u.powf(-1.0 / (1.0 + gamma))).exp()
}

/// Latent-scale update. Inactive coordinates are refreshed from the unfolded
/// log-Pareto prior (positive side only in one-sided mode); the active block
/// draws the stabilizer `zeta_i ~ N(delta t~, delta I)` and then one or more
/// exact-HMC moves of the box-truncated normal over the reciprocals, with
/// the box orthant fixed by the current signs.
pub fn sample_t<R: Rng + ?Sized>(
    state: &mut ModelState,
    data: &Dataset,
    decomp: &PrecisionDecomposition,
    gamma: f64,
    config: &SamplerConfig,
    diagnostics: &mut ChainDiagnostics,
    rng: &mut R,
) -> Result<()> {
    let p = data.p();
    let one_sided = config.model_kind == ModelKind::Pcs;
    for i in 0..data.n() {
        let active = state.active_set(i);
        for k in 0..p {
            if state.z[(i, k)] == 0 {
                let (sign, log_abs) = lp_sample_log(gamma, rng)?;
                state.s[(i, k)] = if one_sided { 1.0 } else { sign };
                state.log_scale[(i, k)] = log_abs;
            }
        }
        if active.is_empty() {
            state.zeta[i].clear();
            continue;
        }

        let m = active.len();
        let res = data.residual(i, &state.beta);
        let psi_full = residual_quadratic(&res, &decomp.sigma_inv)?;

        // Current reciprocals of the active block.
        let t_rec = DVector::from_fn(m, |j, _| {
            let k = active[j];
            state.s[(i, k)] * (-state.log_scale[(i, k)]).exp()
        });
        let zeta = DVector::from_fn(m, |j, _| {
            let noise: f64 = StandardNormal.sample(rng);
            config.delta * t_rec[j] + config.delta.sqrt() * noise
        });

        let mut precision = DMatrix::zeros(m, m);
        for (aj, &kj) in active.iter().enumerate() {
            for (al, &kl) in active.iter().enumerate() {
                precision[(aj, al)] = psi_full[(kj, kl)];
            }
            precision[(aj, aj)] += config.delta;
        }
        let mut linear = zeta.clone();
        let inactive: Vec<usize> = (0..p).filter(|k| !active.contains(k)).collect();
        for (aj, &kj) in active.iter().enumerate() {
            for &kl in &inactive {
                linear[aj] -= psi_full[(kj, kl)];
            }
        }

        let mut lower = DVector::zeros(m);
        let mut upper = DVector::zeros(m);
        let mut start = DVector::zeros(m);
        for (j, &k) in active.iter().enumerate() {
            let bound = slice_lower_bound(state.u[(i, k)], gamma);
            if state.s[(i, k)] > 0.0 {
                lower[j] = bound;
                upper[j] = 1.0;
            } else {
                lower[j] = -1.0;
                upper[j] = -bound;
            }
            let margin = 1e-9 * (upper[j] - lower[j]);
            start[j] = t_rec[j].clamp(lower[j] + margin, upper[j] - margin);
        }

        let target = BoxTruncatedMvn::new(precision, linear, lower, upper)
            .map_err(|e| Error::Numerical(format!("observation {i}: {e}")))?;
        let mut x = start;
        for _ in 0..config.hmc_events {
            x = match target.sample(&x, config.hmc_travel_time, rng) {
                Ok(next) => next,
                Err(_) => {
                    diagnostics.hmc_retries += 1;
                    target
                        .sample(&x, 0.5 * config.hmc_travel_time, rng)
                        .map_err(|e| Error::Numerical(format!("observation {i}: {e}")))?
                }
            };
        }

        for (j, &k) in active.iter().enumerate() {
            let mag = x[j].abs().max(1e-300);
            state.log_scale[(i, k)] = (-mag.ln()).max(0.0);
        }
        state.zeta[i] = zeta.iter().copied().collect();
    }
    Ok(())
}

/// Initial state: `beta = 0`, `Sigma` the sample covariance of `y` (or the
/// identity when `n <= p`), `phi` at its prior mean, `z = 0`, `t = 1`,
/// `s = +1`.
pub fn initial_state(data: &Dataset, prior: &PriorConfig) -> ModelState {
    let (n, p, q) = (data.n(), data.p(), data.q());
    let sigma = if n > p {
        let mut mean = DVector::zeros(p);
        for i in 0..n {
            mean += data.y_row(i);
        }
        mean /= n as f64;
        let mut cov = DMatrix::zeros(p, p);
        for i in 0..n {
            let d = data.y_row(i) - &mean;
            cov += &d * d.transpose();
        }
        cov /= (n - 1) as f64;
        if nalgebra::Cholesky::new(cov.clone()).is_some() {
            cov
        } else {
            DMatrix::identity(p, p)
        }
    } else {
        DMatrix::identity(p, p)
    };
    ModelState {
        beta: DVector::zeros(q),
        sigma,
        phi: clamp_phi(prior.a0 / (prior.a0 + prior.b0_beta)),
        z: DMatrix::zeros(n, p),
        s: DMatrix::from_element(n, p, 1.0),
        log_scale: DMatrix::zeros(n, p),
        u: DMatrix::from_element(n, p, 0.5),
        theta: DMatrix::zeros(n, p),
        zeta: vec![Vec::new(); n],
    }
}

/// One full CSM/PCS sweep. The decomposition must match `state.sigma` on
/// entry and is refreshed right after the `(beta, Sigma)` draw.
pub fn sweep_csm<R: Rng + ?Sized>(
    state: &mut ModelState,
    data: &Dataset,
    prior: &PriorConfig,
    config: &SamplerConfig,
    decomp: &mut PrecisionDecomposition,
    diagnostics: &mut ChainDiagnostics,
    rng: &mut R,
) -> Result<()> {
    let one_sided = config.model_kind == ModelKind::Pcs;
    sample_theta(state, data, decomp, config.c0, rng)?;
    sample_sign_and_z(state, data, decomp, config.c0, one_sided, rng)?;
    sample_beta_sigma(state, data, prior, rng)?;
    *decomp = precision_correlation_decomposition(&state.sigma)?;
    if decomp.jittered {
        diagnostics.jitter_events += 1;
    }
    sample_phi(state, prior, rng)?;
    sample_u(state, prior.gamma, rng)?;
    sample_t(state, data, decomp, prior.gamma, config, diagnostics, rng)?;
    Ok(())
}

/// Natural log of the gamma function (Lanczos approximation, g = 7).
pub(crate) fn ln_gamma(x: f64) -> f64 {
    const COEFFS: [f64; 8] = [
        676.5203681218851,
        -1259.1392167224028,
        771.32342877765313,
        -176.61502916214059,
        12.507343278686905,
        -0.13857109526572012,
        9.9843695780195716e-6,
        1.5056327351493116e-7,
    ];
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = 0.99999999999980993;
    for (i, c) in COEFFS.iter().enumerate() {
        acc += c / (x + i as f64 + 1.0);
    }
    let t = x + 7.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

fn inv_gamma_log_density(v: f64, shape: f64, rate: f64) -> f64 {
    shape * rate.ln() - ln_gamma(shape) - (shape + 1.0) * v.ln() - rate / v
}

/// Classical multivariate-t chain state.
struct ClassicalTState {
    beta: DVector<f64>,
    sigma: DMatrix<f64>,
    /// Squared per-observation scales.
    v: DVector<f64>,
    nu: f64,
}

fn sweep_classical_t<R: Rng + ?Sized>(
    state: &mut ClassicalTState,
    data: &Dataset,
    prior: &PriorConfig,
    diagnostics: &mut ChainDiagnostics,
    rng: &mut R,
) -> Result<()> {
    let (n, p, q) = (data.n(), data.p(), data.q());
    let sigma_inv = chol_with_jitter(state.sigma.clone(), "covariance")?.inverse();

    // Squared scales: v_i | . ~ InvGamma((nu+p)/2, (nu + d_i)/2).
    for i in 0..n {
        let res = data.residual(i, &state.beta);
        let d = res.dot(&(&sigma_inv * &res));
        let shape = 0.5 * (state.nu + p as f64);
        let rate = 0.5 * (state.nu + d);
        let g = Gamma::new(shape, 1.0 / rate)
            .map_err(|e| Error::Domain(format!("scale full conditional: {e}")))?;
        state.v[i] = (1.0 / g.sample(rng)).max(f64::MIN_POSITIVE);
    }

    if data.has_designs() {
        let b0_inv = nalgebra::Cholesky::new(prior.b0_cov.clone())
            .ok_or_else(|| Error::Domain("B0 must be positive definite".into()))?
            .inverse();
        let mut a = b0_inv.clone();
        let mut rhs = &b0_inv * &prior.b0;
        for i in 0..n {
            let x = data.design(i).expect("designs present");
            let six = &sigma_inv * x;
            a += x.tr_mul(&six) / state.v[i];
            rhs += six.tr_mul(&data.y_row(i)) / state.v[i];
        }
        let chol = chol_with_jitter(symmetrize(&a), "posterior precision of beta")?;
        let mean = chol.solve(&rhs);
        let noise = DVector::from_fn(q, |_, _| StandardNormal.sample(rng));
        let draw = chol
            .unpack()
            .transpose()
            .solve_upper_triangular(&noise)
            .ok_or_else(|| Error::Numerical("singular posterior Cholesky factor".into()))?;
        state.beta = mean + draw;
    }

    let mut scale = prior.iw_scale()?;
    for i in 0..n {
        let res = data.residual(i, &state.beta);
        scale += &res * res.transpose() / state.v[i];
    }
    state.sigma = sample_inverse_wishart(prior.nu0 + n as f64, &symmetrize(&scale), rng)?;

    // Random-walk Metropolis on log nu, uniform prior on [1, 100].
    diagnostics.df_attempted += 1;
    let step: f64 = StandardNormal.sample(rng);
    let nu_new = (state.nu.ln() + 0.3 * step).exp();
    if (1.0..=100.0).contains(&nu_new) {
        let log_lik = |nu: f64| -> f64 {
            state
                .v
                .iter()
                .map(|&v| inv_gamma_log_density(v, 0.5 * nu, 0.5 * nu))
                .sum()
        };
        // Jacobian of the log-scale proposal: + ln(nu') - ln(nu).
        let log_acc = log_lik(nu_new) - log_lik(state.nu) + nu_new.ln() - state.nu.ln();
        if rng.gen::<f64>().ln() < log_acc {
            state.nu = nu_new;
            diagnostics.df_accepted += 1;
        }
    }
    Ok(())
}

/// Run one chain and collect the stored draws.
///
/// The draw schedule stores iteration `it` (zero-based) when `it >= burn_in`
/// and `(it - burn_in) % thin == thin - 1`, giving exactly
/// `(n_iter - burn_in) / thin` stored draws. A fixed seed makes the output
/// bit-identical across runs.
pub fn run_chain(data: &Dataset, prior: &PriorConfig, config: &SamplerConfig) -> Result<ChainOutput> {
    config.validate()?;
    prior.validate(data.p(), data.q())?;
    let start = Instant::now();
    let mut rng = ChaCha12Rng::seed_from_u64(config.seed);
    let mut diagnostics = ChainDiagnostics::default();
    let (n, p) = (data.n(), data.p());

    let mut beta_draws = Vec::new();
    let mut sigma_draws = Vec::new();
    let mut phi_draws = Vec::new();
    let mut nu_draws = Vec::new();
    let mut z_accum = DMatrix::<f64>::zeros(n, p);
    let mut stored = 0usize;
    let keep = |it: usize| -> bool {
        it >= config.burn_in && (it - config.burn_in) % config.thin == config.thin - 1
    };

    match config.model_kind {
        ModelKind::Csm | ModelKind::Pcs => {
            let mut state = initial_state(data, prior);
            let mut decomp =
                precision_correlation_decomposition(&state.sigma).map_err(|e| e.at_sweep(0))?;
            for it in 0..config.n_iter {
                sweep_csm(
                    &mut state,
                    data,
                    prior,
                    config,
                    &mut decomp,
                    &mut diagnostics,
                    &mut rng,
                )
                .map_err(|e| e.at_sweep(it))?;
                if keep(it) {
                    beta_draws.push(state.beta.clone());
                    sigma_draws.push(state.sigma.clone());
                    phi_draws.push(state.phi);
                    for i in 0..n {
                        for k in 0..p {
                            z_accum[(i, k)] += f64::from(state.z[(i, k)]);
                        }
                    }
                    stored += 1;
                }
            }
        }
        ModelKind::Gaussian => {
            let mut state = initial_state(data, prior);
            for it in 0..config.n_iter {
                sample_beta_sigma(&mut state, data, prior, &mut rng).map_err(|e| e.at_sweep(it))?;
                if keep(it) {
                    beta_draws.push(state.beta.clone());
                    sigma_draws.push(state.sigma.clone());
                    stored += 1;
                }
            }
        }
        ModelKind::ClassicalT => {
            let init = initial_state(data, prior);
            let mut state = ClassicalTState {
                beta: init.beta,
                sigma: init.sigma,
                v: DVector::from_element(n, 1.0),
                nu: 10.0,
            };
            for it in 0..config.n_iter {
                sweep_classical_t(&mut state, data, prior, &mut diagnostics, &mut rng)
                    .map_err(|e| e.at_sweep(it))?;
                if keep(it) {
                    beta_draws.push(state.beta.clone());
                    sigma_draws.push(state.sigma.clone());
                    nu_draws.push(state.nu);
                    stored += 1;
                }
            }
        }
    }

    let z_freq = if config.model_kind.has_indicators() && stored > 0 {
        Some(z_accum / stored as f64)
    } else {
        None
    };
    Ok(ChainOutput {
        model_kind: config.model_kind,
        beta_draws,
        sigma_draws,
        phi_draws,
        nu_draws,
        z_freq,
        config: config.clone(),
        diagnostics,
        wall_clock: start.elapsed(),
    })
}

#[cfg(test)]
mod tests;
