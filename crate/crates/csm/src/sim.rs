//! Data generators and evaluation metrics for the simulation studies.
//!
//! Graphical scenarios draw from `N_p(0, Omega^-1)` with the banded
//! precision (1 on the diagonal, 0.5 on the first off-diagonal, 0.25 on the
//! second) and shift a per-observation count of randomly chosen cells by a
//! fixed offset; the regression scenario draws design rows from an
//! equi-correlated normal and contaminates one cell per affected row.
//! Chains are scored by the MSE of posterior means, coverage (CP) and
//! average length (AL) of equal-tailed credible intervals, and the interval
//! score (IS).

use crate::error::{Error, Result};
use crate::model::{Dataset, PriorConfig};
use crate::sampler::{run_chain, ChainOutput, ModelKind, SamplerConfig};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;

/// Which study to generate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScenarioKind {
    /// Graphical scenarios 1-3: per contaminated observation shift 1, 2, or
    /// `1 + Poisson(1)` cells (truncated at p).
    Graphical { scenario: u8, n: usize, p: usize, phi_star: f64 },
    /// Multivariate regression with scenario-1-style contamination.
    Regression { n: usize, p: usize, q: usize, phi_star: f64 },
}

/// Scenario plus the contamination offset and the data seed.
#[derive(Debug, Clone, Copy)]
pub struct ScenarioSpec {
    pub kind: ScenarioKind,
    /// Offset added to contaminated cells.
    pub shift: f64,
    pub seed: u64,
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        let phi_star = match self.kind {
            ScenarioKind::Graphical { scenario, n, p, phi_star } => {
                if !(1..=3).contains(&scenario) {
                    return Err(Error::Config(format!("scenario must be 1..3, got {scenario}")));
                }
                if n == 0 || p == 0 {
                    return Err(Error::Config("dimensions must be positive".into()));
                }
                phi_star
            }
            ScenarioKind::Regression { n, p, q, phi_star } => {
                if n == 0 || p == 0 {
                    return Err(Error::Config("dimensions must be positive".into()));
                }
                if q < 6 {
                    return Err(Error::Config(format!(
                        "the coefficient pattern needs q >= 6, got {q}"
                    )));
                }
                phi_star
            }
        };
        if !(0.0..=1.0).contains(&phi_star) {
            return Err(Error::Config(format!("phi_star must lie in [0,1], got {phi_star}")));
        }
        Ok(())
    }
}

/// Deterministic seed mixing for replications and per-method chains.
pub fn derive_seed(base: u64, salt: u64) -> u64 {
    let mut z = base ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Banded true precision of the graphical scenarios.
pub fn banded_precision(p: usize) -> Result<DMatrix<f64>> {
    let omega = DMatrix::from_fn(p, p, |j, k| match j.abs_diff(k) {
        0 => 1.0,
        1 => 0.5,
        2 => 0.25,
        _ => 0.0,
    });
    if nalgebra::Cholesky::new(omega.clone()).is_none() {
        return Err(Error::Domain(format!(
            "banded precision is not positive definite at p = {p}"
        )));
    }
    Ok(omega)
}

fn draw_cells<R: Rng + ?Sized>(p: usize, count: usize, rng: &mut R) -> Vec<usize> {
    // Uniform without replacement.
    let mut pool: Vec<usize> = (0..p).collect();
    let mut chosen = Vec::with_capacity(count);
    for _ in 0..count.min(p) {
        let idx = rng.gen_range(0..pool.len());
        chosen.push(pool.swap_remove(idx));
    }
    chosen
}

/// Generate a graphical dataset: clean draws from `N_p(0, Omega^-1)`, the
/// true precision, and the exact mask of shifted cells.
pub fn gen_graphical(spec: &ScenarioSpec) -> Result<(Dataset, DMatrix<f64>, Vec<(usize, usize)>)> {
    spec.validate()?;
    let (scenario, n, p, phi_star) = match spec.kind {
        ScenarioKind::Graphical { scenario, n, p, phi_star } => (scenario, n, p, phi_star),
        _ => return Err(Error::Config("not a graphical scenario".into())),
    };
    let omega = banded_precision(p)?;
    let sigma = nalgebra::Cholesky::new(omega.clone())
        .expect("checked above")
        .inverse();
    let chol = nalgebra::Cholesky::new(sigma)
        .ok_or_else(|| Error::Numerical("covariance is not positive definite".into()))?;
    // Separate streams for the clean draws and the contamination, so the
    // clean values are common random numbers across phi* settings.
    let mut rng = ChaCha12Rng::seed_from_u64(derive_seed(spec.seed, 1));
    let mut contam_rng = ChaCha12Rng::seed_from_u64(derive_seed(spec.seed, 2));
    let mut y = DMatrix::zeros(n, p);
    let mut mask = Vec::new();
    let poisson = Poisson::new(1.0).map_err(|e| Error::Domain(format!("poisson: {e}")))?;
    for i in 0..n {
        let z = DVector::from_fn(p, |_, _| {
            let g: f64 = rand_distr::StandardNormal.sample(&mut rng);
            g
        });
        let mut row = chol.l() * z;
        if contam_rng.gen::<f64>() < phi_star {
            let count = match scenario {
                1 => 1,
                2 => 2.min(p),
                _ => {
                    let extra = poisson.sample(&mut contam_rng) as usize;
                    (1 + extra).min(p)
                }
            };
            for k in draw_cells(p, count, &mut contam_rng) {
                row[k] += spec.shift;
                mask.push((i, k));
            }
        }
        y.set_row(i, &row.transpose());
    }
    mask.sort_unstable();
    Ok((Dataset::graphical(y)?, omega, mask))
}

/// True coefficients of the regression study: 0.5, 1, -1 at positions 1-3,
/// 0.5 at position 6, zero elsewhere.
pub fn regression_beta(q: usize) -> DVector<f64> {
    let mut beta = DVector::zeros(q);
    beta[0] = 0.5;
    beta[1] = 1.0;
    beta[2] = -1.0;
    if q >= 6 {
        beta[5] = 0.5;
    }
    beta
}

/// True covariance of the regression study: `Sigma_kk' = 0.6^|k-k'|`.
pub fn regression_sigma(p: usize) -> DMatrix<f64> {
    DMatrix::from_fn(p, p, |j, k| 0.6f64.powi(j.abs_diff(k) as i32))
}

/// Generate a regression dataset with designs, the truth `(beta, Sigma)`,
/// and the mask of shifted cells (one per contaminated row).
pub fn gen_regression(
    spec: &ScenarioSpec,
) -> Result<(Dataset, (DVector<f64>, DMatrix<f64>), Vec<(usize, usize)>)> {
    spec.validate()?;
    let (n, p, q, phi_star) = match spec.kind {
        ScenarioKind::Regression { n, p, q, phi_star } => (n, p, q, phi_star),
        _ => return Err(Error::Config("not a regression scenario".into())),
    };
    let beta = regression_beta(q);
    let sigma = regression_sigma(p);
    let sigma_chol = nalgebra::Cholesky::new(sigma.clone())
        .ok_or_else(|| Error::Numerical("regression covariance not positive definite".into()))?;
    // Equi-correlation 0.3 for the design rows.
    let r_design = DMatrix::from_fn(q, q, |j, k| if j == k { 1.0 } else { 0.3 });
    let design_chol = nalgebra::Cholesky::new(r_design)
        .ok_or_else(|| Error::Numerical("design correlation not positive definite".into()))?;

    let mut rng = ChaCha12Rng::seed_from_u64(derive_seed(spec.seed, 1));
    let mut contam_rng = ChaCha12Rng::seed_from_u64(derive_seed(spec.seed, 2));
    let mut y = DMatrix::zeros(n, p);
    let mut designs = Vec::with_capacity(n);
    let mut mask = Vec::new();
    for i in 0..n {
        let mut x = DMatrix::zeros(p, q);
        for k in 0..p {
            let g = DVector::from_fn(q, |_, _| {
                let v: f64 = rand_distr::StandardNormal.sample(&mut rng);
                v
            });
            x.set_row(k, &(design_chol.l() * g).transpose());
        }
        let eps = DVector::from_fn(p, |_, _| {
            let v: f64 = rand_distr::StandardNormal.sample(&mut rng);
            v
        });
        let mut row = &x * &beta + sigma_chol.l() * eps;
        if contam_rng.gen::<f64>() < phi_star {
            let k = contam_rng.gen_range(0..p);
            row[k] += spec.shift;
            mask.push((i, k));
        }
        y.set_row(i, &row.transpose());
        designs.push(x);
    }
    mask.sort_unstable();
    Ok((Dataset::new(y, Some(designs))?, (beta, sigma), mask))
}

/// Per-parameter summary plus the aggregated MSE / CP / AL / IS.
#[derive(Debug, Clone)]
pub struct ParamMetric {
    pub truth: f64,
    pub post_mean: f64,
    pub lower: f64,
    pub upper: f64,
    pub covered: bool,
    pub sq_err: f64,
    pub length: f64,
    pub interval_score: f64,
}

#[derive(Debug, Clone)]
pub struct MetricReport {
    pub mse: f64,
    pub cp: f64,
    pub al: f64,
    pub is_score: f64,
    pub alpha: f64,
    pub per_param: Vec<ParamMetric>,
}

/// Type-7 (linear interpolation) empirical quantile of a sorted slice.
pub fn quantile(sorted: &[f64], prob: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n as f64 - 1.0) * prob.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Score a matrix of parameter draws (rows = stored draws, columns =
/// scalar parameters) against the truth. `alpha` is the interval tail mass
/// (0.05 for 95% intervals); the interval score is
/// `(u - l) + (2/alpha)(l - x) 1[x < l] + (2/alpha)(x - u) 1[x > u]`.
pub fn compute_metrics(
    draws: &DMatrix<f64>,
    truth: &DVector<f64>,
    alpha: f64,
) -> Result<MetricReport> {
    if draws.nrows() == 0 {
        return Err(Error::Dimension("empty chain".into()));
    }
    if draws.ncols() != truth.len() {
        return Err(Error::Dimension(format!(
            "{} parameter columns against {} truths",
            draws.ncols(),
            truth.len()
        )));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Domain(format!("alpha must lie in (0,1), got {alpha}")));
    }
    let mut per_param = Vec::with_capacity(truth.len());
    for j in 0..truth.len() {
        let mut series: Vec<f64> = draws.column(j).iter().copied().collect();
        series.sort_by(f64::total_cmp);
        let post_mean = series.iter().sum::<f64>() / series.len() as f64;
        let lower = quantile(&series, alpha / 2.0);
        let upper = quantile(&series, 1.0 - alpha / 2.0);
        let x = truth[j];
        let covered = lower <= x && x <= upper;
        let length = upper - lower;
        let mut interval_score = length;
        if x < lower {
            interval_score += 2.0 / alpha * (lower - x);
        } else if x > upper {
            interval_score += 2.0 / alpha * (x - upper);
        }
        per_param.push(ParamMetric {
            truth: x,
            post_mean,
            lower,
            upper,
            covered,
            sq_err: (post_mean - x) * (post_mean - x),
            length,
            interval_score,
        });
    }
    let m = per_param.len() as f64;
    Ok(MetricReport {
        mse: per_param.iter().map(|p| p.sq_err).sum::<f64>() / m,
        cp: per_param.iter().filter(|p| p.covered).count() as f64 / m,
        al: per_param.iter().map(|p| p.length).sum::<f64>() / m,
        is_score: per_param.iter().map(|p| p.interval_score).sum::<f64>() / m,
        alpha,
        per_param,
    })
}

/// Stack the diagonal and upper triangle of a symmetric matrix, row-major.
pub fn flatten_symmetric(m: &DMatrix<f64>) -> DVector<f64> {
    let p = m.nrows();
    let mut out = Vec::with_capacity(p * (p + 1) / 2);
    for j in 0..p {
        for k in j..p {
            out.push(m[(j, k)]);
        }
    }
    DVector::from_vec(out)
}

/// Names matching [`flatten_symmetric`]'s stacking (1-based indices).
pub fn symmetric_entry_names(prefix: &str, p: usize) -> Vec<String> {
    let mut names = Vec::with_capacity(p * (p + 1) / 2);
    for j in 0..p {
        for k in j..p {
            names.push(format!("{prefix}_{}_{}", j + 1, k + 1));
        }
    }
    names
}

/// Per-draw flattened `Sigma` entries (rows = draws).
pub fn sigma_entry_draws(chain: &ChainOutput) -> DMatrix<f64> {
    let rows: Vec<DVector<f64>> = chain.sigma_draws.iter().map(flatten_symmetric).collect();
    matrix_from_rows(&rows)
}

/// Per-draw flattened `Omega = Sigma^-1` entries, inverted draw by draw.
pub fn omega_entry_draws(chain: &ChainOutput) -> Result<DMatrix<f64>> {
    let mut rows = Vec::with_capacity(chain.sigma_draws.len());
    for s in &chain.sigma_draws {
        let inv = nalgebra::Cholesky::new(s.clone())
            .ok_or_else(|| {
                Error::Numerical("stored covariance draw not positive definite".into())
            })?
            .inverse();
        rows.push(flatten_symmetric(&inv));
    }
    Ok(matrix_from_rows(&rows))
}

/// Per-draw regression coefficients (rows = draws).
pub fn beta_entry_draws(chain: &ChainOutput) -> DMatrix<f64> {
    matrix_from_rows(&chain.beta_draws)
}

fn matrix_from_rows(rows: &[DVector<f64>]) -> DMatrix<f64> {
    let n = rows.len();
    let m = rows.first().map_or(0, |r| r.len());
    DMatrix::from_fn(n, m, |i, j| rows[i][j])
}

/// Posterior cell-wise outlier probabilities (the stored z frequencies).
pub fn outlier_probabilities(chain: &ChainOutput) -> Result<DMatrix<f64>> {
    chain.z_freq.clone().ok_or_else(|| {
        Error::Unsupported(format!(
            "chain kind '{}' carries no mixture indicators",
            chain.model_kind.as_str()
        ))
    })
}

/// Count, per feature, the cells whose outlier probability exceeds the
/// threshold.
pub fn outlier_counts_per_feature(probs: &DMatrix<f64>, threshold: f64) -> Vec<usize> {
    (0..probs.ncols())
        .map(|k| (0..probs.nrows()).filter(|&i| probs[(i, k)] > threshold).count())
        .collect()
}

/// Off-diagonal edge flagged by the credible-interval rule.
#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    pub k: usize,
    pub l: usize,
    /// Sign of the posterior mean of `Omega_kl`.
    pub sign: i8,
    pub posterior_mean: f64,
}

/// Detect conditional-dependence edges: an edge `(k, l)` is reported when
/// the equal-tailed credible interval of `Omega_kl` at the given level
/// excludes zero. `level` is the credibility (0.95 for 95% intervals);
/// `level >= 1` asks for the full support and never reports an edge.
pub fn edge_detection(chain: &ChainOutput, level: f64) -> Result<Vec<Edge>> {
    if !(level > 0.0) {
        return Err(Error::Domain(format!("level must be positive, got {level}")));
    }
    if level >= 1.0 {
        return Ok(Vec::new());
    }
    let p = chain
        .sigma_draws
        .first()
        .ok_or_else(|| Error::Dimension("empty chain".into()))?
        .nrows();
    let omega = omega_entry_draws(chain)?;
    let alpha = 1.0 - level;
    let mut edges = Vec::new();
    let mut col = 0usize;
    for j in 0..p {
        for k in j..p {
            if j != k {
                let mut series: Vec<f64> = omega.column(col).iter().copied().collect();
                series.sort_by(f64::total_cmp);
                let lo = quantile(&series, alpha / 2.0);
                let hi = quantile(&series, 1.0 - alpha / 2.0);
                if lo > 0.0 || hi < 0.0 {
                    let mean = series.iter().sum::<f64>() / series.len() as f64;
                    edges.push(Edge {
                        k: j,
                        l: k,
                        sign: if mean >= 0.0 { 1 } else { -1 },
                        posterior_mean: mean,
                    });
                }
            }
            col += 1;
        }
    }
    Ok(edges)
}

/// One scored chain of a replicated study.
#[derive(Debug, Clone)]
pub struct StudyRow {
    pub replication: usize,
    pub method: ModelKind,
    /// Which parameter block was scored ("omega", "beta", "sigma").
    pub target: &'static str,
    pub metrics: MetricReport,
}

/// Run `replications` independent datasets of the scenario, fit every
/// requested method on each, and score them: graphical studies score the
/// precision entries, regression studies score `beta` and `Sigma`.
/// Replications run in parallel with seeds derived deterministically from
/// the scenario and sampler seeds.
pub fn run_replicated_study(
    scenario: &ScenarioSpec,
    methods: &[ModelKind],
    replications: usize,
    sampler: &SamplerConfig,
    alpha: f64,
) -> Result<Vec<StudyRow>> {
    scenario.validate()?;
    sampler.validate()?;
    let rows: Result<Vec<Vec<StudyRow>>> = (0..replications)
        .into_par_iter()
        .map(|rep| {
            let mut spec = *scenario;
            spec.seed = derive_seed(scenario.seed, rep as u64 + 1);
            let mut out = Vec::new();
            match spec.kind {
                ScenarioKind::Graphical { p, .. } => {
                    let (data, omega, _mask) = gen_graphical(&spec)?;
                    let truth = flatten_symmetric(&omega);
                    let prior = PriorConfig::default_for(p, 0);
                    for (mi, &method) in methods.iter().enumerate() {
                        let mut cfg = sampler.clone();
                        cfg.model_kind = method;
                        cfg.seed =
                            derive_seed(sampler.seed, (rep * methods.len() + mi) as u64 + 1);
                        let chain = run_chain(&data, &prior, &cfg)?;
                        let draws = omega_entry_draws(&chain)?;
                        out.push(StudyRow {
                            replication: rep,
                            method,
                            target: "omega",
                            metrics: compute_metrics(&draws, &truth, alpha)?,
                        });
                    }
                }
                ScenarioKind::Regression { p, q, .. } => {
                    let (data, (beta, sigma), _mask) = gen_regression(&spec)?;
                    let sigma_truth = flatten_symmetric(&sigma);
                    let prior = PriorConfig::default_for(p, q);
                    for (mi, &method) in methods.iter().enumerate() {
                        let mut cfg = sampler.clone();
                        cfg.model_kind = method;
                        cfg.seed =
                            derive_seed(sampler.seed, (rep * methods.len() + mi) as u64 + 1);
                        let chain = run_chain(&data, &prior, &cfg)?;
                        out.push(StudyRow {
                            replication: rep,
                            method,
                            target: "beta",
                            metrics: compute_metrics(&beta_entry_draws(&chain), &beta, alpha)?,
                        });
                        out.push(StudyRow {
                            replication: rep,
                            method,
                            target: "sigma",
                            metrics: compute_metrics(
                                &sigma_entry_draws(&chain),
                                &sigma_truth,
                                alpha,
                            )?,
                        });
                    }
                }
            }
            Ok(out)
        })
        .collect();
    Ok(rows?.into_iter().flatten().collect())
}

/// Mean of a metric over the rows matching a method and target.
pub fn aggregate_metric<F: Fn(&MetricReport) -> f64>(
    rows: &[StudyRow],
    method: ModelKind,
    target: &str,
    f: F,
) -> f64 {
    let selected: Vec<f64> = rows
        .iter()
        .filter(|r| r.method == method && r.target == target)
        .map(|r| f(&r.metrics))
        .collect();
    selected.iter().sum::<f64>() / selected.len().max(1) as f64
}
