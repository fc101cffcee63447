//! Box-truncated multivariate normal sampling by exact Hamiltonian dynamics.
//!
//! The target has kernel `exp{-x'Px/2 + x'l}` restricted to an axis-aligned
//! box. In the whitened coordinates `v = L'(x - mu)` (with `P = LL'` and
//! `mu = P^-1 l`) the potential is `|v|^2/2`, so a particle with standard
//! normal momentum follows the closed-form trajectory
//!
//! ```text
//! v(s) = v(0) cos s + m(0) sin s,
//! ```
//!
//! and each box face is a linear wall in `v`. Wall-hit times solve
//! `a cos s + b sin s = c` analytically; at a hit the momentum component
//! along the wall normal is reflected. Iterating hits until a fixed travel
//! time has elapsed leaves the box-truncated normal invariant.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

const TWO_PI: f64 = 2.0 * std::f64::consts::PI;
/// Hit times below this are treated as the wall we just left.
const TIME_EPS: f64 = 1e-11;
const MAX_BOUNCES: usize = 2_000_000;

/// Multivariate normal with kernel `exp{-x'Px/2 + x'l}` truncated to
/// `lower <= x <= upper` element-wise.
#[derive(Debug, Clone)]
pub struct BoxTruncatedMvn {
    dim: usize,
    lower: DVector<f64>,
    upper: DVector<f64>,
    mean: DVector<f64>,
    /// Lower Cholesky factor of the precision.
    chol_l: DMatrix<f64>,
    /// Rows are the wall gradients in whitened coordinates: `x = mean + whiten * v`.
    whiten: DMatrix<f64>,
}

impl BoxTruncatedMvn {
    /// Validates shape, positive definiteness and `lower < upper`.
    ///
    /// Infinite bounds are allowed; those walls are never hit.
    pub fn new(
        precision: DMatrix<f64>,
        linear: DVector<f64>,
        lower: DVector<f64>,
        upper: DVector<f64>,
    ) -> Result<Self> {
        let p = precision.nrows();
        if precision.ncols() != p || linear.len() != p || lower.len() != p || upper.len() != p {
            return Err(Error::Dimension(format!(
                "inconsistent truncated-normal dimensions (p = {p})"
            )));
        }
        let asym = (&precision - precision.transpose()).abs().max();
        let scale = precision.abs().max().max(1.0);
        if asym > 1e-8 * scale {
            return Err(Error::Domain("precision matrix is not symmetric".into()));
        }
        for k in 0..p {
            if !(lower[k] < upper[k]) {
                return Err(Error::Domain(format!(
                    "box must satisfy lower < upper, violated at coordinate {k}: \
                     [{}, {}]",
                    lower[k], upper[k]
                )));
            }
        }
        let sym = crate::distributions::symmetrize(&precision);
        let chol = nalgebra::Cholesky::new(sym)
            .ok_or_else(|| Error::Numerical("precision matrix is not positive definite".into()))?;
        let mean = chol.solve(&linear);
        let chol_l = chol.unpack();
        let whiten = chol_l
            .transpose()
            .solve_upper_triangular(&DMatrix::identity(p, p))
            .ok_or_else(|| Error::Numerical("singular Cholesky factor".into()))?;
        Ok(Self {
            dim: p,
            lower,
            upper,
            mean,
            chol_l,
            whiten,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Mode/mean of the untruncated Gaussian.
    pub fn gaussian_mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn lower(&self) -> &DVector<f64> {
        &self.lower
    }

    pub fn upper(&self) -> &DVector<f64> {
        &self.upper
    }

    /// True when `x` lies in the closed box.
    pub fn contains(&self, x: &DVector<f64>) -> bool {
        (0..self.dim).all(|k| self.lower[k] <= x[k] && x[k] <= self.upper[k])
    }

    /// One exact-dynamics move of total duration `travel_time` from `start`
    /// (strictly inside the box). The returned point lies in the closed box.
    pub fn sample<R: Rng + ?Sized>(
        &self,
        start: &DVector<f64>,
        travel_time: f64,
        rng: &mut R,
    ) -> Result<DVector<f64>> {
        if start.len() != self.dim {
            return Err(Error::Dimension("start has wrong dimension".into()));
        }
        for k in 0..self.dim {
            if !(self.lower[k] < start[k] && start[k] < self.upper[k]) {
                return Err(Error::Domain(format!(
                    "start must lie strictly inside the box; coordinate {k} is {} with walls [{}, {}]",
                    start[k], self.lower[k], self.upper[k]
                )));
            }
        }
        if !(travel_time > 0.0) || !travel_time.is_finite() {
            return Err(Error::Domain(format!("travel time must be positive, got {travel_time}")));
        }

        let mut v = self.chol_l.tr_mul(&(start - &self.mean));
        let mut m = DVector::from_fn(self.dim, |_, _| StandardNormal.sample(rng));
        let mut t_left = travel_time;
        let mut bounces = 0usize;

        loop {
            let hit = self.earliest_hit(&v, &m, t_left);
            match hit {
                None => {
                    let (c, s) = (t_left.cos(), t_left.sin());
                    v = &v * c + &m * s;
                    break;
                }
                Some((s_hit, wall)) => {
                    let (c, s) = (s_hit.cos(), s_hit.sin());
                    let v_new = &v * c + &m * s;
                    let m_new = &m * c - &v * s;
                    v = v_new;
                    m = m_new;
                    self.reflect(&mut m, wall);
                    t_left -= s_hit;
                    bounces += 1;
                    if bounces > MAX_BOUNCES {
                        return Err(Error::Numerical(format!(
                            "wall-hit resolution failure: {MAX_BOUNCES} bounces exhausted \
                             with {t_left:.3e} travel time remaining (dim {})",
                            self.dim
                        )));
                    }
                    if t_left <= 0.0 {
                        break;
                    }
                }
            }
        }

        let mut x = &self.mean + &self.whiten * v;
        // The dynamics keep the particle inside up to round-off; clamp so the
        // box holds exactly, but treat a gross violation as a failed solve.
        for k in 0..self.dim {
            let width = (self.upper[k] - self.lower[k]).min(1.0);
            let slack = 1e-6 * width.max(1e-12);
            if x[k] < self.lower[k] - slack || x[k] > self.upper[k] + slack {
                return Err(Error::Numerical(format!(
                    "wall-hit resolution failure: coordinate {k} escaped to {} \
                     outside [{}, {}]",
                    x[k], self.lower[k], self.upper[k]
                )));
            }
            x[k] = x[k].clamp(self.lower[k], self.upper[k]);
        }
        Ok(x)
    }

    /// Earliest wall hit within `t_left`, as `(time, wall)`. Simultaneous
    /// hits resolve to the smallest coordinate index, lower wall first.
    fn earliest_hit(&self, v: &DVector<f64>, m: &DVector<f64>, t_left: f64) -> Option<(f64, Wall)> {
        let mut best: Option<(f64, Wall)> = None;
        for k in 0..self.dim {
            let g = self.whiten.row(k);
            let a = g.tr_dot(v);
            let b = g.tr_dot(m);
            let radius = a.hypot(b);
            if radius == 0.0 {
                continue;
            }
            let phase = b.atan2(a);
            for (bound, side) in [(self.lower[k], Side::Lower), (self.upper[k], Side::Upper)] {
                if !bound.is_finite() {
                    continue;
                }
                let c = bound - self.mean[k];
                if radius < c.abs() {
                    continue;
                }
                let theta = (c / radius).clamp(-1.0, 1.0).acos();
                for root in [phase - theta, phase + theta] {
                    let mut s = root.rem_euclid(TWO_PI);
                    if s < TIME_EPS {
                        s += TWO_PI;
                    }
                    if s > t_left {
                        continue;
                    }
                    let wall = Wall { coord: k, side };
                    match best {
                        Some((s_best, w_best)) => {
                            if s < s_best || (s == s_best && wall.orders_before(w_best)) {
                                best = Some((s, wall));
                            }
                        }
                        None => best = Some((s, wall)),
                    }
                }
            }
        }
        best
    }

    /// Reflect the momentum in the wall plane, forcing the normal component
    /// to point back into the box.
    fn reflect(&self, m: &mut DVector<f64>, wall: Wall) {
        let g = self.whiten.row(wall.coord).transpose();
        let gg = g.dot(&g);
        if gg == 0.0 {
            return;
        }
        let normal_component = g.dot(m) / gg;
        let target = match wall.side {
            Side::Lower => normal_component.abs(),
            Side::Upper => -normal_component.abs(),
        };
        *m += (target - normal_component) * g;
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Side {
    Lower,
    Upper,
}

#[derive(Debug, Clone, Copy)]
struct Wall {
    coord: usize,
    side: Side,
}

impl Wall {
    fn orders_before(self, other: Wall) -> bool {
        (self.coord, self.side == Side::Upper) < (other.coord, other.side == Side::Upper)
    }
}
