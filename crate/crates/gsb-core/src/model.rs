//! Parametric models and canonical exponential families.
//!
//! Two interfaces live here. [`ParametricModel`] is the generic contract the
//! estimator and simulation layers run against: log-density, score, Hessian,
//! a sampler, and (optionally) an envelope on third log-density derivatives
//! near a reference parameter. [`ExponentialFamily`] is the canonical
//! natural-parameter interface `exp{eta' T(y) - A(eta) + S(y)}` with moment
//! oracles for the sufficient statistic; [`EfModel`] adapts any family to the
//! generic contract.
//!
//! Moment oracles are closed-form where a family registers them and fall back
//! to central finite differences of the cumulant function otherwise.

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::RngCore;

use crate::error::{Error, Result};

/// Per-observation envelope for third derivatives of the log-density: a
/// function `m` with `|d^3 log f(y; theta) / d theta_i d theta_u d theta_l|
/// <= m(y)` for every `theta` in the coordinate box of radius `eps` around
/// the reference point. Analysis-level envelopes are sums of `m` over the
/// observations in the prefix.
pub type ObsEnvelope = Box<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Generic parametric model with independent observations.
///
/// Implementations may assume arguments are valid (observation in the
/// support, parameter admissible); the free functions [`score`] and
/// [`log_density`] perform the checks.
pub trait ParametricModel: Send + Sync {
    /// Parameter dimension d.
    fn dim_param(&self) -> usize;
    /// Observation dimension t.
    fn dim_obs(&self) -> usize;
    fn in_support(&self, y: &[f64]) -> bool;
    fn admissible(&self, theta: &[f64]) -> bool;
    fn log_density(&self, y: &[f64], theta: &[f64]) -> f64;
    /// Score: gradient of the log-density in theta, written into `out`.
    fn score_into(&self, y: &[f64], theta: &[f64], out: &mut [f64]);
    /// Hessian of the log-density in theta.
    fn hessian_log_density(&self, y: &[f64], theta: &[f64]) -> DMatrix<f64>;
    /// Draw one observation at `theta` into `out` (length `dim_obs`).
    fn sample_into(&self, theta: &[f64], rng: &mut dyn RngCore, out: &mut [f64]);

    /// Per-observation third-derivative envelope valid on the eps-box around
    /// `theta0`, or `Ok(None)` when the model cannot certify one.
    fn third_deriv_envelope(
        &self,
        theta0: &[f64],
        eps: f64,
        i: usize,
        u: usize,
        l: usize,
    ) -> Result<Option<ObsEnvelope>> {
        let _ = (theta0, eps, i, u, l);
        Ok(None)
    }

    /// True when the log-density Hessian does not depend on the data, so
    /// `Var[d^2 log f / d theta_i d theta_l] = 0` exactly.
    fn hessian_is_deterministic(&self) -> bool {
        false
    }

    /// Downcast hook for exponential-family fast paths.
    fn as_exponential_family(&self) -> Option<&dyn ExponentialFamily> {
        None
    }

    fn name(&self) -> &str;
}

/// Canonical multi-parameter exponential family
/// `f(y; eta) = exp{ sum_j eta_j T_j(y) - A(eta) + S(y) } 1{y in B}`.
pub trait ExponentialFamily: Send + Sync {
    /// Natural-parameter dimension d.
    fn dim(&self) -> usize;
    /// Observation dimension t.
    fn obs_dim(&self) -> usize;
    /// Sufficient statistic T(y), written into `out` (length d).
    fn suff_stat(&self, y: &[f64], out: &mut [f64]);
    /// Carrier term S(y).
    fn carrier(&self, y: &[f64]) -> f64;
    /// Cumulant function A(eta).
    fn cumulant(&self, eta: &[f64]) -> f64;
    /// Support predicate for B.
    fn in_support(&self, y: &[f64]) -> bool;
    /// Admissible natural-parameter predicate.
    fn admissible(&self, eta: &[f64]) -> bool;
    /// Draw one observation at `eta` into `out`.
    fn sample_into(&self, eta: &[f64], rng: &mut dyn RngCore, out: &mut [f64]);

    /// Raw moment `E[prod_j T_{idx_j}(Y)]` of order `idx.len() <= 4`, when a
    /// closed form is registered. `None` routes callers to the
    /// finite-difference fallback (orders 1-3) or to a validation error
    /// (order 4).
    fn raw_moment(&self, eta: &[f64], idx: &[usize]) -> Option<f64> {
        let _ = (eta, idx);
        None
    }

    /// Whether a sufficient-statistic mean lies in the open range of the mean
    /// function, i.e. whether the MLE exists for that observed mean.
    fn suff_mean_in_range(&self, suff_mean: &[f64]) -> bool;

    /// Initial value for the mean-function inversion (method of moments; the
    /// shipped families return the exact inverse).
    fn init_from_suff_mean(&self, suff_mean: &[f64]) -> Vec<f64>;

    /// `E[ (sum_j |T_j(Y') - T_j(Y)|)^3 ]` for independent copies Y, Y',
    /// when a closed form is registered.
    fn abs_suff_diff_cubed(&self, eta: &[f64]) -> Option<f64> {
        let _ = eta;
        None
    }

    fn name(&self) -> &str;
}

// ---------------------------------------------------------------------------
// Operations on models
// ---------------------------------------------------------------------------

/// Score with input validation: gradient of `log f(y; theta)` in theta.
pub fn score(model: &dyn ParametricModel, y: &[f64], theta: &[f64]) -> Result<Vec<f64>> {
    if !model.in_support(y) {
        return Err(Error::Domain(format!("observation {y:?} outside the support")));
    }
    if !model.admissible(theta) {
        return Err(Error::Domain(format!("parameter {theta:?} outside the parameter space")));
    }
    let mut out = vec![0.0; model.dim_param()];
    model.score_into(y, theta, &mut out);
    Ok(out)
}

/// Log-density with input validation.
pub fn log_density(model: &dyn ParametricModel, y: &[f64], theta: &[f64]) -> Result<f64> {
    if !model.in_support(y) {
        return Err(Error::Domain(format!("observation {y:?} outside the support")));
    }
    if !model.admissible(theta) {
        return Err(Error::Domain(format!("parameter {theta:?} outside the parameter space")));
    }
    Ok(model.log_density(y, theta))
}

// ---------------------------------------------------------------------------
// Operations on exponential families
// ---------------------------------------------------------------------------

/// Derivative of the cumulant function A at `eta` for 1 to 3 indices:
/// order 1 gives `mu_i`, order 2 the covariance `mu_ij - mu_i mu_j`, order 3
/// the moment polynomial
/// `mu_ijk - mu_ij mu_k - mu_ik mu_j - mu_jk mu_i + 2 mu_i mu_j mu_k`.
pub fn cumulant_derivative(fam: &dyn ExponentialFamily, eta: &[f64], indices: &[usize]) -> Result<f64> {
    if indices.is_empty() || indices.len() > 3 {
        return Err(Error::Unsupported(format!(
            "cumulant derivatives are implemented for orders 1-3, got order {}",
            indices.len()
        )));
    }
    if let Some(&bad) = indices.iter().find(|&&i| i >= fam.dim()) {
        return Err(Error::Validation(format!(
            "index {bad} out of range for a family of dimension {}",
            fam.dim()
        )));
    }
    if !fam.admissible(eta) {
        return Err(Error::Domain(format!("eta {eta:?} outside the admissible set")));
    }
    match indices {
        [i] => Ok(match fam.raw_moment(eta, &[*i]) {
            Some(m) => m,
            None => fd_first(fam, eta, *i),
        }),
        [i, j] => {
            let closed = (|| {
                let mij = fam.raw_moment(eta, &[*i, *j])?;
                let mi = fam.raw_moment(eta, &[*i])?;
                let mj = fam.raw_moment(eta, &[*j])?;
                Some(mij - mi * mj)
            })();
            Ok(closed.unwrap_or_else(|| fd_second(fam, eta, *i, *j)))
        }
        [i, j, k] => {
            let closed = (|| {
                let mijk = fam.raw_moment(eta, &[*i, *j, *k])?;
                let mij = fam.raw_moment(eta, &[*i, *j])?;
                let mik = fam.raw_moment(eta, &[*i, *k])?;
                let mjk = fam.raw_moment(eta, &[*j, *k])?;
                let mi = fam.raw_moment(eta, &[*i])?;
                let mj = fam.raw_moment(eta, &[*j])?;
                let mk = fam.raw_moment(eta, &[*k])?;
                Some(mijk - mij * mk - mik * mj - mjk * mi + 2.0 * mi * mj * mk)
            })();
            Ok(closed.unwrap_or_else(|| fd_third(fam, eta, *i, *j, *k)))
        }
        _ => unreachable!(),
    }
}

/// Mean function tau(eta) = grad A(eta) = E_eta[T(Y)].
pub fn mean_function(fam: &dyn ExponentialFamily, eta: &[f64]) -> Result<Vec<f64>> {
    (0..fam.dim()).map(|i| cumulant_derivative(fam, eta, &[i])).collect()
}

/// Fisher information of one observation: Var_eta[T(Y)] = hess A(eta).
pub fn fisher_information(fam: &dyn ExponentialFamily, eta: &[f64]) -> Result<DMatrix<f64>> {
    let d = fam.dim();
    let mut m = DMatrix::zeros(d, d);
    for i in 0..d {
        for j in i..d {
            let v = cumulant_derivative(fam, eta, &[i, j])?;
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    Ok(m)
}

/// Fourth central moment `E[prod (T_idx - mu_idx)]` for four indices, from
/// the registered raw-moment oracles. Errors when an oracle is missing.
pub fn central_moment4(
    fam: &dyn ExponentialFamily,
    eta: &[f64],
    idx: [usize; 4],
) -> Result<f64> {
    let raw = |ix: &[usize]| {
        fam.raw_moment(eta, ix).ok_or_else(|| {
            Error::Validation(format!(
                "family '{}' has no closed-form raw moment of order {} (indices {ix:?})",
                fam.name(),
                ix.len()
            ))
        })
    };
    let [i, j, k, l] = idx;
    let m1 = [raw(&[i])?, raw(&[j])?, raw(&[k])?, raw(&[l])?];
    let mij = raw(&[i, j])?;
    let mik = raw(&[i, k])?;
    let mil = raw(&[i, l])?;
    let mjk = raw(&[j, k])?;
    let mjl = raw(&[j, l])?;
    let mkl = raw(&[k, l])?;
    let mijk = raw(&[i, j, k])?;
    let mijl = raw(&[i, j, l])?;
    let mikl = raw(&[i, k, l])?;
    let mjkl = raw(&[j, k, l])?;
    let mijkl = raw(&[i, j, k, l])?;
    let (a, b, c, d) = (m1[0], m1[1], m1[2], m1[3]);
    Ok(mijkl - a * mjkl - b * mikl - c * mijl - d * mijk
        + a * b * mkl
        + a * c * mjl
        + a * d * mjk
        + b * c * mil
        + b * d * mik
        + c * d * mij
        - 3.0 * a * b * c * d)
}

// ---------------------------------------------------------------------------
// mu^eps: box maxima of third cumulant derivatives
// ---------------------------------------------------------------------------

/// Closed coordinate box `{eta : |eta_j - center_j| <= radius}` over which
/// the third-derivative envelopes are taken.
#[derive(Debug, Clone)]
pub struct MomentBox {
    pub center: Vec<f64>,
    pub radius: f64,
}

impl MomentBox {
    pub fn new(center: Vec<f64>, radius: f64) -> Result<Self> {
        if !radius.is_finite() || radius < 0.0 {
            return Err(Error::Validation(format!("box radius must be finite and >= 0, got {radius}")));
        }
        if center.iter().any(|c| !c.is_finite()) {
            return Err(Error::validation("box center must be finite"));
        }
        Ok(MomentBox { center, radius })
    }
}

const MU_EPS_GRID: usize = 33;
const MU_EPS_SWEEPS: usize = 5;

/// `mu^eps_{iul}`: maximum of |third cumulant derivative| over the closed
/// box. Exhaustive product grid for d <= 3, coordinate-wise cyclic ascent
/// for larger d, then one golden-section refinement per coordinate.
pub fn mu_epsilon(
    fam: &dyn ExponentialFamily,
    mbox: &MomentBox,
    i: usize,
    u: usize,
    l: usize,
) -> Result<f64> {
    let d = fam.dim();
    if mbox.center.len() != d {
        return Err(Error::Validation(format!(
            "box center has dimension {}, family has {d}",
            mbox.center.len()
        )));
    }
    let lo: Vec<f64> = mbox.center.iter().map(|c| c - mbox.radius).collect();
    let hi: Vec<f64> = mbox.center.iter().map(|c| c + mbox.radius).collect();
    // The admissible sets of all shipped families are coordinate boxes, so
    // grid admissibility is equivalent to corner admissibility; checking the
    // grid keeps the error honest for user families too.
    let grid_1d = |j: usize| -> Vec<f64> {
        if mbox.radius == 0.0 {
            return vec![mbox.center[j]];
        }
        (0..MU_EPS_GRID)
            .map(|g| lo[j] + (hi[j] - lo[j]) * g as f64 / (MU_EPS_GRID - 1) as f64)
            .collect()
    };

    let objective = |eta: &[f64]| -> Result<f64> {
        if !fam.admissible(eta) {
            return Err(Error::Domain(format!(
                "moment box leaves the admissible set of '{}' at eta = {eta:?}",
                fam.name()
            )));
        }
        Ok(cumulant_derivative(fam, eta, &[i, u, l])?.abs())
    };

    let mut best_eta = mbox.center.clone();
    let mut best = objective(&best_eta)?;

    if d <= 3 {
        // Exhaustive product grid.
        let axes: Vec<Vec<f64>> = (0..d).map(grid_1d).collect();
        let mut idx = vec![0usize; d];
        let mut eta = vec![0.0; d];
        loop {
            for j in 0..d {
                eta[j] = axes[j][idx[j]];
            }
            let v = objective(&eta)?;
            if v > best {
                best = v;
                best_eta.copy_from_slice(&eta);
            }
            // odometer increment
            let mut j = 0;
            loop {
                if j == d {
                    break;
                }
                idx[j] += 1;
                if idx[j] < axes[j].len() {
                    break;
                }
                idx[j] = 0;
                j += 1;
            }
            if j == d {
                break;
            }
        }
    } else {
        // Coordinate-wise cyclic ascent from the center.
        let mut eta = mbox.center.clone();
        for _ in 0..MU_EPS_SWEEPS {
            for j in 0..d {
                for &x in &grid_1d(j) {
                    let old = eta[j];
                    eta[j] = x;
                    let v = objective(&eta)?;
                    if v > best {
                        best = v;
                        best_eta.copy_from_slice(&eta);
                    } else {
                        eta[j] = old;
                    }
                    if best_eta[j] == x {
                        eta[j] = x;
                    }
                }
                eta[j] = best_eta[j];
            }
        }
    }

    // One golden-section pass per coordinate around the grid optimum.
    if mbox.radius > 0.0 {
        let mut eta = best_eta.clone();
        for j in 0..d {
            let f = |x: f64| -> Result<f64> {
                let mut e = eta.clone();
                e[j] = x;
                objective(&e)
            };
            let (x, v) = golden_max(&f, lo[j], hi[j])?;
            if v > best {
                best = v;
                eta[j] = x;
            }
        }
    }
    Ok(best)
}

/// Golden-section maximization of a unimodal-enough objective on [lo, hi];
/// endpoints are included as candidates.
fn golden_max(f: &dyn Fn(f64) -> Result<f64>, lo: f64, hi: f64) -> Result<(f64, f64)> {
    const INVPHI: f64 = 0.618_033_988_749_894_9;
    let mut a = lo;
    let mut b = hi;
    let mut x1 = b - INVPHI * (b - a);
    let mut x2 = a + INVPHI * (b - a);
    let mut f1 = f(x1)?;
    let mut f2 = f(x2)?;
    for _ in 0..80 {
        if f1 < f2 {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + INVPHI * (b - a);
            f2 = f(x2)?;
        } else {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - INVPHI * (b - a);
            f1 = f(x1)?;
        }
    }
    let mut cands = [(lo, f(lo)?), (hi, f(hi)?), (x1, f1), (x2, f2)];
    cands.sort_by(|p, q| p.1.partial_cmp(&q.1).unwrap());
    Ok(*cands.last().unwrap())
}

// ---------------------------------------------------------------------------
// Finite-difference fallbacks for cumulant derivatives
// ---------------------------------------------------------------------------

fn fd_step(eta_j: f64, root: f64) -> f64 {
    eta_j.abs().max(1.0) * f64::EPSILON.powf(1.0 / root)
}

fn eval_shift(fam: &dyn ExponentialFamily, eta: &[f64], shifts: &[(usize, f64)]) -> f64 {
    let mut e = eta.to_vec();
    for &(j, h) in shifts {
        e[j] += h;
    }
    fam.cumulant(&e)
}

fn fd_first(fam: &dyn ExponentialFamily, eta: &[f64], i: usize) -> f64 {
    let h = fd_step(eta[i], 3.0);
    (eval_shift(fam, eta, &[(i, h)]) - eval_shift(fam, eta, &[(i, -h)])) / (2.0 * h)
}

fn fd_second(fam: &dyn ExponentialFamily, eta: &[f64], i: usize, j: usize) -> f64 {
    let hi = fd_step(eta[i], 3.0);
    if i == j {
        let f0 = fam.cumulant(eta);
        (eval_shift(fam, eta, &[(i, hi)]) - 2.0 * f0 + eval_shift(fam, eta, &[(i, -hi)])) / (hi * hi)
    } else {
        let hj = fd_step(eta[j], 3.0);
        (eval_shift(fam, eta, &[(i, hi), (j, hj)]) - eval_shift(fam, eta, &[(i, hi), (j, -hj)])
            - eval_shift(fam, eta, &[(i, -hi), (j, hj)])
            + eval_shift(fam, eta, &[(i, -hi), (j, -hj)]))
            / (4.0 * hi * hj)
    }
}

fn fd_third(fam: &dyn ExponentialFamily, eta: &[f64], i: usize, j: usize, k: usize) -> f64 {
    // Sort so equal indices are adjacent, then dispatch on multiplicity.
    let mut ix = [i, j, k];
    ix.sort_unstable();
    let [a, b, c] = ix;
    if a == b && b == c {
        let h = fd_step(eta[a], 4.0);
        (eval_shift(fam, eta, &[(a, 2.0 * h)]) - 2.0 * eval_shift(fam, eta, &[(a, h)])
            + 2.0 * eval_shift(fam, eta, &[(a, -h)])
            - eval_shift(fam, eta, &[(a, -2.0 * h)]))
            / (2.0 * h * h * h)
    } else if a == b || b == c {
        let (rep, single) = if a == b { (a, c) } else { (b, a) };
        let hr = fd_step(eta[rep], 4.0);
        let hs = fd_step(eta[single], 4.0);
        let d2 = |s: f64| {
            eval_shift(fam, eta, &[(rep, hr), (single, s)])
                - 2.0 * eval_shift(fam, eta, &[(single, s)])
                + eval_shift(fam, eta, &[(rep, -hr), (single, s)])
        };
        (d2(hs) - d2(-hs)) / (2.0 * hr * hr * hs)
    } else {
        let ha = fd_step(eta[a], 4.0);
        let hb = fd_step(eta[b], 4.0);
        let hc = fd_step(eta[c], 4.0);
        let mut acc = 0.0;
        for sa in [-1.0, 1.0] {
            for sb in [-1.0, 1.0] {
                for sc in [-1.0, 1.0] {
                    acc += sa
                        * sb
                        * sc
                        * eval_shift(fam, eta, &[(a, sa * ha), (b, sb * hb), (c, sc * hc)]);
                }
            }
        }
        acc / (8.0 * ha * hb * hc)
    }
}

// ---------------------------------------------------------------------------
// Exponential-family adapter to the generic model interface
// ---------------------------------------------------------------------------

/// Wraps an exponential family as a [`ParametricModel`], with the score
/// `T(y) - tau(eta)`, the data-free Hessian `-hess A(eta)` and the constant
/// per-observation third-derivative envelope `mu^eps_{iul}`.
#[derive(Clone)]
pub struct EfModel {
    fam: Arc<dyn ExponentialFamily>,
}

impl EfModel {
    pub fn new(fam: Arc<dyn ExponentialFamily>) -> Self {
        EfModel { fam }
    }

    pub fn family(&self) -> &Arc<dyn ExponentialFamily> {
        &self.fam
    }
}

impl ParametricModel for EfModel {
    fn dim_param(&self) -> usize {
        self.fam.dim()
    }

    fn dim_obs(&self) -> usize {
        self.fam.obs_dim()
    }

    fn in_support(&self, y: &[f64]) -> bool {
        self.fam.in_support(y)
    }

    fn admissible(&self, theta: &[f64]) -> bool {
        self.fam.admissible(theta)
    }

    fn log_density(&self, y: &[f64], theta: &[f64]) -> f64 {
        if !self.fam.in_support(y) {
            return f64::NEG_INFINITY;
        }
        let mut t = vec![0.0; self.fam.dim()];
        self.fam.suff_stat(y, &mut t);
        let dot: f64 = theta.iter().zip(&t).map(|(e, t)| e * t).sum();
        dot - self.fam.cumulant(theta) + self.fam.carrier(y)
    }

    fn score_into(&self, y: &[f64], theta: &[f64], out: &mut [f64]) {
        self.fam.suff_stat(y, out);
        for (i, o) in out.iter_mut().enumerate() {
            *o -= cumulant_derivative(self.fam.as_ref(), theta, &[i])
                .expect("admissible eta for score");
        }
    }

    fn hessian_log_density(&self, _y: &[f64], theta: &[f64]) -> DMatrix<f64> {
        let info = fisher_information(self.fam.as_ref(), theta).expect("admissible eta for hessian");
        -info
    }

    fn sample_into(&self, theta: &[f64], rng: &mut dyn RngCore, out: &mut [f64]) {
        self.fam.sample_into(theta, rng, out)
    }

    fn third_deriv_envelope(
        &self,
        theta0: &[f64],
        eps: f64,
        i: usize,
        u: usize,
        l: usize,
    ) -> Result<Option<ObsEnvelope>> {
        let mbox = MomentBox::new(theta0.to_vec(), eps)?;
        let bound = mu_epsilon(self.fam.as_ref(), &mbox, i, u, l)?;
        Ok(Some(Box::new(move |_y: &[f64]| bound)))
    }

    fn hessian_is_deterministic(&self) -> bool {
        true
    }

    fn as_exponential_family(&self) -> Option<&dyn ExponentialFamily> {
        Some(self.fam.as_ref())
    }

    fn name(&self) -> &str {
        self.fam.name()
    }
}

// ---------------------------------------------------------------------------
// Registry
// ---------------------------------------------------------------------------

/// Name-keyed registry of exponential families; preloaded with the shipped
/// ones, extensible through [`FamilyRegistry::register`].
pub struct FamilyRegistry {
    map: BTreeMap<String, Arc<dyn ExponentialFamily>>,
}

impl FamilyRegistry {
    pub fn with_builtins() -> Self {
        use crate::families::*;
        let mut reg = FamilyRegistry { map: BTreeMap::new() };
        reg.register(Arc::new(Exponential));
        reg.register(Arc::new(NormalKnownVariance::unit()));
        reg.register(Arc::new(BernoulliLogit));
        reg.register(Arc::new(NormalMeanVariance));
        reg
    }

    pub fn register(&mut self, fam: Arc<dyn ExponentialFamily>) {
        self.map.insert(fam.name().to_string(), fam);
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn ExponentialFamily>> {
        self.map.get(name).cloned().ok_or_else(|| {
            Error::Validation(format!(
                "unknown family '{name}'; registered: {}",
                self.map.keys().cloned().collect::<Vec<_>>().join(", ")
            ))
        })
    }

    pub fn names(&self) -> Vec<String> {
        self.map.keys().cloned().collect()
    }
}

impl Default for FamilyRegistry {
    fn default() -> Self {
        Self::with_builtins()
    }
}
