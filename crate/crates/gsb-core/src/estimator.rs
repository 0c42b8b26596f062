//! Repeated maximum likelihood estimation over data prefixes.
//!
//! The exponential-family path inverts the mean function: analysis k solves
//! `tau(eta) = mean of T over the first n_k observations` by damped Newton on
//! the strictly concave likelihood, warm-started from the previous analysis.
//! Generic models go through damped Newton on the prefix log-likelihood with
//! a gradient-ascent fallback when the Hessian is near singular.

use nalgebra::{DMatrix, DVector};

use crate::design::{GroupDesign, SequentialDataset, StackedVector};
use crate::error::{Error, Result};
use crate::model::{cumulant_derivative, fisher_information, ExponentialFamily, ParametricModel};

/// Gradient sup-norm tolerance for declaring convergence.
pub const GRAD_TOL: f64 = 1e-10;
/// Iteration cap per analysis.
pub const MAX_ITER: usize = 100;
/// Condition-number threshold beyond which a Newton step is replaced by a
/// gradient-ascent step.
pub const COND_LIMIT: f64 = 1e12;

/// Per-analysis estimates with convergence diagnostics. Non-convergence at an
/// analysis is flagged, not fatal; partial results stay available.
#[derive(Debug, Clone)]
pub struct MleResult {
    /// theta_hat_k per analysis; entries are meaningful only where
    /// `converged` is set.
    pub estimates: Vec<Vec<f64>>,
    pub converged: Vec<bool>,
    pub iterations: Vec<usize>,
    /// Final sup-norm of the convergence criterion per analysis (the mean
    /// residual on the exponential-family path, the score-sum gradient on
    /// the generic path).
    pub grad_sup_norms: Vec<f64>,
}

impl MleResult {
    pub fn all_converged(&self) -> bool {
        self.converged.iter().all(|&c| c)
    }

    /// Stacked estimate theta_hat^K in R^q.
    pub fn stacked(&self) -> Result<StackedVector> {
        if !self.all_converged() {
            return Err(Error::numerical("stacked estimate requested from a failed fit"));
        }
        StackedVector::from_blocks(&self.estimates)
    }
}

/// Invert the mean function: return eta with
/// `||tau(eta) - suff_mean||_inf < GRAD_TOL` by damped Newton, starting from
/// `init`. Errors when `suff_mean` leaves the range of tau (the MLE does not
/// exist for that observed mean).
pub fn ef_mle(fam: &dyn ExponentialFamily, suff_mean: &[f64], init: &[f64]) -> Result<Vec<f64>> {
    ef_mle_counted(fam, suff_mean, init).map(|(eta, _)| eta)
}

fn ef_mle_counted(
    fam: &dyn ExponentialFamily,
    suff_mean: &[f64],
    init: &[f64],
) -> Result<(Vec<f64>, usize)> {
    let d = fam.dim();
    if suff_mean.len() != d || init.len() != d {
        return Err(Error::validation("suff_mean/init dimension mismatch"));
    }
    if !fam.suff_mean_in_range(suff_mean) {
        return Err(Error::Domain(format!(
            "the MLE does not exist: sufficient-statistic mean {suff_mean:?} is outside the mean range of '{}'",
            fam.name()
        )));
    }
    if !fam.admissible(init) {
        return Err(Error::Domain(format!("inadmissible initial value {init:?}")));
    }

    // Objective g(eta) = eta' m - A(eta), gradient m - tau(eta), Hessian
    // -Var T; strictly concave. A step is accepted on likelihood ascent or,
    // once the likelihood has reached its floating-point plateau, on a
    // residual decrease (Newton contracts the residual quadratically there).
    let m = DVector::from_column_slice(suff_mean);
    let g = |eta: &DVector<f64>| -> f64 { eta.dot(&m) - fam.cumulant(eta.as_slice()) };
    let residual = |eta: &DVector<f64>| -> Result<DVector<f64>> {
        let tau: Vec<f64> = (0..d)
            .map(|i| cumulant_derivative(fam, eta.as_slice(), &[i]))
            .collect::<Result<_>>()?;
        Ok(&m - DVector::from_vec(tau))
    };

    let mut eta = DVector::from_column_slice(init);
    let mut gval = g(&eta);
    let mut grad = residual(&eta)?;
    for iter in 0..MAX_ITER {
        let res = grad.amax();
        if res < GRAD_TOL {
            return Ok((eta.as_slice().to_vec(), iter));
        }
        let info = fisher_information(fam, eta.as_slice())?;
        let step = newton_or_gradient_step(&info, &grad)?;

        let mut t = 1.0;
        let mut moved = false;
        for _ in 0..60 {
            let cand = &eta + &step * t;
            if fam.admissible(cand.as_slice()) {
                let cval = g(&cand);
                let cgrad = residual(&cand)?;
                if cval > gval || cgrad.amax() < res {
                    eta = cand;
                    gval = cval;
                    grad = cgrad;
                    moved = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if !moved {
            return Err(Error::Numerical(format!(
                "mean-function inversion stalled for '{}' at iteration {iter} (residual {res:.3e})",
                fam.name()
            )));
        }
    }
    Err(Error::Numerical(format!(
        "mean-function inversion did not converge for '{}' within {MAX_ITER} iterations",
        fam.name()
    )))
}

/// Solve `info * step = grad` (the Newton direction for a concave objective
/// with Hessian -info); falls back to the gradient direction scaled by the
/// largest eigenvalue when the information matrix is near singular.
fn newton_or_gradient_step(info: &DMatrix<f64>, grad: &DVector<f64>) -> Result<DVector<f64>> {
    let eig = info.clone().symmetric_eigen();
    let max_e = eig.eigenvalues.amax();
    let min_e = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(max_e.is_finite() && max_e > 0.0) {
        return Err(Error::numerical("information matrix has no positive eigenvalue"));
    }
    if min_e <= 0.0 || max_e / min_e > COND_LIMIT {
        // Armijo-style backtracking happens in the caller; here we only pick
        // the direction and a sane scale.
        return Ok(grad / max_e);
    }
    info.clone()
        .lu()
        .solve(grad)
        .ok_or_else(|| Error::numerical("failed to solve the Newton system"))
}

/// Group sequential MLEs with the exponential-family fast path when the
/// model exposes one, and damped Newton on the prefix log-likelihood
/// otherwise. `init` seeds analysis 1 on the generic path (the family path
/// derives its own start from the observed sufficient-statistic mean).
pub fn group_sequential_mles(
    model: &dyn ParametricModel,
    data: &SequentialDataset,
    init: Option<&[f64]>,
) -> Result<MleResult> {
    fit_observations(model, &data.design, &data.observations, init)
}

/// Slice-level entry point used by the simulation layer, which reuses one
/// observation buffer across replicates.
pub fn fit_observations(
    model: &dyn ParametricModel,
    design: &GroupDesign,
    observations: &[Vec<f64>],
    init: Option<&[f64]>,
) -> Result<MleResult> {
    if observations.len() != design.n() {
        return Err(Error::validation("observation count does not match the design"));
    }
    if let Some(fam) = model.as_exponential_family() {
        ef_fit_observations(fam, design, observations)
    } else {
        generic_fit_observations(model, design, observations, init)
    }
}

/// Exponential-family path: running sufficient-statistic sums, one
/// mean-function inversion per analysis.
pub fn ef_group_sequential_mles(
    fam: &dyn ExponentialFamily,
    data: &SequentialDataset,
) -> Result<MleResult> {
    ef_fit_observations(fam, &data.design, &data.observations)
}

/// Exponential-family path on a raw observation slice.
pub fn ef_fit_observations(
    fam: &dyn ExponentialFamily,
    design: &GroupDesign,
    observations: &[Vec<f64>],
) -> Result<MleResult> {
    let d = fam.dim();
    let kk = design.analyses();
    let mut out = MleResult {
        estimates: vec![vec![f64::NAN; d]; kk],
        converged: vec![false; kk],
        iterations: vec![0; kk],
        grad_sup_norms: vec![f64::NAN; kk],
    };

    let mut suff_sum = vec![0.0; d];
    let mut t = vec![0.0; d];
    let mut obs_idx = 0usize;
    let mut warm: Option<Vec<f64>> = None;
    for k in 0..kk {
        let nk = design.n_at(k);
        while obs_idx < nk {
            fam.suff_stat(&observations[obs_idx], &mut t);
            for i in 0..d {
                suff_sum[i] += t[i];
            }
            obs_idx += 1;
        }
        let suff_mean: Vec<f64> = suff_sum.iter().map(|s| s / nk as f64).collect();
        if !fam.suff_mean_in_range(&suff_mean) {
            // Boundary MLE (for example an all-success Bernoulli prefix):
            // flag and continue with the later analyses.
            out.grad_sup_norms[k] = f64::INFINITY;
            continue;
        }
        let init = warm.clone().unwrap_or_else(|| fam.init_from_suff_mean(&suff_mean));
        match ef_mle_counted(fam, &suff_mean, &init) {
            Ok((eta, iters)) => {
                let tau: Vec<f64> = (0..d)
                    .map(|i| cumulant_derivative(fam, &eta, &[i]))
                    .collect::<Result<_>>()?;
                out.grad_sup_norms[k] = tau
                    .iter()
                    .zip(&suff_mean)
                    .fold(0.0_f64, |a, (x, y)| a.max((x - y).abs()));
                out.iterations[k] = iters;
                out.estimates[k] = eta.clone();
                out.converged[k] = true;
                warm = Some(eta);
            }
            Err(Error::Domain(_)) => {
                out.grad_sup_norms[k] = f64::INFINITY;
            }
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

/// Generic path: damped Newton on the prefix log-likelihood.
pub fn generic_group_sequential_mles(
    model: &dyn ParametricModel,
    data: &SequentialDataset,
    init: Option<&[f64]>,
) -> Result<MleResult> {
    generic_fit_observations(model, &data.design, &data.observations, init)
}

fn generic_fit_observations(
    model: &dyn ParametricModel,
    design: &GroupDesign,
    observations: &[Vec<f64>],
    init: Option<&[f64]>,
) -> Result<MleResult> {
    let d = model.dim_param();
    let kk = design.analyses();
    let init = init.ok_or_else(|| {
        Error::validation("generic models need an initial value for the first analysis")
    })?;
    if init.len() != d {
        return Err(Error::validation("initial value has the wrong dimension"));
    }

    let mut out = MleResult {
        estimates: vec![vec![f64::NAN; d]; kk],
        converged: vec![false; kk],
        iterations: vec![0; kk],
        grad_sup_norms: vec![f64::NAN; kk],
    };

    let mut warm = init.to_vec();
    for k in 0..kk {
        let prefix = &observations[..design.n_at(k)];
        match newton_maximize(model, prefix, &warm) {
            Ok((theta, iters, res)) => {
                out.iterations[k] = iters;
                out.grad_sup_norms[k] = res;
                out.converged[k] = res < GRAD_TOL * prefix.len() as f64;
                if out.converged[k] {
                    warm = theta.clone();
                }
                out.estimates[k] = theta;
            }
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

/// Prefix log-likelihood, its gradient and its Hessian.
fn loglik_parts(
    model: &dyn ParametricModel,
    prefix: &[Vec<f64>],
    theta: &[f64],
) -> (f64, DVector<f64>, DMatrix<f64>) {
    let d = model.dim_param();
    let mut ll = 0.0;
    let mut grad = DVector::zeros(d);
    let mut hess = DMatrix::zeros(d, d);
    let mut s = vec![0.0; d];
    for y in prefix {
        ll += model.log_density(y, theta);
        model.score_into(y, theta, &mut s);
        for i in 0..d {
            grad[i] += s[i];
        }
        hess += model.hessian_log_density(y, theta);
    }
    (ll, grad, hess)
}

fn newton_maximize(
    model: &dyn ParametricModel,
    prefix: &[Vec<f64>],
    init: &[f64],
) -> Result<(Vec<f64>, usize, f64)> {
    let mut theta = DVector::from_column_slice(init);
    let (mut ll, mut grad, mut hess) = loglik_parts(model, prefix, theta.as_slice());
    for iter in 0..MAX_ITER {
        let res = grad.amax();
        // Absolute tolerance scaled by prefix size: the score sum involves
        // n_k rounding-level terms.
        if res < GRAD_TOL * prefix.len() as f64 {
            return Ok((theta.as_slice().to_vec(), iter, res));
        }
        let neg_hess = -&hess;
        let step = newton_or_gradient_step(&neg_hess, &grad)?;
        let mut t = 1.0;
        let mut moved = false;
        for _ in 0..60 {
            let cand = &theta + &step * t;
            if model.admissible(cand.as_slice()) {
                let (cll, cgrad, chess) = loglik_parts(model, prefix, cand.as_slice());
                // Accept on ascent, or on a score-norm decrease once the
                // likelihood sits on its floating-point plateau.
                if cll > ll || cgrad.amax() < res {
                    theta = cand;
                    ll = cll;
                    grad = cgrad;
                    hess = chess;
                    moved = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if !moved {
            return Ok((theta.as_slice().to_vec(), iter, grad.amax()));
        }
    }
    Ok((theta.as_slice().to_vec(), MAX_ITER, grad.amax()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::GroupDesign;
    use crate::families::{BernoulliLogit, Exponential, NormalKnownVariance, NormalMeanVariance};
    use crate::model::EfModel;
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand::SeedableRng;
    use std::sync::Arc;

    fn dataset(design: GroupDesign, ys: &[f64]) -> SequentialDataset {
        SequentialDataset::new(design, ys.iter().map(|&y| vec![y]).collect()).unwrap()
    }

    #[test]
    fn exponential_prefix_mles_closed_form() {
        let design = GroupDesign::new(1, &[2, 4]).unwrap();
        let data = dataset(design, &[1.0, 2.0, 1.0, 4.0]);
        let fit = ef_group_sequential_mles(&Exponential, &data).unwrap();
        assert!(fit.all_converged());
        assert_relative_eq!(fit.estimates[0][0], 2.0 / 3.0, epsilon = 1e-9);
        assert_relative_eq!(fit.estimates[1][0], 0.5, epsilon = 1e-9);
    }

    #[test]
    fn normal_prefix_mles_are_prefix_means() {
        let design = GroupDesign::new(1, &[3, 5]).unwrap();
        let ys = [0.4, -1.2, 2.0, 0.0, 1.0];
        let data = dataset(design, &ys);
        let fit = ef_group_sequential_mles(&NormalKnownVariance::unit(), &data).unwrap();
        assert!(fit.all_converged());
        assert_relative_eq!(fit.estimates[0][0], ys[..3].iter().sum::<f64>() / 3.0, epsilon = 1e-10);
        assert_relative_eq!(fit.estimates[1][0], ys.iter().sum::<f64>() / 5.0, epsilon = 1e-10);
    }

    #[test]
    fn bernoulli_all_success_prefix_is_flagged() {
        let design = GroupDesign::new(1, &[2, 4]).unwrap();
        let data = dataset(design, &[1.0, 1.0, 0.0, 1.0]);
        let fit = ef_group_sequential_mles(&BernoulliLogit, &data).unwrap();
        assert!(!fit.converged[0], "boundary MLE must be flagged");
        assert!(fit.converged[1]);
        assert_relative_eq!(
            fit.estimates[1][0],
            (0.75_f64 / 0.25).ln(),
            epsilon = 1e-9
        );
        assert!(fit.stacked().is_err());
    }

    #[test]
    fn ef_mle_examples() {
        let eta = ef_mle(&Exponential, &[-4.0 / 3.0], &[1.0]).unwrap();
        assert_relative_eq!(eta[0], 0.75, epsilon = 1e-10);
        let eta = ef_mle(&NormalKnownVariance::unit(), &[2.5], &[0.0]).unwrap();
        assert_relative_eq!(eta[0], 2.5, epsilon = 1e-10);
        assert!(ef_mle(&Exponential, &[0.5], &[1.0]).is_err());
    }

    #[test]
    fn ef_mle_round_trip_recovers_eta() {
        use crate::model::mean_function;
        let fams: Vec<(Arc<dyn crate::model::ExponentialFamily>, Vec<Vec<f64>>)> = vec![
            (Arc::new(Exponential), vec![vec![0.3], vec![1.0], vec![4.0]]),
            (Arc::new(BernoulliLogit), vec![vec![-2.0], vec![0.4]]),
            (Arc::new(NormalMeanVariance), vec![vec![0.5, -0.8], vec![-1.0, -0.2]]),
        ];
        for (fam, etas) in fams {
            for eta in etas {
                let tau = mean_function(fam.as_ref(), &eta).unwrap();
                // Perturbed start to exercise the Newton loop.
                let mut init = fam.init_from_suff_mean(&tau);
                for v in init.iter_mut() {
                    *v *= 1.2;
                }
                if !fam.admissible(&init) {
                    init = fam.init_from_suff_mean(&tau);
                }
                let rec = ef_mle(fam.as_ref(), &tau, &init).unwrap();
                for i in 0..fam.dim() {
                    assert!(
                        (rec[i] - eta[i]).abs() < 1e-8,
                        "{} round trip failed: {rec:?} vs {eta:?}",
                        fam.name()
                    );
                }
            }
        }
    }

    #[test]
    fn generic_newton_agrees_with_family_path() {
        let design = GroupDesign::new(2, &[40, 80]).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let eta0 = NormalMeanVariance::natural_from(0.5, 1.5);
        let model = EfModel::new(Arc::new(NormalMeanVariance));
        let mut obs = Vec::new();
        let mut y = vec![0.0];
        for _ in 0..design.n() {
            model.sample_into(&eta0, &mut rng, &mut y);
            obs.push(y.clone());
        }
        let data = SequentialDataset::new(design, obs).unwrap();
        let fast = ef_group_sequential_mles(&NormalMeanVariance, &data).unwrap();
        let slow = generic_group_sequential_mles(&model, &data, Some(&eta0)).unwrap();
        assert!(fast.all_converged() && slow.all_converged());
        for k in 0..2 {
            for i in 0..2 {
                assert!(
                    (fast.estimates[k][i] - slow.estimates[k][i]).abs() < 1e-7,
                    "analysis {k} coord {i}: {} vs {}",
                    fast.estimates[k][i],
                    slow.estimates[k][i]
                );
            }
        }
    }

    #[test]
    fn likelihood_ascent_from_init() {
        let design = GroupDesign::new(1, &[30]).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let ys: Vec<f64> = (0..30).map(|_| -rng.random::<f64>().ln() / 1.7).collect();
        let data = dataset(design, &ys);
        let model = EfModel::new(Arc::new(Exponential));
        let init = [0.2];
        let fit = generic_group_sequential_mles(&model, &data, Some(&init)).unwrap();
        assert!(fit.all_converged());
        let ll = |theta: &[f64]| -> f64 {
            data.observations.iter().map(|y| model.log_density(y, theta)).sum()
        };
        assert!(ll(&fit.estimates[0]) >= ll(&init));
    }

    #[test]
    fn estimation_error_shrinks_with_n() {
        // Median over 200 replicates of |eta_hat - eta0| at growing n.
        let mut medians = Vec::new();
        for (si, &n) in [20usize, 80, 320].iter().enumerate() {
            let mut errs = Vec::new();
            for r in 0..200u64 {
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1000 + r + si as u64 * 7919);
                let ys: Vec<f64> = (0..n).map(|_| -rng.random::<f64>().ln()).collect();
                let design = GroupDesign::new(1, &[n]).unwrap();
                let data = dataset(design, &ys);
                let fit = ef_group_sequential_mles(&Exponential, &data).unwrap();
                errs.push((fit.estimates[0][0] - 1.0).abs());
            }
            errs.sort_by(|a, b| a.partial_cmp(b).unwrap());
            medians.push(errs[errs.len() / 2]);
        }
        assert!(medians[0] > medians[1] && medians[1] > medians[2], "medians {medians:?}");
    }
}
