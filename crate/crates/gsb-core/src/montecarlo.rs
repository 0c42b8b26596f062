//! Seeded, reproducible simulation: datasets, repeated MLEs, the moment
//! estimates the bounds consume, empirical smooth-function distances, the
//! exchangeable-pair diagnostic and the order-of-decay fit.
//!
//! Reproducibility contract: every replicate derives its random stream from
//! `(base seed, replicate index)` alone, work is split into chunks whose
//! boundaries depend only on the replication count, and chunk results are
//! merged in chunk order with compensated summation. Estimates are therefore
//! bit-identical across runs and across worker counts.

use std::io::Write;
use std::sync::Arc;

use nalgebra::DVector;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::blockmat::{build_blocks, info_bar_ef, info_bar_mc, InfoSet};
use crate::bounds::HNorms;
use crate::design::{GroupDesign, SequentialDataset};
use crate::error::{Error, Result};
use crate::estimator::fit_observations;
use crate::model::{ObsEnvelope, ParametricModel};

// ---------------------------------------------------------------------------
// Compensated accumulation
// ---------------------------------------------------------------------------

/// Neumaier-compensated running sum. Merging adds the partial sum and then
/// the partial compensation, so a fixed merge order gives bit-stable totals.
#[derive(Debug, Clone, Copy, Default)]
pub struct Neumaier {
    sum: f64,
    comp: f64,
}

impl Neumaier {
    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn merge(&mut self, other: &Neumaier) {
        self.add(other.sum);
        self.add(other.comp);
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Mean estimator with a standard error from the second power sum.
#[derive(Debug, Clone, Copy, Default)]
struct MeanAcc {
    p1: Neumaier,
    p2: Neumaier,
    n: u64,
}

impl MeanAcc {
    #[inline]
    fn add(&mut self, x: f64) {
        self.p1.add(x);
        self.p2.add(x * x);
        self.n += 1;
    }

    fn merge(&mut self, o: &MeanAcc) {
        self.p1.merge(&o.p1);
        self.p2.merge(&o.p2);
        self.n += o.n;
    }

    fn est(&self) -> ScalarEst {
        if self.n == 0 {
            return ScalarEst { value: f64::NAN, se: f64::INFINITY, n: 0 };
        }
        let n = self.n as f64;
        let mean = self.p1.value() / n;
        let se = if self.n < 2 {
            f64::INFINITY
        } else {
            let var = ((self.p2.value() - n * mean * mean) / (n - 1.0)).max(0.0);
            (var / n).sqrt()
        };
        ScalarEst { value: mean, se, n: self.n }
    }
}

/// Variance estimator with a delta-method standard error from power sums up
/// to order four.
#[derive(Debug, Clone, Copy, Default)]
struct VarAcc {
    p1: Neumaier,
    p2: Neumaier,
    p3: Neumaier,
    p4: Neumaier,
    n: u64,
}

impl VarAcc {
    #[inline]
    fn add(&mut self, x: f64) {
        let x2 = x * x;
        self.p1.add(x);
        self.p2.add(x2);
        self.p3.add(x2 * x);
        self.p4.add(x2 * x2);
        self.n += 1;
    }

    fn merge(&mut self, o: &VarAcc) {
        self.p1.merge(&o.p1);
        self.p2.merge(&o.p2);
        self.p3.merge(&o.p3);
        self.p4.merge(&o.p4);
        self.n += o.n;
    }

    fn est(&self) -> ScalarEst {
        if self.n < 2 {
            return ScalarEst { value: f64::NAN, se: f64::INFINITY, n: self.n };
        }
        let n = self.n as f64;
        let m = self.p1.value() / n;
        let m2 = (self.p2.value() / n - m * m).max(0.0);
        let m4 = (self.p4.value() / n - 4.0 * m * self.p3.value() / n
            + 6.0 * m * m * self.p2.value() / n
            - 3.0 * m.powi(4))
        .max(0.0);
        let var = m2 * n / (n - 1.0);
        let se = ((m4 - m2 * m2).max(0.0) / n).sqrt();
        ScalarEst { value: var, se, n: self.n }
    }
}

/// A Monte Carlo estimate: point value, standard error of the estimate, and
/// the sample count behind it.
#[derive(Debug, Clone, Copy)]
pub struct ScalarEst {
    pub value: f64,
    pub se: f64,
    pub n: u64,
}

impl ScalarEst {
    pub fn exact(value: f64, n: u64) -> Self {
        ScalarEst { value, se: 0.0, n }
    }
}

// ---------------------------------------------------------------------------
// Configuration and the parallel driver
// ---------------------------------------------------------------------------

/// Simulation settings.
#[derive(Debug, Clone)]
pub struct McConfig {
    pub replications: u64,
    pub seed: u64,
    /// Worker-count hint; estimates are identical whatever its value.
    pub workers: Option<usize>,
    /// Maximum tolerated fraction of replicates discarded for failed MLEs.
    pub discard_threshold: f64,
    /// Observation draws for the Monte Carlo information path of generic
    /// models (exponential families use the exact path).
    pub info_draws: u64,
}

impl Default for McConfig {
    fn default() -> Self {
        McConfig {
            replications: 10_000,
            seed: 1,
            workers: None,
            discard_threshold: 1e-3,
            info_draws: 200_000,
        }
    }
}

impl McConfig {
    pub fn with_replications(mut self, reps: u64) -> Self {
        self.replications = reps;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

/// Independent stream for one replicate, derived only from (seed, index).
pub fn replicate_rng(seed: u64, replicate_index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replicate_index);
    rng
}

/// Chunk width as a pure function of the replication count, so results do
/// not depend on the worker count.
fn chunk_size(reps: u64) -> u64 {
    (reps / 256).clamp(64, 8192).min(reps.max(1))
}

/// Run `body` over replicate indices 0..reps in fixed chunks, optionally on
/// a dedicated pool, returning per-chunk accumulators in chunk order.
fn run_chunks<A, I, B>(reps: u64, workers: Option<usize>, init: I, body: B) -> Vec<A>
where
    A: Send,
    I: Fn() -> A + Sync,
    B: Fn(&mut A, u64) + Sync,
{
    let chunk = chunk_size(reps);
    let n_chunks = reps.div_ceil(chunk);
    let run = || {
        (0..n_chunks)
            .into_par_iter()
            .map(|ci| {
                let lo = ci * chunk;
                let hi = ((ci + 1) * chunk).min(reps);
                let mut acc = init();
                for r in lo..hi {
                    body(&mut acc, r);
                }
                acc
            })
            .collect::<Vec<_>>()
    };
    match workers {
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w.max(1))
            .build()
            .expect("worker pool")
            .install(run),
        None => run(),
    }
}

// ---------------------------------------------------------------------------
// Dataset simulation
// ---------------------------------------------------------------------------

/// Simulate one dataset as a deterministic function of (cfg.seed,
/// replicate_index); different replicate indices give independent streams,
/// and designs sharing an observation prefix share the drawn values.
pub fn simulate_dataset(
    model: &dyn ParametricModel,
    design: &GroupDesign,
    theta0: &[f64],
    replicate_index: u64,
    cfg: &McConfig,
) -> Result<SequentialDataset> {
    if !model.admissible(theta0) {
        return Err(Error::Domain(format!("theta0 {theta0:?} outside the parameter space")));
    }
    let mut rng = replicate_rng(cfg.seed, replicate_index);
    let mut obs = Vec::with_capacity(design.n());
    let mut y = vec![0.0; model.dim_obs()];
    for _ in 0..design.n() {
        model.sample_into(theta0, &mut rng, &mut y);
        obs.push(y.clone());
    }
    let mut data = SequentialDataset::new(design.clone(), obs)?;
    data.theta0 = Some(theta0.to_vec());
    data.seed = Some(cfg.seed);
    Ok(data)
}

fn fill_observations(
    model: &dyn ParametricModel,
    n: usize,
    theta0: &[f64],
    rng: &mut ChaCha8Rng,
    obs: &mut Vec<Vec<f64>>,
) {
    let t = model.dim_obs();
    if obs.len() != n {
        obs.clear();
        obs.resize(n, vec![0.0; t]);
    }
    for row in obs.iter_mut() {
        model.sample_into(theta0, rng, row);
    }
}

// ---------------------------------------------------------------------------
// Moment estimation
// ---------------------------------------------------------------------------

/// Every moment estimate the bound assembly needs, with counts and standard
/// errors. Score moments are stored per observation: `score_sq_var[j]` is
/// `Var(S_j^2)` for one observation, related to the normalized scores by
/// `Var(xi_ij^2) = Var(S_j^2)/n^2`; `score_diff_cubed` is
/// `E[(sum_j |S_j(Y') - S_j(Y)|)^3]`, so the bound's K3 equals
/// `score_diff_cubed / sqrt(n)`.
#[derive(Debug, Clone)]
pub struct MomentEstimates {
    pub dim: usize,
    pub analyses: usize,
    /// E[sum_{j=1}^q Q_j^2] over the whole stacked vector.
    pub eq2: ScalarEst,
    /// Per analysis k, per coordinate i: E[(theta_hat_k - theta0)_i^2].
    pub q2: Vec<Vec<ScalarEst>>,
    /// Per analysis k, flattened (i,u): E[(theta_hat_k - theta0)_i^2
    /// (theta_hat_k - theta0)_u^2].
    pub q4: Vec<Vec<ScalarEst>>,
    /// Per analysis k, flattened (i,u,l): E[(M^k_{iul})^2 | |Q_(m)| < eps],
    /// estimated by rejection on the conditioning event.
    pub m2_cond: Vec<Vec<ScalarEst>>,
    /// Fraction of converged replicates satisfying |Q_(m)| < eps.
    pub cond_accept_fraction: f64,
    /// Var(S_j^2) per observation.
    pub score_sq_var: Vec<ScalarEst>,
    /// Var(S_i S_j) per observation, upper triangle i < j at index i*d+j.
    pub score_cross_var: Vec<ScalarEst>,
    /// E[(sum_j |S_j(Y') - S_j(Y)|)^3] per observation pair.
    pub score_diff_cubed: ScalarEst,
    /// Var(d^2 log f / d theta_i d theta_l) per observation, index i*d+l.
    pub hess_var: Vec<ScalarEst>,
    pub info: InfoSet,
    pub used: u64,
    pub discarded: u64,
    pub warnings: Vec<String>,
}

impl MomentEstimates {
    pub fn validate(&self, d: usize, kk: usize) -> Result<()> {
        let ok = self.q2.len() == kk
            && self.q4.len() == kk
            && self.m2_cond.len() == kk
            && self.q2.iter().all(|v| v.len() == d)
            && self.q4.iter().all(|v| v.len() == d * d)
            && self.m2_cond.iter().all(|v| v.len() == d * d * d)
            && self.score_sq_var.len() == d
            && self.score_cross_var.len() == d * d
            && self.hess_var.len() == d * d;
        if !ok {
            return Err(Error::validation("moment estimate layout does not match (d, K)"));
        }
        for (name, est) in [("eq2", &self.eq2), ("score_diff_cubed", &self.score_diff_cubed)] {
            if !est.value.is_finite() {
                return Err(Error::Validation(format!("moment estimate {name} is not finite")));
            }
        }
        Ok(())
    }
}

struct MomentChunk {
    eq2: MeanAcc,
    q2: Vec<MeanAcc>,
    q4: Vec<MeanAcc>,
    m2: Vec<MeanAcc>,
    score_sq: Vec<VarAcc>,
    score_cross: Vec<VarAcc>,
    diff3: MeanAcc,
    hess: Vec<VarAcc>,
    accepted: u64,
    used: u64,
    discarded: u64,
    // scratch
    obs: Vec<Vec<f64>>,
    s: Vec<f64>,
    s_prev: Vec<f64>,
}

impl MomentChunk {
    fn new(d: usize, kk: usize, n: usize, t: usize) -> Self {
        MomentChunk {
            eq2: MeanAcc::default(),
            q2: vec![MeanAcc::default(); kk * d],
            q4: vec![MeanAcc::default(); kk * d * d],
            m2: vec![MeanAcc::default(); kk * d * d * d],
            score_sq: vec![VarAcc::default(); d],
            score_cross: vec![VarAcc::default(); d * d],
            diff3: MeanAcc::default(),
            hess: vec![VarAcc::default(); d * d],
            accepted: 0,
            used: 0,
            discarded: 0,
            obs: vec![vec![0.0; t]; n],
            s: vec![0.0; d],
            s_prev: vec![0.0; d],
        }
    }

    fn merge(&mut self, o: &MomentChunk) {
        self.eq2.merge(&o.eq2);
        for (a, b) in self.q2.iter_mut().zip(&o.q2) {
            a.merge(b);
        }
        for (a, b) in self.q4.iter_mut().zip(&o.q4) {
            a.merge(b);
        }
        for (a, b) in self.m2.iter_mut().zip(&o.m2) {
            a.merge(b);
        }
        for (a, b) in self.score_sq.iter_mut().zip(&o.score_sq) {
            a.merge(b);
        }
        for (a, b) in self.score_cross.iter_mut().zip(&o.score_cross) {
            a.merge(b);
        }
        self.diff3.merge(&o.diff3);
        for (a, b) in self.hess.iter_mut().zip(&o.hess) {
            a.merge(b);
        }
        self.accepted += o.accepted;
        self.used += o.used;
        self.discarded += o.discarded;
    }
}

/// Estimate every moment the bounds need at `theta0`, conditioning the
/// envelope moments on `|Q_(m)| < eps` by rejection. Replicates whose MLE
/// fails at any analysis are discarded and counted; exceeding the configured
/// discard threshold is an error.
pub fn estimate_moments(
    model: &dyn ParametricModel,
    design: &GroupDesign,
    theta0: &[f64],
    eps: f64,
    cfg: &McConfig,
) -> Result<MomentEstimates> {
    let d = design.dim();
    let kk = design.analyses();
    let n = design.n();
    if theta0.len() != d {
        return Err(Error::validation("theta0 dimension does not match the design"));
    }
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::Validation(format!("eps must be positive, got {eps}")));
    }
    if cfg.replications == 0 {
        return Err(Error::validation("at least one replication is required"));
    }

    // Envelopes once, shared across the pool.
    let mut envelopes: Vec<ObsEnvelope> = Vec::with_capacity(d * d * d);
    for i in 0..d {
        for u in 0..d {
            for l in 0..d {
                match model.third_deriv_envelope(theta0, eps, i, u, l)? {
                    Some(env) => envelopes.push(env),
                    None => {
                        return Err(Error::Validation(format!(
                            "model '{}' provides no third-derivative envelope for indices ({i},{u},{l}); \
                             the envelope moment E[(M^k)^2 | |Q_(m)| < eps] cannot be estimated",
                            model.name()
                        )))
                    }
                }
            }
        }
    }
    let envelopes = Arc::new(envelopes);
    let hess_deterministic = model.hessian_is_deterministic();

    let chunks = run_chunks(
        cfg.replications,
        cfg.workers,
        || MomentChunk::new(d, kk, n, model.dim_obs()),
        |acc: &mut MomentChunk, r: u64| {
            let mut rng = replicate_rng(cfg.seed, r);
            fill_observations(model, n, theta0, &mut rng, &mut acc.obs);

            // Per-observation score statistics (independent of the fit).
            for (oi, y) in acc.obs.iter().enumerate() {
                model.score_into(y, theta0, &mut acc.s);
                for j in 0..d {
                    acc.score_sq[j].add(acc.s[j] * acc.s[j]);
                }
                for i in 0..d {
                    for j in (i + 1)..d {
                        acc.score_cross[i * d + j].add(acc.s[i] * acc.s[j]);
                    }
                }
                if !hess_deterministic {
                    let h = model.hessian_log_density(y, theta0);
                    for i in 0..d {
                        for l in 0..d {
                            acc.hess[i * d + l].add(h[(i, l)]);
                        }
                    }
                }
                if oi % 2 == 1 {
                    let sum: f64 =
                        (0..d).map(|j| (acc.s[j] - acc.s_prev[j]).abs()).sum();
                    acc.diff3.add(sum.powi(3));
                }
                std::mem::swap(&mut acc.s, &mut acc.s_prev);
            }

            // Fit and the estimator moments.
            let fit = match fit_observations(model, design, &acc.obs, Some(theta0)) {
                Ok(f) => f,
                Err(_) => {
                    acc.discarded += 1;
                    return;
                }
            };
            if !fit.all_converged() {
                acc.discarded += 1;
                return;
            }
            acc.used += 1;

            let mut eq2 = 0.0;
            let mut qmax = 0.0_f64;
            for k in 0..kk {
                for i in 0..d {
                    let qi = fit.estimates[k][i] - theta0[i];
                    qmax = qmax.max(qi.abs());
                    eq2 += qi * qi;
                    acc.q2[k * d + i].add(qi * qi);
                    for u in 0..d {
                        let qu = fit.estimates[k][u] - theta0[u];
                        acc.q4[(k * d + i) * d + u].add(qi * qi * qu * qu);
                    }
                }
            }
            acc.eq2.add(eq2);

            if qmax < eps {
                acc.accepted += 1;
                for (t_idx, env) in envelopes.iter().enumerate() {
                    let mut running = 0.0;
                    let mut k = 0usize;
                    for (oi, y) in acc.obs.iter().enumerate() {
                        running += env(y);
                        while k < kk && oi + 1 == design.n_at(k) {
                            acc.m2[k * d * d * d + t_idx].add(running * running);
                            k += 1;
                        }
                    }
                }
            }
        },
    );

    let mut total = MomentChunk::new(d, kk, n, model.dim_obs());
    for c in &chunks {
        total.merge(c);
    }

    let reps = cfg.replications;
    let discard_fraction = total.discarded as f64 / reps as f64;
    if discard_fraction > cfg.discard_threshold {
        return Err(Error::MonteCarlo(format!(
            "{} of {} replicates discarded for failed MLEs ({:.4}%), above the threshold {:.4}%",
            total.discarded,
            reps,
            100.0 * discard_fraction,
            100.0 * cfg.discard_threshold
        )));
    }
    if total.used == 0 {
        return Err(Error::MonteCarlo("no replicate produced a converged MLE".to_string()));
    }
    if total.accepted == 0 {
        return Err(Error::MonteCarlo(format!(
            "no replicate satisfied the conditioning event |Q_(m)| < {eps}; widen eps or increase n"
        )));
    }

    let mut warnings = Vec::new();
    let accept_fraction = total.accepted as f64 / total.used as f64;
    if accept_fraction < 0.10 {
        warnings.push(format!(
            "conditioning event |Q_(m)| < {eps} accepted only {:.2}% of replicates; the rejection estimate is noisy",
            100.0 * accept_fraction
        ));
    }
    if total.discarded > 0 {
        warnings.push(format!(
            "{} replicates discarded for failed MLEs; estimator moments condition on convergence",
            total.discarded
        ));
    }

    let info = match model.as_exponential_family() {
        Some(fam) => info_bar_ef(fam, design, theta0)?,
        None => info_bar_mc(
            model,
            design,
            theta0,
            cfg.info_draws,
            cfg.seed.wrapping_add(0x9E37_79B9_7F4A_7C15),
        )?,
    };

    let hess_var = if hess_deterministic {
        vec![ScalarEst::exact(0.0, reps * n as u64); d * d]
    } else {
        total.hess.iter().map(|a| a.est()).collect()
    };

    Ok(MomentEstimates {
        dim: d,
        analyses: kk,
        eq2: total.eq2.est(),
        q2: (0..kk).map(|k| total.q2[k * d..(k + 1) * d].iter().map(|a| a.est()).collect()).collect(),
        q4: (0..kk)
            .map(|k| total.q4[k * d * d..(k + 1) * d * d].iter().map(|a| a.est()).collect())
            .collect(),
        m2_cond: (0..kk)
            .map(|k| {
                total.m2[k * d * d * d..(k + 1) * d * d * d].iter().map(|a| a.est()).collect()
            })
            .collect(),
        cond_accept_fraction: accept_fraction,
        score_sq_var: total.score_sq.iter().map(|a| a.est()).collect(),
        score_cross_var: total.score_cross.iter().map(|a| a.est()).collect(),
        score_diff_cubed: total.diff3.est(),
        hess_var,
        info,
        used: total.used,
        discarded: total.discarded,
        warnings,
    })
}

// ---------------------------------------------------------------------------
// Test functions
// ---------------------------------------------------------------------------

/// Evaluable test function with certified norms and, when available, the
/// closed-form standard-normal expectation E h(Z).
#[derive(Clone)]
pub struct TestFunction {
    pub name: String,
    evaluator: Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>,
    pub norms: HNorms,
    pub normal_expectation: Option<f64>,
}

impl TestFunction {
    /// h == c: all derivative norms zero, distance identically zero.
    pub fn constant(c: f64) -> Self {
        TestFunction {
            name: format!("const({c})"),
            evaluator: Arc::new(move |_| c),
            norms: HNorms {
                sup: c.abs(),
                d1: 0.0,
                d2: Some(0.0),
                d3: Some(0.0),
                centered_sup: Some(0.0),
            },
            normal_expectation: Some(c),
        }
    }

    /// h(x) = cos(a'x + phase); E h(Z) = cos(phase) exp(-|a|^2/2); certified
    /// norms ||h|| = 1, ||h||_k = max_i |a_i| * |a|^{k-1}.
    pub fn cosine_with_phase(coeffs: Vec<f64>, phase: f64) -> Self {
        let max_abs = coeffs.iter().fold(0.0_f64, |m, &a| m.max(a.abs()));
        let norm2 = coeffs.iter().map(|a| a * a).sum::<f64>().sqrt();
        let eh = phase.cos() * (-0.5 * norm2 * norm2).exp();
        let name = format!("cos(a.x{})", if phase == 0.0 { String::new() } else { format!("+{phase}") });
        let a = coeffs.clone();
        TestFunction {
            name,
            evaluator: Arc::new(move |x: &[f64]| {
                let dot: f64 = a.iter().zip(x).map(|(ai, xi)| ai * xi).sum();
                (dot + phase).cos()
            }),
            norms: HNorms {
                sup: 1.0,
                d1: max_abs,
                d2: Some(max_abs * norm2),
                d3: Some(max_abs * norm2 * norm2),
                centered_sup: Some(1.0 + eh.abs()),
            },
            normal_expectation: Some(eh),
        }
    }

    pub fn cosine(coeffs: Vec<f64>) -> Self {
        Self::cosine_with_phase(coeffs, 0.0)
    }

    /// h(x) = prod_i cos(a_i x_i); E h(Z) = prod exp(-a_i^2/2); the same
    /// certified norm bounds as the plain cosine apply.
    pub fn cosine_product(coeffs: Vec<f64>) -> Self {
        let max_abs = coeffs.iter().fold(0.0_f64, |m, &a| m.max(a.abs()));
        let norm2 = coeffs.iter().map(|a| a * a).sum::<f64>().sqrt();
        let eh: f64 = coeffs.iter().map(|a| (-0.5 * a * a).exp()).product();
        let a = coeffs.clone();
        TestFunction {
            name: "prod cos(a_i x_i)".to_string(),
            evaluator: Arc::new(move |x: &[f64]| {
                a.iter().zip(x).map(|(ai, xi)| (ai * xi).cos()).product()
            }),
            norms: HNorms {
                sup: 1.0,
                d1: max_abs,
                d2: Some(max_abs * norm2),
                d3: Some(max_abs * norm2 * norm2),
                centered_sup: Some(1.0 + eh.abs()),
            },
            normal_expectation: Some(eh),
        }
    }

    /// Product of per-coordinate factors with caller-certified norms; the
    /// standard-normal expectation is computed by one-dimensional quadrature
    /// per factor.
    pub fn coordinate_product(
        name: &str,
        factors: Vec<Arc<dyn Fn(f64) -> f64 + Send + Sync>>,
        norms: HNorms,
    ) -> Self {
        let eh: f64 = factors.iter().map(|f| normal_expectation_1d(f.as_ref())).product();
        let fs = factors.clone();
        TestFunction {
            name: name.to_string(),
            evaluator: Arc::new(move |x: &[f64]| {
                fs.iter().zip(x).map(|(f, xi)| f(*xi)).product()
            }),
            norms,
            normal_expectation: Some(eh),
        }
    }

    /// Fully custom function; pass `normal_expectation: None` only if the
    /// smooth-distance estimator will not be called with it.
    pub fn custom(
        name: &str,
        f: Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>,
        norms: HNorms,
        normal_expectation: Option<f64>,
    ) -> Self {
        TestFunction { name: name.to_string(), evaluator: f, norms, normal_expectation }
    }

    #[inline]
    pub fn eval(&self, x: &[f64]) -> f64 {
        (self.evaluator)(x)
    }

    /// Spot-check the certified norms against sampled central finite
    /// differences; errors when a sampled derivative exceeds its certificate.
    pub fn spot_check_norms(&self, dim: usize, seed: u64, points: usize) -> Result<()> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = 1e-4;
        let slack = 1.0 + 1e-4;
        for _ in 0..points {
            let x: Vec<f64> = (0..dim).map(|_| 4.0 * rng.random::<f64>() - 2.0).collect();
            if self.eval(&x).abs() > self.norms.sup * slack + 1e-12 {
                return Err(Error::validation(format!(
                    "certified sup norm violated by {} at {x:?}",
                    self.name
                )));
            }
            for i in 0..dim {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[i] += h;
                xm[i] -= h;
                let d1 = (self.eval(&xp) - self.eval(&xm)) / (2.0 * h);
                if d1.abs() > self.norms.d1 * slack + 1e-6 {
                    return Err(Error::validation(format!(
                        "certified first-derivative norm violated by {}",
                        self.name
                    )));
                }
                if let Some(cert2) = self.norms.d2 {
                    for j in 0..dim {
                        let mut xpp = x.clone();
                        let mut xpm = x.clone();
                        let mut xmp = x.clone();
                        let mut xmm = x.clone();
                        xpp[i] += h;
                        xpp[j] += h;
                        xpm[i] += h;
                        xpm[j] -= h;
                        xmp[i] -= h;
                        xmp[j] += h;
                        xmm[i] -= h;
                        xmm[j] -= h;
                        let d2 = (self.eval(&xpp) - self.eval(&xpm) - self.eval(&xmp)
                            + self.eval(&xmm))
                            / (4.0 * h * h);
                        if d2.abs() > cert2 * slack + 1e-4 {
                            return Err(Error::validation(format!(
                                "certified second-derivative norm violated by {}",
                                self.name
                            )));
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// E[f(Z)] for scalar standard normal Z by composite Simpson quadrature on
/// [-12, 12]; adequate for bounded piecewise-smooth factors.
pub fn normal_expectation_1d(f: &dyn Fn(f64) -> f64) -> f64 {
    const HALF_WIDTH: f64 = 12.0;
    const PANELS: usize = 12_000; // even count of panels
    let h = 2.0 * HALF_WIDTH / PANELS as f64;
    let phi = |x: f64| (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let g = |x: f64| f(x) * phi(x);
    let mut acc = g(-HALF_WIDTH) + g(HALF_WIDTH);
    for i in 1..PANELS {
        let x = -HALF_WIDTH + i as f64 * h;
        acc += g(x) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    acc * h / 3.0
}

// ---------------------------------------------------------------------------
// Empirical smooth-function distance
// ---------------------------------------------------------------------------

/// Empirical distance for one test function.
#[derive(Debug, Clone)]
pub struct DistanceEstimate {
    pub name: String,
    /// |mean_r h(X_r) - E h(Z)|.
    pub estimate: f64,
    pub std_error: f64,
    pub h_mean: f64,
    pub normal_expectation: f64,
}

/// Empirical smooth-function distances plus replicate accounting.
#[derive(Debug, Clone)]
pub struct SmoothDistanceReport {
    pub distances: Vec<DistanceEstimate>,
    pub used: u64,
    pub discarded: u64,
}

struct DistanceChunk {
    h: Vec<MeanAcc>,
    used: u64,
    discarded: u64,
    csv: String,
    obs: Vec<Vec<f64>>,
}

/// `|E h(X) - E h(Z)|` with X the standardized stacked estimator
/// `sqrt(n) J_n^{-1/2} (theta_hat^K - theta0^K)`, estimated over
/// `cfg.replications` simulated datasets.
pub fn empirical_smooth_distance(
    model: &dyn ParametricModel,
    design: &GroupDesign,
    theta0: &[f64],
    h: &TestFunction,
    cfg: &McConfig,
) -> Result<(f64, f64)> {
    let rep = empirical_smooth_distances(model, design, theta0, std::slice::from_ref(h), cfg, None)?;
    Ok((rep.distances[0].estimate, rep.distances[0].std_error))
}

/// Batched variant: all test functions are evaluated on one simulation pass.
/// When `csv` is given, converged replicates stream out as
/// `replicate,theta_hat entries...,h values...` rows in replicate order.
pub fn empirical_smooth_distances(
    model: &dyn ParametricModel,
    design: &GroupDesign,
    theta0: &[f64],
    hs: &[TestFunction],
    cfg: &McConfig,
    csv: Option<&mut dyn Write>,
) -> Result<SmoothDistanceReport> {
    let d = design.dim();
    let kk = design.analyses();
    let n = design.n();
    let q = design.q();
    if theta0.len() != d {
        return Err(Error::validation("theta0 dimension does not match the design"));
    }
    if hs.is_empty() {
        return Err(Error::validation("at least one test function is required"));
    }
    let eh: Vec<f64> = hs
        .iter()
        .map(|h| {
            h.normal_expectation.ok_or_else(|| {
                Error::Validation(format!(
                    "test function '{}' has no normal expectation; register a closed form or a quadrature-backed product form",
                    h.name
                ))
            })
        })
        .collect::<Result<_>>()?;

    let info = match model.as_exponential_family() {
        Some(fam) => info_bar_ef(fam, design, theta0)?,
        None => info_bar_mc(
            model,
            design,
            theta0,
            cfg.info_draws,
            cfg.seed.wrapping_add(0x9E37_79B9_7F4A_7C15),
        )?,
    };
    let blocks = build_blocks(&info, design)?;
    let root_n = (n as f64).sqrt();
    let standardizer = &blocks.j_n_inv_sqrt * root_n;
    let want_csv = csv.is_some();

    let chunks = run_chunks(
        cfg.replications,
        cfg.workers,
        || DistanceChunk {
            h: vec![MeanAcc::default(); hs.len()],
            used: 0,
            discarded: 0,
            csv: String::new(),
            obs: vec![vec![0.0; model.dim_obs()]; n],
        },
        |acc: &mut DistanceChunk, r: u64| {
            let mut rng = replicate_rng(cfg.seed, r);
            fill_observations(model, n, theta0, &mut rng, &mut acc.obs);
            let fit = match fit_observations(model, design, &acc.obs, Some(theta0)) {
                Ok(f) if f.all_converged() => f,
                _ => {
                    acc.discarded += 1;
                    return;
                }
            };
            acc.used += 1;
            let mut qvec = DVector::zeros(q);
            for k in 0..kk {
                for i in 0..d {
                    qvec[k * d + i] = fit.estimates[k][i] - theta0[i];
                }
            }
            let x = &standardizer * qvec;
            let xs = x.as_slice();
            if want_csv {
                acc.csv.push_str(&format!("{r}"));
                for k in 0..kk {
                    for i in 0..d {
                        acc.csv.push_str(&format!(",{}", fit.estimates[k][i]));
                    }
                }
            }
            for (m, h) in hs.iter().enumerate() {
                let v = h.eval(xs);
                acc.h[m].add(v);
                if want_csv {
                    acc.csv.push_str(&format!(",{v}"));
                }
            }
            if want_csv {
                acc.csv.push('\n');
            }
        },
    );

    let mut h_acc = vec![MeanAcc::default(); hs.len()];
    let mut used = 0;
    let mut discarded = 0;
    for c in &chunks {
        for (a, b) in h_acc.iter_mut().zip(&c.h) {
            a.merge(b);
        }
        used += c.used;
        discarded += c.discarded;
    }
    let discard_fraction = discarded as f64 / cfg.replications as f64;
    if discard_fraction > cfg.discard_threshold {
        return Err(Error::MonteCarlo(format!(
            "{discarded} of {} replicates discarded ({:.4}%), above the threshold {:.4}%",
            cfg.replications,
            100.0 * discard_fraction,
            100.0 * cfg.discard_threshold
        )));
    }
    if used == 0 {
        return Err(Error::MonteCarlo("no replicate produced a converged MLE".to_string()));
    }

    if let Some(w) = csv {
        let mut header = String::from("replicate");
        for k in 0..kk {
            for i in 0..d {
                header.push_str(&format!(",theta_hat_{}_{}", k + 1, i + 1));
            }
        }
        for h in hs {
            header.push_str(&format!(",h[{}]", h.name));
        }
        header.push('\n');
        w.write_all(header.as_bytes())?;
        for c in &chunks {
            w.write_all(c.csv.as_bytes())?;
        }
    }

    let distances = hs
        .iter()
        .zip(&h_acc)
        .zip(&eh)
        .map(|((h, acc), &ez)| {
            let e = acc.est();
            DistanceEstimate {
                name: h.name.clone(),
                estimate: (e.value - ez).abs(),
                std_error: e.se,
                h_mean: e.value,
                normal_expectation: ez,
            }
        })
        .collect();

    Ok(SmoothDistanceReport { distances, used, discarded })
}

// ---------------------------------------------------------------------------
// Exchangeable-pair diagnostic
// ---------------------------------------------------------------------------

fn score_groups(
    model: &dyn ParametricModel,
    data: &SequentialDataset,
    theta0: &[f64],
) -> (Vec<f64>, usize) {
    let design = &data.design;
    let d = design.dim();
    let kk = design.analyses();
    let n = design.n();
    let mut w = vec![0.0; kk * d];
    let mut s = vec![0.0; d];
    for k in 0..kk {
        for i in design.group_range(k) {
            model.score_into(&data.observations[i], theta0, &mut s);
            for j in 0..d {
                w[k * d + j] += s[j];
            }
        }
    }
    let scale = 1.0 / (n as f64).sqrt();
    for v in w.iter_mut() {
        *v *= scale;
    }
    (w, n)
}

/// Analytic exchangeable-pair residual: average E[W' - W | W, I = j] over
/// all n replacement positions with E[score(Y')] = 0 applied analytically,
/// then report `||average + W/n||_inf`. The linearity identity makes this
/// zero up to floating-point rounding.
pub fn exchangeable_pair_diagnostic(
    model: &dyn ParametricModel,
    data: &SequentialDataset,
    theta0: &[f64],
) -> Result<f64> {
    if !model.admissible(theta0) {
        return Err(Error::Domain(format!("theta0 {theta0:?} outside the parameter space")));
    }
    let design = &data.design;
    let d = design.dim();
    let n = design.n() as f64;
    let (w, _) = score_groups(model, data, theta0);

    // Position loop with the per-position 1/n weight applied before summing,
    // a different rounding path from W/n.
    let mut avg = vec![0.0; w.len()];
    let mut s = vec![0.0; d];
    let scale = 1.0 / (n * n.sqrt());
    for (i, y) in data.observations.iter().enumerate() {
        let k = design.analysis_of(i);
        model.score_into(y, theta0, &mut s);
        for j in 0..d {
            avg[k * d + j] -= s[j] * scale;
        }
    }
    let mut res = 0.0_f64;
    for (a, wv) in avg.iter().zip(&w) {
        res = res.max((a + wv / n).abs());
    }
    Ok(res)
}

/// Monte Carlo variant of the diagnostic: draw `resamples` random
/// replacements (position and fresh observation), average the observed
/// `W' - W`, and return the root-mean-square of `||average + W/n||_inf`
/// over `repeats` independent estimates. Decays like 1/sqrt(resamples).
pub fn exchangeable_pair_mc(
    model: &dyn ParametricModel,
    data: &SequentialDataset,
    theta0: &[f64],
    resamples: u64,
    repeats: u32,
    seed: u64,
) -> Result<f64> {
    if repeats == 0 || resamples == 0 {
        return Err(Error::validation("resamples and repeats must be positive"));
    }
    let design = &data.design;
    let d = design.dim();
    let n = design.n();
    let nf = n as f64;
    let (w, _) = score_groups(model, data, theta0);

    // Scores of the observed data, cached.
    let mut s_obs = vec![0.0; n * d];
    let mut s = vec![0.0; d];
    for (i, y) in data.observations.iter().enumerate() {
        model.score_into(y, theta0, &mut s);
        s_obs[i * d..(i + 1) * d].copy_from_slice(&s);
    }

    let mut sq_sum = 0.0;
    let mut y = vec![0.0; model.dim_obs()];
    for rep in 0..repeats {
        let mut rng = replicate_rng(seed, rep as u64);
        let mut delta = vec![Neumaier::default(); w.len()];
        for _ in 0..resamples {
            let i = rng.random_range(0..n);
            let k = design.analysis_of(i);
            model.sample_into(theta0, &mut rng, &mut y);
            model.score_into(&y, theta0, &mut s);
            for j in 0..d {
                delta[k * d + j].add((s[j] - s_obs[i * d + j]) / nf.sqrt());
            }
        }
        let mut res = 0.0_f64;
        for (acc, wv) in delta.iter().zip(&w) {
            let avg = acc.value() / resamples as f64;
            res = res.max((avg + wv / nf).abs());
        }
        sq_sum += res * res;
    }
    Ok((sq_sum / repeats as f64).sqrt())
}

// ---------------------------------------------------------------------------
// Order-of-decay fit
// ---------------------------------------------------------------------------

/// Least-squares slope of log(value) on log(n). Needs at least three points
/// and strictly positive values.
pub fn slope_fit(ns: &[usize], values: &[f64]) -> Result<f64> {
    if ns.len() != values.len() || ns.len() < 3 {
        return Err(Error::validation("slope fit needs at least three (n, value) pairs"));
    }
    if values.iter().any(|&v| !(v.is_finite() && v > 0.0)) || ns.contains(&0) {
        return Err(Error::domain("slope fit needs positive sizes and values"));
    }
    let xs: Vec<f64> = ns.iter().map(|&n| (n as f64).ln()).collect();
    let ys: Vec<f64> = values.iter().map(|&v| v.ln()).collect();
    let m = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / m;
    let my = ys.iter().sum::<f64>() / m;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    if sxx == 0.0 {
        return Err(Error::validation("slope fit needs at least two distinct sizes"));
    }
    Ok(sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::families::{Exponential, NormalKnownVariance};
    use crate::model::EfModel;
    use approx::assert_relative_eq;

    fn exp_model() -> EfModel {
        EfModel::new(Arc::new(Exponential))
    }

    #[test]
    fn simulate_dataset_is_deterministic() {
        let model = exp_model();
        let design = GroupDesign::new(1, &[5, 10]).unwrap();
        let cfg = McConfig::default().with_seed(42);
        let a = simulate_dataset(&model, &design, &[1.0], 3, &cfg).unwrap();
        let b = simulate_dataset(&model, &design, &[1.0], 3, &cfg).unwrap();
        assert_eq!(a.observations, b.observations);
        let c = simulate_dataset(&model, &design, &[1.0], 4, &cfg).unwrap();
        assert_ne!(a.observations, c.observations);
    }

    #[test]
    fn different_designs_share_prefix_streams() {
        let model = exp_model();
        let small = GroupDesign::new(1, &[10]).unwrap();
        let large = GroupDesign::new(1, &[10, 40]).unwrap();
        let cfg = McConfig::default().with_seed(9);
        let a = simulate_dataset(&model, &small, &[1.0], 0, &cfg).unwrap();
        let b = simulate_dataset(&model, &large, &[1.0], 0, &cfg).unwrap();
        assert_eq!(a.observations[..], b.observations[..10]);
    }

    #[test]
    fn neumaier_compensates() {
        let mut acc = Neumaier::default();
        acc.add(1e16);
        for _ in 0..10 {
            acc.add(1.0);
        }
        acc.add(-1e16);
        assert_eq!(acc.value(), 10.0);
    }

    #[test]
    fn moment_estimates_exp_small_oracles() {
        // Exp(1), K = 1, n = 10: E(eta_hat - 1)^2 = 1/6 (inverse gamma).
        let model = exp_model();
        let design = GroupDesign::new(1, &[10]).unwrap();
        let cfg = McConfig { replications: 200_000, seed: 11, ..Default::default() };
        let mc = estimate_moments(&model, &design, &[1.0], 0.8, &cfg).unwrap();
        let eq2 = mc.eq2;
        assert!(
            (eq2.value - 1.0 / 6.0).abs() <= 3.0 * eq2.se,
            "EQ2 {} +- {} vs 1/6",
            eq2.value,
            eq2.se
        );
        // Var(S^2) per observation: S = 1/eta - y, Var((Y-1)^2) = 8.
        let v = mc.score_sq_var[0];
        assert!((v.value - 8.0).abs() <= 3.0 * v.se, "Var S^2 {} +- {}", v.value, v.se);
        // E|S' - S|^3 = E|Y - Y'|^3 = 6.
        let d3 = mc.score_diff_cubed;
        assert!((d3.value - 6.0).abs() <= 3.0 * d3.se, "diff3 {} +- {}", d3.value, d3.se);
        // Exponential-family Hessian is deterministic.
        assert_eq!(mc.hess_var[0].value, 0.0);
        assert_eq!(mc.hess_var[0].se, 0.0);
        // Envelope moment: M^1 = n mu^eps with mu^eps = 2/(1-0.8)^3 = 250, so
        // E[(M)^2 | accept] = (10 * 250)^2 exactly.
        let m2 = mc.m2_cond[0][0];
        assert_relative_eq!(m2.value, 2500.0 * 2500.0, epsilon = 1e-6);
        assert!(m2.se < 1e-6);
    }

    #[test]
    fn normal_eq2_matches_sample_mean_variance() {
        let model = EfModel::new(Arc::new(NormalKnownVariance::unit()));
        let design = GroupDesign::new(1, &[25]).unwrap();
        let cfg = McConfig { replications: 100_000, seed: 5, ..Default::default() };
        let mc = estimate_moments(&model, &design, &[0.0], 1.0, &cfg).unwrap();
        assert!(
            (mc.eq2.value - 1.0 / 25.0).abs() <= 3.0 * mc.eq2.se,
            "EQ2 {} +- {}",
            mc.eq2.value,
            mc.eq2.se
        );
    }

    #[test]
    fn estimates_are_worker_count_independent() {
        let model = exp_model();
        let design = GroupDesign::new(1, &[10, 20]).unwrap();
        let base = McConfig { replications: 20_000, seed: 77, ..Default::default() };
        let one = McConfig { workers: Some(1), ..base.clone() };
        let three = McConfig { workers: Some(3), ..base };
        let a = estimate_moments(&model, &design, &[1.0], 0.8, &one).unwrap();
        let b = estimate_moments(&model, &design, &[1.0], 0.8, &three).unwrap();
        assert_eq!(a.eq2.value.to_bits(), b.eq2.value.to_bits());
        assert_eq!(a.eq2.se.to_bits(), b.eq2.se.to_bits());
        for k in 0..2 {
            for i in 0..1 {
                assert_eq!(a.q4[k][i].value.to_bits(), b.q4[k][i].value.to_bits());
            }
        }
        assert_eq!(
            a.score_diff_cubed.value.to_bits(),
            b.score_diff_cubed.value.to_bits()
        );
    }

    #[test]
    fn std_errors_shrink_like_root_n() {
        let model = exp_model();
        let design = GroupDesign::new(1, &[10]).unwrap();
        let small = McConfig { replications: 2_000, seed: 3, ..Default::default() };
        let large = McConfig { replications: 200_000, seed: 3, ..Default::default() };
        let a = estimate_moments(&model, &design, &[1.0], 0.8, &small).unwrap();
        let b = estimate_moments(&model, &design, &[1.0], 0.8, &large).unwrap();
        let ratio = a.eq2.se / b.eq2.se;
        assert!(
            ratio > 10.0 / 1.5 && ratio < 10.0 * 1.5,
            "se ratio {ratio} not within 1.5x of 10"
        );
    }

    #[test]
    fn cosine_test_function_certificates() {
        let h = TestFunction::cosine(vec![1.0, -0.5]);
        assert_relative_eq!(
            h.normal_expectation.unwrap(),
            (-0.625_f64).exp(),
            epsilon = 1e-12
        );
        h.spot_check_norms(2, 1, 50).unwrap();
        let hp = TestFunction::cosine_product(vec![0.8, 0.3, -0.2]);
        hp.spot_check_norms(3, 2, 30).unwrap();
        assert_relative_eq!(
            hp.normal_expectation.unwrap(),
            (-0.5_f64 * (0.64 + 0.09 + 0.04)).exp(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn quadrature_matches_closed_form_gaussian_integral() {
        let f = |x: f64| (0.7 * x).cos();
        let got = normal_expectation_1d(&f);
        assert_relative_eq!(got, (-0.5 * 0.49_f64).exp(), epsilon = 1e-10);
    }

    #[test]
    fn constant_function_has_zero_distance() {
        let model = exp_model();
        let design = GroupDesign::new(1, &[20]).unwrap();
        let cfg = McConfig { replications: 2_000, seed: 2, ..Default::default() };
        let h = TestFunction::constant(0.7);
        let (dist, _se) = empirical_smooth_distance(&model, &design, &[1.0], &h, &cfg).unwrap();
        assert_eq!(dist, 0.0);
    }

    #[test]
    fn csv_streaming_has_header_and_rows() {
        let model = exp_model();
        let design = GroupDesign::new(1, &[5, 10]).unwrap();
        let cfg = McConfig { replications: 50, seed: 4, ..Default::default() };
        let hs = [TestFunction::cosine(vec![1.0, 0.5])];
        let mut buf = Vec::new();
        let rep =
            empirical_smooth_distances(&model, &design, &[1.0], &hs, &cfg, Some(&mut buf)).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "replicate,theta_hat_1_1,theta_hat_2_1,h[cos(a.x)]");
        assert_eq!(text.lines().count() as u64 - 1, rep.used);
    }

    #[test]
    fn pair_diagnostic_is_exact() {
        let model = exp_model();
        let design = GroupDesign::new(1, &[7, 12]).unwrap();
        let cfg = McConfig::default().with_seed(123);
        for r in 0..20 {
            let data = simulate_dataset(&model, &design, &[1.3], r, &cfg).unwrap();
            let res = exchangeable_pair_diagnostic(&model, &data, &[1.3]).unwrap();
            assert!(res < 1e-12, "analytic residual {res}");
        }
        // Single observation: the pair replaces everything, identity exact.
        let design1 = GroupDesign::new(1, &[1]).unwrap();
        let data1 = simulate_dataset(&model, &design1, &[1.0], 0, &cfg).unwrap();
        let res = exchangeable_pair_diagnostic(&model, &data1, &[1.0]).unwrap();
        assert!(res < 1e-12);
    }

    #[test]
    fn pair_mc_residual_decays_at_half_rate() {
        let model = exp_model();
        let design = GroupDesign::new(1, &[10, 20]).unwrap();
        let cfg = McConfig::default().with_seed(8);
        let data = simulate_dataset(&model, &design, &[1.0], 0, &cfg).unwrap();
        let rs = [100u64, 10_000, 1_000_000];
        let vals: Vec<f64> = rs
            .iter()
            .map(|&r| exchangeable_pair_mc(&model, &data, &[1.0], r, 16, 500).unwrap())
            .collect();
        let ns: Vec<usize> = rs.iter().map(|&r| r as usize).collect();
        let slope = slope_fit(&ns, &vals).unwrap();
        assert!((slope + 0.5).abs() < 0.1, "slope {slope}, values {vals:?}");
    }

    #[test]
    fn slope_fit_exact_cases() {
        let ns = [100usize, 400, 1600, 6400];
        let half: Vec<f64> = ns.iter().map(|&n| 3.0 / (n as f64).sqrt()).collect();
        assert_relative_eq!(slope_fit(&ns, &half).unwrap(), -0.5, epsilon = 1e-12);
        let one: Vec<f64> = ns.iter().map(|&n| 3.0 / n as f64).collect();
        assert_relative_eq!(slope_fit(&ns, &one).unwrap(), -1.0, epsilon = 1e-12);
        assert!(slope_fit(&ns[..2], &half[..2]).is_err());
        assert!(slope_fit(&ns, &[1.0, -1.0, 1.0, 1.0]).is_err());
    }
}
