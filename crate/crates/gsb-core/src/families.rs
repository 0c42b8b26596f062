//! Shipped exponential families.
//!
//! Each family registers its natural parameterization, closed-form raw
//! moments of the sufficient statistic up to fourth order, an exact inverse
//! of the mean function for solver initialization, and (where a closed form
//! exists) the third absolute moment of the sufficient-statistic difference.

use rand::Rng;
use rand::RngCore;
use rand_distr::Distribution;

use crate::model::ExponentialFamily;

const SQRT_PI: f64 = 1.772_453_850_905_516;

/// Exponential distribution with rate eta: T(y) = -y, A(eta) = -log(eta),
/// support [0, inf), admissible eta > 0.
pub struct Exponential;

impl ExponentialFamily for Exponential {
    fn dim(&self) -> usize {
        1
    }

    fn obs_dim(&self) -> usize {
        1
    }

    fn suff_stat(&self, y: &[f64], out: &mut [f64]) {
        out[0] = -y[0];
    }

    fn carrier(&self, _y: &[f64]) -> f64 {
        0.0
    }

    fn cumulant(&self, eta: &[f64]) -> f64 {
        -eta[0].ln()
    }

    fn in_support(&self, y: &[f64]) -> bool {
        y[0] >= 0.0 && y[0].is_finite()
    }

    fn admissible(&self, eta: &[f64]) -> bool {
        eta[0] > 0.0 && eta[0].is_finite()
    }

    fn sample_into(&self, eta: &[f64], rng: &mut dyn RngCore, out: &mut [f64]) {
        let d = rand_distr::Exp::new(eta[0]).expect("positive rate");
        out[0] = d.sample(rng);
    }

    fn raw_moment(&self, eta: &[f64], idx: &[usize]) -> Option<f64> {
        // E[(-Y)^r] = (-1)^r r! / eta^r
        let r = idx.len() as i32;
        let mut fact = 1.0;
        for k in 2..=idx.len() {
            fact *= k as f64;
        }
        Some(if r % 2 == 0 { fact } else { -fact } / eta[0].powi(r))
    }

    fn suff_mean_in_range(&self, suff_mean: &[f64]) -> bool {
        suff_mean[0] < 0.0
    }

    fn init_from_suff_mean(&self, suff_mean: &[f64]) -> Vec<f64> {
        vec![-1.0 / suff_mean[0]]
    }

    fn abs_suff_diff_cubed(&self, eta: &[f64]) -> Option<f64> {
        // |Y - Y'| is again exponential with rate eta.
        Some(6.0 / eta[0].powi(3))
    }

    fn name(&self) -> &str {
        "exponential"
    }
}

/// Normal with known variance sigma2: T(y) = y, A(eta) = sigma2 eta^2 / 2,
/// mean sigma2 * eta. With sigma2 = 1 this is N(theta, 1) with eta = theta.
pub struct NormalKnownVariance {
    pub sigma2: f64,
}

impl NormalKnownVariance {
    pub fn unit() -> Self {
        NormalKnownVariance { sigma2: 1.0 }
    }

    fn mean(&self, eta: f64) -> f64 {
        self.sigma2 * eta
    }
}

impl ExponentialFamily for NormalKnownVariance {
    fn dim(&self) -> usize {
        1
    }

    fn obs_dim(&self) -> usize {
        1
    }

    fn suff_stat(&self, y: &[f64], out: &mut [f64]) {
        out[0] = y[0];
    }

    fn carrier(&self, y: &[f64]) -> f64 {
        -y[0] * y[0] / (2.0 * self.sigma2)
            - 0.5 * (2.0 * std::f64::consts::PI * self.sigma2).ln()
    }

    fn cumulant(&self, eta: &[f64]) -> f64 {
        0.5 * self.sigma2 * eta[0] * eta[0]
    }

    fn in_support(&self, y: &[f64]) -> bool {
        y[0].is_finite()
    }

    fn admissible(&self, eta: &[f64]) -> bool {
        eta[0].is_finite()
    }

    fn sample_into(&self, eta: &[f64], rng: &mut dyn RngCore, out: &mut [f64]) {
        let d = rand_distr::Normal::new(self.mean(eta[0]), self.sigma2.sqrt()).expect("valid sd");
        out[0] = d.sample(rng);
    }

    fn raw_moment(&self, eta: &[f64], idx: &[usize]) -> Option<f64> {
        Some(normal_raw_moment(self.mean(eta[0]), self.sigma2, idx.len() as u32))
    }

    fn suff_mean_in_range(&self, suff_mean: &[f64]) -> bool {
        suff_mean[0].is_finite()
    }

    fn init_from_suff_mean(&self, suff_mean: &[f64]) -> Vec<f64> {
        vec![suff_mean[0] / self.sigma2]
    }

    fn abs_suff_diff_cubed(&self, _eta: &[f64]) -> Option<f64> {
        // Y - Y' ~ N(0, 2 sigma2); E|N(0,s^2)|^3 = s^3 * 2 sqrt(2) / sqrt(pi).
        Some(8.0 * self.sigma2.powf(1.5) / SQRT_PI)
    }

    fn name(&self) -> &str {
        "normal"
    }
}

/// Bernoulli in the logit parameterization: T(y) = y in {0,1},
/// A(eta) = log(1 + e^eta), success probability sigmoid(eta).
pub struct BernoulliLogit;

impl BernoulliLogit {
    pub fn prob(eta: f64) -> f64 {
        1.0 / (1.0 + (-eta).exp())
    }
}

impl ExponentialFamily for BernoulliLogit {
    fn dim(&self) -> usize {
        1
    }

    fn obs_dim(&self) -> usize {
        1
    }

    fn suff_stat(&self, y: &[f64], out: &mut [f64]) {
        out[0] = y[0];
    }

    fn carrier(&self, _y: &[f64]) -> f64 {
        0.0
    }

    fn cumulant(&self, eta: &[f64]) -> f64 {
        // log(1 + e^x), stable on both tails
        let x = eta[0];
        if x > 0.0 {
            x + (-x).exp().ln_1p()
        } else {
            x.exp().ln_1p()
        }
    }

    fn in_support(&self, y: &[f64]) -> bool {
        y[0] == 0.0 || y[0] == 1.0
    }

    fn admissible(&self, eta: &[f64]) -> bool {
        eta[0].is_finite()
    }

    fn sample_into(&self, eta: &[f64], rng: &mut dyn RngCore, out: &mut [f64]) {
        let p = Self::prob(eta[0]);
        out[0] = if rng.random::<f64>() < p { 1.0 } else { 0.0 };
    }

    fn raw_moment(&self, eta: &[f64], _idx: &[usize]) -> Option<f64> {
        // T^r = T for any r >= 1.
        Some(Self::prob(eta[0]))
    }

    fn suff_mean_in_range(&self, suff_mean: &[f64]) -> bool {
        suff_mean[0] > 0.0 && suff_mean[0] < 1.0
    }

    fn init_from_suff_mean(&self, suff_mean: &[f64]) -> Vec<f64> {
        let m = suff_mean[0];
        vec![(m / (1.0 - m)).ln()]
    }

    fn abs_suff_diff_cubed(&self, eta: &[f64]) -> Option<f64> {
        let p = Self::prob(eta[0]);
        Some(2.0 * p * (1.0 - p))
    }

    fn name(&self) -> &str {
        "bernoulli"
    }
}

/// Normal with unknown mean and variance, d = 2: T(y) = (y, y^2),
/// eta = (mu/sigma^2, -1/(2 sigma^2)), A(eta) = -eta1^2/(4 eta2)
/// + log(-pi/eta2)/2, admissible eta2 < 0.
pub struct NormalMeanVariance;

impl NormalMeanVariance {
    pub fn mean_var(eta: &[f64]) -> (f64, f64) {
        let var = -1.0 / (2.0 * eta[1]);
        (eta[0] * var, var)
    }

    pub fn natural_from(mean: f64, var: f64) -> Vec<f64> {
        vec![mean / var, -1.0 / (2.0 * var)]
    }
}

impl ExponentialFamily for NormalMeanVariance {
    fn dim(&self) -> usize {
        2
    }

    fn obs_dim(&self) -> usize {
        1
    }

    fn suff_stat(&self, y: &[f64], out: &mut [f64]) {
        out[0] = y[0];
        out[1] = y[0] * y[0];
    }

    fn carrier(&self, _y: &[f64]) -> f64 {
        0.0
    }

    fn cumulant(&self, eta: &[f64]) -> f64 {
        -eta[0] * eta[0] / (4.0 * eta[1]) + 0.5 * (-std::f64::consts::PI / eta[1]).ln()
    }

    fn in_support(&self, y: &[f64]) -> bool {
        y[0].is_finite()
    }

    fn admissible(&self, eta: &[f64]) -> bool {
        eta[0].is_finite() && eta[1] < 0.0 && eta[1].is_finite()
    }

    fn sample_into(&self, eta: &[f64], rng: &mut dyn RngCore, out: &mut [f64]) {
        let (mean, var) = Self::mean_var(eta);
        let d = rand_distr::Normal::new(mean, var.sqrt()).expect("valid sd");
        out[0] = d.sample(rng);
    }

    fn raw_moment(&self, eta: &[f64], idx: &[usize]) -> Option<f64> {
        // T_0 contributes one power of Y, T_1 two; orders up to 4 need E[Y^w]
        // with w <= 8.
        let w: u32 = idx.iter().map(|&i| if i == 0 { 1 } else { 2 }).sum();
        let (mean, var) = Self::mean_var(eta);
        Some(normal_raw_moment(mean, var, w))
    }

    fn suff_mean_in_range(&self, suff_mean: &[f64]) -> bool {
        suff_mean[1] - suff_mean[0] * suff_mean[0] > 0.0
    }

    fn init_from_suff_mean(&self, suff_mean: &[f64]) -> Vec<f64> {
        let var = suff_mean[1] - suff_mean[0] * suff_mean[0];
        Self::natural_from(suff_mean[0], var)
    }

    fn name(&self) -> &str {
        "normal_mean_variance"
    }
}

/// Raw moment E[Y^order] of N(mean, var) via the recursion
/// m_k = mean m_{k-1} + (k-1) var m_{k-2}.
pub fn normal_raw_moment(mean: f64, var: f64, order: u32) -> f64 {
    let mut prev = 1.0; // m_0
    if order == 0 {
        return prev;
    }
    let mut cur = mean; // m_1
    for k in 2..=order {
        let next = mean * cur + (k - 1) as f64 * var * prev;
        prev = cur;
        cur = next;
    }
    cur
}
