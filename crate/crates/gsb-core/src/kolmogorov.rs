//! Kolmogorov-distance machinery: Hermite smoothers with exact rational
//! norms, the smooth-to-Kolmogorov converter, and empirical multivariate
//! Kolmogorov distance against a standard-normal or sample reference.

use std::sync::Arc;

use num::{BigRational, One, Signed, Zero};
use rand::SeedableRng;
use rand_distr::Distribution;

use crate::error::{Error, Result};
use crate::ratpoly::{
    self, coeff_abs_sum, derivative, eval, eval_f64, isolate_roots_unit, rat, rational_to_f64,
    refine_root, squarefree, Poly, Root,
};

// ---------------------------------------------------------------------------
// Hermite smoothers
// ---------------------------------------------------------------------------

/// Polynomial smoother rising from 0 to 1 on [0, 1] with m vanishing
/// derivatives at both ends, held as exact rational coefficients together
/// with its L_m^inf norm `max_{0<=k<=m} sup_R |S_m^(k)}|`.
#[derive(Debug, Clone)]
pub struct Smoother {
    pub m: u32,
    /// Coefficient of x^j at index j, for the piece on [0, 1].
    pub coeffs: Vec<BigRational>,
    /// The norm; exact when `norm_exact`, otherwise a certified upper bound
    /// within 2^-120 of the supremum.
    pub norm: BigRational,
    pub norm_exact: bool,
    /// Per-derivative-order sup enclosures [lo, hi] on [0, 1], k = 0..=m.
    pub order_sups: Vec<(BigRational, BigRational)>,
}

impl Smoother {
    pub fn norm_f64(&self) -> f64 {
        rational_to_f64(&self.norm)
    }

    /// Evaluate the full spline (0 left of 0, the polynomial on [0, 1], 1
    /// right of 1).
    pub fn eval(&self, x: f64) -> f64 {
        if x <= 0.0 {
            0.0
        } else if x >= 1.0 {
            1.0
        } else {
            eval_f64(&self.coeffs, x)
        }
    }

    /// k-th derivative of the [0, 1] polynomial piece, exact.
    pub fn derivative_poly(&self, k: u32) -> Poly {
        let mut p = self.coeffs.clone();
        for _ in 0..k {
            p = derivative(&p);
        }
        p
    }
}

fn binomial(n: u64, k: u64) -> BigRational {
    if k > n {
        return BigRational::zero();
    }
    let mut num = BigRational::one();
    for i in 0..k {
        num = num * rat((n - i) as i64, 1) / rat((i + 1) as i64, 1);
    }
    num
}

/// Build the order-m Hermite smoother
/// `S_m(x) = x^{m+1} sum_{k=0}^m C(m+k, k) C(2m+1, m-k) (-x)^k`
/// and compute its norm by exact root isolation on the derivative
/// polynomials. Supported for 1 <= m <= 8.
pub fn hermite_smoother(m: u32) -> Result<Smoother> {
    if !(1..=8).contains(&m) {
        return Err(Error::Unsupported(format!("smoother order must be in 1..=8, got {m}")));
    }
    let deg = (2 * m + 1) as usize;
    let mut coeffs = vec![BigRational::zero(); deg + 1];
    for k in 0..=m as u64 {
        let c = binomial(m as u64 + k, k) * binomial(2 * m as u64 + 1, m as u64 - k);
        let sign = if k % 2 == 0 { BigRational::one() } else { -BigRational::one() };
        coeffs[(m as u64 + 1 + k) as usize] = sign * c;
    }

    // Per-order sup enclosures. Order 0 is exactly 1: the first derivative
    // is C x^m (1-x)^m >= 0 on [0, 1], so the piece rises monotonically from
    // 0 to 1 and the spline is bounded by 1 on all of R.
    let one = BigRational::one();
    let mut order_sups = vec![(one.clone(), one.clone())];
    let mut exact_candidates: Vec<BigRational> = vec![one.clone()];
    let mut enclosures: Vec<(BigRational, BigRational)> = Vec::new();

    let mut p = coeffs.clone();
    for _k in 1..=m {
        p = derivative(&p);
        let (sup_lo, sup_hi, exacts, encls) = poly_sup_unit(&p)?;
        order_sups.push((sup_lo, sup_hi));
        exact_candidates.extend(exacts);
        enclosures.extend(encls);
    }

    // The norm is the max over orders. Decide whether an exact rational
    // candidate dominates every irrational enclosure.
    let best_exact = exact_candidates.iter().cloned().fold(BigRational::zero(), |a, b| a.max(b));
    let mut norm = best_exact.clone();
    let mut norm_exact = true;
    for (lo, hi) in &enclosures {
        if *hi <= best_exact {
            continue;
        }
        if *lo > best_exact {
            // An irrational critical value wins somewhere.
            norm_exact = false;
            if *hi > norm {
                norm = hi.clone();
            }
        } else {
            // Enclosure straddles the best exact candidate even after
            // refinement; report the certified upper bound.
            norm_exact = false;
            if *hi > norm {
                norm = hi.clone();
            }
        }
    }

    Ok(Smoother { m, coeffs, norm, norm_exact, order_sups })
}

/// Sup of |p| over [0, 1] as an enclosure, with the exact rational candidate
/// values and the (refined) irrational-critical enclosures used to build it.
#[allow(clippy::type_complexity)]
fn poly_sup_unit(
    p: &Poly,
) -> Result<(BigRational, BigRational, Vec<BigRational>, Vec<(BigRational, BigRational)>)> {
    let zero = BigRational::zero();
    let one = BigRational::one();
    let mut exacts = vec![eval(p, &zero).abs(), eval(p, &one).abs()];

    let dp = derivative(p);
    let mut enclosures = Vec::new();
    if ratpoly::degree(&dp).is_some() && ratpoly::degree(&dp) != Some(0) {
        let q = squarefree(&dp);
        // Lipschitz bound for |p| on [0, 1].
        let lip = coeff_abs_sum(&dp);
        for root in isolate_roots_unit(&q) {
            match root {
                Root::Exact(x) => exacts.push(eval(p, &x).abs()),
                Root::Isolated(a, b) => match refine_root(&q, &a, &b, 120) {
                    Root::Exact(x) => exacts.push(eval(p, &x).abs()),
                    Root::Isolated(a, b) => {
                        let mid = (&a + &b) / rat(2, 1);
                        let half_w = (&b - &a) / rat(2, 1);
                        let v = eval(p, &mid).abs();
                        let pad = &lip * &half_w;
                        let lo = (&v - &pad).max(BigRational::zero());
                        let hi = &v + &pad;
                        enclosures.push((lo, hi));
                    }
                },
            }
        }
    }

    let exact_max = exacts.iter().cloned().fold(BigRational::zero(), |a, b| a.max(b));
    let mut lo = exact_max.clone();
    let mut hi = exact_max;
    for (l, h) in &enclosures {
        if *l > lo {
            lo = l.clone();
        }
        if *h > hi {
            hi = h.clone();
        }
    }
    Ok((lo, hi, exacts, enclosures))
}

// ---------------------------------------------------------------------------
// Smooth-to-Kolmogorov converters
// ---------------------------------------------------------------------------

/// Parameters of the converter: dimension p >= 2, smoothness order m >= 1,
/// a sup bound C1 on the reference density and the smoother norm C2 >= 1.
#[derive(Debug, Clone, Copy)]
pub struct KolParams {
    pub p: u32,
    pub m: u32,
    pub c1: f64,
    pub c2: f64,
}

impl KolParams {
    pub fn new(p: u32, m: u32, c1: f64, c2: f64) -> Result<Self> {
        if p < 2 {
            return Err(Error::Validation(format!("converter dimension p must be >= 2, got {p}")));
        }
        if m < 1 {
            return Err(Error::Validation(format!("smoothness order m must be >= 1, got {m}")));
        }
        if !(c1 > 0.0 && c1.is_finite()) {
            return Err(Error::Validation(format!("density bound C1 must be positive, got {c1}")));
        }
        if !(c2 >= 1.0 && c2.is_finite()) {
            return Err(Error::Validation(format!("smoother norm C2 must be >= 1, got {c2}")));
        }
        Ok(KolParams { p, m, c1, c2 })
    }
}

/// Unclipped converter value
/// `d^{(p-1)/(m+p-1)} (C2^p + p + C1 d^{1/(m+p-1)})`.
pub fn kolmogorov_from_smooth_raw(d_smooth: f64, params: &KolParams) -> f64 {
    let p = params.p as f64;
    let m = params.m as f64;
    let e = m + p - 1.0;
    d_smooth.powf((p - 1.0) / e)
        * (params.c2.powf(p) + p + params.c1 * d_smooth.powf(1.0 / e))
}

/// Kolmogorov bound from a smooth-function distance, clipped at 1 since the
/// Kolmogorov distance is a probability difference.
pub fn kolmogorov_from_smooth(d_smooth: f64, params: &KolParams) -> f64 {
    kolmogorov_from_smooth_raw(d_smooth, params).min(1.0)
}

/// m = 3 specialization with the exact smoother norm 52.5 and the standard
/// normal density bound `(2 pi)^{-p/2}`:
/// `d^{(p-1)/(2+p)} (52.5^p + p + d^{1/(2+p)} / (2 pi)^{p/2})`, clipped at 1.
pub fn kolmogorov_from_smooth_m3(d_smooth: f64, p: u32) -> Result<f64> {
    let c1 = (2.0 * std::f64::consts::PI).powf(-(p as f64) / 2.0);
    let params = KolParams::new(p, 3, c1, 52.5)?;
    Ok(kolmogorov_from_smooth(d_smooth, &params))
}

/// Unclipped m = 3 converter, exposed for arithmetic cross-checks.
pub fn kolmogorov_from_smooth_m3_raw(d_smooth: f64, p: u32) -> Result<f64> {
    let c1 = (2.0 * std::f64::consts::PI).powf(-(p as f64) / 2.0);
    let params = KolParams::new(p, 3, c1, 52.5)?;
    Ok(kolmogorov_from_smooth_raw(d_smooth, &params))
}

// ---------------------------------------------------------------------------
// Empirical multivariate Kolmogorov distance
// ---------------------------------------------------------------------------

/// Reference distribution for the empirical distance.
pub enum KolReference<'a> {
    /// Independent standard normal coordinates: quadrant probabilities are
    /// products of one-dimensional CDFs.
    StandardNormal,
    /// A second sample (two-sample statistic).
    Sample(&'a [Vec<f64>]),
}

/// Standard normal CDF.
pub fn phi(x: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-x / std::f64::consts::SQRT_2)
}

/// Cap on the candidate-grid size of the exact mode.
const EXACT_CELL_CAP: usize = 4_000_000;

/// Exact sup over the full per-coordinate sample-value grid of
/// `|ECDF(x) - F(x)|`, evaluating both the closed ECDF and its open (strict)
/// variant at every grid point; in one dimension this is the classical
/// Kolmogorov-Smirnov statistic. Supported for p <= 3 and grids up to
/// 4e6 cells; use [`empirical_kolmogorov_grid`] beyond that.
pub fn empirical_kolmogorov(samples: &[Vec<f64>], reference: KolReference) -> Result<f64> {
    let p = check_samples(samples)?;
    if p > 3 {
        return Err(Error::Validation(format!(
            "exact mode supports p <= 3, got {p}; use the grid mode"
        )));
    }
    let axes = match &reference {
        KolReference::StandardNormal => sample_axes(&[samples], p),
        KolReference::Sample(ys) => {
            let p2 = check_samples(ys)?;
            if p2 != p {
                return Err(Error::validation("the two samples must share one dimension"));
            }
            sample_axes(&[samples, ys], p)
        }
    };
    let cells: usize = axes.iter().map(Vec::len).product();
    if cells == 0 {
        return Err(Error::validation("empty candidate grid"));
    }
    if cells > EXACT_CELL_CAP {
        return Err(Error::Validation(format!(
            "exact mode grid has {cells} cells (cap {EXACT_CELL_CAP}); use the grid mode"
        )));
    }

    let c1 = quadrant_counts(samples, &axes);
    let n1 = samples.len() as f64;
    let strides = strides_of(&axes);

    let sup = match reference {
        KolReference::StandardNormal => {
            let phis: Vec<Vec<f64>> =
                axes.iter().map(|ax| ax.iter().map(|&v| phi(v)).collect()).collect();
            scan_grid(&axes, &strides, |flat, idx| {
                let f: f64 = (0..pdim(&axes)).map(|j| phis[j][idx[j]]).product();
                let closed = c1[flat] as f64 / n1;
                let open = open_count(&c1, &strides, idx) as f64 / n1;
                (closed - f).abs().max((open - f).abs())
            })
        }
        KolReference::Sample(ys) => {
            let c2 = quadrant_counts(ys, &axes);
            let n2 = ys.len() as f64;
            scan_grid(&axes, &strides, |flat, idx| {
                let closed = (c1[flat] as f64 / n1 - c2[flat] as f64 / n2).abs();
                let open = (open_count(&c1, &strides, idx) as f64 / n1
                    - open_count(&c2, &strides, idx) as f64 / n2)
                    .abs();
                closed.max(open)
            })
        }
    };
    Ok(sup)
}

/// Quantile-grid estimate for any dimension and large samples: returns the
/// grid sup together with a granularity bound delta such that the exact sup
/// lies in [value, value + delta].
pub fn empirical_kolmogorov_grid(
    samples: &[Vec<f64>],
    reference: KolReference,
    cells_per_axis: usize,
) -> Result<(f64, f64)> {
    let p = check_samples(samples)?;
    if cells_per_axis < 2 {
        return Err(Error::validation("the grid needs at least two cells per axis"));
    }
    let other = match &reference {
        KolReference::Sample(ys) => {
            let p2 = check_samples(ys)?;
            if p2 != p {
                return Err(Error::validation("the two samples must share one dimension"));
            }
            Some(*ys)
        }
        KolReference::StandardNormal => None,
    };
    // Per-axis quantile grids over the pooled values.
    let mut axes = Vec::with_capacity(p);
    for j in 0..p {
        let mut vals: Vec<f64> = samples.iter().map(|r| r[j]).collect();
        if let Some(ys) = other {
            vals.extend(ys.iter().map(|r| r[j]));
        }
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let m = vals.len();
        let mut ax = Vec::with_capacity(cells_per_axis);
        for c in 0..cells_per_axis {
            let idx = ((c + 1) * m / cells_per_axis).min(m) - 1;
            ax.push(vals[idx]);
        }
        ax.dedup_by(|a, b| a == b);
        axes.push(ax);
    }
    let total_cells: usize = axes.iter().map(Vec::len).product();
    if total_cells > EXACT_CELL_CAP {
        return Err(Error::Validation(format!(
            "grid mode with {total_cells} cells exceeds the cap; lower cells_per_axis"
        )));
    }

    let strides = strides_of(&axes);
    let c1 = quadrant_counts(samples, &axes);
    let n1 = samples.len() as f64;

    // Granularity: per-axis worst slab mass of each distribution involved.
    let mut delta = 0.0;
    for (j, ax) in axes.iter().enumerate() {
        delta += worst_slab_mass(samples, j, ax);
        match &reference {
            KolReference::Sample(ys) => delta += worst_slab_mass(ys, j, ax),
            KolReference::StandardNormal => {
                let mut worst = phi(ax[0]).max(1.0 - phi(*ax.last().unwrap()));
                for w in ax.windows(2) {
                    worst = worst.max(phi(w[1]) - phi(w[0]));
                }
                delta += worst;
            }
        }
    }

    let sup = match reference {
        KolReference::StandardNormal => {
            let phis: Vec<Vec<f64>> =
                axes.iter().map(|ax| ax.iter().map(|&v| phi(v)).collect()).collect();
            scan_grid(&axes, &strides, |flat, idx| {
                let f: f64 = (0..p).map(|j| phis[j][idx[j]]).product();
                (c1[flat] as f64 / n1 - f).abs()
            })
        }
        KolReference::Sample(ys) => {
            let c2 = quadrant_counts(ys, &axes);
            let n2 = ys.len() as f64;
            scan_grid(&axes, &strides, |flat, _idx| {
                (c1[flat] as f64 / n1 - c2[flat] as f64 / n2).abs()
            })
        }
    };
    Ok((sup, delta))
}

/// Draw `draws` samples from N(0, cov) for use as a Monte Carlo reference in
/// the two-sample mode (dependent-coordinate references have no product-CDF
/// shortcut).
pub fn gaussian_reference_sample(
    cov: &nalgebra::DMatrix<f64>,
    draws: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    let p = cov.nrows();
    let chol = cov
        .clone()
        .cholesky()
        .ok_or_else(|| Error::numerical("reference covariance is not positive definite"))?;
    let l = chol.l();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let std_normal = rand_distr::StandardNormal;
    let mut out = Vec::with_capacity(draws);
    for _ in 0..draws {
        let z: Vec<f64> = (0..p).map(|_| std_normal.sample(&mut rng)).collect();
        let mut row = vec![0.0; p];
        for i in 0..p {
            for (k, zk) in z.iter().enumerate().take(i + 1) {
                row[i] += l[(i, k)] * zk;
            }
        }
        out.push(row);
    }
    Ok(out)
}

fn check_samples(samples: &[Vec<f64>]) -> Result<usize> {
    if samples.is_empty() {
        return Err(Error::domain("empty sample"));
    }
    let p = samples[0].len();
    if p == 0 || samples.iter().any(|r| r.len() != p) {
        return Err(Error::validation("sample rows must share one positive dimension"));
    }
    Ok(p)
}

fn pdim(axes: &[Vec<f64>]) -> usize {
    axes.len()
}

fn sample_axes(groups: &[&[Vec<f64>]], p: usize) -> Vec<Vec<f64>> {
    let mut axes = Vec::with_capacity(p);
    for j in 0..p {
        let mut vals: Vec<f64> = groups.iter().flat_map(|g| g.iter().map(|r| r[j])).collect();
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        vals.dedup();
        axes.push(vals);
    }
    axes
}

fn strides_of(axes: &[Vec<f64>]) -> Vec<usize> {
    let mut strides = vec![0usize; axes.len()];
    let mut s = 1;
    for j in (0..axes.len()).rev() {
        strides[j] = s;
        s *= axes[j].len();
    }
    strides
}

/// Closed quadrant counts on the grid: entry (i_1..i_p) counts sample rows
/// with every coordinate <= the grid value, built by binning plus prefix
/// sums along each axis.
fn quadrant_counts(samples: &[Vec<f64>], axes: &[Vec<f64>]) -> Vec<u32> {
    let p = axes.len();
    let total: usize = axes.iter().map(Vec::len).product();
    let strides = strides_of(axes);
    let mut counts = vec![0u32; total];
    for row in samples {
        let mut flat = 0usize;
        let mut inside = true;
        for j in 0..p {
            // Rank of the largest axis value <= row[j]; rows beyond the grid
            // only matter in grid mode, where they land in the top bin when
            // equal and are dropped above it.
            let pos = axes[j].partition_point(|v| *v < row[j]);
            let idx = if pos < axes[j].len() && axes[j][pos] == row[j] {
                pos
            } else if pos == 0 {
                inside = false;
                break;
            } else {
                pos - 1
            };
            flat += strides[j] * idx;
        }
        if inside {
            counts[flat] += 1;
        }
    }
    // Prefix sums along each axis.
    for j in 0..p {
        let len_j = axes[j].len();
        let stride_j = strides[j];
        let outer: usize = total / len_j;
        for o in 0..outer {
            // Decompose o into the non-j indices to find the block base.
            let mut rem = o;
            let mut base = 0usize;
            for (jj, ax) in axes.iter().enumerate() {
                if jj == j {
                    continue;
                }
                let l = ax.len();
                base += strides[jj] * (rem % l);
                rem /= l;
            }
            let mut acc = 0u32;
            for i in 0..len_j {
                let idx = base + i * stride_j;
                acc += counts[idx];
                counts[idx] = acc;
            }
        }
    }
    counts
}

fn open_count(counts: &[u32], strides: &[usize], idx: &[usize]) -> u32 {
    // Strictly-below count: the closed count at index - 1 on every axis.
    let mut flat = 0usize;
    for (j, &i) in idx.iter().enumerate() {
        if i == 0 {
            return 0;
        }
        flat += strides[j] * (i - 1);
    }
    counts[flat]
}

fn scan_grid<F: FnMut(usize, &[usize]) -> f64>(
    axes: &[Vec<f64>],
    strides: &[usize],
    mut f: F,
) -> f64 {
    let p = axes.len();
    let total: usize = axes.iter().map(Vec::len).product();
    let mut idx = vec![0usize; p];
    let mut sup = 0.0_f64;
    for flat in 0..total {
        // Decode flat into idx (row-major with the given strides).
        let mut rem = flat;
        for j in 0..p {
            idx[j] = rem / strides[j];
            rem %= strides[j];
        }
        sup = sup.max(f(flat, &idx));
    }
    sup
}

fn worst_slab_mass(samples: &[Vec<f64>], axis: usize, grid: &[f64]) -> f64 {
    let n = samples.len() as f64;
    let mut counts = vec![0u32; grid.len() + 1];
    for row in samples {
        // Slab index: points at or below grid[pos] land in slab pos, points
        // beyond the last grid value in the tail slab.
        let pos = grid.partition_point(|v| *v < row[axis]);
        counts[pos.min(grid.len())] += 1;
    }
    counts.iter().map(|&c| c as f64 / n).fold(0.0, f64::max)
}

/// Test-only helper shared with the acceptance suite: the brute-force oracle
/// recomputes both ECDF variants by a full loop over sample rows for every
/// grid pair.
pub fn brute_force_kolmogorov_2d(samples: &[Vec<f64>], reference: &KolReference) -> Result<f64> {
    let p = check_samples(samples)?;
    if p != 2 {
        return Err(Error::validation("the brute-force oracle is two-dimensional"));
    }
    let axes = match reference {
        KolReference::StandardNormal => sample_axes(&[samples], 2),
        KolReference::Sample(ys) => sample_axes(&[samples, ys], 2),
    };
    let count = |pts: &[Vec<f64>], x: f64, y: f64, strict: bool| -> f64 {
        pts.iter()
            .filter(|r| {
                if strict {
                    r[0] < x && r[1] < y
                } else {
                    r[0] <= x && r[1] <= y
                }
            })
            .count() as f64
            / pts.len() as f64
    };
    let mut sup = 0.0_f64;
    for &x in &axes[0] {
        for &y in &axes[1] {
            let (f_closed, f_open) = match reference {
                KolReference::StandardNormal => {
                    let f = phi(x) * phi(y);
                    (f, f)
                }
                KolReference::Sample(ys) => (count(ys, x, y, false), count(ys, x, y, true)),
            };
            let closed = (count(samples, x, y, false) - f_closed).abs();
            let open = (count(samples, x, y, true) - f_open).abs();
            sup = sup.max(closed).max(open);
        }
    }
    Ok(sup)
}

/// Arc-wrapped evaluator type for smoother-driven test functions.
pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;

    #[test]
    fn smoother_m3_exact_constants() {
        let s = hermite_smoother(3).unwrap();
        // S3(x) = 35 x^4 - 84 x^5 + 70 x^6 - 20 x^7.
        let expect: Vec<(usize, i64)> = vec![(4, 35), (5, -84), (6, 70), (7, -20)];
        for (pow, val) in expect {
            assert_eq!(s.coeffs[pow], rat(val, 1), "coefficient of x^{pow}");
        }
        for pow in 0..4 {
            assert!(s.coeffs[pow].is_zero());
        }
        assert!(s.norm_exact);
        assert_eq!(s.norm, rat(105, 2));
        assert_relative_eq!(s.norm_f64(), 52.5, epsilon = 0.0);
        // S3(1/2) = 1/2 (symmetry).
        assert_eq!(eval(&s.coeffs, &rat(1, 2)), rat(1, 2));
    }

    #[test]
    fn smoother_boundary_conditions_exact() {
        for m in 1..=8u32 {
            let s = hermite_smoother(m).unwrap();
            assert!(eval(&s.coeffs, &BigRational::zero()).is_zero(), "S({m})(0)");
            assert_eq!(eval(&s.coeffs, &BigRational::one()), BigRational::one(), "S({m})(1)");
            for k in 1..=m {
                let dk = s.derivative_poly(k);
                assert!(eval(&dk, &BigRational::zero()).is_zero(), "S^({k})(0), m = {m}");
                assert!(eval(&dk, &BigRational::one()).is_zero(), "S^({k})(1), m = {m}");
            }
            // 0 <= S <= 1 on [0, 1]: exact rational evaluation on a grid.
            for i in 0..=64i64 {
                let x = rat(i, 64);
                let v = eval(&s.coeffs, &x);
                assert!(
                    !v.is_negative() && v <= BigRational::one(),
                    "S_{m}({i}/64) outside [0, 1]"
                );
            }
            assert!(s.norm >= BigRational::one());
        }
    }

    #[test]
    fn smoother_third_derivative_peak() {
        let s = hermite_smoother(3).unwrap();
        let d3 = s.derivative_poly(3);
        // -4200 x^4 + 8400 x^3 - 5040 x^2 + 840 x.
        assert_eq!(d3[4], rat(-4200, 1));
        assert_eq!(d3[3], rat(8400, 1));
        assert_eq!(d3[2], rat(-5040, 1));
        assert_eq!(d3[1], rat(840, 1));
        assert_eq!(eval(&d3, &rat(1, 2)), rat(-105, 2));
        // No derivative of order <= 3 exceeds 52.5 on [0, 1].
        for (lo, hi) in &s.order_sups {
            assert!(*lo <= rat(105, 2));
            assert!(*hi <= rat(105, 2) + rat(1, 1_000_000));
        }
    }

    #[test]
    fn smoother_m1_m2_norms() {
        let s1 = hermite_smoother(1).unwrap();
        assert!(s1.norm_exact);
        assert_eq!(s1.norm, rat(3, 2));
        // m = 2: the top critical value is 10 sqrt(3) / 3, irrational.
        let s2 = hermite_smoother(2).unwrap();
        assert!(!s2.norm_exact);
        assert_relative_eq!(s2.norm_f64(), 10.0 * 3.0_f64.sqrt() / 3.0, epsilon = 1e-9);
        assert!(hermite_smoother(0).is_err());
        assert!(hermite_smoother(9).is_err());
    }

    #[test]
    fn converter_basics() {
        for p in [2u32, 3, 4] {
            assert_eq!(kolmogorov_from_smooth_m3(0.0, p).unwrap(), 0.0);
        }
        // d = 1, p = 2: factor 52.5^2 + 2 + (2 pi)^{-1}, clipped to 1.
        let raw = kolmogorov_from_smooth_m3_raw(1.0, 2).unwrap();
        assert_relative_eq!(
            raw,
            52.5_f64.powi(2) + 2.0 + 1.0 / (2.0 * std::f64::consts::PI),
            epsilon = 1e-9
        );
        assert_relative_eq!(raw, 2758.409155, epsilon = 1e-3);
        assert_eq!(kolmogorov_from_smooth_m3(1.0, 2).unwrap(), 1.0);

        // Exact agreement between the specialization and the general form.
        for p in [2u32, 3, 5] {
            for d in [0.0, 1e-8, 1e-3, 0.2, 5.0] {
                let c1 = (2.0 * std::f64::consts::PI).powf(-(p as f64) / 2.0);
                let params = KolParams::new(p, 3, c1, 52.5).unwrap();
                assert_eq!(
                    kolmogorov_from_smooth_m3(d, p).unwrap(),
                    kolmogorov_from_smooth(d, &params)
                );
            }
        }

        // p = 2, d = 1e-8: raw = 1e-2 * (52.5^2 + 2 + (2 pi)^{-1} * 1e-2).
        let raw = kolmogorov_from_smooth_m3_raw(1e-8, 2).unwrap();
        let expect = 1e-2 * (52.5_f64.powi(2) + 2.0 + 1e-2 / (2.0 * std::f64::consts::PI));
        assert_relative_eq!(raw, expect, epsilon = 1e-12);
    }

    #[test]
    fn converter_monotone_in_distance() {
        let params = KolParams::new(2, 3, 0.2, 52.5).unwrap();
        let mut last = 0.0;
        for i in 0..50 {
            let d = i as f64 * 1e-7;
            let v = kolmogorov_from_smooth(d, &params);
            assert!(v >= last);
            last = v;
        }
    }

    #[test]
    fn one_dimensional_matches_classical_ks() {
        // Five-point hand-checkable set against the standard normal.
        let xs = [-1.5, -0.3, 0.1, 0.8, 2.0];
        let samples: Vec<Vec<f64>> = xs.iter().map(|&x| vec![x]).collect();
        let got = empirical_kolmogorov(&samples, KolReference::StandardNormal).unwrap();
        let mut expect = 0.0_f64;
        for (i, &x) in xs.iter().enumerate() {
            let f = phi(x);
            expect = expect.max(((i + 1) as f64 / 5.0 - f).abs());
            expect = expect.max((i as f64 / 5.0 - f).abs());
        }
        assert_relative_eq!(got, expect, epsilon = 1e-15);
    }

    #[test]
    fn identical_samples_have_zero_distance() {
        let xs: Vec<Vec<f64>> = vec![vec![0.0, 1.0], vec![1.0, -1.0], vec![-0.5, 0.25]];
        let ys = xs.clone();
        let d = empirical_kolmogorov(&xs, KolReference::Sample(&ys)).unwrap();
        assert_eq!(d, 0.0);
    }

    #[test]
    fn exact_mode_matches_brute_force_2d() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        let samples: Vec<Vec<f64>> = (0..50)
            .map(|_| vec![rng.random::<f64>() * 2.0 - 1.0, rng.random::<f64>() * 2.0 - 1.0])
            .collect();
        let fast = empirical_kolmogorov(&samples, KolReference::StandardNormal).unwrap();
        let slow = brute_force_kolmogorov_2d(&samples, &KolReference::StandardNormal).unwrap();
        assert!((fast - slow).abs() < 1e-12, "{fast} vs {slow}");

        let others: Vec<Vec<f64>> = (0..40)
            .map(|_| vec![rng.random::<f64>() * 2.0 - 1.0, rng.random::<f64>()])
            .collect();
        let fast = empirical_kolmogorov(&samples, KolReference::Sample(&others)).unwrap();
        let slow = brute_force_kolmogorov_2d(&samples, &KolReference::Sample(&others)).unwrap();
        assert!((fast - slow).abs() < 1e-12, "{fast} vs {slow}");
    }

    #[test]
    fn grid_mode_brackets_exact_mode() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(23);
        let samples: Vec<Vec<f64>> = (0..400)
            .map(|_| vec![rng.random::<f64>() * 2.0 - 1.0, rng.random::<f64>() * 2.0 - 1.0])
            .collect();
        let exact = empirical_kolmogorov(&samples, KolReference::StandardNormal).unwrap();
        let (grid, delta) =
            empirical_kolmogorov_grid(&samples, KolReference::StandardNormal, 64).unwrap();
        assert!(grid <= exact + 1e-12, "grid {grid} must not exceed exact {exact}");
        assert!(exact <= grid + delta + 1e-12, "exact {exact} within grid {grid} + {delta}");
    }

    #[test]
    fn gaussian_reference_sampler_is_deterministic() {
        let cov = nalgebra::DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 1.0]);
        let a = gaussian_reference_sample(&cov, 10, 7).unwrap();
        let b = gaussian_reference_sample(&cov, 10, 7).unwrap();
        assert_eq!(a, b);
    }
}
