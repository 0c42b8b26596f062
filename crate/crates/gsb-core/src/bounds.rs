//! Bound evaluation: the exchangeable-pair bounds, the four-term group
//! sequential bounds, the exponential-family and exponential-distribution
//! specializations, and the tail-parameter optimizer.
//!
//! The four-term assembly is `||h||_1 / sqrt(n) * K1 + q^2 c^2 ||h||_2 / 4 *
//! K2 + q^3 c^3 ||h||_3 / 12 * K3 + 2 ||h|| / eps^2 * E[sum Q_j^2]` in the
//! three-derivative form, with the two-derivative variant trading `||h||_3`
//! for extra powers of q and c. Exact ingredients carry zero standard error;
//! Monte Carlo ingredients carry first-order propagated standard errors, and
//! every report exposes a conservative total with each Monte Carlo term
//! bumped by two standard errors.

use nalgebra::DMatrix;

use crate::blockmat::spd_sqrt;
use crate::design::GroupDesign;
use crate::error::{Error, Result};
use crate::model::{
    central_moment4, fisher_information, mu_epsilon, ExponentialFamily, MomentBox,
    ParametricModel,
};
use crate::montecarlo::MomentEstimates;

const SQRT_PI: f64 = 1.772_453_850_905_516;
const SQRT_2PI: f64 = 2.506_628_274_631_000_5;

// ---------------------------------------------------------------------------
// Test-function norms
// ---------------------------------------------------------------------------

/// Certified norms of a test function h: the sup norm, the first derivative
/// sup `||h||_1`, and optionally the second/third derivative sups and the
/// centered sup `||h - E h(Sigma^{1/2} Z)||` needed by the two-derivative
/// pair bound.
#[derive(Debug, Clone, PartialEq)]
pub struct HNorms {
    pub sup: f64,
    pub d1: f64,
    pub d2: Option<f64>,
    pub d3: Option<f64>,
    pub centered_sup: Option<f64>,
}

impl HNorms {
    pub fn all_ones() -> Self {
        HNorms { sup: 1.0, d1: 1.0, d2: Some(1.0), d3: Some(1.0), centered_sup: None }
    }

    pub fn validate(&self) -> Result<()> {
        let mut vals = vec![self.sup, self.d1];
        vals.extend(self.d2);
        vals.extend(self.d3);
        vals.extend(self.centered_sup);
        if vals.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::validation("test-function norms must be finite and nonnegative"));
        }
        Ok(())
    }

    fn need_d2(&self, what: &str) -> Result<f64> {
        self.d2.ok_or_else(|| Error::Validation(format!("{what} needs a certified ||h||_2")))
    }

    fn need_d3(&self, what: &str) -> Result<f64> {
        self.d3.ok_or_else(|| Error::Validation(format!("{what} needs a certified ||h||_3")))
    }
}

// ---------------------------------------------------------------------------
// Quantities with provenance
// ---------------------------------------------------------------------------

/// Where a reported number came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Closed,
    MonteCarlo,
}

/// A bound ingredient: point value, standard error, provenance.
#[derive(Debug, Clone, Copy)]
pub struct Quantity {
    pub value: f64,
    pub se: f64,
    pub provenance: Provenance,
}

impl Quantity {
    pub fn closed(value: f64) -> Self {
        Quantity { value, se: 0.0, provenance: Provenance::Closed }
    }

    pub fn mc(value: f64, se: f64) -> Self {
        Quantity { value, se, provenance: Provenance::MonteCarlo }
    }

    /// Point value bumped by two standard errors when Monte Carlo backed.
    pub fn conservative(&self) -> f64 {
        match self.provenance {
            Provenance::Closed => self.value,
            Provenance::MonteCarlo => self.value + 2.0 * self.se,
        }
    }

    fn source_label(&self) -> String {
        match self.provenance {
            Provenance::Closed => "closed-form".to_string(),
            Provenance::MonteCarlo => format!("mc(se={})", self.se),
        }
    }
}

/// The K-terms of the four-term bound plus the tail moment.
#[derive(Debug, Clone)]
pub struct KTerms {
    pub k1: Quantity,
    pub k2: Quantity,
    pub k3: Quantity,
    pub c: Quantity,
    /// E[sum_{j=1}^q Q_j^2].
    pub eq2: Quantity,
}

impl KTerms {
    fn validate(&self) -> Result<()> {
        for (name, q) in
            [("k1", self.k1), ("k2", self.k2), ("k3", self.k3), ("c", self.c), ("eq2", self.eq2)]
        {
            if !q.value.is_finite() || q.value < 0.0 {
                return Err(Error::Validation(format!(
                    "{name} must be finite and nonnegative, got {}",
                    q.value
                )));
            }
        }
        Ok(())
    }
}

/// Which bound a report evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundVariant {
    Thm31,
    Thm33,
    Cor41,
    Cor42,
}

impl BoundVariant {
    pub fn label(&self) -> &'static str {
        match self {
            BoundVariant::Thm31 => "thm31",
            BoundVariant::Thm33 => "thm33",
            BoundVariant::Cor41 => "cor41",
            BoundVariant::Cor42 => "cor42",
        }
    }
}

/// A fully assembled bound with input echo, per-term values and provenance.
#[derive(Debug, Clone)]
pub struct BoundReport {
    pub variant: BoundVariant,
    pub family: String,
    pub theta0: Vec<f64>,
    pub dim: usize,
    pub analyses: usize,
    pub q: usize,
    pub n: usize,
    pub epsilon: f64,
    pub norms: HNorms,
    pub kterms: KTerms,
    /// The four summands, in bound order.
    pub terms: [f64; 4],
    pub total: f64,
    /// Total with every Monte Carlo ingredient bumped by two standard errors.
    pub total_conservative: f64,
    pub extras: Vec<(String, String)>,
    pub warnings: Vec<String>,
}

impl BoundReport {
    pub fn with_context(mut self, family: &str, theta0: &[f64]) -> Self {
        self.family = family.to_string();
        self.theta0 = theta0.to_vec();
        self
    }

    /// Stable key-value rendering. Field names and order are part of the
    /// output contract; no timestamps, so identical inputs give identical
    /// bytes.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            out.push_str(k);
            out.push_str(": ");
            out.push_str(&v);
            out.push('\n');
        };
        kv("variant", self.variant.label().to_string());
        kv("family", self.family.clone());
        kv("theta0", join_floats(&self.theta0));
        kv("d", self.dim.to_string());
        kv("analyses", self.analyses.to_string());
        kv("n", self.n.to_string());
        kv("q", self.q.to_string());
        kv("epsilon", format!("{}", self.epsilon));
        kv("norm_sup", format!("{}", self.norms.sup));
        kv("norm_d1", format!("{}", self.norms.d1));
        kv("norm_d2", opt_float(self.norms.d2));
        kv("norm_d3", opt_float(self.norms.d3));
        for (name, q) in [
            ("k1", &self.kterms.k1),
            ("k2", &self.kterms.k2),
            ("k3", &self.kterms.k3),
            ("c", &self.kterms.c),
            ("eq2", &self.kterms.eq2),
        ] {
            kv(name, format!("{}", q.value));
            kv(&format!("{name}_se"), format!("{}", q.se));
            kv(&format!("{name}_source"), q.source_label());
        }
        for (i, t) in self.terms.iter().enumerate() {
            kv(&format!("term{}", i + 1), format!("{t}"));
        }
        kv("total", format!("{}", self.total));
        kv("total_conservative", format!("{}", self.total_conservative));
        for (k, v) in &self.extras {
            kv(k, v.clone());
        }
        kv("warnings", if self.warnings.is_empty() { "none".to_string() } else { self.warnings.join(" | ") });
        out
    }
}

fn join_floats(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x}")).collect::<Vec<_>>().join(" ")
}

fn opt_float(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x}"))
}

// ---------------------------------------------------------------------------
// Exchangeable-pair bounds (arithmetic evaluators)
// ---------------------------------------------------------------------------

/// Which pair bound to evaluate: the three-derivative `classic` form or the
/// two-derivative `improved` form.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairVariant {
    Classic,
    Improved,
}

/// Evaluate the exchangeable-pair bound for a coupling whose lambda-weighted
/// moment terms A, B, C have already been computed (the weights
/// `lambda^(i) = sum_m |(Lambda^{-1})_{m,i}|` stay with the caller; in the
/// group sequential application Lambda = identity/n, so every weight is n).
///
/// classic  : ||h||_2/4 A + ||h||_3/12 B + (||h||_1 + d |Sigma|^{1/2} ||h||_2 / 2) C
/// improved : d^{1/2} |Sigma^{-1/2}| ( ||h||_1/sqrt(pi) A + ||h||_2 sqrt(2 pi)/8 B
///            + (sqrt(pi/2) ||h - E h(Sigma^{1/2} Z)|| + 2 d |Sigma|^{1/2} ||h|| / sqrt(pi)) C )
pub fn rr_pair_bound(
    d: usize,
    sigma: &DMatrix<f64>,
    weighted: (f64, f64, f64),
    norms: &HNorms,
    variant: PairVariant,
) -> Result<f64> {
    let (a, b, c) = weighted;
    if !(a >= 0.0 && b >= 0.0 && c >= 0.0) {
        return Err(Error::validation("weighted terms A, B, C must be nonnegative"));
    }
    norms.validate()?;
    let sigma_sup = sigma.amax();
    match variant {
        PairVariant::Classic => {
            let d2 = norms.need_d2("the classic pair bound")?;
            let d3 = norms.need_d3("the classic pair bound")?;
            Ok(d2 / 4.0 * a
                + d3 / 12.0 * b
                + (norms.d1 + 0.5 * d as f64 * sigma_sup.sqrt() * d2) * c)
        }
        PairVariant::Improved => {
            let d2 = norms.need_d2("the improved pair bound")?;
            let inv_root_sup = spd_sqrt(sigma, true)?.amax();
            let c_part = if c > 0.0 {
                let centered = norms.centered_sup.ok_or_else(|| {
                    Error::validation(
                        "the improved pair bound needs the centered sup norm when C > 0",
                    )
                })?;
                ((std::f64::consts::PI / 2.0).sqrt() * centered
                    + 2.0 * d as f64 / SQRT_PI * sigma_sup.sqrt() * norms.sup)
                    * c
            } else {
                0.0
            };
            Ok((d as f64).sqrt()
                * inv_root_sup
                * (norms.d1 / SQRT_PI * a + d2 * SQRT_2PI / 8.0 * b + c_part))
        }
    }
}

// ---------------------------------------------------------------------------
// K-terms from Monte Carlo estimates (generic path)
// ---------------------------------------------------------------------------

/// Assemble the K-terms of the three-derivative bound from Monte Carlo
/// moment estimates and the information set they carry.
pub fn k_terms_generic(
    model: &dyn ParametricModel,
    design: &GroupDesign,
    _theta0: &[f64],
    _eps: f64,
    mc: &MomentEstimates,
) -> Result<KTerms> {
    let d = design.dim();
    let kk = design.analyses();
    if mc.dim != d || mc.analyses != kk {
        return Err(Error::validation("moment estimates do not match the design"));
    }
    mc.validate(d, kk)?;

    let inv_roots: Vec<DMatrix<f64>> = mc
        .info
        .per_group
        .iter()
        .map(|g| spd_sqrt(g, true))
        .collect::<Result<_>>()?;

    // K1: assembled as a function of the flat input vector so the standard
    // error can be propagated by bumping each Monte Carlo input once.
    let q2: Vec<f64> = mc.q2.iter().flatten().map(|e| e.value).collect();
    let hess: Vec<f64> = mc.hess_var.iter().map(|e| e.value).collect();
    let q4: Vec<f64> = mc.q4.iter().flatten().map(|e| e.value).collect();
    let m2: Vec<f64> = mc.m2_cond.iter().flatten().map(|e| e.value).collect();
    let assemble = |q2: &[f64], hess: &[f64], q4: &[f64], m2: &[f64]| -> f64 {
        let mut k1 = 0.0;
        for k1i in 0..kk {
            let nk = design.n_at(k1i) as f64;
            for k2i in k1i..(k1i + 2).min(kk) {
                for l in 0..d {
                    let mut braces = 0.0;
                    for i in 0..d {
                        let hv = nk * hess[i * d + l];
                        braces += (q2[k1i * d + i] * hv).max(0.0).sqrt();
                    }
                    for i in 0..d {
                        for u in 0..d {
                            let m2v = m2[((k1i * d + i) * d + u) * d + l].max(0.0);
                            braces += 0.5
                                * q4[k1i * d * d + i * d + u].max(0.0).sqrt()
                                * m2v.sqrt();
                        }
                    }
                    let wsum: f64 = (0..d).map(|j| inv_roots[k2i][(l, j)].abs()).sum();
                    k1 += wsum * braces;
                }
            }
        }
        k1
    };
    let k1_val = assemble(&q2, &hess, &q4, &m2);
    let mut k1_var = 0.0;
    let mut any_mc_k1 = false;
    let mut bump = |which: usize, idx: usize, se: f64| {
        if se == 0.0 {
            return 0.0;
        }
        any_mc_k1 = true;
        let mut q2b = q2.clone();
        let mut hb = hess.clone();
        let mut q4b = q4.clone();
        let mut m2b = m2.clone();
        match which {
            0 => q2b[idx] += se,
            1 => hb[idx] += se,
            2 => q4b[idx] += se,
            _ => m2b[idx] += se,
        }
        assemble(&q2b, &hb, &q4b, &m2b) - k1_val
    };
    for (i, e) in mc.q2.iter().flatten().enumerate() {
        k1_var += bump(0, i, e.se).powi(2);
    }
    for (i, e) in mc.hess_var.iter().enumerate() {
        k1_var += bump(1, i, e.se).powi(2);
    }
    for (i, e) in mc.q4.iter().flatten().enumerate() {
        k1_var += bump(2, i, e.se).powi(2);
    }
    for (i, e) in mc.m2_cond.iter().flatten().enumerate() {
        k1_var += bump(3, i, e.se).powi(2);
    }
    let k1 = if any_mc_k1 || model.hessian_is_deterministic() {
        Quantity::mc(k1_val, k1_var.sqrt())
    } else {
        Quantity::closed(k1_val)
    };

    let (k2, k3) = k2_k3_from_score_moments(design, mc)?;

    // c is exact on the closed-form information path; on the Monte Carlo
    // path a first-order eigenvalue sensitivity supplies the standard error.
    let c_val = inv_roots.iter().fold(0.0_f64, |acc, r| acc.max(r.amax()));
    let c = if mc.info.unit_info_se == 0.0 {
        Quantity::closed(c_val)
    } else {
        let mut se = 0.0_f64;
        for (k, g) in mc.info.per_group.iter().enumerate() {
            let lam_min = g
                .clone()
                .symmetric_eigen()
                .eigenvalues
                .iter()
                .cloned()
                .fold(f64::INFINITY, f64::min);
            let group_se = mc.info.unit_info_se * design.group_fraction(k);
            se = se.max(0.5 * lam_min.powf(-1.5) * group_se);
        }
        Quantity::mc(c_val, se)
    };

    Ok(KTerms {
        k1,
        k2,
        k3,
        c,
        eq2: Quantity::mc(mc.eq2.value, mc.eq2.se),
    })
}

/// K2 and K3 from per-observation score moments (i.i.d. data):
/// `Var xi_ij^2 = Var(S_j^2)/n^2` summed over a group gives the
/// `(|G_k|/n)^{1/2}/sqrt(n)` scaling, and `K3 = E[sum_j |S'_j - S_j|]^3 /
/// sqrt(n)`.
fn k2_k3_from_score_moments(
    design: &GroupDesign,
    mc: &MomentEstimates,
) -> Result<(Quantity, Quantity)> {
    let d = mc.dim;
    let n = design.n() as f64;
    let mut k2 = 0.0;
    let mut k2_var = 0.0;
    for k in 0..design.analyses() {
        let w = design.group_fraction(k).sqrt() / n.sqrt();
        for j in 0..d {
            let v = mc.score_sq_var[j].value.max(0.0);
            k2 += w * v.sqrt();
            if mc.score_sq_var[j].se > 0.0 && v > 0.0 {
                k2_var += (w * mc.score_sq_var[j].se / (2.0 * v.sqrt())).powi(2);
            }
        }
        for i in 0..d {
            for j in (i + 1)..d {
                let e = &mc.score_cross_var[i * d + j];
                let v = e.value.max(0.0);
                k2 += 2.0 * w * v.sqrt();
                if e.se > 0.0 && v > 0.0 {
                    k2_var += (w * e.se / v.sqrt()).powi(2);
                }
            }
        }
    }
    let k2_is_mc = mc.score_sq_var.iter().any(|e| e.se > 0.0);
    let k2 = if k2_is_mc { Quantity::mc(k2, k2_var.sqrt()) } else { Quantity::closed(k2) };
    let k3_val = mc.score_diff_cubed.value / n.sqrt();
    let k3 = if mc.score_diff_cubed.se > 0.0 {
        Quantity::mc(k3_val, mc.score_diff_cubed.se / n.sqrt())
    } else {
        Quantity::closed(k3_val)
    };
    Ok((k2, k3))
}

// ---------------------------------------------------------------------------
// Four-term totals
// ---------------------------------------------------------------------------

/// Assemble the four-term bound from K-terms. `Thm31` (also used by the
/// exponential-family corollary) is the three-derivative form; `Thm33` is
/// the two-derivative form.
pub fn total_bound(
    kterms: &KTerms,
    norms: &HNorms,
    q: usize,
    n: usize,
    eps: f64,
    variant: BoundVariant,
) -> Result<BoundReport> {
    norms.validate()?;
    kterms.validate()?;
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::Validation(format!("epsilon must be positive and finite, got {eps}")));
    }
    if n == 0 || q == 0 {
        return Err(Error::validation("q and n must be positive"));
    }

    let assemble = |k1: f64, k2: f64, k3: f64, c: f64, eq2: f64| -> Result<[f64; 4]> {
        let qf = q as f64;
        let nf = n as f64;
        let t4 = 2.0 * norms.sup / (eps * eps) * eq2;
        match variant {
            BoundVariant::Thm31 | BoundVariant::Cor41 => {
                let d2 = norms.need_d2("the three-derivative bound")?;
                let d3 = norms.need_d3("the three-derivative bound")?;
                Ok([
                    norms.d1 / nf.sqrt() * k1,
                    qf * qf * c * c * d2 / 4.0 * k2,
                    qf.powi(3) * c.powi(3) * d3 / 12.0 * k3,
                    t4,
                ])
            }
            BoundVariant::Thm33 => {
                let d2 = norms.need_d2("the two-derivative bound")?;
                Ok([
                    norms.d1 / nf.sqrt() * k1,
                    qf.powf(1.5) * c * c * norms.d1 / SQRT_PI * k2,
                    SQRT_2PI * qf.powf(2.5) * c.powi(3) * d2 / 8.0 * k3,
                    t4,
                ])
            }
            BoundVariant::Cor42 => {
                Err(Error::validation("the exponential-distribution bound has its own assembly"))
            }
        }
    };

    let terms = assemble(
        kterms.k1.value,
        kterms.k2.value,
        kterms.k3.value,
        kterms.c.value,
        kterms.eq2.value,
    )?;
    let cons = assemble(
        kterms.k1.conservative(),
        kterms.k2.conservative(),
        kterms.k3.conservative(),
        kterms.c.conservative(),
        kterms.eq2.conservative(),
    )?;

    Ok(BoundReport {
        variant,
        family: String::new(),
        theta0: Vec::new(),
        dim: 0,
        analyses: 0,
        q,
        n,
        epsilon: eps,
        norms: norms.clone(),
        kterms: kterms.clone(),
        terms,
        total: terms.iter().sum(),
        total_conservative: cons.iter().sum(),
        extras: Vec::new(),
        warnings: Vec::new(),
    })
}

/// Three-derivative bound for a canonical exponential family: the envelope
/// term comes from `mu^eps` and the Monte Carlo fourth moments of the
/// estimator, K2 and K3 from closed-form sufficient-statistic moments, c
/// from the inverse root of Var T.
pub fn ef_bound_cor41(
    fam: &dyn ExponentialFamily,
    design: &GroupDesign,
    eta0: &[f64],
    eps: f64,
    norms: &HNorms,
    mc: &MomentEstimates,
) -> Result<BoundReport> {
    let d = fam.dim();
    let kk = design.analyses();
    if mc.dim != d || mc.analyses != kk {
        return Err(Error::validation("moment estimates do not match the design"));
    }
    let mbox = MomentBox::new(eta0.to_vec(), eps)?;
    let mut mu = vec![0.0; d * d * d];
    for i in 0..d {
        for u in 0..d {
            for l in 0..d {
                mu[(i * d + u) * d + l] = mu_epsilon(fam, &mbox, i, u, l)?;
            }
        }
    }

    let var_t = fisher_information(fam, eta0)?;
    let var_t_inv_root = spd_sqrt(&var_t, true)?;
    let n = design.n() as f64;

    // K1 = 1/2 sum_{k1} sum_{k2 = k1}^{min(k1+1,K)} n_{k1} (|G_{k2}|/n)^{-1/2}
    //      sum_{l,j} |VarT^{-1/2}_{lj}| sum_{i,u} mu^eps_{iul} sqrt(E[Q_i^2 Q_u^2]).
    let mut k1_val = 0.0;
    let mut k1_var = 0.0;
    for k1i in 0..kk {
        let mut outer = 0.0;
        for k2i in k1i..(k1i + 2).min(kk) {
            outer += design.group_fraction(k2i).powf(-0.5);
        }
        let coeff = 0.5 * design.n_at(k1i) as f64 * outer;
        for l in 0..d {
            let wsum: f64 = (0..d).map(|j| var_t_inv_root[(l, j)].abs()).sum();
            for i in 0..d {
                for u in 0..d {
                    let q4 = &mc.q4[k1i][i * d + u];
                    let root = q4.value.max(0.0).sqrt();
                    let w = coeff * wsum * mu[(i * d + u) * d + l];
                    k1_val += w * root;
                    if q4.se > 0.0 && root > 0.0 {
                        k1_var += (w * q4.se / (2.0 * root)).powi(2);
                    }
                }
            }
        }
    }
    let k1 = Quantity::mc(k1_val, k1_var.sqrt());

    // K2 from fourth central moments of T.
    let mut inner = 0.0;
    for j in 0..d {
        let cm4 = central_moment4(fam, eta0, [j, j, j, j])?;
        let var_j = var_t[(j, j)];
        inner += (cm4 - var_j * var_j).max(0.0).sqrt();
    }
    for i in 0..d {
        for j in (i + 1)..d {
            let cm4 = central_moment4(fam, eta0, [i, i, j, j])?;
            let cov = var_t[(i, j)];
            inner += 2.0 * (cm4 - cov * cov).max(0.0).sqrt();
        }
    }
    let frac_sum: f64 = (0..kk).map(|k| design.group_fraction(k).sqrt()).sum();
    let k2 = Quantity::closed(inner * frac_sum / n.sqrt());

    let diff3 = fam.abs_suff_diff_cubed(eta0).ok_or_else(|| {
        Error::Validation(format!(
            "family '{}' has no closed-form E[sum_j |T_j(Y') - T_j(Y)|]^3; use the generic path",
            fam.name()
        ))
    })?;
    let k3 = Quantity::closed(diff3 / n.sqrt());

    let max_frac_inv = (0..kk)
        .map(|k| design.group_fraction(k).powf(-0.5))
        .fold(0.0_f64, f64::max);
    let c = Quantity::closed(var_t_inv_root.amax() * max_frac_inv);

    let kterms = KTerms { k1, k2, k3, c, eq2: Quantity::mc(mc.eq2.value, mc.eq2.se) };
    let mut report = total_bound(&kterms, norms, design.q(), design.n(), eps, BoundVariant::Thm31)?;
    report.variant = BoundVariant::Cor41;
    report.dim = d;
    report.analyses = kk;
    report.warnings.extend(mc.warnings.iter().cloned());
    Ok(report.with_context(fam.name(), eta0))
}

/// Fully closed-form bound for i.i.d. exponential lifetimes (d = 1). The
/// estimator at each analysis is inverse gamma, so every moment in the bound
/// has a closed form:
///
/// K1 = sqrt(3) eta0^3/(eta0-eps)^3 sum_{k1,k2} (|G_k2|/n)^{-1/2}
///      sqrt((n^4 + 46 n^3/3 + 8 n^2) / ((n-1)(n-2)(n-3)(n-4))), n = n_{k1};
/// K2 = sum_k (|G_k|/n)^{1/2};  c = max_k (|G_k|/n)^{-1/2};
/// E[sum Q_j^2] = eta0^2 sum_k (n_k + 2)/((n_k - 1)(n_k - 2)).
///
/// The headline total uses the term-2 prefactor `sqrt(2)/2 K^2 c^2 ||h||_2 /
/// sqrt(n)` that direct evaluation of the family bound yields, plus the
/// closed-form K3 term `q^3 c^3 ||h||_3 / (2 sqrt(n))`; the as-stated
/// alternative prefactor `2 K^2 c^2 ||h||_2 / (eta0^2 sqrt(n))` is reported
/// alongside it because the two disagree (see the verify mode).
pub fn expdist_bound_cor42(
    design: &GroupDesign,
    eta0: f64,
    eps: f64,
    norms: &HNorms,
) -> Result<BoundReport> {
    if design.dim() != 1 {
        return Err(Error::validation("the exponential-distribution bound requires d = 1"));
    }
    if !(eta0 > 0.0 && eta0.is_finite()) {
        return Err(Error::Domain(format!("eta0 must be positive, got {eta0}")));
    }
    if !(eps > 0.0 && eps < eta0) {
        return Err(Error::Domain(format!("epsilon must lie in (0, eta0), got {eps}")));
    }
    if design.cumulative_sizes().iter().any(|&nk| nk < 5) {
        return Err(Error::Domain(format!(
            "every analysis size must be at least 5, got {:?}",
            design.cumulative_sizes()
        )));
    }
    norms.validate()?;
    let d2 = norms.need_d2("the exponential-distribution bound")?;
    let d3 = norms.need_d3("the exponential-distribution bound")?;

    let kk = design.analyses();
    let n = design.n() as f64;
    let qf = design.q() as f64;

    let mut k1 = 0.0;
    for k1i in 0..kk {
        let nk = design.n_at(k1i) as f64;
        let num = nk.powi(4) + 46.0 / 3.0 * nk.powi(3) + 8.0 * nk * nk;
        let den = (nk - 1.0) * (nk - 2.0) * (nk - 3.0) * (nk - 4.0);
        let inner = (num / den).sqrt();
        for k2i in k1i..(k1i + 2).min(kk) {
            k1 += design.group_fraction(k2i).powf(-0.5) * inner;
        }
    }
    k1 *= 3.0_f64.sqrt() * (eta0 / (eta0 - eps)).powi(3);

    let k2: f64 = (0..kk).map(|k| design.group_fraction(k).sqrt()).sum();
    let c: f64 = (0..kk)
        .map(|k| design.group_fraction(k).powf(-0.5))
        .fold(0.0_f64, f64::max);
    // In the c convention above, the exact K3 = E|Y - Y'|^3 / (eta0^3 sqrt(n))
    // rescales to 6 / sqrt(n).
    let k3 = 6.0 / n.sqrt();
    let eq2: f64 = (0..kk)
        .map(|k| {
            let nk = design.n_at(k) as f64;
            eta0 * eta0 * (nk + 2.0) / ((nk - 1.0) * (nk - 2.0))
        })
        .sum();

    let kf = kk as f64;
    let term1 = norms.d1 / n.sqrt() * k1;
    let term2 = std::f64::consts::SQRT_2 / 2.0 * kf * kf * c * c * d2 * k2 / n.sqrt();
    let term3 = qf.powi(3) * c.powi(3) * d3 / 12.0 * k3;
    let term4 = 2.0 * norms.sup / (eps * eps) * eq2;
    let terms = [term1, term2, term3, term4];

    let term2_stated = 2.0 * kf * kf * c * c * d2 * k2 / (eta0 * eta0 * n.sqrt());
    let kterms = KTerms {
        k1: Quantity::closed(k1),
        k2: Quantity::closed(k2),
        k3: Quantity::closed(k3),
        c: Quantity::closed(c),
        eq2: Quantity::closed(eq2),
    };

    Ok(BoundReport {
        variant: BoundVariant::Cor42,
        family: "exponential".to_string(),
        theta0: vec![eta0],
        dim: 1,
        analyses: kk,
        q: design.q(),
        n: design.n(),
        epsilon: eps,
        norms: norms.clone(),
        kterms,
        terms,
        total: terms.iter().sum(),
        total_conservative: terms.iter().sum(),
        extras: vec![
            ("term2_stated".to_string(), format!("{term2_stated}")),
            ("term2_prefactor".to_string(), "sqrt(2)/2".to_string()),
        ],
        warnings: vec![
            "term2 uses the directly evaluated prefactor sqrt(2)/2 per unit K2; the corollary as displayed states 2/eta0^2 (see term2_stated)".to_string(),
        ],
    })
}

// ---------------------------------------------------------------------------
// Tail-parameter optimization
// ---------------------------------------------------------------------------

/// Minimize a bound over epsilon on [lo, hi]: 64-point log-spaced grid, then
/// golden-section refinement on the bracketing interval. Objective failures
/// inside the range are treated as +infinity.
pub fn optimize_epsilon(
    bound: &dyn Fn(f64) -> Result<f64>,
    range: (f64, f64),
) -> Result<(f64, f64)> {
    let (lo, hi) = range;
    if !(lo > 0.0 && hi > lo && hi.is_finite()) {
        return Err(Error::Validation(format!("invalid epsilon range ({lo}, {hi})")));
    }
    let eval = |x: f64| -> f64 {
        match bound(x) {
            Ok(v) if v.is_finite() => v,
            _ => f64::INFINITY,
        }
    };
    const GRID: usize = 64;
    let ratio = hi / lo;
    let grid: Vec<f64> =
        (0..GRID).map(|i| lo * ratio.powf(i as f64 / (GRID - 1) as f64)).collect();
    let vals: Vec<f64> = grid.iter().map(|&x| eval(x)).collect();
    let best_i = (0..GRID)
        .min_by(|&a, &b| vals[a].partial_cmp(&vals[b]).unwrap())
        .unwrap();
    if !vals[best_i].is_finite() {
        return Err(Error::numerical("the bound is infinite on the whole epsilon range"));
    }

    let a = grid[best_i.saturating_sub(1)];
    let b = grid[(best_i + 1).min(GRID - 1)];
    const INVPHI: f64 = 0.618_033_988_749_894_9;
    let (mut x1, mut x2) = (b - INVPHI * (b - a), a + INVPHI * (b - a));
    let (mut f1, mut f2) = (eval(x1), eval(x2));
    let (mut a, mut b) = (a, b);
    for _ in 0..80 {
        if f1 > f2 {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + INVPHI * (b - a);
            f2 = eval(x2);
        } else {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - INVPHI * (b - a);
            f1 = eval(x1);
        }
    }
    let mut cands = vec![(grid[best_i], vals[best_i]), (x1, f1), (x2, f2), (lo, eval(lo)), (hi, eval(hi))];
    cands.retain(|(_, v)| v.is_finite());
    cands.sort_by(|p, q| p.1.partial_cmp(&q.1).unwrap());
    Ok(cands[0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn unit_norms() -> HNorms {
        HNorms::all_ones()
    }

    #[test]
    fn pair_bound_zero_terms() {
        let sigma = DMatrix::from_element(1, 1, 1.0);
        let v = rr_pair_bound(1, &sigma, (0.0, 0.0, 0.0), &unit_norms(), PairVariant::Classic)
            .unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn pair_bound_classic_example() {
        // d = 1, Sigma = [1], all norms 1, (A, B, C) = (0.1, 0.01, 0.02):
        // 0.025 + 0.01/12 + 1.5 * 0.02.
        let sigma = DMatrix::from_element(1, 1, 1.0);
        let v = rr_pair_bound(1, &sigma, (0.1, 0.01, 0.02), &unit_norms(), PairVariant::Classic)
            .unwrap();
        assert_relative_eq!(v, 0.025 + 0.01 / 12.0 + 1.5 * 0.02, epsilon = 1e-12);
        assert_relative_eq!(v, 0.0558333333333, epsilon = 1e-9);
    }

    #[test]
    fn pair_bound_improved_example() {
        // Improved with C = 0, d = 1, Sigma = [1]:
        // 0.1/sqrt(pi) + 0.01 sqrt(2 pi)/8.
        let sigma = DMatrix::from_element(1, 1, 1.0);
        let v = rr_pair_bound(1, &sigma, (0.1, 0.01, 0.0), &unit_norms(), PairVariant::Improved)
            .unwrap();
        assert_relative_eq!(v, 0.1 / SQRT_PI + 0.01 * SQRT_2PI / 8.0, epsilon = 1e-12);
        assert_relative_eq!(v, 0.056418958 + 0.0031333, epsilon = 1e-6);
    }

    #[test]
    fn pair_bound_missing_norms() {
        let sigma = DMatrix::from_element(1, 1, 1.0);
        let norms = HNorms { sup: 1.0, d1: 1.0, d2: Some(1.0), d3: None, centered_sup: None };
        assert!(rr_pair_bound(1, &sigma, (0.1, 0.0, 0.0), &norms, PairVariant::Classic).is_err());
        // Improved without the centered sup fails only when C > 0.
        assert!(rr_pair_bound(1, &sigma, (0.1, 0.0, 0.0), &norms, PairVariant::Improved).is_ok());
        assert!(rr_pair_bound(1, &sigma, (0.1, 0.0, 0.1), &norms, PairVariant::Improved).is_err());
    }

    fn closed_kterms(k1: f64, k2: f64, k3: f64, c: f64, eq2: f64) -> KTerms {
        KTerms {
            k1: Quantity::closed(k1),
            k2: Quantity::closed(k2),
            k3: Quantity::closed(k3),
            c: Quantity::closed(c),
            eq2: Quantity::closed(eq2),
        }
    }

    #[test]
    fn total_bound_zero() {
        let kt = closed_kterms(0.0, 0.0, 0.0, 1.0, 0.0);
        let r = total_bound(&kt, &unit_norms(), 1, 10, 0.5, BoundVariant::Thm31).unwrap();
        assert_eq!(r.total, 0.0);
    }

    #[test]
    fn total_bound_worked_example() {
        // Frozen arithmetic: norms 1, q = 1, c = 1, n = 10, eps = 0.5,
        // K1 = 40.736, K2 = 0.8944, K3 = 1.8974, EQ2 = 1/6.
        let kt = closed_kterms(40.736, 0.8944, 1.8974, 1.0, 1.0 / 6.0);
        let r = total_bound(&kt, &unit_norms(), 1, 10, 0.5, BoundVariant::Thm31).unwrap();
        assert_relative_eq!(r.terms[0], 12.8818, epsilon = 1e-3);
        assert_relative_eq!(r.terms[1], 0.2236, epsilon = 1e-4);
        assert_relative_eq!(r.terms[2], 0.158117, epsilon = 1e-5);
        assert_relative_eq!(r.terms[3], 4.0 / 3.0, epsilon = 1e-12);
        assert_relative_eq!(r.total, 14.596, epsilon = 2e-3);
    }

    #[test]
    fn total_bound_sup_norm_only_scales_tail() {
        let kt = closed_kterms(1.0, 1.0, 1.0, 1.0, 0.5);
        let base = total_bound(&kt, &unit_norms(), 2, 100, 0.5, BoundVariant::Thm31).unwrap();
        let mut doubled = unit_norms();
        doubled.sup = 2.0;
        let two = total_bound(&kt, &doubled, 2, 100, 0.5, BoundVariant::Thm31).unwrap();
        for i in 0..3 {
            assert_relative_eq!(base.terms[i], two.terms[i], epsilon = 1e-14);
        }
        assert_relative_eq!(two.terms[3], 2.0 * base.terms[3], epsilon = 1e-14);
    }

    #[test]
    fn total_bound_thm33_requires_d2() {
        let kt = closed_kterms(1.0, 1.0, 1.0, 1.0, 0.5);
        let norms = HNorms { sup: 1.0, d1: 1.0, d2: None, d3: Some(1.0), centered_sup: None };
        assert!(total_bound(&kt, &norms, 2, 100, 0.5, BoundVariant::Thm33).is_err());
        let norms = HNorms { sup: 1.0, d1: 1.0, d2: Some(1.0), d3: None, centered_sup: None };
        assert!(total_bound(&kt, &norms, 2, 100, 0.5, BoundVariant::Thm33).is_ok());
        assert!(total_bound(&kt, &norms, 2, 100, 0.5, BoundVariant::Thm31).is_err());
    }

    #[test]
    fn total_bound_monotone_in_norms() {
        let kt = closed_kterms(2.0, 0.5, 0.3, 1.2, 0.1);
        let base = total_bound(&kt, &unit_norms(), 2, 50, 0.4, BoundVariant::Thm31).unwrap();
        let smaller = HNorms {
            sup: 0.5,
            d1: 0.5,
            d2: Some(0.5),
            d3: Some(0.5),
            centered_sup: None,
        };
        let small = total_bound(&kt, &smaller, 2, 50, 0.4, BoundVariant::Thm31).unwrap();
        assert!(small.total <= base.total);
    }

    #[test]
    fn expdist_bound_frozen_example() {
        // K = 1, n = 10, eta0 = 1, eps = 0.5, norms all 1.
        let design = GroupDesign::new(1, &[10]).unwrap();
        let r = expdist_bound_cor42(&design, 1.0, 0.5, &unit_norms()).unwrap();
        assert_relative_eq!(r.kterms.k1.value, 40.73400617738524, epsilon = 1e-12);
        assert_relative_eq!(r.kterms.k2.value, 1.0, epsilon = 1e-14);
        assert_relative_eq!(r.kterms.c.value, 1.0, epsilon = 1e-14);
        assert_relative_eq!(r.kterms.eq2.value, 1.0 / 6.0, epsilon = 1e-14);
        assert_relative_eq!(r.total, 14.596277788482341, epsilon = 1e-12);
    }

    #[test]
    fn expdist_bound_domain_errors() {
        let design = GroupDesign::new(1, &[4]).unwrap();
        assert!(expdist_bound_cor42(&design, 1.0, 0.5, &unit_norms()).is_err());
        let design = GroupDesign::new(1, &[10]).unwrap();
        assert!(expdist_bound_cor42(&design, 1.0, 1.5, &unit_norms()).is_err());
        assert!(expdist_bound_cor42(&design, -1.0, 0.5, &unit_norms()).is_err());
        let d2 = GroupDesign::new(2, &[10]).unwrap();
        assert!(expdist_bound_cor42(&d2, 1.0, 0.5, &unit_norms()).is_err());
    }

    #[test]
    fn report_rendering_is_stable() {
        let design = GroupDesign::new(1, &[10]).unwrap();
        let r1 = expdist_bound_cor42(&design, 1.0, 0.5, &unit_norms()).unwrap().render();
        let r2 = expdist_bound_cor42(&design, 1.0, 0.5, &unit_norms()).unwrap().render();
        assert_eq!(r1, r2);
        for key in
            ["variant:", "k1:", "k2:", "k3:", "c:", "eq2:", "term1:", "term4:", "total:", "epsilon:", "warnings:"]
        {
            assert!(r1.contains(key), "missing {key} in report:\n{r1}");
        }
    }

    #[test]
    fn cor41_closed_k_terms_single_analysis() {
        use crate::families::{Exponential, NormalKnownVariance};
        use crate::model::EfModel;
        use std::sync::Arc;

        // Exp(1), K = 1, n = 100: K2 = sqrt(8)/10, K3 = 6/10.
        let fam = Exponential;
        let design = GroupDesign::new(1, &[100]).unwrap();
        let model = EfModel::new(Arc::new(Exponential));
        let cfg = crate::montecarlo::McConfig {
            replications: 2_000,
            seed: 12,
            ..Default::default()
        };
        let mc = crate::montecarlo::estimate_moments(&model, &design, &[1.0], 0.8, &cfg).unwrap();
        let r = ef_bound_cor41(&fam, &design, &[1.0], 0.8, &HNorms::all_ones(), &mc).unwrap();
        assert_relative_eq!(r.kterms.k2.value, 8.0_f64.sqrt() / 10.0, epsilon = 1e-12);
        assert_relative_eq!(r.kterms.k2.value, 0.28284, epsilon = 1e-4);
        assert_relative_eq!(r.kterms.k3.value, 0.6, epsilon = 1e-12);
        assert!(matches!(r.kterms.k2.provenance, Provenance::Closed));
        assert!(matches!(r.kterms.k1.provenance, Provenance::MonteCarlo));

        // Normal with known variance: the third cumulant vanishes, so the
        // envelope term disappears and K1 = 0 exactly.
        let nfam = NormalKnownVariance::unit();
        let nmodel = EfModel::new(Arc::new(NormalKnownVariance::unit()));
        let ndesign = GroupDesign::new(1, &[50]).unwrap();
        let nmc =
            crate::montecarlo::estimate_moments(&nmodel, &ndesign, &[0.0], 1.0, &cfg).unwrap();
        // The moment polynomial cancels to rounding level for the zero
        // third cumulant.
        let nr = ef_bound_cor41(&nfam, &ndesign, &[0.0], 1.0, &HNorms::all_ones(), &nmc).unwrap();
        assert!(nr.kterms.k1.value.abs() < 1e-12, "K1 = {}", nr.kterms.k1.value);
        assert!(nr.terms[0].abs() < 1e-12);
    }

    #[test]
    fn optimize_epsilon_monotone_cases() {
        // Only the K1-like part (increasing in eps): minimum at lo.
        let incr = |e: f64| -> Result<f64> { Ok(1.0 / (1.0 - e).powi(3)) };
        let (e, _) = optimize_epsilon(&incr, (0.01, 0.9)).unwrap();
        assert!(e <= 0.0101, "expected lo, got {e}");

        // Only the tail part (decreasing in eps): maximum range end.
        let decr = |e: f64| -> Result<f64> { Ok(1.0 / (e * e)) };
        let (e, _) = optimize_epsilon(&decr, (0.01, 0.9)).unwrap();
        assert!(e >= 0.899, "expected hi, got {e}");
    }

    #[test]
    fn optimize_epsilon_interior_matches_fine_grid() {
        let design = GroupDesign::new(1, &[10]).unwrap();
        let f = |e: f64| expdist_bound_cor42(&design, 1.0, e, &HNorms::all_ones()).map(|r| r.total);
        let (e_star, v_star) = optimize_epsilon(&f, (1e-3, 0.999)).unwrap();
        // Fine-grid oracle.
        let mut best = (0.0, f64::INFINITY);
        for i in 0..20000 {
            let e = 1e-3 + (0.999 - 1e-3) * i as f64 / 19999.0;
            let v = f(e).unwrap();
            if v < best.1 {
                best = (e, v);
            }
        }
        assert!(e_star > 1e-3 && e_star < 0.999, "interior minimum expected");
        assert_relative_eq!(v_star, best.1, epsilon = 1e-6);
        assert!((e_star - best.0).abs() < 5e-4 * best.0.max(1.0), "{e_star} vs {}", best.0);
    }
}
