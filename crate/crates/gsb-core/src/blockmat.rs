//! Information matrices and the block-matrix objects of the bound.
//!
//! From per-group informations `Ibar_n(G_k, theta)` this module assembles the
//! q x q objects: the block-diagonal `Sigma` and `J*`, the cumulative-sum
//! operator `A`, `Jtilde` with blocks `Ibar_n(min(k1,k2))`, `J_n` with blocks
//! `Ibar_n^{-1}(max(k1,k2))`, plus the roots the simulation and the bound
//! assembly need. `Jtilde^{-1/2}` denotes `Sigma^{-1/2} A^{-1}` (the inverse
//! of the factor `A Sigma^{1/2}`), which is block bidiagonal; `J_n^{-1/2}` is
//! the symmetric SPD inverse root used to standardize the stacked estimator.

use std::io::Write;

use nalgebra::DMatrix;
use rand::SeedableRng;

use crate::design::GroupDesign;
use crate::error::{Error, Result};
use crate::model::{fisher_information, ExponentialFamily, ParametricModel};

/// Upper bound on q = d K for the dense algebra here.
pub const MAX_Q: usize = 64;

/// Relative eigenvalue floor below which a matrix is treated as singular.
pub const EIG_RATIO_FLOOR: f64 = 1e-10;

/// Per-analysis and per-group average information matrices.
#[derive(Debug, Clone)]
pub struct InfoSet {
    /// Ibar_n(k, theta) = (1/n) sum_{i <= n_k} I_i(theta), k = 0..K-1.
    pub per_analysis: Vec<DMatrix<f64>>,
    /// Ibar_n(G_k, theta) = (1/n) sum_{i in G_k} I_i(theta).
    pub per_group: Vec<DMatrix<f64>>,
    /// Max-entry Monte Carlo standard error of the unit information, zero on
    /// the closed-form path.
    pub unit_info_se: f64,
}

impl InfoSet {
    pub fn analyses(&self) -> usize {
        self.per_group.len()
    }

    pub fn dim(&self) -> usize {
        self.per_group[0].nrows()
    }
}

/// Exponential-family information set: Ibar_n(G_k) = (|G_k|/n) Var_eta T(Y),
/// exact from the moment oracles.
pub fn info_bar_ef(fam: &dyn ExponentialFamily, design: &GroupDesign, eta: &[f64]) -> Result<InfoSet> {
    if !fam.admissible(eta) {
        return Err(Error::Domain(format!("eta {eta:?} outside the admissible set")));
    }
    let unit = fisher_information(fam, eta)?;
    info_from_unit(unit, design, 0.0)
}

/// Generic information set for i.i.d. models: the unit information
/// `E[-hessian log f]` is estimated by Monte Carlo with `draws` observations;
/// the max-entry standard error is reported on the result.
pub fn info_bar_mc(
    model: &dyn ParametricModel,
    design: &GroupDesign,
    theta: &[f64],
    draws: u64,
    seed: u64,
) -> Result<InfoSet> {
    if !model.admissible(theta) {
        return Err(Error::Domain(format!("theta {theta:?} outside the parameter space")));
    }
    let d = model.dim_param();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut y = vec![0.0; model.dim_obs()];
    let mut sum: DMatrix<f64> = DMatrix::zeros(d, d);
    let mut sumsq: DMatrix<f64> = DMatrix::zeros(d, d);
    for _ in 0..draws {
        model.sample_into(theta, &mut rng, &mut y);
        let h = model.hessian_log_density(&y, theta);
        for i in 0..d {
            for j in 0..d {
                sum[(i, j)] -= h[(i, j)];
                sumsq[(i, j)] += h[(i, j)] * h[(i, j)];
            }
        }
    }
    let unit = sum / draws as f64;
    let mut max_se = 0.0_f64;
    for i in 0..d {
        for j in 0..d {
            let var: f64 = (sumsq[(i, j)] / draws as f64 - unit[(i, j)] * unit[(i, j)]).max(0.0);
            max_se = max_se.max((var / draws as f64).sqrt());
        }
    }
    info_from_unit(unit, design, max_se)
}

fn info_from_unit(unit: DMatrix<f64>, design: &GroupDesign, se: f64) -> Result<InfoSet> {
    let kk = design.analyses();
    let mut per_group = Vec::with_capacity(kk);
    let mut per_analysis = Vec::with_capacity(kk);
    let mut running = DMatrix::zeros(unit.nrows(), unit.ncols());
    for k in 0..kk {
        let g = &unit * design.group_fraction(k);
        running += &g;
        per_group.push(g);
        per_analysis.push(running.clone());
    }
    let info = InfoSet { per_analysis, per_group, unit_info_se: se };
    for (k, m) in info.per_analysis.iter().enumerate() {
        check_spd(m, &format!("Ibar_n({}, theta)", k + 1))?;
    }
    Ok(info)
}

/// Information set from externally supplied per-group matrices (used by the
/// property suites with random PD inputs).
pub fn info_from_groups(per_group: Vec<DMatrix<f64>>) -> Result<InfoSet> {
    if per_group.is_empty() {
        return Err(Error::validation("at least one group information is required"));
    }
    let d = per_group[0].nrows();
    let mut per_analysis = Vec::with_capacity(per_group.len());
    let mut running = DMatrix::zeros(d, d);
    for (k, g) in per_group.iter().enumerate() {
        if g.nrows() != d || g.ncols() != d {
            return Err(Error::validation("group informations must share one dimension"));
        }
        running += g;
        check_spd(&running, &format!("Ibar_n({}, theta)", k + 1))?;
        per_analysis.push(running.clone());
    }
    Ok(InfoSet { per_analysis, per_group, unit_info_se: 0.0 })
}

fn check_spd(m: &DMatrix<f64>, what: &str) -> Result<()> {
    let eig = symmetric_eigenvalues(m)?;
    let max_e = eig.iter().cloned().fold(0.0_f64, f64::max);
    let min_e = eig.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(min_e > 0.0 && min_e > EIG_RATIO_FLOOR * max_e) {
        return Err(Error::Numerical(format!(
            "{what} is not positive definite: eigenvalues in [{min_e:.6e}, {max_e:.6e}]"
        )));
    }
    Ok(())
}

fn symmetric_eigenvalues(m: &DMatrix<f64>) -> Result<Vec<f64>> {
    if m.nrows() != m.ncols() {
        return Err(Error::validation("matrix is not square"));
    }
    let scale = m.amax().max(1.0);
    if (m - m.transpose()).amax() > 1e-8 * scale {
        return Err(Error::validation("matrix is not symmetric"));
    }
    let sym = (m + m.transpose()) * 0.5;
    Ok(sym.symmetric_eigen().eigenvalues.as_slice().to_vec())
}

/// Symmetric square root of an SPD matrix via eigendecomposition; with
/// `invert` the result R satisfies R R = M^{-1}. Errors with an eigenvalue
/// report when the matrix is not safely positive definite.
pub fn spd_sqrt(m: &DMatrix<f64>, invert: bool) -> Result<DMatrix<f64>> {
    let scale = m.amax().max(1.0);
    if m.nrows() != m.ncols() {
        return Err(Error::validation("matrix is not square"));
    }
    if (m - m.transpose()).amax() > 1e-8 * scale {
        return Err(Error::validation("spd_sqrt requires a symmetric matrix"));
    }
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let max_e = eig.eigenvalues.amax();
    let min_e = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(min_e > 0.0 && min_e > EIG_RATIO_FLOOR * max_e) {
        return Err(Error::Numerical(format!(
            "matrix is not safely positive definite: eigenvalues in [{min_e:.6e}, {max_e:.6e}]"
        )));
    }
    let mut vals = eig.eigenvalues.clone();
    for v in vals.iter_mut() {
        *v = if invert { 1.0 / v.sqrt() } else { v.sqrt() };
    }
    let r = &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose();
    Ok((&r + r.transpose()) * 0.5)
}

/// All block matrices of the bound plus their cached roots.
#[derive(Debug, Clone)]
pub struct BlockMatrixSet {
    pub dim: usize,
    pub analyses: usize,
    /// Block (k1,k2) = Ibar_n^{-1}(max(k1,k2)).
    pub j_n: DMatrix<f64>,
    /// Block (k1,k2) = Ibar_n(min(k1,k2)).
    pub j_tilde: DMatrix<f64>,
    /// blockdiag(Ibar_n(1), ..., Ibar_n(K)).
    pub j_star: DMatrix<f64>,
    /// Block lower-triangular matrix of d x d identities.
    pub a: DMatrix<f64>,
    /// blockdiag(Ibar_n(G_1), ..., Ibar_n(G_K)).
    pub sigma: DMatrix<f64>,
    /// Symmetric SPD inverse root of J_n.
    pub j_n_inv_sqrt: DMatrix<f64>,
    /// Sigma^{-1/2} A^{-1}: block bidiagonal, satisfies
    /// Jtilde^{-1/2} A Sigma^{1/2} = I.
    pub j_tilde_inv_sqrt: DMatrix<f64>,
    pub sigma_sqrt: DMatrix<f64>,
    pub sigma_inv_sqrt: DMatrix<f64>,
    /// Symmetric inverse roots of the per-group informations.
    pub group_inv_sqrt: Vec<DMatrix<f64>>,
}

/// Assemble the block matrices from an information set, verifying the
/// structural identities before returning.
pub fn build_blocks(info: &InfoSet, design: &GroupDesign) -> Result<BlockMatrixSet> {
    let d = info.dim();
    let kk = info.analyses();
    if d != design.dim() || kk != design.analyses() {
        return Err(Error::validation("information set does not match the design"));
    }
    let q = design.q();
    if q > MAX_Q {
        return Err(Error::Validation(format!("q = {q} exceeds the supported cap {MAX_Q}")));
    }

    let mut j_n = DMatrix::zeros(q, q);
    let mut j_tilde = DMatrix::zeros(q, q);
    let mut j_star = DMatrix::zeros(q, q);
    let mut a = DMatrix::zeros(q, q);
    let mut sigma = DMatrix::zeros(q, q);

    let mut per_analysis_inv = Vec::with_capacity(kk);
    for (k, m) in info.per_analysis.iter().enumerate() {
        let inv = m.clone().try_inverse().ok_or_else(|| {
            Error::Numerical(format!("Ibar_n({}, theta) is numerically singular", k + 1))
        })?;
        per_analysis_inv.push(inv);
    }

    for k1 in 0..kk {
        for k2 in 0..kk {
            let jt = &info.per_analysis[k1.min(k2)];
            let jn = &per_analysis_inv[k1.max(k2)];
            for i in 0..d {
                for j in 0..d {
                    j_tilde[(k1 * d + i, k2 * d + j)] = jt[(i, j)];
                    j_n[(k1 * d + i, k2 * d + j)] = jn[(i, j)];
                }
            }
        }
        for i in 0..d {
            for j in 0..d {
                j_star[(k1 * d + i, k1 * d + j)] = info.per_analysis[k1][(i, j)];
                sigma[(k1 * d + i, k1 * d + j)] = info.per_group[k1][(i, j)];
            }
            for k2 in 0..=k1 {
                a[(k1 * d + i, k2 * d + i)] = 1.0;
            }
        }
    }

    let mut sigma_sqrt = DMatrix::zeros(q, q);
    let mut sigma_inv_sqrt = DMatrix::zeros(q, q);
    let mut group_inv_sqrt = Vec::with_capacity(kk);
    for k in 0..kk {
        let root = spd_sqrt(&info.per_group[k], false)
            .map_err(|e| Error::Numerical(format!("group {} root: {e}", k + 1)))?;
        let inv_root = spd_sqrt(&info.per_group[k], true)
            .map_err(|e| Error::Numerical(format!("group {} inverse root: {e}", k + 1)))?;
        for i in 0..d {
            for j in 0..d {
                sigma_sqrt[(k * d + i, k * d + j)] = root[(i, j)];
                sigma_inv_sqrt[(k * d + i, k * d + j)] = inv_root[(i, j)];
            }
        }
        group_inv_sqrt.push(inv_root);
    }

    let a_inv = a
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::numerical("cumulative-sum operator failed to invert"))?;
    let j_tilde_inv_sqrt = &sigma_inv_sqrt * &a_inv;
    let j_n_inv_sqrt = spd_sqrt(&j_n, true)?;

    let set = BlockMatrixSet {
        dim: d,
        analyses: kk,
        j_n,
        j_tilde,
        j_star,
        a,
        sigma,
        j_n_inv_sqrt,
        j_tilde_inv_sqrt,
        sigma_sqrt,
        sigma_inv_sqrt,
        group_inv_sqrt,
    };
    set.verify()?;
    Ok(set)
}

impl BlockMatrixSet {
    /// Residuals of the structural identities, as sup-norms:
    /// (A Sigma A' - Jtilde, Jtilde^{-1/2} A Sigma^{1/2} - I, J* J J* - Jtilde).
    pub fn identity_residuals(&self) -> (f64, f64, f64) {
        let q = self.a.nrows();
        let asa = &self.a * &self.sigma * self.a.transpose();
        let r1 = (&asa - &self.j_tilde).amax();
        let prod = &self.j_tilde_inv_sqrt * &self.a * &self.sigma_sqrt;
        let r2 = (&prod - DMatrix::<f64>::identity(q, q)).amax();
        let jjj = &self.j_star * &self.j_n * &self.j_star;
        let r3 = (&jjj - &self.j_tilde).amax();
        (r1, r2, r3)
    }

    /// Largest sup-norm over the blocks of Jtilde^{-1/2} that the bidiagonal
    /// structure says must vanish (everything off the main and first
    /// sub-block-diagonal).
    pub fn off_band_residual(&self) -> f64 {
        let d = self.dim;
        let mut worst = 0.0_f64;
        for k1 in 0..self.analyses {
            for k2 in 0..self.analyses {
                if k1 == k2 || k1 == k2 + 1 {
                    continue;
                }
                for i in 0..d {
                    for j in 0..d {
                        worst = worst.max(self.j_tilde_inv_sqrt[(k1 * d + i, k2 * d + j)].abs());
                    }
                }
            }
        }
        worst
    }

    fn verify(&self) -> Result<()> {
        let scale = self.j_tilde.amax().max(self.j_n.amax()).max(1.0);
        let (r1, r2, r3) = self.identity_residuals();
        let tol = 1e-8 * scale;
        if r1 > tol || r2 > tol || r3 > tol {
            return Err(Error::Numerical(format!(
                "block identity residuals too large: A Sigma A' {r1:.3e}, root product {r2:.3e}, J* J J* {r3:.3e}"
            )));
        }
        Ok(())
    }
}

/// c = max_k |Ibar_n^{-1/2}(G_k)|, the max-abs entry over the per-group
/// symmetric inverse roots.
pub fn c_factor(info: &InfoSet) -> Result<f64> {
    let mut c = 0.0_f64;
    for (k, g) in info.per_group.iter().enumerate() {
        let inv_root = spd_sqrt(g, true)
            .map_err(|e| Error::Numerical(format!("group {} inverse root: {e}", k + 1)))?;
        c = c.max(inv_root.amax());
    }
    Ok(c)
}

/// Write a matrix as a plain-text numeric table (row-major, space-separated).
pub fn write_matrix<W: Write>(mut w: W, m: &DMatrix<f64>) -> Result<()> {
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| format!("{}", m[(i, j)])).collect();
        writeln!(w, "{}", row.join(" "))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::families::{Exponential, NormalKnownVariance};
    use approx::assert_relative_eq;
    use rand::Rng;

    #[test]
    fn info_bar_exponential_example() {
        // Exp, eta = 2, n = 10, |G_1| = 5: Ibar(G_1) = (1/2)(1/4).
        let design = GroupDesign::new(1, &[5, 10]).unwrap();
        let info = info_bar_ef(&Exponential, &design, &[2.0]).unwrap();
        assert_relative_eq!(info.per_group[0][(0, 0)], 0.125, epsilon = 1e-12);
        // Telescoping is exact.
        assert_relative_eq!(
            info.per_analysis[1][(0, 0)] - info.per_analysis[0][(0, 0)],
            info.per_group[1][(0, 0)],
            epsilon = 0.0
        );
    }

    #[test]
    fn info_bar_single_group_recovers_unit_information() {
        let design = GroupDesign::new(1, &[10]).unwrap();
        let info = info_bar_ef(&Exponential, &design, &[2.0]).unwrap();
        assert_relative_eq!(info.per_analysis[0][(0, 0)], 0.25, epsilon = 1e-12);
        let info = info_bar_ef(&NormalKnownVariance::unit(), &design, &[0.3]).unwrap();
        assert_relative_eq!(info.per_group[0][(0, 0)], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn hand_checked_two_by_two_blocks() {
        // K = 2, d = 1, Ibar(G_1) = Ibar(G_2) = 1/2.
        let info = info_from_groups(vec![
            DMatrix::from_element(1, 1, 0.5),
            DMatrix::from_element(1, 1, 0.5),
        ])
        .unwrap();
        let design = GroupDesign::new(1, &[1, 2]).unwrap();
        let set = build_blocks(&info, &design).unwrap();
        let expect = |m: &DMatrix<f64>, vals: [[f64; 2]; 2]| {
            for i in 0..2 {
                for j in 0..2 {
                    assert_relative_eq!(m[(i, j)], vals[i][j], epsilon = 1e-12);
                }
            }
        };
        expect(&set.sigma, [[0.5, 0.0], [0.0, 0.5]]);
        expect(&set.a, [[1.0, 0.0], [1.0, 1.0]]);
        expect(&set.j_tilde, [[0.5, 0.5], [0.5, 1.0]]);
        expect(&set.j_n, [[2.0, 1.0], [1.0, 1.0]]);
        // J* J J* = Jtilde on the same instance.
        let jjj = &set.j_star * &set.j_n * &set.j_star;
        expect(&jjj, [[0.5, 0.5], [0.5, 1.0]]);
    }

    #[test]
    fn single_analysis_degenerates() {
        let info = info_from_groups(vec![DMatrix::from_element(1, 1, 0.7)]).unwrap();
        let design = GroupDesign::new(1, &[5]).unwrap();
        let set = build_blocks(&info, &design).unwrap();
        assert_relative_eq!(set.j_tilde[(0, 0)], 0.7, epsilon = 1e-12);
        assert_relative_eq!(set.sigma[(0, 0)], 0.7, epsilon = 1e-12);
        assert_relative_eq!(set.a[(0, 0)], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn spd_sqrt_examples() {
        let id = DMatrix::<f64>::identity(3, 3);
        let r = spd_sqrt(&id, false).unwrap();
        assert_relative_eq!((&r - &id).amax(), 0.0, epsilon = 1e-14);

        let m = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![4.0, 9.0]));
        let r = spd_sqrt(&m, false).unwrap();
        assert_relative_eq!(r[(0, 0)], 2.0, epsilon = 1e-12);
        assert_relative_eq!(r[(1, 1)], 3.0, epsilon = 1e-12);

        let near_singular = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 1e-14]));
        assert!(spd_sqrt(&near_singular, false).is_err());
    }

    fn random_spd(d: usize, rng: &mut impl Rng) -> DMatrix<f64> {
        let b = DMatrix::from_fn(d, d, |_, _| rng.random::<f64>() - 0.5);
        &b * b.transpose() + DMatrix::<f64>::identity(d, d) * (0.2 + rng.random::<f64>())
    }

    #[test]
    fn spd_sqrt_round_trip_random() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let m = random_spd(6, &mut rng);
            let r = spd_sqrt(&m, false).unwrap();
            assert!(((&r * &r) - &m).amax() < 1e-10, "RR != M");
            let ri = spd_sqrt(&m, true).unwrap();
            let prod = &ri * &ri * &m;
            assert!((prod - DMatrix::<f64>::identity(6, 6)).amax() < 1e-9);
        }
    }

    #[test]
    fn c_factor_examples() {
        // Exp(eta0 = 1), two equal groups: c = eta0 sqrt(2).
        let design = GroupDesign::new(1, &[5, 10]).unwrap();
        let info = info_bar_ef(&Exponential, &design, &[1.0]).unwrap();
        let c = c_factor(&info).unwrap();
        assert_relative_eq!(c, 2.0_f64.sqrt(), epsilon = 1e-12);

        // K = 1, unit information: c = 1.
        let design = GroupDesign::new(1, &[10]).unwrap();
        let info = info_bar_ef(&NormalKnownVariance::unit(), &design, &[0.0]).unwrap();
        assert_relative_eq!(c_factor(&info).unwrap(), 1.0, epsilon = 1e-12);

        // Scaling T by 2 multiplies Var T by 4 and halves c (checked via the
        // known-variance normal: sigma2 = 4 means Var T = 4).
        let info = info_bar_ef(&NormalKnownVariance { sigma2: 4.0 }, &design, &[0.0]).unwrap();
        assert_relative_eq!(c_factor(&info).unwrap(), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn random_design_identities() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        for trial in 0..100 {
            let d = 1 + (trial % 3);
            let kk = 1 + (trial % 4);
            let groups: Vec<DMatrix<f64>> = (0..kk).map(|_| random_spd(d, &mut rng)).collect();
            let info = info_from_groups(groups).unwrap();
            let sizes: Vec<usize> = (1..=kk).map(|k| 7 * k).collect();
            let design = GroupDesign::new(d, &sizes).unwrap();
            let set = build_blocks(&info, &design).unwrap();
            let (r1, r2, r3) = set.identity_residuals();
            assert!(r1 < 1e-10, "A Sigma A' residual {r1}");
            assert!(r2 < 1e-8, "root product residual {r2}");
            assert!(r3 < 1e-8, "J* J J* residual {r3}");
            assert!(set.off_band_residual() < 1e-8);
            // Bidiagonal blocks match +-group inverse roots.
            for k in 0..kk {
                for i in 0..d {
                    for j in 0..d {
                        let diag = set.j_tilde_inv_sqrt[(k * d + i, k * d + j)];
                        assert!((diag - set.group_inv_sqrt[k][(i, j)]).abs() < 1e-8);
                        if k + 1 < kk {
                            let sub = set.j_tilde_inv_sqrt[((k + 1) * d + i, k * d + j)];
                            assert!((sub + set.group_inv_sqrt[k + 1][(i, j)]).abs() < 1e-8);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn q_cap_enforced() {
        let design = GroupDesign::new(33, &[10, 20]).unwrap();
        let info = info_from_groups(vec![
            DMatrix::<f64>::identity(33, 33),
            DMatrix::<f64>::identity(33, 33),
        ])
        .unwrap();
        assert!(build_blocks(&info, &design).is_err());
    }

    #[test]
    fn matrix_text_export() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.5, -3.0, 0.125]);
        let mut buf = Vec::new();
        write_matrix(&mut buf, &m).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "1 2.5\n-3 0.125\n");
    }
}
