//! Verify mode: the property suite over matrix identities, smoother
//! constants, the exchangeable-pair diagnostic, mean-function round trips
//! and the cross-path consistency of the bound routes, with the documented
//! term-2 prefactor gap printed rather than hidden.

use std::fmt::Write as _;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;
use rand::SeedableRng;

use gsb_core::blockmat::{build_blocks, info_from_groups};
use gsb_core::bounds::{ef_bound_cor41, expdist_bound_cor42, k_terms_generic, HNorms};
use gsb_core::design::GroupDesign;
use gsb_core::estimator::ef_mle;
use gsb_core::families::Exponential;
use gsb_core::kolmogorov::hermite_smoother;
use gsb_core::model::{mean_function, EfModel, FamilyRegistry};
use gsb_core::montecarlo::{
    estimate_moments, exchangeable_pair_diagnostic, simulate_dataset, McConfig,
};
use gsb_core::{Error, Result};

struct Outcome {
    name: &'static str,
    pass: bool,
    detail: String,
}

pub fn mode_verify(ctx: &super::Ctx) -> Result<()> {
    let mut outcomes = Vec::new();
    outcomes.push(check_block_identities());
    outcomes.push(check_smoother());
    outcomes.push(check_round_trips());
    outcomes.push(check_pair_diagnostic(ctx));
    outcomes.push(check_cross_path(ctx));

    let mut body = String::new();
    let mut all_pass = true;
    for o in &outcomes {
        let line = format!("{} {}: {}", if o.pass { "PASS" } else { "FAIL" }, o.name, o.detail);
        println!("{line}");
        let _ = writeln!(body, "{line}");
        all_pass &= o.pass;
    }
    let path = ctx.write_artifact("verify_report.txt", &body)?;
    println!("report: {}", path.display());
    if all_pass {
        Ok(())
    } else {
        Err(Error::numerical("verify suite failed; see the report"))
    }
}

fn check_block_identities() -> Outcome {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(12021);
    let mut worst = 0.0_f64;
    for trial in 0..100 {
        let d = 1 + trial % 3;
        let kk = 1 + trial % 4;
        let groups: Vec<DMatrix<f64>> = (0..kk)
            .map(|_| {
                let b = DMatrix::from_fn(d, d, |_, _| rng.random::<f64>() - 0.5);
                &b * b.transpose() + DMatrix::<f64>::identity(d, d) * (0.2 + rng.random::<f64>())
            })
            .collect();
        let info = match info_from_groups(groups) {
            Ok(i) => i,
            Err(e) => {
                return Outcome {
                    name: "block-identities",
                    pass: false,
                    detail: format!("info build failed: {e}"),
                }
            }
        };
        let sizes: Vec<usize> = (1..=kk).map(|k| 9 * k).collect();
        let design = GroupDesign::new(d, &sizes).unwrap();
        match build_blocks(&info, &design) {
            Ok(set) => {
                let (r1, r2, r3) = set.identity_residuals();
                worst = worst.max(r1).max(r2).max(r3).max(set.off_band_residual());
            }
            Err(e) => {
                return Outcome {
                    name: "block-identities",
                    pass: false,
                    detail: format!("build failed: {e}"),
                }
            }
        }
    }
    Outcome {
        name: "block-identities",
        pass: worst < 1e-8,
        detail: format!("100 random designs, worst residual {worst:.3e}"),
    }
}

fn check_smoother() -> Outcome {
    match hermite_smoother(3) {
        Ok(s) => {
            let pass = s.norm_exact && s.norm_f64() == 52.5;
            Outcome {
                name: "smoother-norm",
                pass,
                detail: format!(
                    "||S3|| = {} ({})",
                    s.norm_f64(),
                    if s.norm_exact { "exact rational" } else { "upper bound" }
                ),
            }
        }
        Err(e) => Outcome { name: "smoother-norm", pass: false, detail: e.to_string() },
    }
}

fn check_round_trips() -> Outcome {
    let registry = FamilyRegistry::with_builtins();
    let grids: Vec<(&str, Vec<Vec<f64>>)> = vec![
        ("exponential", vec![vec![0.4], vec![1.0], vec![2.5]]),
        ("normal", vec![vec![-1.0], vec![0.7]]),
        ("bernoulli", vec![vec![-0.9], vec![0.3]]),
        ("normal_mean_variance", vec![vec![0.4, -0.6], vec![-1.0, -0.2]]),
    ];
    let mut worst = 0.0_f64;
    for (name, etas) in grids {
        let fam = registry.get(name).unwrap();
        for eta in etas {
            let tau = match mean_function(fam.as_ref(), &eta) {
                Ok(t) => t,
                Err(e) => {
                    return Outcome {
                        name: "mean-function-round-trip",
                        pass: false,
                        detail: format!("{name}: {e}"),
                    }
                }
            };
            match ef_mle(fam.as_ref(), &tau, &fam.init_from_suff_mean(&tau)) {
                Ok(rec) => {
                    for i in 0..fam.dim() {
                        worst = worst.max((rec[i] - eta[i]).abs());
                    }
                }
                Err(e) => {
                    return Outcome {
                        name: "mean-function-round-trip",
                        pass: false,
                        detail: format!("{name}: {e}"),
                    }
                }
            }
        }
    }
    Outcome {
        name: "mean-function-round-trip",
        pass: worst < 1e-8,
        detail: format!("all registered families, worst recovery error {worst:.3e}"),
    }
}

fn check_pair_diagnostic(ctx: &super::Ctx) -> Outcome {
    let family_name = ctx.file.family.as_ref().map_or("exponential", |f| f.name.as_str());
    let theta0 = ctx.file.family.as_ref().map_or(vec![1.0], |f| f.theta0.clone());
    let registry = FamilyRegistry::with_builtins();
    let fam = match registry.get(family_name) {
        Ok(f) => f,
        Err(e) => return Outcome { name: "pair-diagnostic", pass: false, detail: e.to_string() },
    };
    let model = EfModel::new(Arc::new(super::EfShim(fam)));
    let design = GroupDesign::new(model.family().dim().max(1), &[8, 16, 24])
        .unwrap_or_else(|_| GroupDesign::new(1, &[8, 16, 24]).unwrap());
    let cfg = McConfig::default().with_seed(ctx.seed.unwrap_or(20021));
    let mut worst = 0.0_f64;
    for r in 0..20 {
        let data = match simulate_dataset(&model, &design, &theta0, r, &cfg) {
            Ok(d) => d,
            Err(e) => {
                return Outcome { name: "pair-diagnostic", pass: false, detail: e.to_string() }
            }
        };
        match exchangeable_pair_diagnostic(&model, &data, &theta0) {
            Ok(res) => worst = worst.max(res),
            Err(e) => {
                return Outcome { name: "pair-diagnostic", pass: false, detail: e.to_string() }
            }
        }
    }
    Outcome {
        name: "pair-diagnostic",
        pass: worst < 1e-12,
        detail: format!("{family_name}, 20 datasets, worst analytic residual {worst:.3e}"),
    }
}

fn check_cross_path(ctx: &super::Ctx) -> Outcome {
    let fam = Arc::new(Exponential);
    let model = EfModel::new(fam.clone());
    let design = GroupDesign::new(1, &[50, 100]).unwrap();
    let eta0 = [1.0];
    let eps = 0.3;
    let cfg = McConfig {
        replications: 40_000,
        seed: ctx.seed.unwrap_or(30031),
        workers: ctx.workers,
        ..Default::default()
    };
    let run = || -> Result<(String, bool)> {
        let mc = estimate_moments(&model, &design, &eta0, eps, &cfg)?;
        let generic = k_terms_generic(&model, &design, &eta0, eps, &mc)?;
        let cor41 = ef_bound_cor41(fam.as_ref(), &design, &eta0, eps, &HNorms::all_ones(), &mc)?;
        let cor42 = expdist_bound_cor42(&design, eta0[0], eps, &HNorms::all_ones())?;
        let k3_ok = (cor41.kterms.k3.value - cor42.kterms.k3.value).abs() < 1e-10
            && (generic.k3.value - cor41.kterms.k3.value).abs() <= 3.0 * generic.k3.se;
        let c_ok = (cor41.kterms.c.value - cor42.kterms.c.value).abs() < 1e-10
            && (generic.c.value - cor41.kterms.c.value).abs() < 1e-10;
        let stated: f64 = cor42
            .extras
            .iter()
            .find(|(k, _)| k == "term2_stated")
            .and_then(|(_, v)| v.parse().ok())
            .unwrap_or(f64::NAN);
        let detail = format!(
            "K3 {} (mc {} +- {}), c {}; term2 direct {} vs as-stated {} -- the prefactor gap (sqrt(2)/2 vs 2/eta0^2 per unit K2) is expected and flagged",
            cor41.kterms.k3.value,
            generic.k3.value,
            generic.k3.se,
            cor41.kterms.c.value,
            cor42.terms[1],
            stated
        );
        Ok((detail, k3_ok && c_ok))
    };
    match run() {
        Ok((detail, pass)) => Outcome { name: "cross-path-consistency", pass, detail },
        Err(e) => Outcome { name: "cross-path-consistency", pass: false, detail: e.to_string() },
    }
}
