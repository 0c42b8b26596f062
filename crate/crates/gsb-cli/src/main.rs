//! Batch front-end: reads one TOML config, runs one of the five modes, and
//! writes diff-able report/CSV artifacts.
//!
//! Exit codes: 0 success, 2 config error, 3 numerical failure
//! (positive-definiteness, convergence, domain), 4 Monte Carlo threshold
//! breach.

mod config;
mod verify;

use std::fs;
use std::path::PathBuf;
use std::sync::Arc;

use clap::Parser;

use config::{require, BoundCfg, EpsilonChoice, FileConfig, Mode};
use gsb_core::bounds::{
    ef_bound_cor41, expdist_bound_cor42, k_terms_generic, optimize_epsilon, total_bound,
    BoundReport, BoundVariant, HNorms,
};
use gsb_core::design::GroupDesign;
use gsb_core::kolmogorov::{hermite_smoother, kolmogorov_from_smooth, kolmogorov_from_smooth_raw, KolParams};
use gsb_core::model::{EfModel, FamilyRegistry};
use gsb_core::montecarlo::{empirical_smooth_distances, estimate_moments, slope_fit, McConfig};
use gsb_core::{Error, Result};

#[derive(Parser)]
#[command(name = "gsb")]
#[command(about = "Group sequential MLE normal-approximation bounds and their Monte Carlo verification")]
#[command(version)]
struct Cli {
    /// Run config (TOML).
    #[arg(long)]
    config: PathBuf,

    /// Override the RNG base seed from the config.
    #[arg(long)]
    seed: Option<u64>,

    /// Override the Monte Carlo replication count from the config.
    #[arg(long)]
    reps: Option<u64>,

    /// Output directory (default: config output.dir, else "out").
    #[arg(long)]
    out: Option<PathBuf>,

    /// Override the run mode from the config.
    #[arg(long, value_enum)]
    mode: Option<Mode>,
}

fn main() {
    let cli = Cli::parse();
    std::process::exit(run(cli));
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Validation(_) | Error::Unsupported(_) => 2,
        Error::Domain(_) | Error::Numerical(_) => 3,
        Error::MonteCarlo(_) => 4,
        Error::Io(_) => 1,
    }
}

fn run(cli: Cli) -> i32 {
    let text = match fs::read_to_string(&cli.config) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("config error: cannot read {}: {e}", cli.config.display());
            return 2;
        }
    };
    let file: FileConfig = match toml::from_str(&text) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("config error in {}:\n{e}", cli.config.display());
            return 2;
        }
    };
    let Some(mode) = cli.mode.or(file.mode) else {
        eprintln!("config error: no mode given (config key `mode` or flag --mode)");
        return 2;
    };

    let workers = match std::env::var("GSB_WORKERS") {
        Ok(v) => match v.parse::<usize>() {
            Ok(w) if w >= 1 => Some(w),
            _ => {
                eprintln!("config error: GSB_WORKERS must be a positive integer, got {v:?}");
                return 2;
            }
        },
        Err(_) => None,
    };

    let out_dir = cli
        .out
        .clone()
        .or_else(|| file.output.as_ref().and_then(|o| o.dir.clone().map(PathBuf::from)))
        .unwrap_or_else(|| PathBuf::from("out"));

    let ctx = Ctx { file, mode, out_dir, workers, seed: cli.seed, reps: cli.reps };
    match dispatch(&ctx) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{e}");
            exit_code(&e)
        }
    }
}

struct Ctx {
    file: FileConfig,
    mode: Mode,
    out_dir: PathBuf,
    workers: Option<usize>,
    seed: Option<u64>,
    reps: Option<u64>,
}

impl Ctx {
    fn mc_config(&self) -> McConfig {
        let mut cfg = self
            .file
            .mc
            .as_ref()
            .map(|m| m.build(self.workers))
            .unwrap_or_else(|| McConfig { workers: self.workers, ..Default::default() });
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(r) = self.reps {
            cfg.replications = r;
        }
        cfg
    }

    fn write_artifact(&self, name: &str, body: &str) -> Result<PathBuf> {
        fs::create_dir_all(&self.out_dir)?;
        let path = self.out_dir.join(name);
        fs::write(&path, body)?;
        Ok(path)
    }
}

fn dispatch(ctx: &Ctx) -> Result<()> {
    match ctx.mode {
        Mode::Bound => mode_bound(ctx),
        Mode::Simulate => mode_simulate(ctx),
        Mode::Sweep => mode_sweep(ctx),
        Mode::Verify => verify::mode_verify(ctx),
        Mode::Kolmogorov => mode_kolmogorov(ctx),
    }
}

// ---------------------------------------------------------------------------
// Bound assembly shared by the bound, simulate and sweep modes
// ---------------------------------------------------------------------------

fn resolve_norms(ctx: &Ctx, design: &GroupDesign) -> Result<HNorms> {
    if let Some(n) = &ctx.file.norms {
        return Ok(n.build());
    }
    if let Some(tf) = &ctx.file.test_function {
        return Ok(tf.build(design.q())?.norms);
    }
    Err(Error::validation(
        "either [norms] or [test_function] is required to fix the test-function norms",
    ))
}

fn compute_bound(
    ctx: &Ctx,
    design: &GroupDesign,
    norms: &HNorms,
    mc_cfg: &McConfig,
) -> Result<BoundReport> {
    let family = require(&ctx.file.family, "family", ctx.mode)?;
    let bound_cfg = ctx.file.bound.as_ref().map_or_else(
        || {
            Err(Error::validation(
                "config section [bound] is required to evaluate a bound",
            ))
        },
        Ok,
    )?;
    let variant: BoundVariant =
        bound_cfg.variant.ok_or_else(|| Error::validation("bound.variant is required"))?.into();
    let eps = bound_cfg.epsilon_choice()?;
    let registry = FamilyRegistry::with_builtins();

    match variant {
        BoundVariant::Cor42 => {
            if family.name != "exponential" {
                return Err(Error::Validation(format!(
                    "bound.variant = \"cor42\" applies to the exponential family, got '{}'",
                    family.name
                )));
            }
            let eta0 = *family.theta0.first().ok_or_else(|| Error::validation("family.theta0 is empty"))?;
            match eps {
                EpsilonChoice::Fixed(e) => expdist_bound_cor42(design, eta0, e, norms),
                EpsilonChoice::Auto { lo, hi } => {
                    let hi = hi.min(eta0 * (1.0 - 1e-6));
                    let f = |e: f64| expdist_bound_cor42(design, eta0, e, norms).map(|r| r.total);
                    let (e_star, _) = optimize_epsilon(&f, (lo, hi))?;
                    expdist_bound_cor42(design, eta0, e_star, norms)
                }
            }
        }
        BoundVariant::Cor41 => {
            let fam = registry.get(&family.name)?;
            let model = EfModel::new(Arc::new(EfShim(fam.clone())));
            let moments_eps = match eps {
                EpsilonChoice::Fixed(e) => e,
                // The estimator moments do not depend on epsilon on this
                // path; estimate once at the top of the range.
                EpsilonChoice::Auto { hi, .. } => hi,
            };
            let mc = estimate_moments(&model, design, &family.theta0, moments_eps, mc_cfg)?;
            match eps {
                EpsilonChoice::Fixed(e) => {
                    ef_bound_cor41(fam.as_ref(), design, &family.theta0, e, norms, &mc)
                }
                EpsilonChoice::Auto { lo, hi } => {
                    let f = |e: f64| {
                        ef_bound_cor41(fam.as_ref(), design, &family.theta0, e, norms, &mc)
                            .map(|r| r.total)
                    };
                    let (e_star, _) = optimize_epsilon(&f, (lo, hi))?;
                    ef_bound_cor41(fam.as_ref(), design, &family.theta0, e_star, norms, &mc)
                }
            }
        }
        BoundVariant::Thm31 | BoundVariant::Thm33 => {
            let EpsilonChoice::Fixed(e) = eps else {
                return Err(Error::validation(
                    "bound.epsilon = \"auto\" is supported on the cor41/cor42 paths; the generic path needs a fixed epsilon",
                ));
            };
            let fam = registry.get(&family.name)?;
            let model = EfModel::new(Arc::new(EfShim(fam)));
            let mc = estimate_moments(&model, design, &family.theta0, e, mc_cfg)?;
            let kterms = k_terms_generic(&model, design, &family.theta0, e, &mc)?;
            let mut report = total_bound(&kterms, norms, design.q(), design.n(), e, variant)?;
            report.dim = design.dim();
            report.analyses = design.analyses();
            report.extras.push((
                "conditioning".to_string(),
                format!("rejection(accept_fraction={})", mc.cond_accept_fraction),
            ));
            report.warnings.extend(mc.warnings.iter().cloned());
            Ok(report.with_context(&family.name, &family.theta0))
        }
    }
}

/// Arc shim: the registry hands out `Arc<dyn ExponentialFamily>`, the model
/// adapter wants one too; this keeps one clone alive for both.
struct EfShim(Arc<dyn gsb_core::model::ExponentialFamily>);

impl gsb_core::model::ExponentialFamily for EfShim {
    fn dim(&self) -> usize {
        self.0.dim()
    }
    fn obs_dim(&self) -> usize {
        self.0.obs_dim()
    }
    fn suff_stat(&self, y: &[f64], out: &mut [f64]) {
        self.0.suff_stat(y, out)
    }
    fn carrier(&self, y: &[f64]) -> f64 {
        self.0.carrier(y)
    }
    fn cumulant(&self, eta: &[f64]) -> f64 {
        self.0.cumulant(eta)
    }
    fn in_support(&self, y: &[f64]) -> bool {
        self.0.in_support(y)
    }
    fn admissible(&self, eta: &[f64]) -> bool {
        self.0.admissible(eta)
    }
    fn sample_into(&self, eta: &[f64], rng: &mut dyn rand::RngCore, out: &mut [f64]) {
        self.0.sample_into(eta, rng, out)
    }
    fn raw_moment(&self, eta: &[f64], idx: &[usize]) -> Option<f64> {
        self.0.raw_moment(eta, idx)
    }
    fn suff_mean_in_range(&self, m: &[f64]) -> bool {
        self.0.suff_mean_in_range(m)
    }
    fn init_from_suff_mean(&self, m: &[f64]) -> Vec<f64> {
        self.0.init_from_suff_mean(m)
    }
    fn abs_suff_diff_cubed(&self, eta: &[f64]) -> Option<f64> {
        self.0.abs_suff_diff_cubed(eta)
    }
    fn name(&self) -> &str {
        self.0.name()
    }
}

// ---------------------------------------------------------------------------
// Modes
// ---------------------------------------------------------------------------

fn mode_bound(ctx: &Ctx) -> Result<()> {
    let design = require(&ctx.file.design, "design", ctx.mode)?.build()?;
    let norms = resolve_norms(ctx, &design)?;
    let mc_cfg = ctx.mc_config();
    let report = compute_bound(ctx, &design, &norms, &mc_cfg)?;
    let body = report.render();
    let path = ctx.write_artifact("bound_report.txt", &body)?;
    print!("{body}");
    println!("report: {}", path.display());
    Ok(())
}

fn mode_simulate(ctx: &Ctx) -> Result<()> {
    let design = require(&ctx.file.design, "design", ctx.mode)?.build()?;
    let family = require(&ctx.file.family, "family", ctx.mode)?;
    let tf_cfg = require(&ctx.file.test_function, "test_function", ctx.mode)?;
    let h = tf_cfg.build(design.q())?;
    let mc_cfg = ctx.mc_config();

    let report = compute_bound(ctx, &design, &h.norms, &mc_cfg)?;

    let registry = FamilyRegistry::with_builtins();
    let fam = registry.get(&family.name)?;
    let model = EfModel::new(Arc::new(EfShim(fam)));

    let want_csv = ctx.file.output.as_ref().and_then(|o| o.replicate_csv).unwrap_or(false);
    let mut csv_buf: Vec<u8> = Vec::new();
    let dist = {
        let sink: Option<&mut dyn std::io::Write> =
            if want_csv { Some(&mut csv_buf) } else { None };
        empirical_smooth_distances(
            &model,
            &design,
            &family.theta0,
            std::slice::from_ref(&h),
            &mc_cfg,
            sink,
        )?
    };
    let d = &dist.distances[0];
    let conservative =
        ctx.file.bound.as_ref().and_then(|b: &BoundCfg| b.conservative).unwrap_or(false);
    let total = if conservative { report.total_conservative } else { report.total };
    let lhs = d.estimate + 3.0 * d.std_error;
    let dominated = lhs <= total;

    let mut body = report.render();
    body.push_str(&format!("test_function: {}\n", d.name));
    body.push_str(&format!("empirical_h_mean: {}\n", d.h_mean));
    body.push_str(&format!("normal_expectation: {}\n", d.normal_expectation));
    body.push_str(&format!("empirical_distance: {}\n", d.estimate));
    body.push_str(&format!("empirical_se: {}\n", d.std_error));
    body.push_str(&format!("replicates_used: {}\n", dist.used));
    body.push_str(&format!("replicates_discarded: {}\n", dist.discarded));
    body.push_str(&format!("comparison_total: {total}\n"));
    body.push_str(&format!("dominated: {}\n", if dominated { "yes" } else { "no" }));
    let path = ctx.write_artifact("simulate_report.txt", &body)?;
    if want_csv {
        let csv_path = ctx.write_artifact("replicates.csv", std::str::from_utf8(&csv_buf).unwrap_or(""))?;
        println!("replicate csv: {}", csv_path.display());
    }
    print!("{body}");
    println!("report: {}", path.display());
    if !dominated {
        return Err(Error::Numerical(format!(
            "empirical distance + 3 se = {lhs} exceeds the bound {total}"
        )));
    }
    Ok(())
}

fn mode_sweep(ctx: &Ctx) -> Result<()> {
    let design_cfg = require(&ctx.file.design, "design", ctx.mode)?;
    let family = require(&ctx.file.family, "family", ctx.mode)?;
    let sweep = require(&ctx.file.sweep, "sweep", ctx.mode)?;
    let tf_cfg = require(&ctx.file.test_function, "test_function", ctx.mode)?;
    if sweep.ns.len() < 3 {
        return Err(Error::validation("sweep.ns needs at least three sizes for the slope fit"));
    }
    let mc_cfg = ctx.mc_config();
    let registry = FamilyRegistry::with_builtins();
    let fam = registry.get(&family.name)?;
    let model = EfModel::new(Arc::new(EfShim(fam)));

    let mut csv = String::from(
        "n,k1,k2,k3,c,eq2,term1,term2,term3,term4,total,empirical,empirical_se\n",
    );
    let mut totals = Vec::new();
    let mut empiricals = Vec::new();
    for &n in &sweep.ns {
        let design = design_cfg.scaled_to(n)?;
        let h = tf_cfg.build(design.q())?;
        let report = compute_bound(ctx, &design, &h.norms, &mc_cfg)?;
        // One seed across sizes: replicate streams share observation
        // prefixes, so the empirical distances are directly comparable.
        let dist = empirical_smooth_distances(
            &model,
            &design,
            &family.theta0,
            std::slice::from_ref(&h),
            &mc_cfg,
            None,
        )?;
        let d = &dist.distances[0];
        csv.push_str(&format!(
            "{n},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            report.kterms.k1.value,
            report.kterms.k2.value,
            report.kterms.k3.value,
            report.kterms.c.value,
            report.kterms.eq2.value,
            report.terms[0],
            report.terms[1],
            report.terms[2],
            report.terms[3],
            report.total,
            d.estimate,
            d.std_error
        ));
        totals.push(report.total);
        empiricals.push(d.estimate);
    }
    let slope = slope_fit(&sweep.ns, &totals)?;
    let emp_slope = slope_fit(&sweep.ns, &empiricals);

    let csv_path = ctx.write_artifact("sweep.csv", &csv)?;
    let mut summary = String::new();
    summary.push_str(&format!("ns: {:?}\n", sweep.ns));
    summary.push_str(&format!("totals: {totals:?}\n"));
    summary.push_str(&format!("bound_loglog_slope: {slope}\n"));
    match emp_slope {
        Ok(s) => summary.push_str(&format!("empirical_loglog_slope: {s}\n")),
        Err(_) => summary.push_str("empirical_loglog_slope: -\n"),
    }
    let sum_path = ctx.write_artifact("sweep_summary.txt", &summary)?;
    print!("{summary}");
    println!("csv: {}", csv_path.display());
    println!("summary: {}", sum_path.display());
    Ok(())
}

fn mode_kolmogorov(ctx: &Ctx) -> Result<()> {
    let kol = require(&ctx.file.kolmogorov, "kolmogorov", ctx.mode)?;
    let m = kol.m.unwrap_or(3);
    let smoother = hermite_smoother(m)?;
    let c2 = smoother.norm_f64();
    let c1 = kol
        .c1
        .unwrap_or_else(|| (2.0 * std::f64::consts::PI).powf(-(kol.p as f64) / 2.0));
    let params = KolParams::new(kol.p, m, c1, c2)?;

    let (d_smooth, source) = match kol.d_smooth {
        Some(d) => (d, "config".to_string()),
        None => {
            let design = require(&ctx.file.design, "design", ctx.mode)?.build()?;
            let norms = resolve_norms(ctx, &design)?;
            let mc_cfg = ctx.mc_config();
            let report = compute_bound(ctx, &design, &norms, &mc_cfg)?;
            (report.total, format!("bound({})", report.variant.label()))
        }
    };
    let raw = kolmogorov_from_smooth_raw(d_smooth, &params);
    let clipped = kolmogorov_from_smooth(d_smooth, &params);

    let mut body = String::new();
    body.push_str(&format!("p: {}\n", kol.p));
    body.push_str(&format!("m: {m}\n"));
    body.push_str(&format!("c1: {c1}\n"));
    body.push_str(&format!("c2: {c2}\n"));
    body.push_str(&format!(
        "c2_exact: {}\n",
        if smoother.norm_exact { "yes" } else { "upper-bound" }
    ));
    body.push_str(&format!("d_smooth: {d_smooth}\n"));
    body.push_str(&format!("d_smooth_source: {source}\n"));
    body.push_str(&format!("kolmogorov_bound_raw: {raw}\n"));
    body.push_str(&format!("kolmogorov_bound: {clipped}\n"));
    let path = ctx.write_artifact("kolmogorov_report.txt", &body)?;
    print!("{body}");
    println!("report: {}", path.display());
    Ok(())
}
