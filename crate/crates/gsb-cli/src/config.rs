//! Config file schema and validation.
//!
//! One TOML document drives every mode; section requirements depend on the
//! mode and are checked after parsing so messages can say which field is
//! missing for which mode.

use serde::Deserialize;

use gsb_core::bounds::{BoundVariant, HNorms};
use gsb_core::design::GroupDesign;
use gsb_core::montecarlo::{McConfig, TestFunction};
use gsb_core::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Bound,
    Simulate,
    Sweep,
    Verify,
    Kolmogorov,
}

impl Mode {
    pub fn label(&self) -> &'static str {
        match self {
            Mode::Bound => "bound",
            Mode::Simulate => "simulate",
            Mode::Sweep => "sweep",
            Mode::Verify => "verify",
            Mode::Kolmogorov => "kolmogorov",
        }
    }
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VariantCfg {
    Thm31,
    Thm33,
    Cor41,
    Cor42,
}

impl From<VariantCfg> for BoundVariant {
    fn from(v: VariantCfg) -> Self {
        match v {
            VariantCfg::Thm31 => BoundVariant::Thm31,
            VariantCfg::Thm33 => BoundVariant::Thm33,
            VariantCfg::Cor41 => BoundVariant::Cor41,
            VariantCfg::Cor42 => BoundVariant::Cor42,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum EpsilonCfg {
    Keyword(String),
    Value(f64),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub mode: Option<Mode>,
    pub family: Option<FamilyCfg>,
    pub design: Option<DesignCfg>,
    pub bound: Option<BoundCfg>,
    pub norms: Option<NormsCfg>,
    pub test_function: Option<TestFnCfg>,
    pub mc: Option<McCfg>,
    pub sweep: Option<SweepCfg>,
    pub kolmogorov: Option<KolCfg>,
    pub output: Option<OutputCfg>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilyCfg {
    pub name: String,
    pub theta0: Vec<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignCfg {
    pub d: usize,
    pub sizes: Vec<usize>,
}

impl DesignCfg {
    pub fn build(&self) -> Result<GroupDesign> {
        GroupDesign::new(self.d, &self.sizes)
    }

    /// The design rescaled to total size `n`, preserving the cumulative
    /// fractions of the configured shape.
    pub fn scaled_to(&self, n: usize) -> Result<GroupDesign> {
        let total = *self.sizes.last().ok_or_else(|| Error::validation("design.sizes is empty"))?;
        let mut sizes: Vec<usize> = self
            .sizes
            .iter()
            .map(|&nk| ((nk as f64 / total as f64) * n as f64).round() as usize)
            .collect();
        let last = sizes.len() - 1;
        sizes[last] = n;
        for i in 1..sizes.len() {
            if sizes[i] <= sizes[i - 1] {
                sizes[i] = sizes[i - 1] + 1;
            }
        }
        GroupDesign::new(self.d, &sizes)
    }
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct BoundCfg {
    pub variant: Option<VariantCfg>,
    pub epsilon: Option<EpsilonCfg>,
    pub epsilon_range: Option<[f64; 2]>,
    pub conservative: Option<bool>,
}

/// Either a fixed epsilon or a request to minimize over a range.
#[derive(Debug, Clone, Copy)]
pub enum EpsilonChoice {
    Fixed(f64),
    Auto { lo: f64, hi: f64 },
}

impl BoundCfg {
    pub fn epsilon_choice(&self) -> Result<EpsilonChoice> {
        match &self.epsilon {
            None => Err(Error::validation(
                "bound.epsilon is required (a number, or \"auto\" with bound.epsilon_range)",
            )),
            Some(EpsilonCfg::Value(v)) => Ok(EpsilonChoice::Fixed(*v)),
            Some(EpsilonCfg::Keyword(k)) if k == "auto" => {
                let [lo, hi] = self.epsilon_range.ok_or_else(|| {
                    Error::validation("bound.epsilon = \"auto\" needs bound.epsilon_range = [lo, hi]")
                })?;
                Ok(EpsilonChoice::Auto { lo, hi })
            }
            Some(EpsilonCfg::Keyword(k)) => Err(Error::Validation(format!(
                "bound.epsilon must be a number or \"auto\", got {k:?}"
            ))),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormsCfg {
    pub sup: f64,
    pub d1: f64,
    pub d2: Option<f64>,
    pub d3: Option<f64>,
    pub centered_sup: Option<f64>,
}

impl NormsCfg {
    pub fn build(&self) -> HNorms {
        HNorms {
            sup: self.sup,
            d1: self.d1,
            d2: self.d2,
            d3: self.d3,
            centered_sup: self.centered_sup,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestFnCfg {
    pub kind: String,
    pub coeffs: Option<Vec<f64>>,
    pub phase: Option<f64>,
    pub value: Option<f64>,
}

impl TestFnCfg {
    pub fn build(&self, q: usize) -> Result<TestFunction> {
        let coeffs = || -> Result<Vec<f64>> {
            let c = self
                .coeffs
                .clone()
                .ok_or_else(|| Error::validation("test_function.coeffs is required for cosine forms"))?;
            if c.len() != q {
                return Err(Error::Validation(format!(
                    "test_function.coeffs has length {}, the stacked dimension is q = {q}",
                    c.len()
                )));
            }
            Ok(c)
        };
        match self.kind.as_str() {
            "cosine" => Ok(TestFunction::cosine_with_phase(coeffs()?, self.phase.unwrap_or(0.0))),
            "cosine_product" => Ok(TestFunction::cosine_product(coeffs()?)),
            "constant" => Ok(TestFunction::constant(self.value.unwrap_or(1.0))),
            other => Err(Error::Validation(format!(
                "unknown test_function.kind {other:?}; expected cosine, cosine_product or constant"
            ))),
        }
    }
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct McCfg {
    pub replications: Option<u64>,
    pub seed: Option<u64>,
    pub discard_threshold: Option<f64>,
    pub info_draws: Option<u64>,
}

impl McCfg {
    pub fn build(&self, workers: Option<usize>) -> McConfig {
        let defaults = McConfig::default();
        McConfig {
            replications: self.replications.unwrap_or(defaults.replications),
            seed: self.seed.unwrap_or(defaults.seed),
            workers,
            discard_threshold: self.discard_threshold.unwrap_or(defaults.discard_threshold),
            info_draws: self.info_draws.unwrap_or(defaults.info_draws),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepCfg {
    pub ns: Vec<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KolCfg {
    pub p: u32,
    pub m: Option<u32>,
    pub c1: Option<f64>,
    pub d_smooth: Option<f64>,
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct OutputCfg {
    pub dir: Option<String>,
    pub replicate_csv: Option<bool>,
}

pub fn require<'a, T>(section: &'a Option<T>, name: &str, mode: Mode) -> Result<&'a T> {
    section.as_ref().ok_or_else(|| {
        Error::Validation(format!("config section [{name}] is required for mode {}", mode.label()))
    })
}
