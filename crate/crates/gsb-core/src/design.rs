//! Group sequential designs and datasets.
//!
//! A design fixes the number of parameters `d`, the number of analyses `K`
//! and the cumulative sample sizes `n_1 < ... < n_K`. Group `k` holds the
//! observations with (1-based) indices `n_{k-1}+1 ..= n_k`; internally all
//! indexing is 0-based.

use std::io::{BufRead, Write};
use std::ops::Range;

use crate::error::{Error, Result};

/// Analysis schedule for a group sequential experiment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupDesign {
    dim: usize,
    cumulative: Vec<usize>,
}

impl GroupDesign {
    /// Validate and build a design from the parameter dimension and the
    /// strictly increasing cumulative sample sizes.
    pub fn new(dim: usize, cumulative_sizes: &[usize]) -> Result<Self> {
        if dim == 0 {
            return Err(Error::validation("parameter dimension d must be >= 1"));
        }
        if cumulative_sizes.is_empty() {
            return Err(Error::validation("at least one analysis is required"));
        }
        if cumulative_sizes[0] == 0 {
            return Err(Error::validation("cumulative sizes must be positive"));
        }
        for w in cumulative_sizes.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::Validation(format!(
                    "cumulative sizes must be strictly increasing: {} followed by {}",
                    w[0], w[1]
                )));
            }
        }
        Ok(GroupDesign { dim, cumulative: cumulative_sizes.to_vec() })
    }

    /// Design with `analyses` equal groups of size `n / analyses` each.
    pub fn equal_groups(dim: usize, analyses: usize, n: usize) -> Result<Self> {
        if analyses == 0 || !n.is_multiple_of(analyses) {
            return Err(Error::Validation(format!(
                "total size {n} is not divisible into {analyses} equal groups"
            )));
        }
        let step = n / analyses;
        let sizes: Vec<usize> = (1..=analyses).map(|k| k * step).collect();
        GroupDesign::new(dim, &sizes)
    }

    /// Parameter dimension d.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of analyses K.
    pub fn analyses(&self) -> usize {
        self.cumulative.len()
    }

    /// Total sample size n = n_K.
    pub fn n(&self) -> usize {
        *self.cumulative.last().unwrap()
    }

    /// Cumulative size n_k at 0-based analysis index `k`.
    pub fn n_at(&self, k: usize) -> usize {
        self.cumulative[k]
    }

    /// Cumulative sizes n_1..n_K.
    pub fn cumulative_sizes(&self) -> &[usize] {
        &self.cumulative
    }

    /// Stacked dimension q = d * K.
    pub fn q(&self) -> usize {
        self.dim * self.analyses()
    }

    /// 0-based observation index range of group k.
    pub fn group_range(&self, k: usize) -> Range<usize> {
        let lo = if k == 0 { 0 } else { self.cumulative[k - 1] };
        lo..self.cumulative[k]
    }

    /// |G_k|, the number of observations in group k.
    pub fn group_size(&self, k: usize) -> usize {
        self.group_range(k).len()
    }

    /// |G_k| / n, the finite-sample group fraction.
    pub fn group_fraction(&self, k: usize) -> f64 {
        self.group_size(k) as f64 / self.n() as f64
    }

    /// 0-based analysis index that group containing observation `i` belongs to.
    pub fn analysis_of(&self, i: usize) -> usize {
        debug_assert!(i < self.n());
        self.cumulative.partition_point(|&nk| nk <= i)
    }
}

/// Observations paired with the design that schedules them.
#[derive(Debug, Clone)]
pub struct SequentialDataset {
    pub design: GroupDesign,
    /// One row per observation, each of length t.
    pub observations: Vec<Vec<f64>>,
    /// Generating parameter, when the data came from a simulator.
    pub theta0: Option<Vec<f64>>,
    /// Seed provenance, when the data came from a simulator.
    pub seed: Option<u64>,
}

impl SequentialDataset {
    pub fn new(design: GroupDesign, observations: Vec<Vec<f64>>) -> Result<Self> {
        if observations.len() != design.n() {
            return Err(Error::Validation(format!(
                "dataset has {} observations but the design requires n = {}",
                observations.len(),
                design.n()
            )));
        }
        Ok(SequentialDataset { design, observations, theta0: None, seed: None })
    }

    /// Load observations from a plain-text table: a header line holding the
    /// observation dimension t, then one whitespace-separated row per
    /// observation.
    pub fn read_table<R: BufRead>(design: GroupDesign, reader: R) -> Result<Self> {
        let mut lines = reader.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::validation("empty dataset table"))??;
        let t: usize = header
            .trim()
            .parse()
            .map_err(|_| Error::Validation(format!("bad header line {header:?}: expected the observation dimension t")))?;
        let mut observations = Vec::new();
        for (lineno, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let row: std::result::Result<Vec<f64>, _> =
                line.split_whitespace().map(str::parse::<f64>).collect();
            let row = row.map_err(|e| {
                Error::Validation(format!("dataset row {}: {e}", lineno + 2))
            })?;
            if row.len() != t {
                return Err(Error::Validation(format!(
                    "dataset row {} has {} columns, expected {}",
                    lineno + 2,
                    row.len(),
                    t
                )));
            }
            observations.push(row);
        }
        SequentialDataset::new(design, observations)
    }

    /// Write the observations in the `read_table` format.
    pub fn write_table<W: Write>(&self, mut w: W) -> Result<()> {
        let t = self.observations.first().map_or(1, Vec::len);
        writeln!(w, "{t}")?;
        for row in &self.observations {
            let line: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
            writeln!(w, "{}", line.join(" "))?;
        }
        Ok(())
    }

    /// Observations available at analysis k (0-based), i.e. the first n_k rows.
    pub fn prefix(&self, k: usize) -> &[Vec<f64>] {
        &self.observations[..self.design.n_at(k)]
    }
}

/// Vector in R^q viewed as K stacked blocks of length d.
#[derive(Debug, Clone, PartialEq)]
pub struct StackedVector {
    entries: Vec<f64>,
    dim: usize,
}

impl StackedVector {
    pub fn new(entries: Vec<f64>, dim: usize) -> Result<Self> {
        if dim == 0 || !entries.len().is_multiple_of(dim) {
            return Err(Error::Validation(format!(
                "stacked vector of length {} cannot be split into blocks of size {dim}",
                entries.len()
            )));
        }
        Ok(StackedVector { entries, dim })
    }

    pub fn from_blocks(blocks: &[Vec<f64>]) -> Result<Self> {
        let dim = blocks.first().map_or(0, Vec::len);
        if dim == 0 {
            return Err(Error::validation("stacked vector needs at least one nonempty block"));
        }
        let mut entries = Vec::with_capacity(dim * blocks.len());
        for b in blocks {
            if b.len() != dim {
                return Err(Error::validation("all blocks must share the same length"));
            }
            entries.extend_from_slice(b);
        }
        Ok(StackedVector { entries, dim })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn blocks(&self) -> usize {
        self.entries.len() / self.dim
    }

    /// Block k as a slice (indices d*k .. d*(k+1)).
    pub fn block(&self, k: usize) -> &[f64] {
        &self.entries[self.dim * k..self.dim * (k + 1)]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    /// max_i |x_i|, the statistic written Q_(m) in the bound formulas
    /// (max of absolute values; see the module notes on the sign convention).
    pub fn max_abs(&self) -> f64 {
        max_abs(&self.entries)
    }
}

/// max_i |x_i| over a plain slice.
pub fn max_abs(entries: &[f64]) -> f64 {
    entries.iter().fold(0.0_f64, |acc, &x| acc.max(x.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn design_two_analyses() {
        let d = GroupDesign::new(1, &[2, 4]).unwrap();
        assert_eq!(d.analyses(), 2);
        assert_eq!(d.group_range(0), 0..2);
        assert_eq!(d.group_range(1), 2..4);
        assert_eq!(d.q(), 2);
        assert_eq!(d.n(), 4);
    }

    #[test]
    fn design_single_analysis_d2() {
        let d = GroupDesign::new(2, &[10]).unwrap();
        assert_eq!(d.analyses(), 1);
        assert_eq!(d.q(), 2);
        assert_eq!(d.group_size(0), 10);
    }

    #[test]
    fn design_rejects_nonincreasing_sizes() {
        assert!(GroupDesign::new(1, &[4, 2]).is_err());
        assert!(GroupDesign::new(1, &[4, 4]).is_err());
        assert!(GroupDesign::new(1, &[]).is_err());
        assert!(GroupDesign::new(0, &[4]).is_err());
    }

    #[test]
    fn groups_partition_observations() {
        let d = GroupDesign::new(2, &[3, 7, 12]).unwrap();
        let total: usize = (0..d.analyses()).map(|k| d.group_size(k)).sum();
        assert_eq!(total, d.n());
        for i in 0..d.n() {
            let k = d.analysis_of(i);
            assert!(d.group_range(k).contains(&i), "obs {i} not in its group {k}");
        }
    }

    #[test]
    fn equal_groups_fraction_is_exact_in_integers() {
        // |G_k| * K == n holds exactly; the floating fraction is only a view.
        for k in 1..=6 {
            let d = GroupDesign::equal_groups(1, k, 60).unwrap();
            for g in 0..k {
                assert_eq!(d.group_size(g) * k, d.n());
            }
        }
    }

    #[test]
    fn max_abs_basics() {
        let z = StackedVector::new(vec![0.0, 0.0], 1).unwrap();
        assert_eq!(z.max_abs(), 0.0);
        let x = StackedVector::new(vec![0.1, -0.4], 1).unwrap();
        assert_eq!(x.max_abs(), 0.4);
    }

    #[test]
    fn dataset_table_round_trip() {
        let design = GroupDesign::new(1, &[2, 3]).unwrap();
        let data = SequentialDataset::new(
            design.clone(),
            vec![vec![1.0, 2.0], vec![0.5, -1.0], vec![3.0, 0.25]],
        )
        .unwrap();
        let mut buf = Vec::new();
        data.write_table(&mut buf).unwrap();
        let reread = SequentialDataset::read_table(design, buf.as_slice()).unwrap();
        assert_eq!(reread.observations, data.observations);
    }

    #[test]
    fn dataset_count_must_match_design() {
        let design = GroupDesign::new(1, &[2]).unwrap();
        assert!(SequentialDataset::new(design, vec![vec![1.0]]).is_err());
    }

    proptest! {
        #[test]
        fn stacked_round_trip(blocks in proptest::collection::vec(
            proptest::collection::vec(-1e6_f64..1e6, 3), 1..5)) {
            let v = StackedVector::from_blocks(&blocks).unwrap();
            for (k, b) in blocks.iter().enumerate() {
                prop_assert_eq!(v.block(k), b.as_slice());
            }
        }

        #[test]
        fn max_abs_is_permutation_invariant(mut xs in proptest::collection::vec(-1e9_f64..1e9, 1..32)) {
            let a = max_abs(&xs);
            xs.reverse();
            let b = max_abs(&xs);
            prop_assert_eq!(a, b);
        }
    }
}
