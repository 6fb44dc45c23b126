//! Relevance pooling over feature groups and data groups.
//!
//! Summation order contract: every pooled cell accumulates its entries by
//! ascending (sample, feature) index, and aggregate totals accumulate cells
//! in row-major (data group, feature group) order. Under that fixed order
//! the pooled total reproduces the direct sum over the matrix bit-exactly.

use crate::attribution::Explanation;
use crate::error::{Error, Result};

/// N x d matrix of per-sample relevances, row-major.
#[derive(Debug, Clone)]
pub struct RelevanceMatrix {
    values: Vec<f64>,
    n: usize,
    d: usize,
    pub sample_ids: Vec<String>,
    pub feature_names: Vec<String>,
}

impl RelevanceMatrix {
    pub fn new(n: usize, d: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n * d {
            return Err(Error::Config(format!(
                "relevance matrix {n}x{d} expects {} values, got {}",
                n * d,
                values.len()
            )));
        }
        Ok(RelevanceMatrix {
            values,
            n,
            d,
            sample_ids: (0..n).map(|i| i.to_string()).collect(),
            feature_names: (0..d).map(|i| i.to_string()).collect(),
        })
    }

    /// Stack explanations row-wise; every row sum must reproduce the
    /// explanation's recorded relevance total.
    pub fn from_explanations(expls: &[Explanation]) -> Result<Self> {
        let first = expls
            .first()
            .ok_or_else(|| Error::Config("no explanations".into()))?;
        let d = first.relevance.len();
        let mut values = Vec::with_capacity(expls.len() * d);
        for (i, e) in expls.iter().enumerate() {
            if e.relevance.len() != d {
                return Err(Error::Config(format!(
                    "explanation {i} has {} features, expected {d}",
                    e.relevance.len()
                )));
            }
            let row_sum: f64 = e.relevance.data().iter().sum();
            if row_sum.to_bits() != e.sum_relevance.to_bits() {
                return Err(Error::Config(format!(
                    "explanation {i}: recorded sum {} does not match row sum {row_sum}",
                    e.sum_relevance
                )));
            }
            values.extend_from_slice(e.relevance.data());
        }
        RelevanceMatrix::new(expls.len(), d, values)
    }

    pub fn rows(&self) -> usize {
        self.n
    }

    pub fn cols(&self) -> usize {
        self.d
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.d..(i + 1) * self.d]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Disjoint, covering groupings of features and of samples.
#[derive(Debug, Clone)]
pub struct GroupSpec {
    pub feature_groups: Vec<Vec<usize>>,
    pub data_groups: Vec<Vec<usize>>,
}

fn check_partition(groups: &[Vec<usize>], extent: usize, what: &str) -> Result<()> {
    let mut seen = vec![false; extent];
    for (gi, group) in groups.iter().enumerate() {
        if group.is_empty() {
            return Err(Error::Config(format!("{what} group {gi} is empty")));
        }
        for &idx in group {
            if idx >= extent {
                return Err(Error::Config(format!(
                    "{what} group {gi}: index {idx} out of range {extent}"
                )));
            }
            if seen[idx] {
                return Err(Error::Config(format!(
                    "{what} groups overlap at index {idx}"
                )));
            }
            seen[idx] = true;
        }
    }
    if let Some(missing) = seen.iter().position(|&s| !s) {
        return Err(Error::Config(format!(
            "{what} groups do not cover index {missing}"
        )));
    }
    Ok(())
}

impl GroupSpec {
    pub fn validate(&self, matrix: &RelevanceMatrix) -> Result<()> {
        check_partition(&self.feature_groups, matrix.cols(), "feature")?;
        check_partition(&self.data_groups, matrix.rows(), "data")?;
        Ok(())
    }

    /// Sort every group's indices ascending (the documented accumulation
    /// order); group order itself is preserved.
    pub fn sorted(mut self) -> Self {
        for g in &mut self.feature_groups {
            g.sort_unstable();
        }
        for g in &mut self.data_groups {
            g.sort_unstable();
        }
        self
    }
}

/// Pooled matrix, `[data groups x feature groups]` row-major:
/// `cell(g, i) = sum_{n in G_g} sum_{j in I_i} R[n, j]`.
pub fn pool(matrix: &RelevanceMatrix, spec: &GroupSpec) -> Result<Vec<f64>> {
    let spec = spec.clone().sorted();
    spec.validate(matrix)?;
    let mut pooled = Vec::with_capacity(spec.data_groups.len() * spec.feature_groups.len());
    for g in &spec.data_groups {
        for i in &spec.feature_groups {
            let mut acc = 0.0;
            for &n in g {
                let row = matrix.row(n);
                for &j in i {
                    acc += row[j];
                }
            }
            pooled.push(acc);
        }
    }
    Ok(pooled)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn degenerate_partition_is_grand_total() {
        let m = RelevanceMatrix::new(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let spec = GroupSpec {
            feature_groups: vec![vec![0, 1, 2]],
            data_groups: vec![vec![0, 1]],
        };
        let pooled = pool(&m, &spec).unwrap();
        assert_eq!(pooled, vec![21.0]);
    }

    #[test]
    fn singleton_groups_reproduce_the_matrix() {
        let values = vec![0.5, -1.0, 2.0, 0.25, 1.5, -0.75];
        let m = RelevanceMatrix::new(2, 3, values.clone()).unwrap();
        let spec = GroupSpec {
            feature_groups: (0..3).map(|i| vec![i]).collect(),
            data_groups: (0..2).map(|i| vec![i]).collect(),
        };
        let pooled = pool(&m, &spec).unwrap();
        for (p, v) in pooled.iter().zip(&values) {
            assert_eq!(p.to_bits(), v.to_bits());
        }
    }

    #[test]
    fn conservation_defect_is_bit_exact_zero() {
        // Direct summation oracle: recompute the pooled total from the raw
        // matrix and the spec, following the documented order, without
        // calling pool().
        let mut r = rng::seeded(31);
        let m = RelevanceMatrix::new(100, 8, rng::normal_vec(&mut r, 800)).unwrap();
        let spec = GroupSpec {
            feature_groups: vec![vec![6, 0, 2], vec![1, 5], vec![3, 4, 7]],
            data_groups: vec![
                (0..35).collect(),
                (35..40).chain(90..100).collect(),
                (40..90).collect(),
            ],
        }
        .sorted();
        let pooled = pool(&m, &spec).unwrap();
        let pooled_total: f64 = pooled.iter().sum();

        let mut oracle_total = 0.0;
        for g in &spec.data_groups {
            for i in &spec.feature_groups {
                let mut cell = 0.0;
                for &n in g {
                    for &j in i {
                        cell += m.row(n)[j];
                    }
                }
                oracle_total += cell;
            }
        }
        assert_eq!(pooled_total.to_bits(), oracle_total.to_bits());
    }

    #[test]
    fn non_partition_specs_are_rejected() {
        let m = RelevanceMatrix::new(2, 3, vec![0.0; 6]).unwrap();
        let overlapping = GroupSpec {
            feature_groups: vec![vec![0, 1], vec![1, 2]],
            data_groups: vec![vec![0, 1]],
        };
        assert!(pool(&m, &overlapping).is_err());
        let incomplete = GroupSpec {
            feature_groups: vec![vec![0, 1]],
            data_groups: vec![vec![0, 1]],
        };
        assert!(pool(&m, &incomplete).is_err());
    }
}
