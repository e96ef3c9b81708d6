//! Chi-square feature ranking against the binary label.
//!
//! Continuous features are first cut into equal-frequency bins, then each
//! feature's bin-by-class contingency table is scored with the Pearson
//! chi-square statistic. Cells whose expected count is zero do not contribute.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::flow::{Dataset, FeatureSchema, Label};

pub const DEFAULT_BINS: usize = 10;

/// Observed counts, rows = feature bins, columns = classes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContingencyTable {
    observed: Vec<Vec<u64>>,
    row_totals: Vec<u64>,
    col_totals: Vec<u64>,
    total: u64,
}

impl ContingencyTable {
    pub fn new(observed: Vec<Vec<u64>>) -> Result<Self> {
        let cols = observed.first().map(Vec::len).unwrap_or(0);
        if observed.is_empty() || cols == 0 {
            return Err(Error::Empty("contingency table"));
        }
        if observed.iter().any(|r| r.len() != cols) {
            return Err(Error::param("contingency table rows differ in length"));
        }
        let row_totals: Vec<u64> = observed.iter().map(|r| r.iter().sum()).collect();
        let col_totals: Vec<u64> = (0..cols)
            .map(|j| observed.iter().map(|r| r[j]).sum())
            .collect();
        let total = row_totals.iter().sum();
        Ok(ContingencyTable {
            observed,
            row_totals,
            col_totals,
            total,
        })
    }

    pub fn observed(&self) -> &[Vec<u64>] {
        &self.observed
    }

    pub fn row_totals(&self) -> &[u64] {
        &self.row_totals
    }

    pub fn col_totals(&self) -> &[u64] {
        &self.col_totals
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn expected(&self, i: usize, j: usize) -> f64 {
        self.row_totals[i] as f64 * self.col_totals[j] as f64 / self.total as f64
    }
}

/// Pearson chi-square of independence, Σ (O − E)² / E over cells with E > 0.
pub fn chi_square(table: &ContingencyTable) -> Result<f64> {
    if table.total == 0 {
        return Err(Error::param("contingency table is all zeros"));
    }
    let mut chi2 = 0.0;
    for (i, row) in table.observed.iter().enumerate() {
        for (j, &o) in row.iter().enumerate() {
            let e = table.expected(i, j);
            if e > 0.0 {
                let d = o as f64 - e;
                chi2 += d * d / e;
            }
        }
    }
    Ok(chi2)
}

/// Equal-frequency bin assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct Binning {
    /// Bin index per input value.
    pub assignments: Vec<usize>,
    /// Interior cut points, ascending; bin `b` holds `edges[b-1] <= v < edges[b]`.
    pub edges: Vec<f64>,
}

impl Binning {
    pub fn bin_count(&self) -> usize {
        self.edges.len() + 1
    }
}

/// Equal-frequency discretisation.
///
/// Each of the `bins - 1` ideal cut ranks `k·N/bins` snaps to the nearest
/// position in sorted order where the value changes, so equal values never
/// straddle a cut. Runs of duplicates can therefore merge bins.
pub fn discretize(values: &[f64], bins: usize) -> Result<Binning> {
    if values.is_empty() {
        return Err(Error::Empty("values to discretize"));
    }
    if bins < 2 {
        return Err(Error::param(format!("bins must be at least 2, got {bins}")));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::param("cannot discretize non-finite values"));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    // positions p in 1..n with sorted[p-1] < sorted[p]
    let boundaries: Vec<usize> = (1..n).filter(|&p| sorted[p - 1] < sorted[p]).collect();

    let mut edges: Vec<f64> = Vec::new();
    if !boundaries.is_empty() {
        for k in 1..bins {
            let target = k as f64 * n as f64 / bins as f64;
            let at = boundaries.partition_point(|&p| (p as f64) < target);
            let candidates = [at.checked_sub(1), Some(at).filter(|&a| a < boundaries.len())];
            let nearest = candidates
                .into_iter()
                .flatten()
                .map(|i| boundaries[i])
                .min_by(|&a, &b| {
                    (a as f64 - target)
                        .abs()
                        .total_cmp(&(b as f64 - target).abs())
                        .then(a.cmp(&b))
                })
                .expect("boundaries is non-empty");
            let cut = sorted[nearest];
            if edges.last() != Some(&cut) {
                edges.push(cut);
            }
        }
    }
    let assignments = values
        .iter()
        .map(|v| edges.partition_point(|e| e <= v))
        .collect();
    Ok(Binning { assignments, edges })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureScore {
    pub name: String,
    pub chi2: f64,
    /// `chi2` divided by the largest score in the set (0 when all are 0).
    pub weight: f64,
    /// 1-based, by descending chi2, ties by name.
    pub rank: usize,
}

/// Bin-by-label contingency table for one feature column.
pub fn feature_table(values: &[f64], labels: &[Label], bins: usize) -> Result<ContingencyTable> {
    if values.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            left: values.len(),
            right: labels.len(),
        });
    }
    let binning = discretize(values, bins)?;
    let mut observed = vec![vec![0u64; 2]; binning.bin_count()];
    for (&b, l) in binning.assignments.iter().zip(labels) {
        observed[b][l.as_u8() as usize] += 1;
    }
    ContingencyTable::new(observed)
}

/// Scores every numeric feature of a labeled, complete dataset.
pub fn score_features(dataset: &Dataset, bins: usize) -> Result<Vec<FeatureScore>> {
    if dataset.is_empty() {
        return Err(Error::Empty("dataset to score"));
    }
    let labels = dataset
        .records
        .iter()
        .map(|r| r.label)
        .collect::<Option<Vec<_>>>()
        .ok_or(Error::Unlabeled)?;
    let names = dataset.schema.numeric_names();
    let mut scores = names
        .par_iter()
        .enumerate()
        .map(|(j, name)| {
            let values = dataset
                .records
                .iter()
                .map(|r| r.features[j])
                .collect::<Option<Vec<f64>>>()
                .ok_or_else(|| Error::MissingFeature(format!("absent values in `{name}`")))?;
            let table = feature_table(&values, &labels, bins)?;
            Ok(FeatureScore {
                name: (*name).to_string(),
                chi2: chi_square(&table)?,
                weight: 0.0,
                rank: 0,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    rank_scores(&mut scores);
    Ok(scores)
}

/// Sorts by chi2 descending (ties by name) and fills `rank` and `weight`.
pub fn rank_scores(scores: &mut [FeatureScore]) {
    scores.sort_by(|a, b| b.chi2.total_cmp(&a.chi2).then_with(|| a.name.cmp(&b.name)));
    let max = scores.first().map(|s| s.chi2).unwrap_or(0.0);
    for (i, s) in scores.iter_mut().enumerate() {
        s.rank = i + 1;
        s.weight = if max > 0.0 { s.chi2 / max } else { 0.0 };
    }
}

/// The `k` best features in rank order and the schema projected onto them.
pub fn select_top_k(
    scores: &[FeatureScore],
    k: usize,
    schema: &FeatureSchema,
) -> Result<(Vec<String>, FeatureSchema)> {
    if k == 0 || k > scores.len() {
        return Err(Error::param(format!(
            "top-k must be in 1..={}, got {k}",
            scores.len()
        )));
    }
    let mut ranked: Vec<&FeatureScore> = scores.iter().collect();
    ranked.sort_by_key(|s| s.rank);
    let names: Vec<String> = ranked.iter().take(k).map(|s| s.name.clone()).collect();
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    let projected = schema.project(&refs)?;
    Ok((names, projected))
}

/// `feature,weight,chi2,rank`, one line per score in rank order.
pub fn scores_to_csv(scores: &[FeatureScore]) -> String {
    let mut out = String::from("feature,weight,chi2,rank\n");
    let mut ranked: Vec<&FeatureScore> = scores.iter().collect();
    ranked.sort_by_key(|s| s.rank);
    for s in ranked {
        let _ = writeln!(out, "{},{},{},{}", s.name, s.weight, s.chi2, s.rank);
    }
    out
}

pub fn scores_from_csv(text: &str) -> Result<Vec<FeatureScore>> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let mut out = Vec::new();
    for row in reader.records() {
        let row = row?;
        let field = |i: usize| row.get(i).unwrap_or("").trim();
        let parse_err = || Error::param(format!("malformed score row `{}`", row.iter().collect::<Vec<_>>().join(",")));
        out.push(FeatureScore {
            name: field(0).to_string(),
            weight: field(1).parse().map_err(|_| parse_err())?,
            chi2: field(2).parse().map_err(|_| parse_err())?,
            rank: field(3).parse().map_err(|_| parse_err())?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_split() {
        let values: Vec<f64> = (1..=10).map(f64::from).collect();
        let b = discretize(&values, 2).unwrap();
        assert_eq!(b.assignments, vec![0, 0, 0, 0, 0, 1, 1, 1, 1, 1]);
        assert_eq!(b.edges, vec![6.0]);
    }

    #[test]
    fn constant_collapses() {
        let b = discretize(&[3.0; 17], 10).unwrap();
        assert_eq!(b.bin_count(), 1);
        assert!(b.assignments.iter().all(|&a| a == 0));
    }

    #[test]
    fn skewed_binary_still_splits() {
        let mut v = vec![0.0; 70];
        v.extend(vec![1.0; 30]);
        let b = discretize(&v, 2).unwrap();
        assert_eq!(b.edges, vec![1.0]);
    }

    #[test]
    fn discretize_errors() {
        assert!(discretize(&[], 2).is_err());
        assert!(discretize(&[1.0], 1).is_err());
        assert!(discretize(&[f64::NAN], 2).is_err());
    }

    #[test]
    fn chi_square_hand_values() {
        let t = ContingencyTable::new(vec![vec![10, 20], vec![20, 10]]).unwrap();
        assert_eq!(t.row_totals(), &[30, 30]);
        assert_eq!(t.col_totals(), &[30, 30]);
        assert_eq!(t.total(), 60);
        assert!((chi_square(&t).unwrap() - 20.0 / 3.0).abs() < 1e-12);

        for n in [1u64, 5, 100] {
            let t = ContingencyTable::new(vec![vec![n, 0], vec![0, n]]).unwrap();
            assert!((chi_square(&t).unwrap() - 2.0 * n as f64).abs() < 1e-9);
        }

        let t = ContingencyTable::new(vec![vec![2, 4], vec![3, 6], vec![5, 10]]).unwrap();
        assert!(chi_square(&t).unwrap().abs() < 1e-12);
    }

    #[test]
    fn zero_expected_cells_are_skipped() {
        let t = ContingencyTable::new(vec![vec![4, 0], vec![6, 0]]).unwrap();
        assert_eq!(chi_square(&t).unwrap(), 0.0);
        let zeros = ContingencyTable::new(vec![vec![0, 0], vec![0, 0]]).unwrap();
        assert!(chi_square(&zeros).is_err());
        assert!(ContingencyTable::new(vec![vec![1, 2], vec![3]]).is_err());
    }

    #[test]
    fn ranking_and_top_k() {
        let mut s = vec![
            FeatureScore { name: "b".into(), chi2: 3.0, weight: 0.0, rank: 0 },
            FeatureScore { name: "a".into(), chi2: 3.0, weight: 0.0, rank: 0 },
            FeatureScore { name: "c".into(), chi2: 6.0, weight: 0.0, rank: 0 },
        ];
        rank_scores(&mut s);
        let names: Vec<_> = s.iter().map(|x| x.name.as_str()).collect();
        assert_eq!(names, vec!["c", "a", "b"]);
        assert_eq!(s[1].weight, 0.5);
        let csv = scores_to_csv(&s);
        assert!(csv.starts_with("feature,weight,chi2,rank\nc,1,6,1\n"));
        assert_eq!(scores_from_csv(&csv).unwrap(), s);
    }
}
