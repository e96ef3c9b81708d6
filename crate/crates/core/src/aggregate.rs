//! Group-by flow counting, record-level cleaning, and seeded simple random
//! sampling.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::hash::{Hash, Hasher};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::flow::{Dataset, FlowRecord, KeyField, KeyValue};

/// Which identifiers to group by. Non-empty, no repeats.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AggregationSpec {
    fields: Vec<KeyField>,
}

impl AggregationSpec {
    pub fn new(fields: Vec<KeyField>) -> Result<Self> {
        if fields.is_empty() {
            return Err(Error::param("aggregation needs at least one key field"));
        }
        let mut seen = HashSet::new();
        if let Some(dup) = fields.iter().find(|f| !seen.insert(**f)) {
            return Err(Error::param(format!("key field {dup} listed twice")));
        }
        Ok(AggregationSpec { fields })
    }

    pub fn fields(&self) -> &[KeyField] {
        &self.fields
    }
}

impl FromStr for AggregationSpec {
    type Err = Error;

    /// Comma-separated identifier names, e.g. `srcip,dstip`.
    fn from_str(s: &str) -> Result<Self> {
        let fields = s
            .split(',')
            .filter(|t| !t.trim().is_empty())
            .map(str::parse)
            .collect::<Result<Vec<_>>>()?;
        AggregationSpec::new(fields)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlowCountRow {
    pub key: Vec<KeyValue>,
    pub flows: u64,
}

/// Result of [`count_flows`]: rows sorted by count descending, ties by key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlowCountTable {
    pub key_fields: Vec<KeyField>,
    pub rows: Vec<FlowCountRow>,
    pub total: u64,
}

impl FlowCountTable {
    /// CSV with header `<key fields...>,flows`.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for f in &self.key_fields {
            out.push_str(f.name());
            out.push(',');
        }
        out.push_str("flows\n");
        for row in &self.rows {
            for v in &row.key {
                let _ = write!(out, "{v},");
            }
            let _ = writeln!(out, "{}", row.flows);
        }
        out
    }
}

/// `SELECT COUNT(*) AS flows, <keys> ... GROUP BY <keys>`.
pub fn count_flows(dataset: &Dataset, spec: &AggregationSpec) -> FlowCountTable {
    let fields = spec.fields();
    let counts = dataset
        .records
        .par_iter()
        .fold(HashMap::<Vec<KeyValue>, u64>::new, |mut acc, r| {
            let key = fields.iter().map(|f| r.key.field(*f)).collect();
            *acc.entry(key).or_default() += 1;
            acc
        })
        .reduce(HashMap::new, |mut a, b| {
            for (k, v) in b {
                *a.entry(k).or_default() += v;
            }
            a
        });
    let mut rows: Vec<FlowCountRow> = counts
        .into_iter()
        .map(|(key, flows)| FlowCountRow { key, flows })
        .collect();
    rows.sort_by(|a, b| b.flows.cmp(&a.flows).then_with(|| a.key.cmp(&b.key)));
    FlowCountTable {
        key_fields: fields.to_vec(),
        rows,
        total: dataset.len() as u64,
    }
}

/// Full-record identity: key, features, nominal columns and labels. Floats
/// compare by value, so `0.0` and `-0.0` are the same observation.
struct RecordIdentity<'a>(&'a FlowRecord);

fn canonical_bits(v: Option<f64>) -> Option<u64> {
    v.map(|x| if x == 0.0 { 0 } else { x.to_bits() })
}

impl PartialEq for RecordIdentity<'_> {
    fn eq(&self, other: &Self) -> bool {
        let (a, b) = (self.0, other.0);
        a.key == b.key
            && a.nominal == b.nominal
            && a.label == b.label
            && a.class == b.class
            && a.features.len() == b.features.len()
            && a.features
                .iter()
                .zip(&b.features)
                .all(|(x, y)| canonical_bits(*x) == canonical_bits(*y))
    }
}

impl Eq for RecordIdentity<'_> {}

impl Hash for RecordIdentity<'_> {
    fn hash<H: Hasher>(&self, state: &mut H) {
        let r = self.0;
        r.key.hash(state);
        r.nominal.hash(state);
        r.label.hash(state);
        r.class.hash(state);
        for v in &r.features {
            canonical_bits(*v).hash(state);
        }
    }
}

/// Keeps the first occurrence of each fully identical record.
pub fn deduplicate(dataset: &Dataset) -> (Dataset, usize) {
    let mut seen = HashSet::with_capacity(dataset.len());
    let kept: Vec<FlowRecord> = dataset
        .records
        .iter()
        .filter(|r| seen.insert(RecordIdentity(r)))
        .cloned()
        .collect();
    let removed = dataset.len() - kept.len();
    (
        dataset.derive(kept, format!("deduplicate: removed {removed}")),
        removed,
    )
}

/// Removes records with any absent feature value.
pub fn drop_missing(dataset: &Dataset) -> (Dataset, usize) {
    let kept: Vec<FlowRecord> = dataset
        .records
        .iter()
        .filter(|r| !r.has_missing())
        .cloned()
        .collect();
    let removed = dataset.len() - kept.len();
    (
        dataset.derive(kept, format!("drop_missing: removed {removed}")),
        removed,
    )
}

/// Indices of a uniform `n`-of-`population` sample without replacement,
/// ascending. A seeded partial Fisher-Yates shuffle picks the members.
pub fn srs_indices(population: usize, n: usize, seed: u64) -> Result<Vec<usize>> {
    if n == 0 {
        return Err(Error::param("sample size must be positive"));
    }
    if n > population {
        return Err(Error::param(format!(
            "sample size {n} exceeds population {population}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx: Vec<usize> = (0..population).collect();
    let (chosen, _) = idx.partial_shuffle(&mut rng, n);
    let mut chosen = chosen.to_vec();
    chosen.sort_unstable();
    Ok(chosen)
}

/// Simple random sample of `n` records; output keeps input order.
pub fn srs_sample(dataset: &Dataset, n: usize, seed: u64) -> Result<Dataset> {
    let idx = srs_indices(dataset.len(), n, seed)?;
    let records = idx.iter().map(|&i| dataset.records[i].clone()).collect();
    Ok(dataset.derive(
        records,
        format!("srs_sample: n={n} of {} seed={seed}", dataset.len()),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{Column, FeatureSchema, FlowKey, Label, Role};

    fn schema() -> FeatureSchema {
        let mut cols: Vec<Column> = KeyField::ALL
            .iter()
            .map(|f| Column::new(f.name(), Role::Identifier(*f), ""))
            .collect();
        cols.push(Column::new("x", Role::Numeric, ""));
        cols.push(Column::new("label", Role::BinaryLabel, ""));
        FeatureSchema::new(cols).unwrap()
    }

    fn rec(src: &str, dst: &str, x: Option<f64>) -> FlowRecord {
        FlowRecord::new(FlowKey::new(src, 1, dst, 80, "tcp"), vec![x]).with_label(Label::Normal)
    }

    fn ds(records: Vec<FlowRecord>) -> Dataset {
        Dataset::new(schema(), records)
    }

    #[test]
    fn spec_validation() {
        assert!(AggregationSpec::new(vec![]).is_err());
        assert!(AggregationSpec::new(vec![KeyField::SrcIp, KeyField::SrcIp]).is_err());
        let s: AggregationSpec = "dstip,dsport,srcport".parse().unwrap();
        assert_eq!(s.fields(), &[KeyField::DstIp, KeyField::DstPort, KeyField::SrcPort]);
        assert!("".parse::<AggregationSpec>().is_err());
    }

    #[test]
    fn singleton_count() {
        let t = count_flows(&ds(vec![rec("10.0.0.1", "10.0.0.2", Some(1.0))]), &"srcip,dstip".parse().unwrap());
        assert_eq!(t.rows.len(), 1);
        assert_eq!(t.rows[0].flows, 1);
        assert_eq!(t.total, 1);
    }

    #[test]
    fn three_record_group_by() {
        let d = ds(vec![
            rec("10.0.0.1", "10.0.0.2", Some(1.0)),
            rec("10.0.0.1", "10.0.0.3", Some(1.0)),
            rec("10.0.0.1", "10.0.0.2", Some(2.0)),
        ]);
        let t = count_flows(&d, &"srcip,dstip".parse().unwrap());
        assert_eq!(t.total, 3);
        assert_eq!(t.rows.len(), 2);
        assert_eq!(t.rows[0].flows, 2);
        assert_eq!(t.rows[0].key[1], KeyValue::Text("10.0.0.2".into()));
        assert_eq!(t.rows[1].flows, 1);
        assert_eq!(
            t.to_csv(),
            "srcip,dstip,flows\n10.0.0.1,10.0.0.2,2\n10.0.0.1,10.0.0.3,1\n"
        );
    }

    #[test]
    fn ties_are_broken_by_key() {
        let d = ds(vec![
            rec("10.0.0.9", "10.0.0.2", Some(1.0)),
            rec("10.0.0.1", "10.0.0.2", Some(1.0)),
        ]);
        let t = count_flows(&d, &"srcip".parse().unwrap());
        assert_eq!(t.rows[0].key, vec![KeyValue::Text("10.0.0.1".into())]);
    }

    #[test]
    fn dedup_cases() {
        let distinct = ds(vec![rec("10.0.0.1", "10.0.0.2", Some(1.0)), rec("10.0.0.1", "10.0.0.2", Some(2.0))]);
        let (out, removed) = deduplicate(&distinct);
        assert_eq!(removed, 0);
        assert_eq!(out.records, distinct.records);

        let same = ds(vec![rec("10.0.0.1", "10.0.0.2", Some(1.0)); 5]);
        let (out, removed) = deduplicate(&same);
        assert_eq!((out.len(), removed), (1, 4));

        let zeros = ds(vec![rec("10.0.0.1", "10.0.0.2", Some(0.0)), rec("10.0.0.1", "10.0.0.2", Some(-0.0))]);
        assert_eq!(deduplicate(&zeros).1, 1);
    }

    #[test]
    fn drop_missing_cases() {
        let complete = ds(vec![rec("10.0.0.1", "10.0.0.2", Some(1.0))]);
        assert_eq!(drop_missing(&complete).1, 0);
        let one = ds(vec![rec("10.0.0.1", "10.0.0.2", None), rec("10.0.0.1", "10.0.0.2", Some(1.0))]);
        let (out, removed) = drop_missing(&one);
        assert_eq!((out.len(), removed), (1, 1));
        assert_eq!(drop_missing(&ds(vec![])).1, 0);
    }

    #[test]
    fn sampling_bounds_and_determinism() {
        let d = ds((0..10).map(|i| rec("10.0.0.1", "10.0.0.2", Some(i as f64))).collect());
        assert!(srs_sample(&d, 0, 1).is_err());
        assert!(srs_sample(&d, 11, 1).is_err());
        let all = srs_sample(&d, 10, 42).unwrap();
        assert_eq!(all.records, d.records);
        let a = srs_sample(&d, 1, 7).unwrap();
        let b = srs_sample(&d, 1, 7).unwrap();
        assert_eq!(a.records, b.records);
        assert!(a.provenance.contains("seed=7"));
    }
}
