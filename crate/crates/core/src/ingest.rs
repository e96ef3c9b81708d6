//! CSV ingestion of flow files.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Write};
use std::net::IpAddr;
use std::path::Path;

use crate::error::{Error, Result};
use crate::flow::{
    canonical_column_name, validate_record, Dataset, FeatureSchema, FlowKey, FlowRecord, KeyField,
    Label, Role, NORMAL_CLASS,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BadRowPolicy {
    #[default]
    Skip,
    Fail,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CsvOptions {
    pub has_header: bool,
    pub on_bad_row: BadRowPolicy,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IngestStats {
    pub rows_read: u64,
    pub rows_dropped: u64,
    pub drop_reasons: BTreeMap<String, u64>,
}

impl IngestStats {
    pub fn merge(&mut self, other: &IngestStats) {
        self.rows_read += other.rows_read;
        self.rows_dropped += other.rows_dropped;
        for (k, v) in &other.drop_reasons {
            *self.drop_reasons.entry(k.clone()).or_default() += v;
        }
    }
}

#[derive(Debug)]
struct RowError {
    kind: &'static str,
    detail: String,
}

impl RowError {
    fn new(kind: &'static str, detail: impl Into<String>) -> Self {
        RowError {
            kind,
            detail: detail.into(),
        }
    }
}

/// Reads a schema's worth of columns from a comma-separated file.
///
/// Rows that fail to parse or fail [`validate_record`] are either dropped and
/// counted (`Skip`) or abort the load with their 1-based line number (`Fail`).
pub fn load_csv(
    path: impl AsRef<Path>,
    schema: &FeatureSchema,
    options: CsvOptions,
) -> Result<(Dataset, IngestStats)> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let (mut dataset, stats) = read_csv(file, schema, options)?;
    dataset.push_provenance(format!(
        "csv {} (read {}, dropped {})",
        path.display(),
        stats.rows_read,
        stats.rows_dropped
    ));
    Ok((dataset, stats))
}

/// Loads several part files with one schema and concatenates them in order.
pub fn load_csv_files<P: AsRef<Path>>(
    paths: &[P],
    schema: &FeatureSchema,
    options: CsvOptions,
) -> Result<(Dataset, IngestStats)> {
    let mut out = Dataset::new(schema.clone(), Vec::new());
    let mut stats = IngestStats::default();
    for p in paths {
        let (ds, s) = load_csv(p, schema, options)?;
        out.records.extend(ds.records);
        out.push_provenance(ds.provenance);
        stats.merge(&s);
    }
    Ok((out, stats))
}

/// Reads only the header row of a CSV file.
pub fn read_header(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(file);
    match reader.records().next() {
        Some(rec) => Ok(rec?.iter().map(str::to_string).collect()),
        None => Err(Error::Empty("csv header")),
    }
}

pub fn read_csv<R: Read>(
    input: R,
    schema: &FeatureSchema,
    options: CsvOptions,
) -> Result<(Dataset, IngestStats)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(input);
    let mut stats = IngestStats::default();
    let mut records = Vec::new();
    let mut rows = reader.records();

    if options.has_header {
        let header = match rows.next() {
            Some(h) => h?,
            None => return Ok((Dataset::new(schema.clone(), records), stats)),
        };
        check_header(&header, schema)?;
    }

    for row in rows {
        let row = row?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        stats.rows_read += 1;
        let parsed = parse_row(&row, schema).and_then(|r| {
            validate_record(&r, schema)
                .map(|_| r)
                .map_err(|v| RowError::new("invalid record", v.to_string()))
        });
        match parsed {
            Ok(r) => records.push(r),
            Err(e) => match options.on_bad_row {
                BadRowPolicy::Fail => {
                    return Err(Error::BadRow {
                        row: line,
                        reason: format!("{}: {}", e.kind, e.detail),
                    })
                }
                BadRowPolicy::Skip => {
                    stats.rows_dropped += 1;
                    *stats.drop_reasons.entry(e.kind.to_string()).or_default() += 1;
                }
            },
        }
    }
    Ok((Dataset::new(schema.clone(), records), stats))
}

fn check_header(header: &csv::StringRecord, schema: &FeatureSchema) -> Result<()> {
    if header.len() != schema.len() {
        return Err(Error::Arity {
            expected: schema.len(),
            found: header.len(),
        });
    }
    for (i, (raw, col)) in header.iter().zip(schema.columns()).enumerate() {
        let name = canonical_column_name(raw);
        let matches = match col.role {
            Role::Identifier(field) => name.parse::<KeyField>().ok() == Some(field),
            _ => name == col.name,
        };
        if !matches {
            return Err(Error::HeaderMismatch(format!(
                "column {} is `{}`, schema expects `{}`",
                i + 1,
                raw.trim(),
                col.name
            )));
        }
    }
    Ok(())
}

fn parse_row(row: &csv::StringRecord, schema: &FeatureSchema) -> Result<FlowRecord, RowError> {
    if row.len() != schema.len() {
        return Err(RowError::new(
            "arity mismatch",
            format!("{} fields, expected {}", row.len(), schema.len()),
        ));
    }
    let mut src_ip = String::new();
    let mut dst_ip = String::new();
    let mut src_port = 0;
    let mut dst_port = 0;
    let mut proto = String::new();
    let mut features = Vec::with_capacity(schema.numeric_count());
    let mut nominal = Vec::with_capacity(schema.nominal_count());
    let mut label = None;
    let mut class = None;

    for (raw, col) in row.iter().zip(schema.columns()) {
        let field = raw.trim();
        match col.role {
            Role::Identifier(key) => {
                if field.is_empty() {
                    return Err(RowError::new("empty identifier", key.name()));
                }
                match key {
                    KeyField::SrcIp | KeyField::DstIp => {
                        if field.parse::<IpAddr>().is_err() {
                            return Err(RowError::new(
                                "malformed identifier",
                                format!("{key} `{field}`"),
                            ));
                        }
                        if key == KeyField::SrcIp {
                            src_ip = field.to_string();
                        } else {
                            dst_ip = field.to_string();
                        }
                    }
                    KeyField::SrcPort | KeyField::DstPort => {
                        let port = parse_port(field).ok_or_else(|| {
                            RowError::new("malformed identifier", format!("{key} `{field}`"))
                        })?;
                        if key == KeyField::SrcPort {
                            src_port = port;
                        } else {
                            dst_port = port;
                        }
                    }
                    KeyField::Proto => proto = field.to_ascii_lowercase(),
                }
            }
            Role::Numeric => {
                if field.is_empty() {
                    features.push(None);
                } else {
                    match field.parse::<f64>() {
                        Ok(v) if v.is_finite() => features.push(Some(v)),
                        _ => {
                            return Err(RowError::new(
                                "unparseable numeric",
                                format!("{} `{field}`", col.name),
                            ))
                        }
                    }
                }
            }
            Role::Nominal => nominal.push(field.to_string()),
            Role::BinaryLabel => {
                label = match field {
                    "0" => Some(Label::Normal),
                    "1" => Some(Label::Attack),
                    _ => {
                        return Err(RowError::new(
                            "invalid label",
                            format!("{} `{field}`", col.name),
                        ))
                    }
                }
            }
            Role::ClassLabel => class = normalize_class(field),
        }
    }
    if class.is_none() && label == Some(Label::Normal) && schema.has_class_label() {
        class = Some(NORMAL_CLASS.to_string());
    }
    Ok(FlowRecord {
        key: FlowKey {
            src_ip,
            src_port,
            dst_ip,
            dst_port,
            proto,
        },
        features,
        nominal,
        label,
        class,
    })
}

/// Decimal or `0x`-prefixed hexadecimal (some UNSW-NB15 rows use the latter).
fn parse_port(s: &str) -> Option<u32> {
    if let Some(hex) = s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")) {
        u32::from_str_radix(hex, 16).ok()
    } else {
        s.parse().ok()
    }
}

fn normalize_class(s: &str) -> Option<String> {
    if s.is_empty() {
        return None;
    }
    let class = match s.to_ascii_lowercase().as_str() {
        "normal" => NORMAL_CLASS,
        "backdoors" | "backdoor" => "Backdoor",
        _ => s,
    };
    Some(class.to_string())
}

/// Writes a dataset back out as CSV with a header row, in schema column order.
/// Absent values become empty fields.
pub fn write_csv<W: Write>(dataset: &Dataset, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(dataset.schema.columns().iter().map(|c| c.name.as_str()))?;
    let mut fields: Vec<String> = Vec::with_capacity(dataset.schema.len());
    for r in &dataset.records {
        fields.clear();
        let mut feat = r.features.iter();
        let mut nom = r.nominal.iter();
        for col in dataset.schema.columns() {
            fields.push(match col.role {
                Role::Identifier(k) => r.key.field(k).to_string(),
                Role::Numeric => feat
                    .next()
                    .copied()
                    .flatten()
                    .map(|v| v.to_string())
                    .unwrap_or_default(),
                Role::Nominal => nom.next().cloned().unwrap_or_default(),
                Role::BinaryLabel => r
                    .label
                    .map(|l| l.as_u8().to_string())
                    .unwrap_or_default(),
                Role::ClassLabel => r.class.clone().unwrap_or_default(),
            });
        }
        w.write_record(&fields)?;
    }
    w.flush().map_err(|e| Error::io("<csv output>", e))?;
    Ok(())
}

pub fn write_csv_file(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_csv(dataset, std::io::BufWriter::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "srcip,sport,dstip,dsport,proto,f1,f2,attack_cat,label\n";

    fn schema() -> FeatureSchema {
        FeatureSchema::infer_from_header(&HEADER.trim().split(',').collect::<Vec<_>>()).unwrap()
    }

    fn opts(has_header: bool) -> CsvOptions {
        CsvOptions {
            has_header,
            on_bad_row: BadRowPolicy::Skip,
        }
    }

    #[test]
    fn clean_input() {
        let mut text = HEADER.to_string();
        for i in 0..5 {
            text.push_str(&format!("10.0.0.{i},100{i},10.0.1.1,80,tcp,{i},2.5,,0\n"));
        }
        let (ds, stats) = read_csv(text.as_bytes(), &schema(), opts(true)).unwrap();
        assert_eq!(ds.len(), 5);
        assert_eq!(stats.rows_read, 5);
        assert_eq!(stats.rows_dropped, 0);
        assert_eq!(ds.records[3].features, vec![Some(3.0), Some(2.5)]);
        assert_eq!(ds.records[0].class.as_deref(), Some("Normal"));
    }

    #[test]
    fn empty_proto_is_dropped() {
        let text = format!(
            "{HEADER}10.0.0.1,1,10.0.0.2,2,tcp,1,1,,0\n10.0.0.1,1,10.0.0.2,2,,1,1,,0\n"
        );
        let (ds, stats) = read_csv(text.as_bytes(), &schema(), opts(true)).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(stats.rows_read, 2);
        assert_eq!(stats.drop_reasons.get("empty identifier"), Some(&1));
    }

    #[test]
    fn fail_mode_reports_row() {
        let text = format!("{HEADER}10.0.0.1,1,10.0.0.2,2,tcp,1,1,,0\n10.0.0.1,1,10.0.0.2,2,udp,abc,1,,0\n");
        let options = CsvOptions {
            has_header: true,
            on_bad_row: BadRowPolicy::Fail,
        };
        match read_csv(text.as_bytes(), &schema(), options) {
            Err(Error::BadRow { row, reason }) => {
                assert_eq!(row, 3);
                assert!(reason.contains("unparseable numeric"), "{reason}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn header_arity_mismatch() {
        let text = "srcip,sport,dstip,dsport,proto,f1\n";
        assert!(matches!(
            read_csv(text.as_bytes(), &schema(), opts(true)),
            Err(Error::Arity { expected: 9, found: 6 })
        ));
    }

    #[test]
    fn header_name_mismatch() {
        let text = "srcip,sport,dstip,dsport,proto,f1,zz,attack_cat,label\n";
        assert!(matches!(
            read_csv(text.as_bytes(), &schema(), opts(true)),
            Err(Error::HeaderMismatch(_))
        ));
    }

    #[test]
    fn missing_values_and_quirks() {
        let text = format!(
            "{HEADER}10.0.0.1,0x000b,10.0.0.2,-,tcp,1,1,,0\n10.0.0.1,0x000b,10.0.0.2,53,UDP, ,1, Backdoors ,1\n10.0.0.1,5,10.0.0.2,53,udp,1,1,Normal,1\n"
        );
        let (ds, stats) = read_csv(text.as_bytes(), &schema(), opts(true)).unwrap();
        assert_eq!(ds.len(), 1);
        let r = &ds.records[0];
        assert_eq!(r.key.src_port, 11);
        assert_eq!(r.key.proto, "udp");
        assert_eq!(r.features, vec![None, Some(1.0)]);
        assert_eq!(r.class.as_deref(), Some("Backdoor"));
        assert_eq!(stats.drop_reasons.get("malformed identifier"), Some(&1));
        assert_eq!(stats.drop_reasons.get("invalid record"), Some(&1));
        assert_eq!(stats.rows_read, stats.rows_dropped + ds.len() as u64);
    }

    #[test]
    fn missing_file() {
        assert!(matches!(
            load_csv("/nonexistent/flows.csv", &schema(), opts(true)),
            Err(Error::NotFound(_))
        ));
    }

    #[test]
    fn write_then_read() {
        let text = format!(
            "{HEADER}10.0.0.1,1,10.0.0.2,2,tcp,0.1,,Exploits,1\n10.0.0.3,1,10.0.0.2,2,tcp,1e300,-0.5,Normal,0\n"
        );
        let (ds, _) = read_csv(text.as_bytes(), &schema(), opts(true)).unwrap();
        let mut buf = Vec::new();
        write_csv(&ds, &mut buf).unwrap();
        let (again, _) = read_csv(buf.as_slice(), &schema(), opts(true)).unwrap();
        assert_eq!(ds, again);
    }
}
