//! Domain types shared by every pipeline stage.
//!
//! A [`FlowRecord`] is one observation: the 5-tuple that identifies the flow,
//! a vector of numeric features (each possibly absent), nominal metadata such
//! as `service`/`state`, and optional ground-truth labels. A [`FeatureSchema`]
//! names and types every column; a [`Dataset`] pairs the two.

use std::collections::HashSet;
use std::fmt;
use std::net::IpAddr;
use std::str::FromStr;

use crate::error::{Error, Result};

/// One of the five flow identifiers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum KeyField {
    SrcIp,
    SrcPort,
    DstIp,
    DstPort,
    Proto,
}

impl KeyField {
    pub const ALL: [KeyField; 5] = [
        KeyField::SrcIp,
        KeyField::SrcPort,
        KeyField::DstIp,
        KeyField::DstPort,
        KeyField::Proto,
    ];

    /// Column name as used in UNSW-NB15 files and CLI output.
    pub fn name(self) -> &'static str {
        match self {
            KeyField::SrcIp => "srcip",
            KeyField::SrcPort => "sport",
            KeyField::DstIp => "dstip",
            KeyField::DstPort => "dsport",
            KeyField::Proto => "proto",
        }
    }
}

impl fmt::Display for KeyField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for KeyField {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "srcip" | "src_ip" | "saddr" => Ok(KeyField::SrcIp),
            "sport" | "srcport" | "src_port" => Ok(KeyField::SrcPort),
            "dstip" | "dst_ip" | "daddr" => Ok(KeyField::DstIp),
            "dsport" | "dport" | "dstport" | "dst_port" => Ok(KeyField::DstPort),
            "proto" | "protocol" => Ok(KeyField::Proto),
            other => Err(Error::param(format!("unknown flow identifier `{other}`"))),
        }
    }
}

/// The flow 5-tuple. Ordering is lexicographic over the fields in declaration
/// order, which is what the evidence report uses to break ties.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FlowKey {
    pub src_ip: String,
    pub src_port: u32,
    pub dst_ip: String,
    pub dst_port: u32,
    pub proto: String,
}

impl FlowKey {
    pub fn new(
        src_ip: impl Into<String>,
        src_port: u32,
        dst_ip: impl Into<String>,
        dst_port: u32,
        proto: impl Into<String>,
    ) -> Self {
        FlowKey {
            src_ip: src_ip.into(),
            src_port,
            dst_ip: dst_ip.into(),
            dst_port,
            proto: proto.into(),
        }
    }

    pub fn field(&self, field: KeyField) -> KeyValue {
        match field {
            KeyField::SrcIp => KeyValue::Text(self.src_ip.clone()),
            KeyField::SrcPort => KeyValue::Port(self.src_port),
            KeyField::DstIp => KeyValue::Text(self.dst_ip.clone()),
            KeyField::DstPort => KeyValue::Port(self.dst_port),
            KeyField::Proto => KeyValue::Text(self.proto.clone()),
        }
    }
}

/// A single identifier value, used as a component of grouping keys.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum KeyValue {
    Port(u32),
    Text(String),
}

impl fmt::Display for KeyValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KeyValue::Port(p) => write!(f, "{p}"),
            KeyValue::Text(s) => f.write_str(s),
        }
    }
}

/// Binary ground truth. Attack is the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Normal,
    Attack,
}

impl Label {
    pub fn from_u8(v: u8) -> Option<Label> {
        match v {
            0 => Some(Label::Normal),
            1 => Some(Label::Attack),
            _ => None,
        }
    }

    pub fn as_u8(self) -> u8 {
        match self {
            Label::Normal => 0,
            Label::Attack => 1,
        }
    }

    pub fn is_attack(self) -> bool {
        self == Label::Attack
    }
}

pub const NORMAL_CLASS: &str = "Normal";

/// One flow observation.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowRecord {
    pub key: FlowKey,
    /// Numeric features in schema order; `None` marks an absent value.
    pub features: Vec<Option<f64>>,
    /// Nominal (string-valued) columns in schema order.
    pub nominal: Vec<String>,
    pub label: Option<Label>,
    pub class: Option<String>,
}

impl FlowRecord {
    pub fn new(key: FlowKey, features: Vec<Option<f64>>) -> Self {
        FlowRecord {
            key,
            features,
            nominal: Vec::new(),
            label: None,
            class: None,
        }
    }

    pub fn with_label(mut self, label: Label) -> Self {
        self.label = Some(label);
        self
    }

    pub fn with_class(mut self, class: impl Into<String>) -> Self {
        self.class = Some(class.into());
        self
    }

    pub fn has_missing(&self) -> bool {
        self.features.iter().any(Option::is_none)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Identifier(KeyField),
    Numeric,
    /// String-valued column kept as metadata, outside the numeric vector.
    Nominal,
    BinaryLabel,
    ClassLabel,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Column {
    pub name: String,
    pub role: Role,
    pub description: String,
}

impl Column {
    pub fn new(name: impl Into<String>, role: Role, description: impl Into<String>) -> Self {
        Column {
            name: name.into(),
            role,
            description: description.into(),
        }
    }
}

/// Ordered, typed column list.
///
/// Invariants, checked by [`FeatureSchema::new`]: unique names, each of the five
/// identifiers exactly once, at most one binary-label and one class-label column,
/// and a class-label column only alongside a binary-label column.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureSchema {
    columns: Vec<Column>,
}

impl FeatureSchema {
    pub fn new(columns: Vec<Column>) -> Result<Self> {
        let mut names = HashSet::new();
        for c in &columns {
            if c.name.is_empty() {
                return Err(Error::Schema("empty column name".into()));
            }
            if !names.insert(c.name.as_str()) {
                return Err(Error::Schema(format!("duplicate column `{}`", c.name)));
            }
        }
        for field in KeyField::ALL {
            let n = columns
                .iter()
                .filter(|c| c.role == Role::Identifier(field))
                .count();
            if n != 1 {
                return Err(Error::Schema(format!(
                    "identifier {field} must appear exactly once, found {n}"
                )));
            }
        }
        let binary = columns.iter().filter(|c| c.role == Role::BinaryLabel).count();
        let class = columns.iter().filter(|c| c.role == Role::ClassLabel).count();
        if binary > 1 || class > 1 {
            return Err(Error::Schema("more than one label column".into()));
        }
        if class == 1 && binary == 0 {
            return Err(Error::Schema(
                "class label requires a binary label column".into(),
            ));
        }
        Ok(FeatureSchema { columns })
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    pub fn numeric_names(&self) -> Vec<&str> {
        self.columns
            .iter()
            .filter(|c| c.role == Role::Numeric)
            .map(|c| c.name.as_str())
            .collect()
    }

    pub fn numeric_count(&self) -> usize {
        self.columns.iter().filter(|c| c.role == Role::Numeric).count()
    }

    pub fn nominal_count(&self) -> usize {
        self.columns.iter().filter(|c| c.role == Role::Nominal).count()
    }

    pub fn numeric_index(&self, name: &str) -> Option<usize> {
        self.numeric_names().iter().position(|n| *n == name)
    }

    pub fn has_binary_label(&self) -> bool {
        self.columns.iter().any(|c| c.role == Role::BinaryLabel)
    }

    pub fn has_class_label(&self) -> bool {
        self.columns.iter().any(|c| c.role == Role::ClassLabel)
    }

    /// Schema keeping every non-numeric column and only the named numeric
    /// features, in the order given.
    pub fn project(&self, features: &[&str]) -> Result<FeatureSchema> {
        let mut columns: Vec<Column> = self
            .columns
            .iter()
            .filter(|c| matches!(c.role, Role::Identifier(_)))
            .cloned()
            .collect();
        for name in features {
            let col = self
                .columns
                .iter()
                .find(|c| c.role == Role::Numeric && c.name == *name)
                .ok_or_else(|| Error::MissingFeature((*name).to_string()))?;
            columns.push(col.clone());
        }
        columns.extend(
            self.columns
                .iter()
                .filter(|c| {
                    matches!(c.role, Role::Nominal | Role::BinaryLabel | Role::ClassLabel)
                })
                .cloned(),
        );
        FeatureSchema::new(columns)
    }

    /// Built-in schema for the raw UNSW-NB15 CSV part files (49 columns:
    /// five identifiers, 42 features of which `state` and `service` are
    /// nominal, then `attack_cat` and `label`).
    pub fn unsw_nb15() -> FeatureSchema {
        use Role::*;
        let spec: &[(&str, Role, &str)] = &[
            ("srcip", Identifier(KeyField::SrcIp), "source IP address"),
            ("sport", Identifier(KeyField::SrcPort), "source port number"),
            ("dstip", Identifier(KeyField::DstIp), "destination IP address"),
            ("dsport", Identifier(KeyField::DstPort), "destination port number"),
            ("proto", Identifier(KeyField::Proto), "transaction protocol"),
            ("state", Nominal, "state and dependent protocol"),
            ("dur", Numeric, "record total duration"),
            ("sbytes", Numeric, "source to destination bytes"),
            ("dbytes", Numeric, "destination to source bytes"),
            ("sttl", Numeric, "source to destination time to live"),
            ("dttl", Numeric, "destination to source time to live"),
            ("sloss", Numeric, "source packets retransmitted or dropped"),
            ("dloss", Numeric, "destination packets retransmitted or dropped"),
            ("service", Nominal, "application service"),
            ("sload", Numeric, "source bits per second"),
            ("dload", Numeric, "destination bits per second"),
            ("spkts", Numeric, "source to destination packet count"),
            ("dpkts", Numeric, "destination to source packet count"),
            ("swin", Numeric, "source TCP window advertisement"),
            ("dwin", Numeric, "destination TCP window advertisement"),
            ("stcpb", Numeric, "source TCP sequence number"),
            ("dtcpb", Numeric, "destination TCP sequence number"),
            ("smean", Numeric, "mean of the flow packet size transmitted by the source"),
            ("dmean", Numeric, "mean of the flow packet size transmitted by the destination"),
            ("trans_depth", Numeric, "depth into the HTTP request/response pipeline"),
            ("res_bdy_len", Numeric, "size of the data transferred from the server's HTTP service"),
            ("sjit", Numeric, "source jitter (ms)"),
            ("djit", Numeric, "destination jitter (ms)"),
            ("stime", Numeric, "record start time"),
            ("ltime", Numeric, "record last time"),
            ("sintpkt", Numeric, "source inter-packet arrival time (ms)"),
            ("dintpkt", Numeric, "destination inter-packet arrival time (ms)"),
            ("tcprtt", Numeric, "TCP connection setup round-trip time"),
            ("synack", Numeric, "time between SYN and SYN_ACK"),
            ("ackdat", Numeric, "time between SYN_ACK and ACK"),
            ("is_sm_ips_ports", Numeric, "1 if source and destination IPs and ports are equal"),
            ("ct_state_ttl", Numeric, "count per state and TTL range"),
            ("ct_flw_http_mthd", Numeric, "flows with HTTP methods such as GET and POST"),
            ("is_ftp_login", Numeric, "1 if the FTP session is accessed with user and password"),
            ("ct_ftp_cmd", Numeric, "flows with a command in the FTP session"),
            ("ct_srv_src", Numeric, "connections with same service and source address in last 100"),
            ("ct_srv_dst", Numeric, "connections with same service and destination address in last 100"),
            ("ct_dst_ltm", Numeric, "connections with same destination address in last 100"),
            ("ct_src_ltm", Numeric, "connections with same source address in last 100"),
            ("ct_src_dport_ltm", Numeric, "connections with same source address and destination port in last 100"),
            ("ct_dst_sport_ltm", Numeric, "connections with same destination address and source port in last 100"),
            ("ct_dst_src_ltm", Numeric, "connections with same source and destination address in last 100"),
            ("attack_cat", ClassLabel, "attack category"),
            ("label", BinaryLabel, "0 for normal, 1 for attack"),
        ];
        let columns = spec
            .iter()
            .map(|(n, r, d)| Column::new(*n, *r, *d))
            .collect();
        FeatureSchema::new(columns).expect("built-in schema is valid")
    }

    /// Infers roles from column names: the five identifier names, `label`,
    /// `attack_cat`/`class`, `state`/`service` as nominal, everything else numeric.
    pub fn infer_from_header<S: AsRef<str>>(header: &[S]) -> Result<FeatureSchema> {
        let columns = header
            .iter()
            .map(|h| {
                let name = canonical_column_name(h.as_ref());
                let role = if let Ok(field) = name.parse::<KeyField>() {
                    Role::Identifier(field)
                } else {
                    match name.as_str() {
                        "label" => Role::BinaryLabel,
                        "attack_cat" | "class" => Role::ClassLabel,
                        "state" | "service" => Role::Nominal,
                        _ => Role::Numeric,
                    }
                };
                let name = match role {
                    Role::Identifier(f) => f.name().to_string(),
                    _ => name,
                };
                Column::new(name, role, "")
            })
            .collect();
        FeatureSchema::new(columns)
    }

    /// Resolves a built-in schema by name.
    pub fn builtin(name: &str) -> Option<FeatureSchema> {
        match name.to_ascii_lowercase().as_str() {
            "unsw-nb15" | "unsw_nb15" | "unsw" => Some(FeatureSchema::unsw_nb15()),
            _ => None,
        }
    }
}

/// Normalises a header token: trims, lowercases, and maps the spelling
/// variants found across UNSW-NB15 releases onto the built-in names.
pub fn canonical_column_name(raw: &str) -> String {
    let lower = raw.trim().to_ascii_lowercase();
    match lower.as_str() {
        "smeansz" => "smean".into(),
        "dmeansz" => "dmean".into(),
        "response_body_len" => "res_bdy_len".into(),
        "sinpkt" => "sintpkt".into(),
        "dinpkt" => "dintpkt".into(),
        _ => lower,
    }
}

/// Schema plus records plus a free-text provenance trail.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub schema: FeatureSchema,
    pub records: Vec<FlowRecord>,
    pub provenance: String,
}

impl Dataset {
    pub fn new(schema: FeatureSchema, records: Vec<FlowRecord>) -> Self {
        Dataset {
            schema,
            records,
            provenance: String::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// New dataset over the same schema with an extra provenance line.
    pub fn derive(&self, records: Vec<FlowRecord>, note: impl AsRef<str>) -> Dataset {
        let mut provenance = self.provenance.clone();
        if !provenance.is_empty() {
            provenance.push('\n');
        }
        provenance.push_str(note.as_ref());
        Dataset {
            schema: self.schema.clone(),
            records,
            provenance,
        }
    }

    pub fn push_provenance(&mut self, note: impl AsRef<str>) {
        if !self.provenance.is_empty() {
            self.provenance.push('\n');
        }
        self.provenance.push_str(note.as_ref());
    }

    /// Restricts the numeric vector to `features`, in that order.
    pub fn project(&self, features: &[&str]) -> Result<Dataset> {
        let schema = self.schema.project(features)?;
        let indices = features
            .iter()
            .map(|f| {
                self.schema
                    .numeric_index(f)
                    .ok_or_else(|| Error::MissingFeature((*f).to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        let records = self
            .records
            .iter()
            .map(|r| FlowRecord {
                features: indices.iter().map(|&i| r.features[i]).collect(),
                ..r.clone()
            })
            .collect();
        let mut out = Dataset {
            schema,
            records,
            provenance: self.provenance.clone(),
        };
        out.push_provenance(format!("projected onto [{}]", features.join(",")));
        Ok(out)
    }

    pub fn count_labels(&self) -> (usize, usize) {
        self.records.iter().fold((0, 0), |(n, a), r| match r.label {
            Some(Label::Normal) => (n + 1, a),
            Some(Label::Attack) => (n, a + 1),
            None => (n, a),
        })
    }
}

/// First invariant a record breaks with respect to a schema.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    PortOutOfRange(KeyField),
    EmptyIdentifier(KeyField),
    MalformedAddress(KeyField),
    ProtoNotLowercase,
    FeatureArity { expected: usize, found: usize },
    NominalArity { expected: usize, found: usize },
    NonFiniteFeature(usize),
    UnexpectedLabel,
    ClassLabelMismatch,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::PortOutOfRange(k) => {
                let name = if *k == KeyField::SrcPort { "src_port" } else { "dst_port" };
                write!(f, "{name} out of range")
            }
            Violation::EmptyIdentifier(k) => write!(f, "empty identifier ({k})"),
            Violation::MalformedAddress(k) => write!(f, "malformed address ({k})"),
            Violation::ProtoNotLowercase => f.write_str("proto not lowercase"),
            Violation::FeatureArity { expected, found } => {
                write!(f, "feature arity mismatch: expected {expected}, found {found}")
            }
            Violation::NominalArity { expected, found } => {
                write!(f, "nominal arity mismatch: expected {expected}, found {found}")
            }
            Violation::NonFiniteFeature(i) => write!(f, "non-finite value in feature {i}"),
            Violation::UnexpectedLabel => f.write_str("label present but schema has no label column"),
            Violation::ClassLabelMismatch => {
                f.write_str("class label disagrees with binary label")
            }
        }
    }
}

impl std::error::Error for Violation {}

pub fn validate_record(record: &FlowRecord, schema: &FeatureSchema) -> Result<(), Violation> {
    let key = &record.key;
    for (field, value) in [(KeyField::SrcIp, &key.src_ip), (KeyField::DstIp, &key.dst_ip)] {
        if value.is_empty() {
            return Err(Violation::EmptyIdentifier(field));
        }
        if value.parse::<IpAddr>().is_err() {
            return Err(Violation::MalformedAddress(field));
        }
    }
    if key.src_port > 65535 {
        return Err(Violation::PortOutOfRange(KeyField::SrcPort));
    }
    if key.dst_port > 65535 {
        return Err(Violation::PortOutOfRange(KeyField::DstPort));
    }
    if key.proto.is_empty() {
        return Err(Violation::EmptyIdentifier(KeyField::Proto));
    }
    if key.proto.chars().any(|c| c.is_ascii_uppercase()) {
        return Err(Violation::ProtoNotLowercase);
    }
    let expected = schema.numeric_count();
    if record.features.len() != expected {
        return Err(Violation::FeatureArity {
            expected,
            found: record.features.len(),
        });
    }
    let expected = schema.nominal_count();
    if record.nominal.len() != expected {
        return Err(Violation::NominalArity {
            expected,
            found: record.nominal.len(),
        });
    }
    if let Some(i) = record
        .features
        .iter()
        .position(|v| matches!(v, Some(x) if !x.is_finite()))
    {
        return Err(Violation::NonFiniteFeature(i));
    }
    if (record.label.is_some() && !schema.has_binary_label())
        || (record.class.is_some() && !schema.has_class_label())
    {
        return Err(Violation::UnexpectedLabel);
    }
    if let (Some(label), Some(class)) = (record.label, record.class.as_deref()) {
        if (class == NORMAL_CLASS) != (label == Label::Normal) {
            return Err(Violation::ClassLabelMismatch);
        }
    }
    Ok(())
}
