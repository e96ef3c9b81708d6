//! Columnar binary snapshot of a [`Dataset`].
//!
//! All integers are little-endian. A `str` is a `u32` byte length followed by
//! UTF-8 bytes.
//!
//! ```text
//! offset  size  field
//! 0       8     magic  b"FLOWSNAP"
//! 8       4     u32    format version (currently 1)
//! 12      8     u64    body length L
//! 20      L     body
//! 20+L    32    SHA-256 over bytes [0, 20+L)
//!
//! body:
//!   str                provenance
//!   u32                column count C
//!   C x column header  str name, u8 role, [u8 key field], str description
//!   u64                record count N
//!   C x column block   one per schema column, in schema order
//!
//! role tags:       0 identifier (followed by key field tag), 1 numeric,
//!                  2 nominal, 3 binary label, 4 class label
//! key field tags:  0 srcip, 1 sport, 2 dstip, 3 dsport, 4 proto
//!
//! column blocks:
//!   srcip/dstip/proto  N x str
//!   sport/dsport       N x u32
//!   numeric            ceil(N/8) presence bitmap (bit i%8 of byte i/8 set when
//!                      record i has a value), then N x f64 bit patterns
//!                      (absent entries written as 0.0)
//!   nominal            N x str
//!   binary label       N x u8 (0 normal, 1 attack, 0xFF absent)
//!   class label        N x (u8 present flag, str when present)
//! ```

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::flow::{Column, Dataset, FeatureSchema, FlowKey, FlowRecord, KeyField, Label, Role};

pub const MAGIC: &[u8; 8] = b"FLOWSNAP";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 20;
const DIGEST_LEN: usize = 32;
const LABEL_ABSENT: u8 = 0xFF;

/// Writes `dataset` to `path`, returning the number of bytes written.
pub fn save_snapshot(dataset: &Dataset, path: impl AsRef<Path>) -> Result<u64> {
    let path = path.as_ref();
    let bytes = encode(dataset);
    std::fs::write(path, &bytes).map_err(|e| Error::io(path, e))?;
    Ok(bytes.len() as u64)
}

pub fn load_snapshot(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

/// True when the file starts with the snapshot magic.
pub fn is_snapshot(path: impl AsRef<Path>) -> bool {
    use std::io::Read;
    let mut buf = [0u8; 8];
    std::fs::File::open(path)
        .and_then(|mut f| f.read_exact(&mut buf))
        .map(|_| &buf == MAGIC)
        .unwrap_or(false)
}

pub fn encode(dataset: &Dataset) -> Vec<u8> {
    let mut body = Vec::new();
    put_str(&mut body, &dataset.provenance);
    let schema = &dataset.schema;
    put_u32(&mut body, schema.len() as u32);
    for col in schema.columns() {
        put_str(&mut body, &col.name);
        match col.role {
            Role::Identifier(k) => {
                body.push(0);
                body.push(key_tag(k));
            }
            Role::Numeric => body.push(1),
            Role::Nominal => body.push(2),
            Role::BinaryLabel => body.push(3),
            Role::ClassLabel => body.push(4),
        }
        put_str(&mut body, &col.description);
    }
    let records = &dataset.records;
    put_u64(&mut body, records.len() as u64);

    let mut numeric_idx = 0;
    let mut nominal_idx = 0;
    for col in schema.columns() {
        match col.role {
            Role::Identifier(KeyField::SrcIp) => records.iter().for_each(|r| put_str(&mut body, &r.key.src_ip)),
            Role::Identifier(KeyField::DstIp) => records.iter().for_each(|r| put_str(&mut body, &r.key.dst_ip)),
            Role::Identifier(KeyField::Proto) => records.iter().for_each(|r| put_str(&mut body, &r.key.proto)),
            Role::Identifier(KeyField::SrcPort) => records.iter().for_each(|r| put_u32(&mut body, r.key.src_port)),
            Role::Identifier(KeyField::DstPort) => records.iter().for_each(|r| put_u32(&mut body, r.key.dst_port)),
            Role::Numeric => {
                let j = numeric_idx;
                numeric_idx += 1;
                let mut bitmap = vec![0u8; records.len().div_ceil(8)];
                for (i, r) in records.iter().enumerate() {
                    if r.features[j].is_some() {
                        bitmap[i / 8] |= 1 << (i % 8);
                    }
                }
                body.extend_from_slice(&bitmap);
                for r in records {
                    put_u64(&mut body, r.features[j].unwrap_or(0.0).to_bits());
                }
            }
            Role::Nominal => {
                let j = nominal_idx;
                nominal_idx += 1;
                records.iter().for_each(|r| put_str(&mut body, &r.nominal[j]));
            }
            Role::BinaryLabel => {
                for r in records {
                    body.push(r.label.map(Label::as_u8).unwrap_or(LABEL_ABSENT));
                }
            }
            Role::ClassLabel => {
                for r in records {
                    match &r.class {
                        Some(c) => {
                            body.push(1);
                            put_str(&mut body, c);
                        }
                        None => body.push(0),
                    }
                }
            }
        }
    }

    let mut out = Vec::with_capacity(HEADER_LEN + body.len() + DIGEST_LEN);
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, FORMAT_VERSION);
    put_u64(&mut out, body.len() as u64);
    out.extend_from_slice(&body);
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

pub fn decode(bytes: &[u8]) -> Result<Dataset> {
    if bytes.len() < HEADER_LEN || &bytes[..8] != MAGIC {
        return Err(Error::Snapshot("not a flow snapshot".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::SnapshotVersion {
            expected: FORMAT_VERSION,
            found: version,
        });
    }
    let body_len = u64::from_le_bytes(bytes[12..20].try_into().unwrap());
    let end = usize::try_from(body_len)
        .ok()
        .and_then(|l| l.checked_add(HEADER_LEN))
        .filter(|&e| e.checked_add(DIGEST_LEN) == Some(bytes.len()))
        .ok_or_else(|| Error::Snapshot("length does not match body size".into()))?;
    if Sha256::digest(&bytes[..end]).as_slice() != &bytes[end..] {
        return Err(Error::Checksum);
    }

    let mut rd = Reader {
        buf: &bytes[HEADER_LEN..end],
    };
    let provenance = rd.str()?;
    let ncols = rd.u32()? as usize;
    let mut columns = Vec::with_capacity(ncols.min(4096));
    for _ in 0..ncols {
        let name = rd.str()?;
        let role = match rd.u8()? {
            0 => Role::Identifier(key_from_tag(rd.u8()?)?),
            1 => Role::Numeric,
            2 => Role::Nominal,
            3 => Role::BinaryLabel,
            4 => Role::ClassLabel,
            t => return Err(Error::Snapshot(format!("unknown role tag {t}"))),
        };
        let description = rd.str()?;
        columns.push(Column::new(name, role, description));
    }
    let schema = FeatureSchema::new(columns)?;
    let n = usize::try_from(rd.u64()?).map_err(|_| Error::Snapshot("record count".into()))?;
    // every record costs at least one byte per column, so this bounds bogus counts
    if n > rd.buf.len() {
        return Err(Error::Snapshot("record count exceeds body".into()));
    }

    let mut records: Vec<FlowRecord> = (0..n)
        .map(|_| FlowRecord {
            key: FlowKey::new("", 0, "", 0, ""),
            features: Vec::with_capacity(schema.numeric_count()),
            nominal: Vec::with_capacity(schema.nominal_count()),
            label: None,
            class: None,
        })
        .collect();

    for col in schema.columns() {
        match col.role {
            Role::Identifier(KeyField::SrcIp) => {
                for r in &mut records {
                    r.key.src_ip = rd.str()?;
                }
            }
            Role::Identifier(KeyField::DstIp) => {
                for r in &mut records {
                    r.key.dst_ip = rd.str()?;
                }
            }
            Role::Identifier(KeyField::Proto) => {
                for r in &mut records {
                    r.key.proto = rd.str()?;
                }
            }
            Role::Identifier(KeyField::SrcPort) => {
                for r in &mut records {
                    r.key.src_port = rd.u32()?;
                }
            }
            Role::Identifier(KeyField::DstPort) => {
                for r in &mut records {
                    r.key.dst_port = rd.u32()?;
                }
            }
            Role::Numeric => {
                let bitmap = rd.take(n.div_ceil(8))?.to_vec();
                for (i, r) in records.iter_mut().enumerate() {
                    let v = f64::from_bits(rd.u64()?);
                    let present = bitmap[i / 8] & (1 << (i % 8)) != 0;
                    r.features.push(present.then_some(v));
                }
            }
            Role::Nominal => {
                for r in &mut records {
                    r.nominal.push(rd.str()?);
                }
            }
            Role::BinaryLabel => {
                for r in &mut records {
                    r.label = match rd.u8()? {
                        LABEL_ABSENT => None,
                        v => Some(
                            Label::from_u8(v)
                                .ok_or_else(|| Error::Snapshot(format!("bad label byte {v}")))?,
                        ),
                    };
                }
            }
            Role::ClassLabel => {
                for r in &mut records {
                    r.class = match rd.u8()? {
                        0 => None,
                        1 => Some(rd.str()?),
                        v => return Err(Error::Snapshot(format!("bad class flag {v}"))),
                    };
                }
            }
        }
    }
    if !rd.buf.is_empty() {
        return Err(Error::Snapshot("trailing bytes in body".into()));
    }
    Ok(Dataset {
        schema,
        records,
        provenance,
    })
}

fn key_tag(k: KeyField) -> u8 {
    match k {
        KeyField::SrcIp => 0,
        KeyField::SrcPort => 1,
        KeyField::DstIp => 2,
        KeyField::DstPort => 3,
        KeyField::Proto => 4,
    }
}

fn key_from_tag(t: u8) -> Result<KeyField> {
    KeyField::ALL
        .get(t as usize)
        .copied()
        .ok_or_else(|| Error::Snapshot(format!("unknown key field tag {t}")))
}

fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(buf: &mut Vec<u8>, v: u64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_str(buf: &mut Vec<u8>, s: &str) {
    put_u32(buf, s.len() as u32);
    buf.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() < n {
            return Err(Error::Snapshot("truncated body".into()));
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn str(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        let bytes = self.take(len)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| Error::Snapshot("invalid utf-8".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::NORMAL_CLASS;

    fn sample() -> Dataset {
        let schema = FeatureSchema::unsw_nb15();
        let nf = schema.numeric_count();
        let mut records = Vec::new();
        for i in 0..11u32 {
            let mut features: Vec<Option<f64>> = (0..nf).map(|j| Some(i as f64 * 0.5 + j as f64)).collect();
            if i % 3 == 0 {
                features[i as usize % nf] = None;
            }
            let attack = i % 2 == 1;
            records.push(FlowRecord {
                key: FlowKey::new(format!("175.45.176.{i}"), 1000 + i, "149.171.126.16", 80, "tcp"),
                features,
                nominal: vec!["FIN".into(), "-".into()],
                label: Some(if attack { Label::Attack } else { Label::Normal }),
                class: Some(if attack { "Exploits".into() } else { NORMAL_CLASS.into() }),
            });
        }
        let mut ds = Dataset::new(schema, records);
        ds.push_provenance("unit test");
        ds
    }

    #[test]
    fn round_trip_preserves_absences() {
        let ds = sample();
        let back = decode(&encode(&ds)).unwrap();
        assert_eq!(ds, back);
        assert!(back.records[0].features.iter().any(Option::is_none));
    }

    #[test]
    fn empty_dataset() {
        let ds = Dataset::new(FeatureSchema::unsw_nb15(), Vec::new());
        let back = decode(&encode(&ds)).unwrap();
        assert_eq!(back.len(), 0);
        assert_eq!(back.schema, ds.schema);
    }

    #[test]
    fn corruption_is_detected() {
        let mut bytes = encode(&sample());
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x40;
        assert!(matches!(decode(&bytes), Err(Error::Checksum)));
    }

    #[test]
    fn version_mismatch() {
        let mut bytes = encode(&sample());
        bytes[8] = 9;
        assert!(matches!(
            decode(&bytes),
            Err(Error::SnapshotVersion { found: 9, .. })
        ));
    }

    #[test]
    fn truncated_file() {
        let bytes = encode(&sample());
        assert!(decode(&bytes[..bytes.len() - 5]).is_err());
        assert!(decode(b"FLOW").is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ds.snap");
        let ds = sample();
        let written = save_snapshot(&ds, &path).unwrap();
        assert_eq!(written, std::fs::metadata(&path).unwrap().len());
        assert!(is_snapshot(&path));
        assert_eq!(load_snapshot(&path).unwrap(), ds);
    }
}
