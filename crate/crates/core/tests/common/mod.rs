//! Straight-line reference implementations used as test oracles. Nothing here
//! calls into the library's numeric code paths.

#![allow(dead_code, clippy::needless_range_loop)]

use std::collections::BTreeMap;

use netforensic::flow::{Dataset, KeyField};

pub fn kernel(x: f64, sigma: f64) -> f64 {
    let z = x / sigma;
    (-0.5 * z * z).exp() * (1.0 / (2.0 * std::f64::consts::PI).sqrt()) / sigma
}

pub fn correntropy(a: &[f64], b: &[f64], sigma: f64) -> f64 {
    let mut acc = 0.0;
    for i in 0..a.len() {
        acc += kernel(a[i] - b[i], sigma);
    }
    acc / a.len() as f64
}

/// Chi-square with every expected count recomputed from raw sums.
pub fn chi_square(observed: &[Vec<u64>]) -> f64 {
    let rows = observed.len();
    let cols = observed[0].len();
    let mut total = 0u64;
    for r in observed {
        for v in r {
            total += v;
        }
    }
    let mut chi = 0.0;
    for i in 0..rows {
        let mut row_sum = 0u64;
        for j in 0..cols {
            row_sum += observed[i][j];
        }
        for j in 0..cols {
            let mut col_sum = 0u64;
            for r in observed {
                col_sum += r[j];
            }
            let e = (row_sum * col_sum) as f64 / total as f64;
            if e != 0.0 {
                let o = observed[i][j] as f64;
                chi += (o - e) * (o - e) / e;
            }
        }
    }
    chi
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
    }
}

/// Group-by using string keys.
pub fn group_by(dataset: &Dataset, fields: &[KeyField]) -> BTreeMap<String, u64> {
    let mut out = BTreeMap::new();
    for r in &dataset.records {
        let mut key = String::new();
        for f in fields {
            let part = match f {
                KeyField::SrcIp => r.key.src_ip.clone(),
                KeyField::SrcPort => r.key.src_port.to_string(),
                KeyField::DstIp => r.key.dst_ip.clone(),
                KeyField::DstPort => r.key.dst_port.to_string(),
                KeyField::Proto => r.key.proto.clone(),
            };
            key.push_str(&part);
            key.push('|');
        }
        *out.entry(key).or_insert(0) += 1;
    }
    out
}

/// Min-max scale, mean reference, per-record correntropy, mean and n−1 sd.
pub fn baseline_stats(rows: &[Vec<f64>], sigma: Option<f64>) -> (f64, f64, f64) {
    let n = rows.len();
    let d = rows[0].len();
    let mut mins = vec![f64::INFINITY; d];
    let mut maxs = vec![f64::NEG_INFINITY; d];
    for r in rows {
        for j in 0..d {
            if r[j] < mins[j] {
                mins[j] = r[j];
            }
            if r[j] > maxs[j] {
                maxs[j] = r[j];
            }
        }
    }
    let mut scaled = vec![vec![0.0; d]; n];
    for i in 0..n {
        for j in 0..d {
            scaled[i][j] = if maxs[j] > mins[j] {
                (rows[i][j] - mins[j]) / (maxs[j] - mins[j])
            } else {
                0.0
            };
        }
    }
    let mut reference = vec![0.0; d];
    for j in 0..d {
        for i in 0..n {
            reference[j] += scaled[i][j];
        }
        reference[j] /= n as f64;
    }
    let sigma = sigma.unwrap_or_else(|| {
        let mut pool = Vec::new();
        for i in 0..n {
            for j in 0..d {
                pool.push(scaled[i][j] - reference[j]);
            }
        }
        let m = pool.len() as f64;
        let mean = pool.iter().sum::<f64>() / m;
        let var = pool.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0);
        (1.06 * var.sqrt() * (d as f64).powf(-0.2)).max(1e-6)
    });
    let values: Vec<f64> = scaled.iter().map(|r| correntropy(r, &reference, sigma)).collect();
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
    (sigma, mean, var.sqrt())
}
