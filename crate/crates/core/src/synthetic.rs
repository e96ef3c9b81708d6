//! Seeded synthetic flow data with a known normal/attack separation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::flow::{Column, Dataset, FeatureSchema, FlowKey, FlowRecord, KeyField, Label, Role, NORMAL_CLASS};

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianClusters {
    pub n_normal: usize,
    pub n_attack: usize,
    pub dims: usize,
    /// Every coordinate of the attack cluster centre.
    pub attack_offset: f64,
    pub seed: u64,
}

impl Default for GaussianClusters {
    fn default() -> Self {
        GaussianClusters {
            n_normal: 5000,
            n_attack: 5000,
            dims: 8,
            attack_offset: 3.0,
            seed: 2017,
        }
    }
}

pub const ATTACK_CLASS: &str = "Generic";

pub fn schema(dims: usize) -> FeatureSchema {
    let mut cols: Vec<Column> = KeyField::ALL
        .iter()
        .map(|f| Column::new(f.name(), Role::Identifier(*f), ""))
        .collect();
    cols.extend((0..dims).map(|i| Column::new(format!("f{i}"), Role::Numeric, "synthetic feature")));
    cols.push(Column::new("attack_cat", Role::ClassLabel, ""));
    cols.push(Column::new("label", Role::BinaryLabel, ""));
    FeatureSchema::new(cols).expect("synthetic schema is valid")
}

impl GaussianClusters {
    /// Normal records ~ N(0, I), attacks ~ N(offset·1, I); normal records
    /// first, then attacks.
    pub fn generate(&self) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut records = Vec::with_capacity(self.n_normal + self.n_attack);
        for i in 0..self.n_normal + self.n_attack {
            let attack = i >= self.n_normal;
            let centre = if attack { self.attack_offset } else { 0.0 };
            let features = (0..self.dims)
                .map(|_| Some(centre + rng.sample::<f64, _>(StandardNormal)))
                .collect();
            let src = if attack {
                format!("175.45.176.{}", rng.random_range(0..4))
            } else {
                format!("59.166.0.{}", rng.random_range(0..10))
            };
            let dst = format!("149.171.126.{}", rng.random_range(0..20));
            let key = FlowKey::new(
                src,
                rng.random_range(1024..65536),
                dst,
                [80, 53, 111, 179, 5060][rng.random_range(0..5)],
                if rng.random_bool(0.8) { "tcp" } else { "udp" },
            );
            let (label, class) = if attack {
                (Label::Attack, ATTACK_CLASS)
            } else {
                (Label::Normal, NORMAL_CLASS)
            };
            records.push(FlowRecord::new(key, features).with_label(label).with_class(class));
        }
        let mut ds = Dataset::new(schema(self.dims), records);
        ds.push_provenance(format!(
            "synthetic gaussian clusters: normal={} attack={} dims={} offset={} seed={}",
            self.n_normal, self.n_attack, self.dims, self.attack_offset, self.seed
        ));
        ds
    }
}
