//! Seeded synthetic datasets for property checks and demos.

use alloc::format;
use alloc::string::ToString;
use alloc::vec::Vec;

use rand::seq::index;
use rand::Rng as _;

use crate::dataset::{DatasetManifest, OracleRecord};
use crate::error::{Error, Result};
use crate::label::{ClassId, LabelGrid};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticConfig {
    pub images: usize,
    pub class_count: u8,
    /// Inclusive range of foreground classes per image.
    pub min_classes: usize,
    pub max_classes: usize,
    pub width: usize,
    pub height: usize,
    /// Probability that a free pixel is the ignore index.
    pub ignore_rate: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            images: 1000,
            class_count: 20,
            min_classes: 1,
            max_classes: 4,
            width: 8,
            height: 8,
            ignore_rate: 0.02,
            seed: 0,
        }
    }
}

/// Image ids are `img00000`, `img00001`, ... Each image draws its class
/// count uniformly from the configured range, its classes without
/// replacement, and paints each pixel with background or one of its
/// classes. The first pixels are pinned so every drawn class is present.
pub fn synthetic_manifest(cfg: &SyntheticConfig) -> Result<DatasetManifest> {
    let pixels = cfg.width * cfg.height;
    if cfg.min_classes == 0
        || cfg.min_classes > cfg.max_classes
        || cfg.max_classes > cfg.class_count as usize
        || cfg.max_classes > pixels
    {
        return Err(Error::Config(format!(
            "cannot draw {}..={} classes of {} into {} pixels",
            cfg.min_classes, cfg.max_classes, cfg.class_count, pixels
        )));
    }
    let width = cfg.images.saturating_sub(1).to_string().len().max(5);
    let mut records = Vec::with_capacity(cfg.images);
    for n in 0..cfg.images {
        let id = format!("img{n:0width$}");
        let mut rng = seed::rng(cfg.seed, "synthetic", &id);
        let k = rng.random_range(cfg.min_classes..=cfg.max_classes);
        let classes: Vec<ClassId> = index::sample(&mut rng, cfg.class_count as usize, k)
            .into_iter()
            .map(|i| ClassId(i as u8 + 1))
            .collect();
        let mut data = Vec::with_capacity(pixels);
        for p in 0..pixels {
            let c = if p < k {
                classes[p]
            } else if rng.random_bool(cfg.ignore_rate) {
                ClassId::IGNORE
            } else {
                let pick = rng.random_range(0..=k);
                if pick == 0 {
                    ClassId::BACKGROUND
                } else {
                    classes[pick - 1]
                }
            };
            data.push(c);
        }
        records.push(OracleRecord::new(id, LabelGrid::new(cfg.width, cfg.height, data)?)?);
    }
    DatasetManifest::new(cfg.class_count, records)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_in_range() {
        let cfg = SyntheticConfig {
            images: 50,
            ..Default::default()
        };
        let a = synthetic_manifest(&cfg).unwrap();
        let b = synthetic_manifest(&cfg).unwrap();
        assert_eq!(a, b);
        for rec in a.records() {
            assert!((1..=4).contains(&rec.classes().len()));
        }
        assert_eq!(a.records()[7].image_id(), "img00007");
    }

    #[test]
    fn rejects_impossible_configs() {
        let cfg = SyntheticConfig {
            max_classes: 30,
            ..Default::default()
        };
        assert!(synthetic_manifest(&cfg).is_err());
    }
}
