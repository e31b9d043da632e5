#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use ciss_core::{ClassId, DatasetManifest, LabelGrid, OracleRecord, TaskSpec};

pub const PERSON: ClassId = ClassId(1);
pub const MOTORBIKE: ClassId = ClassId(2);
pub const CAR: ClassId = ClassId(3);

pub fn set(v: &[u8]) -> BTreeSet<ClassId> {
    v.iter().copied().map(ClassId).collect()
}

pub fn ids(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

/// 4x4 grid: a bg row, then one row per listed class, remaining rows bg.
fn venn_grid(classes: &[ClassId]) -> LabelGrid {
    let mut data = vec![ClassId::BACKGROUND; 16];
    for (r, &c) in classes.iter().enumerate() {
        for x in 0..4 {
            data[(r + 1) * 4 + x] = c;
        }
    }
    data[0] = ClassId::IGNORE;
    LabelGrid::new(4, 4, data).unwrap()
}

/// Five images over person / motorbike / car:
/// Img1 {person, motorbike, car}, Img2 {person, motorbike}, Img3 {car},
/// Img4 {person, car}, Img5 {person}.
pub fn venn_manifest() -> DatasetManifest {
    let rows: [(&str, &[ClassId]); 5] = [
        ("Img1", &[PERSON, MOTORBIKE, CAR]),
        ("Img2", &[PERSON, MOTORBIKE]),
        ("Img3", &[CAR]),
        ("Img4", &[PERSON, CAR]),
        ("Img5", &[PERSON]),
    ];
    let records = rows
        .iter()
        .map(|(id, cls)| OracleRecord::new(*id, venn_grid(cls)).unwrap())
        .collect();
    DatasetManifest::new(3, records).unwrap()
}

/// One class per task, person then motorbike then car.
pub fn venn_spec() -> TaskSpec {
    TaskSpec::new(1, 1, vec![PERSON, MOTORBIKE, CAR]).unwrap()
}

pub fn venn_overrides() -> BTreeMap<String, ClassId> {
    [("Img1", MOTORBIKE), ("Img2", MOTORBIKE), ("Img4", PERSON)]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
}
