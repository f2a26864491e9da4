use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DatasetManifest, VideoRecord};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
    Unlabelled,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
            Split::Unlabelled => "unlabelled",
        })
    }
}

/// Patient id → split. Total over the manifest's patients and disjoint by
/// construction (a map holds one split per patient).
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub assignments: BTreeMap<String, Split>,
}

impl SplitAssignment {
    pub fn get(&self, patient_id: &str) -> Option<Split> {
        self.assignments.get(patient_id).copied()
    }

    pub fn patients(&self, split: Split) -> Vec<&str> {
        self.assignments
            .iter()
            .filter(|(_, &s)| s == split)
            .map(|(p, _)| p.as_str())
            .collect()
    }

    pub fn count(&self, split: Split) -> usize {
        self.assignments.values().filter(|&&s| s == split).count()
    }

    /// Records whose patient is assigned to any of `splits`, in manifest order.
    pub fn records<'a>(&self, manifest: &'a DatasetManifest, splits: &[Split]) -> Vec<&'a VideoRecord> {
        manifest
            .records
            .iter()
            .filter(|r| self.get(&r.patient_id).is_some_and(|s| splits.contains(&s)))
            .collect()
    }
}

/// Splits labelled patients into train/validation/test by cumulative
/// fraction of the patient count; patients with no labelled video at all
/// go to [`Split::Unlabelled`].
///
/// Patient ids are sorted before the seeded shuffle, so the result does not
/// depend on manifest order.
pub fn split_by_patient(
    manifest: &DatasetManifest,
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<SplitAssignment> {
    let (ft, fv, fe) = fractions;
    for f in [ft, fv, fe] {
        if !(f > 0.0 && f < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "split fractions must lie in (0, 1), got {fractions:?}"
            )));
        }
    }
    if ((ft + fv + fe) - 1.0).abs() > 1e-6 {
        return Err(Error::InvalidArgument(format!(
            "split fractions must sum to 1, got {fractions:?}"
        )));
    }

    let labelled: BTreeSet<&str> = manifest
        .records
        .iter()
        .filter(|r| r.is_labelled())
        .map(|r| r.patient_id.as_str())
        .collect();
    let mut assignments: BTreeMap<String, Split> = manifest
        .patients()
        .into_iter()
        .filter(|p| !labelled.contains(p))
        .map(|p| (p.to_string(), Split::Unlabelled))
        .collect();

    let mut patients: Vec<&str> = labelled.into_iter().collect();
    let n = patients.len();
    if n < 3 {
        return Err(Error::InsufficientPatients { needed: 3, found: n });
    }
    patients.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let b1 = ((n as f64 * ft).round() as usize).clamp(1, n - 2);
    let b2 = ((n as f64 * (ft + fv)).round() as usize).clamp(b1 + 1, n - 1);
    for (k, p) in patients.into_iter().enumerate() {
        let split = if k < b1 {
            Split::Train
        } else if k < b2 {
            Split::Validation
        } else {
            Split::Test
        };
        assignments.insert(p.to_string(), split);
    }
    Ok(SplitAssignment { assignments })
}
