use std::collections::HashSet;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::DatasetManifest;
use crate::error::{Error, Result};

pub const DEFAULT_RATIOS: (f64, f64, f64) = (0.7, 0.1, 0.2);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitPart {
    Train,
    Val,
    Test,
}

/// Disjoint train/validation/test partition of sample ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub seed: u64,
    pub ratios: (f64, f64, f64),
    pub train_ids: Vec<String>,
    pub val_ids: Vec<String>,
    pub test_ids: Vec<String>,
}

/// `floor(ratio * n)` that tolerates ratios one ulp below an exact multiple.
fn floor_share(ratio: f64, n: usize) -> usize {
    ((ratio * n as f64) + 1e-9).floor() as usize
}

pub fn split_sizes(n: usize, ratios: (f64, f64, f64)) -> (usize, usize, usize) {
    let train = floor_share(ratios.0, n);
    let val = floor_share(ratios.1, n);
    (train, val, n - train - val)
}

fn check_ratios(r: (f64, f64, f64)) -> Result<()> {
    let parts = [r.0, r.1, r.2];
    if parts.iter().any(|v| !v.is_finite() || *v < 0.0) || ((r.0 + r.1 + r.2) - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidConfig(format!("split ratios {r:?} must be non-negative and sum to 1")));
    }
    Ok(())
}

/// Seeded shuffle of every sample id followed by floor/floor/remainder
/// slicing. Not stratified.
pub fn make_splits(manifest: &DatasetManifest, ratios: (f64, f64, f64), seed: u64) -> Result<SplitAssignment> {
    check_ratios(ratios)?;
    let n = manifest.len();
    if n < 3 {
        return Err(Error::TooFewSamples { needed: 3, got: n });
    }
    let mut ids: Vec<String> = manifest.records().iter().map(|r| r.sample_id.clone()).collect();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (a, b, _) = split_sizes(n, ratios);
    let test_ids = ids.split_off(a + b);
    let val_ids = ids.split_off(a);
    Ok(SplitAssignment {
        seed,
        ratios,
        train_ids: ids,
        val_ids,
        test_ids,
    })
}

impl SplitAssignment {
    pub fn len(&self) -> usize {
        self.train_ids.len() + self.val_ids.len() + self.test_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn ids(&self, part: SplitPart) -> &[String] {
        match part {
            SplitPart::Train => &self.train_ids,
            SplitPart::Val => &self.val_ids,
            SplitPart::Test => &self.test_ids,
        }
    }

    pub fn part_of(&self, id: &str) -> Option<SplitPart> {
        [SplitPart::Train, SplitPart::Val, SplitPart::Test]
            .into_iter()
            .find(|&p| self.ids(p).iter().any(|s| s == id))
    }

    /// Pairwise disjointness and the floor sizing rule.
    pub fn validate(&self) -> Result<()> {
        check_ratios(self.ratios)?;
        let mut seen = HashSet::new();
        for id in self.train_ids.iter().chain(&self.val_ids).chain(&self.test_ids) {
            if !seen.insert(id.as_str()) {
                return Err(Error::Leakage(format!("sample `{id}` appears in more than one split")));
            }
        }
        let want = split_sizes(self.len(), self.ratios);
        let got = (self.train_ids.len(), self.val_ids.len(), self.test_ids.len());
        if want != got {
            return Err(Error::InvalidInput(format!("split sizes {got:?} differ from {want:?}")));
        }
        Ok(())
    }

    /// Fails if any held-out patch comes from a training sample.
    pub fn check_patch_leakage<'a>(
        &self,
        train_sources: impl IntoIterator<Item = &'a str>,
        held_out_sources: impl IntoIterator<Item = &'a str>,
    ) -> Result<()> {
        let train: HashSet<&str> = train_sources.into_iter().collect();
        for s in held_out_sources {
            if train.contains(s) {
                return Err(Error::Leakage(format!("held-out patch shares sample `{s}` with training")));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("splits serialize")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let s: Self = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()).map_err(|e| Error::write(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{SampleKind, SampleRecord};
    use crate::sensor::SensorClass;
    use proptest::prelude::*;

    fn manifest(n: usize) -> DatasetManifest {
        let records = (0..n)
            .map(|i| SampleRecord {
                sample_id: format!("{}/{i:04}.png", SensorClass::ALL[i % 8]),
                sensor: SensorClass::ALL[i % 8],
                path: format!("{i}.png").into(),
                kind: SampleKind::Raw,
                width: 96,
                height: 96,
            })
            .collect();
        DatasetManifest::new(records, Some(1))
    }

    #[test]
    fn sizes() {
        assert_eq!(split_sizes(960, DEFAULT_RATIOS), (672, 96, 192));
        assert_eq!(split_sizes(10, DEFAULT_RATIOS), (7, 1, 2));
        let s = make_splits(&manifest(10), DEFAULT_RATIOS, 3).unwrap();
        assert_eq!((s.train_ids.len(), s.val_ids.len(), s.test_ids.len()), (7, 1, 2));
    }

    #[test]
    fn too_few() {
        assert!(matches!(
            make_splits(&manifest(2), DEFAULT_RATIOS, 0),
            Err(Error::TooFewSamples { needed: 3, got: 2 })
        ));
    }

    #[test]
    fn json_roundtrip_and_tamper() {
        let s = make_splits(&manifest(30), DEFAULT_RATIOS, 5).unwrap();
        assert_eq!(SplitAssignment::from_json(&s.to_json()).unwrap(), s);
        let mut bad = s.clone();
        bad.val_ids[0] = bad.train_ids[0].clone();
        assert!(matches!(SplitAssignment::from_json(&bad.to_json()), Err(Error::Leakage(_))));
    }

    proptest! {
        #[test]
        fn partition_properties(n in 3usize..400, seed in any::<u64>()) {
            let m = manifest(n);
            let s = make_splits(&m, DEFAULT_RATIOS, seed).unwrap();
            s.validate().unwrap();
            prop_assert_eq!(s.len(), n);
            prop_assert_eq!(s.train_ids.len(), n * 7 / 10);
            prop_assert_eq!(s.val_ids.len(), n / 10);
            prop_assert_eq!(&make_splits(&m, DEFAULT_RATIOS, seed).unwrap(), &s);
        }
    }
}
