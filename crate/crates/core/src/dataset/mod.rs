//! Labeled sample-image corpora: manifests, directory ingestion and the
//! synthetic sensor generator.

mod synth;

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::sensor::SensorClass;

pub use synth::{
    default_profiles, fixed_pattern_noise, generate_synthetic_dataset, render_sample, SyntheticSensorProfile,
    MIN_SYNTHETIC_SIZE,
};

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

const IMAGE_EXTENSIONS: &[&str] = &["png", "bmp", "jpg", "jpeg", "tif", "tiff", "pgm"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleKind {
    Raw,
    Roi,
}

impl std::str::FromStr for SampleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "raw" => Ok(SampleKind::Raw),
            "roi" => Ok(SampleKind::Roi),
            other => Err(Error::InvalidInput(format!("unknown sample kind `{other}` (expected raw or roi)"))),
        }
    }
}

impl std::fmt::Display for SampleKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SampleKind::Raw => "raw",
            SampleKind::Roi => "roi",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub sample_id: String,
    pub sensor: SensorClass,
    pub path: PathBuf,
    pub kind: SampleKind,
    pub width: usize,
    pub height: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    records: Vec<SampleRecord>,
    created_with_seed: Option<u64>,
    checksum: String,
}

#[derive(Serialize, Deserialize)]
struct ManifestFile {
    schema_version: u32,
    sensor_order: Vec<String>,
    records: Vec<SampleRecord>,
    seed: Option<u64>,
    checksum: String,
}

/// SHA-256 over the canonical JSON encoding of the record list.
pub fn records_checksum(records: &[SampleRecord]) -> String {
    let bytes = serde_json::to_vec(records).expect("records serialize");
    hex::encode(Sha256::digest(&bytes))
}

impl DatasetManifest {
    pub fn new(records: Vec<SampleRecord>, created_with_seed: Option<u64>) -> Self {
        let checksum = records_checksum(&records);
        Self {
            records,
            created_with_seed,
            checksum,
        }
    }

    pub fn records(&self) -> &[SampleRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn created_with_seed(&self) -> Option<u64> {
        self.created_with_seed
    }

    pub fn checksum(&self) -> &str {
        &self.checksum
    }

    pub fn get(&self, sample_id: &str) -> Option<&SampleRecord> {
        self.records.iter().find(|r| r.sample_id == sample_id)
    }

    /// Records per sensor in canonical order; sensors without records are omitted.
    pub fn by_sensor(&self) -> BTreeMap<SensorClass, Vec<&SampleRecord>> {
        let mut map: BTreeMap<SensorClass, Vec<&SampleRecord>> = BTreeMap::new();
        for r in &self.records {
            map.entry(r.sensor).or_default().push(r);
        }
        map
    }

    pub fn to_json(&self) -> String {
        let file = ManifestFile {
            schema_version: MANIFEST_SCHEMA_VERSION,
            sensor_order: SensorClass::order(),
            records: self.records.clone(),
            seed: self.created_with_seed,
            checksum: self.checksum.clone(),
        };
        serde_json::to_string_pretty(&file).expect("manifest serializes")
    }

    /// Parses a manifest file. The stored checksum is kept verbatim so that
    /// [`validate_manifest`] can report tampering.
    pub fn from_json(text: &str) -> Result<Self> {
        let file: ManifestFile = serde_json::from_str(text)?;
        if file.schema_version != MANIFEST_SCHEMA_VERSION {
            return Err(Error::InvalidInput(format!(
                "unsupported manifest schema version {}",
                file.schema_version
            )));
        }
        if file.sensor_order != SensorClass::order() {
            return Err(Error::InvalidInput("manifest sensor_order differs from the canonical order".into()));
        }
        Ok(Self {
            records: file.records,
            created_with_seed: file.seed,
            checksum: file.checksum,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()).map_err(|e| Error::write(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

/// A file that could not be ingested.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecordError {
    pub path: PathBuf,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct ScanOutcome {
    pub manifest: DatasetManifest,
    pub errors: Vec<RecordError>,
}

fn collect_image_files(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)?.map(|e| e.map(|e| e.path())).collect::<std::io::Result<_>>()?;
    entries.sort();
    for path in entries {
        if path.is_dir() {
            collect_image_files(&path, out)?;
        } else if path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        {
            out.push(path);
        }
    }
    Ok(())
}

/// Builds a manifest from every image file below `root`, sorted by relative
/// path. Sample ids are namespaced as `<SENSOR>/<relative path>`.
pub fn scan_directory(root: impl AsRef<Path>, sensor: SensorClass, kind: SampleKind) -> Result<ScanOutcome> {
    let root = root.as_ref();
    if !root.is_dir() {
        return Err(Error::InvalidInput(format!("{} is not a directory", root.display())));
    }
    let mut files = Vec::new();
    collect_image_files(root, &mut files)?;

    let mut rel: Vec<(String, PathBuf)> = files
        .into_iter()
        .map(|p| {
            let r = p.strip_prefix(root).unwrap_or(&p);
            let key = r.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
            (key, p)
        })
        .collect();
    rel.sort();

    let mut records = Vec::new();
    let mut errors = Vec::new();
    for (key, path) in rel {
        match image::image_dimensions(&path) {
            Ok((w, h)) if w > 0 && h > 0 => records.push(SampleRecord {
                sample_id: format!("{}/{}", sensor.name(), key),
                sensor,
                path,
                kind,
                width: w as usize,
                height: h as usize,
            }),
            Ok((w, h)) => errors.push(RecordError {
                path,
                message: format!("degenerate dimensions {w}x{h}"),
            }),
            Err(e) => errors.push(RecordError {
                path,
                message: e.to_string(),
            }),
        }
    }
    if records.is_empty() {
        return Err(Error::EmptyDataset(format!("no readable images under {}", root.display())));
    }
    Ok(ScanOutcome {
        manifest: DatasetManifest::new(records, None),
        errors,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DimensionAnomaly {
    pub sample_id: String,
    pub recorded: (usize, usize),
    /// Dimensions read from the file header, when the file could be read.
    pub actual: Option<(usize, usize)>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub valid: bool,
    pub duplicate_ids: Vec<String>,
    pub missing_files: Vec<PathBuf>,
    pub dimension_anomalies: Vec<DimensionAnomaly>,
    pub checksum_mismatch: bool,
}

/// Checks a manifest against the filesystem. Problems are collected, never raised.
pub fn validate_manifest(manifest: &DatasetManifest) -> ValidationReport {
    let mut report = ValidationReport::default();
    let mut seen = HashSet::new();
    let mut dup_seen = HashSet::new();
    for r in manifest.records() {
        if !seen.insert(r.sample_id.as_str()) && dup_seen.insert(r.sample_id.as_str()) {
            report.duplicate_ids.push(r.sample_id.clone());
        }
        if !r.path.is_file() {
            report.missing_files.push(r.path.clone());
            continue;
        }
        let actual = image::image_dimensions(&r.path).ok().map(|(w, h)| (w as usize, h as usize));
        if r.width == 0 || r.height == 0 || actual != Some((r.width, r.height)) {
            report.dimension_anomalies.push(DimensionAnomaly {
                sample_id: r.sample_id.clone(),
                recorded: (r.width, r.height),
                actual,
            });
        }
    }
    report.checksum_mismatch = records_checksum(manifest.records()) != manifest.checksum();
    report.valid = report.duplicate_ids.is_empty()
        && report.missing_files.is_empty()
        && report.dimension_anomalies.is_empty()
        && !report.checksum_mismatch;
    report
}

/// Concatenates manifests, then orders records by canonical sensor index
/// (stable within a sensor). A single input is returned unchanged.
pub fn merge_manifests(manifests: &[DatasetManifest]) -> Result<DatasetManifest> {
    match manifests {
        [] => return Err(Error::EmptyDataset("nothing to merge".into())),
        [one] => return Ok(one.clone()),
        _ => {}
    }
    let mut seen = HashSet::new();
    let mut records = Vec::with_capacity(manifests.iter().map(DatasetManifest::len).sum());
    for m in manifests {
        for r in m.records() {
            if !seen.insert(r.sample_id.clone()) {
                return Err(Error::MergeConflict(r.sample_id.clone()));
            }
            records.push(r.clone());
        }
    }
    records.sort_by_key(|r| r.sensor.index());
    let first_seed = manifests[0].created_with_seed();
    let seed = if manifests.iter().all(|m| m.created_with_seed() == first_seed) {
        first_seed
    } else {
        None
    };
    Ok(DatasetManifest::new(records, seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::GrayImage;

    fn write_images(dir: &Path, n: usize) {
        for i in 0..n {
            let img = GrayImage::from_fn(20 + i, 10, |x, y| (x * y % 256) as u8);
            img.save_png(dir.join(format!("img_{i:03}.png"))).unwrap();
        }
    }

    #[test]
    fn scan_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        write_images(dir.path(), 3);
        let a = scan_directory(dir.path(), SensorClass::Utfvp, SampleKind::Raw).unwrap();
        let b = scan_directory(dir.path(), SensorClass::Utfvp, SampleKind::Raw).unwrap();
        assert_eq!(a.manifest, b.manifest);
        assert_eq!(a.manifest.checksum(), b.manifest.checksum());
        assert_eq!(a.manifest.len(), 3);
        assert_eq!(a.manifest.records()[1].sample_id, "UTFVP/img_001.png");
        assert_eq!(a.manifest.records()[1].width, 21);
        assert!(a.errors.is_empty());
    }

    #[test]
    fn scan_empty_directory() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            scan_directory(dir.path(), SensorClass::Idiap, SampleKind::Roi),
            Err(Error::EmptyDataset(_))
        ));
    }

    #[test]
    fn scan_reports_unreadable_files() {
        let dir = tempfile::tempdir().unwrap();
        write_images(dir.path(), 2);
        fs::write(dir.path().join("broken.png"), b"not a png").unwrap();
        let out = scan_directory(dir.path(), SensorClass::Idiap, SampleKind::Roi).unwrap();
        assert_eq!(out.manifest.len(), 2);
        assert_eq!(out.errors.len(), 1);
        assert!(out.errors[0].path.ends_with("broken.png"));
    }

    #[test]
    fn validation_findings() {
        let dir = tempfile::tempdir().unwrap();
        write_images(dir.path(), 3);
        let m = scan_directory(dir.path(), SensorClass::Sdumla, SampleKind::Raw).unwrap().manifest;
        assert!(validate_manifest(&m).valid);

        let mut recs = m.records().to_vec();
        recs.push(recs[0].clone());
        let dup = DatasetManifest::new(recs, None);
        let rep = validate_manifest(&dup);
        assert!(!rep.valid);
        assert_eq!(rep.duplicate_ids, vec!["SDUMLA/img_000.png".to_string()]);

        fs::remove_file(dir.path().join("img_002.png")).unwrap();
        let rep = validate_manifest(&m);
        assert!(!rep.valid);
        assert_eq!(rep.missing_files.len(), 1);

        let mut recs = m.records()[..2].to_vec();
        recs[0].width += 1;
        let rep = validate_manifest(&DatasetManifest::new(recs, None));
        assert_eq!(rep.dimension_anomalies.len(), 1);
        assert_eq!(rep.dimension_anomalies[0].actual, Some((20, 10)));
    }

    #[test]
    fn tampered_checksum_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        write_images(dir.path(), 2);
        let m = scan_directory(dir.path(), SensorClass::Sdumla, SampleKind::Raw).unwrap().manifest;
        let text = m.to_json().replace(m.checksum(), &"0".repeat(64));
        let parsed = DatasetManifest::from_json(&text).unwrap();
        assert!(validate_manifest(&parsed).checksum_mismatch);
    }

    fn fake(sensor: SensorClass, n: usize) -> DatasetManifest {
        let recs = (0..n)
            .map(|i| SampleRecord {
                sample_id: format!("{}/{i}", sensor.name()),
                sensor,
                path: PathBuf::from(format!("/nowhere/{i}.png")),
                kind: SampleKind::Raw,
                width: 96,
                height: 96,
            })
            .collect();
        DatasetManifest::new(recs, Some(3))
    }

    #[test]
    fn merge_counts_and_order() {
        let parts: Vec<_> = SensorClass::ALL.iter().rev().map(|&s| fake(s, 120)).collect();
        let merged = merge_manifests(&parts).unwrap();
        assert_eq!(merged.len(), 960);
        let idx: Vec<usize> = merged.records().iter().map(|r| r.sensor.index()).collect();
        assert!(idx.windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(merged.created_with_seed(), Some(3));
    }

    #[test]
    fn merge_identity_and_conflict() {
        let m = fake(SensorClass::Palmar, 5);
        assert_eq!(merge_manifests(std::slice::from_ref(&m)).unwrap(), m);
        assert!(matches!(
            merge_manifests(&[m.clone(), m]),
            Err(Error::MergeConflict(id)) if id == "PALMAR/0"
        ));
    }

    #[test]
    fn manifest_json_roundtrip() {
        let m = fake(SensorClass::Mmcbnu, 4);
        let back = DatasetManifest::from_json(&m.to_json()).unwrap();
        assert_eq!(back, m);
        let v: serde_json::Value = serde_json::from_str(&m.to_json()).unwrap();
        for key in ["schema_version", "sensor_order", "records", "seed", "checksum"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
    }
}
