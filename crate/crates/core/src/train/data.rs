use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::dataset::DatasetManifest;
use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::model::Tensor;
use crate::preprocess::{extract_patches, preprocess_image, Patch, PatchPolicy, PreprocessConfig};

#[derive(Debug, Clone)]
struct StoredSample {
    label: usize,
    patches: Vec<Patch>,
}

/// Patches of every sample, keyed by sample id, with the sample's label.
#[derive(Debug, Clone)]
pub struct PatchStore {
    patch_size: usize,
    samples: BTreeMap<String, StoredSample>,
}

impl PatchStore {
    pub fn new(patch_size: usize) -> Self {
        Self {
            patch_size,
            samples: BTreeMap::new(),
        }
    }

    pub fn patch_size(&self) -> usize {
        self.patch_size
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn patch_total(&self) -> usize {
        self.samples.values().map(|s| s.patches.len()).sum()
    }

    pub fn insert(&mut self, sample_id: &str, label: usize, patches: Vec<Patch>) -> Result<()> {
        if let Some(p) = patches.iter().find(|p| p.size != self.patch_size || p.source_id != sample_id) {
            return Err(Error::InvalidInput(format!(
                "patch of `{}` ({}px) does not belong to `{sample_id}` at {}px",
                p.source_id, p.size, self.patch_size
            )));
        }
        if self.samples.insert(sample_id.to_string(), StoredSample { label, patches }).is_some() {
            return Err(Error::InvalidInput(format!("sample `{sample_id}` inserted twice")));
        }
        Ok(())
    }

    /// Patches of `ids` in the given order, labelled by their source sample.
    pub fn gather(&self, ids: &[String]) -> Result<PatchSet> {
        let mut set = PatchSet::new(self.patch_size);
        for id in ids {
            let s = self
                .samples
                .get(id)
                .ok_or_else(|| Error::InvalidInput(format!("no patches for sample `{id}`")))?;
            for p in &s.patches {
                set.push(p, s.label);
            }
        }
        Ok(set)
    }
}

/// Preprocesses and cuts `(sample_id, label, image)` triples in parallel;
/// the result does not depend on scheduling.
pub fn build_patch_store(
    items: Vec<(String, usize, GrayImage)>,
    preprocess: Option<&PreprocessConfig>,
    patch_size: usize,
) -> Result<PatchStore> {
    let cut: Vec<(String, usize, Vec<Patch>)> = items
        .into_par_iter()
        .map(|(id, label, img)| {
            let img = match preprocess {
                Some(cfg) => preprocess_image(&img, cfg)?,
                None => img,
            };
            let patches = extract_patches(&img, patch_size, PatchPolicy::GridNonOverlap, &id)?;
            Ok((id, label, patches))
        })
        .collect::<Result<_>>()?;
    let mut store = PatchStore::new(patch_size);
    for (id, label, patches) in cut {
        store.insert(&id, label, patches)?;
    }
    Ok(store)
}

/// Loads every manifest image, labels it by sensor index and cuts patches.
pub fn load_patch_store(manifest: &DatasetManifest, preprocess: Option<&PreprocessConfig>, patch_size: usize) -> Result<PatchStore> {
    let items = manifest
        .records()
        .par_iter()
        .map(|r| Ok((r.sample_id.clone(), r.sensor.index(), GrayImage::load(&r.path)?)))
        .collect::<Result<Vec<_>>>()?;
    build_patch_store(items, preprocess, patch_size)
}

/// Flat batch of square patches scaled to `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchSet {
    size: usize,
    pixels: Vec<f32>,
    labels: Vec<usize>,
    sources: Vec<String>,
}

impl PatchSet {
    pub fn new(size: usize) -> Self {
        Self {
            size,
            pixels: Vec::new(),
            labels: Vec::new(),
            sources: Vec::new(),
        }
    }

    pub fn push(&mut self, patch: &Patch, label: usize) {
        assert_eq!(patch.size, self.size, "patch size");
        self.pixels.extend(patch.pixels.iter().map(|&v| f32::from(v) / 255.0));
        self.labels.push(label);
        self.sources.push(patch.source_id.clone());
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn sources(&self) -> &[String] {
        &self.sources
    }

    /// First `n` patches.
    pub fn truncated(&self, n: usize) -> Self {
        let n = n.min(self.len());
        let px = self.size * self.size;
        Self {
            size: self.size,
            pixels: self.pixels[..n * px].to_vec(),
            labels: self.labels[..n].to_vec(),
            sources: self.sources[..n].to_vec(),
        }
    }

    /// Patches at `indices` as an NHWC tensor with one channel.
    pub fn batch(&self, indices: &[usize]) -> Tensor<f32> {
        let px = self.size * self.size;
        let mut data = Vec::with_capacity(indices.len() * px);
        for &i in indices {
            data.extend_from_slice(&self.pixels[i * px..(i + 1) * px]);
        }
        Tensor::from_vec(indices.len(), self.size, self.size, 1, data).expect("consistent batch")
    }

    pub fn batch_labels(&self, indices: &[usize]) -> Vec<usize> {
        indices.iter().map(|&i| self.labels[i]).collect()
    }
}
