use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

use super::{CocoError, Dataset, ImageRecord, Result};

/// Train:test proportion such as `9:1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitRatio {
    pub train: u32,
    pub test: u32,
}

impl SplitRatio {
    pub fn new(train: u32, test: u32) -> Result<Self> {
        if train == 0 || test == 0 {
            return Err(CocoError::InvalidRatio(format!("{train}:{test} must have both parts positive")));
        }
        Ok(Self { train, test })
    }

    /// `round(n * train / (train + test))`, halves rounded up.
    pub fn train_count(&self, n: usize) -> usize {
        let total = u128::from(self.train) + u128::from(self.test);
        let n = n as u128;
        ((2 * n * u128::from(self.train) + total) / (2 * total)) as usize
    }
}

impl fmt::Display for SplitRatio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.train, self.test)
    }
}

impl FromStr for SplitRatio {
    type Err = CocoError;

    fn from_str(s: &str) -> Result<Self> {
        let (a, b) = s
            .split_once(':')
            .ok_or_else(|| CocoError::InvalidRatio(format!("`{s}` is not of the form train:test")))?;
        let parse = |p: &str| {
            p.trim()
                .parse::<u32>()
                .map_err(|_| CocoError::InvalidRatio(format!("`{s}` is not of the form train:test")))
        };
        Self::new(parse(a)?, parse(b)?)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SplitOptions {
    /// Split each scene separately. The scene is the image's `scene` field
    /// when present, otherwise the directory part of `file_name`.
    pub stratify_by_scene: bool,
}

fn scene_key(img: &ImageRecord) -> String {
    match img.extra.get("scene") {
        Some(Value::String(s)) => s.clone(),
        Some(v @ Value::Number(_)) => v.to_string(),
        _ => img
            .file_name
            .rsplit_once('/')
            .map(|(dir, _)| dir.to_string())
            .unwrap_or_default(),
    }
}

/// Splits by whole images using a seeded shuffle.
pub fn split_dataset(d: &Dataset, ratio: SplitRatio, seed: u64, opts: SplitOptions) -> Result<(Dataset, Dataset)> {
    if d.images.is_empty() {
        return Err(CocoError::EmptyDataset);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut groups: BTreeMap<String, Vec<u64>> = BTreeMap::new();
    for img in &d.images {
        let key = if opts.stratify_by_scene { scene_key(img) } else { String::new() };
        groups.entry(key).or_default().push(img.id);
    }
    let mut train_ids = BTreeSet::new();
    for ids in groups.values_mut() {
        ids.sort_unstable();
        ids.shuffle(&mut rng);
        train_ids.extend(ids.iter().take(ratio.train_count(ids.len())).copied());
    }
    let part = |in_train: bool| Dataset {
        info: d.info.clone(),
        licenses: d.licenses.clone(),
        images: d
            .images
            .iter()
            .filter(|i| train_ids.contains(&i.id) == in_train)
            .cloned()
            .collect(),
        annotations: d
            .annotations
            .iter()
            .filter(|a| train_ids.contains(&a.image_id) == in_train)
            .cloned()
            .collect(),
        categories: d.categories.clone(),
        extra: d.extra.clone(),
    };
    Ok((part(true), part(false)))
}
