//! Label-stratified train/dev/test assignment.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use thiserror::Error;

use crate::domain::{DatasetManifest, RiskLabel, Split};
use crate::rng::{stream, Stream};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SplitError {
    #[error("split ratios must be positive, got {0:?}")]
    ZeroRatio([u32; 3]),
    #[error("label class {label:?} has {size} subjects, fewer than the 3 splits")]
    ClassTooSmall { label: RiskLabel, size: usize },
}

/// Sizes of the three parts for `n` items under `ratios`. Floors each share;
/// the remainder goes to train.
pub fn split_sizes(n: usize, ratios: [u32; 3]) -> [usize; 3] {
    let total: u64 = ratios.iter().map(|&r| r as u64).sum();
    let dev = (n as u64 * ratios[1] as u64 / total) as usize;
    let test = (n as u64 * ratios[2] as u64 / total) as usize;
    [n - dev - test, dev, test]
}

/// Assigns splits stratified by label. Split sizes follow [`split_sizes`] over
/// all subjects. If any subject already carries a split, the manifest is
/// returned untouched.
pub fn split_dataset(manifest: &DatasetManifest, ratios: [u32; 3], seed: u64) -> Result<DatasetManifest, SplitError> {
    if ratios.contains(&0) {
        return Err(SplitError::ZeroRatio(ratios));
    }
    if manifest.subjects.iter().any(|s| s.split.is_some()) {
        return Ok(manifest.clone());
    }
    let mut out = manifest.clone();
    let mut rng = stream(seed, Stream::Split);
    // Shuffle within each class, then merge the classes by fractional rank so
    // every prefix of the merged order holds both labels in proportion.
    let mut order: Vec<(u64, u64, usize)> = Vec::with_capacity(out.subjects.len());
    for label in [RiskLabel::NonRisk, RiskLabel::AtRisk] {
        let mut members: Vec<usize> =
            out.subjects.iter().enumerate().filter(|(_, s)| s.label == label).map(|(i, _)| i).collect();
        if members.is_empty() {
            continue;
        }
        if members.len() < 3 {
            return Err(SplitError::ClassTooSmall { label, size: members.len() });
        }
        members.shuffle(&mut rng);
        let size = members.len() as u64;
        for (rank, i) in members.into_iter().enumerate() {
            // (2 rank + 1) / (2 size), compared exactly by cross-multiplication below.
            order.push((2 * rank as u64 + 1, 2 * size, i));
        }
    }
    order.sort_by(|a, b| {
        (a.0 as u128 * b.1 as u128)
            .cmp(&(b.0 as u128 * a.1 as u128))
            .then(out.subjects[a.2].label.cmp(&out.subjects[b.2].label).reverse())
    });
    let [_, dev, test] = split_sizes(order.len(), ratios);
    for (pos, &(_, _, i)) in order.iter().enumerate() {
        out.subjects[i].split = Some(if pos < dev {
            Split::Dev
        } else if pos < dev + test {
            Split::Test
        } else {
            Split::Train
        });
    }
    Ok(out)
}
