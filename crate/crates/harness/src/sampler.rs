//! Deterministic batch samplers.
//!
//! Both samplers yield one epoch of full batches (a trailing partial
//! batch is dropped so every batch satisfies the scheme's divisibility
//! constraints). The stratified sampler builds each batch from a fixed
//! number of distinct classes with equal per-class counts, violating the
//! i.i.d. assumption batch statistics rely on.

use rand::seq::SliceRandom;

use crate::dataset::Dataset;
use crate::error::{HarnessError, HarnessResult};
use crate::rng_from;

/// One epoch of uniformly shuffled disjoint batches.
pub fn iid_batches(dataset: &Dataset, batch: usize, seed: u64) -> HarnessResult<Vec<Vec<usize>>> {
    if batch == 0 || batch > dataset.len() {
        return Err(HarnessError::Config(format!(
            "batch size {batch} invalid for dataset of {} examples",
            dataset.len()
        )));
    }
    let mut rng = rng_from(seed);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut rng);
    order.truncate(dataset.len() / batch * batch);
    Ok(order.chunks(batch).map(<[usize]>::to_vec).collect())
}

/// One epoch of class-stratified batches: every batch holds exactly
/// `classes_per_batch` distinct labels, each with `batch /
/// classes_per_batch` examples. Classes are redrawn per batch.
pub fn non_iid_batches(
    dataset: &Dataset,
    batch: usize,
    classes_per_batch: usize,
    seed: u64,
) -> HarnessResult<Vec<Vec<usize>>> {
    if batch == 0 || batch > dataset.len() {
        return Err(HarnessError::Config(format!(
            "batch size {batch} invalid for dataset of {} examples",
            dataset.len()
        )));
    }
    if classes_per_batch == 0 || !batch.is_multiple_of(classes_per_batch) {
        return Err(HarnessError::Config(format!(
            "classes per batch {classes_per_batch} must divide the batch size {batch}"
        )));
    }
    if classes_per_batch > dataset.n_classes {
        return Err(HarnessError::Config(format!(
            "classes per batch {classes_per_batch} exceeds the {} classes available",
            dataset.n_classes
        )));
    }
    let per_class = batch / classes_per_batch;
    let by_class = dataset.indices_by_class();
    if let Some((k, members)) = by_class
        .iter()
        .enumerate()
        .find(|(_, m)| m.len() < per_class)
    {
        return Err(HarnessError::Config(format!(
            "class {k} has {} examples, need {per_class} per batch",
            members.len()
        )));
    }
    let mut rng = rng_from(seed);
    let n_batches = dataset.len() / batch;
    let mut classes: Vec<usize> = (0..dataset.n_classes).collect();
    let mut batches = Vec::with_capacity(n_batches);
    for _ in 0..n_batches {
        classes.shuffle(&mut rng);
        let mut indices = Vec::with_capacity(batch);
        for &k in &classes[..classes_per_batch] {
            let mut members = by_class[k].clone();
            members.shuffle(&mut rng);
            indices.extend_from_slice(&members[..per_class]);
        }
        batches.push(indices);
    }
    Ok(batches)
}
