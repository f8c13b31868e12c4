use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

/// Image indices of one train / validation / test split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    /// Index of the validation fold this split came from.
    pub fold: usize,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

fn shuffled_folds(n_images: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(Error::config(format!("k-folds must be at least 2, got {k}")));
    }
    if n_images == 0 || n_images % k != 0 {
        return Err(Error::config(format!(
            "k-folds = {k} must divide n-images = {n_images}"
        )));
    }
    let mut order: Vec<usize> = (0..n_images).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(order.chunks(n_images / k).map(|c| {
        let mut fold = c.to_vec();
        fold.sort_unstable();
        fold
    }).collect())
}

/// Rotating test scheme: the images are shuffled into `k` folds; each image
/// of each fold in turn is the test image, the rest of its fold validates and
/// the other folds train. Yields `n_images` splits.
pub fn make_folds(n_images: usize, k: usize, seed: u64) -> Result<Vec<Split>> {
    let folds = shuffled_folds(n_images, k, seed)?;
    if n_images / k < 2 {
        return Err(Error::config(format!(
            "n-images / k-folds = {} leaves the validation set empty",
            n_images / k
        )));
    }
    let mut splits = Vec::with_capacity(n_images);
    for (f, fold) in folds.iter().enumerate() {
        let train: Vec<usize> = folds
            .iter()
            .enumerate()
            .filter(|&(g, _)| g != f)
            .flat_map(|(_, images)| images.iter().copied())
            .collect();
        for &test in fold {
            splits.push(Split {
                fold: f,
                train: train.clone(),
                val: fold.iter().copied().filter(|&i| i != test).collect(),
                test: vec![test],
            });
        }
    }
    Ok(splits)
}

/// Plain k-fold partition: fold `fold` validates, the others train, no test image.
pub fn partition(n_images: usize, k: usize, fold: usize, seed: u64) -> Result<Split> {
    let folds = shuffled_folds(n_images, k, seed)?;
    if fold >= k {
        return Err(Error::config(format!("fold {fold} out of range for k-folds = {k}")));
    }
    Ok(Split {
        fold,
        train: folds
            .iter()
            .enumerate()
            .filter(|&(g, _)| g != fold)
            .flat_map(|(_, images)| images.iter().copied())
            .collect(),
        val: folds[fold].clone(),
        test: Vec::new(),
    })
}
