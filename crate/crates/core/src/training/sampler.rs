use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::{rng_for, Rng as StreamRng};

const CLASS_BALANCED_STREAM: u64 = 0xcb;

/// One epoch of an instance-balanced sampler: a fresh permutation of `data`
/// seeded by `(seed, epoch)`, cut into batches. The last batch may be short.
pub fn instance_balanced_batches(
    data: &[usize],
    batch_size: usize,
    seed: u64,
    epoch: usize,
) -> Result<impl Iterator<Item = Vec<usize>>> {
    if data.is_empty() {
        return Err(Error::Parameter("instance-balanced sampler over no data".into()));
    }
    if batch_size == 0 {
        return Err(Error::Parameter("batch_size must be at least 1".into()));
    }
    let mut order = data.to_vec();
    order.shuffle(&mut rng_for(seed, &[epoch as u64]));
    let batches: Vec<Vec<usize>> = order.chunks(batch_size).map(<[usize]>::to_vec).collect();
    Ok(batches.into_iter())
}

/// Class-balanced sampler: every slot draws a class uniformly among the
/// pools' keys, then an instance uniformly within that class. Yields `steps`
/// batches of `batch_size`.
pub fn class_balanced_batches(
    per_class_pools: &BTreeMap<usize, Vec<usize>>,
    batch_size: usize,
    steps: usize,
    seed: u64,
) -> Result<ClassBalancedBatches<'_>> {
    if let Some((c, _)) = per_class_pools.iter().find(|(_, pool)| pool.is_empty()) {
        return Err(Error::Parameter(format!("class {c} has an empty sampling pool")));
    }
    if per_class_pools.is_empty() {
        return Err(Error::Parameter("class-balanced sampler over no classes".into()));
    }
    if batch_size == 0 {
        return Err(Error::Parameter("batch_size must be at least 1".into()));
    }
    Ok(ClassBalancedBatches {
        pools: per_class_pools.values().map(Vec::as_slice).collect(),
        batch_size,
        remaining: steps,
        rng: rng_for(seed, &[CLASS_BALANCED_STREAM]),
    })
}

pub struct ClassBalancedBatches<'a> {
    pools: Vec<&'a [usize]>,
    batch_size: usize,
    remaining: usize,
    rng: StreamRng,
}

impl Iterator for ClassBalancedBatches<'_> {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        if self.remaining == 0 {
            return None;
        }
        self.remaining -= 1;
        let batch = (0..self.batch_size)
            .map(|_| {
                let pool = self.pools[self.rng.random_range(0..self.pools.len())];
                pool[self.rng.random_range(0..pool.len())]
            })
            .collect();
        Some(batch)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        (self.remaining, Some(self.remaining))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn epoch_is_a_permutation() {
        let data: Vec<usize> = (100..137).collect();
        let batches: Vec<_> = instance_balanced_batches(&data, 8, 4, 0).unwrap().collect();
        assert_eq!(batches.len(), 5);
        assert_eq!(batches.last().unwrap().len(), 5);
        let mut all: Vec<usize> = batches.into_iter().flatten().collect();
        all.sort_unstable();
        assert_eq!(all, data);
    }

    #[test]
    fn same_seed_and_epoch_same_order() {
        let data: Vec<usize> = (0..50).collect();
        let a: Vec<_> = instance_balanced_batches(&data, 7, 1, 3).unwrap().collect();
        let b: Vec<_> = instance_balanced_batches(&data, 7, 1, 3).unwrap().collect();
        let c: Vec<_> = instance_balanced_batches(&data, 7, 1, 4).unwrap().collect();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn multi_epoch_frequency() {
        let data: Vec<usize> = (0..23).collect();
        let mut freq = vec![0usize; 23];
        for epoch in 0..10 {
            for b in instance_balanced_batches(&data, 4, 9, epoch).unwrap() {
                b.into_iter().for_each(|i| freq[i] += 1);
            }
        }
        assert!(freq.iter().all(|&f| f == 10));
    }

    #[test]
    fn class_marginal_is_uniform() {
        let pools: BTreeMap<usize, Vec<usize>> = [(0, (0..1000).collect()), (1, vec![5000])].into_iter().collect();
        let mut count = [0usize; 2];
        let draws: usize = class_balanced_batches(&pools, 100, 1000, 3)
            .unwrap()
            .flatten()
            .map(|i| count[usize::from(i == 5000)] += 1)
            .count();
        assert_eq!(draws, 100_000);
        for c in count {
            assert!((c as f64 / draws as f64 - 0.5).abs() < 0.02);
        }
    }

    #[test]
    fn single_class_and_within_class_uniformity() {
        let pools: BTreeMap<usize, Vec<usize>> = [(4, (0..10).collect())].into_iter().collect();
        let mut freq = [0usize; 10];
        for i in class_balanced_batches(&pools, 50, 2000, 8).unwrap().flatten() {
            freq[i] += 1;
        }
        for f in freq {
            assert!((f as f64 / 100_000.0 - 0.1).abs() < 0.1 * 0.03);
        }
    }

    #[test]
    fn empty_pool_named() {
        let pools: BTreeMap<usize, Vec<usize>> = [(0, vec![1]), (7, vec![])].into_iter().collect();
        let err = class_balanced_batches(&pools, 4, 1, 0).err().unwrap();
        assert!(err.to_string().contains("class 7"));
    }
}
