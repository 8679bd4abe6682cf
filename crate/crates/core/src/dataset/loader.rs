use super::{derive_seed, Dataset};
use crate::error::{Error, Result};
use icl_tensor::Tensor;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Normalized tensors for a group of trajectories.
#[derive(Clone, Debug)]
pub struct Batch {
    pub indices: Vec<usize>,
    /// `[B, N, d_u]`
    pub u: Tensor<f32>,
    /// `[B, N, d_y]`
    pub y: Tensor<f32>,
    pub context: usize,
}

impl Batch {
    pub fn from_indices(ds: &Dataset, indices: &[usize]) -> Self {
        let (n, b) = (ds.n_steps, indices.len());
        let mut u = Vec::with_capacity(b * n * ds.d_u);
        let mut y = Vec::with_capacity(b * n * ds.d_y);
        for &i in indices {
            let t = &ds.trajectories[i];
            u.extend(ds.stats.normalize_u(&t.u));
            y.extend(ds.stats.normalize_y(&t.y));
        }
        Self {
            indices: indices.to_vec(),
            u: Tensor::new(vec![b, n, ds.d_u], u).expect("shape"),
            y: Tensor::new(vec![b, n, ds.d_y], y).expect("shape"),
            context: ds.context,
        }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    fn n(&self) -> usize {
        self.u.shape()[1]
    }

    pub fn ctx_u(&self) -> Tensor<f32> {
        self.u.narrow(1, 0, self.context).expect("context < N")
    }

    pub fn ctx_y(&self) -> Tensor<f32> {
        self.y.narrow(1, 0, self.context).expect("context < N")
    }

    pub fn fut_u(&self) -> Tensor<f32> {
        self.u.narrow(1, self.context, self.n()).expect("context < N")
    }

    pub fn fut_y(&self) -> Tensor<f32> {
        self.y.narrow(1, self.context, self.n()).expect("context < N")
    }
}

/// One epoch of shuffled, full-size batches.
pub struct Batches<'a> {
    ds: &'a Dataset,
    order: Vec<usize>,
    batch_size: usize,
    next: usize,
}

impl Batches<'_> {
    pub fn order(&self) -> &[usize] {
        &self.order
    }
}

impl Iterator for Batches<'_> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        let start = self.next * self.batch_size;
        if start + self.batch_size > self.order.len() {
            return None;
        }
        self.next += 1;
        Some(Batch::from_indices(self.ds, &self.order[start..start + self.batch_size]))
    }
}

impl ExactSizeIterator for Batches<'_> {
    fn len(&self) -> usize {
        self.order.len() / self.batch_size - self.next
    }
}

/// The epoch's order is a permutation seeded by `(shuffle_seed, epoch)`; a
/// trailing partial batch is dropped.
pub fn load_batches(ds: &Dataset, batch_size: usize, shuffle_seed: u64, epoch: usize) -> Result<Batches<'_>> {
    if batch_size == 0 {
        return Err(Error::ConfigInvalid("batch_size must be >= 1".into()));
    }
    if ds.is_empty() {
        return Err(Error::ConfigInvalid("dataset is empty".into()));
    }
    let mut order: Vec<usize> = (0..ds.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(shuffle_seed, epoch as u64, u64::MAX));
    order.shuffle(&mut rng);
    Ok(Batches { ds, order, batch_size, next: 0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::generate_trajectory;
    use crate::dataset::tests::small_config;

    fn dataset(n: usize) -> Dataset {
        let cfg = small_config();
        let trajs = (0..n).map(|i| generate_trajectory(&cfg, i).unwrap()).collect();
        Dataset::from_trajectories(trajs, cfg.context, None).unwrap()
    }

    #[test]
    fn partial_batches_are_dropped() {
        let ds = dataset(10);
        let batches: Vec<Batch> = load_batches(&ds, 4, 1, 0).unwrap().collect();
        assert_eq!(batches.len(), 2);
        assert!(batches.iter().all(|b| b.len() == 4 && b.u.shape() == [4, 32, 2]));
    }

    #[test]
    fn order_is_seeded_per_epoch() {
        let ds = dataset(10);
        let a = load_batches(&ds, 4, 3, 0).unwrap().order().to_vec();
        let b = load_batches(&ds, 4, 3, 0).unwrap().order().to_vec();
        let c = load_batches(&ds, 4, 3, 1).unwrap().order().to_vec();
        assert_eq!(a, b);
        assert_ne!(a, c);
        let mut s = a.clone();
        s.sort();
        assert_eq!(s, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn split_views_partition_the_batch() {
        let ds = dataset(4);
        let b = load_batches(&ds, 2, 0, 0).unwrap().next().unwrap();
        assert_eq!(b.ctx_u().shape(), [2, 24, 2]);
        assert_eq!(b.fut_y().shape(), [2, 8, 2]);
        assert_eq!(Tensor::cat(&[&b.ctx_y(), &b.fut_y()], 1).unwrap(), b.y);
    }
}
