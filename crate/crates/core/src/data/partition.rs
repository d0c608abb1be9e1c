use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::Exp1;

use super::Dataset;
use crate::error::{Error, Result};

/// Per-device index lists into a [`Dataset`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DevicePartition {
    devices: Vec<Vec<usize>>,
    /// Samples left unassigned because the shard count did not divide the data.
    dropped_tail: usize,
}

impl DevicePartition {
    pub fn new(devices: Vec<Vec<usize>>, dataset_len: usize) -> Result<Self> {
        let mut seen = vec![false; dataset_len];
        for (d, idx) in devices.iter().enumerate() {
            if idx.is_empty() {
                return Err(Error::InvalidParams(format!("device {d} has no samples")));
            }
            for &i in idx {
                if i >= dataset_len {
                    return Err(Error::InvalidParams(format!("index {i} out of range")));
                }
                if std::mem::replace(&mut seen[i], true) {
                    return Err(Error::InvalidParams(format!("index {i} assigned twice")));
                }
            }
        }
        let assigned = seen.iter().filter(|s| **s).count();
        Ok(Self {
            devices,
            dropped_tail: dataset_len - assigned,
        })
    }

    pub fn num_devices(&self) -> usize {
        self.devices.len()
    }

    pub fn device(&self, i: usize) -> &[usize] {
        &self.devices[i]
    }

    pub fn devices(&self) -> &[Vec<usize>] {
        &self.devices
    }

    pub fn dropped_tail(&self) -> usize {
        self.dropped_tail
    }
}

/// Label-sorted shard partition.
///
/// The trailing `len % num_shards` samples (highest original indices) are
/// dropped. The rest are stably sorted by `(label, index)`, cut into
/// `num_shards` contiguous shards, and the shards are dealt to devices by a
/// seeded permutation, `shards_per_device` each.
pub fn shard_partition<R: Rng + ?Sized>(
    dataset: &Dataset,
    num_shards: usize,
    shards_per_device: usize,
    num_devices: usize,
    rng: &mut R,
) -> Result<DevicePartition> {
    if num_shards == 0 || shards_per_device == 0 || num_devices == 0 {
        return Err(Error::InvalidConfig(
            "shard counts and device count must be positive".into(),
        ));
    }
    if num_shards != num_devices * shards_per_device {
        return Err(Error::InvalidConfig(format!(
            "{num_shards} shards cannot be dealt as {shards_per_device} to each of {num_devices} devices"
        )));
    }
    let used = dataset.len() - dataset.len() % num_shards;
    if used == 0 {
        return Err(Error::InvalidConfig(format!(
            "{} samples cannot fill {num_shards} shards",
            dataset.len()
        )));
    }
    let shard_size = used / num_shards;

    let mut order: Vec<usize> = (0..used).collect();
    order.sort_by_key(|&i| (dataset.label(i), i));

    let mut shard_ids: Vec<usize> = (0..num_shards).collect();
    shard_ids.shuffle(rng);

    let devices = shard_ids
        .chunks_exact(shards_per_device)
        .map(|shards| {
            shards
                .iter()
                .flat_map(|&s| order[s * shard_size..(s + 1) * shard_size].iter().copied())
                .collect()
        })
        .collect();
    DevicePartition::new(devices, dataset.len())
}

/// Random split of `items` indices over `devices`, each receiving at least
/// `min_per_device`. Sizes follow a flat Dirichlet draw over the surplus.
pub fn random_split<R: Rng + ?Sized>(
    items: usize,
    devices: usize,
    min_per_device: usize,
    rng: &mut R,
) -> Result<DevicePartition> {
    if devices == 0 || min_per_device == 0 {
        return Err(Error::InvalidConfig(
            "device count and minimum size must be positive".into(),
        ));
    }
    if items < devices * min_per_device {
        return Err(Error::InvalidConfig(format!(
            "{items} items cannot give {devices} devices {min_per_device} each"
        )));
    }
    let surplus = items - devices * min_per_device;
    let weights: Vec<f64> = (0..devices).map(|_| rng.sample::<f64, _>(Exp1)).collect();
    let total: f64 = weights.iter().sum();
    let shares: Vec<f64> = weights.iter().map(|w| w / total * surplus as f64).collect();
    let mut sizes: Vec<usize> = shares.iter().map(|s| s.floor() as usize).collect();
    // Largest-remainder rounding, ties to the lower device id.
    let mut rest = surplus - sizes.iter().sum::<usize>();
    let mut by_fraction: Vec<usize> = (0..devices).collect();
    by_fraction.sort_by(|&a, &b| {
        let fa = shares[a] - shares[a].floor();
        let fb = shares[b] - shares[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &d in &by_fraction {
        if rest == 0 {
            break;
        }
        sizes[d] += 1;
        rest -= 1;
    }

    let mut pool: Vec<usize> = (0..items).collect();
    pool.shuffle(rng);
    let mut start = 0;
    let parts = sizes
        .iter()
        .map(|s| {
            let len = s + min_per_device;
            let part = pool[start..start + len].to_vec();
            start += len;
            part
        })
        .collect();
    DevicePartition::new(parts, items)
}
