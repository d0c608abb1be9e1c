//! Label-sorted shard partitioning and random-size splits.
//!
//! cargo run --example partition

use fedzo::data::{random_split, shard_partition, Dataset};
use fedzo::rng::{Purpose, SeedPath};

fn main() -> fedzo::Result<()> {
    let classes = 10;
    let n = 1000;
    let labels: Vec<usize> = (0..n).map(|i| (i * 7) % classes).collect();
    let data = Dataset::new(vec![0.0; n], labels, 1, classes)?;

    let mut rng = SeedPath::new(0, Purpose::Partition).stream();
    let part = shard_partition(&data, 20, 2, 10, &mut rng)?;
    println!("shards: 20 of {} samples, 2 per device", n / 20);
    for (i, idx) in part.devices().iter().enumerate() {
        let mut hist = vec![0; classes];
        idx.iter().for_each(|&j| hist[data.label(j)] += 1);
        println!("  device {i}: {hist:?}");
    }

    let split = random_split(500, 10, 25, &mut rng)?;
    let sizes: Vec<usize> = split.devices().iter().map(Vec::len).collect();
    println!("random split of 500 items, at least 25 each: {sizes:?}");
    Ok(())
}
