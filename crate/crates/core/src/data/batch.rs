use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::cloud::PointCloud;

/// Subsamples every cloud larger than `max_points` to exactly `max_points`
/// distinct points (kept in their original order). Smaller clouds pass
/// through unchanged. The result depends only on the inputs and `seed`.
pub fn make_batches(clouds: &[PointCloud], max_points: usize, seed: u64) -> Vec<PointCloud> {
    let max_points = max_points.max(1);
    clouds
        .iter()
        .enumerate()
        .map(|(i, c)| {
            if c.len() <= max_points {
                return c.clone();
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let mut idx = sample(&mut rng, c.len(), max_points).into_vec();
            idx.sort_unstable();
            c.subset(&idx)
        })
        .collect()
}
