//! Voxel-hash sampling: one representative event per occupied
//! `(x, y, floor(z / v), p)` cell.

use crate::error::{Error, Result};
use crate::events::EventCloud;

const X_SHIFT: u32 = 1;
const Y_SHIFT: u32 = 17;
const Z_SHIFT: u32 = 33;
const Z_BITS: u32 = 24;

/// Collision-free packed voxel coordinate.
///
/// Bit 0 holds the polarity (1 for ON), bits 1..17 the column, bits 17..33
/// the row and bits 33..57 the time bin.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VoxelKey(pub u64);

impl VoxelKey {
    pub fn polarity_bit(self) -> u64 {
        self.0 & 1
    }

    pub fn x(self) -> u16 {
        (self.0 >> X_SHIFT) as u16
    }

    pub fn y(self) -> u16 {
        (self.0 >> Y_SHIFT) as u16
    }

    pub fn z_bin(self) -> u32 {
        ((self.0 >> Z_SHIFT) & ((1 << Z_BITS) - 1)) as u32
    }
}

/// Number of time bins for voxel size `v`; `z = 1` falls into the last one.
pub fn bin_count(v: f64) -> Result<u64> {
    if !(v > 0.0) || !v.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "voxel size must be positive, got {v}"
        )));
    }
    let bins = (1.0 / v).ceil();
    if bins > (1u64 << Z_BITS) as f64 {
        return Err(Error::InvalidArgument(format!(
            "voxel size {v} needs more than 2^{Z_BITS} time bins"
        )));
    }
    Ok((bins as u64).max(1))
}

fn z_bin(z: f64, v: f64, bins: u64) -> u64 {
    ((z.clamp(0.0, 1.0) / v).floor() as u64).min(bins - 1)
}

pub fn voxel_key(x: u16, y: u16, z: f64, p: i8, v: f64) -> Result<VoxelKey> {
    let bins = bin_count(v)?;
    Ok(pack(x, y, z_bin(z, v, bins), p))
}

fn pack(x: u16, y: u16, zb: u64, p: i8) -> VoxelKey {
    VoxelKey(u64::from(p > 0) | (x as u64) << X_SHIFT | (y as u64) << Y_SHIFT | zb << Z_SHIFT)
}

/// SplitMix64 finalizer; used as a counter-based generator.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Uniform draw in `0..n` from a 64-bit random word.
fn bounded(r: u64, n: usize) -> usize {
    ((r as u128 * n as u128) >> 64) as usize
}

/// Keys of every point in the cloud.
pub fn cloud_keys(cloud: &EventCloud, v: f64) -> Result<Vec<VoxelKey>> {
    let bins = bin_count(v)?;
    Ok(cloud
        .points
        .iter()
        .map(|pt| pack(pt.x, pt.y, z_bin(pt.z, v, bins), pt.p))
        .collect())
}

/// Keeps one uniformly chosen point per occupied voxel, preserving the
/// original point order. Deterministic for a fixed `(cloud, v, seed)`.
pub fn voxel_sample(cloud: &EventCloud, v: f64, seed: u64) -> Result<EventCloud> {
    let keys = cloud_keys(cloud, v)?;
    let mut idx: Vec<usize> = (0..keys.len()).collect();
    idx.sort_unstable_by_key(|&i| (keys[i], i));

    let mut chosen = Vec::new();
    let mut start = 0;
    while start < idx.len() {
        let key = keys[idx[start]];
        let mut end = start + 1;
        while end < idx.len() && keys[idx[end]] == key {
            end += 1;
        }
        let r = splitmix64(seed ^ splitmix64(key.0));
        chosen.push(idx[start + bounded(r, end - start)]);
        start = end;
    }
    chosen.sort_unstable();
    Ok(cloud.select(&chosen))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::CloudPoint;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashSet;

    fn cloud(points: Vec<CloudPoint>) -> EventCloud {
        let n = points.len();
        EventCloud {
            width: 64,
            height: 64,
            points,
            src_index: (0..n).collect(),
            labels: None,
            t0: 0,
            te: 1,
        }
    }

    fn pt(x: u16, y: u16, z: f64, p: i8) -> CloudPoint {
        CloudPoint { x, y, z, p }
    }

    fn random_cloud(n: usize, seed: u64) -> EventCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut zs: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        zs.sort_by(f64::total_cmp);
        let pts = zs
            .into_iter()
            .map(|z| {
                pt(
                    rng.random_range(0..64),
                    rng.random_range(0..64),
                    z,
                    if rng.random_bool(0.5) { 1 } else { -1 },
                )
            })
            .collect();
        cloud(pts)
    }

    #[test]
    fn key_examples() {
        assert_eq!(voxel_key(0, 0, 0.0, -1, 0.1).unwrap(), VoxelKey(0));
        let k = voxel_key(0, 0, 1.0, -1, 0.1).unwrap();
        assert_eq!(k.z_bin(), 9);
        assert_eq!(k, VoxelKey(9 << 33));
        assert_ne!(
            voxel_key(3, 4, 0.05, 1, 0.1).unwrap(),
            voxel_key(3, 4, 0.15, 1, 0.1).unwrap()
        );
        let k = voxel_key(65535, 1234, 0.37, 1, 0.1).unwrap();
        assert_eq!(
            (k.x(), k.y(), k.z_bin(), k.polarity_bit()),
            (65535, 1234, 3, 1)
        );
        assert!(voxel_key(0, 0, 0.0, 1, 0.0).is_err());
        assert!(voxel_key(0, 0, 0.0, 1, -1.0).is_err());
    }

    #[test]
    fn one_per_voxel() {
        let c = cloud(vec![pt(1, 1, 0.01, 1), pt(1, 1, 0.02, 1)]);
        assert_eq!(voxel_sample(&c, 0.1, 0).unwrap().len(), 1);
        let c = cloud(vec![
            pt(1, 1, 0.01, 1),
            pt(1, 1, 0.02, 1),
            pt(2, 1, 0.02, 1),
        ]);
        assert_eq!(voxel_sample(&c, 0.1, 0).unwrap().len(), 2);
    }

    #[test]
    fn distinct_voxels_are_identity() {
        let c = cloud(vec![
            pt(1, 1, 0.0, 1),
            pt(1, 1, 0.5, 1),
            pt(1, 1, 0.5, -1),
            pt(9, 1, 1.0, 1),
        ]);
        assert_eq!(voxel_sample(&c, 0.1, 17).unwrap(), c);
    }

    #[test]
    fn matches_exhaustive_key_set() {
        let c = random_cloud(10_000, 3);
        // Independent oracle: tuple-valued keys, no bit packing.
        let oracle: HashSet<(u16, u16, i64, i8)> = c
            .points
            .iter()
            .map(|p| (p.x, p.y, ((p.z / 0.1).floor() as i64).min(9), p.p))
            .collect();
        let s = voxel_sample(&c, 0.1, 99).unwrap();
        assert_eq!(s.len(), oracle.len());
        let got: HashSet<(u16, u16, i64, i8)> = s
            .points
            .iter()
            .map(|p| (p.x, p.y, ((p.z / 0.1).floor() as i64).min(9), p.p))
            .collect();
        assert_eq!(got, oracle);
        assert!(s.src_index.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn selection_is_roughly_uniform() {
        let c = cloud((0..4).map(|i| pt(5, 5, 0.01 * i as f64, 1)).collect());
        let mut counts = [0usize; 4];
        for seed in 0..4000 {
            counts[voxel_sample(&c, 0.1, seed).unwrap().src_index[0]] += 1;
        }
        for &n in &counts {
            assert!((800..1200).contains(&n), "{counts:?}");
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn sample_invariants(n in 1usize..400, seed in any::<u64>(), s in any::<u64>(), v in 0.02f64..0.5) {
                let c = random_cloud(n, seed);
                let a = voxel_sample(&c, v, s).unwrap();
                let b = voxel_sample(&c, v, s).unwrap();
                prop_assert_eq!(&a, &b);
                let in_keys: HashSet<VoxelKey> = cloud_keys(&c, v).unwrap().into_iter().collect();
                let out_keys = cloud_keys(&a, v).unwrap();
                let out_set: HashSet<VoxelKey> = out_keys.iter().copied().collect();
                prop_assert_eq!(out_keys.len(), out_set.len());
                prop_assert_eq!(out_set, in_keys.clone());
                prop_assert!(a.len() <= c.len());
                prop_assert_eq!(a.len() == c.len(), in_keys.len() == c.len());
            }
        }
    }
}
