//! Space-filling-curve serialization of event clouds, plus serialized
//! pooling and unpooling.
//!
//! Points are quantized onto a `2^b` grid per axis: `gx = x * 2^b / width`,
//! `gy = y * 2^b / height`, `gz = round(z * (2^b - 1))`. An order sorts by
//! curve code and breaks ties on the full coordinate tuple, so two clouds
//! holding the same points in different input order serialize identically.

use std::cmp::Ordering;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::events::{CloudPoint, EventCloud};
use crate::tensor::Mat;

pub const DEFAULT_GRID_BITS: u32 = 10;
pub const MAX_GRID_BITS: u32 = 21;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Curve {
    Hilbert,
    Zorder,
    Time,
}

impl FromStr for Curve {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "hilbert" => Ok(Curve::Hilbert),
            "zorder" | "z-order" | "morton" => Ok(Curve::Zorder),
            "time" => Ok(Curve::Time),
            other => Err(Error::InvalidArgument(format!("unknown curve {other:?}"))),
        }
    }
}

impl std::fmt::Display for Curve {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Curve::Hilbert => "hilbert",
            Curve::Zorder => "zorder",
            Curve::Time => "time",
        })
    }
}

fn check_coords(ix: u32, iy: u32, iz: u32, bits: u32) -> Result<()> {
    if bits == 0 || bits > MAX_GRID_BITS {
        return Err(Error::InvalidArgument(format!(
            "grid bits must be in 1..=21, got {bits}"
        )));
    }
    let lim = 1u64 << bits;
    if ix as u64 >= lim || iy as u64 >= lim || iz as u64 >= lim {
        return Err(Error::InvalidArgument(format!(
            "grid coordinate ({ix}, {iy}, {iz}) outside a {bits}-bit cube"
        )));
    }
    Ok(())
}

/// Spreads the low 21 bits of `v` so bit k lands on bit 3k.
#[inline]
fn spread3(v: u32) -> u64 {
    let mut x = v as u64 & 0x1f_ffff;
    x = (x | x << 32) & 0x001f_0000_0000_ffff;
    x = (x | x << 16) & 0x001f_0000_ff00_00ff;
    x = (x | x << 8) & 0x100f_00f0_0f00_f00f;
    x = (x | x << 4) & 0x10c3_0c30_c30c_30c3;
    x = (x | x << 2) & 0x1249_2492_4924_9249;
    x
}

#[inline]
fn morton3_unchecked(ix: u32, iy: u32, iz: u32) -> u64 {
    spread3(ix) | spread3(iy) << 1 | spread3(iz) << 2
}

/// Z-order code: bit 3k is x bit k, bit 3k+1 is y bit k, bit 3k+2 is z bit k.
pub fn morton3(ix: u32, iy: u32, iz: u32, bits: u32) -> Result<u64> {
    check_coords(ix, iy, iz, bits)?;
    Ok(morton3_unchecked(ix, iy, iz))
}

/// Hilbert index via the transpose form: undo excess work, Gray-encode, then
/// interleave the transposed bits with x most significant.
fn hilbert3_unchecked(ix: u32, iy: u32, iz: u32, bits: u32) -> u64 {
    let mut x = [ix, iy, iz];
    let m = 1u32 << (bits - 1);

    let mut q = m;
    while q > 1 {
        let p = q - 1;
        for i in 0..3 {
            if x[i] & q != 0 {
                x[0] ^= p;
            } else {
                let t = (x[0] ^ x[i]) & p;
                x[0] ^= t;
                x[i] ^= t;
            }
        }
        q >>= 1;
    }

    x[1] ^= x[0];
    x[2] ^= x[1];
    let mut t = 0;
    let mut q = m;
    while q > 1 {
        if x[2] & q != 0 {
            t ^= q - 1;
        }
        q >>= 1;
    }
    for v in &mut x {
        *v ^= t;
    }

    let mut code = 0u64;
    for j in (0..bits).rev() {
        for v in &x {
            code = code << 1 | ((v >> j) & 1) as u64;
        }
    }
    code
}

pub fn hilbert3(ix: u32, iy: u32, iz: u32, bits: u32) -> Result<u64> {
    check_coords(ix, iy, iz, bits)?;
    Ok(hilbert3_unchecked(ix, iy, iz, bits))
}

/// Quantizes a point onto the `2^bits` grid.
pub fn grid_coords(pt: &CloudPoint, width: u16, height: u16, bits: u32) -> (u32, u32, u32) {
    let side = 1u64 << bits;
    let gx = ((pt.x as u64 * side) / width.max(1) as u64).min(side - 1) as u32;
    let gy = ((pt.y as u64 * side) / height.max(1) as u64).min(side - 1) as u32;
    let gz = (pt.z.clamp(0.0, 1.0) * (side - 1) as f64 + 0.5).floor() as u32;
    (gx, gy, gz)
}

pub fn point_code(pt: &CloudPoint, width: u16, height: u16, curve: Curve, bits: u32) -> u64 {
    let (gx, gy, gz) = grid_coords(pt, width, height, bits);
    match curve {
        Curve::Hilbert => hilbert3_unchecked(gx, gy, gz, bits),
        Curve::Zorder => morton3_unchecked(gx, gy, gz),
        Curve::Time => 0,
    }
}

/// Total order on points: `(x, y, z, p)`.
pub fn cmp_points(a: &CloudPoint, b: &CloudPoint) -> Ordering {
    a.x.cmp(&b.x)
        .then(a.y.cmp(&b.y))
        .then(a.z.total_cmp(&b.z))
        .then(a.p.cmp(&b.p))
}

/// Time order: `(z, x, y, p)`.
pub fn cmp_time(a: &CloudPoint, b: &CloudPoint) -> Ordering {
    a.z.total_cmp(&b.z)
        .then(a.x.cmp(&b.x))
        .then(a.y.cmp(&b.y))
        .then(a.p.cmp(&b.p))
}

/// A serialization of a point set: `perm[k]` is the point visited k-th.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SerialOrder {
    pub curve: Curve,
    pub perm: Vec<usize>,
    pub bits: u32,
}

impl SerialOrder {
    pub fn len(&self) -> usize {
        self.perm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.perm.is_empty()
    }
}

/// Orders a raw point slice. Ties on every coordinate fall back to slice
/// position.
pub fn order_points(
    points: &[CloudPoint],
    width: u16,
    height: u16,
    curve: Curve,
    bits: u32,
) -> Result<SerialOrder> {
    if points.is_empty() {
        return Err(Error::Empty("cannot serialize an empty cloud"));
    }
    if bits == 0 || bits > MAX_GRID_BITS {
        return Err(Error::InvalidArgument(format!(
            "grid bits must be in 1..=21, got {bits}"
        )));
    }
    let mut perm: Vec<usize> = (0..points.len()).collect();
    match curve {
        Curve::Time => {
            perm.sort_by(|&a, &b| cmp_time(&points[a], &points[b]).then(a.cmp(&b)));
        }
        _ => {
            let codes: Vec<u64> = points
                .iter()
                .map(|p| point_code(p, width, height, curve, bits))
                .collect();
            perm.sort_by(|&a, &b| {
                codes[a]
                    .cmp(&codes[b])
                    .then_with(|| cmp_points(&points[a], &points[b]))
                    .then(a.cmp(&b))
            });
        }
    }
    Ok(SerialOrder { curve, perm, bits })
}

/// Orders a cloud. Ties on every coordinate fall back to `src_index`.
pub fn order_of(cloud: &EventCloud, curve: Curve, bits: u32) -> Result<SerialOrder> {
    let mut order = order_points(&cloud.points, cloud.width, cloud.height, curve, bits)?;
    // order_points broke full ties by position; re-break them by src_index.
    let pts = &cloud.points;
    let src = &cloud.src_index;
    let mut k = 0;
    while k < order.perm.len() {
        let mut end = k + 1;
        while end < order.perm.len() && pts[order.perm[end]] == pts[order.perm[k]] {
            end += 1;
        }
        if end - k > 1 {
            order.perm[k..end].sort_by_key(|&i| src[i]);
        }
        k = end;
    }
    Ok(order)
}

/// Child groups produced by serialized pooling.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PoolMap {
    /// `groups[j]` lists the children of pooled row `j`, in serial order.
    pub groups: Vec<Vec<usize>>,
    pub scale: usize,
    /// Number of rows before pooling.
    pub children: usize,
}

impl PoolMap {
    /// Groups consecutive runs of `scale` entries of `order`.
    pub fn from_order(order: &SerialOrder, scale: usize) -> Result<Self> {
        if scale < 2 {
            return Err(Error::InvalidArgument(format!(
                "pool scale must be at least 2, got {scale}"
            )));
        }
        Ok(PoolMap {
            groups: order.perm.chunks(scale).map(<[usize]>::to_vec).collect(),
            scale,
            children: order.len(),
        })
    }

    pub fn parents(&self) -> usize {
        self.groups.len()
    }

    /// Group means of `feats`.
    pub fn pool_feats(&self, feats: &Mat) -> Result<Mat> {
        if feats.rows != self.children {
            return Err(Error::Shape(format!(
                "pool map expects {} rows, got {}",
                self.children, feats.rows
            )));
        }
        let mut out = Mat::zeros(self.groups.len(), feats.cols);
        for (j, g) in self.groups.iter().enumerate() {
            let inv = 1.0 / g.len() as f64;
            let row = out.row_mut(j);
            for &c in g {
                for (o, v) in row.iter_mut().zip(feats.row(c)) {
                    *o += v;
                }
            }
            for o in row.iter_mut() {
                *o *= inv;
            }
        }
        Ok(out)
    }

    /// Adjoint of [`PoolMap::pool_feats`].
    pub fn pool_vjp(&self, upstream: &Mat) -> Mat {
        let mut out = Mat::zeros(self.children, upstream.cols);
        for (j, g) in self.groups.iter().enumerate() {
            let inv = 1.0 / g.len() as f64;
            for &c in g {
                for (o, u) in out.row_mut(c).iter_mut().zip(upstream.row(j)) {
                    *o = u * inv;
                }
            }
        }
        out
    }

    /// Adjoint of [`unpool`]: sums each group's rows.
    pub fn unpool_vjp(&self, upstream: &Mat) -> Mat {
        let mut out = Mat::zeros(self.groups.len(), upstream.cols);
        for (j, g) in self.groups.iter().enumerate() {
            let row = out.row_mut(j);
            for &c in g {
                for (o, u) in row.iter_mut().zip(upstream.row(c)) {
                    *o += u;
                }
            }
        }
        out
    }
}

/// Serialized pooling: mean features per group, first child's coordinate.
pub fn pool<T: Copy>(
    order: &SerialOrder,
    feats: &Mat,
    coords: &[T],
    scale: usize,
) -> Result<(Mat, Vec<T>, PoolMap)> {
    if coords.len() != feats.rows || order.len() != feats.rows {
        return Err(Error::Shape(format!(
            "pool got {} feature rows, {} coords, order of {}",
            feats.rows,
            coords.len(),
            order.len()
        )));
    }
    let map = PoolMap::from_order(order, scale)?;
    let pooled = map.pool_feats(feats)?;
    let pooled_coords = map.groups.iter().map(|g| coords[g[0]]).collect();
    Ok((pooled, pooled_coords, map))
}

/// Broadcasts each pooled row back to its children.
pub fn unpool(pooled: &Mat, map: &PoolMap) -> Result<Mat> {
    if pooled.rows != map.groups.len() {
        return Err(Error::Shape(format!(
            "unpool expects {} pooled rows, got {}",
            map.groups.len(),
            pooled.rows
        )));
    }
    let mut out = Mat::zeros(map.children, pooled.cols);
    for (j, g) in map.groups.iter().enumerate() {
        for &c in g {
            out.row_mut(c).copy_from_slice(pooled.row(j));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{seq::SliceRandom, Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pt(x: u16, y: u16, z: f64, p: i8) -> CloudPoint {
        CloudPoint { x, y, z, p }
    }

    fn cloud_of(points: Vec<CloudPoint>, width: u16, height: u16) -> EventCloud {
        let n = points.len();
        EventCloud {
            width,
            height,
            points,
            src_index: (0..n).collect(),
            labels: None,
            t0: 0,
            te: 1,
        }
    }

    fn random_points(n: usize, rng: &mut impl Rng, w: u16, h: u16) -> Vec<CloudPoint> {
        (0..n)
            .map(|_| {
                pt(
                    rng.random_range(0..w),
                    rng.random_range(0..h),
                    rng.random::<f64>(),
                    if rng.random_bool(0.5) { 1 } else { -1 },
                )
            })
            .collect()
    }

    /// Bit-by-bit interleave, independent of the magic-number spreading.
    fn morton_oracle(x: u32, y: u32, z: u32, bits: u32) -> u64 {
        let mut code = 0u64;
        for k in 0..bits {
            code |= (((x >> k) & 1) as u64) << (3 * k);
            code |= (((y >> k) & 1) as u64) << (3 * k + 1);
            code |= (((z >> k) & 1) as u64) << (3 * k + 2);
        }
        code
    }

    #[test]
    fn morton_examples() {
        assert_eq!(morton3(0, 0, 0, 5).unwrap(), 0);
        assert_eq!(morton3(1, 1, 1, 1).unwrap(), 7);
        assert_eq!(morton3(3, 1, 0, 2).unwrap(), 11);
        assert!(morton3(4, 0, 0, 2).is_err());
        assert!(morton3(0, 0, 0, 22).is_err());
        let max = (1 << 21) - 1;
        assert_eq!(morton3(max, max, max, 21).unwrap(), (1u64 << 63) - 1);
    }

    #[test]
    fn morton_matches_bitwise_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..2000 {
            let b = rng.random_range(1..=21);
            let (x, y, z) = (
                rng.random_range(0..1u32 << b),
                rng.random_range(0..1u32 << b),
                rng.random_range(0..1u32 << b),
            );
            assert_eq!(morton3(x, y, z, b).unwrap(), morton_oracle(x, y, z, b));
        }
    }

    fn hilbert_table(bits: u32) -> Vec<(u32, u32, u32)> {
        let side = 1u32 << bits;
        let mut table = vec![None; (side * side * side) as usize];
        for x in 0..side {
            for y in 0..side {
                for z in 0..side {
                    let c = hilbert3(x, y, z, bits).unwrap() as usize;
                    assert!(table[c].is_none(), "code {c} hit twice");
                    table[c] = Some((x, y, z));
                }
            }
        }
        table.into_iter().map(Option::unwrap).collect()
    }

    #[test]
    fn hilbert_origin_and_range() {
        assert_eq!(hilbert3(0, 0, 0, 4).unwrap(), 0);
        assert!(hilbert3(8, 0, 0, 3).is_err());
        assert_eq!(hilbert_table(2).len(), 64);
    }

    #[test]
    fn hilbert_adjacent_for_b3() {
        let t = hilbert_table(3);
        let mut pairs = 0;
        for w in t.windows(2) {
            let d = w[0].0.abs_diff(w[1].0) + w[0].1.abs_diff(w[1].1) + w[0].2.abs_diff(w[1].2);
            assert_eq!(d, 1);
            pairs += 1;
        }
        assert_eq!(pairs, 511);
    }

    #[test]
    fn hilbert_large_bits_stay_in_range() {
        let max = (1u32 << 21) - 1;
        let c = hilbert3(max, 0, max, 21).unwrap();
        assert!(c < 1u64 << 63);
    }

    #[test]
    fn single_point_and_time_ties() {
        let c = cloud_of(vec![pt(3, 3, 0.2, 1)], 8, 8);
        assert_eq!(order_of(&c, Curve::Hilbert, 10).unwrap().perm, vec![0]);
        let c = cloud_of(vec![pt(3, 3, 1.0, 1), pt(3, 3, 0.0, 1)], 8, 8);
        assert_eq!(order_of(&c, Curve::Time, 10).unwrap().perm, vec![1, 0]);
        let empty = cloud_of(vec![], 8, 8);
        assert!(order_of(&empty, Curve::Time, 10).is_err());
    }

    #[test]
    fn duplicates_break_ties_by_src_index() {
        let mut c = cloud_of(vec![pt(1, 1, 0.5, 1); 3], 8, 8);
        c.src_index = vec![30, 10, 20];
        assert_eq!(order_of(&c, Curve::Zorder, 10).unwrap().perm, vec![1, 2, 0]);
    }

    #[test]
    fn zorder_matches_sort_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let c = cloud_of(random_points(100, &mut rng, 346, 260), 346, 260);
        let bits = 10;
        let mut keyed: Vec<(u64, u16, u16, f64, i8, usize)> = c
            .points
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let gx = (p.x as u64 * 1024 / 346) as u32;
                let gy = (p.y as u64 * 1024 / 260) as u32;
                let gz = (p.z * 1023.0 + 0.5).floor() as u32;
                (morton_oracle(gx, gy, gz, bits), p.x, p.y, p.z, p.p, i)
            })
            .collect();
        keyed.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let want: Vec<usize> = keyed.iter().map(|k| k.5).collect();
        assert_eq!(order_of(&c, Curve::Zorder, bits).unwrap().perm, want);
    }

    #[test]
    fn pool_examples() {
        let order = SerialOrder {
            curve: Curve::Hilbert,
            perm: vec![0, 1, 2, 3],
            bits: 10,
        };
        let feats = Mat::from_vec(4, 1, vec![1.0, 3.0, 5.0, 9.0]).unwrap();
        let coords = [10, 11, 12, 13];
        let (pooled, pc, map) = pool(&order, &feats, &coords, 2).unwrap();
        assert_eq!(pooled.data, vec![2.0, 7.0]);
        assert_eq!(pc, vec![10, 12]);
        assert_eq!(map.groups, vec![vec![0, 1], vec![2, 3]]);

        let order = SerialOrder {
            curve: Curve::Hilbert,
            perm: vec![4, 0, 3, 1, 2],
            bits: 10,
        };
        let feats = Mat::from_vec(5, 1, vec![1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        let (pooled, pc, map) = pool(&order, &feats, &[0, 1, 2, 3, 4], 2).unwrap();
        assert_eq!(pooled.rows, 3);
        assert_eq!(pooled.data, vec![3.0, 3.0, 3.0]);
        assert_eq!(pc, vec![4, 3, 2]);
        assert_eq!(map.groups[2], vec![2]);
        assert!(pool(&order, &feats, &[0, 1, 2, 3, 4], 1).is_err());
    }

    #[test]
    fn pool_matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let feats = Mat::from_fn(64, 8, |_, _| rng.random_range(-1.0..1.0));
        let mut perm: Vec<usize> = (0..64).collect();
        perm.shuffle(&mut rng);
        let order = SerialOrder {
            curve: Curve::Zorder,
            perm: perm.clone(),
            bits: 10,
        };
        let coords: Vec<usize> = (0..64).collect();
        let (pooled, _, _) = pool(&order, &feats, &coords, 2).unwrap();
        for j in 0..32 {
            for c in 0..8 {
                let want = (feats.get(perm[2 * j], c) + feats.get(perm[2 * j + 1], c)) / 2.0;
                assert!((pooled.get(j, c) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn unpool_examples() {
        let map = PoolMap {
            groups: vec![vec![0, 1], vec![2]],
            scale: 2,
            children: 3,
        };
        let pooled = Mat::from_vec(2, 1, vec![7.0, 8.0]).unwrap();
        assert_eq!(unpool(&pooled, &map).unwrap().data, vec![7.0, 7.0, 8.0]);
        let bad = Mat::zeros(3, 1);
        assert!(unpool(&bad, &map).is_err());

        let singles = PoolMap {
            groups: vec![vec![0], vec![1], vec![2]],
            scale: 2,
            children: 3,
        };
        let x = Mat::from_vec(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(unpool(&x, &singles).unwrap(), x);
        assert_eq!(singles.pool_feats(&x).unwrap(), x);
    }

    #[test]
    fn constant_input_survives_pool_unpool() {
        let order = SerialOrder {
            curve: Curve::Time,
            perm: vec![3, 1, 4, 0, 2, 6, 5],
            bits: 10,
        };
        let x = Mat::from_fn(7, 3, |_, c| c as f64 * 0.5 - 1.0);
        let (pooled, _, map) = pool(&order, &x, &[(); 7], 3).unwrap();
        assert_eq!(unpool(&pooled, &map).unwrap(), x);
    }

    #[test]
    fn pool_adjoints_match_inner_products() {
        // <pool(x), u> == <x, pool_vjp(u)> and likewise for unpool.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut perm: Vec<usize> = (0..9).collect();
        perm.shuffle(&mut rng);
        let order = SerialOrder {
            curve: Curve::Hilbert,
            perm,
            bits: 10,
        };
        let map = PoolMap::from_order(&order, 2).unwrap();
        let x = Mat::from_fn(9, 2, |_, _| rng.random_range(-1.0..1.0));
        let u = Mat::from_fn(5, 2, |_, _| rng.random_range(-1.0..1.0));
        let dot = |a: &Mat, b: &Mat| a.data.iter().zip(&b.data).map(|(p, q)| p * q).sum::<f64>();
        let lhs = dot(&map.pool_feats(&x).unwrap(), &u);
        let rhs = dot(&x, &map.pool_vjp(&u));
        assert!((lhs - rhs).abs() < 1e-12);
        let lhs = dot(&unpool(&u, &map).unwrap(), &x);
        let rhs = dot(&u, &map.unpool_vjp(&x));
        assert!((lhs - rhs).abs() < 1e-12);
    }

    fn mean_neighbor_distance(points: &[CloudPoint], perm: &[usize], w: u16, h: u16) -> f64 {
        let d: f64 = perm
            .windows(2)
            .map(|p| {
                let (a, b) = (&points[p[0]], &points[p[1]]);
                (a.x as f64 - b.x as f64).abs() / w as f64
                    + (a.y as f64 - b.y as f64).abs() / h as f64
                    + (a.z - b.z).abs()
            })
            .sum();
        d / (perm.len() - 1) as f64
    }

    #[test]
    fn curve_locality_ranking() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let trials = 100;
        let mut ok = 0;
        for _ in 0..trials {
            let pts = random_points(2000, &mut rng, 64, 64);
            let hil = order_points(&pts, 64, 64, Curve::Hilbert, 10).unwrap();
            let mor = order_points(&pts, 64, 64, Curve::Zorder, 10).unwrap();
            let mut raster: Vec<usize> = (0..pts.len()).collect();
            raster.sort_by(|&a, &b| {
                let (p, q) = (&pts[a], &pts[b]);
                p.y.cmp(&q.y).then(p.x.cmp(&q.x)).then(p.z.total_cmp(&q.z))
            });
            let dh = mean_neighbor_distance(&pts, &hil.perm, 64, 64);
            let dm = mean_neighbor_distance(&pts, &mor.perm, 64, 64);
            let dr = mean_neighbor_distance(&pts, &raster, 64, 64);
            if dh <= dm && dm <= dr {
                ok += 1;
            }
        }
        assert!(ok * 100 >= 95 * trials, "{ok}/{trials}");
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn order_is_input_permutation_invariant(n in 1usize..200, seed in any::<u64>(), curve_ix in 0usize..3) {
                let curve = [Curve::Hilbert, Curve::Zorder, Curve::Time][curve_ix];
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let pts = random_points(n, &mut rng, 64, 48);
                let mut shuffled = pts.clone();
                shuffled.shuffle(&mut rng);
                let a = order_points(&pts, 64, 48, curve, 10).unwrap();
                let b = order_points(&shuffled, 64, 48, curve, 10).unwrap();
                let sa: Vec<CloudPoint> = a.perm.iter().map(|&i| pts[i]).collect();
                let sb: Vec<CloudPoint> = b.perm.iter().map(|&i| shuffled[i]).collect();
                prop_assert_eq!(sa, sb);
                let mut seen = a.perm.clone();
                seen.sort_unstable();
                prop_assert_eq!(seen, (0..n).collect::<Vec<_>>());
            }

            #[test]
            fn pool_unpool_preserves_length(n in 1usize..100, scale in 2usize..5) {
                let order = SerialOrder { curve: Curve::Time, perm: (0..n).rev().collect(), bits: 10 };
                let x = Mat::from_fn(n, 2, |r, c| (r * 2 + c) as f64);
                let (pooled, _, map) = pool(&order, &x, &vec![0u8; n], scale).unwrap();
                prop_assert_eq!(pooled.rows, n.div_ceil(scale));
                let back = unpool(&pooled, &map).unwrap();
                prop_assert_eq!((back.rows, back.cols), (x.rows, x.cols));
            }
        }
    }
}
