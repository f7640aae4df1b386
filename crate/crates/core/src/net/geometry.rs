//! Per-cloud serialization state shared by every layer of the network.
//!
//! Identical `(x, y, z, p)` points are collapsed before the network runs and
//! their outputs broadcast back afterwards, so duplicates always receive
//! identical logits. The canonical row order at level 0 is time order.

use crate::error::{Error, Result};
use crate::events::{CloudPoint, EventCloud};
use crate::serialize::{cmp_time, order_points, Curve, PoolMap};

use super::ModelConfig;

#[derive(Debug, Clone)]
pub struct Level {
    pub points: Vec<CloudPoint>,
    /// Time order of `points`.
    pub time: Vec<usize>,
    /// Spatial orders, one per distinct curve in the schedule.
    pub spatial: Vec<(Curve, Vec<usize>)>,
    /// Groups mapping this level onto the next coarser one.
    pub pool: Option<PoolMap>,
}

impl Level {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn order(&self, curve: Curve) -> &[usize] {
        if curve == Curve::Time {
            return &self.time;
        }
        self.spatial
            .iter()
            .find(|(c, _)| *c == curve)
            .map(|(_, p)| p.as_slice())
            .expect("curve not prepared for this level")
    }
}

#[derive(Debug, Clone)]
pub struct Geometry {
    pub width: u16,
    pub height: u16,
    pub levels: Vec<Level>,
    /// `inverse[i]` is the level-0 row holding input point `i`.
    pub inverse: Vec<usize>,
}

impl Geometry {
    pub fn build(cloud: &EventCloud, cfg: &ModelConfig) -> Result<Geometry> {
        if cloud.is_empty() {
            return Err(Error::Empty("model input cloud is empty"));
        }
        cfg.validate()?;
        let pts = &cloud.points;
        let mut idx: Vec<usize> = (0..pts.len()).collect();
        idx.sort_by(|&a, &b| cmp_time(&pts[a], &pts[b]).then(a.cmp(&b)));

        let mut unique: Vec<CloudPoint> = Vec::with_capacity(pts.len());
        let mut inverse = vec![0; pts.len()];
        for &i in &idx {
            if unique.last() != Some(&pts[i]) {
                unique.push(pts[i]);
            }
            inverse[i] = unique.len() - 1;
        }

        let mut curves: Vec<Curve> = Vec::new();
        for &c in &cfg.curves {
            if !curves.contains(&c) {
                curves.push(c);
            }
        }
        if !curves.contains(&cfg.pool_curve) && cfg.pool_curve != Curve::Time {
            curves.push(cfg.pool_curve);
        }

        let (w, h) = (cloud.width, cloud.height);
        let mut levels = Vec::with_capacity(cfg.stages());
        let mut points = unique;
        for s in 0..cfg.stages() {
            let time = if s == 0 {
                (0..points.len()).collect()
            } else {
                order_points(&points, w, h, Curve::Time, cfg.grid_bits)?.perm
            };
            let spatial = curves
                .iter()
                .map(|&c| Ok((c, order_points(&points, w, h, c, cfg.grid_bits)?.perm)))
                .collect::<Result<Vec<_>>>()?;
            let mut level = Level {
                points,
                time,
                spatial,
                pool: None,
            };
            points = Vec::new();
            if s + 1 < cfg.stages() {
                let order = crate::serialize::SerialOrder {
                    curve: cfg.pool_curve,
                    perm: level.order(cfg.pool_curve).to_vec(),
                    bits: cfg.grid_bits,
                };
                let map = PoolMap::from_order(&order, cfg.pool_scale)?;
                points = map.groups.iter().map(|g| level.points[g[0]]).collect();
                level.pool = Some(map);
            }
            levels.push(level);
        }
        Ok(Geometry {
            width: w,
            height: h,
            levels,
            inverse,
        })
    }

    pub fn unique_len(&self) -> usize {
        self.levels[0].len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cloud(points: Vec<CloudPoint>) -> EventCloud {
        let n = points.len();
        EventCloud {
            width: 16,
            height: 16,
            points,
            src_index: (0..n).collect(),
            labels: None,
            t0: 0,
            te: 1,
        }
    }

    #[test]
    fn duplicates_collapse_and_levels_shrink() {
        let p = |x, z| CloudPoint { x, y: 3, z, p: 1 };
        let c = cloud(vec![p(1, 0.5), p(2, 0.1), p(1, 0.5), p(7, 0.9), p(4, 0.3)]);
        let g = Geometry::build(&c, &ModelConfig::full()).unwrap();
        assert_eq!(g.unique_len(), 4);
        assert_eq!(g.inverse[0], g.inverse[2]);
        assert_eq!(g.levels[0].points[0].x, 2);
        assert_eq!(g.levels.len(), 2);
        assert_eq!(g.levels[1].len(), 2);
        assert!(g.levels[1].pool.is_none());
        assert_eq!(g.levels[0].pool.as_ref().unwrap().children, 4);
    }

    #[test]
    fn empty_cloud_errors() {
        assert!(Geometry::build(&cloud(vec![]), &ModelConfig::full()).is_err());
    }
}
