//! Encoder/decoder network over serialized event clouds.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::events::EventCloud;
use crate::serialize::unpool;
use crate::sscan::{macs_per_step, sigmoid};
use crate::tensor::{join_path, Mat, Params, Tensor};

use super::blocks::{Stssb, StssbCache};
use super::cfe::{Cfe, CfeCache};
use super::geometry::Geometry;
use super::layers::Linear;
use super::ModelConfig;

/// Every learnable tensor of the network.
///
/// Tensor paths look like `cfe.fuse.w`, `enc1.3.tssm.fwd.a_log`,
/// `lift0.w`, `dec0.1.sssm.conv.w` or `head.b`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights {
    pub cfe: Cfe,
    pub encoders: Vec<Vec<Stssb>>,
    /// `lifts[s]` maps stage `s` channels to stage `s + 1` after pooling.
    pub lifts: Vec<Linear>,
    /// `projs[s]` maps stage `s + 1` channels back to stage `s` before unpooling.
    pub projs: Vec<Linear>,
    /// `skips[s]` fuses `[unpooled | encoder output]` at stage `s`.
    pub skips: Vec<Linear>,
    pub decoders: Vec<Vec<Stssb>>,
    pub head: Linear,
}

impl ModelWeights {
    /// Deterministic initialization from `seed`.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (s, k) = (cfg.state_size, cfg.kernel);
        let ch = &cfg.channels;
        let cfe = Cfe::init(cfg, &mut rng);
        let encoders = (0..cfg.stages())
            .map(|i| {
                (0..cfg.enc_depths[i])
                    .map(|_| Stssb::init(ch[i], s, k, &mut rng))
                    .collect()
            })
            .collect();
        let lifts = (0..cfg.stages() - 1)
            .map(|i| Linear::init(ch[i], ch[i + 1], &mut rng))
            .collect();
        let projs = (0..cfg.stages() - 1)
            .map(|i| Linear::init(ch[i + 1], ch[i], &mut rng))
            .collect();
        let skips = (0..cfg.stages() - 1)
            .map(|i| Linear::init(2 * ch[i], ch[i], &mut rng))
            .collect();
        let decoders = (0..cfg.stages() - 1)
            .map(|i| {
                (0..cfg.dec_depths[i])
                    .map(|_| Stssb::init(ch[i], s, k, &mut rng))
                    .collect()
            })
            .collect();
        let head = Linear::init(ch[0], 2, &mut rng);
        Ok(ModelWeights {
            cfe,
            encoders,
            lifts,
            projs,
            skips,
            decoders,
            head,
        })
    }

    pub fn zeros(cfg: &ModelConfig) -> Self {
        let (s, k) = (cfg.state_size, cfg.kernel);
        let ch = &cfg.channels;
        let n = cfg.stages();
        ModelWeights {
            cfe: Cfe::zeros(cfg),
            encoders: (0..n)
                .map(|i| {
                    (0..cfg.enc_depths[i])
                        .map(|_| Stssb::zeros(ch[i], s, k))
                        .collect()
                })
                .collect(),
            lifts: (0..n - 1)
                .map(|i| Linear::zeros(ch[i], ch[i + 1]))
                .collect(),
            projs: (0..n - 1)
                .map(|i| Linear::zeros(ch[i + 1], ch[i]))
                .collect(),
            skips: (0..n - 1)
                .map(|i| Linear::zeros(2 * ch[i], ch[i]))
                .collect(),
            decoders: (0..n - 1)
                .map(|i| {
                    (0..cfg.dec_depths[i])
                        .map(|_| Stssb::zeros(ch[i], s, k))
                        .collect()
                })
                .collect(),
            head: Linear::zeros(ch[0], 2),
        }
    }

    /// Zeroed copy with the same shapes, used as a gradient accumulator.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.visit_mut("", &mut |_, t| t.data.fill(0.0));
        z
    }

    pub fn is_finite(&self) -> bool {
        let mut ok = true;
        self.visit("", &mut |_, t| ok &= t.is_finite());
        ok
    }

    /// Checks that every tensor has the shape `cfg` implies.
    pub fn check(&self, cfg: &ModelConfig) -> Result<()> {
        let want = ModelWeights::zeros(cfg);
        let a = self.named_tensors();
        let b = want.named_tensors();
        if a.len() != b.len() {
            return Err(Error::Shape(format!(
                "{} tensors, config implies {}",
                a.len(),
                b.len()
            )));
        }
        for ((na, ta), (nb, tb)) in a.iter().zip(&b) {
            if na != nb || ta.shape != tb.shape {
                return Err(Error::Shape(format!(
                    "{na} {:?} does not match {nb} {:?}",
                    ta.shape, tb.shape
                )));
            }
        }
        if !self.is_finite() {
            return Err(Error::NonFinite("model weights".into()));
        }
        Ok(())
    }
}

impl Params for ModelWeights {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        self.cfe.visit(&join_path(prefix, "cfe"), f);
        for (s, stage) in self.encoders.iter().enumerate() {
            for (b, block) in stage.iter().enumerate() {
                block.visit(&join_path(prefix, &format!("enc{s}.{b}")), f);
            }
        }
        for (s, l) in self.lifts.iter().enumerate() {
            l.visit(&join_path(prefix, &format!("lift{s}")), f);
        }
        for (s, l) in self.projs.iter().enumerate() {
            l.visit(&join_path(prefix, &format!("proj{s}")), f);
        }
        for (s, l) in self.skips.iter().enumerate() {
            l.visit(&join_path(prefix, &format!("skip{s}")), f);
        }
        for (s, stage) in self.decoders.iter().enumerate() {
            for (b, block) in stage.iter().enumerate() {
                block.visit(&join_path(prefix, &format!("dec{s}.{b}")), f);
            }
        }
        self.head.visit(&join_path(prefix, "head"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.cfe.visit_mut(&join_path(prefix, "cfe"), f);
        for (s, stage) in self.encoders.iter_mut().enumerate() {
            for (b, block) in stage.iter_mut().enumerate() {
                block.visit_mut(&join_path(prefix, &format!("enc{s}.{b}")), f);
            }
        }
        for (s, l) in self.lifts.iter_mut().enumerate() {
            l.visit_mut(&join_path(prefix, &format!("lift{s}")), f);
        }
        for (s, l) in self.projs.iter_mut().enumerate() {
            l.visit_mut(&join_path(prefix, &format!("proj{s}")), f);
        }
        for (s, l) in self.skips.iter_mut().enumerate() {
            l.visit_mut(&join_path(prefix, &format!("skip{s}")), f);
        }
        for (s, stage) in self.decoders.iter_mut().enumerate() {
            for (b, block) in stage.iter_mut().enumerate() {
                block.visit_mut(&join_path(prefix, &format!("dec{s}.{b}")), f);
            }
        }
        self.head.visit_mut(&join_path(prefix, "head"), f);
    }
}

/// Learnable scalar count implied by `cfg`.
pub fn param_count(cfg: &ModelConfig) -> usize {
    let (s, k) = (cfg.state_size, cfg.kernel);
    let ch = &cfg.channels;
    let mut n = Cfe::param_count(cfg) + Linear::param_count(ch[0], 2);
    for i in 0..cfg.stages() {
        n += cfg.enc_depths[i] * Stssb::param_count(ch[i], s, k);
    }
    for i in 0..cfg.stages() - 1 {
        n += Linear::param_count(ch[i], ch[i + 1])
            + Linear::param_count(ch[i + 1], ch[i])
            + Linear::param_count(2 * ch[i], ch[i])
            + cfg.dec_depths[i] * Stssb::param_count(ch[i], s, k);
    }
    n
}

/// Multiply-accumulates per input event, assuming each pooling step divides
/// the row count by exactly `pool_scale`. Nonlinearities are not counted.
pub fn macs_per_event(cfg: &ModelConfig) -> f64 {
    let (st, k) = (cfg.state_size, cfg.kernel);
    let ch = &cfg.channels;
    let (cg, cp) = cfg.cfe_split();
    let block = |c: usize| {
        let mut m = 0;
        if cfg.use_sssm {
            m += c * k + 2 * macs_per_step(c, st) + 2 * c;
        }
        if cfg.use_tssm {
            m += 2 * macs_per_step(c, st) + 2 * c * c + 2 * c;
        }
        m as f64
    };
    let mut total = (3 * k + 3 * cg + (cfg.pol_dim + 2) * cp + ch[0] * ch[0] + 2 * ch[0]) as f64;
    let mut rows = 1.0;
    for s in 0..cfg.stages() {
        if s > 0 {
            rows /= cfg.pool_scale as f64;
            total += rows * (ch[s - 1] * ch[s]) as f64;
        }
        total += rows * cfg.enc_depths[s] as f64 * block(ch[s]);
    }
    for s in (0..cfg.stages() - 1).rev() {
        total += rows * (ch[s + 1] * ch[s]) as f64;
        rows *= cfg.pool_scale as f64;
        total += rows * (2 * ch[s] * ch[s]) as f64 + rows * cfg.dec_depths[s] as f64 * block(ch[s]);
    }
    total
}

/// Activations saved by [`forward_geometry`].
#[derive(Debug, Clone)]
pub struct ModelCache {
    cfe: CfeCache,
    enc: Vec<Vec<StssbCache>>,
    lift_in: Vec<Mat>,
    proj_in: Vec<Mat>,
    skip_in: Vec<Mat>,
    dec: Vec<Vec<StssbCache>>,
    head_in: Mat,
}

fn run_stage(
    blocks: &[Stssb],
    h: Mat,
    geo: &Geometry,
    level: usize,
    cfg: &ModelConfig,
    caches: Option<&mut Vec<StssbCache>>,
) -> Result<Mat> {
    let lv = &geo.levels[level];
    let mut h = h;
    match caches {
        None => {
            for (b, block) in blocks.iter().enumerate() {
                h = block.forward(
                    &h,
                    lv.order(cfg.curve_for_block(b)),
                    &lv.time,
                    cfg.use_sssm,
                    cfg.use_tssm,
                )?;
            }
        }
        Some(out) => {
            for (b, block) in blocks.iter().enumerate() {
                let (next, c) = block.forward_cached(
                    &h,
                    lv.order(cfg.curve_for_block(b)),
                    &lv.time,
                    cfg.use_sssm,
                    cfg.use_tssm,
                )?;
                h = next;
                out.push(c);
            }
        }
    }
    Ok(h)
}

/// Logits for the deduplicated level-0 rows of `geo`, in time order.
///
/// With `cache = true` the returned cache feeds [`backward`].
pub fn forward_geometry(
    geo: &Geometry,
    w: &ModelWeights,
    cfg: &ModelConfig,
    cache: bool,
) -> Result<(Mat, Option<ModelCache>)> {
    let stages = cfg.stages();
    if geo.levels.len() != stages {
        return Err(Error::Shape(format!(
            "geometry has {} levels for {stages} stages",
            geo.levels.len()
        )));
    }
    let lv0 = &geo.levels[0];
    let (mut h, cfe_cache) = w
        .cfe
        .forward_cached(&lv0.points, geo.width, geo.height, cfg)?;
    let mut enc = vec![Vec::new(); stages];
    let mut dec = vec![Vec::new(); stages - 1];
    let mut enc_out = Vec::with_capacity(stages);
    let mut lift_in = Vec::new();
    let mut proj_in = vec![Mat::zeros(0, 0); stages - 1];
    let mut skip_in = vec![Mat::zeros(0, 0); stages - 1];

    for s in 0..stages {
        if s > 0 {
            let map = geo.levels[s - 1]
                .pool
                .as_ref()
                .expect("pool map between stages");
            let pooled = map.pool_feats(&h)?;
            h = w.lifts[s - 1].forward(&pooled);
            if cache {
                lift_in.push(pooled);
            }
        }
        h = run_stage(&w.encoders[s], h, geo, s, cfg, cache.then_some(&mut enc[s]))?;
        if s + 1 < stages {
            enc_out.push(h.clone());
        }
    }
    for s in (0..stages - 1).rev() {
        let map = geo.levels[s]
            .pool
            .as_ref()
            .expect("pool map between stages");
        let p = w.projs[s].forward(&h);
        let cat = unpool(&p, map)?.hcat(&enc_out[s]);
        let next = w.skips[s].forward(&cat);
        if cache {
            proj_in[s] = std::mem::replace(&mut h, next);
            skip_in[s] = cat;
        } else {
            h = next;
        }
        h = run_stage(&w.decoders[s], h, geo, s, cfg, cache.then_some(&mut dec[s]))?;
    }
    let logits = w.head.forward(&h);
    if !logits.is_finite() {
        return Err(Error::NonFinite("model logits".into()));
    }
    if !cache {
        return Ok((logits, None));
    }
    Ok((
        logits,
        Some(ModelCache {
            cfe: cfe_cache,
            enc,
            lift_in,
            proj_in,
            skip_in,
            dec,
            head_in: h,
        }),
    ))
}

/// Gradients of all weights given `dlogits` for the rows of [`forward_geometry`].
pub fn backward(
    geo: &Geometry,
    w: &ModelWeights,
    cfg: &ModelConfig,
    cache: &ModelCache,
    dlogits: &Mat,
    g: &mut ModelWeights,
) -> Result<()> {
    let stages = cfg.stages();
    let mut dh = w.head.backward(&cache.head_in, dlogits, &mut g.head);
    let mut dskip = vec![Mat::zeros(0, 0); stages - 1];
    for s in 0..stages - 1 {
        dh = stage_backward(
            &w.decoders[s],
            &cache.dec[s],
            geo,
            s,
            cfg,
            dh,
            &mut g.decoders[s],
        )?;
        let dcat = w.skips[s].backward(&cache.skip_in[s], &dh, &mut g.skips[s]);
        let (du, de) = dcat.hsplit(cfg.channels[s]);
        dskip[s] = de;
        let map = geo.levels[s]
            .pool
            .as_ref()
            .expect("pool map between stages");
        dh = w.projs[s].backward(&cache.proj_in[s], &map.unpool_vjp(&du), &mut g.projs[s]);
    }
    for s in (0..stages).rev() {
        if s + 1 < stages {
            dh.add_assign(&dskip[s]);
        }
        dh = stage_backward(
            &w.encoders[s],
            &cache.enc[s],
            geo,
            s,
            cfg,
            dh,
            &mut g.encoders[s],
        )?;
        if s > 0 {
            let dpooled = w.lifts[s - 1].backward(&cache.lift_in[s - 1], &dh, &mut g.lifts[s - 1]);
            let map = geo.levels[s - 1]
                .pool
                .as_ref()
                .expect("pool map between stages");
            dh = map.pool_vjp(&dpooled);
        }
    }
    w.cfe
        .backward(&geo.levels[0].points, &cache.cfe, &dh, &mut g.cfe);
    Ok(())
}

fn stage_backward(
    blocks: &[Stssb],
    caches: &[StssbCache],
    geo: &Geometry,
    level: usize,
    cfg: &ModelConfig,
    dout: Mat,
    g: &mut [Stssb],
) -> Result<Mat> {
    let lv = &geo.levels[level];
    let mut d = dout;
    for b in (0..blocks.len()).rev() {
        d = blocks[b].backward(
            &caches[b],
            lv.order(cfg.curve_for_block(b)),
            &lv.time,
            &d,
            &mut g[b],
        )?;
    }
    Ok(d)
}

/// Per-event logits (`M x 2`, class 1 = signal) in the cloud's point order.
pub fn model_forward(cloud: &EventCloud, w: &ModelWeights, cfg: &ModelConfig) -> Result<Mat> {
    let geo = Geometry::build(cloud, cfg)?;
    let (logits, _) = forward_geometry(&geo, w, cfg, false)?;
    Ok(logits.gather_rows(&geo.inverse))
}

/// Probability of the signal class from a logit row.
pub fn signal_prob(logits: &[f64]) -> f64 {
    sigmoid(logits[1] - logits[0])
}

/// Signal probability per event, in the cloud's point order.
pub fn predict_scores(cloud: &EventCloud, w: &ModelWeights, cfg: &ModelConfig) -> Result<Vec<f64>> {
    let logits = model_forward(cloud, w, cfg)?;
    Ok((0..logits.rows)
        .map(|r| signal_prob(logits.row(r)))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mac_estimate_single_stage_by_hand() {
        let cfg = ModelConfig {
            channels: vec![4],
            enc_depths: vec![1],
            dec_depths: vec![],
            use_tssm: false,
            ..ModelConfig::tiny()
        };
        let (k, st) = (cfg.kernel, cfg.state_size);
        // cfe: conv, geometry lift 3->2, polarity lift 6->2, fuse 4->4; head 4->2
        let cfe = 3 * k + 3 * 2 + 6 * 2 + 16 + 8;
        let sssm = 4 * k + 2 * (16 + 2 * st * 4 + 3 * 4 * st + 4) + 8;
        assert_eq!(macs_per_event(&cfg), (cfe + sssm) as f64);
        let mut full = ModelConfig::full();
        let base = macs_per_event(&full);
        full.use_tssm = false;
        assert!(macs_per_event(&full) < base);
    }
    use crate::events::CloudPoint;
    use rand::seq::SliceRandom;
    use rand::Rng;

    fn random_cloud(n: usize, seed: u64) -> EventCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut points: Vec<CloudPoint> = (0..n)
            .map(|_| CloudPoint {
                x: rng.random_range(0..32),
                y: rng.random_range(0..24),
                z: rng.random_range(0.0..1.0),
                p: if rng.random_bool(0.5) { 1 } else { -1 },
            })
            .collect();
        points.sort_by(|a, b| a.z.total_cmp(&b.z));
        EventCloud {
            width: 32,
            height: 24,
            points,
            src_index: (0..n).collect(),
            labels: None,
            t0: 0,
            te: 1000,
        }
    }

    #[test]
    fn shape_and_finite() {
        let cfg = ModelConfig::full();
        let w = ModelWeights::init(&cfg, 1).unwrap();
        let c = random_cloud(50, 2);
        let l = model_forward(&c, &w, &cfg).unwrap();
        assert_eq!((l.rows, l.cols), (50, 2));
        assert!(l.is_finite());
        let mut empty = c.clone();
        empty.points.clear();
        assert!(model_forward(&empty, &w, &cfg).is_err());
    }

    #[test]
    fn permutation_invariance() {
        let cfg = ModelConfig::full();
        let w = ModelWeights::init(&cfg, 3).unwrap();
        let c = random_cloud(120, 4);
        let base = model_forward(&c, &w, &cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut perm: Vec<usize> = (0..c.len()).collect();
        perm.shuffle(&mut rng);
        let shuffled = c.select(&perm);
        let out = model_forward(&shuffled, &w, &cfg).unwrap();
        assert!(out.max_abs_diff(&base.gather_rows(&perm)) <= 1e-12);
    }

    #[test]
    fn duplicates_get_identical_logits() {
        let cfg = ModelConfig::full();
        let w = ModelWeights::init(&cfg, 6).unwrap();
        let mut c = random_cloud(40, 7);
        let dup = c.points[11];
        c.points.insert(30, dup);
        c.points.push(dup);
        c.src_index = (0..c.points.len()).collect();
        let l = model_forward(&c, &w, &cfg).unwrap();
        assert_eq!(l.row(11), l.row(30));
        assert_eq!(l.row(11), l.row(c.len() - 1));
    }

    #[test]
    fn disabled_blocks_reduce_to_plain_unet() {
        let mut cfg = ModelConfig::tiny();
        cfg.use_sssm = false;
        cfg.use_tssm = false;
        let w = ModelWeights::init(&cfg, 8).unwrap();
        let c = random_cloud(16, 9);
        let geo = Geometry::build(&c, &cfg).unwrap();
        let lv0 = &geo.levels[0];
        let f = w.cfe.forward(&lv0.points, 32, 24, &cfg).unwrap();
        let map = lv0.pool.as_ref().unwrap();
        let up = w.lifts[0].forward(&map.pool_feats(&f).unwrap());
        let back = unpool(&w.projs[0].forward(&up), map).unwrap();
        let manual = w.head.forward(&w.skips[0].forward(&back.hcat(&f)));
        let (l, _) = forward_geometry(&geo, &w, &cfg, false).unwrap();
        assert!(l.max_abs_diff(&manual) < 1e-14);
    }

    fn shape_walk(w: &ModelWeights) -> usize {
        let mut n = 0;
        w.visit("", &mut |_, t| n += t.shape.iter().product::<usize>());
        n
    }

    #[test]
    fn param_count_matches_shape_walk() {
        for cfg in [ModelConfig::full(), ModelConfig::tiny()] {
            let w = ModelWeights::init(&cfg, 0).unwrap();
            assert_eq!(param_count(&cfg), shape_walk(&w));
        }
        assert!(param_count(&ModelConfig::full()) < 200_000);
    }

    #[test]
    fn tensor_paths_are_unique_and_structured() {
        let w = ModelWeights::init(&ModelConfig::full(), 0).unwrap();
        let names: Vec<String> = w.named_tensors().into_iter().map(|(n, _)| n).collect();
        let mut sorted = names.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), names.len());
        assert!(names.iter().any(|n| n == "enc1.3.tssm.fwd.a_log"));
        assert!(names.iter().any(|n| n == "dec0.1.sssm.conv.w"));
        assert!(names.iter().any(|n| n == "cfe.pol_embed.table"));
        assert!(w.check(&ModelConfig::full()).is_ok());
        assert!(w.check(&ModelConfig::tiny()).is_err());
    }

    #[test]
    fn cached_forward_matches_plain() {
        let cfg = ModelConfig::full();
        let w = ModelWeights::init(&cfg, 10).unwrap();
        let c = random_cloud(64, 11);
        let geo = Geometry::build(&c, &cfg).unwrap();
        let (a, _) = forward_geometry(&geo, &w, &cfg, false).unwrap();
        let (b, cache) = forward_geometry(&geo, &w, &cfg, true).unwrap();
        assert!(cache.is_some());
        assert!(a.max_abs_diff(&b) < 1e-13);
    }
}
