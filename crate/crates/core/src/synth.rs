//! Labeled synthetic event streams: moving bars seen by a contrast-threshold
//! sensor, plus background-activity, hot-pixel and leak noise.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};

use crate::error::{Error, Result};
use crate::events::{
    normalize_segment, segment_stream, Event, EventCloud, EventStream, LABEL_NOISE, LABEL_SIGNAL,
};
use crate::kv::{join_list, KvMap};
use crate::sampling::{splitmix64, voxel_sample};

/// Crossing comparisons use this slack so that a change of exactly `k * C`
/// yields `k` events despite rounding.
const CROSS_EPS: f64 = 1e-9;

/// A straight bar moving along its normal.
///
/// Serialized as `angle_deg:speed:contrast:half_width:edge:period:offset`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bar {
    /// Direction of the normal, degrees from the x axis.
    pub angle_deg: f64,
    /// Pixels per second along the normal.
    pub speed: f64,
    /// Log-intensity added inside the bar; negative for dark bars.
    pub contrast: f64,
    pub half_width: f64,
    /// Width of the linear ramp at each side, in pixels.
    pub edge: f64,
    /// Repeat distance along the normal; 0 for a single bar.
    pub period: f64,
    /// Centre position along the normal at `t = 0`.
    pub offset: f64,
}

impl Bar {
    /// Intensity profile in `[0, 1]` at pixel centre `(px, py)` and time `t`.
    fn profile(&self, px: f64, py: f64, t: f64, nx: f64, ny: f64) -> f64 {
        let mut d = px * nx + py * ny - self.offset - self.speed * t;
        if self.period > 0.0 {
            d -= self.period * (d / self.period).round();
        }
        ((self.half_width - d.abs()) / self.edge + 0.5).clamp(0.0, 1.0)
    }

    fn normal(&self) -> (f64, f64) {
        let a = self.angle_deg * PI / 180.0;
        (a.cos(), a.sin())
    }
}

impl FromStr for Bar {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let v: Vec<f64> = s
            .split(':')
            .map(|p| p.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::Config(format!("bad bar {s:?}")))?;
        if v.len() != 7 {
            return Err(Error::Config(format!(
                "bar {s:?} needs angle_deg:speed:contrast:half_width:edge:period:offset"
            )));
        }
        Ok(Bar {
            angle_deg: v[0],
            speed: v[1],
            contrast: v[2],
            half_width: v[3],
            edge: v[4],
            period: v[5],
            offset: v[6],
        })
    }
}

impl fmt::Display for Bar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}:{}:{}:{}:{}:{}:{}",
            self.angle_deg,
            self.speed,
            self.contrast,
            self.half_width,
            self.edge,
            self.period,
            self.offset
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneConfig {
    pub width: u16,
    pub height: u16,
    pub duration_s: f64,
    pub dt_sim: f64,
    /// Log-intensity of the empty scene.
    pub background: f64,
    /// Fixed bars. When empty, `random_bars` bars are drawn per seed.
    pub bars: Vec<Bar>,
    pub random_bars: usize,
    pub speed_range: (f64, f64),
    pub contrast_range: (f64, f64),
    pub half_width_range: (f64, f64),
    pub edge: f64,
    pub period_range: (f64, f64),
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            width: 64,
            height: 64,
            duration_s: 0.5,
            dt_sim: 1e-4,
            background: 0.0,
            bars: Vec::new(),
            random_bars: 2,
            speed_range: (40.0, 120.0),
            contrast_range: (0.5, 1.0),
            half_width_range: (1.5, 4.0),
            edge: 1.5,
            period_range: (24.0, 48.0),
        }
    }
}

fn read_range(kv: &KvMap, key: &str, slot: &mut (f64, f64)) -> Result<()> {
    if let Some(v) = kv.list::<f64>(key)? {
        match v.as_slice() {
            [a, b] if a <= b => *slot = (*a, *b),
            _ => return Err(Error::Config(format!("{key} needs lo,hi with lo <= hi"))),
        }
    }
    Ok(())
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.width == 0 || self.height == 0 || self.width > 1 << 15 || self.height > 1 << 15 {
            return bad("sensor size must be in 1..=32768");
        }
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return bad("duration must be positive");
        }
        if !(self.dt_sim > 0.0 && self.dt_sim <= self.duration_s) {
            return bad("dt_sim must be positive and at most the duration");
        }
        if !(self.edge > 0.0) || !self.background.is_finite() {
            return bad("edge must be positive and background finite");
        }
        for b in &self.bars {
            let finite = [b.angle_deg, b.speed, b.contrast, b.half_width, b.offset]
                .iter()
                .all(|v| v.is_finite());
            if !finite || !(b.edge > 0.0) || b.half_width < 0.0 || b.period < 0.0 {
                return Err(Error::Config(format!("invalid bar {b}")));
            }
        }
        Ok(())
    }

    pub fn apply_kv(&mut self, kv: &KvMap) -> Result<()> {
        kv.read_into("width", &mut self.width)?;
        kv.read_into("height", &mut self.height)?;
        kv.read_into("duration_s", &mut self.duration_s)?;
        kv.read_into("dt_sim", &mut self.dt_sim)?;
        kv.read_into("background", &mut self.background)?;
        kv.read_list_into("bars", &mut self.bars)?;
        kv.read_into("random_bars", &mut self.random_bars)?;
        read_range(kv, "speed_range", &mut self.speed_range)?;
        read_range(kv, "contrast_range", &mut self.contrast_range)?;
        read_range(kv, "half_width_range", &mut self.half_width_range)?;
        kv.read_into("edge", &mut self.edge)?;
        read_range(kv, "period_range", &mut self.period_range)?;
        self.validate()
    }

    pub const KEYS: &'static [&'static str] = &[
        "width",
        "height",
        "duration_s",
        "dt_sim",
        "background",
        "bars",
        "random_bars",
        "speed_range",
        "contrast_range",
        "half_width_range",
        "edge",
        "period_range",
    ];

    pub fn to_kv(&self) -> KvMap {
        let mut kv = KvMap::new();
        let range = |r: (f64, f64)| format!("{},{}", r.0, r.1);
        kv.set("width", self.width);
        kv.set("height", self.height);
        kv.set("duration_s", self.duration_s);
        kv.set("dt_sim", self.dt_sim);
        kv.set("background", self.background);
        kv.set("bars", join_list(&self.bars));
        kv.set("random_bars", self.random_bars);
        kv.set("speed_range", range(self.speed_range));
        kv.set("contrast_range", range(self.contrast_range));
        kv.set("half_width_range", range(self.half_width_range));
        kv.set("edge", self.edge);
        kv.set("period_range", range(self.period_range));
        kv
    }

    /// The bars of the scene generated with `seed`.
    pub fn bars_for_seed(&self, seed: u64) -> Vec<Bar> {
        if !self.bars.is_empty() {
            return self.bars.clone();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ 0xba25));
        let pick = |rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)| {
            if hi > lo {
                rng.random_range(lo..hi)
            } else {
                lo
            }
        };
        (0..self.random_bars)
            .map(|_| {
                let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                let period = pick(&mut rng, self.period_range);
                Bar {
                    angle_deg: rng.random_range(0.0..360.0),
                    speed: pick(&mut rng, self.speed_range),
                    contrast: sign * pick(&mut rng, self.contrast_range),
                    half_width: pick(&mut rng, self.half_width_range),
                    edge: self.edge,
                    period,
                    offset: rng.random_range(0.0..period.max(1.0)),
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseConfig {
    /// Contrast threshold in log-intensity units.
    pub threshold: f64,
    /// Standard deviation of the per-event threshold perturbation.
    pub sigma_n: f64,
    /// Background-activity rate per pixel, Hz.
    pub ba_rate_hz: f64,
    /// Conversion gain; stored with the configuration, not used by the generator.
    pub ba_gain: f64,
    pub hot_fraction: f64,
    pub hot_multiplier: f64,
    /// Dark current in amperes.
    pub i_dark_a: f64,
    /// Photodiode capacitance in farads.
    pub c_pd_f: f64,
    /// Thermal threshold factor.
    pub eta_th: f64,
    /// Thermal voltage `k_B T / e` in volts.
    pub kt_over_e_v: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            threshold: 0.2,
            sigma_n: 0.02,
            ba_rate_hz: 5.0,
            ba_gain: 1.0,
            hot_fraction: 0.0,
            hot_multiplier: 10.0,
            i_dark_a: 0.0,
            c_pd_f: 1e-14,
            eta_th: 1.0,
            kt_over_e_v: 0.0259,
        }
    }
}

impl NoiseConfig {
    /// ON-event rate per pixel from dark-current drift: the voltage slope
    /// `I_dark / C_pd` divided by the thermal step `eta_th * kT/e`.
    pub fn leak_rate_hz(&self) -> f64 {
        if self.i_dark_a == 0.0 {
            return 0.0;
        }
        (self.i_dark_a / self.c_pd_f) / (self.eta_th * self.kt_over_e_v)
    }

    pub fn validate(&self) -> Result<()> {
        let nonneg = [
            self.sigma_n,
            self.ba_rate_hz,
            self.hot_multiplier,
            self.i_dark_a,
            self.ba_gain,
        ];
        let ok = self.threshold > 0.0
            && nonneg.iter().all(|v| v.is_finite() && *v >= 0.0)
            && (0.0..=1.0).contains(&self.hot_fraction)
            && self.c_pd_f > 0.0
            && self.eta_th > 0.0
            && self.kt_over_e_v > 0.0
            && self.leak_rate_hz().is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid noise config {self:?}")))
        }
    }

    pub fn apply_kv(&mut self, kv: &KvMap) -> Result<()> {
        kv.read_into("threshold", &mut self.threshold)?;
        kv.read_into("sigma_n", &mut self.sigma_n)?;
        kv.read_into("ba_rate_hz", &mut self.ba_rate_hz)?;
        kv.read_into("ba_gain", &mut self.ba_gain)?;
        kv.read_into("hot_fraction", &mut self.hot_fraction)?;
        kv.read_into("hot_multiplier", &mut self.hot_multiplier)?;
        kv.read_into("i_dark_a", &mut self.i_dark_a)?;
        kv.read_into("c_pd_f", &mut self.c_pd_f)?;
        kv.read_into("eta_th", &mut self.eta_th)?;
        kv.read_into("kt_over_e_v", &mut self.kt_over_e_v)?;
        self.validate()
    }

    pub const KEYS: &'static [&'static str] = &[
        "threshold",
        "sigma_n",
        "ba_rate_hz",
        "ba_gain",
        "hot_fraction",
        "hot_multiplier",
        "i_dark_a",
        "c_pd_f",
        "eta_th",
        "kt_over_e_v",
    ];

    pub fn to_kv(&self) -> KvMap {
        let mut kv = KvMap::new();
        kv.set("threshold", self.threshold);
        kv.set("sigma_n", self.sigma_n);
        kv.set("ba_rate_hz", self.ba_rate_hz);
        kv.set("ba_gain", self.ba_gain);
        kv.set("hot_fraction", self.hot_fraction);
        kv.set("hot_multiplier", self.hot_multiplier);
        kv.set("i_dark_a", self.i_dark_a);
        kv.set("c_pd_f", self.c_pd_f);
        kv.set("eta_th", self.eta_th);
        kv.set("kt_over_e_v", self.kt_over_e_v);
        kv
    }
}

fn to_us(t: f64) -> u64 {
    (t * 1e6).floor() as u64
}

fn labeled(width: u16, height: u16, mut events: Vec<Event>, label: u8) -> EventStream {
    events.sort_by_key(|e| e.t);
    let n = events.len();
    EventStream::new(width, height, events)
        .with_labels(vec![label; n])
        .expect("label count matches")
}

/// Threshold-crossing events of the scene generated with `seed`, all labeled
/// signal.
pub fn generate_signal_events(
    scene: &SceneConfig,
    noise: &NoiseConfig,
    seed: u64,
) -> Result<EventStream> {
    scene.validate()?;
    noise.validate()?;
    let bars = scene.bars_for_seed(seed);
    let normals: Vec<(f64, f64)> = bars.iter().map(Bar::normal).collect();
    let (w, h) = (usize::from(scene.width), usize::from(scene.height));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gauss = Normal::new(0.0, noise.sigma_n.max(f64::MIN_POSITIVE)).expect("valid std");
    let draw_threshold = |rng: &mut ChaCha8Rng| {
        if noise.sigma_n == 0.0 {
            noise.threshold
        } else {
            (noise.threshold + gauss.sample(rng)).max(0.01 * noise.threshold)
        }
    };

    let log_intensity = |px: usize, py: usize, t: f64| -> f64 {
        let (fx, fy) = (px as f64 + 0.5, py as f64 + 0.5);
        scene.background
            + bars
                .iter()
                .zip(&normals)
                .map(|(b, &(nx, ny))| b.contrast * b.profile(fx, fy, t, nx, ny))
                .sum::<f64>()
    };

    let mut reference: Vec<f64> = (0..w * h)
        .map(|i| log_intensity(i % w, i / w, 0.0))
        .collect();
    let mut thresholds: Vec<f64> = (0..w * h).map(|_| draw_threshold(&mut rng)).collect();
    let steps = (scene.duration_s / scene.dt_sim).round() as usize;
    let mut events = Vec::new();
    for k in 1..=steps {
        let t = k as f64 * scene.dt_sim;
        let t_prev = t - scene.dt_sim;
        for i in 0..w * h {
            let l = log_intensity(i % w, i / w, t);
            loop {
                let diff = l - reference[i];
                let c = thresholds[i];
                let p: i8 = if diff >= c - CROSS_EPS {
                    1
                } else if -diff >= c - CROSS_EPS {
                    -1
                } else {
                    break;
                };
                reference[i] += f64::from(p) * c;
                thresholds[i] = draw_threshold(&mut rng);
                let te = t_prev + rng.random::<f64>() * scene.dt_sim;
                events.push(Event::new(to_us(te), (i % w) as u16, (i / w) as u16, p));
            }
        }
    }
    Ok(labeled(scene.width, scene.height, events, LABEL_SIGNAL))
}

fn poisson_times(rate_hz: f64, duration_s: f64, rng: &mut ChaCha8Rng, out: &mut Vec<f64>) {
    if rate_hz <= 0.0 {
        return;
    }
    let exp = Exp::new(rate_hz).expect("positive rate");
    let mut t = exp.sample(rng);
    while t < duration_s {
        out.push(t);
        t += exp.sample(rng);
    }
}

/// Background-activity and leak events, all labeled noise.
///
/// Hot pixels are a seeded fixed subset firing at `hot_multiplier` times the
/// background rate. Leak events are ON only.
pub fn generate_noise_events(
    noise: &NoiseConfig,
    width: u16,
    height: u16,
    duration_s: f64,
    seed: u64,
) -> Result<EventStream> {
    noise.validate()?;
    if !(duration_s > 0.0) {
        return Err(Error::Config("duration must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ 0x0015e));
    let leak = noise.leak_rate_hz();
    let mut events = Vec::new();
    let mut times = Vec::new();
    for y in 0..height {
        for x in 0..width {
            let hot = noise.hot_fraction > 0.0 && rng.random_bool(noise.hot_fraction);
            let rate = noise.ba_rate_hz * if hot { noise.hot_multiplier } else { 1.0 };
            times.clear();
            poisson_times(rate, duration_s, &mut rng, &mut times);
            for &t in &times {
                let p = if rng.random_bool(0.5) { 1 } else { -1 };
                events.push(Event::new(to_us(t), x, y, p));
            }
            times.clear();
            poisson_times(leak, duration_s, &mut rng, &mut times);
            events.extend(times.iter().map(|&t| Event::new(to_us(t), x, y, 1)));
        }
    }
    Ok(labeled(width, height, events, LABEL_NOISE))
}

/// One generated scene: the merged stream and its source counts.
#[derive(Debug, Clone)]
pub struct SceneData {
    pub seed: u64,
    pub stream: EventStream,
    pub signal_count: usize,
    pub noise_count: usize,
}

pub fn generate_scene(scene: &SceneConfig, noise: &NoiseConfig, seed: u64) -> Result<SceneData> {
    let signal = generate_signal_events(scene, noise, seed)?;
    let bg = generate_noise_events(noise, scene.width, scene.height, scene.duration_s, seed)?;
    Ok(SceneData {
        seed,
        signal_count: signal.len(),
        noise_count: bg.len(),
        stream: signal.merge(&bg)?,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetOptions {
    pub segment_len: usize,
    /// Voxel size for optional sampling of each cloud.
    pub voxel: Option<f64>,
}

impl Default for DatasetOptions {
    fn default() -> Self {
        DatasetOptions {
            segment_len: 2048,
            voxel: None,
        }
    }
}

/// Splits a stream into normalized clouds whose `src_index` refers to
/// positions in `stream`.
pub fn stream_to_clouds(
    stream: &EventStream,
    opts: &DatasetOptions,
    seed: u64,
) -> Result<Vec<EventCloud>> {
    let segs = segment_stream(stream, opts.segment_len)?;
    segs.windows
        .iter()
        .zip(&segs.offsets)
        .enumerate()
        .map(|(i, (w, &off))| {
            let cloud = normalize_segment(w)?.shift_src(off);
            match opts.voxel {
                Some(v) => voxel_sample(&cloud, v, splitmix64(seed.wrapping_add(i as u64))),
                None => Ok(cloud),
            }
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub scenes: Vec<SceneData>,
    pub clouds: Vec<EventCloud>,
    /// Scene index of each cloud.
    pub cloud_scene: Vec<usize>,
}

/// `n_scenes` scenes with seeds derived from `seed`, segmented into clouds.
pub fn make_dataset(
    scene: &SceneConfig,
    noise: &NoiseConfig,
    n_scenes: usize,
    seed: u64,
    opts: &DatasetOptions,
) -> Result<Dataset> {
    if n_scenes == 0 {
        return Err(Error::InvalidArgument(
            "at least one scene is required".into(),
        ));
    }
    let mut ds = Dataset {
        scenes: Vec::with_capacity(n_scenes),
        clouds: Vec::new(),
        cloud_scene: Vec::new(),
    };
    for i in 0..n_scenes {
        let s = splitmix64(seed.wrapping_add(i as u64));
        let data = generate_scene(scene, noise, s)?;
        if !data.stream.is_empty() {
            let clouds = stream_to_clouds(&data.stream, opts, s)?;
            ds.cloud_scene.extend(std::iter::repeat_n(i, clouds.len()));
            ds.clouds.extend(clouds);
        }
        ds.scenes.push(data);
    }
    Ok(ds)
}
