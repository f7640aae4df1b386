//! Classical causal filters: background-activity (BAF), double-window (DWF)
//! and time-surface (TS).
//!
//! Each filter assigns a support score to every event from events with
//! strictly earlier timestamps. Events sharing a timestamp do not see each
//! other.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::events::{Event, EventStream};
use crate::kv::KvMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Baf,
    Dwf,
    Ts,
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "baf" => Ok(Method::Baf),
            "dwf" => Ok(Method::Dwf),
            "ts" => Ok(Method::Ts),
            _ => Err(Error::InvalidArgument(format!(
                "unknown filter {s:?} (baf, dwf, ts)"
            ))),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Baf => "baf",
            Method::Dwf => "dwf",
            Method::Ts => "ts",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterParams {
    pub method: Method,
    /// BAF support window in microseconds.
    pub tau_us: u64,
    /// Chebyshev neighbourhood radius for BAF and TS.
    pub radius: u16,
    /// DWF: number of past events remembered.
    pub dwf_window: usize,
    /// DWF: L-infinity distance counted as support.
    pub dwf_distance: u16,
    /// BAF and DWF keep events with score >= this.
    pub min_support: usize,
    pub ts_tau_us: f64,
    pub ts_threshold: f64,
}

impl FilterParams {
    pub fn new(method: Method) -> Self {
        FilterParams {
            method,
            tau_us: 10_000,
            radius: 1,
            dwf_window: 36,
            dwf_distance: 3,
            min_support: 1,
            ts_tau_us: 20_000.0,
            ts_threshold: 0.3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.tau_us > 0
            && self.radius > 0
            && self.dwf_window > 0
            && self.dwf_distance > 0
            && self.min_support > 0
            && self.ts_tau_us > 0.0
            && self.ts_threshold > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "filter parameters must be positive: {self:?}"
            )))
        }
    }

    pub fn apply_kv(&mut self, kv: &KvMap) -> Result<()> {
        kv.read_into("tau_us", &mut self.tau_us)?;
        kv.read_into("radius", &mut self.radius)?;
        kv.read_into("dwf_window", &mut self.dwf_window)?;
        kv.read_into("dwf_distance", &mut self.dwf_distance)?;
        kv.read_into("min_support", &mut self.min_support)?;
        kv.read_into("ts_tau_us", &mut self.ts_tau_us)?;
        kv.read_into("ts_threshold", &mut self.ts_threshold)?;
        self.validate()
    }

    pub const KEYS: &'static [&'static str] = &[
        "tau_us",
        "radius",
        "dwf_window",
        "dwf_distance",
        "min_support",
        "ts_tau_us",
        "ts_threshold",
    ];

    /// Binary decision for a score; ties at the threshold are kept.
    pub fn keep(&self, score: f64) -> bool {
        match self.method {
            Method::Baf | Method::Dwf => score >= self.min_support as f64,
            Method::Ts => score >= self.ts_threshold,
        }
    }
}

fn check_sorted(stream: &EventStream) -> Result<()> {
    match stream.events.windows(2).position(|w| w[1].t < w[0].t) {
        Some(i) => Err(Error::Unsorted(i + 1)),
        None => Ok(()),
    }
}

/// Index ranges of events sharing a timestamp.
fn same_time_groups(events: &[Event]) -> impl Iterator<Item = (usize, usize)> + '_ {
    let mut start = 0;
    std::iter::from_fn(move || {
        if start >= events.len() {
            return None;
        }
        let t = events[start].t;
        let end = start + events[start..].iter().take_while(|e| e.t == t).count();
        let r = (start, end);
        start = end;
        Some(r)
    })
}

/// Neighbour pixels within Chebyshev radius `r`, the centre excluded.
fn neighbours(e: &Event, r: u16, width: u16, height: u16) -> impl Iterator<Item = (u16, u16)> {
    let (x, y) = (i32::from(e.x), i32::from(e.y));
    let r = i32::from(r);
    let (w, h) = (i32::from(width), i32::from(height));
    (y - r..=y + r).flat_map(move |ny| {
        (x - r..=x + r).filter_map(move |nx| {
            let inside = nx >= 0 && ny >= 0 && nx < w && ny < h && (nx, ny) != (x, y);
            inside.then_some((nx as u16, ny as u16))
        })
    })
}

/// Per-event support scores in stream order.
pub fn classical_score(stream: &EventStream, params: &FilterParams) -> Result<Vec<f64>> {
    params.validate()?;
    check_sorted(stream)?;
    let (w, h) = (stream.width, stream.height);
    let ev = &stream.events;
    let mut scores = vec![0.0; ev.len()];
    match params.method {
        Method::Baf | Method::Ts => {
            let mut last: Vec<Option<u64>> = vec![None; usize::from(w) * usize::from(h)];
            let at = |x: u16, y: u16| usize::from(y) * usize::from(w) + usize::from(x);
            for (s, e) in same_time_groups(ev) {
                for i in s..e {
                    let t = ev[i].t;
                    let ages = neighbours(&ev[i], params.radius, w, h)
                        .filter_map(|(nx, ny)| last[at(nx, ny)].map(|lt| t - lt));
                    scores[i] = match params.method {
                        Method::Baf => ages.filter(|&a| a <= params.tau_us).count() as f64,
                        _ => ages
                            .map(|a| (-(a as f64) / params.ts_tau_us).exp())
                            .fold(0.0, f64::max),
                    };
                }
                for e in &ev[s..e] {
                    last[at(e.x, e.y)] = Some(e.t);
                }
            }
        }
        Method::Dwf => {
            let mut window: VecDeque<Event> = VecDeque::with_capacity(params.dwf_window + 1);
            let d = params.dwf_distance;
            for (s, e) in same_time_groups(ev) {
                for i in s..e {
                    let c = &ev[i];
                    scores[i] = window
                        .iter()
                        .filter(|o| o.x.abs_diff(c.x) <= d && o.y.abs_diff(c.y) <= d)
                        .count() as f64;
                }
                for e in &ev[s..e] {
                    window.push_back(*e);
                    if window.len() > params.dwf_window {
                        window.pop_front();
                    }
                }
            }
        }
    }
    Ok(scores)
}

/// Scores and keep-mask together.
pub fn classical_filter(
    stream: &EventStream,
    params: &FilterParams,
) -> Result<(Vec<f64>, Vec<bool>)> {
    let scores = classical_score(stream, params)?;
    let keep = scores.iter().map(|&s| params.keep(s)).collect();
    Ok((scores, keep))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn stream(events: Vec<Event>) -> EventStream {
        EventStream::new(16, 12, events)
    }

    fn random_stream(n: usize, seed: u64) -> EventStream {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut t = 0;
        let events = (0..n)
            .map(|_| {
                // frequent zero gaps exercise same-timestamp groups
                t += rng.random_range(0..3000) * u64::from(rng.random_bool(0.7));
                Event::new(
                    t,
                    rng.random_range(0..16),
                    rng.random_range(0..12),
                    if rng.random_bool(0.5) { 1 } else { -1 },
                )
            })
            .collect();
        stream(events)
    }

    fn reference(s: &EventStream, p: &FilterParams) -> Vec<f64> {
        let ev = &s.events;
        (0..ev.len())
            .map(|i| {
                let c = ev[i];
                let prior: Vec<&Event> = ev.iter().filter(|o| o.t < c.t).collect();
                match p.method {
                    Method::Baf | Method::Ts => {
                        let r = i32::from(p.radius);
                        let mut score = 0.0f64;
                        for dy in -r..=r {
                            for dx in -r..=r {
                                if dx == 0 && dy == 0 {
                                    continue;
                                }
                                let (nx, ny) = (i32::from(c.x) + dx, i32::from(c.y) + dy);
                                let latest = prior
                                    .iter()
                                    .filter(|o| i32::from(o.x) == nx && i32::from(o.y) == ny)
                                    .map(|o| o.t)
                                    .max();
                                if let Some(lt) = latest {
                                    let age = c.t - lt;
                                    if p.method == Method::Baf {
                                        score += f64::from(u8::from(age <= p.tau_us));
                                    } else {
                                        score = score.max((-(age as f64) / p.ts_tau_us).exp());
                                    }
                                }
                            }
                        }
                        score
                    }
                    Method::Dwf => {
                        let k = prior.len().saturating_sub(p.dwf_window);
                        prior[k..]
                            .iter()
                            .filter(|o| {
                                i32::from(o.x).abs_diff(i32::from(c.x)) <= u32::from(p.dwf_distance)
                                    && i32::from(o.y).abs_diff(i32::from(c.y))
                                        <= u32::from(p.dwf_distance)
                            })
                            .count() as f64
                    }
                }
            })
            .collect()
    }

    #[test]
    fn first_event_scores_zero() {
        let s = stream(vec![Event::new(5, 3, 3, 1), Event::new(6, 3, 4, 1)]);
        for m in [Method::Baf, Method::Dwf, Method::Ts] {
            assert_eq!(classical_score(&s, &FilterParams::new(m)).unwrap()[0], 0.0);
        }
    }

    #[test]
    fn baf_neighbour_within_window() {
        let p = FilterParams::new(Method::Baf);
        let s = stream(vec![
            Event::new(0, 3, 3, 1),
            Event::new(p.tau_us / 2, 4, 3, -1),
        ]);
        assert_eq!(classical_score(&s, &p).unwrap(), vec![0.0, 1.0]);
        let late = stream(vec![
            Event::new(0, 3, 3, 1),
            Event::new(p.tau_us + 1, 4, 3, -1),
        ]);
        assert_eq!(classical_score(&late, &p).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn ts_excludes_own_pixel() {
        let p = FilterParams::new(Method::Ts);
        let s = stream(vec![
            Event::new(0, 3, 3, 1),
            Event::new(10, 3, 3, 1),
            Event::new(20, 4, 4, 1),
        ]);
        let sc = classical_score(&s, &p).unwrap();
        assert_eq!(sc[1], 0.0);
        assert!((sc[2] - (-10.0 / p.ts_tau_us).exp()).abs() < 1e-15);
    }

    #[test]
    fn streaming_matches_all_pairs_reference() {
        for seed in 0..12 {
            let s = random_stream(if seed < 2 { 1000 } else { 200 }, seed);
            for m in [Method::Baf, Method::Dwf, Method::Ts] {
                let mut p = FilterParams::new(m);
                p.radius = 1 + (seed % 2) as u16;
                assert_eq!(
                    classical_score(&s, &p).unwrap(),
                    reference(&s, &p),
                    "{m} seed {seed}"
                );
            }
        }
    }

    #[test]
    fn later_events_never_change_earlier_scores() {
        let s = random_stream(300, 40);
        for m in [Method::Baf, Method::Dwf, Method::Ts] {
            let p = FilterParams::new(m);
            let full = classical_score(&s, &p).unwrap();
            let mut moved = s.clone();
            let last = moved.events.len() - 1;
            moved.events[last].x = (moved.events[last].x + 5) % 16;
            let other = classical_score(&moved, &p).unwrap();
            assert_eq!(full[..last], other[..last]);
        }
    }

    #[test]
    fn unsorted_rejected_and_decision_ties_kept() {
        let s = stream(vec![Event::new(5, 3, 3, 1), Event::new(4, 3, 4, 1)]);
        assert!(matches!(
            classical_score(&s, &FilterParams::new(Method::Baf)),
            Err(Error::Unsorted(1))
        ));
        assert!(FilterParams::new(Method::Baf).keep(1.0));
        assert!(!FilterParams::new(Method::Baf).keep(0.0));
        assert!(FilterParams::new(Method::Ts).keep(0.3));
        assert_eq!("DWF".parse::<Method>().unwrap(), Method::Dwf);
    }
}
