//! Event data model, on-disk formats, segmentation and time normalization.
//!
//! Two encodings are supported:
//!
//! * CSV: a `width,height` header line followed by `t_us,x,y,p` records with
//!   `p` in `{0, 1}`.
//! * Binary: the magic `EVDN0001`, little-endian `u16` width and height, then
//!   fixed 14-byte records `t_us: u64, x: u16, y: u16, p: u8, label: u8`
//!   where the label byte is `0` (noise), `1` (signal) or `255` (unlabeled).
//!
//! Polarity is `{0, 1}` on disk and `{-1, +1}` in memory.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::fsio;

pub const BIN_MAGIC: &[u8; 8] = b"EVDN0001";
pub const BIN_HEADER_LEN: usize = 12;
pub const BIN_RECORD_LEN: usize = 14;
pub const LABEL_NOISE: u8 = 0;
pub const LABEL_SIGNAL: u8 = 1;
pub const LABEL_NONE: u8 = 255;

/// A single sensor event. `p` is `-1` (OFF) or `+1` (ON).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Event {
    pub t: u64,
    pub x: u16,
    pub y: u16,
    pub p: i8,
}

impl Event {
    pub fn new(t: u64, x: u16, y: u16, p: i8) -> Self {
        Event { t, x, y, p }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Bin,
}

impl Format {
    /// Guess from the file extension; anything other than `.csv` is binary.
    pub fn from_path(path: &Path) -> Format {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => Format::Csv,
            _ => Format::Bin,
        }
    }
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Format::Csv),
            "bin" => Ok(Format::Bin),
            other => Err(Error::InvalidArgument(format!(
                "unknown event format {other:?}"
            ))),
        }
    }
}

/// A time-sorted sequence of events from one sensor.
#[derive(Debug, Clone, PartialEq)]
pub struct EventStream {
    pub width: u16,
    pub height: u16,
    pub events: Vec<Event>,
    /// Per-event ground truth, `1` = signal and `0` = noise.
    pub labels: Option<Vec<u8>>,
    /// Set when the loader had to re-sort non-monotonic timestamps.
    pub resorted: bool,
}

impl EventStream {
    pub fn new(width: u16, height: u16, events: Vec<Event>) -> Self {
        EventStream {
            width,
            height,
            events,
            labels: None,
            resorted: false,
        }
    }

    pub fn with_labels(mut self, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != self.events.len() {
            return Err(Error::Shape(format!(
                "{} labels for {} events",
                labels.len(),
                self.events.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l > 1) {
            return Err(Error::Label(bad));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Checks bounds, polarity alphabet, ordering and label length.
    pub fn validate(&self) -> Result<()> {
        for (i, e) in self.events.iter().enumerate() {
            check_event(e, self.width, self.height, || format!("event {i}"))?;
            if i > 0 && self.events[i - 1].t > e.t {
                return Err(Error::Unsorted(i));
            }
        }
        if let Some(labels) = &self.labels {
            if labels.len() != self.events.len() {
                return Err(Error::Shape(format!(
                    "{} labels for {} events",
                    labels.len(),
                    self.events.len()
                )));
            }
            if let Some(&bad) = labels.iter().find(|&&l| l > 1) {
                return Err(Error::Label(bad));
            }
        }
        Ok(())
    }

    /// Stable sort by timestamp, carrying labels along. Returns whether the
    /// order changed.
    pub fn sort_stable(&mut self) -> bool {
        if self.events.windows(2).all(|w| w[0].t <= w[1].t) {
            return false;
        }
        let mut idx: Vec<usize> = (0..self.events.len()).collect();
        idx.sort_by_key(|&i| self.events[i].t);
        self.events = idx.iter().map(|&i| self.events[i]).collect();
        if let Some(labels) = &self.labels {
            self.labels = Some(idx.iter().map(|&i| labels[i]).collect());
        }
        true
    }

    /// Returns the sub-stream `[start, end)`, labels included.
    pub fn slice(&self, start: usize, end: usize) -> EventStream {
        EventStream {
            width: self.width,
            height: self.height,
            events: self.events[start..end].to_vec(),
            labels: self.labels.as_ref().map(|l| l[start..end].to_vec()),
            resorted: false,
        }
    }

    /// Keeps the events whose mask entry is set.
    pub fn filter(&self, keep: &[bool]) -> EventStream {
        let events = self
            .events
            .iter()
            .zip(keep)
            .filter(|(_, &k)| k)
            .map(|(e, _)| *e)
            .collect();
        let labels = self.labels.as_ref().map(|l| {
            l.iter()
                .zip(keep)
                .filter(|(_, &k)| k)
                .map(|(l, _)| *l)
                .collect()
        });
        EventStream {
            width: self.width,
            height: self.height,
            events,
            labels,
            resorted: false,
        }
    }

    /// Merges two labeled-or-not streams by timestamp. Ties keep `self` first.
    pub fn merge(&self, other: &EventStream) -> Result<EventStream> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::Shape(format!(
                "cannot merge {}x{} with {}x{}",
                self.width, self.height, other.width, other.height
            )));
        }
        let labeled = self.labels.is_some() && other.labels.is_some();
        let n = self.len() + other.len();
        let mut events = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(if labeled { n } else { 0 });
        let (mut i, mut j) = (0, 0);
        while i < self.len() || j < other.len() {
            let take_self =
                j >= other.len() || (i < self.len() && self.events[i].t <= other.events[j].t);
            if take_self {
                events.push(self.events[i]);
                if labeled {
                    labels.push(self.labels.as_ref().unwrap()[i]);
                }
                i += 1;
            } else {
                events.push(other.events[j]);
                if labeled {
                    labels.push(other.labels.as_ref().unwrap()[j]);
                }
                j += 1;
            }
        }
        Ok(EventStream {
            width: self.width,
            height: self.height,
            events,
            labels: labeled.then_some(labels),
            resorted: false,
        })
    }
}

fn check_event(e: &Event, width: u16, height: u16, loc: impl Fn() -> String) -> Result<()> {
    if e.x >= width || e.y >= height {
        return Err(Error::OutOfBounds {
            location: loc(),
            x: e.x as u64,
            y: e.y as u64,
            width,
            height,
        });
    }
    if e.p != 1 && e.p != -1 {
        return Err(Error::Polarity {
            location: loc(),
            value: e.p as i64,
        });
    }
    Ok(())
}

fn polarity_from_disk(raw: i64, loc: impl Fn() -> String) -> Result<i8> {
    match raw {
        0 => Ok(-1),
        1 => Ok(1),
        value => Err(Error::Polarity {
            location: loc(),
            value,
        }),
    }
}

fn polarity_to_disk(p: i8) -> u8 {
    u8::from(p > 0)
}

pub fn read_events(path: &Path, format: Format) -> Result<EventStream> {
    let bytes = fsio::read_all(path)?;
    match format {
        Format::Csv => {
            let text = std::str::from_utf8(&bytes).map_err(|e| Error::Malformed {
                location: path.display().to_string(),
                reason: e.to_string(),
            })?;
            parse_csv(text)
        }
        Format::Bin => decode_bin(&bytes),
    }
}

pub fn write_events(stream: &EventStream, path: &Path, format: Format) -> Result<()> {
    stream.validate()?;
    let bytes = match format {
        Format::Csv => encode_csv(stream).into_bytes(),
        Format::Bin => encode_bin(stream),
    };
    fsio::write_atomic(path, &bytes)
}

pub fn parse_csv(text: &str) -> Result<EventStream> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| Error::Malformed {
        location: "line 1".into(),
        reason: "missing width,height header".into(),
    })?;
    let dims: Vec<&str> = header.trim().split(',').collect();
    let bad_header = || Error::Malformed {
        location: "line 1".into(),
        reason: format!("expected header \"width,height\", got {header:?}"),
    };
    if dims.len() != 2 {
        return Err(bad_header());
    }
    let width: u16 = dims[0].trim().parse().map_err(|_| bad_header())?;
    let height: u16 = dims[1].trim().parse().map_err(|_| bad_header())?;

    let mut events = Vec::new();
    for (i, line) in lines {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let lineno = i + 1;
        let loc = || format!("line {lineno}");
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 4 {
            return Err(Error::Malformed {
                location: loc(),
                reason: format!("expected 4 fields t,x,y,p, got {}", fields.len()),
            });
        }
        let num = |s: &str, what: &str| -> Result<i64> {
            s.parse::<i64>().map_err(|_| Error::Malformed {
                location: loc(),
                reason: format!("{what} {s:?} is not an integer"),
            })
        };
        let t = num(fields[0], "timestamp")?;
        let x = num(fields[1], "x")?;
        let y = num(fields[2], "y")?;
        let p = polarity_from_disk(num(fields[3], "polarity")?, loc)?;
        if t < 0 {
            return Err(Error::Malformed {
                location: loc(),
                reason: "negative timestamp".into(),
            });
        }
        if x < 0 || y < 0 || x >= width as i64 || y >= height as i64 {
            return Err(Error::OutOfBounds {
                location: loc(),
                x: x.max(0) as u64,
                y: y.max(0) as u64,
                width,
                height,
            });
        }
        events.push(Event::new(t as u64, x as u16, y as u16, p));
    }
    let mut stream = EventStream::new(width, height, events);
    stream.resorted = stream.sort_stable();
    Ok(stream)
}

pub fn encode_csv(stream: &EventStream) -> String {
    let mut out = String::with_capacity(16 + stream.len() * 16);
    let _ = writeln!(out, "{},{}", stream.width, stream.height);
    for e in &stream.events {
        let _ = writeln!(out, "{},{},{},{}", e.t, e.x, e.y, polarity_to_disk(e.p));
    }
    out
}

pub fn decode_bin(bytes: &[u8]) -> Result<EventStream> {
    if bytes.len() < BIN_HEADER_LEN || &bytes[..8] != BIN_MAGIC {
        return Err(Error::Malformed {
            location: "offset 0".into(),
            reason: "missing EVDN0001 header".into(),
        });
    }
    let width = u16::from_le_bytes([bytes[8], bytes[9]]);
    let height = u16::from_le_bytes([bytes[10], bytes[11]]);
    let body = &bytes[BIN_HEADER_LEN..];
    if !body.len().is_multiple_of(BIN_RECORD_LEN) {
        return Err(Error::Malformed {
            location: format!(
                "offset {}",
                BIN_HEADER_LEN + body.len() / BIN_RECORD_LEN * BIN_RECORD_LEN
            ),
            reason: format!(
                "truncated record ({} trailing bytes)",
                body.len() % BIN_RECORD_LEN
            ),
        });
    }
    let n = body.len() / BIN_RECORD_LEN;
    let mut events = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    let mut unlabeled = 0usize;
    for (i, rec) in body.chunks_exact(BIN_RECORD_LEN).enumerate() {
        let offset = BIN_HEADER_LEN + i * BIN_RECORD_LEN;
        let loc = || format!("offset {offset}");
        let t = u64::from_le_bytes(rec[0..8].try_into().unwrap());
        let x = u16::from_le_bytes([rec[8], rec[9]]);
        let y = u16::from_le_bytes([rec[10], rec[11]]);
        let p = polarity_from_disk(rec[12] as i64, loc)?;
        let e = Event::new(t, x, y, p);
        check_event(&e, width, height, loc)?;
        match rec[13] {
            LABEL_NOISE | LABEL_SIGNAL => labels.push(rec[13]),
            LABEL_NONE => unlabeled += 1,
            other => {
                return Err(Error::Malformed {
                    location: loc(),
                    reason: format!("label byte {other} not in {{0, 1, 255}}"),
                })
            }
        }
        events.push(e);
    }
    if unlabeled != 0 && unlabeled != n {
        return Err(Error::Malformed {
            location: "label bytes".into(),
            reason: format!("{unlabeled} of {n} records unlabeled; labels must be all-or-none"),
        });
    }
    let mut stream = EventStream::new(width, height, events);
    if unlabeled == 0 && n > 0 {
        stream.labels = Some(labels);
    }
    stream.resorted = stream.sort_stable();
    Ok(stream)
}

pub fn encode_bin(stream: &EventStream) -> Vec<u8> {
    let mut out = Vec::with_capacity(BIN_HEADER_LEN + stream.len() * BIN_RECORD_LEN);
    out.extend_from_slice(BIN_MAGIC);
    out.extend_from_slice(&stream.width.to_le_bytes());
    out.extend_from_slice(&stream.height.to_le_bytes());
    for (i, e) in stream.events.iter().enumerate() {
        out.extend_from_slice(&e.t.to_le_bytes());
        out.extend_from_slice(&e.x.to_le_bytes());
        out.extend_from_slice(&e.y.to_le_bytes());
        out.push(polarity_to_disk(e.p));
        out.push(stream.labels.as_ref().map_or(LABEL_NONE, |l| l[i]));
    }
    out
}

/// Consecutive windows produced by [`segment_stream`].
#[derive(Debug, Clone)]
pub struct Segments {
    pub windows: Vec<EventStream>,
    /// Index of each window's first event in the source stream.
    pub offsets: Vec<usize>,
    /// Trailing events dropped because fewer than two remained.
    pub remainder: usize,
}

pub fn segment_stream(stream: &EventStream, n_per_segment: usize) -> Result<Segments> {
    if n_per_segment < 2 {
        return Err(Error::InvalidArgument(format!(
            "segment length must be at least 2, got {n_per_segment}"
        )));
    }
    let mut windows = Vec::new();
    let mut offsets = Vec::new();
    let mut start = 0;
    let n = stream.len();
    while start < n {
        let end = (start + n_per_segment).min(n);
        if end - start < 2 {
            break;
        }
        windows.push(stream.slice(start, end));
        offsets.push(start);
        start = end;
    }
    Ok(Segments {
        windows,
        offsets,
        remainder: n - start,
    })
}

/// One point of a normalized event cloud. `z` is time scaled into `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CloudPoint {
    pub x: u16,
    pub y: u16,
    pub z: f64,
    pub p: i8,
}

/// A segment as a 4D point set `(x, y, z, p)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EventCloud {
    pub width: u16,
    pub height: u16,
    pub points: Vec<CloudPoint>,
    /// Index of each point in the stream the cloud was built from.
    pub src_index: Vec<usize>,
    pub labels: Option<Vec<u8>>,
    pub t0: u64,
    pub te: u64,
}

impl EventCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Adds `offset` to every source index, e.g. to map a window back into
    /// the full stream.
    pub fn shift_src(mut self, offset: usize) -> Self {
        for s in &mut self.src_index {
            *s += offset;
        }
        self
    }

    /// Keeps the listed point indices, in the given order.
    pub fn select(&self, idx: &[usize]) -> EventCloud {
        EventCloud {
            width: self.width,
            height: self.height,
            points: idx.iter().map(|&i| self.points[i]).collect(),
            src_index: idx.iter().map(|&i| self.src_index[i]).collect(),
            labels: self
                .labels
                .as_ref()
                .map(|l| idx.iter().map(|&i| l[i]).collect()),
            t0: self.t0,
            te: self.te,
        }
    }
}

/// Maps a window to its event cloud with `z = (t - t0) / (te - t0)`.
///
/// When every timestamp is equal all `z` are 0.
pub fn normalize_segment(window: &EventStream) -> Result<EventCloud> {
    let (first, last) = match (window.events.first(), window.events.last()) {
        (Some(f), Some(l)) => (f, l),
        _ => return Err(Error::Empty("cannot normalize an empty window")),
    };
    let t0 = first.t;
    let te = last.t;
    let span = (te - t0) as f64;
    let points = window
        .events
        .iter()
        .map(|e| CloudPoint {
            x: e.x,
            y: e.y,
            z: if te == t0 {
                0.0
            } else {
                ((e.t - t0) as f64 / span).clamp(0.0, 1.0)
            },
            p: e.p,
        })
        .collect();
    Ok(EventCloud {
        width: window.width,
        height: window.height,
        points,
        src_index: (0..window.len()).collect(),
        labels: window.labels.clone(),
        t0,
        te,
    })
}
