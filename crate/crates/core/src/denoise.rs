//! Stream-level scoring with the learned model or a classical filter.

use rayon::prelude::*;

use crate::baselines::{classical_filter, FilterParams, Method};
use crate::error::{Error, Result};
use crate::events::{normalize_segment, EventStream};
use crate::net::{model_forward, signal_prob, ModelConfig, ModelWeights};
use crate::tensor::Mat;

/// Learned-model events are kept when their signal probability exceeds this.
pub const MODEL_KEEP_THRESHOLD: f64 = 0.5;

pub const DEFAULT_SEGMENT_LEN: usize = 2048;

/// `[start, end)` windows of `segment_len` events covering all `n` events; a
/// single leftover event joins the last window.
pub fn scoring_windows(n: usize, segment_len: usize) -> Result<Vec<(usize, usize)>> {
    if segment_len < 2 {
        return Err(Error::InvalidArgument(format!(
            "segment length must be at least 2, got {segment_len}"
        )));
    }
    let mut out: Vec<(usize, usize)> = (0..n)
        .step_by(segment_len)
        .map(|s| (s, (s + segment_len).min(n)))
        .collect();
    if out.len() > 1 && out[out.len() - 1].1 - out[out.len() - 1].0 == 1 {
        out.pop();
        if let Some(last) = out.last_mut() {
            last.1 = n;
        }
    }
    Ok(out)
}

/// Logits `[noise, signal]` for every event of `stream`, computed window by
/// window. An unsorted stream is processed in stable time order and the
/// results are returned in the original positions.
pub fn model_logits(
    stream: &EventStream,
    w: &ModelWeights,
    cfg: &ModelConfig,
    segment_len: usize,
) -> Result<Vec<[f64; 2]>> {
    if stream.is_empty() {
        return Err(Error::Empty("cannot score an empty stream"));
    }
    let perm = if stream.events.windows(2).all(|p| p[0].t <= p[1].t) {
        None
    } else {
        let mut perm: Vec<usize> = (0..stream.len()).collect();
        perm.sort_by_key(|&i| stream.events[i].t);
        Some(perm)
    };
    let sorted;
    let src = match &perm {
        Some(perm) => {
            sorted = EventStream::new(
                stream.width,
                stream.height,
                perm.iter().map(|&i| stream.events[i]).collect(),
            );
            &sorted
        }
        None => stream,
    };
    let windows = scoring_windows(src.len(), segment_len)?;
    let per: Vec<Mat> = windows
        .par_iter()
        .map(|&(a, b)| {
            let mut cloud = normalize_segment(&src.slice(a, b))?;
            cloud.labels = None;
            model_forward(&cloud, w, cfg)
        })
        .collect::<Result<_>>()?;
    let mut out = vec![[0.0; 2]; stream.len()];
    for (&(a, _), logits) in windows.iter().zip(per) {
        for r in 0..logits.rows {
            let dst = perm.as_ref().map_or(a + r, |p| p[a + r]);
            out[dst] = [logits.row(r)[0], logits.row(r)[1]];
        }
    }
    Ok(out)
}

/// Signal probability for every event of `stream`; see [`model_logits`].
pub fn model_scores(
    stream: &EventStream,
    w: &ModelWeights,
    cfg: &ModelConfig,
    segment_len: usize,
) -> Result<Vec<f64>> {
    Ok(model_logits(stream, w, cfg, segment_len)?
        .iter()
        .map(|l| signal_prob(l))
        .collect())
}

pub fn model_keep(scores: &[f64]) -> Vec<bool> {
    scores.iter().map(|&s| s > MODEL_KEEP_THRESHOLD).collect()
}

/// Scores and keep-mask for a classical filter. The stream must be sorted.
pub fn classical(stream: &EventStream, method: Method) -> Result<(Vec<f64>, Vec<bool>)> {
    classical_filter(stream, &FilterParams::new(method))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::{segment_stream, Event};
    use crate::net::predict_scores;

    fn stream(n: usize) -> EventStream {
        let events = (0..n)
            .map(|i| {
                Event::new(
                    i as u64 * 37 % 500,
                    (i * 7 % 16) as u16,
                    (i * 3 % 12) as u16,
                    if i % 3 == 0 { 1 } else { -1 },
                )
            })
            .collect();
        EventStream::new(16, 12, events)
    }

    #[test]
    fn windows_cover_everything() {
        assert_eq!(scoring_windows(5, 2).unwrap(), vec![(0, 2), (2, 5)]);
        assert_eq!(scoring_windows(6, 2).unwrap(), vec![(0, 2), (2, 4), (4, 6)]);
        assert_eq!(scoring_windows(1, 4).unwrap(), vec![(0, 1)]);
        assert_eq!(scoring_windows(7, 3).unwrap(), vec![(0, 3), (3, 7)]);
        assert!(scoring_windows(4, 1).is_err());
    }

    #[test]
    fn segment_scores_match_direct_forward() {
        let cfg = ModelConfig::tiny();
        let w = ModelWeights::init(&cfg, 3).unwrap();
        let mut s = stream(60);
        s.sort_stable();
        let scores = model_scores(&s, &w, &cfg, 20).unwrap();
        let segs = segment_stream(&s, 20).unwrap();
        for (win, off) in segs.windows.iter().zip(&segs.offsets) {
            let direct = predict_scores(&normalize_segment(win).unwrap(), &w, &cfg).unwrap();
            assert_eq!(&scores[*off..off + win.len()], &direct[..]);
        }
    }

    #[test]
    fn unsorted_input_is_scored_in_place() {
        let cfg = ModelConfig::tiny();
        let w = ModelWeights::init(&cfg, 4).unwrap();
        let raw = stream(40);
        let mut perm: Vec<usize> = (0..raw.len()).collect();
        perm.sort_by_key(|&i| raw.events[i].t);
        let sorted = EventStream::new(16, 12, perm.iter().map(|&i| raw.events[i]).collect());
        let a = model_scores(&raw, &w, &cfg, 16).unwrap();
        let b = model_scores(&sorted, &w, &cfg, 16).unwrap();
        for (k, &i) in perm.iter().enumerate() {
            assert_eq!(a[i], b[k]);
        }
    }

    #[test]
    fn trailing_event_joins_last_window() {
        let cfg = ModelConfig::tiny();
        let w = ModelWeights::init(&cfg, 5).unwrap();
        let mut s = stream(21);
        s.sort_stable();
        let scores = model_scores(&s, &w, &cfg, 10).unwrap();
        let direct =
            predict_scores(&normalize_segment(&s.slice(10, 21)).unwrap(), &w, &cfg).unwrap();
        assert_eq!(&scores[10..], &direct[..]);
    }
}
