//! ROC/AUC on labeled events and a count-image structural ratio for
//! label-free comparison.

use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::events::{Event, EventStream};

/// Default number of events per structural-ratio window.
pub const DEFAULT_ESR_WINDOW: usize = 30_000;

#[derive(Debug, Clone, PartialEq)]
pub struct RocResult {
    pub auc: f64,
    /// Decreasing score thresholds; the first is `+inf` (nothing accepted).
    pub thresholds: Vec<f64>,
    pub tpr: Vec<f64>,
    pub fpr: Vec<f64>,
}

impl RocResult {
    /// Area under the swept curve by the trapezoid rule.
    pub fn trapezoid(&self) -> f64 {
        self.fpr
            .windows(2)
            .zip(self.tpr.windows(2))
            .map(|(f, t)| (f[1] - f[0]) * (t[0] + t[1]) / 2.0)
            .sum()
    }

    /// `threshold,fpr,tpr` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("threshold,fpr,tpr\n");
        for i in 0..self.thresholds.len() {
            let _ = writeln!(
                out,
                "{},{},{}",
                self.thresholds[i], self.fpr[i], self.tpr[i]
            );
        }
        out
    }
}

fn check_labels(scores: &[f64], labels: &[u8]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(i) = scores.iter().position(|s| s.is_nan()) {
        return Err(Error::NonFinite(format!("score {i}")));
    }
    let mut pos = 0;
    for &l in labels {
        match l {
            0 => {}
            1 => pos += 1,
            other => return Err(Error::Label(other)),
        }
    }
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::SingleClass {
            positives: pos,
            negatives: neg,
        });
    }
    Ok((pos, neg))
}

/// ROC curve over distinct score thresholds; AUC counts ties as one half.
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Result<RocResult> {
    let (pos, neg) = check_labels(scores, labels)?;
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut thresholds = vec![f64::INFINITY];
    let mut tpr = vec![0.0];
    let mut fpr = vec![0.0];
    let (mut tp, mut fp) = (0usize, 0usize);
    // Mann-Whitney numerator, doubled so ties stay integral
    let mut twice_wins: u128 = 0;
    let mut k = 0;
    while k < idx.len() {
        let s = scores[idx[k]];
        let (mut gp, mut gn) = (0usize, 0usize);
        while k < idx.len() && scores[idx[k]] == s {
            if labels[idx[k]] == 1 {
                gp += 1;
            } else {
                gn += 1;
            }
            k += 1;
        }
        // positives in this group beat every negative below it and tie with gn
        twice_wins += gp as u128 * (2 * (neg - fp - gn) + gn) as u128;
        tp += gp;
        fp += gn;
        thresholds.push(s);
        tpr.push(tp as f64 / pos as f64);
        fpr.push(fp as f64 / neg as f64);
    }
    let auc = twice_wins as f64 / (2.0 * pos as f64 * neg as f64);
    Ok(RocResult {
        auc,
        thresholds,
        tpr,
        fpr,
    })
}

/// AUC alone.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    Ok(roc_auc(scores, labels)?.auc)
}

/// RMS over mean of the per-pixel count image.
pub fn esr<'a>(
    events: impl IntoIterator<Item = &'a Event>,
    width: u16,
    height: u16,
) -> Result<f64> {
    let p = usize::from(width) * usize::from(height);
    if p == 0 {
        return Err(Error::InvalidArgument("sensor has no pixels".into()));
    }
    let mut counts = vec![0u64; p];
    let mut total = 0u64;
    for e in events {
        if e.x >= width || e.y >= height {
            return Err(Error::OutOfBounds {
                location: "esr".into(),
                x: u64::from(e.x),
                y: u64::from(e.y),
                width,
                height,
            });
        }
        counts[usize::from(e.y) * usize::from(width) + usize::from(e.x)] += 1;
        total += 1;
    }
    if total == 0 {
        return Err(Error::Empty("structural ratio of an empty event set"));
    }
    let sq: f64 = counts.iter().map(|&c| (c * c) as f64).sum();
    let pf = p as f64;
    Ok((sq / pf).sqrt() / (total as f64 / pf))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MesrResult {
    pub mesr: f64,
    pub window: usize,
    /// `ESR(kept) / ESR(all)` per window, 0 where nothing was kept.
    pub per_window: Vec<f64>,
}

/// Mean structural-ratio gain of `keep` over consecutive windows of `window`
/// events. A final shorter window is included.
pub fn mesr(raw: &EventStream, keep: &[bool], window: usize) -> Result<MesrResult> {
    if raw.is_empty() {
        return Err(Error::Empty("structural ratio of an empty stream"));
    }
    if keep.len() != raw.len() {
        return Err(Error::Shape(format!(
            "{} mask entries for {} events",
            keep.len(),
            raw.len()
        )));
    }
    if window == 0 {
        return Err(Error::InvalidArgument("window must be positive".into()));
    }
    let mut per_window = Vec::new();
    for (ev, mask) in raw.events.chunks(window).zip(keep.chunks(window)) {
        let kept: Vec<&Event> = ev
            .iter()
            .zip(mask)
            .filter(|(_, &k)| k)
            .map(|(e, _)| e)
            .collect();
        if kept.is_empty() {
            per_window.push(0.0);
            continue;
        }
        let all = esr(ev, raw.width, raw.height)?;
        per_window.push(esr(kept, raw.width, raw.height)? / all);
    }
    let mesr = per_window.iter().sum::<f64>() / per_window.len() as f64;
    Ok(MesrResult {
        mesr,
        window,
        per_window,
    })
}

/// Summary written by the `eval` command.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub auc: Option<f64>,
    pub mesr: Option<f64>,
    pub per_window: Vec<f64>,
    pub events: usize,
    pub kept: usize,
}
