//! Segmentation metrics and the motion-quantile evaluation protocol.

use std::collections::BTreeMap;
use std::fmt;
use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::flow::mean_flow_magnitude_at;
use crate::types::{FlowField, SegmentationMask};

fn check_dims(pred: &SegmentationMask, gt: &SegmentationMask) -> Result<()> {
    if !pred.same_dims(gt) {
        return Err(Error::DimensionMismatch(format!(
            "prediction is {}x{}, ground truth is {}x{}",
            pred.width(),
            pred.height(),
            gt.width(),
            gt.height()
        )));
    }
    Ok(())
}

/// Per-class intersection and union pixel counts, accumulated over any
/// number of mask pairs.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IouCounts {
    pub intersection: Vec<u64>,
    pub union: Vec<u64>,
}

impl IouCounts {
    pub fn new(num_classes: usize) -> Self {
        Self {
            intersection: vec![0; num_classes],
            union: vec![0; num_classes],
        }
    }

    pub fn num_classes(&self) -> usize {
        self.union.len()
    }

    pub fn add(&mut self, pred: &SegmentationMask, gt: &SegmentationMask) -> Result<()> {
        check_dims(pred, gt)?;
        let l = self.num_classes();
        pred.validate(l)?;
        gt.validate(l)?;
        for (&p, &g) in pred.labels().iter().zip(gt.labels()) {
            if p == g {
                self.intersection[p as usize] += 1;
                self.union[p as usize] += 1;
            } else {
                self.union[p as usize] += 1;
                self.union[g as usize] += 1;
            }
        }
        Ok(())
    }

    /// IoU per class; `None` for classes absent from both sides.
    pub fn per_class(&self) -> Vec<Option<f64>> {
        self.intersection
            .iter()
            .zip(&self.union)
            .map(|(&i, &u)| (u > 0).then(|| i as f64 / u as f64))
            .collect()
    }

    /// Mean over present classes; `None` if nothing was counted.
    pub fn mean(&self) -> Option<f64> {
        let present: Vec<f64> = self.per_class().into_iter().flatten().collect();
        (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Miou {
    pub mean: f64,
    pub per_class: Vec<Option<f64>>,
}

/// Mean intersection over union of one mask pair. Classes that appear in
/// neither mask do not count toward the mean.
pub fn miou(pred: &SegmentationMask, gt: &SegmentationMask, num_classes: usize) -> Result<Miou> {
    let mut counts = IouCounts::new(num_classes);
    counts.add(pred, gt)?;
    Ok(Miou {
        // masks are at least 2x2, so some class is always present
        mean: counts.mean().unwrap_or(f64::NAN),
        per_class: counts.per_class(),
    })
}

/// Fraction of all pixels predicted as `target` where the ground truth
/// disagrees.
pub fn fp_rate(pred: &SegmentationMask, gt: &SegmentationMask, target: u8) -> Result<f64> {
    check_dims(pred, gt)?;
    let fp = pred
        .labels()
        .iter()
        .zip(gt.labels())
        .filter(|&(&p, &g)| p == target && g != target)
        .count();
    Ok(fp as f64 / pred.labels().len() as f64)
}

/// Empirical quantile with linear interpolation between order statistics.
/// `sorted` must be ascending and nonempty.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Positions of frames in each motion subset.
#[derive(Clone, Debug, PartialEq)]
pub struct MotionPartition {
    pub low: Vec<usize>,
    pub mid: Vec<usize>,
    pub high: Vec<usize>,
    pub low_threshold: f64,
    pub high_threshold: f64,
    /// All motions were equal; `low` and `high` then both hold every frame.
    pub degenerate: bool,
}

pub const MIN_PARTITION_SAMPLES: usize = 5;

/// Splits frames by motion: `<= q(low_q)` is low, otherwise `>= q(high_q)`
/// is high, everything else is mid.
pub fn motion_quantile_partition(motion: &[f64], low_q: f64, high_q: f64) -> Result<MotionPartition> {
    if motion.len() < MIN_PARTITION_SAMPLES {
        return Err(Error::InsufficientSamples {
            needed: MIN_PARTITION_SAMPLES,
            got: motion.len(),
        });
    }
    if let Some(i) = motion.iter().position(|m| !m.is_finite()) {
        return Err(Error::NonFinite(i));
    }
    if !(0.0..=1.0).contains(&low_q) || !(0.0..=1.0).contains(&high_q) || low_q > high_q {
        return Err(Error::InvalidConfig(format!("bad quantiles {low_q}, {high_q}")));
    }
    let mut sorted = motion.to_vec();
    sorted.sort_by(f64::total_cmp);
    let low_threshold = quantile(&sorted, low_q);
    let high_threshold = quantile(&sorted, high_q);

    if sorted[0] == sorted[sorted.len() - 1] {
        log::warn!("all {} frames have equal motion; low and high subsets both hold every frame", motion.len());
        let all: Vec<usize> = (0..motion.len()).collect();
        return Ok(MotionPartition {
            low: all.clone(),
            mid: Vec::new(),
            high: all,
            low_threshold,
            high_threshold,
            degenerate: true,
        });
    }
    let (mut low, mut mid, mut high) = (Vec::new(), Vec::new(), Vec::new());
    for (i, &m) in motion.iter().enumerate() {
        if m <= low_threshold {
            low.push(i);
        } else if m >= high_threshold {
            high.push(i);
        } else {
            mid.push(i);
        }
    }
    Ok(MotionPartition {
        low,
        mid,
        high,
        low_threshold,
        high_threshold,
        degenerate: false,
    })
}

/// Spearman rank correlation, with tied values sharing their mean rank.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch(format!("{} vs {} samples", x.len(), y.len())));
    }
    if x.len() < 2 {
        return Err(Error::InsufficientSamples { needed: 2, got: x.len() });
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    Ok(sxy / (sxx * syy).sqrt())
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && v[order[j + 1]] == v[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            out[k] = rank;
        }
        i = j + 1;
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Subset {
    All,
    Low20,
    Mid60,
    High20,
}

impl Subset {
    pub const ALL: [Subset; 4] = [Subset::All, Subset::Low20, Subset::Mid60, Subset::High20];
}

impl fmt::Display for Subset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Subset::All => "all",
            Subset::Low20 => "low20",
            Subset::Mid60 => "mid60",
            Subset::High20 => "high20",
        })
    }
}

/// Labeled frames of one video with the predictions of every method.
#[derive(Clone, Debug, Default)]
pub struct VideoEval {
    pub name: String,
    /// Ground truth keyed by frame index.
    pub ground_truth: BTreeMap<usize, SegmentationMask>,
    /// Flow used at each frame, on any grid; rescaled to mask pixels.
    pub flows: BTreeMap<usize, FlowField>,
    /// `(method name, masks keyed by frame index)`.
    pub predictions: Vec<(String, BTreeMap<usize, SegmentationMask>)>,
}

#[derive(Clone, Debug)]
pub struct EvalConfig {
    pub num_classes: usize,
    pub low_q: f64,
    pub high_q: f64,
    /// Compute motion thresholds inside each video instead of over the run.
    pub per_video_quantiles: bool,
}

impl EvalConfig {
    pub fn new(num_classes: usize) -> Self {
        Self {
            num_classes,
            low_q: 0.2,
            high_q: 0.8,
            per_video_quantiles: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalRow {
    pub method: String,
    pub subset: Subset,
    /// Pooled over the subset's frames; `None` for an empty subset.
    pub miou: Option<f64>,
    pub frames: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FrameMetrics {
    pub video: String,
    pub method: String,
    pub frame: usize,
    pub motion: f64,
    pub subset: Subset,
    pub miou: f64,
    pub per_class_iou: Vec<Option<f64>>,
    pub fp_rate: Vec<f64>,
}

#[derive(Clone, Debug, Default)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub frames: Vec<FrameMetrics>,
    /// Some partition collapsed because all motions were equal.
    pub degenerate: bool,
}

pub const EVAL_HEADER: &str = "method,subset,miou";

impl EvalReport {
    pub fn get(&self, method: &str, subset: Subset) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.method == method && r.subset == subset)
            .and_then(|r| r.miou)
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{EVAL_HEADER}\n");
        for r in &self.rows {
            match r.miou {
                Some(v) => writeln!(out, "{},{},{v:.6}", r.method, r.subset),
                None => writeln!(out, "{},{},nan", r.method, r.subset),
            }
            .expect("writing to a String");
        }
        out
    }

    pub fn to_jsonl(&self) -> String {
        self.frames
            .iter()
            .map(|f| serde_json::to_string(f).expect("metrics serialize") + "\n")
            .collect()
    }
}

/// Pooled mIoU per method over all labeled frames and over each motion
/// subset. A frame's motion is the mean length of the flow used for it,
/// expressed in ground-truth pixels.
pub fn evaluate_run(videos: &[VideoEval], cfg: &EvalConfig) -> Result<EvalReport> {
    // (video, frame index, motion)
    let mut labeled: Vec<(usize, usize, f64)> = Vec::new();
    for (v, video) in videos.iter().enumerate() {
        for (&idx, gt) in &video.ground_truth {
            let flow = video.flows.get(&idx).ok_or(Error::MissingInput { what: "flow", frame: idx })?;
            labeled.push((v, idx, mean_flow_magnitude_at(flow, gt.height(), gt.width())));
        }
    }

    let mut subsets: Vec<Vec<Subset>> = vec![vec![Subset::All]; labeled.len()];
    let mut degenerate = false;
    let groups: Vec<Vec<usize>> = if cfg.per_video_quantiles {
        (0..videos.len())
            .map(|v| (0..labeled.len()).filter(|&i| labeled[i].0 == v).collect())
            .collect()
    } else {
        vec![(0..labeled.len()).collect()]
    };
    for group in groups {
        if group.is_empty() {
            continue;
        }
        let motion: Vec<f64> = group.iter().map(|&i| labeled[i].2).collect();
        let part = motion_quantile_partition(&motion, cfg.low_q, cfg.high_q)?;
        degenerate |= part.degenerate;
        for (set, tag) in [(&part.low, Subset::Low20), (&part.mid, Subset::Mid60), (&part.high, Subset::High20)] {
            for &k in set {
                subsets[group[k]].push(tag);
            }
        }
    }

    let mut methods: Vec<&str> = Vec::new();
    for video in videos {
        for (name, _) in &video.predictions {
            if !methods.contains(&name.as_str()) {
                methods.push(name);
            }
        }
    }

    let mut report = EvalReport {
        degenerate,
        ..Default::default()
    };
    for method in methods {
        let mut counts: BTreeMap<Subset, (IouCounts, usize)> = Subset::ALL
            .iter()
            .map(|&s| (s, (IouCounts::new(cfg.num_classes), 0)))
            .collect();
        for (i, &(v, idx, motion)) in labeled.iter().enumerate() {
            let video = &videos[v];
            let gt = &video.ground_truth[&idx];
            let pred = video
                .predictions
                .iter()
                .find(|(n, _)| n == method)
                .and_then(|(_, m)| m.get(&idx))
                .ok_or(Error::MissingInput { what: "prediction", frame: idx })?;
            let single = miou(pred, gt, cfg.num_classes)?;
            for &s in &subsets[i] {
                let entry = counts.get_mut(&s).expect("all subsets present");
                entry.0.add(pred, gt)?;
                entry.1 += 1;
            }
            report.frames.push(FrameMetrics {
                video: video.name.clone(),
                method: method.to_string(),
                frame: idx,
                motion,
                subset: *subsets[i].get(1).unwrap_or(&Subset::All),
                miou: single.mean,
                per_class_iou: single.per_class,
                fp_rate: (0..cfg.num_classes)
                    .map(|c| fp_rate(pred, gt, c as u8))
                    .collect::<Result<_>>()?,
            });
        }
        for (subset, (c, n)) in counts {
            report.rows.push(EvalRow {
                method: method.to_string(),
                subset,
                miou: if n == 0 { None } else { c.mean() },
                frames: n,
            });
        }
    }
    Ok(report)
}
