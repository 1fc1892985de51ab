//! Sequence orchestration with per-stage timing.
//!
//! Two executors share the same arithmetic. The sequential one runs every
//! stage back to back. The parallel one estimates flow on a worker thread
//! while the coordinator encodes the same frame; warp, fuse and decode run
//! after both finish, so the recursion stays strict.

use std::fmt::Write as _;
use std::sync::mpsc;
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::flow::FlowEstimator;
use crate::fusion::{absorb, check_frame, needs_flow, step_sequential, StepDurations, TemporalState};
use crate::model::SegmentationModel;
use crate::types::{Executor, FeatureMap, FlowField, FlowScale, Frame, PipelineConfig, SegmentationMask};

/// Wall-clock cost of one frame, in microseconds.
#[derive(Clone, Debug, PartialEq)]
pub struct StageTiming {
    pub frame: usize,
    pub flow_us: f64,
    pub encode_us: f64,
    pub warp_us: f64,
    pub fuse_us: f64,
    pub decode_us: f64,
    pub total_us: f64,
    pub executor: Executor,
    pub flow_scale: FlowScale,
}

pub const STAGES: [&str; 6] = ["flow", "encode", "warp", "fuse", "decode", "total"];

impl StageTiming {
    fn new(frame: usize, d: &StepDurations, total: Duration, cfg: &PipelineConfig) -> Self {
        let us = |d: Duration| d.as_secs_f64() * 1e6;
        Self {
            frame,
            flow_us: us(d.flow),
            encode_us: us(d.encode),
            warp_us: us(d.warp),
            fuse_us: us(d.fuse),
            decode_us: us(d.decode),
            total_us: us(total),
            executor: cfg.executor,
            flow_scale: cfg.flow_scale,
        }
    }

    /// Stage durations in the order of [`STAGES`].
    pub fn stages(&self) -> [f64; 6] {
        [
            self.flow_us,
            self.encode_us,
            self.warp_us,
            self.fuse_us,
            self.decode_us,
            self.total_us,
        ]
    }
}

/// Everything produced for one input frame.
#[derive(Clone, Debug)]
pub struct FrameOutput {
    /// Index carried by the input frame.
    pub index: usize,
    pub mask: SegmentationMask,
    /// Raw flow used for this frame, on the estimator's grid.
    pub flow: Option<FlowField>,
    pub timing: StageTiming,
}

#[derive(Clone, Debug, Default)]
pub struct RunOutput {
    pub masks: Vec<SegmentationMask>,
    pub timings: Vec<StageTiming>,
}

impl RunOutput {
    fn push(&mut self, out: FrameOutput) {
        self.masks.push(out.mask);
        self.timings.push(out.timing);
    }
}

/// Runs the sequential executor, handing each frame's output to `sink` in
/// input order.
pub fn run_sequential_with<I, F>(
    frames: I,
    model: &dyn SegmentationModel,
    estimator: &dyn FlowEstimator,
    cfg: &PipelineConfig,
    mut sink: F,
) -> Result<usize>
where
    I: IntoIterator<Item = Result<Frame>>,
    F: FnMut(FrameOutput) -> Result<()>,
{
    cfg.validate()?;
    let mut state: Option<TemporalState> = None;
    let mut count = 0;
    for (pos, frame) in frames.into_iter().enumerate() {
        let frame = frame.map_err(|e| e.at_frame(pos))?;
        let index = frame.index();
        let start = Instant::now();
        let mut times = StepDurations::default();
        let (next, mask, flow) = step_sequential(state.take(), Arc::new(frame), model, estimator, cfg, &mut times)
            .map_err(|e| e.at_frame(index))?;
        let timing = StageTiming::new(index, &times, start.elapsed(), cfg);
        state = Some(next);
        sink(FrameOutput { index, mask, flow, timing })?;
        count += 1;
    }
    finish(count)
}

type FlowJob = (Arc<Frame>, Arc<Frame>);
type FlowReply = (Result<FlowField>, Duration);

/// Runs the parallel executor, handing each frame's output to `sink` in
/// input order. Flow for frame `j` runs on a dedicated worker thread while
/// the calling thread encodes frame `j`.
pub fn run_parallel_with<I, F>(
    frames: I,
    model: &dyn SegmentationModel,
    estimator: &dyn FlowEstimator,
    cfg: &PipelineConfig,
    mut sink: F,
) -> Result<usize>
where
    I: IntoIterator<Item = Result<Frame>>,
    F: FnMut(FrameOutput) -> Result<()>,
{
    cfg.validate()?;
    thread::scope(|scope| {
        let (job_tx, job_rx) = mpsc::channel::<FlowJob>();
        let (reply_tx, reply_rx) = mpsc::channel::<FlowReply>();
        scope.spawn(move || {
            for (prev, curr) in job_rx {
                let t = Instant::now();
                let flow = estimator.estimate(&prev, &curr);
                if reply_tx.send((flow, t.elapsed())).is_err() {
                    break;
                }
            }
        });

        let mut state: Option<TemporalState> = None;
        let mut count = 0;
        for (pos, frame) in frames.into_iter().enumerate() {
            let frame = Arc::new(frame.map_err(|e| e.at_frame(pos))?);
            let index = frame.index();
            let start = Instant::now();
            let mut times = StepDurations::default();
            let mut step = || -> Result<_> {
                check_frame(state.as_ref(), &frame)?;
                let pending = needs_flow(state.as_ref(), cfg);
                if pending {
                    let prev = Arc::clone(&state.as_ref().expect("checked").prev_frame);
                    job_tx
                        .send((prev, Arc::clone(&frame)))
                        .map_err(|_| Error::InvalidConfig("flow worker stopped".into()))?;
                }
                let t = Instant::now();
                let features: Result<FeatureMap> = model.encode(&frame);
                times.encode = t.elapsed();
                // always drain the reply so the worker never runs ahead
                let flow = if pending {
                    let (flow, took) = reply_rx
                        .recv()
                        .map_err(|_| Error::InvalidConfig("flow worker stopped".into()))?;
                    times.flow = took;
                    Some(flow?)
                } else {
                    None
                };
                let features = features?;
                absorb(state.take(), Arc::clone(&frame), features, flow.clone(), model, cfg, &mut times)
                    .map(|(s, m)| (s, m, flow))
            };
            let (next, mask, flow) = step().map_err(|e| e.at_frame(index))?;
            let timing = StageTiming::new(index, &times, start.elapsed(), cfg);
            state = Some(next);
            sink(FrameOutput { index, mask, flow, timing })?;
            count += 1;
        }
        drop(job_tx);
        finish(count)
    })
}

fn finish(count: usize) -> Result<usize> {
    if count == 0 {
        return Err(Error::InsufficientSamples { needed: 1, got: 0 });
    }
    Ok(count)
}

/// Dispatches on `cfg.executor`.
pub fn run_with<I, F>(
    frames: I,
    model: &dyn SegmentationModel,
    estimator: &dyn FlowEstimator,
    cfg: &PipelineConfig,
    sink: F,
) -> Result<usize>
where
    I: IntoIterator<Item = Result<Frame>>,
    F: FnMut(FrameOutput) -> Result<()>,
{
    match cfg.executor {
        Executor::Sequential => run_sequential_with(frames, model, estimator, cfg, sink),
        Executor::Parallel => run_parallel_with(frames, model, estimator, cfg, sink),
    }
}

fn collect<R>(run: R) -> Result<RunOutput>
where
    R: FnOnce(&mut dyn FnMut(FrameOutput) -> Result<()>) -> Result<usize>,
{
    let mut out = RunOutput::default();
    run(&mut |f| {
        out.push(f);
        Ok(())
    })?;
    Ok(out)
}

pub fn run_sequential<I>(
    frames: I,
    model: &dyn SegmentationModel,
    estimator: &dyn FlowEstimator,
    cfg: &PipelineConfig,
) -> Result<RunOutput>
where
    I: IntoIterator<Item = Result<Frame>>,
{
    collect(|sink| run_sequential_with(frames, model, estimator, cfg, sink))
}

pub fn run_parallel<I>(
    frames: I,
    model: &dyn SegmentationModel,
    estimator: &dyn FlowEstimator,
    cfg: &PipelineConfig,
) -> Result<RunOutput>
where
    I: IntoIterator<Item = Result<Frame>>,
{
    collect(|sink| run_parallel_with(frames, model, estimator, cfg, sink))
}

/// Runs whichever executor `cfg` selects and collects the results.
pub fn run<I>(
    frames: I,
    model: &dyn SegmentationModel,
    estimator: &dyn FlowEstimator,
    cfg: &PipelineConfig,
) -> Result<RunOutput>
where
    I: IntoIterator<Item = Result<Frame>>,
{
    collect(|sink| run_with(frames, model, estimator, cfg, sink))
}

/// Test hook that sleeps before delegating. Wraps either a flow estimator
/// (delays `estimate`) or a model (delays `encode` only).
#[derive(Clone, Debug)]
pub struct Delayed<T> {
    pub inner: T,
    pub delay: Duration,
}

impl<T> Delayed<T> {
    pub fn new(inner: T, delay: Duration) -> Self {
        Self { inner, delay }
    }
}

impl<T: FlowEstimator> FlowEstimator for Delayed<T> {
    fn estimate(&self, prev: &Frame, curr: &Frame) -> Result<FlowField> {
        thread::sleep(self.delay);
        self.inner.estimate(prev, curr)
    }
}

impl<T: SegmentationModel> SegmentationModel for Delayed<T> {
    fn num_classes(&self) -> usize {
        self.inner.num_classes()
    }

    fn encode(&self, frame: &Frame) -> Result<FeatureMap> {
        thread::sleep(self.delay);
        self.inner.encode(frame)
    }

    fn decode(&self, features: &FeatureMap) -> Result<SegmentationMask> {
        self.inner.decode(features)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StageSummary {
    pub stage: &'static str,
    pub mean_us: f64,
    /// Sample standard deviation.
    pub std_us: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchmarkReport {
    pub stages: Vec<StageSummary>,
    pub executor: Executor,
    pub flow_scale: FlowScale,
    /// Frames per second sustainable at the mean total latency.
    pub achievable_hz: f64,
}

pub const REPORT_HEADER: &str = "stage,mean_us,std_us,mode,flow_scale";

impl BenchmarkReport {
    pub fn stage(&self, name: &str) -> Option<&StageSummary> {
        self.stages.iter().find(|s| s.stage == name)
    }

    /// Stage rows followed by the `achievable_hz` line, without a header.
    pub fn csv_rows(&self) -> String {
        let mut out = String::new();
        for s in &self.stages {
            let _ = writeln!(
                out,
                "{},{:.3},{:.3},{},{}",
                s.stage, s.mean_us, s.std_us, self.executor, self.flow_scale
            );
        }
        let _ = writeln!(out, "achievable_hz,{:.3},,{},{}", self.achievable_hz, self.executor, self.flow_scale);
        out
    }

    pub fn to_csv(&self) -> String {
        format!("{REPORT_HEADER}\n{}", self.csv_rows())
    }
}

/// Mean and sample standard deviation per stage over a run.
///
/// Executor and flow scale are taken from the first row.
pub fn benchmark_report(timings: &[StageTiming]) -> Result<BenchmarkReport> {
    if timings.len() < 2 {
        return Err(Error::InsufficientSamples {
            needed: 2,
            got: timings.len(),
        });
    }
    let n = timings.len() as f64;
    let stages: Vec<StageSummary> = STAGES
        .iter()
        .enumerate()
        .map(|(k, &stage)| {
            let mean = timings.iter().map(|t| t.stages()[k]).sum::<f64>() / n;
            let var = timings.iter().map(|t| (t.stages()[k] - mean).powi(2)).sum::<f64>() / (n - 1.0);
            StageSummary {
                stage,
                mean_us: mean,
                std_us: var.sqrt(),
            }
        })
        .collect();
    let total = stages[5].mean_us;
    Ok(BenchmarkReport {
        executor: timings[0].executor,
        flow_scale: timings[0].flow_scale,
        achievable_hz: if total > 0.0 { 1e6 / total } else { f64::INFINITY },
        stages,
    })
}

pub const TIMINGS_HEADER: &str = "frame,flow_us,encode_us,warp_us,fuse_us,decode_us,total_us,mode,flow_scale";

/// Per-frame timings as CSV with a header row.
pub fn timings_csv(timings: &[StageTiming]) -> String {
    let mut out = format!("{TIMINGS_HEADER}\n");
    for t in timings {
        let _ = write!(out, "{}", t.frame);
        for v in t.stages() {
            let _ = write!(out, ",{v:.3}");
        }
        let _ = writeln!(out, ",{},{}", t.executor, t.flow_scale);
    }
    out
}
