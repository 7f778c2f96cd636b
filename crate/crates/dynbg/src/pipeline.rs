//! The online test-phase pipeline: compose the foreground map from the two
//! background models, maintain the per-pixel flicker-entropy threshold, and
//! emit binary masks — strictly one frame at a time, never looking ahead.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::dataset::FrameProvider;
use crate::error::{Error, Result};
use crate::labels::{residual, ChannelReduce};
use crate::nn::ae::{generate_background, Autoencoder};
use crate::nn::unet::{predict_dynamic, UNet};
use crate::types::{BinaryMask, EntropyMap, ImageTensor, ScalarMap};

/// Foreground thresholding parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ThresholdParams {
    /// Initial-segmentation factor: S_init = F > alpha * max(F).
    pub alpha: f32,
    /// Distance-threshold factor: R = beta * max(F) + C.
    pub beta: f32,
}

impl Default for ThresholdParams {
    fn default() -> Self {
        ThresholdParams {
            alpha: 0.2,
            beta: 0.08,
        }
    }
}

impl ThresholdParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) || !(self.beta > 0.0) {
            return Err(Error::Config {
                reason: format!(
                    "alpha and beta must be > 0, got alpha={} beta={}",
                    self.alpha, self.beta
                ),
            });
        }
        Ok(())
    }
}

/// Post-processing parameters: median blur then morphological closing.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PostProcParams {
    /// Median-filter kernel side; odd, >= 1 (1 disables the filter).
    pub median_kernel: usize,
    /// Closing structuring-element side; >= 1 (1 disables closing).
    pub closing_kernel: usize,
    pub closing_iterations: usize,
}

impl Default for PostProcParams {
    fn default() -> Self {
        PostProcParams {
            median_kernel: 5,
            closing_kernel: 3,
            closing_iterations: 1,
        }
    }
}

impl PostProcParams {
    pub fn validate(&self) -> Result<()> {
        if self.median_kernel == 0 || self.median_kernel % 2 == 0 {
            return Err(Error::Config {
                reason: format!(
                    "median_kernel must be odd and >= 1, got {}",
                    self.median_kernel
                ),
            });
        }
        if self.closing_kernel == 0 {
            return Err(Error::Config {
                reason: "closing_kernel must be >= 1".into(),
            });
        }
        Ok(())
    }
}

/// Whether thresholds run strictly online or recompute the literal batch
/// statistics over the whole test range (oracle comparisons only).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PipelineMode {
    #[default]
    Online,
    /// Two-pass: global max(F) over calibration + all test frames, entropy
    /// map computed in batch over the full initial-mask history, a single
    /// static threshold map for every frame.
    BatchGlobal,
}

/// Running per-pixel flicker state: the entropy accumulator C, the previous
/// initial mask, the frame counter, and the running maximum of F.
#[derive(Clone, Debug)]
pub struct EntropyMapState {
    pub c: EntropyMap,
    pub prev_init_mask: Option<BinaryMask>,
    pub frames_seen: usize,
    pub running_max_f: f32,
}

impl EntropyMapState {
    pub fn new(shape: (usize, usize), initial_max_f: f32) -> Self {
        EntropyMapState {
            c: EntropyMap::zeros(shape),
            prev_init_mask: None,
            frames_seen: 0,
            running_max_f: initial_max_f,
        }
    }

    pub fn mean_c(&self) -> f64 {
        if self.c.is_empty() {
            return 0.0;
        }
        self.c.sum() / self.c.len() as f64
    }
}

/// F(x) = residual(I, B)(x) * (1 - D(x)): the reconstruction residual with
/// known dynamic-background pixels annihilated.
pub fn compose_foreground(
    i: &ImageTensor,
    b: &ImageTensor,
    d: &BinaryMask,
    reduce: ChannelReduce,
) -> Result<ScalarMap> {
    let r = residual(i, b, reduce)?;
    if r.dim() != d.dim() {
        return Err(Error::ShapeMismatch {
            context: "compose_foreground dynamic mask".into(),
            expected: vec![r.dim().0, r.dim().1],
            got: vec![d.dim().0, d.dim().1],
        });
    }
    let mut f = r;
    for (v, &dyn_px) in f.iter_mut().zip(d.iter()) {
        if dyn_px {
            *v = 0.0;
        }
    }
    Ok(f)
}

/// S_init(x) = 1 iff F(x) > alpha * max_F (strict; ties are background).
pub fn initial_segment(f: &ScalarMap, alpha: f32, max_f: f32) -> BinaryMask {
    let threshold = alpha * max_f;
    f.mapv(|v| v > threshold)
}

/// Online entropy update. For the t-th frame (t = frames_seen + 1):
/// t = 1 leaves C at zero; t >= 2 folds XOR(S_t, S_{t-1}) into the running
/// average so that C(x) = (1/(t-1)) * sum_{k=2..t} XOR(S_k(x), S_{k-1}(x)).
pub fn update_entropy(state: &mut EntropyMapState, s_init: &BinaryMask) -> Result<()> {
    if s_init.dim() != state.c.dim() {
        return Err(Error::ShapeMismatch {
            context: "update_entropy".into(),
            expected: vec![state.c.dim().0, state.c.dim().1],
            got: vec![s_init.dim().0, s_init.dim().1],
        });
    }
    let t = state.frames_seen + 1;
    if t >= 2 {
        let prev = state
            .prev_init_mask
            .as_ref()
            .expect("frames_seen >= 1 implies a previous mask");
        let tm1 = (t - 1) as f64;
        let tm2 = (t - 2) as f64;
        for ((c, &cur), &pr) in state.c.iter_mut().zip(s_init.iter()).zip(prev.iter()) {
            let xor = f64::from(u8::from(cur != pr));
            *c = (tm2 * *c + xor) / tm1;
        }
    }
    state.prev_init_mask = Some(s_init.clone());
    state.frames_seen = t;
    Ok(())
}

/// Literal batch form of the entropy map over a full mask history:
/// C(x) = (1/(N-1)) * sum_{k=2..N} XOR(S_k(x), S_{k-1}(x)); N <= 1 gives 0.
pub fn batch_entropy(masks: &[BinaryMask]) -> EntropyMap {
    let Some(first) = masks.first() else {
        return EntropyMap::zeros((0, 0));
    };
    let mut c = EntropyMap::zeros(first.dim());
    if masks.len() < 2 {
        return c;
    }
    for pair in masks.windows(2) {
        for (acc, (&a, &b)) in c.iter_mut().zip(pair[0].iter().zip(pair[1].iter())) {
            *acc += f64::from(u8::from(a != b));
        }
    }
    c / (masks.len() - 1) as f64
}

/// R(x) = beta * running_max_F + C(x) — the per-pixel distance threshold.
/// High-flicker pixels (C near 1) become effectively impossible to exceed
/// since F <= 1.
pub fn distance_threshold(state: &EntropyMapState, beta: f32) -> EntropyMap {
    let base = f64::from(beta) * f64::from(state.running_max_f);
    state.c.mapv(|c| base + c)
}

/// S(x) = 1 iff F(x) > R(x) (strict).
pub fn final_segment(f: &ScalarMap, r: &EntropyMap) -> Result<BinaryMask> {
    if f.dim() != r.dim() {
        return Err(Error::ShapeMismatch {
            context: "final_segment".into(),
            expected: vec![f.dim().0, f.dim().1],
            got: vec![r.dim().0, r.dim().1],
        });
    }
    Ok(Array2::from_shape_fn(f.dim(), |idx| {
        f64::from(f[idx]) > r[idx]
    }))
}

fn clamp_window(center: usize, radius: usize, n: usize) -> (usize, usize) {
    (center.saturating_sub(radius), (center + radius + 1).min(n))
}

/// Binary median filter with edge replication: a pixel becomes the majority
/// value of its k x k neighbourhood (edge pixels replicate outward, which is
/// equivalent to counting clamped in-bounds samples with multiplicity).
fn median_binary(mask: &BinaryMask, k: usize) -> BinaryMask {
    if k <= 1 {
        return mask.clone();
    }
    let (h, w) = mask.dim();
    let radius = k / 2;
    let majority = (k * k) / 2; // strict: ones > k^2/2 with k odd
    Array2::from_shape_fn((h, w), |(y, x)| {
        let mut ones = 0usize;
        for wy in 0..k {
            let sy = (y + wy).saturating_sub(radius).min(h - 1);
            for wx in 0..k {
                let sx = (x + wx).saturating_sub(radius).min(w - 1);
                ones += usize::from(mask[(sy, sx)]);
            }
        }
        ones > majority
    })
}

fn dilate(mask: &BinaryMask, k: usize) -> BinaryMask {
    let (h, w) = mask.dim();
    let radius = k / 2;
    Array2::from_shape_fn((h, w), |(y, x)| {
        let (y0, y1) = clamp_window(y, radius, h);
        let (x0, x1) = clamp_window(x, radius, w);
        (y0..y1).any(|sy| (x0..x1).any(|sx| mask[(sy, sx)]))
    })
}

fn erode(mask: &BinaryMask, k: usize) -> BinaryMask {
    let (h, w) = mask.dim();
    let radius = k / 2;
    Array2::from_shape_fn((h, w), |(y, x)| {
        let (y0, y1) = clamp_window(y, radius, h);
        let (x0, x1) = clamp_window(x, radius, w);
        (y0..y1).all(|sy| (x0..x1).all(|sx| mask[(sy, sx)]))
    })
}

/// Median blur, then `closing_iterations` rounds of binary closing (dilate
/// then erode) with a square structuring element. Borders replicate edges.
pub fn postprocess(mask: &BinaryMask, params: &PostProcParams) -> BinaryMask {
    let mut out = median_binary(mask, params.median_kernel);
    if params.closing_kernel > 1 {
        for _ in 0..params.closing_iterations {
            out = erode(&dilate(&out, params.closing_kernel), params.closing_kernel);
        }
    }
    out
}

/// Everything the pipeline produces for one frame, plus threshold
/// diagnostics snapshotted right after the frame was folded in.
#[derive(Clone, Debug)]
pub struct SegmentationResult {
    /// 1-based index in the source sequence.
    pub frame_index: usize,
    pub s_init: BinaryMask,
    pub s_final: BinaryMask,
    pub s_postproc: BinaryMask,
    pub f: ScalarMap,
    pub d: BinaryMask,
    pub b: ImageTensor,
    /// running_max_f after this frame.
    pub max_f: f32,
    /// Mean of the entropy map after this frame.
    pub mean_c: f64,
}

impl SegmentationResult {
    pub fn foreground_pixels(&self) -> usize {
        self.s_postproc.iter().filter(|&&v| v).count()
    }
}

/// Pipeline-stage configuration shared by online and batch modes.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PipelineParams {
    pub thresholds: ThresholdParams,
    pub postproc: PostProcParams,
    pub channel_reduce: ChannelReduce,
    pub mode: PipelineMode,
}

/// The "pipeline head" for one frame: static background, dynamic mask,
/// composed foreground.
fn head<BG, DYN>(
    frame: &ImageTensor,
    bg: &mut BG,
    dynmask: &mut DYN,
    reduce: ChannelReduce,
) -> Result<(ImageTensor, BinaryMask, ScalarMap)>
where
    BG: FnMut(&ImageTensor) -> Result<ImageTensor>,
    DYN: FnMut(&ImageTensor) -> Result<BinaryMask>,
{
    let b = bg(frame)?;
    let d = dynmask(frame)?;
    let f = compose_foreground(frame, &b, &d, reduce)?;
    Ok((b, d, f))
}

/// Runs the pipeline with arbitrary background/dynamic-mask generators.
/// `first_frame_index` numbers the first yielded frame (1-based sequence
/// numbering). Returns the final entropy state.
///
/// Online mode is strictly causal: the result for frame t is emitted before
/// frame t+1 is requested from the provider, with no lookahead or re-reads.
/// Batch mode buffers the whole range and recomputes the literal global
/// statistics (for oracle comparisons), so it is deliberately not online.
pub fn run_pipeline_with<BG, DYN, EMIT>(
    provider: &mut dyn FrameProvider,
    mut bg: BG,
    mut dynmask: DYN,
    params: &PipelineParams,
    initial_max_f: f32,
    first_frame_index: usize,
    mut emit: EMIT,
) -> Result<EntropyMapState>
where
    BG: FnMut(&ImageTensor) -> Result<ImageTensor>,
    DYN: FnMut(&ImageTensor) -> Result<BinaryMask>,
    EMIT: FnMut(SegmentationResult) -> Result<()>,
{
    params.thresholds.validate()?;
    params.postproc.validate()?;
    let alpha = params.thresholds.alpha;
    let beta = params.thresholds.beta;

    match params.mode {
        PipelineMode::Online => {
            let mut state: Option<EntropyMapState> = None;
            let mut index = first_frame_index;
            while let Some(frame) = provider.next_frame() {
                let frame = frame?;
                let (b, d, f) = head(&frame, &mut bg, &mut dynmask, params.channel_reduce)?;
                let st = state.get_or_insert_with(|| {
                    EntropyMapState::new(f.dim(), initial_max_f)
                });
                let frame_max = f.iter().copied().fold(0.0f32, f32::max);
                st.running_max_f = st.running_max_f.max(frame_max);
                let s_init = initial_segment(&f, alpha, st.running_max_f);
                update_entropy(st, &s_init)?;
                let r = distance_threshold(st, beta);
                let s_final = final_segment(&f, &r)?;
                let s_postproc = postprocess(&s_final, &params.postproc);
                emit(SegmentationResult {
                    frame_index: index,
                    s_init,
                    s_final,
                    s_postproc,
                    f,
                    d,
                    b,
                    max_f: st.running_max_f,
                    mean_c: st.mean_c(),
                })?;
                index += 1;
            }
            state.ok_or_else(|| Error::Config {
                reason: "pipeline received an empty frame range".into(),
            })
        }
        PipelineMode::BatchGlobal => {
            // Pass 1: run the head everywhere, find the global max(F).
            let mut heads: Vec<(ImageTensor, BinaryMask, ScalarMap)> = Vec::new();
            while let Some(frame) = provider.next_frame() {
                let frame = frame?;
                heads.push(head(&frame, &mut bg, &mut dynmask, params.channel_reduce)?);
            }
            if heads.is_empty() {
                return Err(Error::Config {
                    reason: "pipeline received an empty frame range".into(),
                });
            }
            let global_max = heads
                .iter()
                .flat_map(|(_, _, f)| f.iter().copied())
                .fold(initial_max_f, f32::max);

            // Pass 2: initial masks under the global max, literal batch C,
            // one static threshold map for every frame.
            let inits: Vec<BinaryMask> = heads
                .iter()
                .map(|(_, _, f)| initial_segment(f, alpha, global_max))
                .collect();
            let c = batch_entropy(&inits);
            let mut state = EntropyMapState::new(c.dim(), global_max);
            state.c = c;
            state.frames_seen = heads.len();
            state.running_max_f = global_max;
            state.prev_init_mask = inits.last().cloned();
            let r = distance_threshold(&state, beta);
            let mean_c = state.mean_c();

            for (offset, ((b, d, f), s_init)) in heads.into_iter().zip(inits).enumerate() {
                let s_final = final_segment(&f, &r)?;
                let s_postproc = postprocess(&s_final, &params.postproc);
                emit(SegmentationResult {
                    frame_index: first_frame_index + offset,
                    s_init,
                    s_final,
                    s_postproc,
                    f,
                    d,
                    b,
                    max_f: global_max,
                    mean_c,
                })?;
            }
            Ok(state)
        }
    }
}

/// Runs the pipeline with the two trained networks.
pub fn run_pipeline<EMIT>(
    provider: &mut dyn FrameProvider,
    ae: &mut Autoencoder<f32>,
    unet: &mut UNet<f32>,
    params: &PipelineParams,
    initial_max_f: f32,
    first_frame_index: usize,
    emit: EMIT,
) -> Result<EntropyMapState>
where
    EMIT: FnMut(SegmentationResult) -> Result<()>,
{
    run_pipeline_with(
        provider,
        |frame| generate_background(ae, frame),
        |frame| Ok(predict_dynamic(unet, frame)),
        params,
        initial_max_f,
        first_frame_index,
        emit,
    )
}

/// Calibration pass: runs the pipeline head over the object-free training
/// frames and returns the maximum foreground value seen. Seeds the online
/// running max so early test frames get stable thresholds. Does not touch
/// the entropy map.
pub fn calibrate_max_f(
    frames: &[ImageTensor],
    ae: &mut Autoencoder<f32>,
    unet: &mut UNet<f32>,
    reduce: ChannelReduce,
) -> Result<f32> {
    let mut max_f = 0.0f32;
    for frame in frames {
        let b = generate_background(ae, frame)?;
        let d = predict_dynamic(unet, frame);
        let f = compose_foreground(frame, &b, &d, reduce)?;
        max_f = max_f.max(f.iter().copied().fold(0.0f32, f32::max));
    }
    Ok(max_f)
}
