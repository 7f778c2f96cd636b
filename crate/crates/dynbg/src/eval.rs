//! CDnet-convention scoring: confusion counts under spatial/temporal ROI and
//! the standard ground-truth label encoding, F-measure with explicit
//! degenerate-case conventions, report emission, a naive median-background
//! foil, and the throughput benchmark.

use std::io::Write as _;
use std::path::Path;
use std::time::Instant;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::dataset::{self, FrameProvider, SequenceManifest};
use crate::error::{Error, Result};
use crate::labels::{residual, threshold_residual, ChannelReduce};
use crate::nn::ae::Autoencoder;
use crate::nn::unet::UNet;
use crate::pipeline::{postprocess, run_pipeline, PipelineParams, PostProcParams};
use crate::types::{load_mask_png, BinaryMask, ImageTensor};

/// CDnet ground-truth label values.
pub const GT_NEGATIVE: u8 = 0;
pub const GT_SHADOW: u8 = 50;
pub const GT_OUT_OF_ROI: u8 = 85;
pub const GT_UNKNOWN: u8 = 170;
pub const GT_POSITIVE: u8 = 255;

/// Pixel-level confusion counts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn add(&mut self, other: &ConfusionCounts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
        self.tn += other.tn;
    }
}

/// Compares a binary prediction against a CDnet-encoded ground-truth image
/// inside a region of interest. Pixels labelled 85 (out of ROI) or 170
/// (unknown/boundary) are not counted; 50 (shadow) counts as negative.
pub fn compare_masks(
    pred: &BinaryMask,
    gt: &Array2<u8>,
    roi: &BinaryMask,
) -> Result<ConfusionCounts> {
    if pred.dim() != gt.dim() || pred.dim() != roi.dim() {
        return Err(Error::ShapeMismatch {
            context: "compare_masks".into(),
            expected: vec![gt.dim().0, gt.dim().1],
            got: vec![pred.dim().0, pred.dim().1],
        });
    }
    let mut counts = ConfusionCounts::default();
    for ((&p, &g), &inside) in pred.iter().zip(gt.iter()).zip(roi.iter()) {
        if !inside {
            continue;
        }
        match g {
            GT_POSITIVE => {
                if p {
                    counts.tp += 1;
                } else {
                    counts.fn_ += 1;
                }
            }
            GT_NEGATIVE | GT_SHADOW => {
                if p {
                    counts.fp += 1;
                } else {
                    counts.tn += 1;
                }
            }
            GT_OUT_OF_ROI | GT_UNKNOWN => {}
            other => {
                return Err(Error::GroundTruthValue {
                    context: "compare_masks".into(),
                    value: other,
                });
            }
        }
    }
    Ok(counts)
}

/// recall = tp / (tp + fn); 0/0 -> 0.
pub fn recall(c: &ConfusionCounts) -> f64 {
    if c.tp + c.fn_ == 0 {
        0.0
    } else {
        c.tp as f64 / (c.tp + c.fn_) as f64
    }
}

/// precision = tp / (tp + fp); 0/0 -> 0.
pub fn precision(c: &ConfusionCounts) -> f64 {
    if c.tp + c.fp == 0 {
        0.0
    } else {
        c.tp as f64 / (c.tp + c.fp) as f64
    }
}

/// FM = 2 * recall * precision / (recall + precision); 0 when the
/// denominator vanishes.
pub fn f_measure(c: &ConfusionCounts) -> f64 {
    let r = recall(c);
    let p = precision(c);
    if r + p == 0.0 {
        0.0
    } else {
        2.0 * r * p / (r + p)
    }
}

/// Sequence-level evaluation report.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalReport {
    pub sequence: String,
    pub counts: ConfusionCounts,
    pub recall: f64,
    pub precision: f64,
    pub f_measure: f64,
    pub frames_evaluated: usize,
}

impl EvalReport {
    pub fn from_counts(sequence: impl Into<String>, counts: ConfusionCounts, frames: usize) -> Self {
        EvalReport {
            sequence: sequence.into(),
            recall: recall(&counts),
            precision: precision(&counts),
            f_measure: f_measure(&counts),
            counts,
            frames_evaluated: frames,
        }
    }

    /// CSV row: sequence,tp,fp,fn,tn,recall,precision,fm.
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{:.6},{:.6},{:.6}",
            self.sequence,
            self.counts.tp,
            self.counts.fp,
            self.counts.fn_,
            self.counts.tn,
            self.recall,
            self.precision,
            self.f_measure
        )
    }

    pub const CSV_HEADER: &'static str = "sequence,tp,fp,fn,tn,recall,precision,fm";
}

/// Writes the CSV report (header + one row per report).
pub fn write_reports_csv(path: &Path, reports: &[EvalReport]) -> Result<()> {
    let mut out = String::from(EvalReport::CSV_HEADER);
    out.push('\n');
    for r in reports {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path.to_path_buf(), e))
}

/// Markdown summary table with F-measure printed to two decimals.
pub fn markdown_summary(reports: &[EvalReport]) -> String {
    let mut s = String::from("| Sequence | Recall | Precision | FM |\n|---|---|---|---|\n");
    for r in reports {
        s.push_str(&format!(
            "| {} | {:.2} | {:.2} | {:.2} |\n",
            r.sequence, r.recall, r.precision, r.f_measure
        ));
    }
    if reports.len() > 1 {
        let avg =
            reports.iter().map(|r| r.f_measure).sum::<f64>() / reports.len() as f64;
        s.push_str(&format!("| **Average** | | | **{avg:.2}** |\n"));
    }
    s
}

/// Scores every evaluable frame (inside the temporal ROI, with ground truth
/// available) of a sequence against the mask files in `masks_dir`
/// (`bin%06d.png`, native resolution). Fails up front, listing every frame
/// whose mask file is missing.
pub fn evaluate_sequence(manifest: &SequenceManifest, masks_dir: &Path) -> Result<EvalReport> {
    let (first, last) = manifest.temporal_roi;
    let mut evaluable: Vec<usize> = Vec::new();
    let mut missing: Vec<usize> = Vec::new();
    for t in first..=last.min(manifest.num_frames()) {
        if manifest.gt_path(t).is_none() {
            continue;
        }
        evaluable.push(t);
        if !masks_dir.join(dataset::mask_file_name(t)).exists() {
            missing.push(t);
        }
    }
    if !missing.is_empty() {
        return Err(Error::DatasetLayout {
            dir: masks_dir.to_path_buf(),
            reason: format!("missing mask files for frames {missing:?}"),
        });
    }
    if evaluable.is_empty() {
        return Err(Error::DatasetLayout {
            dir: masks_dir.to_path_buf(),
            reason: "no evaluable frames (temporal ROI and ground truth do not overlap)".into(),
        });
    }

    let mut counts = ConfusionCounts::default();
    for &t in &evaluable {
        let gt_path = manifest
            .gt_path(t)
            .expect("evaluable frames were selected for having ground truth");
        let gt = dataset::load_gt_image(gt_path)?;
        let pred = load_mask_png(&masks_dir.join(dataset::mask_file_name(t)))?;
        let roi = match &manifest.roi_mask {
            Some(r) => r.clone(),
            None => Array2::from_elem(gt.dim(), true),
        };
        counts.add(&compare_masks(&pred, &gt, &roi)?);
    }
    Ok(EvalReport::from_counts(
        manifest.name.clone(),
        counts,
        evaluable.len(),
    ))
}

/// Per-pixel, per-channel temporal median of the given frames — the
/// background model of the naive foil.
pub fn median_background(frames: &[ImageTensor]) -> Result<ImageTensor> {
    let first = frames.first().ok_or_else(|| Error::Config {
        reason: "median background needs at least one frame".into(),
    })?;
    let (h, w, c) = first.dim();
    for (i, f) in frames.iter().enumerate() {
        if f.dim() != first.dim() {
            return Err(Error::ShapeMismatch {
                context: format!("median background frame {i}"),
                expected: vec![h, w, c],
                got: vec![f.dim().0, f.dim().1, f.dim().2],
            });
        }
    }
    let mut out = ImageTensor::zeros((h, w, c));
    let mut samples = Vec::with_capacity(frames.len());
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                samples.clear();
                samples.extend(frames.iter().map(|f| f[(y, x, ch)]));
                samples.sort_by(|a, b| a.partial_cmp(b).expect("frame values are finite"));
                let n = samples.len();
                out[(y, x, ch)] = if n % 2 == 1 {
                    samples[n / 2]
                } else {
                    0.5 * (samples[n / 2 - 1] + samples[n / 2])
                };
            }
        }
    }
    Ok(out)
}

/// The foil: temporal-median background + one global residual threshold +
/// the same post-processing. No dynamic-background model, no entropy map.
pub fn median_baseline<EMIT>(
    training_frames: &[ImageTensor],
    provider: &mut dyn FrameProvider,
    theta: f32,
    post: &PostProcParams,
    reduce: ChannelReduce,
    mut emit: EMIT,
) -> Result<()>
where
    EMIT: FnMut(usize, BinaryMask) -> Result<()>,
{
    post.validate()?;
    let background = median_background(training_frames)?;
    let mut index = 0usize;
    while let Some(frame) = provider.next_frame() {
        let frame = frame?;
        let r = residual(&frame, &background, reduce)?;
        let mask = postprocess(&threshold_residual(&r, theta), post);
        index += 1;
        emit(index, mask)?;
    }
    Ok(())
}

/// One throughput measurement record.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FpsRecord {
    pub fps: f64,
    pub frames: usize,
    pub working_size: (usize, usize, usize),
    pub hardware: String,
    /// Individual per-repeat FPS measurements (median is `fps`).
    pub runs: Vec<f64>,
}

impl FpsRecord {
    /// One-line structured record.
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("record serializes")
    }
}

/// Best-effort CPU descriptor for the benchmark record.
pub fn hardware_descriptor() -> String {
    let cores = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1);
    let model = std::fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|s| {
            s.lines()
                .find(|l| l.starts_with("model name"))
                .and_then(|l| l.split(':').nth(1))
                .map(|m| m.trim().to_string())
        })
        .unwrap_or_else(|| std::env::consts::ARCH.to_string());
    format!("{model} ({cores} threads)")
}

/// Measures end-to-end pipeline throughput over pre-loaded frames: per
/// repeat, `warmup` frames are processed untimed, then the full pass is
/// timed; the reported FPS is the median across repeats.
pub fn benchmark_fps(
    frames: &[ImageTensor],
    ae: &mut Autoencoder<f32>,
    unet: &mut UNet<f32>,
    params: &PipelineParams,
    warmup: usize,
    repeats: usize,
) -> Result<FpsRecord> {
    if frames.is_empty() {
        return Err(Error::Config {
            reason: "benchmark needs at least one frame".into(),
        });
    }
    if repeats == 0 {
        return Err(Error::Config {
            reason: "benchmark needs repeats >= 1".into(),
        });
    }
    let mut runs = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        if warmup > 0 {
            let head: Vec<ImageTensor> =
                frames.iter().take(warmup).cloned().collect();
            let mut provider = dataset::VecFrames::new(head);
            run_pipeline(&mut provider, ae, unet, params, 0.0, 1, |_| Ok(()))?;
        }
        let mut provider = dataset::VecFrames::new(frames.to_vec());
        let start = Instant::now();
        run_pipeline(&mut provider, ae, unet, params, 0.0, 1, |_| Ok(()))?;
        let elapsed = start.elapsed().as_secs_f64();
        runs.push(frames.len() as f64 / elapsed.max(1e-9));
    }
    let mut sorted = runs.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let fps = if sorted.len() % 2 == 1 {
        sorted[sorted.len() / 2]
    } else {
        0.5 * (sorted[sorted.len() / 2 - 1] + sorted[sorted.len() / 2])
    };
    let dim = frames[0].dim();
    Ok(FpsRecord {
        fps,
        frames: frames.len(),
        working_size: dim,
        hardware: hardware_descriptor(),
        runs,
    })
}

/// Appends one benchmark record as a JSON line (trend log).
pub fn append_fps_log(path: &Path, record: &FpsRecord) -> Result<()> {
    let mut file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path.to_path_buf(), e))?;
    writeln!(file, "{}", record.to_json()).map_err(|e| Error::io(path.to_path_buf(), e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;
    use proptest::prelude::*;

    fn full_roi(h: usize, w: usize) -> BinaryMask {
        Array2::from_elem((h, w), true)
    }

    #[test]
    fn perfect_prediction_has_no_errors() {
        let gt = Array2::from_shape_fn((4, 4), |(y, x)| if (y + x) % 2 == 0 { 255 } else { 0 });
        let pred = gt.mapv(|v| v == 255);
        let c = compare_masks(&pred, &gt, &full_roi(4, 4)).unwrap();
        assert_eq!(c.fp, 0);
        assert_eq!(c.fn_, 0);
        assert_eq!(c.tp, 8);
        assert_eq!(c.tn, 8);
    }

    #[test]
    fn cdnet_label_semantics_fixture() {
        // gt = [[255, 0], [85, 170]], pred = all ones.
        let gt = Array2::from_shape_vec((2, 2), vec![255u8, 0, 85, 170]).unwrap();
        let pred = Array2::from_elem((2, 2), true);
        let c = compare_masks(&pred, &gt, &full_roi(2, 2)).unwrap();
        assert_eq!(
            c,
            ConfusionCounts {
                tp: 1,
                fp: 1,
                fn_: 0,
                tn: 0
            }
        );
    }

    #[test]
    fn shadow_counts_as_negative() {
        let gt = Array2::from_elem((1, 2), GT_SHADOW);
        let mut pred = Array2::default((1, 2));
        pred[(0, 0)] = true;
        let c = compare_masks(&pred, &gt, &full_roi(1, 2)).unwrap();
        assert_eq!((c.fp, c.tn), (1, 1));
    }

    #[test]
    fn empty_roi_counts_nothing() {
        let gt = Array2::from_elem((3, 3), GT_POSITIVE);
        let pred = Array2::from_elem((3, 3), true);
        let roi = Array2::default((3, 3));
        let c = compare_masks(&pred, &gt, &roi).unwrap();
        assert_eq!(c.total(), 0);
    }

    #[test]
    fn invalid_gt_value_is_named() {
        let gt = Array2::from_elem((1, 1), 99u8);
        let pred = Array2::default((1, 1));
        let err = compare_masks(&pred, &gt, &full_roi(1, 1)).unwrap_err();
        assert!(err.to_string().contains("99"), "got {err}");
    }

    #[test]
    fn f_measure_fixtures() {
        assert_eq!(
            f_measure(&ConfusionCounts { tp: 1, fp: 0, fn_: 0, tn: 0 }),
            1.0
        );
        let c = ConfusionCounts { tp: 2, fp: 1, fn_: 1, tn: 5 };
        assert!((recall(&c) - 2.0 / 3.0).abs() < 1e-12);
        assert!((precision(&c) - 2.0 / 3.0).abs() < 1e-12);
        assert!((f_measure(&c) - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(
            f_measure(&ConfusionCounts { tp: 0, fp: 3, fn_: 2, tn: 1 }),
            0.0
        );
        assert_eq!(f_measure(&ConfusionCounts::default()), 0.0);
    }

    #[test]
    fn recall_equals_precision_implies_fm_equals_both() {
        // fp = fn with tp fixed gives recall = precision = FM.
        let c = ConfusionCounts { tp: 6, fp: 2, fn_: 2, tn: 0 };
        let r = recall(&c);
        assert!((f_measure(&c) - r).abs() < 1e-12);
        assert!((precision(&c) - r).abs() < 1e-12);
    }

    #[test]
    fn median_background_fixtures() {
        // Alternating 0/1 with odd count -> majority value.
        let mut frames = Vec::new();
        for k in 0..5 {
            frames.push(Array3::from_elem((1, 1, 3), if k % 2 == 0 { 1.0f32 } else { 0.0 }));
        }
        let bg = median_background(&frames).unwrap();
        assert_eq!(bg[(0, 0, 0)], 1.0, "three 1s out of five");

        let constant: Vec<ImageTensor> =
            (0..4).map(|_| Array3::from_elem((2, 2, 3), 0.25f32)).collect();
        let bg = median_background(&constant).unwrap();
        assert!(bg.iter().all(|&v| v == 0.25));
    }

    #[test]
    fn median_baseline_on_constant_sequence_is_empty() {
        let train: Vec<ImageTensor> =
            (0..3).map(|_| Array3::from_elem((6, 6, 3), 0.5f32)).collect();
        let test: Vec<ImageTensor> =
            (0..4).map(|_| Array3::from_elem((6, 6, 3), 0.5f32)).collect();
        let mut provider = dataset::VecFrames::new(test);
        let mut total = 0usize;
        median_baseline(
            &train,
            &mut provider,
            0.1,
            &PostProcParams::default(),
            ChannelReduce::Max,
            |_, mask| {
                assert!(mask.iter().all(|&v| !v));
                total += 1;
                Ok(())
            },
        )
        .unwrap();
        assert_eq!(total, 4);
    }

    #[test]
    fn accumulation_is_linear() {
        let gt1 = Array2::from_shape_vec((1, 3), vec![255u8, 0, 255]).unwrap();
        let gt2 = Array2::from_shape_vec((1, 3), vec![0u8, 0, 50]).unwrap();
        let pred = Array2::from_shape_vec((1, 3), vec![true, true, false]).unwrap();
        let roi = full_roi(1, 3);
        let c1 = compare_masks(&pred, &gt1, &roi).unwrap();
        let c2 = compare_masks(&pred, &gt2, &roi).unwrap();
        let mut sum = c1;
        sum.add(&c2);
        assert_eq!(sum.total(), c1.total() + c2.total());
        assert_eq!(sum.tp, c1.tp + c2.tp);
        assert_eq!(sum.fp, c1.fp + c2.fp);
    }

    #[test]
    fn csv_and_markdown_formats() {
        let report = EvalReport::from_counts(
            "demo",
            ConfusionCounts { tp: 2, fp: 1, fn_: 1, tn: 96 },
            3,
        );
        let row = report.csv_row();
        assert!(row.starts_with("demo,2,1,1,96,"), "row {row}");
        let md = markdown_summary(std::slice::from_ref(&report));
        assert!(md.contains("| demo | 0.67 | 0.67 | 0.67 |"), "md {md}");
    }

    fn reference_compare(
        pred: &BinaryMask,
        gt: &Array2<u8>,
        roi: &BinaryMask,
    ) -> Option<ConfusionCounts> {
        // Independent single-loop oracle.
        let mut c = ConfusionCounts::default();
        for y in 0..gt.dim().0 {
            for x in 0..gt.dim().1 {
                if !roi[(y, x)] {
                    continue;
                }
                let p = pred[(y, x)];
                match gt[(y, x)] {
                    255 => {
                        if p {
                            c.tp += 1
                        } else {
                            c.fn_ += 1
                        }
                    }
                    0 | 50 => {
                        if p {
                            c.fp += 1
                        } else {
                            c.tn += 1
                        }
                    }
                    85 | 170 => {}
                    _ => return None,
                }
            }
        }
        Some(c)
    }

    proptest! {
        #[test]
        fn compare_masks_matches_bruteforce(
            pred_bits in proptest::collection::vec(any::<bool>(), 48),
            gt_vals in proptest::collection::vec(
                prop_oneof![Just(0u8), Just(50), Just(85), Just(170), Just(255)], 48),
            roi_bits in proptest::collection::vec(any::<bool>(), 48),
        ) {
            let pred = Array2::from_shape_vec((6, 8), pred_bits).unwrap();
            let gt = Array2::from_shape_vec((6, 8), gt_vals).unwrap();
            let roi = Array2::from_shape_vec((6, 8), roi_bits).unwrap();
            let got = compare_masks(&pred, &gt, &roi).unwrap();
            let expected = reference_compare(&pred, &gt, &roi).unwrap();
            prop_assert_eq!(got, expected);
        }

        #[test]
        fn fm_stays_in_unit_interval(tp in 0u64..50, fp in 0u64..50, fn_ in 0u64..50) {
            let c = ConfusionCounts { tp, fp, fn_, tn: 3 };
            let fm = f_measure(&c);
            prop_assert!((0.0..=1.0).contains(&fm));
        }
    }
}
