//! Sequence manifests and frame loading.
//!
//! Two on-disk layouts are understood: the CDnet-2014 directory shape
//! (`input/in%06d.jpg`, `groundtruth/gt%06d.png`, `temporalROI.txt`,
//! `ROI.bmp`) and a plain directory of sequentially named frames with an
//! optional sparse ground-truth mapping file (I2R style). Both accept an
//! optional `tags.txt` sidecar with one `0`/`1` per line marking frames that
//! contain foreground objects.
//!
//! Frame indices are 1-based everywhere in this module, matching the CDnet
//! file-naming convention.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::types::{load_image, BinaryMask, ImageTensor};

/// Default working-size cap for the longer image side.
pub const DEFAULT_MAX_DIM: usize = 320;

/// Working dims are never scaled below this.
pub const MIN_WORKING_DIM: usize = 16;

/// Default cap on the number of training frames.
pub const DEFAULT_MAX_TRAINING_FRAMES: usize = 300;

/// Downscale-only resize policy. Frames are resized bilinearly, masks with
/// nearest-neighbour; aspect ratio is preserved.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ScalePolicy {
    /// Cap on the longer side, in pixels. `None` disables scaling entirely.
    pub max_dim: Option<usize>,
}

impl Default for ScalePolicy {
    fn default() -> Self {
        ScalePolicy {
            max_dim: Some(DEFAULT_MAX_DIM),
        }
    }
}

impl ScalePolicy {
    /// Computes the working `(height, width)` for a native size. Downscale
    /// only: the longer side becomes `max_dim`, the shorter side follows the
    /// aspect ratio (floored), and scaled dims are clamped to at least
    /// [`MIN_WORKING_DIM`] (but never above the native dim).
    pub fn working_size(&self, native: (usize, usize)) -> (usize, usize) {
        let (h, w) = native;
        let Some(max_dim) = self.max_dim else {
            return native;
        };
        let long = h.max(w);
        if long <= max_dim || long == 0 {
            return native;
        }
        let scale_dim = |d: usize| (d * max_dim / long).max(MIN_WORKING_DIM.min(d)).min(d);
        (scale_dim(h), scale_dim(w))
    }
}

/// Everything known about one video sequence before any pixels are processed.
#[derive(Clone, Debug)]
pub struct SequenceManifest {
    pub name: String,
    /// One path per frame, index `i` (1-based) at position `i - 1`.
    pub frame_paths: Vec<PathBuf>,
    /// Ground-truth paths; `None` entries mark frames without ground truth.
    /// Outer `None` means the sequence has no ground truth at all.
    pub gt_paths: Option<Vec<Option<PathBuf>>>,
    /// Spatial region of interest at native resolution (`true` = evaluated).
    pub roi_mask: Option<BinaryMask>,
    /// `(first_eval_frame, last_eval_frame)`, 1-based inclusive.
    pub temporal_roi: (usize, usize),
    /// Per-frame object tags; `true` = frame contains a foreground object.
    pub frame_tags: Option<Vec<bool>>,
    /// Native `(height, width)` of the frames.
    pub native_size: (usize, usize),
}

impl SequenceManifest {
    pub fn num_frames(&self) -> usize {
        self.frame_paths.len()
    }

    /// Working `(height, width)` under a scale policy.
    pub fn working_size(&self, policy: &ScalePolicy) -> (usize, usize) {
        policy.working_size(self.native_size)
    }

    /// Loads frame `index` (1-based) resized to `working`.
    pub fn load_frame(&self, index: usize, working: (usize, usize)) -> Result<ImageTensor> {
        let path = self.frame_paths.get(index.wrapping_sub(1)).ok_or_else(|| {
            Error::DatasetLayout {
                dir: PathBuf::new(),
                reason: format!(
                    "frame index {index} out of range 1..={}",
                    self.frame_paths.len()
                ),
            }
        })?;
        load_image(path, Some(working))
    }

    /// Ground-truth path for frame `index` (1-based), if any.
    pub fn gt_path(&self, index: usize) -> Option<&Path> {
        self.gt_paths
            .as_ref()
            .and_then(|v| v.get(index.wrapping_sub(1)))
            .and_then(|p| p.as_deref())
    }

    fn check_invariants(&self, dir: &Path) -> Result<()> {
        let n = self.frame_paths.len();
        let (first, last) = self.temporal_roi;
        if n == 0 {
            return Err(Error::DatasetLayout {
                dir: dir.to_path_buf(),
                reason: "sequence contains no frames".into(),
            });
        }
        if !(1 <= first && first <= last && last <= n) {
            return Err(Error::DatasetLayout {
                dir: dir.to_path_buf(),
                reason: format!("temporal ROI ({first}, {last}) out of range for {n} frames"),
            });
        }
        if let Some(gt) = &self.gt_paths {
            if gt.len() != n {
                return Err(Error::DatasetLayout {
                    dir: dir.to_path_buf(),
                    reason: format!("{} ground-truth entries for {n} frames", gt.len()),
                });
            }
        }
        if let Some(tags) = &self.frame_tags {
            if tags.len() != n {
                return Err(Error::DatasetLayout {
                    dir: dir.to_path_buf(),
                    reason: format!("{} tag lines for {n} frames", tags.len()),
                });
            }
        }
        Ok(())
    }
}

fn layout_err(dir: &Path, reason: impl Into<String>) -> Error {
    Error::DatasetLayout {
        dir: dir.to_path_buf(),
        reason: reason.into(),
    }
}

/// CDnet frame file name for a 1-based index.
pub fn cdnet_frame_name(index: usize) -> String {
    format!("in{index:06}.jpg")
}

/// CDnet ground-truth file name for a 1-based index.
pub fn cdnet_gt_name(index: usize) -> String {
    format!("gt{index:06}.png")
}

/// Output mask file name for a 1-based index.
pub fn mask_file_name(index: usize) -> String {
    format!("bin{index:06}.png")
}

/// Dynamic-background label file name for a 1-based index.
pub fn label_file_name(index: usize) -> String {
    format!("dbg{index:06}.png")
}

/// Parses `in%06d.jpg`-style names; returns the 1-based index.
fn parse_indexed_name(name: &str, prefix: &str, ext: &str) -> Option<usize> {
    let rest = name.strip_prefix(prefix)?.strip_suffix(ext)?;
    if rest.len() == 6 && rest.bytes().all(|b| b.is_ascii_digit()) {
        rest.parse().ok()
    } else {
        None
    }
}

/// Loads the optional `tags.txt` sidecar: one `0`/`1` character per line,
/// line `i` describing frame `i`.
fn load_tags(dir: &Path, n_frames: usize) -> Result<Option<Vec<bool>>> {
    let path = dir.join("tags.txt");
    if !path.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut tags = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        match line {
            "0" => tags.push(false),
            "1" => tags.push(true),
            other => {
                return Err(layout_err(
                    dir,
                    format!("tags.txt line {}: expected 0 or 1, found {other:?}", lineno + 1),
                ))
            }
        }
    }
    if tags.len() != n_frames {
        return Err(layout_err(
            dir,
            format!("tags.txt has {} entries for {n_frames} frames", tags.len()),
        ));
    }
    Ok(Some(tags))
}

/// Loads a spatial ROI image; any pixel with a nonzero channel is in-ROI.
pub fn load_roi_mask(path: &Path) -> Result<BinaryMask> {
    let img = image::open(path)
        .map_err(|source| Error::ImageDecode {
            path: path.to_path_buf(),
            source,
        })?
        .to_rgb8();
    let (w, h) = img.dimensions();
    Ok(Array2::from_shape_fn((h as usize, w as usize), |(y, x)| {
        img.get_pixel(x as u32, y as u32).0.iter().any(|&c| c != 0)
    }))
}

/// Loads a CDnet ground-truth image as raw 8-bit label values. Color images
/// are accepted only when all channels agree.
pub fn load_gt_image(path: &Path) -> Result<Array2<u8>> {
    let img = image::open(path).map_err(|source| Error::ImageDecode {
        path: path.to_path_buf(),
        source,
    })?;
    let gray = match img {
        image::DynamicImage::ImageLuma8(g) => g,
        image::DynamicImage::ImageLumaA8(g) => {
            image::GrayImage::from_fn(g.width(), g.height(), |x, y| {
                image::Luma([g.get_pixel(x, y).0[0]])
            })
        }
        other => {
            let rgb = other.to_rgb8();
            for (x, y, px) in rgb.enumerate_pixels() {
                if px.0[0] != px.0[1] || px.0[1] != px.0[2] {
                    return Err(layout_err(
                        path,
                        format!("ground truth has unequal RGB channels at ({x}, {y})"),
                    ));
                }
            }
            image::GrayImage::from_fn(rgb.width(), rgb.height(), |x, y| {
                image::Luma([rgb.get_pixel(x, y).0[0]])
            })
        }
    };
    let (w, h) = gray.dimensions();
    Ok(Array2::from_shape_fn((h as usize, w as usize), |(y, x)| {
        gray.get_pixel(x as u32, y as u32).0[0]
    }))
}

/// Loads a CDnet-2014-layout sequence directory.
pub fn load_cdnet_sequence(root: &Path) -> Result<SequenceManifest> {
    let input_dir = root.join("input");
    if !input_dir.is_dir() {
        return Err(layout_err(root, "missing input/ directory"));
    }

    let mut indices = Vec::new();
    let entries = fs::read_dir(&input_dir).map_err(|e| Error::io(&input_dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(&input_dir, e))?;
        if let Some(idx) =
            entry.file_name().to_str().and_then(|n| parse_indexed_name(n, "in", ".jpg"))
        {
            indices.push(idx);
        }
    }
    if indices.is_empty() {
        return Err(layout_err(root, "input/ contains no in%06d.jpg frames"));
    }
    indices.sort_unstable();
    let n = *indices.last().unwrap();
    if indices.len() != n || indices[0] != 1 {
        return Err(layout_err(
            root,
            format!(
                "input/ frame numbering is not contiguous from 1 ({} files, max index {n})",
                indices.len()
            ),
        ));
    }
    let frame_paths: Vec<PathBuf> =
        (1..=n).map(|i| input_dir.join(cdnet_frame_name(i))).collect();

    let gt_dir = root.join("groundtruth");
    if !gt_dir.is_dir() {
        return Err(layout_err(root, "missing groundtruth/ directory"));
    }
    let mut gt_paths = Vec::with_capacity(n);
    for i in 1..=n {
        let p = gt_dir.join(cdnet_gt_name(i));
        if !p.is_file() {
            return Err(layout_err(
                root,
                format!("missing ground-truth file groundtruth/{}", cdnet_gt_name(i)),
            ));
        }
        gt_paths.push(Some(p));
    }

    let troi_path = root.join("temporalROI.txt");
    if !troi_path.is_file() {
        return Err(layout_err(root, "missing temporalROI.txt"));
    }
    let text = fs::read_to_string(&troi_path).map_err(|e| Error::io(&troi_path, e))?;
    let nums: Vec<&str> = text.split_whitespace().collect();
    let parse = |s: &str| -> Result<usize> {
        s.parse()
            .map_err(|_| layout_err(root, format!("temporalROI.txt: bad integer {s:?}")))
    };
    let temporal_roi = match nums.as_slice() {
        [a, b] => (parse(a)?, parse(b)?),
        _ => {
            return Err(layout_err(
                root,
                format!("temporalROI.txt: expected two integers, found {} tokens", nums.len()),
            ))
        }
    };

    let roi_path = root.join("ROI.bmp");
    if !roi_path.is_file() {
        return Err(layout_err(root, "missing ROI.bmp"));
    }
    let roi_mask = load_roi_mask(&roi_path)?;

    let frame_tags = load_tags(root, n)?;

    let (w, h) = image::image_dimensions(&frame_paths[0]).map_err(|source| {
        Error::ImageDecode {
            path: frame_paths[0].clone(),
            source,
        }
    })?;

    let manifest = SequenceManifest {
        name: root
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "sequence".into()),
        frame_paths,
        gt_paths: Some(gt_paths),
        roi_mask: Some(roi_mask),
        temporal_roi,
        frame_tags,
        native_size: (h as usize, w as usize),
    };
    manifest.check_invariants(root)?;
    Ok(manifest)
}

/// Loads a plain directory of sequentially named frames (I2R style). Frame
/// order is the lexicographic order of file names; ground truth, when
/// available only for a sparse set of frames, is supplied through `gt_map`, a
/// text file with lines of `<frame_index> <relative_gt_path>`.
pub fn load_i2r_sequence(root: &Path, gt_map: Option<&Path>) -> Result<SequenceManifest> {
    const FRAME_EXTS: [&str; 4] = ["jpg", "jpeg", "png", "bmp"];
    if !root.is_dir() {
        return Err(layout_err(root, "not a directory"));
    }
    let mut names: Vec<String> = Vec::new();
    let entries = fs::read_dir(root).map_err(|e| Error::io(root, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(root, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        let is_frame = Path::new(&name)
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| FRAME_EXTS.contains(&e.to_ascii_lowercase().as_str()))
            .unwrap_or(false);
        if is_frame && entry.path().is_file() {
            names.push(name);
        }
    }
    if names.is_empty() {
        return Err(layout_err(root, "no frame images found"));
    }
    names.sort();
    let frame_paths: Vec<PathBuf> = names.iter().map(|n| root.join(n)).collect();
    let n = frame_paths.len();

    let gt_paths = match gt_map {
        None => None,
        Some(map_path) => {
            let text = fs::read_to_string(map_path).map_err(|e| Error::io(map_path, e))?;
            let mut gt: Vec<Option<PathBuf>> = vec![None; n];
            let mut bad_lines = Vec::new();
            for (lineno, line) in text.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() {
                    continue;
                }
                let mut parts = line.splitn(2, char::is_whitespace);
                let idx = parts.next().and_then(|s| s.parse::<usize>().ok());
                let rel = parts.next().map(str::trim).filter(|s| !s.is_empty());
                match (idx, rel) {
                    (Some(idx), Some(rel)) if (1..=n).contains(&idx) => {
                        gt[idx - 1] = Some(root.join(rel));
                    }
                    (Some(idx), Some(_)) => {
                        return Err(layout_err(
                            root,
                            format!(
                                "gt map line {}: frame index {idx} out of range 1..={n}",
                                lineno + 1
                            ),
                        ));
                    }
                    _ => bad_lines.push(lineno + 1),
                }
            }
            if !bad_lines.is_empty() {
                return Err(layout_err(
                    root,
                    format!("gt map has unreadable lines: {bad_lines:?}"),
                ));
            }
            Some(gt)
        }
    };

    let frame_tags = load_tags(root, n)?;
    let (w, h) = image::image_dimensions(&frame_paths[0]).map_err(|source| {
        Error::ImageDecode {
            path: frame_paths[0].clone(),
            source,
        }
    })?;

    let manifest = SequenceManifest {
        name: root
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "sequence".into()),
        frame_paths,
        gt_paths,
        roi_mask: None,
        temporal_roi: (1, n),
        frame_tags,
        native_size: (h as usize, w as usize),
    };
    manifest.check_invariants(root)?;
    Ok(manifest)
}

/// Selects object-free training frame indices (1-based), earliest first,
/// capped at `max_frames`.
///
/// Selection pool: frames strictly before `first_eval_frame`; when frame tags
/// are present, only tag-0 frames in that range qualify. `explicit_indices`
/// bypasses the pool entirely (the escape hatch for scenes whose only
/// object-free frames lie inside the evaluation range) and is returned
/// verbatim after a bounds check.
pub fn select_training_frames(
    manifest: &SequenceManifest,
    max_frames: usize,
    explicit_indices: Option<&[usize]>,
) -> Result<Vec<usize>> {
    let n = manifest.num_frames();
    if let Some(explicit) = explicit_indices {
        for &idx in explicit {
            if !(1..=n).contains(&idx) {
                return Err(Error::Config {
                    reason: format!("explicit training frame {idx} out of range 1..={n}"),
                });
            }
        }
        if explicit.is_empty() {
            return Err(Error::Config {
                reason: "explicit training frame list is empty".into(),
            });
        }
        return Ok(explicit.to_vec());
    }

    let first_eval = manifest.temporal_roi.0;
    let pool: Vec<usize> = (1..first_eval)
        .filter(|&i| match &manifest.frame_tags {
            Some(tags) => !tags[i - 1],
            None => true,
        })
        .collect();
    if pool.is_empty() {
        return Err(Error::Config {
            reason: format!(
                "no object-free training frames before evaluation start (frame {first_eval}); \
                 provide tags or explicit indices"
            ),
        });
    }
    Ok(pool.into_iter().take(max_frames).collect())
}

/// Loads one frame at working resolution per [`ScalePolicy`]. The working
/// size is derived from this frame's own native size; for whole-sequence
/// work prefer [`SequenceManifest::load_frame`] with a fixed working size.
pub fn preprocess(frame_file: &Path, policy: &ScalePolicy) -> Result<ImageTensor> {
    let (w, h) = image::image_dimensions(frame_file).map_err(|source| Error::ImageDecode {
        path: frame_file.to_path_buf(),
        source,
    })?;
    let working = policy.working_size((h as usize, w as usize));
    load_image(frame_file, Some(working))
}

/// A pull-based, strictly sequential frame source for the online pipeline.
pub trait FrameProvider {
    /// Total frames this provider will yield.
    fn num_frames(&self) -> usize;
    /// Yields the next frame, or `None` when exhausted. Implementations are
    /// strictly forward-only; there is no way to look ahead or rewind.
    fn next_frame(&mut self) -> Option<Result<ImageTensor>>;
}

/// Streams a manifest's frames `[first, last]` (1-based, inclusive) at a
/// fixed working size.
pub struct ManifestFrames<'a> {
    manifest: &'a SequenceManifest,
    working: (usize, usize),
    next: usize,
    last: usize,
}

impl<'a> ManifestFrames<'a> {
    pub fn new(
        manifest: &'a SequenceManifest,
        range: (usize, usize),
        working: (usize, usize),
    ) -> Self {
        ManifestFrames {
            manifest,
            working,
            next: range.0,
            last: range.1,
        }
    }
}

impl FrameProvider for ManifestFrames<'_> {
    fn num_frames(&self) -> usize {
        self.last + 1 - self.next.min(self.last + 1)
    }

    fn next_frame(&mut self) -> Option<Result<ImageTensor>> {
        if self.next > self.last {
            return None;
        }
        let frame = self.manifest.load_frame(self.next, self.working);
        self.next += 1;
        Some(frame)
    }
}

/// In-memory frame source (synthetic scenes, tests).
pub struct VecFrames {
    frames: std::vec::IntoIter<ImageTensor>,
    remaining: usize,
}

impl VecFrames {
    pub fn new(frames: Vec<ImageTensor>) -> Self {
        let remaining = frames.len();
        VecFrames {
            frames: frames.into_iter(),
            remaining,
        }
    }
}

impl FrameProvider for VecFrames {
    fn num_frames(&self) -> usize {
        self.remaining
    }

    fn next_frame(&mut self) -> Option<Result<ImageTensor>> {
        let f = self.frames.next()?;
        self.remaining -= 1;
        Some(Ok(f))
    }
}
