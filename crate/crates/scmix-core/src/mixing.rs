//! Fusion of one source image with multiple target images.
//!
//! Stage one fuses `N_c` target images under an integer grid mask; stage two
//! pastes a per-cell class subset of the source over the fused target. The
//! single-target baselines (class-based and rectangle-based pasting), the
//! post-mix photometric augmentation, and an exhaustive reachable-set
//! enumerator for toy instances live here too.
//!
//! Draw order inside [`scmix`] is fixed: grid dimensions, then cell indices
//! row-major, then class subsets per cell row-major, each on its own purpose
//! stream. With `N_c = 1` and a singleton unit grid set, every grid draw
//! degenerates and the composition reproduces [`classmix_single`] byte for
//! byte under a shared stream key.

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::io::{serialize_tensor, TensorPayload};
use crate::masking::{
    build_class_mask, make_grid_mask, sample_grid_dims, subset_size, ClassMask, GridGeometry,
    GridMask,
};
use crate::rng::{Purpose, StreamKey};
use crate::tensor::{one_hot_encode, ImageTensor, LabelMap, OneHotLabel, WeightMap, IGNORE};

/// An unlabeled target image with its teacher pseudo-labels and scalar
/// confidence.
#[derive(Clone, Debug, PartialEq)]
pub struct TargetTriple {
    pub image: ImageTensor,
    pub pseudo_labels: OneHotLabel,
    pub confidence: f32,
}

impl TargetTriple {
    pub fn new(image: ImageTensor, pseudo_labels: OneHotLabel, confidence: f32) -> Result<Self> {
        if image.height() != pseudo_labels.height() || image.width() != pseudo_labels.width() {
            return Err(Error::ShapeMismatch {
                expected: (image.height(), image.width()),
                got: (pseudo_labels.height(), pseudo_labels.width()),
            });
        }
        if !(0.0..=1.0).contains(&confidence) {
            return Err(Error::InvalidArgument(format!(
                "confidence {} outside [0, 1]",
                confidence
            )));
        }
        Ok(TargetTriple {
            image,
            pseudo_labels,
            confidence,
        })
    }
}

/// Mixer parameters: how many targets to fuse and the grid candidate set.
#[derive(Clone, Debug, PartialEq)]
pub struct MixParams {
    pub n_c: usize,
    pub grid_candidates: Vec<usize>,
}

impl MixParams {
    /// Defaults used throughout: N_c = 3, G = [2, 4, 8].
    pub fn default_params() -> Self {
        MixParams {
            n_c: 3,
            grid_candidates: vec![2, 4, 8],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_c < 1 {
            return Err(Error::InvalidArgument(
                "mixing target count N_c must be at least 1".into(),
            ));
        }
        if self.grid_candidates.is_empty() {
            return Err(Error::InvalidArgument(
                "grid candidate set is empty".into(),
            ));
        }
        Ok(())
    }
}

/// Grid-fused target: image, pseudo-labels, per-pixel weights, and the
/// target index each pixel came from.
#[derive(Clone, Debug, PartialEq)]
pub struct CompoundTarget {
    pub image: ImageTensor,
    pub labels: OneHotLabel,
    pub weights: WeightMap,
    /// 1-based target index per pixel.
    pub target_index: Vec<u8>,
}

impl CompoundTarget {
    /// Wraps a single target as a trivial compound (index 1 everywhere).
    pub fn from_single(target: &TargetTriple) -> Result<Self> {
        let h = target.image.height();
        let w = target.image.width();
        Ok(CompoundTarget {
            image: target.image.clone(),
            labels: target.pseudo_labels.clone(),
            weights: WeightMap::constant(h, w, target.confidence)?,
            target_index: vec![1; h * w],
        })
    }
}

/// The fused output: image, one-hot labels, loss weights, and per-pixel
/// provenance (0 = source, k = target k).
#[derive(Clone, Debug, PartialEq)]
pub struct MixedSample {
    pub image: ImageTensor,
    pub labels: OneHotLabel,
    pub weights: WeightMap,
    pub provenance: Vec<u8>,
}

impl MixedSample {
    /// Canonical byte encoding of (image, labels, weights) for set
    /// comparisons. Fusion is exact pixel selection, so byte equality is
    /// the right equivalence; provenance is deliberately excluded.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut out = serialize_tensor(&TensorPayload::Image(self.image.clone()));
        out.extend(serialize_tensor(&TensorPayload::OneHot(self.labels.clone())));
        out.extend(serialize_tensor(&TensorPayload::Weights(self.weights.clone())));
        out
    }

    /// Provenance as a label map for debug export.
    pub fn provenance_map(&self) -> LabelMap {
        LabelMap::new(
            self.labels.height(),
            self.labels.width(),
            self.provenance.iter().map(|&p| p as u16).collect(),
        )
        .expect("provenance length matches by construction")
    }
}

fn check_same_shape(
    h: usize,
    w: usize,
    other_h: usize,
    other_w: usize,
) -> Result<()> {
    if h != other_h || w != other_w {
        return Err(Error::ShapeMismatch {
            expected: (h, w),
            got: (other_h, other_w),
        });
    }
    Ok(())
}

/// Stage one: gathers each pixel from the target the grid mask names.
pub fn fuse_compound_targets(
    targets: &[TargetTriple],
    mask: &GridMask,
) -> Result<CompoundTarget> {
    if targets.is_empty() {
        return Err(Error::InvalidArgument("no targets to fuse".into()));
    }
    let h = mask.height();
    let w = mask.width();
    let classes = targets[0].pseudo_labels.classes();
    for t in targets {
        check_same_shape(h, w, t.image.height(), t.image.width())?;
        if t.pseudo_labels.classes() != classes {
            return Err(Error::InvalidArgument(
                "targets disagree on class count".into(),
            ));
        }
    }
    if let Some(&bad) = mask.data().iter().find(|&&v| v as usize > targets.len()) {
        return Err(Error::InvalidArgument(format!(
            "grid mask value {} exceeds target count {}",
            bad,
            targets.len()
        )));
    }
    let mut image = Vec::with_capacity(h * w * 3);
    let mut labels = Vec::with_capacity(h * w * classes);
    let mut weights = Vec::with_capacity(h * w);
    let mut index = Vec::with_capacity(h * w);
    for (p, &k) in mask.data().iter().enumerate() {
        let t = &targets[k as usize - 1];
        image.extend_from_slice(&t.image.data()[p * 3..p * 3 + 3]);
        labels.extend_from_slice(t.pseudo_labels.row(p));
        weights.push(t.confidence);
        index.push(k);
    }
    Ok(CompoundTarget {
        image: ImageTensor::new(h, w, image)?,
        labels: OneHotLabel::new(h, w, classes, labels)?,
        weights: WeightMap::new(h, w, weights)?,
        target_index: index,
    })
}

/// Stage two: pastes masked source pixels over the compound target.
///
/// Per pixel: `x = x_s*M + x'*(1-M)`, labels and weights alike, with the
/// source weight fixed at 1. Provenance is 0 on pasted pixels and the
/// compound's target index elsewhere.
pub fn class_mix_fuse(
    source: &ImageTensor,
    source_labels: &OneHotLabel,
    compound: &CompoundTarget,
    mask: &ClassMask,
) -> Result<MixedSample> {
    let h = source.height();
    let w = source.width();
    check_same_shape(h, w, source_labels.height(), source_labels.width())?;
    check_same_shape(h, w, compound.image.height(), compound.image.width())?;
    check_same_shape(h, w, mask.height(), mask.width())?;
    if source_labels.classes() != compound.labels.classes() {
        return Err(Error::InvalidArgument(
            "source and compound disagree on class count".into(),
        ));
    }
    let classes = source_labels.classes();
    let mut image = Vec::with_capacity(h * w * 3);
    let mut labels = Vec::with_capacity(h * w * classes);
    let mut weights = Vec::with_capacity(h * w);
    let mut provenance = Vec::with_capacity(h * w);
    for (p, &m) in mask.data().iter().enumerate() {
        if m {
            image.extend_from_slice(&source.data()[p * 3..p * 3 + 3]);
            labels.extend_from_slice(source_labels.row(p));
            weights.push(1.0);
            provenance.push(0);
        } else {
            image.extend_from_slice(&compound.image.data()[p * 3..p * 3 + 3]);
            labels.extend_from_slice(compound.labels.row(p));
            weights.push(compound.weights.data()[p]);
            provenance.push(compound.target_index[p]);
        }
    }
    Ok(MixedSample {
        image: ImageTensor::new(h, w, image)?,
        labels: OneHotLabel::new(h, w, classes, labels)?,
        weights: WeightMap::new(h, w, weights)?,
        provenance,
    })
}

/// The full two-stage mix of one source with `N_c` targets.
///
/// Draw order: grid dimensions (GridDims stream), cell indices row-major
/// (GridValues), class subsets per cell row-major (ClassSubset).
pub fn scmix(
    source: &ImageTensor,
    source_labels: &LabelMap,
    classes: usize,
    targets: &[TargetTriple],
    params: &MixParams,
    key: StreamKey,
) -> Result<MixedSample> {
    params.validate()?;
    if targets.len() != params.n_c {
        return Err(Error::InvalidArgument(format!(
            "expected {} targets, got {}",
            params.n_c,
            targets.len()
        )));
    }
    let h = source.height();
    let w = source.width();
    check_same_shape(h, w, source_labels.height(), source_labels.width())?;
    let (g_h, g_v) = sample_grid_dims(&params.grid_candidates, &mut key.stream(Purpose::GridDims))?;
    let geometry = GridGeometry::new(g_h, g_v, w, h)?;
    let grid_mask = make_grid_mask(h, w, geometry, params.n_c, &mut key.stream(Purpose::GridValues))?;
    let compound = fuse_compound_targets(targets, &grid_mask)?;
    let class_mask = build_class_mask(
        source_labels,
        geometry,
        params.n_c,
        &mut key.stream(Purpose::ClassSubset),
    )?;
    let source_one_hot = one_hot_encode(source_labels, classes)?;
    class_mix_fuse(source, &source_one_hot, &compound, &class_mask)
}

/// Single-target class mixing: half of the source's image-level classes are
/// pasted onto the target.
pub fn classmix_single(
    source: &ImageTensor,
    source_labels: &LabelMap,
    classes: usize,
    target: &TargetTriple,
    key: StreamKey,
) -> Result<MixedSample> {
    let h = source.height();
    let w = source.width();
    check_same_shape(h, w, source_labels.height(), source_labels.width())?;
    check_same_shape(h, w, target.image.height(), target.image.width())?;
    let present = source_labels.distinct_classes();
    let k = present.len().div_ceil(2);
    let chosen = key
        .stream(Purpose::ClassSubset)
        .choose_k(&present, k.min(present.len()))?;
    let mut selected = [false; IGNORE as usize];
    for c in &chosen {
        selected[*c as usize] = true;
    }
    let mask_data: Vec<bool> = source_labels
        .data()
        .iter()
        .map(|&l| l != IGNORE && selected[l as usize])
        .collect();
    let mask = ClassMask::new(h, w, mask_data)?;
    let compound = CompoundTarget::from_single(target)?;
    let source_one_hot = one_hot_encode(source_labels, classes)?;
    class_mix_fuse(source, &source_one_hot, &compound, &mask)
}

/// Attempt cap before rectangle dimensions are clamped into range; on
/// elongated images the area/aspect box can be entirely infeasible.
const CUT_REDRAW_LIMIT: usize = 64;

/// Area fraction range of the pasted rectangle.
pub const CUT_AREA_RANGE: (f64, f64) = (0.25, 0.5);
/// Aspect ratio range of the pasted rectangle.
pub const CUT_ASPECT_RANGE: (f64, f64) = (0.5, 2.0);

/// Single-target rectangle mixing: a random axis-aligned source rectangle is
/// pasted onto the target.
///
/// Draw order (CutRect stream), repeated until the rectangle fits: area
/// fraction, aspect ratio. Then x and y offsets. Degenerate draws (zero or
/// oversized side) are redrawn; after [`CUT_REDRAW_LIMIT`] failures the
/// sides are clamped into range.
pub fn cutmix_single(
    source: &ImageTensor,
    source_labels: &LabelMap,
    classes: usize,
    target: &TargetTriple,
    key: StreamKey,
) -> Result<MixedSample> {
    let h = source.height();
    let w = source.width();
    check_same_shape(h, w, source_labels.height(), source_labels.width())?;
    check_same_shape(h, w, target.image.height(), target.image.width())?;
    let mut stream = key.stream(Purpose::CutRect);
    let area = (h * w) as f64;
    let mut rect_w = 0usize;
    let mut rect_h = 0usize;
    for attempt in 0..=CUT_REDRAW_LIMIT {
        let f = stream.range_f64(CUT_AREA_RANGE.0, CUT_AREA_RANGE.1);
        let aspect = stream.range_f64(CUT_ASPECT_RANGE.0, CUT_ASPECT_RANGE.1);
        let rw = (f * area * aspect).sqrt().round() as i64;
        let rh = (f * area / aspect).sqrt().round() as i64;
        if rw >= 1 && rw as usize <= w && rh >= 1 && rh as usize <= h {
            rect_w = rw as usize;
            rect_h = rh as usize;
            break;
        }
        if attempt == CUT_REDRAW_LIMIT {
            rect_w = (rw.max(1) as usize).min(w);
            rect_h = (rh.max(1) as usize).min(h);
        }
    }
    let x0 = stream.uniform_int(0, (w - rect_w) as i64)? as usize;
    let y0 = stream.uniform_int(0, (h - rect_h) as i64)? as usize;
    let mut mask_data = vec![false; h * w];
    for y in y0..y0 + rect_h {
        for x in x0..x0 + rect_w {
            mask_data[y * w + x] = true;
        }
    }
    let mask = ClassMask::new(h, w, mask_data)?;
    let compound = CompoundTarget::from_single(target)?;
    let source_one_hot = one_hot_encode(source_labels, classes)?;
    class_mix_fuse(source, &source_one_hot, &compound, &mask)
}

/// Post-mix photometric augmentation parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct PostAugmentParams {
    /// Per-channel scale drawn from [1-s, 1+s].
    pub jitter_scale: f64,
    /// Brightness offset drawn from [-b, b].
    pub brightness: f64,
    pub blur_prob: f64,
    pub sigma_min: f64,
    pub sigma_max: f64,
}

impl PostAugmentParams {
    pub fn default_params() -> Self {
        PostAugmentParams {
            jitter_scale: 0.2,
            brightness: 0.1,
            blur_prob: 0.5,
            sigma_min: 0.15,
            sigma_max: 1.15,
        }
    }

    pub fn identity() -> Self {
        PostAugmentParams {
            jitter_scale: 0.0,
            brightness: 0.0,
            blur_prob: 0.0,
            sigma_min: 0.0,
            sigma_max: 0.0,
        }
    }
}

/// Separable Gaussian blur, kernel radius `ceil(2*sigma)`, clamped borders.
pub fn gaussian_blur(image: &ImageTensor, sigma: f64) -> Result<ImageTensor> {
    if sigma <= 0.0 {
        return Ok(image.clone());
    }
    let radius = (2.0 * sigma).ceil() as i64;
    let mut kernel = Vec::with_capacity((2 * radius + 1) as usize);
    for i in -radius..=radius {
        kernel.push((-(i * i) as f64 / (2.0 * sigma * sigma)).exp());
    }
    let norm: f64 = kernel.iter().sum();
    let kernel: Vec<f64> = kernel.iter().map(|k| k / norm).collect();
    let h = image.height() as i64;
    let w = image.width() as i64;
    let src = image.data();
    // horizontal pass
    let mut tmp = vec![0f32; src.len()];
    for y in 0..h {
        for x in 0..w {
            for c in 0..3usize {
                let mut acc = 0f64;
                for (ki, kv) in kernel.iter().enumerate() {
                    let xx = (x + ki as i64 - radius).clamp(0, w - 1);
                    acc += kv * src[((y * w + xx) * 3) as usize + c] as f64;
                }
                tmp[((y * w + x) * 3) as usize + c] = acc as f32;
            }
        }
    }
    // vertical pass
    let mut out = vec![0f32; src.len()];
    for y in 0..h {
        for x in 0..w {
            for c in 0..3usize {
                let mut acc = 0f64;
                for (ki, kv) in kernel.iter().enumerate() {
                    let yy = (y + ki as i64 - radius).clamp(0, h - 1);
                    acc += kv * tmp[((yy * w + x) * 3) as usize + c] as f64;
                }
                out[((y * w + x) * 3) as usize + c] = (acc as f32).clamp(0.0, 1.0);
            }
        }
    }
    ImageTensor::new(image.height(), image.width(), out)
}

/// Color jitter then optional Gaussian blur, output clipped to [0, 1].
///
/// Draw order: channel scales r, g, b and the brightness offset on the
/// Jitter stream; the blur coin and sigma on the Blur stream.
pub fn post_augment(
    image: &ImageTensor,
    params: &PostAugmentParams,
    key: StreamKey,
) -> Result<ImageTensor> {
    let mut jitter = key.stream(Purpose::Jitter);
    let s = params.jitter_scale;
    let scales = [
        jitter.range_f64(1.0 - s, 1.0 + s),
        jitter.range_f64(1.0 - s, 1.0 + s),
        jitter.range_f64(1.0 - s, 1.0 + s),
    ];
    let offset = jitter.range_f64(-params.brightness, params.brightness);
    let mut blur = key.stream(Purpose::Blur);
    let apply_blur = blur.bernoulli(params.blur_prob);
    let sigma = if apply_blur {
        blur.range_f64(params.sigma_min, params.sigma_max)
    } else {
        0.0
    };
    let data: Vec<f32> = image
        .data()
        .chunks_exact(3)
        .flat_map(|px| {
            [
                ((px[0] as f64 * scales[0] + offset).clamp(0.0, 1.0)) as f32,
                ((px[1] as f64 * scales[1] + offset).clamp(0.0, 1.0)) as f32,
                ((px[2] as f64 * scales[2] + offset).clamp(0.0, 1.0)) as f32,
            ]
        })
        .collect();
    let jittered = ImageTensor::new(image.height(), image.width(), data)?;
    if apply_blur {
        gaussian_blur(&jittered, sigma)
    } else {
        Ok(jittered)
    }
}

/// Which mixer's reachable set to enumerate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EnumMixer {
    Scmix,
    ClassmixSingle,
}

/// Upper bound on the enumerated combination count.
pub const ENUMERATION_GUARD: u128 = 1_000_000;

/// All k-subsets of `items`, lexicographic.
fn combinations<T: Copy>(items: &[T], k: usize) -> Vec<Vec<T>> {
    let n = items.len();
    if k > n {
        return Vec::new();
    }
    let mut out = Vec::new();
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        out.push(idx.iter().map(|&i| items[i]).collect());
        // advance
        let mut i = k;
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            if idx[i] != i + n - k {
                break;
            }
        }
        if idx[k - 1] == n - 1 && idx[0] == n - k {
            return out;
        }
        idx[i] += 1;
        for j in i + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Exhaustively enumerates every output a mixer can produce on fixed inputs,
/// deduplicated by canonical byte encoding.
///
/// Iterates all grid-dimension pairs, all per-cell target assignments, and
/// all per-cell class subsets. Errors out if the combination count exceeds
/// [`ENUMERATION_GUARD`].
pub fn enumerate_reachable(
    source: &ImageTensor,
    source_labels: &LabelMap,
    classes: usize,
    targets: &[TargetTriple],
    params: &MixParams,
    mixer: EnumMixer,
) -> Result<BTreeSet<Vec<u8>>> {
    params.validate()?;
    let h = source.height();
    let w = source.width();
    let source_one_hot = one_hot_encode(source_labels, classes)?;
    let mut outputs = BTreeSet::new();
    match mixer {
        EnumMixer::ClassmixSingle => {
            let present = source_labels.distinct_classes();
            let k = present.len().div_ceil(2);
            let subsets = combinations(&present, k);
            let count = targets.len() as u128 * subsets.len().max(1) as u128;
            if count > ENUMERATION_GUARD {
                return Err(Error::EnumerationTooLarge {
                    combinations: count,
                    limit: ENUMERATION_GUARD,
                });
            }
            for target in targets {
                let compound = CompoundTarget::from_single(target)?;
                for subset in &subsets {
                    let mut selected = [false; IGNORE as usize];
                    for c in subset {
                        selected[*c as usize] = true;
                    }
                    let mask_data: Vec<bool> = source_labels
                        .data()
                        .iter()
                        .map(|&l| l != IGNORE && selected[l as usize])
                        .collect();
                    let mask = ClassMask::new(h, w, mask_data)?;
                    let mixed = class_mix_fuse(source, &source_one_hot, &compound, &mask)?;
                    outputs.insert(mixed.canonical_bytes());
                }
            }
        }
        EnumMixer::Scmix => {
            if targets.len() != params.n_c {
                return Err(Error::InvalidArgument(format!(
                    "expected {} targets, got {}",
                    params.n_c,
                    targets.len()
                )));
            }
            let image_classes = source_labels.distinct_classes();
            let subsets = if image_classes.is_empty() {
                vec![Vec::new()]
            } else {
                let k = subset_size(image_classes.len(), params.n_c);
                combinations(&image_classes, k)
            };
            let mut dims = BTreeSet::new();
            for &g_h in &params.grid_candidates {
                for &g_v in &params.grid_candidates {
                    dims.insert((g_h, g_v));
                }
            }
            // guard before enumerating anything
            let mut total: u128 = 0;
            for &(g_h, g_v) in &dims {
                let geometry = GridGeometry::new(g_h, g_v, w, h)?;
                let cells = geometry.cells() as u32;
                let per_cell = (params.n_c as u128).saturating_mul(subsets.len() as u128);
                let combos = per_cell
                    .checked_pow(cells)
                    .unwrap_or(u128::MAX);
                total = total.saturating_add(combos);
            }
            if total > ENUMERATION_GUARD {
                return Err(Error::EnumerationTooLarge {
                    combinations: total,
                    limit: ENUMERATION_GUARD,
                });
            }
            for &(g_h, g_v) in &dims {
                let geometry = GridGeometry::new(g_h, g_v, w, h)?;
                let cells = geometry.cells();
                let mut cell_rects = Vec::with_capacity(cells);
                let mut cell_subsets: Vec<Vec<Vec<u16>>> = Vec::with_capacity(cells);
                for cy in 0..g_v {
                    for cx in 0..g_h {
                        let (xs, ys) = geometry.cell_rect(cx, cy, w, h);
                        cell_rects.push((xs, ys));
                        cell_subsets.push(subsets.clone());
                    }
                }
                // odometer over target assignments
                let mut assignment = vec![0usize; cells]; // 0-based target ids
                loop {
                    // grid mask for this assignment
                    let mut grid_data = vec![0u8; h * w];
                    for (cell, (xs, ys)) in cell_rects.iter().enumerate() {
                        for y in ys.clone() {
                            for x in xs.clone() {
                                grid_data[y * w + x] = assignment[cell] as u8 + 1;
                            }
                        }
                    }
                    let mut compound_image = Vec::with_capacity(h * w * 3);
                    let mut compound_labels = Vec::with_capacity(h * w * classes);
                    let mut compound_weights = Vec::with_capacity(h * w);
                    for (p, &k) in grid_data.iter().enumerate() {
                        let t = &targets[k as usize - 1];
                        compound_image.extend_from_slice(&t.image.data()[p * 3..p * 3 + 3]);
                        compound_labels.extend_from_slice(t.pseudo_labels.row(p));
                        compound_weights.push(t.confidence);
                    }
                    let compound = CompoundTarget {
                        image: ImageTensor::new(h, w, compound_image)?,
                        labels: OneHotLabel::new(h, w, classes, compound_labels)?,
                        weights: WeightMap::new(h, w, compound_weights)?,
                        target_index: grid_data,
                    };
                    // odometer over subset choices
                    let mut choice = vec![0usize; cells];
                    loop {
                        let mut mask_data = vec![false; h * w];
                        for (cell, (xs, ys)) in cell_rects.iter().enumerate() {
                            let subset = &cell_subsets[cell][choice[cell]];
                            if subset.is_empty() {
                                continue;
                            }
                            let mut selected = [false; IGNORE as usize];
                            for c in subset {
                                selected[*c as usize] = true;
                            }
                            for y in ys.clone() {
                                for x in xs.clone() {
                                    let l = source_labels.get(x, y);
                                    if l != IGNORE && selected[l as usize] {
                                        mask_data[y * w + x] = true;
                                    }
                                }
                            }
                        }
                        let mask = ClassMask::new(h, w, mask_data)?;
                        let mixed =
                            class_mix_fuse(source, &source_one_hot, &compound, &mask)?;
                        outputs.insert(mixed.canonical_bytes());
                        // advance subset odometer
                        let mut pos = 0;
                        loop {
                            if pos == cells {
                                break;
                            }
                            choice[pos] += 1;
                            if choice[pos] < cell_subsets[pos].len() {
                                break;
                            }
                            choice[pos] = 0;
                            pos += 1;
                        }
                        if pos == cells {
                            break;
                        }
                    }
                    // advance assignment odometer
                    let mut pos = 0;
                    loop {
                        if pos == cells {
                            break;
                        }
                        assignment[pos] += 1;
                        if assignment[pos] < params.n_c {
                            break;
                        }
                        assignment[pos] = 0;
                        pos += 1;
                    }
                    if pos == cells {
                        break;
                    }
                }
            }
        }
    }
    Ok(outputs)
}
