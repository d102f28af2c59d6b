//! Two-stage mixing masks: the integer grid mask selecting which target
//! supplies each cell, and the per-cell binary class mask selecting which
//! source pixels are pasted over the fused target.
//!
//! Cell boundaries for a grid count `g` over extent `n` sit at
//! `round(a*n/g)` for `a = 0..=g` (computed in exact integer arithmetic),
//! so cells tile the image exactly and differ by at most one pixel in size
//! when `g` does not divide `n`.

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tensor::{LabelMap, IGNORE};

/// A `g_h` columns by `g_v` rows partition of an image.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GridGeometry {
    g_h: usize,
    g_v: usize,
}

fn boundary(a: usize, extent: usize, count: usize) -> usize {
    // round(a * extent / count), half away from zero, exact in integers
    (2 * a * extent + count) / (2 * count)
}

impl GridGeometry {
    pub fn new(g_h: usize, g_v: usize, width: usize, height: usize) -> Result<Self> {
        if g_h < 1 || g_h > width {
            return Err(Error::InvalidArgument(format!(
                "horizontal grid count {} outside [1, {}]",
                g_h, width
            )));
        }
        if g_v < 1 || g_v > height {
            return Err(Error::InvalidArgument(format!(
                "vertical grid count {} outside [1, {}]",
                g_v, height
            )));
        }
        Ok(GridGeometry { g_h, g_v })
    }

    pub fn g_h(&self) -> usize {
        self.g_h
    }

    pub fn g_v(&self) -> usize {
        self.g_v
    }

    pub fn cells(&self) -> usize {
        self.g_h * self.g_v
    }

    /// Pixel ranges of cell `(cx, cy)`: (x0..x1, y0..y1).
    pub fn cell_rect(
        &self,
        cx: usize,
        cy: usize,
        width: usize,
        height: usize,
    ) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        let x0 = boundary(cx, width, self.g_h);
        let x1 = boundary(cx + 1, width, self.g_h);
        let y0 = boundary(cy, height, self.g_v);
        let y1 = boundary(cy + 1, height, self.g_v);
        (x0..x1, y0..y1)
    }
}

/// H x W integers in [1, N_c], constant within each grid cell.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GridMask {
    height: usize,
    width: usize,
    geometry: GridGeometry,
    data: Vec<u8>,
}

impl GridMask {
    /// Wraps raw per-pixel values, validating range and cell constancy.
    pub fn from_values(
        height: usize,
        width: usize,
        geometry: GridGeometry,
        data: Vec<u8>,
    ) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::InvalidArgument(format!(
                "grid mask payload length {} does not match {}x{}",
                data.len(),
                height,
                width
            )));
        }
        if data.iter().any(|&v| v < 1) {
            return Err(Error::InvalidArgument(
                "grid mask values must be at least 1".into(),
            ));
        }
        for cy in 0..geometry.g_v() {
            for cx in 0..geometry.g_h() {
                let (xs, ys) = geometry.cell_rect(cx, cy, width, height);
                let v = data[ys.start * width + xs.start];
                for y in ys.clone() {
                    for x in xs.clone() {
                        if data[y * width + x] != v {
                            return Err(Error::InvalidArgument(format!(
                                "grid mask not constant within cell ({}, {})",
                                cx, cy
                            )));
                        }
                    }
                }
            }
        }
        Ok(GridMask {
            height,
            width,
            geometry,
            data,
        })
    }

    /// A mask with every cell set to `value`.
    pub fn constant(
        height: usize,
        width: usize,
        geometry: GridGeometry,
        value: u8,
    ) -> Result<Self> {
        GridMask::from_values(height, width, geometry, vec![value; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn geometry(&self) -> GridGeometry {
        self.geometry
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }
}

/// H x W binary mask: 1 marks source pixels of the selected class subset.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClassMask {
    height: usize,
    width: usize,
    data: Vec<bool>,
}

impl ClassMask {
    pub fn new(height: usize, width: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::InvalidArgument(format!(
                "class mask payload length {} does not match {}x{}",
                data.len(),
                height,
                width
            )));
        }
        Ok(ClassMask {
            height,
            width,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }
}

/// Draws `(g_h, g_v)` independently and uniformly from the candidate set.
pub fn sample_grid_dims(candidates: &[usize], stream: &mut RngStream) -> Result<(usize, usize)> {
    if candidates.is_empty() {
        return Err(Error::InvalidArgument(
            "grid candidate set is empty".into(),
        ));
    }
    if let Some(&bad) = candidates.iter().find(|&&g| g < 1) {
        return Err(Error::InvalidArgument(format!(
            "grid candidate {} must be at least 1",
            bad
        )));
    }
    let g_h = candidates[stream.index(candidates.len())?];
    let g_v = candidates[stream.index(candidates.len())?];
    Ok((g_h, g_v))
}

/// One uniform draw from [1, N_c] per cell, cells visited row-major.
pub fn make_grid_mask(
    height: usize,
    width: usize,
    geometry: GridGeometry,
    n_c: usize,
    stream: &mut RngStream,
) -> Result<GridMask> {
    if n_c < 1 {
        return Err(Error::InvalidArgument(
            "target count N_c must be at least 1".into(),
        ));
    }
    if n_c > u8::MAX as usize {
        return Err(Error::InvalidArgument(format!(
            "target count {} exceeds {}",
            n_c,
            u8::MAX
        )));
    }
    let mut data = vec![0u8; height * width];
    for cy in 0..geometry.g_v() {
        for cx in 0..geometry.g_h() {
            let value = stream.uniform_int(1, n_c as i64)? as u8;
            let (xs, ys) = geometry.cell_rect(cx, cy, width, height);
            for y in ys {
                for x in xs.clone() {
                    data[y * width + x] = value;
                }
            }
        }
    }
    Ok(GridMask {
        height,
        width,
        geometry,
        data,
    })
}

/// Number of classes to select from a cell holding `c_s` distinct classes.
///
/// ceil(c_s / N_c), except N_c = 1 falls back to ceil(c_s / 2): the literal
/// formula would select every class and paste the whole source image.
pub fn subset_size(c_s: usize, n_c: usize) -> usize {
    if c_s == 0 {
        return 0;
    }
    let divisor = if n_c == 1 { 2 } else { n_c };
    c_s.div_ceil(divisor)
}

/// Builds the binary class-mixing mask: one class subset per grid cell,
/// redrawn independently, all drawn from the image-level class list.
///
/// `c_s` counts the distinct non-IGNORE classes of the whole source label
/// map, and every cell draws `subset_size(c_s, N_c)` of those classes
/// without replacement (ascending candidate order, partial Fisher-Yates,
/// cells visited row-major). A cell's mask marks its pixels whose label is
/// in the cell's subset; chosen classes absent from the cell contribute
/// nothing. Keeping the count and candidate list image-level holds the
/// expected source area near `k/c_s` per cell, so source and fused-target
/// content stay balanced whatever the grid size.
pub fn build_class_mask(
    source_labels: &LabelMap,
    geometry: GridGeometry,
    n_c: usize,
    stream: &mut RngStream,
) -> Result<ClassMask> {
    if n_c < 1 {
        return Err(Error::InvalidArgument(
            "target count N_c must be at least 1".into(),
        ));
    }
    source_labels.check_classes(IGNORE as usize)?;
    let (height, width) = (source_labels.height(), source_labels.width());
    let mut data = vec![false; height * width];
    let classes = source_labels.distinct_classes();
    if classes.is_empty() {
        return ClassMask::new(height, width, data);
    }
    let k = subset_size(classes.len(), n_c);
    for cy in 0..geometry.g_v() {
        for cx in 0..geometry.g_h() {
            let chosen = stream.choose_k(&classes, k)?;
            let mut selected = [false; IGNORE as usize];
            for c in chosen {
                selected[c as usize] = true;
            }
            let (xs, ys) = geometry.cell_rect(cx, cy, width, height);
            for y in ys {
                for x in xs.clone() {
                    let l = source_labels.get(x, y);
                    if l != IGNORE && selected[l as usize] {
                        data[y * width + x] = true;
                    }
                }
            }
        }
    }
    ClassMask::new(height, width, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{Purpose, StreamKey};

    fn stream(seed: u64, purpose: Purpose) -> RngStream {
        StreamKey::new(seed, 0).stream(purpose)
    }

    #[test]
    fn singleton_candidate_set_is_forced() {
        let mut s = stream(1, Purpose::GridDims);
        assert_eq!(sample_grid_dims(&[2], &mut s).unwrap(), (2, 2));
    }

    #[test]
    fn dims_come_from_the_candidate_set() {
        for seed in 0..50 {
            let mut s = stream(seed, Purpose::GridDims);
            let (g_h, g_v) = sample_grid_dims(&[2, 4, 8], &mut s).unwrap();
            assert!([2, 4, 8].contains(&g_h));
            assert!([2, 4, 8].contains(&g_v));
        }
    }

    #[test]
    fn empty_candidate_set_is_an_error() {
        let mut s = stream(1, Purpose::GridDims);
        assert!(sample_grid_dims(&[], &mut s).is_err());
    }

    // frequency count: 30,000 draws, each candidate within 2% of 1/3
    #[test]
    fn dims_are_uniform_over_candidates() {
        let mut counts = std::collections::HashMap::new();
        let n = 15_000u64;
        for it in 0..n {
            let mut s = StreamKey::new(77, it).stream(Purpose::GridDims);
            let (g_h, g_v) = sample_grid_dims(&[2, 4, 8], &mut s).unwrap();
            *counts.entry(g_h).or_insert(0usize) += 1;
            *counts.entry(g_v).or_insert(0usize) += 1;
        }
        for &g in &[2usize, 4, 8] {
            let freq = counts[&g] as f64 / (2 * n) as f64;
            assert!((freq - 1.0 / 3.0).abs() < 0.02, "freq({}) = {}", g, freq);
        }
    }

    #[test]
    fn single_index_mask_is_all_ones() {
        let geom = GridGeometry::new(3, 2, 9, 6).unwrap();
        let mut s = stream(4, Purpose::GridValues);
        let mask = make_grid_mask(6, 9, geom, 1, &mut s).unwrap();
        assert!(mask.data().iter().all(|&v| v == 1));
    }

    #[test]
    fn one_cell_mask_is_constant() {
        let geom = GridGeometry::new(1, 1, 5, 7).unwrap();
        let mut s = stream(9, Purpose::GridValues);
        let mask = make_grid_mask(7, 5, geom, 4, &mut s).unwrap();
        let v = mask.data()[0];
        assert!((1..=4).contains(&v));
        assert!(mask.data().iter().all(|&x| x == v));
    }

    // exhaustive scan: 8x8 with 2x2 grid is four constant 4x4 blocks
    #[test]
    fn mask_is_piecewise_constant_on_exact_blocks() {
        let geom = GridGeometry::new(2, 2, 8, 8).unwrap();
        let mut s = stream(13, Purpose::GridValues);
        let mask = make_grid_mask(8, 8, geom, 3, &mut s).unwrap();
        for by in 0..2 {
            for bx in 0..2 {
                let v = mask.get(bx * 4, by * 4);
                assert!((1..=3).contains(&v));
                for y in by * 4..by * 4 + 4 {
                    for x in bx * 4..bx * 4 + 4 {
                        assert_eq!(mask.get(x, y), v);
                    }
                }
            }
        }
    }

    #[test]
    fn cells_tile_exactly_when_not_divisible() {
        // 7 wide, 3 columns: widths may differ by at most one pixel
        let geom = GridGeometry::new(3, 2, 7, 5).unwrap();
        let mut covered = vec![0u8; 35];
        let mut widths = Vec::new();
        for cy in 0..2 {
            for cx in 0..3 {
                let (xs, ys) = geom.cell_rect(cx, cy, 7, 5);
                if cy == 0 {
                    widths.push(xs.len());
                }
                for y in ys {
                    for x in xs.clone() {
                        covered[y * 7 + x] += 1;
                    }
                }
            }
        }
        assert!(covered.iter().all(|&c| c == 1), "cells overlap or miss");
        let (min, max) = (widths.iter().min().unwrap(), widths.iter().max().unwrap());
        assert!(max - min <= 1);
    }

    #[test]
    fn forced_single_class_cell_is_fully_marked() {
        let labels = LabelMap::filled(4, 4, 2).unwrap();
        let geom = GridGeometry::new(1, 1, 4, 4).unwrap();
        let mut s = stream(3, Purpose::ClassSubset);
        let mask = build_class_mask(&labels, geom, 3, &mut s).unwrap();
        assert!(mask.data().iter().all(|&b| b));
    }

    // membership check: two of four classes selected, pixel counts match
    #[test]
    fn subset_pixel_count_matches_selected_classes() {
        let mut data = Vec::with_capacity(16);
        for y in 0..4u16 {
            for x in 0..4u16 {
                data.push((y / 2) * 2 + (x / 2)); // quadrant classes 0..3
            }
        }
        let labels = LabelMap::new(4, 4, data).unwrap();
        let geom = GridGeometry::new(1, 1, 4, 4).unwrap();
        let mut s = stream(21, Purpose::ClassSubset);
        let mask = build_class_mask(&labels, geom, 2, &mut s).unwrap();
        // k = ceil(4/2) = 2 classes of 4 pixels each
        let marked = mask.data().iter().filter(|&&b| b).count();
        assert_eq!(marked, 8);
        // marked pixels all carry one of exactly two classes
        let mut classes = std::collections::HashSet::new();
        for (p, &b) in mask.data().iter().enumerate() {
            if b {
                classes.insert(labels.data()[p]);
            }
        }
        assert_eq!(classes.len(), 2);
        // and every pixel of a marked class is marked
        for (p, &b) in mask.data().iter().enumerate() {
            assert_eq!(b, classes.contains(&labels.data()[p]));
        }
    }

    #[test]
    fn n_c_one_falls_back_to_half_class_selection() {
        assert_eq!(subset_size(4, 1), 2);
        assert_eq!(subset_size(3, 1), 2);
        assert_eq!(subset_size(1, 1), 1);
        assert_eq!(subset_size(4, 2), 2);
        assert_eq!(subset_size(4, 3), 2);
        assert_eq!(subset_size(1, 3), 1);
        assert_eq!(subset_size(0, 3), 0);

        let mut data = Vec::with_capacity(16);
        for y in 0..4u16 {
            for x in 0..4u16 {
                data.push((y / 2) * 2 + (x / 2));
            }
        }
        let labels = LabelMap::new(4, 4, data).unwrap();
        let geom = GridGeometry::new(1, 1, 4, 4).unwrap();
        let mut s = stream(8, Purpose::ClassSubset);
        let mask = build_class_mask(&labels, geom, 1, &mut s).unwrap();
        assert_eq!(mask.data().iter().filter(|&&b| b).count(), 8);
    }

    #[test]
    fn ignore_only_cells_stay_zero() {
        let labels = LabelMap::filled(4, 4, IGNORE).unwrap();
        let geom = GridGeometry::new(2, 2, 4, 4).unwrap();
        let mut s = stream(5, Purpose::ClassSubset);
        let mask = build_class_mask(&labels, geom, 3, &mut s).unwrap();
        assert!(mask.data().iter().all(|&b| !b));
    }

    #[test]
    fn masks_are_deterministic() {
        let labels = LabelMap::new(4, 4, (0..16).map(|i| (i % 3) as u16).collect()).unwrap();
        let geom = GridGeometry::new(2, 2, 4, 4).unwrap();
        let a = build_class_mask(&labels, geom, 2, &mut stream(6, Purpose::ClassSubset)).unwrap();
        let b = build_class_mask(&labels, geom, 2, &mut stream(6, Purpose::ClassSubset)).unwrap();
        assert_eq!(a, b);
        let ga = make_grid_mask(4, 4, geom, 3, &mut stream(6, Purpose::GridValues)).unwrap();
        let gb = make_grid_mask(4, 4, geom, 3, &mut stream(6, Purpose::GridValues)).unwrap();
        assert_eq!(ga, gb);
    }
}
