//! Per-pixel grid types: images, label maps, one-hot labels, weights,
//! and probability maps.
//!
//! All grids are row-major, immutable after construction, and validated at
//! construction: dimension mismatches and out-of-range values are rejected
//! up front so downstream code never has to re-check.

use crate::error::{Error, Result};

/// Sentinel for unlabeled pixels. Such pixels contribute zero loss and are
/// excluded from IoU accumulation.
pub const IGNORE: u16 = 255;

/// H x W x 3 image with values in [0, 1], row-major, channel-interleaved.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageTensor {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl ImageTensor {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidArgument(
                "image dimensions must be at least 1x1".into(),
            ));
        }
        if data.len() != height * width * 3 {
            return Err(Error::InvalidArgument(format!(
                "image payload length {} does not match {}x{}x3",
                data.len(),
                height,
                width
            )));
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0) {
            return Err(Error::InvalidArgument(format!(
                "image value {} outside [0, 1]",
                v
            )));
        }
        Ok(ImageTensor {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, rgb: [f32; 3]) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * 3);
        for _ in 0..height * width {
            data.extend_from_slice(&rgb);
        }
        ImageTensor::new(height, width, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }
}

/// H x W class indices; entries are in [0, C) or [`IGNORE`].
#[derive(Clone, Debug, PartialEq)]
pub struct LabelMap {
    height: usize,
    width: usize,
    data: Vec<u16>,
}

impl LabelMap {
    pub fn new(height: usize, width: usize, data: Vec<u16>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidArgument(
                "label map dimensions must be at least 1x1".into(),
            ));
        }
        if data.len() != height * width {
            return Err(Error::InvalidArgument(format!(
                "label payload length {} does not match {}x{}",
                data.len(),
                height,
                width
            )));
        }
        Ok(LabelMap {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, label: u16) -> Result<Self> {
        LabelMap::new(height, width, vec![label; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[u16] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> u16 {
        self.data[y * self.width + x]
    }

    /// Distinct non-IGNORE classes present, ascending.
    pub fn distinct_classes(&self) -> Vec<u16> {
        let set: std::collections::BTreeSet<u16> = self
            .data
            .iter()
            .copied()
            .filter(|&l| l != IGNORE)
            .collect();
        set.into_iter().collect()
    }

    /// Checks every entry against the class count, naming the first offender.
    pub fn check_classes(&self, classes: usize) -> Result<()> {
        for (i, &l) in self.data.iter().enumerate() {
            if l != IGNORE && l as usize >= classes {
                return Err(Error::InvalidLabel {
                    pixel: i,
                    label: l,
                    classes,
                });
            }
        }
        Ok(())
    }
}

/// H x W x C one-hot rows; IGNORE pixels are all-zero rows.
#[derive(Clone, Debug, PartialEq)]
pub struct OneHotLabel {
    height: usize,
    width: usize,
    classes: usize,
    data: Vec<f32>,
}

impl OneHotLabel {
    pub fn new(height: usize, width: usize, classes: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || classes == 0 {
            return Err(Error::InvalidArgument(
                "one-hot dimensions must be positive".into(),
            ));
        }
        if data.len() != height * width * classes {
            return Err(Error::InvalidArgument(format!(
                "one-hot payload length {} does not match {}x{}x{}",
                data.len(),
                height,
                width,
                classes
            )));
        }
        for (p, row) in data.chunks(classes).enumerate() {
            let mut sum = 0u32;
            for &v in row {
                if v != 0.0 && v != 1.0 {
                    return Err(Error::InvalidArgument(format!(
                        "one-hot entry {} at pixel {} is not 0 or 1",
                        v, p
                    )));
                }
                sum += v as u32;
            }
            if sum > 1 {
                return Err(Error::InvalidArgument(format!(
                    "one-hot row at pixel {} sums to {}",
                    p, sum
                )));
            }
        }
        Ok(OneHotLabel {
            height,
            width,
            classes,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, p: usize) -> &[f32] {
        &self.data[p * self.classes..(p + 1) * self.classes]
    }

    /// The class of pixel `p`, or None for an all-zero (IGNORE) row.
    pub fn class_of(&self, p: usize) -> Option<u16> {
        self.row(p)
            .iter()
            .position(|&v| v == 1.0)
            .map(|c| c as u16)
    }
}

/// H x W per-pixel loss weights in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct WeightMap {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl WeightMap {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidArgument(
                "weight map dimensions must be at least 1x1".into(),
            ));
        }
        if data.len() != height * width {
            return Err(Error::InvalidArgument(format!(
                "weight payload length {} does not match {}x{}",
                data.len(),
                height,
                width
            )));
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0) {
            return Err(Error::InvalidArgument(format!(
                "weight value {} outside [0, 1]",
                v
            )));
        }
        Ok(WeightMap {
            height,
            width,
            data,
        })
    }

    /// The all-one weight map used for source pixels.
    pub fn ones(height: usize, width: usize) -> Result<Self> {
        WeightMap::new(height, width, vec![1.0; height * width])
    }

    pub fn constant(height: usize, width: usize, w: f32) -> Result<Self> {
        WeightMap::new(height, width, vec![w; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }
}

/// H x W x C probabilities; each pixel row sums to 1 within 1e-6.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbMap {
    height: usize,
    width: usize,
    classes: usize,
    data: Vec<f64>,
}

impl ProbMap {
    pub fn new(height: usize, width: usize, classes: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || classes == 0 {
            return Err(Error::InvalidArgument(
                "probability map dimensions must be positive".into(),
            ));
        }
        if data.len() != height * width * classes {
            return Err(Error::InvalidArgument(format!(
                "probability payload length {} does not match {}x{}x{}",
                data.len(),
                height,
                width,
                classes
            )));
        }
        for (p, row) in data.chunks(classes).enumerate() {
            let mut sum = 0.0;
            for &v in row {
                if !v.is_finite() || v < 0.0 || v > 1.0 {
                    return Err(Error::InvalidArgument(format!(
                        "probability {} at pixel {} outside [0, 1]",
                        v, p
                    )));
                }
                sum += v;
            }
            if (sum - 1.0).abs() > 1e-6 {
                return Err(Error::InvalidArgument(format!(
                    "probability row at pixel {} sums to {}",
                    p, sum
                )));
            }
        }
        Ok(ProbMap {
            height,
            width,
            classes,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, p: usize) -> &[f64] {
        &self.data[p * self.classes..(p + 1) * self.classes]
    }
}

/// One-hot encoding of a label map; IGNORE pixels become all-zero rows.
pub fn one_hot_encode(labels: &LabelMap, classes: usize) -> Result<OneHotLabel> {
    labels.check_classes(classes)?;
    let mut data = vec![0.0f32; labels.height() * labels.width() * classes];
    for (p, &l) in labels.data().iter().enumerate() {
        if l != IGNORE {
            data[p * classes + l as usize] = 1.0;
        }
    }
    OneHotLabel::new(labels.height(), labels.width(), classes, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_hot_encode_definition() {
        let labels = LabelMap::new(1, 2, vec![0, 1]).unwrap();
        let oh = one_hot_encode(&labels, 2).unwrap();
        assert_eq!(oh.data(), &[1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn one_hot_encode_ignore_is_all_zero() {
        let labels = LabelMap::new(1, 1, vec![IGNORE]).unwrap();
        let oh = one_hot_encode(&labels, 3).unwrap();
        assert_eq!(oh.data(), &[0.0, 0.0, 0.0]);
        assert_eq!(oh.class_of(0), None);
    }

    #[test]
    fn one_hot_encode_rejects_out_of_range_label() {
        let labels = LabelMap::new(2, 2, vec![0, 1, 4, 0]).unwrap();
        let err = one_hot_encode(&labels, 3).unwrap_err();
        assert_eq!(
            err,
            Error::InvalidLabel {
                pixel: 2,
                label: 4,
                classes: 3
            }
        );
    }

    // exhaustive pixel check on a random map: every row sums to exactly 1
    #[test]
    fn one_hot_rows_sum_to_one_on_random_map() {
        use crate::rng::{Purpose, RngStream};
        let mut s = RngStream::new(11, 0, Purpose::DataSampling);
        let data: Vec<u16> = (0..64)
            .map(|_| s.uniform_int(0, 3).unwrap() as u16)
            .collect();
        let labels = LabelMap::new(8, 8, data).unwrap();
        let oh = one_hot_encode(&labels, 4).unwrap();
        for p in 0..64 {
            let sum: f32 = oh.row(p).iter().sum();
            assert_eq!(sum, 1.0, "pixel {}", p);
        }
    }

    #[test]
    fn grids_reject_dimension_mismatches() {
        assert!(ImageTensor::new(2, 2, vec![0.0; 11]).is_err());
        assert!(ImageTensor::new(0, 2, vec![]).is_err());
        assert!(LabelMap::new(2, 2, vec![0; 3]).is_err());
        assert!(WeightMap::new(2, 2, vec![0.5; 5]).is_err());
        assert!(OneHotLabel::new(1, 1, 2, vec![1.0]).is_err());
    }

    #[test]
    fn grids_reject_out_of_range_values() {
        assert!(ImageTensor::new(1, 1, vec![0.0, 1.2, 0.0]).is_err());
        assert!(WeightMap::new(1, 1, vec![-0.1]).is_err());
        assert!(OneHotLabel::new(1, 1, 2, vec![0.5, 0.5]).is_err());
        assert!(OneHotLabel::new(1, 1, 2, vec![1.0, 1.0]).is_err());
        assert!(ProbMap::new(1, 1, 2, vec![0.7, 0.2]).is_err());
    }

    #[test]
    fn distinct_classes_skips_ignore() {
        let labels = LabelMap::new(2, 2, vec![3, 0, IGNORE, 3]).unwrap();
        assert_eq!(labels.distinct_classes(), vec![0, 3]);
    }
}
