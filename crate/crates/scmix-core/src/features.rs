//! Fixed per-pixel feature recipe feeding the linear segmentation model
//! and the pooled image descriptors of the discrepancy estimator.
//!
//! Eleven features per pixel, in this order: RGB (3), 3x3 local mean per
//! channel (3), 3x3 local standard deviation per channel (3), normalized
//! coordinates x/W and y/H (2). Windows clamp at the border; the standard
//! deviation is the population form over the nine window values.

use crate::tensor::ImageTensor;

pub const FEATURE_DIM: usize = 11;

/// H x W x [`FEATURE_DIM`] feature grid, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl FeatureMap {
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn row(&self, p: usize) -> &[f32] {
        &self.data[p * FEATURE_DIM..(p + 1) * FEATURE_DIM]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }
}

pub fn featurize(image: &ImageTensor) -> FeatureMap {
    let h = image.height();
    let w = image.width();
    let src = image.data();
    let mut data = Vec::with_capacity(h * w * FEATURE_DIM);
    for y in 0..h {
        for x in 0..w {
            let p = (y * w + x) * 3;
            let rgb = [src[p], src[p + 1], src[p + 2]];
            let mut window = [[0f32; 9]; 3];
            let mut i = 0;
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let yy = (y as i64 + dy).clamp(0, h as i64 - 1) as usize;
                    let xx = (x as i64 + dx).clamp(0, w as i64 - 1) as usize;
                    let q = (yy * w + xx) * 3;
                    for c in 0..3 {
                        window[c][i] = src[q + c];
                    }
                    i += 1;
                }
            }
            let mut mean = [0f32; 3];
            let mut std = [0f32; 3];
            for c in 0..3 {
                mean[c] = window[c].iter().sum::<f32>() / 9.0;
                let var = window[c]
                    .iter()
                    .map(|v| (v - mean[c]) * (v - mean[c]))
                    .sum::<f32>()
                    / 9.0;
                std[c] = var.sqrt();
            }
            data.extend_from_slice(&rgb);
            data.extend_from_slice(&mean);
            data.extend_from_slice(&std);
            data.push(x as f32 / w as f32);
            data.push(y as f32 / h as f32);
        }
    }
    FeatureMap {
        height: h,
        width: w,
        data,
    }
}
