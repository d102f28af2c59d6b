//! Procedural compound benchmarks: a labeled source domain, N photometrically
//! shifted target subdomains, and a held-out open subdomain.
//!
//! A scene renders C-1 exact-geometry shapes (disc, rectangle, stripe band,
//! cycling) in class order over a background class, each with a fixed base
//! color. Labels come from the pre-shift geometry, so photometric domain
//! shifts never touch them. The photometric pipeline, in order: hue rotation
//! (RGB rotation about the gray axis), contrast about 0.5, brightness offset,
//! multiplicative sine texture, additive Gaussian noise, clip to [0, 1].
//!
//! Draw order: shape parameters per class on the SceneGeometry stream
//! (disc 3 draws, rectangle 4, stripe 3); texture phases then per-pixel
//! noise (row-major, 3 channels) on the SceneNoise stream.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{read_image_png, read_label_png};
use crate::rng::{Purpose, StreamKey};
use crate::tensor::{ImageTensor, LabelMap};

/// Base colors the renderer assigns to classes: chroma vectors of radius
/// 0.25 around mid-gray at golden-angle hue steps, plus a small per-class
/// luminance offset. Mid-range components survive a +/-0.25 brightness
/// shift without clipping, chroma keeps every class pair separated, and
/// the luminance offsets give brightness-sensitive shortcuts a model can
/// wrongly rely on.
pub const SCENE_COLORS: [[f32; 3]; 16] = [
    [0.7263, 0.2737, 0.5000], // 0 (hue 0.0, lum +0.000)
    [0.5172, 0.7768, 0.3260], // 1 (hue 125.0, lum +0.040)
    [0.2337, 0.6863, 0.4600], // 2 (hue 180.0, lum -0.040)
    [0.5428, 0.2832, 0.7340], // 3 (hue 305.0, lum +0.020)
    [0.7324, 0.4124, 0.2952], // 4 (hue 45.0, lum -0.020)
    [0.6606, 0.6606, 0.2687], // 5 (hue 90.0, lum +0.030)
    [0.2176, 0.5376, 0.6548], // 6 (hue 225.0, lum -0.030)
    [0.3794, 0.3794, 0.7713], // 7 (hue 270.0, lum +0.010)
    [0.7490, 0.3309, 0.3900], // 8 (hue 22.5, lum -0.010)
    [0.4144, 0.7960, 0.3946], // 9 (hue 147.5, lum +0.035)
    [0.2060, 0.6241, 0.5650], // 10 (hue 202.5, lum -0.035)
    [0.6356, 0.2540, 0.6554], // 11 (hue 327.5, lum +0.015)
    [0.6923, 0.5191, 0.2436], // 12 (hue 67.5, lum -0.015)
    [0.6036, 0.7015, 0.2699], // 13 (hue 102.5, lum +0.025)
    [0.2677, 0.4409, 0.7164], // 14 (hue 247.5, lum -0.025)
    [0.4214, 0.3235, 0.7551], // 15 (hue 282.5, lum +0.000)
];

/// Photometric parameters of one subdomain.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub brightness_shift: f32,
    /// Degrees; rotation of RGB about the gray axis.
    pub hue_rotation: f32,
    pub contrast_scale: f32,
    pub noise_sigma: f32,
    pub texture_frequency: f32,
}

impl DomainSpec {
    pub fn identity() -> Self {
        DomainSpec {
            brightness_shift: 0.0,
            hue_rotation: 0.0,
            contrast_scale: 1.0,
            noise_sigma: 0.0,
            texture_frequency: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(-0.5..=0.5).contains(&self.brightness_shift) {
            return Err(Error::Config(format!(
                "brightness_shift {} outside [-0.5, 0.5]",
                self.brightness_shift
            )));
        }
        if self.contrast_scale <= 0.0 {
            return Err(Error::Config(format!(
                "contrast_scale {} must be positive",
                self.contrast_scale
            )));
        }
        if self.noise_sigma < 0.0 {
            return Err(Error::Config(format!(
                "noise_sigma {} must be non-negative",
                self.noise_sigma
            )));
        }
        if self.texture_frequency <= 0.0 {
            return Err(Error::Config(format!(
                "texture_frequency {} must be positive",
                self.texture_frequency
            )));
        }
        Ok(())
    }
}

/// Which split a sample belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DomainId {
    Source,
    /// 1-based seen-subdomain index.
    Target(usize),
    Open,
}

impl DomainId {
    pub fn dir_name(&self) -> String {
        match self {
            DomainId::Source => "source".into(),
            DomainId::Target(i) => format!("target_{}", i),
            DomainId::Open => "open".into(),
        }
    }
}

/// One rendered scene: image, exact labels, and split membership.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneSample {
    pub image: ImageTensor,
    pub labels: LabelMap,
    pub domain: DomainId,
}

/// Benchmark layout: source, N seen target subdomains, one open subdomain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkConfig {
    pub height: usize,
    pub width: usize,
    pub classes: usize,
    pub samples_per_split: usize,
    pub master_seed: u64,
    pub source_spec: DomainSpec,
    pub target_specs: Vec<DomainSpec>,
    pub open_spec: DomainSpec,
}

impl BenchmarkConfig {
    /// The default desk-scale benchmark: 48x48, 4 classes, three seen
    /// subdomains shifted along distinct axes, and an open subdomain
    /// blending two of them.
    pub fn default_desk() -> Self {
        let base = DomainSpec::identity();
        BenchmarkConfig {
            height: 48,
            width: 48,
            classes: 4,
            samples_per_split: 40,
            master_seed: 1234,
            source_spec: base,
            target_specs: vec![
                DomainSpec {
                    brightness_shift: -0.25,
                    ..base
                },
                DomainSpec {
                    hue_rotation: 40.0,
                    ..base
                },
                DomainSpec {
                    noise_sigma: 0.08,
                    ..base
                },
            ],
            open_spec: DomainSpec {
                hue_rotation: 20.0,
                noise_sigma: 0.05,
                ..base
            },
        }
    }

    pub fn n_targets(&self) -> usize {
        self.target_specs.len()
    }

    /// Validates every constraint; returns non-fatal warnings (duplicate
    /// seen specs).
    pub fn validate(&self) -> Result<Vec<String>> {
        if self.height < 8 || self.width < 8 {
            return Err(Error::Config(format!(
                "benchmark size {}x{} below minimum 8x8",
                self.height, self.width
            )));
        }
        if self.classes < 2 {
            return Err(Error::Config("benchmark needs at least 2 classes".into()));
        }
        if self.classes > SCENE_COLORS.len() {
            return Err(Error::Config(format!(
                "class count {} exceeds palette size {}",
                self.classes,
                SCENE_COLORS.len()
            )));
        }
        if self.target_specs.is_empty() {
            return Err(Error::Config(
                "benchmark needs at least one target subdomain".into(),
            ));
        }
        if self.samples_per_split == 0 {
            return Err(Error::Config("samples_per_split must be positive".into()));
        }
        self.source_spec.validate()?;
        for s in &self.target_specs {
            s.validate()?;
        }
        self.open_spec.validate()?;
        for (i, s) in self.target_specs.iter().enumerate() {
            if *s == self.open_spec {
                return Err(Error::Config(format!(
                    "open subdomain spec equals seen subdomain {}",
                    i + 1
                )));
            }
        }
        let dist = hull_distance(&self.target_specs, &self.open_spec, &self.source_spec);
        if dist <= HULL_TOLERANCE {
            return Err(Error::Config(format!(
                "open subdomain lies inside the convex hull of seen subdomains \
                 (normalized distance {:.4} <= {})",
                dist, HULL_TOLERANCE
            )));
        }
        let mut warnings = Vec::new();
        for i in 0..self.target_specs.len() {
            for j in i + 1..self.target_specs.len() {
                if self.target_specs[i] == self.target_specs[j] {
                    warnings.push(format!(
                        "target subdomains {} and {} share the same spec",
                        i + 1,
                        j + 1
                    ));
                }
            }
        }
        Ok(warnings)
    }
}

/// Minimum normalized distance from the open spec to the seen-spec hull.
pub const HULL_TOLERANCE: f64 = 0.01;

fn spec_coords(s: &DomainSpec) -> [f64; 5] {
    [
        s.brightness_shift as f64,
        s.hue_rotation as f64,
        s.contrast_scale as f64,
        s.noise_sigma as f64,
        s.texture_frequency as f64,
    ]
}

/// Distance from `open` to the convex hull of `seen`, after centering at the
/// source spec and scaling each axis by its largest shift (Frank-Wolfe on
/// the simplex; hull membership is invariant to this affine change).
fn hull_distance(seen: &[DomainSpec], open: &DomainSpec, source: &DomainSpec) -> f64 {
    let center = spec_coords(source);
    let mut pts: Vec<[f64; 5]> = seen.iter().map(|s| spec_coords(s)).collect();
    let mut target = spec_coords(open);
    for p in pts.iter_mut() {
        for a in 0..5 {
            p[a] -= center[a];
        }
    }
    for a in 0..5 {
        target[a] -= center[a];
    }
    let mut scale = [1e-9f64; 5];
    for a in 0..5 {
        for p in &pts {
            scale[a] = scale[a].max(p[a].abs());
        }
        scale[a] = scale[a].max(target[a].abs());
    }
    for p in pts.iter_mut() {
        for a in 0..5 {
            p[a] /= scale[a];
        }
    }
    for a in 0..5 {
        target[a] /= scale[a];
    }
    // Frank-Wolfe: x_{k+1} = x_k + 2/(k+2) (s - x_k), s the best vertex
    let mut x = pts[0];
    for k in 0..5000u64 {
        let mut best = 0usize;
        let mut best_dot = f64::INFINITY;
        for (i, p) in pts.iter().enumerate() {
            let dot: f64 = (0..5).map(|a| (x[a] - target[a]) * p[a]).sum();
            if dot < best_dot {
                best_dot = dot;
                best = i;
            }
        }
        let gamma = 2.0 / (k as f64 + 2.0);
        for a in 0..5 {
            x[a] += gamma * (pts[best][a] - x[a]);
        }
    }
    (0..5)
        .map(|a| (x[a] - target[a]).powi(2))
        .sum::<f64>()
        .sqrt()
}

fn palette_color(class: usize) -> [f32; 3] {
    SCENE_COLORS[class]
}

fn hue_matrix(degrees: f64) -> [[f64; 3]; 3] {
    let a = degrees.to_radians();
    let (sin, cos) = a.sin_cos();
    let third = (1.0 - cos) / 3.0;
    let s = (1.0f64 / 3.0).sqrt() * sin;
    [
        [cos + third, third - s, third + s],
        [third + s, cos + third, third - s],
        [third - s, third + s, cos + third],
    ]
}

/// Renders one scene. Labels are computed from the exact pre-shift geometry.
pub fn generate_scene(
    spec: &DomainSpec,
    classes: usize,
    height: usize,
    width: usize,
    domain: DomainId,
    key: StreamKey,
) -> Result<SceneSample> {
    if classes < 2 {
        return Err(Error::Config("scene needs at least 2 classes".into()));
    }
    if classes > SCENE_COLORS.len() {
        return Err(Error::Config(format!(
            "class count {} exceeds palette size {}",
            classes,
            SCENE_COLORS.len()
        )));
    }
    if height < 8 || width < 8 {
        return Err(Error::Config(format!(
            "scene size {}x{} below minimum 8x8",
            height, width
        )));
    }
    spec.validate()?;

    let mut geometry = key.stream(Purpose::SceneGeometry);
    let mut labels = vec![0u16; height * width];
    let w = width as f64;
    let h = height as f64;
    let short = w.min(h);
    for class in 1..classes {
        match (class - 1) % 3 {
            0 => {
                // disc
                let cx = geometry.range_f64(0.2, 0.8) * w;
                let cy = geometry.range_f64(0.2, 0.8) * h;
                let r = geometry.range_f64(0.18, 0.36) * short;
                for y in 0..height {
                    for x in 0..width {
                        let dx = x as f64 + 0.5 - cx;
                        let dy = y as f64 + 0.5 - cy;
                        if dx * dx + dy * dy <= r * r {
                            labels[y * width + x] = class as u16;
                        }
                    }
                }
            }
            1 => {
                // axis-aligned rectangle
                let cx = geometry.range_f64(0.25, 0.75) * w;
                let cy = geometry.range_f64(0.25, 0.75) * h;
                let hw = geometry.range_f64(0.14, 0.30) * w;
                let hh = geometry.range_f64(0.14, 0.30) * h;
                for y in 0..height {
                    for x in 0..width {
                        if (x as f64 + 0.5 - cx).abs() <= hw && (y as f64 + 0.5 - cy).abs() <= hh
                        {
                            labels[y * width + x] = class as u16;
                        }
                    }
                }
            }
            _ => {
                // stripe band through the image
                let theta = geometry.range_f64(0.0, std::f64::consts::PI);
                let offset = geometry.range_f64(-0.2, 0.2) * short;
                let half = geometry.range_f64(0.09, 0.16) * short;
                let (sin, cos) = theta.sin_cos();
                for y in 0..height {
                    for x in 0..width {
                        let d = (x as f64 + 0.5 - w / 2.0) * cos
                            + (y as f64 + 0.5 - h / 2.0) * sin
                            - offset;
                        if d.abs() <= half {
                            labels[y * width + x] = class as u16;
                        }
                    }
                }
            }
        }
    }

    let mut noise = key.stream(Purpose::SceneNoise);
    let phase_x = noise.range_f64(0.0, std::f64::consts::TAU);
    let phase_y = noise.range_f64(0.0, std::f64::consts::TAU);
    let hue = hue_matrix(spec.hue_rotation as f64);
    let contrast = spec.contrast_scale as f64;
    let brightness = spec.brightness_shift as f64;
    let freq = spec.texture_frequency as f64 * std::f64::consts::TAU;
    let sigma = spec.noise_sigma as f64;
    const TEXTURE_AMP: f64 = 0.1;

    let mut data = vec![0f32; height * width * 3];
    for y in 0..height {
        for x in 0..width {
            let p = y * width + x;
            let base = palette_color(labels[p] as usize);
            let rgb = [base[0] as f64, base[1] as f64, base[2] as f64];
            let mut px = [0f64; 3];
            for c in 0..3 {
                px[c] = hue[c][0] * rgb[0] + hue[c][1] * rgb[1] + hue[c][2] * rgb[2];
            }
            let tex = 1.0
                + TEXTURE_AMP
                    * (freq * (x as f64 + 0.5) / w + phase_x).sin()
                    * (freq * (y as f64 + 0.5) / h + phase_y).sin();
            for c in 0..3 {
                let mut v = 0.5 + (px[c] - 0.5) * contrast;
                v += brightness;
                v *= tex;
                if sigma > 0.0 {
                    v += sigma * noise.normal();
                }
                data[p * 3 + c] = v.clamp(0.0, 1.0) as f32;
            }
        }
    }
    // noise draws happen even on clipped pixels, so draw counts are fixed;
    // note the per-channel loop above draws in channel order within a pixel
    Ok(SceneSample {
        image: ImageTensor::new(height, width, data)?,
        labels: LabelMap::new(height, width, labels)?,
        domain,
    })
}

/// The generated benchmark. Target labels are retained for evaluation only;
/// training code receives target images via [`CompoundBenchmark::target_images`].
#[derive(Clone, Debug)]
pub struct CompoundBenchmark {
    pub classes: usize,
    pub source: Vec<SceneSample>,
    pub targets: Vec<Vec<SceneSample>>,
    pub open: Vec<SceneSample>,
}

impl CompoundBenchmark {
    /// Unlabeled view of the compound target pool (subdomain order, then
    /// sample order). This is the only target view the trainer touches.
    pub fn target_images(&self) -> Vec<&ImageTensor> {
        self.targets
            .iter()
            .flat_map(|split| split.iter().map(|s| &s.image))
            .collect()
    }

    /// Labeled compound pool, evaluation only.
    pub fn compound_eval_samples(&self) -> Vec<&SceneSample> {
        self.targets.iter().flatten().collect()
    }
}

fn split_key(seed: u64, split: u64, sample: u64) -> StreamKey {
    StreamKey::new(seed, (split << 32) | sample)
}

/// Generates all splits, disjoint by stream construction.
pub fn make_compound_benchmark(cfg: &BenchmarkConfig) -> Result<CompoundBenchmark> {
    cfg.validate()?;
    let n = cfg.samples_per_split;
    let mut source = Vec::with_capacity(n);
    for i in 0..n {
        source.push(generate_scene(
            &cfg.source_spec,
            cfg.classes,
            cfg.height,
            cfg.width,
            DomainId::Source,
            split_key(cfg.master_seed, 0, i as u64),
        )?);
    }
    let mut targets = Vec::with_capacity(cfg.n_targets());
    for (t, spec) in cfg.target_specs.iter().enumerate() {
        let mut split = Vec::with_capacity(n);
        for i in 0..n {
            split.push(generate_scene(
                spec,
                cfg.classes,
                cfg.height,
                cfg.width,
                DomainId::Target(t + 1),
                split_key(cfg.master_seed, t as u64 + 1, i as u64),
            )?);
        }
        targets.push(split);
    }
    let mut open = Vec::with_capacity(n);
    let open_split = cfg.n_targets() as u64 + 1;
    for i in 0..n {
        open.push(generate_scene(
            &cfg.open_spec,
            cfg.classes,
            cfg.height,
            cfg.width,
            DomainId::Open,
            split_key(cfg.master_seed, open_split, i as u64),
        )?);
    }
    Ok(CompoundBenchmark {
        classes: cfg.classes,
        source,
        targets,
        open,
    })
}

/// Assembles a benchmark from already-loaded splits (the paired-PNG path).
pub fn benchmark_from_splits(
    classes: usize,
    source: Vec<SceneSample>,
    targets: Vec<Vec<SceneSample>>,
    open: Vec<SceneSample>,
) -> Result<CompoundBenchmark> {
    for s in source
        .iter()
        .chain(targets.iter().flatten())
        .chain(open.iter())
    {
        s.labels.check_classes(classes)?;
    }
    Ok(CompoundBenchmark {
        classes,
        source,
        targets,
        open,
    })
}

/// Loads a split directory of paired `img_NNNN.png` / `lab_NNNN.png` files.
pub fn load_split_dir(dir: &Path, domain: DomainId) -> Result<Vec<SceneSample>> {
    let mut names: Vec<String> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .filter_map(|e| e.file_name().into_string().ok())
        .filter(|n| n.starts_with("img_") && n.ends_with(".png"))
        .collect();
    names.sort();
    if names.is_empty() {
        return Err(Error::Io(format!(
            "no img_*.png files in {}",
            dir.display()
        )));
    }
    let mut samples = Vec::with_capacity(names.len());
    for name in names {
        let image = read_image_png(&dir.join(&name))?;
        let lab_name = name.replacen("img_", "lab_", 1);
        let labels = read_label_png(&dir.join(&lab_name))?;
        if labels.height() != image.height() || labels.width() != image.width() {
            return Err(Error::ShapeMismatch {
                expected: (image.height(), image.width()),
                got: (labels.height(), labels.width()),
            });
        }
        samples.push(SceneSample {
            image,
            labels,
            domain,
        });
    }
    Ok(samples)
}
