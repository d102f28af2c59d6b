//! Mean-teacher self-training over a linear per-pixel segmentation model.
//!
//! The model is a C x 11 linear softmax head over the fixed pixel features;
//! parameters are f64 so the analytic-gradient and EMA checks hold at tight
//! tolerances. Losses are means over valid (non-IGNORE) pixels rather than
//! raw sums, which keeps the learning rate independent of image size;
//! gradients use the same normalization.
//!
//! Per training iteration: sample a source batch; after the source-only
//! pretraining phase also sample targets, pseudo-label them with the teacher
//! on NON-augmented images, mix, photometrically augment the mixed image
//! only, and add the weighted term. One gradient step (linear warmup), then
//! the teacher follows the student by EMA. The teacher is hard-copied from
//! the student once at the pretraining boundary so its first pseudo-labels
//! come from a source-trained model.

use crate::error::{Error, Result};
use crate::features::{featurize, FeatureMap, FEATURE_DIM};
use crate::mixing::{
    classmix_single, cutmix_single, post_augment, scmix, MixParams, PostAugmentParams,
    TargetTriple,
};
use crate::rng::{Purpose, StreamKey};
use crate::synth::{CompoundBenchmark, SceneSample};
use crate::tensor::{one_hot_encode, ImageTensor, OneHotLabel, ProbMap, WeightMap, IGNORE};

/// Clamp inside logs so confident mispredictions stay finite.
pub const PROB_EPSILON: f64 = 1e-7;

/// Linear softmax segmentation head: logits = W * phi(p) + b.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearSegModel {
    classes: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl LinearSegModel {
    /// Zero initialization: uniform prediction everywhere.
    pub fn zeros(classes: usize) -> Self {
        LinearSegModel {
            classes,
            weights: vec![0.0; classes * FEATURE_DIM],
            bias: vec![0.0; classes],
        }
    }

    pub fn from_parts(classes: usize, weights: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if weights.len() != classes * FEATURE_DIM || bias.len() != classes {
            return Err(Error::InvalidArgument(format!(
                "model parameter lengths {}/{} do not match {} classes x {} features",
                weights.len(),
                bias.len(),
                classes,
                FEATURE_DIM
            )));
        }
        let m = LinearSegModel {
            classes,
            weights,
            bias,
        };
        m.check_finite()?;
        Ok(m)
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.bias
    }

    fn check_finite(&self) -> Result<()> {
        if self.weights.iter().chain(self.bias.iter()).all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::InvalidArgument(
                "model parameters are not finite".into(),
            ))
        }
    }
}

/// Per-pixel softmax probabilities of the model on precomputed features.
pub fn predict_probs(model: &LinearSegModel, features: &FeatureMap) -> Result<ProbMap> {
    model.check_finite()?;
    let c = model.classes;
    let mut data = Vec::with_capacity(features.pixels() * c);
    let mut logits = vec![0f64; c];
    for p in 0..features.pixels() {
        let phi = features.row(p);
        for (k, l) in logits.iter_mut().enumerate() {
            let row = &model.weights[k * FEATURE_DIM..(k + 1) * FEATURE_DIM];
            let mut acc = model.bias[k];
            for (w, f) in row.iter().zip(phi.iter()) {
                acc += w * *f as f64;
            }
            *l = acc;
        }
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for l in logits.iter_mut() {
            *l = (*l - max).exp();
            sum += *l;
        }
        for l in &logits {
            data.push(l / sum);
        }
    }
    ProbMap::new(features.height(), features.width(), c, data)
}

/// Featurize-then-predict convenience.
pub fn predict_probs_image(model: &LinearSegModel, image: &ImageTensor) -> Result<ProbMap> {
    predict_probs(model, &featurize(image))
}

/// One-hot at the per-pixel argmax; ties break toward the lowest class.
pub fn pseudo_label(probs: &ProbMap) -> OneHotLabel {
    let c = probs.classes();
    let pixels = probs.height() * probs.width();
    let mut data = vec![0.0f32; pixels * c];
    for p in 0..pixels {
        let row = probs.row(p);
        let mut best = 0usize;
        for (k, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = k;
            }
        }
        data[p * c + best] = 1.0;
    }
    OneHotLabel::new(probs.height(), probs.width(), c, data)
        .expect("argmax rows are one-hot by construction")
}

/// Fraction of pixels whose max-class probability strictly exceeds tau.
pub fn confidence_weight(probs: &ProbMap, tau: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::InvalidArgument(format!(
            "confidence threshold {} outside [0, 1]",
            tau
        )));
    }
    let pixels = probs.height() * probs.width();
    let mut count = 0usize;
    for p in 0..pixels {
        let max = probs.row(p).iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if max > tau {
            count += 1;
        }
    }
    Ok(count as f64 / pixels as f64)
}

fn check_probs_labels(probs: &ProbMap, labels: &OneHotLabel) -> Result<()> {
    if probs.height() != labels.height()
        || probs.width() != labels.width()
        || probs.classes() != labels.classes()
    {
        return Err(Error::ShapeMismatch {
            expected: (probs.height(), probs.width()),
            got: (labels.height(), labels.width()),
        });
    }
    Ok(())
}

fn weighted_ce(probs: &ProbMap, labels: &OneHotLabel, weights: Option<&WeightMap>) -> f64 {
    let c = probs.classes();
    let pixels = probs.height() * probs.width();
    let mut sum = 0.0f64;
    let mut valid = 0usize;
    for p in 0..pixels {
        let y = labels.row(p);
        let pr = probs.row(p);
        let mut term = 0.0f64;
        let mut any = false;
        for k in 0..c {
            if y[k] != 0.0 {
                term -= (y[k] as f64) * pr[k].max(PROB_EPSILON).ln();
                any = true;
            }
        }
        if any {
            valid += 1;
            let w = weights.map_or(1.0, |wm| wm.data()[p] as f64);
            sum += w * term;
        }
    }
    if valid == 0 {
        0.0
    } else {
        sum / valid as f64
    }
}

/// Cross-entropy, mean over valid pixels; IGNORE (all-zero) rows excluded.
pub fn ce_loss(probs: &ProbMap, labels: &OneHotLabel) -> Result<f64> {
    check_probs_labels(probs, labels)?;
    Ok(weighted_ce(probs, labels, None))
}

/// Weighted cross-entropy: each pixel term scaled by its weight.
pub fn wce_loss(probs: &ProbMap, labels: &OneHotLabel, weights: &WeightMap) -> Result<f64> {
    check_probs_labels(probs, labels)?;
    if weights.height() != probs.height() || weights.width() != probs.width() {
        return Err(Error::ShapeMismatch {
            expected: (probs.height(), probs.width()),
            got: (weights.height(), weights.width()),
        });
    }
    Ok(weighted_ce(probs, labels, Some(weights)))
}

/// One batch element. `weights: None` means the all-one map.
pub struct BatchItem<'a> {
    pub features: &'a FeatureMap,
    pub labels: &'a OneHotLabel,
    pub weights: Option<&'a WeightMap>,
}

/// Loss value and parameter gradient of one weighted-CE batch.
#[derive(Clone, Debug)]
pub struct BatchGradient {
    pub loss: f64,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl BatchGradient {
    pub fn zeros(classes: usize) -> Self {
        BatchGradient {
            loss: 0.0,
            weights: vec![0.0; classes * FEATURE_DIM],
            bias: vec![0.0; classes],
        }
    }

    pub fn add(&mut self, other: &BatchGradient) {
        self.loss += other.loss;
        for (a, b) in self.weights.iter_mut().zip(other.weights.iter()) {
            *a += b;
        }
        for (a, b) in self.bias.iter_mut().zip(other.bias.iter()) {
            *a += b;
        }
    }
}

/// Analytic gradient of the mean weighted CE over the batch: per valid pixel
/// `w * (p - y) * phi`, normalized by the batch's valid-pixel count.
pub fn loss_gradient(model: &LinearSegModel, batch: &[BatchItem]) -> Result<BatchGradient> {
    let c = model.classes;
    let mut grad = BatchGradient::zeros(c);
    let mut valid_total = 0usize;
    let mut loss_sum = 0.0f64;
    for item in batch {
        if item.labels.classes() != c {
            return Err(Error::InvalidArgument(format!(
                "batch item has {} classes, model has {}",
                item.labels.classes(),
                c
            )));
        }
        if item.features.height() != item.labels.height()
            || item.features.width() != item.labels.width()
        {
            return Err(Error::ShapeMismatch {
                expected: (item.features.height(), item.features.width()),
                got: (item.labels.height(), item.labels.width()),
            });
        }
        let probs = predict_probs(model, item.features)?;
        for p in 0..item.features.pixels() {
            let y = item.labels.row(p);
            let mut any = false;
            let mut term = 0.0f64;
            let pr = probs.row(p);
            for k in 0..c {
                if y[k] != 0.0 {
                    term -= (y[k] as f64) * pr[k].max(PROB_EPSILON).ln();
                    any = true;
                }
            }
            if !any {
                continue;
            }
            valid_total += 1;
            let w = item.weights.map_or(1.0, |wm| wm.data()[p] as f64);
            loss_sum += w * term;
            let phi = item.features.row(p);
            for k in 0..c {
                let delta = w * (pr[k] - y[k] as f64);
                grad.bias[k] += delta;
                let row = &mut grad.weights[k * FEATURE_DIM..(k + 1) * FEATURE_DIM];
                for (g, f) in row.iter_mut().zip(phi.iter()) {
                    *g += delta * *f as f64;
                }
            }
        }
    }
    if valid_total > 0 {
        let inv = 1.0 / valid_total as f64;
        grad.loss = loss_sum * inv;
        for g in grad.weights.iter_mut() {
            *g *= inv;
        }
        for g in grad.bias.iter_mut() {
            *g *= inv;
        }
    }
    if !grad.loss.is_finite()
        || grad.weights.iter().chain(grad.bias.iter()).any(|g| !g.is_finite())
    {
        return Err(Error::InvalidArgument(
            "non-finite gradient encountered".into(),
        ));
    }
    Ok(grad)
}

/// Plain gradient-descent step.
pub fn apply_step(model: &mut LinearSegModel, grad: &BatchGradient, lr: f64) {
    for (w, g) in model.weights.iter_mut().zip(grad.weights.iter()) {
        *w -= lr * g;
    }
    for (b, g) in model.bias.iter_mut().zip(grad.bias.iter()) {
        *b -= lr * g;
    }
}

/// EMA update: teacher <- m * teacher + (1 - m) * student, elementwise.
pub fn ema_update(teacher: &mut LinearSegModel, student: &LinearSegModel, m: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&m) {
        return Err(Error::InvalidArgument(format!(
            "EMA momentum {} outside [0, 1]",
            m
        )));
    }
    if teacher.classes != student.classes {
        return Err(Error::ShapeMismatch {
            expected: (teacher.classes, FEATURE_DIM),
            got: (student.classes, FEATURE_DIM),
        });
    }
    for (t, s) in teacher.weights.iter_mut().zip(student.weights.iter()) {
        *t = m * *t + (1.0 - m) * s;
    }
    for (t, s) in teacher.bias.iter_mut().zip(student.bias.iter()) {
        *t = m * *t + (1.0 - m) * s;
    }
    Ok(())
}

/// Training method selector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Method {
    SourceOnly,
    MeanTeacherOnly,
    CutmixSt,
    ClassmixSt,
    ScmixSt,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::SourceOnly => "source-only",
            Method::MeanTeacherOnly => "mt-only",
            Method::CutmixSt => "cutmix-st",
            Method::ClassmixSt => "classmix-st",
            Method::ScmixSt => "scmix-st",
        }
    }

    pub fn parse(s: &str) -> Result<Method> {
        match s {
            "source-only" => Ok(Method::SourceOnly),
            "mt-only" => Ok(Method::MeanTeacherOnly),
            "cutmix-st" => Ok(Method::CutmixSt),
            "classmix-st" => Ok(Method::ClassmixSt),
            "scmix-st" => Ok(Method::ScmixSt),
            other => Err(Error::Config(format!(
                "unknown method '{}': expected source-only, mt-only, cutmix-st, \
                 classmix-st, or scmix-st",
                other
            ))),
        }
    }

    pub fn all() -> [Method; 5] {
        [
            Method::SourceOnly,
            Method::MeanTeacherOnly,
            Method::CutmixSt,
            Method::ClassmixSt,
            Method::ScmixSt,
        ]
    }
}

/// Trainer configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub iterations: usize,
    pub warmup: usize,
    /// Source-only iterations before self-training starts (counted within
    /// `iterations`).
    pub pretrain: usize,
    pub batch_size: usize,
    pub momentum: f64,
    pub tau: f64,
    /// Evaluate mIoU every this many iterations (0 disables periodic eval).
    pub eval_every: usize,
    /// The returned student is the Polyak average of the final this-many
    /// iterations (0 returns the last iterate). Plain SGD with a fixed
    /// learning rate orbits its attractor rather than settling; averaging
    /// the tail hands back the orbit center instead of a random point on
    /// the orbit.
    pub tail_average: usize,
    pub seed: u64,
    pub method: Method,
    pub mix: MixParams,
    pub augment: PostAugmentParams,
    /// Record a fingerprint of every image the teacher pseudo-labels.
    pub trace_teacher_inputs: bool,
}

impl TrainConfig {
    pub fn default_desk() -> Self {
        TrainConfig {
            learning_rate: 0.1,
            iterations: 3000,
            warmup: 150,
            pretrain: 300,
            batch_size: 2,
            momentum: 0.999,
            tau: 0.968,
            eval_every: 500,
            tail_average: 500,
            seed: 1,
            method: Method::ScmixSt,
            mix: MixParams::default_params(),
            augment: PostAugmentParams::default_params(),
            trace_teacher_inputs: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!(
                "trainer.learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..=1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "trainer.momentum must satisfy 0 <= m <= 1, got {}",
                self.momentum
            )));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::Config(format!(
                "trainer.tau must satisfy 0 <= tau <= 1, got {}",
                self.tau
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("trainer.batch_size must be positive".into()));
        }
        self.mix.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }
}

/// One history record.
#[derive(Clone, Debug, PartialEq)]
pub struct HistoryRow {
    pub iteration: usize,
    pub loss_ce: f64,
    pub loss_wce: f64,
    pub miou_compound: Option<f64>,
    pub miou_open: Option<f64>,
}

/// Training history plus instrumentation.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct History {
    pub rows: Vec<HistoryRow>,
    /// Fingerprints of every image the teacher pseudo-labeled (only filled
    /// when tracing is on); tests match these against the raw target pool.
    pub teacher_input_fingerprints: Vec<u64>,
}

/// FNV-1a over the image's f32 bit patterns.
pub fn image_fingerprint(image: &ImageTensor) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for v in image.data() {
        for b in v.to_le_bytes() {
            hash ^= b as u64;
            hash = hash.wrapping_mul(0x0000_0100_0000_01B3);
        }
    }
    hash
}

/// Per-class IoU and mean.
#[derive(Clone, Debug, PartialEq)]
pub struct MiouReport {
    /// None for classes absent from both prediction and ground truth.
    pub per_class: Vec<Option<f64>>,
    pub mean: f64,
}

/// Accumulated IoU over a labeled split. IGNORE pixels are excluded; classes
/// absent from both prediction and ground truth are excluded from the mean.
pub fn evaluate_miou(model: &LinearSegModel, samples: &[&SceneSample]) -> Result<MiouReport> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("empty evaluation split".into()));
    }
    let c = model.classes;
    let mut tp = vec![0u64; c];
    let mut fp = vec![0u64; c];
    let mut fnn = vec![0u64; c];
    for sample in samples {
        sample.labels.check_classes(c)?;
        let probs = predict_probs_image(model, &sample.image)?;
        let pred = pseudo_label(&probs);
        for (p, &gt) in sample.labels.data().iter().enumerate() {
            if gt == IGNORE {
                continue;
            }
            let pr = pred.class_of(p).expect("prediction rows are one-hot") as usize;
            let gt = gt as usize;
            if pr == gt {
                tp[gt] += 1;
            } else {
                fp[pr] += 1;
                fnn[gt] += 1;
            }
        }
    }
    let mut per_class = Vec::with_capacity(c);
    let mut sum = 0.0;
    let mut counted = 0usize;
    for k in 0..c {
        let denom = tp[k] + fp[k] + fnn[k];
        if denom == 0 {
            per_class.push(None);
        } else {
            let iou = tp[k] as f64 / denom as f64;
            per_class.push(Some(iou));
            sum += iou;
            counted += 1;
        }
    }
    if counted == 0 {
        return Err(Error::InvalidArgument(
            "no class present in prediction or ground truth".into(),
        ));
    }
    Ok(MiouReport {
        per_class,
        mean: sum / counted as f64,
    })
}

/// Divergence guard: abort once total loss exceeds this multiple of the
/// initial loss.
const DIVERGENCE_FACTOR: f64 = 10.0;

/// Everything the training loop produces: the student, its EMA teacher
/// (equal to the student for source-only runs), and the history.
#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub student: LinearSegModel,
    pub teacher: LinearSegModel,
    pub history: History,
}

/// Runs the full training loop on a generated benchmark.
pub fn train(cfg: &TrainConfig, benchmark: &CompoundBenchmark) -> Result<TrainOutput> {
    cfg.validate()?;
    if benchmark.source.is_empty() {
        return Err(Error::Config("benchmark source split is empty".into()));
    }
    let classes = benchmark.classes;
    let needs_targets = cfg.method != Method::SourceOnly;
    let pool_images = benchmark.target_images();
    if needs_targets && pool_images.is_empty() {
        return Err(Error::Config("benchmark target pool is empty".into()));
    }

    // caches over the fixed pools: features of source and raw target images,
    // one-hot source labels
    let source_feats: Vec<FeatureMap> =
        benchmark.source.iter().map(|s| featurize(&s.image)).collect();
    let source_onehot: Vec<OneHotLabel> = benchmark
        .source
        .iter()
        .map(|s| one_hot_encode(&s.labels, classes))
        .collect::<Result<_>>()?;
    let pool_feats: Vec<FeatureMap> = pool_images.iter().map(|img| featurize(img)).collect();

    let compound_eval = benchmark.compound_eval_samples();
    let open_eval: Vec<&SceneSample> = benchmark.open.iter().collect();

    let mut student = LinearSegModel::zeros(classes);
    let mut teacher = student.clone();
    let mut history = History::default();
    let mut initial_loss: Option<f64> = None;
    let tail_start = cfg.iterations.saturating_sub(cfg.tail_average);
    let mut tail_weights = vec![0f64; classes * FEATURE_DIM];
    let mut tail_bias = vec![0f64; classes];
    let mut tail_count = 0usize;

    for t in 0..cfg.iterations {
        let iter_key = StreamKey::new(cfg.seed, t as u64);
        let mut sampler = iter_key.stream(Purpose::DataSampling);
        let self_training = needs_targets && t >= cfg.pretrain;

        let mut source_refs: Vec<BatchItem> = Vec::with_capacity(cfg.batch_size);
        // owned per-iteration mixed data; borrowed by batch items below
        let mut mixed_data: Vec<(FeatureMap, OneHotLabel, WeightMap)> = Vec::new();

        let mut source_indices = Vec::with_capacity(cfg.batch_size);
        for _ in 0..cfg.batch_size {
            let src = sampler.index(benchmark.source.len())?;
            source_indices.push(src);
            if !self_training {
                continue;
            }
            let n_targets = match cfg.method {
                Method::ScmixSt => cfg.mix.n_c,
                _ => 1,
            };
            let mut chosen = Vec::with_capacity(n_targets);
            for _ in 0..n_targets {
                chosen.push(sampler.index(pool_images.len())?);
            }
            let item_key = iter_key.derive(source_indices.len() as u64 - 1);
            // teacher pseudo-labels on raw pool features only
            let mut targets = Vec::with_capacity(n_targets);
            for &idx in &chosen {
                let probs = predict_probs(&teacher, &pool_feats[idx])?;
                let labels = pseudo_label(&probs);
                let conf = confidence_weight(&probs, cfg.tau)? as f32;
                if cfg.trace_teacher_inputs {
                    history
                        .teacher_input_fingerprints
                        .push(image_fingerprint(pool_images[idx]));
                }
                targets.push(TargetTriple::new(pool_images[idx].clone(), labels, conf)?);
            }
            let source_sample = &benchmark.source[src];
            let (image, labels, weights) = match cfg.method {
                Method::MeanTeacherOnly => {
                    let t0 = &targets[0];
                    let h = t0.image.height();
                    let w = t0.image.width();
                    (
                        t0.image.clone(),
                        t0.pseudo_labels.clone(),
                        WeightMap::constant(h, w, t0.confidence)?,
                    )
                }
                Method::CutmixSt => {
                    let mixed = cutmix_single(
                        &source_sample.image,
                        &source_sample.labels,
                        classes,
                        &targets[0],
                        item_key,
                    )?;
                    (mixed.image, mixed.labels, mixed.weights)
                }
                Method::ClassmixSt => {
                    let mixed = classmix_single(
                        &source_sample.image,
                        &source_sample.labels,
                        classes,
                        &targets[0],
                        item_key,
                    )?;
                    (mixed.image, mixed.labels, mixed.weights)
                }
                Method::ScmixSt => {
                    let mixed = scmix(
                        &source_sample.image,
                        &source_sample.labels,
                        classes,
                        &targets,
                        &cfg.mix,
                        item_key,
                    )?;
                    (mixed.image, mixed.labels, mixed.weights)
                }
                Method::SourceOnly => unreachable!(),
            };
            let augmented = post_augment(&image, &cfg.augment, item_key)?;
            mixed_data.push((featurize(&augmented), labels, weights));
        }
        for &src in &source_indices {
            source_refs.push(BatchItem {
                features: &source_feats[src],
                labels: &source_onehot[src],
                weights: None,
            });
        }
        let mixed_refs: Vec<BatchItem> = mixed_data
            .iter()
            .map(|(f, l, w)| BatchItem {
                features: f,
                labels: l,
                weights: Some(w),
            })
            .collect();

        let source_grad = loss_gradient(&student, &source_refs)?;
        let loss_ce = source_grad.loss;
        let mut total_grad = source_grad;
        let loss_wce = if mixed_refs.is_empty() {
            0.0
        } else {
            let mixed_grad = loss_gradient(&student, &mixed_refs)?;
            let l = mixed_grad.loss;
            total_grad.add(&mixed_grad);
            l
        };

        let total_loss = loss_ce + loss_wce;
        if !total_loss.is_finite() {
            return Err(Error::TrainDiverged {
                iteration: t,
                loss: total_loss,
                initial: initial_loss.unwrap_or(f64::NAN),
            });
        }
        let initial = *initial_loss.get_or_insert(total_loss);
        if initial > 0.0 && total_loss > DIVERGENCE_FACTOR * initial {
            return Err(Error::TrainDiverged {
                iteration: t,
                loss: total_loss,
                initial,
            });
        }

        let lr = if cfg.warmup > 0 {
            cfg.learning_rate * (((t + 1) as f64 / cfg.warmup as f64).min(1.0))
        } else {
            cfg.learning_rate
        };
        apply_step(&mut student, &total_grad, lr);

        if needs_targets {
            if t + 1 == cfg.pretrain {
                // source-trained teacher at the self-training boundary
                teacher = student.clone();
            } else if t + 1 > cfg.pretrain {
                ema_update(&mut teacher, &student, cfg.momentum)?;
            }
        }

        if cfg.tail_average > 0 && t >= tail_start {
            for (acc, w) in tail_weights.iter_mut().zip(student.weights()) {
                *acc += w;
            }
            for (acc, b) in tail_bias.iter_mut().zip(student.bias()) {
                *acc += b;
            }
            tail_count += 1;
        }

        let eval_now = cfg.eval_every > 0
            && ((t + 1) % cfg.eval_every == 0 || t + 1 == cfg.iterations);
        let (miou_compound, miou_open) = if eval_now {
            (
                Some(evaluate_miou(&student, &compound_eval)?.mean),
                Some(evaluate_miou(&student, &open_eval)?.mean),
            )
        } else {
            (None, None)
        };
        history.rows.push(HistoryRow {
            iteration: t,
            loss_ce,
            loss_wce,
            miou_compound,
            miou_open,
        });
    }

    if tail_count > 0 {
        let inv = 1.0 / tail_count as f64;
        for (w, acc) in student.weights_mut().iter_mut().zip(tail_weights.iter()) {
            *w = acc * inv;
        }
        for (b, acc) in student.bias_mut().iter_mut().zip(tail_bias.iter()) {
            *b = acc * inv;
        }
    }
    let teacher = if needs_targets && cfg.iterations > cfg.pretrain {
        teacher
    } else {
        student.clone()
    };
    Ok(TrainOutput {
        student,
        teacher,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;

    fn random_image(seed: u64, h: usize, w: usize) -> ImageTensor {
        let mut s = RngStream::new(seed, 0, Purpose::DataSampling);
        let data: Vec<f32> = (0..h * w * 3).map(|_| s.uniform_f64() as f32).collect();
        ImageTensor::new(h, w, data).unwrap()
    }

    fn random_probs(seed: u64, h: usize, w: usize, c: usize) -> ProbMap {
        let mut s = RngStream::new(seed, 0, Purpose::DataSampling);
        let mut data = Vec::with_capacity(h * w * c);
        for _ in 0..h * w {
            let raw: Vec<f64> = (0..c).map(|_| s.uniform_f64() + 1e-3).collect();
            let sum: f64 = raw.iter().sum();
            data.extend(raw.iter().map(|v| v / sum));
        }
        ProbMap::new(h, w, c, data).unwrap()
    }

    fn random_model(seed: u64, c: usize) -> LinearSegModel {
        let mut s = RngStream::new(seed, 0, Purpose::DataSampling);
        let weights: Vec<f64> = (0..c * FEATURE_DIM)
            .map(|_| s.range_f64(-1.0, 1.0))
            .collect();
        let bias: Vec<f64> = (0..c).map(|_| s.range_f64(-0.5, 0.5)).collect();
        LinearSegModel::from_parts(c, weights, bias).unwrap()
    }

    #[test]
    fn zero_model_predicts_uniformly() {
        let model = LinearSegModel::zeros(4);
        let probs = predict_probs_image(&model, &random_image(1, 4, 4)).unwrap();
        for p in 0..16 {
            for &v in probs.row(p) {
                assert!((v - 0.25).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn probability_rows_normalize_on_random_inputs() {
        let model = random_model(2, 5);
        let probs = predict_probs_image(&model, &random_image(3, 6, 6)).unwrap();
        for p in 0..36 {
            let sum: f64 = probs.row(p).iter().sum();
            assert!((sum - 1.0).abs() < 1e-6);
        }
    }

    // scalar softmax by hand: logits (1, 0) -> (e/(e+1), 1/(e+1))
    #[test]
    fn softmax_matches_hand_computation() {
        // constant image of zeros makes every feature 0 except nothing;
        // bias alone sets the logits
        let image = ImageTensor::filled(1, 1, [0.0, 0.0, 0.0]).unwrap();
        let model = LinearSegModel::from_parts(
            2,
            vec![0.0; 2 * FEATURE_DIM],
            vec![1.0, 0.0],
        )
        .unwrap();
        let probs = predict_probs_image(&model, &image).unwrap();
        let e = std::f64::consts::E;
        assert!((probs.row(0)[0] - e / (e + 1.0)).abs() < 1e-12);
        assert!((probs.row(0)[1] - 1.0 / (e + 1.0)).abs() < 1e-12);
    }

    #[test]
    fn pseudo_label_picks_argmax() {
        let probs = ProbMap::new(1, 1, 2, vec![0.2, 0.8]).unwrap();
        let oh = pseudo_label(&probs);
        assert_eq!(oh.data(), &[0.0, 1.0]);
    }

    #[test]
    fn pseudo_label_ties_break_low() {
        let probs = ProbMap::new(1, 1, 2, vec![0.5, 0.5]).unwrap();
        let oh = pseudo_label(&probs);
        assert_eq!(oh.data(), &[1.0, 0.0]);
    }

    // exhaustive argmax oracle on a random tensor
    #[test]
    fn pseudo_label_matches_brute_force_argmax() {
        let probs = random_probs(5, 16, 16, 4);
        let oh = pseudo_label(&probs);
        for p in 0..256 {
            let row = probs.row(p);
            let mut best = 0usize;
            let mut best_v = f64::NEG_INFINITY;
            for (k, &v) in row.iter().enumerate() {
                if v > best_v {
                    best_v = v;
                    best = k;
                }
            }
            assert_eq!(oh.class_of(p), Some(best as u16));
        }
    }

    #[test]
    fn confidence_weight_extremes() {
        let all_high = ProbMap::new(1, 2, 2, vec![0.99, 0.01, 0.995, 0.005]).unwrap();
        assert_eq!(confidence_weight(&all_high, 0.968).unwrap(), 1.0);
        let all_low = ProbMap::new(1, 2, 2, vec![0.6, 0.4, 0.55, 0.45]).unwrap();
        assert_eq!(confidence_weight(&all_low, 0.968).unwrap(), 0.0);
    }

    // manual count: maxima (0.99, 0.5, 0.97, 0.9), tau = 0.968 -> 2 of 4
    #[test]
    fn confidence_weight_manual_count() {
        let probs = ProbMap::new(
            2,
            2,
            2,
            vec![0.99, 0.01, 0.5, 0.5, 0.97, 0.03, 0.9, 0.1],
        )
        .unwrap();
        assert_eq!(confidence_weight(&probs, 0.968).unwrap(), 0.5);
    }

    #[test]
    fn ce_loss_is_zero_on_exact_prediction() {
        let labels = OneHotLabel::new(1, 2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let probs = ProbMap::new(1, 2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let loss = ce_loss(&probs, &labels).unwrap();
        assert!(loss.abs() < 1e-12);
    }

    #[test]
    fn ce_loss_uniform_is_ln2() {
        let labels = OneHotLabel::new(2, 2, 2, vec![1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0])
            .unwrap();
        let probs = ProbMap::new(2, 2, 2, vec![0.5; 8]).unwrap();
        let loss = ce_loss(&probs, &labels).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
    }

    // brute-force scalar-loop oracle
    #[test]
    fn losses_match_scalar_loop_oracle() {
        let mut s = RngStream::new(8, 0, Purpose::DataSampling);
        let probs = random_probs(9, 6, 6, 3);
        let label_data: Vec<u16> = (0..36)
            .map(|_| {
                let v = s.uniform_int(0, 3).unwrap();
                if v == 3 {
                    IGNORE
                } else {
                    v as u16
                }
            })
            .collect();
        let labels =
            one_hot_encode(&crate::tensor::LabelMap::new(6, 6, label_data.clone()).unwrap(), 3)
                .unwrap();
        let wdata: Vec<f32> = (0..36).map(|_| s.uniform_f64() as f32).collect();
        let weights = WeightMap::new(6, 6, wdata.clone()).unwrap();

        let mut ce_sum = 0.0f64;
        let mut wce_sum = 0.0f64;
        let mut valid = 0usize;
        for p in 0..36 {
            if label_data[p] == IGNORE {
                continue;
            }
            valid += 1;
            let term = -(probs.row(p)[label_data[p] as usize].max(1e-7)).ln();
            ce_sum += term;
            wce_sum += wdata[p] as f64 * term;
        }
        let ce_expect = ce_sum / valid as f64;
        let wce_expect = wce_sum / valid as f64;
        assert!((ce_loss(&probs, &labels).unwrap() - ce_expect).abs() < 1e-6);
        assert!((wce_loss(&probs, &labels, &weights).unwrap() - wce_expect).abs() < 1e-6);
    }

    #[test]
    fn wce_with_zero_weights_is_zero() {
        let probs = random_probs(10, 4, 4, 2);
        let labels = OneHotLabel::new(4, 4, 2, {
            let mut d = vec![0.0; 32];
            for p in 0..16 {
                d[p * 2] = 1.0;
            }
            d
        })
        .unwrap();
        let weights = WeightMap::new(4, 4, vec![0.0; 16]).unwrap();
        assert_eq!(wce_loss(&probs, &labels, &weights).unwrap(), 0.0);
    }

    #[test]
    fn wce_with_unit_weights_equals_ce_exactly() {
        let probs = random_probs(11, 5, 5, 3);
        let mut s = RngStream::new(12, 0, Purpose::DataSampling);
        let label_data: Vec<u16> =
            (0..25).map(|_| s.uniform_int(0, 2).unwrap() as u16).collect();
        let labels =
            one_hot_encode(&crate::tensor::LabelMap::new(5, 5, label_data).unwrap(), 3).unwrap();
        let ones = WeightMap::ones(5, 5).unwrap();
        assert_eq!(
            wce_loss(&probs, &labels, &ones).unwrap(),
            ce_loss(&probs, &labels).unwrap()
        );
    }

    #[test]
    fn zero_learning_rate_leaves_model_unchanged() {
        let model = random_model(13, 3);
        let image = random_image(14, 6, 6);
        let feats = featurize(&image);
        let mut s = RngStream::new(15, 0, Purpose::DataSampling);
        let label_data: Vec<u16> =
            (0..36).map(|_| s.uniform_int(0, 2).unwrap() as u16).collect();
        let labels =
            one_hot_encode(&crate::tensor::LabelMap::new(6, 6, label_data).unwrap(), 3).unwrap();
        let grad = loss_gradient(
            &model,
            &[BatchItem {
                features: &feats,
                labels: &labels,
                weights: None,
            }],
        )
        .unwrap();
        let mut stepped = model.clone();
        apply_step(&mut stepped, &grad, 0.0);
        assert_eq!(stepped, model);
    }

    // central finite differences, h = 1e-4, on the weighted batch loss
    fn finite_difference_check(seed: u64) -> f64 {
        let c = 3;
        let model = random_model(seed, c);
        let image = random_image(seed + 50, 6, 6);
        let feats = featurize(&image);
        let mut s = RngStream::new(seed + 100, 0, Purpose::DataSampling);
        let label_data: Vec<u16> = (0..36)
            .map(|_| {
                let v = s.uniform_int(0, c as i64).unwrap();
                if v == c as i64 {
                    IGNORE
                } else {
                    v as u16
                }
            })
            .collect();
        let labels =
            one_hot_encode(&crate::tensor::LabelMap::new(6, 6, label_data).unwrap(), c).unwrap();
        let wdata: Vec<f32> = (0..36).map(|_| s.uniform_f64() as f32).collect();
        let weights = WeightMap::new(6, 6, wdata).unwrap();
        let batch = |m: &LinearSegModel| -> f64 {
            let probs = predict_probs(m, &feats).unwrap();
            wce_loss(&probs, &labels, &weights).unwrap()
        };
        let grad = loss_gradient(
            &model,
            &[BatchItem {
                features: &feats,
                labels: &labels,
                weights: Some(&weights),
            }],
        )
        .unwrap();
        let h = 1e-4;
        let mut max_rel = 0.0f64;
        for idx in 0..c * FEATURE_DIM + c {
            let mut plus = model.clone();
            let mut minus = model.clone();
            if idx < c * FEATURE_DIM {
                plus.weights_mut()[idx] += h;
                minus.weights_mut()[idx] -= h;
            } else {
                plus.bias_mut()[idx - c * FEATURE_DIM] += h;
                minus.bias_mut()[idx - c * FEATURE_DIM] -= h;
            }
            let fd = (batch(&plus) - batch(&minus)) / (2.0 * h);
            let analytic = if idx < c * FEATURE_DIM {
                grad.weights[idx]
            } else {
                grad.bias[idx - c * FEATURE_DIM]
            };
            let rel = (analytic - fd).abs() / fd.abs().max(analytic.abs()).max(1e-8);
            max_rel = max_rel.max(rel);
        }
        max_rel
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        for seed in 0..5 {
            let rel = finite_difference_check(seed);
            assert!(rel <= 1e-4, "seed {}: max relative error {}", seed, rel);
        }
    }

    // descent run: repeated steps on one fixed batch strictly non-increase
    #[test]
    fn repeated_steps_decrease_loss() {
        let mut model = random_model(30, 3);
        let image = random_image(31, 6, 6);
        let feats = featurize(&image);
        let mut s = RngStream::new(32, 0, Purpose::DataSampling);
        let label_data: Vec<u16> =
            (0..36).map(|_| s.uniform_int(0, 2).unwrap() as u16).collect();
        let labels =
            one_hot_encode(&crate::tensor::LabelMap::new(6, 6, label_data).unwrap(), 3).unwrap();
        let mut last = f64::INFINITY;
        for step in 0..50 {
            let grad = loss_gradient(
                &model,
                &[BatchItem {
                    features: &feats,
                    labels: &labels,
                    weights: None,
                }],
            )
            .unwrap();
            if step > 0 {
                assert!(
                    grad.loss <= last + 1e-12,
                    "loss rose at step {}: {} > {}",
                    step,
                    grad.loss,
                    last
                );
            }
            last = grad.loss;
            apply_step(&mut model, &grad, 0.1);
        }
    }

    #[test]
    fn ema_extremes() {
        let student = random_model(40, 3);
        let mut teacher = LinearSegModel::zeros(3);
        let before = teacher.clone();
        ema_update(&mut teacher, &student, 1.0).unwrap();
        assert_eq!(teacher, before);
        ema_update(&mut teacher, &student, 0.0).unwrap();
        assert_eq!(teacher, student);
    }

    // closed-form geometric series: theta_te after t steps toward 1 is
    // 1 - 0.999^t
    #[test]
    fn ema_matches_closed_form() {
        let mut ones = LinearSegModel::zeros(2);
        for w in ones.weights_mut() {
            *w = 1.0;
        }
        for b in ones.bias_mut() {
            *b = 1.0;
        }
        for &t in &[1usize, 10, 100] {
            let mut teacher = LinearSegModel::zeros(2);
            for _ in 0..t {
                ema_update(&mut teacher, &ones, 0.999).unwrap();
            }
            let expect = 1.0 - 0.999f64.powi(t as i32);
            for &w in teacher.weights() {
                assert!((w - expect).abs() < 1e-9, "t={}: {} vs {}", t, w, expect);
            }
        }
    }

    #[test]
    fn ema_stays_between_teacher_and_student() {
        let student = random_model(41, 3);
        let mut teacher = random_model(42, 3);
        let before = teacher.clone();
        ema_update(&mut teacher, &student, 0.7).unwrap();
        for i in 0..teacher.weights().len() {
            let lo = before.weights()[i].min(student.weights()[i]);
            let hi = before.weights()[i].max(student.weights()[i]);
            assert!(teacher.weights()[i] >= lo - 1e-12 && teacher.weights()[i] <= hi + 1e-12);
        }
    }

    #[test]
    fn miou_is_one_on_perfect_predictions() {
        // train nothing; just craft a sample whose label equals the
        // zero-model argmax (class 0 everywhere due to tie-break)
        let image = ImageTensor::filled(4, 4, [0.5, 0.5, 0.5]).unwrap();
        let labels = crate::tensor::LabelMap::filled(4, 4, 0).unwrap();
        let sample = SceneSample {
            image,
            labels,
            domain: crate::synth::DomainId::Source,
        };
        let model = LinearSegModel::zeros(3);
        let report = evaluate_miou(&model, &[&sample]).unwrap();
        assert_eq!(report.mean, 1.0);
        assert_eq!(report.per_class[0], Some(1.0));
        assert_eq!(report.per_class[1], None);
    }

    // manual confusion-matrix count: all pixels predicted 0 on half-0 /
    // half-1 ground truth -> IoU (0.5, 0.0), mean 0.25
    #[test]
    fn miou_manual_confusion_count() {
        let image = ImageTensor::filled(2, 2, [0.5, 0.5, 0.5]).unwrap();
        let labels = crate::tensor::LabelMap::new(2, 2, vec![0, 0, 1, 1]).unwrap();
        let sample = SceneSample {
            image,
            labels,
            domain: crate::synth::DomainId::Source,
        };
        let model = LinearSegModel::zeros(2); // predicts class 0 everywhere
        let report = evaluate_miou(&model, &[&sample]).unwrap();
        assert_eq!(report.per_class, vec![Some(0.5), Some(0.0)]);
        assert!((report.mean - 0.25).abs() < 1e-12);
    }

    #[test]
    fn miou_is_order_invariant() {
        let mk = |seed| SceneSample {
            image: random_image(seed, 6, 6),
            labels: crate::tensor::LabelMap::new(
                6,
                6,
                {
                    let mut s = RngStream::new(seed + 1, 0, Purpose::DataSampling);
                    (0..36).map(|_| s.uniform_int(0, 2).unwrap() as u16).collect()
                },
            )
            .unwrap(),
            domain: crate::synth::DomainId::Source,
        };
        let a = mk(60);
        let b = mk(61);
        let model = random_model(62, 3);
        let r1 = evaluate_miou(&model, &[&a, &b]).unwrap();
        let r2 = evaluate_miou(&model, &[&b, &a]).unwrap();
        assert_eq!(r1, r2);
    }
}
