//! Class weighting, the weighted cross-entropy loss, SGD with momentum and
//! the training loop.

use std::io;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{images_to_tensor, SampleRecord};
use crate::error::{Error, Result};
use crate::mask::{LabelMask, EAR};
use crate::network::{backward, forward, Gradients, NetworkParams, NetworkSpec};
use crate::ops::Mode;
use crate::tensor::{Scalar, Shape, Tensor};
use crate::derive_seed;

/// Floor applied inside the logarithm of the loss.
pub const LOG_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub max_iterations: usize,
    pub batch_size: usize,
    pub log_every: usize,
    pub seed: u64,
    /// Median-frequency class weights when true, unit weights otherwise.
    pub class_balance: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            momentum: 0.9,
            weight_decay: 0.005,
            max_iterations: 10_000,
            batch_size: 4,
            log_every: 20,
            seed: 0,
            class_balance: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be > 0, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must be in [0, 1), got {}", self.momentum));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight_decay must be ≥ 0, got {}", self.weight_decay));
        }
        if self.log_every == 0 {
            return bad("log_every must be ≥ 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be ≥ 1".into());
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassWeights {
    pub non_ear: f64,
    pub ear: f64,
}

impl ClassWeights {
    pub const UNIT: ClassWeights = ClassWeights { non_ear: 1.0, ear: 1.0 };

    pub fn of(&self, class: u8) -> f64 {
        if class == EAR {
            self.ear
        } else {
            self.non_ear
        }
    }
}

/// Pixel frequency of each class, counted only over images containing it.
pub fn class_frequencies<'a>(masks: impl IntoIterator<Item = &'a LabelMask>) -> Result<(f64, f64)> {
    // (class pixels, pixels of images containing the class)
    let mut non_ear = (0u64, 0u64);
    let mut ear = (0u64, 0u64);
    let mut any = false;
    for m in masks {
        any = true;
        let total = m.len() as u64;
        let e = m.ear_count() as u64;
        if e > 0 {
            ear.0 += e;
            ear.1 += total;
        }
        if e < total {
            non_ear.0 += total - e;
            non_ear.1 += total;
        }
    }
    if !any {
        return Err(Error::EmptyDataset);
    }
    if ear.1 == 0 {
        return Err(Error::ClassAbsent("ear"));
    }
    if non_ear.1 == 0 {
        return Err(Error::ClassAbsent("non-ear"));
    }
    Ok((non_ear.0 as f64 / non_ear.1 as f64, ear.0 as f64 / ear.1 as f64))
}

/// Median-frequency balancing: `weight(c) = median(freqs) / freq(c)`. With
/// two classes the median is the mean of the two frequencies.
pub fn median_frequency_weights<'a>(masks: impl IntoIterator<Item = &'a LabelMask>) -> Result<ClassWeights> {
    let (f_non, f_ear) = class_frequencies(masks)?;
    let median = 0.5 * (f_non + f_ear);
    Ok(ClassWeights {
        non_ear: median / f_non,
        ear: median / f_ear,
    })
}

fn check_targets<T: Scalar>(probs: &Tensor<T>, targets: &[&LabelMask], op: &'static str) -> Result<()> {
    let s = probs.shape();
    if s.c != 2 || s.n != targets.len() {
        return Err(Error::shape(
            op,
            format!("probabilities {s} for {} target masks", targets.len()),
        ));
    }
    if let Some(t) = targets.iter().find(|t| (t.width(), t.height()) != (s.w, s.h)) {
        return Err(Error::shape(
            op,
            format!("target is {}×{} but probabilities are {}×{}", t.width(), t.height(), s.w, s.h),
        ));
    }
    Ok(())
}

/// `−(1/N) Σ weight(target)·ln p(target)` over all N pixels of the batch,
/// with its gradient taken with respect to the pre-softmax logits.
pub fn weighted_cross_entropy<T: Scalar>(
    probs: &Tensor<T>,
    targets: &[&LabelMask],
    weights: ClassWeights,
) -> Result<(f64, Tensor<T>)> {
    check_targets(probs, targets, "weighted_cross_entropy")?;
    let s = probs.shape();
    let hw = s.plane();
    let inv_n = 1.0 / (s.n * hw) as f64;
    let mut grad = Tensor::zeros(s);
    let mut loss = 0.0f64;
    for (n, target) in targets.iter().enumerate() {
        let p = probs.item(n);
        let g = grad.item_mut(n);
        for (i, &t) in target.data().iter().enumerate() {
            let w = weights.of(t);
            let pt = p[t as usize * hw + i].to_f64().unwrap();
            loss -= w * pt.max(LOG_FLOOR).ln();
            let scale = T::lit(w * inv_n);
            for c in 0..2 {
                let delta = if c == t as usize { T::one() } else { T::zero() };
                g[c * hw + i] = scale * (p[c * hw + i] - delta);
            }
        }
    }
    Ok((loss * inv_n, grad))
}

/// Fraction of pixels whose thresholded prediction (`p(ear) > 0.5`) matches.
pub fn pixel_accuracy<T: Scalar>(probs: &Tensor<T>, targets: &[&LabelMask]) -> Result<f64> {
    check_targets(probs, targets, "pixel_accuracy")?;
    let hw = probs.shape().plane();
    let half = T::lit(0.5);
    let mut hits = 0usize;
    for (n, target) in targets.iter().enumerate() {
        let ear = &probs.item(n)[hw..];
        hits += target
            .data()
            .iter()
            .zip(ear)
            .filter(|(&t, &p)| (p > half) == (t == EAR))
            .count();
    }
    Ok(hits as f64 / (targets.len() * hw) as f64)
}

/// One momentum step: `v ← μv − η(g + λw)`, `w ← w + v`. Weight decay
/// touches convolution weights only. Nothing is updated when any gradient is
/// non-finite.
pub fn sgd_step<T: Scalar>(
    params: &mut NetworkParams<T>,
    grads: &Gradients<T>,
    velocity: &mut Gradients<T>,
    config: &TrainConfig,
) -> Result<()> {
    if !grads.congruent_with(params) || !velocity.congruent_with(params) {
        return Err(Error::shape("sgd_step", "gradients or velocity differ in layout from parameters"));
    }
    for (i, g) in grads.layers.iter().enumerate() {
        let parts: [(&str, &[T]); 4] = [
            ("weight", g.weight.data()),
            ("bias", &g.bias),
            ("bn.gamma", g.gamma.as_deref().unwrap_or(&[])),
            ("bn.beta", g.beta.as_deref().unwrap_or(&[])),
        ];
        for (part, data) in parts {
            if data.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteGradient(format!("conv{}.{part}", i + 1)));
            }
        }
    }
    let lr = T::lit(config.learning_rate);
    let mu = T::lit(config.momentum);
    let wd = T::lit(config.weight_decay);
    let update = |p: &mut [T], g: &[T], v: &mut [T], decay: T| {
        for ((p, &g), v) in p.iter_mut().zip(g).zip(v.iter_mut()) {
            *v = mu * *v - lr * (g + decay * *p);
            *p = *p + *v;
        }
    };
    for ((p, g), v) in params.layers.iter_mut().zip(&grads.layers).zip(velocity.layers.iter_mut()) {
        update(p.weight.data_mut(), g.weight.data(), v.weight.data_mut(), wd);
        update(&mut p.bias, &g.bias, &mut v.bias, T::zero());
        if let (Some(bn), Some(gg), Some(gb), Some(vg), Some(vb)) =
            (p.bn.as_mut(), &g.gamma, &g.beta, v.gamma.as_mut(), v.beta.as_mut())
        {
            update(&mut bn.gamma, gg, vg, T::zero());
            update(&mut bn.beta, gb, vb, T::zero());
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogEntry {
    pub iteration: usize,
    pub loss: f64,
    pub accuracy: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub entries: Vec<LogEntry>,
}

impl TrainLog {
    /// `iteration,loss,accuracy`
    pub fn write_csv<W: io::Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["iteration", "loss", "accuracy"])?;
        for e in &self.entries {
            wr.write_record([e.iteration.to_string(), e.loss.to_string(), e.accuracy.to_string()])?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Seed streams fanned out from [`TrainConfig::seed`].
pub const SEED_STREAM_INIT: u64 = 1;
pub const SEED_STREAM_BATCHES: u64 = 2;

/// Trains freshly initialized parameters on `samples`.
///
/// Each iteration draws `batch_size` samples uniformly with replacement.
/// The log records the batch loss and unweighted pixel accuracy every
/// `log_every` iterations. `observe` sees each log entry as it is produced.
pub fn train<T: Scalar>(
    spec: &NetworkSpec,
    samples: &[SampleRecord],
    config: &TrainConfig,
    observe: &mut dyn FnMut(&LogEntry),
) -> Result<(NetworkParams<T>, TrainLog)> {
    let params = NetworkParams::init(spec, derive_seed(config.seed, SEED_STREAM_INIT));
    train_from(spec, params, samples, config, observe)
}

/// Like [`train`], starting from the given parameters.
pub fn train_from<T: Scalar>(
    spec: &NetworkSpec,
    mut params: NetworkParams<T>,
    samples: &[SampleRecord],
    config: &TrainConfig,
    observe: &mut dyn FnMut(&LogEntry),
) -> Result<(NetworkParams<T>, TrainLog)> {
    config.validate()?;
    params.check(spec)?;
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let weights = match median_frequency_weights(samples.iter().map(|s| &s.mask)) {
        Ok(w) if config.class_balance => w,
        Ok(_) => ClassWeights::UNIT,
        Err(Error::ClassAbsent(c)) => return Err(Error::SingleClass(if c == "ear" { "non-ear" } else { "ear" })),
        Err(e) => return Err(e),
    };

    let items: Vec<Tensor<T>> = samples
        .iter()
        .map(|s| images_to_tensor(&[&s.image]))
        .collect::<Result<_>>()?;
    let item_shape = items[0].shape();
    if let Some((s, _)) = samples.iter().zip(&items).find(|(_, t)| t.shape() != item_shape) {
        return Err(Error::Dimensions(format!(
            "sample `{}` is {}×{}, expected {}×{}",
            s.id,
            s.image.width(),
            s.image.height(),
            item_shape.w,
            item_shape.h
        )));
    }
    if let Some(s) = samples
        .iter()
        .find(|s| (s.mask.width(), s.mask.height()) != (item_shape.w, item_shape.h))
    {
        return Err(Error::SizeMismatch {
            id: s.id.clone(),
            image: s.image.dimensions(),
            mask: (s.mask.width() as u32, s.mask.height() as u32),
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, SEED_STREAM_BATCHES));
    let mut velocity = Gradients::zeros_like(&params);
    let mut log = TrainLog::default();
    let batch_shape = Shape::new(config.batch_size, item_shape.c, item_shape.h, item_shape.w);
    let mut batch = Tensor::zeros(batch_shape);
    for iteration in 1..=config.max_iterations {
        let picks: Vec<usize> = (0..config.batch_size).map(|_| rng.gen_range(0..samples.len())).collect();
        for (slot, &k) in picks.iter().enumerate() {
            batch.item_mut(slot).copy_from_slice(items[k].data());
        }
        let targets: Vec<&LabelMask> = picks.iter().map(|&k| &samples[k].mask).collect();
        let (probs, cache) = forward(spec, &params, &batch, Mode::Train)?;
        let (loss, grad) = weighted_cross_entropy(&probs, &targets, weights)?;
        let grads = backward(spec, &params, &cache, &grad)?;
        sgd_step(&mut params, &grads, &mut velocity, config)?;
        params.apply_running_stats(&cache);
        if iteration % config.log_every == 0 {
            let entry = LogEntry {
                iteration,
                loss,
                accuracy: pixel_accuracy(&probs, &targets)?,
            };
            observe(&entry);
            log.entries.push(entry);
        }
    }
    Ok((params, log))
}
