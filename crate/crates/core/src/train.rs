//! Batch-1 Adam training with a two-stage learning-rate schedule.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AdamConfig, AdamState, AutodiffError, Graph, Tensor};
use crate::data::Patch;
use crate::losses::{balanced_eta, forward_loss, one_hot_labels, LossError, LossWeights, PixelFeatures};
use crate::network::{NetworkError, VoteNet};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("non-finite loss at step {step}: first bad term is {term} = {value}")]
    NonFinite { step: usize, term: &'static str, value: f64 },
    #[error("invalid training config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Learning rate for the first epoch.
    pub lr: f64,
    /// Learning rate from the second epoch on.
    pub lr_after_first_epoch: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Reshuffle sample order every epoch.
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 3, lr: 1e-4, lr_after_first_epoch: 1e-5, beta1: 0.9, beta2: 0.999, eps: 1e-8, shuffle: true }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.lr > 0.0 && self.lr_after_first_epoch > 0.0) {
            return Err(TrainError::Config("learning rates must be positive".into()));
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return Err(TrainError::Config("Adam betas must lie in [0, 1)".into()));
        }
        if !(self.eps > 0.0) {
            return Err(TrainError::Config("Adam eps must be positive".into()));
        }
        Ok(())
    }

    pub fn lr_for_epoch(&self, epoch: usize) -> f64 {
        if epoch == 0 {
            self.lr
        } else {
            self.lr_after_first_epoch
        }
    }
}

/// One training example with its labels and reconstruction features.
#[derive(Debug, Clone)]
pub struct Sample {
    pub image: Tensor,
    pub labels: Tensor,
    pub features: PixelFeatures,
}

impl Sample {
    pub fn from_patch(patch: &Patch) -> Result<Self, LossError> {
        let r = &patch.raster;
        let image = r.image_tensor();
        Ok(Self {
            labels: one_hot_labels(&r.mask, r.height, r.width)?,
            features: PixelFeatures::from_image(&image)?,
            image,
        })
    }
}

pub fn prepare_samples(patches: &[Patch]) -> Result<Vec<Sample>, LossError> {
    patches.iter().map(Sample::from_patch).collect()
}

/// Background/contour pixel ratio over a patch set, clamped to `[1, 10]`.
pub fn dataset_eta(patches: &[Patch]) -> f64 {
    let contour: usize = patches.iter().map(|p| p.raster.contour_pixels()).sum();
    let total: usize = patches.iter().map(|p| p.raster.mask.len()).sum();
    balanced_eta(total - contour, contour)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    /// 1-based optimizer step.
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
    pub label: f64,
    pub region: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    pub steps: Vec<StepRecord>,
    pub epoch_means: Vec<f64>,
}

impl TrainReport {
    /// `step,L_c,L_r,total,epoch,lr` with one line per optimizer step.
    pub fn log_csv(&self) -> String {
        let mut out = String::from("step,L_c,L_r,total,epoch,lr\n");
        for s in &self.steps {
            out.push_str(&format!("{},{},{},{},{},{}\n", s.step, s.label, s.region, s.total, s.epoch + 1, s.lr));
        }
        out
    }
}

/// Value and loss terms of one sample without touching the parameters.
pub fn evaluate_loss(model: &VoteNet, sample: &Sample, weights: &LossWeights) -> Result<f64, TrainError> {
    let mut g = Graph::new();
    let (out, _) = model.forward(&mut g, &sample.image)?;
    let loss = forward_loss(&mut g, &out, &sample.labels, &sample.features, weights)?;
    Ok(g.item(loss.total).expect("scalar loss"))
}

/// Trains `model` in place, one sample per step. `on_step` sees every record as
/// it is produced.
pub fn train(
    model: &mut VoteNet,
    samples: &[Sample],
    weights: &LossWeights,
    config: &TrainConfig,
    seed: u64,
    mut on_step: impl FnMut(&StepRecord),
) -> Result<TrainReport, TrainError> {
    config.validate()?;
    weights.validate()?;
    let adam_cfg = AdamConfig { lr: config.lr, beta1: config.beta1, beta2: config.beta2, eps: config.eps };
    let mut adam = AdamState::new(&model.params, adam_cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut report = TrainReport::default();

    for epoch in 0..config.epochs {
        let lr = config.lr_for_epoch(epoch);
        adam.set_lr(lr);
        if config.shuffle {
            order.shuffle(&mut rng);
        }
        let mut epoch_sum = 0.0;
        for &i in &order {
            let sample = &samples[i];
            let mut g = Graph::new();
            let (out, vars) = model.forward(&mut g, &sample.image)?;
            let loss = forward_loss(&mut g, &out, &sample.labels, &sample.features, weights)?;
            let step = report.steps.len() + 1;
            let terms = [
                ("fused BCE", loss.label.fused_bce),
                ("class CE", loss.label.class_ce),
                ("label reconstruction CE", loss.label.label_recon),
                ("position granularity", loss.region.position),
                ("colour granularity", loss.region.color),
                ("partition coefficient", loss.region.partition),
                ("L_c", loss.label.total),
                ("L_r", loss.region.total),
                ("total", loss.total),
            ];
            for (term, v) in terms {
                let value = g.item(v).expect("scalar loss term");
                if !value.is_finite() {
                    return Err(TrainError::NonFinite { step, term, value });
                }
            }
            let item = |v| g.item(v).expect("scalar loss term");
            let record = StepRecord {
                step,
                epoch,
                lr,
                label: item(loss.label.total),
                region: item(loss.region.total),
                total: item(loss.total),
            };
            let grads = g.backward(loss.total)?;
            model.params.absorb(&grads, &vars);
            adam.step(&mut model.params)?;
            epoch_sum += record.total;
            on_step(&record);
            report.steps.push(record);
        }
        report.epoch_means.push(if samples.is_empty() { 0.0 } else { epoch_sum / samples.len() as f64 });
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{LabeledRaster, PatchClass};
    use crate::network::NetworkConfig;

    fn tiny_patch(contour_left: bool) -> Patch {
        let n = 8;
        let mut image = vec![0.0; n * n * 3];
        let mut mask = vec![0u8; n * n];
        for p in 0..n * n {
            let left = p % n < n / 2;
            let c = left == contour_left;
            mask[p] = c as u8;
            image[p * 3 + 2] = if c { 0.8 } else { 0.2 };
        }
        Patch {
            scene: "t".into(),
            center: (4, 4),
            origin: (0, 0),
            rotation_deg: 0.0,
            class: PatchClass::Contour,
            raster: LabeledRaster::new(n, n, image, mask).unwrap(),
        }
    }

    fn tiny_model() -> VoteNet {
        let cfg = NetworkConfig { segments: 3, height: 8, width: 8, widths: [2, 2, 2, 2], ..NetworkConfig::default() };
        VoteNet::new(cfg, 1).unwrap()
    }

    #[test]
    fn zero_epochs_leave_parameters_untouched() {
        let mut m = tiny_model();
        let before = m.clone();
        let samples = prepare_samples(&[tiny_patch(true)]).unwrap();
        let cfg = TrainConfig { epochs: 0, ..TrainConfig::default() };
        let report = train(&mut m, &samples, &LossWeights::default(), &cfg, 0, |_| {}).unwrap();
        assert!(report.steps.is_empty());
        assert_eq!(m, before);
    }

    #[test]
    fn schedule_switches_after_first_epoch() {
        let mut m = tiny_model();
        let samples = prepare_samples(&[tiny_patch(true), tiny_patch(false)]).unwrap();
        let report = train(&mut m, &samples, &LossWeights::default(), &TrainConfig::default(), 0, |_| {}).unwrap();
        let lrs: Vec<f64> = report.steps.iter().map(|s| s.lr).collect();
        assert_eq!(lrs, vec![1e-4, 1e-4, 1e-5, 1e-5, 1e-5, 1e-5]);
        assert_eq!(report.epoch_means.len(), 3);
        assert!(report.log_csv().starts_with("step,L_c,L_r,total"));
    }

    #[test]
    fn loss_descends_at_higher_rate() {
        let mut m = tiny_model();
        let samples = prepare_samples(&[tiny_patch(true), tiny_patch(false)]).unwrap();
        let cfg = TrainConfig { epochs: 30, lr: 1e-2, lr_after_first_epoch: 1e-2, ..TrainConfig::default() };
        let report = train(&mut m, &samples, &LossWeights::default(), &cfg, 0, |_| {}).unwrap();
        assert!(report.epoch_means.last().unwrap() < &report.epoch_means[0]);
    }

    #[test]
    fn nan_input_names_the_first_bad_term() {
        let mut m = tiny_model();
        let mut samples = prepare_samples(&[tiny_patch(true)]).unwrap();
        samples[0].features.color.data_mut()[0] = f64::NAN;
        let err = train(&mut m, &samples, &LossWeights::default(), &TrainConfig::default(), 0, |_| {}).unwrap_err();
        assert!(matches!(err, TrainError::NonFinite { step: 1, term: "colour granularity", .. }), "{err}");
    }
}
