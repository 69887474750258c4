use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labeler::QeLabel;
use crate::synth::SeededRng;

use super::data::{Embedder, Example};
use super::model::{Mode, Prediction, QeModel};
use super::optim::Adam;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Relative epoch-loss drop below which the learning rate decays.
    pub plateau_threshold: f64,
    pub lr_divisor: f64,
    /// Decays allowed before the next plateau stops training.
    pub max_decays: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 256,
            max_epochs: 100,
            plateau_threshold: 1e-3,
            lr_divisor: 10.0,
            max_decays: 2,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Full-scale batch size.
    pub fn full_scale() -> Self {
        TrainConfig {
            batch_size: 8192,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::Config("batch_size and max_epochs must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.lr_divisor > 1.0) {
            return Err(Error::Config("learning_rate must be positive and lr_divisor above 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleEvent {
    Continue,
    Decay,
    Stop,
}

/// Plateau-driven learning-rate schedule evaluated once per epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub lr: f64,
    pub decays: usize,
    pub prev_loss: Option<f64>,
    pub stopped: bool,
    threshold: f64,
    divisor: f64,
    max_decays: usize,
}

impl LrSchedule {
    pub fn new(cfg: &TrainConfig) -> Self {
        LrSchedule {
            lr: cfg.learning_rate,
            decays: 0,
            prev_loss: None,
            stopped: false,
            threshold: cfg.plateau_threshold,
            divisor: cfg.lr_divisor,
            max_decays: cfg.max_decays,
        }
    }

    /// Feeds an epoch loss: a relative drop below the threshold divides the
    /// rate, or stops once the allowed decays are used up.
    pub fn observe(&mut self, loss: f64) -> ScheduleEvent {
        let prev = self.prev_loss.replace(loss);
        let Some(prev) = prev else {
            return ScheduleEvent::Continue;
        };
        let drop = if prev > 0.0 { (prev - loss) / prev } else { 0.0 };
        if drop >= self.threshold {
            return ScheduleEvent::Continue;
        }
        if self.decays >= self.max_decays {
            self.stopped = true;
            return ScheduleEvent::Stop;
        }
        self.decays += 1;
        self.lr /= self.divisor;
        ScheduleEvent::Decay
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    /// Rate used during the epoch.
    pub lr: f64,
    pub seconds: f64,
}

pub fn format_log(log: &[EpochLog]) -> String {
    let mut out = String::from("epoch\tloss\tlr\tseconds\n");
    for e in log {
        let _ = writeln!(out, "{}\t{}\t{}\t{:.3}", e.epoch, e.loss, e.lr, e.seconds);
    }
    out
}

/// Model plus optimizer, schedule and random stream.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: QeModel,
    pub adam: Adam,
    pub schedule: LrSchedule,
    pub rng: SeededRng,
    pub config: TrainConfig,
    pub epoch: usize,
    pub log: Vec<EpochLog>,
}

impl Trainer {
    pub fn new(model: QeModel, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let adam = Adam::new(&model.params, config.learning_rate);
        Ok(Trainer {
            model,
            adam,
            schedule: LrSchedule::new(&config),
            rng: SeededRng::new(config.seed).derive("train"),
            config,
            epoch: 0,
            log: Vec::new(),
        })
    }

    /// One pass over `data` in a freshly shuffled order.
    pub fn run_epoch(&mut self, data: &[Example], embedder: &Embedder<'_>) -> Result<EpochLog> {
        if data.is_empty() {
            return Err(Error::Empty);
        }
        let start = Instant::now();
        let lr = self.schedule.lr;
        self.adam.lr = lr;
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut self.rng);
        let mut total = 0.0;
        for (bi, chunk) in order.chunks(self.config.batch_size).enumerate() {
            let examples: Vec<&Example> = chunk.iter().map(|&i| &data[i]).collect();
            let labels: Vec<QeLabel> = examples.iter().map(|e| e.label).collect();
            let batch = embedder.batch_examples(&examples);
            let mut fwd = self.model.forward(&batch, Mode::Train(&mut self.rng))?;
            let loss = self.model.loss(&mut fwd, &labels);
            let value = fwd.graph.value(loss).data()[0];
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch: self.epoch,
                    batch: bi,
                });
            }
            total += value * chunk.len() as f64;
            fwd.graph.backward(loss);
            let grads: Vec<_> = fwd.params.iter().map(|&v| fwd.graph.grad(v)).collect();
            self.adam.update(&mut self.model.params, &grads);
            self.model.update_bn(&fwd.bn_stats);
        }
        let entry = EpochLog {
            epoch: self.epoch,
            loss: total / data.len() as f64,
            lr,
            seconds: start.elapsed().as_secs_f64(),
        };
        self.epoch += 1;
        self.log.push(entry.clone());
        Ok(entry)
    }

    /// Trains until the schedule stops or `max_epochs` is reached.
    pub fn fit(&mut self, data: &[Example], embedder: &Embedder<'_>) -> Result<&[EpochLog]> {
        while !self.schedule.stopped && self.epoch < self.config.max_epochs {
            let entry = self.run_epoch(data, embedder)?;
            log::info!(
                "epoch {} loss {:.6} lr {:e} ({:.1}s)",
                entry.epoch,
                entry.loss,
                entry.lr,
                entry.seconds
            );
            if self.schedule.observe(entry.loss) == ScheduleEvent::Decay {
                log::info!("loss plateau: learning rate now {:e}", self.schedule.lr);
            }
        }
        Ok(&self.log)
    }
}

/// Trains a fresh copy of `model` and returns it with the epoch log.
pub fn train(
    model: QeModel,
    data: &[Example],
    embedder: &Embedder<'_>,
    config: TrainConfig,
) -> Result<(QeModel, Vec<EpochLog>)> {
    let mut trainer = Trainer::new(model, config)?;
    trainer.fit(data, embedder)?;
    Ok((trainer.model, trainer.log))
}

/// Eval-mode predictions in chunks of `batch_size`.
pub fn predict_examples(
    model: &QeModel,
    data: &[Example],
    embedder: &Embedder<'_>,
    batch_size: usize,
) -> Result<Vec<Prediction>> {
    let mut out = Vec::with_capacity(data.len());
    for chunk in data.chunks(batch_size.max(1)) {
        let refs: Vec<&Example> = chunk.iter().collect();
        out.extend(model.predict_batch(&embedder.batch_examples(&refs))?);
    }
    Ok(out)
}

/// Fraction of examples whose predicted label matches.
pub fn accuracy(preds: &[Prediction], data: &[Example]) -> f64 {
    if data.is_empty() {
        return 0.0;
    }
    preds.iter().zip(data).filter(|(p, e)| p.label == e.label).count() as f64 / data.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_decays_twice_then_stops() {
        let mut s = LrSchedule::new(&TrainConfig::default());
        let mut lrs = vec![s.lr];
        let mut events = Vec::new();
        for loss in [1.0, 0.5, 0.4999, 0.3, 0.29999, 0.29998] {
            events.push(s.observe(loss));
            lrs.push(s.lr);
        }
        use ScheduleEvent::*;
        assert_eq!(events, vec![Continue, Continue, Decay, Continue, Decay, Stop]);
        assert!(s.stopped);
        let mut distinct = lrs.clone();
        distinct.dedup();
        assert_eq!(distinct, vec![1e-3, 1e-4, 1e-5]);
    }

    #[test]
    fn rising_loss_counts_as_plateau() {
        let mut s = LrSchedule::new(&TrainConfig::default());
        s.observe(1.0);
        assert_eq!(s.observe(1.2), ScheduleEvent::Decay);
    }
}
