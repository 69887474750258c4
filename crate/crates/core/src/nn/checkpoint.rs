use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synth::{RngState, SeededRng};

use super::model::QeModel;
use super::optim::Adam;
use super::train::{LrSchedule, TrainConfig, Trainer};

const FORMAT: &str = "subqe-checkpoint";
const VERSION: u32 = 1;

/// Everything needed to resume training or run inference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub model: QeModel,
    pub adam: Adam,
    pub schedule: LrSchedule,
    pub rng: RngState,
    pub train_config: TrainConfig,
    pub epoch: usize,
}

impl Checkpoint {
    pub fn from_trainer(t: &Trainer) -> Self {
        Checkpoint {
            format: FORMAT.into(),
            version: VERSION,
            model: t.model.clone(),
            adam: t.adam.clone(),
            schedule: t.schedule.clone(),
            rng: t.rng.state(),
            train_config: t.config.clone(),
            epoch: t.epoch,
        }
    }

    pub fn into_trainer(self) -> Trainer {
        Trainer {
            model: self.model,
            adam: self.adam,
            schedule: self.schedule,
            rng: SeededRng::from_state(self.rng),
            config: self.train_config,
            epoch: self.epoch,
            log: Vec::new(),
        }
    }

    pub fn write_to<W: Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer(w, self)?;
        Ok(())
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_reader(r)?;
        if ck.format != FORMAT || ck.version != VERSION {
            return Err(Error::Format(format!(
                "expected {FORMAT} v{VERSION}, found {} v{}",
                ck.format, ck.version
            )));
        }
        ck.model.validate()?;
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::model::{Architecture, ModelConfig};

    #[test]
    fn round_trip_is_exact() {
        let cfg = ModelConfig {
            embed_dim: 3,
            lstm_hidden: 2,
            conv_channels: [2, 2],
            fc_width: 4,
            architecture: Architecture::Hybrid,
            ..Default::default()
        };
        let model = QeModel::new(cfg, &mut SeededRng::new(7)).unwrap();
        let trainer = Trainer::new(model, TrainConfig::default()).unwrap();
        let ck = Checkpoint::from_trainer(&trainer);
        let mut buf = Vec::new();
        ck.write_to(&mut buf).unwrap();
        let back = Checkpoint::read_from(buf.as_slice()).unwrap();
        assert_eq!(back, ck);
        let mut buf2 = Vec::new();
        back.write_to(&mut buf2).unwrap();
        assert_eq!(buf, buf2);
    }

    #[test]
    fn rejects_foreign_format() {
        let text = r#"{"format":"other","version":1}"#;
        assert!(Checkpoint::read_from(text.as_bytes()).is_err());
    }
}
