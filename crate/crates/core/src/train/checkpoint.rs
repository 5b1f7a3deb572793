use std::collections::BTreeMap;
use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::TrainMode;
use crate::error::{Error, Result};
use crate::field::{DesignParams, SmoothOccParams};
use crate::model::{BaselineModel, DifModel, TrainedModel};
use crate::nn::{AdamConfig, AdamState, Architecture, Mlp};

pub const FORMAT_VERSION: u32 = 1;

/// One network: architecture, weights and (optionally) optimizer moments.
/// Float arrays are base64 of little-endian `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkBlob {
    pub architecture: Architecture,
    pub weights: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimizer: Option<OptimizerBlob>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerBlob {
    pub config: AdamConfig,
    pub step: u64,
    pub m: String,
    pub v: String,
}

/// Serialized training state. Contains no wall-clock data, so identical runs
/// produce identical files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub mode: TrainMode,
    pub alpha: f64,
    pub design: DesignParams,
    pub feature_noise_sd: f64,
    pub rng_seed: u64,
    pub epoch: usize,
    pub phase: usize,
    pub networks: BTreeMap<String, NetworkBlob>,
}

pub fn encode_f64s(values: &[f64]) -> String {
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    STANDARD.encode(bytes)
}

pub fn decode_f64s(s: &str) -> std::result::Result<Vec<f64>, String> {
    let bytes = STANDARD.decode(s).map_err(|e| e.to_string())?;
    if bytes.len() % 8 != 0 {
        return Err(format!("{} bytes is not a whole number of f64 values", bytes.len()));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect())
}

fn blob(net: &Mlp, opt: Option<&AdamState>) -> NetworkBlob {
    NetworkBlob {
        architecture: net.architecture(),
        weights: encode_f64s(&net.flatten()),
        optimizer: opt.map(|s| OptimizerBlob {
            config: s.config,
            step: s.step,
            m: encode_f64s(&s.m),
            v: encode_f64s(&s.v),
        }),
    }
}

impl Checkpoint {
    pub fn new(
        model: &TrainedModel,
        mode: TrainMode,
        optimizers: &BTreeMap<String, AdamState>,
        rng_seed: u64,
        epoch: usize,
        phase: usize,
    ) -> Self {
        let mut networks = BTreeMap::new();
        let (alpha, design, noise) = match model {
            TrainedModel::Dif(m) => {
                networks.insert("predictor".into(), blob(&m.predictor, optimizers.get("predictor")));
                if let Some(r) = &m.rectifier {
                    networks.insert("rectifier".into(), blob(r, optimizers.get("rectifier")));
                }
                (m.occ.alpha, m.design, m.feature_noise_sd)
            }
            TrainedModel::Baseline(b) => {
                networks.insert("baseline".into(), blob(&b.net, optimizers.get("baseline")));
                (b.occ.alpha, DesignParams::default(), 0.0)
            }
        };
        Self {
            format_version: FORMAT_VERSION,
            mode,
            alpha,
            design,
            feature_noise_sd: noise,
            rng_seed,
            epoch,
            phase,
            networks,
        }
    }

    fn net(&self, name: &str) -> std::result::Result<Option<Mlp>, String> {
        let Some(b) = self.networks.get(name) else {
            return Ok(None);
        };
        let w = decode_f64s(&b.weights).map_err(|e| format!("networks.{name}.weights: {e}"))?;
        Mlp::from_flat(&b.architecture, &w)
            .map(Some)
            .map_err(|e| format!("networks.{name}: {e}"))
    }

    pub fn model(&self) -> std::result::Result<TrainedModel, String> {
        let occ = SmoothOccParams::new(self.alpha).map_err(|e| e.to_string())?;
        if let Some(net) = self.net("baseline")? {
            return Ok(TrainedModel::Baseline(BaselineModel { net, occ }));
        }
        let predictor = self.net("predictor")?.ok_or("missing networks.predictor")?;
        Ok(TrainedModel::Dif(DifModel {
            predictor,
            rectifier: self.net("rectifier")?,
            occ,
            design: self.design,
            feature_noise_sd: self.feature_noise_sd,
        }))
    }

    pub fn optimizers(&self) -> std::result::Result<BTreeMap<String, AdamState>, String> {
        let mut out = BTreeMap::new();
        for (name, b) in &self.networks {
            if let Some(o) = &b.optimizer {
                let m = decode_f64s(&o.m).map_err(|e| format!("networks.{name}.optimizer.m: {e}"))?;
                let v = decode_f64s(&o.v).map_err(|e| format!("networks.{name}.optimizer.v: {e}"))?;
                out.insert(
                    name.clone(),
                    AdamState {
                        config: o.config,
                        step: o.step,
                        m,
                        v,
                    },
                );
            }
        }
        Ok(out)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("checkpoint serializes")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        let ck: Checkpoint = serde_json::from_str(&text).map_err(|e| Error::Checkpoint {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        if ck.format_version != FORMAT_VERSION {
            return Err(Error::Checkpoint {
                path: path.to_path_buf(),
                message: format!("unsupported format_version {}", ck.format_version),
            });
        }
        Ok(ck)
    }

    /// Loads and rebuilds the model in one step.
    pub fn load_model(path: &Path) -> Result<(Checkpoint, TrainedModel)> {
        let ck = Self::load(path)?;
        let model = ck.model().map_err(|message| Error::Checkpoint {
            path: path.to_path_buf(),
            message,
        })?;
        Ok((ck, model))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn base64_round_trip_is_exact() {
        let v = vec![0.0, -0.0, 1.5, f64::MIN_POSITIVE, 1e300, -3.25e-7];
        let back = decode_f64s(&encode_f64s(&v)).unwrap();
        assert_eq!(
            v.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
            back.iter().map(|x| x.to_bits()).collect::<Vec<_>>()
        );
        assert!(decode_f64s("AAAA").is_err());
    }

    #[test]
    fn model_round_trip() {
        let m = DifModel::new(
            SmoothOccParams::default(),
            DesignParams::default(),
            0.1,
            true,
            &mut ChaCha8Rng::seed_from_u64(1),
        )
        .unwrap();
        let mut opts = BTreeMap::new();
        let mut st = AdamState::new(AdamConfig::default(), m.predictor.num_params());
        st.step = 3;
        st.m[0] = 0.25;
        opts.insert("predictor".to_string(), st.clone());
        let tm = TrainedModel::Dif(m);
        let ck = Checkpoint::new(&tm, TrainMode::Dif, &opts, 7, 2, 1);
        let parsed: Checkpoint = serde_json::from_str(&ck.to_json()).unwrap();
        assert_eq!(parsed, ck);
        assert_eq!(parsed.model().unwrap(), tm);
        assert_eq!(parsed.optimizers().unwrap()["predictor"], st);
    }
}
