//! Checkpoint bundle: a directory holding `config.json` plus one CSV per
//! parameter matrix under `params/`. The CSV form is the bit-exact matrix
//! serialization from [`crate::linalg`], so save -> load reproduces the model
//! exactly.

use std::path::Path;

use crate::error::{Error, Result};
use crate::layer::model::{Model, ModelConfig};
use crate::linalg::{load_matrix_csv, save_matrix_csv};

pub fn save_checkpoint(model: &Model, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    let params_dir = dir.join("params");
    std::fs::create_dir_all(&params_dir)?;
    let config_json = serde_json::to_string_pretty(&model.config)?;
    std::fs::write(dir.join("config.json"), config_json + "\n")?;
    for (name, m) in model.named_params() {
        save_matrix_csv(m, params_dir.join(format!("{name}.csv")))?;
    }
    Ok(())
}

pub fn load_checkpoint(dir: impl AsRef<Path>) -> Result<Model> {
    let dir = dir.as_ref();
    let config_text = std::fs::read_to_string(dir.join("config.json"))?;
    let config: ModelConfig = serde_json::from_str(&config_text)?;
    let mut model = Model::init(&config)?;
    for (name, param) in model.named_params_mut() {
        let path = dir.join("params").join(format!("{name}.csv"));
        let loaded = load_matrix_csv(&path)?;
        if (loaded.rows(), loaded.cols()) != (param.rows(), param.cols()) {
            return Err(Error::shape(
                "load_checkpoint",
                format!(
                    "param {name}: file {}x{}, model expects {}x{}",
                    loaded.rows(),
                    loaded.cols(),
                    param.rows(),
                    param.cols()
                ),
            ));
        }
        *param = loaded;
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_every_bit() {
        let config = ModelConfig {
            vocab_size: 9,
            d_model: 8,
            n_heads: 2,
            n_layers: 2,
            chunk_size: 4,
            use_conv: true,
            seed: 120,
        };
        let model = Model::init(&config).unwrap();
        let dir = std::env::temp_dir().join("deltanet_ckpt_test");
        let _ = std::fs::remove_dir_all(&dir);
        save_checkpoint(&model, &dir).unwrap();
        let back = load_checkpoint(&dir).unwrap();
        assert_eq!(model.config, back.config);
        for ((na, a), (nb, b)) in model.named_params().iter().zip(back.named_params().iter()) {
            assert_eq!(na, nb);
            assert_eq!(a, b, "param {na} must round-trip exactly");
        }
    }
}
