//! `TREELSO-QAE v1` autoencoder checkpoint.
//!
//! ```text
//! TREELSO-QAE v1
//! image <height> <width> <channels>
//! hidden <n>
//! latent_dim <D>
//! codebook_size <K>
//! beta <b>
//! learning_rate <lr>
//! batch_size <n>
//! seed <s>
//! params <count>
//! data f32le
//! <count little-endian f32 in the flat order documented on `QaeModel`>
//! ```

use std::io::BufReader;
use std::path::Path;

use treelso_core::{QaeConfig, QaeModel};

use super::{parse_many, parse_one, push_f32s, read_f32s, read_header, read_file, write_file, DATA_MARKER};
use crate::error::{CliError, Result};

pub const MAGIC: &str = "TREELSO-QAE v1";

pub fn encode(model: &QaeModel) -> Vec<u8> {
    let c = model.config();
    let mut out = format!(
        "{MAGIC}\nimage {} {} {}\nhidden {}\nlatent_dim {}\ncodebook_size {}\nbeta {}\nlearning_rate {}\nbatch_size {}\nseed {}\nparams {}\n{DATA_MARKER}\n",
        c.image_height,
        c.image_width,
        c.channels,
        c.hidden,
        c.latent_dim,
        c.codebook_size,
        c.beta,
        c.learning_rate,
        c.batch_size,
        c.seed,
        model.params().len()
    )
    .into_bytes();
    push_f32s(&mut out, model.params());
    out
}

pub fn decode(bytes: &[u8]) -> Result<QaeModel, String> {
    let mut r = BufReader::new(bytes);
    let fields = read_header(&mut r, MAGIC)?;
    let image: Vec<usize> = parse_many(&fields, "image")?;
    let [image_height, image_width, channels] = image[..] else {
        return Err("`image` takes three values".into());
    };
    let config = QaeConfig {
        image_height,
        image_width,
        channels,
        hidden: parse_one(&fields, "hidden")?,
        latent_dim: parse_one(&fields, "latent_dim")?,
        codebook_size: parse_one(&fields, "codebook_size")?,
        beta: parse_one(&fields, "beta")?,
        learning_rate: parse_one(&fields, "learning_rate")?,
        batch_size: parse_one(&fields, "batch_size")?,
        seed: parse_one(&fields, "seed")?,
    };
    config.validate().map_err(|e| e.to_string())?;
    let count: usize = parse_one(&fields, "params")?;
    if count != config.num_params() {
        return Err(format!("header declares {count} parameters, the shapes need {}", config.num_params()));
    }
    let params = read_f32s(&mut r, count)?;
    QaeModel::from_params(config, params).map_err(|e| e.to_string())
}

/// The model as it will be after a save and load.
pub fn round_trip(model: &QaeModel) -> QaeModel {
    decode(&encode(model)).expect("encoded checkpoints decode")
}

pub fn save(path: &Path, model: &QaeModel) -> Result<String> {
    let bytes = encode(model);
    write_file(path, &bytes)?;
    Ok(super::sha256_hex(&bytes))
}

pub fn load(path: &Path) -> Result<(QaeModel, String)> {
    let bytes = read_file(path)?;
    let model = decode(&bytes).map_err(|m| CliError::parse(path, m))?;
    Ok((model, super::sha256_hex(&bytes)))
}
