//! `TREELSO-IMG v1` image container.
//!
//! ```text
//! TREELSO-IMG v1
//! count <n>
//! shape <height> <width> <channels>
//! data f32le
//! <n * height * width * channels little-endian f32, image-major, row-major, channel last>
//! ```

use std::io::BufReader;
use std::path::Path;

use treelso_core::Image;

use super::{parse_many, parse_one, push_f32s, read_f32s, read_header, read_file, write_file, DATA_MARKER};
use crate::error::{CliError, Result};

pub const MAGIC: &str = "TREELSO-IMG v1";

/// Images must share one shape. Pixels are stored as f32.
pub fn encode(images: &[Image]) -> Result<Vec<u8>> {
    let shape = images.first().map_or((0, 0, 0), Image::shape);
    if images.iter().any(|im| im.shape() != shape) {
        return Err(CliError::Usage("images in one container must share a shape".into()));
    }
    let mut out = format!(
        "{MAGIC}\ncount {}\nshape {} {} {}\n{DATA_MARKER}\n",
        images.len(),
        shape.0,
        shape.1,
        shape.2
    )
    .into_bytes();
    for im in images {
        push_f32s(&mut out, im.data());
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<Vec<Image>, String> {
    let mut r = BufReader::new(bytes);
    let fields = read_header(&mut r, MAGIC)?;
    let count: usize = parse_one(&fields, "count")?;
    let shape: Vec<usize> = parse_many(&fields, "shape")?;
    let [h, w, c] = shape[..] else {
        return Err("`shape` takes three values".into());
    };
    let per = h * w * c;
    if count > 0 && per == 0 {
        return Err("empty image shape".into());
    }
    let pixels = read_f32s(&mut r, count * per)?;
    pixels
        .chunks(per.max(1))
        .take(count)
        .map(|px| Image::new(h, w, c, px.to_vec()).map_err(|e| e.to_string()))
        .collect()
}

pub fn save(path: &Path, images: &[Image]) -> Result<()> {
    write_file(path, &encode(images)?)
}

pub fn load(path: &Path) -> Result<Vec<Image>> {
    decode(&read_file(path)?).map_err(|m| CliError::parse(path, m))
}

/// Rounds every pixel to the precision the container stores.
pub fn quantize_pixels(image: &Image) -> Image {
    let (h, w, c) = image.shape();
    let data = image.data().iter().map(|&v| v as f32 as f64).collect();
    Image::new(h, w, c, data).expect("same shape")
}
