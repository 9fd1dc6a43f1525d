//! `LPVW` checkpoint format: little-endian, `f32` parameters.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};

use super::model::{Activation, Dense, MlpVae};
use crate::binio::{len_u32, put_f32, put_u32, ByteReader};
use crate::error::{LpathError, Result};

const MAGIC: &[u8; 4] = b"LPVW";
const VERSION: u32 = 1;

pub fn model_to_bytes(model: &MlpVae) -> Result<Vec<u8>> {
    let layers = model.layers();
    let mut out = Vec::with_capacity(32 + 4 * model.parameter_count());
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION);
    put_u32(&mut out, len_u32(model.input_dim(), "input_dim")?);
    put_u32(&mut out, len_u32(model.latent_dim(), "latent_dim")?);
    put_u32(&mut out, len_u32(layers.len(), "layer count")?);
    for layer in layers {
        put_u32(&mut out, len_u32(layer.fan_in(), "rows")?);
        put_u32(&mut out, len_u32(layer.fan_out(), "cols")?);
        out.push(layer.activation.tag());
        for w in layer.weight.iter() {
            put_f32(&mut out, *w);
        }
        for b in layer.bias.iter() {
            put_f32(&mut out, *b);
        }
    }
    put_f32(&mut out, model.decoder_sigma);
    Ok(out)
}

pub fn model_from_bytes(bytes: &[u8]) -> Result<MlpVae> {
    let mut r = ByteReader::new(bytes);
    r.expect_magic(MAGIC)?;
    let at = r.offset();
    let version = r.u32_le("version")?;
    if version != VERSION {
        return Err(LpathError::format(at, format!("unsupported version {version}")));
    }
    let input_dim = r.u32_le("input_dim")? as usize;
    let latent_dim = r.u32_le("latent_dim")? as usize;
    let at = r.offset();
    let count = r.u32_le("layer count")? as usize;
    if count < 3 || count % 2 == 0 {
        return Err(LpathError::format(
            at,
            format!("layer count {count} is not of the form 2*hidden + 3"),
        ));
    }
    let mut layers = Vec::with_capacity(count);
    for _ in 0..count {
        let rows = r.u32_le("layer rows")? as usize;
        let cols = r.u32_le("layer cols")? as usize;
        let at = r.offset();
        let tag = r.u8("activation tag")?;
        let activation = Activation::from_tag(tag)
            .ok_or_else(|| LpathError::format(at, format!("unknown activation tag {tag}")))?;
        let n = rows
            .checked_mul(cols)
            .ok_or_else(|| LpathError::format(at, "layer size overflows"))?;
        let weight = Array2::from_shape_vec((rows, cols), r.f32_vec(n, "weights")?)
            .expect("length checked by reader");
        let bias = Array1::from(r.f32_vec(cols, "bias")?);
        layers.push(Dense {
            weight,
            bias,
            activation,
        });
    }
    let sigma = r.f32_le("decoder_sigma")? as f64;
    r.finish()?;

    let hidden = (count - 3) / 2;
    let mut it = layers.into_iter();
    let encoder: Vec<Dense> = it.by_ref().take(hidden).collect();
    let mu_head = it.next().expect("count checked");
    let logvar_head = it.next().expect("count checked");
    let decoder: Vec<Dense> = it.collect();
    let model = MlpVae::new(encoder, mu_head, logvar_head, decoder, sigma)
        .map_err(|e| LpathError::format(bytes.len(), format!("inconsistent layers: {e}")))?;
    if model.input_dim() != input_dim || model.latent_dim() != latent_dim {
        return Err(LpathError::format(
            8,
            format!(
                "header dims {input_dim}/{latent_dim} disagree with layers {}/{}",
                model.input_dim(),
                model.latent_dim()
            ),
        ));
    }
    Ok(model)
}

pub fn save_model(model: &MlpVae, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, model_to_bytes(model)?)?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<MlpVae> {
    model_from_bytes(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vae::{init_model, TrainConfig};

    fn model() -> MlpVae {
        let cfg = TrainConfig {
            hidden_sizes: vec![5, 3],
            activation: Activation::Relu,
            ..TrainConfig::default()
        };
        let mut m = init_model(&cfg, 6, 2, 7).unwrap();
        m.decoder[1].bias[0] = 0.25;
        m
    }

    #[test]
    fn round_trip_is_bitwise_exact() {
        let m = model();
        let bytes = model_to_bytes(&m).unwrap();
        let back = model_from_bytes(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(model_to_bytes(&back).unwrap(), bytes);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.lpvw");
        save_model(&model(), &path).unwrap();
        assert_eq!(load_model(&path).unwrap(), model());
    }

    #[test]
    fn truncation_is_a_format_error() {
        let bytes = model_to_bytes(&model()).unwrap();
        for cut in [0, 3, 10, 25, bytes.len() - 1] {
            assert!(matches!(
                model_from_bytes(&bytes[..cut]),
                Err(LpathError::Format { .. })
            ));
        }
    }

    #[test]
    fn wrong_magic_names_expected() {
        let mut bytes = model_to_bytes(&model()).unwrap();
        bytes[..4].copy_from_slice(b"XXXX");
        let err = model_from_bytes(&bytes).unwrap_err();
        assert!(err.to_string().contains("LPVW"), "{err}");
    }

    #[test]
    fn trailing_bytes_rejected() {
        let mut bytes = model_to_bytes(&model()).unwrap();
        bytes.push(0);
        assert!(model_from_bytes(&bytes).is_err());
    }
}
