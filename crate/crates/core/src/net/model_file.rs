//! Binary model file.
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "SINR"
//! 4       4     u32 format version (1)
//! 8       4     u32 input_dim
//! 12      4     u32 hidden_dim
//! 16      4     u32 n_residual_layers
//! 20      4     u32 n_species
//! 24      1     u8 encoder (0 residual, 1 identity)
//! 25      1     u8 input mode (0 coords, 1 env, 2 env+coords)
//! 26      2     reserved, zero
//! 28      4     f32 dropout_p
//! 32      8     u64 init seed
//! 40      ...   f32 parameter values, tensor by tensor in NetParams::tensors
//!               order, each tensor row-major (weights are out x in)
//! ...     ...   species table: n_species x (u32 byte length, UTF-8 id)
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::Path;

use ndarray::Array2;

use super::{predict, EncoderKind, NetConfig, NetParams};
use crate::geo::InputMode;
use crate::{Error, Result};

pub const MODEL_MAGIC: &[u8; 4] = b"SINR";
pub const MODEL_FORMAT_VERSION: u32 = 1;

/// A trained network together with what is needed to query it.
#[derive(Debug, Clone, PartialEq)]
pub struct SinrModel {
    pub config: NetConfig,
    pub params: NetParams<f32>,
    pub input_mode: InputMode,
    /// External species ids in output order.
    pub species: Vec<String>,
}

impl SinrModel {
    pub fn new(
        config: NetConfig,
        params: NetParams<f32>,
        input_mode: InputMode,
        species: Vec<String>,
    ) -> Result<Self> {
        config.validate()?;
        if !params.matches(&config) {
            return Err(Error::Shape(
                "parameters do not match the configuration".into(),
            ));
        }
        if species.len() != config.n_species {
            return Err(Error::Shape(format!(
                "{} species ids for {} outputs",
                species.len(),
                config.n_species
            )));
        }
        Ok(Self {
            config,
            params,
            input_mode,
            species,
        })
    }

    pub fn species_index(&self, id: &str) -> Option<usize> {
        self.species.iter().position(|s| s == id)
    }

    /// Eval-mode probabilities for already encoded inputs.
    pub fn predict(&self, x: &Array2<f32>) -> Result<Array2<f32>> {
        predict(&self.params, &self.config, x.view())
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(MODEL_MAGIC)?;
        w.write_all(&MODEL_FORMAT_VERSION.to_le_bytes())?;
        write_config_block(w, &self.config, self.input_mode)?;
        write_tensors(w, &self.params)?;
        for s in &self.species {
            w.write_all(&(s.len() as u32).to_le_bytes())?;
            w.write_all(s.as_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 4];
        read_exact(r, &mut magic, "magic")?;
        if &magic != MODEL_MAGIC {
            return Err(Error::BadMagic);
        }
        let version = read_u32(r, "version")?;
        if version != MODEL_FORMAT_VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let (config, input_mode) = read_config_block(r)?;
        let params = read_tensors(r, &config)?;
        let mut species = Vec::with_capacity(config.n_species);
        for _ in 0..config.n_species {
            let len = read_u32(r, "species table")? as usize;
            if len > 1 << 20 {
                return Err(Error::Corrupt(format!("species id of {len} bytes")));
            }
            let mut buf = vec![0u8; len];
            read_exact(r, &mut buf, "species table")?;
            species.push(
                String::from_utf8(buf)
                    .map_err(|_| Error::Corrupt("species id is not UTF-8".into()))?,
            );
        }
        SinrModel::new(config, params, input_mode, species)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        let model = Self::read_from(&mut r)?;
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(Error::Corrupt("trailing bytes after species table".into()));
        }
        Ok(model)
    }
}

pub fn save_model(model: &SinrModel, path: impl AsRef<Path>) -> Result<()> {
    model.save(path)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<SinrModel> {
    SinrModel::load(path)
}

pub(crate) fn write_config_block<W: Write>(
    w: &mut W,
    cfg: &NetConfig,
    mode: InputMode,
) -> Result<()> {
    for v in [
        cfg.input_dim,
        cfg.hidden_dim,
        cfg.n_residual_layers,
        cfg.n_species,
    ] {
        let v = u32::try_from(v).map_err(|_| Error::InvalidConfig(format!("{v} exceeds u32")))?;
        w.write_all(&v.to_le_bytes())?;
    }
    w.write_all(&[cfg.encoder.code(), mode.code(), 0, 0])?;
    w.write_all(&cfg.dropout_p.to_le_bytes())?;
    w.write_all(&cfg.seed.to_le_bytes())?;
    Ok(())
}

pub(crate) fn read_config_block<R: Read>(r: &mut R) -> Result<(NetConfig, InputMode)> {
    let input_dim = read_u32(r, "config")? as usize;
    let hidden_dim = read_u32(r, "config")? as usize;
    let n_residual_layers = read_u32(r, "config")? as usize;
    let n_species = read_u32(r, "config")? as usize;
    let mut tags = [0u8; 4];
    read_exact(r, &mut tags, "config")?;
    let encoder = EncoderKind::from_code(tags[0])
        .ok_or_else(|| Error::Corrupt(format!("unknown encoder code {}", tags[0])))?;
    let mode = InputMode::from_code(tags[1])
        .ok_or_else(|| Error::Corrupt(format!("unknown input mode code {}", tags[1])))?;
    let mut b4 = [0u8; 4];
    read_exact(r, &mut b4, "config")?;
    let dropout_p = f32::from_le_bytes(b4);
    let seed = read_u64(r, "config")?;
    let cfg = NetConfig {
        input_dim,
        hidden_dim,
        n_residual_layers,
        n_species,
        dropout_p,
        seed,
        encoder,
    };
    cfg.validate().map_err(|e| Error::Corrupt(e.to_string()))?;
    // Guard allocation against garbage headers.
    let n_values = NetParams::<f32>::zeros_len(&cfg);
    if n_values > 1 << 32 {
        return Err(Error::Corrupt(format!("{n_values} parameters")));
    }
    Ok((cfg, mode))
}

pub(crate) fn write_tensors<W: Write>(w: &mut W, params: &NetParams<f32>) -> Result<()> {
    let mut buf = Vec::with_capacity(params.n_values() * 4);
    for t in params.tensors() {
        for v in t.iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

pub(crate) fn read_tensors<R: Read>(r: &mut R, cfg: &NetConfig) -> Result<NetParams<f32>> {
    let mut params = NetParams::<f32>::zeros(cfg);
    for mut t in params.tensors_mut() {
        let mut buf = vec![0u8; t.len() * 4];
        read_exact(r, &mut buf, "parameter arrays")?;
        for (dst, src) in t.iter_mut().zip(buf.chunks_exact(4)) {
            *dst = f32::from_le_bytes(src.try_into().expect("chunk of 4"));
        }
    }
    if !params.is_finite() {
        return Err(Error::Corrupt("non-finite parameter".into()));
    }
    Ok(params)
}

pub(crate) fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == ErrorKind::UnexpectedEof {
            Error::Truncated(format!("unexpected end of file in {what}"))
        } else {
            Error::Io(e)
        }
    })
}

pub(crate) fn read_u32<R: Read>(r: &mut R, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_u64<R: Read>(r: &mut R, what: &str) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b, what)?;
    Ok(u64::from_le_bytes(b))
}

impl NetParams<f32> {
    /// Number of values a parameter set for `cfg` holds, without allocating.
    pub(crate) fn zeros_len(cfg: &NetConfig) -> usize {
        let h = cfg.hidden_dim;
        let head = cfg.feature_dim() * cfg.n_species + cfg.n_species;
        match cfg.encoder {
            EncoderKind::Identity => head,
            EncoderKind::Residual => {
                cfg.input_dim * h + h + cfg.n_residual_layers * 2 * (h * h + h) + head
            }
        }
    }
}
