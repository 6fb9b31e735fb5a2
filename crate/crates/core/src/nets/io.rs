//! Versioned JSON envelope for parameter files.
//!
//! ```json
//! { "format": "nbs-params", "version": 1, "kind": "mlp", "body": { ... } }
//! ```
//!
//! `body` is the serde form of the network; every [`Param`](super::Param)
//! carries `rows`, `cols` and row-major `data`, and shapes are re-checked on
//! load.

use super::{FicnnParams, MlpParams, PicnnParams};
use crate::error::{Error, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub const FORMAT_VERSION: u32 = 1;
const FORMAT: &str = "nbs-params";

/// Anything storable in a parameter file.
pub trait ParamFile: Serialize + DeserializeOwned {
    const KIND: &'static str;
    fn validate(&self) -> Result<()>;
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Envelope<T> {
    format: String,
    version: u32,
    kind: String,
    body: T,
}

pub fn save_params<T: ParamFile>(v: &T) -> String {
    let env = Envelope {
        format: FORMAT.to_string(),
        version: FORMAT_VERSION,
        kind: T::KIND.to_string(),
        body: v,
    };
    serde_json::to_string_pretty(&env).expect("parameters serialize")
}

pub fn load_params<T: ParamFile>(s: &str) -> Result<T> {
    let env: Envelope<T> = serde_json::from_str(s).map_err(|e| Error::Parse(e.to_string()))?;
    if env.format != FORMAT {
        return Err(Error::invalid(
            "format",
            format!("expected {FORMAT}, got {}", env.format),
        ));
    }
    if env.version != FORMAT_VERSION {
        return Err(Error::invalid(
            "version",
            format!("unsupported version {}", env.version),
        ));
    }
    if env.kind != T::KIND {
        return Err(Error::invalid(
            "kind",
            format!("expected {}, got {}", T::KIND, env.kind),
        ));
    }
    env.body.validate()?;
    Ok(env.body)
}

impl ParamFile for MlpParams {
    const KIND: &'static str = "mlp";
    fn validate(&self) -> Result<()> {
        MlpParams::validate(self)
    }
}

impl ParamFile for FicnnParams {
    const KIND: &'static str = "ficnn";
    fn validate(&self) -> Result<()> {
        FicnnParams::validate(self)
    }
}

impl ParamFile for PicnnParams {
    const KIND: &'static str = "picnn";
    fn validate(&self) -> Result<()> {
        PicnnParams::validate(self)
    }
}
