//! Instance file formats: TSPLIB/CVRPLIB text and the native JSON form.

mod native;
mod tsplib;

pub use native::{from_native_json, to_native_json};
pub use tsplib::{parse_lib, LibDocument};

use std::path::Path;

use crate::domain::Instance;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Lib,
    Native,
}

impl std::str::FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lib" => Ok(Format::Lib),
            "native" => Ok(Format::Native),
            other => Err(Error::Argument(format!("unknown format {other:?} (expected lib or native)"))),
        }
    }
}

/// Read an instance file. Without an explicit format, `.json` selects the
/// native reader and everything else the TSPLIB reader.
pub fn read_instance(path: &Path, format: Option<Format>) -> Result<Instance> {
    let text = std::fs::read_to_string(path)?;
    let format = format.unwrap_or_else(|| {
        if path.extension().is_some_and(|e| e == "json") {
            Format::Native
        } else {
            Format::Lib
        }
    });
    match format {
        Format::Native => from_native_json(&text),
        Format::Lib => parse_lib(&text)?.to_instance(),
    }
}
