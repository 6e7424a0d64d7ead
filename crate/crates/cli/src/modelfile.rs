//! Versioned JSON model files.

use std::path::Path;

use noisygp::FittedGP;
use serde::{Deserialize, Serialize};

use crate::csvio::write_bytes;
use crate::error::{CliError, CliResult};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    schema_version: u32,
    model: FittedGP,
}

pub fn to_json(model: &FittedGP) -> String {
    let file = ModelFile { schema_version: SCHEMA_VERSION, model: model.clone() };
    let mut s = serde_json::to_string_pretty(&file).expect("models serialize");
    s.push('\n');
    s
}

pub fn from_json(text: &str) -> CliResult<FittedGP> {
    #[derive(Deserialize)]
    struct Version {
        schema_version: u32,
    }
    let v: Version = serde_json::from_str(text).map_err(|e| CliError::Data(format!("not a model file: {e}")))?;
    if v.schema_version != SCHEMA_VERSION {
        return Err(CliError::Data(format!("model schema version {} is not supported (expected {SCHEMA_VERSION})", v.schema_version)));
    }
    let file: ModelFile = serde_json::from_str(text).map_err(|e| CliError::Data(format!("invalid model file: {e}")))?;
    Ok(file.model)
}

pub fn save(model: &FittedGP, path: &Path) -> CliResult<()> {
    write_bytes(path, to_json(model).as_bytes())
}

pub fn load(path: &Path) -> CliResult<FittedGP> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Data(format!("cannot read model {}: {e}", path.display())))?;
    from_json(&text).map_err(|e| match e {
        CliError::Data(m) => CliError::Data(format!("{}: {m}", path.display())),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use noisygp::*;

    fn model() -> FittedGP {
        let raw = RawData::from_1d(&[0.0, 0.2, 0.2, 0.5, 0.9], vec![1.0, 0.3, 0.5, -0.2, 0.8]).unwrap();
        let k = Kernel::new(KernelFamily::Matern52, vec![0.3], 0.7).unwrap();
        FittedGP::condition(k, NoiseModel::Constant { variance: 0.05 }, TrendMode::ConstantGls, compact(&raw)).unwrap()
    }

    #[test]
    fn save_load_save_is_identical() {
        let a = to_json(&model());
        let b = to_json(&from_json(&a).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn wrong_version_is_a_data_error() {
        let text = to_json(&model()).replacen("\"schema_version\": 1", "\"schema_version\": 7", 1);
        let err = from_json(&text).unwrap_err();
        assert_eq!(err.exit_code(), 3);
        assert!(err.to_string().contains("version 7"));
    }
}
