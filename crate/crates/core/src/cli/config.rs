use serde::de::DeserializeOwned;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Parses a JSON config, reporting failures as a JSON pointer into the
/// document.
pub fn parse_config<T: DeserializeOwned>(text: &str) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let value = serde_path_to_error::deserialize(de).map_err(|e| {
        let pointer = json_pointer(e.path());
        Error::Schema { pointer, detail: e.into_inner().to_string() }
    })?;
    Ok(value)
}

fn json_pointer(path: &serde_path_to_error::Path) -> String {
    use serde_path_to_error::Segment;
    let mut out = String::new();
    for seg in path.iter() {
        match seg {
            Segment::Seq { index } => out.push_str(&format!("/{index}")),
            Segment::Map { key } => out.push_str(&format!("/{}", key.replace('~', "~0").replace('/', "~1"))),
            Segment::Enum { variant } => out.push_str(&format!("/{variant}")),
            Segment::Unknown => out.push_str("/?"),
        }
    }
    out
}

/// JSON Schema (draft 7) for the config document of every subcommand.
/// The root accepts any of them; `definitions` holds one entry per
/// subcommand, named after it.
pub fn config_schema() -> serde_json::Value {
    use super::{ablate, analyze, approx, classify, gradcheck, reconstruct};
    let mut gen = schemars::generate::SchemaSettings::draft07().into_generator();
    let commands = [
        ("analyze", gen.subschema_for::<analyze::AnalyzeConfig>()),
        ("approx", gen.subschema_for::<approx::ApproxConfig>()),
        ("reconstruct", gen.subschema_for::<reconstruct::ReconstructConfig>()),
        ("classify", gen.subschema_for::<classify::ClassifyConfig>()),
        ("gradcheck", gen.subschema_for::<gradcheck::GradcheckConfig>()),
        ("ablate", gen.subschema_for::<ablate::AblateConfig>()),
    ];
    let mut defs: serde_json::Map<String, serde_json::Value> = gen.take_definitions(true).into_iter().collect();
    for (name, schema) in &commands {
        defs.insert(name.to_string(), schema.clone().to_value());
    }
    let any_of: Vec<_> =
        commands.iter().map(|(name, _)| serde_json::json!({ "$ref": format!("#/definitions/{name}") })).collect();
    serde_json::json!({
        "$schema": "http://json-schema.org/draft-07/schema#",
        "title": "mgic configuration",
        "description": "Config document for one mgic subcommand. Every key is optional; unknown keys are rejected.",
        "anyOf": any_of,
        "definitions": defs,
    })
}

/// Short SHA-256 digest of the config text.
pub fn config_hash(text: &str) -> String {
    let digest = Sha256::digest(text.as_bytes());
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}
