//! Shipped JSON schemas and validation of scenario documents against them.

use jsonschema::{Resource, Validator};
use serde_json::Value;

use crate::error::{Error, Result};

pub const SCENARIO: &str = include_str!("../schema/scenario.schema.json");
pub const SPATIAL_PARAMS: &str = include_str!("../schema/spatial_params.schema.json");
pub const SPATIAL_SCENARIO: &str = include_str!("../schema/spatial_scenario.schema.json");
pub const GILLESPIE_SCENARIO: &str = include_str!("../schema/gillespie_scenario.schema.json");
pub const TABLE: &str = include_str!("../schema/table.schema.json");

const BASE: &str = "https://epikit.invalid/schema/";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SchemaKind {
    Scenario,
    SpatialScenario,
    GillespieScenario,
    Table,
}

impl SchemaKind {
    pub fn text(self) -> &'static str {
        match self {
            SchemaKind::Scenario => SCENARIO,
            SchemaKind::SpatialScenario => SPATIAL_SCENARIO,
            SchemaKind::GillespieScenario => GILLESPIE_SCENARIO,
            SchemaKind::Table => TABLE,
        }
    }
}

pub fn validator(kind: SchemaKind) -> Result<Validator> {
    let schema: Value = serde_json::from_str(kind.text())?;
    let params: Value = serde_json::from_str(SPATIAL_PARAMS)?;
    let resource = Resource::from_contents(params).map_err(|e| Error::InvalidInput(format!("schema: {e}")))?;
    jsonschema::options()
        .with_resource(format!("{BASE}spatial_params.schema.json"), resource)
        .build(&schema)
        .map_err(|e| Error::InvalidInput(format!("schema: {e}")))
}

/// Validate `doc` against the schema, collecting every violation.
pub fn validate(kind: SchemaKind, doc: &Value) -> Result<()> {
    let v = validator(kind)?;
    let errors: Vec<String> = v
        .iter_errors(doc)
        .map(|e| {
            let path = e.instance_path.to_string();
            if path.is_empty() {
                e.to_string()
            } else {
                format!("{path}: {e}")
            }
        })
        .collect();
    if errors.is_empty() {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("document does not match the schema:\n  {}", errors.join("\n  "))))
    }
}

/// Parse JSON text, validate it, then deserialize.
pub fn parse<T: serde::de::DeserializeOwned>(kind: SchemaKind, text: &str) -> Result<T> {
    let doc: Value = serde_json::from_str(text)?;
    validate(kind, &doc)?;
    Ok(serde_json::from_value(doc)?)
}
