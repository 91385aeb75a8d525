use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldType {
    /// A string.
    Text,
    /// A string or a list of strings.
    Label,
    /// A number.
    Score,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplateField {
    pub name: String,
    #[serde(rename = "type")]
    pub field_type: FieldType,
    #[serde(default)]
    pub required: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationTemplate {
    pub template_id: String,
    #[serde(default)]
    pub description: String,
    pub fields: Vec<TemplateField>,
}

pub const QA_TEMPLATE: &str = include_str!("../../templates/qa.json");
pub const DOMAIN_TAGGING_TEMPLATE: &str = include_str!("../../templates/domain_tagging.json");

pub fn builtin_templates() -> Vec<AnnotationTemplate> {
    [QA_TEMPLATE, DOMAIN_TAGGING_TEMPLATE]
        .iter()
        .map(|text| serde_json::from_str(text).expect("built-in template is valid"))
        .collect()
}

fn type_matches(t: FieldType, v: &Value) -> bool {
    match t {
        FieldType::Text => v.is_string(),
        FieldType::Label => v.is_string() || v.as_array().is_some_and(|a| a.iter().all(Value::is_string)),
        FieldType::Score => v.is_number(),
    }
}

impl AnnotationTemplate {
    /// Checks required fields and value types; unknown fields are allowed.
    pub fn validate(&self, payload: &Value) -> Result<(), String> {
        let obj = payload.as_object().ok_or("annotation payload must be an object")?;
        for field in &self.fields {
            match obj.get(&field.name) {
                None | Some(Value::Null) if field.required => {
                    return Err(format!("missing required field `{}`", field.name));
                }
                None | Some(Value::Null) => {}
                Some(v) if !type_matches(field.field_type, v) => {
                    return Err(format!("field `{}` must be {:?}", field.name, field.field_type).to_lowercase());
                }
                Some(_) => {}
            }
        }
        Ok(())
    }

    /// Keeps only the template's fields.
    pub fn project(&self, payload: &Value) -> Value {
        let mut out = Map::new();
        if let Some(obj) = payload.as_object() {
            for field in &self.fields {
                if let Some(v) = obj.get(&field.name).filter(|v| !v.is_null()) {
                    out.insert(field.name.clone(), v.clone());
                }
            }
        }
        Value::Object(out)
    }
}
