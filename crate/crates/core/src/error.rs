use thiserror::Error;

use crate::lifecycle::LifecycleStage;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RegistryError {
    #[error("node `{0}` is already registered")]
    NameConflict(String),
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
    #[error("node `{0}` not found")]
    NodeNotFound(String),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AspectError {
    #[error("invalid selector: {0}")]
    InvalidSelector(String),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ScopeError {
    #[error("request carries no group id")]
    MissingGroupId,
    #[error("scope key must be non-empty")]
    EmptyKey,
    #[error("node-level values live on the request arguments")]
    NodeLevel,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ModelError {
    #[error("model unavailable: {0}")]
    ModelUnavailable(String),
    #[error("no scripted rule matched and no default reply is configured")]
    NoRuleMatched,
    #[error("invalid model binding: {0}")]
    InvalidBinding(String),
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("unknown trace `{0}`")]
    UnknownTrace(String),
    #[error("unknown version `{version}` of trace `{trace}`")]
    UnknownVersion { trace: String, version: String },
    #[error("trace `{0}` is sealed")]
    SealedTrace(String),
    #[error("trace `{0}` is not sealed yet")]
    UnsealedTrace(String),
    #[error("unknown call `{0}`")]
    UnknownCall(String),
    #[error("invalid override: {0}")]
    OverrideInvalid(String),
    #[error("trace log corrupt: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("{stage} failed: {detail}")]
pub struct StageError {
    pub stage: LifecycleStage,
    pub detail: String,
}
