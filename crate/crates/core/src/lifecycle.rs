//! Lifecycle stages, joinpoints and observe-only aspects.

use std::fmt;
use std::sync::Arc;

use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::AspectError;
use crate::ids;
use crate::node::NodeKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LifecycleStage {
    PreProcess,
    PreSaveData,
    Execute,
    PostProcess,
    FormatOutput,
}

impl LifecycleStage {
    pub const ORDER: [LifecycleStage; 5] = [
        LifecycleStage::PreProcess,
        LifecycleStage::PreSaveData,
        LifecycleStage::Execute,
        LifecycleStage::PostProcess,
        LifecycleStage::FormatOutput,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            LifecycleStage::PreProcess => "PreProcess",
            LifecycleStage::PreSaveData => "PreSaveData",
            LifecycleStage::Execute => "Execute",
            LifecycleStage::PostProcess => "PostProcess",
            LifecycleStage::FormatOutput => "FormatOutput",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        let norm: String = s.chars().filter(|c| *c != '_' && *c != '-').collect::<String>().to_ascii_lowercase();
        Self::ORDER.into_iter().find(|st| st.as_str().to_ascii_lowercase() == norm)
    }
}

impl fmt::Display for LifecycleStage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Before,
    After,
}

impl Phase {
    pub fn short(self) -> &'static str {
        match self {
            Phase::Before => "B",
            Phase::After => "A",
        }
    }
}

/// What an aspect sees at a joinpoint. Everything is borrowed immutably, so
/// handlers can annotate but never alter the payload.
pub struct JoinPoint<'a> {
    pub stage: LifecycleStage,
    pub phase: Phase,
    pub node: &'a str,
    pub kind: NodeKind,
    pub call_id: &'a str,
    pub trace_id: &'a str,
    pub arguments: &'a Map<String, Value>,
    /// Present once Execute has produced something.
    pub output: Option<&'a Value>,
}

pub trait Aspect: Send + Sync {
    /// Returns an optional annotation that is written to the trace event.
    fn observe(&self, jp: &JoinPoint<'_>) -> Option<Value>;
}

impl<F> Aspect for F
where
    F: Fn(&JoinPoint<'_>) -> Option<Value> + Send + Sync,
{
    fn observe(&self, jp: &JoinPoint<'_>) -> Option<Value> {
        self(jp)
    }
}

pub type NodePredicate = Arc<dyn Fn(&str, NodeKind) -> bool + Send + Sync>;

#[derive(Clone)]
pub enum Selector {
    All,
    Kinds(Vec<NodeKind>),
    Names(Vec<String>),
    Predicate(NodePredicate),
}

impl Selector {
    fn validate(&self) -> Result<(), AspectError> {
        match self {
            Selector::Kinds(k) if k.is_empty() => Err(AspectError::InvalidSelector("empty kind list".into())),
            Selector::Names(n) if n.is_empty() => Err(AspectError::InvalidSelector("empty name list".into())),
            Selector::Names(n) if n.iter().any(String::is_empty) => {
                Err(AspectError::InvalidSelector("empty node name".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn matches(&self, node: &str, kind: NodeKind) -> bool {
        match self {
            Selector::All => true,
            Selector::Kinds(kinds) => kinds.contains(&kind),
            Selector::Names(names) => names.iter().any(|n| n == node),
            Selector::Predicate(p) => p(node, kind),
        }
    }
}

impl fmt::Debug for Selector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Selector::All => f.write_str("All"),
            Selector::Kinds(k) => f.debug_tuple("Kinds").field(k).finish(),
            Selector::Names(n) => f.debug_tuple("Names").field(n).finish(),
            Selector::Predicate(_) => f.write_str("Predicate(..)"),
        }
    }
}

pub struct AspectRegistration {
    pub aspect_id: String,
    pub stage: LifecycleStage,
    pub phase: Phase,
    pub selector: Selector,
    pub handler: Arc<dyn Aspect>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub aspect_id: String,
    pub value: Value,
}

#[derive(Default)]
pub struct AspectRegistry {
    aspects: RwLock<Vec<Arc<AspectRegistration>>>,
}

impl AspectRegistry {
    pub fn register(
        &self,
        stage: LifecycleStage,
        phase: Phase,
        selector: Selector,
        handler: Arc<dyn Aspect>,
    ) -> Result<String, AspectError> {
        selector.validate()?;
        let aspect_id = ids::new_id();
        self.aspects.write().push(Arc::new(AspectRegistration {
            aspect_id: aspect_id.clone(),
            stage,
            phase,
            selector,
            handler,
        }));
        Ok(aspect_id)
    }

    /// Registers one handler at all ten joinpoints.
    pub fn register_everywhere(&self, selector: Selector, handler: Arc<dyn Aspect>) -> Result<Vec<String>, AspectError> {
        let mut ids = Vec::with_capacity(10);
        for stage in LifecycleStage::ORDER {
            for phase in [Phase::Before, Phase::After] {
                ids.push(self.register(stage, phase, selector.clone(), handler.clone())?);
            }
        }
        Ok(ids)
    }

    pub fn is_empty(&self) -> bool {
        self.aspects.read().is_empty()
    }

    /// Fires matching aspects in registration order and collects their annotations.
    pub fn fire(&self, jp: &JoinPoint<'_>) -> Vec<Annotation> {
        let matching: Vec<Arc<AspectRegistration>> = self
            .aspects
            .read()
            .iter()
            .filter(|a| a.stage == jp.stage && a.phase == jp.phase && a.selector.matches(jp.node, jp.kind))
            .cloned()
            .collect();
        matching
            .into_iter()
            .filter_map(|a| {
                a.handler
                    .observe(jp)
                    .map(|value| Annotation { aspect_id: a.aspect_id.clone(), value })
            })
            .collect()
    }
}
