//! Four-tier state: application, session group, request, and node arguments.
//!
//! Node arguments live on the request envelope itself; the store here holds the
//! three shared tiers. Writes are last-writer-wins and atomic per key.

use std::collections::HashMap;

use dashmap::DashMap;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::ScopeError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScopeLevel {
    Application,
    SessionGroup,
    Request,
    Node,
}

#[derive(Default)]
pub struct ScopeStore {
    application: DashMap<String, Value>,
    groups: DashMap<String, HashMap<String, Value>>,
    requests: DashMap<String, HashMap<String, Value>>,
    request_groups: DashMap<String, Option<String>>,
}

/// Point-in-time view of the scopes visible to one request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScopeSnapshot {
    pub request_id: String,
    pub group_id: Option<String>,
    pub application: Map<String, Value>,
    pub group: Map<String, Value>,
    pub request: Map<String, Value>,
}

impl ScopeStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records that a request is live; used by the debugging snapshot.
    pub fn open_request(&self, request_id: &str, group_id: Option<&str>) {
        self.request_groups.insert(request_id.to_owned(), group_id.map(str::to_owned));
    }

    /// Drops request-scoped data once the root request completes.
    pub fn close_request(&self, request_id: &str) {
        self.requests.remove(request_id);
        self.request_groups.remove(request_id);
    }

    pub fn is_request_open(&self, request_id: &str) -> bool {
        self.request_groups.contains_key(request_id)
    }

    pub fn set(
        &self,
        request_id: &str,
        group_id: Option<&str>,
        level: ScopeLevel,
        key: &str,
        value: Value,
    ) -> Result<(), ScopeError> {
        if key.is_empty() {
            return Err(ScopeError::EmptyKey);
        }
        match level {
            ScopeLevel::Application => {
                self.application.insert(key.to_owned(), value);
            }
            ScopeLevel::SessionGroup => {
                let group = group_id.ok_or(ScopeError::MissingGroupId)?;
                self.groups.entry(group.to_owned()).or_default().insert(key.to_owned(), value);
            }
            ScopeLevel::Request => {
                self.requests.entry(request_id.to_owned()).or_default().insert(key.to_owned(), value);
            }
            ScopeLevel::Node => return Err(ScopeError::NodeLevel),
        }
        Ok(())
    }

    pub fn get(
        &self,
        request_id: &str,
        group_id: Option<&str>,
        level: ScopeLevel,
        key: &str,
    ) -> Result<Option<Value>, ScopeError> {
        Ok(match level {
            ScopeLevel::Application => self.application.get(key).map(|v| v.clone()),
            ScopeLevel::SessionGroup => {
                let group = group_id.ok_or(ScopeError::MissingGroupId)?;
                self.groups.get(group).and_then(|m| m.get(key).cloned())
            }
            ScopeLevel::Request => self.requests.get(request_id).and_then(|m| m.get(key).cloned()),
            ScopeLevel::Node => return Err(ScopeError::NodeLevel),
        })
    }

    pub fn snapshot(&self, request_id: &str) -> Option<ScopeSnapshot> {
        let group_id = self.request_groups.get(request_id)?.clone();
        let collect = |m: &HashMap<String, Value>| m.iter().map(|(k, v)| (k.clone(), v.clone())).collect::<Map<_, _>>();
        Some(ScopeSnapshot {
            request_id: request_id.to_owned(),
            application: self.application.iter().map(|e| (e.key().clone(), e.value().clone())).collect(),
            group: group_id
                .as_deref()
                .and_then(|g| self.groups.get(g).map(|m| collect(&m)))
                .unwrap_or_default(),
            request: self.requests.get(request_id).map(|m| collect(&m)).unwrap_or_default(),
            group_id,
        })
    }
}
