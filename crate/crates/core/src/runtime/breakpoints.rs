use std::collections::{BTreeSet, HashMap};
use std::time::{Duration, Instant};

use parking_lot::{Condvar, Mutex, RwLock};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::lifecycle::LifecycleStage;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PausedCall {
    pub call_id: String,
    pub trace_id: String,
    pub node: String,
    pub stage: LifecycleStage,
    pub since_ms: u64,
}

struct Slot {
    info: PausedCall,
    resume: Option<Map<String, Value>>,
}

/// Pause points keyed by (node name, stage).
#[derive(Default)]
pub struct Breakpoints {
    points: RwLock<BTreeSet<(String, LifecycleStage)>>,
    paused: Mutex<HashMap<String, Slot>>,
    resumed: Condvar,
}

impl Breakpoints {
    pub fn set(&self, node: &str, stage: LifecycleStage, enabled: bool) {
        let key = (node.to_owned(), stage);
        let mut points = self.points.write();
        if enabled {
            points.insert(key);
        } else {
            points.remove(&key);
        }
    }

    pub fn list(&self) -> Vec<(String, LifecycleStage)> {
        self.points.read().iter().cloned().collect()
    }

    pub fn matches(&self, node: &str, stage: LifecycleStage) -> bool {
        let points = self.points.read();
        !points.is_empty() && points.contains(&(node.to_owned(), stage))
    }

    pub fn paused(&self) -> Vec<PausedCall> {
        let mut out: Vec<PausedCall> = self.paused.lock().values().map(|s| s.info.clone()).collect();
        out.sort_by(|a, b| (a.since_ms, &a.call_id).cmp(&(b.since_ms, &b.call_id)));
        out
    }

    /// Blocks until [`Breakpoints::resume`] or the timeout. Returns the argument
    /// overrides supplied with the resume, if any.
    pub fn wait(&self, info: PausedCall, timeout: Duration) -> Option<Map<String, Value>> {
        let call_id = info.call_id.clone();
        let deadline = Instant::now() + timeout;
        let mut paused = self.paused.lock();
        paused.insert(call_id.clone(), Slot { info, resume: None });
        loop {
            if let Some(overrides) = paused.get_mut(&call_id).and_then(|s| s.resume.take()) {
                paused.remove(&call_id);
                return Some(overrides).filter(|m| !m.is_empty());
            }
            if self.resumed.wait_until(&mut paused, deadline).timed_out() {
                let slot = paused.remove(&call_id);
                return slot.and_then(|s| s.resume).filter(|m| !m.is_empty());
            }
        }
    }

    /// Releases a paused call. Returns false if no call with that id is paused.
    pub fn resume(&self, call_id: &str, overrides: Option<Map<String, Value>>) -> bool {
        let mut paused = self.paused.lock();
        match paused.get_mut(call_id) {
            Some(slot) => {
                slot.resume = Some(overrides.unwrap_or_default());
                drop(paused);
                self.resumed.notify_all();
                true
            }
            None => false,
        }
    }
}
