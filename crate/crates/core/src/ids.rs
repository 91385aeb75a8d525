use std::time::{SystemTime, UNIX_EPOCH};

/// Random 128-bit identifier rendered as 32 lowercase hex characters (URL-safe).
pub fn new_id() -> String {
    uuid::Uuid::new_v4().simple().to_string()
}

/// Wall-clock milliseconds since the Unix epoch.
pub fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}
