use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use super::{RequestId, WorkerId};

/// One line of the placement decision log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub time: f64,
    pub request_id: RequestId,
    /// `None` when the request was rejected.
    pub worker_id: Option<WorkerId>,
    pub policy: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub violated_tag: Option<String>,
}

/// Writes one JSON document per line.
pub fn write_jsonl<T: Serialize, W: Write>(mut out: W, items: &[T]) -> io::Result<()> {
    for item in items {
        serde_json::to_writer(&mut out, item)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}
