use chrono::{DateTime, SecondsFormat, Utc};
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use super::{EaseyConfig, ExecutionStep, JobId, TransferEndpoint};

fn endpoint(ep: &TransferEndpoint, location_key: &str) -> Value {
    let mut m = Map::new();
    m.insert(location_key.into(), ep.location.clone().into());
    m.insert("protocol".into(), ep.protocol.as_str().into());
    m.insert("user".into(), ep.user.clone().into());
    if let Some(auth) = &ep.auth {
        m.insert("auth".into(), auth.clone().into());
    }
    Value::Object(m)
}

/// Document form of a config, in the strict array layout. Unset optional
/// fields are omitted.
pub fn to_json_value(cfg: &EaseyConfig) -> Value {
    let mut top = Map::new();
    top.insert(
        "job".into(),
        json!({
            "name": cfg.job.name,
            "id": cfg.job.id.as_ref().map(|id| id.as_str()).unwrap_or(""),
            "mail": cfg.job.mail,
        }),
    );
    if let Some(data) = &cfg.data {
        top.insert(
            "data".into(),
            json!({
                "input": data.input.iter().map(|e| endpoint(e, "source")).collect::<Vec<_>>(),
                "output": data.output.iter().map(|e| endpoint(e, "destination")).collect::<Vec<_>>(),
                "mount": {"container-path": data.mount},
            }),
        );
    }
    let d = &cfg.deployment;
    let mut dep = Map::new();
    dep.insert("nodes".into(), d.nodes.into());
    if let Some(mb) = d.ram_mb {
        dep.insert("ram".into(), mb.into());
    }
    dep.insert("cores-per-task".into(), d.cores_per_task.into());
    dep.insert("tasks-per-node".into(), d.tasks_per_node.into());
    dep.insert("clocktime".into(), d.clocktime.as_str().into());
    top.insert("deployment".into(), Value::Object(dep));
    let steps: Vec<Value> = cfg
        .execution
        .steps
        .iter()
        .map(|s| match s {
            ExecutionStep::Serial { command } => json!({"serial": {"command": command}}),
            ExecutionStep::Mpi { command, mpi_tasks } => {
                json!({"mpi": {"command": command, "mpi-tasks": mpi_tasks}})
            }
        })
        .collect();
    top.insert("execution".into(), Value::Array(steps));
    Value::Object(top)
}

pub fn to_json_string(cfg: &EaseyConfig) -> String {
    serde_json::to_string_pretty(&to_json_value(cfg)).expect("config values serialize")
}

fn write_canonical(v: &Value, out: &mut String) {
    match v {
        Value::Object(m) => {
            let mut keys: Vec<&String> = m.keys().collect();
            keys.sort();
            out.push('{');
            for (i, k) in keys.into_iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&serde_json::to_string(k).expect("string serializes"));
                out.push(':');
                write_canonical(&m[k], out);
            }
            out.push('}');
        }
        Value::Array(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_canonical(item, out);
            }
            out.push(']');
        }
        scalar => out.push_str(&serde_json::to_string(scalar).expect("scalar serializes")),
    }
}

/// Canonical bytes of a config: sorted keys, no insignificant whitespace,
/// UTF-8, with the job id blanked so it does not feed into itself.
pub fn canonical_bytes(cfg: &EaseyConfig) -> Vec<u8> {
    let mut blank = cfg.clone();
    blank.job.id = None;
    let mut out = String::new();
    write_canonical(&to_json_value(&blank), &mut out);
    out.into_bytes()
}

/// First 16 hex characters of SHA-256 over the canonical config bytes
/// followed by the RFC 3339 UTC timestamp (`2020-06-01T12:00:00Z`, with
/// fractional seconds only when non-zero).
pub fn assign_job_id(cfg: &EaseyConfig, submitted_at: DateTime<Utc>) -> JobId {
    let mut hasher = Sha256::new();
    hasher.update(canonical_bytes(cfg));
    hasher.update(
        submitted_at
            .to_rfc3339_opts(SecondsFormat::AutoSi, true)
            .as_bytes(),
    );
    let digest = hex::encode(hasher.finalize());
    JobId::try_from(digest[..16].to_owned()).expect("hex digest prefix")
}
