use std::collections::HashMap;

use super::tree::{close_unbalanced, strip_trailing_commas, Node};
use super::{
    validate, Clocktime, ConfigError, DataSpec, DeploymentSpec, EaseyConfig, ExecutionSpec,
    ExecutionStep, JobMeta, Protocol, TransferEndpoint, ViolationCode,
};

type Result<T> = std::result::Result<T, ConfigError>;

const TOP_KEYS: &[&str] = &["job", "data", "deployment", "execution"];
const SECTION_KEYS: &[&str] = &["data", "deployment", "execution"];

/// Parses a configuration in the strict array form and rejects any value
/// problem that [`validate`] classifies as a value error.
pub fn parse_config(text: &str) -> Result<EaseyConfig> {
    checked(parse_unchecked(text, false)?)
}

/// Like [`parse_config`], but also reads the older layout: sections nested
/// in `job`, `execution` written as one object with repeated `serial`/`mpi`
/// keys (linearized in document order), and trailing commas.
pub fn parse_config_lax(text: &str) -> Result<EaseyConfig> {
    checked(parse_unchecked(text, true)?)
}

/// Structural parse only. Out-of-range values (zero nodes, bad clocktime,
/// ...) are carried into the result for [`validate`] to report.
pub fn parse_unchecked(text: &str, compat: bool) -> Result<EaseyConfig> {
    let text = if compat {
        close_unbalanced(&strip_trailing_commas(text))
    } else {
        text.to_owned()
    };
    let root: Node = serde_json::from_str(&text).map_err(|e| ConfigError::Syntax {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    Reader { compat }.config(&root)
}

fn checked(cfg: EaseyConfig) -> Result<EaseyConfig> {
    let report = validate(&cfg);
    match report
        .violations
        .into_iter()
        .find(|v| v.code.is_value_error())
    {
        Some(v) => Err(ConfigError::Value {
            code: v.code,
            path: v.path,
            message: v.message,
        }),
        None => Ok(cfg),
    }
}

fn schema(code: ViolationCode, path: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Schema {
        code,
        path: path.to_owned(),
        message: message.into(),
    }
}

fn child(path: &str, key: &str) -> String {
    format!("{path}.{key}")
}

/// Members of an object, checked against an allow-list.
struct Members<'a> {
    path: String,
    map: HashMap<&'a str, &'a Node>,
}

impl<'a> Members<'a> {
    fn new(node: &'a Node, path: &str, allowed: &[&str]) -> Result<Self> {
        let Node::Object(members) = node else {
            return Err(wrong_type(path, "object", node));
        };
        let mut map = HashMap::new();
        for (key, value) in members {
            if !allowed.contains(&key.as_str()) {
                return Err(schema(
                    ViolationCode::UnknownKey,
                    &child(path, key),
                    format!("unknown key {key:?}"),
                ));
            }
            if map.insert(key.as_str(), value).is_some() {
                return Err(schema(
                    ViolationCode::DuplicateKey,
                    &child(path, key),
                    format!("key {key:?} appears more than once"),
                ));
            }
        }
        Ok(Members {
            path: path.to_owned(),
            map,
        })
    }

    fn get(&self, key: &str) -> Option<&'a Node> {
        self.map.get(key).copied().filter(|n| **n != Node::Null)
    }

    fn require(&self, key: &str) -> Result<&'a Node> {
        self.get(key).ok_or_else(|| {
            schema(
                ViolationCode::MissingField,
                &child(&self.path, key),
                format!("missing field {key:?}"),
            )
        })
    }

    fn string(&self, key: &str) -> Result<String> {
        let node = self.require(key)?;
        as_string(node, &child(&self.path, key))
    }

    fn opt_string(&self, key: &str) -> Result<Option<String>> {
        self.get(key)
            .map(|n| as_string(n, &child(&self.path, key)))
            .transpose()
    }

    fn int(&self, key: &str) -> Result<i64> {
        let node = self.require(key)?;
        as_int(node, &child(&self.path, key))
    }
}

fn wrong_type(path: &str, expected: &str, found: &Node) -> ConfigError {
    schema(
        ViolationCode::WrongType,
        path,
        format!("expected {expected}, found {}", found.kind()),
    )
}

fn as_string(node: &Node, path: &str) -> Result<String> {
    match node {
        Node::Str(s) => Ok(s.clone()),
        other => Err(wrong_type(path, "string", other)),
    }
}

fn as_int(node: &Node, path: &str) -> Result<i64> {
    match node {
        Node::Number(n) => n.as_i64().ok_or_else(|| wrong_type(path, "integer", node)),
        Node::Str(s) => s.parse::<i64>().map_err(|_| {
            schema(
                ViolationCode::WrongType,
                path,
                format!("expected an integer, found {s:?}"),
            )
        }),
        other => Err(wrong_type(path, "integer", other)),
    }
}

fn parse_ram(node: Option<&Node>, path: &str) -> Result<Option<u64>> {
    let malformed = |what: &str| {
        schema(
            ViolationCode::RamMalformed,
            path,
            format!("ram must be positive megabytes or a size with M/G suffix, found {what}"),
        )
    };
    let mb = match node {
        None => return Ok(None),
        Some(Node::Str(s)) if s.is_empty() => return Ok(None),
        Some(Node::Number(n)) => n.as_u64().ok_or_else(|| malformed(&n.to_string()))?,
        Some(Node::Str(s)) => {
            let (digits, factor) = match s.as_bytes().last() {
                Some(b'M' | b'm') => (&s[..s.len() - 1], 1),
                Some(b'G' | b'g') => (&s[..s.len() - 1], 1024),
                _ => (s.as_str(), 1),
            };
            if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
                return Err(malformed(&format!("{s:?}")));
            }
            let n: u64 = digits.parse().map_err(|_| malformed(&format!("{s:?}")))?;
            n.checked_mul(factor)
                .ok_or_else(|| malformed(&format!("{s:?}")))?
        }
        Some(other) => return Err(wrong_type(path, "integer or string", other)),
    };
    if mb == 0 {
        return Err(malformed("0"));
    }
    Ok(Some(mb))
}

struct Reader {
    compat: bool,
}

impl Reader {
    fn config(&self, root: &Node) -> Result<EaseyConfig> {
        let top = Members::new(root, "$", TOP_KEYS)?;
        let job_node = top.get("job").ok_or_else(|| {
            schema(
                ViolationCode::MissingSection,
                "$.job",
                "missing section \"job\"",
            )
        })?;

        // Older documents keep the other sections inside `job`.
        let mut nested: HashMap<&str, &Node> = HashMap::new();
        let mut job_keys = vec!["name", "id", "mail"];
        if self.compat {
            job_keys.extend_from_slice(SECTION_KEYS);
            let job = Members::new(job_node, "$.job", &job_keys)?;
            for key in SECTION_KEYS {
                if let Some(node) = job.get(key) {
                    if top.get(key).is_some() {
                        return Err(schema(
                            ViolationCode::DuplicateKey,
                            &format!("$.job.{key}"),
                            format!("section {key:?} given both inside and outside \"job\""),
                        ));
                    }
                    nested.insert(key, node);
                }
            }
        }
        let section = |key: &str| top.get(key).or_else(|| nested.get(key).copied());

        let job = self.job(job_node, &job_keys)?;
        let data = section("data").map(|n| self.data(n)).transpose()?;
        let deployment = self.deployment(section("deployment").ok_or_else(|| {
            schema(
                ViolationCode::MissingSection,
                "$.deployment",
                "missing section \"deployment\"",
            )
        })?)?;
        let execution = self.execution(section("execution").ok_or_else(|| {
            schema(
                ViolationCode::MissingSection,
                "$.execution",
                "missing section \"execution\"",
            )
        })?)?;
        Ok(EaseyConfig {
            job,
            data,
            deployment,
            execution,
        })
    }

    fn job(&self, node: &Node, keys: &[&str]) -> Result<JobMeta> {
        let m = Members::new(node, "$.job", keys)?;
        // A user supplied id is accepted for shape but never trusted.
        m.opt_string("id")?;
        Ok(JobMeta {
            name: m.string("name")?,
            id: None,
            mail: m.opt_string("mail")?.unwrap_or_default(),
        })
    }

    fn data(&self, node: &Node) -> Result<DataSpec> {
        let m = Members::new(node, "$.data", &["input", "output", "mount"])?;
        let input = self.endpoints(m.get("input"), "$.data.input", "source")?;
        let output = self.endpoints(m.get("output"), "$.data.output", "destination")?;
        let mount_node = m.require("mount")?;
        let mount = match mount_node {
            Node::Str(s) if self.compat => s.clone(),
            Node::Object(_) => {
                let mm = Members::new(mount_node, "$.data.mount", &["container-path"])?;
                mm.string("container-path")?
            }
            other => return Err(wrong_type("$.data.mount", "object", other)),
        };
        Ok(DataSpec {
            input,
            output,
            mount,
        })
    }

    fn endpoints(
        &self,
        node: Option<&Node>,
        path: &str,
        location_key: &str,
    ) -> Result<Vec<TransferEndpoint>> {
        let items = match node {
            None => return Ok(Vec::new()),
            Some(Node::Array(items)) => items,
            Some(other) => return Err(wrong_type(path, "array", other)),
        };
        items
            .iter()
            .enumerate()
            .map(|(i, item)| {
                let p = format!("{path}[{i}]");
                let m = Members::new(item, &p, &[location_key, "protocol", "user", "auth"])?;
                let protocol_text = m.string("protocol")?;
                let protocol = protocol_text.parse::<Protocol>().map_err(|_| {
                    schema(
                        ViolationCode::BadProtocol,
                        &child(&p, "protocol"),
                        format!("protocol must be one of https, scp, ftp, gridftp; found {protocol_text:?}"),
                    )
                })?;
                Ok(TransferEndpoint {
                    location: m.string(location_key)?,
                    protocol,
                    user: m.opt_string("user")?.unwrap_or_default(),
                    auth: m.opt_string("auth")?.filter(|s| !s.is_empty()),
                })
            })
            .collect()
    }

    fn deployment(&self, node: &Node) -> Result<DeploymentSpec> {
        let m = Members::new(
            node,
            "$.deployment",
            &[
                "nodes",
                "ram",
                "cores-per-task",
                "tasks-per-node",
                "clocktime",
            ],
        )?;
        Ok(DeploymentSpec {
            nodes: m.int("nodes")?,
            ram_mb: parse_ram(m.get("ram"), "$.deployment.ram")?,
            cores_per_task: m.int("cores-per-task")?,
            tasks_per_node: m.int("tasks-per-node")?,
            clocktime: Clocktime(m.string("clocktime")?),
        })
    }

    fn execution(&self, node: &Node) -> Result<ExecutionSpec> {
        let steps = match node {
            Node::Array(items) => items
                .iter()
                .enumerate()
                .map(|(i, item)| {
                    let p = format!("$.execution[{i}]");
                    match item {
                        Node::Object(members) if members.len() == 1 => {
                            let (kind, body) = &members[0];
                            self.step(kind, body, &p)
                        }
                        Node::Object(_) => Err(schema(
                            ViolationCode::BadStepKind,
                            &p,
                            "each step must hold exactly one of \"serial\" or \"mpi\"",
                        )),
                        other => Err(wrong_type(&p, "object", other)),
                    }
                })
                .collect::<Result<Vec<_>>>()?,
            Node::Object(members) if self.compat => members
                .iter()
                .enumerate()
                .map(|(i, (kind, body))| self.step(kind, body, &format!("$.execution#{i}")))
                .collect::<Result<Vec<_>>>()?,
            Node::Object(_) => {
                return Err(schema(
                    ViolationCode::WrongType,
                    "$.execution",
                    "execution must be an array of steps (the repeated-key object form needs the lax reader)",
                ))
            }
            other => return Err(wrong_type("$.execution", "array", other)),
        };
        Ok(ExecutionSpec { steps })
    }

    fn step(&self, kind: &str, body: &Node, path: &str) -> Result<ExecutionStep> {
        let p = child(path, kind);
        match kind {
            "serial" => {
                let m = Members::new(body, &p, &["command"])?;
                Ok(ExecutionStep::Serial {
                    command: m.string("command")?,
                })
            }
            "mpi" => {
                let m = Members::new(body, &p, &["command", "mpi-tasks"])?;
                Ok(ExecutionStep::Mpi {
                    command: m.string("command")?,
                    mpi_tasks: m.int("mpi-tasks")?,
                })
            }
            other => Err(schema(
                ViolationCode::BadStepKind,
                &p,
                format!("step kind must be \"serial\" or \"mpi\", found {other:?}"),
            )),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "job": {"name": "t", "id": "", "mail": ""},
        "deployment": {"nodes": 1, "cores-per-task": 1, "tasks-per-node": 1, "clocktime": "00:10:00"},
        "execution": [{"serial": {"command": "true"}}]
    }"#;

    #[test]
    fn missing_data_is_fine() {
        let cfg = parse_config(MINIMAL).unwrap();
        assert!(cfg.data.is_none());
        assert_eq!(cfg.mount(), "/data");
    }

    #[test]
    fn unknown_top_level_key() {
        let text = MINIMAL.replacen("\"job\"", "\"extra\": 1, \"job\"", 1);
        let err = parse_config(&text).unwrap_err();
        assert_eq!(err.code(), Some(ViolationCode::UnknownKey));
    }

    #[test]
    fn missing_deployment() {
        let text = r#"{"job":{"name":"t"},"execution":[{"serial":{"command":"x"}}]}"#;
        let err = parse_config(text).unwrap_err();
        assert_eq!(err.code(), Some(ViolationCode::MissingSection));
    }

    #[test]
    fn syntax_error_has_position() {
        let err = parse_config("{\"job\": ").unwrap_err();
        assert!(
            matches!(err, ConfigError::Syntax { line: 1, .. }),
            "{err:?}"
        );
    }

    #[test]
    fn user_id_is_ignored() {
        let text = MINIMAL.replacen("\"id\": \"\"", "\"id\": \"deadbeefdeadbeef\"", 1);
        assert_eq!(parse_config(&text).unwrap().job.id, None);
    }

    #[test]
    fn ram_forms() {
        let with_ram = |ram: &str| {
            MINIMAL.replacen(
                "\"nodes\": 1,",
                &format!("\"nodes\": 1, \"ram\": {ram},"),
                1,
            )
        };
        let ram = |r: &str| parse_config(&with_ram(r)).map(|c| c.deployment.ram_mb);
        assert_eq!(ram("\"\""), Ok(None));
        assert_eq!(ram("512"), Ok(Some(512)));
        assert_eq!(ram("\"512\""), Ok(Some(512)));
        assert_eq!(ram("\"768M\""), Ok(Some(768)));
        assert_eq!(ram("\"2G\""), Ok(Some(2048)));
        for bad in ["0", "\"0G\"", "-5", "\"12T\"", "\"G\"", "1.5"] {
            let err = ram(bad).unwrap_err();
            assert_eq!(err.code(), Some(ViolationCode::RamMalformed), "{bad}");
        }
    }

    #[test]
    fn bad_clocktime_is_a_value_error() {
        let text = MINIMAL.replacen("00:10:00", "6:00", 1);
        let err = parse_config(&text).unwrap_err();
        assert!(matches!(
            err,
            ConfigError::Value {
                code: ViolationCode::ClocktimeMalformed,
                ..
            }
        ));
        // the unchecked reader keeps it
        let cfg = parse_unchecked(&text, false).unwrap();
        assert_eq!(cfg.deployment.clocktime.as_str(), "6:00");
    }

    #[test]
    fn step_with_two_kinds_rejected() {
        let text = MINIMAL.replacen(
            r#"{"serial": {"command": "true"}}"#,
            r#"{"serial": {"command": "a"}, "mpi": {"command": "b", "mpi-tasks": 2}}"#,
            1,
        );
        let err = parse_config(&text).unwrap_err();
        assert_eq!(err.code(), Some(ViolationCode::BadStepKind));
    }

    #[test]
    fn object_execution_needs_lax() {
        let text = MINIMAL.replacen(
            r#"[{"serial": {"command": "true"}}]"#,
            r#"{"serial": {"command": "a"}, "mpi": {"command": "b", "mpi-tasks": 2}, "serial": {"command": "c"}}"#,
            1,
        );
        assert_eq!(
            parse_config(&text).unwrap_err().code(),
            Some(ViolationCode::WrongType)
        );
        let cfg = parse_config_lax(&text).unwrap();
        let cmds: Vec<_> = cfg.execution.steps.iter().map(|s| s.command()).collect();
        assert_eq!(cmds, ["a", "b", "c"]);
    }

    #[test]
    fn bad_protocol() {
        let text = MINIMAL.replacen(
            "\"deployment\"",
            r#""data": {"input": [{"source": "x", "protocol": "rsync"}], "mount": {"container-path": "/d"}}, "deployment""#,
            1,
        );
        assert_eq!(
            parse_config(&text).unwrap_err().code(),
            Some(ViolationCode::BadProtocol)
        );
    }
}
