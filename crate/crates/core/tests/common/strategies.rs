//! proptest generators for configs and Dockerfiles.

use proptest::prelude::*;
use proptest::sample::select;
use serde_json::Value;

use easey::config::{
    Clocktime, DataSpec, DeploymentSpec, EaseyConfig, ExecutionSpec, ExecutionStep, JobMeta,
    Protocol, TransferEndpoint,
};
use easey::imageprep::MPI_MARKER;

fn endpoint() -> impl Strategy<Value = TransferEndpoint> {
    (
        "[a-z]{1,8}:/[a-z]{1,8}(/[a-z0-9.]{1,6})?",
        select(vec![
            Protocol::Https,
            Protocol::Scp,
            Protocol::Ftp,
            Protocol::Gridftp,
        ]),
        "[a-z]{0,6}",
        proptest::option::of("[a-z_.~/]{1,10}"),
    )
        .prop_map(|(location, protocol, user, auth)| TransferEndpoint {
            location,
            protocol,
            user,
            auth,
        })
}

fn data() -> impl Strategy<Value = DataSpec> {
    (
        proptest::collection::vec(endpoint(), 0..3),
        proptest::collection::vec(endpoint(), 0..3),
        "/[a-z]{1,8}(/[a-z]{1,4})?",
    )
        .prop_map(|(input, output, mount)| DataSpec {
            input,
            output,
            mount,
        })
}

fn step() -> impl Strategy<Value = ExecutionStep> {
    let command = "[a-z][a-z0-9 ./=$_-]{0,24}";
    prop_oneof![
        command.prop_map(|command| ExecutionStep::Serial { command }),
        (command, 1i64..100_000)
            .prop_map(|(command, mpi_tasks)| ExecutionStep::Mpi { command, mpi_tasks }),
    ]
}

/// Configs that the strict reader accepts.
pub fn valid_config() -> impl Strategy<Value = EaseyConfig> {
    (
        "[A-Za-z0-9][A-Za-z0-9:_ .-]{0,15}",
        prop_oneof![Just(String::new()), "[a-z]{1,6}@[a-z]{1,6}\\.(org|de|com)"],
        proptest::option::of(data()),
        (
            1i64..2000,
            proptest::option::of(1u64..1_000_000),
            1i64..64,
            1i64..128,
        ),
        "[0-9]{2}:[0-5][0-9]:[0-5][0-9]",
        proptest::collection::vec(step(), 1..6),
    )
        .prop_map(
            |(name, mail, data, (nodes, ram_mb, cores_per_task, tasks_per_node), clock, steps)| {
                EaseyConfig {
                    job: JobMeta {
                        name,
                        id: None,
                        mail,
                    },
                    data,
                    deployment: DeploymentSpec {
                        nodes,
                        ram_mb,
                        cores_per_task,
                        tasks_per_node,
                        clocktime: Clocktime(clock),
                    },
                    execution: ExecutionSpec { steps },
                }
            },
        )
}

/// Replacement values that are wrong in type or range for most fields.
fn odd_value() -> impl Strategy<Value = Value> {
    prop_oneof![
        Just(Value::Null),
        Just(Value::Bool(true)),
        (-5i64..3).prop_map(Value::from),
        Just(Value::from(1.5)),
        Just(Value::from("")),
        Just(Value::from("46")),
        Just(Value::from("-1")),
        Just(Value::from("12G")),
        Just(Value::from("25:61:00")),
        Just(Value::from("gridftp")),
        Just(Value::from("relative/path")),
        Just(Value::Array(vec![])),
        Just(serde_json::json!({"serial": {"command": "x"}, "mpi": {"command": "y"}})),
        Just(serde_json::json!({})),
    ]
}

#[derive(Debug, Clone)]
pub enum Mutation {
    /// Replace the value at the n-th node (pre-order) with another value.
    Replace(usize, Value),
    /// Remove the n-th object member found in pre-order.
    RemoveKey(usize),
    /// Insert an unknown key into the n-th object.
    AddKey(usize, String),
    /// Cut the text at a relative position.
    Truncate(f64),
    /// Overwrite one byte of the text.
    Splice(f64, char),
    /// Delete a byte range.
    DeleteRange(f64, usize),
}

pub fn mutation() -> impl Strategy<Value = Mutation> {
    prop_oneof![
        4 => (0usize..64, odd_value()).prop_map(|(i, v)| Mutation::Replace(i, v)),
        2 => (0usize..32).prop_map(Mutation::RemoveKey),
        1 => (0usize..16, "[a-z-]{1,8}").prop_map(|(i, k)| Mutation::AddKey(i, k)),
        1 => (0.0f64..1.0).prop_map(Mutation::Truncate),
        2 => (0.0f64..1.0, select(vec!['{', '}', '[', ']', ',', ':', '"', 'x', '0', '\\', '\u{e9}']))
            .prop_map(|(p, c)| Mutation::Splice(p, c)),
        1 => (0.0f64..1.0, 1usize..20).prop_map(|(p, n)| Mutation::DeleteRange(p, n)),
    ]
}

#[derive(Debug, Clone)]
enum Seg {
    Key(String),
    Index(usize),
}

fn collect_paths(v: &Value, here: &mut Vec<Seg>, out: &mut Vec<Vec<Seg>>) {
    out.push(here.clone());
    match v {
        Value::Object(m) => {
            for (k, c) in m {
                here.push(Seg::Key(k.clone()));
                collect_paths(c, here, out);
                here.pop();
            }
        }
        Value::Array(a) => {
            for (i, c) in a.iter().enumerate() {
                here.push(Seg::Index(i));
                collect_paths(c, here, out);
                here.pop();
            }
        }
        _ => {}
    }
}

/// Pre-order paths of every node in the tree.
fn paths(v: &Value) -> Vec<Vec<Seg>> {
    let mut out = Vec::new();
    collect_paths(v, &mut Vec::new(), &mut out);
    out
}

fn at_mut<'a>(mut v: &'a mut Value, path: &[Seg]) -> &'a mut Value {
    for seg in path {
        v = match seg {
            Seg::Key(k) => &mut v[k.as_str()],
            Seg::Index(i) => &mut v[*i],
        };
    }
    v
}

fn object_paths(v: &Value, non_empty: bool) -> Vec<Vec<Seg>> {
    paths(v)
        .into_iter()
        .filter(|p| {
            let mut node = v;
            for seg in p {
                node = match seg {
                    Seg::Key(k) => &node[k.as_str()],
                    Seg::Index(i) => &node[*i],
                };
            }
            node.as_object()
                .is_some_and(|m| !non_empty || !m.is_empty())
        })
        .collect()
}

fn char_floor(s: &str, pos: f64) -> usize {
    let mut i = ((s.len() as f64) * pos) as usize;
    while i > 0 && !s.is_char_boundary(i) {
        i -= 1;
    }
    i.min(s.len())
}

/// Applies a mutation to a document. Structural mutations work on the JSON
/// tree; the others damage the text directly.
pub fn apply(text: &str, m: &Mutation) -> String {
    let tree = serde_json::from_str::<Value>(text);
    match (m, tree) {
        (Mutation::Replace(i, new), Ok(mut v)) => {
            let all = paths(&v);
            *at_mut(&mut v, &all[i % all.len()]) = new.clone();
            v.to_string()
        }
        (Mutation::RemoveKey(i), Ok(mut v)) => {
            let objects = object_paths(&v, true);
            if !objects.is_empty() {
                let m = at_mut(&mut v, &objects[i % objects.len()])
                    .as_object_mut()
                    .unwrap();
                let key = m.keys().nth(i % m.len()).cloned().unwrap();
                m.remove(&key);
            }
            v.to_string()
        }
        (Mutation::AddKey(i, key), Ok(mut v)) => {
            let objects = object_paths(&v, false);
            if let Some(p) = objects.get(i % objects.len().max(1)) {
                at_mut(&mut v, p)
                    .as_object_mut()
                    .unwrap()
                    .insert(key.clone(), Value::from(1));
            }
            v.to_string()
        }
        (Mutation::Truncate(p), _) => text[..char_floor(text, *p)].to_owned(),
        (Mutation::Splice(p, c), _) => {
            let at = char_floor(text, *p);
            let mut s = text.to_owned();
            if at < s.len() {
                let len = s[at..].chars().next().unwrap().len_utf8();
                s.replace_range(at..at + len, &c.to_string());
            } else {
                s.push(*c);
            }
            s
        }
        (Mutation::DeleteRange(p, n), _) => {
            let at = char_floor(text, *p);
            let end = char_floor(text, ((at + n) as f64 / text.len().max(1) as f64).min(1.0));
            let mut s = text.to_owned();
            s.replace_range(at..end.max(at), "");
            s
        }
        (_, Err(_)) => text.to_owned(),
    }
}

/// One logical Dockerfile line, possibly spread over several physical
/// lines with continuations. Never contains the marker.
fn logical_line() -> impl Strategy<Value = Vec<String>> {
    prop_oneof![
        "FROM [a-z]{2,8}:[0-9]{2}\\.[0-9]{2}".prop_map(|l| vec![l]),
        "RUN [a-z -]{1,20}".prop_map(|l| vec![l]),
        (
            "RUN [a-z ]{1,10}",
            proptest::collection::vec("[a-z ]{1,12}", 1..4)
        )
            .prop_map(|(head, rest)| {
                let mut lines = vec![format!("{head} \\")];
                let n = rest.len();
                for (i, r) in rest.into_iter().enumerate() {
                    let tail = if i + 1 < n { " \\" } else { "" };
                    lines.push(format!("    && {r}{tail}"));
                }
                lines
            }),
        "ENV [A-Z]{1,5}=[a-z0-9]{1,5}".prop_map(|l| vec![l]),
        "# [a-z ]{0,16}".prop_map(|l| vec![l]),
        "WORKDIR /[a-z]{1,6}".prop_map(|l| vec![l]),
        "COPY [a-z.]{1,6} /[a-z]{1,6}".prop_map(|l| vec![l]),
        Just(vec![String::new()]),
        "CMD \\[\"/[a-z]{1,8}\"\\]".prop_map(|l| vec![l]),
    ]
}

/// A Dockerfile with zero or one marker line, the marker sitting on a
/// logical-line boundary. Returns the text and whether it has a marker.
pub fn dockerfile() -> impl Strategy<Value = (String, bool)> {
    (
        proptest::collection::vec(logical_line(), 1..20),
        proptest::option::of(any::<prop::sample::Index>()),
        any::<bool>(),
    )
        .prop_map(|(mut units, marker, trailing_newline)| {
            let has = marker.is_some();
            if let Some(ix) = marker {
                let at = ix.index(units.len() + 1);
                units.insert(at, vec![MPI_MARKER.to_owned()]);
            }
            let mut text = units.concat().join("\n");
            if trailing_newline {
                text.push('\n');
            }
            (text, has)
        })
}
