//! Shared fixtures for the integration tests: simulator-backed engine,
//! mock-built archives and a tiny HTTP server.

#![allow(dead_code)]

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use easey::cluster::{SharedSimulator, SimSession, Simulator};
use easey::config::Protocol;
use easey::config::{parse_config, parse_config_lax, EaseyConfig};
use easey::engine::{Engine, RecordStore};
use easey::imageprep::{
    build_image, pack_container, transform_dockerfile, ContainerArchive, MockBuilder,
};
use easey::staging::{CredentialStore, RetryPolicy, ScpTransport, Stager};
use easey::targets::{load_registry, lookup_target, TargetProfile};

pub mod strategies;

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("fixtures")
        .join(name)
}

pub fn read_fixture(name: &str) -> String {
    std::fs::read_to_string(fixture(name)).unwrap()
}

pub fn profiles_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("profiles")
}

pub fn profile(name: &str) -> TargetProfile {
    lookup_target(&load_registry(&profiles_dir()).unwrap(), name).unwrap()
}

pub fn lulesh() -> EaseyConfig {
    parse_config(&read_fixture("lulesh.json")).unwrap()
}

pub fn lulesh_listing() -> EaseyConfig {
    parse_config_lax(&read_fixture("lulesh_listing.json")).unwrap()
}

/// Transforms, mock-builds and packs the LULESH Dockerfile for `cfg`.
pub fn archive_for(cfg: &EaseyConfig, profile: &TargetProfile, out_dir: &Path) -> ContainerArchive {
    let df =
        transform_dockerfile(&read_fixture("lulesh.Dockerfile"), profile, cfg.mount()).unwrap();
    let builder = MockBuilder::new();
    let image = build_image(&df, &builder, &cfg.image_name(), out_dir).unwrap();
    pack_container(&image, out_dir, &builder.packer()).unwrap()
}

pub struct Harness {
    pub tmp: tempfile::TempDir,
    pub sim: SharedSimulator,
    pub session: SimSession,
    pub engine: Engine,
    pub profile: TargetProfile,
}

impl Harness {
    pub fn new(target: &str) -> Self {
        let tmp = tempfile::tempdir().unwrap();
        let profile = profile(target);
        let sim = Simulator::new(tmp.path().join("cluster"), profile.scheduler)
            .unwrap()
            .shared();
        let session = SimSession::connect(&sim, "tester").unwrap();
        let engine = Self::engine_for(tmp.path(), &sim);
        Harness {
            tmp,
            sim,
            session,
            engine,
            profile,
        }
    }

    /// A fresh engine over the same store and simulator, as after a restart.
    pub fn engine_for(dir: &Path, sim: &SharedSimulator) -> Engine {
        let root = sim.lock().unwrap().root().to_owned();
        let stager = Stager::new(CredentialStore::new(dir))
            .with_retry(RetryPolicy {
                retries: 3,
                base_delay: Duration::ZERO,
            })
            .with_transport(
                Protocol::Scp,
                Box::new(ScpTransport::default().with_loopback("sim", root)),
            );
        Engine::new(RecordStore::open(dir.join("jobs")).unwrap(), stager)
    }

    pub fn archive(&self, cfg: &EaseyConfig) -> ContainerArchive {
        archive_for(cfg, &self.profile, &self.tmp.path().join("out"))
    }

    pub fn tick(&self) {
        self.sim.lock().unwrap().tick();
    }

    /// Host path of a cluster path.
    pub fn host(&self, cluster_path: &str) -> PathBuf {
        self.sim.lock().unwrap().host_path(cluster_path).unwrap()
    }
}

type Routes = Arc<Mutex<HashMap<String, (u16, Vec<u8>)>>>;

/// Serves fixed responses over plain HTTP on a loopback port and records
/// the bodies of PUT requests.
pub struct HttpFixture {
    pub base: String,
    routes: Routes,
    pub uploads: Arc<Mutex<HashMap<String, Vec<u8>>>>,
    pub hits: Arc<Mutex<HashMap<String, usize>>>,
}

impl HttpFixture {
    pub fn start() -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let base = format!("http://{}", listener.local_addr().unwrap());
        let routes: Routes = Arc::default();
        let uploads: Arc<Mutex<HashMap<String, Vec<u8>>>> = Arc::default();
        let hits: Arc<Mutex<HashMap<String, usize>>> = Arc::default();
        let (r, u, h) = (routes.clone(), uploads.clone(), hits.clone());
        std::thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(mut stream) = stream else { continue };
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut request_line = String::new();
                if reader.read_line(&mut request_line).is_err() {
                    continue;
                }
                let mut parts = request_line.split_whitespace();
                let method = parts.next().unwrap_or("").to_owned();
                let path = parts.next().unwrap_or("").to_owned();
                let mut length = 0usize;
                loop {
                    let mut header = String::new();
                    if reader.read_line(&mut header).unwrap_or(0) == 0 || header == "\r\n" {
                        break;
                    }
                    if let Some((k, v)) = header.split_once(':') {
                        if k.eq_ignore_ascii_case("content-length") {
                            length = v.trim().parse().unwrap_or(0);
                        }
                    }
                }
                *h.lock().unwrap().entry(path.clone()).or_default() += 1;
                let (status, body) = if method == "PUT" {
                    let mut body = vec![0; length];
                    let _ = reader.read_exact(&mut body);
                    u.lock().unwrap().insert(path.clone(), body);
                    (201, Vec::new())
                } else {
                    r.lock()
                        .unwrap()
                        .get(&path)
                        .cloned()
                        .unwrap_or((404, b"not found".to_vec()))
                };
                let head = format!(
                    "HTTP/1.1 {status} X\r\nContent-Length: {}\r\nConnection: close\r\n\r\n",
                    body.len()
                );
                let _ = stream.write_all(head.as_bytes());
                let _ = stream.write_all(&body);
            }
        });
        HttpFixture {
            base,
            routes,
            uploads,
            hits,
        }
    }

    pub fn serve(&self, path: &str, status: u16, body: &[u8]) -> String {
        self.routes
            .lock()
            .unwrap()
            .insert(path.to_owned(), (status, body.to_vec()));
        format!("{}{path}", self.base)
    }

    pub fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    pub fn hits(&self, path: &str) -> usize {
        self.hits.lock().unwrap().get(path).copied().unwrap_or(0)
    }
}

/// The LULESH job with two inputs (scp from the simulator's loopback
/// host, https from `http`) and one output pushed back over scp. The MPI
/// step writes the output file into the data folder.
pub fn data_job(http: &HttpFixture, sim_root: &Path) -> EaseyConfig {
    std::fs::create_dir_all(sim_root.join("inputs")).unwrap();
    std::fs::write(sim_root.join("inputs/mesh.dat"), b"mesh-bytes-0123456789").unwrap();
    let url = http.serve("/params.json", 200, br#"{"iterations":1000}"#);
    let text = format!(
        r#"{{
          "job": {{"name": "LULESH:DASH", "id": "", "mail": ""}},
          "data": {{
            "input": [
              {{"source": "sim:/inputs/mesh.dat", "protocol": "scp", "user": "tester", "auth": ""}},
              {{"source": "{url}", "protocol": "https", "user": "", "auth": ""}}
            ],
            "output": [
              {{"destination": "sim:/results/result.tar", "protocol": "scp", "user": "tester", "auth": ""}}
            ],
            "mount": {{"container-path": "/data"}}
          }},
          "deployment": {{"nodes": 1, "cores-per-task": 1, "tasks-per-node": 8, "clocktime": "00:10:00"}},
          "execution": [
            {{"serial": {{"command": "echo start"}}}},
            {{"mpi": {{"command": "ch-run -b $EASEY_DATA:/data -w lulesh.dash -- /built/lulesh -i 10 -s 2", "mpi-tasks": 8}}}},
            {{"serial": {{"command": "echo archived > $EASEY_DATA/result.tar"}}}}
          ]
        }}"#
    );
    parse_config(&text).unwrap()
}
