//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Each exported function has a plain Rust twin in [`ops`] so the logic can
//! be tested natively; the wasm wrappers only convert errors.

use wasm_bindgen::prelude::*;

pub mod ops {
    use std::path::Path;

    use chrono::DateTime;
    use easey::batchgen::{render_batch, JobPaths};
    use easey::config::{assign_job_id, parse_config, parse_config_lax, ConfigError, JobId};
    use easey::imageprep::transform_dockerfile;
    use easey::metrics::{parse_fom_table, render_report, report_rows};
    use easey::targets::{TargetProfile, TargetRegistry};

    pub const SAMPLE_DOCKERFILE: &str = include_str!("../../core/fixtures/lulesh.Dockerfile");
    pub const SAMPLE_CONFIG: &str = include_str!("../../core/fixtures/lulesh_listing.json");
    pub const SAMPLE_FOM_TABLE: &str = include_str!("../../core/fixtures/lulesh_fom.csv");
    const SUPERMUC: &str = include_str!("../../core/profiles/lrz-supermuc-ng.json");

    /// Built-in simulator targets plus the shipped SuperMUC-NG profile.
    pub fn registry() -> TargetRegistry {
        let mut reg = TargetRegistry::builtin();
        let profile = TargetProfile::from_json(SUPERMUC).expect("shipped profile parses");
        reg.insert(profile, Path::new("lrz-supermuc-ng.json"))
            .expect("shipped profile is unique");
        reg
    }

    pub fn target_names() -> Vec<String> {
        registry().names().map(str::to_owned).collect()
    }

    fn profile(target: &str) -> Result<TargetProfile, String> {
        registry()
            .lookup(target)
            .cloned()
            .map_err(|e| e.to_string())
    }

    pub fn adapt_dockerfile(src: &str, target: &str, mount: &str) -> Result<String, String> {
        let mount = if mount.trim().is_empty() {
            "/data"
        } else {
            mount.trim()
        };
        transform_dockerfile(src, &profile(target)?, mount)
            .map(|df| df.text())
            .map_err(|e| e.to_string())
    }

    /// Renders the batch script for a config. Without an explicit id the
    /// job id is derived from the config alone, so the output is stable.
    pub fn render_script(config: &str, target: &str, job_id: &str) -> Result<String, String> {
        let cfg = match parse_config(config) {
            Ok(cfg) => cfg,
            Err(strict) => match parse_config_lax(config) {
                Ok(cfg) => cfg,
                Err(e @ (ConfigError::Schema { .. } | ConfigError::Value { .. })) => {
                    return Err(e.to_string())
                }
                Err(ConfigError::Syntax { .. }) => return Err(strict.to_string()),
            },
        };
        let id: JobId = if job_id.trim().is_empty() {
            assign_job_id(&cfg, DateTime::UNIX_EPOCH)
        } else {
            job_id.trim().parse()?
        };
        let p = profile(target)?;
        let paths = JobPaths::new(&p.workdir_root, &id);
        render_batch(&cfg, &p, &paths)
            .map(|s| s.full_text)
            .map_err(|e| e.to_string())
    }

    pub fn fom_report(table: &str) -> Result<String, String> {
        let samples = parse_fom_table(table).map_err(|e| e.to_string())?;
        report_rows(&samples)
            .map(|rows| render_report(&rows))
            .map_err(|e| e.to_string())
    }
}

fn js(r: Result<String, String>) -> Result<String, JsError> {
    r.map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = targetNames)]
pub fn target_names() -> Vec<String> {
    ops::target_names()
}

#[wasm_bindgen(js_name = sampleDockerfile)]
pub fn sample_dockerfile() -> String {
    ops::SAMPLE_DOCKERFILE.to_owned()
}

#[wasm_bindgen(js_name = sampleConfig)]
pub fn sample_config() -> String {
    ops::SAMPLE_CONFIG.to_owned()
}

#[wasm_bindgen(js_name = sampleFomTable)]
pub fn sample_fom_table() -> String {
    ops::SAMPLE_FOM_TABLE.to_owned()
}

/// Replaces the MPI marker and appends the mount and symlink lines.
#[wasm_bindgen(js_name = adaptDockerfile)]
pub fn adapt_dockerfile(src: &str, target: &str, mount: &str) -> Result<String, JsError> {
    js(ops::adapt_dockerfile(src, target, mount))
}

#[wasm_bindgen(js_name = renderScript)]
pub fn render_script(config: &str, target: &str, job_id: &str) -> Result<String, JsError> {
    js(ops::render_script(config, target, job_id))
}

#[wasm_bindgen(js_name = fomReport)]
pub fn fom_report(table: &str) -> Result<String, JsError> {
    js(ops::fom_report(table))
}
