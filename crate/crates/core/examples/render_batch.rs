//! Prints the batch script for a job config on a target.
//!
//! ```text
//! cargo run -p easey-core --example render_batch -- fixtures/lulesh.json lrz:supermuc-ng
//! ```

use std::path::Path;

use easey::batchgen::{render_batch, JobPaths};
use easey::config::{parse_config_lax, JobId};
use easey::targets::{load_registry, lookup_target};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let config = args
        .next()
        .ok_or("usage: render_batch <config.json> <target> [job-id]")?;
    let target = args
        .next()
        .ok_or("usage: render_batch <config.json> <target> [job-id]")?;
    let id: JobId = args
        .next()
        .unwrap_or_else(|| "0123456789abcdef".into())
        .parse()?;

    let cfg = parse_config_lax(&std::fs::read_to_string(config)?)?;
    let profiles = Path::new(env!("CARGO_MANIFEST_DIR")).join("profiles");
    let profile = lookup_target(&load_registry(&profiles)?, &target)?;
    let script = render_batch(&cfg, &profile, &JobPaths::new(&profile.workdir_root, &id))?;
    print!("{}", script.full_text);
    Ok(())
}
