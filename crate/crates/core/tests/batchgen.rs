mod common;

use common::strategies::valid_config;
use common::*;
use easey::batchgen::{render_batch, BatchError, JobPaths};
use easey::config::{parse_config, Protocol, ViolationCode};
use proptest::prelude::*;

fn paths_for(target: &str) -> JobPaths {
    JobPaths::new(
        &profile(target).workdir_root,
        &"0123456789abcdef".parse().unwrap(),
    )
}

#[test]
fn golden_scripts() {
    for (target, golden) in [
        ("lrz:supermuc-ng", "golden/lulesh.sbatch"),
        ("test:sim-pbs", "golden/lulesh.pbs"),
    ] {
        for cfg in [lulesh(), lulesh_listing()] {
            let script = render_batch(&cfg, &profile(target), &paths_for(target)).unwrap();
            assert_eq!(script.full_text, read_fixture(golden), "{target}");
        }
    }
}

#[test]
fn gridftp_entries_do_not_render() {
    let mut cfg = parse_config(&read_fixture("with_data.json")).unwrap();
    cfg.data.as_mut().unwrap().input[0].protocol = Protocol::Gridftp;
    assert_eq!(
        render_batch(&cfg, &profile("test:sim"), &paths_for("test:sim")).unwrap_err(),
        BatchError::InvalidConfig(ViolationCode::ProtocolUnsupportedGridftp)
    );
}

#[test]
fn data_jobs_export_the_folder() {
    let cfg = parse_config(&read_fixture("with_data.json")).unwrap();
    let script = render_batch(&cfg, &profile("test:sim"), &paths_for("test:sim")).unwrap();
    assert!(script
        .prolog_lines
        .contains(&"export EASEY_DATA=/scratch/easey/0123456789abcdef/data".to_owned()));
    assert!(script
        .directive_lines
        .contains(&"#SBATCH --mem=4096M".to_owned()));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn rendering_is_deterministic_and_keeps_every_step(mut cfg in valid_config(), pbs in any::<bool>()) {
        if let Some(d) = cfg.data.as_mut() {
            d.input.retain(|e| e.protocol != Protocol::Gridftp);
            d.output.retain(|e| e.protocol != Protocol::Gridftp);
        }
        let target = if pbs { "test:sim-pbs" } else { "test:sim" };
        let p = profile(target);
        let a = render_batch(&cfg, &p, &paths_for(target)).unwrap();
        let b = render_batch(&cfg, &p, &paths_for(target)).unwrap();
        prop_assert_eq!(&a.full_text, &b.full_text);

        // everything after the blank separator is prolog then commands
        let body: Vec<&str> = a.full_text.split_once("\n\n").unwrap().1.lines().collect();
        prop_assert_eq!(body.len(), a.prolog_lines.len() + cfg.execution.steps.len());
        prop_assert_eq!(a.command_lines.len(), cfg.execution.steps.len());
        for (line, step) in a.command_lines.iter().zip(&cfg.execution.steps) {
            prop_assert!(line.ends_with(step.command()));
        }
    }
}
