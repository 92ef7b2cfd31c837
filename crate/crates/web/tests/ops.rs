use easey_web::ops;

const GOLDEN_SBATCH: &str = include_str!("../../core/fixtures/golden/lulesh.sbatch");
const GOLDEN_PBS: &str = include_str!("../../core/fixtures/golden/lulesh.pbs");

#[test]
fn registry_has_simulators_and_supermuc() {
    let names = ops::target_names();
    for want in ["lrz:supermuc-ng", "test:sim", "test:sim-pbs"] {
        assert!(
            names.iter().any(|n| n == want),
            "{want} missing from {names:?}"
        );
    }
}

#[test]
fn samples_render_like_the_golden_scripts() {
    let id = "0123456789abcdef";
    let sbatch = ops::render_script(ops::SAMPLE_CONFIG, "lrz:supermuc-ng", id).unwrap();
    assert_eq!(sbatch, GOLDEN_SBATCH);
    let pbs = ops::render_script(ops::SAMPLE_CONFIG, "test:sim-pbs", id).unwrap();
    assert_eq!(pbs, GOLDEN_PBS);
}

#[test]
fn blank_job_id_is_stable() {
    let a = ops::render_script(ops::SAMPLE_CONFIG, "test:sim", "").unwrap();
    let b = ops::render_script(ops::SAMPLE_CONFIG, "test:sim", "  ").unwrap();
    assert_eq!(a, b);
    assert!(a.starts_with("#!/bin/bash\n#SBATCH"));
}

#[test]
fn render_errors_are_messages() {
    let err = ops::render_script("{", "test:sim", "").unwrap_err();
    assert!(!err.is_empty());
    let err = ops::render_script(ops::SAMPLE_CONFIG, "nowhere:x", "").unwrap_err();
    assert!(err.contains("nowhere:x"), "{err}");
    let err = ops::render_script(ops::SAMPLE_CONFIG, "test:sim", "not an id!").unwrap_err();
    assert!(!err.is_empty());
}

#[test]
fn dockerfile_sample_is_adapted() {
    let out = ops::adapt_dockerfile(ops::SAMPLE_DOCKERFILE, "lrz:supermuc-ng", "").unwrap();
    assert!(ops::SAMPLE_DOCKERFILE.contains(easey::imageprep::MPI_MARKER));
    assert!(
        !out.contains(easey::imageprep::MPI_MARKER),
        "marker left behind:\n{out}"
    );
    assert!(
        out.lines()
            .any(|l| l.contains("mkdir") && l.contains("/data")),
        "{out}"
    );
    let again = ops::adapt_dockerfile(ops::SAMPLE_DOCKERFILE, "lrz:supermuc-ng", "/data").unwrap();
    assert_eq!(out, again);
    let elsewhere =
        ops::adapt_dockerfile(ops::SAMPLE_DOCKERFILE, "lrz:supermuc-ng", "/scratch").unwrap();
    assert!(elsewhere.contains("/scratch"));
}

#[test]
fn fom_sample_reports_each_size() {
    let report = ops::fom_report(ops::SAMPLE_FOM_TABLE).unwrap();
    for delta in ["+0.71", "+0.78", "-3.65", "-2.44", "-0.71", "-1.67"] {
        assert!(report.contains(delta), "{delta} missing:\n{report}");
    }
    assert!(ops::fom_report("p,cores\n1,2\n").is_err());
}
