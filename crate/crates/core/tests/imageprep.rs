mod common;

use common::strategies::dockerfile;
use common::*;
use easey::digest::sha256_file;
use easey::imageprep::{
    adaptation_lines, build_image, pack_container, transform_dockerfile, ContainerArchive,
    ImageError, MockBuilder, MPI_MARKER,
};
use proptest::prelude::*;

#[test]
fn lulesh_dockerfile_for_supermuc() {
    let p = profile("lrz:supermuc-ng");
    let src = read_fixture("lulesh.Dockerfile");
    let out = transform_dockerfile(&src, &p, "/data").unwrap();
    let text = out.text();
    assert!(!text.contains(MPI_MARKER));
    assert!(text.contains("mpich-3.3.2"));
    assert!(out
        .lines
        .contains(&"RUN mkdir -p /data /lrz/sys".to_owned()));
    assert_eq!(
        out.lines.last().unwrap(),
        "RUN ln -sfn /lrz/sys/etc/libibverbs.d /etc/libibverbs.d"
    );
}

#[test]
fn archive_checksum_matches_disk() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = lulesh();
    let archive = archive_for(&cfg, &profile("test:sim"), tmp.path());
    assert!(archive.path.to_string_lossy().ends_with(".tar.gz"));
    assert_eq!(sha256_file(&archive.path).unwrap(), archive.checksum);
    assert!(archive.verify().unwrap());
    assert_eq!(
        ContainerArchive::from_file(&archive.path).unwrap().checksum,
        archive.checksum
    );

    std::fs::write(&archive.path, b"tampered").unwrap();
    assert!(!archive.verify().unwrap());
}

#[test]
fn failing_build_reports_the_instruction() {
    let tmp = tempfile::tempdir().unwrap();
    let p = profile("test:sim");
    let df = transform_dockerfile(&read_fixture("lulesh.Dockerfile"), &p, "/data").unwrap();
    let err = build_image(
        &df,
        &MockBuilder::failing_on("make"),
        "lulesh.dash",
        tmp.path(),
    )
    .unwrap_err();
    assert!(matches!(err, ImageError::BuildFailed { .. }), "{err:?}");
}

#[test]
fn packing_is_deterministic() {
    let p = profile("test:sim");
    let df = transform_dockerfile(&read_fixture("lulesh.Dockerfile"), &p, "/data").unwrap();
    let sums: Vec<String> = (0..2)
        .map(|_| {
            let tmp = tempfile::tempdir().unwrap();
            let b = MockBuilder::new();
            let image = build_image(&df, &b, "lulesh.dash", tmp.path()).unwrap();
            pack_container(&image, tmp.path(), &b.packer())
                .unwrap()
                .checksum
        })
        .collect();
    assert_eq!(sums[0], sums[1]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn transform_laws((src, has_marker) in dockerfile(), mount in "/[a-z]{1,6}") {
        prop_assume!(!src.trim().is_empty());
        let p = profile("lrz:supermuc-ng");
        let out = transform_dockerfile(&src, &p, &mount).unwrap();
        let input: Vec<&str> = src.lines().collect();
        let markers = usize::from(has_marker);
        let snippet = p.mpi_snippet.len();
        let suffix = adaptation_lines(&p, &mount);

        // line-count law
        prop_assert_eq!(
            out.lines.len(),
            input.len() - markers + markers * snippet + 1 + p.extra_symlinks.len()
        );
        prop_assert!(out.lines.iter().all(|l| !l.contains(MPI_MARKER)));
        prop_assert_eq!(
            out.lines.iter().filter(|l| l.starts_with(&format!("RUN mkdir -p {mount}"))).count(),
            1
        );
        prop_assert!(out.lines.ends_with(&suffix));

        // non-marker lines keep their relative order, and the snippet sits
        // exactly where the marker was
        let mut expected: Vec<String> = Vec::new();
        for l in &input {
            if *l == MPI_MARKER {
                expected.extend(p.mpi_snippet.lines().iter().cloned());
            } else {
                expected.push((*l).to_owned());
            }
        }
        expected.extend(suffix);
        prop_assert_eq!(&out.lines, &expected);

        let again = transform_dockerfile(&out.text(), &p, &mount).unwrap();
        prop_assert_eq!(again, out);
    }
}
