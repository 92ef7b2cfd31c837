mod common;

use common::strategies::valid_config;
use common::*;
use easey::batchgen::{render_batch, JobPaths};
use easey::cluster::{ScriptedOutcome, Simulator};
use easey::config::{assign_job_id, Protocol};
use easey::targets::SchedulerKind;
use proptest::prelude::*;

const TINY: &str = "#!/bin/bash\n#SBATCH --nodes=1\n#SBATCH --ntasks-per-node=2\n#SBATCH --time=00:01:00\necho one\necho two\n";

/// A fixed submission and tick schedule, rendered as one line per event.
fn scripted_run(root: &std::path::Path) -> String {
    let mut sim = Simulator::new(root, SchedulerKind::Slurm).unwrap();
    let lulesh_script = {
        let cfg = lulesh();
        let p = profile("test:sim");
        let paths = JobPaths::new("/w", &"0123456789abcdef".parse().unwrap());
        render_batch(&cfg, &p, &paths).unwrap().full_text
    };
    std::fs::create_dir_all(root.join("w/0123456789abcdef/lulesh.dash")).unwrap();

    sim.submit(TINY, Some("/")).unwrap();
    sim.tick();
    sim.submit(&lulesh_script, Some("/w/0123456789abcdef"))
        .unwrap();
    sim.queue_outcome(ScriptedOutcome::Fail {
        stderr: "segfault\n".into(),
        exit_code: 139,
    });
    sim.submit(TINY, Some("/")).unwrap();
    for _ in 0..4 {
        sim.tick();
    }
    sim.submit(TINY, Some("/")).unwrap();
    sim.tick();

    sim.events()
        .iter()
        .map(|e| format!("{} {} {}->{}\n", e.tick, e.sim_id, e.from, e.to))
        .collect()
}

#[test]
fn event_log_matches_golden() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let log = scripted_run(a.path());
    assert_eq!(log, scripted_run(b.path()));
    assert_eq!(log, read_fixture("golden/sim_events.log"));
}

#[test]
fn ids_increase_per_instance() {
    let tmp = tempfile::tempdir().unwrap();
    let mut sim = Simulator::new(tmp.path(), SchedulerKind::Slurm).unwrap();
    let ids: Vec<u64> = (0..5)
        .map(|_| sim.submit(TINY, None).unwrap().parse().unwrap())
        .collect();
    assert!(ids.windows(2).all(|w| w[0] < w[1]));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn directives_read_back_equal_rendering_inputs(
        mut cfg in valid_config(),
        pbs in any::<bool>(),
    ) {
        // gridftp entries do not render
        if let Some(d) = cfg.data.as_mut() {
            d.input.retain(|e| e.protocol != Protocol::Gridftp);
            d.output.retain(|e| e.protocol != Protocol::Gridftp);
        }
        let (target, dialect) = if pbs {
            ("test:sim-pbs", SchedulerKind::Pbs)
        } else {
            ("test:sim", SchedulerKind::Slurm)
        };
        let p = profile(target);
        let id = assign_job_id(&cfg, chrono::DateTime::UNIX_EPOCH);
        let paths = JobPaths::new(&p.workdir_root, &id);
        let script = render_batch(&cfg, &p, &paths).unwrap();

        let tmp = tempfile::tempdir().unwrap();
        let mut sim = Simulator::new(tmp.path(), dialect).unwrap();
        let sim_id = sim.submit(&script.full_text, Some(&paths.workdir)).unwrap();
        let d = &sim.job(&sim_id).unwrap().directives;
        prop_assert_eq!(d.nodes, Some(cfg.deployment.nodes as u64));
        prop_assert_eq!(d.tasks_per_node, Some(cfg.deployment.tasks_per_node as u64));
        prop_assert_eq!(d.time.as_deref(), Some(cfg.deployment.clocktime.as_str()));
        prop_assert_eq!(d.mem_mb, cfg.deployment.ram_mb);
        prop_assert_eq!(d.stdout.as_deref(), Some(paths.stdout.as_str()));
    }
}
