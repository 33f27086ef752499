//! End-to-end checks of the command-line interface: outputs, exit codes and
//! repeatability.

use std::path::Path;

use shs_moments::cli::{main_with_args, Manifest, MANIFEST};
use shs_moments::config::ScenarioFile;

fn run(out: &Path, args: &[&str]) -> i32 {
    let mut full = vec![
        "shs-moments".to_string(),
        "--quiet".into(),
        "--out".into(),
        out.display().to_string(),
    ];
    full.extend(args.iter().map(|s| s.to_string()));
    main_with_args(full)
}

fn manifest(out: &Path) -> Manifest {
    Manifest::parse(&std::fs::read_to_string(out.join(MANIFEST)).unwrap())
}

fn short_config(dir: &Path, edit: impl FnOnce(&mut ScenarioFile)) -> String {
    let mut f = ScenarioFile::default();
    f.propagation.t_end = 0.8;
    f.mc.trajectories = 2000;
    f.filter.snapshot_times = vec![0.4, 0.8];
    edit(&mut f);
    let p = dir.join("scenario.toml");
    std::fs::write(&p, f.to_toml()).unwrap();
    p.display().to_string()
}

#[test]
fn propagate_mc_compare_map_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = short_config(tmp.path(), |_| {});
    let [prop, mc, cmp, map] = ["prop", "mc", "cmp", "map"].map(|n| tmp.path().join(n));
    assert_eq!(run(&prop, &["propagate", "--config", &cfg]), 0);
    for f in ["moments.csv", "med_checkpoints.jsonl", "flux.csv", MANIFEST] {
        assert!(prop.join(f).exists(), "{f}");
    }
    let m = manifest(&prop);
    assert_eq!(m.get("status"), Some("ok"));
    assert_eq!(m.get("exit_code"), Some("0"));

    assert_eq!(
        run(&mc, &["mc", "--config", &cfg, "--trajectories", "1000"]),
        0
    );
    assert!(mc.join("excess_mass.csv").exists());
    assert_eq!(manifest(&mc).get("trajectories"), Some("1000"));

    let pm = prop.join("moments.csv").display().to_string();
    let mm = mc.join("mc_moments.csv").display().to_string();
    assert_eq!(run(&cmp, &["compare", "--propagated", &pm, "--mc", &mm]), 0);
    let summary = std::fs::read_to_string(cmp.join("compare_summary.txt")).unwrap();
    assert!(summary.starts_with("max="), "{summary}");
    let heat = std::fs::read_to_string(cmp.join("heatmap.csv")).unwrap();
    assert_eq!(heat.lines().count(), 6);
    assert!(heat.starts_with("alpha1,a2_0,a2_1,a2_2,a2_3,a2_4\n"));

    let ck = prop.join("med_checkpoints.jsonl").display().to_string();
    assert_eq!(run(&map, &["map", "--checkpoint", &ck, "--grid", "50"]), 0);
    let rows = std::fs::read_to_string(map.join("map.csv")).unwrap();
    assert!(rows.starts_with("t,x1,x2,exponent,degenerate_flat\n"));
    let n_ck = std::fs::read_to_string(prop.join("med_checkpoints.jsonl"))
        .unwrap()
        .lines()
        .count();
    assert_eq!(rows.lines().count(), n_ck + 1);
}

#[test]
fn filter_outputs_and_seed_reproducibility() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = short_config(tmp.path(), |_| {});
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let c = tmp.path().join("c");
    assert_eq!(run(&a, &["filter", "--config", &cfg, "--seed", "5"]), 0);
    assert_eq!(run(&b, &["filter", "--config", &cfg, "--seed", "5"]), 0);
    assert_eq!(run(&c, &["filter", "--config", &cfg, "--seed", "6"]), 0);
    for f in [
        "filter.csv",
        "measurements.csv",
        "truth.csv",
        "filter_checkpoints.jsonl",
        "filter_summary.txt",
    ] {
        let x = std::fs::read(a.join(f)).unwrap();
        assert_eq!(x, std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    assert_ne!(
        std::fs::read(a.join("measurements.csv")).unwrap(),
        std::fs::read(c.join("measurements.csv")).unwrap()
    );
    let summary = std::fs::read_to_string(a.join("filter_summary.txt")).unwrap();
    assert!(summary.contains("position_rmse="), "{summary}");
    assert_eq!(manifest(&a).get("seed"), Some("5"));
    let snaps = std::fs::read_to_string(a.join("filter_checkpoints.jsonl")).unwrap();
    assert_eq!(snaps.lines().count(), 2);
}

#[test]
fn loaded_schedule_is_used() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("sched.csv"), "t,y\n0.2,1.3\n0.4,1.0\n").unwrap();
    let cfg = short_config(tmp.path(), |f| f.filter.schedule = Some("sched.csv".into()));
    let out = tmp.path().join("out");
    assert_eq!(run(&out, &["filter", "--config", &cfg]), 0);
    let m = std::fs::read_to_string(out.join("measurements.csv")).unwrap();
    assert_eq!(m.lines().count(), 3);
    assert!(!out.join("truth.csv").exists());
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.toml");
    std::fs::write(&bad, "[model]\nrestitution = 1.5\n").unwrap();
    let out = tmp.path().join("o1");
    assert_eq!(
        run(&out, &["propagate", "--config", &bad.display().to_string()]),
        2
    );
    assert_eq!(manifest(&out).get("exit_code"), Some("2"));

    let unknown = tmp.path().join("unknown.toml");
    std::fs::write(&unknown, "[model]\ncolour = 1\n").unwrap();
    assert_eq!(
        run(
            &tmp.path().join("o2"),
            &["propagate", "--config", &unknown.display().to_string()]
        ),
        2
    );

    let missing = tmp.path().join("nope.toml").display().to_string();
    assert_eq!(
        run(&tmp.path().join("o3"), &["propagate", "--config", &missing]),
        4
    );

    // A measurement far outside the reachable set leaves no posterior mass.
    std::fs::write(tmp.path().join("far.csv"), "t,y\n0.2,40\n").unwrap();
    let cfg = short_config(tmp.path(), |f| f.filter.schedule = Some("far.csv".into()));
    let out = tmp.path().join("o4");
    assert_eq!(run(&out, &["filter", "--config", &cfg]), 3);
    assert_eq!(manifest(&out).get("status"), Some("error"));

    assert_eq!(main_with_args(["shs-moments", "frobnicate"]), 2);
}
