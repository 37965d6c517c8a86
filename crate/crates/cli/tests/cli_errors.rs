use std::fs;
use std::path::Path;

use eigenpatch_cli::{run, CliError};

fn call(args: &[&str]) -> Result<(), CliError> {
    let mut full = vec!["eigenpatch"];
    full.extend_from_slice(args);
    run(full)
}

fn small_config(dir: &Path) -> String {
    let p = dir.join("small.txt");
    fs::write(
        &p,
        "# tiny run\ntrain_scenes = 100\nval_scenes = 4\nattack_scenes = 4\ntest_scenes = 4\n",
    )
    .unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn missing_upstream_names_the_command_to_rerun() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_string_lossy().into_owned();
    let err = call(&["train-detector", "--out", &out]).unwrap_err();
    assert_eq!(err.exit_code(), 3);
    assert!(err.to_string().contains("eigenpatch gen-data"), "{err}");
    let err = call(&["pca-fit", "--out", &out]).unwrap_err();
    assert_eq!(err.exit_code(), 3);
    assert!(err.to_string().contains("eigenpatch train-patches"), "{err}");
}

#[test]
fn edited_artifact_is_stale() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_string_lossy().into_owned();
    let cfg = small_config(dir.path());
    call(&["gen-data", "--out", &out, "--config", &cfg]).unwrap();
    let label = fs::read_dir(dir.path().join("data/labels")).unwrap().next().unwrap().unwrap().path();
    fs::write(&label, "0.5 0.5 0.2 0.2\n").unwrap();
    let err = call(&["train-detector", "--out", &out]).unwrap_err();
    assert_eq!(err.exit_code(), 3, "{err}");
    assert!(err.to_string().contains("eigenpatch gen-data"), "{err}");
}

#[test]
fn validation_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_string_lossy().into_owned();
    assert_eq!(call(&["gen-data", "--bogus"]).unwrap_err().exit_code(), 2);
    assert_eq!(call(&["gen-data", "--out", &out, "--scale", "0"]).unwrap_err().exit_code(), 2);
    assert_eq!(call(&["gen-data", "--out", &out, "--k-list", "2,x"]).unwrap_err().exit_code(), 2);
    let bad = dir.path().join("bad.txt");
    fs::write(&bad, "seed = 1\nno_such_key = 3\n").unwrap();
    let err = call(&["gen-data", "--out", &out, "--config", &bad.to_string_lossy()]).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    assert!(err.to_string().contains(":2:"), "{err}");
    let plan = dir.path().join("plan.txt");
    fs::write(&plan, "191 2 3 warm 0.75,1.0 30\n").unwrap();
    let err = call(&["train-patches", "--out", &out, "--plan", &plan.to_string_lossy()]).unwrap_err();
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn gen_data_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        let cfg = small_config(d.path());
        call(&["gen-data", "--out", &d.path().to_string_lossy(), "--config", &cfg, "--seed", "5"]).unwrap();
    }
    let read = |d: &tempfile::TempDir| fs::read(d.path().join("data/scenes.csv")).unwrap();
    assert_eq!(read(&a), read(&b));
    assert!(fs::read_to_string(a.path().join("config.txt")).unwrap().contains("seed = 5"));
}
