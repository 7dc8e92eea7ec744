use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"
seed = 3
ensemble_trials = 10

[world]
n_parcels = 300

[features.forest]
n_trees = 10

[models.forest]
n_trees = 15

[models.latent_forest]
n_trees = 15

[models.gbt]
n_rounds = 20

[models.dl_small.train]
epochs = 1
max_pairs_per_epoch = 512

[models.dl_large.net]
image_side = 64
frozen_blocks = 4

[models.dl_large.train]
epochs = 1
max_pairs_per_epoch = 512
"#;

fn landval(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_landval"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_config(dir: &Path, extra: &str) -> String {
    let path = dir.join("run.toml");
    std::fs::write(&path, format!("out_dir = \"out\"\n{SMALL}\n{extra}\n")).unwrap();
    path.display().to_string()
}

#[test]
fn run_dir_depends_on_config_and_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "");
    let a = stdout(&landval(&["run-dir", "--config", &cfg]));
    assert_eq!(a, stdout(&landval(&["run-dir", "--config", &cfg])));
    assert!(
        a.trim()
            .starts_with(&tmp.path().join("out").display().to_string()),
        "{a}"
    );
    assert!(a.trim().ends_with("-seed3"), "{a}");
    let seeded = stdout(&landval(&["run-dir", "--config", &cfg, "--seed", "4"]));
    assert!(seeded.trim().ends_with("-seed4"));
    let tweaked = stdout(&landval(&[
        "run-dir",
        "--config",
        &cfg,
        "--set",
        "pairs.tau=0.25",
    ]));
    assert_ne!(a, tweaked);
}

#[test]
fn config_errors_exit_with_two() {
    let out = landval(&["run-dir", "--set", "pairs.bogus=1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("bogus"), "{}", stderr(&out));
    let out = landval(&["run-dir", "--set", "pairs.tau=-1"]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    let out = landval(&["run-dir", "--config", "/nonexistent/run.toml"]);
    assert_ne!(out.status.code(), Some(0));
}

#[test]
fn missing_artifact_names_the_prerequisite() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "");
    let out = landval(&["build-pairs", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr(&out);
    assert!(
        err.contains("landval generate") && err.contains("parcels.csv"),
        "{err}"
    );
    assert!(landval(&["generate", "--config", &cfg]).status.success());
    let err = stderr(&landval(&["tune-ensemble", "--config", &cfg]));
    assert!(err.contains("landval train"), "{err}");
}

/// Copies a synthetic parcel table and appends one parcel far from every other.
fn parcels_with_outlier(src: &Path, dst: &Path) {
    let text = std::fs::read_to_string(src).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = |name: &str| header.iter().position(|h| *h == name).unwrap();
    let template = lines.next().unwrap();
    let mut fields: Vec<String> = template.split(',').map(str::to_string).collect();
    fields[col("id")] = "ISOLATED".into();
    let lat: f64 = fields[col("lat")].parse().unwrap();
    fields[col("lat")] = (lat + 1.0).to_string();
    let mut out = text.clone();
    if !out.ends_with('\n') {
        out.push('\n');
    }
    out.push_str(&fields.join(","));
    out.push('\n');
    std::fs::write(dst, out).unwrap();
}

#[test]
fn isolated_parcel_is_reported_uncovered() {
    let tmp = tempfile::tempdir().unwrap();
    let synth_cfg = write_config(tmp.path(), "");
    assert!(landval(&["generate", "--config", &synth_cfg])
        .status
        .success());
    let synth_dir = stdout(&landval(&["run-dir", "--config", &synth_cfg]))
        .trim()
        .to_string();
    let synth_dir = Path::new(&synth_dir);

    let input = tmp.path().join("input");
    std::fs::create_dir_all(&input).unwrap();
    parcels_with_outlier(&synth_dir.join("parcels.csv"), &input.join("parcels.csv"));
    let cfg = write_config(
        &input,
        &format!(
            "[input]\nparcels = \"parcels.csv\"\ntiles = {:?}\n",
            synth_dir.join("tiles").display().to_string()
        ),
    );
    let all = landval(&["all", "--config", &cfg]);
    assert!(all.status.success(), "{}", stderr(&all));

    let out = landval(&[
        "predict", "--config", &cfg, "--parcel", "ISOLATED", "--theta", "0",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("covered: false"), "{text}");
    assert!(text.contains("candidates: 0"), "{text}");
    assert!(!text.contains("predicted price"), "{text}");

    let out = landval(&["predict", "--config", &cfg, "--parcel", "nope"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn example_config_parses() {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/example.toml");
    let out = landval(&["run-dir", "--config", path]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).trim().ends_with("-seed42"));
}
