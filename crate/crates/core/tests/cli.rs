use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use flatbasin::cli::{load_records, summarize, ExperimentConfig, RunRecord};
use flatbasin::metrics::aggregate;
use serde_json::{json, Value};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_flatbasin"));
    c.env_remove("FLATBASIN_OUT");
    c
}

fn flatbasin(args: &[&str], dir: &Path) -> Output {
    bin().args(args).current_dir(dir).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn tiny_config() -> Value {
    json!({
        "dataset": {
            "generator": "split_blobs",
            "num_tasks": 3, "classes_per_task": 2, "dim": 4,
            "samples_per_class": 20, "separation": 4.0, "noise": 1.0
        },
        "model": { "hidden_dims": [6], "activation": "tanh" },
        "methods": [
            { "method": "finetune", "lr": 0.1, "epochs": 1 },
            { "method": "er", "lr": 0.1, "epochs": 1 }
        ],
        "seeds": [3]
    })
}

fn write_config(dir: &Path, cfg: &Value) -> PathBuf {
    let path = dir.join("config.json");
    std::fs::write(&path, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    path
}

fn run_ok(dir: &Path, cfg: &Value, extra: &[&str]) -> PathBuf {
    write_config(dir, cfg);
    let out = dir.join("out");
    let mut args = vec!["run", "--config", "config.json", "--out", "out"];
    args.extend_from_slice(extra);
    let o = flatbasin(&args, dir);
    assert!(o.status.success(), "{}", stderr(&o));
    out
}

#[test]
fn empty_seed_list_exits_2_with_field_path() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config();
    cfg["seeds"] = json!([]);
    write_config(dir.path(), &cfg);
    let o = flatbasin(&["run", "--config", "config.json", "--out", "out"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("seeds"), "{}", stderr(&o));
}

#[test]
fn invalid_field_reports_its_path() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config();
    cfg["methods"][1]["lr"] = json!(-1.0);
    write_config(dir.path(), &cfg);
    let o = flatbasin(&["run", "--config", "config.json"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("methods[1].lr"), "{}", stderr(&o));

    cfg = tiny_config();
    cfg["model"]["hidden_dims"] = json!("wide");
    write_config(dir.path(), &cfg);
    let o = flatbasin(&["run", "--config", "config.json"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("model.hidden_dims"), "{}", stderr(&o));
}

#[test]
fn unknown_key_and_bad_flags_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config();
    cfg["learning_rate"] = json!(0.1);
    write_config(dir.path(), &cfg);
    assert_eq!(flatbasin(&["run", "--config", "config.json"], dir.path()).status.code(), Some(2));
    assert_eq!(flatbasin(&["run"], dir.path()).status.code(), Some(2));
    assert_eq!(flatbasin(&["run", "--jobs", "many"], dir.path()).status.code(), Some(2));
    assert_eq!(flatbasin(&["explode"], dir.path()).status.code(), Some(2));
    assert_eq!(flatbasin(&["run", "--config", "absent.json"], dir.path()).status.code(), Some(2));
}

#[test]
fn grid_of_two_methods_two_inits_five_sequences_gives_twenty_records() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config();
    cfg["inits"] = json!([{ "kind": "random" }, { "kind": "warm_start", "epochs": 1, "lr": 0.05 }]);
    cfg["sequences"] = json!(5);
    let out = run_ok(dir.path(), &cfg, &[]);
    let records = load_records(std::slice::from_ref(&out)).unwrap();
    assert_eq!(records.len(), 20);
    for r in &records {
        let stem = format!("{}_{}_{}_{}", r.method, r.init, r.sequence, r.seed);
        assert_eq!(r.stem(), stem);
        assert!(out.join(format!("{stem}.record.json")).is_file());
        assert!(out.join(&r.train_log).is_file());
        assert_eq!(r.checkpoints.len(), 3);
        for c in &r.checkpoints {
            assert!(Path::new(c).is_relative());
            assert!(out.join(c).is_file());
        }
    }
    for group in ["finetune_random", "finetune_warm", "er_random", "er_warm"] {
        assert!(out.join(format!("{group}.metrics.json")).is_file(), "{group}");
    }
}

#[test]
fn report_equals_direct_aggregation() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config();
    cfg["sequences"] = json!(3);
    cfg["probes"] = json!({ "sharpness": { "epsilons": [0.001] } });
    let out = run_ok(dir.path(), &cfg, &[]);
    let o = flatbasin(&["report", "--out", "out"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));

    let records = load_records(std::slice::from_ref(&out)).unwrap();
    let rows = summarize(&records).unwrap();
    let csv = std::fs::read_to_string(out.join("summary.csv")).unwrap();
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(&header[..5], &["method", "init", "accuracy", "accuracy_std", "forgetting"]);
    assert_eq!(header[6], "learning_accuracy");

    for (line, row) in lines.zip(&rows) {
        let group: Vec<&RunRecord> = records.iter().filter(|r| r.method == row.method && r.init == row.init).collect();
        let direct = aggregate(&group.iter().map(|r| r.metrics.clone()).collect::<Vec<_>>()).unwrap();
        assert_eq!(row.metrics, direct);
        let cells: Vec<&str> = line.split(',').collect();
        let num = |i: usize| cells[i].parse::<f64>().unwrap();
        assert_eq!(cells[0], row.method);
        assert_eq!(num(2), direct.final_accuracy.mean);
        assert_eq!(num(3), direct.final_accuracy.std);
        assert_eq!(num(4), direct.final_forgetting.unwrap().mean);
        assert_eq!(num(6), direct.final_learning_accuracy.mean);
        assert_eq!(cells[8], "3");
    }
    assert!(std::fs::read_to_string(out.join("summary.txt")).unwrap().contains("±"));
}

#[test]
fn single_record_report_has_zero_std() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_ok(dir.path(), &tiny_config(), &[]);
    let one = out.join("finetune_random_0_3.record.json");
    let o = flatbasin(&["report", "--out", "rep", one.to_str().unwrap()], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("rep/summary.csv")).unwrap();
    let row: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
    for i in [3, 5, 7] {
        assert_eq!(row[i].parse::<f64>().unwrap(), 0.0);
    }
}

#[test]
fn report_without_records_fails() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::create_dir(dir.path().join("empty")).unwrap();
    assert_eq!(flatbasin(&["report", "--out", "empty"], dir.path()).status.code(), Some(1));
}

#[test]
fn diverging_cell_does_not_disturb_the_others() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config();
    cfg["model"]["activation"] = json!("relu");
    let clean = run_ok(dir.path(), &cfg, &[]);

    cfg["methods"][1]["lr"] = json!(1e300);
    write_config(dir.path(), &cfg);
    let o = flatbasin(&["run", "--config", "config.json", "--out", "mixed", "--jobs", "2"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("er_random_0_3"), "{}", stderr(&o));

    let mixed = dir.path().join("mixed");
    for f in ["finetune_random_0_3.trainlog.json", "finetune_random_0_3.ckpt3.json"] {
        assert_eq!(std::fs::read(clean.join(f)).unwrap(), std::fs::read(mixed.join(f)).unwrap(), "{f}");
    }
    let record = |dir: &Path| {
        let mut v: Value =
            serde_json::from_slice(&std::fs::read(dir.join("finetune_random_0_3.record.json")).unwrap()).unwrap();
        v.as_object_mut().unwrap().remove("config_hash");
        v
    };
    assert_eq!(record(&clean), record(&mixed));
    assert!(mixed.join("finetune_random.metrics.json").is_file());
    assert!(!mixed.join("er_random_0_3.record.json").exists());
    let index: Value = serde_json::from_str(&std::fs::read_to_string(mixed.join("run_index.json")).unwrap()).unwrap();
    assert_eq!(index["failures"].as_array().unwrap().len(), 1);
}

#[test]
fn rerun_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config();
    cfg["probes"] = json!({ "interpolation": { "steps": 3 }, "sharpness": {} });
    let a = run_ok(dir.path(), &cfg, &[]);
    let first: Vec<(PathBuf, Vec<u8>)> = files(&a);
    std::fs::remove_dir_all(&a).unwrap();
    run_ok(dir.path(), &cfg, &["--jobs", "3"]);
    assert_eq!(first, files(&a));
}

fn files(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn seed_flag_replaces_seed_list_and_env_sets_output() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), &tiny_config());
    let o = bin()
        .args(["run", "--config", "config.json", "--seed", "9"])
        .env("FLATBASIN_OUT", "from_env")
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(dir.path().join("from_env/finetune_random_0_9.record.json").is_file());
    assert!(!dir.path().join("from_env/finetune_random_0_3.record.json").exists());
}

#[test]
fn config_hash_ignores_key_order_and_output_dir() {
    let a = r#"{"seeds":[1],"methods":[{"method":"er","lr":0.1}],
        "dataset":{"generator":"split_blobs","num_tasks":2,"classes_per_task":2,"dim":3,"samples_per_class":5,"separation":2.0,"noise":1.0}}"#;
    let b = r#"{"dataset":{"noise":1.0,"separation":2.0,"samples_per_class":5,"dim":3,"classes_per_task":2,"num_tasks":2,"generator":"split_blobs"},
        "methods":[{"lr":0.1,"method":"er"}],"seeds":[1],"output_dir":"elsewhere"}"#;
    let c = a.replace("\"lr\":0.1", "\"lr\":0.2");
    let (a, b, c) = (
        ExperimentConfig::parse(a).unwrap(),
        ExperimentConfig::parse(b).unwrap(),
        ExperimentConfig::parse(&c).unwrap(),
    );
    assert_eq!(a.hash().unwrap(), b.hash().unwrap());
    assert_ne!(a.hash().unwrap(), c.hash().unwrap());
}

#[test]
fn csv_dataset_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let mut text = String::from("x0,x1,task,label\n");
    for task in 0..2 {
        for i in 0..30 {
            let label = i % 2;
            let s = if label == 0 { -1.0 } else { 1.0 };
            let x0 = s * (1.0 + (i as f64) * 0.01) + task as f64;
            let x1 = -s * 0.5 + (i as f64) * 0.003;
            text += &format!("{x0},{x1},{task},{label}\n");
        }
    }
    std::fs::write(dir.path().join("data.csv"), text).unwrap();
    let mut cfg = tiny_config();
    cfg["dataset"] = json!({ "generator": "csv", "path": "data.csv", "schema": { "label": "label", "task": "task" } });
    let out = run_ok(dir.path(), &cfg, &[]);
    let records = load_records(&[out]).unwrap();
    assert_eq!(records.len(), 2);
    assert!(records.iter().all(|r| r.order.len() == 2));

    cfg["inits"] = json!([{ "kind": "warm_start", "epochs": 1, "lr": 0.1 }]);
    write_config(dir.path(), &cfg);
    assert_eq!(flatbasin(&["run", "--config", "config.json"], dir.path()).status.code(), Some(2));
}

#[test]
fn gen_data_writes_a_manifest_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config();
    cfg["seeds"] = json!([1, 2]);
    write_config(dir.path(), &cfg);
    let o = flatbasin(&["gen-data", "--config", "config.json", "--out", "data"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    for s in [1, 2] {
        let m = dir.path().join(format!("data/stream/seed{s}/manifest.json"));
        assert!(flatbasin::tasks::read_stream(&m).unwrap().tasks.len() == 3);
    }
}

mod probes {
    use super::*;

    fn trained(dir: &Path) -> (PathBuf, Vec<String>) {
        let mut cfg = tiny_config();
        cfg["methods"] = json!([{ "method": "finetune", "lr": 0.1, "epochs": 2 }]);
        let out = run_ok(dir, &cfg, &[]);
        let ckpts = (1..=3).map(|k| format!("out/finetune_random_0_3.ckpt{k}.json")).collect();
        (out, ckpts)
    }

    fn probe(dir: &Path, sub: &str, ckpts: &[&str], extra: &[&str]) -> Output {
        let mut args = vec!["probe", sub, "--data", "out/stream/seed3/manifest.json", "--out", "probe", "--ckpt"];
        args.extend_from_slice(ckpts);
        args.extend_from_slice(extra);
        flatbasin(&args, dir)
    }

    fn read(dir: &Path, name: &str) -> String {
        std::fs::read_to_string(dir.join("probe").join(name)).unwrap()
    }

    #[test]
    fn contour_interpolate_sharpness_curvature() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path();
        let (_, c) = trained(dir);
        let c: Vec<&str> = c.iter().map(String::as_str).collect();

        let o = probe(dir, "contour", &c, &["--resolution", "6"]);
        assert!(o.status.success(), "{}", stderr(&o));
        let grid = read(dir, "contour.csv");
        assert_eq!(grid.lines().count(), 1 + 36);
        assert_eq!(read(dir, "contour_anchors.csv").lines().count(), 4);

        let o = probe(dir, "interpolate", &c[..2], &["--steps", "11"]);
        assert!(o.status.success(), "{}", stderr(&o));
        let rows: Vec<f64> = read(dir, "interpolation.csv")
            .lines()
            .skip(1)
            .map(|l| l.split(',').next().unwrap().parse().unwrap())
            .collect();
        assert_eq!(rows.len(), 11);
        assert_eq!((rows[0], rows[10]), (0.0, 1.0));

        let o = probe(dir, "sharpness", &c[..2], &["--epsilon", "5e-4", "1e-3"]);
        assert!(o.status.success(), "{}", stderr(&o));
        let recs: Vec<Value> = serde_json::from_str(&read(dir, "sharpness.json")).unwrap();
        assert_eq!(recs.len(), 4);
        assert_eq!(recs[0]["task"], recs[1]["task"]);
        assert_ne!(recs[0]["task"], recs[2]["task"]);
        assert!(recs.iter().all(|r| r["phi"].as_f64().unwrap() >= 0.0));

        let o = probe(dir, "curvature", &c[..2], &["--iters", "20"]);
        assert!(o.status.success(), "{}", stderr(&o));
        let rec: Value = serde_json::from_str(&read(dir, "curvature.json")).unwrap();
        assert!(rec["report"]["lambda_max"].is_number());
    }

    #[test]
    fn checkpoint_errors() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path();
        let (_, c) = trained(dir);

        let o = probe(dir, "interpolate", &[&c[0], "out/missing.ckpt.json"], &[]);
        assert_eq!(o.status.code(), Some(1));
        assert!(stderr(&o).contains("out/missing.ckpt.json"), "{}", stderr(&o));

        let o = probe(dir, "contour", &[&c[0], &c[1]], &[]);
        assert_eq!(o.status.code(), Some(2));

        let mut cfg = tiny_config();
        cfg["model"]["hidden_dims"] = json!([3]);
        cfg["methods"] = json!([{ "method": "finetune", "lr": 0.1, "epochs": 1 }]);
        write_config(dir, &cfg);
        assert!(flatbasin(&["run", "--config", "config.json", "--out", "narrow"], dir).status.success());
        let o = probe(dir, "interpolate", &[&c[0], "narrow/finetune_random_0_3.ckpt1.json"], &[]);
        assert_eq!(o.status.code(), Some(1));
        assert!(stderr(&o).contains("layout"), "{}", stderr(&o));
    }
}
