use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use structmeta::taskgen::load_db;
use structmeta_cli::commands::{checkpoint_path, CLUSTERS_FILE, EMBEDDING_FILE, REPORT_FILE, SIMILARITY_FILE};
use structmeta_cli::error::{EXIT_CONFIG, EXIT_DATA, EXIT_NUMERICAL};
use structmeta_cli::report::quantile;
use structmeta_cli::{cmd_analyze, cmd_gen, cmd_plot, cmd_report, cmd_train, ExperimentConfig, Method, Overrides, RunReport};

const SYNTHETIC: &str = r#"
seed = 3

[database]
synthetic = { k = 12, n_clusters = 3, dim = 8, n_per_task = 60 }

[meta]
alpha = 0.1
delta = 0.1
n_iter = 40
meta_test_batch = 4
eval_every = 10
"#;

const DOMAIN: &str = r#"
seed = 1

[database]
domain = { samples = 20, size = 8, classes = 2 }

[model]
kind = "mlp"

[meta]
alpha = 0.05
delta = 0.05
n_iter = 2
meta_test_batch = 3
eval_every = 0

[analysis]
d = 2
"#;

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn load(path: &Path, out: &Path) -> ExperimentConfig {
    ExperimentConfig::load(
        path,
        &Overrides {
            out: Some(out.to_path_buf()),
            ..Overrides::default()
        },
    )
    .unwrap()
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_structmeta"))
}

#[test]
fn config_requires_exactly_one_database_source() {
    let both = "[database]\nfile = \"x\"\nsynthetic = { k = 2, n_clusters = 1, dim = 2, n_per_task = 4 }\n";
    let cfg = ExperimentConfig::parse(both).unwrap();
    assert!(cfg.validate().is_err());
    let none = ExperimentConfig::parse("[database]\n").unwrap();
    assert!(none.validate().is_err());
    assert!(ExperimentConfig::parse("[database]\nbogus = 1\n").is_err());
}

#[test]
fn overrides_win_and_seed_reaches_training() {
    let tmp = tempfile::tempdir().unwrap();
    let p = write_config(tmp.path(), "c.toml", SYNTHETIC);
    let cfg = ExperimentConfig::load(
        &p,
        &Overrides {
            seed: Some(42),
            method: Some(Method::Shared),
            out: None,
        },
    )
    .unwrap();
    assert_eq!((cfg.seed, cfg.meta.seed, cfg.method), (42, 42, Method::Shared));
    assert!(cfg.out_dir().is_err());
}

#[test]
fn synthetic_gen_round_trips_and_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let p = write_config(tmp.path(), "c.toml", SYNTHETIC);
    let a = cmd_gen(&load(&p, &tmp.path().join("a"))).unwrap();
    let b = cmd_gen(&load(&p, &tmp.path().join("b"))).unwrap();
    assert_eq!(a.k, 12);
    assert_eq!(a.lines[0], "12 tasks");
    let db = load_db(&a.path).unwrap();
    assert_eq!(db.k(), 12);
    assert_eq!(db.heldout.len(), 12);
    assert_eq!(fs::read(&a.path).unwrap(), fs::read(&b.path).unwrap());
}

#[test]
fn domain_gen_reports_53_domains_by_family() {
    let tmp = tempfile::tempdir().unwrap();
    let p = write_config(tmp.path(), "d.toml", DOMAIN);
    let s = cmd_gen(&load(&p, tmp.path())).unwrap();
    assert_eq!(s.lines[0], "53 domains");
    let counts: Vec<(&str, usize)> = s.groups.iter().map(|(g, n)| (g.as_str(), *n)).collect();
    assert_eq!(counts, vec![("rotation", 7), ("flip", 2), ("affine", 14), ("color", 20), ("filter", 10)]);
}

#[test]
fn zero_beta_report_matches_independent() {
    let tmp = tempfile::tempdir().unwrap();
    let p = write_config(tmp.path(), "c.toml", &format!("{SYNTHETIC}beta = 0.0\n"));
    let mut cfg = load(&p, &tmp.path().join("inv"));
    let inv = cmd_train(&cfg, None).unwrap();
    cfg.method = Method::Independent;
    cfg.out = Some(tmp.path().join("ind"));
    let ind = cmd_train(&cfg, None).unwrap();
    assert_eq!(inv.tasks, ind.tasks);
    assert_eq!((inv.median, inv.q25, inv.q75), (ind.median, ind.q25, ind.q75));
    for i in 0..12 {
        let a = fs::read(checkpoint_path(&tmp.path().join("inv"), i)).unwrap();
        let b = fs::read(checkpoint_path(&tmp.path().join("ind"), i)).unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn report_quantiles_match_task_list() {
    let tmp = tempfile::tempdir().unwrap();
    let p = write_config(tmp.path(), "c.toml", SYNTHETIC);
    let cfg = load(&p, tmp.path());
    cmd_train(&cfg, Some(2)).unwrap();
    let report: RunReport = serde_json::from_slice(&fs::read(tmp.path().join(REPORT_FILE)).unwrap()).unwrap();
    let acc = report.accuracies();
    assert_eq!(acc.len(), 12);
    assert_eq!(report.median, quantile(&acc, 0.5));
    assert_eq!(report.q25, quantile(&acc, 0.25));
    assert_eq!(report.q75, quantile(&acc, 0.75));
    assert!(report.config.get("out").is_none());
    assert_eq!(report.input_hash.len(), 64);
    let text = cmd_report(tmp.path()).unwrap();
    assert!(text.contains("median"), "{text}");
    let history = fs::read_to_string(tmp.path().join("history.jsonl")).unwrap();
    assert!(history.lines().all(|l| serde_json::from_str::<serde_json::Value>(l).is_ok()));
}

#[test]
fn shared_model_trails_structured_training() {
    let tmp = tempfile::tempdir().unwrap();
    let text = SYNTHETIC
        .replace("n_clusters = 3", "n_clusters = 2, conflicting = true")
        .replace("n_iter = 40", "n_iter = 100");
    let p = write_config(tmp.path(), "c.toml", &text);
    let mut cfg = load(&p, &tmp.path().join("inv"));
    let inv = cmd_train(&cfg, None).unwrap();
    cfg.method = Method::Shared;
    cfg.out = Some(tmp.path().join("shared"));
    let shared = cmd_train(&cfg, None).unwrap();
    assert!(shared.median < inv.median, "shared {} invenio {}", shared.median, inv.median);
}

#[test]
fn transfer_runs_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let p = write_config(tmp.path(), "c.toml", &format!("{SYNTHETIC}\n[transfer]\npretrain_steps = 20\n"));
    let mut cfg = load(&p, tmp.path());
    cfg.method = Method::Transfer;
    let r = cmd_train(&cfg, None).unwrap();
    assert_eq!(r.k, 12);
    assert!(r.consistent());
}

#[test]
fn analyze_writes_shaped_artifacts_and_recovers_clusters() {
    let tmp = tempfile::tempdir().unwrap();
    let p = write_config(tmp.path(), "c.toml", SYNTHETIC);
    let cfg = load(&p, tmp.path());
    cmd_train(&cfg, None).unwrap();
    let s = cmd_analyze(&cfg, None).unwrap();
    assert!(s.ari.unwrap() >= 0.9, "ARI {:?}", s.ari);

    let sim = fs::read_to_string(tmp.path().join(SIMILARITY_FILE)).unwrap();
    assert_eq!(sim.lines().count(), 13);
    let emb = fs::read_to_string(tmp.path().join(EMBEDDING_FILE)).unwrap();
    assert_eq!(emb.lines().next().unwrap(), "task,dim1,dim2");
    assert!(emb.lines().skip(1).all(|l| l.split(',').count() == 3));
    let clusters: serde_json::Value = serde_json::from_slice(&fs::read(tmp.path().join(CLUSTERS_FILE)).unwrap()).unwrap();
    assert!(clusters["ari"].as_f64().unwrap() >= 0.9);

    let out = tmp.path().join("plot.svg");
    assert_eq!(cmd_plot(&tmp.path().join(EMBEDDING_FILE), &tmp.path().join("labels.csv"), &out).unwrap(), 12);
    let svg = fs::read_to_string(&out).unwrap();
    assert_eq!(svg.matches("<circle").count(), 12);
    assert_eq!(svg.matches("legend-entry").count(), 3);
}

#[test]
fn analyze_names_missing_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let p = write_config(tmp.path(), "c.toml", SYNTHETIC);
    let cfg = load(&p, tmp.path());
    cmd_train(&cfg, None).unwrap();
    fs::remove_file(checkpoint_path(tmp.path(), 7)).unwrap();
    let err = cmd_analyze(&cfg, None).unwrap_err();
    assert!(err.to_string().contains("task 7"), "{err}");
    assert_eq!(err.exit_code(), EXIT_DATA);
}

#[test]
fn plot_of_three_points_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let emb = tmp.path().join("e.csv");
    let labels = tmp.path().join("l.csv");
    fs::write(&emb, "task,dim1,dim2\na,0,0\nb,1,1\nc,2,0.5\n").unwrap();
    fs::write(&labels, "task,label\na,x\nb,y\nc,x\n").unwrap();
    let (o1, o2) = (tmp.path().join("1.svg"), tmp.path().join("2.svg"));
    cmd_plot(&emb, &labels, &o1).unwrap();
    cmd_plot(&emb, &labels, &o2).unwrap();
    let svg = fs::read(&o1).unwrap();
    assert_eq!(svg, fs::read(&o2).unwrap());
    assert_eq!(String::from_utf8(svg).unwrap().matches("<circle").count(), 3);
}

#[test]
fn plot_rejects_malformed_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let emb = tmp.path().join("e.csv");
    let labels = tmp.path().join("l.csv");
    fs::write(&emb, "task,dim1,dim2\na,0,zero\n").unwrap();
    fs::write(&labels, "task,label\na,x\n").unwrap();
    let err = cmd_plot(&emb, &labels, &tmp.path().join("o.svg")).unwrap_err();
    assert_eq!(err.exit_code(), EXIT_DATA);
}

#[test]
fn domain_pipeline_plots_five_families() {
    let tmp = tempfile::tempdir().unwrap();
    let p = write_config(tmp.path(), "d.toml", DOMAIN);
    let out = tmp.path().join("run");
    let status = bin().arg("--config").arg(&p).arg("--out").arg(&out).arg("train").output().unwrap().status;
    assert!(status.success());
    let status = bin().arg("--config").arg(&p).arg("--out").arg(&out).arg("analyze").output().unwrap().status;
    assert!(status.success());
    let status = bin().arg("--out").arg(&out).arg("plot").output().unwrap().status;
    assert!(status.success());
    let svg = fs::read_to_string(out.join("embedding.svg")).unwrap();
    assert_eq!(svg.matches("<circle").count(), 53);
    assert_eq!(svg.matches("legend-entry").count(), 5);
    let report = bin().arg("--out").arg(&out).arg("report").output().unwrap();
    assert!(report.status.success());
    assert!(String::from_utf8_lossy(&report.stdout).contains("53 tasks"));
}

#[test]
fn exit_codes_separate_config_data_and_divergence() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");

    let bad = write_config(tmp.path(), "bad.toml", "seed = \"x\"\n");
    let s = bin().arg("--config").arg(&bad).arg("--out").arg(&out).arg("train").output().unwrap().status;
    assert_eq!(s.code(), Some(EXIT_CONFIG));

    let s = bin().arg("train").output().unwrap().status;
    assert_eq!(s.code(), Some(EXIT_CONFIG));

    let garbage = tmp.path().join("garbage.smdb");
    fs::write(&garbage, b"not a database").unwrap();
    let corrupt = write_config(tmp.path(), "corrupt.toml", "[database]\nfile = \"garbage.smdb\"\n");
    let s = bin().arg("--config").arg(&corrupt).arg("--out").arg(&out).arg("train").output().unwrap().status;
    assert_eq!(s.code(), Some(EXIT_DATA));

    let wild = SYNTHETIC.replace("delta = 0.1", "delta = 1e9").replace("alpha = 0.1", "alpha = 1e9");
    let diverge = write_config(tmp.path(), "diverge.toml", &wild);
    let o = bin().arg("--config").arg(&diverge).arg("--out").arg(&out).arg("train").output().unwrap();
    assert_eq!(o.status.code(), Some(EXIT_NUMERICAL), "{}", String::from_utf8_lossy(&o.stderr));
    let msg = String::from_utf8_lossy(&o.stderr);
    assert!(msg.contains("task"), "{msg}");
}

#[test]
fn gen_command_prints_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let p = write_config(tmp.path(), "c.toml", SYNTHETIC);
    let o = bin().arg("--config").arg(&p).arg("--out").arg(tmp.path()).arg("--seed").arg("9").arg("gen").output().unwrap();
    assert!(o.status.success());
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.starts_with("12 tasks\n"), "{text}");
    assert!(text.contains("cluster0: 4"), "{text}");
}
