use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use structmeta::analysis::{
    ari, full_similarity_matrix, read_embedding_csv, spectral_cluster, truncated_svd, write_cluster_report,
    write_embedding_csv, write_similarity_csv, write_singular_values_csv, ClusterReport,
};
use structmeta::metaengine::{run_independent, run_invenio, run_shared_maml, run_transfer, TrainState};
use structmeta::models::{ArchSpec, LossKind, ParamSet};
use structmeta::taskgen::{
    default_domain_specs, gen_domain_db, gen_synthetic_tasks, load_cifar10, load_db, split, synthetic_image_base,
    write_db, Dataset, DatasetKind, SyntheticConfig, TaskDatabase,
};

use crate::config::{ExperimentConfig, Method, ModelConfig};
use crate::error::{CliError, CliResult};
use crate::io::{content_hash, read_json, write_atomic, write_json};
use crate::plot::scatter_svg;
use crate::report::{quantile, RunReport, TaskAccuracy, Timing};

pub const DATABASE_FILE: &str = "database.smdb";
pub const REPORT_FILE: &str = "report.json";
pub const TIMING_FILE: &str = "timing.json";
pub const HISTORY_FILE: &str = "history.jsonl";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const SIMILARITY_FILE: &str = "similarity.csv";
pub const EMBEDDING_FILE: &str = "embedding.csv";
pub const SINGULAR_VALUES_FILE: &str = "singular_values.csv";
pub const CLUSTERS_FILE: &str = "clusters.json";
pub const LABELS_FILE: &str = "labels.csv";
pub const PLOT_FILE: &str = "embedding.svg";

pub fn checkpoint_path(out: &Path, task: usize) -> PathBuf {
    out.join(CHECKPOINT_DIR).join(format!("task_{task:04}.ckpt"))
}

/// Runs `f` on a dedicated pool of `threads` workers, or on the global pool.
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> CliResult<T> + Send) -> CliResult<T> {
    match threads {
        None => f(),
        Some(0) => Err(CliError::Config("--threads must be at least 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Config(format!("cannot start {n} threads: {e}")))?
            .install(f),
    }
}

/// Builds (or loads) the configured database and applies the held-out split
/// when it has none.
pub fn build_database(cfg: &ExperimentConfig) -> CliResult<TaskDatabase> {
    let d = &cfg.database;
    let db = if let Some(s) = &d.synthetic {
        let sc = SyntheticConfig::new(s.k, s.n_clusters, s.dim, s.n_per_task, s.noise, cfg.seed).conflicting(s.conflicting);
        gen_synthetic_tasks(&sc).map_err(|e| CliError::Config(e.to_string()))?
    } else if let Some(dm) = &d.domain {
        let base = match &dm.cifar_dir {
            Some(dir) => load_cifar10(dir, dm.samples)?
                .ok_or_else(|| CliError::Data(format!("no CIFAR-10 batch files in {}", dir.display())))?,
            None => synthetic_image_base(dm.samples, dm.size, dm.classes, cfg.seed)
                .map_err(|e| CliError::Config(e.to_string()))?,
        };
        let specs = dm.transforms.clone().unwrap_or_else(default_domain_specs);
        gen_domain_db(&base, &specs)?
    } else if let Some(f) = &d.file {
        load_db(f).map_err(|e| CliError::Data(format!("{}: {e}", f.display())))?
    } else {
        return Err(CliError::Config("no database source".into()));
    };
    if db.heldout.is_empty() {
        Ok(split(&db, d.heldout_fraction, cfg.seed)?)
    } else {
        Ok(db)
    }
}

pub fn build_arch(cfg: &ExperimentConfig, db: &TaskDatabase) -> CliResult<ArchSpec> {
    let first = db.datasets.first().ok_or_else(|| CliError::Data("empty database".into()))?;
    let (loss, outputs) = match first.kind {
        DatasetKind::BinaryTask => (LossKind::Binary, 1),
        DatasetKind::MulticlassDomain { classes } => (LossKind::Multiclass, classes),
    };
    let arch = match &cfg.model {
        ModelConfig::Mlp { hidden } => ArchSpec::mlp_for_shape(first.sample_shape(), hidden, loss, outputs),
        ModelConfig::TaskConvnet => ArchSpec::task_convnet(),
        ModelConfig::DomainConvnet => ArchSpec::domain_convnet(outputs),
    };
    arch.check_dataset(first).map_err(|e| CliError::Config(format!("model does not fit the database: {e}")))?;
    Ok(arch)
}

fn database_bytes(db: &TaskDatabase) -> CliResult<Vec<u8>> {
    let mut buf = Vec::new();
    write_db(&mut buf, db)?;
    Ok(buf)
}

fn kind_word(db: &TaskDatabase) -> &'static str {
    match db.datasets.first().map(|d| d.kind) {
        Some(DatasetKind::MulticlassDomain { .. }) => "domains",
        _ => "tasks",
    }
}

/// Number of members per named group, in group order.
pub fn group_counts(db: &TaskDatabase) -> Vec<(String, usize)> {
    let Some(truth) = &db.ground_truth_clusters else {
        return Vec::new();
    };
    let groups = truth.iter().max().map_or(0, |m| m + 1).max(db.group_names.len());
    (0..groups)
        .map(|g| {
            let name = db.group_names.get(g).cloned().unwrap_or_else(|| format!("group{g}"));
            (name, truth.iter().filter(|&&t| t == g).count())
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenSummary {
    pub path: PathBuf,
    pub k: usize,
    pub groups: Vec<(String, usize)>,
    pub lines: Vec<String>,
}

/// Writes the split database container to `<out>/database.smdb`.
pub fn cmd_gen(cfg: &ExperimentConfig) -> CliResult<GenSummary> {
    let out = cfg.out_dir()?;
    let db = build_database(cfg)?;
    let path = out.join(DATABASE_FILE);
    let bytes = database_bytes(&db)?;
    write_atomic(&path, |w| Ok(w.write_all(&bytes)?))?;
    let groups = group_counts(&db);
    let mut lines = vec![format!("{} {}", db.k(), kind_word(&db))];
    lines.extend(groups.iter().map(|(g, n)| format!("  {g}: {n}")));
    lines.push(format!("wrote {}", path.display()));
    Ok(GenSummary {
        path,
        k: db.k(),
        groups,
        lines,
    })
}

fn run_method(cfg: &ExperimentConfig, db: &TaskDatabase, arch: &ArchSpec) -> CliResult<TrainState> {
    let state = match cfg.method {
        Method::Invenio => run_invenio(db, arch, &cfg.meta)?,
        Method::Independent => run_independent(db, arch, &cfg.meta)?,
        Method::Shared => run_shared_maml(db, arch, &cfg.meta)?,
        Method::Transfer => {
            let parts: Vec<(&Dataset, Option<usize>)> = db.datasets.iter().map(|d| (d, None)).collect();
            let pooled = Dataset::concat("pretrain", db.datasets[0].kind, &parts)?;
            run_transfer(db, arch, &pooled, &cfg.meta, &cfg.transfer)?
        }
    };
    Ok(state)
}

/// Trains the configured method and writes checkpoints, the history log,
/// the run report and a timing sidecar under the output directory.
pub fn cmd_train(cfg: &ExperimentConfig, threads: Option<usize>) -> CliResult<RunReport> {
    let out = cfg.out_dir()?;
    with_threads(threads, || {
        let start = Instant::now();
        let db = build_database(cfg)?;
        let arch = build_arch(cfg, &db)?;
        log::info!("training {} on {} {}", cfg.method.name(), db.k(), kind_word(&db));
        let state = run_method(cfg, &db, &arch)?;
        let acc = state
            .final_accuracies()
            .ok_or_else(|| CliError::Data("training produced no evaluation".into()))?
            .to_vec();

        for (i, p) in state.paramsets.iter().enumerate() {
            write_atomic(&checkpoint_path(&out, i), |w| Ok(p.write_to(w)?))?;
        }
        write_atomic(&out.join(HISTORY_FILE), |w| {
            for rec in &state.history {
                serde_json::to_writer(&mut *w, rec).map_err(|e| CliError::Data(e.to_string()))?;
                w.write_all(b"\n")?;
            }
            Ok(())
        })?;

        let echo = cfg.echo();
        let mut hashed = serde_json::to_vec(&echo).expect("json value serializes");
        hashed.extend(database_bytes(&db)?);
        let report = RunReport {
            method: cfg.method,
            k: db.k(),
            iterations: state.iter,
            tasks: db
                .names()
                .into_iter()
                .zip(&acc)
                .map(|(task, &accuracy)| TaskAccuracy { task, accuracy })
                .collect(),
            median: quantile(&acc, 0.5),
            q25: quantile(&acc, 0.25),
            q75: quantile(&acc, 0.75),
            config: echo,
            input_hash: content_hash(&hashed),
        };
        write_json(&out.join(REPORT_FILE), &report)?;
        write_json(
            &out.join(TIMING_FILE),
            &Timing {
                seconds: start.elapsed().as_secs_f64(),
                threads: rayon::current_num_threads(),
            },
        )?;
        Ok(report)
    })
}

pub fn load_checkpoints(out: &Path, arch: &ArchSpec, k: usize) -> CliResult<Vec<ParamSet>> {
    (0..k)
        .map(|i| {
            let path = checkpoint_path(out, i);
            if !path.is_file() {
                return Err(CliError::Data(format!("missing checkpoint for task {i} ({})", path.display())));
            }
            let p = ParamSet::load(&path).map_err(|e| CliError::Data(format!("task {i} checkpoint: {e}")))?;
            p.check(arch).map_err(|e| CliError::Data(format!("task {i} checkpoint: {e}")))?;
            Ok(p)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalyzeSummary {
    pub k: usize,
    pub d: usize,
    pub n_clusters: usize,
    pub ari: Option<f64>,
    pub singular_values: Vec<f64>,
}

/// Similarity matrix, embedding and clustering of a trained run.
pub fn cmd_analyze(cfg: &ExperimentConfig, threads: Option<usize>) -> CliResult<AnalyzeSummary> {
    let out = cfg.out_dir()?;
    with_threads(threads, || {
        let db = build_database(cfg)?;
        let arch = build_arch(cfg, &db)?;
        let k = db.k();
        let a = &cfg.analysis;
        if a.d > k {
            return Err(CliError::Config(format!("analysis.d = {} exceeds the {k} tasks", a.d)));
        }
        let params = load_checkpoints(&out, &arch, k)?;
        let s = full_similarity_matrix(&arch, &params, &db)?;
        let emb = truncated_svd(&s, a.d, a.symmetrize)?;

        let truth = db.ground_truth_clusters.clone();
        let n_clusters = a
            .n_clusters
            .or_else(|| truth.as_ref().map(|t| t.iter().collect::<std::collections::BTreeSet<_>>().len()))
            .unwrap_or(2)
            .min(k);
        let clustering = spectral_cluster(&s, n_clusters)?;
        let score = truth.as_ref().map(|t| ari(&clustering.labels, t)).transpose()?;
        let truth_names = db.group_labels();
        let report = ClusterReport::new(
            &s.names,
            &clustering.labels,
            truth_names.as_deref(),
            score,
            n_clusters,
            clustering.degenerate,
        );

        write_atomic(&out.join(SIMILARITY_FILE), |w| Ok(write_similarity_csv(w, &s)?))?;
        write_atomic(&out.join(EMBEDDING_FILE), |w| Ok(write_embedding_csv(w, &emb)?))?;
        write_atomic(&out.join(SINGULAR_VALUES_FILE), |w| Ok(write_singular_values_csv(w, &emb)?))?;
        write_atomic(&out.join(CLUSTERS_FILE), |w| Ok(write_cluster_report(w, &report)?))?;
        let plot_labels: Vec<String> = match &truth_names {
            Some(t) => t.clone(),
            None => clustering.labels.iter().map(|l| format!("cluster{l}")).collect(),
        };
        write_atomic(&out.join(LABELS_FILE), |w| {
            let mut c = csv::Writer::from_writer(w);
            let csv_err = |e: csv::Error| CliError::Data(e.to_string());
            c.write_record(["task", "label"]).map_err(csv_err)?;
            for (n, l) in s.names.iter().zip(&plot_labels) {
                c.write_record([n, l]).map_err(csv_err)?;
            }
            c.flush()?;
            Ok(())
        })?;
        Ok(AnalyzeSummary {
            k,
            d: a.d,
            n_clusters,
            ari: score,
            singular_values: emb.singular_values.clone(),
        })
    })
}

pub fn read_labels(path: &Path) -> CliResult<HashMap<String, String>> {
    let bad = |m: String| CliError::Data(format!("{}: {m}", path.display()));
    let mut rd = csv::Reader::from_path(path).map_err(|e| bad(e.to_string()))?;
    let header = rd.headers().map_err(|e| bad(e.to_string()))?.clone();
    if header.len() != 2 || &header[0] != "task" || &header[1] != "label" {
        return Err(bad("expected header 'task,label'".into()));
    }
    let mut map = HashMap::new();
    for rec in rd.records() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        map.insert(rec[0].to_string(), rec[1].to_string());
    }
    Ok(map)
}

/// Renders the first two embedding coordinates as an SVG scatter.
/// Returns the number of points drawn.
pub fn cmd_plot(embedding: &Path, labels: &Path, output: &Path) -> CliResult<usize> {
    let file = std::fs::File::open(embedding).map_err(|e| CliError::Data(format!("{}: {e}", embedding.display())))?;
    let (names, coords) =
        read_embedding_csv(file).map_err(|e| CliError::Data(format!("{}: {e}", embedding.display())))?;
    let map = read_labels(labels)?;
    let point_labels = names
        .iter()
        .map(|n| {
            map.get(n)
                .cloned()
                .ok_or_else(|| CliError::Data(format!("no label for task '{n}' in {}", labels.display())))
        })
        .collect::<CliResult<Vec<_>>>()?;
    let svg = scatter_svg(&names, &coords, &point_labels)?;
    write_atomic(output, |w| Ok(w.write_all(svg.as_bytes())?))?;
    Ok(names.len())
}

/// Human-readable summary of a finished run directory.
pub fn cmd_report(out: &Path) -> CliResult<String> {
    let report: RunReport = read_json(&out.join(REPORT_FILE))?;
    if !report.consistent() {
        return Err(CliError::Data(format!(
            "{}: summary quantiles disagree with the per-task accuracies",
            out.join(REPORT_FILE).display()
        )));
    }
    let mut s = String::new();
    let _ = writeln!(
        s,
        "method {} | {} tasks | {} iterations | input {}",
        report.method.name(),
        report.k,
        report.iterations,
        &report.input_hash[..12.min(report.input_hash.len())]
    );
    let _ = writeln!(
        s,
        "held-out accuracy: median {:.4}  q25 {:.4}  q75 {:.4}",
        report.median, report.q25, report.q75
    );
    let width = report.tasks.iter().map(|t| t.task.len()).max().unwrap_or(4).max(4);
    for t in &report.tasks {
        let _ = writeln!(s, "  {:<width$}  {:.4}", t.task, t.accuracy);
    }
    let clusters = out.join(CLUSTERS_FILE);
    if clusters.is_file() {
        let c: ClusterReport = read_json(&clusters)?;
        match c.ari {
            Some(a) => {
                let _ = writeln!(s, "clusters: {} (ARI {:.4})", c.n_clusters, a);
            }
            None => {
                let _ = writeln!(s, "clusters: {}", c.n_clusters);
            }
        }
    }
    Ok(s)
}
