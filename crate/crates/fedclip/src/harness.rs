//! Experiment front door: turn a config plus a seed into a finished run with
//! metrics.csv and summary.json on disk, sweep seeds for multi-config
//! comparisons, and reshape metrics for plotting.
//!
//! All files go through write-then-rename, so a failed run leaves no partial
//! outputs behind.

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::clipnorm::ClippingState;
use crate::config::{DataSource, ExperimentConfig};
use crate::data::{self, Dataset};
use crate::error::{Error, Result};
use crate::federation::{
    build_shards, worst_sampling_rate, FederationConfig, RoundRecord, Simulation, TrainingMode,
};
use crate::model::ModelSpec;

/// Overrides the config's default output directory when set.
pub const OUT_DIR_ENV: &str = "FEDCLIP_OUT";

const METRICS_HEADER: &str = "round,train_loss,test_accuracy,epsilon,best_order,mean_C,clip_fraction";

/// One metrics.csv line plus the wall time the round took. Wall time is kept
/// out of the CSV on purpose: the CSV must be byte-identical across reruns.
#[derive(Clone, Debug)]
pub struct MetricsRow {
    pub round: u64,
    pub train_loss: f64,
    pub test_accuracy: f64,
    pub epsilon: f64,
    pub best_order: f64,
    pub mean_c: f64,
    pub clip_fraction: f64,
    pub wall_ms: u64,
}

impl MetricsRow {
    fn from_record(record: &RoundRecord, wall_ms: u64) -> Self {
        MetricsRow {
            round: record.round_index,
            train_loss: record.train_loss,
            test_accuracy: record.test_accuracy,
            epsilon: record.epsilon_so_far,
            best_order: record.best_order,
            mean_c: record.mean_clip_norm,
            clip_fraction: record.clip_fraction,
            wall_ms,
        }
    }
}

/// Infinity prints as the sentinel "inf"; everything else uses the shortest
/// exact decimal form.
pub fn fmt_metric(value: f64) -> String {
    if value.is_infinite() {
        "inf".into()
    } else {
        format!("{value}")
    }
}

pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for row in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            row.round,
            fmt_metric(row.train_loss),
            fmt_metric(row.test_accuracy),
            fmt_metric(row.epsilon),
            fmt_metric(row.best_order),
            fmt_metric(row.mean_c),
            fmt_metric(row.clip_fraction),
        ));
    }
    out
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LedgerSummary {
    pub sampling_rate: f64,
    pub noise_multiplier: f64,
    pub delta: f64,
    pub steps: u64,
    pub epsilon: String,
    pub best_order: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub mode: String,
    pub rounds_completed: u64,
    pub final_train_loss: f64,
    pub final_test_accuracy: f64,
    pub final_epsilon: String,
    pub ledger: Option<LedgerSummary>,
    pub wall_ms: u64,
    /// The effective config, reloadable as-is to reproduce this run.
    pub config_echo: String,
}

#[derive(Debug)]
pub struct RunOutcome {
    pub rows: Vec<MetricsRow>,
    pub records: Vec<RoundRecord>,
    pub summary: RunSummary,
    pub metrics_path: Option<PathBuf>,
    pub summary_path: Option<PathBuf>,
}

pub fn mode_token(mode: TrainingMode) -> &'static str {
    match mode {
        TrainingMode::Adaptive => "adaptive",
        TrainingMode::FixedClip => "fixed-clip",
        TrainingMode::NonPrivate => "non-private",
    }
}

/// Output directory precedence: explicit flag, then the environment
/// override, then the config, then ./out.
pub fn resolve_out_dir(flag: Option<&Path>, cfg: &ExperimentConfig) -> PathBuf {
    if let Some(dir) = flag {
        return dir.to_path_buf();
    }
    if let Ok(value) = std::env::var(OUT_DIR_ENV) {
        if !value.is_empty() {
            return PathBuf::from(value);
        }
    }
    if let Some(dir) = &cfg.output.dir {
        return dir.clone();
    }
    PathBuf::from("out")
}

pub fn materialize_dataset(cfg: &ExperimentConfig, seed: u64) -> Result<Dataset> {
    match cfg.data.source {
        DataSource::Synthetic => {
            let s = &cfg.data.synthetic;
            data::synth_blobs(s.num_classes, s.input_dim, s.n, s.separation, seed)
        }
        DataSource::Idx => {
            let idx = cfg
                .data
                .idx
                .as_ref()
                .ok_or_else(|| Error::Validation {
                    key: "data.idx".into(),
                    reason: "idx source without paths".into(),
                })?;
            let mut dataset = data::read_idx_dataset(&idx.images, &idx.labels)?;
            if let Some(classes) = &idx.classes {
                dataset = dataset.restrict_classes(classes)?;
            }
            if let Some(limit) = idx.limit {
                if limit < dataset.len() {
                    let front: Vec<usize> = (0..limit).collect();
                    dataset = dataset.subset(&front)?;
                }
            }
            Ok(dataset)
        }
    }
}

/// Builds the ready-to-run simulation for a config and seed: data, split,
/// partition, shards, model, and the resolved noise multiplier.
pub fn prepare(cfg: &ExperimentConfig, seed: u64) -> Result<Simulation> {
    cfg.validate()?;
    let dataset = materialize_dataset(cfg, seed)?;
    let (train, test) = data::train_test_split(&dataset, cfg.data.test_fraction, seed)?;
    let assignment =
        data::partition(&train, cfg.federation.num_clients, cfg.data.partition.clone(), seed)?;

    let template = ClippingState::new(cfg.moo.initial_c, cfg.moo.kappa, cfg.moo.eta_c)?
        .with_probe_width(cfg.moo.probe_h)
        .with_variant(cfg.moo.variant);
    let shards = build_shards(&train, &assignment, &template)?;

    let spec = ModelSpec::new(
        cfg.model.kind,
        dataset.input_dim,
        cfg.model.hidden_dim,
        dataset.num_classes,
    )?;
    let fed = FederationConfig {
        num_clients: cfg.federation.num_clients,
        selection_prob: cfg.federation.selection_prob,
        rounds: cfg.federation.rounds,
        local_batches: cfg.federation.local_batches,
        expected_batch: cfg.dp.expected_batch,
        lr: cfg.federation.lr,
        mode: cfg.federation.mode,
        cadence: cfg.moo.cadence,
        reset_clip_each_round: cfg.federation.reset_clip_each_round,
    };

    let q = worst_sampling_rate(&shards, fed.expected_batch);
    let planned_steps =
        fed.rounds * fed.local_batches as u64 * fed.num_clients as u64;
    let sigma = cfg.resolve_sigma(q, planned_steps)?;

    Simulation::new(
        spec,
        fed,
        shards,
        sigma,
        cfg.dp.delta,
        seed,
        train.examples.clone(),
        test.examples,
    )
}

fn run_rounds(sim: &mut Simulation, rounds: u64) -> Result<Vec<(RoundRecord, u64)>> {
    let mut out = Vec::with_capacity(rounds as usize);
    for _ in 0..rounds {
        let start = Instant::now();
        let record = sim.run_round()?;
        out.push((record, start.elapsed().as_millis() as u64));
    }
    Ok(out)
}

/// Runs every round of the configured experiment and writes the requested
/// output files into `out_dir`. `workers` caps client-level parallelism;
/// results are identical for any worker count.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    seed: u64,
    workers: Option<usize>,
    out_dir: &Path,
) -> Result<RunOutcome> {
    let started = Instant::now();
    let mut sim = prepare(cfg, seed)?;
    let rounds = cfg.federation.rounds;

    let timed = match workers {
        None => run_rounds(&mut sim, rounds)?,
        Some(0) => {
            return Err(Error::InvalidSpec("worker count must be at least 1".into()));
        }
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::InvalidSpec(format!("worker pool: {e}")))?;
            pool.install(|| run_rounds(&mut sim, rounds))?
        }
    };

    let rows: Vec<MetricsRow> =
        timed.iter().map(|(r, wall)| MetricsRow::from_record(r, *wall)).collect();
    let records: Vec<RoundRecord> = timed.into_iter().map(|(r, _)| r).collect();
    let last = records.last().expect("rounds >= 1 was validated");

    let ledger = sim.ledger.as_ref().map(|l| LedgerSummary {
        sampling_rate: l.sampling_rate,
        noise_multiplier: l.noise_multiplier,
        delta: l.delta,
        steps: l.steps,
        epsilon: fmt_metric(last.epsilon_so_far),
        best_order: last.best_order,
    });
    let summary = RunSummary {
        seed,
        mode: mode_token(cfg.federation.mode).into(),
        rounds_completed: rounds,
        final_train_loss: last.train_loss,
        final_test_accuracy: last.test_accuracy,
        final_epsilon: fmt_metric(last.epsilon_so_far),
        ledger,
        wall_ms: started.elapsed().as_millis() as u64,
        config_echo: cfg.echo(),
    };

    std::fs::create_dir_all(out_dir)?;
    let mut metrics_path = None;
    if cfg.output.formats.iter().any(|f| f == "csv") {
        let path = out_dir.join("metrics.csv");
        atomic_write(&path, metrics_csv(&rows).as_bytes())?;
        metrics_path = Some(path);
    }
    let mut summary_path = None;
    if cfg.output.formats.iter().any(|f| f == "json") {
        let path = out_dir.join("summary.json");
        let mut body = serde_json::to_string_pretty(&summary)
            .map_err(|e| Error::ParseError(e.to_string()))?;
        body.push('\n');
        atomic_write(&path, body.as_bytes())?;
        summary_path = Some(path);
    }

    Ok(RunOutcome { rows, records, summary, metrics_path, summary_path })
}

fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

/// The privacy-relevant knobs that must agree before accuracies from two
/// configs may be compared.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BudgetKey {
    pub private: bool,
    pub noise_multiplier: f64,
    pub sampling_rate: f64,
    pub delta: f64,
    pub rounds: u64,
    pub local_batches: u32,
    pub num_clients: usize,
    pub selection_prob: f64,
}

fn budget_key(cfg: &ExperimentConfig, sim: &Simulation) -> BudgetKey {
    let private = cfg.federation.mode != TrainingMode::NonPrivate;
    BudgetKey {
        private,
        noise_multiplier: sim.sigma,
        sampling_rate: sim.ledger.as_ref().map_or(0.0, |l| l.sampling_rate),
        delta: if private { cfg.dp.delta } else { 0.0 },
        rounds: cfg.federation.rounds,
        local_batches: cfg.federation.local_batches,
        num_clients: cfg.federation.num_clients,
        selection_prob: cfg.federation.selection_prob,
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ComparisonEntry {
    pub config: String,
    pub mode: String,
    pub final_accuracies: Vec<f64>,
    pub final_epsilons: Vec<String>,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub seeds: Vec<u64>,
    pub noise_multiplier: f64,
    pub sampling_rate: f64,
    pub rounds: u64,
    pub entries: Vec<ComparisonEntry>,
    pub winner: String,
    pub margin: f64,
}

fn sample_std(values: &[f64], mean: f64) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (ss / (values.len() - 1) as f64).sqrt()
}

/// Runs each config across all seeds at a matched privacy budget and ranks
/// the configs by mean final test accuracy.
pub fn compare_experiments(
    config_paths: &[PathBuf],
    seeds: &[u64],
    workers: Option<usize>,
    out_dir: &Path,
) -> Result<(ComparisonReport, PathBuf)> {
    if config_paths.len() < 2 {
        return Err(Error::InvalidSpec("compare needs at least two configs".into()));
    }
    if seeds.len() < 2 {
        return Err(Error::InvalidSpec(
            "compare needs at least two seeds for a mean and spread".into(),
        ));
    }

    let configs: Vec<(String, ExperimentConfig)> = config_paths
        .iter()
        .map(|p| Ok((p.display().to_string(), ExperimentConfig::load(p)?)))
        .collect::<Result<_>>()?;

    let mut budgets = Vec::with_capacity(configs.len());
    for (name, cfg) in &configs {
        let sim = prepare(cfg, seeds[0])?;
        let key = budget_key(cfg, &sim);
        budgets.push((name.clone(), key));
    }
    let (first_name, first_key) = &budgets[0];
    for (name, key) in &budgets[1..] {
        if key != first_key {
            return Err(Error::UnmatchedBudgets(format!(
                "{name} and {first_name} disagree on privacy parameters: {key:?} vs {first_key:?}"
            )));
        }
    }

    let mut entries = Vec::with_capacity(configs.len());
    for (name, cfg) in &configs {
        let mut accuracies = Vec::with_capacity(seeds.len());
        let mut epsilons = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let mut sim = prepare(cfg, seed)?;
            let rounds = cfg.federation.rounds;
            let records = match workers {
                None | Some(0) => sim.run(rounds)?,
                Some(n) => {
                    let pool = rayon::ThreadPoolBuilder::new()
                        .num_threads(n)
                        .build()
                        .map_err(|e| Error::InvalidSpec(format!("worker pool: {e}")))?;
                    pool.install(|| sim.run(rounds))?
                }
            };
            let last = records.last().expect("rounds >= 1 was validated");
            accuracies.push(last.test_accuracy);
            epsilons.push(fmt_metric(last.epsilon_so_far));
        }
        let mean = accuracies.iter().sum::<f64>() / accuracies.len() as f64;
        let std = sample_std(&accuracies, mean);
        entries.push(ComparisonEntry {
            config: name.clone(),
            mode: mode_token(cfg.federation.mode).into(),
            final_accuracies: accuracies,
            final_epsilons: epsilons,
            mean_accuracy: mean,
            std_accuracy: std,
        });
    }

    let best = entries
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.mean_accuracy.total_cmp(&b.1.mean_accuracy))
        .map(|(i, _)| i)
        .expect("at least two entries");
    let runner_up = entries
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != best)
        .map(|(_, e)| e.mean_accuracy)
        .fold(f64::NEG_INFINITY, f64::max);
    let report = ComparisonReport {
        seeds: seeds.to_vec(),
        noise_multiplier: first_key.noise_multiplier,
        sampling_rate: first_key.sampling_rate,
        rounds: first_key.rounds,
        winner: entries[best].config.clone(),
        margin: entries[best].mean_accuracy - runner_up,
        entries,
    };

    std::fs::create_dir_all(out_dir)?;
    let path = out_dir.join("comparison.json");
    let mut body =
        serde_json::to_string_pretty(&report).map_err(|e| Error::ParseError(e.to_string()))?;
    body.push('\n');
    atomic_write(&path, body.as_bytes())?;
    Ok((report, path))
}

/// Rewrites metrics.csv as a gnuplot-ready whitespace table next to the
/// input ("metrics.dat" for "metrics.csv") and returns the new path.
pub fn plotdata(metrics_path: &Path) -> Result<PathBuf> {
    let text = std::fs::read_to_string(metrics_path)?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::ParseError("empty metrics file".into()))?;
    if header != METRICS_HEADER {
        return Err(Error::ParseError(format!(
            "unexpected metrics header {header:?}, want {METRICS_HEADER:?}"
        )));
    }
    let columns = METRICS_HEADER.split(',').count();

    let mut out = String::from("# ");
    out.push_str(&METRICS_HEADER.replace(',', " "));
    out.push('\n');
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != columns {
            return Err(Error::ParseError(format!(
                "row {} has {} fields, want {columns}",
                i + 2,
                fields.len()
            )));
        }
        for field in &fields {
            if field.parse::<f64>().is_err() {
                return Err(Error::ParseError(format!(
                    "row {} field {field:?} is not numeric",
                    i + 2
                )));
            }
        }
        out.push_str(&fields.join(" "));
        out.push('\n');
    }

    let dat_path = metrics_path.with_extension("dat");
    atomic_write(&dat_path, out.as_bytes())?;
    Ok(dat_path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config(extra: &str) -> ExperimentConfig {
        let text = format!(
            "schema_version = 1\n\
             [data.synthetic]\n\
             num_classes = 2\n\
             input_dim = 4\n\
             n = 120\n\
             separation = 4.0\n\
             [federation]\n\
             num_clients = 3\n\
             rounds = 4\n\
             [dp]\n\
             sigma = 1.0\n\
             expected_batch = 8.0\n\
             {extra}"
        );
        ExperimentConfig::parse(&text).unwrap()
    }

    fn csv_bytes(dir: &Path) -> Vec<u8> {
        std::fs::read(dir.join("metrics.csv")).unwrap()
    }

    #[test]
    fn run_writes_well_formed_metrics_and_summary() {
        let cfg = small_config("");
        let dir = tempfile::tempdir().unwrap();
        let outcome = run_experiment(&cfg, 7, None, dir.path()).unwrap();

        let text = String::from_utf8(csv_bytes(dir.path())).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), METRICS_HEADER);
        let rows: Vec<&str> = lines.collect();
        assert_eq!(rows.len(), 4);
        for (i, row) in rows.iter().enumerate() {
            let round: u64 = row.split(',').next().unwrap().parse().unwrap();
            assert_eq!(round, i as u64 + 1, "round column must be 1..T with no gaps");
        }
        let eps: Vec<f64> = outcome.rows.iter().map(|r| r.epsilon).collect();
        assert!(eps.windows(2).all(|w| w[0] <= w[1]), "epsilon must be nondecreasing: {eps:?}");

        let summary: RunSummary =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap())
                .unwrap();
        assert_eq!(summary.seed, 7);
        assert_eq!(summary.mode, "adaptive");
        let ledger = summary.ledger.expect("private run has a ledger");
        assert!(ledger.steps > 0);
        assert_eq!(ledger.noise_multiplier, 1.0);
    }

    #[test]
    fn rerun_and_worker_count_leave_metrics_byte_identical() {
        let cfg = small_config("");
        let base = tempfile::tempdir().unwrap();
        let mut bytes = Vec::new();
        for (label, workers) in [("a", None), ("b", None), ("c", Some(1)), ("d", Some(4))] {
            let dir = base.path().join(label);
            run_experiment(&cfg, 42, workers, &dir).unwrap();
            bytes.push(csv_bytes(&dir));
        }
        assert_eq!(bytes[0], bytes[1], "same seed must reproduce the file");
        assert_eq!(bytes[0], bytes[2], "one worker must match the default pool");
        assert_eq!(bytes[0], bytes[3], "four workers must match one worker");
    }

    #[test]
    fn nonprivate_epsilon_column_is_the_inf_sentinel() {
        let mut cfg = small_config("");
        cfg.federation.mode = TrainingMode::NonPrivate;
        let dir = tempfile::tempdir().unwrap();
        run_experiment(&cfg, 3, None, dir.path()).unwrap();
        let text = String::from_utf8(csv_bytes(dir.path())).unwrap();
        for row in text.lines().skip(1) {
            let eps = row.split(',').nth(3).unwrap();
            assert_eq!(eps, "inf");
        }
        let summary: RunSummary =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap())
                .unwrap();
        assert_eq!(summary.final_epsilon, "inf");
        assert!(summary.ledger.is_none());
    }

    #[test]
    fn adaptive_moves_the_clip_norm_and_fixed_does_not() {
        let adaptive = small_config("");
        let mut fixed = small_config("");
        fixed.federation.mode = TrainingMode::FixedClip;
        let dir = tempfile::tempdir().unwrap();

        let a = run_experiment(&adaptive, 11, None, &dir.path().join("a")).unwrap();
        let f = run_experiment(&fixed, 11, None, &dir.path().join("f")).unwrap();

        let a_norms: Vec<f64> = a.rows.iter().map(|r| r.mean_c).collect();
        assert!(
            a_norms.windows(2).any(|w| w[0] != w[1]),
            "adaptive mean_C never moved: {a_norms:?}"
        );
        for row in &f.rows {
            assert_eq!(row.mean_c, 1.0, "fixed-clip mean_C must stay at the initial norm");
        }
    }

    #[test]
    fn summary_echo_reproduces_the_run_byte_identically() {
        let cfg = small_config("");
        let base = tempfile::tempdir().unwrap();
        let first = base.path().join("first");
        run_experiment(&cfg, 9, None, &first).unwrap();

        let summary: RunSummary =
            serde_json::from_str(&std::fs::read_to_string(first.join("summary.json")).unwrap())
                .unwrap();
        let reloaded = ExperimentConfig::parse(&summary.config_echo).unwrap();
        let second = base.path().join("second");
        run_experiment(&reloaded, 9, None, &second).unwrap();

        assert_eq!(csv_bytes(&first), csv_bytes(&second));
    }

    #[test]
    fn failed_runs_leave_no_output_files() {
        let mut cfg = small_config("");
        // Separation 0 data is unlearnable; a huge rate forces overflow.
        cfg.data.synthetic.separation = 0.0;
        cfg.federation.lr = crate::federation::LrSchedule::Constant { base: 1e308 };
        cfg.federation.rounds = 8;
        let dir = tempfile::tempdir().unwrap();
        let err = run_experiment(&cfg, 5, None, dir.path()).unwrap_err();
        assert_eq!(err.class(), "numeric-failure");
        assert_eq!(err.exit_code(), 3);
        assert!(!dir.path().join("metrics.csv").exists());
        assert!(!dir.path().join("summary.json").exists());
    }

    #[test]
    fn out_dir_precedence_is_flag_env_config_default() {
        let mut cfg = small_config("");
        assert_eq!(resolve_out_dir(Some(Path::new("/tmp/flagged")), &cfg), PathBuf::from("/tmp/flagged"));

        // The env var is process-global state, so the whole precedence chain
        // is probed inside this single test.
        std::env::set_var(OUT_DIR_ENV, "/tmp/from-env");
        assert_eq!(resolve_out_dir(None, &cfg), PathBuf::from("/tmp/from-env"));
        std::env::remove_var(OUT_DIR_ENV);

        cfg.output.dir = Some(PathBuf::from("/tmp/from-config"));
        assert_eq!(resolve_out_dir(None, &cfg), PathBuf::from("/tmp/from-config"));
        cfg.output.dir = None;
        assert_eq!(resolve_out_dir(None, &cfg), PathBuf::from("out"));
    }

    fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
        let path = dir.join(name);
        std::fs::write(&path, body).unwrap();
        path
    }

    const COMPARE_BASE: &str = "schema_version = 1\n\
        [data.synthetic]\nnum_classes = 2\ninput_dim = 4\nn = 120\nseparation = 6.0\n\
        [federation]\nnum_clients = 3\nrounds = 3\n\
        [dp]\nsigma = 1.0\nexpected_batch = 8.0\n";

    #[test]
    fn compare_rejects_single_seeds_and_unmatched_budgets() {
        let dir = tempfile::tempdir().unwrap();
        let a = write_config(dir.path(), "a.toml", COMPARE_BASE);
        let b = write_config(
            dir.path(),
            "b.toml",
            &format!("{COMPARE_BASE}[federation.lr]\nschedule = \"constant\"\nbase = 0.5\n"),
        );

        let err = compare_experiments(&[a.clone(), b.clone()], &[1], None, dir.path()).unwrap_err();
        assert_eq!(err.class(), "invalid-spec");

        let c = write_config(
            dir.path(),
            "c.toml",
            &COMPARE_BASE.replace("sigma = 1.0", "sigma = 2.0"),
        );
        let err = compare_experiments(&[a, c], &[1, 2], None, dir.path()).unwrap_err();
        assert_eq!(err.class(), "unmatched-budgets");
    }

    #[test]
    fn compare_ranks_matched_configs_and_writes_the_report() {
        let dir = tempfile::tempdir().unwrap();
        let adaptive = write_config(dir.path(), "adaptive.toml", COMPARE_BASE);
        // Same budget, fixed mode, clip norm strangled to the floor.
        let strangled_body = format!("{COMPARE_BASE}[moo]\ninitial_C = 0.001\n")
            .replace("[federation]\n", "[federation]\nmode = \"fixed-clip\"\n");
        let strangled = write_config(dir.path(), "strangled.toml", &strangled_body);

        let (report, path) =
            compare_experiments(&[adaptive, strangled], &[1, 2, 3], None, dir.path()).unwrap();
        assert!(path.exists());
        assert_eq!(report.entries.len(), 2);
        assert_eq!(report.entries[0].final_accuracies.len(), 3);
        assert!(report.margin >= 0.0);
        let parsed: ComparisonReport =
            serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        assert_eq!(parsed.winner, report.winner);
    }

    #[test]
    fn plotdata_rewrites_the_csv_as_a_whitespace_table() {
        let cfg = small_config("");
        let dir = tempfile::tempdir().unwrap();
        run_experiment(&cfg, 1, None, dir.path()).unwrap();
        let dat = plotdata(&dir.path().join("metrics.csv")).unwrap();
        assert_eq!(dat, dir.path().join("metrics.dat"));
        let text = std::fs::read_to_string(&dat).unwrap();
        let mut lines = text.lines();
        let header = lines.next().unwrap();
        assert!(header.starts_with("# round train_loss"));
        let rows: Vec<&str> = lines.collect();
        assert_eq!(rows.len(), 4);
        assert!(rows.iter().all(|r| !r.contains(',')));

        let bad = dir.path().join("bad.csv");
        std::fs::write(&bad, "not,a,metrics,header\n").unwrap();
        assert_eq!(plotdata(&bad).unwrap_err().class(), "parse-error");
    }
}
