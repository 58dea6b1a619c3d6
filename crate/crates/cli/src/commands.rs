use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use bootgan_core::checkpoint::Checkpoint;
use bootgan_core::data::synthesize_dataset;
use bootgan_core::eval::{aggregate_runs, baseline_expand};
use bootgan_core::training::run_bootstrap;
use bootgan_core::{Dataset, EvalReport, ExpansionState, GeneratorModel, RunArtifact, TrainingConfig};
use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::config::{parse_synthetic_spec, read, RunConfigFile};
use crate::CliError;

pub const METHOD: &str = "bootgan";
pub const BASELINE_METHOD: &str = "pattern-overlap";
pub const FAILED_MARKER: &str = "FAILED";

const MANIFEST: &str = "config.json";
const TRACE: &str = "trace.tsv";

/// Per-run `config.json`: the exact training config and what it was bound to.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_index: usize,
    pub training: TrainingConfig,
    pub config_hash: String,
    pub dataset_fingerprint: String,
    pub eval_k: Vec<usize>,
}

impl RunManifest {
    fn load(run_dir: &Path) -> Result<Self, CliError> {
        let path = run_dir.join(MANIFEST);
        serde_json::from_str(&read(&path)?).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
    }

    /// Fails unless `dataset` is the one this run was trained on.
    fn check_dataset(&self, dataset: &Dataset) -> Result<(), CliError> {
        let hash = self.training.config_hash(&dataset.fingerprint());
        if hash != self.config_hash {
            return Err(CliError::config(format!(
                "dataset does not match the artifact (config hash {} expected, {} found)",
                &self.config_hash[..12],
                &hash[..12]
            )));
        }
        Ok(())
    }
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub out_dir: PathBuf,
    pub run_dirs: Vec<PathBuf>,
    /// Aggregate over all runs; `None` when the dataset has no gold labels.
    pub report: Option<EvalReport>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, contents).map_err(io_err(path))
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(io_err(path))
}

fn clear_marker(dir: &Path) -> Result<(), CliError> {
    let marker = dir.join(FAILED_MARKER);
    if marker.exists() {
        fs::remove_file(&marker).map_err(io_err(&marker))?;
    }
    Ok(())
}

fn mark_failed(dir: &Path, err: &CliError) {
    if let Err(e) = fs::write(dir.join(FAILED_MARKER), format!("{err}\n")) {
        warn!("could not write failure marker in {}: {e}", dir.display());
    }
}

/// Writes the canonical dataset described by the spec file at `spec_path`.
pub fn cmd_synthesize(spec_path: &Path, out_path: &Path, seed: Option<u64>) -> Result<Dataset, CliError> {
    let spec = parse_synthetic_spec(&read(spec_path)?, seed)?;
    let dataset = synthesize_dataset(&spec)?;
    if let Some(parent) = out_path.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    write(out_path, dataset.to_canonical_string())?;
    info!(
        "wrote {} entities, {} patterns, {} categories to {}",
        dataset.entities().len(),
        dataset.patterns().len(),
        dataset.category_count(),
        out_path.display()
    );
    Ok(dataset)
}

/// Runs the config `repeat` times with seeds `seed + run_index`.
///
/// `out` and `seed` override the config's `output_dir` and `seed`. On error
/// the artifacts written so far stay in place next to a `FAILED` marker.
pub fn cmd_train(config_path: &Path, out: Option<&Path>, seed: Option<u64>) -> Result<TrainOutcome, CliError> {
    let text = read(config_path)?;
    let mut cfg = RunConfigFile::parse(&text, config_path.parent().unwrap_or(Path::new(".")))?;
    if let Some(s) = seed {
        cfg.training.seed = s;
    }
    let out_dir = out
        .map(Path::to_path_buf)
        .or_else(|| cfg.output_dir.clone())
        .ok_or_else(|| CliError::config("no output directory: pass --out or set output_dir"))?;
    let dataset = cfg.load_dataset()?;
    create_dir(&out_dir)?;
    clear_marker(&out_dir)?;
    write(&out_dir.join("config.toml"), &text)?;
    write(&out_dir.join("dataset.txt"), dataset.to_canonical_string())?;
    info!("base seed {}, {} run(s), output in {}", cfg.training.seed, cfg.repeat, out_dir.display());

    train_runs(&cfg, &dataset, &out_dir).inspect_err(|e| mark_failed(&out_dir, e))
}

fn train_runs(cfg: &RunConfigFile, dataset: &Dataset, out_dir: &Path) -> Result<TrainOutcome, CliError> {
    let mut run_dirs = Vec::new();
    let mut reports = Vec::new();
    for i in 0..cfg.repeat {
        let mut training = cfg.training.clone();
        training.seed = cfg.training.seed.wrapping_add(i as u64);
        let dir = out_dir.join(format!("run_{i:03}"));
        create_dir(&dir)?;
        clear_marker(&dir)?;
        info!("run {i}: seed {}", training.seed);

        let result = run_bootstrap(dataset, &training)
            .map_err(CliError::from)
            .and_then(|artifact| write_run(&dir, i, &artifact, dataset, &cfg.eval_k));
        let report = result.inspect_err(|e| mark_failed(&dir, e))?;
        if let Some(r) = report {
            info!("run {i}: micro P@{} = {:?}", cfg.eval_k[0], r.micro_mean(cfg.eval_k[0]));
            reports.push(r);
        }
        run_dirs.push(dir);
    }
    let report = if reports.is_empty() {
        info!("dataset has no gold labels; skipping evaluation");
        None
    } else {
        let agg = aggregate_runs(&reports)?;
        write_reports(out_dir, "report", &[&agg])?;
        Some(agg)
    };
    Ok(TrainOutcome {
        out_dir: out_dir.to_path_buf(),
        run_dirs,
        report,
    })
}

fn write_run(
    dir: &Path,
    run_index: usize,
    artifact: &RunArtifact,
    dataset: &Dataset,
    eval_k: &[usize],
) -> Result<Option<EvalReport>, CliError> {
    let manifest = RunManifest {
        run_index,
        training: artifact.config.clone(),
        config_hash: artifact.config_hash.clone(),
        dataset_fingerprint: artifact.dataset_fingerprint.clone(),
        eval_k: eval_k.to_vec(),
    };
    write(&dir.join(MANIFEST), serde_json::to_string_pretty(&manifest).map_err(bootgan_core::Error::from)?)?;
    for (k, g) in artifact.generators.iter().enumerate() {
        g.to_checkpoint(&artifact.config_hash)?.save(&dir.join(generator_file(k + 1)))?;
    }
    for (k, d) in artifact.discriminators.iter().enumerate() {
        d.to_checkpoint(&artifact.config_hash, k + 1)?.save(&dir.join(format!("discriminator_{:02}.json", k + 1)))?;
    }

    let mut trace = Vec::new();
    artifact.state.write_trace(&mut trace, dataset.categories(), dataset.entities())?;
    write(&dir.join(TRACE), trace)?;

    let mut log = serde_json::to_string(&serde_json::json!({
        "event": "pretrain",
        "losses": artifact.pretrain_losses,
    }))
    .map_err(bootgan_core::Error::from)?;
    log.push('\n');
    for entry in &artifact.logs {
        let mut v = serde_json::to_value(entry).map_err(bootgan_core::Error::from)?;
        v.as_object_mut().expect("epoch log is an object").insert("event".into(), "epoch".into());
        log.push_str(&v.to_string());
        log.push('\n');
    }
    write(&dir.join("log.jsonl"), log)?;

    if !dataset.has_gold() {
        return Ok(None);
    }
    let report = EvalReport::evaluate(
        METHOD,
        &artifact.config_hash,
        dataset.categories(),
        &artifact.state,
        dataset.gold(),
        eval_k,
    )?;
    let mut curve = Vec::new();
    report.write_curve_csv(&mut curve, 0)?;
    write(&dir.join("curve.csv"), curve)?;
    Ok(Some(report))
}

fn generator_file(iteration: usize) -> String {
    format!("generator_iter_{iteration:02}.json")
}

fn write_reports(dir: &Path, stem: &str, reports: &[&EvalReport]) -> Result<(), CliError> {
    let (mut table, mut csv) = (Vec::new(), Vec::new());
    for (i, r) in reports.iter().enumerate() {
        if i > 0 {
            table.push(b'\n');
        }
        r.write_table(&mut table)?;
        r.write_csv(&mut csv, i == 0)?;
    }
    write(&dir.join(format!("{stem}.txt")), table)?;
    write(&dir.join(format!("{stem}.csv")), csv)
}

/// A run directory itself, or the first run of a `cmd_train` output.
fn resolve_run_dir(artifact: &Path) -> Result<PathBuf, CliError> {
    if artifact.join(MANIFEST).exists() {
        return Ok(artifact.to_path_buf());
    }
    let first = artifact.join("run_000");
    if first.join(MANIFEST).exists() {
        info!("using {}", first.display());
        return Ok(first);
    }
    Err(CliError::config(format!("{} is not a training artifact", artifact.display())))
}

fn run_dirs(artifact: &Path) -> Result<Vec<PathBuf>, CliError> {
    if artifact.join(MANIFEST).exists() {
        return Ok(vec![artifact.to_path_buf()]);
    }
    let mut dirs: Vec<PathBuf> = fs::read_dir(artifact)
        .map_err(io_err(artifact))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with("run_")) && p.join(MANIFEST).exists()
        })
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(CliError::config(format!("{} contains no runs", artifact.display())));
    }
    Ok(dirs)
}

fn load_dataset(path: &Path) -> Result<Dataset, CliError> {
    Ok(Dataset::parse(&read(path)?)?)
}

/// Inference-only replay of a trained run: iteration `k` is decoded by the
/// generator snapshot taken after round `k`. Returns the listing in trace
/// format; `iterations = Some(0)` lists nothing.
pub fn cmd_expand(
    artifact: &Path,
    dataset_path: &Path,
    iterations: Option<usize>,
    per_iteration: Option<usize>,
) -> Result<String, CliError> {
    let run_dir = resolve_run_dir(artifact)?;
    let manifest = RunManifest::load(&run_dir)?;
    let dataset = load_dataset(dataset_path)?;
    manifest.check_dataset(&dataset)?;
    let trained = manifest.training.iterations;
    let k = iterations.unwrap_or(trained);
    if k > trained {
        return Err(CliError::config(format!("artifact has {trained} iterations, asked for {k}")));
    }
    let n = per_iteration.unwrap_or(manifest.training.per_iteration);
    if n == 0 {
        return Err(CliError::config("per-iteration count must be >= 1"));
    }

    let graph = dataset.graph();
    let mut state = ExpansionState::new(graph.entity_count(), dataset.seeds().to_vec())?;
    for it in 1..=k {
        let ckpt = Checkpoint::load(&run_dir.join(generator_file(it)))?;
        if ckpt.config_hash != manifest.config_hash {
            return Err(CliError::config(format!("{} belongs to a different run", generator_file(it))));
        }
        GeneratorModel::from_checkpoint(&ckpt)?.expand_next(graph, &mut state, n)?;
    }
    let mut listing = Vec::new();
    state.write_trace(&mut listing, dataset.categories(), dataset.entities())?;
    Ok(String::from_utf8(listing).expect("trace is utf-8"))
}

#[derive(Clone, Debug, Default)]
pub struct EvalArgs {
    /// A single `trace.tsv`; exclusive with `artifact`.
    pub trace: Option<PathBuf>,
    /// A `cmd_train` output or one of its run directories.
    pub artifact: Option<PathBuf>,
    /// Dataset with gold labels.
    pub dataset: PathBuf,
    /// Empty means the artifact's `eval_k`, or the trace length.
    pub k: Vec<usize>,
    pub with_baseline: bool,
    /// N for the baseline; defaults to the run's N or the trace's first
    /// iteration size.
    pub per_iteration: Option<usize>,
    /// Report directory; defaults to the artifact or the trace's directory.
    pub out: Option<PathBuf>,
}

/// Writes `eval_report.txt` and `eval_report.csv`; returns the method report
/// followed by the baseline report when requested.
pub fn cmd_eval(args: &EvalArgs) -> Result<Vec<EvalReport>, CliError> {
    let dataset = load_dataset(&args.dataset)?;
    if !dataset.has_gold() {
        return Err(CliError::config(format!("{} has no gold labels", args.dataset.display())));
    }
    let graph = dataset.graph();
    let read_state = |path: &Path| -> Result<ExpansionState, CliError> {
        let file = fs::File::open(path).map_err(io_err(path))?;
        Ok(ExpansionState::read_trace(BufReader::new(file), graph.entity_count(), dataset.seeds().to_vec())?)
    };

    // (method, config hash, states, default K list, N, report dir)
    let (method, hash, states, default_k, n, out_dir) = match (&args.trace, &args.artifact) {
        (Some(_), Some(_)) | (None, None) => return Err(CliError::config("pass exactly one of --trace or --artifact")),
        (Some(trace), None) => {
            let state = read_state(trace)?;
            let n = (0..state.category_count()).map(|c| state.expanded(1, c).len()).max().unwrap_or(0);
            let parent = trace.parent().unwrap_or(Path::new(".")).to_path_buf();
            (
                "trace",
                format!("trace:{}", dataset.fingerprint()),
                vec![state.clone()],
                vec![state.iterations()],
                n,
                parent,
            )
        }
        (None, Some(artifact)) => {
            let mut states = Vec::new();
            let mut first: Option<RunManifest> = None;
            for dir in run_dirs(artifact)? {
                let m = RunManifest::load(&dir)?;
                m.check_dataset(&dataset)?;
                states.push(read_state(&dir.join(TRACE))?);
                first.get_or_insert(m);
            }
            let m = first.expect("run_dirs is non-empty");
            (METHOD, m.config_hash, states, m.eval_k, m.training.per_iteration, artifact.clone())
        }
    };
    let ks = if args.k.is_empty() { default_k } else { args.k.clone() };
    if ks.is_empty() || ks.contains(&0) {
        return Err(CliError::config(format!("K values must be >= 1, got {ks:?}")));
    }
    let per_run = states
        .iter()
        .map(|s| EvalReport::evaluate(method, &hash, dataset.categories(), s, dataset.gold(), &ks))
        .collect::<Result<Vec<_>, _>>()?;
    let mut reports = vec![aggregate_runs(&per_run)?];

    if args.with_baseline {
        let n = args.per_iteration.unwrap_or(n);
        if n == 0 {
            return Err(CliError::config("cannot infer the baseline's per-iteration count; pass --per-iteration"));
        }
        let k = *ks.iter().max().expect("non-empty");
        let state = baseline_expand(&dataset, n, k)?;
        reports.push(EvalReport::evaluate(
            BASELINE_METHOD,
            &format!("baseline:{}", dataset.fingerprint()),
            dataset.categories(),
            &state,
            dataset.gold(),
            &ks,
        )?);
    }
    let out_dir = args.out.clone().unwrap_or(out_dir);
    create_dir(&out_dir)?;
    write_reports(&out_dir, "eval_report", &reports.iter().collect::<Vec<_>>())?;
    Ok(reports)
}
