use std::fs;
use std::path::{Path, PathBuf};

use flowbench::bench::{
    emit_report, evaluate, profile, read_results, rollout_mean, Aggregation, IdentityPredictor, ModelPredictor, Predictor,
    RecordKey, RESULTS_FILE,
};
use flowbench::datakit::{
    ingest_points, list_cases, read_meta, read_points_csv, split_cases, write_container, CaseMeta, Dataset, DatasetSplit,
    SCHEMA_VERSION, SPLIT_FILE,
};
use flowbench::flowgen::{case_id, enumerate_cases, solve_case, OperatingParams, Problem, Subset};
use flowbench::operators::{build_model, Model, ModelKind, ModelSpec};
use flowbench::trainer::{load_run, train, write_run, Precision, TrainConfig};
use flowbench::Scalar;
use rayon::prelude::*;
use serde::Deserialize;

use crate::config::FileConfig;
use crate::{CliError, Command};

pub fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Gen { problem, subsets, out, resolution, limit, workers, common } => {
            gen(&problem, &subsets, &out, resolution.as_deref(), limit, workers, &FileConfig::load(common.config.as_deref())?)
        }
        Command::Ingest { problem, data, out, common } => {
            FileConfig::load(common.config.as_deref())?;
            ingest(&problem, &data, &out)
        }
        Command::Split { data, seed } => split(&data, seed),
        Command::Train { data, model, out, subsets, seed, epochs, lr, common } => {
            let file = FileConfig::load(common.config.as_deref())?;
            let mut cfg = file.train.clone().unwrap_or_default();
            if let Some(e) = epochs {
                cfg.epochs = e;
            }
            if let Some(lr) = lr {
                cfg.lr = Some(lr);
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            cfg.validate()?;
            let dataset = load_dataset(&data, subsets.as_deref(), cfg.seed)?;
            let spec = model_spec(&model, &dataset, &file, cfg.seed)?;
            match cfg.precision {
                Precision::F32 => train_run::<f32>(&spec, &dataset, &cfg, &out),
                Precision::F64 => train_run::<f64>(&spec, &dataset, &cfg, &out),
            }
        }
        Command::Eval { data, run, model, out, split, subsets, pooled, workers, seed } => {
            let dataset = load_dataset(&data, subsets.as_deref(), seed)?;
            let cases = dataset.split_cases(&split)?;
            let agg = if pooled { Aggregation::Pooled } else { Aggregation::PerFrame };
            let (name, report) = with_predictor(run.as_deref(), model.as_deref(), |p| Ok(evaluate(p, &cases, agg, workers)?))?;
            let m = report.metrics;
            log::info!("{name} on {split}: mse {:.6e} nmse {:.6e} mae {:.6e} over {} frames", m.mse, m.nmse, m.mae, report.frames);
            let key = RecordKey::new(&name, dataset.problem().name(), &subset_label(&dataset), &split);
            emit_report(&key.metrics(&report), &out)?;
            Ok(())
        }
        Command::Rollout { data, run, model, out, steps, split, subsets, workers, seed } => {
            let dataset = load_dataset(&data, subsets.as_deref(), seed)?;
            let cases = dataset.split_cases(&split)?;
            if cases.is_empty() {
                return Err(CliError::Config(format!("split '{split}' has no cases")));
            }
            let (name, curve) = with_predictor(run.as_deref(), model.as_deref(), |p| Ok(rollout_mean(p, &cases, steps, workers)?))?;
            log::info!("{name}: {}-step rollout over {} cases", curve.len(), cases.len());
            let key = RecordKey::new(&name, dataset.problem().name(), &subset_label(&dataset), &split);
            emit_report(&key.rollout(&curve), &out)?;
            Ok(())
        }
        Command::Profile { data, model, run, out, seed, common } => {
            let file = FileConfig::load(common.config.as_deref())?;
            let dataset = load_dataset(&data, None, seed)?;
            let model: Model<f32> = match (run, model) {
                (Some(run), _) => load_run(&run)?.0,
                (None, Some(kind)) => build_model(&model_spec(&kind, &dataset, &file, seed)?)?,
                (None, None) => return Err(CliError::Usage("profile needs --model or --run".into())),
            };
            let cost = profile(&model, &dataset, &file.profile.unwrap_or_default())?;
            log::info!(
                "{}: {} parameters, {:.3e} s/step, {:.3e} s/epoch, {:.3e} s/inference",
                model.kind(),
                cost.params,
                cost.train_step_secs,
                cost.train_epoch_secs,
                cost.inference_secs
            );
            fs::create_dir_all(&out).map_err(io(&out))?;
            let path = out.join("profile.json");
            let text = serde_json::to_vec_pretty(&cost).map_err(|e| CliError::Config(e.to_string()))?;
            fs::write(&path, text).map_err(io(&path))
        }
        Command::Report { inputs, out } => {
            let mut records = Vec::new();
            for input in inputs {
                let path = if input.is_dir() { input.join(RESULTS_FILE) } else { input };
                records.extend(read_results(&path)?);
            }
            let files = emit_report(&records, &out)?;
            log::info!("wrote {} rows and {} plots to {}", records.len(), files.len() - 1, out.display());
            Ok(())
        }
    }
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}

fn parse_resolution(s: &str) -> Result<[usize; 2], CliError> {
    let parts: Vec<&str> = s.split(['x', 'X', ',']).collect();
    match parts.as_slice() {
        [h, w] => match (h.trim().parse(), w.trim().parse()) {
            (Ok(h), Ok(w)) => Ok([h, w]),
            _ => Err(CliError::Usage(format!("resolution '{s}' is not HxW"))),
        },
        _ => Err(CliError::Usage(format!("resolution '{s}' is not HxW"))),
    }
}

fn gen(problem: &str, subsets: &str, out: &Path, resolution: Option<&str>, limit: Option<usize>, workers: usize, file: &FileConfig) -> Result<(), CliError> {
    let problem: Problem = problem.parse()?;
    let subsets = Subset::parse_list(subsets)?;
    let mut cfg = file.solver.clone().unwrap_or_default();
    if let Some(r) = resolution {
        cfg.resolution = parse_resolution(r)?;
    }
    cfg.validate()?;
    if !problem.generator_supported() {
        return Err(CliError::Capability(format!(
            "{problem} cases cannot be generated by the built-in solver; convert exported data with `flowbench ingest`"
        )));
    }
    let jobs: Vec<(Subset, usize, OperatingParams)> = subsets
        .iter()
        .flat_map(|&s| enumerate_cases(problem, s).into_iter().enumerate().take(limit.unwrap_or(usize::MAX)).map(move |(i, p)| (s, i, p)))
        .collect();
    log::info!("generating {} {problem} cases at {:?} on {workers} workers", jobs.len(), cfg.resolution);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| CliError::Config(format!("worker pool: {e}")))?;
    let results: Vec<Result<(), CliError>> = pool.install(|| {
        jobs.par_iter()
            .map(|&(subset, i, params)| {
                let id = case_id(problem, subset, i);
                let mut record = solve_case(&params, &cfg)?;
                record.meta.case_id = id.clone();
                record.meta.subset = Some(subset);
                write_container(&record, &out.join(&id))?;
                log::info!("wrote {id}");
                Ok(())
            })
            .collect()
    });
    let mut first = None;
    for r in results {
        if let Err(e) = r {
            log::error!("{e}");
            first.get_or_insert(e);
        }
    }
    first.map_or(Ok(()), Err)
}

/// Sidecar describing one scattered-point export.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct IngestDescriptor {
    case_id: Option<String>,
    subset: Option<Subset>,
    params: OperatingParams,
    /// Interval between exported frames in seconds.
    dt: f64,
    resolution: [usize; 2],
}

fn ingest(problem: &str, data: &Path, out: &Path) -> Result<(), CliError> {
    let problem: Problem = problem.parse()?;
    let mut descriptors: Vec<PathBuf> = fs::read_dir(data)
        .map_err(io(data))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    descriptors.sort();
    if descriptors.is_empty() {
        return Err(CliError::Config(format!("no <id>.json descriptors under {}", data.display())));
    }
    for path in descriptors {
        let text = fs::read(&path).map_err(io(&path))?;
        let d: IngestDescriptor = serde_json::from_slice(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        if d.params.problem != problem {
            return Err(CliError::Config(format!("{} describes a {} case, expected {problem}", path.display(), d.params.problem)));
        }
        let stem = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
        let id = d.case_id.unwrap_or(stem);
        let rows = read_points_csv(&path.with_extension("csv"))?;
        let (hm, wm) = d.params.extents_m();
        let meta = CaseMeta {
            schema_version: SCHEMA_VERSION,
            problem,
            subset: d.subset,
            case_id: id.clone(),
            params: d.params,
            dt: d.dt,
            extents_m: [hm, wm],
            resolution: d.resolution,
            n_frames: 0,
            channels: Vec::new(),
            flags: Default::default(),
        };
        write_container(&ingest_points(meta, &rows)?, &out.join(&id))?;
        log::info!("ingested {id}");
    }
    Ok(())
}

fn split(data: &Path, seed: u64) -> Result<(), CliError> {
    let ids = list_cases(data)?.iter().map(|d| read_meta(d).map(|m| m.case_id)).collect::<Result<Vec<_>, _>>()?;
    let split = split_cases(&ids, seed)?;
    let path = data.join(SPLIT_FILE);
    let text = serde_json::to_vec_pretty(&split).map_err(|e| CliError::Config(e.to_string()))?;
    fs::write(&path, text).map_err(io(&path))?;
    log::info!("split {} cases into {}/{}/{}", ids.len(), split.train.len(), split.val.len(), split.test.len());
    Ok(())
}

/// Loads a dataset root, keeping only the listed subsets when given.
fn load_dataset(data: &Path, subsets: Option<&str>, seed: u64) -> Result<Dataset, CliError> {
    let dataset = Dataset::load(data, seed)?;
    let Some(list) = subsets else { return Ok(dataset) };
    let keep = Subset::parse_list(list)?;
    let cases: Vec<_> = dataset.cases.into_iter().filter(|c| c.meta.subset.is_some_and(|s| keep.contains(&s))).collect();
    if cases.is_empty() {
        return Err(CliError::Config(format!("no cases in subsets '{list}'")));
    }
    let has = |id: &String| cases.iter().any(|c| &c.meta.case_id == id);
    let s = dataset.split;
    let split = DatasetSplit {
        train: s.train.into_iter().filter(|i| has(i)).collect(),
        val: s.val.into_iter().filter(|i| has(i)).collect(),
        test: s.test.into_iter().filter(|i| has(i)).collect(),
        ..s
    };
    Ok(Dataset::new(cases, split)?)
}

fn subset_label(dataset: &Dataset) -> String {
    let mut names: Vec<&str> = dataset.cases.iter().filter_map(|c| c.meta.subset.map(Subset::name)).collect();
    names.sort();
    names.dedup();
    if names.is_empty() {
        "none".into()
    } else {
        names.join("+")
    }
}

fn model_spec(kind: &str, dataset: &Dataset, file: &FileConfig, seed: u64) -> Result<ModelSpec, CliError> {
    let kind: ModelKind = kind.parse()?;
    let first = &dataset.cases[0];
    let mut spec = ModelSpec::new(kind, dataset.problem().omega_dim(), [first.height(), first.width()], seed);
    if let Some(arch) = &file.model {
        if arch.kind() != kind {
            return Err(CliError::Config(format!("[model] describes {} but --model is {kind}", arch.kind())));
        }
        spec.arch = arch.clone();
    }
    Ok(spec)
}

fn train_run<T: Scalar>(spec: &ModelSpec, dataset: &Dataset, cfg: &TrainConfig, out: &Path) -> Result<(), CliError> {
    let model = build_model::<T>(spec)?;
    log::info!("training {} ({} parameters) on {} cases", spec.kind(), model.count_params(), dataset.train().len());
    let (model, state) = train(model, dataset, cfg)?;
    write_run(out, cfg, &model, &state)?;
    if let Some(best) = state.best_epoch {
        log::info!("best epoch {best} (score {:.6e}); run written to {}", state.best_score, out.display());
    }
    Ok(())
}

/// Runs `f` with the run's model predictor, or with the identity baseline.
fn with_predictor<R>(
    run: Option<&Path>,
    model: Option<&str>,
    f: impl FnOnce(&dyn Predictor) -> Result<R, CliError>,
) -> Result<(String, R), CliError> {
    match (run, model) {
        (Some(run), _) => {
            let (model, stats) = load_run::<f32>(run)?;
            let out = f(&ModelPredictor { model: &model, stats: &stats })?;
            Ok((model.kind().name().to_string(), out))
        }
        (None, Some(m)) if m.eq_ignore_ascii_case("identity") => Ok(("identity".into(), f(&IdentityPredictor)?)),
        (None, Some(m)) => Err(CliError::Usage(format!("model '{m}' needs --run; only 'identity' is evaluated without one"))),
        (None, None) => Err(CliError::Usage("need --run or --model identity".into())),
    }
}
