//! Subcommand bodies. Each reads its inputs from the config and writes its
//! outputs under `cfg.out`.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use log::{info, warn};
use mrap_core::eval::{self, format_table, write_report_csv, EvalReport};
use mrap_core::ingest::{read_manifest, write_manifest};
use mrap_core::propagation::{self, read_imputations, write_imputations, write_trace, ImputationReport};
use mrap_core::regression::count_paths_filtered;
use mrap_core::{
    build_registry, parse_attributes, parse_triples, split_attributes, subsample_observed, Dataset, DatasetBundle,
    Direction, ModelRegistry, OrientedRelation, PathKey, Split,
};

use crate::{out_path, CliError, RunConfig};

const MANIFEST: &str = "split.tsv";
const MODELS: &str = "models.tsv";
const IMPUTED: &str = "imputed.tsv";
const TRACE: &str = "trace.csv";

fn data_err(context: impl Display) -> impl FnOnce(String) -> CliError {
    move |msg| CliError::Data(format!("{context}: {msg}"))
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::Data(format!("{}: {e}", path.display()))
}

fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path).map(BufReader::new).map_err(io_err(path))
}

/// Creates `path` (and its directory) and fills it through a buffered writer.
fn write_file(path: &Path, body: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let mut w = BufWriter::new(File::create(path).map_err(io_err(path))?);
    body(&mut w).and_then(|_| w.flush()).map_err(io_err(path))?;
    info!("wrote {}", path.display());
    Ok(())
}

fn require<'a>(path: &'a Option<std::path::PathBuf>, flag: &str) -> Result<&'a Path, CliError> {
    path.as_deref()
        .ok_or_else(|| CliError::Usage(format!("missing required input --{flag}")))
}

pub fn load_dataset(cfg: &RunConfig) -> Result<Dataset, CliError> {
    let tp = require(&cfg.triples, "triples")?;
    let ap = require(&cfg.attrs, "attrs")?;
    let triples = parse_triples(open(tp)?).map_err(|e| data_err(tp.display())(e.to_string()))?;
    let parsed = parse_attributes(open(ap)?).map_err(|e| data_err(ap.display())(e.to_string()))?;
    if parsed.duplicates > 0 {
        warn!("{}: {} duplicate attribute rows, last value kept", ap.display(), parsed.duplicates);
    }
    Ok(Dataset::from_rows(&triples, &parsed.rows))
}

/// Dataset with its split applied: the manifest in `cfg.out` when present,
/// otherwise a fresh seeded split that is then written there. The observed
/// set is subsampled when `observed_fraction < 1`.
pub fn load_bundle(cfg: &RunConfig) -> Result<DatasetBundle, CliError> {
    let dataset = load_dataset(cfg)?;
    let manifest = out_path(cfg, MANIFEST);
    let bundle = if manifest.exists() {
        info!("using split manifest {}", manifest.display());
        let split = read_manifest(open(&manifest)?, &dataset).map_err(|e| data_err(manifest.display())(e.to_string()))?;
        DatasetBundle::with_split(dataset, split)
    } else {
        let bundle = split_attributes(dataset, &cfg.split).map_err(|e| CliError::Data(e.to_string()))?;
        write_file(&manifest, |w| write_manifest(&bundle, w))?;
        bundle
    };
    if cfg.observed_fraction < 1.0 {
        subsample_observed(&bundle, cfg.observed_fraction, cfg.split.seed).map_err(|e| CliError::Data(e.to_string()))
    } else {
        Ok(bundle)
    }
}

/// Models from `cfg.out/models.tsv` when present, otherwise fitted and
/// written there.
pub fn load_registry(cfg: &RunConfig, bundle: &DatasetBundle) -> Result<ModelRegistry, CliError> {
    let path = out_path(cfg, MODELS);
    if path.exists() {
        info!("using model dump {}", path.display());
        return ModelRegistry::read_dump(open(&path)?, bundle, cfg.admission.clone())
            .map_err(|e| data_err(path.display())(e.to_string()));
    }
    let reg = fit_and_report(cfg, bundle);
    write_file(&path, |w| reg.write_dump(bundle, w))?;
    Ok(reg)
}

fn fit_and_report(cfg: &RunConfig, bundle: &DatasetBundle) -> ModelRegistry {
    let reg = build_registry(bundle, &cfg.admission);
    let rejected: usize = reg.rejections().values().sum();
    eprintln!(
        "models: {} admitted ({} fitted, {} derived reverse), {} rejected",
        reg.len(),
        reg.fitted_count(),
        reg.len() - reg.fitted_count(),
        rejected
    );
    for (reason, n) in reg.rejections() {
        eprintln!("  {:<22} {n}", reason.as_str());
    }
    if reg.is_empty() {
        warn!("no regression model was admitted; every target will keep its initial value");
    }
    reg
}

pub fn stats(cfg: &RunConfig, out: &mut dyn Write) -> Result<(), CliError> {
    let dataset = load_dataset(cfg)?;
    let g = &dataset.graph;
    let mut lines: Vec<(String, usize)> = vec![
        ("entities".into(), g.num_entities()),
        ("edges".into(), g.num_edges()),
        ("relation_types".into(), g.num_relations()),
        ("attribute_types".into(), dataset.attr_types.len()),
        ("attributes".into(), dataset.truth.len()),
    ];
    let (counts, models, paths) = if dataset.truth.is_empty() {
        ([0; 3], 0, 0)
    } else {
        let bundle = load_bundle(cfg)?;
        let reg = build_registry(&bundle, &cfg.admission);
        let paths = count_paths_filtered(&bundle.graph, &reg, &bundle.attrs, cfg.propagation.filter());
        let counts = [Split::Train, Split::Dev, Split::Test].map(|s| bundle.split_count(s));
        (counts, reg.len(), paths)
    };
    lines.push(("attributes_train".into(), counts[0]));
    lines.push(("attributes_dev".into(), counts[1]));
    lines.push(("attributes_test".into(), counts[2]));
    lines.push(("regression_functions".into(), models));
    lines.push(("message_passing_paths".into(), paths));
    let io = |e: std::io::Error| CliError::Data(e.to_string());
    for (k, v) in lines {
        writeln!(out, "{k}\t{v}").map_err(io)?;
    }
    for (a, keys) in dataset.keys_by_type().iter().enumerate() {
        let vals: Vec<f64> = keys.iter().map(|k| dataset.truth[k]).collect();
        let (min, max) = vals.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        let mean = vals.iter().sum::<f64>() / vals.len().max(1) as f64;
        writeln!(
            out,
            "attr\t{}\tcount={}\tmin={min}\tmax={max}\tmean={mean}",
            dataset.attr_types.label(a as u32).unwrap_or("?"),
            vals.len()
        )
        .map_err(io)?;
    }
    Ok(())
}

pub fn split(cfg: &RunConfig) -> Result<(), CliError> {
    let dataset = load_dataset(cfg)?;
    let bundle = split_attributes(dataset, &cfg.split).map_err(|e| CliError::Data(e.to_string()))?;
    write_file(&out_path(cfg, MANIFEST), |w| write_manifest(&bundle, w))?;
    eprintln!(
        "split: {} train / {} dev / {} test",
        bundle.split_count(Split::Train),
        bundle.split_count(Split::Dev),
        bundle.split_count(Split::Test)
    );
    Ok(())
}

/// `DEP,INDEP` (inner) or `DEP,INDEP,RELATION[:reverse]`.
pub fn parse_diff_key(text: &str, bundle: &DatasetBundle) -> Result<PathKey, CliError> {
    let usage = |m: String| CliError::Usage(format!("--differences `{text}`: {m}"));
    let parts: Vec<&str> = text.split(',').map(str::trim).collect();
    if !(2..=3).contains(&parts.len()) {
        return Err(usage("expected DEP,INDEP[,RELATION[:reverse]]".into()));
    }
    let ty = |l: &str| bundle.attrs.type_id(l).ok_or_else(|| usage(format!("unknown attribute type `{l}`")));
    let (dep, indep) = (ty(parts[0])?, ty(parts[1])?);
    let Some(rel) = parts.get(2) else {
        return Ok(PathKey::inner(dep, indep));
    };
    let (name, dir) = match rel.split_once(':') {
        None | Some((_, "forward")) => (rel.split(':').next().unwrap_or(rel), Direction::Forward),
        Some((n, "reverse")) => (n, Direction::Reverse),
        Some((_, d)) => return Err(usage(format!("unknown direction `{d}`"))),
    };
    let r = bundle
        .graph
        .relation(name)
        .ok_or_else(|| usage(format!("unknown relation `{name}`")))?;
    let o = match dir {
        Direction::Forward => OrientedRelation::forward(r),
        Direction::Reverse => OrientedRelation::reverse(r),
    };
    Ok(PathKey::relational(dep, indep, o))
}

pub fn fit(cfg: &RunConfig, differences: Option<&str>) -> Result<(), CliError> {
    let bundle = load_bundle(cfg)?;
    if let Some(text) = differences {
        let key = parse_diff_key(text, &bundle)?;
        let d = eval::export_differences(&bundle, &key);
        write_file(&out_path(cfg, "differences.csv"), |w| {
            writeln!(w, "difference")?;
            d.values.iter().try_for_each(|v| writeln!(w, "{v:.16e}"))
        })?;
        eprintln!("differences: n={} mean={} std={}", d.values.len(), d.mean, d.std);
    }
    let reg = fit_and_report(cfg, &bundle);
    write_file(&out_path(cfg, MODELS), |w| reg.write_dump(&bundle, w))
}

fn propagate(
    cfg: &RunConfig,
    bundle: &DatasetBundle,
    reg: &ModelRegistry,
) -> Result<ImputationReport, CliError> {
    let (_, report) = propagation::run(bundle, reg, &cfg.propagation).map_err(|e| CliError::Data(e.to_string()))?;
    eprintln!(
        "propagation: {} iterations, converged={}, {} paths, {} targets without messages",
        report.iterations, report.converged, report.paths, report.unmessaged
    );
    Ok(report)
}

fn convergence(report: &ImputationReport) -> Result<(), CliError> {
    if report.converged {
        Ok(())
    } else {
        Err(CliError::NotConverged {
            iterations: report.iterations,
        })
    }
}

pub fn impute(cfg: &RunConfig) -> Result<(), CliError> {
    let bundle = load_bundle(cfg)?;
    let reg = load_registry(cfg, &bundle)?;
    let report = propagate(cfg, &bundle, &reg)?;
    write_file(&out_path(cfg, IMPUTED), |w| write_imputations(&bundle, &report, w))?;
    write_file(&out_path(cfg, TRACE), |w| write_trace(&bundle, &report, w))?;
    convergence(&report)
}

/// Imputations from `cfg.out/imputed.tsv` when present (every target must
/// be covered), otherwise computed inline.
fn mrap_predictions(cfg: &RunConfig, bundle: &DatasetBundle) -> Result<BTreeMap<mrap_core::AttrKey, f64>, CliError> {
    let path = out_path(cfg, IMPUTED);
    if !path.exists() {
        info!("{} not found; imputing inline", path.display());
        let reg = load_registry(cfg, bundle)?;
        return Ok(propagate(cfg, bundle, &reg)?.predictions());
    }
    let preds = read_imputations(open(&path)?, bundle).map_err(|e| data_err(path.display())(e.to_string()))?;
    let absent: Vec<String> = bundle
        .targets()
        .filter(|k| !preds.contains_key(k))
        .map(|(e, a)| format!("{}/{}", bundle.entity_label(e), bundle.type_label(a)))
        .collect();
    if absent.is_empty() {
        return Ok(preds);
    }
    const SHOWN: usize = 20;
    let mut msg = format!("{}: {} targets have no prediction: ", path.display(), absent.len());
    msg.push_str(&absent[..absent.len().min(SHOWN)].join(", "));
    if absent.len() > SHOWN {
        msg.push_str(", ...");
    }
    Err(CliError::Data(msg))
}

fn write_reports(cfg: &RunConfig, name: &str, reports: &[EvalReport]) -> Result<(), CliError> {
    write_file(&out_path(cfg, &format!("{name}.csv")), |w| write_report_csv(reports, w))?;
    let table = format!(
        "{}\n{}",
        format_table(reports, true),
        if reports.iter().any(|r| r.method == "Global") { format_table(reports, false) } else { String::new() }
    );
    write_file(&out_path(cfg, &format!("{name}.txt")), |w| w.write_all(table.as_bytes()))?;
    print!("{}", format_table(reports, true));
    Ok(())
}

pub fn eval(cfg: &RunConfig, ablations: bool) -> Result<(), CliError> {
    let bundle = load_bundle(cfg)?;
    let setup = cfg.setup_label();
    let split = cfg.eval_split;
    let score = |preds: &BTreeMap<_, _>, method: &str| {
        eval::evaluate(preds, &bundle, split, method, &setup).map_err(|e| CliError::Data(e.to_string()))
    };
    let data = |e: mrap_core::AttrError| CliError::Data(e.to_string());
    let mut reports = vec![
        score(&eval::baseline_global(&bundle).map_err(data)?, "Global")?,
        score(&eval::baseline_local(&bundle).map_err(data)?, "Local")?,
        score(&mrap_predictions(cfg, &bundle)?, "MrAP")?,
    ];
    let mut converged = true;
    if ablations {
        let reg = load_registry(cfg, &bundle)?;
        let runs = eval::ablation_suite(&bundle, &reg, &cfg.propagation, split, &setup)
            .map_err(|e| CliError::Data(e.to_string()))?;
        for run in runs.into_iter().filter(|r| r.report.method != "MrAP") {
            converged &= run.converged;
            reports.push(run.report);
        }
    }
    write_reports(cfg, "report", &reports)?;
    if converged {
        Ok(())
    } else {
        Err(CliError::NotConverged { iterations: cfg.propagation.max_iters })
    }
}

pub fn ablate(cfg: &RunConfig) -> Result<(), CliError> {
    let bundle = load_bundle(cfg)?;
    let reg = load_registry(cfg, &bundle)?;
    let runs = eval::ablation_suite(&bundle, &reg, &cfg.propagation, cfg.eval_split, &cfg.setup_label())
        .map_err(|e| CliError::Data(e.to_string()))?;
    for r in &runs {
        eprintln!("{}: {} paths, converged={}", r.report.method, r.paths, r.converged);
    }
    let converged = runs.iter().all(|r| r.converged);
    let reports: Vec<EvalReport> = runs.into_iter().map(|r| r.report).collect();
    write_reports(cfg, "ablation", &reports)?;
    if converged {
        Ok(())
    } else {
        Err(CliError::NotConverged { iterations: cfg.propagation.max_iters })
    }
}
