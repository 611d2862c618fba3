use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use gpbold::baselines::{fit_model, ModelKind};
use gpbold::csvio::{numbered, read_matrix, write_matrix};
use gpbold::evaluation::{activity_map, average_roc, default_thresholds, roc_curve, RocCurve};
use gpbold::paradigm::{build_mean_function, Paradigm};
use gpbold::sampler::{ParcelData, PosteriorDraws};
use gpbold::simulation::{prior_mean, DatasetSpec, MeanMode, SimulationTruth};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{existing, resolve, MeanSource, RunConfig};
use crate::CliError;

fn write_json<T: Serialize>(path: &Path, value: &T) -> gpbold::Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

/// Subdirectories of `root` holding `marker`, sorted by name, or `root`
/// itself when it holds the marker.
fn list_units(root: &Path, marker: &str) -> Result<Vec<(String, PathBuf)>, CliError> {
    if root.join(marker).exists() {
        let id = root.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| "parcel".into());
        return Ok(vec![(id, root.to_path_buf())]);
    }
    let entries = std::fs::read_dir(root).map_err(|e| CliError::Usage(format!("cannot list {}: {e}", root.display())))?;
    let mut out: Vec<(String, PathBuf)> = entries
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.join(marker).exists())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), p))
        .collect();
    out.sort();
    if out.is_empty() {
        return Err(CliError::Usage(format!("no directory under {} contains {marker}", root.display())));
    }
    Ok(out)
}

#[derive(Serialize)]
struct UnitStatus {
    id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    ok: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

/// Logs every failure and turns them into one error, numerical when any is.
fn collect_failures(what: &str, failures: Vec<(String, gpbold::Error)>) -> Result<(), CliError> {
    if failures.is_empty() {
        return Ok(());
    }
    for (id, e) in &failures {
        log::error!("{what} {id}: {e}");
    }
    let n = failures.len();
    if failures.iter().any(|(_, e)| e.is_numerical()) {
        Err(CliError::Numerical(format!("{n} {what}(s) failed")))
    } else {
        Err(CliError::Input(format!("{n} {what}(s) failed")))
    }
}

fn simulate_one(ds: &DatasetSpec, target_corr: f64, dir: &Path) -> gpbold::Result<()> {
    let (data, truth) = ds.generate()?;
    data.write_dir(dir)?;
    truth.write_json(dir.join("truth.json"))?;
    let paradigm = ds.config.paradigm()?;
    write_json(&dir.join("paradigm.json"), &paradigm)?;
    for (mode, name) in [(MeanMode::Correct, "correct"), (MeanMode::Erroneous, "erroneous")] {
        let f0 = prior_mean(&ds.config, mode, target_corr)?.values;
        write_matrix(dir.join(format!("prior_mean_{name}.csv")), &numbered("s", f0.ncols()), &f0)?;
    }
    Ok(())
}

pub fn simulate(cfg: &RunConfig, seed: u64, out: &Path) -> Result<(), CliError> {
    let mut study = cfg.study.clone().unwrap_or_default();
    study.seed = seed;
    study.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    std::fs::create_dir_all(out).map_err(gpbold::Error::from)?;
    write_json(&out.join("study.json"), &study)?;
    let datasets = study.datasets();
    let results: Vec<_> = datasets
        .par_iter()
        .map(|ds| simulate_one(ds, study.target_corr, &out.join(&ds.id)))
        .collect();
    let failures = datasets
        .iter()
        .zip(results)
        .filter_map(|(ds, r)| r.err().map(|e| (ds.id.clone(), e)))
        .collect();
    log::info!("simulated {} datasets into {}", datasets.len(), out.display());
    collect_failures("dataset", failures)
}

fn load_paradigm(cfg: &RunConfig, parcel: &Path, base: &Path) -> gpbold::Result<Paradigm> {
    let rel = cfg.paradigm.clone().unwrap_or_else(|| PathBuf::from("paradigm.json"));
    let path = resolve(&rel, &[parcel, base])
        .ok_or_else(|| gpbold::Error::InvalidParameter(format!("paradigm {} not found", rel.display())))?;
    Paradigm::from_json_file(path)
}

fn fit_one(cfg: &RunConfig, base: &Path, model: ModelKind, id: &str, dir: &Path, seed: u64) -> gpbold::Result<PosteriorDraws> {
    let data = ParcelData::read_dir(dir)?;
    let paradigm = load_paradigm(cfg, dir, base)?;
    let f0 = match &cfg.prior_mean {
        MeanSource::Csv(rel) => {
            let path = resolve(rel, &[dir, base])
                .ok_or_else(|| gpbold::Error::InvalidParameter(format!("prior mean {} not found", rel.display())))?;
            read_matrix(path)?.1
        }
        MeanSource::Hrf { params, standardize } => build_mean_function(&paradigm, params, *standardize)?.values,
    };
    let kernels = cfg
        .kernel_hypers(f0.ncols())
        .map_err(|e| gpbold::Error::InvalidParameter(e.to_string()))?;
    let mut prior = cfg.prior.clone();
    prior.sampler.seed = seed;
    let spec = prior.build(f0, kernels, &data)?;
    fit_model(model, &data, &spec, &paradigm, &cfg.fir, id)
}

pub fn fit(cfg: &RunConfig, base: &Path, seed: u64, model: ModelKind, out: &Path) -> Result<(), CliError> {
    let data_root = existing(
        cfg.data.as_deref().ok_or_else(|| CliError::Usage("fit needs `data` in the config".into()))?,
        base,
        "data directory",
    )?;
    cfg.prior.sampler.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let parcels = list_units(&data_root, "parcel.json")?;
    std::fs::create_dir_all(out).map_err(gpbold::Error::from)?;
    let results: Vec<gpbold::Result<()>> = parcels
        .par_iter()
        .enumerate()
        .map(|(i, (id, dir))| {
            let draws = fit_one(cfg, base, model, id, dir, seed.wrapping_add(i as u64))?;
            draws.write_dir(out.join(id))
        })
        .collect();
    let mut status = Vec::new();
    let mut failures = Vec::new();
    for (i, ((id, _), r)) in parcels.iter().zip(results).enumerate() {
        status.push(UnitStatus {
            id: id.clone(),
            seed: Some(seed.wrapping_add(i as u64)),
            ok: r.is_ok(),
            error: r.as_ref().err().map(|e| e.to_string()),
        });
        if let Err(e) = r {
            failures.push((id.clone(), e));
        }
    }
    #[derive(Serialize)]
    struct FitSummary {
        model: ModelKind,
        base_seed: u64,
        parcels: Vec<UnitStatus>,
    }
    write_json(
        &out.join("fit_summary.json"),
        &FitSummary {
            model,
            base_seed: seed,
            parcels: status,
        },
    )?;
    log::info!("fitted {} parcels with the {} model", parcels.len(), model.as_str());
    collect_failures("parcel", failures)
}

/// Truth as (t-value order) active flags: stimulus-major, voxel-minor.
fn truth_flags(truth: &SimulationTruth) -> Vec<bool> {
    truth.true_b.iter().flat_map(|row| row.iter().map(|b| *b != 0.0)).collect()
}

fn truth_path(data_root: &Path, id: &str) -> PathBuf {
    if data_root.join("truth.json").exists() {
        data_root.join("truth.json")
    } else {
        data_root.join(id).join("truth.json")
    }
}

#[derive(Serialize)]
struct FitEvaluation {
    label: String,
    parcels: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    auc: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    mean_auc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pooled_auc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    mean_tpr: Option<f64>,
}

/// Paired comparison of two fits over the parcels they share.
#[derive(Serialize)]
struct PairedDifference {
    first: String,
    second: String,
    n_parcels: usize,
    mean_auc_difference: f64,
    sd_auc_difference: f64,
    /// Mean over thresholds of TPR(first) − TPR(second) on the averaged curves.
    mean_tpr_difference: f64,
    /// Same for FPR, to read the TPR gap against.
    mean_fpr_difference: f64,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn evaluate(cfg: &RunConfig, base: &Path, roc: bool, out: &Path) -> Result<(), CliError> {
    if cfg.fits.is_empty() {
        return Err(CliError::Usage("evaluate needs at least one entry in `fits`".into()));
    }
    let mut labels: Vec<&str> = cfg.fits.iter().map(|f| f.label.as_str()).collect();
    if labels.iter().any(|l| l.is_empty() || !l.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')) {
        return Err(CliError::Usage("fit labels must be non-empty and use only letters, digits, '-' and '_'".into()));
    }
    labels.sort();
    labels.dedup();
    if labels.len() != cfg.fits.len() {
        return Err(CliError::Usage("fit labels must be unique".into()));
    }
    let data_root = cfg.data.as_deref().map(|d| existing(d, base, "data directory")).transpose()?;
    let thresholds = cfg.thresholds.clone().unwrap_or_else(default_thresholds);
    let c = cfg.effect_threshold;

    let mut fits = Vec::new();
    for f in &cfg.fits {
        let root = existing(&f.draws, base, "draws directory")?;
        fits.push((f.label.clone(), list_units(&root, "meta.json")?));
    }
    let mut truths: BTreeMap<String, Vec<bool>> = BTreeMap::new();
    if roc {
        let Some(root) = &data_root else {
            return Err(CliError::Usage("--roc needs `data` pointing at the simulated truth".into()));
        };
        for (_, parcels) in &fits {
            for (id, _) in parcels {
                if truths.contains_key(id) {
                    continue;
                }
                let p = truth_path(root, id);
                if !p.exists() {
                    return Err(CliError::Usage(format!("--roc given but {} does not exist", p.display())));
                }
                let t = SimulationTruth::read_json(&p).map_err(|e| CliError::Usage(e.to_string()))?;
                truths.insert(id.clone(), truth_flags(&t));
            }
        }
    }

    std::fs::create_dir_all(out).map_err(gpbold::Error::from)?;
    let mut summaries = Vec::new();
    let mut averaged: Vec<Option<RocCurve>> = Vec::new();
    let mut per_parcel_auc: Vec<BTreeMap<String, f64>> = Vec::new();
    let mut failures = Vec::new();
    for (label, parcels) in &fits {
        let map_dir = out.join("maps").join(label);
        std::fs::create_dir_all(&map_dir).map_err(gpbold::Error::from)?;
        let results: Vec<gpbold::Result<Option<(RocCurve, Vec<f64>)>>> = parcels
            .par_iter()
            .map(|(id, dir)| {
                let draws = PosteriorDraws::read_dir(dir)?;
                let map = activity_map(&draws, c)?;
                map.write_csv(map_dir.join(format!("{id}.csv")))?;
                let Some(truth) = truths.get(id) else {
                    return Ok(None);
                };
                let t: Vec<f64> = map.t_values.concat();
                if t.len() != truth.len() {
                    return Err(gpbold::Error::Shape(format!(
                        "{id}: {} t-values but {} truth entries",
                        t.len(),
                        truth.len()
                    )));
                }
                Ok(Some((roc_curve(&t, truth, &thresholds)?, t)))
            })
            .collect();
        let mut curves = Vec::new();
        let mut aucs = BTreeMap::new();
        let (mut pooled_t, mut pooled_truth) = (Vec::new(), Vec::new());
        for ((id, _), r) in parcels.iter().zip(results) {
            match r {
                Ok(Some((curve, t))) => {
                    aucs.insert(id.clone(), curve.auc);
                    pooled_truth.extend_from_slice(&truths[id]);
                    pooled_t.extend(t);
                    curves.push(curve);
                }
                Ok(None) => {}
                Err(e) => failures.push((format!("{label}/{id}"), e)),
            }
        }
        let avg = if roc && !curves.is_empty() {
            let avg = average_roc(&curves)?;
            avg.write_csv(out.join(format!("roc_{label}.csv")))?;
            Some(avg)
        } else {
            None
        };
        let pooled = if roc && !pooled_t.is_empty() {
            Some(roc_curve(&pooled_t, &pooled_truth, &thresholds)?.auc)
        } else {
            None
        };
        let auc_list: Vec<f64> = aucs.values().copied().collect();
        summaries.push(FitEvaluation {
            label: label.clone(),
            parcels: parcels.iter().map(|(id, _)| id.clone()).collect(),
            mean_auc: (!auc_list.is_empty()).then(|| mean(&auc_list)),
            auc: roc.then_some(auc_list),
            pooled_auc: pooled,
            mean_tpr: avg.as_ref().map(|a| mean(&a.tpr)),
        });
        averaged.push(avg);
        per_parcel_auc.push(aucs);
    }

    let mut paired = Vec::new();
    if roc {
        for a in 0..fits.len() {
            for b in a + 1..fits.len() {
                let diffs: Vec<f64> = per_parcel_auc[a]
                    .iter()
                    .filter_map(|(id, x)| per_parcel_auc[b].get(id).map(|y| x - y))
                    .collect();
                let (Some(ra), Some(rb)) = (&averaged[a], &averaged[b]) else {
                    continue;
                };
                if diffs.is_empty() {
                    continue;
                }
                let md = mean(&diffs);
                let sd = if diffs.len() > 1 {
                    (diffs.iter().map(|d| (d - md).powi(2)).sum::<f64>() / (diffs.len() - 1) as f64).sqrt()
                } else {
                    0.0
                };
                let tpr_gap: Vec<f64> = ra.tpr.iter().zip(&rb.tpr).map(|(x, y)| x - y).collect();
                let fpr_gap: Vec<f64> = ra.fpr.iter().zip(&rb.fpr).map(|(x, y)| x - y).collect();
                paired.push(PairedDifference {
                    first: fits[a].0.clone(),
                    second: fits[b].0.clone(),
                    n_parcels: diffs.len(),
                    mean_auc_difference: md,
                    sd_auc_difference: sd,
                    mean_tpr_difference: mean(&tpr_gap),
                    mean_fpr_difference: mean(&fpr_gap),
                });
            }
        }
    }

    #[derive(Serialize)]
    struct Summary {
        effect_threshold: f64,
        n_thresholds: usize,
        fits: Vec<FitEvaluation>,
        paired: Vec<PairedDifference>,
    }
    write_json(
        &out.join("summary.json"),
        &Summary {
            effect_threshold: c,
            n_thresholds: thresholds.len(),
            fits: summaries,
            paired,
        },
    )?;
    collect_failures("draws directory", failures)
}
