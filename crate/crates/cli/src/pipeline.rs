//! The end-to-end pipeline: every stage in order, each artifact written to
//! the output directory under a fixed name, every failure tagged with the
//! stage it happened in.
//!
//! Runs are deterministic: the same config and inputs produce byte-identical
//! artifacts, so a rerun with `--force` is a no-op apart from rewriting the
//! same files.

use std::path::Path;

use noisecurator_core::data::Dataset;

use crate::artifact::{
    read_json, write_json, Artifact, ArtifactRef, Metrics, ParamsArtifact, ReportArtifact,
    SubsetArtifact, TraceArtifact, WeightsArtifact, FORMAT_VERSION,
};
use crate::config::{NoiseChoice, RunConfig};
use crate::datafile;
use crate::error::{stage, Error};
use crate::fsio::{self, FsError};
use crate::stages;

/// Artifact file names, paired with the short names reports use.
pub const DATASET_FILE: &str = "dataset.jsonl";
pub const TEST_FILE: &str = "test.jsonl";
pub const NOISY_FILE: &str = "noisy.jsonl";
pub const WEIGHTS_FILE: &str = "weights.json";
pub const TRACE_FILE: &str = "trace.json";
pub const SUBSET_FILE: &str = "subset.json";
pub const PARAMS_FILE: &str = "params.json";
pub const METRICS_FILE: &str = "metrics.json";
pub const SURFACE_FILE: &str = "surface.json";
pub const REPORT_FILE: &str = "report.json";

/// Everything a report may reference, in listing order.
pub const ARTIFACT_FILES: &[(&str, &str)] = &[
    ("dataset", DATASET_FILE),
    ("test", TEST_FILE),
    ("noisy", NOISY_FILE),
    ("weights", WEIGHTS_FILE),
    ("trace", TRACE_FILE),
    ("subset", SUBSET_FILE),
    ("params", PARAMS_FILE),
    ("metrics", METRICS_FILE),
    ("surface", SURFACE_FILE),
];

/// The files a pipeline run will write for this config.
pub fn planned_files(cfg: &RunConfig) -> Vec<&'static str> {
    let mut files = vec![DATASET_FILE];
    if cfg.dataset.is_none() || cfg.test_dataset.is_some() {
        files.push(TEST_FILE);
    }
    if cfg.noise != NoiseChoice::None {
        files.push(NOISY_FILE);
    }
    files.extend([WEIGHTS_FILE, TRACE_FILE, SUBSET_FILE, PARAMS_FILE, METRICS_FILE, REPORT_FILE]);
    files
}

/// The resolved stage plan as printed by `pipeline --dry-run`.
pub fn render_plan(cfg: &RunConfig) -> String {
    let out = |file: &str| cfg.out_dir.join(file).display().to_string();
    let mut plan = String::new();
    plan.push_str(&format!("config hash: {}\n", cfg.hash()));

    let source = match &cfg.dataset {
        Some(path) => format!("ingest `{}`", path.display()),
        None => format!(
            "generate gaussian blobs ({} classes x {} examples, dim {})",
            cfg.blob_classes, cfg.blob_per_class, cfg.blob_dim
        ),
    };
    let mut data_outputs = vec![out(DATASET_FILE)];
    if cfg.dataset.is_none() || cfg.test_dataset.is_some() {
        data_outputs.push(out(TEST_FILE));
    }
    plan.push_str(&format!("stage data: {source}; write {}\n", data_outputs.join(", ")));

    if cfg.noise == NoiseChoice::None {
        plan.push_str("stage noise: skipped (noise = none)\n");
    } else {
        plan.push_str(&format!(
            "stage noise: corrupt labels ({}); write {}\n",
            cfg.noise.as_str(),
            out(NOISY_FILE)
        ));
    }

    plan.push_str(&format!(
        "stage reweight: {} outer iterations of {} on the validation split; write {}, {}\n",
        cfg.outer_iterations,
        cfg.outer_loss.as_str(),
        out(WEIGHTS_FILE),
        out(TRACE_FILE)
    ));

    let budget = match cfg.budget {
        Some(b) => b.to_string(),
        None => "half the train split".to_string(),
    };
    plan.push_str(&format!(
        "stage subset: draw {} examples with the {} sampler; write {}\n",
        budget,
        cfg.sampler.as_str(),
        out(SUBSET_FILE)
    ));

    plan.push_str(&format!(
        "stage train: {} epochs of cross-entropy on the subset ({}); write {}\n",
        cfg.train_epochs,
        cfg.arch.as_str(),
        out(PARAMS_FILE)
    ));
    plan.push_str(&format!(
        "stage evaluate: accuracy and losses on the validation split; write {}\n",
        out(METRICS_FILE)
    ));
    plan.push_str(&format!(
        "stage report: digest artifacts and cross-check config hashes; write {}\n",
        out(REPORT_FILE)
    ));
    plan
}

/// Runs every stage, printing one line per stage. Fails without touching
/// any file if an output already exists and `force` is unset.
pub fn run(cfg: &RunConfig, force: bool) -> Result<(), Error> {
    let hash = cfg.hash();
    let dir = &cfg.out_dir;
    std::fs::create_dir_all(dir).map_err(fsio::io_error(dir))?;
    if !force {
        for file in planned_files(cfg) {
            let path = dir.join(file);
            if path.exists() {
                return Err(FsError::AlreadyExists { path }.into());
            }
        }
    }
    println!("config hash: {hash}");

    let (source, test) = stage("data", || {
        let source = match &cfg.dataset {
            Some(path) => datafile::read_dataset(path)?.0,
            None => stages::generate_blobs(cfg)?,
        };
        datafile::write_dataset(&dir.join(DATASET_FILE), &source, &hash, force)?;
        let test = match &cfg.test_dataset {
            Some(path) => Some(datafile::read_dataset(path)?.0),
            None if cfg.dataset.is_none() => Some(stages::generate_test_blobs(cfg)?),
            None => None,
        };
        if let Some(test) = &test {
            datafile::write_dataset(&dir.join(TEST_FILE), test, &hash, force)?;
        }
        println!("stage data: {} examples, {} classes", source.len(), source.num_classes());
        Ok((source, test))
    })?;

    let working = stage("noise", || match stages::inject(&source, cfg)? {
        Some((noisy, warnings)) => {
            for warning in &warnings {
                eprintln!("warning: {}", stages::warning_text(warning));
            }
            datafile::write_dataset(&dir.join(NOISY_FILE), &noisy, &hash, force)?;
            let corrupted = noisy.clean_flags().iter().filter(|f| **f == Some(false)).count();
            println!("stage noise: corrupted {} of {} labels", corrupted, noisy.len());
            Ok(noisy)
        }
        None => {
            println!("stage noise: skipped (noise = none)");
            Ok(source.clone())
        }
    })?;

    let (features, train, val, weights) = stage("reweight", || {
        let features = stages::featurize_data(&working, cfg)?;
        let (train, val) = stages::split_data(&features, cfg)?;
        let (weights, trace) = stages::reweight(&train, &val, cfg)?;
        let artifact = weights_artifact(&hash, cfg, &train, &weights);
        write_json(&dir.join(WEIGHTS_FILE), &artifact, force)?;
        let trace = TraceArtifact {
            kind: TraceArtifact::KIND.to_string(),
            format_version: FORMAT_VERSION,
            config_hash: hash.clone(),
            records: trace,
        };
        write_json(&dir.join(TRACE_FILE), &trace, force)?;
        let mean = weights.values().iter().sum::<f64>() / weights.len() as f64;
        println!(
            "stage reweight: {} iterations over {} train examples, mean weight {mean:.3}",
            weights.iteration(),
            train.len()
        );
        Ok((features, train, val, weights))
    })?;

    let (rows, ids, budget) = stage("subset", || {
        let selection = stages::select_subset(&weights, cfg)?;
        let (rows, ids) = stages::map_to_source(&train, &selection.positions, &working);
        let artifact = SubsetArtifact {
            kind: SubsetArtifact::KIND.to_string(),
            format_version: FORMAT_VERSION,
            config_hash: hash.clone(),
            method: selection.method.to_string(),
            budget: selection.budget,
            indices: rows.clone(),
            ids: ids.clone(),
        };
        write_json(&dir.join(SUBSET_FILE), &artifact, force)?;
        println!(
            "stage subset: kept {} of {} train examples (budget {})",
            rows.len(),
            train.len(),
            selection.budget
        );
        Ok((rows, ids, selection.budget))
    })?;
    let _ = ids;

    let params = stage("train", || {
        let subset_data = features.subset(&rows)?;
        let params = stages::train_final(&subset_data, cfg)?;
        let artifact = ParamsArtifact {
            kind: ParamsArtifact::KIND.to_string(),
            format_version: FORMAT_VERSION,
            config_hash: hash.clone(),
            arch: params.arch(),
            num_classes: params.num_classes(),
            feature_dim: params.feature_dim(),
            values: params.values().to_vec(),
        };
        write_json(&dir.join(PARAMS_FILE), &artifact, force)?;
        println!(
            "stage train: {} parameters fit on {} examples",
            params.values().len(),
            subset_data.len()
        );
        Ok(params)
    })?;

    stage("evaluate", || {
        let mut metrics = stages::evaluate_metrics(&params, &val, "val", cfg)?;
        stages::add_weight_metrics(&mut metrics, &weights, &train);
        stages::add_subset_metrics(&mut metrics, &rows, budget, &working);
        if let Some(test) = &test {
            let test_features = stages::featurize_data(test, cfg)?;
            stages::add_test_metrics(&mut metrics, &params, &test_features)?;
        }
        write_json(&dir.join(METRICS_FILE), &metrics, force)?;
        println!(
            "stage evaluate: val accuracy {:.3}{}",
            metrics.accuracy,
            metrics
                .test_accuracy
                .map(|a| format!(", test accuracy {a:.3}"))
                .unwrap_or_default()
        );
        Ok(())
    })?;

    stage("report", || {
        let report = build_report(dir)?;
        write_json(&dir.join(REPORT_FILE), &report, force)?;
        println!("stage report: {} artifacts digested", report.artifacts.len());
        Ok(())
    })?;

    Ok(())
}

/// Bundles learned weights with the split they index.
pub fn weights_artifact(
    hash: &str,
    cfg: &RunConfig,
    train: &Dataset,
    weights: &noisecurator_core::bilevel::SampleWeights,
) -> WeightsArtifact {
    WeightsArtifact {
        kind: WeightsArtifact::KIND.to_string(),
        format_version: FORMAT_VERSION,
        config_hash: hash.to_string(),
        train_fraction: cfg.train_fraction,
        split_seed: cfg.split_spec().seed,
        train_ids: train.examples().iter().map(|ex| ex.id.clone()).collect(),
        iteration: weights.iteration(),
        values: weights.values().to_vec(),
    }
}

/// Digests every known artifact in `dir` and checks they all come from the
/// same config. Files without an embedded hash (hand-prepared datasets)
/// are listed but do not participate in the consensus.
pub fn build_report(dir: &Path) -> Result<ReportArtifact, Error> {
    let mut refs: Vec<ArtifactRef> = Vec::new();
    let mut consensus: Option<(String, &'static str)> = None;
    for &(name, file) in ARTIFACT_FILES {
        let path = dir.join(file);
        if !path.exists() {
            continue;
        }
        let config_hash = if file.ends_with(".jsonl") {
            datafile::read_config_hash(&path)?
        } else {
            crate::artifact::read_config_hash(&path)?
        };
        if let Some(hash) = &config_hash {
            match &consensus {
                None => consensus = Some((hash.clone(), file)),
                Some((existing, first_file)) if existing != hash => {
                    return Err(Error::MixedConfigHashes {
                        dir: dir.to_path_buf(),
                        first_file: (*first_file).to_string(),
                        first_hash: existing.clone(),
                        second_file: file.to_string(),
                        second_hash: hash.clone(),
                    });
                }
                Some(_) => {}
            }
        }
        refs.push(ArtifactRef {
            name: name.to_string(),
            file: file.to_string(),
            sha256: fsio::sha256_file(&path)?,
            config_hash,
        });
    }
    let Some((config_hash, _)) = consensus else {
        return Err(Error::NoArtifacts { dir: dir.to_path_buf() });
    };
    let metrics_path = dir.join(METRICS_FILE);
    let summary =
        if metrics_path.exists() { Some(read_json::<Metrics>(&metrics_path)?) } else { None };
    Ok(ReportArtifact {
        kind: ReportArtifact::KIND.to_string(),
        format_version: FORMAT_VERSION,
        config_hash,
        artifacts: refs,
        summary,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{load, Overrides};

    fn small_config(dir: &Path) -> RunConfig {
        let path = dir.join("run.conf");
        std::fs::write(
            &path,
            format!(
                "seed = 3\nout_dir = {}\nblob_per_class = 30\nblob_dim = 3\n\
                 outer_iterations = 4\ntrain_epochs = 4\nbudget = 20\n",
                dir.join("out").display()
            ),
        )
        .unwrap();
        load(Some(&path), &Overrides::default()).unwrap()
    }

    #[test]
    fn plan_names_every_stage_and_the_config_hash() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_config(dir.path());
        let plan = render_plan(&cfg);
        assert!(plan.contains(&format!("config hash: {}", cfg.hash())));
        for stage in ["data", "noise", "reweight", "subset", "train", "evaluate", "report"] {
            assert!(plan.contains(&format!("stage {stage}:")), "missing {stage} in:\n{plan}");
        }
        assert!(plan.contains("dataset.jsonl"));
    }

    #[test]
    fn run_writes_every_planned_file_and_reruns_identically() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_config(dir.path());
        run(&cfg, false).unwrap();
        let mut first = Vec::new();
        for file in planned_files(&cfg) {
            let path = cfg.out_dir.join(file);
            assert!(path.exists(), "missing {file}");
            first.push(std::fs::read(path).unwrap());
        }

        // A rerun without --force refuses before writing anything.
        let err = run(&cfg, false).unwrap_err();
        assert!(matches!(err, Error::Fs(FsError::AlreadyExists { .. })), "got {err}");

        // With --force the artifacts come out byte-identical.
        run(&cfg, true).unwrap();
        for (file, bytes) in planned_files(&cfg).iter().zip(&first) {
            let again = std::fs::read(cfg.out_dir.join(file)).unwrap();
            assert_eq!(&again, bytes, "{file} changed across reruns");
        }
    }

    #[test]
    fn report_rejects_artifacts_from_different_runs() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_config(dir.path());
        run(&cfg, false).unwrap();

        // Re-point one artifact at a different hash.
        let weights_path = cfg.out_dir.join(WEIGHTS_FILE);
        let mut weights: WeightsArtifact = read_json(&weights_path).unwrap();
        weights.config_hash = "0000".to_string();
        write_json(&weights_path, &weights, true).unwrap();

        let err = build_report(&cfg.out_dir).unwrap_err();
        assert!(matches!(err, Error::MixedConfigHashes { .. }), "got {err}");
    }

    #[test]
    fn report_needs_at_least_one_hashed_artifact() {
        let dir = tempfile::tempdir().unwrap();
        let err = build_report(dir.path()).unwrap_err();
        assert!(matches!(err, Error::NoArtifacts { .. }));
    }

    #[test]
    fn report_digests_match_the_files() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_config(dir.path());
        run(&cfg, false).unwrap();
        let report: ReportArtifact = read_json(&cfg.out_dir.join(REPORT_FILE)).unwrap();
        assert_eq!(report.config_hash, cfg.hash());
        assert!(report.summary.is_some());
        for entry in &report.artifacts {
            let digest = fsio::sha256_file(&cfg.out_dir.join(&entry.file)).unwrap();
            assert_eq!(digest, entry.sha256, "stale digest for {}", entry.file);
            assert_eq!(entry.config_hash.as_deref(), Some(report.config_hash.as_str()));
        }
    }
}
