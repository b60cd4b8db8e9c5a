//! Train on a directory of labelled WAV clips and evaluate on a held-out
//! split.
//!
//! The data directory holds one subdirectory per action, named by the
//! action (`shake`, `go_forward`, ...). Within a class, files are taken in
//! name order, shuffled with the seed, and the first `round(n * frac)`
//! become the holdout set (always leaving at least one for training).

use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::Serialize;
use soundmat_core::audio::CANONICAL_RATE_HZ;
use soundmat_core::features::{FeatureConfig, FeatureExtractor, LogMelExtractor};
use soundmat_core::forest::{train_forest, ForestConfig, ForestError};
use soundmat_core::hub::HubConfig;
use soundmat_core::rng::XorShift64Star;
use soundmat_core::wav::read_wav;
use soundmat_core::{ActionLabel, AudioClip, ForestModel, LabeledSample, NUM_ACTIONS};

use crate::CliError;

pub const REPORT_FORMAT: &str = "soundmat.run_report";
pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct TrainEvalOptions {
    pub data_dir: PathBuf,
    pub seed: u64,
    pub holdout_frac: f64,
    pub config: HubConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassCounts {
    pub action: ActionLabel,
    pub train: usize,
    pub holdout: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SkippedFile {
    pub path: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConfigEcho {
    pub features: FeatureConfig,
    pub forest: ForestConfig,
}

/// Wall-clock facts; everything outside this block is a pure function of
/// the inputs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Timing {
    pub training_ms: u64,
    pub total_ms: u64,
    pub finished_unix_s: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub format: &'static str,
    pub version: u32,
    pub seed: u64,
    pub holdout_frac: f64,
    pub config: ConfigEcho,
    pub classes: Vec<ClassCounts>,
    pub n_train: usize,
    pub n_holdout: usize,
    pub skipped: Vec<SkippedFile>,
    /// `confusion[true_id][predicted_id]` over the holdout set.
    pub confusion: [[u32; NUM_ACTIONS]; NUM_ACTIONS],
    /// `None` when the holdout set is empty.
    pub accuracy: Option<f64>,
    pub timing: Timing,
}

pub struct TrainEvalOutput {
    pub report: RunReport,
    pub model: ForestModel,
}

struct Clip {
    path: PathBuf,
    clip: AudioClip,
}

fn class_dirs(data_dir: &Path) -> Result<Vec<(ActionLabel, PathBuf)>, CliError> {
    let entries = std::fs::read_dir(data_dir)
        .map_err(|e| CliError::Invalid(format!("cannot read data dir {}: {e}", data_dir.display())))?;
    let mut dirs = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| CliError::Invalid(e.to_string()))?.path();
        if !path.is_dir() {
            log::debug!("ignoring {}", path.display());
            continue;
        }
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
        let action: ActionLabel = name.parse().map_err(|_| {
            let known: Vec<&str> = ActionLabel::ALL.iter().map(|a| a.name()).collect();
            CliError::Invalid(format!(
                "unknown class directory {name:?}; expected one of {}",
                known.join(", ")
            ))
        })?;
        dirs.push((action, path));
    }
    dirs.sort_by_key(|(a, _)| a.id());
    Ok(dirs)
}

fn load_class(dir: &Path, skipped: &mut Vec<SkippedFile>) -> Result<Vec<Clip>, CliError> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| CliError::Invalid(format!("cannot read {}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .and_then(|x| x.to_str())
                    .is_some_and(|x| x.eq_ignore_ascii_case("wav"))
        })
        .collect();
    paths.sort();
    let mut clips = Vec::with_capacity(paths.len());
    for path in paths {
        let loaded = read_wav(&path)
            .map_err(|e| e.to_string())
            .and_then(|pcm| pcm.to_clip().map_err(|e| e.to_string()));
        match loaded {
            Ok(clip) => clips.push(Clip { path, clip }),
            Err(reason) => {
                log::warn!("skipping {}: {reason}", path.display());
                skipped.push(SkippedFile {
                    path: path.display().to_string(),
                    reason,
                });
            }
        }
    }
    Ok(clips)
}

fn holdout_count(n: usize, frac: f64) -> usize {
    ((n as f64 * frac).round() as usize).min(n.saturating_sub(1))
}

pub fn run(opts: &TrainEvalOptions) -> Result<TrainEvalOutput, CliError> {
    let started = Instant::now();
    if !(0.0..1.0).contains(&opts.holdout_frac) {
        return Err(CliError::Invalid(format!(
            "holdout fraction must be in [0, 1), got {}",
            opts.holdout_frac
        )));
    }
    crate::config::validate(&opts.config)?;
    let extractor = LogMelExtractor::new(opts.config.features.clone(), CANONICAL_RATE_HZ)
        .map_err(|e| CliError::Invalid(e.to_string()))?;

    let mut skipped = Vec::new();
    let mut split_rng = XorShift64Star::new(opts.seed);
    let mut classes = Vec::new();
    let mut train = Vec::new();
    let mut holdout = Vec::new();
    for (action, dir) in class_dirs(&opts.data_dir)? {
        let mut clips = load_class(&dir, &mut skipped)?;
        for i in 0..clips.len().saturating_sub(1) {
            let j = i + split_rng.below(clips.len() - i);
            clips.swap(i, j);
        }
        let n_hold = holdout_count(clips.len(), opts.holdout_frac);
        classes.push(ClassCounts {
            action,
            train: clips.len() - n_hold,
            holdout: n_hold,
        });
        for (i, c) in clips.into_iter().enumerate() {
            log::debug!("{} -> {action} ({})", c.path.display(), if i < n_hold { "holdout" } else { "train" });
            let features = extractor.extract(&c.clip).map_err(|e| CliError::Runtime(e.to_string()))?;
            let sample = LabeledSample { features, label: action };
            if i < n_hold {
                holdout.push(sample);
            } else {
                train.push(sample);
            }
        }
    }

    let found = classes.iter().filter(|c| c.train > 0).count();
    if found < 2 {
        return Err(CliError::InsufficientClasses { found });
    }
    let t0 = Instant::now();
    let model = train_forest(&train, &opts.config.forest, opts.seed).map_err(|e| match e {
        ForestError::InsufficientClasses { found } => CliError::InsufficientClasses { found },
        other => CliError::Runtime(other.to_string()),
    })?;
    let training_ms = t0.elapsed().as_millis() as u64;

    let mut confusion = [[0u32; NUM_ACTIONS]; NUM_ACTIONS];
    for s in &holdout {
        let predicted = model.predict_top(&s.features).map_err(|e| CliError::Runtime(e.to_string()))?;
        confusion[s.label.index()][predicted.index()] += 1;
    }
    let correct: u32 = (0..NUM_ACTIONS).map(|i| confusion[i][i]).sum();
    let accuracy = (!holdout.is_empty()).then(|| correct as f64 / holdout.len() as f64);

    let report = RunReport {
        format: REPORT_FORMAT,
        version: REPORT_VERSION,
        seed: opts.seed,
        holdout_frac: opts.holdout_frac,
        config: ConfigEcho {
            features: opts.config.features.clone(),
            forest: opts.config.forest.clone(),
        },
        classes,
        n_train: train.len(),
        n_holdout: holdout.len(),
        skipped,
        confusion,
        accuracy,
        timing: Timing {
            training_ms,
            total_ms: started.elapsed().as_millis() as u64,
            finished_unix_s: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
        },
    };
    log::info!(
        "trained on {} clips, {} held out, accuracy {:?}",
        report.n_train,
        report.n_holdout,
        report.accuracy
    );
    Ok(TrainEvalOutput { report, model })
}
