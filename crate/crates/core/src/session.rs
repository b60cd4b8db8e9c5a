//! The train/infer session state machine.
//!
//! A session starts in `Training`, collecting feature vectors under the
//! action of the zone the device sits in. Training moves it through
//! `TrainingInProgress` to `Inference`; the mode button takes it back to
//! `Training` with dataset and model intact.

use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::action::{ActionLabel, NUM_ACTIONS};
use crate::audio::AudioClip;
use crate::features::{FeatureError, FeatureExtractor, FeatureVector};
use crate::forest::{
    train_forest, ClassProbabilities, ForestConfig, ForestError, ForestModel, LabeledSample,
    ModelFormatError,
};

pub const SNAPSHOT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Mode {
    Training,
    TrainingInProgress,
    Inference,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SessionError {
    #[error("session is not in training mode")]
    NotInTrainingMode,
    #[error("session is not in inference mode")]
    NotInInferenceMode,
    #[error("device is not on an action zone")]
    NoZoneSelected,
    #[error("no recordings to delete")]
    NothingToDelete,
    #[error("need at least 2 actions with recordings, found {found}")]
    InsufficientClasses { found: usize },
    #[error("training already in progress")]
    AlreadyTraining,
    #[error("no training job {0} in progress")]
    StaleTrainingJob(u64),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Forest(ForestError),
}

impl From<ForestError> for SessionError {
    fn from(e: ForestError) -> Self {
        match e {
            ForestError::InsufficientClasses { found } => SessionError::InsufficientClasses { found },
            other => SessionError::Forest(other),
        }
    }
}

impl SessionError {
    /// Stable error code used on the wire.
    pub fn code(&self) -> &'static str {
        match self {
            SessionError::NotInTrainingMode => "NotInTrainingMode",
            SessionError::NotInInferenceMode => "NotInInferenceMode",
            SessionError::NoZoneSelected => "NoZoneSelected",
            SessionError::NothingToDelete => "NothingToDelete",
            SessionError::InsufficientClasses { .. } => "InsufficientClasses",
            SessionError::AlreadyTraining => "AlreadyTraining",
            SessionError::StaleTrainingJob(_) => "StaleTrainingJob",
            SessionError::Feature(_) => "FeatureError",
            SessionError::Forest(_) => "TrainingFailed",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InferenceResult {
    pub probabilities: ClassProbabilities,
    pub top: ActionLabel,
    pub latency_ms: u64,
}

/// Everything needed to train, detached from the session so the work can
/// run without holding it.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingJob {
    pub id: u64,
    pub samples: Vec<LabeledSample>,
    pub config: ForestConfig,
    pub seed: u64,
}

impl TrainingJob {
    pub fn run(&self) -> Result<ForestModel, ForestError> {
        train_forest(&self.samples, &self.config, self.seed)
    }

    pub fn classes(&self) -> Vec<ActionLabel> {
        let mut seen = [false; NUM_ACTIONS];
        for s in &self.samples {
            seen[s.label.index()] = true;
        }
        ActionLabel::ALL.into_iter().filter(|a| seen[a.index()]).collect()
    }
}

#[derive(Debug, PartialEq)]
pub enum ModeButtonOutcome {
    ReturnedToTraining,
    TrainingStarted(TrainingJob),
    Ignored,
}

pub struct Session {
    mode: Mode,
    dataset: [Vec<FeatureVector>; NUM_ACTIONS],
    recording_log: Vec<(ActionLabel, usize)>,
    model: Option<Arc<ForestModel>>,
    current_zone: Option<ActionLabel>,
    seed: u64,
    forest_config: ForestConfig,
    extractor: Arc<dyn FeatureExtractor>,
    next_job: u64,
}

impl std::fmt::Debug for Session {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Session")
            .field("mode", &self.mode)
            .field("counts", &self.counts())
            .field("has_model", &self.model.is_some())
            .field("current_zone", &self.current_zone)
            .field("seed", &self.seed)
            .finish()
    }
}

impl Session {
    pub fn new(extractor: Arc<dyn FeatureExtractor>, forest_config: ForestConfig, seed: u64) -> Self {
        Self {
            mode: Mode::Training,
            dataset: Default::default(),
            recording_log: Vec::new(),
            model: None,
            current_zone: None,
            seed,
            forest_config,
            extractor,
            next_job: 1,
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn model(&self) -> Option<&Arc<ForestModel>> {
        self.model.as_ref()
    }

    pub fn current_zone(&self) -> Option<ActionLabel> {
        self.current_zone
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn samples(&self, label: ActionLabel) -> &[FeatureVector] {
        &self.dataset[label.index()]
    }

    pub fn recording_log(&self) -> &[(ActionLabel, usize)] {
        &self.recording_log
    }

    pub fn counts(&self) -> [usize; NUM_ACTIONS] {
        std::array::from_fn(|i| self.dataset[i].len())
    }

    pub fn total_samples(&self) -> usize {
        self.recording_log.len()
    }

    pub fn extractor(&self) -> &Arc<dyn FeatureExtractor> {
        &self.extractor
    }

    /// Updates the zone under the device. Returns whether it changed.
    pub fn set_zone(&mut self, zone: Option<ActionLabel>) -> bool {
        let changed = self.current_zone != zone;
        self.current_zone = zone;
        changed
    }

    fn require_training(&self) -> Result<(), SessionError> {
        match self.mode {
            Mode::Training => Ok(()),
            _ => Err(SessionError::NotInTrainingMode),
        }
    }

    /// Records under the current zone; returns that zone's new count.
    pub fn record_sample(&mut self, clip: &AudioClip) -> Result<usize, SessionError> {
        self.require_training()?;
        let label = self.current_zone.ok_or(SessionError::NoZoneSelected)?;
        self.record_sample_as(label, clip)
    }

    /// Records under an explicit label (bound when capture started).
    pub fn record_sample_as(&mut self, label: ActionLabel, clip: &AudioClip) -> Result<usize, SessionError> {
        self.require_training()?;
        let features = self.extractor.extract(clip)?;
        Ok(self.push_features(label, features))
    }

    /// Records precomputed features (snapshot restore, tests).
    pub fn record_features(&mut self, label: ActionLabel, features: FeatureVector) -> Result<usize, SessionError> {
        self.require_training()?;
        if features.len() != self.extractor.dim() {
            return Err(SessionError::Forest(ForestError::DimensionMismatch {
                expected: self.extractor.dim(),
                found: features.len(),
            }));
        }
        Ok(self.push_features(label, features))
    }

    fn push_features(&mut self, label: ActionLabel, features: FeatureVector) -> usize {
        let list = &mut self.dataset[label.index()];
        list.push(features);
        self.recording_log.push((label, list.len() - 1));
        list.len()
    }

    /// Removes the most recent recording, whatever its label.
    pub fn delete_last(&mut self) -> Result<ActionLabel, SessionError> {
        self.require_training()?;
        let (label, index) = self.recording_log.pop().ok_or(SessionError::NothingToDelete)?;
        let list = &mut self.dataset[label.index()];
        debug_assert_eq!(index + 1, list.len());
        list.truncate(index);
        Ok(label)
    }

    /// Clears all recordings. The last trained model is kept.
    pub fn reset_all(&mut self) -> Result<(), SessionError> {
        self.require_training()?;
        for list in &mut self.dataset {
            list.clear();
        }
        self.recording_log.clear();
        Ok(())
    }

    /// Training samples in label-id order, recording order within a label.
    pub fn training_samples(&self) -> Vec<LabeledSample> {
        ActionLabel::ALL
            .into_iter()
            .flat_map(|label| {
                self.dataset[label.index()].iter().map(move |f| LabeledSample {
                    features: f.clone(),
                    label,
                })
            })
            .collect()
    }

    /// Moves to `TrainingInProgress` and hands out the work.
    pub fn begin_training(&mut self) -> Result<TrainingJob, SessionError> {
        match self.mode {
            Mode::TrainingInProgress => return Err(SessionError::AlreadyTraining),
            Mode::Inference => return Err(SessionError::NotInTrainingMode),
            Mode::Training => {}
        }
        let found = self.dataset.iter().filter(|l| !l.is_empty()).count();
        if found < 2 {
            return Err(SessionError::InsufficientClasses { found });
        }
        let job = TrainingJob {
            id: self.next_job,
            samples: self.training_samples(),
            config: self.forest_config.clone(),
            seed: self.seed,
        };
        self.next_job += 1;
        self.mode = Mode::TrainingInProgress;
        Ok(job)
    }

    /// Publishes a training result: success enters `Inference` with the new
    /// model, failure reverts to `Training`.
    pub fn finish_training(
        &mut self,
        job_id: u64,
        result: Result<ForestModel, ForestError>,
    ) -> Result<Arc<ForestModel>, SessionError> {
        if self.mode != Mode::TrainingInProgress || job_id + 1 != self.next_job {
            return Err(SessionError::StaleTrainingJob(job_id));
        }
        match result {
            Ok(model) => {
                let model = Arc::new(model);
                self.model = Some(model.clone());
                self.mode = Mode::Inference;
                Ok(model)
            }
            Err(e) => {
                self.mode = Mode::Training;
                Err(e.into())
            }
        }
    }

    /// Trains on the calling thread.
    pub fn start_training(&mut self) -> Result<(Arc<ForestModel>, Duration), SessionError> {
        let job = self.begin_training()?;
        let t0 = Instant::now();
        let result = job.run();
        let elapsed = t0.elapsed();
        Ok((self.finish_training(job.id, result)?, elapsed))
    }

    pub fn infer(&self, clip: &AudioClip) -> Result<InferenceResult, SessionError> {
        let t0 = Instant::now();
        if self.mode != Mode::Inference {
            return Err(SessionError::NotInInferenceMode);
        }
        let model = self.model.as_ref().expect("inference mode implies a model");
        let features = self.extractor.extract(clip)?;
        let probabilities = model.predict_proba(&features)?;
        Ok(InferenceResult {
            top: probabilities.top(),
            probabilities,
            latency_ms: t0.elapsed().as_millis() as u64,
        })
    }

    pub fn press_mode_button(&mut self) -> Result<ModeButtonOutcome, SessionError> {
        match self.mode {
            Mode::Inference => {
                self.mode = Mode::Training;
                Ok(ModeButtonOutcome::ReturnedToTraining)
            }
            Mode::Training => self.begin_training().map(ModeButtonOutcome::TrainingStarted),
            Mode::TrainingInProgress => Ok(ModeButtonOutcome::Ignored),
        }
    }

    /// Verifies the state invariants; used by tests and snapshot loading.
    pub fn check_invariants(&self) -> Result<(), String> {
        if self.mode == Mode::Inference && self.model.is_none() {
            return Err("inference mode without a model".into());
        }
        let total: usize = self.dataset.iter().map(Vec::len).sum();
        if total != self.recording_log.len() {
            return Err(format!("log has {} entries for {total} samples", self.recording_log.len()));
        }
        let mut seen: [Vec<bool>; NUM_ACTIONS] = std::array::from_fn(|i| vec![false; self.dataset[i].len()]);
        for &(label, idx) in &self.recording_log {
            let slot = seen[label.index()]
                .get_mut(idx)
                .ok_or_else(|| format!("log entry ({label}, {idx}) out of range"))?;
            if *slot {
                return Err(format!("log entry ({label}, {idx}) repeated"));
            }
            *slot = true;
        }
        // Within a label, entries must appear in index order for delete_last.
        let mut next = [0usize; NUM_ACTIONS];
        for &(label, idx) in &self.recording_log {
            if idx != next[label.index()] {
                return Err(format!("log entry ({label}, {idx}) out of order"));
            }
            next[label.index()] += 1;
        }
        let dim = self.extractor.dim();
        if self.dataset.iter().flatten().any(|f| f.len() != dim) {
            return Err("feature vector with wrong dimension".into());
        }
        Ok(())
    }

    pub fn snapshot(&self) -> SessionSnapshot {
        SessionSnapshot {
            version: SNAPSHOT_VERSION,
            // An unfinished training job does not survive a restart.
            mode: match self.mode {
                Mode::TrainingInProgress => Mode::Training,
                m => m,
            },
            seed: self.seed,
            current_zone: self.current_zone,
            forest_config: self.forest_config.clone(),
            dataset: self.dataset.iter().cloned().collect(),
            recording_log: self.recording_log.clone(),
            model: self.model.as_deref().cloned(),
        }
    }

    pub fn from_snapshot(snapshot: SessionSnapshot, extractor: Arc<dyn FeatureExtractor>) -> Result<Self, SnapshotError> {
        if snapshot.version != SNAPSHOT_VERSION {
            return Err(SnapshotError::Unsupported(snapshot.version));
        }
        if snapshot.mode == Mode::TrainingInProgress {
            return Err(SnapshotError::Invalid("snapshot cannot be mid-training".into()));
        }
        if snapshot.dataset.len() != NUM_ACTIONS {
            return Err(SnapshotError::Invalid(format!(
                "dataset must have {NUM_ACTIONS} lists, got {}",
                snapshot.dataset.len()
            )));
        }
        if let Some(model) = &snapshot.model {
            model.validate().map_err(SnapshotError::Model)?;
        }
        let mut dataset = snapshot.dataset.into_iter();
        let session = Self {
            mode: snapshot.mode,
            dataset: std::array::from_fn(|_| dataset.next().unwrap_or_default()),
            recording_log: snapshot.recording_log,
            model: snapshot.model.map(Arc::new),
            current_zone: snapshot.current_zone,
            seed: snapshot.seed,
            forest_config: snapshot.forest_config,
            extractor,
            next_job: 1,
        };
        session.check_invariants().map_err(SnapshotError::Invalid)?;
        Ok(session)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SnapshotError {
    #[error("snapshot json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported snapshot version {0}")]
    Unsupported(u32),
    #[error("invalid snapshot: {0}")]
    Invalid(String),
    #[error(transparent)]
    Model(ModelFormatError),
}

/// Persistent form of a session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSnapshot {
    pub version: u32,
    pub mode: Mode,
    pub seed: u64,
    pub current_zone: Option<ActionLabel>,
    pub forest_config: ForestConfig,
    /// One list of feature vectors per action, in label-id order.
    pub dataset: Vec<Vec<FeatureVector>>,
    pub recording_log: Vec<(ActionLabel, usize)>,
    pub model: Option<ForestModel>,
}

impl SessionSnapshot {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("snapshot serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, SnapshotError> {
        Ok(serde_json::from_str(text)?)
    }
}
