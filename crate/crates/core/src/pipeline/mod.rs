//! Training regimes, anomaly scores and the per-run driver.

mod config;
mod score;
mod train;

use std::path::Path;
use std::sync::Arc;

pub use config::{ConfigError, ExperimentConfig, Regime, ScoreSpace, Loss};
pub use score::{log_transform, student_scores, teacher_score, teacher_scores, ScoreOrigin, ScoreSet, SCORE_CHUNK};
pub use train::{
    co_train, co_train_tracks, epoch_order, fit_student, joint_grads, offline_targets, train_student_offline, train_teacher,
    CoTrainOutcome, EpochRecord, Phase, Track, TrackOutcome,
};

use crate::data::{inlier_indices, load_split, make_test_set, DataError, ImageSet, Split};
use crate::eval::{evaluate_scores, MetricError, MetricsReport, Scores};
use crate::models::{StudentModel, TeacherModel};
use crate::nn::NnError;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("outlier exposure needs a non-empty outlier pool")]
    MissingPool,
    #[error("{0}")]
    Invalid(String),
}

/// Everything a run reads: inlier training images, the labelled test set
/// and, for outlier exposure, the pool of foreign images.
#[derive(Debug, Clone)]
pub struct DataBundle {
    pub train: ImageSet,
    pub test: ImageSet,
    /// 0 for inliers, 1 for anomalies.
    pub test_labels: Vec<u8>,
    pub pool: Option<Arc<ImageSet>>,
}

impl DataBundle {
    /// Splits full dataset splits according to `config`.
    ///
    /// Test inliers are drawn from the test split together with the
    /// training images of the inlier class that were not selected for
    /// training; some classes have fewer than 1000 test images.
    pub fn build(config: &ExperimentConfig, train_full: &ImageSet, test_full: &ImageSet, pool: Option<Arc<ImageSet>>) -> Result<Self, PipelineError> {
        let spec = config.split();
        let (chosen, rest) = inlier_indices(train_full, &spec)?;
        let train = train_full.subset(&chosen);
        let candidates = test_full.concat(&train_full.subset(&rest))?;
        let (test, test_labels) = make_test_set(&candidates, &spec)?;
        Ok(Self {
            train,
            test,
            test_labels,
            pool,
        })
    }

    /// Reads the dataset files below `root` and builds the bundle. The pool
    /// is the opposite dataset's training split and is only loaded when the
    /// regime uses it.
    pub fn load(root: &Path, config: &ExperimentConfig) -> Result<Self, PipelineError> {
        let train = load_split(root, config.dataset, Split::Train)?;
        let test = load_split(root, config.dataset, Split::Test)?;
        let pool = if config.regime == Regime::ColearnOutlier {
            Some(Arc::new(load_split(root, config.dataset.opposite(), Split::Train)?))
        } else {
            None
        };
        Self::build(config, &train, &test, pool)
    }
}

/// Result of one (regime, student) cell.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub config: ExperimentConfig,
    pub teacher: TeacherModel,
    pub student: StudentModel,
    pub log: Vec<EpochRecord>,
    pub teacher_scores: ScoreSet,
    pub student_scores: ScoreSet,
    pub scores: Scores,
}

impl RunOutcome {
    pub fn report(&self) -> MetricsReport {
        MetricsReport {
            dataset: self.config.dataset,
            inlier_class: self.config.inlier_class,
            regime: self.config.regime,
            student_id: self.config.student_id,
            seed: self.config.seed,
            auc_teacher: self.scores.auc_teacher,
            auc_student: self.scores.auc_student,
            auc_ratio: self.scores.auc_ratio,
            emd_inlier: self.scores.emd_inlier,
            emd_outlier: self.scores.emd_outlier,
            config_fingerprint: self.config.fingerprint(),
        }
    }
}

/// Runs several (regime, student) cells that agree on everything else.
///
/// With detached targets the teacher trajectory does not depend on the
/// students, so one teacher is trained and shared by every cell: offline
/// students distil its final state and co-learning students ride along
/// with its training. The outcome is identical to running each cell alone.
pub fn run_group(config: &ExperimentConfig, data: &DataBundle, tracks: &[Track]) -> Result<Vec<RunOutcome>, PipelineError> {
    config.validate()?;
    let colearn: Vec<Track> = tracks.iter().copied().filter(|t| t.regime.is_colearn()).collect();
    let has_offline = tracks.iter().any(|t| !t.regime.is_colearn());
    let pool = data.pool.as_deref();

    // (track, teacher, student, log) in completion order
    let mut done: Vec<(Track, TeacherModel, StudentModel, Vec<EpochRecord>)> = Vec::new();
    let mut shared: Option<(TeacherModel, Vec<EpochRecord>)> = None;
    if config.coupled {
        for &t in &colearn {
            let mut out = co_train_tracks(config, &data.train, pool, &[t])?;
            let lane = out.tracks.pop().expect("one track");
            done.push((t, out.teacher, lane.student, lane.log));
        }
        if has_offline {
            shared = Some(train_teacher(config, &data.train)?);
        }
    } else {
        let out = co_train_tracks(config, &data.train, pool, &colearn)?;
        for lane in out.tracks {
            done.push((lane.track, out.teacher.clone(), lane.student, lane.log));
        }
        shared = Some((out.teacher, out.teacher_log));
    }
    if has_offline {
        let (teacher, teacher_log) = shared.as_ref().expect("teacher trained");
        let targets = offline_targets(teacher, &data.train, config.delta)?;
        for t in tracks.iter().filter(|t| !t.regime.is_colearn()) {
            let (student, student_log) = fit_student(StudentModel::build(t.student, config.seed), &data.train, &targets, config)?;
            let mut log = teacher_log.clone();
            log.extend(student_log);
            done.push((*t, teacher.clone(), student, log));
        }
    }

    let shared_raw = match &shared {
        Some((teacher, _)) => Some(teacher_scores(teacher, &data.test)?),
        None => None,
    };
    let mut outcomes = Vec::with_capacity(tracks.len());
    for track in tracks {
        let pos = done.iter().position(|d| d.0 == *track).expect("every track ran");
        let (_, teacher, student, log) = done.swap_remove(pos);
        let raw = match (&shared_raw, config.coupled && track.regime.is_colearn()) {
            (Some(r), false) => r.clone(),
            _ => teacher_scores(&teacher, &data.test)?,
        };
        let pred = student_scores(&student, &data.test)?;
        let scores = evaluate_scores(&raw, &pred, &data.test_labels, config.delta, config.emd_space)?;
        let mut cfg = config.clone();
        cfg.regime = track.regime;
        cfg.student_id = track.student;
        outcomes.push(RunOutcome {
            config: cfg,
            teacher,
            student,
            log,
            teacher_scores: ScoreSet::teacher(raw, &data.test_labels, config.delta),
            student_scores: ScoreSet::student(pred, &data.test_labels),
            scores,
        });
    }
    Ok(outcomes)
}

/// Runs the single cell described by `config`.
pub fn run_regime(config: &ExperimentConfig, data: &DataBundle) -> Result<RunOutcome, PipelineError> {
    let track = Track {
        regime: config.regime,
        student: config.student_id,
    };
    Ok(run_group(config, data, &[track])?.pop().expect("one outcome"))
}
