use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Regime, Loss};
use super::score::{log_transform, sample_errors, teacher_scores};
use super::PipelineError;
use crate::data::{draw_outliers, perturb, ImageSet};
use crate::models::{Network, StudentId, StudentModel, TeacherModel};
use crate::nn::{AdamState, Graph, NnError, Tensor};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Teacher,
    Student,
    Joint,
}

/// One line of the training log. Epoch 0 is measured before any update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub phase: Phase,
    pub epoch: usize,
    pub teacher_loss: Option<f64>,
    pub student_loss: Option<f64>,
}

/// Visiting order of the training set in `epoch` (1-based).
pub fn epoch_order(n: usize, run_seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::rng(run_seed, "shuffle", &[epoch as u64]));
    order
}

fn batches(order: &[usize], batch_size: usize) -> impl Iterator<Item = &[usize]> {
    order.chunks(batch_size)
}

fn concat(a: &Tensor<f32>, b: &Tensor<f32>) -> Tensor<f32> {
    let mut shape = a.shape().to_vec();
    shape[0] += b.shape()[0];
    let mut v = a.values().to_vec();
    v.extend_from_slice(b.values());
    Tensor::new(&shape, v).expect("matching trailing dims")
}

fn targets_tensor(t: &[f32]) -> Tensor<f32> {
    Tensor::new(&[t.len(), 1], t.to_vec()).expect("non-empty targets")
}

fn log_targets(raw: &[f32], delta: f64) -> Vec<f32> {
    raw.iter().map(|&r| log_transform(f64::from(r), delta) as f32).collect()
}

/// Fills the teacher's gradient slots for the reconstruction loss of `x`;
/// returns the loss and the per-sample errors.
pub(crate) fn teacher_grads(net: &mut Network<f32>, x: &Tensor<f32>, kind: Loss) -> Result<(f64, Vec<f32>), NnError> {
    net.check_batch(x.shape())?;
    let mut g = Graph::new();
    let bound = net.bind(&mut g);
    let xi = g.input(x.clone());
    let recon = net.forward(&mut g, &bound, xi)?;
    let per = g.sample_loss(kind, recon, xi)?;
    let loss = g.loss(kind, recon, xi)?;
    let grads = g.backward(loss)?;
    net.set_grads(&bound, &grads);
    Ok((f64::from(g.value(loss).values()[0]), g.value(per).values().to_vec()))
}

/// Fills the student's gradient slots for fitting `targets`; returns the loss.
pub(crate) fn student_grads(net: &mut Network<f32>, x: &Tensor<f32>, targets: &[f32], kind: Loss) -> Result<f64, NnError> {
    net.check_batch(x.shape())?;
    let mut g = Graph::new();
    let bound = net.bind(&mut g);
    let xi = g.input(x.clone());
    let pred = net.forward(&mut g, &bound, xi)?;
    let t = g.input(targets_tensor(targets));
    let loss = g.loss(kind, pred, t)?;
    let grads = g.backward(loss)?;
    net.set_grads(&bound, &grads);
    Ok(f64::from(g.value(loss).values()[0]))
}

/// Gradients of the joint objective `L_teacher(x) + lambda · L_student(view)`
/// recorded on a single tape. With `coupled` unset the student targets enter
/// as constants; otherwise they stay attached to the teacher's graph.
/// `view` defaults to `x`; `losses` is `(teacher, student)`. Returns
/// `(teacher loss, student loss)`.
#[allow(clippy::too_many_arguments)]
pub fn joint_grads(
    teacher: &mut Network<f32>,
    student: &mut Network<f32>,
    x: &Tensor<f32>,
    view: Option<&Tensor<f32>>,
    lambda: f64,
    delta: f64,
    losses: (Loss, Loss),
    coupled: bool,
) -> Result<(f64, f64), NnError> {
    let (t_kind, kind) = losses;
    teacher.check_batch(x.shape())?;
    let mut g = Graph::new();
    let tb = teacher.bind(&mut g);
    let sb = student.bind(&mut g);
    let xi = g.input(x.clone());
    let recon = teacher.forward(&mut g, &tb, xi)?;
    let t_loss = g.loss(t_kind, recon, xi)?;
    let (vi, per) = match view {
        None => (xi, g.sample_loss(t_kind, recon, xi)?),
        Some(v) => {
            teacher.check_batch(v.shape())?;
            let vi = g.input(v.clone());
            let r = teacher.forward(&mut g, &tb, vi)?;
            (vi, g.sample_loss(t_kind, r, vi)?)
        }
    };
    let n = g.value(per).len();
    let target = if coupled {
        let logs = g.log_offset(per, delta as f32);
        g.reshape(logs, &[n, 1])?
    } else {
        let raw = g.value(per).values().to_vec();
        g.input(targets_tensor(&log_targets(&raw, delta)))
    };
    let pred = student.forward(&mut g, &sb, vi)?;
    let s_loss = g.loss(kind, pred, target)?;
    let weighted = g.scale(s_loss, lambda as f32);
    let total = g.add(t_loss, weighted)?;
    let grads = g.backward(total)?;
    teacher.set_grads(&tb, &grads);
    student.set_grads(&sb, &grads);
    Ok((f64::from(g.value(t_loss).values()[0]), f64::from(g.value(s_loss).values()[0])))
}

fn check_nonempty(set: &ImageSet) -> Result<(), PipelineError> {
    if set.is_empty() {
        return Err(PipelineError::EmptyTrainingSet);
    }
    Ok(())
}

fn mean_pixel(set: &ImageSet) -> f64 {
    set.pixels().iter().map(|&v| f64::from(v)).sum::<f64>() / set.pixels().len() as f64
}

/// Mean reconstruction loss of the whole set, batch by batch in set order.
fn teacher_epoch0(net: &Network<f32>, set: &ImageSet, batch_size: usize, kind: Loss) -> Result<f64, NnError> {
    let order: Vec<usize> = (0..set.len()).collect();
    let mut sum = 0.0;
    for idx in batches(&order, batch_size) {
        let errs = sample_errors(net, &set.batch(idx), kind)?;
        sum += errs.iter().map(|&e| f64::from(e)).sum::<f64>();
    }
    Ok(sum / set.len() as f64)
}

fn student_epoch0(net: &Network<f32>, set: &ImageSet, targets: &[f32], batch_size: usize, kind: Loss) -> Result<f64, NnError> {
    let order: Vec<usize> = (0..set.len()).collect();
    let mut sum = 0.0;
    for idx in batches(&order, batch_size) {
        let pred = net.predict(set.batch(idx))?;
        for (&p, &i) in pred.values().iter().zip(idx) {
            let r = f64::from(p - targets[i]);
            sum += match kind {
                Loss::Mae => r.abs(),
                Loss::Mse => r * r,
            };
        }
    }
    Ok(sum / set.len() as f64)
}

/// Trains a fresh teacher on `train` with Adam.
pub fn train_teacher(config: &ExperimentConfig, train: &ImageSet) -> Result<(TeacherModel, Vec<EpochRecord>), PipelineError> {
    let out = co_train_tracks(config, train, None, &[])?;
    Ok((out.teacher, out.teacher_log))
}

/// Log-space targets of the frozen teacher for every image of `train`.
pub fn offline_targets(teacher: &TeacherModel, train: &ImageSet, delta: f64) -> Result<Vec<f32>, PipelineError> {
    let raw = teacher_scores(teacher, train)?;
    Ok(raw.iter().map(|&r| log_transform(r, delta) as f32).collect())
}

/// Distils a frozen teacher into `student` using cached targets.
pub fn train_student_offline(
    teacher: &TeacherModel,
    student: StudentModel,
    train: &ImageSet,
    config: &ExperimentConfig,
) -> Result<(StudentModel, Vec<EpochRecord>), PipelineError> {
    check_nonempty(train)?;
    let targets = offline_targets(teacher, train, config.delta)?;
    fit_student(student, train, &targets, config)
}

/// Student training against fixed per-image targets.
pub fn fit_student(
    mut student: StudentModel,
    train: &ImageSet,
    targets: &[f32],
    config: &ExperimentConfig,
) -> Result<(StudentModel, Vec<EpochRecord>), PipelineError> {
    check_nonempty(train)?;
    let kind = config.student_loss;
    let mut adam = AdamState::new(student.network.params());
    let mut log = vec![EpochRecord {
        phase: Phase::Student,
        epoch: 0,
        teacher_loss: None,
        student_loss: Some(student_epoch0(&student.network, train, targets, config.batch_size, kind)?),
    }];
    for epoch in 1..=config.epochs {
        let order = epoch_order(train.len(), config.seed, epoch);
        let mut sum = 0.0;
        for idx in batches(&order, config.batch_size) {
            let t: Vec<f32> = idx.iter().map(|&i| targets[i]).collect();
            let loss = student_grads(&mut student.network, &train.batch(idx), &t, kind)?;
            adam.step(student.network.params_mut(), config.lr)?;
            sum += loss * idx.len() as f64;
        }
        log.push(EpochRecord {
            phase: Phase::Student,
            epoch,
            teacher_loss: None,
            student_loss: Some(sum / train.len() as f64),
        });
    }
    student.network.clear_grads();
    Ok((student, log))
}

/// A student trained alongside the teacher.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Track {
    pub regime: Regime,
    pub student: StudentId,
}

pub struct TrackOutcome {
    pub track: Track,
    pub student: StudentModel,
    pub log: Vec<EpochRecord>,
}

pub struct CoTrainOutcome {
    pub teacher: TeacherModel,
    pub teacher_log: Vec<EpochRecord>,
    pub tracks: Vec<TrackOutcome>,
}

struct Lane {
    track: Track,
    student: StudentModel,
    adam: AdamState<f32>,
    loss_sum: f64,
    log: Vec<EpochRecord>,
}

/// The student's view of one batch and its targets.
struct View {
    x: Tensor<f32>,
    targets: Vec<f32>,
}

/// Shared teacher trained on `train` with any number of co-learning
/// students. Targets are detached, so the teacher follows exactly the
/// trajectory of [`train_teacher`] and every track sees the teacher state
/// of the same step. With `config.coupled` a single track is allowed and the
/// student loss reaches the teacher.
pub fn co_train_tracks(
    config: &ExperimentConfig,
    train: &ImageSet,
    pool: Option<&ImageSet>,
    tracks: &[Track],
) -> Result<CoTrainOutcome, PipelineError> {
    check_nonempty(train)?;
    if tracks.iter().any(|t| !t.regime.is_colearn()) {
        return Err(PipelineError::Invalid("offline tracks are not co-trained".into()));
    }
    if config.coupled && tracks.len() > 1 {
        return Err(PipelineError::Invalid("a coupled teacher can serve only one student".into()));
    }
    let needs_pool = tracks.iter().any(|t| t.regime == Regime::ColearnOutlier) && config.rho > 0.0;
    let pool = match pool {
        Some(p) if !p.is_empty() => Some(p),
        _ if needs_pool => return Err(PipelineError::MissingPool),
        _ => None,
    };

    let mut teacher = TeacherModel::build(config.seed).with_loss(config.teacher_loss);
    teacher.set_output_level(mean_pixel(train));
    let mut t_adam = AdamState::new(teacher.network.params());
    let mut lanes: Vec<Lane> = tracks
        .iter()
        .map(|&track| {
            let student = StudentModel::build(track.student, config.seed);
            let adam = AdamState::new(student.network.params());
            Lane {
                track,
                student,
                adam,
                loss_sum: 0.0,
                log: Vec::new(),
            }
        })
        .collect();

    let t0 = teacher_epoch0(&teacher.network, train, config.batch_size, config.teacher_loss)?;
    let mut teacher_log = vec![EpochRecord {
        phase: Phase::Teacher,
        epoch: 0,
        teacher_loss: Some(t0),
        student_loss: None,
    }];
    if !lanes.is_empty() {
        let raw = teacher_scores(&teacher, train)?;
        let targets: Vec<f32> = raw.iter().map(|&r| log_transform(r, config.delta) as f32).collect();
        for lane in &mut lanes {
            let s0 = student_epoch0(&lane.student.network, train, &targets, config.batch_size, config.student_loss)?;
            lane.log.push(EpochRecord {
                phase: Phase::Joint,
                epoch: 0,
                teacher_loss: Some(t0),
                student_loss: Some(s0),
            });
        }
    }
    let wants = |r: Regime| lanes.iter().any(|l| l.track.regime == r);
    let (want_outlier, want_noise) = (wants(Regime::ColearnOutlier), wants(Regime::ColearnNoise));

    for epoch in 1..=config.epochs {
        let order = epoch_order(train.len(), config.seed, epoch);
        let n_batches = order.len().div_ceil(config.batch_size);
        let draws = match pool {
            Some(p) if want_outlier => {
                draw_outliers(train.len(), p.len(), config.rho, &mut seed::rng(config.seed, "outlier", &[epoch as u64]))?
            }
            _ => Vec::new(),
        };
        let mut t_sum = 0.0;
        for lane in &mut lanes {
            lane.loss_sum = 0.0;
        }
        for (b, idx) in batches(&order, config.batch_size).enumerate() {
            let x = train.batch(idx);
            if config.coupled {
                if let Some(lane) = lanes.first_mut() {
                    let view = exposure_input(config, &x, lane.track.regime, pool, &draws, epoch, b, n_batches);
                    let (tl, sl) = joint_grads(
                        &mut teacher.network,
                        &mut lane.student.network,
                        &x,
                        view.as_ref(),
                        config.lambda,
                        config.delta,
                        (config.teacher_loss, config.student_loss),
                        true,
                    )?;
                    lane.adam.step(lane.student.network.params_mut(), config.lr)?;
                    t_adam.step(teacher.network.params_mut(), config.lr)?;
                    t_sum += tl * idx.len() as f64;
                    lane.loss_sum += sl * view.as_ref().map_or(idx.len(), |v| v.shape()[0]) as f64;
                    continue;
                }
            }
            let (tl, errs) = teacher_grads(&mut teacher.network, &x, config.teacher_loss)?;
            t_sum += tl * idx.len() as f64;
            if !lanes.is_empty() {
                let clean = View {
                    targets: log_targets(&errs, config.delta),
                    x,
                };
                let outlier = if want_outlier {
                    outlier_view(config, &teacher.network, &clean, pool, &draws, b, n_batches)?
                } else {
                    None
                };
                let noisy = if want_noise { noise_view(config, &teacher.network, &clean, epoch, b)? } else { None };
                for lane in &mut lanes {
                    let view = match lane.track.regime {
                        Regime::ColearnOutlier => outlier.as_ref().unwrap_or(&clean),
                        Regime::ColearnNoise => noisy.as_ref().unwrap_or(&clean),
                        _ => &clean,
                    };
                    let sl = student_grads(&mut lane.student.network, &view.x, &view.targets, config.student_loss)?;
                    if config.lambda != 1.0 {
                        lane.student.network.scale_grads(config.lambda as f32);
                    }
                    lane.adam.step(lane.student.network.params_mut(), config.lr)?;
                    lane.loss_sum += sl * view.targets.len() as f64;
                }
            }
            t_adam.step(teacher.network.params_mut(), config.lr)?;
        }
        let t_mean = t_sum / train.len() as f64;
        teacher_log.push(EpochRecord {
            phase: Phase::Teacher,
            epoch,
            teacher_loss: Some(t_mean),
            student_loss: None,
        });
        for lane in &mut lanes {
            let seen = train.len() + if lane.track.regime == Regime::ColearnOutlier { draws.len() } else { 0 };
            lane.log.push(EpochRecord {
                phase: Phase::Joint,
                epoch,
                teacher_loss: Some(t_mean),
                student_loss: Some(lane.loss_sum / seen as f64),
            });
        }
    }
    teacher.network.clear_grads();
    for lane in &mut lanes {
        lane.student.network.clear_grads();
    }
    Ok(CoTrainOutcome {
        teacher,
        teacher_log,
        tracks: lanes
            .into_iter()
            .map(|l| TrackOutcome {
                track: l.track,
                student: l.student,
                log: l.log,
            })
            .collect(),
    })
}

/// Slice of this epoch's outlier draws that belongs to batch `b`.
fn outlier_slice(draws: &[usize], b: usize, n_batches: usize) -> &[usize] {
    let m = draws.len();
    &draws[b * m / n_batches..(b + 1) * m / n_batches]
}

fn outlier_batch(pool: Option<&ImageSet>, draws: &[usize], b: usize, n_batches: usize) -> Option<Tensor<f32>> {
    let extra = outlier_slice(draws, b, n_batches);
    match pool {
        Some(pool) if !extra.is_empty() => Some(pool.batch(extra)),
        _ => None,
    }
}

fn noisy_batch(config: &ExperimentConfig, x: &Tensor<f32>, epoch: usize, b: usize) -> Option<Tensor<f32>> {
    if config.epsilon == 0.0 {
        return None;
    }
    let mut v = x.clone();
    perturb(v.values_mut(), config.epsilon, &mut seed::rng(config.seed, "noise", &[epoch as u64, b as u64]));
    Some(v)
}

fn outlier_view(
    config: &ExperimentConfig,
    teacher: &Network<f32>,
    clean: &View,
    pool: Option<&ImageSet>,
    draws: &[usize],
    b: usize,
    n_batches: usize,
) -> Result<Option<View>, PipelineError> {
    let Some(ox) = outlier_batch(pool, draws, b, n_batches) else { return Ok(None) };
    let mut targets = clean.targets.clone();
    targets.extend(log_targets(&sample_errors(teacher, &ox, config.teacher_loss)?, config.delta));
    Ok(Some(View {
        x: concat(&clean.x, &ox),
        targets,
    }))
}

fn noise_view(config: &ExperimentConfig, teacher: &Network<f32>, clean: &View, epoch: usize, b: usize) -> Result<Option<View>, PipelineError> {
    let Some(x) = noisy_batch(config, &clean.x, epoch, b) else { return Ok(None) };
    let targets = log_targets(&sample_errors(teacher, &x, config.teacher_loss)?, config.delta);
    Ok(Some(View { x, targets }))
}

/// Student input for the coupled path, where targets are formed on the tape.
#[allow(clippy::too_many_arguments)]
fn exposure_input(
    config: &ExperimentConfig,
    x: &Tensor<f32>,
    regime: Regime,
    pool: Option<&ImageSet>,
    draws: &[usize],
    epoch: usize,
    b: usize,
    n_batches: usize,
) -> Option<Tensor<f32>> {
    match regime {
        Regime::ColearnOutlier => outlier_batch(pool, draws, b, n_batches).map(|o| concat(x, &o)),
        Regime::ColearnNoise => noisy_batch(config, x, epoch, b),
        _ => None,
    }
}

/// One teacher with its single co-trained student.
pub fn co_train(config: &ExperimentConfig, train: &ImageSet, pool: Option<&ImageSet>) -> Result<(TeacherModel, StudentModel, Vec<EpochRecord>), PipelineError> {
    let regime = if config.regime.is_colearn() { config.regime } else { Regime::Colearn };
    let mut out = co_train_tracks(
        config,
        train,
        pool,
        &[Track {
            regime,
            student: config.student_id,
        }],
    )?;
    let track = out.tracks.pop().expect("one track");
    Ok((out.teacher, track.student, track.log))
}
