//! Teacher training and teacher-student distillation.
//!
//! Both phases share one loop: sample a batch of (anchor, positive) pairs,
//! run the network on both in a single train-mode pass, mine hardest
//! negatives on the trainee's distances and take an Adam step on the batch
//! objective. During distillation the frozen teacher embeds the same
//! patches in eval mode and its distances enter the regularizers as
//! constants.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{sample_triplet_batch, PatchDataset};
use crate::error::{Error, Result};
use crate::eval::evaluate;
use crate::graph::{BnMode, Graph};
use crate::loss::{batch_objective, distance_matrix, ObjectiveWeights};
use crate::metrics::{EpochLog, MetricsReport};
use crate::model::{Arch, Checkpoint, DescriptorNet, Record};
use crate::optim::{adam_step, AdamConfig, AdamState, Precision};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub arch: Arch,
    /// Points (triplets) per batch.
    pub batch_points: usize,
    pub epochs: usize,
    /// Initial learning rate; decays linearly to zero over the run.
    pub lr: f64,
    pub adam: AdamConfig,
    pub margin: f64,
    pub alpha_p: f64,
    pub alpha_n: f64,
    /// Seeds weight init and batch sampling.
    pub seed: u64,
    pub precision: Precision,
    pub holdout_fraction: f64,
    /// Seeds the train / held-out split; keep fixed across teacher and student.
    pub split_seed: u64,
    /// Start an equal-weight student from the teacher's weights.
    pub warm_start: bool,
}

impl TrainConfig {
    /// Desk-scale defaults: batch 64, 30 epochs, lr 0.01, margin 1.
    pub fn desk(arch: Arch) -> Self {
        Self {
            arch,
            batch_points: 64,
            epochs: 30,
            lr: 0.01,
            adam: AdamConfig::default(),
            margin: 1.0,
            alpha_p: 0.0,
            alpha_n: 0.0,
            seed: 0,
            precision: Precision::F32,
            holdout_fraction: 0.1,
            split_seed: 0,
            warm_start: false,
        }
    }

    /// Full-scale recipe: batch 1024, 200 epochs.
    pub fn full_scale(arch: Arch) -> Self {
        Self {
            batch_points: 1024,
            epochs: 200,
            ..Self::desk(arch)
        }
    }

    /// Equal-weight distillation weights (αp = 1, αn = 15).
    pub fn equal_weight(mut self) -> Self {
        self.alpha_p = 1.0;
        self.alpha_n = 15.0;
        self
    }

    /// Light-weight distillation weights (αp = αn = 9).
    pub fn light_weight(mut self) -> Self {
        self.alpha_p = 9.0;
        self.alpha_n = 9.0;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_points < 2 {
            return Err(Error::InvalidArgument("batch size must be at least 2".into()));
        }
        if !(self.lr > 0.0 && self.margin > 0.0) {
            return Err(Error::InvalidArgument("learning rate and margin must be positive".into()));
        }
        if !(self.alpha_p >= 0.0 && self.alpha_n >= 0.0) {
            return Err(Error::InvalidArgument("regularizer weights must be non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return Err(Error::InvalidArgument("holdout fraction must be in [0, 1)".into()));
        }
        Ok(())
    }

    fn weights(&self) -> ObjectiveWeights {
        ObjectiveWeights {
            margin: self.margin,
            alpha_p: self.alpha_p,
            alpha_n: self.alpha_n,
        }
    }
}

/// Everything needed to continue a run exactly where it stopped.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub net: DescriptorNet,
    pub adam: AdamState,
    pub epochs_done: usize,
    pub log: Vec<EpochLog>,
}

impl TrainState {
    pub fn fresh(cfg: &TrainConfig) -> Result<Self> {
        Ok(Self {
            net: DescriptorNet::init(cfg.arch, cfg.seed)?,
            adam: AdamState::default(),
            epochs_done: 0,
            log: Vec::new(),
        })
    }

    /// Network records plus optimizer state and progress.
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = self.net.to_checkpoint();
        ck.records.push(Record::scalar("meta.epochs_done", self.epochs_done as f32));
        ck.records.push(Record::scalar("adam.step", self.adam.step as f32));
        let names: Vec<String> = self.net.parameters().into_iter().map(|(n, _)| n).collect();
        for (i, name) in names.iter().enumerate() {
            if let (Some(m), Some(v)) = (self.adam.m.get(i), self.adam.v.get(i)) {
                ck.records.push(Record::from_tensor(format!("adam.m.{name}"), m));
                ck.records.push(Record::from_tensor(format!("adam.v.{name}"), v));
            }
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let net = DescriptorNet::from_checkpoint(ck)?;
        let scalar = |name: &str| ck.record(name).map(|r| r.values.first().copied().unwrap_or(0.0));
        let epochs_done = scalar("meta.epochs_done").unwrap_or(0.0) as usize;
        let step = scalar("adam.step").unwrap_or(0.0) as u64;
        let mut adam = AdamState {
            step,
            ..AdamState::default()
        };
        if step > 0 {
            for (name, p) in net.parameters() {
                let fetch = |prefix: &str| -> Result<_> {
                    let key = format!("adam.{prefix}.{name}");
                    let t = ck
                        .record(&key)
                        .ok_or_else(|| Error::Malformed(format!("checkpoint lacks {key}")))?
                        .to_tensor();
                    if t.shape() != p.value.shape() {
                        return Err(Error::Malformed(format!("{key} has shape {:?}", t.shape())));
                    }
                    Ok(t)
                };
                adam.m.push(fetch("m")?);
                adam.v.push(fetch("v")?);
            }
        }
        Ok(Self {
            net,
            adam,
            epochs_done,
            log: Vec::new(),
        })
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub state: TrainState,
    pub report: MetricsReport,
}

/// Trains a network from scratch on the triplet loss with hardest-in-batch mining.
pub fn train_teacher(ds: &PatchDataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let state = TrainState::fresh(cfg)?;
    run_training(ds, cfg, state, None)
}

/// Trains a student against a frozen teacher on
/// `L_triplet + αp·L_TSP + αn·L_TSN`.
///
/// Teacher and student architectures may differ; only distances are compared.
pub fn distill_student(ds: &PatchDataset, teacher: &DescriptorNet, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let mut state = TrainState::fresh(cfg)?;
    if cfg.warm_start {
        if teacher.arch() != cfg.arch {
            return Err(Error::InvalidArgument(format!(
                "warm start needs matching architectures, teacher is {} and student {}",
                teacher.arch(),
                cfg.arch
            )));
        }
        state.net = teacher.clone();
    }
    run_training(ds, cfg, state, Some(teacher))
}

fn mean(sum: f64, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Continues training from `state` until `cfg.epochs` epochs are done.
pub fn run_training(
    ds: &PatchDataset,
    cfg: &TrainConfig,
    state: TrainState,
    teacher: Option<&DescriptorNet>,
) -> Result<TrainOutcome> {
    run_training_until(ds, cfg, state, teacher, cfg.epochs)
}

/// Like [`run_training`] but stops once `stop` epochs are done. The learning
/// rate schedule still spans `cfg.epochs`, so the run can be resumed later.
pub fn run_training_until(
    ds: &PatchDataset,
    cfg: &TrainConfig,
    mut state: TrainState,
    teacher: Option<&DescriptorNet>,
    stop: usize,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if state.net.arch() != cfg.arch {
        return Err(Error::InvalidArgument(format!(
            "state holds {} but config asks for {}",
            state.net.arch(),
            cfg.arch
        )));
    }
    let split = ds.split(cfg.holdout_fraction, cfg.split_seed);
    if split.train.len() < cfg.batch_points {
        return Err(Error::InvalidDataset(format!(
            "{} training points cannot fill a batch of {}",
            split.train.len(),
            cfg.batch_points
        )));
    }
    let per_epoch = split.train.len() / cfg.batch_points;
    let total_steps = (cfg.epochs * per_epoch).max(1);
    let weights = cfg.weights();

    for epoch in state.epochs_done..stop.min(cfg.epochs) {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(epoch as u64 + 1);
        let (mut loss_sum, mut sp, mut sn, mut tp, mut tn, mut tm) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        let mut pairs = 0;
        let mut lr = cfg.lr;
        for b in 0..per_epoch {
            let step = epoch * per_epoch + b;
            lr = cfg.lr * (1.0 - step as f64 / total_steps as f64);
            let batch = sample_triplet_batch(ds, &split.train, cfg.batch_points, &mut rng)?;
            let n = batch.len();

            let teacher_dist = match teacher {
                Some(t) => {
                    let a = t.embed(&ds.to_tensor(&batch.anchors))?;
                    let p = t.embed(&ds.to_tensor(&batch.positives))?;
                    Some(distance_matrix(&a, &p)?)
                }
                None => None,
            };

            let mut g = Graph::new();
            let all: Vec<usize> = batch.anchors.iter().chain(&batch.positives).copied().collect();
            let x = g.constant(ds.to_tensor(&all))?;
            let out = state.net.forward(&mut g, x, BnMode::Train)?;
            let anchors = g.slice_rows(out.descriptors, 0, n)?;
            let positives = g.slice_rows(out.descriptors, n, 2 * n)?;
            let obj = batch_objective(
                &mut g,
                anchors,
                positives,
                &batch.point_ids,
                teacher_dist.as_ref(),
                weights,
            )?;
            loss_sum += g.value(obj.loss).item();
            sp += obj.student_pos.iter().sum::<f64>();
            sn += obj.student_neg.iter().sum::<f64>();
            if let (Some(p), Some(q), Some(r)) = (&obj.teacher_pos, &obj.teacher_neg, &obj.teacher_mined_neg) {
                tp += p.iter().sum::<f64>();
                tn += q.iter().sum::<f64>();
                tm += r.iter().sum::<f64>();
            }
            pairs += n;

            let mut grads = g.backward(obj.loss)?;
            for (param, var) in state.net.parameters_mut().into_iter().zip(&out.params) {
                param.grad = grads.take(*var).expect("every parameter is a trainable leaf");
            }
            adam_step(&mut state.net.parameters_mut(), &mut state.adam, lr, &cfg.adam, cfg.precision)?;
            for p in state.net.parameters_mut() {
                p.zero_grad();
            }
            if cfg.precision == Precision::F32 {
                for s in state.net.running_stats_mut() {
                    for v in s.mean.iter_mut().chain(s.var.iter_mut()) {
                        *v = *v as f32 as f64;
                    }
                }
            }
        }

        let heldout = if split.heldout.len() >= 2 {
            Some(evaluate(&state.net, ds, &split.heldout)?)
        } else {
            None
        };
        state.log.push(EpochLog {
            epoch,
            loss: mean(loss_sum, per_epoch),
            lr,
            student_pos: mean(sp, pairs),
            student_neg: mean(sn, pairs),
            teacher_pos: teacher.map(|_| mean(tp, pairs)),
            teacher_neg: teacher.map(|_| mean(tn, pairs)),
            teacher_mined_neg: teacher.map(|_| mean(tm, pairs)),
            heldout_pos: heldout.as_ref().map(|e| e.mean_pos),
            heldout_neg: heldout.as_ref().map(|e| e.mean_neg),
        });
        state.epochs_done = epoch + 1;
    }

    let eval_points = if split.heldout.len() >= 2 {
        &split.heldout
    } else {
        &split.train
    };
    let e = evaluate(&state.net, ds, eval_points)?;
    let report = MetricsReport {
        arch: cfg.arch.to_string(),
        fpr95: e.fpr95,
        matching_map: e.matching_map,
        mean_pos_distance: e.mean_pos,
        mean_neg_distance: e.mean_neg,
        epochs: state.log.clone(),
    };
    Ok(TrainOutcome { state, report })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_dataset, SynthConfig};

    fn tiny_ds() -> PatchDataset {
        synth_dataset(&SynthConfig {
            num_points: 24,
            patches_per_point: 3,
            seed: 2,
            ..SynthConfig::default()
        })
        .unwrap()
    }

    fn tiny_cfg() -> TrainConfig {
        TrainConfig {
            batch_points: 8,
            epochs: 2,
            ..TrainConfig::desk(Arch::DesDis(8))
        }
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let ds = tiny_ds();
        let cfg = TrainConfig { epochs: 0, ..tiny_cfg() };
        let out = train_teacher(&ds, &cfg).unwrap();
        assert_eq!(out.state.net, DescriptorNet::init(cfg.arch, cfg.seed).unwrap());
        assert!(out.report.epochs.is_empty());
    }

    #[test]
    fn batch_larger_than_dataset_fails() {
        let ds = tiny_ds();
        let cfg = TrainConfig {
            batch_points: 64,
            ..tiny_cfg()
        };
        assert!(matches!(train_teacher(&ds, &cfg), Err(Error::InvalidDataset(_))));
    }

    #[test]
    fn state_checkpoint_round_trip() {
        let ds = tiny_ds();
        let out = train_teacher(&ds, &tiny_cfg()).unwrap();
        let ck = out.state.to_checkpoint();
        let bytes = ck.encode().unwrap();
        let back = TrainState::from_checkpoint(&Checkpoint::decode(&bytes).unwrap()).unwrap();
        assert_eq!(back.net, out.state.net);
        assert_eq!(back.adam, out.state.adam);
        assert_eq!(back.epochs_done, 2);
        assert_eq!(back.to_checkpoint().encode().unwrap(), bytes);
    }

    #[test]
    fn warm_start_needs_same_arch() {
        let ds = tiny_ds();
        let teacher = DescriptorNet::init(Arch::DesDis(16), 1).unwrap();
        let cfg = TrainConfig {
            warm_start: true,
            ..tiny_cfg()
        };
        assert!(distill_student(&ds, &teacher, &cfg).is_err());
    }
}
