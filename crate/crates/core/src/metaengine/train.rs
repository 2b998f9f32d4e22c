use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{build_for_task, ArchSpec, Layer, LossKind, ParamSet};
use crate::seed;
use crate::taskgen::{Dataset, DatasetKind, TaskDatabase};

use super::eval::accuracies;
use super::step::{descend, guard, independent_step, meta_gradient, meta_step, MetaGradient, StepOutcome};
use super::{EvalRecord, HistoryRecord, MetaConfig, Split, StepRecord, TrainState};

/// Called with the state after every evaluation; used for checkpointing.
pub type Observer<'a> = &'a mut dyn FnMut(&TrainState) -> Result<()>;

fn check_inputs(db: &TaskDatabase, arch: &ArchSpec, cfg: &MetaConfig, min_k: usize) -> Result<()> {
    cfg.validate()?;
    arch.validate()?;
    db.validate()?;
    if db.k() < min_k {
        return Err(Error::Precondition(format!(
            "need at least {min_k} tasks, database has {}",
            db.k()
        )));
    }
    for ds in db.datasets.iter().chain(&db.heldout) {
        arch.check_dataset(ds)?;
    }
    Ok(())
}

fn init_state(db: &TaskDatabase, arch: &ArchSpec, cfg: &MetaConfig) -> Result<TrainState> {
    let paramsets = (0..db.k())
        .map(|i| build_for_task(arch, cfg.seed, i))
        .collect::<Result<Vec<_>>>()?;
    Ok(TrainState {
        paramsets,
        split: Split::initial(db.k(), cfg.split_fraction, cfg.seed),
        iter: 0,
        history: Vec::new(),
        schedule: Vec::new(),
    })
}

fn should_eval(done: usize, cfg: &MetaConfig) -> bool {
    done == cfg.n_iter || (cfg.eval_every > 0 && done.is_multiple_of(cfg.eval_every))
}

fn record_eval(state: &mut TrainState, arch: &ArchSpec, db: &TaskDatabase, observer: Observer) -> Result<()> {
    let acc = accuracies(arch, &state.paramsets, db)?;
    state.history.push(HistoryRecord::Eval(EvalRecord {
        iter: state.iter,
        accuracies: acc,
    }));
    observer(state)
}

/// Commits per-task outcomes in meta-train order; the first error in that
/// order wins, whatever order the workers finished in.
fn commit(state: &mut TrainState, outcomes: Vec<Result<StepOutcome>>) -> Result<()> {
    for o in outcomes {
        let o = o?;
        let i = o.record.task;
        state.paramsets[i] = o.params;
        state.history.push(HistoryRecord::Step(o.record));
    }
    Ok(())
}

fn run_per_task(
    db: &TaskDatabase,
    arch: &ArchSpec,
    cfg: &MetaConfig,
    structured: bool,
    observer: Observer,
) -> Result<TrainState> {
    check_inputs(db, arch, cfg, 2)?;
    let mut state = init_state(db, arch, cfg)?;
    if cfg.meta_test_batch > state.split.test.len().min(state.split.train.len()) {
        log::warn!(
            "meta_test_batch {} exceeds a meta-test split size; batches use the whole split",
            cfg.meta_test_batch
        );
    }
    for _ in 0..cfg.n_iter {
        let outcomes: Vec<Result<StepOutcome>> = {
            let snapshot = &state;
            snapshot
                .split
                .train
                .par_iter()
                .map(|&i| {
                    if structured {
                        meta_step(arch, db, snapshot, i, cfg)
                    } else {
                        independent_step(arch, &snapshot.paramsets[i], &db.datasets[i], cfg.delta, snapshot.iter)
                    }
                })
                .collect()
        };
        commit(&mut state, outcomes)?;
        let used = std::mem::replace(&mut state.split, Split { train: vec![], test: vec![] });
        state.split = used.swapped();
        state.schedule.push(used);
        state.iter += 1;
        if should_eval(state.iter, cfg) {
            record_eval(&mut state, arch, db, &mut *observer)?;
        }
    }
    if cfg.n_iter == 0 {
        record_eval(&mut state, arch, db, &mut *observer)?;
    }
    Ok(state)
}

/// Structured meta-learning with per-task parameters.
pub fn run_invenio(db: &TaskDatabase, arch: &ArchSpec, cfg: &MetaConfig) -> Result<TrainState> {
    run_invenio_with(db, arch, cfg, &mut |_| Ok(()))
}

pub fn run_invenio_with(db: &TaskDatabase, arch: &ArchSpec, cfg: &MetaConfig, observer: Observer) -> Result<TrainState> {
    run_per_task(db, arch, cfg, true, observer)
}

/// Per-task gradient descent on each task's own loss, following the same
/// split and swap schedule as [`run_invenio`] so that `beta = 0` runs match.
pub fn run_independent(db: &TaskDatabase, arch: &ArchSpec, cfg: &MetaConfig) -> Result<TrainState> {
    run_independent_with(db, arch, cfg, &mut |_| Ok(()))
}

pub fn run_independent_with(db: &TaskDatabase, arch: &ArchSpec, cfg: &MetaConfig, observer: Observer) -> Result<TrainState> {
    run_per_task(db, arch, cfg, false, observer)
}

/// Gradient of the shared-model objective `L(theta) + beta * G(theta - alpha * grad L(theta))`
/// with `L` the mean loss over `train` and `G` the mean loss over `tests`.
pub fn shared_meta_gradient(
    arch: &ArchSpec,
    theta: &[f64],
    train: &[&Dataset],
    tests: &[&Dataset],
    cfg: &MetaConfig,
) -> Result<MetaGradient> {
    let weights = vec![1.0 / tests.len().max(1) as f64; tests.len()];
    meta_gradient(arch, theta, train, tests, &weights, cfg.alpha, cfg.beta, cfg.grad_order)
}

/// One parameter vector for all tasks, trained on the shared-model
/// objective. The meta-train and meta-test splits swap every iteration as in
/// [`run_invenio`]. With a single task the meta-test side stays empty and the
/// run is plain gradient descent.
///
/// Each iteration records one step whose `task` is the first meta-train task
/// and whose `loss` is the mean meta-train loss.
pub fn run_shared_maml(db: &TaskDatabase, arch: &ArchSpec, cfg: &MetaConfig) -> Result<TrainState> {
    run_shared_maml_with(db, arch, cfg, &mut |_| Ok(()))
}

pub fn run_shared_maml_with(db: &TaskDatabase, arch: &ArchSpec, cfg: &MetaConfig, observer: Observer) -> Result<TrainState> {
    check_inputs(db, arch, cfg, 1)?;
    let k = db.k();
    let mut theta = build_for_task(arch, cfg.seed, 0)?;
    let expand = |theta: &ParamSet| -> Vec<ParamSet> {
        (0..k)
            .map(|i| ParamSet {
                task_id: i,
                ..theta.clone()
            })
            .collect()
    };
    let mut state = TrainState {
        paramsets: expand(&theta),
        split: Split::initial(k, cfg.split_fraction, cfg.seed),
        iter: 0,
        history: Vec::new(),
        schedule: Vec::new(),
    };
    for t in 0..cfg.n_iter {
        let train: Vec<&Dataset> = state.split.train.iter().map(|&i| &db.datasets[i]).collect();
        let tests: Vec<&Dataset> = state.split.test.iter().map(|&j| &db.datasets[j]).collect();
        let lead = state.split.train[0];
        let mg = shared_meta_gradient(arch, &theta.flat, &train, &tests, cfg)
            .map_err(|e| e.context(format!("iteration {t}, shared model")))?;
        guard(mg.loss, t, lead)?;
        if let Some(g) = mg.meta_test_loss {
            guard(g, t, lead)?;
        }
        theta = descend(&theta, cfg.delta, &mg.grad, t)?;
        state.history.push(HistoryRecord::Step(StepRecord {
            iter: t,
            task: lead,
            loss: mg.loss,
            meta_test_loss: mg.meta_test_loss,
            etas: Vec::new(),
        }));
        let used = std::mem::replace(&mut state.split, Split { train: vec![], test: vec![] });
        state.split = used.swapped();
        state.schedule.push(used);
        state.iter += 1;
        state.paramsets = expand(&theta);
        if should_eval(state.iter, cfg) {
            record_eval(&mut state, arch, db, &mut *observer)?;
        }
    }
    if cfg.n_iter == 0 {
        record_eval(&mut state, arch, db, &mut *observer)?;
    }
    Ok(state)
}

/// Pretraining schedule for [`run_transfer`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransferConfig {
    #[serde(default = "default_pretrain_steps")]
    pub pretrain_steps: usize,
    #[serde(default = "default_pretrain_lr")]
    pub pretrain_lr: f64,
}

fn default_pretrain_steps() -> usize {
    200
}

fn default_pretrain_lr() -> f64 {
    0.1
}

impl Default for TransferConfig {
    fn default() -> Self {
        Self {
            pretrain_steps: default_pretrain_steps(),
            pretrain_lr: default_pretrain_lr(),
        }
    }
}

/// Same trunk as `arch`, with the output layer resized for `kind`.
fn pretrain_arch(arch: &ArchSpec, kind: DatasetKind) -> Result<ArchSpec> {
    let mut spec = arch.clone();
    let (outputs, loss) = match kind {
        DatasetKind::BinaryTask => (1, LossKind::Binary),
        DatasetKind::MulticlassDomain { classes } => (classes, LossKind::Multiclass),
    };
    match spec.layers.iter_mut().rev().find(|l| l.param_shape().is_some()) {
        Some(Layer::Linear { outputs: o, .. }) => *o = outputs,
        _ => {
            return Err(Error::Spec(
                "transfer needs an architecture whose last parameterized layer is linear".into(),
            ))
        }
    }
    spec.output_dim = outputs;
    spec.loss = loss;
    spec.validate()?;
    Ok(spec)
}

/// Pretrains one network on `pretrain`, then fine-tunes a copy per task with
/// `cfg.n_iter` full-batch gradient steps of size `cfg.delta`. Each copy
/// keeps the pretrained trunk and gets a freshly initialized output layer.
pub fn run_transfer(
    db: &TaskDatabase,
    arch: &ArchSpec,
    pretrain: &Dataset,
    cfg: &MetaConfig,
    tcfg: &TransferConfig,
) -> Result<TrainState> {
    run_transfer_with(db, arch, pretrain, cfg, tcfg, &mut |_| Ok(()))
}

pub fn run_transfer_with(
    db: &TaskDatabase,
    arch: &ArchSpec,
    pretrain: &Dataset,
    cfg: &MetaConfig,
    tcfg: &TransferConfig,
    observer: Observer,
) -> Result<TrainState> {
    check_inputs(db, arch, cfg, 1)?;
    if !(tcfg.pretrain_lr > 0.0 && tcfg.pretrain_lr.is_finite()) {
        return Err(Error::Precondition(format!(
            "pretrain_lr must be positive, got {}",
            tcfg.pretrain_lr
        )));
    }
    let parch = pretrain_arch(arch, pretrain.kind)?;
    parch.check_dataset(pretrain)?;
    let mut p = build_for_task(&parch, seed::derive(cfg.seed, "pretrain", 0), 0)?;
    for s in 0..tcfg.pretrain_steps {
        let (loss, grad) = parch
            .loss_and_grad(&p, pretrain)
            .map_err(|e| e.context(format!("pretraining step {s}")))?;
        guard(loss, s, usize::MAX).map_err(|e| e.context("pretraining"))?;
        p = descend(&p, tcfg.pretrain_lr, &grad, s)?;
    }
    let head = *arch.slots().last().expect("pretrain_arch found a layer");
    let trunk = head.weight_offset;
    let paramsets = (0..db.k())
        .map(|i| {
            let mut fresh = build_for_task(arch, cfg.seed, i)?;
            fresh.flat[..trunk].copy_from_slice(&p.flat[..trunk]);
            Ok(fresh)
        })
        .collect::<Result<Vec<_>>>()?;
    let all = Split {
        train: (0..db.k()).collect(),
        test: Vec::new(),
    };
    let mut state = TrainState {
        paramsets,
        split: Split::initial(db.k(), cfg.split_fraction, cfg.seed),
        iter: 0,
        history: Vec::new(),
        schedule: Vec::new(),
    };
    for _ in 0..cfg.n_iter {
        let outcomes: Vec<Result<StepOutcome>> = {
            let snapshot = &state;
            all.train
                .par_iter()
                .map(|&i| independent_step(arch, &snapshot.paramsets[i], &db.datasets[i], cfg.delta, snapshot.iter))
                .collect()
        };
        commit(&mut state, outcomes)?;
        state.schedule.push(all.clone());
        state.iter += 1;
        if should_eval(state.iter, cfg) {
            record_eval(&mut state, arch, db, &mut *observer)?;
        }
    }
    if cfg.n_iter == 0 {
        record_eval(&mut state, arch, db, &mut *observer)?;
    }
    Ok(state)
}
