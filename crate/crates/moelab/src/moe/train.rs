//! Epoch-shuffled minibatch Adam training of the composite objective.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::moe::forward::{accuracy, loss_and_grads};
use crate::moe::model::MoeModel;
use crate::num::optim::{OptimSettings, OptimState};
use crate::num::rng::Rng;
use crate::num::tensor::Tensor2;

/// Training hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainParams {
    pub epochs: usize,
    pub batch_size: usize,
    pub optim: OptimSettings,
}

impl Default for TrainParams {
    fn default() -> Self {
        TrainParams {
            epochs: 40,
            batch_size: 32,
            optim: OptimSettings::default(),
        }
    }
}

/// One completed epoch: mean loss components and optional eval accuracy.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub task_loss: f64,
    pub load_balance_loss: f64,
    pub entanglement_loss: f64,
    pub eval_accuracy: Option<f64>,
}

pub type TrainHistory = Vec<EpochRecord>;

/// Train in place. Deterministic for a fixed seed: the only randomness is
/// the epoch shuffle drawn from `rng`.
pub fn train(
    model: &mut MoeModel,
    inputs: &Tensor2,
    labels: &[usize],
    eval: Option<(&Tensor2, &[usize])>,
    params: &TrainParams,
    rng: &mut Rng,
) -> Result<TrainHistory> {
    if inputs.rows() == 0 {
        return Err(Error::Argument("training on an empty dataset".into()));
    }
    if inputs.rows() != labels.len() {
        return Err(Error::Argument(format!(
            "{} inputs with {} labels",
            inputs.rows(),
            labels.len()
        )));
    }
    if params.batch_size == 0 {
        return Err(Error::Argument("batch_size must be >= 1".into()));
    }
    let mut history = Vec::with_capacity(params.epochs);
    if params.epochs == 0 {
        return Ok(history);
    }

    let snapshot = model.param_entries();
    let mut optim = OptimState::for_params(
        &snapshot.iter().map(|(_, t)| *t).collect::<Vec<_>>(),
        params.optim,
    )?;
    drop(snapshot);

    let n = inputs.rows();
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 0..params.epochs {
        rng.shuffle(&mut order);
        let mut task_sum = 0.0;
        let mut lb_sum = 0.0;
        let mut ent_sum = 0.0;
        let mut seen = 0usize;
        for chunk in order.chunks(params.batch_size) {
            let mut bx = Tensor2::zeros(chunk.len(), inputs.cols());
            let mut by = Vec::with_capacity(chunk.len());
            for (r, &id) in chunk.iter().enumerate() {
                bx.row_mut(r).copy_from_slice(inputs.row(id));
                by.push(labels[id]);
            }
            let (parts, grads) = loss_and_grads(model, &bx, &by)?;
            let w = chunk.len() as f64;
            task_sum += parts.task * w;
            lb_sum += parts.load_balance * w;
            ent_sum += parts.entanglement * w;
            seen += chunk.len();
            let mut param_refs = model.params_mut();
            optim.step(&mut param_refs, &grads)?;
        }
        let eval_accuracy = match eval {
            Some((ex, ey)) => Some(accuracy(model, ex, ey)?),
            None => None,
        };
        history.push(EpochRecord {
            epoch,
            task_loss: task_sum / seen as f64,
            load_balance_loss: lb_sum / seen as f64,
            entanglement_loss: ent_sum / seen as f64,
            eval_accuracy,
        });
    }
    Ok(history)
}
