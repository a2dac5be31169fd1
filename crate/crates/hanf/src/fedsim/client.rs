//! Client-local training steps.
//!
//! In the search stage each paired update takes one model step (to the
//! lookahead weights), one architecture step evaluated at the lookahead,
//! and a second model step; a round runs one epoch of such updates with
//! training mini-batches feeding model steps and validation mini-batches
//! feeding architecture steps. The evaluation stage does plain SGD epochs.
//! Validation loss is measured before and after the round's updates.

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::bandit::HyperparamConfig;
use crate::diffcore::{clip_grad_norm, sgd_step, NodeId, OptimState, Tape, Tensor};
use crate::error::{HanfError, Result};
use crate::supernet::{ArchParams, Dropout, NetworkPlan};

use super::partition::ClientShard;

/// Which parameter group the pass will differentiate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainTarget {
    Weights,
    Arch,
    None,
}

/// A recorded loss with handles to the bound parameter leaves.
pub struct BoundLoss {
    pub loss: NodeId,
    pub logits: NodeId,
    pub weight_ids: Vec<NodeId>,
    pub arch_ids: Option<(NodeId, NodeId)>,
}

/// Anything the federated loop can train: binds parameters to a tape and
/// produces a scalar loss over one batch.
pub trait ClientModel: Sync {
    #[allow(clippy::too_many_arguments)]
    fn bound_loss(
        &self,
        tape: &mut Tape,
        weights: &[Tensor],
        arch: Option<&ArchParams>,
        target: TrainTarget,
        images: &Tensor,
        labels: &[usize],
        dropout: Option<(f64, &mut ChaCha8Rng)>,
    ) -> Result<BoundLoss>;
}

impl ClientModel for NetworkPlan {
    fn bound_loss(
        &self,
        tape: &mut Tape,
        weights: &[Tensor],
        arch: Option<&ArchParams>,
        target: TrainTarget,
        images: &Tensor,
        labels: &[usize],
        dropout: Option<(f64, &mut ChaCha8Rng)>,
    ) -> Result<BoundLoss> {
        let binding = self.bind(
            tape,
            weights,
            arch,
            target == TrainTarget::Weights,
            target == TrainTarget::Arch,
        );
        let dropout = dropout.map(|(probability, rng)| Dropout { probability, rng });
        let (loss, logits) = self.loss(tape, &binding, images, labels, dropout)?;
        Ok(BoundLoss {
            loss,
            logits,
            weight_ids: binding.weights,
            arch_ids: binding.arch.map(|a| (a.normal, a.reduce)),
        })
    }
}

/// Per-round scheduling knobs shared by all clients.
#[derive(Debug, Clone, Copy)]
pub struct RoundContext {
    pub batch_size: usize,
    pub clip_norm: f64,
    /// Derived from (experiment seed, stage, round); identical across
    /// clients so identical shards yield identical updates.
    pub round_seed: u64,
    /// The client's validation loss at the incoming parameters, when the
    /// server already knows it (probe rounds of one exploration phase all
    /// start from the same frozen model). Skips one full validation sweep.
    pub cached_loss_before: Option<f64>,
}

/// What one client returns from one communication round.
#[derive(Debug, Clone)]
pub struct RoundReport {
    pub client_id: usize,
    pub loss_before: f64,
    pub loss_after: f64,
    pub accuracy: f64,
    pub weights: Vec<Tensor>,
    pub arch: Option<ArchParams>,
    /// False when a non-finite loss aborted the round.
    pub ok: bool,
}

fn gather_samples(images: &Tensor, labels: &[usize], idx: &[usize]) -> (Tensor, Vec<usize>) {
    let stride = images.numel() / images.dim(0);
    let mut data = Vec::with_capacity(idx.len() * stride);
    let mut out_labels = Vec::with_capacity(idx.len());
    for &i in idx {
        data.extend_from_slice(&images.data()[i * stride..(i + 1) * stride]);
        out_labels.push(labels[i]);
    }
    let mut shape = images.shape().to_vec();
    shape[0] = idx.len();
    (Tensor::from_vec(shape, data).expect("batch shape"), out_labels)
}

fn shuffled_batches(n: usize, batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx.chunks(batch_size.clamp(1, n)).map(<[usize]>::to_vec).collect()
}

fn finite(loss: f64, what: &str) -> Result<f64> {
    if loss.is_finite() {
        Ok(loss)
    } else {
        Err(HanfError::NonFiniteLoss(what.into()))
    }
}

/// Mean loss and accuracy over a split, evaluated in fixed batch order
/// without dropout.
pub fn evaluate_split<M: ClientModel>(
    model: &M,
    weights: &[Tensor],
    arch: Option<&ArchParams>,
    images: &Tensor,
    labels: &[usize],
    batch_size: usize,
) -> Result<(f64, f64)> {
    let n = labels.len();
    let mut total_loss = 0.0;
    let mut correct = 0usize;
    let all: Vec<usize> = (0..n).collect();
    for chunk in all.chunks(batch_size.clamp(1, n)) {
        let (bx, by) = gather_samples(images, labels, chunk);
        let mut tape = Tape::new();
        let bound = model.bound_loss(&mut tape, weights, arch, TrainTarget::None, &bx, &by, None)?;
        total_loss += tape.value(bound.loss).item() * chunk.len() as f64;
        let logits = tape.value(bound.logits);
        let classes = logits.dim(1);
        for (row, &label) in by.iter().enumerate() {
            let scores = &logits.data()[row * classes..(row + 1) * classes];
            let mut best = 0;
            for (i, &s) in scores.iter().enumerate() {
                if s > scores[best] {
                    best = i;
                }
            }
            if best == label {
                correct += 1;
            }
        }
    }
    Ok((total_loss / n as f64, correct as f64 / n as f64))
}

#[allow(clippy::too_many_arguments)]
fn weight_step<M: ClientModel>(
    model: &M,
    weights: &mut [Tensor],
    arch: Option<&ArchParams>,
    opt: &mut OptimState,
    clip: f64,
    images: &Tensor,
    labels: &[usize],
    dropout: Option<(f64, &mut ChaCha8Rng)>,
) -> Result<()> {
    if opt.learning_rate == 0.0 {
        return Ok(());
    }
    let mut tape = Tape::new();
    let bound = model.bound_loss(&mut tape, weights, arch, TrainTarget::Weights, images, labels, dropout)?;
    finite(tape.value(bound.loss).item(), "model step")?;
    let mut grad_map = tape.backward(bound.loss)?;
    let mut grads: Vec<Tensor> = bound
        .weight_ids
        .iter()
        .map(|&id| grad_map.take(id).unwrap_or_else(|| tape.value(id).zeros_like()))
        .collect();
    clip_grad_norm(&mut grads, clip);
    sgd_step(weights, &grads, opt)
}

fn arch_step<M: ClientModel>(
    model: &M,
    weights: &[Tensor],
    arch: &mut ArchParams,
    opt: &mut OptimState,
    clip: f64,
    images: &Tensor,
    labels: &[usize],
) -> Result<()> {
    if opt.learning_rate == 0.0 {
        return Ok(());
    }
    let mut tape = Tape::new();
    let bound = model.bound_loss(&mut tape, weights, Some(arch), TrainTarget::Arch, images, labels, None)?;
    finite(tape.value(bound.loss).item(), "arch step")?;
    let mut grad_map = tape.backward(bound.loss)?;
    let (nid, rid) = bound.arch_ids.expect("arch step needs arch");
    let mut grads = vec![
        grad_map.take(nid).unwrap_or_else(|| arch.normal.zeros_like()),
        grad_map.take(rid).unwrap_or_else(|| arch.reduce.zeros_like()),
    ];
    clip_grad_norm(&mut grads, clip);
    let mut tensors = [std::mem::take(&mut arch.normal), std::mem::take(&mut arch.reduce)];
    sgd_step(&mut tensors, &grads, opt)?;
    let [normal, reduce] = tensors;
    arch.normal = normal;
    arch.reduce = reduce;
    Ok(())
}

/// One search-stage communication round: an epoch of paired updates. Each
/// paired update consumes two training batches for model steps and one
/// validation batch for the architecture step taken at lookahead weights.
pub fn client_search_step<M: ClientModel>(
    model: &M,
    weights: Vec<Tensor>,
    arch: ArchParams,
    h: &HyperparamConfig,
    shard: &ClientShard,
    ctx: &RoundContext,
) -> RoundReport {
    let mut weights = weights;
    let mut arch = arch;
    let run = |weights: &mut Vec<Tensor>, arch: &mut ArchParams| -> Result<(f64, f64, f64)> {
        let mut rng = ChaCha8Rng::seed_from_u64(ctx.round_seed);
        let train_batches = shuffled_batches(shard.train_len(), ctx.batch_size, &mut rng);
        let val_batches = shuffled_batches(shard.val_len(), ctx.batch_size, &mut rng);

        let loss_before = match ctx.cached_loss_before {
            Some(v) => v,
            None => {
                evaluate_split(
                    model,
                    weights,
                    Some(arch),
                    &shard.val_images,
                    &shard.val_labels,
                    ctx.batch_size,
                )?
                .0
            }
        };
        finite(loss_before, "validation loss before round")?;

        let mut w_opt = OptimState::new(h.model_lr, h.momentum, h.model_weight_decay, weights);
        let mut a_opt = OptimState::plain(
            h.arch_lr_or_zero(),
            h.arch_weight_decay_or_zero(),
            &[arch.normal.clone(), arch.reduce.clone()],
        );

        let n_tb = train_batches.len();
        let pairs = n_tb.div_ceil(2);
        for p in 0..pairs {
            let (bx, by) = {
                let idx = &train_batches[(2 * p) % n_tb];
                gather_samples(&shard.train_images, &shard.train_labels, idx)
            };
            weight_step(model, weights, Some(arch), &mut w_opt, ctx.clip_norm, &bx, &by, None)?;

            let (vx, vy) = {
                let idx = &val_batches[p % val_batches.len()];
                gather_samples(&shard.val_images, &shard.val_labels, idx)
            };
            arch_step(model, weights, arch, &mut a_opt, ctx.clip_norm, &vx, &vy)?;

            let (bx, by) = {
                let idx = &train_batches[(2 * p + 1) % n_tb];
                gather_samples(&shard.train_images, &shard.train_labels, idx)
            };
            weight_step(model, weights, Some(arch), &mut w_opt, ctx.clip_norm, &bx, &by, None)?;
        }

        let (loss_after, accuracy) = evaluate_split(
            model,
            weights,
            Some(arch),
            &shard.val_images,
            &shard.val_labels,
            ctx.batch_size,
        )?;
        finite(loss_after, "validation loss after round")?;
        Ok((loss_before, loss_after, accuracy))
    };

    match run(&mut weights, &mut arch) {
        Ok((loss_before, loss_after, accuracy)) => RoundReport {
            client_id: shard.id,
            loss_before,
            loss_after,
            accuracy,
            weights,
            arch: Some(arch),
            ok: true,
        },
        Err(_) => RoundReport {
            client_id: shard.id,
            loss_before: f64::NAN,
            loss_after: f64::NAN,
            accuracy: f64::NAN,
            weights,
            arch: Some(arch),
            ok: false,
        },
    }
}

/// One evaluation-stage communication round: a plain SGD epoch with path
/// dropout active during training passes only.
pub fn client_eval_step<M: ClientModel>(
    model: &M,
    weights: Vec<Tensor>,
    h: &HyperparamConfig,
    shard: &ClientShard,
    ctx: &RoundContext,
) -> RoundReport {
    let mut weights = weights;
    let dropout_p = h.path_dropout_or_zero();
    let run = |weights: &mut Vec<Tensor>| -> Result<(f64, f64, f64)> {
        let mut rng = ChaCha8Rng::seed_from_u64(ctx.round_seed);
        let train_batches = shuffled_batches(shard.train_len(), ctx.batch_size, &mut rng);

        let loss_before = match ctx.cached_loss_before {
            Some(v) => v,
            None => {
                evaluate_split(
                    model,
                    weights,
                    None,
                    &shard.val_images,
                    &shard.val_labels,
                    ctx.batch_size,
                )?
                .0
            }
        };
        finite(loss_before, "validation loss before round")?;

        let mut w_opt = OptimState::new(h.model_lr, h.momentum, h.model_weight_decay, weights);
        for idx in &train_batches {
            let (bx, by) = gather_samples(&shard.train_images, &shard.train_labels, idx);
            let dropout = (dropout_p > 0.0).then_some((dropout_p, &mut rng));
            weight_step(model, weights, None, &mut w_opt, ctx.clip_norm, &bx, &by, dropout)?;
        }

        let (loss_after, accuracy) = evaluate_split(
            model,
            weights,
            None,
            &shard.val_images,
            &shard.val_labels,
            ctx.batch_size,
        )?;
        finite(loss_after, "validation loss after round")?;
        Ok((loss_before, loss_after, accuracy))
    };

    match run(&mut weights) {
        Ok((loss_before, loss_after, accuracy)) => RoundReport {
            client_id: shard.id,
            loss_before,
            loss_after,
            accuracy,
            weights,
            arch: None,
            ok: true,
        },
        Err(_) => RoundReport {
            client_id: shard.id,
            loss_before: f64::NAN,
            loss_after: f64::NAN,
            accuracy: f64::NAN,
            weights,
            arch: None,
            ok: false,
        },
    }
}
