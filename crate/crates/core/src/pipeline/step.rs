//! One contrastive update: views, shared encoder, mixup, head, loss, backward.

use crate::augment::make_views;
use crate::encoder::{encode, encode_backward, project, project_backward};
use crate::error::Result;
use crate::graph::{normalized_adjacency, Graph};
use crate::mixup::{mix, mix_backward, MixAssignment};
use crate::numcore::{AdamState, Parameterized, Rng};
use crate::objective::{mixed_npair_loss, similarity_backward, similarity_matrix};

use super::{ModelParams, TrainConfig};

/// What a step computed, for tracing and for the structural checks in tests.
#[derive(Clone, Debug)]
pub struct StepOutcome {
    pub loss: f64,
    pub lam: f64,
    pub assignment: MixAssignment,
    /// encoder id recorded by each view's forward cache
    pub view_encoder_ids: [u64; 2],
}

/// Forward and backward pass; leaves fresh gradients in `params` and does
/// not touch the optimizer.
pub fn loss_and_grads(g: &Graph, params: &mut ModelParams, cfg: &TrainConfig, rng: &Rng) -> Result<StepOutcome> {
    let views = make_views(g, &cfg.augment_a, &cfg.augment_b, cfg.view_mode, &rng.split("views"))?;
    let s_a = normalized_adjacency(&views.view_a);
    let s_b = normalized_adjacency(&views.view_b);

    let (h_a, cache_a) = encode(&s_a, views.view_a.features(), &params.encoder)?;
    let (h_b, cache_b) = encode(&s_b, views.view_b.features(), &params.encoder)?;
    let (h_mix, assignment) = mix(&h_a, &cfg.mixup, &rng.split("mixup"))?;

    let (z_mix, head_a) = project(&h_mix, &params.head)?;
    let (z_b, head_b) = project(&h_b, &params.head)?;
    let sim = similarity_matrix(&z_mix, &z_b, &cfg.loss)?;
    let (loss, grad_sim) = mixed_npair_loss(&sim, &assignment, &cfg.loss)?;
    let (grad_z_mix, grad_z_b) = similarity_backward(&grad_sim, &z_mix, &z_b, &cfg.loss)?;

    params.zero_grad();
    let grad_h_mix = project_backward(&grad_z_mix, &head_a, &mut params.head)?;
    let grad_h_b = project_backward(&grad_z_b, &head_b, &mut params.head)?;
    let grad_h_a = mix_backward(&grad_h_mix, &assignment)?;
    encode_backward(&grad_h_a, &cache_a, &s_a, &mut params.encoder)?;
    encode_backward(&grad_h_b, &cache_b, &s_b, &mut params.encoder)?;

    Ok(StepOutcome {
        loss,
        lam: assignment.lam,
        assignment,
        view_encoder_ids: [cache_a.encoder_id(), cache_b.encoder_id()],
    })
}

/// Loss only, with the same randomness as [`loss_and_grads`].
pub fn step_loss(g: &Graph, params: &ModelParams, cfg: &TrainConfig, rng: &Rng) -> Result<f64> {
    let views = make_views(g, &cfg.augment_a, &cfg.augment_b, cfg.view_mode, &rng.split("views"))?;
    let (h_a, _) = encode(
        &normalized_adjacency(&views.view_a),
        views.view_a.features(),
        &params.encoder,
    )?;
    let (h_b, _) = encode(
        &normalized_adjacency(&views.view_b),
        views.view_b.features(),
        &params.encoder,
    )?;
    let (h_mix, assignment) = mix(&h_a, &cfg.mixup, &rng.split("mixup"))?;
    let (z_mix, _) = project(&h_mix, &params.head)?;
    let (z_b, _) = project(&h_b, &params.head)?;
    let sim = similarity_matrix(&z_mix, &z_b, &cfg.loss)?;
    Ok(mixed_npair_loss(&sim, &assignment, &cfg.loss)?.0)
}

/// [`loss_and_grads`] followed by an Adam update.
pub fn train_step(
    g: &Graph,
    params: &mut ModelParams,
    adam: &mut AdamState,
    cfg: &TrainConfig,
    rng: &Rng,
) -> Result<StepOutcome> {
    let out = loss_and_grads(g, params, cfg, rng)?;
    adam.step(params)?;
    Ok(out)
}
