//! Identity-label mixup over node embeddings.
//!
//! Each node's identity label is its row index in the batch. Mixing row `i`
//! with its partner `j` yields the soft label `w·e_i + (1 - w)·e_j`, where
//! `w` is the batch-wide ratio λ unless a strategy records per-node weights.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{Matrix, Rng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MixStrategy {
    /// partner from a random permutation, convex combination
    #[default]
    Random,
    /// partner from a random permutation, coordinate-wise binary mask
    Cut,
    /// nearest other node in embedding space, convex combination
    Local,
}

/// How CutMixup weights the soft label.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CutLabel {
    /// the sampled λ
    #[default]
    Nominal,
    /// the fraction of coordinates each node actually kept
    Realized,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MixupConfig {
    pub strategy: MixStrategy,
    pub beta_alpha: f64,
    pub beta_beta: f64,
    /// replace λ by max(λ, 1 - λ)
    pub fold_lambda: bool,
    /// use this λ for every batch instead of sampling; 1.0 disables mixup
    pub fixed_lambda: Option<f64>,
    pub cut_label: CutLabel,
}

impl Default for MixupConfig {
    fn default() -> Self {
        MixupConfig {
            strategy: MixStrategy::Random,
            beta_alpha: 1.0,
            beta_beta: 1.0,
            fold_lambda: true,
            fixed_lambda: None,
            cut_label: CutLabel::Nominal,
        }
    }
}

impl MixupConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta_alpha > 0.0 && self.beta_beta > 0.0) {
            return Err(Error::Config(format!(
                "Beta shape parameters must be positive, got ({}, {})",
                self.beta_alpha, self.beta_beta
            )));
        }
        if let Some(l) = self.fixed_lambda {
            check_lambda(l)?;
        }
        Ok(())
    }
}

fn check_lambda(lam: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&lam) {
        return Err(Error::Config(format!("mixing ratio {lam} outside [0, 1]")));
    }
    Ok(())
}

/// Compact form of the mixed identity labels `P′`.
#[derive(Clone, Debug, PartialEq)]
pub struct MixAssignment {
    pub strategy: MixStrategy,
    pub partner: Vec<usize>,
    pub lam: f64,
    /// per-node binary masks, row-major `n x d`, `true` keeps the node's own
    /// coordinate (cut strategy only)
    pub cut_mask: Option<Vec<bool>>,
    /// per-node weight of the node's own identity, overriding `lam`
    pub own_weights: Option<Vec<f64>>,
}

impl MixAssignment {
    pub fn len(&self) -> usize {
        self.partner.len()
    }

    pub fn is_empty(&self) -> bool {
        self.partner.is_empty()
    }

    /// Weight of node `i`'s own identity in its soft label.
    pub fn own_weight(&self, i: usize) -> f64 {
        self.own_weights.as_ref().map_or(self.lam, |w| w[i])
    }

    /// Trivial assignment: every node mixed with itself at weight 1.
    pub fn identity(n: usize) -> Self {
        MixAssignment {
            strategy: MixStrategy::Random,
            partner: (0..n).collect(),
            lam: 1.0,
            cut_mask: None,
            own_weights: None,
        }
    }
}

/// One λ per batch from Beta(α, β), folded into [0.5, 1] if configured.
pub fn sample_lambda(cfg: &MixupConfig, rng: &mut Rng) -> Result<f64> {
    cfg.validate()?;
    if let Some(l) = cfg.fixed_lambda {
        return Ok(l);
    }
    let lam = rng.beta(cfg.beta_alpha, cfg.beta_beta)?;
    Ok(if cfg.fold_lambda { lam.max(1.0 - lam) } else { lam })
}

/// Random permutation without fixed points (the identity for a single node).
fn random_partners(n: usize, rng: &mut Rng) -> Vec<usize> {
    if n < 2 {
        return (0..n).collect();
    }
    loop {
        let p = rng.permutation(n);
        if p.iter().enumerate().all(|(i, &j)| i != j) {
            return p;
        }
    }
}

fn check_nonempty(h: &Matrix) -> Result<()> {
    if h.rows() == 0 {
        return Err(Error::DegenerateBatch("mixup on an empty batch".into()));
    }
    Ok(())
}

#[inline]
fn convex_row(out: &mut [f64], own: &[f64], other: &[f64], w: f64) {
    if w == 1.0 {
        out.copy_from_slice(own);
        return;
    }
    for ((o, &a), &b) in out.iter_mut().zip(own).zip(other) {
        *o = w * a + (1.0 - w) * b;
    }
}

/// `h′ᵢ = λ·hᵢ + (1-λ)·h_{partner[i]}` with a random partner permutation.
pub fn random_mixup(h: &Matrix, lam: f64, rng: &mut Rng) -> Result<(Matrix, MixAssignment)> {
    check_nonempty(h)?;
    check_lambda(lam)?;
    let a = MixAssignment {
        strategy: MixStrategy::Random,
        partner: random_partners(h.rows(), rng),
        lam,
        cut_mask: None,
        own_weights: None,
    };
    Ok((apply_assignment(h, &a)?, a))
}

/// `h′ᵢ = m⊙hᵢ + (1-m)⊙h_{partner[i]}` with `m ~ Bernoulli(λ)^d` per node.
pub fn cut_mixup(h: &Matrix, lam: f64, label: CutLabel, rng: &mut Rng) -> Result<(Matrix, MixAssignment)> {
    check_nonempty(h)?;
    check_lambda(lam)?;
    let partner = random_partners(h.rows(), &mut rng.split("partner"));
    let mut mask_rng = rng.split("mask");
    let mask: Vec<bool> = (0..h.rows() * h.cols()).map(|_| mask_rng.bernoulli(lam)).collect();
    let own_weights = match label {
        CutLabel::Nominal => None,
        CutLabel::Realized => Some(
            mask.chunks(h.cols().max(1))
                .map(|row| {
                    if row.is_empty() {
                        lam
                    } else {
                        row.iter().filter(|&&k| k).count() as f64 / row.len() as f64
                    }
                })
                .collect(),
        ),
    };
    let a = MixAssignment {
        strategy: MixStrategy::Cut,
        partner,
        lam,
        cut_mask: Some(mask),
        own_weights,
    };
    Ok((apply_assignment(h, &a)?, a))
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest other row by Euclidean distance, lowest index on ties.
pub fn nearest_partners(h: &Matrix) -> Vec<usize> {
    let n = h.rows();
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut best = usize::MAX;
            let mut best_d = f64::INFINITY;
            for j in 0..n {
                if j == i {
                    continue;
                }
                let d = sq_dist(h.row(i), h.row(j));
                if d < best_d || best == usize::MAX {
                    best = j;
                    best_d = d;
                }
            }
            best
        })
        .collect()
}

/// `h′ᵢ = λ·hᵢ + (1-λ)·h_{j(i)}` where `j(i)` is `i`'s nearest other node.
pub fn local_mixup(h: &Matrix, lam: f64) -> Result<(Matrix, MixAssignment)> {
    if h.rows() < 2 {
        return Err(Error::DegenerateBatch(format!(
            "local mixup needs at least 2 nodes, got {}",
            h.rows()
        )));
    }
    check_lambda(lam)?;
    let a = MixAssignment {
        strategy: MixStrategy::Local,
        partner: nearest_partners(h),
        lam,
        cut_mask: None,
        own_weights: None,
    };
    Ok((apply_assignment(h, &a)?, a))
}

/// Samples λ and mixes `h` with the configured strategy.
pub fn mix(h: &Matrix, cfg: &MixupConfig, rng: &Rng) -> Result<(Matrix, MixAssignment)> {
    let lam = sample_lambda(cfg, &mut rng.split("lambda"))?;
    let mut partner_rng = rng.split("partner");
    match cfg.strategy {
        MixStrategy::Random => random_mixup(h, lam, &mut partner_rng),
        MixStrategy::Cut => cut_mixup(h, lam, cfg.cut_label, &mut partner_rng),
        MixStrategy::Local => {
            if h.rows() == 1 {
                // a single node has no neighbour to mix with
                Ok((h.clone(), MixAssignment::identity(1)))
            } else {
                local_mixup(h, lam)
            }
        }
    }
}

/// Replays a recorded assignment on (possibly different) embeddings.
pub fn apply_assignment(h: &Matrix, a: &MixAssignment) -> Result<Matrix> {
    if a.len() != h.rows() {
        return Err(Error::dim(
            "apply_assignment",
            h.shape_str(),
            format!("assignment for {} nodes", a.len()),
        ));
    }
    let d = h.cols();
    let mut out = Matrix::zeros(h.rows(), d);
    for (i, &p) in a.partner.iter().enumerate() {
        if p >= h.rows() {
            return Err(Error::dim("apply_assignment", h.shape_str(), format!("partner {p}")));
        }
        match &a.cut_mask {
            Some(mask) => {
                let m = &mask[i * d..(i + 1) * d];
                let (own, other) = (h.row(i), h.row(p));
                for (c, o) in out.row_mut(i).iter_mut().enumerate() {
                    *o = if m[c] { own[c] } else { other[c] };
                }
            }
            None => convex_row(out.row_mut(i), h.row(i), h.row(p), a.lam),
        }
    }
    Ok(out)
}

/// Gradient of [`apply_assignment`] with respect to its input.
pub fn mix_backward(grad_mixed: &Matrix, a: &MixAssignment) -> Result<Matrix> {
    if a.len() != grad_mixed.rows() {
        return Err(Error::dim(
            "mix_backward",
            grad_mixed.shape_str(),
            format!("assignment for {} nodes", a.len()),
        ));
    }
    let d = grad_mixed.cols();
    let mut out = Matrix::zeros(grad_mixed.rows(), d);
    for (i, &p) in a.partner.iter().enumerate() {
        let g: Vec<f64> = grad_mixed.row(i).to_vec();
        match &a.cut_mask {
            Some(mask) => {
                let m = &mask[i * d..(i + 1) * d];
                for c in 0..d {
                    let target = if m[c] { i } else { p };
                    out.row_mut(target)[c] += g[c];
                }
            }
            None => {
                for (o, &x) in out.row_mut(i).iter_mut().zip(&g) {
                    *o += a.lam * x;
                }
                for (o, &x) in out.row_mut(p).iter_mut().zip(&g) {
                    *o += (1.0 - a.lam) * x;
                }
            }
        }
    }
    Ok(out)
}

/// Nonzero entries of each row of `P′` as `(column, weight)` pairs.
pub fn implied_label_rows(a: &MixAssignment, n: usize) -> Result<Vec<Vec<(usize, f64)>>> {
    if a.len() != n {
        return Err(Error::dim(
            "implied_label_rows",
            format!("{n} rows"),
            format!("assignment for {} nodes", a.len()),
        ));
    }
    Ok(a.partner
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            let w = a.own_weight(i);
            if p == i {
                vec![(i, 1.0)]
            } else {
                [(i, w), (p, 1.0 - w)].into_iter().filter(|&(_, v)| v != 0.0).collect()
            }
        })
        .collect())
}
