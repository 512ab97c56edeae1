//! Similarities, the mixed-identity N-pair loss and representation metrics.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mixup::{implied_label_rows, MixAssignment};
use crate::numcore::{stable_log_softmax_rows, Matrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Similarity {
    #[default]
    Dot,
    Cosine,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    /// sum over anchors
    #[default]
    Sum,
    /// mean over anchors
    Mean,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub tau: f64,
    pub similarity: Similarity,
    pub reduction: Reduction,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            tau: 0.2,
            similarity: Similarity::Dot,
            reduction: Reduction::Sum,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::Config(format!("temperature must be positive, got {}", self.tau)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricConfig {
    pub align_alpha: f64,
    pub uniform_t: f64,
    pub normalize_first: bool,
}

impl Default for MetricConfig {
    fn default() -> Self {
        MetricConfig {
            align_alpha: 2.0,
            uniform_t: 2.0,
            normalize_first: true,
        }
    }
}

impl MetricConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.align_alpha > 0.0 && self.uniform_t > 0.0) {
            return Err(Error::Config(format!(
                "alignment exponent and uniformity scale must be positive, got {} and {}",
                self.align_alpha, self.uniform_t
            )));
        }
        Ok(())
    }
}

/// Rows scaled to unit L2 norm, with the norms.
pub fn l2_normalize_rows(z: &Matrix) -> Result<(Matrix, Vec<f64>)> {
    let mut out = z.clone();
    let mut norms = Vec::with_capacity(z.rows());
    for r in 0..z.rows() {
        let norm = z.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::Numeric(format!("row {r} has norm {norm}, cannot normalize")));
        }
        out.row_mut(r).iter_mut().for_each(|v| *v /= norm);
        norms.push(norm);
    }
    Ok((out, norms))
}

fn check_pair(op: &'static str, a: &Matrix, b: &Matrix) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::dim(op, a.shape_str(), b.shape_str()));
    }
    Ok(())
}

/// `S[i][j] = sim(z′ᵢ, z̃ⱼ)`; the temperature is applied by the loss.
pub fn similarity_matrix(z_mixed: &Matrix, z_other: &Matrix, cfg: &LossConfig) -> Result<Matrix> {
    check_pair("similarity_matrix", z_mixed, z_other)?;
    match cfg.similarity {
        Similarity::Dot => z_mixed.matmul_nt(z_other),
        Similarity::Cosine => {
            let (a, _) = l2_normalize_rows(z_mixed)?;
            let (b, _) = l2_normalize_rows(z_other)?;
            a.matmul_nt(&b)
        }
    }
}

/// Backpropagates `∂L/∂S` to both embedding matrices.
pub fn similarity_backward(
    grad_sim: &Matrix,
    z_mixed: &Matrix,
    z_other: &Matrix,
    cfg: &LossConfig,
) -> Result<(Matrix, Matrix)> {
    match cfg.similarity {
        Similarity::Dot => Ok((grad_sim.matmul(z_other)?, grad_sim.matmul_tn(z_mixed)?)),
        Similarity::Cosine => {
            let (a, na) = l2_normalize_rows(z_mixed)?;
            let (b, nb) = l2_normalize_rows(z_other)?;
            let ga = grad_sim.matmul(&b)?;
            let gb = grad_sim.matmul_tn(&a)?;
            Ok((normalize_backward(&a, &na, &ga), normalize_backward(&b, &nb, &gb)))
        }
    }
}

/// d(z/‖z‖): `(g - n·(n·g)) / ‖z‖` per row.
fn normalize_backward(unit: &Matrix, norms: &[f64], grad_unit: &Matrix) -> Matrix {
    let mut out = grad_unit.clone();
    for r in 0..out.rows() {
        let n = unit.row(r);
        let dot: f64 = n.iter().zip(grad_unit.row(r)).map(|(a, b)| a * b).sum();
        for (o, &u) in out.row_mut(r).iter_mut().zip(n) {
            *o = (*o - u * dot) / norms[r];
        }
    }
    out
}

fn check_assignment(op: &'static str, sim: &Matrix, a: &MixAssignment) -> Result<()> {
    if sim.rows() != sim.cols() || sim.rows() != a.len() {
        return Err(Error::dim(
            op,
            format!("similarity {}", sim.shape_str()),
            format!("assignment for {} nodes", a.len()),
        ));
    }
    Ok(())
}

fn reduce(total: f64, n: usize, r: Reduction) -> f64 {
    match r {
        Reduction::Sum => total,
        Reduction::Mean => total / n as f64,
    }
}

/// `L = -Σᵢ Σⱼ P′ᵢⱼ · log softmax(Sᵢ/τ)ⱼ` together with `∂L/∂S`.
pub fn mixed_npair_loss(sim: &Matrix, a: &MixAssignment, cfg: &LossConfig) -> Result<(f64, Matrix)> {
    cfg.validate()?;
    check_assignment("mixed_npair_loss", sim, a)?;
    let n = sim.rows();
    let mut logits = sim.clone();
    logits.scale(1.0 / cfg.tau);
    let log_probs = stable_log_softmax_rows(&logits)?;
    let labels = implied_label_rows(a, n)?;

    let mut total = 0.0;
    let mut grad = log_probs.map(f64::exp);
    for (i, row) in labels.iter().enumerate() {
        for &(j, w) in row {
            total -= w * log_probs.get(i, j);
            let g = grad.get(i, j);
            grad.set(i, j, g - w);
        }
    }
    let scale = reduce(1.0, n, cfg.reduction) / cfg.tau;
    grad.scale(scale);
    Ok((reduce(total, n, cfg.reduction), grad))
}

/// Softmax cross-entropy of `logits` against hard class indices.
pub fn cross_entropy(logits: &Matrix, targets: &[usize], reduction: Reduction) -> Result<f64> {
    if targets.len() != logits.rows() {
        return Err(Error::dim(
            "cross_entropy",
            logits.shape_str(),
            format!("{} targets", targets.len()),
        ));
    }
    let log_probs = stable_log_softmax_rows(logits)?;
    let mut total = 0.0;
    for (i, &t) in targets.iter().enumerate() {
        if t >= logits.cols() {
            return Err(Error::dim("cross_entropy", logits.shape_str(), format!("target {t}")));
        }
        total -= log_probs.get(i, t);
    }
    Ok(reduce(total, targets.len(), reduction))
}

/// The same loss as two hard-target cross-entropies weighted by λ and 1-λ.
/// Only defined for assignments with a single batch-wide λ.
pub fn ce_decomposition_loss(sim: &Matrix, a: &MixAssignment, cfg: &LossConfig) -> Result<f64> {
    cfg.validate()?;
    check_assignment("ce_decomposition_loss", sim, a)?;
    if a.own_weights.is_some() {
        return Err(Error::Config(
            "cross-entropy decomposition needs a single batch-wide mixing ratio".into(),
        ));
    }
    let mut logits = sim.clone();
    logits.scale(1.0 / cfg.tau);
    let identity: Vec<usize> = (0..a.len()).collect();
    let lam = a.lam;
    Ok(lam * cross_entropy(&logits, &identity, cfg.reduction)?
        + (1.0 - lam) * cross_entropy(&logits, &a.partner, cfg.reduction)?)
}

/// Mean over positive pairs of `‖zₐᵢ - z_bᵢ‖^α`.
pub fn alignment(z_a: &Matrix, z_b: &Matrix, cfg: &MetricConfig) -> Result<f64> {
    cfg.validate()?;
    check_pair("alignment", z_a, z_b)?;
    if z_a.rows() == 0 {
        return Err(Error::DegenerateBatch("alignment of an empty batch".into()));
    }
    let (a, b) = if cfg.normalize_first {
        (l2_normalize_rows(z_a)?.0, l2_normalize_rows(z_b)?.0)
    } else {
        (z_a.clone(), z_b.clone())
    };
    let total: f64 = (0..a.rows())
        .map(|i| {
            let sq: f64 = a.row(i).iter().zip(b.row(i)).map(|(x, y)| (x - y) * (x - y)).sum();
            sq.sqrt().powf(cfg.align_alpha)
        })
        .sum();
    Ok(total / a.rows() as f64)
}

/// `log` of the mean over distinct pairs `i < j` of `exp(-t‖zᵢ - zⱼ‖²)`.
pub fn uniformity(z: &Matrix, cfg: &MetricConfig) -> Result<f64> {
    cfg.validate()?;
    let n = z.rows();
    if n < 2 {
        return Err(Error::DegenerateBatch(format!(
            "uniformity needs at least 2 points, got {n}"
        )));
    }
    let z = if cfg.normalize_first {
        l2_normalize_rows(z)?.0
    } else {
        z.clone()
    };
    let t = cfg.uniform_t;
    // exponents are ≤ 0 and at least one pair may be 0, so shift by the max
    let exps: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            ((i + 1)..n)
                .map(|j| {
                    let sq: f64 = z.row(i).iter().zip(z.row(j)).map(|(x, y)| (x - y) * (x - y)).sum();
                    -t * sq
                })
                .collect()
        })
        .collect();
    let max = exps.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = exps.iter().flatten().map(|e| (e - max).exp()).sum();
    let pairs = (n * (n - 1) / 2) as f64;
    Ok(max + sum.ln() - pairs.ln())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mixup::{random_mixup, MixStrategy};
    use crate::numcore::Rng;
    use proptest::prelude::*;

    fn m(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(rows).unwrap()
    }

    fn random_matrix(r: usize, c: usize, rng: &mut Rng) -> Matrix {
        Matrix::from_vec(r, c, (0..r * c).map(|_| rng.uniform_range(-1.0, 1.0)).collect()).unwrap()
    }

    fn swap_assignment(lam: f64) -> MixAssignment {
        MixAssignment {
            strategy: MixStrategy::Random,
            partner: vec![1, 0],
            lam,
            cut_mask: None,
            own_weights: None,
        }
    }

    #[test]
    fn similarity_examples() {
        let cfg = LossConfig::default();
        let eye = Matrix::identity(3);
        assert_eq!(similarity_matrix(&eye, &eye, &cfg).unwrap(), eye);
        assert_eq!(
            similarity_matrix(&m(&[&[1.0, 2.0]]), &m(&[&[3.0, 4.0]]), &cfg)
                .unwrap()
                .to_rows(),
            vec![vec![11.0]]
        );
        let cos = LossConfig {
            similarity: Similarity::Cosine,
            ..cfg
        };
        let z = m(&[&[3.0, 4.0], &[-1.0, 0.5]]);
        let s = similarity_matrix(&z, &z, &cos).unwrap();
        assert!((s.get(0, 0) - 1.0).abs() < 1e-15 && (s.get(1, 1) - 1.0).abs() < 1e-15);

        let err = similarity_matrix(&m(&[&[0.0, 0.0]]), &m(&[&[1.0, 0.0]]), &cos).unwrap_err();
        assert!(matches!(err, Error::Numeric(ref s) if s.contains("row 0")));
        assert!(similarity_matrix(&Matrix::zeros(2, 3), &Matrix::zeros(2, 2), &cfg).is_err());
    }

    #[test]
    fn loss_single_node_is_zero() {
        let a = MixAssignment::identity(1);
        let (l, g) = mixed_npair_loss(&m(&[&[3.7]]), &MixAssignment { lam: 0.6, ..a }, &LossConfig::default()).unwrap();
        assert_eq!(l, 0.0);
        assert_eq!(g, Matrix::zeros(1, 1));
    }

    #[test]
    fn loss_uniform_similarity() {
        let mut rng = Rng::new(1);
        for n in [2usize, 8, 64] {
            let h = random_matrix(n, 2, &mut rng);
            let (_, a) = random_mixup(&h, 0.8, &mut rng).unwrap();
            let (l, _) = mixed_npair_loss(&Matrix::filled(n, n, 0.37), &a, &LossConfig::default()).unwrap();
            assert!((l - n as f64 * (n as f64).ln()).abs() < 1e-9);
        }
    }

    #[test]
    fn loss_hand_example() {
        let cfg = LossConfig {
            tau: 1.0,
            ..Default::default()
        };
        let sim = m(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let (l, _) = mixed_npair_loss(&sim, &swap_assignment(0.6), &cfg).unwrap();
        let s1 = 1f64.exp() / (1f64.exp() + 1.0);
        let s2 = 1.0 - s1;
        let expect = 2.0 * (-0.6 * s1.ln() - 0.4 * s2.ln());
        assert!((l - expect).abs() < 1e-12);
        assert!((l - 1.4266).abs() < 1e-4);
    }

    #[test]
    fn loss_shape_errors() {
        let cfg = LossConfig::default();
        assert!(mixed_npair_loss(&Matrix::zeros(2, 3), &swap_assignment(0.6), &cfg).is_err());
        assert!(mixed_npair_loss(&Matrix::zeros(3, 3), &swap_assignment(0.6), &cfg).is_err());
        let bad = LossConfig { tau: 0.0, ..cfg };
        assert!(mixed_npair_loss(&Matrix::zeros(2, 2), &swap_assignment(0.6), &bad).is_err());
    }

    #[test]
    fn lambda_one_is_plain_npair() {
        let mut rng = Rng::new(2);
        let sim = random_matrix(10, 10, &mut rng);
        let h = random_matrix(10, 2, &mut rng);
        let (_, a) = random_mixup(&h, 1.0, &mut rng).unwrap();
        let cfg = LossConfig::default();
        let (l, _) = mixed_npair_loss(&sim, &a, &cfg).unwrap();
        let mut logits = sim.clone();
        logits.scale(1.0 / cfg.tau);
        let plain = cross_entropy(&logits, &(0..10).collect::<Vec<_>>(), Reduction::Sum).unwrap();
        assert_eq!(l, plain);
    }

    #[test]
    fn mean_reduction_divides_by_n() {
        let mut rng = Rng::new(3);
        let sim = random_matrix(6, 6, &mut rng);
        let (_, a) = random_mixup(&random_matrix(6, 2, &mut rng), 0.7, &mut rng).unwrap();
        let (sum, gs) = mixed_npair_loss(&sim, &a, &LossConfig::default()).unwrap();
        let (mean, gm) = mixed_npair_loss(
            &sim,
            &a,
            &LossConfig {
                reduction: Reduction::Mean,
                ..Default::default()
            },
        )
        .unwrap();
        assert!((sum / 6.0 - mean).abs() < 1e-12);
        let mut gs6 = gs.clone();
        gs6.scale(1.0 / 6.0);
        assert!(gs6.max_abs_diff(&gm).unwrap() < 1e-15);
    }

    #[test]
    fn loss_grad_matches_finite_differences() {
        let mut rng = Rng::new(4);
        for sim_kind in [Similarity::Dot, Similarity::Cosine] {
            let cfg = LossConfig {
                tau: 0.4,
                similarity: sim_kind,
                reduction: Reduction::Sum,
            };
            let zm = random_matrix(7, 3, &mut rng);
            let zo = random_matrix(7, 3, &mut rng);
            let (_, a) = random_mixup(&random_matrix(7, 2, &mut rng), 0.65, &mut rng).unwrap();
            let f = |zm: &Matrix, zo: &Matrix| {
                mixed_npair_loss(&similarity_matrix(zm, zo, &cfg).unwrap(), &a, &cfg)
                    .unwrap()
                    .0
            };
            let (_, gsim) = mixed_npair_loss(&similarity_matrix(&zm, &zo, &cfg).unwrap(), &a, &cfg).unwrap();
            let (gm, go) = similarity_backward(&gsim, &zm, &zo, &cfg).unwrap();
            let eps = 1e-6;
            for (which, grad) in [(0, &gm), (1, &go)] {
                for k in 0..21 {
                    let (mut p, mut q) = (zm.clone(), zo.clone());
                    let (mut r, mut s) = (zm.clone(), zo.clone());
                    if which == 0 {
                        p.data_mut()[k] += eps;
                        r.data_mut()[k] -= eps;
                    } else {
                        q.data_mut()[k] += eps;
                        s.data_mut()[k] -= eps;
                    }
                    let num = (f(&p, &q) - f(&r, &s)) / (2.0 * eps);
                    let err = (num - grad.data()[k]).abs() / num.abs().max(1.0);
                    assert!(err < 1e-6, "{sim_kind:?} {which} {k}: {num} vs {}", grad.data()[k]);
                }
            }
        }
    }

    #[test]
    fn alignment_examples() {
        let cfg = MetricConfig::default();
        let z = m(&[&[1.0, 2.0], &[-3.0, 0.1]]);
        assert_eq!(alignment(&z, &z, &cfg).unwrap(), 0.0);
        let mut neg = z.clone();
        neg.scale(-1.0);
        assert!((alignment(&z, &neg, &cfg).unwrap() - 4.0).abs() < 1e-12);
        assert!((alignment(&m(&[&[1.0, 0.0]]), &m(&[&[0.0, 1.0]]), &cfg).unwrap() - 2.0).abs() < 1e-12);
        assert!(alignment(&m(&[&[0.0, 0.0]]), &m(&[&[0.0, 1.0]]), &cfg).is_err());
    }

    #[test]
    fn uniformity_examples() {
        let cfg = MetricConfig::default();
        let anti = m(&[&[1.0, 0.0], &[-1.0, 0.0]]);
        assert!((uniformity(&anti, &cfg).unwrap() + 8.0).abs() < 1e-9);
        assert_eq!(uniformity(&Matrix::filled(5, 3, 0.4), &cfg).unwrap(), 0.0);
        let square = m(&[&[1.0, 0.0], &[0.0, 1.0], &[-1.0, 0.0], &[0.0, -1.0]]);
        let expect = ((4.0 * (-4f64).exp() + 2.0 * (-8f64).exp()) / 6.0).ln();
        assert!((uniformity(&square, &cfg).unwrap() - expect).abs() < 1e-12);
        assert!((expect + 4.3963).abs() < 1e-4);
        assert!(matches!(
            uniformity(&m(&[&[1.0]]), &cfg),
            Err(Error::DegenerateBatch(_))
        ));
    }

    proptest! {
        #[test]
        fn decomposition_matches(n in 1usize..64, lam in 0.0f64..=1.0, seed in any::<u64>(), mean in any::<bool>()) {
            let mut rng = Rng::new(seed);
            let sim = random_matrix(n, n, &mut rng);
            let (_, a) = random_mixup(&random_matrix(n, 2, &mut rng), lam, &mut rng).unwrap();
            let cfg = LossConfig { reduction: if mean { Reduction::Mean } else { Reduction::Sum }, ..Default::default() };
            let (l, _) = mixed_npair_loss(&sim, &a, &cfg).unwrap();
            let d = ce_decomposition_loss(&sim, &a, &cfg).unwrap();
            prop_assert!((l - d).abs() < 1e-9);
        }

        #[test]
        fn loss_permutation_invariant(n in 2usize..24, seed in any::<u64>()) {
            let mut rng = Rng::new(seed);
            let cfg = LossConfig::default();
            let zm = random_matrix(n, 4, &mut rng);
            let zo = random_matrix(n, 4, &mut rng);
            let (_, a) = random_mixup(&random_matrix(n, 2, &mut rng), 0.7, &mut rng).unwrap();
            let perm = rng.permutation(n);
            let mut inv = vec![0; n];
            for (i, &p) in perm.iter().enumerate() { inv[p] = i; }
            // row i moves to position perm[i]
            let order: Vec<usize> = inv.clone();
            let pm = zm.select_rows(&order);
            let po = zo.select_rows(&order);
            let pa = MixAssignment { partner: order.iter().map(|&old| perm[a.partner[old]]).collect(), ..a.clone() };
            let (l0, _) = mixed_npair_loss(&similarity_matrix(&zm, &zo, &cfg).unwrap(), &a, &cfg).unwrap();
            let (l1, _) = mixed_npair_loss(&similarity_matrix(&pm, &po, &cfg).unwrap(), &pa, &cfg).unwrap();
            prop_assert!((l0 - l1).abs() < 1e-9);
        }

        #[test]
        fn uniformity_rotation_invariant(n in 2usize..30, theta in 0.0f64..std::f64::consts::TAU, seed in any::<u64>()) {
            let mut rng = Rng::new(seed);
            let z = random_matrix(n, 2, &mut rng);
            let rot = Matrix::from_rows(&[[theta.cos(), theta.sin()], [-theta.sin(), theta.cos()]]).unwrap();
            let zr = z.matmul(&rot).unwrap();
            let cfg = MetricConfig::default();
            prop_assume!(z.data().iter().any(|v| v.abs() > 1e-6));
            let u0 = uniformity(&z, &cfg);
            let u1 = uniformity(&zr, &cfg);
            if let (Ok(u0), Ok(u1)) = (u0, u1) {
                prop_assert!((u0 - u1).abs() < 1e-9);
            }
        }
    }
}
