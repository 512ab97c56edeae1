//! Stochastic graph views: attribute masking and edge dropping.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::numcore::{Matrix, Rng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MaskGranularity {
    /// one draw per feature column, shared by every node
    #[default]
    PerDimension,
    /// one draw per matrix cell
    PerEntry,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    /// probability that an edge is dropped
    pub p_edge: f64,
    /// probability that a feature is zeroed
    pub p_feat: f64,
    pub feat_granularity: MaskGranularity,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            p_edge: 0.2,
            p_feat: 0.3,
            feat_granularity: MaskGranularity::PerDimension,
        }
    }
}

impl AugmentConfig {
    pub fn identity() -> Self {
        AugmentConfig {
            p_edge: 0.0,
            p_feat: 0.0,
            feat_granularity: MaskGranularity::PerDimension,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("p_edge", self.p_edge), ("p_feat", self.p_feat)] {
            check_probability(name, p)?;
        }
        Ok(())
    }
}

fn check_probability(name: &str, p: f64) -> Result<()> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::Config(format!("{name}={p} must lie in [0, 1)")));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ViewMode {
    /// both views augmented
    #[default]
    Multi,
    /// first view is the unaugmented source
    Single,
}

#[derive(Clone, Debug)]
pub struct ViewPair {
    /// the view whose embeddings get mixed
    pub view_a: Graph,
    pub view_b: Graph,
    pub seed_a: u64,
    pub seed_b: u64,
}

/// `X ⊙ M` where each mask element is zero with probability `p_feat`.
pub fn mask_attributes(x: &Matrix, p_feat: f64, granularity: MaskGranularity, rng: &mut Rng) -> Result<Matrix> {
    check_probability("p_feat", p_feat)?;
    let mut out = x.clone();
    if p_feat == 0.0 {
        return Ok(out);
    }
    match granularity {
        MaskGranularity::PerDimension => {
            let dropped: Vec<bool> = (0..x.cols()).map(|_| rng.bernoulli(p_feat)).collect();
            for r in 0..out.rows() {
                for (v, &drop) in out.row_mut(r).iter_mut().zip(&dropped) {
                    if drop {
                        *v = 0.0;
                    }
                }
            }
        }
        MaskGranularity::PerEntry => {
            for v in out.data_mut() {
                if rng.bernoulli(p_feat) {
                    *v = 0.0;
                }
            }
        }
    }
    Ok(out)
}

/// Removes each undirected edge independently with probability `p_edge`.
pub fn drop_edges(g: &Graph, p_edge: f64, rng: &mut Rng) -> Result<Graph> {
    check_probability("p_edge", p_edge)?;
    if p_edge == 0.0 {
        return Ok(g.clone());
    }
    let kept = g.edges().iter().copied().filter(|_| !rng.bernoulli(p_edge)).collect();
    Ok(g.with_edge_subset(kept))
}

/// Applies one augmentation config to a graph.
pub fn augment(g: &Graph, cfg: &AugmentConfig, rng: &Rng) -> Result<Graph> {
    cfg.validate()?;
    let dropped = drop_edges(g, cfg.p_edge, &mut rng.split("edges"))?;
    let masked = mask_attributes(
        g.features(),
        cfg.p_feat,
        cfg.feat_granularity,
        &mut rng.split("features"),
    )?;
    dropped.with_features(masked)
}

/// Two independently augmented views drawn from disjoint streams of `rng`.
pub fn make_views(
    g: &Graph,
    cfg_a: &AugmentConfig,
    cfg_b: &AugmentConfig,
    mode: ViewMode,
    rng: &Rng,
) -> Result<ViewPair> {
    let cfg_a = match mode {
        ViewMode::Multi => *cfg_a,
        ViewMode::Single => AugmentConfig {
            feat_granularity: cfg_a.feat_granularity,
            ..AugmentConfig::identity()
        },
    };
    let rng_a = rng.split("view_a");
    let rng_b = rng.split("view_b");
    Ok(ViewPair {
        view_a: augment(g, &cfg_a, &rng_a)?,
        view_b: augment(g, cfg_b, &rng_b)?,
        seed_a: rng_a.seed(),
        seed_b: rng_b.seed(),
    })
}
