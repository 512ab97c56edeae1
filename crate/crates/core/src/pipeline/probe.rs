//! Linear evaluation on frozen embeddings.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::Split;
use crate::error::{Error, Result};
use crate::numcore::{stable_log_softmax_rows, Matrix, Rng};

pub const PROBE_ITERS: usize = 300;
pub const PROBE_LR: f64 = 0.01;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeConfig {
    /// L2 penalty on the classifier weights
    pub l2: f64,
    /// repetitions of the node-task probe
    pub runs: usize,
    /// folds of the graph-task cross-validation
    pub folds: usize,
    /// repetitions of the whole cross-validation
    pub cv_runs: usize,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            l2: 1e-3,
            runs: 20,
            folds: 10,
            cv_runs: 5,
        }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return Err(Error::Config(format!("probe l2 must be non-negative, got {}", self.l2)));
        }
        if self.runs == 0 || self.cv_runs == 0 {
            return Err(Error::Config("probe runs must be at least 1".into()));
        }
        if self.folds < 2 {
            return Err(Error::Config(format!("need at least 2 folds, got {}", self.folds)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub accuracy_mean: f64,
    pub accuracy_std: f64,
    /// in run order (and fold order within a run)
    pub accuracies: Vec<f64>,
    pub runs: usize,
    pub folds: Option<usize>,
}

impl ProbeReport {
    fn from_accuracies(accuracies: Vec<f64>, runs: usize, folds: Option<usize>) -> Self {
        let mut sorted = accuracies.clone();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len() as f64;
        let mean = sorted.iter().sum::<f64>() / n;
        let var = sorted.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
        ProbeReport {
            accuracy_mean: mean,
            accuracy_std: var.sqrt(),
            accuracies,
            runs,
            folds,
        }
    }
}

struct Classifier {
    w: Matrix,
    b: Vec<f64>,
}

impl Classifier {
    fn logits(&self, x: &Matrix) -> Result<Matrix> {
        let mut z = x.matmul(&self.w)?;
        for r in 0..z.rows() {
            z.row_mut(r).iter_mut().zip(&self.b).for_each(|(v, b)| *v += b);
        }
        Ok(z)
    }

    fn predict(&self, x: &Matrix) -> Result<Vec<usize>> {
        let z = self.logits(x)?;
        Ok((0..z.rows())
            .map(|r| {
                let row = z.row(r);
                // first maximum wins ties
                (0..row.len()).fold(0, |best, c| if row[c] > row[best] { c } else { best })
            })
            .collect())
    }
}

/// Multinomial logistic regression by full-batch gradient descent on the mean
/// cross-entropy plus `l2/2 · ‖W‖²`.
fn fit(x: &Matrix, y: &[usize], classes: usize, l2: f64, rng: &mut Rng) -> Result<Classifier> {
    let (n, d) = x.shape();
    let init = (0..d * classes).map(|_| 0.01 * rng.normal()).collect();
    let mut clf = Classifier {
        w: Matrix::from_vec(d, classes, init)?,
        b: vec![0.0; classes],
    };
    for _ in 0..PROBE_ITERS {
        let mut g = stable_log_softmax_rows(&clf.logits(x)?)?.map(f64::exp);
        for (i, &c) in y.iter().enumerate() {
            let v = g.get(i, c);
            g.set(i, c, v - 1.0);
        }
        g.scale(1.0 / n as f64);
        let mut grad_w = x.matmul_tn(&g)?;
        grad_w.axpy(l2, &clf.w)?;
        for c in 0..classes {
            let gb: f64 = (0..n).map(|i| g.get(i, c)).sum();
            clf.b[c] -= PROBE_LR * gb;
        }
        clf.w.axpy(-PROBE_LR, &grad_w)?;
    }
    Ok(clf)
}

fn accuracy(pred: &[usize], truth: &[usize]) -> f64 {
    pred.iter().zip(truth).filter(|(p, t)| p == t).count() as f64 / truth.len() as f64
}

fn check_labels(embeddings: &Matrix, labels: &[usize]) -> Result<usize> {
    if labels.len() != embeddings.rows() {
        return Err(Error::dim(
            "linear_probe",
            format!("embeddings {}", embeddings.shape_str()),
            format!("{} labels", labels.len()),
        ));
    }
    Ok(labels.iter().max().map_or(0, |m| m + 1))
}

fn single_fit(
    embeddings: &Matrix,
    labels: &[usize],
    classes: usize,
    train: &[usize],
    test: &[usize],
    l2: f64,
    rng: &mut Rng,
) -> Result<f64> {
    let y_train: Vec<usize> = train.iter().map(|&i| labels[i]).collect();
    if y_train.iter().all(|&c| c == y_train[0]) {
        return Err(Error::DegenerateLabels(format!(
            "training split holds only class {}",
            y_train[0]
        )));
    }
    let clf = fit(&embeddings.select_rows(train), &y_train, classes, l2, rng)?;
    let pred = clf.predict(&embeddings.select_rows(test))?;
    let truth: Vec<usize> = test.iter().map(|&i| labels[i]).collect();
    Ok(accuracy(&pred, &truth))
}

/// Test accuracy of `runs` independently initialized probes.
pub fn linear_probe(
    embeddings: &Matrix,
    labels: &[usize],
    split: &Split,
    l2: f64,
    runs: usize,
    rng: &Rng,
) -> Result<ProbeReport> {
    let classes = check_labels(embeddings, labels)?;
    split.validate(labels.len())?;
    if split.train.is_empty() || split.test.is_empty() {
        return Err(Error::Schema("probe split needs non-empty train and test sets".into()));
    }
    if runs == 0 {
        return Err(Error::Config("probe runs must be at least 1".into()));
    }
    let accuracies = (0..runs)
        .into_par_iter()
        .map(|r| {
            single_fit(
                embeddings,
                labels,
                classes,
                &split.train,
                &split.test,
                l2,
                &mut rng.split_index(r as u64),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ProbeReport::from_accuracies(accuracies, runs, None))
}

/// Fold index per item: classes are shuffled separately and dealt round-robin.
fn stratified_folds(labels: &[usize], k: usize, rng: &mut Rng) -> Vec<usize> {
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut fold = vec![0; labels.len()];
    let mut pos = 0;
    for c in 0..classes {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        rng.shuffle(&mut idx);
        for i in idx {
            fold[i] = pos % k;
            pos += 1;
        }
    }
    fold
}

/// `runs` repetitions of stratified k-fold cross-validation.
pub fn kfold_graph_probe(
    embeddings: &Matrix,
    labels: &[usize],
    k: usize,
    runs: usize,
    l2: f64,
    rng: &Rng,
) -> Result<ProbeReport> {
    let classes = check_labels(embeddings, labels)?;
    let n = labels.len();
    if k > n {
        return Err(Error::Schema(format!("{k} folds requested for {n} graphs")));
    }
    if k < 2 || runs == 0 {
        return Err(Error::Config(format!(
            "need k >= 2 and runs >= 1, got k={k}, runs={runs}"
        )));
    }
    let jobs: Vec<(usize, usize)> = (0..runs).flat_map(|r| (0..k).map(move |f| (r, f))).collect();
    let folds: Vec<Vec<usize>> = (0..runs)
        .map(|r| stratified_folds(labels, k, &mut rng.split("folds").split_index(r as u64)))
        .collect();
    let accuracies = jobs
        .par_iter()
        .map(|&(r, f)| {
            let (test, train): (Vec<usize>, Vec<usize>) = (0..n).partition(|&i| folds[r][i] == f);
            let mut fit_rng = rng.split_index(r as u64).split_index(f as u64);
            single_fit(embeddings, labels, classes, &train, &test, l2, &mut fit_rng)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ProbeReport::from_accuracies(accuracies, runs, Some(k)))
}
