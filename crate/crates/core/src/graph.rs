//! Graph data model, the symmetric-normalized propagation operator, batching
//! by disjoint union, mean pooling and a stochastic block model generator.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{Matrix, Rng};

/// Undirected graph with node features. Edges are stored once as `(u, v)`
/// with `u < v`, sorted and without duplicates or self-loops.
#[derive(Clone, Debug, PartialEq)]
pub struct Graph {
    features: Matrix,
    edges: Vec<(usize, usize)>,
    node_labels: Option<Vec<usize>>,
    graph_label: Option<usize>,
}

impl Graph {
    /// Builds a graph from an arbitrary undirected edge list. Pairs are
    /// oriented, sorted and deduplicated; self-loops are discarded since the
    /// propagation operator adds its own.
    pub fn new(features: Matrix, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let n = features.rows();
        let mut out = Vec::new();
        for (u, v) in edges {
            if u >= n || v >= n {
                return Err(Error::Schema(format!(
                    "edge ({u}, {v}) references a node outside [0, {n})"
                )));
            }
            if u != v {
                out.push((u.min(v), u.max(v)));
            }
        }
        out.sort_unstable();
        out.dedup();
        Ok(Graph {
            features,
            edges: out,
            node_labels: None,
            graph_label: None,
        })
    }

    pub fn with_node_labels(mut self, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != self.n() {
            return Err(Error::Schema(format!(
                "{} node labels for {} nodes",
                labels.len(),
                self.n()
            )));
        }
        self.node_labels = Some(labels);
        Ok(self)
    }

    pub fn with_graph_label(mut self, label: usize) -> Self {
        self.graph_label = Some(label);
        self
    }

    pub fn n(&self) -> usize {
        self.features.rows()
    }

    pub fn d(&self) -> usize {
        self.features.cols()
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn node_labels(&self) -> Option<&[usize]> {
        self.node_labels.as_deref()
    }

    pub fn graph_label(&self) -> Option<usize> {
        self.graph_label
    }

    /// Same structure and labels with a replacement feature matrix of the
    /// same height.
    pub fn with_features(&self, features: Matrix) -> Result<Self> {
        if features.rows() != self.n() {
            return Err(Error::dim(
                "Graph::with_features",
                format!("{} nodes", self.n()),
                features.shape_str(),
            ));
        }
        Ok(Graph {
            features,
            ..self.clone()
        })
    }

    /// Same nodes with a subset of the current edges.
    pub(crate) fn with_edge_subset(&self, edges: Vec<(usize, usize)>) -> Self {
        Graph { edges, ..self.clone() }
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.n()];
        for &(u, v) in &self.edges {
            deg[u] += 1;
            deg[v] += 1;
        }
        deg
    }

    /// Relabels node `i` as `perm[i]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Graph> {
        let n = self.n();
        let mut seen = vec![false; n];
        if perm.len() != n || perm.iter().any(|&p| p >= n || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::Schema("not a permutation of the node set".into()));
        }
        let mut feats = Matrix::zeros(n, self.d());
        for i in 0..n {
            feats.row_mut(perm[i]).copy_from_slice(self.features.row(i));
        }
        let mut g = Graph::new(feats, self.edges.iter().map(|&(u, v)| (perm[u], perm[v])))?;
        if let Some(l) = &self.node_labels {
            let mut nl = vec![0; n];
            for i in 0..n {
                nl[perm[i]] = l[i];
            }
            g.node_labels = Some(nl);
        }
        g.graph_label = self.graph_label;
        Ok(g)
    }
}

/// `D̂^{-1/2} (A + I) D̂^{-1/2}` in compressed sparse row form.
#[derive(Clone, Debug, PartialEq)]
pub struct PropagationOperator {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl PropagationOperator {
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Column indices and values of row `i`.
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.col_idx[r.clone()], &self.values[r])
    }

    pub fn to_dense(&self) -> Matrix {
        let mut m = Matrix::zeros(self.n, self.n);
        for i in 0..self.n {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                m.set(i, j, v);
            }
        }
        m
    }
}

pub fn normalized_adjacency(g: &Graph) -> PropagationOperator {
    let n = g.n();
    let mut adj: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    for &(u, v) in g.edges() {
        adj[u].push(v);
        adj[v].push(u);
    }
    let inv_sqrt: Vec<f64> = adj.iter().map(|a| 1.0 / (a.len() as f64).sqrt()).collect();

    let mut row_ptr = Vec::with_capacity(n + 1);
    let mut col_idx = Vec::with_capacity(n + 2 * g.edges().len());
    let mut values = Vec::with_capacity(n + 2 * g.edges().len());
    row_ptr.push(0);
    for (i, nbrs) in adj.iter_mut().enumerate() {
        nbrs.sort_unstable();
        for &j in nbrs.iter() {
            col_idx.push(j);
            values.push(inv_sqrt[i] * inv_sqrt[j]);
        }
        row_ptr.push(col_idx.len());
    }
    PropagationOperator {
        n,
        row_ptr,
        col_idx,
        values,
    }
}

/// Sparse-dense product `S · H`.
pub fn spmm(s: &PropagationOperator, h: &Matrix) -> Result<Matrix> {
    if s.n != h.rows() {
        return Err(Error::dim("spmm", format!("{}x{}", s.n, s.n), h.shape_str()));
    }
    let d = h.cols();
    let mut out = Matrix::zeros(s.n, d);
    if d == 0 {
        return Ok(out);
    }
    let kernel = |(i, orow): (usize, &mut [f64])| {
        let (cols, vals) = s.row(i);
        for (&j, &w) in cols.iter().zip(vals) {
            for (o, &x) in orow.iter_mut().zip(h.row(j)) {
                *o += w * x;
            }
        }
    };
    if s.nnz() * d >= 1 << 16 {
        out.data_mut().par_chunks_mut(d).enumerate().for_each(kernel);
    } else {
        out.data_mut().chunks_mut(d).enumerate().for_each(kernel);
    }
    Ok(out)
}

/// Several graphs merged into one with no cross edges.
#[derive(Clone, Debug)]
pub struct BatchedGraph {
    pub graph: Graph,
    pub node_to_graph: Vec<usize>,
    pub graph_count: usize,
    pub graph_labels: Vec<Option<usize>>,
}

impl BatchedGraph {
    /// Node range of source graph `g`.
    pub fn node_range(&self, g: usize) -> std::ops::Range<usize> {
        let start = self.node_to_graph.partition_point(|&x| x < g);
        let end = self.node_to_graph.partition_point(|&x| x <= g);
        start..end
    }
}

pub fn disjoint_union(graphs: &[Graph]) -> Result<BatchedGraph> {
    let first = graphs
        .first()
        .ok_or_else(|| Error::Schema("disjoint union of zero graphs".into()))?;
    let d = first.d();
    let total: usize = graphs.iter().map(Graph::n).sum();
    let mut data = Vec::with_capacity(total * d);
    let mut edges = Vec::new();
    let mut node_to_graph = Vec::with_capacity(total);
    let mut labels: Vec<usize> = Vec::new();
    let all_labeled = graphs.iter().all(|g| g.node_labels.is_some());
    let mut offset = 0;
    for (gi, g) in graphs.iter().enumerate() {
        if g.d() != d {
            return Err(Error::Schema(format!(
                "graph {gi} has feature width {}, expected {d}",
                g.d()
            )));
        }
        data.extend_from_slice(g.features.data());
        edges.extend(g.edges.iter().map(|&(u, v)| (u + offset, v + offset)));
        node_to_graph.extend(std::iter::repeat_n(gi, g.n()));
        if all_labeled {
            labels.extend_from_slice(g.node_labels.as_deref().unwrap_or(&[]));
        }
        offset += g.n();
    }
    // per-graph edge lists are already sorted, offsets keep them sorted
    let mut graph = Graph {
        features: Matrix::from_vec(total, d, data)?,
        edges,
        node_labels: None,
        graph_label: None,
    };
    if all_labeled {
        graph.node_labels = Some(labels);
    }
    Ok(BatchedGraph {
        graph,
        node_to_graph,
        graph_count: graphs.len(),
        graph_labels: graphs.iter().map(Graph::graph_label).collect(),
    })
}

/// Per-graph arithmetic mean of node rows. Graphs without nodes pool to zero.
pub fn mean_pool(h: &Matrix, batch: &BatchedGraph) -> Result<Matrix> {
    if h.rows() != batch.node_to_graph.len() {
        return Err(Error::dim(
            "mean_pool",
            h.shape_str(),
            format!("{} batched nodes", batch.node_to_graph.len()),
        ));
    }
    let mut out = Matrix::zeros(batch.graph_count, h.cols());
    let mut counts = vec![0usize; batch.graph_count];
    for (i, &g) in batch.node_to_graph.iter().enumerate() {
        counts[g] += 1;
        for (o, &x) in out.row_mut(g).iter_mut().zip(h.row(i)) {
            *o += x;
        }
    }
    for (g, &c) in counts.iter().enumerate() {
        if c > 0 {
            let inv = c as f64;
            out.row_mut(g).iter_mut().for_each(|v| *v /= inv);
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FeatureMode {
    /// one-hot block id plus N(0, 0.1²) noise
    #[default]
    OnehotBlockNoisy,
    /// standard normal entries
    Random,
}

pub const SBM_NOISE_STD: f64 = 0.1;

/// Undirected stochastic block model with planted communities. Node labels
/// are block ids; feature width is `max(8, #blocks)`.
pub fn sbm_generate(
    block_sizes: &[usize],
    p_in: f64,
    p_out: f64,
    feature_mode: FeatureMode,
    rng: &mut Rng,
) -> Result<Graph> {
    if block_sizes.is_empty() || block_sizes.contains(&0) {
        return Err(Error::Schema(format!(
            "block sizes must be a nonempty list of positive counts, got {block_sizes:?}"
        )));
    }
    for (name, p) in [("p_in", p_in), ("p_out", p_out)] {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Config(format!("{name}={p} is not a probability")));
        }
    }
    let labels: Vec<usize> = block_sizes
        .iter()
        .enumerate()
        .flat_map(|(b, &s)| std::iter::repeat_n(b, s))
        .collect();
    let n = labels.len();
    let width = block_sizes.len().max(8);

    let mut edge_rng = rng.split("sbm.edges");
    let mut edges = Vec::new();
    for u in 0..n {
        for v in (u + 1)..n {
            let p = if labels[u] == labels[v] { p_in } else { p_out };
            if edge_rng.bernoulli(p) {
                edges.push((u, v));
            }
        }
    }

    let mut feat_rng = rng.split("sbm.features");
    let mut features = Matrix::zeros(n, width);
    for (i, &b) in labels.iter().enumerate() {
        let row = features.row_mut(i);
        match feature_mode {
            FeatureMode::OnehotBlockNoisy => {
                for (c, x) in row.iter_mut().enumerate() {
                    let base = if c == b { 1.0 } else { 0.0 };
                    *x = base + SBM_NOISE_STD * feat_rng.normal();
                }
            }
            FeatureMode::Random => {
                for x in row.iter_mut() {
                    *x = feat_rng.normal();
                }
            }
        }
    }
    Graph::new(features, edges)?.with_node_labels(labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::Rng;
    use proptest::prelude::*;

    /// Dense D̂^{-1/2}(A+I)D̂^{-1/2}, computed without the sparse builder.
    fn dense_oracle(n: usize, edges: &[(usize, usize)]) -> Matrix {
        let mut a = Matrix::identity(n);
        for &(u, v) in edges {
            a.set(u, v, 1.0);
            a.set(v, u, 1.0);
        }
        let deg: Vec<f64> = (0..n).map(|i| a.row(i).iter().sum()).collect();
        let mut s = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                s.set(i, j, a.get(i, j) / (deg[i].sqrt() * deg[j].sqrt()));
            }
        }
        s
    }

    fn ones(n: usize, d: usize) -> Matrix {
        Matrix::filled(n, d, 1.0)
    }

    #[test]
    fn single_node_operator() {
        let g = Graph::new(ones(1, 1), []).unwrap();
        assert_eq!(normalized_adjacency(&g).to_dense().to_rows(), vec![vec![1.0]]);
    }

    #[test]
    fn single_edge_operator() {
        let g = Graph::new(ones(2, 1), [(0, 1)]).unwrap();
        let s = normalized_adjacency(&g).to_dense();
        assert!(s.data().iter().all(|&v| (v - 0.5).abs() < 1e-15));
    }

    #[test]
    fn path_operator() {
        let g = Graph::new(ones(3, 1), [(0, 1), (1, 2)]).unwrap();
        let s = normalized_adjacency(&g).to_dense();
        assert!((s.get(0, 0) - 0.5).abs() < 1e-15);
        assert!((s.get(0, 1) - 1.0 / 6f64.sqrt()).abs() < 1e-15);
        assert!((s.get(0, 1) - 0.40825).abs() < 1e-5);
        assert!((s.get(1, 1) - 1.0 / 3.0).abs() < 1e-15);
        assert!((s.get(2, 2) - 0.5).abs() < 1e-15);
        assert_eq!(s.get(0, 2), 0.0);
    }

    #[test]
    fn spmm_examples() {
        let iso = normalized_adjacency(&Graph::new(ones(3, 2), []).unwrap());
        let h = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]).unwrap();
        assert_eq!(spmm(&iso, &h).unwrap(), h);

        let s = normalized_adjacency(&Graph::new(ones(2, 1), [(0, 1)]).unwrap());
        let out = spmm(&s, &Matrix::from_rows(&[[2.0], [4.0]]).unwrap()).unwrap();
        assert!(out.max_abs_diff(&Matrix::from_rows(&[[3.0], [3.0]]).unwrap()).unwrap() < 1e-12);

        assert_eq!(spmm(&s, &Matrix::zeros(2, 3)).unwrap(), Matrix::zeros(2, 3));
        assert!(spmm(&s, &Matrix::zeros(3, 1)).is_err());
    }

    #[test]
    fn graph_normalizes_edges() {
        let g = Graph::new(ones(4, 1), [(3, 1), (1, 3), (2, 2), (0, 1)]).unwrap();
        assert_eq!(g.edges(), &[(0, 1), (1, 3)]);
        assert!(Graph::new(ones(2, 1), [(0, 5)]).is_err());
    }

    #[test]
    fn union_examples() {
        let tri = Graph::new(ones(3, 2), [(0, 1), (1, 2), (0, 2)]).unwrap();
        let one = disjoint_union(std::slice::from_ref(&tri)).unwrap();
        assert_eq!(one.graph, tri);
        assert_eq!(one.node_to_graph, vec![0, 0, 0]);

        let two = disjoint_union(&[tri.clone(), tri.clone()]).unwrap();
        assert_eq!(two.graph.n(), 6);
        assert_eq!(two.graph.edges().len(), 6);
        assert_eq!(two.node_to_graph, vec![0, 0, 0, 1, 1, 1]);
        assert_eq!(two.node_range(1), 3..6);
        for &(u, v) in two.graph.edges() {
            assert_eq!(two.node_to_graph[u], two.node_to_graph[v]);
        }

        assert!(disjoint_union(&[]).is_err());
        let narrow = Graph::new(ones(2, 1), []).unwrap();
        assert!(matches!(disjoint_union(&[tri, narrow]), Err(Error::Schema(_))));
    }

    #[test]
    fn mean_pool_examples() {
        let g = Graph::new(ones(2, 2), []).unwrap();
        let b = disjoint_union(&[g]).unwrap();
        let h = Matrix::from_rows(&[[1.0, 3.0], [3.0, 1.0]]).unwrap();
        assert_eq!(mean_pool(&h, &b).unwrap().to_rows(), vec![vec![2.0, 2.0]]);

        let singles = disjoint_union(&vec![Graph::new(ones(1, 1), []).unwrap(); 3]).unwrap();
        let h = Matrix::from_rows(&[[1.5], [-2.0], [7.0]]).unwrap();
        assert_eq!(mean_pool(&h, &singles).unwrap(), h);

        let b = disjoint_union(&[
            Graph::new(ones(2, 1), [(0, 1)]).unwrap(),
            Graph::new(ones(1, 1), []).unwrap(),
        ])
        .unwrap();
        let h = Matrix::from_rows(&[[1.0], [3.0], [5.0]]).unwrap();
        assert_eq!(mean_pool(&h, &b).unwrap().to_rows(), vec![vec![2.0], vec![5.0]]);
    }

    #[test]
    fn union_pool_recovers_constants() {
        let consts = [0.25, -3.0, 11.0];
        let graphs: Vec<Graph> = consts
            .iter()
            .enumerate()
            .map(|(i, &c)| Graph::new(Matrix::filled(i + 2, 3, c), [(0, 1)]).unwrap())
            .collect();
        let b = disjoint_union(&graphs).unwrap();
        let pooled = mean_pool(b.graph.features(), &b).unwrap();
        for (g, &c) in consts.iter().enumerate() {
            assert!(pooled.row(g).iter().all(|&v| v == c));
        }
    }

    #[test]
    fn sbm_deterministic_limits() {
        let g = sbm_generate(&[3, 3], 1.0, 0.0, FeatureMode::OnehotBlockNoisy, &mut Rng::new(1)).unwrap();
        assert_eq!(g.edges(), &[(0, 1), (0, 2), (1, 2), (3, 4), (3, 5), (4, 5)]);
        assert_eq!(g.node_labels().unwrap(), &[0, 0, 0, 1, 1, 1]);
        assert_eq!(g.d(), 8);

        let g = sbm_generate(&[4, 5], 0.0, 0.0, FeatureMode::Random, &mut Rng::new(1)).unwrap();
        assert!(g.edges().is_empty());
        assert!(sbm_generate(&[], 0.5, 0.1, FeatureMode::Random, &mut Rng::new(1)).is_err());
        assert!(sbm_generate(&[3, 0], 0.5, 0.1, FeatureMode::Random, &mut Rng::new(1)).is_err());
    }

    #[test]
    fn sbm_intra_edge_counts_binomial() {
        let sizes = [150, 150, 150];
        let g = sbm_generate(&sizes, 0.3, 0.01, FeatureMode::OnehotBlockNoisy, &mut Rng::new(77)).unwrap();
        let labels = g.node_labels().unwrap();
        let pairs: f64 = 150.0 * 149.0 / 2.0;
        let mean = 0.3 * pairs;
        assert!((mean - 3352.5).abs() < 1e-9);
        let sd = (pairs * 0.3 * 0.7f64).sqrt();
        for b in 0..3 {
            let count = g
                .edges()
                .iter()
                .filter(|&&(u, v)| labels[u] == b && labels[v] == b)
                .count() as f64;
            assert!((count - mean).abs() < 3.0 * sd, "block {b}: {count}");
        }
    }

    fn arb_graph(max_n: usize) -> impl Strategy<Value = (usize, Vec<(usize, usize)>)> {
        (1..=max_n).prop_flat_map(|n| {
            let pairs: Vec<(usize, usize)> = (0..n).flat_map(|u| ((u + 1)..n).map(move |v| (u, v))).collect();
            let k = pairs.len();
            (Just(n), proptest::collection::vec(any::<bool>(), k)).prop_map(move |(n, keep)| {
                let e = pairs.iter().zip(keep).filter(|(_, k)| *k).map(|(p, _)| *p).collect();
                (n, e)
            })
        })
    }

    proptest! {
        #[test]
        fn operator_matches_dense_oracle((n, edges) in arb_graph(8)) {
            let g = Graph::new(ones(n, 1), edges.clone()).unwrap();
            let s = normalized_adjacency(&g);
            let dense = s.to_dense();
            let oracle = dense_oracle(n, &edges);
            prop_assert!(dense.max_abs_diff(&oracle).unwrap() < 1e-12);
            for i in 0..n {
                prop_assert!(dense.get(i, i) > 0.0);
                for j in 0..n {
                    prop_assert_eq!(dense.get(i, j), dense.get(j, i));
                }
            }
        }

        #[test]
        fn spmm_matches_dense((n, edges) in arb_graph(12), seed in any::<u64>()) {
            let g = Graph::new(ones(n, 1), edges).unwrap();
            let s = normalized_adjacency(&g);
            let mut rng = Rng::new(seed);
            let h = Matrix::from_vec(n, 3, (0..n * 3).map(|_| rng.uniform_range(-5.0, 5.0)).collect()).unwrap();
            let sparse = spmm(&s, &h).unwrap();
            let dense = s.to_dense().matmul_seq(&h).unwrap();
            prop_assert!(sparse.max_abs_diff(&dense).unwrap() < 1e-10);
        }
    }
}
