//! On-disk dataset formats.
//!
//! Node format, one directory:
//! - `edges.tsv`: `u<TAB>v` per line, 0-based
//! - `features.csv`: one comma-separated row of floats per node
//! - `labels.csv`: one class id per node
//! - `split.json`: `{"train": [...], "val": [...], "test": [...]}`, `val` optional
//!
//! TU format: `DS_A.txt` (`u, v` per line), `DS_graph_indicator.txt`,
//! `DS_graph_labels.txt` and optionally `DS_node_labels.txt` and
//! `DS_node_attributes.txt`. All indices are 1-based on disk.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::numcore::Matrix;
use crate::pipeline::Split;

/// A graph with node labels and its evaluation split.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeDataset {
    pub graph: Graph,
    pub split: Split,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Non-blank lines with their 1-based line numbers.
fn lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty())
}

fn parse_cell<T: FromStr>(cell: &str, path: &Path, line: usize) -> Result<T> {
    cell.trim()
        .parse()
        .map_err(|_| Error::at(path, line, format!("cannot parse {:?}", cell.trim())))
}

fn parse_row<T: FromStr>(line: &str, sep: char, path: &Path, no: usize) -> Result<Vec<T>> {
    line.split(sep).map(|c| parse_cell(c, path, no)).collect()
}

fn parse_pair(line: &str, sep: char, path: &Path, no: usize) -> Result<(usize, usize)> {
    match parse_row::<usize>(line, sep, path, no)?.as_slice() {
        &[u, v] => Ok((u, v)),
        other => Err(Error::at(path, no, format!("expected 2 fields, found {}", other.len()))),
    }
}

/// Float rows of equal width.
fn parse_matrix(text: &str, path: &Path) -> Result<(Matrix, Vec<usize>)> {
    let mut data = Vec::new();
    let mut line_nos = Vec::new();
    let mut width = None;
    for (no, line) in lines(text) {
        let row: Vec<f64> = parse_row(line, ',', path, no)?;
        if let Some(bad) = row.iter().find(|v| !v.is_finite()) {
            return Err(Error::at(path, no, format!("non-finite value {bad}")));
        }
        match width {
            None => width = Some(row.len()),
            Some(w) if w != row.len() => {
                return Err(Error::at(
                    path,
                    no,
                    format!("expected {w} columns, found {}", row.len()),
                ))
            }
            _ => {}
        }
        data.extend(row);
        line_nos.push(no);
    }
    let rows = line_nos.len();
    Ok((Matrix::from_vec(rows, width.unwrap_or(0), data)?, line_nos))
}

fn parse_column<T: FromStr>(text: &str, path: &Path) -> Result<Vec<(usize, T)>> {
    lines(text).map(|(no, l)| Ok((no, parse_cell(l, path, no)?))).collect()
}

/// Line number to blame when a file has the wrong number of records.
fn count_error(path: &Path, numbered: &[usize], expected: usize, what: &str) -> Error {
    let line = numbered
        .get(expected)
        .copied()
        .unwrap_or_else(|| numbered.last().map_or(1, |l| l + 1));
    Error::at(
        path,
        line,
        format!("expected {expected} {what}, found {}", numbered.len()),
    )
}

pub fn load_node_dataset(dir: &Path) -> Result<NodeDataset> {
    let features_path = dir.join("features.csv");
    let (features, _) = parse_matrix(&read(&features_path)?, &features_path)?;
    let n = features.rows();
    if n == 0 {
        return Err(Error::at(&features_path, 1, "no feature rows"));
    }

    let labels_path = dir.join("labels.csv");
    let labels: Vec<(usize, usize)> = parse_column(&read(&labels_path)?, &labels_path)?;
    if labels.len() != n {
        let nos: Vec<usize> = labels.iter().map(|l| l.0).collect();
        return Err(count_error(&labels_path, &nos, n, "labels (one per feature row)"));
    }

    let edges_path = dir.join("edges.tsv");
    let mut edges = Vec::new();
    for (no, line) in lines(&read(&edges_path)?) {
        let (u, v) = parse_pair(line, '\t', &edges_path, no)?;
        if u >= n || v >= n {
            return Err(Error::at(
                &edges_path,
                no,
                format!("edge ({u}, {v}) out of range for {n} nodes"),
            ));
        }
        edges.push((u, v));
    }

    let split_path = dir.join("split.json");
    let split: Split =
        serde_json::from_str(&read(&split_path)?).map_err(|e| Error::at(&split_path, e.line(), e.to_string()))?;
    split
        .validate(n)
        .map_err(|e| Error::at(&split_path, 1, e.to_string()))?;

    let graph = Graph::new(features, edges)?.with_node_labels(labels.into_iter().map(|l| l.1).collect())?;
    Ok(NodeDataset { graph, split })
}

/// Shortest round-trip representation, so a save/load cycle is bit-exact.
fn push_row(out: &mut String, row: &[f64]) {
    for (j, v) in row.iter().enumerate() {
        if j > 0 {
            out.push(',');
        }
        write!(out, "{v:?}").unwrap();
    }
    out.push('\n');
}

pub fn save_node_dataset(dir: &Path, data: &NodeDataset) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let g = &data.graph;
    let labels = g
        .node_labels()
        .ok_or_else(|| Error::Schema("node dataset needs node labels".into()))?;

    let mut edges = String::new();
    for (u, v) in g.edges() {
        writeln!(edges, "{u}\t{v}").unwrap();
    }
    let mut features = String::new();
    for r in 0..g.n() {
        push_row(&mut features, g.features().row(r));
    }
    let labels: String = labels.iter().map(|l| format!("{l}\n")).collect();
    let split = serde_json::to_string_pretty(&data.split).expect("split serializes");

    write(&dir.join("edges.tsv"), &edges)?;
    write(&dir.join("features.csv"), &features)?;
    write(&dir.join("labels.csv"), &labels)?;
    write(&dir.join("split.json"), &(split + "\n"))
}

/// The `DS` prefix shared by the TU files in `dir`.
fn tu_prefix(dir: &Path) -> Result<String> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut names: Vec<String> = entries
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            e.file_name()
                .to_str()
                .and_then(|s| s.strip_suffix("_A.txt"))
                .map(str::to_owned)
        })
        .collect();
    names.sort();
    match names.as_slice() {
        [one] => Ok(one.clone()),
        [] => Err(Error::Schema(format!("no *_A.txt file in {}", dir.display()))),
        many => Err(Error::Schema(format!(
            "several TU datasets in {}: {many:?}",
            dir.display()
        ))),
    }
}

fn tu_path(dir: &Path, prefix: &str, suffix: &str) -> PathBuf {
    dir.join(format!("{prefix}_{suffix}.txt"))
}

fn one_based(value: usize, path: &Path, line: usize) -> Result<usize> {
    value
        .checked_sub(1)
        .ok_or_else(|| Error::at(path, line, "index 0 in a 1-based file"))
}

/// Maps arbitrary integer codes onto `0..k` in sorted order.
fn dense_codes(values: &[i64]) -> (Vec<usize>, usize) {
    let codes: BTreeMap<i64, usize> = {
        let mut sorted = values.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        sorted.into_iter().enumerate().map(|(i, v)| (v, i)).collect()
    };
    (values.iter().map(|v| codes[v]).collect(), codes.len())
}

/// Graphs with graph labels, in indicator order. Features are the node
/// attributes when present, else a one-hot of the node labels, else a
/// single constant column of ones.
pub fn load_tu_dataset(dir: &Path) -> Result<Vec<Graph>> {
    let prefix = tu_prefix(dir)?;

    let ind_path = tu_path(dir, &prefix, "graph_indicator");
    let indicator: Vec<(usize, usize)> = parse_column(&read(&ind_path)?, &ind_path)?;
    let n = indicator.len();
    // node -> graph, graphs must be numbered 1..G in contiguous runs
    let mut graph_of = Vec::with_capacity(n);
    let mut starts = Vec::new();
    for (node, &(no, g)) in indicator.iter().enumerate() {
        let g = one_based(g, &ind_path, no)?;
        match g.cmp(&starts.len()) {
            std::cmp::Ordering::Equal => starts.push(node),
            std::cmp::Ordering::Greater => {
                return Err(Error::at(
                    &ind_path,
                    no,
                    format!("graph id {} skips ahead of {}", g + 1, starts.len()),
                ))
            }
            std::cmp::Ordering::Less if g + 1 != starts.len() => {
                return Err(Error::at(
                    &ind_path,
                    no,
                    format!("nodes of graph {} are not contiguous", g + 1),
                ))
            }
            std::cmp::Ordering::Less => {}
        }
        graph_of.push(g);
    }
    let n_graphs = starts.len();
    if n_graphs == 0 {
        return Err(Error::at(&ind_path, 1, "no nodes"));
    }
    starts.push(n);

    let labels_path = tu_path(dir, &prefix, "graph_labels");
    let raw: Vec<(usize, i64)> = parse_column(&read(&labels_path)?, &labels_path)?;
    if raw.len() != n_graphs {
        let nos: Vec<usize> = raw.iter().map(|r| r.0).collect();
        return Err(count_error(&labels_path, &nos, n_graphs, "graph labels"));
    }
    let (graph_labels, _) = dense_codes(&raw.iter().map(|r| r.1).collect::<Vec<_>>());

    let features = tu_features(dir, &prefix, n)?;

    let a_path = tu_path(dir, &prefix, "A");
    let mut edges: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n_graphs];
    for (no, line) in lines(&read(&a_path)?) {
        let (u, v) = parse_pair(line, ',', &a_path, no)?;
        let (u, v) = (one_based(u, &a_path, no)?, one_based(v, &a_path, no)?);
        if u >= n || v >= n {
            return Err(Error::at(
                &a_path,
                no,
                format!("node {} out of range for {n} nodes", u.max(v) + 1),
            ));
        }
        let g = graph_of[u];
        if graph_of[v] != g {
            return Err(Error::at(
                &a_path,
                no,
                format!("edge joins graphs {} and {}", g + 1, graph_of[v] + 1),
            ));
        }
        edges[g].push((u - starts[g], v - starts[g]));
    }

    (0..n_graphs)
        .map(|g| {
            let rows: Vec<usize> = (starts[g]..starts[g + 1]).collect();
            Ok(Graph::new(features.select_rows(&rows), edges[g].iter().copied())?.with_graph_label(graph_labels[g]))
        })
        .collect()
}

fn tu_features(dir: &Path, prefix: &str, n: usize) -> Result<Matrix> {
    let attr_path = tu_path(dir, prefix, "node_attributes");
    if attr_path.exists() {
        let (m, nos) = parse_matrix(&read(&attr_path)?, &attr_path)?;
        if m.rows() != n {
            return Err(count_error(&attr_path, &nos, n, "attribute rows"));
        }
        return Ok(m);
    }
    let nl_path = tu_path(dir, prefix, "node_labels");
    if nl_path.exists() {
        let raw: Vec<(usize, i64)> = parse_column(&read(&nl_path)?, &nl_path)?;
        if raw.len() != n {
            let nos: Vec<usize> = raw.iter().map(|r| r.0).collect();
            return Err(count_error(&nl_path, &nos, n, "node labels"));
        }
        let (codes, k) = dense_codes(&raw.iter().map(|r| r.1).collect::<Vec<_>>());
        let mut m = Matrix::zeros(n, k);
        for (i, c) in codes.into_iter().enumerate() {
            m.set(i, c, 1.0);
        }
        return Ok(m);
    }
    Ok(Matrix::filled(n, 1, 1.0))
}

/// Writes graphs in TU layout with features as node attributes; labels are
/// written as their in-memory codes.
pub fn save_tu_dataset(dir: &Path, prefix: &str, graphs: &[Graph]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (mut a, mut ind, mut labels, mut attrs) = (String::new(), String::new(), String::new(), String::new());
    let mut offset = 0;
    for (g, graph) in graphs.iter().enumerate() {
        let label = graph
            .graph_label()
            .ok_or_else(|| Error::Schema(format!("graph {g} has no label")))?;
        writeln!(labels, "{label}").unwrap();
        for r in 0..graph.n() {
            writeln!(ind, "{}", g + 1).unwrap();
            push_row(&mut attrs, graph.features().row(r));
        }
        for &(u, v) in graph.edges() {
            writeln!(a, "{}, {}", u + offset + 1, v + offset + 1).unwrap();
            writeln!(a, "{}, {}", v + offset + 1, u + offset + 1).unwrap();
        }
        offset += graph.n();
    }
    write(&tu_path(dir, prefix, "A"), &a)?;
    write(&tu_path(dir, prefix, "graph_indicator"), &ind)?;
    write(&tu_path(dir, prefix, "graph_labels"), &labels)?;
    write(&tu_path(dir, prefix, "node_attributes"), &attrs)
}
