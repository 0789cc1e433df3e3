use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::Array2;

use super::{AttributedGraph, EdgeSet};
use crate::error::{Error, Result};

pub const FEATURES_FILE: &str = "features.csv";
pub const EDGES_FILE: &str = "edges.csv";
pub const LABELS_FILE: &str = "labels.csv";

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Non-empty, non-comment lines with their 1-based line numbers.
fn rows(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

fn parse_err(file: &str, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        file: file.to_string(),
        line,
        msg: msg.into(),
    }
}

fn parse_index(file: &str, line: usize, field: &str) -> Result<usize> {
    field.trim().parse().map_err(|_| {
        parse_err(
            file,
            line,
            format!("expected a node/class id, got {field:?}"),
        )
    })
}

fn parse_pair(file: &str, line: usize, row: &str) -> Result<(usize, usize)> {
    let fields: Vec<&str> = row.split(',').collect();
    if fields.len() != 2 {
        return Err(parse_err(
            file,
            line,
            format!("expected 2 fields, got {}", fields.len()),
        ));
    }
    Ok((
        parse_index(file, line, fields[0])?,
        parse_index(file, line, fields[1])?,
    ))
}

/// Loads a dataset directory holding `features.csv`, `edges.csv` and an
/// optional `labels.csv`.
pub fn load_graph(dir: impl AsRef<Path>) -> Result<AttributedGraph> {
    let dir = dir.as_ref();

    let text = read(&dir.join(FEATURES_FILE))?;
    let mut data = Vec::new();
    let mut width = None;
    let mut n = 0;
    for (line, row) in rows(&text) {
        let start = data.len();
        for field in row.split(',') {
            let x: f64 = field.trim().parse().map_err(|_| {
                parse_err(
                    FEATURES_FILE,
                    line,
                    format!("expected a real, got {field:?}"),
                )
            })?;
            if !x.is_finite() {
                return Err(parse_err(FEATURES_FILE, line, "non-finite feature"));
            }
            data.push(x);
        }
        let w = data.len() - start;
        match width {
            None => width = Some(w),
            Some(expected) if expected != w => {
                return Err(parse_err(
                    FEATURES_FILE,
                    line,
                    format!("expected {expected} columns, got {w}"),
                ))
            }
            _ => {}
        }
        n += 1;
    }
    let features = Array2::from_shape_vec((n, width.unwrap_or(0)), data)
        .map_err(|e| Error::Dimension(e.to_string()))?;

    let text = read(&dir.join(EDGES_FILE))?;
    let mut edges = EdgeSet::new();
    for (line, row) in rows(&text) {
        let (u, v) = parse_pair(EDGES_FILE, line, row)?;
        for index in [u, v] {
            if index >= n {
                return Err(Error::NodeOutOfRange {
                    index,
                    node_count: n,
                });
            }
        }
        edges.insert(u, v);
    }

    let mut labels = vec![None; n];
    let labels_path = dir.join(LABELS_FILE);
    if labels_path.exists() {
        let text = read(&labels_path)?;
        for (line, row) in rows(&text) {
            let (node, class) = parse_pair(LABELS_FILE, line, row)?;
            if node >= n {
                return Err(Error::NodeOutOfRange {
                    index: node,
                    node_count: n,
                });
            }
            match labels[node] {
                Some(prev) if prev != class => {
                    return Err(parse_err(
                        LABELS_FILE,
                        line,
                        format!("node {node} labeled both {prev} and {class}"),
                    ))
                }
                _ => labels[node] = Some(class),
            }
        }
    }

    AttributedGraph::new(features, edges, labels)
}

pub fn write_edges_csv(edges: &EdgeSet, path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::new();
    for (u, v) in edges.iter() {
        let _ = writeln!(out, "{u},{v}");
    }
    let path = path.as_ref();
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Writes `g` in the dataset directory format. Each undirected edge is
/// listed once; unlabeled nodes get no `labels.csv` row.
pub fn save_graph(g: &AttributedGraph, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let mut out = String::new();
    for row in g.features.rows() {
        let fields: Vec<String> = row.iter().map(|x| format!("{x}")).collect();
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    let path = dir.join(FEATURES_FILE);
    fs::write(&path, out).map_err(|e| Error::io(&path, e))?;

    write_edges_csv(&g.edges, dir.join(EDGES_FILE))?;

    let labeled: BTreeMap<usize, usize> = g
        .labels
        .iter()
        .enumerate()
        .filter_map(|(i, l)| l.map(|c| (i, c)))
        .collect();
    let mut out = String::new();
    for (i, c) in labeled {
        let _ = writeln!(out, "{i},{c}");
    }
    let path = dir.join(LABELS_FILE);
    fs::write(&path, out).map_err(|e| Error::io(&path, e))
}
