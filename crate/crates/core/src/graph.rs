//! Immutable attributed graph with labels and train/val/test masks, plus
//! the TSV dataset reader/writer and the G(n, p) generator.
//!
//! Dataset directory layout (UTF-8, tab separated, LF terminated):
//!
//! ```text
//! edges.tsv     <src>\t<dst>            one undirected edge per line
//! features.tsv  <f_0>\t<f_1>...         one row per node, defines n
//! labels.tsv    <class>                 one per node
//! split.tsv     train|val|test|none     one per node
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sparse::CsrMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
    None,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
            Split::None => "none",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(Split::Train),
            "val" => Some(Split::Val),
            "test" => Some(Split::Test),
            "none" => Some(Split::None),
            _ => None,
        }
    }
}

/// What happened to the raw edge list on the way into the symmetric store.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeStats {
    /// Edge records seen in the input (directed count for raw files).
    pub edge_lines: usize,
    pub self_loops_dropped: usize,
    /// Records that repeated an already-seen unordered pair.
    pub duplicates_folded: usize,
    pub undirected_edges: usize,
}

#[derive(Debug, Clone)]
pub struct Graph {
    adjacency: CsrMatrix,
    degrees: Vec<f64>,
    features: Array2<f64>,
    features_sparse: CsrMatrix,
    labels: Vec<usize>,
    n_classes: usize,
    split: Vec<Split>,
    edge_stats: EdgeStats,
}

impl Graph {
    /// Build from unweighted edges; see [`Graph::from_weighted_edges`].
    pub fn from_edges(
        edges: &[(usize, usize)],
        features: Array2<f64>,
        labels: Vec<usize>,
        split: Vec<Split>,
    ) -> Result<Self> {
        let weighted: Vec<_> = edges.iter().map(|&(a, b)| (a, b, 1.0)).collect();
        Self::from_weighted_edges(&weighted, features, labels, split)
    }

    /// Build from an undirected edge list. Self-loops are dropped, repeated
    /// and reversed pairs keep the first weight seen. The node count is the
    /// number of feature rows.
    pub fn from_weighted_edges(
        edges: &[(usize, usize, f64)],
        features: Array2<f64>,
        labels: Vec<usize>,
        split: Vec<Split>,
    ) -> Result<Self> {
        let n = features.nrows();
        if labels.len() != n || split.len() != n {
            return Err(Error::Contract(format!(
                "{} feature rows but {} labels and {} split entries",
                n,
                labels.len(),
                split.len()
            )));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::Contract("non-finite feature value".into()));
        }
        let mut stats = EdgeStats {
            edge_lines: edges.len(),
            ..EdgeStats::default()
        };
        let mut pairs: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for &(a, b, w) in edges {
            if a >= n || b >= n {
                return Err(Error::Contract(format!("edge ({a}, {b}) out of range for n = {n}")));
            }
            if !(w.is_finite() && w > 0.0) {
                return Err(Error::Contract(format!("edge ({a}, {b}) has weight {w}")));
            }
            if a == b {
                stats.self_loops_dropped += 1;
                continue;
            }
            let key = (a.min(b), a.max(b));
            if pairs.contains_key(&key) {
                stats.duplicates_folded += 1;
            } else {
                pairs.insert(key, w);
            }
        }
        stats.undirected_edges = pairs.len();
        let triplets: Vec<_> = pairs
            .iter()
            .flat_map(|(&(a, b), &w)| [(a, b, w), (b, a, w)])
            .collect();
        let adjacency = CsrMatrix::from_triplets(n, n, triplets)?;
        let degrees = (0..n).map(|r| adjacency.row(r).1.iter().sum()).collect();
        let n_classes = labels.iter().max().map_or(0, |&m| m + 1);
        let features_sparse = CsrMatrix::from_dense(features.view());
        Ok(Self {
            adjacency,
            degrees,
            features,
            features_sparse,
            labels,
            n_classes,
            split,
            edge_stats: stats,
        })
    }

    pub fn n(&self) -> usize {
        self.features.nrows()
    }

    pub fn d_in(&self) -> usize {
        self.features.ncols()
    }

    pub fn n_edges(&self) -> usize {
        self.edge_stats.undirected_edges
    }

    pub fn edge_stats(&self) -> EdgeStats {
        self.edge_stats
    }

    /// Symmetric adjacency without self-loops.
    pub fn adjacency(&self) -> &CsrMatrix {
        &self.adjacency
    }

    /// Weighted degree dᵢ = Σⱼ aᵢⱼ of the raw store.
    pub fn degrees(&self) -> &[f64] {
        &self.degrees
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn features_sparse(&self) -> &CsrMatrix {
        &self.features_sparse
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn split(&self) -> &[Split] {
        &self.split
    }

    pub fn mask(&self, which: Split) -> Vec<bool> {
        self.split.iter().map(|&s| s == which).collect()
    }

    pub fn mask_count(&self, which: Split) -> usize {
        self.split.iter().filter(|&&s| s == which).count()
    }

    /// Undirected edge list (i < j), ascending.
    pub fn edges(&self) -> Vec<(usize, usize, f64)> {
        self.adjacency.iter().filter(|&(r, c, _)| r < c).collect()
    }

    /// Copy with every feature row scaled to unit L1 norm (zero rows stay zero).
    pub fn row_normalized(&self) -> Self {
        let mut features = self.features.clone();
        for mut row in features.rows_mut() {
            let s: f64 = row.iter().map(|v| v.abs()).sum();
            if s > 0.0 {
                row.mapv_inplace(|v| v / s);
            }
        }
        let features_sparse = CsrMatrix::from_dense(features.view());
        Self {
            features,
            features_sparse,
            ..self.clone()
        }
    }
}

fn read_lines(dir: &Path, name: &str) -> Result<String> {
    let path = dir.join(name);
    if !path.exists() {
        return Err(Error::MissingFile(path));
    }
    fs::read_to_string(&path).map_err(|e| Error::io(path, e))
}

fn parse_err(file: &str, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        file: file.to_string(),
        line,
        msg: msg.into(),
    }
}

/// Read a TSV dataset directory.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Graph> {
    let dir = dir.as_ref();
    let feat_txt = read_lines(dir, "features.tsv")?;
    let edge_txt = read_lines(dir, "edges.tsv")?;
    let label_txt = read_lines(dir, "labels.tsv")?;
    let split_txt = read_lines(dir, "split.tsv")?;

    let mut data = Vec::new();
    let mut n = 0usize;
    let mut d_in = None;
    for (i, line) in feat_txt.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let mut width = 0;
        for tok in line.split('\t') {
            let v: f64 = tok
                .trim()
                .parse()
                .map_err(|_| parse_err("features.tsv", i + 1, format!("bad real {tok:?}")))?;
            data.push(v);
            width += 1;
        }
        match d_in {
            None => d_in = Some(width),
            Some(d) if d != width => {
                return Err(parse_err(
                    "features.tsv",
                    i + 1,
                    format!("expected {d} columns, found {width}"),
                ))
            }
            _ => {}
        }
        n += 1;
    }
    let d_in = d_in.unwrap_or(0);
    let features = Array2::from_shape_vec((n, d_in), data)
        .map_err(|e| Error::Contract(format!("feature matrix: {e}")))?;

    let mut labels = Vec::with_capacity(n);
    for (i, line) in label_txt.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let y: usize = line
            .trim()
            .parse()
            .map_err(|_| parse_err("labels.tsv", i + 1, format!("bad label {line:?}")))?;
        labels.push(y);
    }
    if labels.len() != n {
        return Err(parse_err(
            "labels.tsv",
            labels.len(),
            format!("{} labels for {n} nodes", labels.len()),
        ));
    }

    let mut split = Vec::with_capacity(n);
    for (i, line) in split_txt.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let s = Split::parse(line.trim())
            .ok_or_else(|| parse_err("split.tsv", i + 1, format!("bad split tag {line:?}")))?;
        split.push(s);
    }
    if split.len() != n {
        return Err(parse_err(
            "split.tsv",
            split.len(),
            format!("{} split entries for {n} nodes", split.len()),
        ));
    }

    let mut edges = Vec::new();
    for (i, line) in edge_txt.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut it = line.split_whitespace();
        let (Some(a), Some(b), None) = (it.next(), it.next(), it.next()) else {
            return Err(parse_err("edges.tsv", i + 1, "expected two columns"));
        };
        let parse_node = |tok: &str| -> Result<usize> {
            let v: usize = tok
                .parse()
                .map_err(|_| parse_err("edges.tsv", i + 1, format!("bad node index {tok:?}")))?;
            if v >= n {
                return Err(parse_err(
                    "edges.tsv",
                    i + 1,
                    format!("node index {v} out of range (n = {n})"),
                ));
            }
            Ok(v)
        };
        edges.push((parse_node(a)?, parse_node(b)?));
    }

    let graph = Graph::from_edges(&edges, features, labels, split)?;
    let stats = graph.edge_stats();
    if stats.self_loops_dropped > 0 {
        log::warn!(
            "{}: dropped {} self-loop edge lines",
            dir.display(),
            stats.self_loops_dropped
        );
    }
    Ok(graph)
}

/// Write a graph in the TSV layout read by [`load_dataset`].
pub fn write_dataset(graph: &Graph, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let write = |name: &str, body: String| -> Result<()> {
        let path = dir.join(name);
        fs::write(&path, body).map_err(|e| Error::io(path, e))
    };

    let mut edges = String::new();
    for (a, b, _) in graph.edges() {
        writeln!(edges, "{a}\t{b}").unwrap();
    }
    write("edges.tsv", edges)?;

    let mut feats = String::new();
    for row in graph.features().rows() {
        for (j, v) in row.iter().enumerate() {
            if j > 0 {
                feats.push('\t');
            }
            write!(feats, "{v}").unwrap();
        }
        feats.push('\n');
    }
    write("features.tsv", feats)?;

    let mut labels = String::new();
    for y in graph.labels() {
        writeln!(labels, "{y}").unwrap();
    }
    write("labels.tsv", labels)?;

    let mut split = String::new();
    for s in graph.split() {
        writeln!(split, "{}", s.as_str()).unwrap();
    }
    write("split.tsv", split)
}

const MAX_RESAMPLES: usize = 100;

/// Erdős–Rényi G(n, p) with standard-normal features, uniform labels and a
/// random 60/20/20 split.
pub fn generate_synthetic(n: usize, p: f64, d: usize, c: usize, seed: u64) -> Result<Graph> {
    if n < 2 {
        return Err(Error::Config(format!("synthetic graph needs n >= 2, got {n}")));
    }
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Config(format!("edge probability must lie in (0, 1), got {p}")));
    }
    if d == 0 || c == 0 {
        return Err(Error::Config("feature dimension and class count must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = Vec::new();
    for _ in 0..=MAX_RESAMPLES {
        edges.clear();
        for i in 0..n {
            for j in (i + 1)..n {
                if rng.gen::<f64>() < p {
                    edges.push((i, j));
                }
            }
        }
        if !edges.is_empty() {
            break;
        }
    }
    if edges.is_empty() {
        return Err(Error::Generation(format!(
            "G({n}, {p}) produced no edges after {MAX_RESAMPLES} resamples"
        )));
    }

    let features = Array2::from_shape_simple_fn((n, d), || rng.sample::<f64, _>(StandardNormal));
    let labels = (0..n).map(|_| rng.gen_range(0..c)).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let n_train = (n * 3).div_ceil(5);
    let n_val = n / 5;
    let mut split = vec![Split::Test; n];
    for (rank, &i) in order.iter().enumerate() {
        split[i] = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
    }
    Graph::from_edges(&edges, features, labels, split)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn write_dir(dir: &Path, edges: &str, feats: &str, labels: &str, split: &str) {
        fs::write(dir.join("edges.tsv"), edges).unwrap();
        fs::write(dir.join("features.tsv"), feats).unwrap();
        fs::write(dir.join("labels.tsv"), labels).unwrap();
        fs::write(dir.join("split.tsv"), split).unwrap();
    }

    #[test]
    fn reversed_duplicate_lines_fold_to_one_edge() {
        let tmp = tempfile::tempdir().unwrap();
        write_dir(tmp.path(), "0\t1\n1\t0\n", "1\t0\n0\t1\n", "0\n1\n", "train\ntest\n");
        let g = load_dataset(tmp.path()).unwrap();
        assert_eq!(g.n_edges(), 1);
        assert_eq!(g.edge_stats().edge_lines, 2);
        assert_eq!(g.edge_stats().duplicates_folded, 1);
        assert_eq!(g.adjacency().nnz(), 2);
        assert_eq!(g.n_classes(), 2);
    }

    #[test]
    fn self_loops_are_dropped_and_counted() {
        let tmp = tempfile::tempdir().unwrap();
        write_dir(tmp.path(), "0\t0\n0\t1\n", "1\n2\n", "0\n0\n", "train\nval\n");
        let g = load_dataset(tmp.path()).unwrap();
        assert_eq!(g.edge_stats().self_loops_dropped, 1);
        assert_eq!(g.adjacency().get(0, 0), 0.0);
    }

    #[test]
    fn out_of_range_node_names_the_line() {
        let tmp = tempfile::tempdir().unwrap();
        write_dir(tmp.path(), "0\t1\n0\t5\n", "1\n2\n", "0\n0\n", "train\nval\n");
        let err = load_dataset(tmp.path()).unwrap_err().to_string();
        assert!(err.contains("edges.tsv:2"), "{err}");
    }

    #[test]
    fn missing_file_is_named() {
        let tmp = tempfile::tempdir().unwrap();
        fs::write(tmp.path().join("features.tsv"), "1\n").unwrap();
        let err = load_dataset(tmp.path()).unwrap_err();
        assert!(matches!(err, Error::MissingFile(ref p) if p.ends_with("edges.tsv")), "{err}");
    }

    #[test]
    fn class_count_comes_from_max_label() {
        let g = Graph::from_edges(&[(0, 1)], array![[1.0], [2.0]], vec![0, 6], vec![Split::None; 2])
            .unwrap();
        assert_eq!(g.n_classes(), 7);
    }

    #[test]
    fn generator_is_deterministic_and_splits_60_20_20() {
        let a = generate_synthetic(100, 0.1, 4, 3, 7).unwrap();
        let b = generate_synthetic(100, 0.1, 4, 3, 7).unwrap();
        assert_eq!(a.edges(), b.edges());
        assert_eq!(a.features(), b.features());
        assert_eq!(a.labels(), b.labels());
        assert_eq!(a.split(), b.split());
        assert_eq!(a.mask_count(Split::Train), 60);
        assert_eq!(a.mask_count(Split::Val), 20);
        assert_eq!(a.mask_count(Split::Test), 20);
    }

    #[test]
    fn two_node_graph_is_valid() {
        let g = generate_synthetic(2, 0.9, 1, 2, 3).unwrap();
        assert!(g.n_edges() <= 1);
        assert_eq!(g.n(), 2);
    }

    #[test]
    fn generator_rejects_bad_probability() {
        assert!(generate_synthetic(10, 1.5, 2, 2, 0).is_err());
        assert!(generate_synthetic(1, 0.5, 2, 2, 0).is_err());
    }

    #[test]
    fn write_then_load_reproduces_graph() {
        let g = generate_synthetic(30, 0.2, 3, 4, 11).unwrap();
        let tmp = tempfile::tempdir().unwrap();
        write_dataset(&g, tmp.path()).unwrap();
        let h = load_dataset(tmp.path()).unwrap();
        assert_eq!(g.edges(), h.edges());
        assert_eq!(g.features(), h.features());
        assert_eq!(g.labels(), h.labels());
        assert_eq!(g.split(), h.split());
    }

    #[test]
    fn row_normalization_gives_unit_l1_rows() {
        let g = Graph::from_edges(&[(0, 1)], array![[1.0, 3.0], [0.0, 0.0]], vec![0, 0], vec![Split::None; 2])
            .unwrap()
            .row_normalized();
        assert_eq!(g.features(), &array![[0.25, 0.75], [0.0, 0.0]]);
    }
}
