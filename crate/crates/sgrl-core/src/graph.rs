//! Immutable undirected graph with 7-bit node attributes and optional binary
//! labels, stored as compressed sorted adjacency. Includes k-hop subgraph
//! extraction with precomputation and the on-disk dataset formats
//! (edges.tsv / attrs.csv / labels.csv).

use crate::error::{Error, Result};
use std::collections::VecDeque;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

pub const ATTR_COUNT: usize = 7;

#[derive(Clone, Debug, PartialEq)]
pub struct Graph {
    offsets: Vec<usize>,
    neighbors: Vec<u32>,
    attrs: Vec<[u8; ATTR_COUNT]>,
    labels: Vec<Option<u8>>,
}

impl Graph {
    /// Deduplicate, symmetrize and drop self-loops.
    pub fn build(
        node_count: usize,
        edges: &[(u32, u32)],
        attrs: Vec<[u8; ATTR_COUNT]>,
        labels: &[(u32, u8)],
    ) -> Result<Graph> {
        if attrs.len() != node_count {
            return Err(Error::data(format!(
                "attribute rows ({}) do not match node count ({})",
                attrs.len(),
                node_count
            )));
        }
        for (i, row) in attrs.iter().enumerate() {
            if row.iter().any(|&a| a > 1) {
                return Err(Error::data(format!("non-binary attribute for node {i}")));
            }
        }
        let mut pairs = Vec::with_capacity(edges.len() * 2);
        for &(u, v) in edges {
            if u as usize >= node_count || v as usize >= node_count {
                return Err(Error::data(format!(
                    "edge endpoint out of range: ({u}, {v}) with {node_count} nodes"
                )));
            }
            if u == v {
                continue;
            }
            pairs.push((u, v));
            pairs.push((v, u));
        }
        pairs.sort_unstable();
        pairs.dedup();

        let mut offsets = vec![0usize; node_count + 1];
        for &(u, _) in &pairs {
            offsets[u as usize + 1] += 1;
        }
        for i in 1..=node_count {
            offsets[i] += offsets[i - 1];
        }
        let neighbors = pairs.iter().map(|&(_, v)| v).collect();

        let mut label_vec = vec![None; node_count];
        for &(node, y) in labels {
            if node as usize >= node_count {
                return Err(Error::data(format!(
                    "label for node {node} out of range ({node_count} nodes)"
                )));
            }
            if y > 1 {
                return Err(Error::data(format!("label for node {node} must be 0/1, got {y}")));
            }
            label_vec[node as usize] = Some(y);
        }

        Ok(Graph {
            offsets,
            neighbors,
            attrs,
            labels: label_vec,
        })
    }

    pub fn node_count(&self) -> usize {
        self.attrs.len()
    }

    pub fn edge_count(&self) -> usize {
        self.neighbors.len() / 2
    }

    /// Sorted, duplicate-free, self-loop-free neighbor list.
    pub fn neighbors(&self, i: usize) -> &[u32] {
        &self.neighbors[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.offsets[i + 1] - self.offsets[i]
    }

    pub fn attrs(&self, i: usize) -> &[u8; ATTR_COUNT] {
        &self.attrs[i]
    }

    pub fn label(&self, i: usize) -> Option<u8> {
        self.labels[i]
    }

    /// (node, label) pairs in ascending node order.
    pub fn labeled_nodes(&self) -> Vec<(u32, u8)> {
        self.labels
            .iter()
            .enumerate()
            .filter_map(|(i, l)| l.map(|y| (i as u32, y)))
            .collect()
    }

    /// Replace the label map (used when swapping observed label sets).
    pub fn with_labels(&self, labels: &[(u32, u8)]) -> Result<Graph> {
        let mut g = self.clone();
        g.labels = vec![None; g.node_count()];
        for &(node, y) in labels {
            if node as usize >= g.node_count() {
                return Err(Error::data(format!("label for node {node} out of range")));
            }
            g.labels[node as usize] = Some(y);
        }
        Ok(g)
    }

    /// All nodes within distance k of i, including i, sorted ascending.
    pub fn khop_subgraph(&self, i: usize, k: usize) -> Result<Vec<u32>> {
        if i >= self.node_count() {
            return Err(Error::data(format!(
                "node {i} out of range ({} nodes)",
                self.node_count()
            )));
        }
        if k == 0 {
            return Err(Error::config("k-hop subgraph requires k >= 1".to_string()));
        }
        let mut dist = vec![u32::MAX; self.node_count()];
        let mut queue = VecDeque::new();
        dist[i] = 0;
        queue.push_back(i as u32);
        let mut members = vec![i as u32];
        while let Some(u) = queue.pop_front() {
            let du = dist[u as usize];
            if du as usize >= k {
                continue;
            }
            for &v in self.neighbors(u as usize) {
                if dist[v as usize] == u32::MAX {
                    dist[v as usize] = du + 1;
                    members.push(v);
                    queue.push_back(v);
                }
            }
        }
        members.sort_unstable();
        Ok(members)
    }
}

/// Precomputed k-hop node sets for every node.
#[derive(Clone, Debug)]
pub struct SubgraphIndex {
    k: usize,
    sets: Vec<Vec<u32>>,
}

impl SubgraphIndex {
    pub fn hop(&self) -> usize {
        self.k
    }

    pub fn set(&self, i: usize) -> &[u32] {
        &self.sets[i]
    }

    pub fn node_count(&self) -> usize {
        self.sets.len()
    }
}

pub fn precompute_subgraphs(g: &Graph, k: usize) -> Result<SubgraphIndex> {
    let mut sets = Vec::with_capacity(g.node_count());
    for i in 0..g.node_count() {
        sets.push(g.khop_subgraph(i, k)?);
    }
    Ok(SubgraphIndex { k, sets })
}

// ── Dataset files ────────────────────────────────────────────────────────

/// "u<TAB>v" per line, decimal node ids.
pub fn read_edges_tsv(path: &Path) -> Result<Vec<(u32, u32)>> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::data(format!("cannot open {}: {e}", path.display())))?;
    let mut edges = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let mut it = line.split('\t');
        let (u, v) = match (it.next(), it.next(), it.next()) {
            (Some(u), Some(v), None) => (u, v),
            _ => {
                return Err(Error::data(format!(
                    "{}:{}: expected \"u<TAB>v\"",
                    path.display(),
                    lineno + 1
                )))
            }
        };
        let parse = |s: &str| -> Result<u32> {
            s.parse().map_err(|_| {
                Error::data(format!(
                    "{}:{}: malformed node id {s:?}",
                    path.display(),
                    lineno + 1
                ))
            })
        };
        edges.push((parse(u)?, parse(v)?));
    }
    Ok(edges)
}

const ATTRS_HEADER: &str = "node_id,a0,a1,a2,a3,a4,a5,a6";

/// attrs.csv with header; node ids must cover 0..N exactly once.
pub fn read_attrs_csv(path: &Path) -> Result<Vec<[u8; ATTR_COUNT]>> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::data(format!("cannot open {}: {e}", path.display())))?;
    let mut lines = BufReader::new(file).lines();
    match lines.next() {
        Some(Ok(h)) if h.trim() == ATTRS_HEADER => {}
        _ => {
            return Err(Error::data(format!(
                "{}: missing header \"{ATTRS_HEADER}\"",
                path.display()
            )))
        }
    }
    let mut rows: Vec<(u32, [u8; ATTR_COUNT])> = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != ATTR_COUNT + 1 {
            return Err(Error::data(format!(
                "{}:{}: expected {} fields",
                path.display(),
                lineno + 2,
                ATTR_COUNT + 1
            )));
        }
        let node: u32 = fields[0].parse().map_err(|_| {
            Error::data(format!("{}:{}: malformed node id", path.display(), lineno + 2))
        })?;
        let mut row = [0u8; ATTR_COUNT];
        for (j, f) in fields[1..].iter().enumerate() {
            row[j] = match *f {
                "0" => 0,
                "1" => 1,
                other => {
                    return Err(Error::data(format!(
                        "{}:{}: attribute must be 0/1, got {other:?}",
                        path.display(),
                        lineno + 2
                    )))
                }
            };
        }
        rows.push((node, row));
    }
    let n = rows.len();
    let mut attrs = vec![None; n];
    for (node, row) in rows {
        let slot = attrs.get_mut(node as usize).ok_or_else(|| {
            Error::data(format!("{}: node id {node} outside 0..{n}", path.display()))
        })?;
        if slot.is_some() {
            return Err(Error::data(format!("{}: duplicate node id {node}", path.display())));
        }
        *slot = Some(row);
    }
    Ok(attrs.into_iter().map(|r| r.unwrap()).collect())
}

const LABELS_HEADER: &str = "node_id,label";

/// labels.csv with header; rows are (node_id, 0/1); absent nodes unlabeled.
pub fn read_labels_csv(path: &Path) -> Result<Vec<(u32, u8)>> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::data(format!("cannot open {}: {e}", path.display())))?;
    let mut lines = BufReader::new(file).lines();
    match lines.next() {
        Some(Ok(h)) if h.trim() == LABELS_HEADER => {}
        _ => {
            return Err(Error::data(format!(
                "{}: missing header \"{LABELS_HEADER}\"",
                path.display()
            )))
        }
    }
    let mut out = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let mut it = line.split(',');
        let (node, label) = match (it.next(), it.next(), it.next()) {
            (Some(n), Some(l), None) => (n, l),
            _ => {
                return Err(Error::data(format!(
                    "{}:{}: expected \"node_id,label\"",
                    path.display(),
                    lineno + 2
                )))
            }
        };
        let node: u32 = node.parse().map_err(|_| {
            Error::data(format!("{}:{}: malformed node id", path.display(), lineno + 2))
        })?;
        let label: u8 = match label {
            "0" => 0,
            "1" => 1,
            other => {
                return Err(Error::data(format!(
                    "{}:{}: label must be 0/1, got {other:?}",
                    path.display(),
                    lineno + 2
                )))
            }
        };
        out.push((node, label));
    }
    Ok(out)
}

/// Load the edges.tsv + attrs.csv + labels.csv triple from a directory.
pub fn load_dataset(dir: &Path) -> Result<Graph> {
    let edges = read_edges_tsv(&dir.join("edges.tsv"))?;
    let attrs = read_attrs_csv(&dir.join("attrs.csv"))?;
    let labels = read_labels_csv(&dir.join("labels.csv"))?;
    let n = attrs.len();
    Graph::build(n, &edges, attrs, &labels)
}

/// Dataset loader for scoring: labels.csv may be absent.
pub fn load_dataset_optional_labels(dir: &Path) -> Result<Graph> {
    let edges = read_edges_tsv(&dir.join("edges.tsv"))?;
    let attrs = read_attrs_csv(&dir.join("attrs.csv"))?;
    let labels_path = dir.join("labels.csv");
    let labels = if labels_path.exists() {
        read_labels_csv(&labels_path)?
    } else {
        Vec::new()
    };
    let n = attrs.len();
    Graph::build(n, &edges, attrs, &labels)
}

pub fn write_edges_tsv(path: &Path, edges: &[(u32, u32)]) -> Result<()> {
    let mut out = String::new();
    for &(u, v) in edges {
        out.push_str(&format!("{u}\t{v}\n"));
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn write_attrs_csv(path: &Path, attrs: &[[u8; ATTR_COUNT]]) -> Result<()> {
    let mut out = String::from(ATTRS_HEADER);
    out.push('\n');
    for (i, row) in attrs.iter().enumerate() {
        out.push_str(&format!(
            "{i},{},{},{},{},{},{},{}\n",
            row[0], row[1], row[2], row[3], row[4], row[5], row[6]
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn write_labels_csv(path: &Path, labels: &[(u32, u8)]) -> Result<()> {
    let mut out = String::from(LABELS_HEADER);
    out.push('\n');
    for &(node, y) in labels {
        out.push_str(&format!("{node},{y}\n"));
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// scores.tsv row writer: "node_id<TAB>score<TAB>flag", score to 6 decimals.
pub fn write_scores_tsv(path: &Path, scores: &[f32], flags: &[bool]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for (i, (s, f)) in scores.iter().zip(flags).enumerate() {
        writeln!(w, "{i}\t{s:.6}\t{}", if *f { 1 } else { 0 })?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_scores_tsv(path: &Path) -> Result<Vec<(u32, f64, bool)>> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::data(format!("cannot open {}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::data(format!(
                "{}:{}: expected \"node_id<TAB>score<TAB>flag\"",
                path.display(),
                lineno + 1
            )));
        }
        let node: u32 = fields[0].parse().map_err(|_| {
            Error::data(format!("{}:{}: malformed node id", path.display(), lineno + 1))
        })?;
        let score: f64 = fields[1].parse().map_err(|_| {
            Error::data(format!("{}:{}: malformed score", path.display(), lineno + 1))
        })?;
        let flag = match fields[2] {
            "0" => false,
            "1" => true,
            other => {
                return Err(Error::data(format!(
                    "{}:{}: flag must be 0/1, got {other:?}",
                    path.display(),
                    lineno + 1
                )))
            }
        };
        out.push((node, score, flag));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zero_attrs(n: usize) -> Vec<[u8; ATTR_COUNT]> {
        vec![[0; ATTR_COUNT]; n]
    }

    #[test]
    fn duplicate_and_reversed_edges_merge() {
        let g = Graph::build(2, &[(0, 1), (1, 0), (0, 1)], zero_attrs(2), &[]).unwrap();
        assert_eq!(g.neighbors(0), &[1]);
        assert_eq!(g.neighbors(1), &[0]);
        assert_eq!(g.edge_count(), 1);
    }

    #[test]
    fn empty_edge_list_gives_isolated_nodes() {
        let g = Graph::build(3, &[], zero_attrs(3), &[]).unwrap();
        for i in 0..3 {
            assert_eq!(g.degree(i), 0);
        }
    }

    #[test]
    fn path_degrees() {
        let g = Graph::build(3, &[(0, 1), (1, 2)], zero_attrs(3), &[]).unwrap();
        assert_eq!(
            (g.degree(0), g.degree(1), g.degree(2)),
            (1, 2, 1)
        );
    }

    #[test]
    fn self_loops_are_dropped() {
        let g = Graph::build(2, &[(0, 0), (0, 1)], zero_attrs(2), &[]).unwrap();
        assert_eq!(g.neighbors(0), &[1]);
    }

    #[test]
    fn build_rejects_bad_input() {
        assert!(Graph::build(2, &[(0, 5)], zero_attrs(2), &[]).is_err());
        assert!(Graph::build(1, &[], vec![[2; ATTR_COUNT]], &[]).is_err());
        assert!(Graph::build(1, &[], zero_attrs(1), &[(4, 1)]).is_err());
        assert!(Graph::build(1, &[], zero_attrs(1), &[(0, 3)]).is_err());
    }

    #[test]
    fn khop_examples() {
        let path = Graph::build(3, &[(0, 1), (1, 2)], zero_attrs(3), &[]).unwrap();
        assert_eq!(path.khop_subgraph(1, 1).unwrap(), vec![0, 1, 2]);
        assert_eq!(path.khop_subgraph(0, 2).unwrap(), vec![0, 1, 2]);
        assert_eq!(path.khop_subgraph(0, 1).unwrap(), vec![0, 1]);

        let isolated = Graph::build(2, &[], zero_attrs(2), &[]).unwrap();
        assert_eq!(isolated.khop_subgraph(0, 3).unwrap(), vec![0]);
        assert!(isolated.khop_subgraph(5, 1).is_err());
        assert!(isolated.khop_subgraph(0, 0).is_err());
    }

    #[test]
    fn subgraph_index_matches_khop() {
        // star K_{1,3} with center 0
        let star = Graph::build(4, &[(0, 1), (0, 2), (0, 3)], zero_attrs(4), &[]).unwrap();
        let idx = precompute_subgraphs(&star, 1).unwrap();
        assert_eq!(idx.set(0).len(), 4);
        for leaf in 1..4 {
            assert_eq!(idx.set(leaf).len(), 2);
        }
        // complete graph K4
        let k4 = Graph::build(
            4,
            &[(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)],
            zero_attrs(4),
            &[],
        )
        .unwrap();
        let idx = precompute_subgraphs(&k4, 1).unwrap();
        for i in 0..4 {
            assert_eq!(idx.set(i), &[0, 1, 2, 3]);
            assert_eq!(idx.set(i), k4.khop_subgraph(i, 1).unwrap().as_slice());
        }
    }

    #[test]
    fn rebuild_is_byte_identical_and_order_invariant() {
        let edges = [(3u32, 1u32), (0, 2), (1, 0), (2, 3)];
        let mut permuted = edges;
        permuted.reverse();
        let a = Graph::build(4, &edges, zero_attrs(4), &[]).unwrap();
        let b = Graph::build(4, &permuted, zero_attrs(4), &[]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let edges = vec![(0u32, 1u32), (1, 2)];
        let attrs = vec![[1, 0, 1, 0, 0, 0, 0], [0; 7], [1; 7]];
        let labels = vec![(0u32, 1u8), (2, 0)];
        write_edges_tsv(&dir.path().join("edges.tsv"), &edges).unwrap();
        write_attrs_csv(&dir.path().join("attrs.csv"), &attrs).unwrap();
        write_labels_csv(&dir.path().join("labels.csv"), &labels).unwrap();
        let g = load_dataset(dir.path()).unwrap();
        assert_eq!(g.node_count(), 3);
        assert_eq!(g.attrs(0), &[1, 0, 1, 0, 0, 0, 0]);
        assert_eq!(g.label(0), Some(1));
        assert_eq!(g.label(1), None);
        assert_eq!(g.labeled_nodes(), vec![(0, 1), (2, 0)]);
    }

    #[test]
    fn malformed_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("edges.tsv");
        std::fs::write(&p, "0\t1\n2\n").unwrap();
        assert!(read_edges_tsv(&p).is_err());

        let p = dir.path().join("attrs.csv");
        std::fs::write(&p, "bad header\n").unwrap();
        assert!(read_attrs_csv(&p).is_err());

        std::fs::write(&p, "node_id,a0,a1,a2,a3,a4,a5,a6\n0,0,0,0,0,0,0,2\n").unwrap();
        assert!(read_attrs_csv(&p).is_err());

        let p = dir.path().join("labels.csv");
        std::fs::write(&p, "node_id,label\n0,7\n").unwrap();
        assert!(read_labels_csv(&p).is_err());
    }
}
