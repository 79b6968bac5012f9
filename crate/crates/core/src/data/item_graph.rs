use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::interactions::InteractionStore;
use crate::error::{Error, Result};

/// Undirected item graph: `i ~ j` iff more than `threshold` users rated both.
#[derive(Clone, Debug, PartialEq)]
pub struct ItemGraph {
    neighbors: Vec<Vec<usize>>,
    /// Co-rating count `s_ij`, parallel to `neighbors`.
    counts: Vec<Vec<u32>>,
    threshold: u32,
}

impl ItemGraph {
    /// Counts co-ratings by walking each user's history, so the cost is
    /// `Σ_u |R_I(u)|²` rather than `N²`.
    pub fn build(store: &InteractionStore, threshold: u32) -> Self {
        let mut counts: HashMap<(usize, usize), u32> = HashMap::new();
        for u in 0..store.num_users() {
            let mut items = store.user_items(u).to_vec();
            items.sort_unstable();
            for (a, &i) in items.iter().enumerate() {
                for &j in &items[a + 1..] {
                    *counts.entry((i, j)).or_insert(0) += 1;
                }
            }
        }
        Self::from_counts(store.num_items(), threshold, counts)
    }

    fn from_counts(num_items: usize, threshold: u32, counts: HashMap<(usize, usize), u32>) -> Self {
        let mut edges: Vec<(usize, usize, u32)> = counts
            .into_iter()
            .filter(|&(_, s)| s > threshold)
            .map(|((i, j), s)| (i, j, s))
            .collect();
        edges.sort_unstable();
        let mut adj: Vec<Vec<(usize, u32)>> = vec![Vec::new(); num_items];
        for (i, j, s) in edges {
            adj[i].push((j, s));
            adj[j].push((i, s));
        }
        let mut neighbors = Vec::with_capacity(num_items);
        let mut weights = Vec::with_capacity(num_items);
        for mut list in adj {
            list.sort_unstable();
            neighbors.push(list.iter().map(|&(j, _)| j).collect());
            weights.push(list.iter().map(|&(_, s)| s).collect());
        }
        Self {
            neighbors,
            counts: weights,
            threshold,
        }
    }

    pub fn empty(num_items: usize) -> Self {
        Self {
            neighbors: vec![Vec::new(); num_items],
            counts: vec![Vec::new(); num_items],
            threshold: 0,
        }
    }

    pub fn num_items(&self) -> usize {
        self.neighbors.len()
    }

    pub fn threshold(&self) -> u32 {
        self.threshold
    }

    /// `F_I(i)`, sorted ascending.
    pub fn neighbors(&self, item: usize) -> &[usize] {
        &self.neighbors[item]
    }

    pub fn degree(&self, item: usize) -> usize {
        self.neighbors[item].len()
    }

    pub fn similarity(&self, i: usize, j: usize) -> Option<u32> {
        self.neighbors[i]
            .binary_search(&j)
            .ok()
            .map(|k| self.counts[i][k])
    }

    pub fn num_edges(&self) -> usize {
        self.neighbors.iter().map(Vec::len).sum::<usize>() / 2
    }

    /// Dumps every edge once as `i<TAB>j<TAB>s_ij` with `i < j`.
    pub fn write_cache(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "# items={} threshold={}", self.num_items(), self.threshold)?;
        for (i, list) in self.neighbors.iter().enumerate() {
            for (k, &j) in list.iter().enumerate() {
                if i < j {
                    writeln!(w, "{i}\t{j}\t{}", self.counts[i][k])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Loads a cache written by [`ItemGraph::write_cache`], keeping edges with
    /// `s_ij > threshold`. The cache must have been built with a threshold no
    /// larger than the requested one.
    pub fn read_cache(path: &Path, num_items: usize, threshold: u32) -> Result<Self> {
        let reader = BufReader::new(File::open(path)?);
        let mut counts = HashMap::new();
        let parse_err = |line: usize, msg: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        for (k, line) in reader.lines().enumerate() {
            let line = line?;
            let line_no = k + 1;
            let trimmed = line.trim();
            if let Some(header) = trimmed.strip_prefix('#') {
                for kv in header.split_whitespace() {
                    match kv.split_once('=') {
                        Some(("items", n)) if n.parse::<usize>().ok() != Some(num_items) => {
                            return Err(parse_err(line_no, format!("cache covers {n} items, expected {num_items}")));
                        }
                        Some(("threshold", t)) if t.parse::<u32>().map_or(true, |t| t > threshold) => {
                            return Err(parse_err(line_no, format!("cache threshold {t} exceeds {threshold}")));
                        }
                        _ => {}
                    }
                }
                continue;
            }
            if trimmed.is_empty() {
                continue;
            }
            let f: Vec<&str> = trimmed.split_whitespace().collect();
            let parsed = if f.len() == 3 {
                match (f[0].parse::<usize>(), f[1].parse::<usize>(), f[2].parse::<u32>()) {
                    (Ok(i), Ok(j), Ok(s)) if i < num_items && j < num_items && i != j => Some((i.min(j), i.max(j), s)),
                    _ => None,
                }
            } else {
                None
            };
            let (i, j, s) = parsed.ok_or_else(|| parse_err(line_no, "expected `i<TAB>j<TAB>s_ij`".into()))?;
            counts.insert((i, j), s);
        }
        Ok(Self::from_counts(num_items, threshold, counts))
    }
}
