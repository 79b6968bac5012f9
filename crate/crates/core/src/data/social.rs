use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::str::FromStr;

use log::warn;

use super::interactions::IdMap;
use crate::error::{Error, Result};

/// What to do with trust lines naming users absent from the ratings.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum UnknownUserPolicy {
    #[default]
    Skip,
    Error,
}

impl FromStr for UnknownUserPolicy {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "skip" => Ok(UnknownUserPolicy::Skip),
            "error" => Ok(UnknownUserPolicy::Error),
            other => Err(format!("unknown trust policy `{other}`")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TrustOptions {
    /// Length `C` of each edge feature vector.
    pub num_feature_types: usize,
    /// Also add the reverse of every edge.
    pub undirected: bool,
    pub unknown_users: UnknownUserPolicy,
}

impl Default for TrustOptions {
    fn default() -> Self {
        Self {
            num_feature_types: 1,
            undirected: false,
            unknown_users: UnknownUserPolicy::Skip,
        }
    }
}

/// Directed user trust graph with a length-`C` frequency vector per edge.
/// Self-loops are never stored.
#[derive(Clone, Debug, PartialEq)]
pub struct SocialGraph {
    out: Vec<Vec<usize>>,
    features: Vec<Vec<Vec<f64>>>,
    num_feature_types: usize,
    skipped_lines: usize,
}

impl SocialGraph {
    pub fn empty(num_users: usize, num_feature_types: usize) -> Self {
        Self {
            out: vec![Vec::new(); num_users],
            features: vec![Vec::new(); num_users],
            num_feature_types,
            skipped_lines: 0,
        }
    }

    /// Builds the graph from `(truster, trustee, features)` triples. Repeated
    /// edges merge by summing features.
    pub fn from_edges<I>(num_users: usize, num_feature_types: usize, edges: I, undirected: bool) -> Self
    where
        I: IntoIterator<Item = (usize, usize, Vec<f64>)>,
    {
        let mut graph = Self::empty(num_users, num_feature_types);
        let mut slot: HashMap<(usize, usize), usize> = HashMap::new();
        let mut insert = |g: &mut SocialGraph, u: usize, v: usize, f: &[f64]| {
            if u == v {
                return;
            }
            match slot.get(&(u, v)) {
                Some(&k) => {
                    for (a, b) in g.features[u][k].iter_mut().zip(f) {
                        *a += b;
                    }
                }
                None => {
                    slot.insert((u, v), g.out[u].len());
                    g.out[u].push(v);
                    g.features[u].push(f.to_vec());
                }
            }
        };
        for (u, v, f) in edges {
            debug_assert_eq!(f.len(), num_feature_types);
            insert(&mut graph, u, v, &f);
            if undirected {
                insert(&mut graph, v, u, &f);
            }
        }
        graph
    }

    pub fn num_users(&self) -> usize {
        self.out.len()
    }

    pub fn num_feature_types(&self) -> usize {
        self.num_feature_types
    }

    /// `F_U(u)`: users trusted by `user`.
    pub fn neighbors(&self, user: usize) -> &[usize] {
        &self.out[user]
    }

    pub fn degree(&self, user: usize) -> usize {
        self.out[user].len()
    }

    /// Feature vector of the `k`-th out-edge of `user`.
    pub fn edge_features(&self, user: usize, k: usize) -> &[f64] {
        &self.features[user][k]
    }

    pub fn feature(&self, from: usize, to: usize) -> Option<&[f64]> {
        self.out[from]
            .iter()
            .position(|&v| v == to)
            .map(|k| self.features[from][k].as_slice())
    }

    pub fn num_edges(&self) -> usize {
        self.out.iter().map(Vec::len).sum()
    }

    /// Lines dropped because they named unknown users.
    pub fn skipped_lines(&self) -> usize {
        self.skipped_lines
    }
}

/// Reads `truster<TAB>trustee[<TAB>f_1 ... f_C]` lines. Without features an
/// edge gets the all-ones vector.
pub fn load_trust(path: &Path, users: &IdMap, options: TrustOptions) -> Result<SocialGraph> {
    let c = options.num_feature_types.max(1);
    let reader = BufReader::new(File::open(path)?);
    let mut edges = Vec::new();
    let mut skipped = 0;
    for (k, line) in reader.lines().enumerate() {
        let line = line?;
        let line_no = k + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        if fields.len() < 2 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: line_no,
                msg: "expected `truster<TAB>trustee`".into(),
            });
        }
        let feats = match fields.len() - 2 {
            0 => vec![1.0; c],
            n if n == c => fields[2..]
                .iter()
                .map(|f| match f.parse::<f64>() {
                    Ok(v) if v >= 0.0 && v.is_finite() => Ok(v),
                    _ => Err(Error::Parse {
                        path: path.to_path_buf(),
                        line: line_no,
                        msg: format!("invalid edge feature `{f}`"),
                    }),
                })
                .collect::<Result<Vec<f64>>>()?,
            n => {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: line_no,
                    msg: format!("expected {c} edge features, found {n}"),
                })
            }
        };
        let lookup = |raw: &str| users.get(raw).ok_or_else(|| raw.to_string());
        match (lookup(fields[0]), lookup(fields[1])) {
            (Ok(u), Ok(v)) => edges.push((u, v, feats)),
            (Err(id), _) | (_, Err(id)) => match options.unknown_users {
                UnknownUserPolicy::Skip => skipped += 1,
                UnknownUserPolicy::Error => {
                    return Err(Error::UnknownUser {
                        path: path.to_path_buf(),
                        line: line_no,
                        id,
                    })
                }
            },
        }
    }
    if skipped > 0 {
        warn!(
            "{}: skipped {skipped} trust lines naming users without ratings",
            path.display()
        );
    }
    let mut graph = SocialGraph::from_edges(users.len(), c, edges, options.undirected);
    graph.skipped_lines = skipped;
    Ok(graph)
}
