use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FeedbackMode {
    /// Ratings in `[1, 5]`.
    Explicit,
    /// Click indicators in `{0, 1}`.
    Implicit,
}

impl FeedbackMode {
    pub fn as_str(self) -> &'static str {
        match self {
            FeedbackMode::Explicit => "explicit",
            FeedbackMode::Implicit => "implicit",
        }
    }

    pub fn validate(self, rating: f64) -> bool {
        match self {
            FeedbackMode::Explicit => (1.0..=5.0).contains(&rating),
            FeedbackMode::Implicit => rating == 0.0 || rating == 1.0,
        }
    }
}

impl fmt::Display for FeedbackMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FeedbackMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "explicit" => Ok(FeedbackMode::Explicit),
            "implicit" => Ok(FeedbackMode::Implicit),
            other => Err(format!("unknown feedback mode `{other}`")),
        }
    }
}

/// Bijection between raw string ids and dense indices `[0, n)`, in order of
/// first appearance.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct IdMap {
    raw: Vec<String>,
    index: HashMap<String, usize>,
}

impl IdMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get_or_insert(&mut self, raw: &str) -> usize {
        if let Some(&i) = self.index.get(raw) {
            return i;
        }
        let i = self.raw.len();
        self.raw.push(raw.to_string());
        self.index.insert(raw.to_string(), i);
        i
    }

    pub fn get(&self, raw: &str) -> Option<usize> {
        self.index.get(raw).copied()
    }

    pub fn raw(&self, index: usize) -> &str {
        &self.raw[index]
    }

    pub fn len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }

    /// Writes `index<TAB>raw` lines.
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        for (i, raw) in self.raw.iter().enumerate() {
            writeln!(w, "{i}\t{raw}")?;
        }
        w.flush()?;
        Ok(())
    }
}

/// One observed `(user, item, rating)` record.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Interaction {
    pub user: usize,
    pub item: usize,
    pub rating: f64,
}

/// The user-item feedback matrix, kept as a record list plus per-user and
/// per-item adjacency in record order.
#[derive(Clone, Debug)]
pub struct InteractionStore {
    mode: FeedbackMode,
    users: Arc<IdMap>,
    items: Arc<IdMap>,
    entries: Vec<Interaction>,
    per_user: Vec<Vec<usize>>,
    per_item: Vec<Vec<usize>>,
    /// Sorted copy of `per_user`, for membership tests.
    observed: Vec<Vec<usize>>,
}

impl InteractionStore {
    /// Builds a store over an existing id space. Implicit zero ratings are
    /// kept as records but do not enter the adjacency lists.
    pub fn from_entries(
        mode: FeedbackMode,
        users: Arc<IdMap>,
        items: Arc<IdMap>,
        entries: Vec<Interaction>,
    ) -> Self {
        let mut per_user = vec![Vec::new(); users.len()];
        let mut per_item = vec![Vec::new(); items.len()];
        let mut observed: Vec<Vec<usize>> = vec![Vec::new(); users.len()];
        for e in &entries {
            if e.rating == 0.0 {
                continue;
            }
            if let Err(pos) = observed[e.user].binary_search(&e.item) {
                observed[e.user].insert(pos, e.item);
                per_user[e.user].push(e.item);
                per_item[e.item].push(e.user);
            }
        }
        Self {
            mode,
            users,
            items,
            entries,
            per_user,
            per_item,
            observed,
        }
    }

    pub fn empty(mode: FeedbackMode) -> Self {
        Self::from_entries(mode, Arc::default(), Arc::default(), Vec::new())
    }

    pub fn mode(&self) -> FeedbackMode {
        self.mode
    }

    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    pub fn num_items(&self) -> usize {
        self.items.len()
    }

    pub fn user_ids(&self) -> &Arc<IdMap> {
        &self.users
    }

    pub fn item_ids(&self) -> &Arc<IdMap> {
        &self.items
    }

    pub fn entries(&self) -> &[Interaction] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// `R_I(u)`: items with a nonzero rating from `user`, in record order.
    pub fn user_items(&self, user: usize) -> &[usize] {
        &self.per_user[user]
    }

    /// `R_U(i)`: users with a nonzero rating on `item`, in record order.
    pub fn item_users(&self, item: usize) -> &[usize] {
        &self.per_item[item]
    }

    pub fn has_interaction(&self, user: usize, item: usize) -> bool {
        self.observed[user].binary_search(&item).is_ok()
    }

    /// A store over the same id space holding the records at `indices`.
    pub fn subset(&self, indices: &[usize]) -> Self {
        let entries = indices.iter().map(|&k| self.entries[k]).collect();
        Self::from_entries(self.mode, self.users.clone(), self.items.clone(), entries)
    }

    /// Union of two stores sharing an id space.
    pub fn merged(&self, other: &InteractionStore) -> Self {
        let mut entries = self.entries.clone();
        entries.extend_from_slice(&other.entries);
        Self::from_entries(self.mode, self.users.clone(), self.items.clone(), entries)
    }
}

/// Reads `user<TAB>item<TAB>rating` lines (any whitespace separates fields;
/// extra trailing fields are ignored; blank lines and `#` comments skipped).
pub fn load_ratings(path: &Path, mode: FeedbackMode) -> Result<InteractionStore> {
    let reader = BufReader::new(File::open(path)?);
    let mut users = IdMap::new();
    let mut items = IdMap::new();
    let mut entries = Vec::new();
    for (k, line) in reader.lines().enumerate() {
        let line = line?;
        let line_no = k + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut fields = trimmed.split_whitespace();
        let (Some(u), Some(i), Some(r)) = (fields.next(), fields.next(), fields.next()) else {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: line_no,
                msg: "expected `user<TAB>item<TAB>rating`".into(),
            });
        };
        let rating: f64 = r.parse().map_err(|_| Error::Parse {
            path: path.to_path_buf(),
            line: line_no,
            msg: format!("invalid rating `{r}`"),
        })?;
        if !mode.validate(rating) {
            return Err(Error::RatingOutOfRange {
                path: path.to_path_buf(),
                line: line_no,
                value: rating,
                mode: mode.as_str(),
            });
        }
        entries.push(Interaction {
            user: users.get_or_insert(u),
            item: items.get_or_insert(i),
            rating,
        });
    }
    Ok(InteractionStore::from_entries(
        mode,
        Arc::new(users),
        Arc::new(items),
        entries,
    ))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SplitStrategy {
    Random,
    /// Keeps record order: the first records train, the rest test.
    Chronological,
}

impl FromStr for SplitStrategy {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "random" => Ok(SplitStrategy::Random),
            "chronological" => Ok(SplitStrategy::Chronological),
            other => Err(format!("unknown split strategy `{other}`")),
        }
    }
}

impl fmt::Display for SplitStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SplitStrategy::Random => "random",
            SplitStrategy::Chronological => "chronological",
        })
    }
}

/// Partitions the records into train and test, `round(fraction · n)` of them
/// going to train. Both halves keep record order.
pub fn split_train_test<R: Rng + ?Sized>(
    store: &InteractionStore,
    fraction: f64,
    strategy: SplitStrategy,
    rng: &mut R,
) -> Result<(InteractionStore, InteractionStore)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::config(format!(
            "train fraction must lie in (0, 1), got {fraction}"
        )));
    }
    let n = store.len();
    let n_train = (fraction * n as f64).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    if strategy == SplitStrategy::Random {
        order.shuffle(rng);
    }
    let mut train: Vec<usize> = order[..n_train].to_vec();
    let mut test: Vec<usize> = order[n_train..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    Ok((store.subset(&train), store.subset(&test)))
}
