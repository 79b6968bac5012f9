use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use crate::autodiff::Tensor;
use crate::data::{
    load_ratings, load_trust, make_batch, sample_negatives, split_train_test, FeedbackMode, IdMap, Interaction,
    InteractionStore, ItemGraph, SocialGraph,
};
use crate::error::{Error, Result};
use crate::metrics::{bucketed_report, write_bucket_csv, write_metrics_csv, BucketDimension, EvalReport, Scored};
use crate::model::{reported_prediction, GatKind, Model, ModelConfig, ParameterSet};
use crate::train::{
    benchmark_step_time, eval_sampling, predict_pairs, stream, write_timing_csv, Purpose, TrainData, TrainReport,
    TrainSink, Trainer,
};

pub const MODEL_FILE: &str = "model.ckpt";
pub const LOG_FILE: &str = "train_log.csv";
pub const CONFIG_FILE: &str = "config.txt";
pub const USER_MAP_FILE: &str = "user_map.tsv";
pub const ITEM_MAP_FILE: &str = "item_map.tsv";
pub const METRICS_FILE: &str = "metrics.csv";
pub const HISTORY_BUCKETS_FILE: &str = "buckets_history.csv";
pub const FRIEND_BUCKETS_FILE: &str = "buckets_friends.csv";
pub const SUMMARY_FILE: &str = "summary.txt";
pub const FAILED_MARKER: &str = "FAILED";

/// Writes through a `.partial` sibling and renames on success, so a failed
/// command never leaves a truncated file under the final name.
pub fn write_atomic(path: &Path, body: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    let tmp = PathBuf::from(tmp);
    let result = (|| {
        let mut w = BufWriter::new(File::create(&tmp)?);
        body(&mut w)?;
        w.flush()?;
        Ok(())
    })();
    match result {
        Ok(()) => {
            fs::rename(&tmp, path)?;
            Ok(())
        }
        Err(e) => {
            let _ = fs::remove_file(&tmp);
            Err(e)
        }
    }
}

fn save_atomic(params: &ParameterSet, path: &Path) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    let tmp = PathBuf::from(tmp);
    if let Err(e) = params.save(&tmp) {
        let _ = fs::remove_file(&tmp);
        return Err(e);
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Loaded data: the full record set, its train/test split and the graphs
/// built from the training half.
pub struct Workspace {
    pub full: InteractionStore,
    pub train: InteractionStore,
    pub test: InteractionStore,
    pub social: SocialGraph,
    pub items: ItemGraph,
}

impl Workspace {
    pub fn load(config: &RunConfig) -> Result<Self> {
        let ratings = config
            .ratings
            .as_ref()
            .ok_or_else(|| Error::config("`ratings` must name a ratings file"))?;
        let full = load_ratings(ratings, config.model.feedback)?;
        if full.is_empty() {
            return Err(Error::config(format!("{} holds no ratings", ratings.display())));
        }
        let (train, test) = split_train_test(
            &full,
            config.train_fraction,
            config.split,
            &mut stream(config.hp.seed, Purpose::Split),
        )?;
        let social = match &config.trust {
            Some(path) => load_trust(path, full.user_ids(), config.trust_options)?,
            None => SocialGraph::empty(full.num_users(), config.trust_options.num_feature_types),
        };
        if social.skipped_lines() > 0 {
            log::warn!("skipped {} trust lines naming unknown users", social.skipped_lines());
        }
        let items = match &config.item_graph_cache {
            Some(path) if path.exists() => ItemGraph::read_cache(path, full.num_items(), config.item_threshold)?,
            Some(path) => {
                let graph = ItemGraph::build(&train, config.item_threshold);
                graph.write_cache(path)?;
                graph
            }
            None => ItemGraph::build(&train, config.item_threshold),
        };
        log::info!(
            "{} users, {} items, {} train / {} test records, {} trust edges, {} item edges",
            full.num_users(),
            full.num_items(),
            train.len(),
            test.len(),
            social.num_edges(),
            items.num_edges()
        );
        Ok(Self {
            full,
            train,
            test,
            social,
            items,
        })
    }

    pub fn model_config(&self, config: &RunConfig) -> ModelConfig {
        config.model_config(self.full.num_users(), self.full.num_items())
    }

    pub fn train_data(&self) -> TrainData<'_> {
        TrainData {
            train: &self.train,
            social: &self.social,
            items: &self.items,
            heldout: None,
        }
    }
}

/// Test pairs to score. Implicit mode adds `eval_negative_ratio` sampled
/// unobserved items per positive.
pub fn evaluation_pairs(ws: &Workspace, config: &RunConfig) -> Vec<Interaction> {
    let mut pairs = ws.test.entries().to_vec();
    if config.model.feedback == FeedbackMode::Implicit {
        let mut rng = stream(config.hp.seed, Purpose::EvalNegatives);
        let negatives = sample_negatives(ws.test.entries(), &ws.full, config.eval_negative_ratio, &mut rng);
        pairs.extend(negatives);
    }
    pairs
}

/// Scores the held-out split and assembles the bucketed report.
pub fn evaluate_model(model: &Model, ws: &Workspace, config: &RunConfig) -> Result<EvalReport> {
    let pairs = evaluation_pairs(ws, config);
    if pairs.is_empty() {
        return Err(Error::Metric("the held-out split is empty".into()));
    }
    let preds = predict_pairs(model, &ws.train_data(), &pairs, &config.hp)?;
    let mode = config.model.feedback;
    let scored: Vec<Scored> = pairs
        .iter()
        .zip(preds)
        .map(|(p, s)| Scored {
            user: p.user,
            item: p.item,
            truth: p.rating,
            score: reported_prediction(s, mode),
        })
        .collect();
    bucketed_report(
        &scored,
        mode,
        config.top_k,
        &ws.train,
        &ws.social,
        &config.history_buckets,
        &config.friend_buckets,
    )
}

/// The four report files: global metrics, both bucket tables and the text
/// summary.
pub fn write_report(report: &EvalReport, dir: &Path) -> Result<()> {
    write_atomic(&dir.join(METRICS_FILE), |w| write_metrics_csv(report, w))?;
    write_atomic(&dir.join(HISTORY_BUCKETS_FILE), |w| {
        write_bucket_csv(report, BucketDimension::History, w)
    })?;
    write_atomic(&dir.join(FRIEND_BUCKETS_FILE), |w| {
        write_bucket_csv(report, BucketDimension::Friends, w)
    })?;
    write_atomic(&dir.join(SUMMARY_FILE), |w| Ok(write!(w, "{report}")?))?;
    Ok(())
}

pub struct TrainOutcome {
    pub report: TrainReport,
    pub eval: EvalReport,
}

/// Trains from scratch, writes the final checkpoint, the id maps, the
/// effective configuration and the held-out report. On failure a `FAILED`
/// marker holding the error is left in the output directory.
pub fn cmd_train(config: &RunConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let dir = &config.output_dir;
    fs::create_dir_all(dir)?;
    let marker = dir.join(FAILED_MARKER);
    let _ = fs::remove_file(&marker);
    let result = train_inner(config);
    if let Err(e) = &result {
        let _ = fs::remove_file(dir.join(MODEL_FILE));
        let _ = fs::write(&marker, format!("{e}\n"));
    }
    result
}

fn train_inner(config: &RunConfig) -> Result<TrainOutcome> {
    let dir = &config.output_dir;
    write_atomic(&dir.join(CONFIG_FILE), |w| Ok(w.write_all(config.dump().as_bytes())?))?;
    let ws = Workspace::load(config)?;
    ws.full.user_ids().write(&dir.join(USER_MAP_FILE))?;
    ws.full.item_ids().write(&dir.join(ITEM_MAP_FILE))?;
    let model = Model::new(ws.model_config(config), &mut stream(config.hp.seed, Purpose::Init))?;
    let log = File::create(dir.join(LOG_FILE))?;
    let mut sink = TrainSink::new(Some(Box::new(BufWriter::new(log))), Some(dir.clone()))?;
    let mut trainer = Trainer::new(model, ws.train_data(), config.hp.clone())?;
    let report = trainer.run(&mut sink)?;
    drop(sink);
    let model = trainer.model;
    save_atomic(&model.params, &dir.join(MODEL_FILE))?;
    log::info!(
        "trained {} epochs ({} steps){}",
        report.epochs,
        report.steps,
        if report.converged { ", converged" } else { "" }
    );
    let eval = evaluate_model(&model, &ws, config)?;
    write_report(&eval, dir)?;
    log::info!("held-out evaluation:\n{eval}");
    Ok(TrainOutcome { report, eval })
}

fn load_model(ws: &Workspace, config: &RunConfig, checkpoint: &Path) -> Result<Model> {
    let model_config = ws.model_config(config);
    let params = ParameterSet::load(&model_config, checkpoint)?;
    Ok(Model {
        config: model_config,
        params,
    })
}

/// Re-scores the held-out split with a stored checkpoint.
pub fn cmd_evaluate(config: &RunConfig, checkpoint: &Path) -> Result<EvalReport> {
    config.validate()?;
    let ws = Workspace::load(config)?;
    let model = load_model(&ws, config, checkpoint)?;
    fs::create_dir_all(&config.output_dir)?;
    let report = evaluate_model(&model, &ws, config)?;
    write_report(&report, &config.output_dir)?;
    Ok(report)
}

/// A requested `(user, item)` pair by raw id.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawPair {
    pub user: String,
    pub item: String,
}

/// Reads `user<TAB>item` lines; blank lines and `#` comments are skipped.
pub fn read_pairs(path: &Path) -> Result<Vec<RawPair>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (k, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut fields = trimmed.split_whitespace();
        match (fields.next(), fields.next()) {
            (Some(user), Some(item)) => out.push(RawPair {
                user: user.to_string(),
                item: item.to_string(),
            }),
            _ => {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: k + 1,
                    msg: "expected `user<TAB>item`".into(),
                })
            }
        }
    }
    Ok(out)
}

const COLD_ID: &str = "\u{0}cold-start";

/// Graphs and model able to score `pairs`. An unknown user or item is
/// mapped to an extra node with no edges whose embedding rows are the mean
/// of the trained rows.
struct Scorer {
    train: InteractionStore,
    social: SocialGraph,
    items: ItemGraph,
    model: Model,
    pairs: Vec<Interaction>,
}

fn mean_row_extended(t: &Tensor) -> Tensor {
    let (rows, cols) = (t.rows(), t.cols());
    let mut data = t.data().to_vec();
    for c in 0..cols {
        let mean = (0..rows).map(|r| t.get(r, c)).sum::<f64>() / rows.max(1) as f64;
        data.push(mean);
    }
    Tensor::new(rows + 1, cols, data).expect("row-extended table")
}

fn scorer(ws: &Workspace, model: Model, raw: &[RawPair]) -> Result<Scorer> {
    let users = ws.full.user_ids();
    let items = ws.full.item_ids();
    let cold_user = raw.iter().any(|p| users.get(&p.user).is_none());
    let cold_item = raw.iter().any(|p| items.get(&p.item).is_none());
    for p in raw {
        if users.get(&p.user).is_none() {
            log::warn!("unknown user `{}`: using the mean embedding", p.user);
        }
        if items.get(&p.item).is_none() {
            log::warn!("unknown item `{}`: using the mean embedding", p.item);
        }
    }
    let cold_user_index = users.len();
    let cold_item_index = items.len();
    let pairs = raw
        .iter()
        .map(|p| Interaction {
            user: users.get(&p.user).unwrap_or(cold_user_index),
            item: items.get(&p.item).unwrap_or(cold_item_index),
            rating: 0.0,
        })
        .collect();
    if !cold_user && !cold_item {
        return Ok(Scorer {
            train: ws.train.clone(),
            social: ws.social.clone(),
            items: ws.items.clone(),
            model,
            pairs,
        });
    }

    let extend = |map: &IdMap, needed: bool| {
        let mut map = map.clone();
        if needed {
            map.get_or_insert(COLD_ID);
        }
        Arc::new(map)
    };
    let user_map = extend(users, cold_user);
    let item_map = extend(items, cold_item);
    let train = InteractionStore::from_entries(ws.train.mode(), user_map.clone(), item_map.clone(), ws.train.entries().to_vec());
    let c = ws.social.num_feature_types();
    let edges: Vec<(usize, usize, Vec<f64>)> = (0..ws.social.num_users())
        .flat_map(|u| {
            ws.social
                .neighbors(u)
                .iter()
                .enumerate()
                .map(move |(k, &v)| (u, v, ws.social.edge_features(u, k).to_vec()))
        })
        .collect();
    let social = SocialGraph::from_edges(user_map.len(), c, edges, false);
    let item_graph = ItemGraph::build(&train, ws.items.threshold());

    let config = ModelConfig {
        num_users: user_map.len(),
        num_items: item_map.len(),
        ..model.config.clone()
    };
    let mut params = ParameterSet::init(&config, &mut stream(0, Purpose::Init))?;
    for (id, _, t) in model.params.iter() {
        let ids = &model.params.ids;
        let user_table = id == ids.user_embedding || id == ids.user_factor;
        let item_table = id == ids.item_embedding || id == ids.item_factor;
        *params.get_mut(id) = if (user_table && cold_user) || (item_table && cold_item) {
            mean_row_extended(t)
        } else {
            t.clone()
        };
    }
    Ok(Scorer {
        train,
        social,
        items: item_graph,
        model: Model { config, params },
        pairs,
    })
}

/// Scores `user<TAB>item` pairs under expectation fusion and writes
/// `user<TAB>item<TAB>score` lines. Explicit scores are clamped to `[1, 5]`.
pub fn cmd_predict(config: &RunConfig, checkpoint: &Path, pairs_path: &Path, out: &Path) -> Result<Vec<f64>> {
    config.validate()?;
    let ws = Workspace::load(config)?;
    let model = load_model(&ws, config, checkpoint)?;
    let raw = read_pairs(pairs_path)?;
    let s = scorer(&ws, model, &raw)?;
    let data = TrainData {
        train: &s.train,
        social: &s.social,
        items: &s.items,
        heldout: None,
    };
    let mode = config.model.feedback;
    let scores: Vec<f64> = predict_pairs(&s.model, &data, &s.pairs, &config.hp)?
        .into_iter()
        .map(|v| reported_prediction(v, mode))
        .collect();
    write_atomic(out, |w| {
        for (p, score) in raw.iter().zip(&scores) {
            writeln!(w, "{}\t{}\t{score}", p.user, p.item)?;
        }
        Ok(())
    })?;
    Ok(scores)
}

/// One exported pair: attention weights of the four GATs keyed by neighbor
/// id (the node's own id for the self slot), per-head policy probabilities
/// over the four feature combinations, and the reported prediction.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct AttentionRecord {
    pub user: String,
    pub item: String,
    pub user_static: BTreeMap<String, f64>,
    pub user_dynamic: BTreeMap<String, f64>,
    pub item_static: BTreeMap<String, f64>,
    pub item_dynamic: BTreeMap<String, f64>,
    pub policy: Vec<[f64; 4]>,
    pub prediction: f64,
}

/// Writes one JSON record per requested pair.
pub fn cmd_export_attention(
    config: &RunConfig,
    checkpoint: &Path,
    pairs_path: &Path,
    out: &Path,
) -> Result<Vec<AttentionRecord>> {
    config.validate()?;
    let ws = Workspace::load(config)?;
    let model = load_model(&ws, config, checkpoint)?;
    let raw = read_pairs(pairs_path)?;
    let s = scorer(&ws, model, &raw)?;
    let users = s.train.user_ids().clone();
    let items = s.train.item_ids().clone();
    let mode = config.model.feedback;
    let options = eval_sampling(&config.hp);
    let mut rng = stream(config.hp.seed, Purpose::Eval);
    let mut records = Vec::with_capacity(raw.len());
    let chunk = config.hp.batch_size.max(1);
    for (pairs, raws) in s.pairs.chunks(chunk).zip(raw.chunks(chunk)) {
        let batch = make_batch(pairs, &s.train, &s.social, &s.items, &options, &mut rng);
        let trace = s.model.predict(&batch)?;
        for (b, rp) in raws.iter().enumerate() {
            let weights = |kind: GatKind| {
                let (block, own, names) = match kind {
                    GatKind::UserStatic | GatKind::UserDynamic => (&batch.user_neighbors, &rp.user, &users),
                    GatKind::ItemStatic | GatKind::ItemDynamic => (&batch.item_neighbors, &rp.item, &items),
                };
                let (idx, mask) = block.row(b);
                let alpha = &trace.attention[kind as usize];
                let mut map = BTreeMap::new();
                for k in 0..idx.len() {
                    if mask[k] {
                        let key = if k == 0 { own.clone() } else { names.raw(idx[k]).to_string() };
                        *map.entry(key).or_insert(0.0) += alpha.get(b, k);
                    }
                }
                map
            };
            records.push(AttentionRecord {
                user: rp.user.clone(),
                item: rp.item.clone(),
                user_static: weights(GatKind::UserStatic),
                user_dynamic: weights(GatKind::UserDynamic),
                item_static: weights(GatKind::ItemStatic),
                item_dynamic: weights(GatKind::ItemDynamic),
                policy: trace
                    .policy
                    .iter()
                    .map(|head| [head.get(b, 0), head.get(b, 1), head.get(b, 2), head.get(b, 3)])
                    .collect(),
                prediction: reported_prediction(trace.predictions[b], mode),
            });
        }
    }
    write_atomic(out, |w| {
        for r in &records {
            serde_json::to_writer(&mut *w, r).map_err(std::io::Error::from)?;
            writeln!(w)?;
        }
        Ok(())
    })?;
    Ok(records)
}

/// Times feedforward steps over the configured `(B, F)` grid.
pub fn cmd_bench(config: &RunConfig, out: &Path) -> Result<()> {
    config.validate()?;
    let ws = Workspace::load(config)?;
    let grid: Vec<(usize, usize)> = config
        .bench_batch_sizes
        .iter()
        .flat_map(|&b| config.bench_sample_sizes.iter().map(move |&f| (b, f)))
        .collect();
    let rows = benchmark_step_time(
        &ws.model_config(config),
        ws.train_data(),
        &config.hp,
        &grid,
        config.bench_steps,
        config.bench_warmup,
    )?;
    write_atomic(out, |w| write_timing_csv(&rows, w))
}
