//! Acceptance run: one PASS/FAIL line per criterion with the measured value.
//!
//! Exit status is nonzero when any criterion fails, except criteria listed in
//! `KNOWN_UNMET`, which still print FAIL with their measurement.

mod common;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use danser::autodiff::{
    check_gradients, relative_error, Binary, Gradients, Tape, Tensor, Unary, Var, DEFAULT_STEP,
};
use danser::cli::{cmd_export_attention, cmd_train, evaluate_model, AttentionRecord, RunConfig, Workspace};
use danser::data::{
    planted, split_train_test, FeedbackMode, Interaction, ItemGraph, PlantedData, PlantedSpec, SplitStrategy,
};
use danser::model::{
    policy_probabilities, reported_prediction, ForwardOptions, Model, ModelConfig, ParameterSet, Variant,
};
use danser::train::{
    benchmark_step_time, local_graph_regularizer, policy_gradient_update, policy_surrogate,
    policy_update_with_rewards, predict_pairs, stream, total_loss, HyperParams, Purpose,
    Reduction, TrainData, TrainSink, Trainer,
};

use common::{batch, oracle, random_world, wide_params, world, World};

/// Criteria that do not hold under the required settings; see the README.
const KNOWN_UNMET: &[&str] = &["capacity"];

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self { pass, detail: detail.into() }
    }
}

type Check = fn() -> Outcome;

fn main() -> ExitCode {
    let checks: [(&str, Check); 8] = [
        ("gradients", gradients),
        ("formula-oracles", formula_oracles),
        ("policy-gradient", policy_gradient),
        ("attention-context", attention_context),
        ("capacity", capacity),
        ("ablation", ablation),
        ("complexity", complexity),
        ("determinism", determinism),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut unexpected = 0;
    for (name, check) in checks {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = check();
        let secs = start.elapsed().as_secs_f64();
        let status = if outcome.pass { "PASS" } else { "FAIL" };
        let known = if !outcome.pass && KNOWN_UNMET.contains(&name) { " [known]" } else { "" };
        println!("{status} {name}: {} ({secs:.1}s){known}", outcome.detail);
        if !outcome.pass && known.is_empty() {
            unexpected += 1;
        }
    }
    if unexpected == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

// ---------------------------------------------------------------- gradients

fn gradient_world() -> World {
    let trust: Vec<(usize, usize, Vec<f64>)> = [(0, 1), (0, 2), (1, 0), (2, 3), (3, 4), (4, 0), (4, 2)]
        .into_iter()
        .map(|(a, b)| (a, b, vec![1.0]))
        .collect();
    world(
        5,
        6,
        &[
            (0, 0, 4.0),
            (0, 1, 3.0),
            (1, 1, 5.0),
            (1, 2, 2.0),
            (2, 2, 1.0),
            (2, 3, 4.0),
            (3, 4, 3.0),
            (3, 0, 2.0),
            (4, 5, 5.0),
            (0, 5, 1.0),
            (4, 1, 4.0),
        ],
        &trust,
        FeedbackMode::Explicit,
        0,
    )
}

fn gradient_config(feedback: FeedbackMode) -> ModelConfig {
    ModelConfig {
        num_users: 5,
        num_items: 6,
        embedding_dim: 4,
        gat_dim: 3,
        tower_widths: vec![3, 4, 2],
        heads: 2,
        policy_hidden: 3,
        dropout: 0.0,
        feedback,
        ..ModelConfig::default()
    }
}

fn objective(params: &ParameterSet, config: &ModelConfig, w: &World, pairs: &[Interaction], arms: &[Vec<usize>]) -> (f64, Gradients) {
    let b = batch(w, pairs, 2, 3, 4);
    let mut tape = Tape::new();
    let options = ForwardOptions { training: false, arms: Some(arms) };
    let parts = total_loss(
        &mut tape,
        params,
        config,
        &b,
        (&w.social, &w.items),
        options,
        (0.01, Reduction::Mean),
        &mut ChaCha8Rng::seed_from_u64(0),
    )
    .expect("loss");
    (tape.value(parts.total).item(), tape.backward(parts.total).expect("backward"))
}

fn analytic(grads: &Gradients, id: usize, cols: usize, k: usize) -> f64 {
    if let Some(g) = grads.dense.get(&id) {
        return g.data()[k];
    }
    grads
        .sparse
        .get(&id)
        .and_then(|g| g.rows.get(&(k / cols)).map(|r| r[k % cols]))
        .unwrap_or(0.0)
}

/// Worst relative error of the end-to-end gradient over every parameter
/// coordinate.
fn end_to_end(feedback: FeedbackMode) -> (f64, usize) {
    let w = gradient_world();
    let config = gradient_config(feedback);
    let params = wide_params(&config, &mut ChaCha8Rng::seed_from_u64(3), 0.8);
    let pairs: Vec<Interaction> = w
        .store
        .entries()
        .iter()
        .map(|p| Interaction {
            rating: match feedback {
                FeedbackMode::Explicit => p.rating,
                FeedbackMode::Implicit => f64::from(p.rating > 2.5),
            },
            ..*p
        })
        .collect();
    let arms: Vec<Vec<usize>> = (0..config.heads)
        .map(|h| (0..pairs.len()).map(|r| (r + 3 * h) % 4).collect())
        .collect();
    let (_, grads) = objective(&params, &config, &w, &pairs, &arms);
    let mut worst: f64 = 0.0;
    let mut coordinates = 0;
    for (id, _, t) in params.iter() {
        for k in 0..t.len() {
            let mut plus = params.clone();
            plus.get_mut(id).data_mut()[k] += DEFAULT_STEP;
            let mut minus = params.clone();
            minus.get_mut(id).data_mut()[k] -= DEFAULT_STEP;
            let numeric = (objective(&plus, &config, &w, &pairs, &arms).0
                - objective(&minus, &config, &w, &pairs, &arms).0)
                / (2.0 * DEFAULT_STEP);
            worst = worst.max(relative_error(analytic(&grads, id, t.cols(), k), numeric));
            coordinates += 1;
        }
    }
    (worst, coordinates)
}

fn random_tensor(rows: usize, cols: usize, range: std::ops::Range<f64>, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(rows, cols, |_, _| rng.gen_range(range.clone()))
}

fn project(tape: &mut Tape, out: Var, seed: u64) -> danser::Result<Var> {
    let [r, c] = tape.shape(out);
    let w = tape.constant(random_tensor(r, c, -1.0..1.0, &mut ChaCha8Rng::seed_from_u64(seed)));
    let prod = tape.mul(out, w)?;
    Ok(tape.sum(prod))
}

type OpFn = Box<dyn Fn(&mut Tape, &[Var]) -> danser::Result<Var>>;

/// Worst per-op relative error and the op it came from.
fn per_op() -> (f64, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut ops: Vec<(String, OpFn, Vec<Tensor>)> = Vec::new();
    let m = |r, c, rng: &mut ChaCha8Rng| random_tensor(r, c, -1.0..1.0, rng);
    ops.push(("matmul".into(), Box::new(|t, v| t.matmul(v[0], v[1])), vec![m(3, 4, &mut rng), m(4, 2, &mut rng)]));
    ops.push(("transpose".into(), Box::new(|t, v| Ok(t.transpose(v[0]))), vec![m(3, 2, &mut rng)]));
    ops.push((
        "linear".into(),
        Box::new(|t, v| t.linear(v[0], v[1], v[2])),
        vec![m(4, 3, &mut rng), m(2, 3, &mut rng), m(1, 2, &mut rng)],
    ));
    for f in [
        Unary::Identity,
        Unary::Relu,
        Unary::LeakyRelu(0.2),
        Unary::Tanh,
        Unary::Sigmoid,
        Unary::Abs,
        Unary::Square,
        Unary::Clamp(-0.5, 0.5),
    ] {
        ops.push((format!("{f:?}"), Box::new(move |t, v| Ok(t.unary(f, v[0]))), vec![m(3, 4, &mut rng)]));
    }
    ops.push((
        "Ln".into(),
        Box::new(|t, v| Ok(t.unary(Unary::Ln, v[0]))),
        vec![random_tensor(3, 4, 0.5..2.0, &mut rng)],
    ));
    for op in [Binary::Add, Binary::Sub, Binary::Mul] {
        for cols in [(3, 4), (1, 4), (1, 1)] {
            ops.push((
                format!("{op:?} {}x{}", cols.0, cols.1),
                Box::new(move |t, v| t.binary(op, v[0], v[1])),
                vec![m(3, 4, &mut rng), m(cols.0, cols.1, &mut rng)],
            ));
        }
    }
    ops.push(("scale".into(), Box::new(|t, v| Ok(t.scale(v[0], -1.7))), vec![m(2, 3, &mut rng)]));
    ops.push(("concat".into(), Box::new(|t, v| t.concat(v[0], v[1])), vec![m(3, 2, &mut rng), m(3, 4, &mut rng)]));
    ops.push(("reshape".into(), Box::new(|t, v| t.reshape(v[0], 2, 6)), vec![m(3, 4, &mut rng)]));
    let mask: Vec<bool> = (0..15).map(|i| i % 5 != 3 && i != 7).collect();
    ops.push((
        "softmax_masked".into(),
        Box::new(move |t, v| t.softmax_masked(v[0], &mask)),
        vec![m(3, 5, &mut rng)],
    ));
    let pool_mask = [true, false, true, true, true, false];
    ops.push((
        "max_pool_groups".into(),
        Box::new(move |t, v| t.max_pool_groups(v[0], &pool_mask, 3)),
        vec![m(6, 3, &mut rng)],
    ));
    ops.push((
        "max_pool_columns".into(),
        Box::new(move |t, v| t.max_pool_columns(v[0], &pool_mask)),
        vec![m(6, 3, &mut rng)],
    ));
    ops.push((
        "gather_rows".into(),
        Box::new(|t, v| t.gather_rows(v[0], &[5, 0, 0, 2, 3, 1])),
        vec![m(6, 4, &mut rng)],
    ));
    ops.push((
        "group_weighted_sum".into(),
        Box::new(|t, v| t.group_weighted_sum(v[0], v[1])),
        vec![m(2, 3, &mut rng), m(6, 4, &mut rng)],
    ));
    ops.push(("sum".into(), Box::new(|t, v| Ok(t.sum(v[0]))), vec![m(3, 3, &mut rng)]));

    let mut worst = (0.0, String::new());
    for (k, (name, f, inputs)) in ops.into_iter().enumerate() {
        let seed = 100 + k as u64;
        let report = check_gradients(
            |t, v| {
                let y = f(t, v)?;
                project(t, y, seed)
            },
            &inputs,
            DEFAULT_STEP,
            1e-6,
        )
        .expect("gradient check");
        if report.max_relative_error >= worst.0 {
            worst = (report.max_relative_error, name);
        }
    }
    worst
}

fn gradients() -> Outcome {
    let (explicit, coords) = end_to_end(FeedbackMode::Explicit);
    let (implicit, _) = end_to_end(FeedbackMode::Implicit);
    let (op_err, op_name) = per_op();
    let e2e = explicit.max(implicit);
    Outcome::new(
        e2e < 1e-3 && op_err < 1e-6,
        format!(
            "end-to-end max rel err {e2e:.2e} over {coords} coordinates per mode (< 1e-3); \
             per-op max {op_err:.2e} at {op_name} (< 1e-6)"
        ),
    )
}

// ---------------------------------------------------------- formula oracles

fn oracle_config(w: &World, variant: Variant, mode: FeedbackMode, c: usize, dims: (usize, usize)) -> ModelConfig {
    ModelConfig {
        num_users: w.store.num_users(),
        num_items: w.store.num_items(),
        embedding_dim: dims.0,
        gat_dim: dims.1,
        tower_widths: vec![dims.1, 5, 3],
        heads: 3,
        policy_hidden: 4,
        num_feature_types: c,
        feedback: mode,
        ..ModelConfig::default()
    }
    .with_variant(variant)
}

/// Largest deviation between the model and the reference over one random
/// instance: prediction, every attention row and every tower output.
fn forward_deviation(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let variant = Variant::ALL[(seed as usize) % Variant::ALL.len()];
    let mode = if rng.gen() { FeedbackMode::Explicit } else { FeedbackMode::Implicit };
    let c = rng.gen_range(1..=3);
    let w = random_world(&mut rng, 10, 10, c, mode);
    let dims = match variant {
        Variant::DualEmb | Variant::UserGat | Variant::ItemGat => (4, 4),
        _ => (rng.gen_range(2..=5), rng.gen_range(2..=5)),
    };
    let config = oracle_config(&w, variant, mode, c, dims);
    let params = wide_params(&config, &mut rng, 1.0);
    let b = batch(&w, w.store.entries(), rng.gen_range(1..=4), rng.gen_range(1..=4), seed);
    let model = Model { config: config.clone(), params };
    let trace = model.predict(&b).expect("forward");
    let mut worst: f64 = 0.0;
    for k in 0..b.len() {
        let o = oracle::pair_forward(&model.params, &config, &b, k);
        worst = worst.max((trace.predictions[k] - o.prediction).abs());
        for g in 0..4 {
            for (s, &a) in o.attention[g].iter().enumerate() {
                worst = worst.max((trace.attention[g].get(k, s) - a).abs());
            }
        }
        for t in 0..4 {
            for (col, &v) in o.towers[t].iter().enumerate() {
                worst = worst.max((trace.towers[t].get(k, col) - v).abs());
            }
        }
    }
    worst
}

fn formula_oracles() -> Outcome {
    let cases = 200u64;
    let forward = (0..cases).map(forward_deviation).fold(0.0, f64::max);

    let mut reg: f64 = 0.0;
    let mut graph_mismatches = 0;
    for seed in 0..cases {
        let mut rng = ChaCha8Rng::seed_from_u64(10_000 + seed);
        let w = random_world(&mut rng, 10, 10, 1, FeedbackMode::Explicit);
        let config = oracle_config(&w, Variant::Danser, FeedbackMode::Explicit, 1, (3, 3));
        let params = wide_params(&config, &mut rng, 1.0);
        let b = batch(&w, w.store.entries(), rng.gen_range(1..=4), 3, seed);
        let mut tape = Tape::new();
        let r = local_graph_regularizer(&mut tape, &params, &b, &w.social, &w.items).expect("regularizer");
        reg = reg.max((tape.value(r).item() - oracle::regularizer(&params, &b, &w.social, &w.items)).abs());

        let expect = oracle::item_graph(&w.store, w.items.threshold());
        for (i, want) in expect.iter().enumerate() {
            let mut got = w.items.neighbors(i).to_vec();
            got.sort_unstable();
            if &got != want {
                graph_mismatches += 1;
            }
        }
    }
    Outcome::new(
        forward < 1e-9 && reg < 1e-12 && graph_mismatches == 0,
        format!(
            "{cases} instances each; forward max abs dev {forward:.1e} (< 1e-9), \
             regularizer {reg:.1e} (< 1e-12), item-graph mismatching rows {graph_mismatches}"
        ),
    )
}

// ---------------------------------------------------------- policy gradient

fn surrogate_value(params: &ParameterSet, users: &[usize], items: &[usize], head: usize, rewards: &Tensor) -> f64 {
    let mut tape = Tape::new();
    let s = policy_surrogate(&mut tape, params, users, items, head, rewards).expect("surrogate");
    tape.value(s).item()
}

fn policy_direction_error() -> f64 {
    let config = gradient_config(FeedbackMode::Explicit);
    let params = wide_params(&config, &mut ChaCha8Rng::seed_from_u64(8), 0.8);
    let users = [0, 1, 4, 2, 3];
    let items = [3, 0, 5, 5, 1];
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let rewards = Tensor::from_fn(users.len(), 4, |_, _| -rng.gen_range(0.0..3.0));
    let zeta = 0.01;
    let mut worst: f64 = 0.0;
    for head in 0..config.heads {
        let mut updated = params.clone();
        policy_update_with_rewards(&mut updated, &users, &items, head, &rewards, zeta).expect("update");
        for id in params.policy_ids(head) {
            let t = params.get(id);
            for k in 0..t.len() {
                let direction = (updated.get(id).data()[k] - t.data()[k]) / zeta;
                let mut plus = params.clone();
                plus.get_mut(id).data_mut()[k] += 1e-6;
                let mut minus = params.clone();
                minus.get_mut(id).data_mut()[k] -= 1e-6;
                let numeric = (surrogate_value(&plus, &users, &items, head, &rewards)
                    - surrogate_value(&minus, &users, &items, head, &rewards))
                    / 2e-6;
                worst = worst.max(relative_error(direction, numeric));
            }
        }
    }
    worst
}

/// Towers emit constants chosen so that arm 0 reproduces every rating
/// exactly and the other arms miss by 1, 2 and 3.
fn toy_bandit() -> (ParameterSet, ModelConfig, danser::data::Batch) {
    let w = gradient_world();
    let config = gradient_config(FeedbackMode::Explicit);
    let mut params = wide_params(&config, &mut ChaCha8Rng::seed_from_u64(12), 0.8);
    let ids = params.ids.clone();
    let rating = 4.0;
    for (a, offset) in [0.0, 1.0, -2.0, 3.0].into_iter().enumerate() {
        let last = ids.towers[a].last().expect("tower layer");
        let [r, c] = params.get(last.weight).shape();
        debug_assert_eq!(params.get(last.bias).cols(), r);
        *params.get_mut(last.weight) = Tensor::zeros(r, c);
        *params.get_mut(last.bias) = Tensor::from_fn(1, r, |_, k| if k == 0 { rating + offset } else { 0.0 });
    }
    let width = params.get(ids.output.weight).cols();
    *params.get_mut(ids.output.weight) = Tensor::from_fn(1, width, |_, k| if k == 0 { 1.0 } else { 0.0 });
    *params.get_mut(ids.output.bias) = Tensor::scalar(0.0);
    let pairs: Vec<Interaction> = w.store.entries().iter().map(|p| Interaction { rating, ..*p }).collect();
    let b = batch(&w, &pairs, 2, 3, 5);
    (params, config, b)
}

fn mean_first_arm(params: &ParameterSet, users: &[usize], items: &[usize]) -> f64 {
    let probs = policy_probabilities(params, users, items).expect("policy");
    let n = (probs.len() * users.len()) as f64;
    probs.iter().map(|p| (0..users.len()).map(|r| p.get(r, 0)).sum::<f64>()).sum::<f64>() / n
}

fn policy_gradient() -> Outcome {
    let direction = policy_direction_error();
    let (mut params, config, b) = toy_bandit();
    let (users, items) = (b.users(), b.items());
    let mut trajectory = vec![mean_first_arm(&params, &users, &items)];
    for _ in 0..100 {
        for head in 0..config.heads {
            policy_gradient_update(&mut params, &config, &b, head, 0.01).expect("policy update");
        }
        trajectory.push(mean_first_arm(&params, &users, &items));
    }
    let increasing = trajectory.windows(2).all(|w| w[1] > w[0]);
    Outcome::new(
        direction < 1e-4 && increasing,
        format!(
            "update direction max rel err {direction:.2e} (< 1e-4); p(arm 1) {:.4} -> {:.4} over 100 updates, \
             strictly increasing: {increasing}",
            trajectory[0],
            trajectory[100]
        ),
    )
}

// -------------------------------------------------------- attention context

fn write_lines(path: &Path, lines: impl IntoIterator<Item = String>) {
    let body: String = lines.into_iter().fold(String::new(), |mut s, l| {
        let _ = writeln!(s, "{l}");
        s
    });
    fs::write(path, body).expect("write fixture");
}

fn max_difference(a: &BTreeMap<String, f64>, b: &BTreeMap<String, f64>) -> f64 {
    a.keys()
        .chain(b.keys())
        .map(|k| (a.get(k).copied().unwrap_or(0.0) - b.get(k).copied().unwrap_or(0.0)).abs())
        .fold(0.0, f64::max)
}

/// Per owner: whether the static maps agree exactly across the owner's
/// records and the largest spread among its dynamic maps.
fn context_spread<'a>(
    records: &'a [AttentionRecord],
    owner: impl Fn(&AttentionRecord) -> &str,
    maps: impl Fn(&'a AttentionRecord) -> (&'a BTreeMap<String, f64>, &'a BTreeMap<String, f64>),
) -> Vec<(bool, f64)> {
    let mut groups: BTreeMap<&str, Vec<&AttentionRecord>> = BTreeMap::new();
    for r in records {
        groups.entry(owner(r)).or_default().push(r);
    }
    groups
        .values()
        .map(|rs| {
            let (first_static, _) = maps(rs[0]);
            let constant = rs.iter().all(|r| maps(r).0 == first_static);
            let mut spread: f64 = 0.0;
            for a in rs {
                for b in rs {
                    spread = spread.max(max_difference(maps(a).1, maps(b).1));
                }
            }
            (constant, spread)
        })
        .collect()
}

fn attention_context() -> Outcome {
    let dir = tempfile::tempdir().expect("tempdir");
    let root = dir.path();
    let ratings = [
        (0, 0, 5), (0, 1, 3), (0, 2, 4), (1, 1, 2), (1, 2, 5), (1, 3, 1),
        (2, 0, 4), (2, 2, 2), (2, 3, 5), (3, 0, 1), (3, 1, 4), (3, 3, 3),
    ];
    write_lines(&root.join("ratings.tsv"), ratings.iter().map(|(u, i, r)| format!("u{u}\ti{i}\t{r}")));
    let trust = [(0, 1), (0, 2), (1, 0), (1, 3), (2, 3), (2, 0), (3, 1), (3, 2)];
    write_lines(&root.join("trust.tsv"), trust.iter().map(|(a, b)| format!("u{a}\tu{b}")));
    write_lines(
        &root.join("pairs.tsv"),
        (0..4).flat_map(|u| (0..4).map(move |i| format!("u{u}\ti{i}"))),
    );

    let mut config = RunConfig::default();
    config
        .apply_text(
            "train_fraction = 0.9\nitem_threshold = 0\nepochs = 5\nbatch_size = 4\nsample_size = 4\n\
             truncation = 4\npolicy_period = 3\nembedding_init = 0.5\ncheckpoint_every = 0\n",
            "attention",
        )
        .expect("settings");
    config.ratings = Some(root.join("ratings.tsv"));
    config.trust = Some(root.join("trust.tsv"));
    config.output_dir = root.join("run");
    if let Err(e) = cmd_train(&config) {
        return Outcome::new(false, format!("training failed: {e}"));
    }
    let records = match cmd_export_attention(
        &config,
        &root.join("run/model.ckpt"),
        &root.join("pairs.tsv"),
        &root.join("attention.jsonl"),
    ) {
        Ok(r) => r,
        Err(e) => return Outcome::new(false, format!("export failed: {e}")),
    };
    let users = context_spread(&records, |r| &r.user, |r| (&r.user_static, &r.user_dynamic));
    let items = context_spread(&records, |r| &r.item, |r| (&r.item_static, &r.item_dynamic));
    let static_constant = users.iter().chain(&items).all(|(c, _)| *c);
    let min_user = users.iter().map(|(_, s)| *s).fold(f64::INFINITY, f64::min);
    let min_item = items.iter().map(|(_, s)| *s).fold(f64::INFINITY, f64::min);
    Outcome::new(
        records.len() == 16 && static_constant && min_user > 1e-6 && min_item > 1e-6,
        format!(
            "{} records; static maps identical across contexts: {static_constant}; \
             smallest dynamic spread per user {min_user:.2e}, per item {min_item:.2e} (> 1e-6)",
            records.len()
        ),
    )
}

// ----------------------------------------------------------------- capacity

fn capacity() -> Outcome {
    let spec = PlantedSpec {
        num_users: 20,
        num_items: 30,
        interactions_per_user: 6,
        mode: FeedbackMode::Explicit,
        ..PlantedSpec::default()
    };
    let data = planted(&spec, &mut stream(0, Purpose::Init));
    let items = ItemGraph::build(&data.store, 1);
    let hp = HyperParams {
        lambda: 0.0,
        epochs: 500,
        checkpoint_every: 0,
        // the full epoch budget runs; no early stop
        patience: 500,
        ..HyperParams::default()
    };
    let config = ModelConfig {
        num_users: 20,
        num_items: 30,
        feedback: FeedbackMode::Explicit,
        ..ModelConfig::default()
    };
    let td = TrainData { train: &data.store, social: &data.social, items: &items, heldout: None };
    let model = Model::new(config, &mut stream(hp.seed, Purpose::Init)).expect("model");
    let mut trainer = Trainer::new(model, td, hp.clone()).expect("trainer");
    let report = trainer.run(&mut TrainSink::default()).expect("training");
    let pairs = data.store.entries();
    let preds = predict_pairs(&trainer.model, &td, pairs, &hp).expect("predict");
    let scores: Vec<f64> = preds.iter().map(|&p| reported_prediction(p, FeedbackMode::Explicit)).collect();
    let truth: Vec<f64> = pairs.iter().map(|p| p.rating).collect();
    let mae = danser::metrics::mae(&scores, &truth).expect("mae");
    let mean = truth.iter().sum::<f64>() / truth.len() as f64;
    let constant = truth.iter().map(|t| (t - mean).abs()).sum::<f64>() / truth.len() as f64;
    Outcome::new(
        mae < 0.05,
        format!(
            "training MAE {mae:.4} after {} epochs (< 0.05); MAE of the mean-rating predictor {constant:.4}",
            report.epochs
        ),
    )
}

// ----------------------------------------------------------------- ablation

fn ablation_auc(variant: Variant, seed: u64) -> f64 {
    let spec = PlantedSpec {
        interactions_per_user: 4,
        mode: FeedbackMode::Implicit,
        ..PlantedSpec::default()
    };
    let data: PlantedData = planted(&spec, &mut stream(seed, Purpose::Init));
    let mut config = RunConfig::default();
    config
        .apply_text(
            "feedback = implicit\noptimizer = adam\nlr = 0.01\nembedding_init = 0.5\nepochs = 20\n\
             patience = 20\ncheckpoint_every = 0\neval_negative_ratio = 10\n",
            "ablation",
        )
        .expect("settings");
    config.variant = variant;
    config.hp.seed = seed;
    let (train, test) =
        split_train_test(&data.store, config.train_fraction, SplitStrategy::Random, &mut stream(seed, Purpose::Split))
            .expect("split");
    let items = ItemGraph::build(&train, config.item_threshold);
    let ws = Workspace { full: data.store.clone(), train, test, social: data.social, items };
    let model_config = config.model_config(ws.full.num_users(), ws.full.num_items());
    let model = Model::new(model_config, &mut stream(seed, Purpose::Init)).expect("model");
    let mut trainer = Trainer::new(model, ws.train_data(), config.hp.clone()).expect("trainer");
    trainer.run(&mut TrainSink::default()).expect("training");
    let report = evaluate_model(&trainer.model, &ws, &config).expect("evaluation");
    report.metrics["auc"]
}

fn ablation() -> Outcome {
    let seeds = 0..5u64;
    let full: Vec<f64> = seeds.clone().map(|s| ablation_auc(Variant::Danser, s)).collect();
    let base: Vec<f64> = seeds.map(|s| ablation_auc(Variant::DualEmb, s)).collect();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let gap = mean(&full) - mean(&base);
    let list = |v: &[f64]| v.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(" ");
    Outcome::new(
        gap >= 0.02,
        format!(
            "mean AUC danser {:.4} [{}] vs dualemb {:.4} [{}]; gap {gap:.4} (>= 0.02)",
            mean(&full),
            list(&full),
            mean(&base),
            list(&base)
        ),
    )
}

// --------------------------------------------------------------- complexity

fn complexity() -> Outcome {
    let spec = PlantedSpec {
        interactions_per_user: 10,
        friends_per_user: 30,
        ..PlantedSpec::default()
    };
    let data = planted(&spec, &mut stream(0, Purpose::Init));
    let items = ItemGraph::build(&data.store, 1);
    let td = TrainData { train: &data.store, social: &data.social, items: &items, heldout: None };
    let config = ModelConfig {
        num_users: spec.num_users,
        num_items: spec.num_items,
        feedback: FeedbackMode::Implicit,
        ..ModelConfig::default()
    };
    let base = HyperParams::default();
    let (b, f) = (32, 10);
    let grid = [(b, f), (2 * b, f), (b, 2 * f)];
    // rounds interleave the grid points so drifts in machine load hit all three
    let mut batch_ratios = Vec::new();
    let mut sample_ratios = Vec::new();
    let mut base_times = Vec::new();
    for _ in 0..5 {
        let rows = match benchmark_step_time(&config, td, &base, &grid, 11, 2) {
            Ok(rows) => rows,
            Err(e) => return Outcome::new(false, format!("benchmark failed: {e}")),
        };
        base_times.push(rows[0].median_ms);
        batch_ratios.push(rows[1].median_ms / rows[0].median_ms);
        sample_ratios.push(rows[2].median_ms / rows[0].median_ms);
    }
    let median = |v: &mut Vec<f64>| {
        v.sort_by(f64::total_cmp);
        v[v.len() / 2]
    };
    let t0 = median(&mut base_times);
    let batch_ratio = median(&mut batch_ratios);
    let sample_ratio = median(&mut sample_ratios);
    let within = |r: f64| (1.5..=2.8).contains(&r);
    Outcome::new(
        within(batch_ratio) && within(sample_ratio),
        format!(
            "median step {t0:.2} ms at B={b} F={f}; median over 5 rounds of the step-time ratio: \
             doubling B x{batch_ratio:.2}, doubling F x{sample_ratio:.2} (in [1.5, 2.8])"
        ),
    )
}

// -------------------------------------------------------------- determinism

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().expect("tempdir");
    let root = dir.path();
    let spec = PlantedSpec {
        num_users: 40,
        num_items: 30,
        ..PlantedSpec::default()
    };
    let data = planted(&spec, &mut stream(5, Purpose::Init));
    let users = data.store.user_ids().clone();
    let item_ids = data.store.item_ids().clone();
    write_lines(
        &root.join("clicks.tsv"),
        data.store
            .entries()
            .iter()
            .map(|p| format!("{}\t{}\t1", users.raw(p.user), item_ids.raw(p.item))),
    );
    write_lines(
        &root.join("trust.tsv"),
        (0..spec.num_users).flat_map(|u| {
            let users = users.clone();
            data.social
                .neighbors(u)
                .iter()
                .map(move |&v| format!("{}\t{}", users.raw(u), users.raw(v)))
                .collect::<Vec<_>>()
        }),
    );
    let run = |name: &str| -> danser::Result<Vec<(String, Vec<u8>)>> {
        let mut config = RunConfig::default();
        config.apply_text(
            "feedback = implicit\nepochs = 4\nbatch_size = 16\nsample_size = 5\ntruncation = 6\n\
             policy_period = 3\ncheckpoint_every = 1\nseed = 11\n",
            "determinism",
        )?;
        config.ratings = Some(root.join("clicks.tsv"));
        config.trust = Some(root.join("trust.tsv"));
        config.output_dir = root.join(name);
        cmd_train(&config)?;
        let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(&config.output_dir)?
            .filter_map(|e| e.ok())
            .map(|e| e.file_name().to_string_lossy().into_owned())
            .filter(|n| n.ends_with(".ckpt") || n == "train_log.csv")
            .map(|n| {
                let bytes = fs::read(config.output_dir.join(&n)).unwrap_or_default();
                (n, bytes)
            })
            .collect();
        files.sort();
        Ok(files)
    };
    let (a, b) = match (run("a"), run("b")) {
        (Ok(a), Ok(b)) => (a, b),
        (Err(e), _) | (_, Err(e)) => return Outcome::new(false, format!("training failed: {e}")),
    };
    let checkpoints = a.iter().filter(|(n, _)| n.ends_with(".ckpt")).count();
    Outcome::new(
        a == b && checkpoints >= 2,
        format!(
            "{checkpoints} checkpoints and the training log compared byte for byte: {}",
            if a == b { "identical" } else { "different" }
        ),
    )
}
