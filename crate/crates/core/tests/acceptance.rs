//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any failed. Pass criterion numbers as arguments to run a
//! subset, e.g. `cargo test --test acceptance -- 3 7`.

use std::f64::consts::PI;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::Rng as _;

use bicorec::autograd::{catalog_cross_entropy, CeTarget, Graph, Matrix};
use bicorec::corpus::{build_corpus, corpus_stats, leave_one_out, sparsity, AuxTable, Interaction, UserSequence, PAD};
use bicorec::evaluation::{
    accuracy_metrics, ndcg_term, paired_ttest, rank_target, rank_users, top_n, EvalOptions, HeldOut,
};
use bicorec::experiments::synthetic::{interactions_tsv, synthetic_aux_tsv, write_text};
use bicorec::experiments::{
    generate_synthetic, motif_interactions, network_scorer, report_ndcg, run_evaluate, run_train, train_and_evaluate,
    train_model, Dataset, ExperimentConfig, Model, SyntheticSpec, Variant,
};
use bicorec::network::{coattend, slot, Binder, Mode, Network, NetworkConfig, NetworkParameters};
use bicorec::popularity::{compute_popularity_scores, partition_items, ratio_curve};
use bicorec::rng::{substream, Rng};
use bicorec::stats::spearman;
use bicorec::training::{
    build_targets, consistency_loss, decode_state, encode_state, supervised_loss, total_loss, train_epoch,
    DualTrainerState, TrainingData,
};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit: Duration) -> Result<(), String> {
    ensure(elapsed < limit, || format!("took {elapsed:.1?}, limit {limit:?}"))
}

fn random_sequence(rng: &mut Rng, user: usize, n: usize, items: usize) -> UserSequence {
    let real = rng.gen_range(1..=n);
    let list: Vec<usize> = (0..real).map(|_| rng.gen_range(1..=items)).collect();
    UserSequence::from_items(user, &list, n)
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = substream(1, "tfidf");
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let users = rng.gen_range(1..=20);
        let n = rng.gen_range(1..=10);
        let items = rng.gen_range(1..=15);
        let seqs: Vec<UserSequence> = (0..users).map(|u| random_sequence(&mut rng, u, n, items)).collect();
        let scores = compute_popularity_scores(&seqs, items);
        for (u, seq) in seqs.iter().enumerate() {
            for t in 0..n {
                let v = seq.positions[t];
                let expect = if v == PAD {
                    0.0
                } else {
                    let mut hits = 0.0;
                    let mut real = 0.0;
                    for &w in &seq.positions {
                        if w != PAD {
                            real += 1.0;
                            if w == v {
                                hits += 1.0;
                            }
                        }
                    }
                    let mut containing = 0.0;
                    for other in &seqs {
                        if other.positions.contains(&v) {
                            containing += 1.0;
                        }
                    }
                    hits / real * (users as f64 / containing).ln()
                };
                worst = worst.max((scores.rows[u][t] - expect).abs());
            }
        }
    }
    ensure(worst <= 1e-9, || format!("max abs error {worst:e}"))?;
    within(start.elapsed(), Duration::from_secs(10))?;
    Ok(format!("max abs error {worst:e} in {:.2?}", start.elapsed()))
}

fn criterion_2() -> Outcome {
    let (users, items, interactions) = (6041usize, 3261usize, 998_539usize);
    let direct = 100.0 * sparsity(users, items, interactions);
    // the same counts through corpus construction: every item appears, ids are strings
    let mut rows = Vec::with_capacity(interactions);
    for k in 0..interactions {
        let u = k % users;
        rows.push(Interaction {
            user_id: format!("u{u}"),
            item_id: format!("i{}", k % items),
            timestamp: (k / users) as i64,
        });
    }
    let corpus = build_corpus(&rows, 50, 5).map_err(|e| e.to_string())?;
    let stats = corpus_stats(&corpus).map_err(|e| e.to_string())?;
    let built = 100.0 * stats.sparsity;
    ensure((direct - 94.93).abs() <= 0.01, || format!("sparsity {direct:.4}%"))?;
    ensure((built - 94.93).abs() <= 0.01, || format!("corpus sparsity {built:.4}%"))?;
    ensure(stats.users == users && stats.items == items, || "counts changed".into())?;
    Ok(format!("sparsity {direct:.4}% (corpus {built:.4}%)"))
}

fn coattention_config(n: usize) -> NetworkConfig {
    NetworkConfig {
        d: 4,
        k: 2,
        n,
        layers: 1,
        heads: 1,
        ffn_dim: 8,
        tau: 0.8,
        ..Default::default()
    }
}

fn random_params(config: &NetworkConfig, items: usize, aux: usize, rng: &mut Rng, scale: f64) -> NetworkParameters {
    let mut p = NetworkParameters::init(config, items, aux, rng);
    for b in p.blocks_mut() {
        b.mapv_inplace(|_| rng.gen_range(-scale..scale));
    }
    p.freeze_padding();
    p
}

fn left_padded(rng: &mut Rng, n: usize, items: usize) -> Vec<usize> {
    let pads = rng.gen_range(0..n);
    (0..n).map(|t| if t < pads { PAD } else { rng.gen_range(1..=items) }).collect()
}

fn criterion_3() -> Outcome {
    let mut rng = substream(3, "coattention");
    for case in 0..200 {
        let n = rng.gen_range(1..=8);
        let config = coattention_config(n);
        // |pre-activation| <= 16 * 1.5 * 0.5 * 1.5 = 18: tanh stays below 1 in f64
        let params = random_params(&config, 6, 0, &mut rng, 0.5);
        let positions = left_padded(&mut rng, n, 6);
        let h = Matrix::from_shape_simple_fn((n, 4), || rng.gen_range(-1.5..1.5));
        let eq = Matrix::from_shape_simple_fn((n, 4), || rng.gen_range(-1.5..1.5));
        let co = coattend(&h, &eq, &positions, &params, &config).map_err(|e| e.to_string())?;
        ensure(co.affinity.dim() == (n, n) && co.attention_map.dim() == (2, n), || format!("case {case}: shapes"))?;
        ensure(co.affinity.iter().all(|a| a.abs() < 1.0), || format!("case {case}: affinity outside (-1, 1)"))?;
        let total: f64 = co.attention.iter().sum();
        ensure((total - 1.0).abs() <= 1e-9, || format!("case {case}: attention sums to {total}"))?;
        for (t, &a) in co.attention.iter().enumerate() {
            ensure(a >= 0.0, || format!("case {case}: negative attention"))?;
            if positions[t] == PAD {
                ensure(a == 0.0, || format!("case {case}: attention {a} at padding"))?;
            }
        }
    }
    Ok("200 instances".into())
}

/// Loss through popularity embedding, co-attention and scoring; returns the
/// value, parameter gradients and the gradient with respect to `H`.
fn coattention_loss(
    params: &NetworkParameters,
    config: &NetworkConfig,
    aux: &AuxTable,
    h: &Matrix,
    positions: &[usize],
    popularity: &[f64],
    targets: &[CeTarget],
) -> (f64, NetworkParameters, Matrix) {
    let net = Network::new(config, params, aux);
    let mut g = Graph::new();
    let mut binder = Binder::new(params);
    let hn = g.constant(h.clone());
    let eq = net.embed_popularity_node(&mut g, &mut binder, popularity).unwrap();
    let (h_pop, ..) = net.coattend_nodes(&mut g, &mut binder, hn, eq, positions).unwrap();
    let table = binder.get(&mut g, slot::ITEM_EMB);
    let logits = g.matmul_bt(h_pop, table);
    let loss = g.catalog_cross_entropy(logits, targets.to_vec());
    let grads = g.backward(loss);
    let mut out = params.zeros_like();
    {
        let mut blocks = out.blocks_mut();
        for (s, grad) in g.param_grads(&grads) {
            *blocks[s] += grad;
        }
    }
    let dh = grads[hn.index()].clone().unwrap_or_else(|| Matrix::zeros(h.raw_dim()));
    (g.scalar(loss), out, dh)
}

fn criterion_4() -> Outcome {
    let start = Instant::now();
    let config = coattention_config(3);
    let aux = AuxTable::zeros(5, 0);
    let mut rng = substream(4, "gradcheck");
    let step = 1e-5;
    let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1e-6);
    let mut worst: f64 = 0.0;
    let mut checked = 0usize;
    let blocks = [slot::CO_AFFINITY, slot::CO_SEQ, slot::CO_POP, slot::CO_SCORE, slot::ITEM_EMB, slot::POP_W, slot::POP_B];
    for _ in 0..20 {
        let params = random_params(&config, 5, 0, &mut rng, 1.0);
        let positions = left_padded(&mut rng, 3, 5);
        let popularity: Vec<f64> = positions.iter().map(|&v| if v == PAD { 0.0 } else { rng.gen_range(0.0..2.0) }).collect();
        let h = Matrix::from_shape_simple_fn((3, 4), || rng.gen_range(-1.0..1.0));
        let real: Vec<usize> = (0..3).filter(|&t| positions[t] != PAD).collect();
        let targets: Vec<CeTarget> = real
            .iter()
            .map(|&t| CeTarget { row: t, class: rng.gen_range(1..=5), weight: 1.0 / real.len() as f64 })
            .collect();
        let f = |p: &NetworkParameters, h: &Matrix| coattention_loss(p, &config, &aux, h, &positions, &popularity, &targets);
        let (_, analytic, dh) = f(&params, &h);
        for &b in &blocks {
            for idx in 0..params.block(b).len() {
                if b == slot::ITEM_EMB && idx < config.d {
                    continue; // frozen padding row
                }
                let mut plus = params.clone();
                plus.blocks_mut()[b].as_slice_mut().unwrap()[idx] += step;
                let mut minus = params.clone();
                minus.blocks_mut()[b].as_slice_mut().unwrap()[idx] -= step;
                let numeric = (f(&plus, &h).0 - f(&minus, &h).0) / (2.0 * step);
                let a = analytic.block(b).as_slice().unwrap()[idx];
                worst = worst.max(rel(a, numeric));
                checked += 1;
            }
        }
        for idx in 0..h.len() {
            let mut plus = h.clone();
            plus.as_slice_mut().unwrap()[idx] += step;
            let mut minus = h.clone();
            minus.as_slice_mut().unwrap()[idx] -= step;
            let numeric = (f(&params, &plus).0 - f(&params, &minus).0) / (2.0 * step);
            worst = worst.max(rel(dh.as_slice().unwrap()[idx], numeric));
            checked += 1;
        }
    }
    ensure(worst < 1e-4, || format!("max relative error {worst:e}"))?;
    within(start.elapsed(), Duration::from_secs(60))?;
    Ok(format!("max relative error {worst:.2e} over {checked} entries in {:.2?}", start.elapsed()))
}

fn criterion_5() -> Outcome {
    let mut rng = substream(5, "causality");
    let n = 10;
    let config = NetworkConfig {
        d: 8,
        k: 4,
        n,
        layers: 2,
        heads: 2,
        ffn_dim: 16,
        ..Default::default()
    };
    for case in 0..50 {
        let params = random_params(&config, 12, 3, &mut rng, 0.5);
        let aux = AuxTable::from_matrix({
            let mut m = Matrix::from_shape_simple_fn((13, 3), || rng.gen_range(-1.0..1.0));
            m.row_mut(0).fill(0.0);
            m
        })
        .map_err(|e| e.to_string())?;
        let net = Network::new(&config, &params, &aux);
        let base = left_padded(&mut rng, n, 12);
        let pop: Vec<f64> = base.iter().map(|&v| if v == PAD { 0.0 } else { rng.gen_range(0.0..1.0) }).collect();
        let run = |seq: &[usize], pop: &[f64]| net.forward(seq, pop, Mode::Eval, substream(0, "unused")).map_err(|e| e.to_string());
        let reference = run(&base, &pop)?;
        for t in 0..=8 {
            let mut seq = base.clone();
            let mut q = pop.clone();
            for s in t + 1..n {
                if seq[s] != PAD {
                    seq[s] = rng.gen_range(1..=12);
                    q[s] = rng.gen_range(0.0..1.0);
                }
            }
            let changed = run(&seq, &q)?;
            for (layer, (a, b)) in reference.hidden.iter().zip(&changed.hidden).enumerate() {
                for s in 0..=t {
                    ensure(a.row(s) == b.row(s), || format!("case {case}: layer {layer} row {s} moved after t={t}"))?;
                }
            }
        }
    }
    Ok("50 instances, t <= 8, exact".into())
}

fn criterion_6() -> Outcome {
    let items = 7;
    let layout = build_targets(&[0, 0, 3, 4], 5).map_err(|e| e.to_string())?;
    let mut rng = substream(6, "loss");
    let random = |rng: &mut Rng| {
        let mut m = Matrix::from_shape_simple_fn((4, items + 1), || rng.gen_range(-2.0..2.0));
        m.column_mut(0).fill(f64::NEG_INFINITY);
        m
    };
    let (a, b) = (random(&mut rng), random(&mut rng));
    let sup = supervised_loss(&a, &b, &layout).map_err(|e| e.to_string())?;
    let cons = consistency_loss(&a, &b, &layout);
    ensure(total_loss(sup, cons, 0.0) == sup, || "lambda 0 total differs from supervised".into())?;

    // through a training epoch
    let seqs: Vec<UserSequence> = (0..12)
        .map(|u| {
            let list: Vec<usize> = (0..rng.gen_range(4..9)).map(|_| rng.gen_range(1..=items)).collect();
            UserSequence::from_items(u, &list, 6)
        })
        .collect();
    let split = leave_one_out(&seqs).map_err(|e| e.to_string())?;
    let data = TrainingData::from_split(&split, items).map_err(|e| e.to_string())?;
    let net = NetworkConfig { d: 4, k: 2, n: 6, layers: 1, ffn_dim: 8, ..Default::default() };
    let aux = AuxTable::zeros(items, 0);
    let mut train = ExperimentConfig::default().train.for_seed(6);
    train.lambda = 0.0;
    train.batch_size = 5;
    let mut state = DualTrainerState::init(&net, &train, items, 0);
    let mut rows = Vec::new();
    train_epoch(&mut state, &net, &aux, &data, &mut |r| {
        rows.push(r.clone());
        Ok(())
    })
    .map_err(|e| e.to_string())?;
    ensure(!rows.is_empty() && rows.iter().all(|r| r.total_loss == r.sup_loss), || "trainer lambda 0 total differs".into())?;

    // agreeing, confident networks
    let mut confident = Matrix::zeros((4, items + 1));
    confident.column_mut(0).fill(f64::NEG_INFINITY);
    for t in 0..4 {
        confident[[t, 1 + t % items]] = 40.0;
    }
    let agree = consistency_loss(&confident, &confident, &layout);
    ensure(agree < 1e-6, || format!("consistency {agree:e}"))?;

    // uniform logits
    let mut uniform = Matrix::zeros((4, items + 1));
    uniform.column_mut(0).fill(f64::NEG_INFINITY);
    let expect = (items as f64).ln();
    for class in 1..=items {
        let ce = catalog_cross_entropy(uniform.row(0).as_slice().unwrap(), class);
        ensure((ce - expect).abs() <= 1e-9, || format!("uniform CE {ce} vs {expect}"))?;
    }
    let both = supervised_loss(&uniform, &uniform, &layout).map_err(|e| e.to_string())?;
    ensure((both - 2.0 * expect).abs() <= 1e-9, || format!("uniform supervised {both}"))?;
    Ok(format!("agreeing consistency {agree:.1e}, {} logged steps", rows.len()))
}

fn criterion_7() -> Outcome {
    let mut rng = substream(7, "metrics");
    for case in 0..1000 {
        let items = rng.gen_range(1..40);
        // small integer scores force ties
        let mut scores: Vec<f64> = (0..=items).map(|_| f64::from(rng.gen_range(0..6))).collect();
        scores[0] = f64::NEG_INFINITY;
        let target = rng.gen_range(1..=items);
        let mut order: Vec<usize> = (1..=items).collect();
        order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
        let brute_rank = order.iter().position(|&i| i == target).unwrap() + 1;
        let rank = rank_target(&scores, target).map_err(|e| e.to_string())?;
        ensure(rank == brute_rank, || format!("case {case}: rank {rank} vs {brute_rank}"))?;
        let n = rng.gen_range(1..=12);
        let mut expect_top = order.clone();
        expect_top.truncate(n);
        ensure(top_n(&scores, n) == expect_top, || format!("case {case}: top-{n} differs"))?;

        let ranks: Vec<usize> = (0..rng.gen_range(1..20)).map(|_| rng.gen_range(1..=items)).collect();
        let m = accuracy_metrics(&ranks, n).map_err(|e| e.to_string())?;
        let count = ranks.len() as f64;
        let mut recall = 0.0;
        let mut ndcg = 0.0;
        let mut mrr = 0.0;
        for &r in &ranks {
            if r <= n {
                recall += 1.0;
                ndcg += 1.0 / ((r + 1) as f64).log2();
            }
            mrr += 1.0 / r as f64;
        }
        let same = m.recall == recall / count && m.ndcg == ndcg / count && m.mrr == mrr / count;
        ensure(same, || format!("case {case}: aggregate {m:?}"))?;
    }
    ensure(ndcg_term(3, 10) == 0.5, || format!("ndcg at rank 3 = {}", ndcg_term(3, 10)))?;
    Ok("1000 instances exact, NDCG(rank 3) = 0.5".into())
}

fn motif_config() -> ExperimentConfig {
    let text = "\
data.max_len = 15
data.min_user_len = 5
net.d = 32
net.layers = 2
net.heads = 1
net.dropout_hidden = 0
net.dropout_attn = 0
train.learning_rate = 0.01
train.weight_decay = 0
train.max_epochs = 200
train.patience = 40
train.batch_size = 32
eval.cutoffs = 1
";
    ExperimentConfig::parse(text, Path::new(".")).expect("valid config")
}

fn criterion_8() -> Outcome {
    let start = Instant::now();
    let cfg = motif_config();
    let ds = Dataset::build(&motif_interactions(30, 20, 15), &[], &cfg).map_err(|e| e.to_string())?;
    let outcome = train_model(&ds, &cfg, 8, &mut |_| Ok(())).map_err(|e| e.to_string())?;
    let scorer = network_scorer(&ds, &cfg, &outcome.state.best);
    let options = EvalOptions { cutoffs: vec![1], exclude_consumed: false };
    let evals = rank_users(&scorer, &ds.split, HeldOut::Validation, &options).map_err(|e| e.to_string())?;
    let ranks: Vec<usize> = evals.iter().map(|e| e.rank).collect();
    let recall = accuracy_metrics(&ranks, 1).map_err(|e| e.to_string())?.recall;
    let epochs = outcome.state.epoch;
    ensure(epochs <= 200, || format!("{epochs} epochs"))?;
    ensure(recall >= 0.9, || format!("validation Recall@1 {recall:.3} after {epochs} epochs"))?;
    within(start.elapsed(), Duration::from_secs(300))?;
    Ok(format!(
        "validation Recall@1 {recall:.3} (best epoch {}, {epochs} epochs, {:.1?})",
        outcome.state.best_epoch,
        start.elapsed()
    ))
}

fn criterion_9() -> Outcome {
    let spec = SyntheticSpec { drift: 0.05, ..Default::default() };
    let rows = generate_synthetic(&spec).map_err(|e| e.to_string())?;
    let corpus = build_corpus(&rows, spec.max_len, 5).map_err(|e| e.to_string())?;
    let partition = partition_items(corpus.histories.iter().map(|h| h.as_slice()), corpus.num_items(), 0.2)
        .map_err(|e| e.to_string())?;
    let curve = ratio_curve(corpus.histories.iter().map(|h| h.as_slice()), &partition, 20);
    let points = curve.finite();
    ensure(points.len() == 20, || format!("{} finite ratio points", points.len()))?;
    let (t, r): (Vec<f64>, Vec<f64>) = points.into_iter().unzip();
    let rho = spearman(&t, &r);
    ensure(rho < -0.8, || format!("spearman {rho:.3}"))?;
    Ok(format!("spearman {rho:.3} over 20 positions"))
}

fn drift_config() -> ExperimentConfig {
    let text = "\
data.max_len = 20
data.min_user_len = 5
net.d = 16
net.layers = 2
net.heads = 1
net.dropout_hidden = 0.2
net.dropout_attn = 0.2
train.lambda = 0.3
train.learning_rate = 0.005
train.weight_decay = 0.0001
train.max_epochs = 20
train.patience = 5
train.batch_size = 128
eval.cutoffs = 10
";
    ExperimentConfig::parse(text, Path::new(".")).expect("valid config")
}

fn criterion_10() -> Outcome {
    let start = Instant::now();
    let spec = SyntheticSpec::default();
    let rows = generate_synthetic(&spec).map_err(|e| e.to_string())?;
    let full_cfg = drift_config();
    let ds = Dataset::build(&rows, &[synthetic_aux_tsv(&spec)], &full_cfg).map_err(|e| e.to_string())?;
    let ablated_cfg = Variant::NoCoattention.apply(&full_cfg);
    let mut full = Vec::new();
    let mut ablated = Vec::new();
    let mut overall = [0.0, 0.0];
    let mut niche_users = 0;
    for seed in 0..10u64 {
        for (i, cfg) in [&full_cfg, &ablated_cfg].into_iter().enumerate() {
            let (_, eval) = train_and_evaluate(&ds, cfg, seed, "drift", false).map_err(|e| e.to_string())?;
            let niche = report_ndcg(&eval.report, "niche", 10).map_err(|e| e.to_string())?;
            overall[i] += report_ndcg(&eval.report, "overall", 10).map_err(|e| e.to_string())? / 10.0;
            niche_users = eval.report.groups.niche.users;
            if i == 0 { full.push(niche) } else { ablated.push(niche) }
        }
    }
    let wins = full.iter().zip(&ablated).filter(|(a, b)| a >= b).count();
    let ties = full.iter().zip(&ablated).filter(|(a, b)| a == b).count();
    let t = paired_ttest(&full, &ablated, None).map_err(|e| e.to_string())?;
    let summary = format!(
        "full >= ablated in {wins}/10 seeds ({ties} ties), mean niche NDCG@10 {:.4} vs {:.4} over {niche_users} niche users, \
         paired t {:.3} (p {:.3}, dof {}); overall NDCG@10 {:.4} vs {:.4}; {:.1?}",
        full.iter().sum::<f64>() / 10.0,
        ablated.iter().sum::<f64>() / 10.0,
        t.t,
        t.p,
        t.dof,
        overall[0],
        overall[1],
        start.elapsed()
    );
    ensure(wins >= 7, || summary.clone())?;
    within(start.elapsed(), Duration::from_secs(1800)).map_err(|e| format!("{summary}; {e}"))?;
    Ok(summary)
}

fn criterion_11() -> Outcome {
    let spec = SyntheticSpec {
        users: 80,
        items: 40,
        min_len: 8,
        max_len: 14,
        aux_dim: 4,
        seed: 11,
        ..Default::default()
    };
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data = dir.path().join("interactions.tsv");
    let aux = dir.path().join("aux.tsv");
    let rows = generate_synthetic(&spec).map_err(|e| e.to_string())?;
    write_text(&data, &interactions_tsv(&rows)).map_err(|e| e.to_string())?;
    write_text(&aux, &synthetic_aux_tsv(&spec)).map_err(|e| e.to_string())?;
    let text = format!(
        "data.interactions = {}\ndata.aux = {}\ndata.max_len = 10\nnet.d = 8\ntrain.max_epochs = 3\ntrain.batch_size = 16\n\
         train.learning_rate = 0.01\neval.cutoffs = 5,10\neval.window = 5\n",
        data.display(),
        aux.display()
    );
    let cfg = ExperimentConfig::parse(&text, Path::new(".")).map_err(|e| e.to_string())?;
    let ds = Dataset::load(&cfg).map_err(|e| e.to_string())?;

    let (outcome, eval) = train_and_evaluate(&ds, &cfg, 11, "bicorec", true).map_err(|e| e.to_string())?;
    let (outcome_again, eval_again) = train_and_evaluate(&ds, &cfg, 11, "bicorec", true).map_err(|e| e.to_string())?;
    let bytes = encode_state(&outcome.state, &cfg.net);
    ensure(bytes == encode_state(&outcome_again.state, &cfg.net), || "repeated training differs".into())?;
    ensure(eval.report.to_json() == eval_again.report.to_json(), || "repeated metrics differ".into())?;

    let (restored, net) = decode_state(&bytes).map_err(|e| e.to_string())?;
    ensure(net == cfg.net && encode_state(&restored, &net) == bytes, || "checkpoint round trip differs".into())?;

    let run = dir.path().join("run");
    run_train(&cfg, 11, &run).map_err(|e| e.to_string())?;
    let persisted = run_evaluate(&cfg, 11, Model::BiCoRec, &run).map_err(|e| e.to_string())?;
    let written = std::fs::read_to_string(run.join("metrics.json")).map_err(|e| e.to_string())?;
    ensure(written == eval.report.to_json(), || "train -> checkpoint -> evaluate differs from in-process".into())?;
    ensure(persisted == eval, || "persisted curves differ".into())?;
    ensure(std::fs::read(run.join("checkpoint.bin")).map_err(|e| e.to_string())? == bytes, || "checkpoint file differs".into())?;
    Ok(format!("{} checkpoint bytes, metrics identical", bytes.len()))
}

/// Two-sided p of Student's t for odd degrees of freedom, by the finite
/// trigonometric series for the central probability.
fn student_two_sided_p_odd(t: f64, dof: usize) -> f64 {
    assert!(dof % 2 == 1);
    let theta = (t.abs() / (dof as f64).sqrt()).atan();
    let (s, c) = theta.sin_cos();
    let mut central = theta;
    if dof > 1 {
        let mut term = c;
        let mut sum = c;
        let mut k = 1;
        while 2 * k + 1 < dof {
            term *= c * c * (2 * k) as f64 / (2 * k + 1) as f64;
            sum += term;
            k += 1;
        }
        central += s * sum;
    }
    1.0 - 2.0 / PI * central
}

fn criterion_12() -> Outcome {
    let same = [0.1, 0.25, 0.3, 0.12];
    let t = paired_ttest(&same, &same, None).map_err(|e| e.to_string())?;
    ensure(t.t == 0.0 && t.p == 1.0, || format!("identical lists gave t {} p {}", t.t, t.p))?;

    let a = [0.0853, 0.0791, 0.0902, 0.0868, 0.0811, 0.0934, 0.0779, 0.0850, 0.0897, 0.0826];
    let b = [0.0599, 0.0642, 0.0587, 0.0701, 0.0613, 0.0655, 0.0598, 0.0676, 0.0622, 0.0640];
    let d: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
    let n = d.len() as f64;
    let mean = d.iter().sum::<f64>() / n;
    let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let expect_t = mean / (var / n).sqrt();
    let expect_p = student_two_sided_p_odd(expect_t, 9);
    let got = paired_ttest(&a, &b, None).map_err(|e| e.to_string())?;
    ensure((got.t - expect_t).abs() <= 1e-9, || format!("t {} vs {expect_t}", got.t))?;
    ensure((got.p - expect_p).abs() <= 1e-9, || format!("p {} vs {expect_p}", got.p))?;
    ensure(got.dof == 9.0, || format!("dof {}", got.dof))?;

    // a moderate statistic, where p is not vanishingly small
    let c: Vec<f64> = a.iter().zip([0.004, -0.006, 0.003, 0.001, -0.002, 0.005, -0.001, 0.002, 0.0, 0.003]).map(|(x, e)| x - e).collect();
    let got = paired_ttest(&a, &c, None).map_err(|e| e.to_string())?;
    let expect = student_two_sided_p_odd(got.t, 9);
    ensure((got.p - expect).abs() <= 1e-9, || format!("moderate p {} vs {expect}", got.p))?;
    Ok(format!("fixture t {:.6}, moderate p {:.6}", expect_t, got.p))
}

fn main() {
    let wanted: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let criteria: [(&str, fn() -> Outcome); 12] = [
        ("TF-IDF matches brute force", criterion_1),
        ("sparsity of the Movies counts", criterion_2),
        ("co-attention shape and normalization", criterion_3),
        ("co-attention gradients vs finite differences", criterion_4),
        ("encoder causality", criterion_5),
        ("loss reductions", criterion_6),
        ("ranking metric oracles", criterion_7),
        ("motif overfit", criterion_8),
        ("popularity drift in generated data", criterion_9),
        ("co-attention helps niche users", criterion_10),
        ("determinism and checkpoint round trip", criterion_11),
        ("paired t-test", criterion_12),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let id = i + 1;
        if !wanted.is_empty() && !wanted.contains(&id) {
            continue;
        }
        let outcome = std::panic::catch_unwind(run).unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(detail) => println!("criterion {id:>2} PASS  {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {id:>2} FAIL  {name}: {detail}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}

