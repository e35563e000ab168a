//! Independent oracles and scenario checks shared by the core test suites and
//! the acceptance target. Each check returns a one-line summary.
#![allow(dead_code)]

use e2fl_core::data::{make_grouped_dataset, Client, Dataset, GroupSpec, GroupedDataSpec, TransformKind};
use e2fl_core::edgepopup::{ep_train, local_ranking, score_mask, EpConfig};
use e2fl_core::federation::{client_stream_seed, e2fl_train, sample_clients, E2fl, FederationConfig, GroupCount, InferenceMode};
use e2fl_core::groupinfer::{alpha_gradient, binary_search, knowledge_transfer_init, lowest_loss, oneshot, rank_clustering};
use e2fl_core::metrics::{di, eod, equality_stats, equity_stats, mask_float_ratio, MIB};
use e2fl_core::net::{self, Batch, NetSpec, SuperNetwork};
use e2fl_core::ranking::{spearman_distance, vote, BinaryMask, Ranking, WireSizeModel};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Check = Result<String, String>;

pub fn permutations(d: usize) -> Vec<Vec<u32>> {
    if d == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(d - 1) {
        for i in 0..=p.len() {
            let mut q = p.clone();
            q.insert(i, (d - 1) as u32);
            out.push(q);
        }
    }
    out
}

/// Exhaustive Borda count: the unique ordering of edges that is non-decreasing
/// in summed position, with ties in ascending edge order.
pub fn borda_oracle(voters: &[Vec<u32>], all: &[Vec<u32>]) -> Vec<u32> {
    let d = voters[0].len();
    let mut score = vec![0u64; d];
    for v in voters {
        for (pos, &e) in v.iter().enumerate() {
            score[e as usize] += pos as u64;
        }
    }
    let fits = |p: &Vec<u32>| {
        p.windows(2).all(|w| {
            let (a, b) = (w[0] as usize, w[1] as usize);
            score[a] < score[b] || (score[a] == score[b] && a < b)
        })
    };
    let mut found = all.iter().filter(|p| fits(p));
    let winner = found.next().expect("some ordering fits").clone();
    assert!(found.next().is_none(), "ordering is unique");
    winner
}

pub fn vote_matches_borda(cases: usize, seed: u64) -> Check {
    let tables: Vec<Vec<Vec<u32>>> = (0..=6).map(permutations).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for case in 0..cases {
        let n_layers = rng.random_range(1..=3);
        let dims: Vec<usize> = (0..n_layers).map(|_| rng.random_range(1..=6)).collect();
        let n_voters = rng.random_range(1..=5);
        let voters: Vec<Ranking> = (0..n_voters)
            .map(|_| Ranking::new(dims.iter().map(|&d| tables[d].choose(&mut rng).unwrap().clone()).collect()).unwrap())
            .collect();
        let got = vote(&voters).map_err(|e| e.to_string())?;
        for (l, &d) in dims.iter().enumerate() {
            let layer_votes: Vec<Vec<u32>> = voters.iter().map(|v| v.layer(l).to_vec()).collect();
            if got.layer(l) != borda_oracle(&layer_votes, &tables[d]).as_slice() {
                return Err(format!("case {case} layer {l} differs from the oracle"));
            }
        }
    }
    Ok(format!("{cases}/{cases} cases equal the brute-force oracle"))
}

/// Softmax outputs of a ReLU MLP with row-major `[out][in]` weights.
pub fn naive_probs(sizes: &[usize], w: &[Vec<f64>], x: &[f64]) -> Vec<Vec<f64>> {
    let n = x.len() / sizes[0];
    (0..n)
        .map(|b| {
            let mut h: Vec<f64> = x[b * sizes[0]..(b + 1) * sizes[0]].to_vec();
            for l in 0..sizes.len() - 1 {
                let (fi, fo) = (sizes[l], sizes[l + 1]);
                let mut out: Vec<f64> = (0..fo).map(|o| (0..fi).map(|i| w[l][o * fi + i] * h[i]).sum()).collect();
                if l + 2 < sizes.len() {
                    out.iter_mut().for_each(|v| *v = v.max(0.0));
                }
                h = out;
            }
            let m = h.iter().cloned().fold(f64::MIN, f64::max);
            let z: f64 = h.iter().map(|v| (v - m).exp()).sum();
            h.iter().map(|v| (v - m).exp() / z).collect()
        })
        .collect()
}

pub fn naive_loss(sizes: &[usize], w: &[Vec<f64>], x: &[f64], y: &[usize]) -> f64 {
    let p = naive_probs(sizes, w, x);
    p.iter().zip(y).map(|(p, &y)| -(p[y] + 1e-12).ln()).sum::<f64>() / y.len() as f64
}

pub fn naive_entropy(sizes: &[usize], w: &[Vec<f64>], x: &[f64]) -> f64 {
    let p = naive_probs(sizes, w, x);
    p.iter().map(|r| -r.iter().map(|v| v * (v + 1e-12).ln()).sum::<f64>()).sum::<f64>() / p.len() as f64
}

fn random_sizes(rng: &mut ChaCha8Rng) -> Vec<usize> {
    match rng.random_range(2..=3) {
        2 => vec![rng.random_range(1..=8), rng.random_range(2..=4)],
        _ => vec![rng.random_range(1..=8), rng.random_range(1..=16), rng.random_range(2..=4)],
    }
}

fn random_mask(spec: &NetSpec, rng: &mut ChaCha8Rng) -> BinaryMask {
    BinaryMask::from_bits(spec.edge_counts().iter().map(|&d| (0..d).map(|_| rng.random_bool(0.5)).collect()).collect())
}

const FD_STEP: f64 = 1e-5;

pub fn weight_gradients_vs_fd(instances: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (mut checked, mut worst) = (0, 0.0f64);
    for inst in 0..instances {
        let sizes = random_sizes(&mut rng);
        let spec = NetSpec::new(sizes.clone()).unwrap();
        let weights = spec.init_weights(inst);
        let n = rng.random_range(1..=6);
        let x: Vec<f64> = (0..n * sizes[0]).map(|_| rng.random_range(-2.0..2.0)).collect();
        let c = *sizes.last().unwrap();
        let y: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
        let (loss, grads) = net::dense_backward(&spec, &weights, &Batch::new(&x, &y, sizes[0]).unwrap()).unwrap();
        if (loss - naive_loss(&sizes, &weights, &x, &y)).abs() > 1e-12 {
            return Err(format!("instance {inst}: loss differs from the naive forward pass"));
        }
        for l in 0..weights.len() {
            for e in 0..weights[l].len() {
                let mut plus = weights.clone();
                plus[l][e] += FD_STEP;
                let mut minus = weights.clone();
                minus[l][e] -= FD_STEP;
                let fd = (naive_loss(&sizes, &plus, &x, &y) - naive_loss(&sizes, &minus, &x, &y)) / (2.0 * FD_STEP);
                if fd.abs() > 1e-6 {
                    let err = (grads[l][e] - fd).abs() / fd.abs();
                    worst = worst.max(err);
                    if err >= 1e-4 {
                        return Err(format!("instance {inst} {sizes:?} layer {l} edge {e}: rel err {err:.2e}"));
                    }
                    checked += 1;
                } else if grads[l][e].abs() > 1e-5 {
                    return Err(format!("instance {inst} layer {l} edge {e}: {} where fd is ~0", grads[l][e]));
                }
            }
        }
    }
    Ok(format!("{instances} nets, {checked} entries, max rel err {worst:.1e}"))
}

pub fn alpha_gradients_vs_fd(instances: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let (mut checked, mut worst) = (0, 0.0f64);
    for inst in 0..instances {
        let sizes = random_sizes(&mut rng);
        let spec = NetSpec::new(sizes.clone()).unwrap();
        let sn = SuperNetwork::init(spec.clone(), inst);
        let q = rng.random_range(1..=4);
        let masks: Vec<BinaryMask> = (0..q).map(|_| random_mask(&spec, &mut rng)).collect();
        let alpha: Vec<f64> = (0..q).map(|_| rng.random_range(0.1..1.0)).collect();
        let n = rng.random_range(1..=6);
        let x: Vec<f64> = (0..n * sizes[0]).map(|_| rng.random_range(-3.0..3.0)).collect();
        let data = Dataset::new(x.clone(), vec![0; n], sizes[0], *sizes.last().unwrap()).unwrap();
        let ag = alpha_gradient(&sn, &masks, &alpha, &data).map_err(|e| e.to_string())?;
        let eff_at = |a: &[f64]| -> Vec<Vec<f64>> {
            sn.weights()
                .iter()
                .enumerate()
                .map(|(l, w)| {
                    w.iter()
                        .enumerate()
                        .map(|(e, wv)| wv * masks.iter().zip(a).filter(|(m, _)| m.layers()[l][e]).map(|(_, v)| v).sum::<f64>())
                        .collect()
                })
                .collect()
        };
        if (ag.entropy - naive_entropy(&sizes, &eff_at(&alpha), &x)).abs() > 1e-12 {
            return Err(format!("instance {inst}: entropy differs from the naive forward pass"));
        }
        for k in 0..q {
            let mut plus = alpha.clone();
            plus[k] += FD_STEP;
            let mut minus = alpha.clone();
            minus[k] -= FD_STEP;
            let fd = (naive_entropy(&sizes, &eff_at(&plus), &x) - naive_entropy(&sizes, &eff_at(&minus), &x)) / (2.0 * FD_STEP);
            if fd.abs() > 1e-6 {
                let err = (ag.grad[k] - fd).abs() / fd.abs();
                worst = worst.max(err);
                if err >= 1e-3 {
                    return Err(format!("instance {inst} mask {k}: rel err {err:.2e}"));
                }
                checked += 1;
            }
        }
    }
    Ok(format!("{instances} nets, {checked} coefficients, max rel err {worst:.1e}"))
}

/// Two classes split by the line `x0 + x1 = 0`, no point closer than `margin / 2` to it.
pub fn blobs(n: usize, margin: f64, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let mut features = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let y = i % 2;
        let sign = if y == 1 { 1.0 } else { -1.0 };
        let across = sign * (margin / 2.0 + rng.random_range(0.0..1.5));
        let along = rng.random_range(-2.0..2.0);
        features.extend([s * (across + along), s * (across - along)]);
        labels.push(y);
    }
    Dataset::new(features, labels, 2, 2).unwrap()
}

/// Training accuracy of logistic regression fit by full-batch gradient descent.
pub fn logistic_regression_accuracy(d: &Dataset) -> f64 {
    let mut w = [0.0f64; 3];
    for _ in 0..2000 {
        let mut g = [0.0; 3];
        for i in 0..d.len() {
            let x = d.row(i);
            let p = 1.0 / (1.0 + (-(w[0] * x[0] + w[1] * x[1] + w[2])).exp());
            let err = p - d.labels[i] as f64;
            g[0] += err * x[0];
            g[1] += err * x[1];
            g[2] += err;
        }
        for k in 0..3 {
            w[k] -= 0.5 * g[k] / d.len() as f64;
        }
    }
    let hits = (0..d.len()).filter(|&i| {
        let x = d.row(i);
        ((w[0] * x[0] + w[1] * x[1] + w[2]) > 0.0) == (d.labels[i] == 1)
    });
    hits.count() as f64 / d.len() as f64
}

pub fn edge_popup_on_blobs(seeds: u64) -> Check {
    let spec = NetSpec::new(vec![2, 16, 2]).unwrap();
    let cfg = EpConfig { epochs: 30, k_percent: 50.0, lr: 0.1, ..Default::default() };
    let mut accs = Vec::new();
    for s in 0..seeds {
        let data = blobs(200, 1.0, s);
        let oracle = logistic_regression_accuracy(&data);
        if oracle < 1.0 {
            return Err(format!("seed {s}: logistic regression oracle reaches only {oracle}"));
        }
        let sn = SuperNetwork::init(spec.clone(), s);
        let out = ep_train(&sn, sn.scores().clone(), &data, &cfg, s).map_err(|e| e.to_string())?;
        if out.epoch_losses.last() >= out.epoch_losses.first() {
            return Err(format!("seed {s}: loss did not decrease {:?}", out.epoch_losses));
        }
        let mask = score_mask(&out.scores, 50.0).map_err(|e| e.to_string())?;
        let batch = data.as_batch().unwrap();
        let probs = net::forward(&sn, Some(&mask), &batch).map_err(|e| e.to_string())?;
        accs.push(net::accuracy(&probs, batch.labels()));
    }
    let mean = accs.iter().sum::<f64>() / accs.len() as f64;
    let line = format!("mean train accuracy {:.3} over {seeds} seeds (per seed {accs:.3?})", mean);
    if mean >= 0.95 {
        Ok(line)
    } else {
        Err(line)
    }
}

pub fn grouped(counts: Vec<usize>, noise_std: f64, seed: u64) -> Vec<Client> {
    let spec = GroupedDataSpec {
        groups: GroupSpec::new(counts, TransformKind::CoordinatePermutation, 16, seed),
        samples_per_client: 200,
        n_classes: 4,
        feature_dim: 16,
        noise_std,
        train_fraction: 0.8,
    };
    make_grouped_dataset(seed, &spec).unwrap()
}

fn benchmark_cfg(seed: u64) -> FederationConfig {
    let mut cfg = FederationConfig::new(NetSpec::new(vec![16, 32, 4]).unwrap());
    cfg.seed = seed;
    cfg
}

/// Single-group rank learning written out directly: sample, train locally from
/// the global ranking, vote.
pub fn frl_matches_single_group_e2fl(seed: u64, rounds: usize) -> Check {
    let clients = grouped(vec![6, 6, 6], 0.3, seed);
    let mut cfg = benchmark_cfg(seed);
    cfg.rounds = rounds;
    cfg.clients_per_round = 6;
    cfg.groups = GroupCount::Fixed(1);
    cfg.eval_every = rounds;
    let flat: Vec<Client> = clients.iter().cloned().map(|c| Client { group: 0, ..c }).collect();
    let out = e2fl_train(&flat, &cfg).map_err(|e| e.to_string())?;

    let sn = SuperNetwork::init(cfg.net.clone(), seed);
    let ep = cfg.ep_config();
    let mut global = Ranking::from_scores(sn.scores()).unwrap();
    for t in 1..=rounds {
        let locals: Vec<Ranking> = sample_clients(seed, t, flat.len(), cfg.clients_per_round)
            .into_iter()
            .map(|u| local_ranking(&sn, &global, &flat[u].train, &ep, client_stream_seed(seed, u, t)).unwrap())
            .collect();
        global = vote(&locals).unwrap();
        let rec = out.records[t - 1].rankings.as_ref().unwrap();
        if rec.global != global || rec.groups[0] != global {
            return Err(format!("seed {seed}: rankings diverge at round {t}"));
        }
    }
    Ok(format!("{rounds}/{rounds} rounds identical"))
}

pub fn inference_pass_counts() -> Check {
    let spec = NetSpec::new(vec![8, 16, 4]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let sn = SuperNetwork::init(spec.clone(), 31);
    let mut notes = Vec::new();
    for q in [1usize, 2, 4, 8, 16] {
        let bound = (q as f64).log2().ceil() as usize + 1;
        let mut max_bs = 0;
        for trial in 0..10 {
            let masks: Vec<BinaryMask> = (0..q).map(|_| random_mask(&spec, &mut rng)).collect();
            let x: Vec<f64> = (0..5 * 8).map(|_| rng.random_range(-1.0..1.0)).collect();
            let data = Dataset::new(x, (0..5).map(|i| i % 4).collect(), 8, 4).unwrap();
            let err = |e: e2fl_core::Error| e.to_string();
            let ll = lowest_loss(&sn, &masks, &data).map_err(err)?.passes;
            let os = oneshot(&sn, &masks, &data).map_err(err)?.passes;
            let bs = binary_search(&sn, &masks, &data).map_err(err)?.passes;
            if (ll.forward, ll.backward) != (q, 0) {
                return Err(format!("Q={q} trial {trial}: lowest_loss used {ll:?}"));
            }
            if (os.forward, os.backward) != (1, 1) {
                return Err(format!("Q={q} trial {trial}: oneshot used {os:?}"));
            }
            if bs.forward != bs.backward || bs.forward > bound {
                return Err(format!("Q={q} trial {trial}: binary search used {bs:?}, bound {bound}"));
            }
            max_bs = max_bs.max(bs.forward);
        }
        notes.push(format!("Q={q}: bs<={max_bs}"));
    }
    Ok(notes.join(", "))
}

/// Fraction of clients whose cluster label matches the truth under the best relabeling of 3 clusters.
fn best_match3(assign: &[usize], truth: &[usize]) -> usize {
    [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]]
        .iter()
        .map(|p| assign.iter().zip(truth).filter(|(&a, &t)| p[a] == t).count())
        .max()
        .unwrap()
}

pub fn inference_accuracy(seeds: std::ops::Range<u64>) -> Check {
    let mut lines = Vec::new();
    let mut ok = true;
    for s in seeds {
        let clients = grouped(vec![10, 10, 10], 0.3, s);
        let mut cfg = benchmark_cfg(s);
        cfg.rounds = 30;
        cfg.clients_per_round = 10;
        cfg.eval_every = 30;
        cfg.groups = GroupCount::Fixed(3);
        let mut st = E2fl::new(&clients, cfg.clone()).map_err(|e| e.to_string())?;
        for _ in 0..30 {
            st.step().map_err(|e| e.to_string())?;
        }
        let masks = st.registry().masks();
        let (mut ll_ok, mut os_agree) = (0, 0);
        for c in &clients {
            let ll = lowest_loss(st.network(), masks, &c.train).unwrap();
            let os = oneshot(st.network(), masks, &c.train).unwrap();
            ll_ok += (ll.group == c.group) as usize;
            os_agree += (os.group == ll.group) as usize;
        }
        let ep = cfg.ep_config();
        let rankings: Vec<Ranking> = clients
            .iter()
            .map(|c| local_ranking(st.network(), st.global(), &c.train, &ep, client_stream_seed(s, c.id, 1000)).unwrap())
            .collect();
        let cl = rank_clustering(&rankings, 3, 10, s).map_err(|e| e.to_string())?;
        let truth: Vec<usize> = clients.iter().map(|c| c.group).collect();
        let rc_ok = best_match3(&cl.assignment, &truth);
        let n = clients.len();
        ok &= ll_ok * 10 >= 9 * n && rc_ok * 10 >= 9 * n && os_agree * 10 >= 8 * n;
        lines.push(format!("seed {s}: ll {ll_ok}/{n} rc {rc_ok}/{n} os~ll {os_agree}/{n}"));
    }
    let line = lines.join("; ");
    if ok {
        Ok(line)
    } else {
        Err(line)
    }
}

fn adjacent_swaps(base: &[u32], rng: &mut ChaCha8Rng) -> Vec<u32> {
    let mut p = base.to_vec();
    for _ in 0..rng.random_range(0..=2) {
        let i = rng.random_range(0..p.len() - 1);
        p.swap(i, i + 1);
    }
    p
}

pub fn planted_families_recovered(trials: u64) -> Check {
    let d = 16;
    let mut hits = 0;
    for trial in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + trial);
        let base: Vec<u32> = (0..d as u32).collect();
        let (a, b) = loop {
            let mut a = base.clone();
            let mut b = base.clone();
            a.shuffle(&mut rng);
            b.shuffle(&mut rng);
            let ra = Ranking::new(vec![a.clone()]).unwrap();
            let rb = Ranking::new(vec![b.clone()]).unwrap();
            if spearman_distance(&ra, &rb).unwrap() >= (d * d / 4) as u64 {
                break (a, b);
            }
        };
        let mut rankings = Vec::new();
        let mut truth = Vec::new();
        for (fam, basis) in [&a, &b].into_iter().enumerate() {
            for _ in 0..20 {
                rankings.push(Ranking::new(vec![adjacent_swaps(basis, &mut rng)]).unwrap());
                truth.push(fam);
            }
        }
        let cl = rank_clustering(&rankings, 2, 5, trial).map_err(|e| e.to_string())?;
        let same = cl.assignment.iter().zip(&truth).all(|(x, t)| x == t);
        let swapped = cl.assignment.iter().zip(&truth).all(|(x, t)| *x != *t);
        hits += (same || swapped) as u64;
    }
    let line = format!("{hits}/{trials} planted partitions recovered exactly");
    if hits * 100 >= 95 * trials {
        Ok(line)
    } else {
        Err(line)
    }
}

/// Layer sizes of the reference LeNet: two convolutions and two dense layers.
pub const LENET_LAYERS: [usize; 4] = [288, 18_432, 1_605_632, 1_280];

pub fn lenet_traffic() -> Check {
    let model = WireSizeModel::default();
    let up: u64 = LENET_LAYERS.iter().map(|&d| model.ranking_bits(d)).sum();
    let mask: u64 = LENET_LAYERS.iter().map(|&d| model.mask_bits(d)).sum();
    let down = up + 10 * mask;
    let (up_mb, down_mb) = (up as f64 / 8.0 / MIB, down as f64 / 8.0 / MIB);
    let ratio = mask_float_ratio(&model);
    let within = |got: f64, want: f64| (got - want).abs() / want <= 0.10;
    let line = format!("up {up_mb:.2} MiB (4.05), down {down_mb:.2} MiB (5.99), mask/float ratio {ratio}");
    if within(up_mb, 4.05) && within(down_mb, 5.99) && ratio == 32.0 {
        Ok(line)
    } else {
        Err(line)
    }
}

pub fn metric_fixtures() -> Check {
    let err = |e: e2fl_core::Error| e.to_string();
    let mut failures = Vec::new();
    let e = eod(&[1, 0, 1, 1, 1, 0, 1], &[1, 1, 1, 1, 1, 1, 0], &[0, 0, 1, 1, 1, 1, 0]).map_err(err)?;
    if e != Some(-0.25) {
        failures.push(format!("eod {e:?}"));
    }
    let d = di(&[1, 1, 0, 1, 1, 1, 0], &[1, 0, 1, 1, 1, 1, 1], &[0, 0, 0, 1, 1, 1, 1]).map_err(err)?;
    if d != Some(0.5 - 6.0 / 7.0) {
        failures.push(format!("di {d:?}"));
    }
    let q = equity_stats(&[1.0, 0.0, 0.0], &[0, 1, 1]).map_err(err)?;
    if (q.avg, q.std, q.worst, q.best) != (0.5, 0.5, 0.0, 1.0) {
        failures.push(format!("equity {q:?}"));
    }
    let u = equality_stats(&[0.9, 0.9, 0.9]).map_err(err)?;
    if u.variance != 0.0 || u.worst != u.best {
        failures.push(format!("equality {u:?}"));
    }
    let two = equality_stats(&[0.8, 1.0]).map_err(err)?;
    if (two.worst, two.best) != (0.8, 1.0) || (two.variance - 0.01).abs() > 1e-15 {
        failures.push(format!("equality pair {two:?}"));
    }
    if failures.is_empty() {
        Ok("eod -0.25, di 0.5-6/7, equity std 0.5, equality variance 0.01".into())
    } else {
        Err(failures.join("; "))
    }
}

/// Warm up two groups on two thirds of the population, then admit the third
/// group with creation enabled.
pub fn novel_group_creation(mode: InferenceMode, seed: u64) -> Check {
    let clients = grouped(vec![10, 10, 10], 0.1, seed);
    let mut cfg = benchmark_cfg(seed);
    cfg.rounds = 60;
    cfg.clients_per_round = 10;
    cfg.lr = 0.5;
    cfg.eval_every = 1000;
    cfg.groups = GroupCount::Fixed(2);
    let err = |e: e2fl_core::Error| e.to_string();
    let mut st = E2fl::new(&clients[..20], cfg).map_err(err)?;
    for _ in 0..30 {
        st.step().map_err(err)?;
    }
    st.set_clients(&clients).map_err(err)?;
    st.set_inference(mode, GroupCount::Auto).map_err(err)?;
    let mut created = Vec::new();
    for _ in 0..30 {
        let before = st.registry().rankings().to_vec();
        let rec = st.step().map_err(err)?;
        if let Some((q, init)) = rec.created_group {
            let kt = init == knowledge_transfer_init(&before).map_err(err)?;
            created.push((rec.round, q, kt));
        }
    }
    match created.as_slice() {
        [(round, 2, true)] => Ok(format!("seed {seed}: one group created at round {round}")),
        _ => Err(format!("seed {seed}: creations (round, group, from KT) = {created:?}")),
    }
}
