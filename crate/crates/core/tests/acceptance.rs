//! Acceptance checks, one line per criterion.
//!
//! Exact criteria fail the run when they miss. The desk-scale robustness
//! trends (criterion 10) are soft: they print PASS or FAIL with their
//! confidence intervals but do not change the exit status.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use carddeck::deck::{evaluate_deck, mbit, memory_bits, Card, Deck, DeckMode};
use carddeck::gate::kdtree::linear_nearest;
use carddeck::gate::{build_index, d_ss, select, KdTree, SignatureIndex};
use carddeck::harness::{
    corrupt_dataset, corrupted_suite, default_popup_train, default_train, generate_dataset,
    run_experiment, AugmentationSpec, Augmenter, CorruptionKind, CorruptionSpec, GridConfig,
    SyntheticSpec,
};
use carddeck::nn::{evaluate, Dataset, Mask, Network, Precision};
use carddeck::prune::{
    achieved_sparsity, initialize, run_popup_observed, run_rewinding_observed, GmpSchedule, Method,
    PopupConfig, PruneManifest, PruneScope, RewindConfig, RewindMode, ScheduleKind, TrainInput,
    TrainSpec,
};
use carddeck::rng;
use carddeck::spectral::{
    conjugate, dft2, fourier_basis, freq_range, heatmap, radial_power_spectrum, HeatmapConfig,
};
use carddeck::Tensor;
use common::{dir_bytes, naive_dft, naive_radial, uniform_vec};
use rand::seq::index::sample;
use rand::Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

fn c1_gmp_schedule() -> Outcome {
    let t = Instant::now();
    let s = GmpSchedule {
        initial: 0.0,
        final_sparsity: 0.9,
        t0: 5,
        steps: 105,
        interval: 1,
    };
    let direct = |t: usize| 0.9 + (0.0 - 0.9) * (1.0 - (t as f64 - 5.0) / 105.0).powi(3);
    let s5 = s.sparsity_at(5).unwrap();
    let s110 = s.sparsity_at(110).unwrap();
    let s57 = s.sparsity_at(57).unwrap();
    let trace: Vec<f64> = s
        .pruning_steps()
        .map(|t| s.sparsity_at(t).unwrap())
        .collect();
    let monotone = trace.windows(2).all(|w| w[1] >= w[0]);
    let all_match = s
        .pruning_steps()
        .all(|t| (s.sparsity_at(t).unwrap() - direct(t)).abs() < 1e-12);
    let secs = t.elapsed().as_secs_f64();
    outcome(
        s5.abs() < 1e-12
            && (s110 - 0.9).abs() < 1e-12
            && (s57 - direct(57)).abs() < 1e-12
            && all_match
            && monotone
            && secs < 1.0,
        format!(
            "s_5={s5:.3e} s_110={s110:.12} s_57={s57:.12} (direct formula {:.12}, quoted 0.78836); monotone={monotone}; {secs:.3}s",
            direct(57)
        ),
    )
}

fn toy() -> (Dataset, Network) {
    let (train, _) = common::toy_data(200, 4, 8, 3);
    let net = Network::mlp(train.sample_shape().to_vec(), &[16], train.num_classes()).unwrap();
    (train, net)
}

fn toy_spec(epochs: usize) -> TrainSpec {
    TrainSpec {
        epochs,
        lr: 0.05,
        ..Default::default()
    }
}

fn c2_sparsity_exactness() -> Outcome {
    let t = Instant::now();
    let (data, net) = toy();
    let n = net.total_weights();
    let mut worst: f64 = 0.0;
    let mut misses = Vec::new();
    for target in [0.9, 0.95] {
        for method in [
            Method::Ft,
            Method::Gmp,
            Method::Lth,
            Method::Lrr,
            Method::Ep,
            Method::Bp,
        ] {
            let mut m = PruneManifest::new(method, PruneScope::Global, target, toy_spec(3), 1);
            m.finetune_epochs = Some(1);
            let out = m.run(net.clone(), &data).unwrap();
            let formula = match method {
                Method::Lth | Method::Lrr => achieved_sparsity(0.2, out.report.shots),
                _ => target,
            };
            let err = (out.network.sparsity() - formula).abs();
            worst = worst.max(err);
            if err > 1.0 / n as f64 {
                misses.push(format!("{method}@{target}"));
            }
        }
    }
    let secs = t.elapsed().as_secs_f64();
    outcome(
        misses.is_empty() && secs < 60.0,
        format!(
            "6 methods x 2 targets, worst |achieved - formula| = {worst:.2e} <= 1/N = {:.2e}; misses {misses:?}; {secs:.1}s",
            1.0 / n as f64
        ),
    )
}

fn c3_rewinding() -> Outcome {
    let t = Instant::now();
    let (data, base) = toy();
    let mut ok_lth = true;
    let mut ok_lrr = true;
    let mut traces = Vec::new();
    for mode in [RewindMode::WeightsAndLr, RewindMode::LrOnly] {
        let mut net = base.clone();
        initialize(mode.method(), &mut net, 2, 0.0).unwrap();
        let mut cfg = RewindConfig::new(toy_spec(6), 0.9, mode, 2);
        cfg.rewind_iter = Some(3);
        let out = run_rewinding_observed(net, &data, &cfg, |e| {
            for (((_, r), (_, tr)), (_, c)) in e
                .rewound
                .prunable()
                .zip(e.trained.prunable())
                .zip(e.checkpoint.prunable())
            {
                let keep = r.mask.as_ref().unwrap().keep();
                for i in (0..r.len()).filter(|&i| keep[i]) {
                    let (rw, tw, cw) =
                        (r.weight.data()[i], tr.weight.data()[i], c.weight.data()[i]);
                    match mode {
                        RewindMode::WeightsAndLr => ok_lth &= rw.to_bits() == cw.to_bits(),
                        RewindMode::LrOnly => {
                            ok_lrr &= (rw - cw).to_bits() == (tw - cw).to_bits();
                        }
                    }
                }
            }
        })
        .unwrap();
        traces.push(out.report.log.lrs);
    }
    let same_lr = traces[0] == traces[1];
    let secs = t.elapsed().as_secs_f64();
    outcome(
        ok_lth && ok_lrr && same_lr && secs < 120.0,
        format!(
            "LTH survivors bit-equal checkpoint: {ok_lth}; LRR offset equals trained delta: {ok_lrr}; LR traces identical ({} steps): {same_lr}; {secs:.1}s",
            traces[0].len()
        ),
    )
}

fn c4_popup_freeze() -> Outcome {
    let (data, base) = toy();
    let cfg = PopupConfig {
        train: TrainSpec {
            epochs: 3,
            lr: 0.5,
            schedule: ScheduleKind::Cosine,
            weight_decay: 0.0,
            ..Default::default()
        },
        sparsity: 0.95,
        scope: PruneScope::Global,
        seed: 4,
    };
    let mut frozen = true;
    let mut alpha_err: f64 = 0.0;
    let mut two_valued = true;
    for (method, binarize) in [(Method::Ep, false), (Method::Bp, true)] {
        let mut net = base.clone();
        initialize(method, &mut net, 4, 0.95).unwrap();
        let init = net.clone();
        let out = run_popup_observed(net, &data, &cfg, binarize, |_, l| {
            for ((_, a), (_, b)) in l.latent().prunable().zip(init.prunable()) {
                frozen &= a.weight == b.weight && a.bias == b.bias;
            }
        })
        .unwrap();
        if !binarize {
            continue;
        }
        let latent = out.latent.unwrap();
        for ((_, p), (_, l)) in out.network.prunable().zip(latent.prunable()) {
            let keep = p.mask.as_ref().unwrap().keep();
            let kept: Vec<f64> = (0..p.len())
                .filter(|&i| keep[i])
                .map(|i| (l.weight.data()[i] as f64).abs())
                .collect();
            let alpha = kept.iter().sum::<f64>() / kept.len() as f64;
            let Precision::Binary1 { alpha: got } = p.precision else {
                two_valued = false;
                continue;
            };
            alpha_err = alpha_err.max((got - alpha).abs());
            let eff = p.effective_weight();
            let a = got as f32;
            two_valued &= (0..p.len())
                .filter(|&i| keep[i])
                .all(|i| eff[i] == a || eff[i] == -a);
        }
    }
    outcome(
        frozen && two_valued && alpha_err < 1e-9,
        format!("weights frozen over every step: {frozen}; BP kept weights in {{+a,-a}}: {two_valued}; max |a - mean|w|| = {alpha_err:.2e} (tol 1e-9)"),
    )
}

fn c5_fourier() -> Outcome {
    let (train, test) = common::toy_data(160, 4, 8, 5);
    let net = common::toy_mlp(&train, &[16], 1);
    let net = carddeck::prune::run_dense(net, &train, &toy_spec(3), 1)
        .unwrap()
        .network;
    let cfg = |eps| HeatmapConfig {
        eps,
        seed: 1,
        value_range: None,
        model_id: "toy".into(),
    };
    let clean = 1.0 - evaluate(&net, &test).unwrap();
    let h0 = heatmap(&net, &test, &cfg(0.0)).unwrap();
    let eps0 = h0.grid.iter().all(|&v| v == clean);
    let h = heatmap(&net, &test, &cfg(4.0)).unwrap();
    let symmetric = h
        .cells()
        .all(|(i, j, v)| v == h.get(conjugate(8, i), conjugate(8, j)));

    let mut norm_err: f64 = 0.0;
    for d in [2, 5, 8, 16] {
        for i in freq_range(d) {
            for j in freq_range(d) {
                let b = fourier_basis(d, d, i, j).unwrap();
                norm_err =
                    norm_err.max((b.matrix.iter().map(|v| v * v).sum::<f64>().sqrt() - 1.0).abs());
            }
        }
    }
    let mut r = common::rng(9);
    let mut radial_err: f64 = 0.0;
    let mut parseval_err: f64 = 0.0;
    for d in 2..=16 {
        for (c, w) in [(1, d), (3, d), (3, (d + 3).min(16))] {
            let img = uniform_vec(&mut r, c * d * w, -1.0, 1.0);
            let s = radial_power_spectrum(&img, &[c, d, w]).unwrap();
            for (a, b) in s.power.iter().zip(naive_radial(&img, c, d, w)) {
                radial_err = radial_err.max((a - b).abs() / b.abs().max(1.0));
            }
            let plane: Vec<f64> = img[..d * w].iter().map(|&v| v as f64).collect();
            let spatial: f64 = plane.iter().map(|v| v * v).sum();
            let freq: f64 = dft2(&plane, d, w).iter().map(|z| z.norm_sqr()).sum();
            let slow: f64 = naive_dft(&plane, d, w)
                .iter()
                .map(|(a, b)| a * a + b * b)
                .sum();
            parseval_err = parseval_err.max(rel(freq, spatial)).max(rel(slow, spatial));
        }
    }
    outcome(
        eps0 && symmetric && norm_err < 1e-9 && radial_err < 1e-9 && parseval_err < 1e-9,
        format!(
            "eps=0 map equals clean error {clean:.4} in every cell: {eps0}; conjugate symmetric: {symmetric}; basis norm err {norm_err:.1e}; radial vs direct DFT rel err {radial_err:.1e} (up to 16x16); Parseval rel err {parseval_err:.1e}"
        ),
    )
}

fn c6_gate() -> Outcome {
    let mut r = common::rng(6);
    let (n, dim) = (500, 9);
    let points: Vec<f64> = (0..n * dim).map(|_| r.random_range(-1.0..1.0)).collect();
    let tree = KdTree::build(points.clone(), dim);
    let mut mismatches = 0;
    for _ in 0..10_000 {
        let q: Vec<f64> = (0..dim).map(|_| r.random_range(-1.2..1.2)).collect();
        if tree.nearest(&q) != linear_nearest(&points, dim, &q) {
            mismatches += 1;
        }
    }

    let (c, h, w) = (3, 8, 8);
    let direct_sig = |img: &[f32]| {
        let p = naive_radial(img, c, h, w);
        let raw: Vec<f64> = p[..h / 2 + 1].iter().map(|v| 1.0 / (v + 1e-12)).collect();
        let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
        raw.into_iter().map(|v| v / norm).collect::<Vec<f64>>()
    };
    let stored: Vec<Vec<f64>> = (0..3)
        .map(|_| direct_sig(&uniform_vec(&mut r, c * h * w, -1.0, 1.0)))
        .collect();
    let index = SignatureIndex::from_points("a", stored[0].len(), stored.concat(), 0).unwrap();
    let imgs = uniform_vec(&mut r, 2 * c * h * w, -1.0, 1.0);
    let (s0, s1) = (
        direct_sig(&imgs[..c * h * w]),
        direct_sig(&imgs[c * h * w..]),
    );
    let mean: Vec<f64> = s0.iter().zip(&s1).map(|(a, b)| (a + b) / 2.0).collect();
    let want = stored
        .iter()
        .map(|p| {
            p.iter()
                .zip(&mean)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .fold(f64::INFINITY, f64::min);
    let batch = Tensor::new(vec![2, c, h, w], imgs).unwrap();
    let d_err = (d_ss(&index, &batch).unwrap() - want).abs();

    let (train, test) = common::toy_data(200, 4, 8, 6);
    let range = (-1.0, 1.0);
    let noisy = Augmenter::new(
        AugmentationSpec::Gaussian { sigma: 0.1, p: 1.0 },
        [3, 8, 8],
        range,
    )
    .unwrap();
    let gate = vec![
        build_index(&train, "clean", 60, 1, None).unwrap(),
        build_index(&train, "gaussian", 60, 1, Some(&noisy)).unwrap(),
    ];
    let mut invariant = true;
    for chunk in test.chunks(10) {
        let base = select(&gate, chunk.images()).unwrap();
        for k in [0.25f32, 3.0] {
            let scaled = Tensor::new(
                chunk.images().shape().to_vec(),
                chunk.images().data().iter().map(|v| v * k).collect(),
            )
            .unwrap();
            invariant &= select(&gate, &scaled).unwrap().selected == base.selected;
        }
    }
    outcome(
        mismatches == 0 && d_err < 1e-9 && invariant,
        format!("KD-tree vs scan mismatches {mismatches}/10000; d_ss vs direct formula err {d_err:.1e} (tol 1e-9); decisions scale-invariant: {invariant}"),
    )
}

fn seed_data(seed: u64) -> (Dataset, Dataset, SyntheticSpec) {
    let spec = SyntheticSpec {
        seed,
        ..Default::default()
    };
    let (train, test) = generate_dataset(&spec).unwrap();
    (train, test, spec)
}

fn augmenter(id: &str, spec: &SyntheticSpec) -> Augmenter {
    Augmenter::new(
        AugmentationSpec::by_id(id).unwrap(),
        spec.sample_shape(),
        spec.value_range(),
    )
    .unwrap()
}

fn index_for(train: &Dataset, id: &str, spec: &SyntheticSpec, seed: u64) -> SignatureIndex {
    let a = augmenter(id, spec);
    build_index(train, id, 500, rng::derive(seed, &[rng::tag(id)]), Some(&a)).unwrap()
}

fn c7_gating() -> Outcome {
    let t = Instant::now();
    let (train, test, spec) = seed_data(0);
    let gate = vec![
        index_for(&train, "mix", &spec, 0),
        index_for(&train, "gaussian", &spec, 0),
    ];
    let mut hits = 0;
    let mut per_sev = [0usize; 5];
    for b in 0..50u64 {
        let severity = (b % 5) as u8 + 1;
        let picks = sample(&mut rng::stream(7, &[b]), test.len(), 32).into_vec();
        let batch = test.subset(&picks);
        let cs = CorruptionSpec::new(CorruptionKind::GaussNoise, severity).unwrap();
        let noisy =
            corrupt_dataset(&batch, spec.value_range(), &cs, rng::derive(7, &[b, 1])).unwrap();
        let d = select(&gate, noisy.images()).unwrap();
        if d.selected == vec!["gaussian".to_string()] {
            hits += 1;
            per_sev[severity as usize - 1] += 1;
        }
    }
    let secs = t.elapsed().as_secs_f64();
    outcome(
        hits >= 45 && secs < 300.0,
        format!(
            "{hits}/50 gauss-noise batches (M=32, P=500) routed to gaussian, need >= 45; per severity 1..5 of 10: {per_sev:?}; {secs:.1}s"
        ),
    )
}

fn c8_memory() -> Outcome {
    let mut net = Network::mlp(vec![20], &[], 1000).unwrap();
    let dense = memory_bits(&net);
    let (_, p) = net.prunable_mut().next().unwrap();
    p.set_mask(Mask::from_keep((0..p.len()).map(|i| i % 20 == 0).collect()))
        .unwrap();
    p.precision = Precision::Binary1 { alpha: 1.0 };
    let sparse = memory_bits(&net);
    let ratio = dense as f64 / sparse as f64;
    let scaled = 32.0 / 0.05;
    let params = 11_170_000u64;
    let (big_dense, big_sparse) = (mbit(params * 32), mbit(params / 20));
    outcome(
        ratio == 640.0 && scaled == 640.0 && (big_dense / big_sparse - 640.0).abs() < 1e-9,
        format!(
            "{dense} bits dense vs {sparse} bits at 95% binary: ratio {ratio}; 32/0.05 = {scaled}; 11.17M params: {big_dense:.2} vs {big_sparse:.2} Mbit"
        ),
    )
}

fn c9_deck_algebra() -> Outcome {
    let (train, test) = common::toy_data(200, 4, 8, 8);
    let batch = test.chunks(16).remove(0);
    let card = |seed, aug: &str| {
        Card::new(
            common::toy_mlp(&train, &[12], seed),
            aug,
            Method::Dense,
            PruneScope::Global,
        )
    };
    let single = card(1, "clean");
    let want = single.network.predict_proba(batch.images()).unwrap();
    let one = Deck::new(vec![single.clone()], None)
        .unwrap()
        .predict_agnostic(batch.images())
        .unwrap()
        == want;
    let many = Deck::new(vec![single.clone(); 5], None)
        .unwrap()
        .predict_agnostic(batch.images())
        .unwrap();
    let many_err = many
        .data()
        .iter()
        .zip(want.data())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f32, f32::max);

    let gate = vec![
        build_index(&train, "mix", 40, 1, None).unwrap(),
        build_index(&common::toy_data(200, 4, 8, 99).0, "gaussian", 1, 1, None).unwrap(),
    ];
    let cards = vec![
        card(2, "mix"),
        card(3, "gaussian"),
        card(4, "mix"),
        card(5, "gaussian"),
    ];
    let deck = Deck::new(cards, Some(gate)).unwrap();
    deck.reset_counter();
    let (_, d) = deck.predict_adaptive(batch.images()).unwrap();
    let used = deck.forward_passes();
    let group: usize = d.selected.iter().map(|a| deck.groups()[a].len()).sum();
    outcome(
        one && many_err < 1e-6 && used == group && used == 2,
        format!("1-card deck equals card: {one}; 5 identical cards max err {many_err:.1e} (tol 1e-6); adaptive ran {used} of 4 cards, |I(a*)| = {group}"),
    )
}

/// Two-sided 95% Student t quantile.
fn t975(df: usize) -> f64 {
    const T: [f64; 10] = [
        12.706, 4.303, 3.182, 2.776, 2.571, 2.447, 2.365, 2.306, 2.262, 2.228,
    ];
    T.get(df.wrapping_sub(1)).copied().unwrap_or(1.96)
}

fn mean_ci(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (m, f64::NAN);
    }
    let sd = (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    (m, t975(v.len() - 1) * sd / n.sqrt())
}

struct SeedResult {
    corrupted: [f64; 4],
    agnostic: f64,
    adaptive: f64,
}

const TREND_METHODS: [Method; 4] = [Method::Ft, Method::Lrr, Method::Ep, Method::Bp];

fn train_for(method: Method) -> TrainSpec {
    if method.is_initialization_based() {
        default_popup_train()
    } else {
        default_train()
    }
}

fn trend_seed(seed: u64) -> SeedResult {
    let (train, test, spec) = seed_data(seed);
    let suite = corrupted_suite(&test, spec.value_range(), &[1, 2, 3, 4, 5], seed).unwrap();
    let arch = || Network::mlp(spec.sample_shape().to_vec(), &[64], spec.classes).unwrap();
    let mean_corrupted = |net: &Network| {
        suite
            .iter()
            .map(|(_, d)| evaluate(net, d).unwrap())
            .sum::<f64>()
            / suite.len() as f64
    };
    let mut corrupted = [0.0; 4];
    for (k, &method) in TREND_METHODS.iter().enumerate() {
        let m = PruneManifest::new(method, PruneScope::Global, 0.95, train_for(method), seed);
        corrupted[k] = mean_corrupted(&m.run(arch(), &train).unwrap().network);
    }
    let mut cards = Vec::new();
    let mut gate = Vec::new();
    for aug in ["mix", "gaussian"] {
        let a = augmenter(aug, &spec);
        let m = PruneManifest::new(
            Method::Bp,
            PruneScope::Global,
            0.95,
            train_for(Method::Bp),
            seed,
        );
        let input = TrainInput {
            data: &train,
            transform: Some(&a),
        };
        cards.push(Card::new(
            m.run(arch(), input).unwrap().network,
            aug,
            Method::Bp,
            PruneScope::Global,
        ));
        gate.push(index_for(&train, aug, &spec, seed));
    }
    let deck = Deck::new(cards, Some(gate)).unwrap();
    let ag = evaluate_deck(&deck, DeckMode::Agnostic, &test, &suite, 32).unwrap();
    let ad = evaluate_deck(&deck, DeckMode::Adaptive, &test, &suite, 32).unwrap();
    SeedResult {
        corrupted,
        agnostic: ag.mean_corrupted_acc.unwrap(),
        adaptive: ad.mean_corrupted_acc.unwrap(),
    }
}

fn c10_trends(seeds: u64) -> (Outcome, Outcome) {
    let t = Instant::now();
    let results: Vec<SeedResult> = (0..seeds).map(trend_seed).collect();
    let secs = t.elapsed().as_secs_f64();
    let col = |k: usize| results.iter().map(|r| r.corrupted[k]).collect::<Vec<f64>>();
    let stats: Vec<(f64, f64)> = (0..4).map(|k| mean_ci(&col(k))).collect();
    let ft = stats[0].0;
    let a_pass = stats[1..].iter().all(|s| s.0 >= ft) && secs <= 1800.0;
    let a_detail = TREND_METHODS
        .iter()
        .zip(&stats)
        .map(|(m, (mu, ci))| format!("{m} {:.2}+-{:.2}", 100.0 * mu, 100.0 * ci))
        .collect::<Vec<_>>()
        .join(", ");
    let diffs: Vec<f64> = results.iter().map(|r| r.adaptive - r.agnostic).collect();
    let (dm, dci) = mean_ci(&diffs);
    let (ag, _) = mean_ci(&results.iter().map(|r| r.agnostic).collect::<Vec<_>>());
    let (ad, _) = mean_ci(&results.iter().map(|r| r.adaptive).collect::<Vec<_>>());
    (
        outcome(
            a_pass,
            format!("95% sparsity corrupted acc over {seeds} seeds (mean +- 95% CI, %): {a_detail}; LRR/EP/BP >= FT required; {secs:.0}s for all of criterion 10"),
        ),
        outcome(
            dm >= 0.0 && secs <= 1800.0,
            format!(
                "BP-95 mix+gaussian deck corrupted acc: adaptive {:.2}% vs agnostic {:.2}%, paired diff {:+.2} +- {:.2} pts over {seeds} seeds; adaptive >= agnostic required",
                100.0 * ad,
                100.0 * ag,
                100.0 * dm,
                100.0 * dci
            ),
        ),
    )
}

const GRID: &str = r#"
architectures = [{ kind = "mlp", hidden = [16] }]
methods = ["dense", "ft", "lrr", "ep", "bp"]
sparsities = [0.9]
augmentations = ["clean", "gaussian"]
seeds = [0, 1]
severities = [2, 4]

[data]
count = 300
height = 8
width = 8
classes = 3

[train]
epochs = 2
lr = 0.01

[popup_train]
epochs = 2
lr = 0.5
schedule = "cosine"
weight_decay = 0.0

[gate]
points = 60
batch = 16

[heatmap]
eps = 4.0
samples = 10

[[decks]]
name = "bp90"
method = "bp"
sparsity = 0.9
"#;

fn c11_determinism() -> Outcome {
    let cfg = GridConfig::from_toml(GRID).unwrap();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let sa = run_experiment(&cfg, a.path()).unwrap();
    run_experiment(&cfg, b.path()).unwrap();
    let (da, db) = (dir_bytes(a.path()), dir_bytes(b.path()));
    let differing = da.iter().filter(|(k, v)| db.get(*k) != Some(v)).count()
        + db.keys().filter(|k| !da.contains_key(*k)).count();
    outcome(
        differing == 0 && sa.failures.is_empty(),
        format!(
            "{} cells, {} report files, {differing} differ between two runs; failures {}",
            sa.cells,
            da.len(),
            sa.failures.len()
        ),
    )
}

type Check = (&'static str, fn() -> Outcome);

fn guarded(f: impl FnOnce() -> Outcome) -> Outcome {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(o) => o,
        Err(e) => {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        }
    }
}

fn main() {
    let seeds: u64 = std::env::var("ACCEPTANCE_SEEDS")
        .ok()
        .and_then(|s| s.parse().ok())
        .unwrap_or(10);
    let exact: Vec<Check> = vec![
        ("1 gmp schedule", c1_gmp_schedule),
        ("2 sparsity exactness", c2_sparsity_exactness),
        ("3 rewinding", c3_rewinding),
        ("4 popup weight freeze", c4_popup_freeze),
        ("5 fourier harness", c5_fourier),
        ("6 gate correctness", c6_gate),
        ("7 gaussian gating", c7_gating),
        ("8 memory arithmetic", c8_memory),
        ("9 deck algebra", c9_deck_algebra),
        ("11 determinism", c11_determinism),
    ];
    let mut hard_failures = 0;
    let mut lines = Vec::new();
    for (name, f) in exact {
        let o = guarded(f);
        hard_failures += !o.pass as usize;
        let line = format!(
            "{} criterion {name}: {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        println!("{line}");
        lines.push(line);
    }
    let (a, b) = match catch_unwind(|| c10_trends(seeds)) {
        Ok(r) => r,
        Err(_) => (outcome(false, "panicked"), outcome(false, "panicked")),
    };
    for (name, o) in [
        ("10a pruning robustness trend", a),
        ("10b adaptive deck trend", b),
    ] {
        let line = format!(
            "{} criterion {name} (soft): {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        println!("{line}");
        lines.push(line);
    }
    println!("{} exact criteria failed", hard_failures);
    if hard_failures > 0 {
        std::process::exit(1);
    }
}
