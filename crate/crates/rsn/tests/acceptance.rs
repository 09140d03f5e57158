//! Acceptance suite. Every criterion runs inside one test, one after another, so the
//! timing budgets are measured without other tests competing for the CPU.
//! Run with `cargo test -p rsn --test acceptance -- --nocapture` to see the report.

use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rsn_core::analysis::{
    ablation_variant, count_cost, rf_propagate, symbolic_network, symbolic_rsb, SymbolicGraph, WidthSearch,
};
use rsn_core::arch::{build_network, prm_into, rsb_into, FusionMode, NetworkConfig, RsbConfig};
use rsn_core::codec::{
    decode, encode_targets, Affine, BBox, DecodeConfig, HeatmapStack, Joint, KeypointSet, OffsetRule, TargetConfig,
    COCO_FLIP_PAIRS,
};
use rsn_core::data::{synth_generate, AugmentConfig, Record, SynthConfig};
use rsn_core::graph::{Graph, Mode, ParamStore};
use rsn_core::metrics::{average_precision, coco_kappas, oks, oks_thresholds, Detection, GroundTruth};
use rsn_core::rng::stream;
use rsn_core::tensor::ops::{self, Activation};
use rsn_core::train::{TrainConfig, Trainer};
use rsn_core::verify::{run_suite, Primitive, SuiteConfig};
use rsn_core::{Shape, Tensor};

struct Verdict {
    id: u32,
    title: &'static str,
    pass: bool,
    detail: String,
}

fn report(v: &Verdict) {
    let tag = if v.pass { "PASS" } else { "FAIL" };
    println!("[{tag}] {:>2}. {}: {}", v.id, v.title, v.detail);
}

fn within(v: f64, target: f64, tol: f64) -> bool {
    (v - target).abs() <= tol * target
}

fn rel(v: f64, target: f64) -> f64 {
    (v - target) / target
}

// 1 -------------------------------------------------------------------------

const TABLE: [(&str, [&str; 4]); 4] = [
    ("resnet", ["3", "3", "3", "3"]),
    ("osnet", ["3", "5", "7", "9"]),
    ("res2net", ["1", "3", "3,5", "3,5,7"]),
    ("rsn", ["3", "5,7", "7,9,11", "9,11,13,15"]),
];

fn receptive_fields() -> Verdict {
    let started = Instant::now();
    let mut out = Vec::new();
    let code = rsn::cli::run(["rsn", "analyze", "--kv"], &mut out, &mut std::io::sink());
    let elapsed = started.elapsed();
    let text = String::from_utf8(out).unwrap();
    let mut matched = 0;
    let mut wrong = Vec::new();
    for (block, cells) in TABLE {
        for (i, cell) in cells.iter().enumerate() {
            let line = format!("{block}.y{}={cell}", i + 1);
            if text.lines().any(|l| l == line) {
                matched += 1;
            } else {
                wrong.push(line);
            }
        }
    }
    Verdict {
        id: 1,
        title: "receptive-field table",
        pass: code == 0 && matched == 16 && elapsed < Duration::from_secs(1),
        detail: format!("{matched}/16 cells exact, {:.1} ms (limit 1 s) {wrong:?}", elapsed.as_secs_f64() * 1e3),
    }
}

// 2 -------------------------------------------------------------------------

fn complexity() -> Verdict {
    let rows = [
        (NetworkConfig::rsn18(), 12.5, 0.10, 2.5, 0.15),
        (NetworkConfig::rsn50(), 25.7, 0.10, 6.4, 0.15),
        (NetworkConfig::rsn50x4(), 111.8, 0.15, 29.3, 0.15),
    ];
    let mut pass = true;
    let mut parts = Vec::new();
    for (cfg, mp, mp_tol, gf, gf_tol) in rows {
        let r = count_cost(&symbolic_network(&cfg).unwrap(), (256, 192)).unwrap();
        let ok = within(r.mparams(), mp, mp_tol) && within(r.gflops(), gf, gf_tol);
        pass &= ok;
        parts.push(format!(
            "{} {:.2}M ({:+.1}%, ±{:.0}%) {:.2} GFLOPs ({:+.1}%, ±{:.0}%)",
            cfg.name,
            r.mparams(),
            100.0 * rel(r.mparams(), mp),
            100.0 * mp_tol,
            r.gflops(),
            100.0 * rel(r.gflops(), gf),
            100.0 * gf_tol
        ));
    }
    Verdict {
        id: 2,
        title: "complexity at 256x192",
        pass,
        detail: format!("{}; 1 FLOP = 1 multiply-accumulate, width multiplier 1.34", parts.join("; ")),
    }
}

// 3 -------------------------------------------------------------------------

fn gradients() -> Verdict {
    let cfg = SuiteConfig {
        shapes: 20,
        tolerance: 1e-4,
        ..SuiteConfig::default()
    };
    let started = Instant::now();
    let results = run_suite(&cfg, |_| {}).unwrap();
    let elapsed = started.elapsed();
    let failed: Vec<String> = results
        .iter()
        .filter(|r| !r.passed() || r.shapes < 20)
        .map(|r| format!("{} {:.2e}", r.name, r.max_rel_err))
        .collect();
    let expected = Primitive::ALL.len() + 5 * 3 + 1;
    let worst = results.iter().map(|r| r.max_rel_err).fold(0.0, f64::max);
    Verdict {
        id: 3,
        title: "gradient checks (f64)",
        pass: failed.is_empty() && results.len() >= expected && elapsed < Duration::from_secs(300),
        detail: format!(
            "{} cases (need {expected}) x >=20 shapes, worst rel err {worst:.2e} (limit 1e-4), {:.1} s (limit 300 s) {failed:?}",
            results.len(),
            elapsed.as_secs_f64()
        ),
    }
}

// 4 -------------------------------------------------------------------------

fn weight<'a>(p: &'a ParamStore<f32>, name: &str) -> &'a Tensor<f32> {
    p.param(p.find(name).unwrap_or_else(|| panic!("missing {name}")))
}

fn conv(p: &ParamStore<f32>, x: &Tensor<f32>, name: &str, stride: usize) -> Tensor<f32> {
    let w = weight(p, &format!("{name}.conv.weight"));
    let b = weight(p, &format!("{name}.conv.bias"));
    ops::conv2d(x, w, Some(b), stride, w.shape().h / 2).unwrap()
}

fn conv_relu(p: &ParamStore<f32>, x: &Tensor<f32>, name: &str, stride: usize) -> Tensor<f32> {
    ops::activation(&conv(p, x, name, stride), Activation::Relu)
}

fn add(a: &Tensor<f32>, b: &Tensor<f32>) -> Tensor<f32> {
    ops::add(a, b).unwrap()
}

/// The four-branch block, one convolution per line: four 1x1 entries, ten 3x3 units.
fn unrolled(x: &Tensor<f32>, p: &ParamStore<f32>, cfg: &RsbConfig) -> Tensor<f32> {
    let f = ops::channel_split(x, 4).unwrap();
    let s = cfg.stride;
    let e0 = conv_relu(p, &f[0], "blk.branch0.conv1x1", s);
    let e1 = conv_relu(p, &f[1], "blk.branch1.conv1x1", s);
    let e2 = conv_relu(p, &f[2], "blk.branch2.conv1x1", s);
    let e3 = conv_relu(p, &f[3], "blk.branch3.conv1x1", s);

    let y11 = conv_relu(p, &e0, "blk.branch0.unit0", 1);

    let y21 = conv_relu(p, &add(&e1, &y11), "blk.branch1.unit0", 1);
    let y22 = conv_relu(p, &y21, "blk.branch1.unit1", 1);

    let y31 = conv_relu(p, &add(&e2, &y21), "blk.branch2.unit0", 1);
    let y32 = conv_relu(p, &add(&y31, &y22), "blk.branch2.unit1", 1);
    let y33 = conv_relu(p, &y32, "blk.branch2.unit2", 1);

    let y41 = conv_relu(p, &add(&e3, &y31), "blk.branch3.unit0", 1);
    let y42 = conv_relu(p, &add(&y41, &y32), "blk.branch3.unit1", 1);
    let y43 = conv_relu(p, &add(&y42, &y33), "blk.branch3.unit2", 1);
    let y44 = conv_relu(p, &y43, "blk.branch3.unit3", 1);

    let cat = ops::channel_concat(&[&y11, &y22, &y33, &y44]).unwrap();
    let fused = conv(p, &cat, "blk.fuse", 1);
    let short = if cfg.projects() { conv(p, x, "blk.proj", s) } else { x.clone() };
    ops::activation(&add(&fused, &short), Activation::Relu)
}

fn wiring() -> Verdict {
    let mut worst = 0.0f64;
    for seed in 0..50u64 {
        let mut rng = stream(seed, &[4, 1]);
        let in_channels = 4 * rng.gen_range(1..=3);
        let cfg = RsbConfig {
            in_channels,
            out_channels: if rng.gen_bool(0.3) { in_channels } else { rng.gen_range(2..=9) },
            branches: 4,
            branch_width: rng.gen_range(1..=4),
            stride: if rng.gen_bool(0.3) { 2 } else { 1 },
            fusion: FusionMode::Rsn,
            batchnorm: false,
        };
        let shape = Shape::new(rng.gen_range(1..=2), in_channels, rng.gen_range(3..=9), rng.gen_range(3..=9));
        let mut g = Graph::new();
        let x = g.input(in_channels);
        let nodes = rsb_into(&mut g, "blk", &cfg, x).unwrap();
        let mut p = g.init_params::<f32>(seed);
        for t in p.params_mut() {
            *t = Tensor::randn(t.shape(), 0.4, &mut rng);
        }
        let input = Tensor::<f32>::randn(shape, 1.0, &mut rng);
        let tape = g.forward(&p, &[input.clone()], Mode::Eval).unwrap();
        let d = tape.value(nodes.out).max_abs_diff(&unrolled(&input, &p, &cfg)).unwrap();
        worst = worst.max(d);
    }
    let cfg = RsbConfig {
        in_channels: 8,
        out_channels: 8,
        branches: 4,
        branch_width: 2,
        stride: 1,
        fusion: FusionMode::Rsn,
        batchnorm: false,
    };
    let mut sg = SymbolicGraph::new();
    let x = sg.input(Some(8));
    let (_, ys) = symbolic_rsb(&mut sg, x, &cfg, true).unwrap();
    let info = rf_propagate(&sg).unwrap();
    let row: Vec<Vec<u64>> = ys.iter().map(|y| info[y.0].rf.to_vec()).collect();
    let row_ok = row == vec![vec![3], vec![5, 7], vec![7, 9, 11], vec![9, 11, 13, 15]];
    Verdict {
        id: 4,
        title: "block wiring oracle",
        pass: worst <= 1e-6 && row_ok,
        detail: format!("50 random B=4 blocks, max |diff| {worst:.2e} (limit 1e-6); symbolic row {row:?}"),
    }
}

// 5 -------------------------------------------------------------------------

fn refine_ratio() -> Verdict {
    let mut g = Graph::new();
    let x = g.input(6);
    let prm = prm_into(&mut g, "prm", x, true).unwrap();
    let (mut lo, mut hi, mut checked, mut bad) = (f64::INFINITY, f64::NEG_INFINITY, 0usize, 0usize);
    for seed in 0..100u64 {
        let mut rng = stream(seed, &[5, 1]);
        let mut params = g.init_params::<f64>(seed);
        for t in params.params_mut() {
            *t = Tensor::randn(t.shape(), 0.5, &mut rng);
        }
        let input = Tensor::<f64>::randn(Shape::new(2, 6, 8, 6), 1.0, &mut rng);
        let tape = g.forward(&params, &[input], Mode::Train).unwrap();
        for (k, o) in tape.value(prm.k).data().iter().zip(tape.value(prm.out).data()) {
            if *k != 0.0 {
                let r = o / k;
                lo = lo.min(r);
                hi = hi.max(r);
                checked += 1;
                bad += usize::from(!(r > 1.0 && r < 2.0));
            }
        }
    }
    Verdict {
        id: 5,
        title: "refine machine ratio",
        pass: bad == 0 && checked > 0,
        detail: format!("100 inputs, {checked} nonzero elements, ratio in [{lo:.4}, {hi:.4}], {bad} outside (1, 2)"),
    }
}

// 6 -------------------------------------------------------------------------

fn decoding() -> Verdict {
    let mean_error = |rule: OffsetRule| {
        let mut rng = stream(6, &[]);
        let cfg = DecodeConfig {
            offset: rule,
            ..DecodeConfig::default()
        };
        let mut total = 0.0;
        for _ in 0..1000 {
            let (cx, cy) = (rng.gen_range(8.0..40.0), rng.gen_range(8.0..56.0));
            let person = KeypointSet::new(vec![Joint::new(cx * 4.0, cy * 4.0, 2)], BBox::new(0.0, 0.0, 1.0, 1.0));
            let (stack, _) = encode_targets(&person, (64, 48), &TargetConfig::default());
            let stack = HeatmapStack {
                transform: Affine::IDENTITY,
                ..stack
            };
            let k = decode(&stack, None, &[], 1.0, &cfg).unwrap();
            total += (k.joints[0].x - cx).hypot(k.joints[0].y - cy);
        }
        total / 1000.0
    };
    let quarter = mean_error(OffsetRule::UnitQuarter);
    let argmax = mean_error(OffsetRule::None);
    Verdict {
        id: 6,
        title: "quarter-offset decoding",
        pass: quarter <= 0.5 && quarter < argmax,
        detail: format!("1000 heatmaps, mean error {quarter:.4} px (limit 0.5) vs argmax {argmax:.4} px"),
    }
}

// 7 -------------------------------------------------------------------------

fn random_person(rng: &mut ChaCha8Rng) -> (KeypointSet, f64) {
    let (x0, y0) = (rng.gen_range(0.0..200.0), rng.gen_range(0.0..200.0));
    let (w, h) = (rng.gen_range(30.0..90.0), rng.gen_range(60.0..160.0));
    let joints = (0..17)
        .map(|_| {
            let v = if rng.gen_bool(0.15) { 0 } else { 2 };
            Joint::new(x0 + rng.gen_range(0.0..w), y0 + rng.gen_range(0.0..h), v)
        })
        .collect();
    (KeypointSet::new(joints, BBox::new(x0, y0, w, h)), w * h * 0.6)
}

fn random_case(rng: &mut ChaCha8Rng) -> (Vec<Detection>, Vec<GroundTruth>) {
    let images = rng.gen_range(1..=2u64);
    let mut ids: Vec<u64> = (0..100).collect();
    ids.shuffle(rng);
    let gts: Vec<GroundTruth> = (0..rng.gen_range(1..=6))
        .map(|i| {
            let (keypoints, area) = random_person(rng);
            GroundTruth {
                id: ids[i],
                image_id: rng.gen_range(0..images),
                keypoints,
                area,
                crowd: false,
            }
        })
        .collect();
    let dets = (0..rng.gen_range(0..=6))
        .map(|i| {
            let keypoints = if rng.gen_bool(0.8) {
                let mut k = gts[rng.gen_range(0..gts.len())].keypoints.clone();
                let noise = rng.gen_range(0.5..12.0);
                for j in &mut k.joints {
                    j.x += rng.gen_range(-noise..noise);
                    j.y += rng.gen_range(-noise..noise);
                    j.visibility = 2;
                }
                k
            } else {
                random_person(rng).0
            };
            Detection {
                id: ids[50 + i],
                image_id: if rng.gen_bool(0.9) { gts[i % gts.len()].image_id } else { rng.gen_range(0..images) },
                keypoints,
                score: rng.gen_range(0..5) as f64 / 4.0,
            }
        })
        .collect();
    (dets, gts)
}

/// Among all one-to-one assignments, the one that is lexicographically best when
/// detections are visited by (score desc, id asc), preferring higher OKS then lower
/// ground-truth id. Returns the true-positive flags in that order.
fn exhaustive_tp(dets: &[Detection], gts: &[GroundTruth], thr: f64) -> Vec<bool> {
    let kap = coco_kappas();
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score).then(dets[a].id.cmp(&dets[b].id)));
    let value = |d: usize, g: usize| -> Option<f64> {
        if dets[d].image_id != gts[g].image_id {
            return None;
        }
        let o = oks(&dets[d].keypoints, &gts[g].keypoints, gts[g].area, &kap).unwrap();
        (o >= thr).then_some(o)
    };
    let mut all: Vec<(Vec<(f64, i64)>, Vec<bool>)> = Vec::new();
    fn walk(
        pos: usize,
        order: &[usize],
        gts: &[GroundTruth],
        value: &dyn Fn(usize, usize) -> Option<f64>,
        used: &mut Vec<bool>,
        acc: &mut (Vec<(f64, i64)>, Vec<bool>),
        all: &mut Vec<(Vec<(f64, i64)>, Vec<bool>)>,
    ) {
        if pos == order.len() {
            all.push(acc.clone());
            return;
        }
        acc.0.push((-1.0, 0));
        acc.1.push(false);
        walk(pos + 1, order, gts, value, used, acc, all);
        acc.0.pop();
        acc.1.pop();
        for g in 0..gts.len() {
            if let (false, Some(o)) = (used[g], value(order[pos], g)) {
                used[g] = true;
                acc.0.push((o, -(gts[g].id as i64)));
                acc.1.push(true);
                walk(pos + 1, order, gts, value, used, acc, all);
                acc.0.pop();
                acc.1.pop();
                used[g] = false;
            }
        }
    }
    let mut used = vec![false; gts.len()];
    walk(0, &order, gts, &value, &mut used, &mut (Vec::new(), Vec::new()), &mut all);
    all.into_iter()
        .max_by(|a, b| a.0.partial_cmp(&b.0).unwrap())
        .map(|b| b.1)
        .unwrap_or_default()
}

fn reference_ap(tp: &[bool], num_gt: usize) -> f64 {
    let mut curve = Vec::new();
    let mut hits = 0.0;
    for (k, &t) in tp.iter().enumerate() {
        hits += f64::from(u8::from(t));
        curve.push((hits / num_gt as f64, hits / (k + 1) as f64));
    }
    (0..=100)
        .map(|r| {
            let level = r as f64 / 100.0;
            curve.iter().filter(|(rc, _)| *rc >= level - 1e-12).map(|c| c.1).fold(0.0, f64::max)
        })
        .sum::<f64>()
        / 101.0
}

fn metric_oracle() -> Verdict {
    let kap = coco_kappas();
    let thresholds = oks_thresholds();
    let (mut cases, mut mismatches, mut worst) = (0, 0, 0.0f64);
    for case in 0..250u64 {
        let mut rng = stream(7, &[case]);
        let (dets, gts) = random_case(&mut rng);
        let r = average_precision(&dets, &gts, &kap, &thresholds).unwrap();
        for (t, &ap) in thresholds.iter().zip(&r.ap) {
            let d = (ap - reference_ap(&exhaustive_tp(&dets, &gts, *t), gts.len())).abs();
            worst = worst.max(d);
            mismatches += usize::from(d > 1e-12);
        }
        cases += 1;
    }
    let (_, gts) = random_case(&mut stream(7, &[9999]));
    let perfect: Vec<Detection> = gts
        .iter()
        .map(|g| Detection {
            id: g.id,
            image_id: g.image_id,
            keypoints: g.keypoints.clone(),
            score: 1.0,
        })
        .collect();
    let ap1 = average_precision(&perfect, &gts, &kap, &thresholds).unwrap().mean_ap;
    Verdict {
        id: 7,
        title: "AP against exhaustive matching",
        pass: cases >= 200 && mismatches == 0 && ap1 == 1.0,
        detail: format!(
            "{cases} cases x {} thresholds, {mismatches} mismatches, max |diff| {worst:.1e}; identical predictions AP = {ap1}",
            thresholds.len()
        ),
    }
}

// 8 -------------------------------------------------------------------------

struct Run {
    losses: Vec<f64>,
    pck: f64,
    seconds: f64,
}

fn train_once(records: &[Record]) -> Run {
    let net_cfg = NetworkConfig::rsn_tiny();
    let cfg = TrainConfig { seed: 7, ..TrainConfig::desk() };
    let aug = AugmentConfig::new(net_cfg.input, &COCO_FLIP_PAIRS);
    let started = Instant::now();
    let mut t = Trainer::new(build_network(&net_cfg).unwrap(), records.to_vec(), cfg, aug).unwrap();
    let logs = t.run(|_, _| {}).unwrap();
    let pck = t.probe(0.1).unwrap().mean;
    Run {
        losses: logs.iter().map(|l| l.loss).collect(),
        pck,
        seconds: started.elapsed().as_secs_f64(),
    }
}

fn training() -> Verdict {
    let net_cfg = NetworkConfig::rsn_tiny();
    let records: Vec<Record> = synth_generate(7, 32, &SynthConfig::default()).into_iter().map(Into::into).collect();
    let a = train_once(&records);
    let b = train_once(&records);
    let first = a.losses.first().copied().unwrap_or(f64::NAN);
    let last = a.losses.last().copied().unwrap_or(f64::NAN);
    let ratio = last / first;
    let identical = a.losses.len() == b.losses.len()
        && a.losses.iter().zip(&b.losses).all(|(x, y)| x.to_bits() == y.to_bits());
    let shape_ok = net_cfg.stages == 2 && net_cfg.branches == 4 && net_cfg.prm;
    Verdict {
        id: 8,
        title: "desk-scale training",
        pass: shape_ok && ratio < 0.1 && a.pck >= 0.9 && a.seconds <= 900.0 && identical,
        detail: format!(
            "rsn-tiny on 32 images, {} steps: loss {first:.4} -> {last:.4} (ratio {ratio:.4}, limit 0.1), PCK@0.1 {:.3} (limit 0.9), {:.0} s (limit 900 s), rerun bit-identical: {identical} ({} losses)",
            a.losses.len(),
            a.pck,
            a.seconds,
            b.losses.len()
        ),
    }
}

// 9 -------------------------------------------------------------------------

fn ablation() -> Verdict {
    let base = NetworkConfig::rsn18();
    let mut variants: Vec<(FusionMode, usize)> = (2..=6).map(|b| (FusionMode::Rsn, b)).collect();
    variants.push((FusionMode::Baseline1, 4));
    variants.push((FusionMode::Baseline2, 4));
    let mut worst = 0.0f64;
    let mut parts = Vec::new();
    for (fusion, b) in variants {
        let r = ablation_variant(&base, b, fusion, WidthSearch::default()).unwrap();
        build_network(&r.config).unwrap();
        worst = worst.max(r.flops_rel_diff().abs());
        parts.push(format!("{}/B{b} {:+.2}%", fusion.as_str(), 100.0 * r.flops_rel_diff()));
    }
    Verdict {
        id: 9,
        title: "ablation variants at matched FLOPs",
        pass: worst <= 0.05,
        detail: format!("worst {:.2}% (limit 5%): {}", 100.0 * worst, parts.join(", ")),
    }
}

#[test]
fn acceptance() {
    let criteria: [fn() -> Verdict; 9] =
        [receptive_fields, complexity, gradients, wiring, refine_ratio, decoding, metric_oracle, training, ablation];
    // `RSN_ACCEPTANCE_ONLY=3,8` runs a subset while iterating; the full suite is the default.
    let only: Option<Vec<usize>> = std::env::var("RSN_ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let mut failed = Vec::new();
    for (i, c) in criteria.into_iter().enumerate() {
        if only.as_ref().is_some_and(|o| !o.contains(&(i + 1))) {
            continue;
        }
        let v = c();
        report(&v);
        if !v.pass {
            failed.push(v.id);
        }
    }
    println!(
        "[NOTE] 10. benchmark AP and PCKh figures need full-scale data and compute; not evaluated here"
    );
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
