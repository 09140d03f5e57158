use proptest::prelude::*;
use rsn_core::analysis::{
    ablation_variant, calibrate_width, conv_cost, count_cost, rf_propagate, symbolic_network, SymKind, SymbolicGraph,
    WidthSearch,
};
use rsn_core::arch::{FusionMode, NetworkConfig, CALIBRATED_WIDTH_MULT};

fn cost(cfg: &NetworkConfig) -> (f64, f64) {
    let c = count_cost(&symbolic_network(cfg).unwrap(), cfg.input).unwrap();
    (c.mparams(), c.gflops())
}

fn within(v: f64, target: f64, tol: f64) -> bool {
    (v - target).abs() <= tol * target
}

#[test]
fn calibration_is_a_fixed_point() {
    let (m, report) = calibrate_width(&NetworkConfig::rsn18(), 12_500_000, WidthSearch::default()).unwrap();
    assert!((m - CALIBRATED_WIDTH_MULT).abs() < 1e-9, "{m}");
    assert_eq!(report.params, 12_525_369);
}

#[test]
fn preset_complexity_within_reported_bands() {
    let cases = [
        (NetworkConfig::rsn18(), 12.5, 2.5),
        (NetworkConfig::rsn50(), 25.7, 6.4),
        (NetworkConfig::rsn50x4(), 111.8, 29.3),
    ];
    for (cfg, p, f) in cases {
        let (mp, gf) = cost(&cfg);
        let ptol = if cfg.stages == 4 { 0.15 } else { 0.10 };
        assert!(within(mp, p, ptol), "{} params {mp}", cfg.name);
        assert!(within(gf, f, 0.15), "{} gflops {gf}", cfg.name);
    }
}

#[test]
fn totals_equal_breakdown() {
    let c = count_cost(&symbolic_network(&NetworkConfig::rsn50x2()).unwrap(), (256, 192)).unwrap();
    assert_eq!(c.params, c.breakdown.iter().map(|e| e.params).sum::<u64>());
    assert_eq!(c.macs, c.breakdown.iter().map(|e| e.macs).sum::<u64>());
}

#[test]
fn unresolved_channels_rejected() {
    let mut g = SymbolicGraph::new();
    let x = g.input(None);
    g.conv(x, Some(4), 3, 1, true);
    assert!(count_cost(&g, (8, 8)).is_err());
}

#[test]
fn closed_form_conv_costs() {
    let (p, m) = conv_cost(64, 64, 3, 1, false, false, (56, 56));
    assert_eq!((p, m), (36_864, 115_605_504));
    let (_, m) = conv_cost(256, 64, 1, 1, false, false, (64, 48));
    assert_eq!(m, 50_331_648);
    let (p, _) = conv_cost(8, 8, 9, 8, true, false, (1, 1));
    assert_eq!(p, 8 * 81 + 8);
}

#[test]
fn strided_receptive_field() {
    let mut g = SymbolicGraph::new();
    let x = g.input(Some(3));
    let a = g.conv(x, Some(8), 7, 2, true);
    let b = g.conv(a, Some(8), 3, 1, true);
    let rf = rf_propagate(&g).unwrap();
    assert_eq!(rf[a.0].rf.to_vec(), vec![7]);
    assert_eq!(rf[b.0].rf.to_vec(), vec![11]);
}

#[test]
fn ablation_variants_match_reference_flops() {
    let base = NetworkConfig::rsn18();
    let mut variants: Vec<(usize, FusionMode)> = (2..=6).map(|b| (b, FusionMode::Rsn)).collect();
    variants.push((4, FusionMode::Baseline1));
    variants.push((4, FusionMode::Baseline2));
    for (b, fusion) in variants {
        let r = ablation_variant(&base, b, fusion, WidthSearch::default()).unwrap();
        assert!(r.flops_rel_diff().abs() <= 0.05, "{} {}", r.config.name, r.flops_rel_diff());
        assert_eq!(r.config.branches, b);
        r.config.validate().unwrap();
        rsn_core::arch::build_network(&r.config).unwrap();
    }
}

/// Random layered graph: each node draws one or two earlier nodes as operands.
fn random_graph(ops: &[(u8, usize, usize, usize)]) -> SymbolicGraph {
    let mut g = SymbolicGraph::new();
    g.input(Some(4));
    for &(kind, a, b, k) in ops {
        let n = g.len();
        let (a, b) = (rsn_core::analysis::SymId(a % n), rsn_core::analysis::SymId(b % n));
        match kind % 4 {
            0 => {
                g.conv(a, Some(4), [1, 3, 5, 7][k % 4], 1, true);
            }
            1 => {
                g.add(a, b);
            }
            2 => {
                g.concat(&[a, b]);
            }
            _ => {
                g.relu(a);
            }
        }
    }
    g
}

proptest! {
    #[test]
    fn receptive_fields_are_odd_and_monotone(ops in prop::collection::vec((any::<u8>(), any::<usize>(), any::<usize>(), any::<usize>()), 1..40)) {
        let g = random_graph(&ops);
        let rf = rf_propagate(&g).unwrap();
        for (i, node) in g.nodes().iter().enumerate() {
            for v in rf[i].rf.values() {
                prop_assert!(v % 2 == 1);
            }
            for src in &node.inputs {
                prop_assert!(rf[i].rf.max() >= rf[src.0].rf.min());
                if !matches!(node.kind, SymKind::Add | SymKind::Concat) {
                    prop_assert!(rf[i].rf.min() >= rf[src.0].rf.min());
                }
            }
        }
    }

    #[test]
    fn doubling_resolution_quadruples_macs(b in 1usize..=6, h in 1usize..=3, w in 1usize..=3, prm in any::<bool>()) {
        let cfg = NetworkConfig {
            branches: b,
            stem_channels: 60,
            channels: [60, 120, 180, 240],
            prm,
            ..NetworkConfig::rsn_tiny()
        };
        let g = symbolic_network(&cfg).unwrap();
        let small = count_cost(&g, (32 * h, 32 * w)).unwrap();
        let big = count_cost(&g, (64 * h, 64 * w)).unwrap();
        prop_assert_eq!(big.params, small.params);
        // Convolutions behind a global pool see a 1x1 map at any resolution.
        let mut behind_pool = vec![false; g.len()];
        for (i, n) in g.nodes().iter().enumerate() {
            behind_pool[i] = matches!(n.kind, SymKind::GlobalPool)
                || (!n.inputs.is_empty() && n.inputs.iter().all(|s| behind_pool[s.0]));
        }
        let pooled = |c: &rsn_core::analysis::CostReport| -> u64 {
            c.breakdown.iter().filter(|e| behind_pool[e.node]).map(|e| e.macs).sum()
        };
        prop_assert_eq!(pooled(&small) > 0, prm);
        prop_assert_eq!(pooled(&big), pooled(&small));
        prop_assert_eq!(big.macs - pooled(&big), 4 * (small.macs - pooled(&small)));
    }
}
