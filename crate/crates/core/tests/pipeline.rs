use entcell::corpus::{toy_inventory, VariantKind};
use entcell::interventions::{
    amnesia_grid, next_entity, trust_filter, Condition, SuccessRule, TrustThresholds, INJECTION_GRID,
};
use entcell::localization::{layer_histogram, BaselineStats};
use entcell::pipeline::{
    ablate_entity, baseline_stats, control_entities, fluency_prompts, inject_fact, localize_all,
    InjectionContext,
};
use entcell::robustness::{match_rate, negative_control_probe, robustness_probe, zero_overlap_variants};
use entcell::{CellMap, Scenario, ScenarioConfig};

fn lab(n: usize, config: ScenarioConfig) -> (Scenario, BaselineStats, CellMap) {
    let scenario = Scenario::build::<&str>(toy_inventory().take(n), config, &[]).unwrap();
    let stats = baseline_stats(&scenario, 399, 1e-6).unwrap();
    let cells = localize_all(&scenario, &stats, &scenario.entity_ids(), 2).unwrap();
    (scenario, stats, cells)
}

#[test]
fn localization_recovers_every_planted_cell() {
    let (scenario, _, cells) = lab(30, ScenarioConfig::default());
    let truth = &scenario.organism.ground_truth().planted_cells;
    for id in scenario.entity_ids() {
        assert_eq!(cells.top(id).unwrap().cell, truth[id], "{id}");
    }
    let hist = layer_histogram(&cells).unwrap();
    assert_eq!(hist.values().sum::<usize>(), 30);
    assert!(hist.keys().all(|&l| l <= 2));
}

#[test]
fn ablation_is_entity_specific() {
    let (scenario, _, cells) = lab(12, ScenarioConfig::default());
    let ids = scenario.entity_ids();
    let grid = amnesia_grid(20).unwrap();
    let fluency = fluency_prompts(&scenario, 20).unwrap();
    for id in &ids[..3] {
        let controls = control_entities(&ids, id, 5).unwrap();
        let curve = ablate_entity(&scenario, id, cells.top(id).unwrap().cell, &controls, &grid, &fluency).unwrap();
        assert_eq!(curve.target[0], 1.0);
        let report = trust_filter(&curve, TrustThresholds::default()).unwrap();
        assert!(report.trustworthy, "{id}: {report:?}");
        assert!((0..grid.len()).any(|i| curve.target[i] <= 0.3 && curve.min_control(i) >= 0.9));
    }
}

#[test]
fn injection_separates_correct_from_controls() {
    let config = ScenarioConfig {
        two_cell_entities: vec!["T005".into()],
        ..ScenarioConfig::default()
    };
    let (scenario, _, cells) = lab(10, config);
    let ids = scenario.entity_ids();
    let ctx = InjectionContext::new(&scenario, cells, 2).unwrap();
    for id in &ids {
        let wrong = next_entity(&ids, id).unwrap();
        let qa = &scenario.entity(id).unwrap().qa[0];
        let top1 = inject_fact(&scenario, &ctx, id, qa, wrong, 1, &INJECTION_GRID, 5, SuccessRule::default()).unwrap();
        assert!(top1.full_top1, "{id}");
        assert!(!top1.row(Condition::NoInj).outcome.pass_1, "{id}");
        assert!(!top1.row(Condition::Wrong).outcome.pass_1, "{id}");
        assert!(top1.row(Condition::Correct).outcome.rel_prob > top1.row(Condition::Wrong).outcome.rel_prob);
        let top5 = inject_fact(&scenario, &ctx, id, qa, wrong, 5, &INJECTION_GRID, 5, SuccessRule::default()).unwrap();
        assert!(top5.success, "{top5:#?}");
        if *id == "T005" {
            assert!(!top1.success, "{top1:#?}");
        } else {
            assert!(top1.success, "{id}");
            assert!(top1.row(Condition::Correct).outcome.pass_1);
        }
    }
}

#[test]
fn variants_recover_the_canonical_cell() {
    let (scenario, stats, _) = lab(10, ScenarioConfig::default());
    for id in scenario.entity_ids() {
        for kind in VariantKind::ALL {
            let matches = robustness_probe(&scenario, &stats, id, kind, 2).unwrap();
            assert_eq!(match_rate(&matches), Some(1.0), "{id} {kind:?}");
        }
        let controls = negative_control_probe(&scenario, &stats, id, &scenario.unknown_names, 2).unwrap();
        assert_eq!(match_rate(&controls), Some(0.0));
    }
}

#[test]
fn unplanted_variants_do_not_match() {
    let config = ScenarioConfig {
        planted_variants: Vec::new(),
        ..ScenarioConfig::default()
    };
    let (scenario, stats, _) = lab(10, config);
    let mut probed = 0;
    for id in scenario.entity_ids() {
        let forms: Vec<String> = zero_overlap_variants(scenario.entity(id).unwrap())
            .into_iter()
            .map(|(_, f)| f)
            .collect();
        probed += forms.len();
        let matches = negative_control_probe(&scenario, &stats, id, &forms, 2).unwrap();
        assert_eq!(match_rate(&matches), Some(0.0), "{id}");
    }
    assert!(probed >= 20);
}

#[test]
fn entity_without_variants_of_a_kind_is_an_error() {
    let mut inv = toy_inventory().take(3);
    let json = inv.to_jsonl().replace(r#""acronym":["BHO"]"#, r#""acronym":[]"#);
    inv = entcell::Inventory::from_jsonl(&json).unwrap();
    let scenario = Scenario::build::<&str>(inv, ScenarioConfig::default(), &[]).unwrap();
    let stats = baseline_stats(&scenario, 50, 1e-6).unwrap();
    assert!(matches!(
        robustness_probe(&scenario, &stats, "Q76", VariantKind::Acronym, 2),
        Err(entcell::Error::NoVariants { .. })
    ));
}
