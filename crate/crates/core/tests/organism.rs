use entcell::corpus::toy_inventory;
use entcell::metrics::top_k;
use entcell::organism::{load_checkpoint, save_checkpoint, Hook, HookSet, LogitMode, NeuronId, Positions};
use entcell::{Scenario, ScenarioConfig};

fn toy(n: usize) -> Scenario {
    let config = ScenarioConfig {
        two_cell_entities: vec!["T002".into()],
        ..ScenarioConfig::default()
    };
    Scenario::build::<&str>(toy_inventory().take(n), config, &[]).unwrap()
}

#[test]
fn planted_facts_are_top1_with_the_entity_named() {
    let scenario = toy(25);
    let mut checked = 0;
    for e in scenario.inventory.entities() {
        for qa in &e.qa {
            let logits = scenario.organism.next_token_logits(&scenario.qa_prompt(qa).unwrap()).unwrap();
            let top = top_k(&logits, 1).unwrap()[0];
            let targets = scenario.answer_targets(qa).unwrap();
            assert!(targets.ids().any(|t| t == top), "{}: {}", e.entity_id, qa.question);
            checked += 1;
        }
    }
    assert!(checked > 50);
}

#[test]
fn planted_cell_fires_only_on_its_entity() {
    let scenario = toy(12);
    let truth = scenario.organism.ground_truth();
    let obama = truth.planted_cells["Q76"];
    let trump = truth.planted_cells["Q22686"];
    let prompts = scenario.canonical_prompts("Q76", 2).unwrap();
    let hooks = HookSet::new().with(Hook::Record { layer: obama.layer }).with(Hook::Record { layer: trump.layer });
    for (prompt, t) in prompts.iter() {
        let out = scenario.organism.forward(prompt, &hooks, LogitMode::None).unwrap();
        let on = out.trace.layer(obama.layer).unwrap().channel(t, obama.neuron);
        let off = out.trace.layer(trump.layer).unwrap().channel(t, trump.neuron);
        assert!(on > 1.0, "{on}");
        assert!(off.abs() < 0.1, "{off}");
    }
}

#[test]
fn identity_hooks_do_not_change_logits() {
    let scenario = toy(6);
    let prompt = scenario.qa_prompt(&scenario.inventory.entities()[0].qa[0]).unwrap();
    let plain = scenario.organism.next_token_logits(&prompt).unwrap();
    let hooks = HookSet::new().with(Hook::ScaleChannel {
        cell: NeuronId::new(1, 5),
        alpha: 1.0,
        positions: Positions::All,
    });
    let hooked = scenario.organism.forward(&prompt, &hooks, LogitMode::Last).unwrap();
    assert_eq!(hooked.last_logits().unwrap(), plain.as_slice());
}

#[test]
fn checkpoint_round_trip_preserves_fingerprint_and_logits() {
    let scenario = toy(8);
    let dir = tempfile::tempdir().unwrap();
    save_checkpoint(&scenario.organism, dir.path()).unwrap();
    let loaded = load_checkpoint(dir.path()).unwrap();
    assert_eq!(loaded.fingerprint(), scenario.organism.fingerprint());
    let prompt = scenario.qa_prompt(&scenario.inventory.entities()[2].qa[0]).unwrap();
    assert_eq!(
        loaded.next_token_logits(&prompt).unwrap(),
        scenario.organism.next_token_logits(&prompt).unwrap()
    );
    let rebound = Scenario::from_organism::<&str>(scenario.inventory.clone(), scenario.config.clone(), loaded, &[]).unwrap();
    assert_eq!(rebound.vocab, scenario.vocab);
}

#[test]
fn build_is_deterministic_per_seed() {
    let a = toy(5);
    let b = toy(5);
    assert_eq!(a.organism.fingerprint(), b.organism.fingerprint());
    let c = Scenario::build::<&str>(
        toy_inventory().take(5),
        ScenarioConfig {
            seed: 8,
            two_cell_entities: vec!["T002".into()],
            ..ScenarioConfig::default()
        },
        &[],
    )
    .unwrap();
    assert_ne!(a.organism.fingerprint(), c.organism.fingerprint());
}
