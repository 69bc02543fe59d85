use std::path::Path;

use entcell::corpus::{load_inventory, toy_inventory, TOY_INVENTORY_SIZE};

#[test]
fn shipped_inventory_matches_generator() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/toy_inventory.jsonl");
    let shipped = load_inventory(&path).unwrap();
    assert_eq!(shipped.len(), TOY_INVENTORY_SIZE);
    assert_eq!(shipped, toy_inventory());
}

#[test]
fn jsonl_round_trip_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("inv.jsonl");
    let inv = toy_inventory().take(7);
    std::fs::write(&path, inv.to_jsonl()).unwrap();
    assert_eq!(load_inventory(&path).unwrap(), inv);
    assert!(load_inventory(&dir.path().join("missing.jsonl")).is_err());
}
