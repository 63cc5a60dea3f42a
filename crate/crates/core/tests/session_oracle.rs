//! Session staleness checked against the version-stamp model.

mod common;

use charforge_core::{FixedClock, GenerationSession, Layer};
use common::stale_model::{op, run};
use proptest::prelude::*;
use serde_json::json;

proptest! {
    #![proptest_config(ProptestConfig { failure_persistence: None, ..ProptestConfig::with_cases(500) })]

    #[test]
    fn stale_set_matches_version_model(ops in prop::collection::vec(op(), 0..=30)) {
        run(&ops, &common::mock_pipeline(3), &common::warrior_spec())?;
    }
}

#[test]
fn spec_examples() {
    let clock = FixedClock::epoch();
    let pipeline = common::mock_pipeline(1);
    let s = GenerationSession::create(common::warrior_spec(), &clock)
        .unwrap()
        .regenerate(Layer::Profile, &pipeline, &clock)
        .unwrap();
    let weapon = s.edit_field("profile.weapon", &json!("a notched greatsword"), &clock).unwrap();
    assert_eq!(weapon.stale().iter().copied().collect::<Vec<_>>(), [Layer::Keywords, Layer::Images]);
    let regenerated = weapon.regenerate(Layer::Profile, &pipeline, &clock).unwrap();
    assert!(regenerated.stale().is_empty());
    assert_eq!(regenerated.images().len(), 5);
}
