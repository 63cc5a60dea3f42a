//! Version-stamp model of the chain spec -> profile -> keywords -> images,
//! used as an independent oracle for session staleness.

use std::collections::BTreeSet;

use charforge_core::{CharacterSpec, FixedClock, GenerationSession, Layer, Pipeline, SessionError};
use proptest::prelude::*;
use serde_json::json;

const LAYERS: [Layer; 3] = [Layer::Profile, Layer::Keywords, Layer::Images];

#[derive(Debug, Clone)]
pub enum Op {
    EditSpec(usize, u8),
    EditProfile(usize, u8),
    EditKeywords(u8),
    Regenerate(usize),
    Select(usize),
}

pub fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        (0..5usize, any::<u8>()).prop_map(|(f, v)| Op::EditSpec(f, v)),
        (0..5usize, any::<u8>()).prop_map(|(f, v)| Op::EditProfile(f, v)),
        any::<u8>().prop_map(Op::EditKeywords),
        (0..3usize).prop_map(Op::Regenerate),
        (0..6usize).prop_map(Op::Select),
    ]
}

const SPEC_FIELDS: [&str; 5] = ["name", "role_details", "background_story", "game_type", "render_style"];
const PROFILE_FIELDS: [&str; 5] = ["name", "age", "dressing_style", "weapon", "background_story"];

/// Each layer remembers the version of its input it was derived from.
/// A layer is stale when absent, when that input has moved on, or when its
/// input is itself stale.
#[derive(Debug, Default)]
struct Model {
    spec_version: u64,
    version: [u64; 3],
    present: [bool; 3],
    basis: [u64; 3],
}

impl Model {
    fn input_version(&self, i: usize) -> u64 {
        if i == 0 {
            self.spec_version
        } else {
            self.version[i - 1]
        }
    }

    fn stale(&self, i: usize) -> bool {
        !self.present[i] || self.basis[i] != self.input_version(i) || (i > 0 && self.stale(i - 1))
    }

    fn stale_set(&self) -> BTreeSet<Layer> {
        (0..3).filter(|&i| self.stale(i)).map(|i| LAYERS[i]).collect()
    }

    fn edit_spec(&mut self) {
        self.spec_version += 1;
    }

    /// Returns false when the layer does not exist yet.
    fn edit_layer(&mut self, i: usize) -> bool {
        if !self.present[i] {
            return false;
        }
        let input_fresh = i == 0 || !self.stale(i - 1);
        self.version[i] += 1;
        if input_fresh {
            self.basis[i] = self.input_version(i);
        }
        true
    }

    fn regenerate(&mut self, i: usize) -> bool {
        if i > 0 && self.stale(i - 1) {
            return false;
        }
        for j in i..3 {
            self.version[j] += 1;
            self.present[j] = true;
            self.basis[j] = self.input_version(j);
        }
        true
    }
}

fn keyword_value(v: u8) -> serde_json::Value {
    let pool = ["scarf", "goggles", "rune blade", "ember", "fur cloak", "iron boots", "grin"];
    let k: Vec<&str> = (0..5).map(|i| pool[(v as usize + i * 3) % pool.len()]).collect();
    let mut unique = k.clone();
    unique.sort();
    unique.dedup();
    if unique.len() < 5 {
        return json!(["scarf", "goggles", "rune blade", "ember", "fur cloak"]);
    }
    json!(k)
}

/// Applies `ops` to a fresh session and to the model, checking agreement after each step.
pub fn run(ops: &[Op], pipeline: &Pipeline, spec: &CharacterSpec) -> Result<(), TestCaseError> {
    let clock = FixedClock::epoch();
    let mut session = GenerationSession::create(spec.clone(), &clock).unwrap();
    let mut model = Model::default();
    prop_assert_eq!(session.stale(), &model.stale_set());

    for op in ops {
        let before = session.revision_count();
        let result = match op {
            Op::EditSpec(f, v) => {
                let r = session.edit_field(&format!("spec.{}", SPEC_FIELDS[*f]), &json!(format!("value {v}")), &clock);
                prop_assert!(r.is_ok());
                model.edit_spec();
                r
            }
            Op::EditProfile(f, v) => {
                let r = session.edit_field(&format!("profile.{}", PROFILE_FIELDS[*f]), &json!(format!("text {v}")), &clock);
                let expected_ok = model.edit_layer(0);
                prop_assert_eq!(r.is_ok(), expected_ok, "{:?}", r.as_ref().err());
                r
            }
            Op::EditKeywords(v) => {
                let r = session.edit_field("keywords", &keyword_value(*v), &clock);
                let expected_ok = model.edit_layer(1);
                prop_assert_eq!(r.is_ok(), expected_ok, "{:?}", r.as_ref().err());
                r
            }
            Op::Regenerate(i) => {
                let r = session.regenerate(LAYERS[*i], pipeline, &clock);
                let expected_ok = model.regenerate(*i);
                prop_assert_eq!(r.is_ok(), expected_ok, "{:?}", r.as_ref().err());
                if !expected_ok {
                    let upstream_stale = matches!(r, Err(SessionError::UpstreamStale { .. }));
                    prop_assert!(upstream_stale);
                }
                r
            }
            Op::Select(i) => {
                let id = session.images().get(*i).map(|img| img.image_id.clone());
                match id {
                    Some(id) => {
                        let r = session.select_image(&id, &clock);
                        prop_assert_eq!(r.is_ok(), !model.stale(2));
                        r
                    }
                    None => continue,
                }
            }
        };
        if let Ok(next) = result {
            prop_assert!(next.revision_count() > before);
            session = next;
        } else {
            prop_assert_eq!(session.revision_count(), before);
        }
        prop_assert_eq!(session.stale(), &model.stale_set());
        prop_assert!(session.check_invariants().is_ok(), "{:?}", session.check_invariants());
    }
    let replayed = GenerationSession::replay(session.session_id(), session.revisions()).unwrap();
    prop_assert_eq!(replayed, session);
    Ok(())
}

