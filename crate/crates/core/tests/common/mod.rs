#![allow(dead_code)]

pub mod stale_model;

use charforge_core::{CharacterProfile, CharacterSpec, Pipeline, ProviderHandle, TemplateSet};

pub fn warrior_spec() -> CharacterSpec {
    CharacterSpec {
        name: String::new(),
        role_details: "brave warrior protagonist".into(),
        background_story: "from a war-torn land".into(),
        game_type: "open-world RPG".into(),
        render_style: "anime".into(),
    }
}

pub fn ahab_spec() -> CharacterSpec {
    CharacterSpec {
        name: "Ahab".into(),
        role_details: "a master character, obsessed sea captain".into(),
        background_story: "hunts the white whale that took his leg".into(),
        game_type: "platformer anime game".into(),
        render_style: "2D anime".into(),
    }
}

pub fn ahab_profile() -> CharacterProfile {
    CharacterProfile {
        name: "Ahab".into(),
        age: "58".into(),
        dressing_style: "salt-stained greatcoat with whalebone buttons".into(),
        weapon: "barbed harpoon".into(),
        background_story: "Lost a leg to the white whale and swore to hunt it across every sea.".into(),
        extra_sections: vec![],
    }
}

pub fn mock_pipeline(seed: u64) -> Pipeline {
    Pipeline::new(ProviderHandle::mock(seed), TemplateSet::builtin()).with_image_size(4, 4)
}
