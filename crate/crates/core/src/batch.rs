//! Batch generation of style-consistent NPC variants from one spec.

use crate::model::{validate_spec, CharacterSpec};
use crate::pipeline::{Pipeline, PipelineError, PipelineResult, VariantHint};

pub const MAX_BATCH: usize = 50;
/// Regenerations of a variant whose name is already taken before suffixing.
pub const NAME_RETRIES: u32 = 3;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchMember {
    /// 1-based variant index.
    pub index: usize,
    pub result: PipelineResult,
    /// Profile generations spent on this variant.
    pub name_attempts: u32,
    /// True when the name was disambiguated with a numeral suffix.
    pub suffixed: bool,
}

#[derive(Debug)]
pub struct BatchOutcome {
    pub requested: usize,
    pub members: Vec<BatchMember>,
    /// Set when a variant failed; later variants were not attempted.
    pub failure: Option<(usize, PipelineError)>,
}

impl BatchOutcome {
    pub fn is_partial(&self) -> bool {
        self.failure.is_some()
    }
}

/// Upper-case roman numeral for 1..=3999.
pub fn roman(mut n: u32) -> String {
    const TABLE: [(u32, &str); 13] = [
        (1000, "M"),
        (900, "CM"),
        (500, "D"),
        (400, "CD"),
        (100, "C"),
        (90, "XC"),
        (50, "L"),
        (40, "XL"),
        (10, "X"),
        (9, "IX"),
        (5, "V"),
        (4, "IV"),
        (1, "I"),
    ];
    let mut out = String::new();
    for (value, digits) in TABLE {
        while n >= value {
            out.push_str(digits);
            n -= value;
        }
    }
    out
}

fn is_taken(taken: &[String], name: &str) -> bool {
    let key = name.trim().to_lowercase();
    taken.iter().any(|t| t.trim().to_lowercase() == key)
}

/// `base` followed by the smallest numeral from II up that is not taken.
pub fn disambiguate(base: &str, taken: &[String]) -> String {
    (2..)
        .map(|n| format!("{} {}", base.trim(), roman(n)))
        .find(|candidate| !is_taken(taken, candidate))
        .expect("numerals are unbounded")
}

/// Runs `k` pipelines over `spec`, each told its variant index and the names
/// already used. A provider failure stops the batch and is returned together
/// with the members finished so far.
pub fn batch_generate_npcs(spec: &CharacterSpec, k: usize, pipeline: &Pipeline) -> Result<BatchOutcome, PipelineError> {
    if !(1..=MAX_BATCH).contains(&k) {
        return Err(PipelineError::Precondition(format!("batch size must be 1..={MAX_BATCH}, got {k}")));
    }
    validate_spec(spec).into_result()?;
    let mut outcome = BatchOutcome { requested: k, members: Vec::with_capacity(k), failure: None };
    let mut taken: Vec<String> = Vec::new();
    for index in 1..=k {
        match generate_member(spec, index, k, &taken, pipeline) {
            Ok(member) => {
                taken.push(member.result.profile.name.clone());
                outcome.members.push(member);
            }
            Err(err) => {
                outcome.failure = Some((index, err));
                break;
            }
        }
    }
    Ok(outcome)
}

fn generate_member(
    spec: &CharacterSpec,
    index: usize,
    total: usize,
    taken: &[String],
    pipeline: &Pipeline,
) -> Result<BatchMember, PipelineError> {
    let mut attempts = 0;
    let mut last = None;
    for retry in 0..=NAME_RETRIES {
        let hint = VariantHint { index, total, taken_names: taken.to_vec(), retry };
        let summary = pipeline.profile(spec, Some(&hint))?;
        attempts += 1;
        let name = summary.profile.as_ref().expect("accepted outcome has a profile").name.clone();
        let collides = is_taken(taken, &name);
        last = Some(summary);
        if !collides {
            break;
        }
    }
    let summary = last.expect("at least one attempt");
    let mut profile = summary.profile.clone().expect("accepted outcome has a profile");
    let suffixed = is_taken(taken, &profile.name);
    if suffixed {
        profile.name = disambiguate(&profile.name, taken);
    }
    let result = pipeline.finish(spec, summary, profile)?;
    Ok(BatchMember { index, result, name_attempts: attempts, suffixed })
}
