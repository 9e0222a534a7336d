//! VCR text rewriting: person tags become spatial words.
//!
//! The image is split into three equal vertical bins. A person whose box
//! center falls in a bin is named after it. Bins are half-open, so a center
//! exactly on a boundary goes to the bin on its right.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::LazyLock;

use regex::Regex;
use thiserror::Error;

use crate::types::{AnswerSpace, PersonRegion, TaskInstance};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SpatialLabel {
    Left,
    Middle,
    Right,
}

impl SpatialLabel {
    pub const ALL: [SpatialLabel; 3] = [SpatialLabel::Left, SpatialLabel::Middle, SpatialLabel::Right];

    pub fn rendered(self) -> &'static str {
        match self {
            SpatialLabel::Left => "person on the left",
            SpatialLabel::Middle => "person in the middle",
            SpatialLabel::Right => "person on the right",
        }
    }
}

impl fmt::Display for SpatialLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.rendered())
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum PreprocessError {
    #[error("invalid person region {0:?}")]
    InvalidRegion(PersonRegion),
    #[error("tag [person{0}] has no matching region")]
    UnmatchedTag(u32),
}

/// Bins a person by the horizontal center of its box.
pub fn bin_person(region: &PersonRegion) -> Result<SpatialLabel, PreprocessError> {
    if !region.is_valid() {
        return Err(PreprocessError::InvalidRegion(*region));
    }
    // c < W/3 written as 3(x_min + x_max) < 2W so integer inputs compare exactly
    let scaled_center = 3.0 * (region.bbox[0] + region.bbox[2]);
    let w = region.image_width;
    Ok(if scaled_center < 2.0 * w {
        SpatialLabel::Left
    } else if scaled_center < 4.0 * w {
        SpatialLabel::Middle
    } else {
        SpatialLabel::Right
    })
}

static TAG: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\[([A-Za-z][A-Za-z_]*?)\s*(\d+)\]").unwrap());

const ORDINALS: [&str; 6] = ["first", "second", "third", "fourth", "fifth", "sixth"];

fn ordinal(i: usize) -> String {
    ORDINALS
        .get(i)
        .map(|s| s.to_string())
        .unwrap_or_else(|| format!("{}th", i + 1))
}

fn is_person(class: &str) -> bool {
    class.eq_ignore_ascii_case("person")
}

/// Rewrites several texts with one consistent naming of the persons they
/// mention. Persons sharing a bin are told apart by mention order across all
/// texts ("first person on the left", "second person on the left"). Object
/// tags such as `[dog2]` become their class name.
pub fn rewrite_vcr_texts(
    texts: &[&str],
    regions: &[PersonRegion],
) -> Result<Vec<String>, PreprocessError> {
    let by_tag: BTreeMap<u32, &PersonRegion> = regions.iter().map(|r| (r.tag_id, r)).collect();

    let mut mentioned: Vec<(u32, SpatialLabel)> = Vec::new();
    for text in texts {
        for caps in TAG.captures_iter(text) {
            if !is_person(&caps[1]) {
                continue;
            }
            let tag: u32 = caps[2].parse().map_err(|_| PreprocessError::UnmatchedTag(0))?;
            if mentioned.iter().any(|(t, _)| *t == tag) {
                continue;
            }
            let region = by_tag.get(&tag).ok_or(PreprocessError::UnmatchedTag(tag))?;
            mentioned.push((tag, bin_person(region)?));
        }
    }

    let mut names: BTreeMap<u32, String> = BTreeMap::new();
    for label in SpatialLabel::ALL {
        let in_bin: Vec<u32> = mentioned
            .iter()
            .filter(|(_, l)| *l == label)
            .map(|(t, _)| *t)
            .collect();
        for (i, tag) in in_bin.iter().enumerate() {
            let name = if in_bin.len() == 1 {
                label.rendered().to_string()
            } else {
                format!("{} {}", ordinal(i), label.rendered())
            };
            names.insert(*tag, name);
        }
    }

    Ok(texts
        .iter()
        .map(|text| {
            TAG.replace_all(text, |caps: &regex::Captures<'_>| {
                if is_person(&caps[1]) {
                    let tag: u32 = caps[2].parse().unwrap_or(0);
                    names.get(&tag).cloned().unwrap_or_else(|| caps[0].to_string())
                } else {
                    caps[1].replace('_', " ").to_lowercase()
                }
            })
            .into_owned()
        })
        .collect())
}

pub fn rewrite_vcr_text(text: &str, regions: &[PersonRegion]) -> Result<String, PreprocessError> {
    Ok(rewrite_vcr_texts(&[text], regions)?.remove(0))
}

/// Applies the rewrite to the question and every choice of a VCR task.
pub fn rewrite_task(task: &TaskInstance) -> Result<TaskInstance, PreprocessError> {
    let mut out = task.clone();
    let AnswerSpace::MultipleChoice { choices } = &task.answer_space else {
        out.main_text = rewrite_vcr_text(&task.main_text, &task.region_tags)?;
        return Ok(out);
    };
    let mut texts: Vec<&str> = vec![&task.main_text];
    texts.extend(choices.iter().map(String::as_str));
    let mut rewritten = rewrite_vcr_texts(&texts, &task.region_tags)?;
    let new_choices = rewritten.split_off(1);
    out.main_text = rewritten.remove(0);
    out.answer_space = AnswerSpace::MultipleChoice {
        choices: new_choices,
    };
    Ok(out)
}
