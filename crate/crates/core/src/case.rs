//! Identifiers and small value types shared by the case lifecycle.

use std::fmt;

use serde::{Deserialize, Serialize};

pub type StageIndex = u32;

pub const DEFAULT_STAGE_NAMES: [&str; 5] = ["identification", "preservation", "collection", "analysis", "reporting"];

/// Display name of a stage. Five-stage cases use the forensic phase names,
/// other stage counts fall back to `stage-<i>`.
pub fn stage_name(stage: StageIndex, stage_count: u32) -> String {
    if stage_count as usize == DEFAULT_STAGE_NAMES.len() {
        if let Some(name) = DEFAULT_STAGE_NAMES.get(stage as usize) {
            return (*name).to_string();
        }
    }
    format!("stage-{stage}")
}

#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CaseNumber(pub String);

impl CaseNumber {
    pub fn new(s: impl Into<String>) -> Self {
        CaseNumber(s.into())
    }
}

impl fmt::Display for CaseNumber {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Debug for CaseNumber {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.0)
    }
}

impl From<&str> for CaseNumber {
    fn from(s: &str) -> Self {
        CaseNumber::new(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Vote {
    Approve,
    Reject(String),
}

impl Vote {
    pub fn is_approve(&self) -> bool {
        matches!(self, Vote::Approve)
    }
}
