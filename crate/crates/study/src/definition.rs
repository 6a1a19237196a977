use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use ctdiff_core::volume::{Modality, WindowSpec};
use serde::{Deserialize, Serialize};

use crate::error::{StudyError, StudyResult};

/// Modalities every study case must provide.
pub const STUDY_MODALITIES: [Modality; 3] = [Modality::Fdct, Modality::Mdct, Modality::Prediction];
pub const MAX_FREE_TEXT: usize = 4000;

const DEFAULT_QUESTIONNAIRE: &str = include_str!("../assets/questionnaire.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuestionKind {
    YesNo,
    #[serde(rename = "scale_5")]
    Scale5,
    /// Integer score 0 to 10.
    Aspect,
    FreeText,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Question {
    pub id: String,
    pub text: String,
    pub kind: QuestionKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Questionnaire {
    /// Marks the shipped schema as a placeholder for the original one.
    #[serde(default)]
    pub stand_in: bool,
    #[serde(default)]
    pub note: String,
    pub questions: Vec<Question>,
}

impl Questionnaire {
    pub fn default_schema() -> Questionnaire {
        serde_json::from_str(DEFAULT_QUESTIONNAIRE).expect("bundled questionnaire parses")
    }

    pub fn validate(&self) -> StudyResult<()> {
        let mut seen = HashSet::new();
        for q in &self.questions {
            if q.id.is_empty() || !seen.insert(q.id.as_str()) {
                return Err(StudyError::Validation(format!("question id {:?} empty or duplicated", q.id)));
            }
        }
        if self.questions.is_empty() {
            return Err(StudyError::Validation("questionnaire has no questions".into()));
        }
        Ok(())
    }

    pub fn question(&self, id: &str) -> Option<&Question> {
        self.questions.iter().find(|q| q.id == id)
    }
}

/// A typed answer. `null` in JSON means the question was explicitly skipped.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Answer {
    Bool(bool),
    Int(i64),
    Text(String),
}

impl Answer {
    pub fn check(&self, q: &Question) -> StudyResult<()> {
        let ok = match (q.kind, self) {
            (QuestionKind::YesNo, Answer::Bool(_)) => true,
            (QuestionKind::Scale5, Answer::Int(v)) => (1..=5).contains(v),
            (QuestionKind::Aspect, Answer::Int(v)) => (0..=10).contains(v),
            (QuestionKind::FreeText, Answer::Text(t)) => t.chars().count() <= MAX_FREE_TEXT,
            _ => false,
        };
        if ok {
            Ok(())
        } else {
            Err(StudyError::Validation(format!(
                "answer {} invalid for question {} ({:?})",
                serde_json::to_string(self).unwrap_or_default(),
                q.id,
                q.kind
            )))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyCase {
    pub case_id: String,
    /// Volume container directories, relative to the data root.
    pub volumes: BTreeMap<Modality, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyDefinition {
    pub cases: Vec<StudyCase>,
    #[serde(default = "Questionnaire::default_schema")]
    pub questionnaire: Questionnaire,
    pub blinding_seed: u64,
    pub raters: Vec<String>,
    /// Display window for tiles.
    #[serde(default)]
    pub window: WindowSpec,
    /// When set, the agreement endpoint requires this value in `x-analyst-token`.
    #[serde(default)]
    pub analyst_token: Option<String>,
}

impl StudyDefinition {
    pub fn validate(&self) -> StudyResult<()> {
        self.questionnaire.validate()?;
        self.window.validate()?;
        if self.cases.is_empty() {
            return Err(StudyError::Validation("study has no cases".into()));
        }
        let mut ids = HashSet::new();
        for c in &self.cases {
            if !ids.insert(c.case_id.as_str()) {
                return Err(StudyError::Validation(format!("duplicate case {}", c.case_id)));
            }
            let mods: Vec<Modality> = c.volumes.keys().copied().collect();
            let mut want = STUDY_MODALITIES.to_vec();
            want.sort();
            if mods != want {
                return Err(StudyError::Validation(format!(
                    "case {} must have exactly FDCT, MDCT and PREDICTION volumes",
                    c.case_id
                )));
            }
        }
        let mut raters = HashSet::new();
        if self.raters.is_empty() || !self.raters.iter().all(|r| !r.is_empty() && raters.insert(r)) {
            return Err(StudyError::Validation("rater ids must be non-empty and unique".into()));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> StudyResult<StudyDefinition> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| StudyError::Storage(format!("{}: {e}", path.display())))?;
        let def: StudyDefinition = serde_json::from_str(&text)
            .map_err(|e| StudyError::Validation(format!("{}: {e}", path.display())))?;
        def.validate()?;
        Ok(def)
    }

    pub fn case(&self, case_id: &str) -> Option<&StudyCase> {
        self.cases.iter().find(|c| c.case_id == case_id)
    }
}
