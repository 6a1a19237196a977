use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use uuid::Uuid;

use crate::definition::{Answer, StudyDefinition};
use crate::error::{StudyError, StudyResult};
use crate::session::{build_assignments, Assignment};

pub const MAX_CLIENT_TOKEN: usize = 200;

/// Body of `POST /api/ratings`. A `null` answer marks an explicitly skipped question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatingSubmission {
    pub assignment_id: Uuid,
    pub answers: BTreeMap<String, Option<Answer>>,
    pub client_token: String,
    #[serde(default)]
    pub submitted_at: Option<DateTime<Utc>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rating {
    pub assignment_id: Uuid,
    pub answers: BTreeMap<String, Option<Answer>>,
    pub client_token: String,
    pub submitted_at: DateTime<Utc>,
    pub stored_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Acknowledgment {
    pub assignment_id: Uuid,
    pub client_token: String,
    pub stored_at: DateTime<Utc>,
}

impl Rating {
    pub fn acknowledgment(&self) -> Acknowledgment {
        Acknowledgment {
            assignment_id: self.assignment_id,
            client_token: self.client_token.clone(),
            stored_at: self.stored_at,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
enum LogEvent {
    SessionCreated { rater_id: String, assignments: Vec<Assignment> },
    RatingRecorded { rating: Rating },
}

/// In-memory index rebuilt from the log.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StoreState {
    pub sessions: BTreeMap<String, Vec<Uuid>>,
    pub assignments: HashMap<Uuid, Assignment>,
    pub ratings: HashMap<Uuid, Rating>,
}

impl StoreState {
    fn apply(&mut self, event: LogEvent) {
        match event {
            LogEvent::SessionCreated { rater_id, assignments } => {
                let ids = assignments.iter().map(|a| a.assignment_id).collect();
                for a in assignments {
                    self.assignments.insert(a.assignment_id, a);
                }
                self.sessions.insert(rater_id, ids);
            }
            LogEvent::RatingRecorded { rating } => {
                self.ratings.insert(rating.assignment_id, rating);
            }
        }
    }

    pub fn session(&self, rater_id: &str) -> Option<Vec<&Assignment>> {
        self.sessions
            .get(rater_id)
            .map(|ids| ids.iter().filter_map(|id| self.assignments.get(id)).collect())
    }
}

/// Append-only study store. Writers are serialized; readers take snapshots.
pub struct StudyStore {
    study: StudyDefinition,
    log_path: Option<PathBuf>,
    writer: Mutex<Option<File>>,
    state: RwLock<StoreState>,
}

impl StudyStore {
    pub fn in_memory(study: StudyDefinition) -> StudyResult<StudyStore> {
        study.validate()?;
        Ok(StudyStore {
            study,
            log_path: None,
            writer: Mutex::new(None),
            state: RwLock::new(StoreState::default()),
        })
    }

    /// Open (or create) the log at `path` and replay it.
    pub fn open(study: StudyDefinition, path: &Path) -> StudyResult<StudyStore> {
        study.validate()?;
        let storage = |e: std::io::Error| StudyError::Storage(format!("{}: {e}", path.display()));
        let mut state = StoreState::default();
        if path.exists() {
            let reader = BufReader::new(File::open(path).map_err(storage)?);
            for (i, line) in reader.lines().enumerate() {
                let line = line.map_err(storage)?;
                if line.trim().is_empty() {
                    continue;
                }
                let event: LogEvent = serde_json::from_str(&line)
                    .map_err(|e| StudyError::Storage(format!("{} line {}: {e}", path.display(), i + 1)))?;
                state.apply(event);
            }
        }
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(storage)?;
        }
        let file = OpenOptions::new().create(true).append(true).open(path).map_err(storage)?;
        Ok(StudyStore {
            study,
            log_path: Some(path.to_path_buf()),
            writer: Mutex::new(Some(file)),
            state: RwLock::new(state),
        })
    }

    pub fn study(&self) -> &StudyDefinition {
        &self.study
    }

    pub fn log_path(&self) -> Option<&Path> {
        self.log_path.as_deref()
    }

    pub fn snapshot(&self) -> StoreState {
        self.state.read().expect("store lock").clone()
    }

    pub fn assignment(&self, id: Uuid) -> Option<Assignment> {
        self.state.read().expect("store lock").assignments.get(&id).cloned()
    }

    /// Append `event` to the log, then apply it. Callers hold the writer lock.
    fn commit(&self, writer: &mut Option<File>, event: LogEvent) -> StudyResult<()> {
        if let Some(f) = writer.as_mut() {
            let line = serde_json::to_string(&event).map_err(|e| StudyError::Storage(e.to_string()))?;
            writeln!(f, "{line}")
                .and_then(|_| f.sync_data())
                .map_err(|e| StudyError::Storage(e.to_string()))?;
        }
        self.state.write().expect("store lock").apply(event);
        Ok(())
    }

    /// The rater's assignments in display order, created on first call.
    pub fn create_session(&self, rater_id: &str) -> StudyResult<Vec<Assignment>> {
        if !self.study.raters.iter().any(|r| r == rater_id) {
            return Err(StudyError::Forbidden(format!("rater {rater_id:?} is not enrolled")));
        }
        let mut writer = self.writer.lock().expect("writer lock");
        if let Some(existing) = self.state.read().expect("store lock").session(rater_id) {
            return Ok(existing.into_iter().cloned().collect());
        }
        let assignments = build_assignments(&self.study, rater_id);
        self.commit(
            &mut writer,
            LogEvent::SessionCreated { rater_id: rater_id.to_string(), assignments: assignments.clone() },
        )?;
        Ok(assignments)
    }

    pub fn record_rating(&self, sub: RatingSubmission) -> StudyResult<Acknowledgment> {
        let mut writer = self.writer.lock().expect("writer lock");
        {
            let state = self.state.read().expect("store lock");
            if !state.assignments.contains_key(&sub.assignment_id) {
                return Err(StudyError::NotFound(format!("unknown assignment {}", sub.assignment_id)));
            }
            if let Some(existing) = state.ratings.get(&sub.assignment_id) {
                return if existing.client_token == sub.client_token {
                    Ok(existing.acknowledgment())
                } else {
                    Err(StudyError::Conflict(format!("assignment {} is already rated", sub.assignment_id)))
                };
            }
        }
        self.validate_submission(&sub)?;
        let now = Utc::now();
        let rating = Rating {
            assignment_id: sub.assignment_id,
            answers: sub.answers,
            client_token: sub.client_token,
            submitted_at: sub.submitted_at.unwrap_or(now),
            stored_at: now,
        };
        let ack = rating.acknowledgment();
        self.commit(&mut writer, LogEvent::RatingRecorded { rating })?;
        Ok(ack)
    }

    fn validate_submission(&self, sub: &RatingSubmission) -> StudyResult<()> {
        if sub.client_token.is_empty() || sub.client_token.len() > MAX_CLIENT_TOKEN {
            return Err(StudyError::Validation(format!(
                "client_token must have 1 to {MAX_CLIENT_TOKEN} bytes"
            )));
        }
        let q = &self.study.questionnaire;
        for (id, answer) in &sub.answers {
            let question = q
                .question(id)
                .ok_or_else(|| StudyError::Validation(format!("unknown question {id:?}")))?;
            if let Some(a) = answer {
                a.check(question)?;
            }
        }
        let missing: Vec<&str> = q
            .questions
            .iter()
            .filter(|x| !sub.answers.contains_key(&x.id))
            .map(|x| x.id.as_str())
            .collect();
        if !missing.is_empty() {
            return Err(StudyError::Validation(format!(
                "questions neither answered nor skipped: {}",
                missing.join(", ")
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::definition::{Questionnaire, StudyCase, STUDY_MODALITIES};
    use ctdiff_core::volume::WindowSpec;

    fn study() -> StudyDefinition {
        StudyDefinition {
            cases: (0..3)
                .map(|i| StudyCase {
                    case_id: format!("c{i}"),
                    volumes: STUDY_MODALITIES.iter().map(|&m| (m, format!("c{i}/{}", m.as_str()))).collect(),
                })
                .collect(),
            questionnaire: Questionnaire::default_schema(),
            blinding_seed: 1,
            raters: vec!["a".into(), "b".into()],
            window: WindowSpec::default(),
            analyst_token: None,
        }
    }

    fn full_answers(aspect: i64) -> BTreeMap<String, Option<Answer>> {
        Questionnaire::default_schema()
            .questions
            .iter()
            .map(|q| {
                let a = match q.kind {
                    crate::QuestionKind::YesNo => Some(Answer::Bool(true)),
                    crate::QuestionKind::Scale5 => Some(Answer::Int(3)),
                    crate::QuestionKind::Aspect => Some(Answer::Int(aspect)),
                    crate::QuestionKind::FreeText => None,
                };
                (q.id.clone(), a)
            })
            .collect()
    }

    fn submission(id: Uuid, token: &str, aspect: i64) -> RatingSubmission {
        RatingSubmission { assignment_id: id, answers: full_answers(aspect), client_token: token.into(), submitted_at: None }
    }

    #[test]
    fn unknown_rater_is_forbidden() {
        let s = StudyStore::in_memory(study()).unwrap();
        assert!(matches!(s.create_session("mallory"), Err(StudyError::Forbidden(_))));
    }

    #[test]
    fn session_is_stable() {
        let s = StudyStore::in_memory(study()).unwrap();
        let a = s.create_session("a").unwrap();
        assert_eq!(a.len(), 9);
        assert_eq!(s.create_session("a").unwrap(), a);
    }

    #[test]
    fn idempotent_rating() {
        let s = StudyStore::in_memory(study()).unwrap();
        let id = s.create_session("a").unwrap()[0].assignment_id;
        let ack = s.record_rating(submission(id, "t1", 7)).unwrap();
        assert_eq!(s.record_rating(submission(id, "t1", 7)).unwrap(), ack);
        assert_eq!(s.snapshot().ratings.len(), 1);
        assert!(matches!(s.record_rating(submission(id, "t2", 7)), Err(StudyError::Conflict(_))));
    }

    #[test]
    fn rating_validation() {
        let s = StudyStore::in_memory(study()).unwrap();
        let id = s.create_session("a").unwrap()[0].assignment_id;
        assert!(matches!(s.record_rating(submission(id, "t", 11)), Err(StudyError::Validation(_))));
        let mut extra = submission(id, "t", 5);
        extra.answers.insert("no_such_question".into(), Some(Answer::Bool(true)));
        assert!(matches!(s.record_rating(extra), Err(StudyError::Validation(_))));
        let mut missing = submission(id, "t", 5);
        missing.answers.remove("comments");
        assert!(matches!(s.record_rating(missing), Err(StudyError::Validation(_))));
        assert!(matches!(s.record_rating(submission(Uuid::nil(), "t", 5)), Err(StudyError::NotFound(_))));
        assert!(s.snapshot().ratings.is_empty());
    }

    #[test]
    fn replay_reconstructs_state() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.jsonl");
        let live = StudyStore::open(study(), &path).unwrap();
        let a = live.create_session("a").unwrap();
        live.create_session("b").unwrap();
        live.record_rating(submission(a[0].assignment_id, "x", 2)).unwrap();
        live.record_rating(submission(a[1].assignment_id, "y", 9)).unwrap();
        let replayed = StudyStore::open(study(), &path).unwrap();
        assert_eq!(replayed.snapshot(), live.snapshot());
        // The replayed store keeps appending to the same log.
        replayed.record_rating(submission(a[2].assignment_id, "z", 0)).unwrap();
        assert_eq!(StudyStore::open(study(), &path).unwrap().snapshot().ratings.len(), 3);
    }
}
