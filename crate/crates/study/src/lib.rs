//! Blinded reader study over FDCT, MDCT and model-prediction volumes.
//!
//! Raters see assignments in a per-rater randomized order with no modality,
//! case or file information. Ratings go to an append-only JSON-lines log that
//! can be replayed to rebuild the service state.

pub mod agreement;
pub mod api;
pub mod definition;
pub mod error;
pub mod session;
pub mod store;
pub mod tiles;

pub use agreement::{compute_agreement, kappa_from_pairs, AgreementReport, PairAgreement};
pub use api::{router, serve, StudyService};
pub use definition::{Answer, Question, QuestionKind, Questionnaire, StudyCase, StudyDefinition};
pub use error::{StudyError, StudyResult};
pub use session::{session_order, Assignment, AssignmentPayload, SessionPayload};
pub use store::{Acknowledgment, Rating, RatingSubmission, StudyStore};
