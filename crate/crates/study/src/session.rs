use ctdiff_core::volume::Modality;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use uuid::Uuid;

use crate::definition::{StudyDefinition, STUDY_MODALITIES};

/// Server-side assignment. Never serialized to raters; see [`AssignmentPayload`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    pub assignment_id: Uuid,
    pub rater_id: String,
    pub case_id: String,
    pub modality: Modality,
    pub display_order: usize,
}

/// What a rater's client learns about an assignment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssignmentPayload {
    pub assignment_id: Uuid,
    pub order: usize,
    pub slice_count: usize,
    pub answered: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionPayload {
    pub rater_id: String,
    pub total: usize,
    pub answered: usize,
    pub assignments: Vec<AssignmentPayload>,
}

fn order_rng(seed: u64, rater_id: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update((rater_id.len() as u64).to_le_bytes());
    h.update(rater_id.as_bytes());
    let digest = h.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(key)
}

/// Display order of every (case, modality) item for one rater.
///
/// Each case gets a random modality permutation. The list is built in rounds;
/// round `r` shows every case once with its `r`-th modality, in a freshly
/// shuffled case order, so consecutive items never share a case when there
/// are at least two cases.
pub fn session_order(study: &StudyDefinition, rater_id: &str) -> Vec<(String, Modality)> {
    let mut rng = order_rng(study.blinding_seed, rater_id);
    let cases: Vec<&str> = study.cases.iter().map(|c| c.case_id.as_str()).collect();
    let perms: Vec<[Modality; 3]> = cases
        .iter()
        .map(|_| {
            let mut m = STUDY_MODALITIES;
            m.shuffle(&mut rng);
            m
        })
        .collect();
    let mut out = Vec::with_capacity(cases.len() * 3);
    let mut last: Option<usize> = None;
    for round in 0..3 {
        let mut idx: Vec<usize> = (0..cases.len()).collect();
        idx.shuffle(&mut rng);
        if idx.len() > 1 && Some(idx[0]) == last {
            idx.swap(0, 1);
        }
        for &i in &idx {
            out.push((cases[i].to_string(), perms[i][round]));
        }
        last = idx.last().copied();
    }
    out
}

pub(crate) fn build_assignments(study: &StudyDefinition, rater_id: &str) -> Vec<Assignment> {
    session_order(study, rater_id)
        .into_iter()
        .enumerate()
        .map(|(i, (case_id, modality))| Assignment {
            assignment_id: Uuid::new_v4(),
            rater_id: rater_id.to_string(),
            case_id,
            modality,
            display_order: i,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::definition::{Questionnaire, StudyCase};
    use ctdiff_core::volume::WindowSpec;
    use std::collections::{BTreeMap, HashSet};

    pub(crate) fn study(n: usize) -> StudyDefinition {
        StudyDefinition {
            cases: (0..n)
                .map(|i| StudyCase {
                    case_id: format!("c{i}"),
                    volumes: STUDY_MODALITIES.iter().map(|&m| (m, format!("c{i}/{}", m.as_str()))).collect::<BTreeMap<_, _>>(),
                })
                .collect(),
            questionnaire: Questionnaire::default_schema(),
            blinding_seed: 42,
            raters: vec!["junior".into(), "senior".into()],
            window: WindowSpec::default(),
            analyst_token: None,
        }
    }

    #[test]
    fn covers_every_item_once() {
        let s = study(10);
        let order = session_order(&s, "junior");
        assert_eq!(order.len(), 30);
        let set: HashSet<_> = order.iter().cloned().collect();
        assert_eq!(set.len(), 30);
    }

    #[test]
    fn deterministic_and_rater_dependent() {
        let s = study(10);
        assert_eq!(session_order(&s, "junior"), session_order(&s, "junior"));
        let distinct: HashSet<_> = (0..100).map(|i| session_order(&s, &format!("rater-{i}"))).collect();
        assert!(distinct.len() >= 99);
    }

    #[test]
    fn consecutive_items_differ_in_case() {
        for seed in 0..50 {
            let mut s = study(4);
            s.blinding_seed = seed;
            let order = session_order(&s, "r");
            assert!(order.windows(2).all(|w| w[0].0 != w[1].0));
        }
    }
}
