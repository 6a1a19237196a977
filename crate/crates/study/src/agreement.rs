use std::collections::BTreeMap;

use ctdiff_core::volume::Modality;
use serde::{Deserialize, Serialize};

use crate::definition::{Answer, STUDY_MODALITIES};
use crate::error::{StudyError, StudyResult};
use crate::store::StoreState;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgreementStatus {
    Ok,
    /// Expected agreement is 1, so kappa is undefined and reported as null.
    KappaUndefined,
    InsufficientData,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairAgreement {
    pub modality: Modality,
    pub rater_a: String,
    pub rater_b: String,
    pub n_pairs: usize,
    pub percent_agreement: Option<f64>,
    pub cohen_kappa: Option<f64>,
    pub status: AgreementStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub question_id: String,
    pub results: Vec<PairAgreement>,
}

/// Percent agreement and Cohen's kappa for paired categorical answers.
///
/// Counts stay integral until the final division, so hand-worked tables give
/// exact results.
pub fn kappa_from_pairs(pairs: &[(Answer, Answer)]) -> (Option<f64>, Option<f64>, AgreementStatus) {
    let n = pairs.len() as u64;
    if n == 0 {
        return (None, None, AgreementStatus::InsufficientData);
    }
    let agree = pairs.iter().filter(|(a, b)| a == b).count() as u64;
    let mut marg: BTreeMap<&Answer, (u64, u64)> = BTreeMap::new();
    for (a, b) in pairs {
        marg.entry(a).or_default().0 += 1;
        marg.entry(b).or_default().1 += 1;
    }
    let sum_ab: u64 = marg.values().map(|(a, b)| a * b).sum();
    let percent = agree as f64 / n as f64;
    let denom = n * n - sum_ab;
    if denom == 0 {
        return (Some(percent), None, AgreementStatus::KappaUndefined);
    }
    let numer = (n * agree) as i128 - sum_ab as i128;
    (Some(percent), Some(numer as f64 / denom as f64), AgreementStatus::Ok)
}

/// Agreement on `question_id` for every rater pair and modality, pairing
/// non-skipped answers given to the same case.
pub fn compute_agreement(state: &StoreState, raters: &[String], questions: &[String], question_id: &str) -> StudyResult<AgreementReport> {
    if !questions.iter().any(|q| q == question_id) {
        return Err(StudyError::Validation(format!("unknown question {question_id:?}")));
    }
    // (rater, modality) -> case -> answer
    let mut answers: BTreeMap<(&str, Modality), BTreeMap<&str, &Answer>> = BTreeMap::new();
    for rating in state.ratings.values() {
        let Some(a) = state.assignments.get(&rating.assignment_id) else { continue };
        if let Some(Some(ans)) = rating.answers.get(question_id) {
            answers
                .entry((a.rater_id.as_str(), a.modality))
                .or_default()
                .insert(a.case_id.as_str(), ans);
        }
    }
    let empty = BTreeMap::new();
    let mut results = Vec::new();
    for (i, ra) in raters.iter().enumerate() {
        for rb in &raters[i + 1..] {
            for m in STUDY_MODALITIES {
                let xa = answers.get(&(ra.as_str(), m)).unwrap_or(&empty);
                let xb = answers.get(&(rb.as_str(), m)).unwrap_or(&empty);
                let pairs: Vec<(Answer, Answer)> = xa
                    .iter()
                    .filter_map(|(case, a)| xb.get(case).map(|b| ((*a).clone(), (*b).clone())))
                    .collect();
                let (percent_agreement, cohen_kappa, status) = kappa_from_pairs(&pairs);
                results.push(PairAgreement {
                    modality: m,
                    rater_a: ra.clone(),
                    rater_b: rb.clone(),
                    n_pairs: pairs.len(),
                    percent_agreement,
                    cohen_kappa,
                    status,
                });
            }
        }
    }
    Ok(AgreementReport { question_id: question_id.to_string(), results })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(yy: usize, yn: usize, ny: usize, nn: usize) -> Vec<(Answer, Answer)> {
        let (y, n) = (Answer::Bool(true), Answer::Bool(false));
        std::iter::repeat((y.clone(), y.clone())).take(yy)
            .chain(std::iter::repeat((y.clone(), n.clone())).take(yn))
            .chain(std::iter::repeat((n.clone(), y.clone())).take(ny))
            .chain(std::iter::repeat((n.clone(), n.clone())).take(nn))
            .collect()
    }

    #[test]
    fn hand_worked_table() {
        let (p, k, s) = kappa_from_pairs(&table(20, 5, 10, 15));
        assert_eq!(p, Some(0.7));
        assert_eq!(k, Some(0.4));
        assert_eq!(s, AgreementStatus::Ok);
    }

    #[test]
    fn perfect_and_degenerate() {
        assert_eq!(kappa_from_pairs(&table(12, 0, 0, 8)).1, Some(1.0));
        let (p, k, s) = kappa_from_pairs(&table(0, 0, 0, 9));
        assert_eq!((p, k, s), (Some(1.0), None, AgreementStatus::KappaUndefined));
        assert_eq!(kappa_from_pairs(&[]).2, AgreementStatus::InsufficientData);
    }
}
