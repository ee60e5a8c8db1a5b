//! Error taxonomy for QA predictions.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::text::{exact_match, normalize};
use crate::qa::{QaExample, ANSWER_SEPARATOR, LEGAL_FORMS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ErrorCategory {
    Correct,
    CompletelyWrong,
    TrueFalseWrong,
    SubsetOfAnswer,
    SimilarAnswer,
    SimilarCompanyType,
    WrongOrder,
}

impl ErrorCategory {
    pub const ALL: [ErrorCategory; 7] = [
        ErrorCategory::Correct,
        ErrorCategory::CompletelyWrong,
        ErrorCategory::TrueFalseWrong,
        ErrorCategory::SubsetOfAnswer,
        ErrorCategory::SimilarAnswer,
        ErrorCategory::SimilarCompanyType,
        ErrorCategory::WrongOrder,
    ];
}

fn entities(text: &str) -> Vec<String> {
    text.split(ANSWER_SEPARATOR.trim_end()).map(normalize).filter(|s| !s.is_empty()).collect()
}

fn legal_form(entity: &str) -> Option<&'static str> {
    LEGAL_FORMS.iter().copied().find(|f| {
        let f = f.to_lowercase();
        entity.strip_suffix(f.as_str()).is_some_and(|rest| rest.ends_with(' '))
    })
}

fn boolean(text: &str) -> Option<bool> {
    match normalize(text).as_str() {
        "true" => Some(true),
        "false" => Some(false),
        _ => None,
    }
}

/// Assigns exactly one category, checking in the order Correct,
/// TrueFalseWrong, WrongOrder, SubsetOfAnswer, SimilarAnswer,
/// SimilarCompanyType, CompletelyWrong.
pub fn classify_error(example: &QaExample, prediction: &str) -> ErrorCategory {
    let gold = &example.answer;
    if exact_match(prediction, gold) == 1.0 {
        return ErrorCategory::Correct;
    }
    if let (Some(g), Some(p)) = (boolean(gold), boolean(prediction)) {
        if g != p {
            return ErrorCategory::TrueFalseWrong;
        }
    }
    let (g, p) = (entities(gold), entities(prediction));
    let gs: BTreeSet<&String> = g.iter().collect();
    let ps: BTreeSet<&String> = p.iter().collect();
    if !ps.is_empty() && gs == ps {
        return ErrorCategory::WrongOrder;
    }
    if !ps.is_empty() && ps.is_subset(&gs) {
        return ErrorCategory::SubsetOfAnswer;
    }
    if !ps.is_disjoint(&gs) {
        return ErrorCategory::SimilarAnswer;
    }
    let gold_forms: BTreeSet<&str> = g.iter().filter_map(|e| legal_form(e)).collect();
    if p.iter().filter_map(|e| legal_form(e)).any(|f| gold_forms.contains(f)) {
        return ErrorCategory::SimilarCompanyType;
    }
    ErrorCategory::CompletelyWrong
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBreakdown {
    pub correct: usize,
    pub completely_wrong: usize,
    pub true_false_wrong: usize,
    pub subset_of_answer: usize,
    pub similar_answer: usize,
    pub similar_company_type: usize,
    pub wrong_order: usize,
}

impl ErrorBreakdown {
    pub fn add(&mut self, c: ErrorCategory) {
        *self.slot(c) += 1;
    }

    fn slot(&mut self, c: ErrorCategory) -> &mut usize {
        match c {
            ErrorCategory::Correct => &mut self.correct,
            ErrorCategory::CompletelyWrong => &mut self.completely_wrong,
            ErrorCategory::TrueFalseWrong => &mut self.true_false_wrong,
            ErrorCategory::SubsetOfAnswer => &mut self.subset_of_answer,
            ErrorCategory::SimilarAnswer => &mut self.similar_answer,
            ErrorCategory::SimilarCompanyType => &mut self.similar_company_type,
            ErrorCategory::WrongOrder => &mut self.wrong_order,
        }
    }

    pub fn get(&self, c: ErrorCategory) -> usize {
        *self.clone().slot(c)
    }

    pub fn total(&self) -> usize {
        ErrorCategory::ALL.iter().map(|&c| self.get(c)).sum()
    }

    pub fn from_predictions<'a>(pairs: impl IntoIterator<Item = (&'a QaExample, &'a str)>) -> Self {
        let mut b = Self::default();
        for (e, p) in pairs {
            b.add(classify_error(e, p));
        }
        b
    }
}
