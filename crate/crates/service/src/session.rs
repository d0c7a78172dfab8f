//! Session records as stored and served.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Question {
    pub id: u32,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerEntry {
    pub question_id: u32,
    pub free_text: String,
    pub binary_answer: u8,
    /// `p(yes)` of the interpretation.
    pub confidence: f64,
    pub ambiguous: bool,
    pub answered_at: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportantFeature {
    pub feature_id: u32,
    pub name: String,
    pub importance: f64,
}

/// Outcome of completing a session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assessment {
    pub risk_score: f64,
    pub predicted_label: u8,
    /// Top five, highest importance first.
    pub important_features: Vec<ImportantFeature>,
    pub date: String,
}

/// One patient's pass through the questionnaire. The assessment fields are
/// null until the session is completed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub id: String,
    pub patient_user_id: String,
    pub created_at: String,
    /// Every reply in arrival order, including ambiguous ones.
    pub answers: Vec<AnswerEntry>,
    pub date: Option<String>,
    pub risk_score: Option<f64>,
    pub predicted_label: Option<u8>,
    pub important_features: Option<Vec<ImportantFeature>>,
}

impl Session {
    pub fn new(id: String, patient_user_id: String, created_at: String) -> Self {
        Self {
            id,
            patient_user_id,
            created_at,
            answers: Vec::new(),
            date: None,
            risk_score: None,
            predicted_label: None,
            important_features: None,
        }
    }

    /// Accepted (non-ambiguous) answers, which always follow schema order.
    pub fn accepted(&self) -> impl Iterator<Item = &AnswerEntry> {
        self.answers.iter().filter(|a| !a.ambiguous)
    }

    pub fn is_complete(&self) -> bool {
        self.risk_score.is_some()
    }

    pub fn assessment(&self) -> Option<Assessment> {
        Some(Assessment {
            risk_score: self.risk_score?,
            predicted_label: self.predicted_label?,
            important_features: self.important_features.clone()?,
            date: self.date.clone()?,
        })
    }

    pub fn set_assessment(&mut self, a: Assessment) {
        self.risk_score = Some(a.risk_score);
        self.predicted_label = Some(a.predicted_label);
        self.important_features = Some(a.important_features);
        self.date = Some(a.date);
    }

    pub fn summary(&self) -> SessionSummary {
        SessionSummary {
            id: self.id.clone(),
            patient_user_id: self.patient_user_id.clone(),
            created_at: self.created_at.clone(),
            answered: self.accepted().count(),
            date: self.date.clone(),
            risk_score: self.risk_score,
            predicted_label: self.predicted_label,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub id: String,
    pub patient_user_id: String,
    pub created_at: String,
    pub answered: usize,
    pub date: Option<String>,
    pub risk_score: Option<f64>,
    pub predicted_label: Option<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientSessions {
    pub patient_user_id: String,
    pub sessions: Vec<SessionSummary>,
}
