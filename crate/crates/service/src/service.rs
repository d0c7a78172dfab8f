//! Questionnaire session operations with authorization rules.
//!
//! Each session is a single-writer entity: operations on one session hold
//! its lock for the whole read-modify-persist cycle, while different sessions
//! proceed independently.

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex};

use chrono::{SecondsFormat, Utc};
use convrisk::dataset::QuestionnaireSchema;
use convrisk::microlm::top_features;

use crate::error::{ServiceError, ServiceResult};
use crate::model::ModelRegistry;
use crate::session::{AnswerEntry, Assessment, ImportantFeature, PatientSessions, Question, Session};
use crate::store::SessionStore;
use crate::users::{User, UserDirectory};

pub const TOP_FEATURES: usize = 5;

/// ISO-8601 UTC with millisecond precision.
pub fn timestamp() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

pub struct SessionService {
    users: UserDirectory,
    store: SessionStore,
    models: ModelRegistry,
    locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CreatedSession {
    pub session: Session,
    pub questions: Vec<Question>,
}

impl SessionService {
    pub fn new(users: UserDirectory, store: SessionStore, models: ModelRegistry) -> Self {
        Self { users, store, models, locks: Mutex::new(HashMap::new()) }
    }

    pub fn users(&self) -> &UserDirectory {
        &self.users
    }

    pub fn models(&self) -> &ModelRegistry {
        &self.models
    }

    pub fn store(&self) -> &SessionStore {
        &self.store
    }

    pub fn schema(&self) -> QuestionnaireSchema {
        self.models.current().schema.clone()
    }

    pub fn questions(&self) -> Vec<Question> {
        self.schema()
            .features()
            .iter()
            .map(|f| Question { id: f.id, description: f.question_text.clone() })
            .collect()
    }

    fn lock_for(&self, id: &str) -> Arc<Mutex<()>> {
        self.locks.lock().expect("lock table").entry(id.to_string()).or_default().clone()
    }

    fn load(&self, id: &str) -> ServiceResult<Session> {
        self.store.get(id).ok_or_else(|| ServiceError::NotFound(format!("no session `{id}`")))
    }

    fn authorize(requester: &User, session: &Session) -> ServiceResult<()> {
        if requester.is_admin || requester.id == session.patient_user_id {
            Ok(())
        } else {
            Err(ServiceError::Forbidden(format!("session `{}` belongs to another patient", session.id)))
        }
    }

    fn authorize_write(requester: &User, session: &Session) -> ServiceResult<()> {
        if requester.id == session.patient_user_id {
            Ok(())
        } else {
            Err(ServiceError::Forbidden("only the session's patient may answer or complete it".into()))
        }
    }

    pub fn create_session(&self, patient_user_id: &str) -> ServiceResult<CreatedSession> {
        let user = self
            .users
            .get(patient_user_id)
            .ok_or_else(|| ServiceError::NotFound(format!("no user `{patient_user_id}`")))?;
        if user.is_admin {
            return Err(ServiceError::Forbidden("clinicians cannot open patient sessions".into()));
        }
        let session = Session::new(uuid::Uuid::new_v4().to_string(), user.id.clone(), timestamp());
        self.store.put(&session)?;
        Ok(CreatedSession { session, questions: self.questions() })
    }

    /// Id of the next question awaiting a non-ambiguous answer.
    pub fn pending_question(schema: &QuestionnaireSchema, session: &Session) -> Option<u32> {
        schema.features().get(session.accepted().count()).map(|f| f.id)
    }

    pub fn submit_answer(
        &self,
        requester: &User,
        session_id: &str,
        question_id: u32,
        free_text: &str,
    ) -> ServiceResult<AnswerEntry> {
        if free_text.trim().is_empty() {
            return Err(ServiceError::BadRequest("answer text must be non-empty".into()));
        }
        let lock = self.lock_for(session_id);
        let _guard = lock.lock().expect("session lock");
        let mut session = self.load(session_id)?;
        Self::authorize_write(requester, &session)?;
        if session.is_complete() {
            return Err(ServiceError::Conflict(format!("session `{session_id}` is already completed")));
        }
        let model = self.models.current();
        let question = model
            .schema
            .feature(question_id)
            .ok_or_else(|| ServiceError::BadRequest(format!("no question {question_id}")))?;
        let expected = Self::pending_question(&model.schema, &session).expect("incomplete session has a pending question");
        if question_id != expected {
            return Err(ServiceError::Conflict(format!(
                "question {question_id} submitted out of order; question {expected} is pending"
            )));
        }
        let interpreted = model.model.interpret_answer(&question.question_text, free_text)?;
        let entry = AnswerEntry {
            question_id,
            free_text: free_text.to_string(),
            binary_answer: interpreted.binary,
            confidence: interpreted.p_yes,
            ambiguous: interpreted.ambiguous,
            answered_at: timestamp(),
        };
        session.answers.push(entry.clone());
        self.store.put(&session)?;
        Ok(entry)
    }

    pub fn complete_session(&self, requester: &User, session_id: &str) -> ServiceResult<Assessment> {
        let lock = self.lock_for(session_id);
        let _guard = lock.lock().expect("session lock");
        let mut session = self.load(session_id)?;
        Self::authorize_write(requester, &session)?;
        if let Some(done) = session.assessment() {
            return Ok(done);
        }
        let model = self.models.current();
        let answers: Vec<u8> = session.accepted().map(|a| a.binary_answer).collect();
        if let Some(missing) = model.schema.features().get(answers.len()) {
            let ids: Vec<String> = model.schema.features()[answers.len()..].iter().map(|f| f.id.to_string()).collect();
            return Err(ServiceError::Precondition(format!(
                "{} of {} questions answered; missing question {} ({}); unanswered ids: {}",
                answers.len(),
                model.schema.d(),
                missing.id,
                missing.question_text,
                ids.join(", ")
            )));
        }
        let score = model.assess(&answers)?;
        let ids: Vec<u32> = model.schema.features().iter().map(|f| f.id).collect();
        let importance = score.importance.as_deref().expect("assess computes importance");
        let important_features = top_features(importance, &ids, TOP_FEATURES)
            .into_iter()
            .map(|(feature_id, importance)| ImportantFeature {
                feature_id,
                name: model.schema.feature(feature_id).expect("id from schema").name.clone(),
                importance,
            })
            .collect();
        let assessment = Assessment {
            risk_score: score.p_yes,
            predicted_label: score.predicted_label,
            important_features,
            date: timestamp(),
        };
        session.set_assessment(assessment.clone());
        self.store.put(&session)?;
        Ok(assessment)
    }

    /// Sessions visible to the requester grouped by patient id, each group
    /// ordered by creation time.
    pub fn list_sessions(&self, requester: &User, patient_filter: Option<&str>) -> ServiceResult<Vec<PatientSessions>> {
        let target = match (requester.is_admin, patient_filter) {
            (false, Some(p)) if p != requester.id => {
                return Err(ServiceError::Forbidden("patients can only list their own sessions".into()))
            }
            (false, _) => Some(requester.id.as_str()),
            (true, filter) => filter,
        };
        let mut groups: BTreeMap<String, PatientSessions> = BTreeMap::new();
        for s in self.store.all() {
            if target.is_some_and(|t| t != s.patient_user_id) {
                continue;
            }
            groups
                .entry(s.patient_user_id.clone())
                .or_insert_with(|| PatientSessions { patient_user_id: s.patient_user_id.clone(), sessions: Vec::new() })
                .sessions
                .push(s.summary());
        }
        Ok(groups.into_values().collect())
    }

    pub fn get_session(&self, requester: &User, session_id: &str) -> ServiceResult<Session> {
        let session = self.load(session_id)?;
        Self::authorize(requester, &session)?;
        Ok(session)
    }
}
