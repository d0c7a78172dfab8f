//! Questionnaire session service: users, streaming answer interpretation,
//! risk assessment on completion and patient/clinician views over HTTP.

pub mod api;
pub mod error;
pub mod model;
pub mod service;
pub mod session;
pub mod store;
pub mod users;

pub use api::{router, serve};
pub use error::{ServiceError, ServiceResult};
pub use model::ModelRegistry;
pub use service::SessionService;
pub use store::SessionStore;
pub use users::{User, UserDirectory};
