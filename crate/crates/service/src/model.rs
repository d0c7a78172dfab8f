//! The serving model, swappable while requests are in flight.

use std::path::Path;
use std::sync::{Arc, RwLock};

use convrisk::bundle::ModelBundle;

use crate::error::{ServiceError, ServiceResult};

pub struct ModelRegistry {
    active: RwLock<Arc<ModelBundle>>,
}

impl ModelRegistry {
    pub fn new(bundle: ModelBundle) -> Self {
        Self { active: RwLock::new(Arc::new(bundle)) }
    }

    /// The model at the time of the call; a later swap does not affect it.
    pub fn current(&self) -> Arc<ModelBundle> {
        self.active.read().expect("registry lock").clone()
    }

    /// Replaces the serving model. The questionnaire must stay the same so
    /// open sessions remain valid.
    pub fn swap(&self, bundle: ModelBundle) -> ServiceResult<()> {
        let mut active = self.active.write().expect("registry lock");
        if bundle.schema.d() != active.schema.d() {
            return Err(ServiceError::BadRequest(format!(
                "bundle schema has d = {} but the service questionnaire has d = {}",
                bundle.schema.d(),
                active.schema.d()
            )));
        }
        if bundle.schema != active.schema {
            return Err(ServiceError::BadRequest("bundle schema differs from the service questionnaire".into()));
        }
        *active = Arc::new(bundle);
        Ok(())
    }

    /// Loads and swaps; on any error the current model keeps serving.
    pub fn load(&self, dir: &Path) -> ServiceResult<()> {
        let bundle = ModelBundle::load(dir).map_err(|e| ServiceError::BadRequest(e.to_string()))?;
        self.swap(bundle)
    }
}
