//! Static user directory loaded from a TOML file:
//!
//! ```toml
//! [[users]]
//! id = "patient-1"
//! email = "p1@example.org"
//! is_admin = false
//! token = "secret-token"
//! ```

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct User {
    pub id: String,
    pub email: String,
    /// Clinicians are admins.
    pub is_admin: bool,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct UserEntry {
    id: String,
    email: String,
    #[serde(default)]
    is_admin: bool,
    token: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct UsersFile {
    users: Vec<UserEntry>,
}

#[derive(Debug, Clone, Default)]
pub struct UserDirectory {
    by_id: HashMap<String, User>,
    by_token: HashMap<String, String>,
}

impl UserDirectory {
    pub fn from_toml(text: &str) -> Result<Self, String> {
        let file: UsersFile = toml::from_str(text).map_err(|e| e.to_string())?;
        let mut dir = Self::default();
        for e in file.users {
            dir.add(User { id: e.id, email: e.email, is_admin: e.is_admin }, &e.token)?;
        }
        Ok(dir)
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::from_toml(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    pub fn add(&mut self, user: User, token: &str) -> Result<(), String> {
        if user.id.trim().is_empty() || user.email.trim().is_empty() || token.is_empty() {
            return Err("user id, email and token must be non-empty".into());
        }
        if self.by_id.contains_key(&user.id) {
            return Err(format!("duplicate user id `{}`", user.id));
        }
        if self.by_token.contains_key(token) {
            return Err(format!("user `{}` reuses another user's token", user.id));
        }
        self.by_token.insert(token.to_string(), user.id.clone());
        self.by_id.insert(user.id.clone(), user);
        Ok(())
    }

    pub fn by_token(&self, token: &str) -> Option<&User> {
        self.by_token.get(token).and_then(|id| self.by_id.get(id))
    }

    pub fn get(&self, id: &str) -> Option<&User> {
        self.by_id.get(id)
    }
}
