use thiserror::Error;

/// A configuration value that breaks a module invariant.
#[derive(Debug, Error, Clone, PartialEq)]
#[error("`{key}`: {constraint}")]
pub struct Violation {
    pub key: String,
    pub constraint: String,
}

impl Violation {
    pub fn new(key: impl Into<String>, constraint: impl Into<String>) -> Self {
        Self {
            key: key.into(),
            constraint: constraint.into(),
        }
    }

    /// Prefixes the key with a section name, `w1` → `reward.w1`.
    pub fn within(mut self, section: &str) -> Self {
        self.key = format!("{section}.{}", self.key);
        self
    }
}

pub(crate) fn ensure(cond: bool, key: &str, constraint: impl Into<String>) -> Result<(), Violation> {
    if cond {
        Ok(())
    } else {
        Err(Violation::new(key, constraint))
    }
}
