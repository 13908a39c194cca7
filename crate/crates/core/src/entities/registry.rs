use std::collections::HashMap;
use std::sync::{Arc, PoisonError, RwLock};

use crate::crypto::Point;

use super::{PseudoId, Role};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegisteredKey<T> {
    pub role: Role,
    pub public_key: Point<T>,
}

/// `PTD -> PK` directory published by the CAG. Cloning shares the same map;
/// stations only read it.
#[derive(Debug)]
pub struct Registry<T> {
    inner: Arc<RwLock<HashMap<PseudoId, RegisteredKey<T>>>>,
}

impl<T> Clone for Registry<T> {
    fn clone(&self) -> Self {
        Self { inner: Arc::clone(&self.inner) }
    }
}

impl<T> Default for Registry<T> {
    fn default() -> Self {
        Self { inner: Arc::new(RwLock::new(HashMap::new())) }
    }
}

impl<T: Clone> Registry<T> {
    pub fn lookup(&self, ptd: &PseudoId) -> Option<RegisteredKey<T>> {
        self.inner.read().unwrap_or_else(PoisonError::into_inner).get(ptd).cloned()
    }

    /// Public key for `ptd` if it is registered under `role`.
    pub fn key_for(&self, ptd: &PseudoId, role: Role) -> Option<Point<T>> {
        self.lookup(ptd).filter(|k| k.role == role).map(|k| k.public_key)
    }

    pub fn len(&self) -> usize {
        self.inner.read().unwrap_or_else(PoisonError::into_inner).len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub(crate) fn publish(&self, ptd: PseudoId, key: RegisteredKey<T>) {
        self.inner.write().unwrap_or_else(PoisonError::into_inner).insert(ptd, key);
    }
}
