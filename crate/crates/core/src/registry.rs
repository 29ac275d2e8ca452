//! Name-keyed strategy registry.
//!
//! Each family of interchangeable algorithms (ensemble combiners, freeze
//! policies, baseline featurizers, transfer schemes) registers its variants
//! here under a stable name; the CLI and config resolve variants at runtime.

use crate::error::{Error, Result};

pub struct Registry<T: ?Sized> {
    kind: &'static str,
    entries: Vec<(&'static str, Box<T>)>,
}

impl<T: ?Sized> Registry<T> {
    /// `kind` is a human-readable family name used in error messages.
    pub fn new(kind: &'static str) -> Self {
        Registry {
            kind,
            entries: Vec::new(),
        }
    }

    pub fn register(&mut self, name: &'static str, entry: Box<T>) {
        debug_assert!(
            self.entries.iter().all(|(n, _)| *n != name),
            "duplicate {} strategy `{name}`",
            self.kind
        );
        self.entries.push((name, entry));
    }

    pub fn get(&self, name: &str) -> Option<&T> {
        self.entries
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, e)| e.as_ref())
    }

    /// Like `get`, but produces a config error listing the known names.
    pub fn resolve(&self, name: &str) -> Result<&T> {
        self.get(name).ok_or_else(|| {
            Error::config(format!(
                "unknown {} `{name}` (available: {})",
                self.kind,
                self.names().join(", ")
            ))
        })
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.iter().map(|(n, _)| *n).collect()
    }
}
