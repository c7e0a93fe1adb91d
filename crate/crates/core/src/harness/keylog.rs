use std::collections::HashMap;

use crate::engine::KeyLogEntry;

/// NSS key log built from both engines' installed secrets. Each secret is
/// listed once even though both sides install it.
#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct KeyLog {
    entries: Vec<KeyLogEntry>,
    index: HashMap<(String, [u8; 32]), usize>,
    conflicts: Vec<String>,
}

impl KeyLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, entry: &KeyLogEntry) {
        let key = (entry.label.clone(), entry.client_random);
        match self.index.get(&key) {
            Some(&i) => {
                if self.entries[i].secret != entry.secret {
                    self.conflicts.push(entry.label.clone());
                }
            }
            None => {
                self.index.insert(key, self.entries.len());
                self.entries.push(entry.clone());
            }
        }
    }

    pub fn extend<'a>(&mut self, entries: impl IntoIterator<Item = &'a KeyLogEntry>) {
        entries.into_iter().for_each(|e| self.add(e));
    }

    pub fn entries(&self) -> &[KeyLogEntry] {
        &self.entries
    }

    /// Labels for which the two sides logged different secrets.
    pub fn conflicts(&self) -> &[String] {
        &self.conflicts
    }

    pub fn render(&self) -> String {
        self.entries.iter().map(|e| e.line() + "\n").collect()
    }
}
