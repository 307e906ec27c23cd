use std::collections::HashSet;
use std::fmt;
use std::ops::Deref;
use std::sync::{Mutex, OnceLock};

/// Interned class name. Copyable, so object records can be copied without
/// touching reference counts. Interned strings live for the whole process;
/// class vocabularies are small.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ClassLabel(&'static str);

fn table() -> &'static Mutex<HashSet<&'static str>> {
    static TABLE: OnceLock<Mutex<HashSet<&'static str>>> = OnceLock::new();
    TABLE.get_or_init(Default::default)
}

impl ClassLabel {
    pub fn new(name: &str) -> Self {
        let mut table = table().lock().unwrap_or_else(|e| e.into_inner());
        if let Some(&s) = table.get(name) {
            return Self(s);
        }
        let s: &'static str = Box::leak(name.to_owned().into_boxed_str());
        table.insert(s);
        Self(s)
    }

    pub fn as_str(&self) -> &'static str {
        self.0
    }
}

impl Deref for ClassLabel {
    type Target = str;

    fn deref(&self) -> &str {
        self.0
    }
}

impl From<&str> for ClassLabel {
    fn from(name: &str) -> Self {
        Self::new(name)
    }
}

impl fmt::Debug for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self.0, f)
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.0)
    }
}
