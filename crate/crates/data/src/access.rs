//! File reads routed through a shared log so callers can audit which
//! recordings a stage of the pipeline touched.

use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use crate::error::{io_err, Result};

#[derive(Clone, Debug, Default)]
pub struct AccessLog {
    opened: Arc<Mutex<Vec<PathBuf>>>,
}

impl AccessLog {
    pub fn new() -> Self {
        Self::default()
    }

    fn note(&self, path: &Path) {
        self.opened.lock().unwrap().push(path.to_path_buf());
    }

    pub fn read(&self, path: &Path) -> Result<Vec<u8>> {
        self.note(path);
        std::fs::read(path).map_err(io_err(path))
    }

    pub fn read_to_string(&self, path: &Path) -> Result<String> {
        self.note(path);
        std::fs::read_to_string(path).map_err(io_err(path))
    }

    /// Every path passed to a read, in order.
    pub fn opened(&self) -> Vec<PathBuf> {
        self.opened.lock().unwrap().clone()
    }

    pub fn clear(&self) {
        self.opened.lock().unwrap().clear();
    }
}
