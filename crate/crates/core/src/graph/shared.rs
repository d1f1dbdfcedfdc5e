use std::sync::{Mutex, RwLock};

use super::{GraphSnapshot, KnowledgeGraph};

/// Thread-safe knowledge base: one writer at a time, any number of readers
/// holding snapshots published after each write.
#[derive(Debug)]
pub struct KnowledgeBase {
    writer: Mutex<KnowledgeGraph>,
    published: RwLock<GraphSnapshot>,
}

impl KnowledgeBase {
    pub fn new(graph: KnowledgeGraph) -> Self {
        let snap = graph.snapshot();
        Self { writer: Mutex::new(graph), published: RwLock::new(snap) }
    }

    /// Runs `f` with exclusive access and publishes the resulting state.
    pub fn write<R>(&self, f: impl FnOnce(&mut KnowledgeGraph) -> R) -> R {
        let mut graph = self.writer.lock().unwrap_or_else(|e| e.into_inner());
        let out = f(&mut graph);
        let snap = graph.snapshot();
        *self.published.write().unwrap_or_else(|e| e.into_inner()) = snap;
        out
    }

    pub fn snapshot(&self) -> GraphSnapshot {
        self.published.read().unwrap_or_else(|e| e.into_inner()).clone()
    }
}
