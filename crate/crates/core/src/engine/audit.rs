//! Record of every read of client-owned raw data.

use std::collections::BTreeSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    Train,
    Fisher,
    Consolidate,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Access {
    pub client: usize,
    pub task: usize,
    pub purpose: Purpose,
    /// The task's data had already been destroyed; the read was refused.
    pub refused: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AuditLog {
    accesses: Vec<Access>,
    destroyed: BTreeSet<(usize, usize)>,
}

impl AuditLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub(crate) fn record(&mut self, client: usize, task: usize, purpose: Purpose) -> bool {
        let refused = self.destroyed.contains(&(client, task));
        self.accesses.push(Access {
            client,
            task,
            purpose,
            refused,
        });
        !refused
    }

    pub(crate) fn mark_destroyed(&mut self, client: usize, task: usize) {
        self.destroyed.insert((client, task));
    }

    pub fn accesses(&self) -> &[Access] {
        &self.accesses
    }

    pub fn is_destroyed(&self, client: usize, task: usize) -> bool {
        self.destroyed.contains(&(client, task))
    }

    pub fn destroyed(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.destroyed.iter().copied()
    }

    /// Reads attempted on data whose task had already been consolidated.
    pub fn post_consolidation_reads(&self) -> usize {
        self.accesses.iter().filter(|a| a.refused).count()
    }

    pub fn merge(&mut self, other: &AuditLog) {
        self.accesses.extend(other.accesses.iter().cloned());
        self.destroyed.extend(other.destroyed.iter().copied());
    }
}
