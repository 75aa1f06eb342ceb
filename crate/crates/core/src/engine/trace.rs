//! Training log, protocol events and message accounting.

use std::fmt::Write as _;

/// Where a rough estimate came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Origin {
    pub client: usize,
    pub task: usize,
    pub round: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Event {
    TaskStart { task: usize },
    Consolidate { client: usize, task: usize },
    RefinedBroadcast { task: usize, sender: usize, recipients: Vec<usize> },
    Select { task: usize, round: usize, clients: Vec<usize> },
    TrainLocal {
        task: usize,
        round: usize,
        client: usize,
        refined_from: Vec<usize>,
        rough_from: Vec<Origin>,
        anchors: usize,
    },
    RoughBroadcast { task: usize, round: usize, senders: Vec<usize> },
    Aggregate { task: usize, round: usize, participants: Vec<usize> },
    Evaluate { task: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogEntry {
    pub task: usize,
    pub round: usize,
    pub client: usize,
    /// Mean data loss over the last local epoch.
    pub train_loss: f64,
    /// Penalty at the returned parameters.
    pub penalty: f64,
}

/// Append-only `(task, round, client, train loss, penalty)` records.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    entries: Vec<LogEntry>,
}

impl TrainLog {
    pub fn push(&mut self, entry: LogEntry) {
        self.entries.push(entry);
    }

    pub fn entries(&self) -> &[LogEntry] {
        &self.entries
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("task,round,client,train_loss,penalty\n");
        for e in &self.entries {
            let _ = writeln!(out, "{},{},{},{:?},{:?}", e.task, e.round, e.client, e.train_loss, e.penalty);
        }
        out
    }
}

/// Logical transmissions of one vector pair, counted under two topologies.
///
/// Star: a selected client downloads the global model and uploads its update
/// (2 per participant per round); a broadcast is one upload plus a relayed
/// download to each other client (`C` per sender).
///
/// Peer-to-peer: each participant sends its update to every other
/// participant (`|C_r| (|C_r| - 1)` per round); a broadcast goes directly to
/// every other client (`C - 1` per sender).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MessageCounts {
    pub star: u64,
    pub peer_to_peer: u64,
}

impl MessageCounts {
    pub(crate) fn aggregation(&mut self, participants: usize) {
        let n = participants as u64;
        self.star += 2 * n;
        self.peer_to_peer += n * n.saturating_sub(1);
    }

    pub(crate) fn broadcast(&mut self, senders: usize, clients: usize) {
        let (s, c) = (senders as u64, clients as u64);
        self.star += s * c;
        self.peer_to_peer += s * c.saturating_sub(1);
    }
}
