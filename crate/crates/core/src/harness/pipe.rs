use std::collections::VecDeque;

use crate::record::{ContentType, HEADER_LEN};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    ClientToServer,
    ServerToClient,
}

impl Direction {
    fn index(self) -> usize {
        match self {
            Direction::ClientToServer => 0,
            Direction::ServerToClient => 1,
        }
    }

    pub fn short(self) -> &'static str {
        match self {
            Direction::ClientToServer => "c2s",
            Direction::ServerToClient => "s2c",
        }
    }
}

/// A scripted transport fault. `record` counts records sent in `direction`, from zero.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Fault {
    /// XOR bit `bit` of byte `byte` (offset from the start of the header).
    FlipBit {
        direction: Direction,
        record: usize,
        byte: usize,
        bit: u8,
    },
    /// Keep only the first `len` bytes.
    Truncate {
        direction: Direction,
        record: usize,
        len: usize,
    },
    /// Deliver this record after the one following it.
    Reorder { direction: Direction, record: usize },
    Drop { direction: Direction, record: usize },
    /// Put raw bytes on the wire just before the given record.
    Inject {
        direction: Direction,
        before_record: usize,
        bytes: Vec<u8>,
    },
}

impl Fault {
    fn applies(&self, dir: Direction, n: usize) -> bool {
        match self {
            Fault::FlipBit {
                direction, record, ..
            }
            | Fault::Truncate {
                direction, record, ..
            }
            | Fault::Reorder { direction, record }
            | Fault::Drop { direction, record } => *direction == dir && *record == n,
            Fault::Inject {
                direction,
                before_record,
                ..
            } => *direction == dir && *before_record == n,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceEntry {
    pub direction: Direction,
    pub content_type: ContentType,
    pub length: usize,
}

/// Two ordered byte queues joining a client and a server.
#[derive(Debug, Default)]
pub struct LoopbackPipe {
    queues: [VecDeque<Vec<u8>>; 2],
    sent: [usize; 2],
    held: [Option<Vec<u8>>; 2],
    faults: Vec<Fault>,
    trace: Vec<TraceEntry>,
}

impl LoopbackPipe {
    pub fn new(faults: Vec<Fault>) -> Self {
        LoopbackPipe {
            faults,
            ..Default::default()
        }
    }

    pub fn trace(&self) -> &[TraceEntry] {
        &self.trace
    }

    fn enqueue(&mut self, dir: Direction, bytes: Vec<u8>) {
        if bytes.len() >= HEADER_LEN {
            self.trace.push(TraceEntry {
                direction: dir,
                content_type: ContentType(bytes[0]),
                length: u16::from_be_bytes([bytes[3], bytes[4]]) as usize,
            });
        }
        self.queues[dir.index()].push_back(bytes);
    }

    /// Sends one record, applying any faults scripted for it.
    pub fn send(&mut self, dir: Direction, mut record: Vec<u8>) {
        let i = dir.index();
        let n = self.sent[i];
        self.sent[i] += 1;
        let faults: Vec<Fault> = self
            .faults
            .iter()
            .filter(|f| f.applies(dir, n))
            .cloned()
            .collect();
        let mut hold = false;
        for f in faults {
            match f {
                Fault::Inject { bytes, .. } => self.enqueue(dir, bytes),
                Fault::Drop { .. } => return,
                Fault::FlipBit { byte, bit, .. } => {
                    if !record.is_empty() {
                        let at = byte % record.len();
                        record[at] ^= 1 << (bit % 8);
                    }
                }
                Fault::Truncate { len, .. } => record.truncate(len),
                Fault::Reorder { .. } => hold = true,
            }
        }
        if hold {
            self.held[i] = Some(record);
            return;
        }
        self.enqueue(dir, record);
        if let Some(h) = self.held[i].take() {
            self.enqueue(dir, h);
        }
    }

    pub fn recv(&mut self, dir: Direction) -> Option<Vec<u8>> {
        self.queues[dir.index()].pop_front()
    }

    /// Releases a record held for reordering when nothing followed it.
    pub fn release_held(&mut self) -> bool {
        let mut released = false;
        for dir in [Direction::ClientToServer, Direction::ServerToClient] {
            if let Some(h) = self.held[dir.index()].take() {
                self.enqueue(dir, h);
                released = true;
            }
        }
        released
    }
}
