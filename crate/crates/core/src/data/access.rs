//! Process-wide record of dataset reads. Every path that materializes dataset
//! pixels goes through [`record`], so a harness can prove a stage touched none.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

static READS: AtomicU64 = AtomicU64::new(0);
static LAST: Mutex<Option<String>> = Mutex::new(None);

pub(crate) fn record(what: impl Into<String>) {
    READS.fetch_add(1, Ordering::SeqCst);
    if let Ok(mut last) = LAST.lock() {
        *last = Some(what.into());
    }
}

/// Total dataset reads recorded since process start.
pub fn read_count() -> u64 {
    READS.load(Ordering::SeqCst)
}

/// Description of the most recent read, if any.
pub fn last_read() -> Option<String> {
    LAST.lock().ok().and_then(|l| l.clone())
}

/// Counts reads between construction and [`AccessWindow::reads`].
#[derive(Debug)]
pub struct AccessWindow {
    start: u64,
}

impl AccessWindow {
    pub fn open() -> Self {
        Self { start: read_count() }
    }

    pub fn reads(&self) -> u64 {
        read_count() - self.start
    }
}
