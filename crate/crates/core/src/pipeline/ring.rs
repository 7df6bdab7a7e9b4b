//! Single-producer single-consumer ring of decoded tiles.
//!
//! Each slot cycles `Empty → Filled` (decoder) and `Filled → Consumed → Empty`
//! (compute). The slot state is the only synchronization: the decoder
//! publishes with a release store after writing, the compute side acquires
//! before reading and releases the slot back once it is done.

use std::cell::UnsafeCell;
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicU8, Ordering};
use std::thread;
use std::time::{Duration, Instant};

use crossbeam_utils::Backoff;

use crate::error::{Result, SalrError};

const EMPTY: u8 = 0;
const FILLED: u8 = 1;
const CONSUMED: u8 = 2;

/// A decoded dense tile of the sparse weight.
#[derive(Clone, Debug, Default)]
pub struct TileData {
    pub id: usize,
    /// First weight row (input index) covered by the tile.
    pub row0: usize,
    /// First weight column (output index) covered by the tile.
    pub col0: usize,
    pub rows: usize,
    pub cols: usize,
    pub buf: Vec<f64>,
}

struct TileSlot {
    state: AtomicU8,
    tile: UnsafeCell<TileData>,
}

/// Protocol counters collected over one pipelined run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RingStats {
    pub produced: u64,
    pub consumed: u64,
    pub violations: u64,
}

pub(crate) struct TileRing {
    slots: Box<[TileSlot]>,
    abort: AtomicBool,
    timeout: Duration,
    produced: AtomicU64,
    consumed: AtomicU64,
    violations: AtomicU64,
}

// SAFETY: a slot's tile is written only by the single producer while the
// slot is Empty and read only by the single consumer while it is
// Filled/Consumed; the acquire/release pairs on `state` order those accesses.
unsafe impl Sync for TileRing {}

impl TileRing {
    pub(crate) fn new(capacity: usize, timeout: Duration) -> Self {
        let slots = (0..capacity)
            .map(|_| TileSlot { state: AtomicU8::new(EMPTY), tile: UnsafeCell::new(TileData::default()) })
            .collect();
        Self {
            slots,
            abort: AtomicBool::new(false),
            timeout,
            produced: AtomicU64::new(0),
            consumed: AtomicU64::new(0),
            violations: AtomicU64::new(0),
        }
    }

    pub(crate) fn abort(&self) {
        self.abort.store(true, Ordering::Release);
    }

    pub(crate) fn stats(&self) -> RingStats {
        RingStats {
            produced: self.produced.load(Ordering::Acquire),
            consumed: self.consumed.load(Ordering::Acquire),
            violations: self.violations.load(Ordering::Acquire),
        }
    }

    fn violation(&self, what: String) -> SalrError {
        self.violations.fetch_add(1, Ordering::AcqRel);
        self.abort();
        SalrError::Internal(format!("ring protocol violation: {what}"))
    }

    fn wait_for(&self, idx: usize, want: u8) -> Result<()> {
        let state = &self.slots[idx].state;
        let backoff = Backoff::new();
        let start = Instant::now();
        loop {
            if state.load(Ordering::Acquire) == want {
                return Ok(());
            }
            if self.abort.load(Ordering::Acquire) {
                return Err(SalrError::Internal("pipeline aborted by peer".into()));
            }
            if backoff.is_completed() {
                if start.elapsed() > self.timeout {
                    self.abort();
                    return Err(SalrError::Internal(format!("slot {idx} wait timed out after {:?}", self.timeout)));
                }
                thread::yield_now();
            } else {
                backoff.snooze();
            }
        }
    }

    /// Decoder side: fills the slot for sequence number `seq` and publishes it.
    pub(crate) fn produce(&self, seq: usize, fill: impl FnOnce(&mut TileData) -> Result<()>) -> Result<()> {
        let idx = seq % self.slots.len();
        self.wait_for(idx, EMPTY)?;
        let slot = &self.slots[idx];
        // SAFETY: the slot is Empty, so the consumer will not touch it until
        // the Filled store below.
        let tile = unsafe { &mut *slot.tile.get() };
        fill(tile)?;
        tile.id = seq;
        if slot.state.compare_exchange(EMPTY, FILLED, Ordering::Release, Ordering::Relaxed).is_err() {
            return Err(self.violation(format!("slot {idx} left Empty while tile {seq} was written")));
        }
        self.produced.fetch_add(1, Ordering::AcqRel);
        Ok(())
    }

    /// Compute side: reads the tile with sequence number `seq` and frees its slot.
    pub(crate) fn consume<R>(&self, seq: usize, f: impl FnOnce(&TileData) -> R) -> Result<R> {
        let idx = seq % self.slots.len();
        self.wait_for(idx, FILLED)?;
        let slot = &self.slots[idx];
        if slot.state.compare_exchange(FILLED, CONSUMED, Ordering::Acquire, Ordering::Relaxed).is_err() {
            return Err(self.violation(format!("slot {idx} changed before tile {seq} was read")));
        }
        // SAFETY: the slot is Consumed; the producer waits for Empty.
        let tile = unsafe { &*slot.tile.get() };
        if tile.id != seq {
            return Err(self.violation(format!("slot {idx} holds tile {} where {seq} was expected", tile.id)));
        }
        let out = f(tile);
        if slot.state.compare_exchange(CONSUMED, EMPTY, Ordering::Release, Ordering::Relaxed).is_err() {
            return Err(self.violation(format!("slot {idx} overwritten while tile {seq} was in use")));
        }
        self.consumed.fetch_add(1, Ordering::AcqRel);
        Ok(out)
    }
}

/// Sets the abort flag if the owning thread unwinds.
pub(crate) struct AbortOnPanic<'a>(pub(crate) &'a TileRing);

impl Drop for AbortOnPanic<'_> {
    fn drop(&mut self) {
        if thread::panicking() {
            self.0.abort();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sequence_passes_through_in_order() {
        let ring = TileRing::new(3, Duration::from_secs(10));
        let n = 1000;
        let seen = thread::scope(|sc| {
            sc.spawn(|| {
                for seq in 0..n {
                    ring.produce(seq, |t| {
                        t.buf.clear();
                        t.buf.push(seq as f64);
                        Ok(())
                    })
                    .unwrap();
                }
            });
            (0..n).map(|seq| ring.consume(seq, |t| t.buf[0]).unwrap()).collect::<Vec<_>>()
        });
        assert_eq!(seen, (0..n).map(|v| v as f64).collect::<Vec<_>>());
        assert_eq!(ring.stats(), RingStats { produced: n as u64, consumed: n as u64, violations: 0 });
    }

    #[test]
    fn missing_producer_times_out() {
        let ring = TileRing::new(2, Duration::from_millis(20));
        assert!(matches!(ring.consume(0, |_| ()), Err(SalrError::Internal(_))));
    }

    #[test]
    fn out_of_order_consumer_is_a_violation() {
        let ring = TileRing::new(2, Duration::from_secs(1));
        ring.produce(0, |_| Ok(())).unwrap();
        // Slot 0 holds tile 0; asking for tile 2 maps to the same slot.
        assert!(ring.consume(2, |_| ()).is_err());
        assert_eq!(ring.stats().violations, 1);
    }

    #[test]
    fn abort_releases_waiter() {
        let ring = TileRing::new(1, Duration::from_secs(30));
        ring.produce(0, |_| Ok(())).unwrap();
        thread::scope(|sc| {
            let h = sc.spawn(|| ring.produce(1, |_| Ok(())));
            thread::sleep(Duration::from_millis(10));
            ring.abort();
            assert!(h.join().unwrap().is_err());
        });
    }
}
