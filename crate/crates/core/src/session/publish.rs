//! Outbound fan-out: one bounded drop-oldest queue per subscriber.
//!
//! The writer never blocks. New subscribers arrive over a channel that the
//! writer drains with `try_recv`; a queue whose reader is gone is dropped.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crossbeam::channel::{unbounded, Receiver, Sender};
use crossbeam::queue::ArrayQueue;

use super::Frame;

struct Slot<T> {
    queue: Arc<ArrayQueue<Arc<T>>>,
    dropped: Arc<AtomicU64>,
    every: u64,
}

/// Reader end of one subscription.
pub struct Subscription<T> {
    queue: Arc<ArrayQueue<Arc<T>>>,
    dropped: Arc<AtomicU64>,
}

impl<T> Subscription<T> {
    pub fn try_recv(&self) -> Option<Arc<T>> {
        self.queue.pop()
    }

    /// Items discarded because this reader fell behind.
    pub fn dropped(&self) -> u64 {
        self.dropped.load(Ordering::Relaxed)
    }

    pub fn len(&self) -> usize {
        self.queue.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queue.is_empty()
    }
}

/// Cloneable handle for registering readers from other threads.
pub struct FanoutHandle<T> {
    tx: Sender<Slot<T>>,
    depth: usize,
}

impl<T> Clone for FanoutHandle<T> {
    fn clone(&self) -> Self {
        Self {
            tx: self.tx.clone(),
            depth: self.depth,
        }
    }
}

impl<T> FanoutHandle<T> {
    /// Subscribes to every `every`-th item (by sequence number).
    pub fn subscribe_every(&self, every: u64) -> Subscription<T> {
        let queue = Arc::new(ArrayQueue::new(self.depth));
        let dropped = Arc::new(AtomicU64::new(0));
        let _ = self.tx.send(Slot {
            queue: Arc::clone(&queue),
            dropped: Arc::clone(&dropped),
            every: every.max(1),
        });
        Subscription { queue, dropped }
    }
}

/// Writer end.
pub struct Fanout<T> {
    slots: Vec<Slot<T>>,
    incoming: Receiver<Slot<T>>,
}

impl<T> Fanout<T> {
    pub fn new(depth: usize) -> (Self, FanoutHandle<T>) {
        let (tx, rx) = unbounded();
        (
            Self {
                slots: Vec::new(),
                incoming: rx,
            },
            FanoutHandle { tx, depth: depth.max(1) },
        )
    }

    fn admit(&mut self) {
        while let Ok(slot) = self.incoming.try_recv() {
            self.slots.push(slot);
        }
    }

    pub fn subscribers(&mut self) -> usize {
        self.admit();
        self.slots.len()
    }

    /// Offers item number `seq`. The item is built only if some reader
    /// wants it.
    pub fn offer(&mut self, seq: u64, item: impl FnOnce() -> T) {
        self.admit();
        if self.slots.is_empty() {
            return;
        }
        self.slots.retain(|s| Arc::strong_count(&s.queue) > 1);
        if !self.slots.iter().any(|s| seq % s.every == 0) {
            return;
        }
        let item = Arc::new(item());
        for s in &self.slots {
            if seq % s.every == 0 && s.queue.force_push(Arc::clone(&item)).is_some() {
                s.dropped.fetch_add(1, Ordering::Relaxed);
            }
        }
    }
}

/// Frame publisher: full-rate subscribers and a decimated UI channel.
pub struct Publisher {
    fanout: Fanout<Frame>,
}

#[derive(Clone)]
pub struct PublisherHandle {
    inner: FanoutHandle<Frame>,
    ui_decimation: u64,
}

impl PublisherHandle {
    pub fn subscribe(&self) -> Subscription<Frame> {
        self.inner.subscribe_every(1)
    }

    /// Every `ui_decimation`-th frame (60 Hz at the default 3 kHz).
    pub fn subscribe_ui(&self) -> Subscription<Frame> {
        self.inner.subscribe_every(self.ui_decimation)
    }
}

impl Publisher {
    pub fn new(depth: usize, ui_decimation: u64) -> (Self, PublisherHandle) {
        let (fanout, inner) = Fanout::new(depth);
        (
            Self { fanout },
            PublisherHandle {
                inner,
                ui_decimation: ui_decimation.max(1),
            },
        )
    }

    pub fn publish(&mut self, frame: Frame) {
        let tick = frame.tick;
        self.fanout.offer(tick, move || frame);
    }

    pub fn subscribers(&mut self) -> usize {
        self.fanout.subscribers()
    }
}
