use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

/// Counts live tensor buffers and remembers the high-water mark.
#[derive(Debug, Default, Clone)]
pub struct BufferGauge {
    inner: Arc<Counts>,
}

#[derive(Debug, Default)]
struct Counts {
    live: AtomicUsize,
    peak: AtomicUsize,
}

impl BufferGauge {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn track<T>(&self, value: T) -> Tracked<T> {
        let live = self.inner.live.fetch_add(1, Ordering::SeqCst) + 1;
        self.inner.peak.fetch_max(live, Ordering::SeqCst);
        Tracked {
            value,
            gauge: self.inner.clone(),
        }
    }

    pub fn live(&self) -> usize {
        self.inner.live.load(Ordering::SeqCst)
    }

    pub fn peak(&self) -> usize {
        self.inner.peak.load(Ordering::SeqCst)
    }
}

/// A value counted by a [`BufferGauge`] until dropped.
#[derive(Debug)]
pub struct Tracked<T> {
    value: T,
    gauge: Arc<Counts>,
}

impl<T> std::ops::Deref for Tracked<T> {
    type Target = T;

    fn deref(&self) -> &T {
        &self.value
    }
}

impl<T> std::ops::DerefMut for Tracked<T> {
    fn deref_mut(&mut self) -> &mut T {
        &mut self.value
    }
}

impl<T> Drop for Tracked<T> {
    fn drop(&mut self) {
        self.gauge.live.fetch_sub(1, Ordering::SeqCst);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn peak_survives_drops() {
        let g = BufferGauge::new();
        {
            let _a = g.track(vec![0.0; 4]);
            let _b = g.track(vec![0.0; 4]);
            assert_eq!(g.live(), 2);
        }
        let _c = g.track(());
        assert_eq!(g.live(), 1);
        assert_eq!(g.peak(), 2);
    }
}
