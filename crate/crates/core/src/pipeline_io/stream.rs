//! Bounded read-ahead: a producer thread loads items in order into a queue.

use std::sync::mpsc::{sync_channel, Receiver};
use std::thread::JoinHandle;

use crate::error::Result;

pub struct Prefetch<T> {
    rx: Receiver<Result<T>>,
    handle: Option<JoinHandle<()>>,
}

impl<T: Send + 'static> Prefetch<T> {
    /// Calls `load(0)`, `load(1)`, … `load(count - 1)` on a background thread,
    /// at most `capacity` items ahead of the consumer. Loading stops after
    /// the first error.
    pub fn new<F>(count: usize, capacity: usize, load: F) -> Self
    where
        F: Fn(usize) -> Result<T> + Send + 'static,
    {
        let (tx, rx) = sync_channel(capacity.max(1));
        let handle = std::thread::spawn(move || {
            for i in 0..count {
                let item = load(i);
                let failed = item.is_err();
                if tx.send(item).is_err() || failed {
                    break;
                }
            }
        });
        Self {
            rx,
            handle: Some(handle),
        }
    }
}

impl<T> Iterator for Prefetch<T> {
    type Item = Result<T>;

    fn next(&mut self) -> Option<Self::Item> {
        match self.rx.recv() {
            Ok(item) => Some(item),
            Err(_) => {
                if let Some(h) = self.handle.take() {
                    let _ = h.join();
                }
                None
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    #[test]
    fn preserves_order() {
        let got: Vec<usize> = Prefetch::new(100, 2, |i| Ok(i * 3)).map(|r| r.unwrap()).collect();
        assert_eq!(got, (0..100).map(|i| i * 3).collect::<Vec<_>>());
    }

    #[test]
    fn stops_after_error() {
        let got: Vec<Result<usize>> = Prefetch::new(10, 4, |i| {
            if i == 3 {
                Err(Error::Dataset("boom".into()))
            } else {
                Ok(i)
            }
        })
        .collect();
        assert_eq!(got.len(), 4);
        assert!(got[3].is_err());
    }
}
