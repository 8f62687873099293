use crate::error::{Error, Result};

/// Fixed-capacity ring of the most recent samples.
#[derive(Debug, Clone)]
pub struct RollingBuffer {
    ring: Vec<f64>,
    write_position: usize,
    total_samples_seen: u64,
}

impl RollingBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::param("capacity", "must be positive"));
        }
        Ok(RollingBuffer {
            ring: vec![0.0; capacity],
            write_position: 0,
            total_samples_seen: 0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.ring.len()
    }

    pub fn len(&self) -> usize {
        self.total_samples_seen.min(self.ring.len() as u64) as usize
    }

    pub fn is_empty(&self) -> bool {
        self.total_samples_seen == 0
    }

    pub fn total_samples_seen(&self) -> u64 {
        self.total_samples_seen
    }

    /// Absolute index of the oldest stored sample.
    pub fn oldest(&self) -> u64 {
        self.total_samples_seen - self.len() as u64
    }

    pub fn push(&mut self, chunk: &[f64]) -> Result<()> {
        let cap = self.ring.len();
        if chunk.len() > cap {
            return Err(Error::BufferOverflow {
                chunk: chunk.len(),
                capacity: cap,
            });
        }
        let first = chunk.len().min(cap - self.write_position);
        self.ring[self.write_position..self.write_position + first]
            .copy_from_slice(&chunk[..first]);
        self.ring[..chunk.len() - first].copy_from_slice(&chunk[first..]);
        self.write_position = (self.write_position + chunk.len()) % cap;
        self.total_samples_seen += chunk.len() as u64;
        Ok(())
    }

    /// Copy `len` samples starting at absolute index `start`, in logical
    /// order across the wrap point.
    pub fn read(&self, start: u64, len: usize) -> Result<Vec<f64>> {
        if start < self.oldest() {
            return Err(Error::Evicted(start));
        }
        if start + len as u64 > self.total_samples_seen {
            return Err(Error::param("read", "range extends past buffered audio"));
        }
        let cap = self.ring.len() as u64;
        let mut out = Vec::with_capacity(len);
        let begin = (start % cap) as usize;
        let first = len.min(self.ring.len() - begin);
        out.extend_from_slice(&self.ring[begin..begin + first]);
        out.extend_from_slice(&self.ring[..len - first]);
        Ok(out)
    }
}

/// Windows of `window` samples every `stride` samples over a rolling buffer.
#[derive(Debug, Clone)]
pub struct WindowedStream {
    buffer: RollingBuffer,
    window: usize,
    stride: usize,
    next_index: u64,
    max_chunk: usize,
}

impl WindowedStream {
    /// Accepts chunks of up to `max_chunk` samples; the ring holds
    /// `max_chunk + window` samples so no ready window is ever evicted.
    pub fn new(window: usize, stride: usize, max_chunk: usize) -> Result<Self> {
        if window == 0 || stride == 0 {
            return Err(Error::param("window", "window and stride must be positive"));
        }
        Ok(WindowedStream {
            buffer: RollingBuffer::new(max_chunk + window)?,
            window,
            stride,
            next_index: 0,
            max_chunk,
        })
    }

    pub fn buffer(&self) -> &RollingBuffer {
        &self.buffer
    }

    /// Append a chunk; return `(window index, samples)` for every window
    /// that became fully buffered.
    pub fn push(&mut self, chunk: &[f64]) -> Result<Vec<(u64, Vec<f64>)>> {
        if chunk.len() > self.max_chunk {
            return Err(Error::BufferOverflow {
                chunk: chunk.len(),
                capacity: self.max_chunk,
            });
        }
        self.buffer.push(chunk)?;
        let mut ready = Vec::new();
        loop {
            let start = self.next_index * self.stride as u64;
            if start + self.window as u64 > self.buffer.total_samples_seen() {
                break;
            }
            ready.push((self.next_index, self.buffer.read(start, self.window)?));
            self.next_index += 1;
        }
        Ok(ready)
    }
}

/// Window start indices `k` such that `[k*stride, k*stride + window)` lies
/// within `total` samples.
pub fn ready_windows(total: u64, window: u64, stride: u64) -> u64 {
    if total < window {
        0
    } else {
        (total - window) / stride + 1
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn wraps_in_logical_order() {
        let mut b = RollingBuffer::new(5).unwrap();
        b.push(&[1.0, 2.0, 3.0]).unwrap();
        b.push(&[4.0, 5.0, 6.0, 7.0]).unwrap();
        assert_eq!(b.len(), 5);
        assert_eq!(b.oldest(), 2);
        assert_eq!(b.read(2, 5).unwrap(), vec![3.0, 4.0, 5.0, 6.0, 7.0]);
        assert!(matches!(b.read(1, 2), Err(Error::Evicted(1))));
        assert!(b.push(&[0.0; 6]).is_err());
    }

    #[test]
    fn ready_window_arithmetic() {
        // 16 kHz, 0.8 s window, 0.5 s stride
        let (w, s) = (12_800u64, 8_000u64);
        assert_eq!(ready_windows(12_800, w, s), 1);
        assert_eq!(ready_windows(20_800, w, s), 2);
        assert_eq!(ready_windows(11_200, w, s), 0);
        assert_eq!(ready_windows(160_000, w, s), 19);
    }

    proptest! {
        #[test]
        fn chunking_does_not_change_windows(chunks in prop::collection::vec(1usize..40, 1..40)) {
            let total: usize = chunks.iter().sum();
            let signal: Vec<f64> = (0..total).map(|i| i as f64).collect();
            let mut s = WindowedStream::new(7, 3, 40).unwrap();
            let mut got = Vec::new();
            let mut at = 0;
            for c in &chunks {
                got.extend(s.push(&signal[at..at + c]).unwrap());
                at += c;
            }
            prop_assert_eq!(got.len() as u64, ready_windows(total as u64, 7, 3));
            for (k, w) in got {
                let start = k as usize * 3;
                prop_assert_eq!(&w[..], &signal[start..start + 7]);
            }
            prop_assert!(s.buffer().len() <= s.buffer().capacity());
        }
    }
}
