/// Live and peak activation bytes over one training step.
///
/// `retain` counts tensors held for the backward pass; `transient` records a
/// short-lived working set on top of them without keeping it live.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ActivationLedger {
    live_bytes: usize,
    peak_bytes: usize,
    cached_tensors: usize,
    resets: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LedgerReport {
    pub live_bytes: usize,
    pub peak_bytes: usize,
    pub cached_tensor_count: usize,
}

impl ActivationLedger {
    pub fn reset(&mut self) {
        self.live_bytes = 0;
        self.peak_bytes = 0;
        self.cached_tensors = 0;
        self.resets += 1;
    }

    pub fn retain(&mut self, bytes: usize, tensors: usize) {
        self.live_bytes += bytes;
        self.cached_tensors += tensors;
        self.peak_bytes = self.peak_bytes.max(self.live_bytes);
    }

    pub fn release(&mut self, bytes: usize, tensors: usize) {
        debug_assert!(bytes <= self.live_bytes, "released more than retained");
        self.live_bytes = self.live_bytes.saturating_sub(bytes);
        self.cached_tensors = self.cached_tensors.saturating_sub(tensors);
    }

    pub fn transient(&mut self, bytes: usize) {
        self.peak_bytes = self.peak_bytes.max(self.live_bytes + bytes);
    }

    /// Number of steps started since construction.
    pub fn steps(&self) -> u64 {
        self.resets
    }

    pub fn report(&self) -> LedgerReport {
        LedgerReport {
            live_bytes: self.live_bytes,
            peak_bytes: self.peak_bytes,
            cached_tensor_count: self.cached_tensors,
        }
    }
}
