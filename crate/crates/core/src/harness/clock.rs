/// Milliseconds that only move when told to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VirtualClock {
    now: u64,
}

impl VirtualClock {
    pub fn new(start: u64) -> Self {
        VirtualClock { now: start }
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn advance(&mut self, ms: u64) -> u64 {
        self.now = self.now.saturating_add(ms);
        self.now
    }

    /// Moves to `t`, or stays put if `t` is in the past.
    pub fn advance_to(&mut self, t: u64) -> u64 {
        self.now = self.now.max(t);
        self.now
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn never_goes_back() {
        let mut c = VirtualClock::new(100);
        assert_eq!(c.advance(5), 105);
        assert_eq!(c.advance_to(50), 105);
        assert_eq!(c.advance_to(200), 200);
        assert_eq!(c.advance(u64::MAX), u64::MAX);
    }
}
