use std::fmt;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FaultMode {
    #[default]
    Healthy,
    /// Never answers.
    Silent,
    /// Answers after this many ms.
    Delayed(u64),
    /// Answers with every signature it made bit-flipped.
    CorruptSignature,
}

/// A provider's behavior, optionally limited to `[start, end)` in virtual
/// time. Outside the window the provider is healthy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct FaultProgram {
    pub mode: FaultMode,
    pub window: Option<(u64, u64)>,
}

impl FaultProgram {
    pub fn healthy() -> Self {
        Self::default()
    }

    pub fn silent() -> Self {
        FaultMode::Silent.into()
    }

    pub fn delayed(ms: u64) -> Self {
        FaultMode::Delayed(ms).into()
    }

    pub fn corrupt() -> Self {
        FaultMode::CorruptSignature.into()
    }

    pub fn between(mut self, start: u64, end: u64) -> Self {
        self.window = Some((start, end));
        self
    }

    pub fn mode_at(&self, now: u64) -> FaultMode {
        match self.window {
            Some((start, end)) if now < start || now >= end => FaultMode::Healthy,
            _ => self.mode,
        }
    }
}

impl From<FaultMode> for FaultProgram {
    fn from(mode: FaultMode) -> Self {
        FaultProgram { mode, window: None }
    }
}

impl fmt::Display for FaultMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FaultMode::Healthy => f.write_str("healthy"),
            FaultMode::Silent => f.write_str("silent"),
            FaultMode::Delayed(ms) => write!(f, "delayed {ms}"),
            FaultMode::CorruptSignature => f.write_str("corrupt"),
        }
    }
}

impl FromStr for FaultMode {
    type Err = String;

    /// `healthy`, `silent`, `corrupt` or `delayed <ms>`.
    fn from_str(s: &str) -> Result<Self, String> {
        let words: Vec<&str> = s.split_whitespace().collect();
        match words.as_slice() {
            ["healthy"] => Ok(FaultMode::Healthy),
            ["silent"] => Ok(FaultMode::Silent),
            ["corrupt"] | ["corrupt-signature"] => Ok(FaultMode::CorruptSignature),
            ["delayed", ms] => ms
                .parse()
                .map(FaultMode::Delayed)
                .map_err(|_| format!("bad delay {ms:?}")),
            _ => Err(format!("unknown fault mode {s:?}")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_limits_the_fault() {
        let p = FaultProgram::silent().between(10, 20);
        assert_eq!(p.mode_at(9), FaultMode::Healthy);
        assert_eq!(p.mode_at(10), FaultMode::Silent);
        assert_eq!(p.mode_at(19), FaultMode::Silent);
        assert_eq!(p.mode_at(20), FaultMode::Healthy);
        assert_eq!(FaultProgram::delayed(5).mode_at(0), FaultMode::Delayed(5));
    }

    #[test]
    fn modes_parse() {
        assert_eq!("delayed 600".parse(), Ok(FaultMode::Delayed(600)));
        assert_eq!("corrupt".parse(), Ok(FaultMode::CorruptSignature));
        assert!("flaky".parse::<FaultMode>().is_err());
    }
}
