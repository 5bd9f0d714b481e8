use super::{Chaincode, ChaincodeError};

pub const BALANCE_ID: &str = "balance";

const MAX_DIGITS: usize = 18;

/// Signed running total. State and output are the balance as ASCII
/// decimal; the payload is an optional sign followed by 1 to 18 digits.
#[derive(Debug, Clone, Copy, Default)]
pub struct Balance;

pub fn parse_delta(payload: &[u8]) -> Result<i64, ChaincodeError> {
    let (negative, digits) = match payload.first() {
        Some(b'+') => (false, &payload[1..]),
        Some(b'-') => (true, &payload[1..]),
        _ => (false, payload),
    };
    if digits.is_empty() || digits.len() > MAX_DIGITS {
        return Err(ChaincodeError::Payload(format!(
            "expected 1 to {MAX_DIGITS} digits, got {}",
            digits.len()
        )));
    }
    if let Some(bad) = digits.iter().find(|b| !b.is_ascii_digit()) {
        return Err(ChaincodeError::Payload(format!(
            "unexpected byte {bad:#04x}"
        )));
    }
    // At most 18 digits, so this fits in an i64.
    let magnitude = digits
        .iter()
        .fold(0i64, |acc, d| acc * 10 + i64::from(d - b'0'));
    Ok(if negative { -magnitude } else { magnitude })
}

fn parse_state(state: &[u8]) -> Result<i64, ChaincodeError> {
    std::str::from_utf8(state)
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| ChaincodeError::State(String::from_utf8_lossy(state).into_owned()))
}

impl Chaincode for Balance {
    fn id(&self) -> &str {
        BALANCE_ID
    }

    fn initial_state(&self) -> Vec<u8> {
        b"0".to_vec()
    }

    fn step(&self, state: &[u8], payload: &[u8]) -> Result<(Vec<u8>, Vec<u8>), ChaincodeError> {
        let total = parse_state(state)?
            .checked_add(parse_delta(payload)?)
            .ok_or(ChaincodeError::Overflow)?;
        let text = total.to_string().into_bytes();
        Ok((text.clone(), text))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adds_signed_deltas() {
        let (s, out) = Balance.step(b"100", b"+25").unwrap();
        assert_eq!(out, b"125");
        assert_eq!(s, b"125");
        assert_eq!(Balance.step(b"10", b"-25").unwrap().1, b"-15");
        assert_eq!(Balance.step(b"0", b"7").unwrap().1, b"7");
    }

    #[test]
    fn rejects_bad_payloads() {
        for p in [&b""[..], b"+", b"-", b"1.5", b" 1", b"1234567890123456789", b"0x10"] {
            assert!(
                matches!(Balance.step(b"0", p), Err(ChaincodeError::Payload(_))),
                "{:?}",
                String::from_utf8_lossy(p)
            );
        }
        assert!(Balance.step(b"0", b"999999999999999999").is_ok());
    }

    #[test]
    fn overflow_is_an_error() {
        let max = i64::MAX.to_string();
        assert_eq!(
            Balance.step(max.as_bytes(), b"+1"),
            Err(ChaincodeError::Overflow)
        );
    }
}
