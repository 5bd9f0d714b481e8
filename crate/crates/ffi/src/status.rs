use std::ffi::CStr;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PblStatus {
    Ok = 0,
    /// A required pointer was null.
    NullArgument = 1,
    /// A string argument was not UTF-8.
    BadUtf8 = 2,
    /// An argument was out of range or malformed.
    BadArgument = 3,
    /// Input bytes are not a ledger file.
    Decode = 4,
    /// A ledger failed validation.
    Invalid = 5,
    /// Providers did not answer.
    Fault = 6,
    /// A provider refused the request.
    Refused = 7,
    /// The output buffer is too small; `*needed` holds the size.
    BufferTooSmall = 8,
    /// The library panicked; the handle should be discarded.
    Panic = 9,
}

impl PblStatus {
    pub fn name(self) -> &'static CStr {
        match self {
            PblStatus::Ok => c"ok",
            PblStatus::NullArgument => c"null argument",
            PblStatus::BadUtf8 => c"bad utf-8",
            PblStatus::BadArgument => c"bad argument",
            PblStatus::Decode => c"decode error",
            PblStatus::Invalid => c"invalid ledger",
            PblStatus::Fault => c"provider fault",
            PblStatus::Refused => c"refused",
            PblStatus::BufferTooSmall => c"buffer too small",
            PblStatus::Panic => c"panic",
        }
    }
}

pub(crate) struct Error {
    pub status: PblStatus,
    pub message: String,
}

impl Error {
    pub fn new(status: PblStatus, message: String) -> Self {
        Error { status, message }
    }

    pub fn null(what: &str) -> Self {
        Error::new(PblStatus::NullArgument, format!("{what} is null"))
    }

    pub fn bad_argument(e: impl ToString) -> Self {
        Error::new(PblStatus::BadArgument, e.to_string())
    }

    pub fn fault(e: impl ToString) -> Self {
        Error::new(PblStatus::Fault, e.to_string())
    }
}
