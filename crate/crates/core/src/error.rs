use alloc::string::String;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(&'static str),
    #[error("formant at {frequency:.1} Hz is at or above Nyquist ({nyquist:.1} Hz)")]
    AboveNyquist { frequency: f64, nyquist: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("empty formant track: {0}")]
    EmptyTrack(&'static str),
    #[error("token is unvoiced")]
    Unvoiced,
    #[error("token too short: {periods:.1} vocal periods after voicing onset, need 10")]
    ShortToken { periods: f64 },
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("contract violation: {0}")]
    Contract(&'static str),
    #[error("resynthesis failed at {time:.3} s: {reason}")]
    Resynthesis { time: f64, reason: &'static str },
}
