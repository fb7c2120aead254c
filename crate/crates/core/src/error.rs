use thiserror::Error;

pub type SimResult<T> = Result<T, SimError>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error("unknown namespace {0}")]
    UnknownNamespace(u32),
    #[error("unaligned write to zone {zone}: lba offset {offset} != write pointer {write_pointer}")]
    UnalignedWrite { zone: u64, offset: u64, write_pointer: u64 },
    #[error("zone {zone} is full or the write exceeds its capacity")]
    ZoneFull { zone: u64 },
    #[error("read of unmapped logical page {lpa} in namespace {ns}")]
    UnmappedRead { ns: u32, lpa: u64 },
    #[error("logical page {lpa} out of range for namespace {ns}")]
    LbaOutOfRange { ns: u32, lpa: u64 },
    #[error("request length {0} is not a positive multiple of 4096")]
    BadLength(u64),
    #[error("operation {0} is not supported on this namespace")]
    Unsupported(&'static str),
    #[error("command addressed outside the flash geometry")]
    AddressOutOfRange,
    #[error("out of space in the {0} region")]
    OutOfSpace(&'static str),
    #[error("no garbage-collection victim in namespace {0}")]
    NoVictim(u32),
    #[error("trace line {line}: {msg}")]
    TraceParse { line: usize, msg: String },
    #[error("record {index} ({record}): {source}")]
    Record {
        index: usize,
        record: String,
        #[source]
        source: Box<SimError>,
    },
    #[error("invalid workload parameters: {0}")]
    InvalidParams(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl SimError {
    pub fn config(msg: impl Into<String>) -> Self {
        SimError::ConfigInvalid(msg.into())
    }
}

impl From<std::io::Error> for SimError {
    fn from(e: std::io::Error) -> Self {
        SimError::Io(e.to_string())
    }
}
