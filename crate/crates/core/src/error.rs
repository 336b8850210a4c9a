use crate::UserId;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("parameter generation failed after {attempts} attempts")]
    GenerationFailed { attempts: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("plaintext out of range [0, N)")]
    PlaintextOutOfRange,

    /// `c2 / c1^pri - 1` was not a multiple of N.
    #[error("malformed ciphertext: unmasked value is not of the form 1 + mN")]
    MalformedCiphertext,

    #[error("insufficient shares: need {needed}, got {got}")]
    InsufficientShares { needed: usize, got: usize },

    #[error("duplicate share evaluation point x = {0}")]
    DuplicateSharePoint(u64),

    #[error("share set mixes owners {0} and {1}")]
    MixedShareOwners(UserId, UserId),

    #[error("AEAD authentication failed")]
    AuthenticationFailed,

    #[error("value {value} out of fixed-point range")]
    CodecRange { value: f64 },

    #[error("user {0} is not in the active list")]
    NotActive(UserId),

    #[error("protocol incomplete: {0}")]
    ProtocolIncomplete(String),

    #[error("forced aggregation violated at entry {entry}: unmasked value is not of the form 1 + yN")]
    ForcedAggregationViolation { entry: usize },

    #[error("recovered mask key for user {0} does not match its public key")]
    RecoveredKeyMismatch(UserId),

    #[error("round aborted: {active} active users, threshold {threshold}")]
    RoundAbort { active: usize, threshold: usize },

    #[error("registration error: {0}")]
    Registration(String),

    #[error("recipient {0} has dropped out")]
    RecipientDropped(String),

    #[error("sender {0} has dropped out")]
    SenderDropped(String),

    #[error("wire decode error: {0}")]
    Decode(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("cannot split {rows} rows across {users} users without an empty shard")]
    EmptyShard { rows: usize, users: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
