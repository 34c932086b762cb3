use alloc::string::String;
use alloc::vec::Vec;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("empty signal")]
    EmptySignal,
    #[error("non-finite input")]
    NonFinite,
    #[error("sample exceeds headroom guard ({0})")]
    Headroom(f64),
    #[error("invalid configuration: {0}")]
    InvalidConfig(&'static str),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("sample-rate mismatch: {0} Hz vs {1} Hz")]
    SampleRateMismatch(u32, u32),
    #[error("stale or mismatched cache")]
    StaleCache,
    #[error("diverged")]
    Diverged,
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error("unknown material `{0}`")]
    UnknownMaterial(String),
    #[error("unknown material id {0}")]
    UnknownMaterialId(usize),
    #[error("out-of-vocabulary tokens: {0:?}")]
    OutOfVocabulary(Vec<String>),
    #[error("non-positive distance {0}")]
    NonPositiveDistance(f64),
    #[error("listener too close to wall")]
    ListenerTooClose,
    #[error("pose outside room")]
    PoseOutsideRoom,
    #[error("room smaller than twice the wall margin")]
    RoomTooSmall,
    #[error("feature tag mismatch")]
    TagMismatch,
}
