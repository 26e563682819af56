use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("unknown joint `{0}`")]
    UnknownJoint(String),
    #[error("invalid kinematic tree: {0}")]
    InvalidTree(String),
    #[error("pose has {got} joints, tree has {expected}")]
    JointCount { expected: usize, got: usize },
    #[error("conversion to camera_absolute needs a root translation")]
    MissingTranslation,
    #[error("expected a pose in the {expected} frame")]
    WrongFrame { expected: &'static str },
    #[error("person has neither a pelvis nor a neck detection")]
    NoRoot,
    #[error("insufficient data: {0}")]
    InsufficientData(&'static str),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(&'static str),
    #[error("position ({x}, {y}) lies outside the {width}x{height} grid")]
    OutOfGrid { x: usize, y: usize, width: usize, height: usize },
    #[error("resize target {target_w}x{target_h} is smaller than source {source_w}x{source_h}")]
    Downscale { source_w: usize, source_h: usize, target_w: usize, target_h: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(&'static str),
    #[error("metric undefined: {0}")]
    UndefinedMetric(&'static str),
}
