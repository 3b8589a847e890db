use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("points are not collinear")]
    Collinearity,
    #[error("degenerate cross ratio: coincident points")]
    DegenerateCrossRatio,
    #[error("degenerate point configuration for DLT")]
    DegenerateDlt,
    #[error("point maps to infinity")]
    PointAtInfinity,
    #[error("degenerate 1D projective frame")]
    DegenerateFrame,
    #[error("homography is not invertible")]
    SingularHomography,

    #[error("vanishing point estimation failed: {0}")]
    VpEstimationFailed(String),
    #[error("ellipse fit failed: {0}")]
    EllipseFitFailed(String),
    #[error("ellipse fallback failed: {0}")]
    FallbackFailed(String),

    #[error("vanishing point lies inside the expanded image region")]
    VpInsideImage,
    #[error("point ({x:.3}, {y:.3}) lies outside the ray grid")]
    OutOfGrid { x: f64, y: f64 },
    #[error("invalid region [{i_lo},{i_hi})x[{j_lo},{j_hi}) for a {rows}x{cols} table")]
    Region {
        i_lo: usize,
        i_hi: usize,
        j_lo: usize,
        j_hi: usize,
        rows: usize,
        cols: usize,
    },
    #[error("invalid ray grid: {0}")]
    InvalidGrid(String),

    #[error("hypothesis box contains no valid hypothesis")]
    EmptyBox,
    #[error("box holds a single hypothesis and cannot be branched")]
    CannotBranch,
    #[error("hypothesis space too large for exhaustive search ({0} hypotheses)")]
    TooLarge(u128),
    #[error("iteration budget exceeded after {} iterations; result not certified", .0.iterations)]
    BudgetExceeded(Box<crate::inference::InferenceResult>),

    #[error("training failed: {0}")]
    Training(String),

    #[error("synthetic frame generation failed after {0} draws")]
    SynthFailed(usize),
    #[error("IOU undefined: empty union")]
    UndefinedIou,

    #[error("invalid input: {0}")]
    Input(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("json error in {path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("image error on {path}: {source}")]
    Image {
        path: String,
        #[source]
        source: image::ImageError,
    },
}

impl Error {
    /// Failures of vanishing point estimation, which evaluation excludes
    /// rather than scores.
    pub fn is_vp_failure(&self) -> bool {
        matches!(
            self,
            Error::VpEstimationFailed(_)
                | Error::EllipseFitFailed(_)
                | Error::FallbackFailed(_)
                | Error::VpInsideImage
        )
    }
}
