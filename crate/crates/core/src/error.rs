use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: String, reason: String },

    #[error("delta kernel must be handled symbolically")]
    DeltaKernel,

    #[error("UV-divergent kernel requires cutoff")]
    UvDivergent,

    #[error("quadrature did not converge: error estimate {estimate:e} above tolerance {tolerance:e}")]
    Quadrature { estimate: f64, tolerance: f64 },

    #[error("time step {dt} too large: dt * {rate} = {product} exceeds {limit}")]
    StepSize {
        dt: f64,
        rate: f64,
        product: f64,
        limit: f64,
    },

    #[error("Volterra iteration failed at step {step}")]
    Volterra { step: usize },

    #[error("time {time} is off the grid (step {dt})")]
    OffGrid { time: f64, dt: f64 },

    #[error("propagator near-singular at t = {time} (condition number {condition:e})")]
    SingularPropagator { time: f64, condition: f64 },

    #[error("operator degree {degree} exceeds cap {cap}")]
    DegreeOverflow { degree: u32, cap: u32 },

    #[error("derivative order {order} exceeds available stencil (max {max})")]
    StencilOrder { order: u32, max: u32 },

    #[error("CFL bound violated: dt = {dt:e} exceeds {bound:e}")]
    Cfl { dt: f64, bound: f64 },

    #[error("non-finite value at cell ({ix}, {ip})")]
    NonFinite { ix: usize, ip: usize },

    #[error("phase-space window too small: {0}")]
    Window(String),

    #[error("noise covariance indefinite: eigenvalue {value:e} below jitter {jitter:e}")]
    IndefiniteCovariance { value: f64, jitter: f64 },

    #[error("trajectory {sample} became unstable at step {step}")]
    Unstable { sample: usize, step: usize },

    #[error("config error at `{path}`: {reason}")]
    Config { path: String, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn param(field: &str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            field: field.to_string(),
            reason: reason.into(),
        }
    }
}
