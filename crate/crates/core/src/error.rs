use thiserror::Error;

/// Errors raised by the geometry, projection and flow layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("degenerate surface at node {node}: {reason}")]
    DegenerateSurface { node: usize, reason: &'static str },

    /// Carries the offending node so the stepper can reject a trial step.
    #[error("convexity lost at node {node} (radii eigenvalue {eigenvalue:e})")]
    ConvexityLoss { node: usize, eigenvalue: f64 },

    #[error("support surface leaves the Klein ball at node {node}")]
    OutOfModel { node: usize },

    #[error("projection refused: {0}")]
    Projection(String),

    #[error("recentering failed: {0}")]
    Recenter(String),

    #[error("time step rejected {rejections} times at t = {t} (last dt = {dt:e})")]
    Stiffness { t: f64, dt: f64, rejections: usize },

    #[error("volume correction did not converge (residual {residual:e})")]
    Correction { residual: f64 },

    #[error("decay fit window: {0}")]
    Window(String),

    #[error("malformed field data: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
