//! Problem families: the matrix pencil, low-dimensional approximation of a
//! point cloud, bilinear matrix games and general sparse polynomials.

pub mod lowdim;
pub mod matrix_game;
pub mod pencil;
pub mod polynomial;
pub mod serial;

pub use lowdim::{
    decompose_q, generate_cloud, LowDimMetric, LowDimProblem, PointCloud, QDecomposition,
};
pub use matrix_game::MatrixGame;
pub use pencil::{PencilInstance, PencilProblem, PencilSizes};
pub use polynomial::PolynomialGame;
pub use serial::Encoding;
