pub mod assembly;
pub mod certify;
pub mod config;
pub mod converge;
pub mod coupling;
pub mod geometry;
pub mod linalg;
pub mod maxwell;
pub mod sim;
pub mod tline;
pub use config::Error;
