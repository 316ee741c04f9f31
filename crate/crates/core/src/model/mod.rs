//! Architecture definitions, parameter accounting and the execution engine.

pub mod arch;
pub mod network;
pub mod params;
pub mod scalar;
pub mod tensor;
pub mod zoo;

pub use arch::{ArchName, ArchitectureConfig, GraphBuilder, LayerKind, LayerSpec, Node, Padding, Shape};
pub use network::{BatchLoss, Mode, Network, Param, ProbabilityMatrix, Trace};
pub use params::{complexity_csv, complexity_table, complexity_text, count_parameters, layers_label, ComplexityRow, ParameterCount};
pub use scalar::Scalar;
pub use tensor::Tensor;
pub use zoo::{build_architecture, fv2021, Fv2021Options};
