//! Kolmogorov-Arnold networks: bases, layers, networks and their Lipschitz
//! constants.

pub mod basis;
pub mod io;
pub mod lipschitz;
pub mod network;

pub use basis::{basis_deriv, basis_eval, BasisKind, BasisSpec};
pub use io::{load_network, network_from_str, network_to_string, save_network};
pub use lipschitz::{layer_bound, lipschitz_empirical, lipschitz_upper_bound};
pub use network::{
    default_dims, init_network, ForwardCache, GradientBundle, KanLayer, KanNetwork, LayerGrad,
};
