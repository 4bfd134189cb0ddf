//! Conditioning of continuous centered Gaussian processes on finitely many
//! vanishing linear functionals (signed measures on [0, T]).
//!
//! Given a base kernel and a set of conditions, the library computes the
//! conditioned covariance and drift in closed or numeric form and samples
//! conditioned paths by three mutually verifying routes:
//!
//! * an anticipative path transform (subtract the detached-subspace
//!   component fitted from the whole path),
//! * a truncated series expansion over a basis of the reduced space,
//! * Euler–Maruyama integration of the conditioned SDE with the drift
//!   recovered from the expected-future linear system.
//!
//! The flagship configuration is Brownian motion on [0, 1] pinned to 0 at
//! time 1 and conditioned to enclose zero area (`--preset zabb` in the CLI);
//! the classical Brownian bridge is `--preset bridge`.
//!
//! ```
//! use gpcond::{Condition, ConditionedModel, Kernel, Path};
//!
//! let model = ConditionedModel::new(
//!     Kernel::brownian(1.0)?,
//!     vec![Condition::endpoint(1.0), Condition::unit_density(1.0)],
//! )?;
//! assert!((model.cond_cov(0.5, 0.5)? - 0.0625).abs() < 1e-12);
//!
//! let grid = Path::uniform_grid(1.0, 512);
//! let base = model.kernel().sample_path(&grid, 7)?;
//! let conditioned = model.anticipative_transform(&base)?;
//! assert!(conditioned.values().last().unwrap().abs() < 1e-12);
//! # Ok::<(), gpcond::Error>(())
//! ```

pub mod conditions;
pub mod conditioning;
pub mod detached;
pub mod error;
pub mod kernel;
pub mod markov_sde;
pub mod seeds;
pub mod series;
pub mod verify;

pub mod cli;

mod exppoly;
mod linalg;
mod quad;

pub use error::{Error, Result};

pub use conditions::{Atom, Condition, PiecewisePoly, PolyPiece};
pub use conditioning::ConditionedModel;
pub use detached::DetachedBasis;
pub use kernel::{kernel_apply, kernel_double_apply, Kernel, Path};
pub use markov_sde::{AugmentedPath, AugmentedState, DriftEvaluator};
pub use series::SeriesBasis;
