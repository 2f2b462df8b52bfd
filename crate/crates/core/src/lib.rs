//! Meta-learning for adversarial bandits.
//!
//! Online mirror descent is tuned across a sequence of bandit tasks: the
//! initialization by follow-the-leader, the step size by EWOO and the
//! regularizer parameter by multiplicative weights. Base learners are Tsallis
//! OMD on the simplex (multi-armed bandits) and log-barrier OMD on the ball
//! or a flow polytope (bandit linear optimization).
//!
//! ```no_run
//! use metabandit::harness::{preset, run_experiment};
//!
//! let cfg = preset("smoke").unwrap();
//! let out = run_experiment(&cfg, true).unwrap();
//! println!("{:?}", out.summary.meta.unwrap().avg_regret);
//! ```

pub mod bandit_learners;
pub mod bounds;
pub mod domains;
pub mod environments;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod meta_learner;
pub mod mirror_descent;
pub mod regularizers;
pub mod rng;
pub mod verify;

pub use bandit_learners::{Actions, TaskOutcome};
pub use bounds::{eval_bound, BoundSpec};
pub use domains::{Constraint, Domain, DomainKind, Polytope};
pub use environments::{FlowGraph, Generator, Task, TaskStream};
pub use error::{Error, Result};
pub use harness::{ExperimentConfig, ExperimentRecord, Summary};
pub use meta_learner::{MetaState, Mode};
pub use regularizers::Regularizer;
pub use rng::{stream, Purpose, StreamRng};
