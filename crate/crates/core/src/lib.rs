//! Assembly action recognition with kinematic constraint graphs.
//!
//! An assembly process is a sequence of kinematic graphs, each produced from
//! the previous one by a `connect` or `disconnect` action. Observation
//! sequences (part poses, pairwise same-body probabilities, or externally
//! computed per-frame scores) are scored against candidate assemblies with a
//! segmental CRF, and the best segmentation and labeling is recovered with
//! semi-Markov Viterbi decoding.
//!
//! Modules:
//! - [`assembly`]: part catalogs, assembly graphs, the action algebra and
//!   canonical keys under part symmetries.
//! - [`kinematics`]: pose averaging and predicted part layouts.
//! - [`features`]: per-frame observation scores.
//! - [`decoder`]: Viterbi with known boundaries, segmental and
//!   duration-bounded segmental Viterbi.
//! - [`training`]: vocabulary, transition estimation and grid search.
//! - [`metrics`]: frame accuracy and edit score.
//! - [`simulator`]: seeded synthetic datasets.
//! - [`io`]: line-delimited record formats used by the CLI.

pub mod assembly;
pub mod decoder;
pub mod features;
pub mod io;
pub mod kinematics;
pub mod metrics;
pub mod simulator;
pub mod training;

pub use assembly::{
    Assembly, AssemblyAction, AssemblyError, CanonicalKey, InstanceId, Joint, PartCatalog,
    PartInstance, Scene, Sign,
};
pub use decoder::{DecodeError, DecodeResult, Initial, ScoreTable, Segment, TransitionModel};
pub use features::{FeatureConfig, FrameObservation, ObservationSequence, PrecomputedScores};
pub use kinematics::{mean_pose, Pose};
pub use decoder::Vocabulary;
pub use training::{LabeledSequence, ModelParams};
