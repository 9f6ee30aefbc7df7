//! Self-learning setpoint automation for multi-modal cabin climate control.
//!
//! A small feed-forward network learns the setpoints a driver picks for a
//! given set of environment readings. Training data is collected from the
//! live stream of readings and manual setpoints, the network is retrained in
//! rounds, and once a setpoint is predicted reliably the driver is offered a
//! handover of that setpoint to the automation.
//!
//! Module map:
//!
//! - [`nnet`]: dense network, masked squared-error gradients, SGD.
//! - [`acquisition`]: gated sampling, dead-time invalidation, validation split.
//! - [`estimator`]: normalization, training rounds, model publication, handover.
//! - [`sim`]: lumped cabin thermal model, setpoint controller, synthetic drivers,
//!   scenario runner.
//! - [`profile`]: JSON profile persistence and the pretrained library.

pub mod acquisition;
pub mod estimator;
pub mod nnet;
pub mod normalize;
pub mod profile;
pub mod schema;
pub mod sim;

pub use acquisition::{AcquisitionConfig, EnvSample, SampleBuffer, TrainingSample};
pub use estimator::{AutomationMode, AutomationState, Estimator, EstimatorConfig, ModelSlot};
pub use nnet::{Activation, Network, OutputMask};
pub use normalize::NormalizationStats;
pub use profile::{Profile, UserType};
pub use schema::{EnvSchema, SetpointSchema, SetpointVector};
pub use sim::{RunOutput, Scenario};
