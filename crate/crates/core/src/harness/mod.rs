//! Scenario configuration, reference trajectories, the episode loop, data
//! collection, online residual learning, metrics and file export.

pub mod collect;
pub mod config;
pub mod episode;
pub mod export;
pub mod metrics;
pub mod online;
pub mod reference;

pub use collect::{collect_training_data, labels_from_episode, LabelOptions};
pub use config::{ControllerKind, InitialCondition, ScenarioConfig};
pub use episode::{run_episode, EpisodeResult, Oracle};
pub use metrics::{metrics, MetricsReport};
pub use online::{run_online, OnlineOutcome};
pub use reference::FigureEight;
