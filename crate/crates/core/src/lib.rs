//! Entity-cell lab: a small transformer with planted entity cells and the
//! analysis pipeline that finds, ablates, injects, and steers through them.

pub mod corpus;
pub mod error;
pub mod interventions;
pub mod localization;
pub mod metrics;
pub mod organism;
pub mod pipeline;
pub mod robustness;
pub mod scenario;
pub mod steering;

pub use corpus::{EntityRecord, Inventory, PromptBundle, QaRecord, VariantKind, Vocabulary};
pub use error::{Error, Result};
pub use localization::{BaselineStats, CellMap, RankedCell};
pub use metrics::AnswerTargets;
pub use organism::{HookSet, ModelConfig, NeuronId, Organism, TokenId};
pub use scenario::{Scenario, ScenarioConfig};
pub use steering::{SteeringConfig, SteeringResult};
