//! Partition search: genotype handling, fitness caching, linkage-tree GOM
//! with a population pyramid, baseline searchers, and a k-NN surrogate.

pub mod cache;
pub mod fitness;
pub mod genotype;
pub mod gom;
pub mod linkage;
pub mod surrogate;

pub use cache::{ClosureObjective, FitnessCache, FitnessRecord, HistoryEntry, Objective};
pub use fitness::TrainingObjective;
pub use genotype::{canonicalize, repair, PartitionGenotype};
pub use gom::{optimize, Algorithm, OptimizeResult, OptimizerConfig, SurrogateConfig, SurrogateMode};
pub use linkage::{learn_linkage, LinkageTree};
pub use surrogate::{predict_fitness, surrogate_screen};
