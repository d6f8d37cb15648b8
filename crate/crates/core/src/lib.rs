//! Sentiment-adaptive dialog policy learning for a bus-information domain:
//! corpus handling, sentiment detection from dialogic, acoustic and textual
//! features, a supervised HCN-style policy, a user simulator and REINFORCE
//! training with sentiment-shaped rewards.

pub mod config;
pub mod corpus;
pub mod error;
pub mod features;
pub mod neural;
pub mod policy;
pub mod rltrain;
pub mod sentiment;
pub mod simenv;
pub mod stats;

pub use config::KeyValues;
pub use corpus::{Dialog, EntityLexicon, EntityType, SentimentLabel, Split, SynthConfig, TemplateInventory, Turn, UserAct};
pub use error::{Error, ErrorKind, Result};
pub use features::{synth_acoustic, AcousticTable, DialogicFeatures, FeatureFamilies};
pub use neural::{AdaDelta, Network};
pub use policy::{PolicyModel, SlFeatureConfig, SlMetrics, SlSession, SlTrainConfig, SlVariant};
pub use rltrain::{PolicySet, RlConfig, RlPolicy, TrainReport};
pub use sentiment::{
    DetectorConfig, DialogicDetector, DialogicSentiment, ForestConfig, RandomForest, ScoreWeights, SentimentDetector,
    SentimentProbs,
};
pub use simenv::{
    BankConfig, Environment, RewardConfig, RewardVariant, SampleBank, SimConfig, StepOutcome, SysAction,
};
