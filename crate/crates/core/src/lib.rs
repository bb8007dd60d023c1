//! Restoration planning engine for radial distribution feeders.
//!
//! The crate models a sectionalized feeder partitioned into microgrids,
//! solves balanced power flow on its energized islands, scores operational
//! constraints into a penalty signal, and trains decentralized switching
//! policies with sequential per-agent clipped policy updates guided by a
//! centralized critic. An exhaustive configuration oracle provides ground
//! truth on small feeders.

pub mod checkpoint;
pub mod env;
pub mod happo;
pub mod nn;
pub mod oracle;
pub mod feeder;
pub mod powerflow;
pub mod reward;
pub mod rngstream;

pub use checkpoint::{Checkpoint, CheckpointError};
pub use env::{
    build_global_state, sample_scenario, EnvError, ResetOutput, RestorationEnv, ScenarioConfig,
    ScenarioSpec, StepInfo, StepOutput,
};
pub use happo::{
    collect_rollout, compute_gae, critic_update, eval_policy, sequential_update, train,
    train_single_seed, Agents, Algorithm, Critics, EvalEpisode, IterationMetrics, Learner,
    SeedRunSummary, TrainConfig, TrainError, TrainOptions, TrajectoryBuffer, UpdateOrder,
};
pub use oracle::{
    exhaustive_oracle, greedy_policy, independent_ppo, random_policy, OracleError, OracleMode,
    OracleResult, PolicySummary,
};
pub use feeder::{
    connected_components, load_feeder, load_feeder_str, validate_partition, Branch, Bus, Der,
    FeederError, FeederGraph, IslandSet, Load, MicrogridRegion, Switch, SwitchState, SwitchStates,
};
pub use powerflow::{
    dispatch_ders, solve_island, solve_system, solve_system_with, BranchFlow, DispatchPlan,
    IslandSlack, IslandStatus, PowerFlowResult,
};
pub use reward::{
    evaluate_constraints, step_reward, weighted_restored, ConstraintNorms, DeltaMode,
    RewardConfig, ViolationReport,
};
