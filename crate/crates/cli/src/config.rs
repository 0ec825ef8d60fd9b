//! Flat `key = value` run configuration.

use std::fmt;
use std::path::Path;

use manygoals::eval::Statistic;
use manygoals::maintask::AuxTask;
use manygoals::mastery::Learner;
use manygoals::{GoalSelection, StartMode};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("config file {0} does not exist")]
    MissingFile(String),
    #[error("unknown config key `{key}` ({origin})")]
    UnknownKey { key: String, origin: String },
    #[error("config key `{key}` expects {expected}, got `{value}` ({origin})")]
    TypeMismatch {
        key: String,
        value: String,
        expected: &'static str,
        origin: String,
    },
    #[error("{origin}: expected `key = value`, got `{text}`")]
    Syntax { text: String, origin: String },
    #[error("cannot read config file {path}: {reason}")]
    Unreadable { path: String, reason: String },
}

/// A value that can appear on the right of `key = value`.
pub trait ConfigValue: Sized {
    /// On failure, a description of the expected type.
    fn parse_value(s: &str) -> Result<Self, &'static str>;
    fn render(&self) -> String;
}

macro_rules! plain_value {
    ($($ty:ty => $what:literal),*) => {$(
        impl ConfigValue for $ty {
            fn parse_value(s: &str) -> Result<Self, &'static str> {
                s.parse().map_err(|_| $what)
            }
            fn render(&self) -> String {
                self.to_string()
            }
        }
    )*};
}

plain_value!(u64 => "a nonnegative integer", usize => "a nonnegative integer", f64 => "a number");

impl ConfigValue for String {
    fn parse_value(s: &str) -> Result<Self, &'static str> {
        Ok(s.to_owned())
    }
    fn render(&self) -> String {
        self.clone()
    }
}

/// `auto` or a step count.
impl ConfigValue for Option<u64> {
    fn parse_value(s: &str) -> Result<Self, &'static str> {
        if s == "auto" {
            return Ok(None);
        }
        s.parse().map(Some).map_err(|_| "`auto` or a nonnegative integer")
    }
    fn render(&self) -> String {
        self.map_or_else(|| "auto".to_owned(), |v| v.to_string())
    }
}

impl ConfigValue for GoalSelection {
    fn parse_value(s: &str) -> Result<Self, &'static str> {
        GoalSelection::parse(s).ok_or("one of uniform, learning_progress")
    }
    fn render(&self) -> String {
        self.name().to_owned()
    }
}

impl ConfigValue for Learner {
    fn parse_value(s: &str) -> Result<Self, &'static str> {
        match s {
            "many_goals" => Ok(Learner::ManyGoals),
            "on_policy" => Ok(Learner::OnPolicy),
            _ => Err("one of many_goals, on_policy"),
        }
    }
    fn render(&self) -> String {
        match self {
            Learner::ManyGoals => "many_goals",
            Learner::OnPolicy => "on_policy",
        }
        .to_owned()
    }
}

impl ConfigValue for AuxTask {
    fn parse_value(s: &str) -> Result<Self, &'static str> {
        AuxTask::parse(s).ok_or("one of none, many_goals, reward_prediction")
    }
    fn render(&self) -> String {
        self.name().to_owned()
    }
}

impl ConfigValue for StartMode {
    fn parse_value(s: &str) -> Result<Self, &'static str> {
        match s {
            "fixed" => Ok(StartMode::Fixed),
            "random_feasible" => Ok(StartMode::RandomFeasible),
            _ => Err("one of fixed, random_feasible"),
        }
    }
    fn render(&self) -> String {
        match self {
            StartMode::Fixed => "fixed",
            StartMode::RandomFeasible => "random_feasible",
        }
        .to_owned()
    }
}

impl ConfigValue for Statistic {
    fn parse_value(s: &str) -> Result<Self, &'static str> {
        Statistic::parse(s).ok_or("one of mean, median")
    }
    fn render(&self) -> String {
        match self {
            Statistic::Mean => "mean",
            Statistic::Median => "median",
        }
        .to_owned()
    }
}

/// Which representation `pretrain` learns.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PretrainKind {
    ManyGoals,
    RewardPrediction,
}

impl PretrainKind {
    pub fn tag(self) -> &'static str {
        match self {
            PretrainKind::ManyGoals => "mg",
            PretrainKind::RewardPrediction => "rp",
        }
    }
}

impl ConfigValue for PretrainKind {
    fn parse_value(s: &str) -> Result<Self, &'static str> {
        match s {
            "many_goals" | "mg" => Ok(PretrainKind::ManyGoals),
            "reward_prediction" | "rp" => Ok(PretrainKind::RewardPrediction),
            _ => Err("one of many_goals, reward_prediction"),
        }
    }
    fn render(&self) -> String {
        match self {
            PretrainKind::ManyGoals => "many_goals",
            PretrainKind::RewardPrediction => "reward_prediction",
        }
        .to_owned()
    }
}

macro_rules! run_config {
    ($($(#[doc = $doc:literal])+ $name:ident: $ty:ty = $default:expr;)*) => {
        /// Every parameter any subcommand reads. Keys are shared, so e.g.
        /// `total_steps` is the budget of whichever command runs.
        #[derive(Clone, Debug, PartialEq)]
        pub struct RunConfig {
            $($(#[doc = $doc])+ pub $name: $ty,)*
        }

        impl Default for RunConfig {
            fn default() -> Self {
                Self { $($name: $default,)* }
            }
        }

        impl RunConfig {
            /// `(key, description)` for every key, in echo order.
            pub const KEYS: &'static [(&'static str, &'static str)] =
                &[$((stringify!($name), concat!($($doc),+)),)*];

            fn set_parsed(&mut self, key: &str, value: &str, origin: &str) -> Result<(), ConfigError> {
                match key {
                    $(stringify!($name) => {
                        self.$name = <$ty as ConfigValue>::parse_value(value).map_err(|expected| {
                            ConfigError::TypeMismatch {
                                key: key.to_owned(),
                                value: value.to_owned(),
                                expected,
                                origin: origin.to_owned(),
                            }
                        })?;
                        Ok(())
                    })*
                    _ => Err(ConfigError::UnknownKey { key: key.to_owned(), origin: origin.to_owned() }),
                }
            }

            /// Resolved `(key, value)` pairs.
            pub fn entries(&self) -> Vec<(&'static str, String)> {
                vec![$((stringify!($name), self.$name.render()),)*]
            }
        }
    };
}

run_config! {
    /// Run seed; every random stream derives from it.
    seed: u64 = 0;
    /// `compact`, `standard`, `tiny` or a path to a layout file.
    layout: String = "compact".into();
    /// Environment-step budget of the command.
    total_steps: u64 = 50_000;
    /// Random-policy steps before mastery learning starts.
    warmup_steps: u64 = 1_000;
    /// Step cap of a mastery episode.
    episode_cap: usize = 100;
    /// Epsilon annealing length, `auto` for a tenth of the budget.
    anneal_steps: Option<u64> = None;
    /// Exploration floor.
    final_epsilon: f64 = 0.1;
    /// Transitions per TD batch; also the reward-prediction batch.
    batch_transitions: usize = 32;
    /// Goals per TD batch.
    batch_goals: usize = 16;
    /// Behaviour-goal choice.
    selection: GoalSelection = GoalSelection::Uniform;
    /// `many_goals` or the single-goal `on_policy` baseline.
    learner: Learner = Learner::ManyGoals;
    /// Steps between target-network copies.
    target_sync: u64 = 1_000;
    /// Steps between evaluations and metric rows; 0 disables them.
    eval_period: u64 = 5_000;
    /// Step limit of an evaluation episode.
    eval_steps: usize = 200;
    /// Transition replay capacity.
    replay_capacity: usize = 10_000;
    /// RMSProp step size.
    step_size: f64 = 5e-4;
    /// Trunk width.
    hidden: usize = 512;
    /// Embedding width of the goal-conditioned branch.
    embed: usize = 1_024;
    /// Loss-history window for learning progress.
    window: usize = 5;
    /// Fraction of goals held out by `holdout`.
    holdout_fraction: f64 = 0.2;
    /// Representation learned by `pretrain`.
    pretrain: PretrainKind = PretrainKind::ManyGoals;
    /// Run directory of a `pretrain` run to fine-tune from; empty for a
    /// fresh network.
    init: String = String::new();
    /// Actor-critic rollout length.
    rollout: usize = 5;
    /// Parallel environments.
    workers: usize = 4;
    /// Value-loss weight.
    value_weight: f64 = 0.5;
    /// Entropy-bonus weight.
    entropy_weight: f64 = 0.01;
    /// Many-goals auxiliary weight.
    aux_weight: f64 = 0.02;
    /// Reward-prediction auxiliary weight.
    rp_weight: f64 = 1.0;
    /// Auxiliary head used by `aux`.
    aux: AuxTask = AuxTask::ManyGoals;
    /// Episodes kept by the K-best buffer.
    kbest_capacity: usize = 200;
    /// Fraction of the budget whose episodes define the final return.
    final_fraction: f64 = 0.2;
    /// Row of the main-task target cell.
    target_row: usize = 1;
    /// Column of the main-task target cell.
    target_col: usize = 3;
    /// Main-task start: `fixed` or `random_feasible`.
    task_start: StartMode = StartMode::Fixed;
    /// Checkpoint evaluated by `eval`.
    checkpoint: String = String::new();
    /// Comma-separated metric files read by `compare`.
    runs: String = String::new();
    /// Metric compared by `compare`; empty for all.
    metric: String = String::new();
    /// Cross-seed statistic used by `compare`.
    statistic: Statistic = Statistic::Mean;
}

impl RunConfig {
    /// Applies one `key = value` line or `key=value` override.
    pub fn apply(&mut self, text: &str, origin: &str) -> Result<(), ConfigError> {
        let (key, value) = text.split_once('=').ok_or_else(|| ConfigError::Syntax {
            text: text.to_owned(),
            origin: origin.to_owned(),
        })?;
        let key = key.trim();
        if key.is_empty() {
            return Err(ConfigError::Syntax {
                text: text.to_owned(),
                origin: origin.to_owned(),
            });
        }
        self.set_parsed(key, value.trim(), origin)
    }

    /// Applies a whole file; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str, name: &str) -> Result<(), ConfigError> {
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or_default().trim();
            if !line.is_empty() {
                self.apply(line, &format!("{name} line {}", i + 1))?;
            }
        }
        Ok(())
    }

    /// The resolved config as it is echoed into run directories.
    pub fn to_text(&self) -> String {
        self.entries().iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

impl fmt::Display for RunConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text())
    }
}

/// Defaults, then the file, then each `key=value` override in order.
pub fn parse_config(file: Option<&Path>, overrides: &[String]) -> Result<RunConfig, ConfigError> {
    let mut cfg = RunConfig::default();
    if let Some(path) = file {
        let shown = path.display().to_string();
        if !path.exists() {
            return Err(ConfigError::MissingFile(shown));
        }
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Unreadable {
            path: shown.clone(),
            reason: e.to_string(),
        })?;
        cfg.apply_text(&text, &shown)?;
    }
    for o in overrides {
        cfg.apply(o, "command line")?;
    }
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.cfg");
        std::fs::write(&path, "").unwrap();
        assert_eq!(parse_config(Some(&path), &[]).unwrap(), RunConfig::default());
    }

    #[test]
    fn override_beats_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        std::fs::write(&path, "# budget\ntotal_steps = 7\nselection = learning_progress\n").unwrap();
        let cfg = parse_config(Some(&path), &["total_steps=9".into()]).unwrap();
        assert_eq!(cfg.total_steps, 9);
        assert_eq!(cfg.selection, GoalSelection::LearningProgress);
    }

    #[test]
    fn errors_are_distinct() {
        let mut cfg = RunConfig::default();
        let unknown = cfg.apply("totl_steps = 3", "x").unwrap_err();
        assert!(matches!(&unknown, ConfigError::UnknownKey { key, .. } if key == "totl_steps"));
        assert!(unknown.to_string().contains("totl_steps"));
        let mismatch = cfg.apply("hidden = wide", "x").unwrap_err();
        assert!(matches!(mismatch, ConfigError::TypeMismatch { .. }));
        let missing = parse_config(Some(Path::new("/nonexistent/run.cfg")), &[]).unwrap_err();
        assert!(matches!(missing, ConfigError::MissingFile(_)));
        assert!(matches!(cfg.apply("hidden", "x"), Err(ConfigError::Syntax { .. })));
    }

    #[test]
    fn echo_round_trips() {
        let mut cfg = RunConfig::default();
        cfg.apply("anneal_steps = 300", "x").unwrap();
        cfg.apply("aux = reward_prediction", "x").unwrap();
        cfg.apply("task_start = random_feasible", "x").unwrap();
        let mut back = RunConfig::default();
        back.apply_text(&cfg.to_text(), "echo").unwrap();
        assert_eq!(back, cfg);
        assert_eq!(RunConfig::KEYS.len(), cfg.entries().len());
    }
}
