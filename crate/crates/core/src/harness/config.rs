use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::agent::{AgentConfig, OptimConfig};
use crate::env::WorldConfig;
use crate::error::{Error, Result};
use crate::fusion::{FusionConfig, FusionMode};
use crate::graph::GraphConfig;

/// Model variant: the full model, its three ablations and two baselines.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    NoTransformer,
    NoTgnn,
    NoDqn,
    ConcatModal,
    VanillaDqn,
}

/// Source of the user-side half of the state.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum History {
    /// Temporal graph encoder output.
    Graph,
    /// Mean raw features of the user's most recent watched videos.
    MeanRecent,
    /// Nothing; the state is the candidate's content vector alone.
    Absent,
}

/// How the scoring head is trained.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Head {
    QLearning,
    /// Logistic regression on realized engagement.
    Supervised,
}

impl Variant {
    pub const ABLATIONS: [Variant; 4] = [Variant::Full, Variant::NoTransformer, Variant::NoTgnn, Variant::NoDqn];
    pub const BASELINES: [Variant; 3] = [Variant::Full, Variant::ConcatModal, Variant::VanillaDqn];
    pub const ALL: [Variant; 6] = [
        Variant::Full,
        Variant::NoTransformer,
        Variant::NoTgnn,
        Variant::NoDqn,
        Variant::ConcatModal,
        Variant::VanillaDqn,
    ];

    /// Row label used in result tables.
    pub fn label(self) -> &'static str {
        match self {
            Variant::Full => "MT-DQN",
            Variant::NoTransformer => "-Transformer",
            Variant::NoTgnn => "-TGNN",
            Variant::NoDqn => "-DQN",
            Variant::ConcatModal => "Concat-Modal",
            Variant::VanillaDqn => "Vanilla-DQN",
        }
    }

    pub fn fusion_mode(self) -> FusionMode {
        match self {
            Variant::Full | Variant::NoTgnn | Variant::NoDqn => FusionMode::Gated,
            Variant::NoTransformer | Variant::ConcatModal => FusionMode::Concat,
            Variant::VanillaDqn => FusionMode::Raw,
        }
    }

    pub fn history(self) -> History {
        match self {
            Variant::Full | Variant::NoTransformer | Variant::NoDqn => History::Graph,
            Variant::NoTgnn | Variant::ConcatModal => History::MeanRecent,
            Variant::VanillaDqn => History::Absent,
        }
    }

    pub fn head(self) -> Head {
        match self {
            Variant::NoDqn | Variant::ConcatModal => Head::Supervised,
            _ => Head::QLearning,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    #[default]
    Desk,
    Paper,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitRatios {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            train: 0.7,
            validation: 0.1,
            test: 0.2,
        }
    }
}

/// Disjoint user id sets, each sorted ascending.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UserSplit {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

/// Shuffles user ids with `seed` and cuts them by `ratios`.
pub fn split_users(n_users: usize, ratios: &SplitRatios, seed: u64) -> UserSplit {
    let mut ids: Vec<usize> = (0..n_users).collect();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = (ratios.train * n_users as f64).round() as usize;
    let n_val = ((ratios.validation * n_users as f64).round() as usize).min(n_users - n_train.min(n_users));
    let n_train = n_train.min(n_users);
    let sorted = |s: &[usize]| {
        let mut v = s.to_vec();
        v.sort_unstable();
        v
    };
    UserSplit {
        train: sorted(&ids[..n_train]),
        validation: sorted(&ids[n_train..n_train + n_val]),
        test: sorted(&ids[n_train + n_val..]),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub preset: Preset,
    pub seed: u64,
    pub variant: Variant,
    /// Training rounds; each training user runs one session per round.
    pub epochs: usize,
    /// Greedy evaluation rounds over validation and test users.
    pub eval_rounds: usize,
    pub split: SplitRatios,
    pub world: WorldConfig,
    pub fusion: FusionConfig,
    pub graph: GraphConfig,
    pub agent: AgentConfig,
    pub optim: OptimConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            preset: Preset::Desk,
            seed: 0,
            variant: Variant::Full,
            epochs: 5,
            eval_rounds: 20,
            split: SplitRatios::default(),
            world: WorldConfig::default(),
            fusion: FusionConfig::default(),
            graph: GraphConfig::default(),
            agent: AgentConfig {
                target_sync: 100,
                train_every: 1,
                ..AgentConfig::default()
            },
            optim: OptimConfig {
                lr: 3e-3,
                ..OptimConfig::default()
            },
        }
    }
}

impl ExperimentConfig {
    /// Desk-scale defaults.
    pub fn desk() -> Self {
        ExperimentConfig::default()
    }

    /// Paper-scale widths and training constants.
    pub fn paper() -> Self {
        let mut c = ExperimentConfig::default();
        c.preset = Preset::Paper;
        c.epochs = 50;
        c.fusion.d_model = 768;
        c.fusion.heads = 12;
        c.fusion.layers = 6;
        c.graph.base_dim = 64;
        c.graph.widths = vec![64, 128, 256];
        c.agent.hidden = vec![512, 256, 128];
        c.agent.buffer_capacity = 100_000;
        c.agent.target_sync = 1000;
        c.agent.gamma = 0.95;
        c.agent.batch_size = 64;
        c.agent.dropout = 0.2;
        c.optim.lr = 1e-3;
        c
    }

    pub fn validate(&self) -> Result<()> {
        let v = |r: Result<()>| r.map_err(|e| Error::Validation(e.to_string()));
        v(self.world.validate())?;
        v(self.fusion.validate())?;
        v(self.graph.validate())?;
        v(self.agent.validate())?;
        v(self.optim.validate())?;
        let s = &self.split;
        if [s.train, s.validation, s.test].iter().any(|x| !(0.0..=1.0).contains(x))
            || (s.train + s.validation + s.test - 1.0).abs() > 1e-9
        {
            return Err(Error::Validation(format!(
                "split ratios {}:{}:{} must be in [0, 1] and sum to 1",
                s.train, s.validation, s.test
            )));
        }
        for (name, f, w) in [
            ("d_visual", self.fusion.d_visual, self.world.d_visual),
            ("d_text", self.fusion.d_text, self.world.d_text),
            ("d_audio", self.fusion.d_audio, self.world.d_audio),
        ] {
            if f != w {
                return Err(Error::Validation(format!("fusion.{name} = {f} differs from world.{name} = {w}")));
            }
        }
        if self.graph.window_len < self.world.session_length as f64 {
            return Err(Error::Validation(format!(
                "graph.window_len = {} is shorter than world.session_length = {}",
                self.graph.window_len, self.world.session_length
            )));
        }
        if self.epochs == 0 || self.eval_rounds == 0 {
            return Err(Error::Validation("epochs and eval_rounds must be positive".into()));
        }
        let split = self.user_split();
        if split.train.is_empty() || split.test.is_empty() {
            return Err(Error::Validation("training and test splits must be nonempty".into()));
        }
        Ok(())
    }

    /// World configuration with the experiment seed applied.
    pub fn world_config(&self) -> WorldConfig {
        WorldConfig {
            seed: self.seed,
            ..self.world.clone()
        }
    }

    pub fn user_split(&self) -> UserSplit {
        split_users(self.world.n_users, &self.split, stream_seed(self.seed, "split"))
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        ExperimentConfig { seed, ..self.clone() }
    }

    pub fn with_variant(&self, variant: Variant) -> Self {
        ExperimentConfig {
            variant,
            ..self.clone()
        }
    }

    /// Canonical JSON text.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 of the canonical JSON, hex encoded.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_json().as_bytes()))
    }

    /// Parses configuration text. Empty text gives the desk defaults; with
    /// `"preset": "paper"` the given keys override the paper preset instead.
    pub fn from_json(text: &str) -> Result<Self> {
        if text.trim().is_empty() {
            return Ok(ExperimentConfig::default());
        }
        let parsed: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| Error::Validation(format!("config: {e}")))?;
        let config = if parsed.preset == Preset::Paper {
            let user: serde_json::Value = serde_json::from_str(text).expect("parsed once already");
            let mut base = serde_json::to_value(ExperimentConfig::paper()).expect("config serializes");
            merge(&mut base, user);
            serde_json::from_value(base).map_err(|e| Error::Validation(format!("config: {e}")))?
        } else {
            parsed
        };
        config.validate()?;
        Ok(config)
    }
}

fn merge(base: &mut serde_json::Value, over: serde_json::Value) {
    match (base, over) {
        (serde_json::Value::Object(b), serde_json::Value::Object(o)) => {
            for (k, v) in o {
                merge(b.entry(k).or_insert(serde_json::Value::Null), v);
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Reads and validates a configuration file.
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    ExperimentConfig::from_json(&text).map_err(|e| match e {
        Error::Validation(m) => Error::Validation(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Independent seed for a named random stream of a run.
pub fn stream_seed(seed: u64, stream: &str) -> u64 {
    let digest = Sha256::new().chain_update(seed.to_le_bytes()).chain_update(stream.as_bytes()).finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

pub fn stream_rng(seed: u64, stream: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stream_seed(seed, stream))
}
