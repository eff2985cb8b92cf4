use std::fs;
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Validation metric driving early stopping.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopMetric {
    /// Area under the precision-recall curve.
    PrAuc,
    RocAuc,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Window length T in trading days.
    pub lookback: usize,
    /// Fusion slices M.
    pub slices: usize,
    /// Sequential embedding width F.
    pub hidden: usize,
    /// Relational embedding width F′.
    pub attention_hidden: usize,
    pub learning_rate: f64,
    /// Implicit-edge threshold; `-inf` keeps every pair, `inf` none.
    #[serde(serialize_with = "ser_extended", deserialize_with = "de_extended")]
    pub eta: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub use_executives: bool,
    pub use_implicit: bool,
    pub use_explicit: bool,
    pub use_dual: bool,
    pub dual_layers: usize,
    /// Multiply implicit messages by `sigmoid(alpha)`.
    pub implicit_gate: bool,
    pub stop_metric: StopMetric,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lookback: 20,
            slices: 10,
            hidden: 78,
            attention_hidden: 39,
            learning_rate: 0.0008,
            eta: 0.0054,
            max_epochs: 400,
            patience: 20,
            seed: 0,
            use_executives: true,
            use_implicit: true,
            use_explicit: true,
            use_dual: true,
            dual_layers: 1,
            implicit_gate: true,
            stop_metric: StopMetric::PrAuc,
        }
    }
}

/// Keys accepted in a config file.
pub const CONFIG_KEYS: [&str; 16] = [
    "lookback",
    "slices",
    "hidden",
    "attention_hidden",
    "learning_rate",
    "eta",
    "max_epochs",
    "patience",
    "seed",
    "use_executives",
    "use_implicit",
    "use_explicit",
    "use_dual",
    "dual_layers",
    "implicit_gate",
    "stop_metric",
];

/// Component names accepted by [`TrainConfig::ablate`].
pub const ABLATIONS: [&str; 4] = ["executives", "implicit", "explicit", "dual"];

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let sizes = [
            ("lookback", self.lookback),
            ("slices", self.slices),
            ("hidden", self.hidden),
            ("attention_hidden", self.attention_hidden),
            ("dual_layers", self.dual_layers),
        ];
        for (k, v) in sizes {
            if v == 0 {
                return Err(Error::Config(format!("{k} must be positive")));
            }
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if self.eta.is_nan() {
            return Err(Error::Config("eta is NaN".into()));
        }
        Ok(())
    }

    /// Parses TOML-style `key = value` text; missing keys take defaults.
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: TrainConfig = toml::from_str(text)
            .map_err(|e| Error::Config(format!("{}; valid keys: {}", e.message(), CONFIG_KEYS.join(", "))))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Turns off the named components (see [`ABLATIONS`]).
    pub fn ablate(&mut self, component: &str) -> Result<()> {
        match component.trim() {
            "executives" => self.use_executives = false,
            "implicit" => self.use_implicit = false,
            "explicit" => self.use_explicit = false,
            "dual" => self.use_dual = false,
            other => {
                return Err(Error::Config(format!(
                    "unknown ablation `{other}`; expected one of {}",
                    ABLATIONS.join(", ")
                )))
            }
        }
        Ok(())
    }
}

/// Reads a config file; an empty file gives the defaults.
pub fn load_config(path: impl AsRef<Path>) -> Result<TrainConfig> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    TrainConfig::from_toml(&text).map_err(|e| match e {
        Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
        other => other,
    })
}

// JSON has no infinities, so they travel as strings.
fn ser_extended<S: Serializer>(x: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if x.is_finite() {
        s.serialize_f64(*x)
    } else if *x > 0.0 {
        s.serialize_str("inf")
    } else {
        s.serialize_str("-inf")
    }
}

fn de_extended<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Int(i64),
        Text(String),
    }
    match Repr::deserialize(d)? {
        Repr::Num(x) => Ok(x),
        Repr::Int(i) => Ok(i as f64),
        Repr::Text(t) => match t.as_str() {
            "inf" | "+inf" => Ok(f64::INFINITY),
            "-inf" => Ok(f64::NEG_INFINITY),
            other => other.parse().map_err(serde::de::Error::custom),
        },
    }
}
