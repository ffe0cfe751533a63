use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::ModelKind;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// The plain diagnosis model.
    Original,
    /// Uniformly drawn unanswered exercises, unmixed.
    Rss,
    /// Collaborative candidates mixed by attention.
    Cmes,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::Original, Strategy::Rss, Strategy::Cmes];

    pub fn uses_samples(self) -> bool {
        self != Strategy::Original
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Original => "original",
            Strategy::Rss => "rss",
            Strategy::Cmes => "cmes",
        })
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "original" => Ok(Strategy::Original),
            "rss" => Ok(Strategy::Rss),
            "cmes" => Ok(Strategy::Cmes),
            other => Err(Error::Config(format!("unknown strategy `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub model: ModelKind,
    pub strategy: Strategy,
    /// Exercises attached to each answered exercise.
    pub n: usize,
    /// Number of student clusters.
    pub clusters: usize,
    pub alpha_w: f64,
    pub beta_w: f64,
    /// Weight of the ranking loss.
    pub balance: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Epochs without a validation AUC improvement before stopping.
    pub patience: usize,
    /// NCD hidden layer widths.
    pub hidden: (usize, usize),
    /// Embedding size; the concept count when unset.
    pub dim: Option<usize>,
    pub train_frac: f64,
    pub kmeans_iters: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelKind::Ncd,
            strategy: Strategy::Cmes,
            n: 20,
            clusters: 50,
            alpha_w: 0.5,
            beta_w: 1.5,
            balance: 1.0,
            lr: 2e-3,
            batch_size: 256,
            epochs: 100,
            seed: 7,
            patience: 5,
            hidden: (64, 32),
            dim: None,
            train_frac: 1.0,
            kmeans_iters: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.batch_size == 0 {
            return bad("batch size must be >= 1".into());
        }
        if self.epochs == 0 {
            return bad("epochs must be >= 1".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("learning rate must be positive, got {}", self.lr));
        }
        if !(self.balance >= 0.0 && self.balance.is_finite()) {
            return bad(format!("balance must be >= 0, got {}", self.balance));
        }
        if !(self.train_frac > 0.0 && self.train_frac <= 1.0) {
            return bad(format!("train fraction must lie in (0, 1], got {}", self.train_frac));
        }
        if self.dim == Some(0) {
            return bad("embedding size must be >= 1".into());
        }
        if self.strategy == Strategy::Cmes {
            if self.clusters == 0 {
                return bad("cluster count must be >= 1".into());
            }
            if !(self.alpha_w > 0.0 && self.alpha_w < self.beta_w) {
                return bad(format!(
                    "concept weights need 0 < alpha_w < beta_w, got {} and {}",
                    self.alpha_w, self.beta_w
                ));
            }
        }
        Ok(())
    }

    /// The configuration with every field the strategy does not read reset to
    /// its default, so that irrelevant flags do not change the hash.
    pub fn normalized(&self) -> TrainConfig {
        let d = TrainConfig::default();
        let mut c = self.clone();
        if c.strategy != Strategy::Cmes {
            c.clusters = d.clusters;
            c.alpha_w = d.alpha_w;
            c.beta_w = d.beta_w;
        }
        if c.strategy == Strategy::Original {
            c.n = d.n;
            c.balance = d.balance;
        }
        if c.model != ModelKind::Ncd {
            c.hidden = d.hidden;
        }
        c
    }

    /// Short hex digest of the normalized configuration and a data fingerprint.
    pub fn hash(&self, data_fingerprint: &str) -> String {
        let json = serde_json::to_string(&self.normalized()).expect("config serializes");
        let mut h = Sha256::new();
        h.update(json.as_bytes());
        h.update(b"\n");
        h.update(data_fingerprint.as_bytes());
        hex::encode(&h.finalize()[..8])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        TrainConfig::default().validate().unwrap();
    }

    #[test]
    fn rejects_bad_values() {
        let base = TrainConfig::default();
        for c in [
            TrainConfig { batch_size: 0, ..base.clone() },
            TrainConfig { balance: -1.0, ..base.clone() },
            TrainConfig { alpha_w: 1.5, ..base.clone() },
            TrainConfig { train_frac: 0.0, ..base.clone() },
            TrainConfig { lr: f64::NAN, ..base.clone() },
        ] {
            assert!(matches!(c.validate(), Err(Error::Config(_))), "{c:?}");
        }
    }

    #[test]
    fn hash_ignores_unused_fields() {
        let a = TrainConfig { strategy: Strategy::Original, ..Default::default() };
        let b = TrainConfig { n: 3, clusters: 9, ..a.clone() };
        assert_eq!(a.hash("x"), b.hash("x"));
        assert_ne!(a.hash("x"), a.hash("y"));
        let c = TrainConfig { n: 3, ..Default::default() };
        assert_ne!(c.hash("x"), TrainConfig::default().hash("x"));
        assert_eq!(a.hash("x").len(), 16);
    }

    #[test]
    fn json_round_trip() {
        let c = TrainConfig { dim: Some(8), seed: 11, ..Default::default() };
        let back: TrainConfig = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
        assert!(serde_json::from_str::<TrainConfig>(r#"{"bogus": 1}"#).is_err());
    }

    #[test]
    fn parse_strategy() {
        assert_eq!("CMES".parse::<Strategy>().unwrap(), Strategy::Cmes);
        assert!("mixup".parse::<Strategy>().is_err());
    }
}
