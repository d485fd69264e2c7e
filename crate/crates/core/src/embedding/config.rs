use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum CosineVariant {
    /// `1 - cos` for same-organ pairs, `max(0, cos - margin)` otherwise.
    #[default]
    Standard,
    /// `<a, p>` for different-organ pairs, 0 otherwise.
    InnerProduct,
}

/// Which squared norm the last intermediate term penalizes for release anchors.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum ReleaseTarget {
    #[default]
    Anchor,
    Positive,
}

macro_rules! string_enum {
    ($ty:ident { $($variant:ident => $name:literal),+ $(,)? }) => {
        impl $ty {
            pub fn as_str(self) -> &'static str {
                match self {
                    $($ty::$variant => $name),+
                }
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $ty {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($name => Ok($ty::$variant),)+
                    _ => Err(Error::Config(format!(
                        concat!("unknown ", stringify!($ty), " `{}`, expected one of: {}"),
                        s,
                        [$($name),+].join(", ")
                    ))),
                }
            }
        }
    };
}

string_enum!(CosineVariant { Standard => "standard", InnerProduct => "inner_product" });
string_enum!(ReleaseTarget { Anchor => "anchor", Positive => "positive" });

/// Every hyperparameter of the composite objective and its optimizer.
#[derive(Clone, Debug, PartialEq)]
pub struct LossConfig {
    pub beta: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub lambda4: f64,
    pub alpha: f64,
    pub triplet_margin: f64,
    pub cosine_margin: f64,
    pub cosine_variant: CosineVariant,
    pub lambda4_release_target: ReleaseTarget,
    /// Positives and negatives come from the last `near_terminal_t` hours of a stay.
    pub near_terminal_t: usize,
    /// Sampling weight of non-survivor anchors relative to survivors.
    pub nonsurvivor_weight: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    /// Batches per epoch; `None` means one pass over the training patients.
    pub batches_per_epoch: Option<usize>,
    /// Size of the fixed validation triplet set.
    pub validation_size: usize,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            beta: 0.75,
            lambda1: 0.7,
            lambda2: 10.0,
            lambda3: 0.2,
            lambda4: 0.05,
            alpha: 3.0,
            triplet_margin: 0.2,
            cosine_margin: 0.05,
            cosine_variant: CosineVariant::Standard,
            lambda4_release_target: ReleaseTarget::Anchor,
            near_terminal_t: 24,
            nonsurvivor_weight: 5.0,
            batch_size: 128,
            learning_rate: 3e-5,
            epochs: 10,
            batches_per_epoch: None,
            validation_size: 512,
        }
    }
}

impl LossConfig {
    /// Defaults for the plain MLP encoder (larger batches).
    pub fn mlp_defaults() -> Self {
        Self {
            batch_size: 256,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(0.0..=1.0).contains(&self.beta) {
            return bad(format!("beta must lie in [0, 1], got {}", self.beta));
        }
        for (name, v) in [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("lambda3", self.lambda3),
            ("lambda4", self.lambda4),
            ("alpha", self.alpha),
            ("triplet_margin", self.triplet_margin),
            ("cosine_margin", self.cosine_margin),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be finite and >= 0, got {v}"));
            }
        }
        if self.near_terminal_t == 0 {
            return bad("near_terminal_t must be at least 1".into());
        }
        if !(self.nonsurvivor_weight > 0.0 && self.nonsurvivor_weight.is_finite()) {
            return bad(format!("nonsurvivor_weight must be positive, got {}", self.nonsurvivor_weight));
        }
        if self.batch_size == 0 || self.epochs == 0 || self.validation_size == 0 {
            return bad("batch_size, epochs and validation_size must be positive".into());
        }
        if self.batches_per_epoch == Some(0) {
            return bad("batches_per_epoch must be positive".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        Ok(())
    }

    /// `key=value` lines, one per field, in a fixed order.
    pub fn to_kv(&self) -> Vec<(String, String)> {
        let bpe = self.batches_per_epoch.map_or("auto".to_string(), |b| b.to_string());
        [
            ("beta", self.beta.to_string()),
            ("lambda1", self.lambda1.to_string()),
            ("lambda2", self.lambda2.to_string()),
            ("lambda3", self.lambda3.to_string()),
            ("lambda4", self.lambda4.to_string()),
            ("alpha", self.alpha.to_string()),
            ("triplet_margin", self.triplet_margin.to_string()),
            ("cosine_margin", self.cosine_margin.to_string()),
            ("cosine_variant", self.cosine_variant.to_string()),
            ("lambda4_release_target", self.lambda4_release_target.to_string()),
            ("near_terminal_t", self.near_terminal_t.to_string()),
            ("nonsurvivor_weight", self.nonsurvivor_weight.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("learning_rate", self.learning_rate.to_string()),
            ("epochs", self.epochs.to_string()),
            ("batches_per_epoch", bpe),
            ("validation_size", self.validation_size.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    /// Applies one `key=value` setting. Unknown keys are rejected.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{value}`")))
        }
        match key {
            "beta" => self.beta = num(key, value)?,
            "lambda1" => self.lambda1 = num(key, value)?,
            "lambda2" => self.lambda2 = num(key, value)?,
            "lambda3" => self.lambda3 = num(key, value)?,
            "lambda4" => self.lambda4 = num(key, value)?,
            "alpha" => self.alpha = num(key, value)?,
            "triplet_margin" => self.triplet_margin = num(key, value)?,
            "cosine_margin" => self.cosine_margin = num(key, value)?,
            "cosine_variant" => self.cosine_variant = value.trim().parse()?,
            "lambda4_release_target" => self.lambda4_release_target = value.trim().parse()?,
            "near_terminal_t" | "t" => self.near_terminal_t = num(key, value)?,
            "nonsurvivor_weight" => self.nonsurvivor_weight = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "learning_rate" | "lr" => self.learning_rate = num(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "batches_per_epoch" => {
                self.batches_per_epoch = match value.trim() {
                    "auto" => None,
                    v => Some(num(key, v)?),
                }
            }
            "validation_size" => self.validation_size = num(key, value)?,
            _ => return Err(Error::Config(format!("unknown loss setting `{key}`"))),
        }
        Ok(())
    }
}
