//! Money and the per-model price book. Amounts are integer micro-USD so
//! ledger sums are exact.

use std::collections::BTreeMap;
use std::fmt;
use std::iter::Sum;
use std::ops::Add;

use serde::{Deserialize, Serialize};

use super::GatewayError;

/// Integer micro-USD (1e-6 dollars).
#[derive(
    Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub struct MicroUsd(pub i64);

impl MicroUsd {
    pub const ZERO: MicroUsd = MicroUsd(0);

    pub fn from_usd(usd: f64) -> MicroUsd {
        MicroUsd((usd * 1_000_000.0).round() as i64)
    }

    pub fn usd(&self) -> f64 {
        self.0 as f64 / 1_000_000.0
    }
}

impl Add for MicroUsd {
    type Output = MicroUsd;
    fn add(self, rhs: MicroUsd) -> MicroUsd {
        MicroUsd(self.0 + rhs.0)
    }
}

impl Sum for MicroUsd {
    fn sum<I: Iterator<Item = MicroUsd>>(iter: I) -> MicroUsd {
        MicroUsd(iter.map(|m| m.0).sum())
    }
}

impl fmt::Display for MicroUsd {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "${:.6}", self.usd())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub input_tokens: u64,
    pub output_tokens: u64,
}

/// Flat per-image cost, or linear token rates (micro-USD per 1k tokens).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Price {
    Flat(MicroUsd),
    PerToken {
        input_per_1k: MicroUsd,
        output_per_1k: MicroUsd,
    },
}

impl Price {
    pub fn cost(&self, usage: TokenUsage) -> MicroUsd {
        match self {
            Price::Flat(rate) => *rate,
            Price::PerToken {
                input_per_1k,
                output_per_1k,
            } => {
                let per = |tokens: u64, rate: MicroUsd| -> i64 {
                    let raw = tokens as i128 * rate.0 as i128;
                    ((raw + 500) / 1000) as i64
                };
                MicroUsd(per(usage.input_tokens, *input_per_1k) + per(usage.output_tokens, *output_per_1k))
            }
        }
    }
}

const DEFAULT_PRICEBOOK_TSV: &str = include_str!("../../data/pricebook.tsv");

/// Per-model prices. Defaults carry the recorded per-image figures for
/// the shipped judge set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PriceBook {
    prices: BTreeMap<String, Price>,
}

impl PriceBook {
    pub fn builtin() -> PriceBook {
        PriceBook::from_config(DEFAULT_PRICEBOOK_TSV).expect("embedded pricebook is valid")
    }

    /// Parse `model<TAB>flat<TAB>micro` or
    /// `model<TAB>tokens<TAB>in_per_1k<TAB>out_per_1k` lines.
    pub fn from_config(config: &str) -> Result<PriceBook, GatewayError> {
        let mut prices = BTreeMap::new();
        for (idx, line) in config.lines().enumerate() {
            let line_no = idx + 1;
            let line = line.trim_end();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            let bad = |reason: &str| GatewayError::BadPriceBook {
                line: line_no,
                reason: reason.to_string(),
            };
            let parse_micro = |s: &str| -> Result<MicroUsd, GatewayError> {
                let v: i64 = s.parse().map_err(|_| bad("bad micro-USD amount"))?;
                if v < 0 {
                    return Err(bad("negative price"));
                }
                Ok(MicroUsd(v))
            };
            let price = match (cols.len(), cols.get(1).copied()) {
                (3, Some("flat")) => Price::Flat(parse_micro(cols[2])?),
                (4, Some("tokens")) => Price::PerToken {
                    input_per_1k: parse_micro(cols[2])?,
                    output_per_1k: parse_micro(cols[3])?,
                },
                _ => return Err(bad("expected `flat` or `tokens` entry")),
            };
            if prices.insert(cols[0].to_string(), price).is_some() {
                return Err(bad("duplicate model"));
            }
        }
        Ok(PriceBook { prices })
    }

    pub fn get(&self, model_id: &str) -> Option<&Price> {
        self.prices.get(model_id)
    }

    pub fn insert(&mut self, model_id: impl Into<String>, price: Price) {
        self.prices.insert(model_id.into(), price);
    }

    /// Flat-rate models ignore usage; token-rate models compute linearly.
    pub fn estimate(&self, model_id: &str, usage: TokenUsage) -> Result<MicroUsd, GatewayError> {
        self.prices
            .get(model_id)
            .map(|p| p.cost(usage))
            .ok_or_else(|| GatewayError::UnpricedModel(model_id.to_string()))
    }
}
