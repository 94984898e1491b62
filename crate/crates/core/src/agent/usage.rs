use std::collections::BTreeMap;
use std::fs;
use std::ops::Add;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::trace::{ExecutionTrace, TurnRecord};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelPrice {
    pub input_usd_per_token: f64,
    pub output_usd_per_token: f64,
}

/// Per-model token prices, keyed by model id.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PriceTable(pub BTreeMap<String, ModelPrice>);

impl PriceTable {
    pub fn load(path: &Path) -> Result<Self, std::io::Error> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(std::io::Error::other)
    }

    pub fn get(&self, model_id: &str) -> Option<&ModelPrice> {
        self.0.get(model_id)
    }

    pub fn insert(&mut self, model_id: impl Into<String>, price: ModelPrice) {
        self.0.insert(model_id.into(), price);
    }
}

/// Resource totals for a run or a slice of one. `total_cost` is `None` when
/// no price is known for the model; it is never reported as zero.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ResourceUsage {
    pub total_tokens: u64,
    pub total_time: f64,
    pub total_cost: Option<f64>,
    pub total_turns: u64,
    pub total_commands: u64,
}

impl Add for ResourceUsage {
    type Output = ResourceUsage;

    fn add(self, rhs: Self) -> Self {
        Self {
            total_tokens: self.total_tokens + rhs.total_tokens,
            total_time: self.total_time + rhs.total_time,
            total_cost: self.total_cost.zip(rhs.total_cost).map(|(a, b)| a + b),
            total_turns: self.total_turns + rhs.total_turns,
            total_commands: self.total_commands + rhs.total_commands,
        }
    }
}

/// Sums usage over a run of turns. Cost is priced per turn, input and output
/// tokens separately.
pub fn usage_of_turns(
    model_id: &str,
    turns: &[TurnRecord],
    pricing: Option<&PriceTable>,
) -> ResourceUsage {
    let price = pricing.and_then(|p| p.get(model_id));
    ResourceUsage {
        total_tokens: turns.iter().map(TurnRecord::tokens).sum(),
        total_time: turns.iter().map(|t| t.wall_time).sum(),
        total_cost: price.map(|p| {
            turns
                .iter()
                .map(|t| {
                    t.tokens_in as f64 * p.input_usd_per_token
                        + t.tokens_out as f64 * p.output_usd_per_token
                })
                .sum()
        }),
        total_turns: turns.len() as u64,
        total_commands: turns.iter().map(|t| t.commands.len() as u64).sum(),
    }
}

pub fn aggregate_usage(trace: &ExecutionTrace, pricing: Option<&PriceTable>) -> ResourceUsage {
    usage_of_turns(&trace.model_id, &trace.turns, pricing)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn turn(i: usize, tin: u64, tout: u64) -> TurnRecord {
        TurnRecord {
            tokens_in: tin,
            tokens_out: tout,
            wall_time: 1.5,
            ..TurnRecord::empty(i)
        }
    }

    fn pricing() -> PriceTable {
        let mut table = PriceTable::default();
        table.insert(
            "m",
            ModelPrice {
                input_usd_per_token: 2e-6,
                output_usd_per_token: 6e-6,
            },
        );
        table
    }

    #[test]
    fn two_turn_cost_by_hand() {
        let mut trace = ExecutionTrace::new("m", "c");
        trace.turns = vec![turn(0, 100, 50), turn(1, 100, 50)];
        let usage = aggregate_usage(&trace, Some(&pricing()));
        assert_eq!(usage.total_tokens, 300);
        assert_eq!(usage.total_turns, 2);
        let expected = 2.0 * (100.0 * 2e-6 + 50.0 * 6e-6);
        assert!((usage.total_cost.unwrap() - expected).abs() < 1e-15);
        assert!((expected - 0.001).abs() < 1e-15);
    }

    #[test]
    fn empty_trace_and_unknown_model() {
        let empty = ExecutionTrace::new("m", "c");
        let usage = aggregate_usage(&empty, Some(&pricing()));
        assert_eq!(usage.total_tokens, 0);
        assert_eq!(usage.total_cost, Some(0.0));
        assert_eq!(aggregate_usage(&empty, None).total_cost, None);

        let mut trace = ExecutionTrace::new("unpriced", "c");
        trace.turns = vec![turn(0, 10, 10)];
        let usage = aggregate_usage(&trace, Some(&pricing()));
        assert_eq!(usage.total_cost, None);
        assert_eq!(usage.total_tokens, 20);
    }

    #[test]
    fn pricing_file_shape() {
        let table: PriceTable = serde_json::from_str(
            r#"{"m": {"input_usd_per_token": 2e-6, "output_usd_per_token": 6e-6}}"#,
        )
        .unwrap();
        assert_eq!(table, pricing());
    }
}
