use std::ops::Add;

use serde::{Deserialize, Serialize};

/// Currency per 1,000 tokens.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TokenRates {
    pub input_per_1k: f64,
    pub output_per_1k: f64,
}

impl TokenRates {
    pub fn new(input_per_1k: f64, output_per_1k: f64) -> Self {
        Self {
            input_per_1k,
            output_per_1k,
        }
    }

    pub fn cost(&self, input_tokens: u64, output_tokens: u64) -> f64 {
        input_tokens as f64 * self.input_per_1k / 1000.0 + output_tokens as f64 * self.output_per_1k / 1000.0
    }

    pub fn usage(&self, input_tokens: u64, output_tokens: u64) -> TokenUsage {
        TokenUsage {
            input_tokens,
            output_tokens,
            estimated_cost: self.cost(input_tokens, output_tokens),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub estimated_cost: f64,
}

impl TokenUsage {
    pub fn total_tokens(&self) -> u64 {
        self.input_tokens + self.output_tokens
    }
}

impl Add for TokenUsage {
    type Output = TokenUsage;

    fn add(self, rhs: Self) -> Self {
        TokenUsage {
            input_tokens: self.input_tokens + rhs.input_tokens,
            output_tokens: self.output_tokens + rhs.output_tokens,
            estimated_cost: self.estimated_cost + rhs.estimated_cost,
        }
    }
}

impl std::iter::Sum for TokenUsage {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(TokenUsage::default(), Add::add)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn per_patient_cost_example() {
        let u = TokenRates::new(0.0003, 0.0004).usage(4871, 2932);
        assert_eq!(u.total_tokens(), 7803);
        assert!((u.estimated_cost - 0.00263).abs() < 1e-5);
        assert!((u.estimated_cost - 0.0026341).abs() < 1e-12);
    }
}
