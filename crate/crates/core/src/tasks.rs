//! Integer-sequence oracles for the seven benchmark tasks and their
//! conversion into searchable expression patterns.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const COLLATZ_GUARD: u64 = 1_000_000;

/// F(1) = F(2) = 1.
pub fn fibonacci_value(i: u32) -> Result<u64> {
    if i == 0 {
        return Err(Error::Value("fibonacci index starts at 1".into()));
    }
    let (mut a, mut b) = (1u64, 1u64);
    for _ in 2..i {
        let next = a.checked_add(b).ok_or(Error::Overflow { value: u64::MAX, width: 64 })?;
        a = b;
        b = next;
    }
    Ok(b)
}

/// Iterations of n → n/2 (even) or 3n+1 (odd) needed to reach 1.
pub fn collatz_steps(i: u64) -> Result<u64> {
    if i == 0 {
        return Err(Error::Value("collatz input starts at 1".into()));
    }
    let mut n = i;
    let mut steps = 0;
    while n != 1 {
        n = if n.is_multiple_of(2) {
            n / 2
        } else {
            n.checked_mul(3)
                .and_then(|v| v.checked_add(1))
                .ok_or(Error::IterationLimit(i))?
        };
        steps += 1;
        if steps > COLLATZ_GUARD {
            return Err(Error::IterationLimit(i));
        }
    }
    Ok(steps)
}

/// Lucky numbers ≤ n: start from the odd numbers and repeatedly delete every
/// k-th survivor, where k is the next surviving number.
pub fn lucky_set(n: u64) -> BTreeSet<u64> {
    let mut survivors: Vec<u64> = (1..=n).step_by(2).collect();
    let mut idx = 1;
    while idx < survivors.len() {
        let k = survivors[idx] as usize;
        if k > survivors.len() {
            break;
        }
        let mut pos = 0usize;
        survivors.retain(|_| {
            pos += 1;
            !pos.is_multiple_of(k)
        });
        idx += 1;
    }
    survivors.into_iter().collect()
}

/// Primes ≤ n by trial division.
pub fn prime_set(n: u64) -> BTreeSet<u64> {
    (2..=n)
        .filter(|&p| (2..).take_while(|d| d * d <= p).all(|d| p % d != 0))
        .collect()
}

/// Fibonacci numbers ≤ n, without the duplicate 1.
pub fn fibonacci_membership_set(n: u64) -> BTreeSet<u64> {
    let mut out = BTreeSet::new();
    let (mut a, mut b) = (1u64, 2u64);
    while a <= n {
        out.insert(a);
        let next = a.saturating_add(b);
        a = b;
        b = next;
    }
    out
}

fn strip_2_5(mut i: u64) -> u64 {
    while i.is_multiple_of(2) {
        i /= 2;
    }
    while i.is_multiple_of(5) {
        i /= 5;
    }
    i
}

/// Repetend length of 1/i in base 10: the multiplicative order of 10 modulo
/// i with every factor of 2 and 5 removed; 0 for terminating decimals.
pub fn cycle_length(i: u64) -> u64 {
    assert!(i >= 1, "cycle_length is defined for i >= 1");
    let m = strip_2_5(i);
    if m == 1 {
        return 0;
    }
    let mut r = 10 % m;
    let mut order = 1;
    while r != 1 {
        r = r * 10 % m;
        order += 1;
    }
    order
}

/// Same quantity by long division: the distance between the first repeated
/// remainder and its earlier occurrence.
pub fn cycle_length_long_division(i: u64) -> u64 {
    assert!(i >= 1);
    let mut seen = std::collections::HashMap::new();
    let mut r = 1 % i;
    let mut pos = 0u64;
    while r != 0 {
        if let Some(&start) = seen.get(&r) {
            return pos - start;
        }
        seen.insert(r, pos);
        r = r * 10 % i;
        pos += 1;
    }
    0
}

/// `patterns[b][i]` is bit `b` of `counts[i]`.
pub fn step_counts_to_bit_patterns(counts: &[u64], width: u32) -> Result<Vec<Vec<bool>>> {
    if let Some(&c) = counts.iter().find(|&&c| width < 64 && c >> width != 0) {
        return Err(Error::Overflow { value: c, width });
    }
    Ok((0..width)
        .map(|b| counts.iter().map(|&c| (c >> b) & 1 == 1).collect())
        .collect())
}

/// Inverse of [`step_counts_to_bit_patterns`].
pub fn decode_bit_patterns(patterns: &[Vec<bool>]) -> Vec<u64> {
    let n = patterns.first().map_or(0, Vec::len);
    (0..n)
        .map(|i| {
            patterns
                .iter()
                .enumerate()
                .map(|(b, p)| u64::from(p[i]) << b)
                .sum()
        })
        .collect()
}

/// What an output gene has to reproduce.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TaskSpec {
    /// Fold change relative to `base_code` must match `expected_fold` within
    /// `tolerance` for every mapped code.
    Calculation {
        #[serde(with = "code_keyed")]
        expected_fold: BTreeMap<u32, f64>,
        tolerance: f64,
        base_code: u32,
    },
    /// Expression must be high exactly under `targets`.
    Classification { codes: Vec<u32>, targets: BTreeSet<u32> },
    /// One output gene per bit; `bit_patterns[b][i]` is the expected state
    /// of bit `b` under `codes[i]`.
    BinaryEncoded { codes: Vec<u32>, bit_patterns: Vec<Vec<bool>> },
}

// JSON object keys are strings; the tagged-enum buffer will not coerce them
// back to integers on its own.
mod code_keyed {
    use std::collections::BTreeMap;

    use serde::de::Error as _;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &BTreeMap<u32, f64>, s: S) -> Result<S::Ok, S::Error> {
        m.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<u32, f64>, D::Error> {
        BTreeMap::<String, f64>::deserialize(d)?
            .into_iter()
            .map(|(k, v)| k.parse().map(|k| (k, v)).map_err(|_| D::Error::custom(format!("bad code key {k:?}"))))
            .collect()
    }
}

impl TaskSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            TaskSpec::Calculation { expected_fold, tolerance, base_code } => {
                if expected_fold.is_empty() {
                    return Err(Error::Spec("calculation map is empty".into()));
                }
                if expected_fold.contains_key(base_code) {
                    return Err(Error::Spec("calculation map must not include the base code".into()));
                }
                if expected_fold.values().any(|&f| !(f > 0.0 && f.is_finite())) {
                    return Err(Error::Spec("expected folds must be positive".into()));
                }
                if tolerance.is_nan() || *tolerance < 0.0 {
                    return Err(Error::Spec("tolerance must be non-negative".into()));
                }
            }
            TaskSpec::Classification { codes, targets } => {
                if targets.is_empty() || targets.len() >= codes.len() {
                    return Err(Error::Spec("targets must be a non-empty proper subset of codes".into()));
                }
                if targets.iter().any(|t| !codes.contains(t)) {
                    return Err(Error::Spec("target code not among input codes".into()));
                }
            }
            TaskSpec::BinaryEncoded { codes, bit_patterns } => {
                if bit_patterns.is_empty() {
                    return Err(Error::Spec("no bit patterns".into()));
                }
                if bit_patterns.iter().any(|p| p.len() != codes.len()) {
                    return Err(Error::Spec("bit pattern length must equal the number of codes".into()));
                }
            }
        }
        Ok(())
    }

    /// Binary pattern of a classification task over its codes.
    pub fn classification_pattern(codes: &[u32], targets: &BTreeSet<u32>) -> Vec<bool> {
        codes.iter().map(|c| targets.contains(c)).collect()
    }
}

/// Expected fold m·i for each non-base code i.
pub fn multiplication_spec(m: u32, codes: &[u32], base_code: u32, tolerance: f64) -> TaskSpec {
    let expected_fold = codes
        .iter()
        .filter(|&&c| c != base_code)
        .map(|&c| (c, f64::from(m) * f64::from(c)))
        .collect();
    TaskSpec::Calculation { expected_fold, tolerance, base_code }
}

/// Expected fold F(i) for the first six non-base codes.
pub fn fibonacci_spec(codes: &[u32], base_code: u32, tolerance: f64) -> Result<TaskSpec> {
    let expected_fold = codes
        .iter()
        .filter(|&&c| c != base_code)
        .take(6)
        .map(|&c| Ok((c, fibonacci_value(c)? as f64)))
        .collect::<Result<_>>()?;
    Ok(TaskSpec::Calculation { expected_fold, tolerance, base_code })
}

pub const COLLATZ_BITS: u32 = 5;

/// The seven benchmark tasks (multiplication parameterized by m).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TableTask {
    Fibonacci,
    Collatz,
    Multiply(u32),
    Lucky,
    Prime,
    FibonacciMembership,
    CycleLength,
}

impl TableTask {
    pub fn all() -> Vec<TableTask> {
        let mut v = vec![TableTask::Fibonacci, TableTask::Collatz];
        v.extend((2..=5).map(TableTask::Multiply));
        v.extend([TableTask::Lucky, TableTask::Prime, TableTask::FibonacciMembership, TableTask::CycleLength]);
        v
    }

    pub fn is_calculation(&self) -> bool {
        matches!(self, TableTask::Fibonacci | TableTask::Multiply(_))
    }

    /// Membership predicate of the classification tasks.
    fn class_targets(&self, codes: &[u32]) -> Option<BTreeSet<u32>> {
        let max = u64::from(codes.iter().copied().max().unwrap_or(0));
        let set = match self {
            TableTask::Lucky => lucky_set(max),
            TableTask::Prime => prime_set(max),
            TableTask::FibonacciMembership => fibonacci_membership_set(max),
            TableTask::CycleLength => (1..=max).filter(|&i| cycle_length(i) == 1).collect(),
            _ => return None,
        };
        Some(codes.iter().copied().filter(|&c| set.contains(&u64::from(c))).collect())
    }

    /// Search spec over `codes` (input codes, excluding the base).
    pub fn spec(&self, codes: &[u32], base_code: u32, tolerance: f64) -> Result<TaskSpec> {
        let inputs: Vec<u32> = codes.iter().copied().filter(|&c| c != base_code).collect();
        let spec = match self {
            TableTask::Fibonacci => fibonacci_spec(&inputs, base_code, tolerance)?,
            TableTask::Multiply(m) => multiplication_spec(*m, &inputs, base_code, tolerance),
            TableTask::Collatz => {
                let counts = inputs
                    .iter()
                    .map(|&c| collatz_steps(u64::from(c)))
                    .collect::<Result<Vec<_>>>()?;
                TaskSpec::BinaryEncoded {
                    bit_patterns: step_counts_to_bit_patterns(&counts, COLLATZ_BITS)?,
                    codes: inputs,
                }
            }
            _ => {
                let targets = self.class_targets(&inputs).expect("classification task");
                TaskSpec::Classification { codes: inputs, targets }
            }
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Expected outputs for inputs 1..=7.
    pub fn expected_output(&self) -> TaskOutput {
        let inputs: Vec<u32> = (1..=7).collect();
        let expected = match self {
            TableTask::Fibonacci => ExpectedValues::Numbers(
                (1..=6).map(|i| fibonacci_value(i).expect("small index")).collect(),
            ),
            TableTask::Collatz => ExpectedValues::Numbers(
                inputs.iter().map(|&i| collatz_steps(u64::from(i)).expect("small input")).collect(),
            ),
            TableTask::Multiply(m) => {
                ExpectedValues::Numbers(inputs.iter().map(|&i| u64::from(m * i)).collect())
            }
            _ => {
                let t = self.class_targets(&inputs).expect("classification task");
                ExpectedValues::Labels(inputs.iter().map(|c| t.contains(c)).collect())
            }
        };
        let inputs = match self {
            TableTask::Fibonacci => (1..=6).collect(),
            _ => inputs,
        };
        TaskOutput {
            task: self.to_string(),
            kind: if matches!(expected, ExpectedValues::Labels(_)) { "classification" } else { "calculation" }.into(),
            inputs,
            expected,
        }
    }
}

impl fmt::Display for TableTask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TableTask::Fibonacci => f.write_str("fibonacci"),
            TableTask::Collatz => f.write_str("collatz"),
            TableTask::Multiply(m) => write!(f, "multiply-{m}"),
            TableTask::Lucky => f.write_str("lucky"),
            TableTask::Prime => f.write_str("prime"),
            TableTask::FibonacciMembership => f.write_str("fibonacci-membership"),
            TableTask::CycleLength => f.write_str("cycle-length"),
        }
    }
}

impl FromStr for TableTask {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "fibonacci" => TableTask::Fibonacci,
            "collatz" => TableTask::Collatz,
            "lucky" => TableTask::Lucky,
            "prime" => TableTask::Prime,
            "fibonacci-membership" => TableTask::FibonacciMembership,
            "cycle-length" => TableTask::CycleLength,
            _ => match s.strip_prefix("multiply-").and_then(|m| m.parse::<u32>().ok()) {
                Some(m) if m >= 1 => TableTask::Multiply(m),
                _ => return Err(Error::Value(format!("unknown task {s:?}"))),
            },
        })
    }
}

impl Serialize for TableTask {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for TableTask {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ExpectedValues {
    Numbers(Vec<u64>),
    Labels(Vec<bool>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskOutput {
    pub task: String,
    pub kind: String,
    pub inputs: Vec<u32>,
    pub expected: ExpectedValues,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn calculation_spec_json_round_trip() {
        let spec = TableTask::Fibonacci.spec(&[0, 1, 2, 3, 4, 5, 6, 7], 0, 0.01).unwrap();
        let text = serde_json::to_string(&spec).unwrap();
        assert_eq!(serde_json::from_str::<TaskSpec>(&text).unwrap(), spec);
    }

    #[test]
    fn fibonacci_values() {
        assert_eq!(fibonacci_value(1).unwrap(), 1);
        assert_eq!(fibonacci_value(6).unwrap(), 8);
        // 1 1 2 3 5 8 13 21 34 55
        assert_eq!(fibonacci_value(10).unwrap(), 55);
    }

    #[test]
    fn collatz_values() {
        assert_eq!(collatz_steps(1).unwrap(), 0);
        assert_eq!(collatz_steps(3).unwrap(), 7);
        assert_eq!(collatz_steps(7).unwrap(), 16);
    }

    /// Brute-force lucky sieve on an explicit marked list.
    fn lucky_oracle(n: u64) -> BTreeSet<u64> {
        let mut alive: Vec<(u64, bool)> = (1..=n).map(|v| (v, v % 2 == 1)).collect();
        let mut step_idx = 1;
        loop {
            let live: Vec<usize> = alive.iter().enumerate().filter(|(_, a)| a.1).map(|(i, _)| i).collect();
            if step_idx >= live.len() {
                break;
            }
            let k = alive[live[step_idx]].0 as usize;
            if k > live.len() {
                break;
            }
            for (pos, &i) in live.iter().enumerate() {
                if (pos + 1) % k == 0 {
                    alive[i].1 = false;
                }
            }
            step_idx += 1;
        }
        alive.into_iter().filter(|a| a.1).map(|a| a.0).collect()
    }

    #[test]
    fn lucky_values() {
        assert_eq!(lucky_set(7), [1, 3, 7].into());
        assert_eq!(lucky_set(1), [1].into());
        let oracle = lucky_oracle(33);
        assert_eq!(oracle, [1, 3, 7, 9, 13, 15, 21, 25, 31, 33].into());
        assert_eq!(lucky_set(33), oracle);
        for n in 1..300 {
            assert_eq!(lucky_set(n), lucky_oracle(n), "n={n}");
        }
    }

    #[test]
    fn prime_values() {
        assert_eq!(prime_set(7), [2, 3, 5, 7].into());
        assert!(prime_set(1).is_empty());
        assert_eq!(prime_set(30), [2, 3, 5, 7, 11, 13, 17, 19, 23, 29].into());
    }

    #[test]
    fn fibonacci_membership_values() {
        assert_eq!(fibonacci_membership_set(7), [1, 2, 3, 5].into());
        assert_eq!(fibonacci_membership_set(1), [1].into());
        assert_eq!(fibonacci_membership_set(100), [1, 2, 3, 5, 8, 13, 21, 34, 55, 89].into());
    }

    #[test]
    fn cycle_lengths() {
        assert_eq!(cycle_length(3), 1);
        assert_eq!(cycle_length(4), 0);
        assert_eq!(cycle_length_long_division(7), 6);
        assert_eq!(cycle_length(7), 6);
        for i in 1..2000 {
            assert_eq!(cycle_length(i), cycle_length_long_division(i), "i={i}");
        }
    }

    #[test]
    fn bit_patterns() {
        let counts = [0, 1, 7, 2, 5, 8, 16];
        let p = step_counts_to_bit_patterns(&counts, 5).unwrap();
        assert_eq!(p[0], vec![false, true, true, false, true, false, false]);
        let seven = step_counts_to_bit_patterns(&[7], 5).unwrap();
        let bits: Vec<bool> = seven.iter().map(|b| b[0]).collect();
        assert_eq!(bits, vec![true, true, true, false, false]);
        assert_eq!(step_counts_to_bit_patterns(&[32], 5).unwrap_err().name(), "Overflow");
        assert_eq!(decode_bit_patterns(&p), counts.to_vec());
    }

    #[test]
    fn multiplication_maps() {
        let spec = multiplication_spec(3, &[1, 2, 3, 4, 5, 6], 0, 0.1);
        let TaskSpec::Calculation { expected_fold, .. } = spec else { panic!() };
        let expected: BTreeMap<u32, f64> = (1..=6).map(|i| (i, 3.0 * i as f64)).collect();
        assert_eq!(expected_fold, expected);
        let TaskSpec::Calculation { expected_fold, .. } = multiplication_spec(2, &[3], 0, 0.1) else { panic!() };
        assert_eq!(expected_fold[&3], 6.0);
        let TaskSpec::Calculation { expected_fold, .. } = multiplication_spec(5, &[1], 0, 0.1) else { panic!() };
        assert_eq!(expected_fold[&1], 5.0);
    }

    #[test]
    fn fibonacci_spec_layouts() {
        let codes: Vec<u32> = (1..=7).collect();
        let TaskSpec::Calculation { expected_fold, .. } = fibonacci_spec(&codes, 0, 0.1).unwrap() else { panic!() };
        assert_eq!(expected_fold.keys().copied().collect::<Vec<_>>(), vec![1, 2, 3, 4, 5, 6]);
        assert_eq!(expected_fold.values().copied().collect::<Vec<_>>(), vec![1.0, 1.0, 2.0, 3.0, 5.0, 8.0]);
        // code 1 as the base: codes 2..7 map to F(2..7)
        let TaskSpec::Calculation { expected_fold, .. } = fibonacci_spec(&codes, 1, 0.1).unwrap() else { panic!() };
        assert_eq!(expected_fold.keys().copied().collect::<Vec<_>>(), vec![2, 3, 4, 5, 6, 7]);
    }

    #[test]
    fn task_names_round_trip() {
        for t in TableTask::all() {
            assert_eq!(t.to_string().parse::<TableTask>().unwrap(), t);
        }
        assert!("multiply-x".parse::<TableTask>().is_err());
    }

    #[test]
    fn table_outputs() {
        let out = TableTask::CycleLength.expected_output();
        assert_eq!(out.expected, ExpectedValues::Labels(vec![false, false, true, false, false, true, false]));
        let out = TableTask::Collatz.expected_output();
        assert_eq!(out.expected, ExpectedValues::Numbers(vec![0, 1, 7, 2, 5, 8, 16]));
    }
}
