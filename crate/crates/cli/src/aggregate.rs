//! One-shot aggregation of a weighted vector file.
//!
//! ```text
//! d m lambda base ctma
//! weight v1 ... vd        (m lines)
//! ```
//!
//! `base` is an aggregator name such as `weighted-gm`; `ctma` is `true`,
//! `false`, `1` or `0`. Blank lines and `#` comments are ignored.

use byzasync::aggregation::{aggregate, AggregatorSpec, BaseRule, WeightedVectorSet};

use crate::{float17, CliError, CliResult};

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateInput {
    pub spec: AggregatorSpec,
    pub set: WeightedVectorSet,
}

pub fn parse_input(text: &str) -> CliResult<AggregateInput> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(n, l)| (n + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty());
    let (hn, header) = lines.next().ok_or_else(|| CliError::input("empty input"))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    let [d, m, lambda, base, ctma] = fields[..] else {
        return Err(CliError::input(format!(
            "line {hn}: header must be `d m lambda base ctma`, found {} fields",
            fields.len()
        )));
    };
    let bad = |what: &str, v: &str| CliError::input(format!("line {hn}: {what} '{v}' is invalid"));
    let d: usize = d.parse().map_err(|_| bad("d", d))?;
    let m: usize = m.parse().map_err(|_| bad("m", m))?;
    let lambda: f64 = lambda.parse().map_err(|_| bad("lambda", lambda))?;
    let base: BaseRule = base.parse().map_err(|e| CliError::input(format!("line {hn}: {e}")))?;
    let ctma = match ctma {
        "true" | "1" => true,
        "false" | "0" => false,
        other => return Err(bad("ctma", other)),
    };
    let spec = AggregatorSpec::new(base, ctma, lambda);
    spec.validate().map_err(|e| CliError::input(format!("line {hn}: {e}")))?;

    let mut vectors = Vec::with_capacity(m);
    let mut weights = Vec::with_capacity(m);
    for (n, line) in lines {
        let numbers = line
            .split_whitespace()
            .map(|v| v.parse::<f64>().map_err(|_| CliError::input(format!("line {n}: '{v}' is not a number"))))
            .collect::<CliResult<Vec<f64>>>()?;
        if numbers.len() != d + 1 {
            return Err(CliError::input(format!(
                "line {n}: dimension mismatch: expected a weight and {d} coordinates, found {} values",
                numbers.len()
            )));
        }
        weights.push(numbers[0]);
        vectors.push(numbers[1..].to_vec());
    }
    if vectors.len() != m {
        return Err(CliError::input(format!("expected {m} vectors, found {}", vectors.len())));
    }
    let set = WeightedVectorSet::new(vectors, weights).map_err(|e| CliError::input(e.to_string()))?;
    Ok(AggregateInput { spec, set })
}

/// The aggregate as space-separated 17-significant-digit numbers.
pub fn run(text: &str) -> CliResult<String> {
    let input = parse_input(text)?;
    let point = aggregate(&input.set, &input.spec).map_err(|e| CliError::input(e.to_string()))?;
    Ok(point.iter().map(|&x| float17(x)).collect::<Vec<_>>().join(" "))
}
