//! Parameter-control policies mapping fitness to λ.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encoding::encode_state;
use crate::env::Portfolio;
use crate::error::{Error, Result};
use crate::neural::{Matrix, Mlp};
use crate::onemax::round_half_up;

/// Theory-derived λ, `√(n / (n − f))`.
pub fn pi_cont(n: usize, fitness: usize) -> Result<f64> {
    if fitness >= n {
        return Err(Error::Usage(format!(
            "fitness {fitness} is not below n = {n}; the episode is over"
        )));
    }
    Ok((n as f64 / (n - fitness) as f64).sqrt())
}

/// Portfolio index closest to [`pi_cont`], ties toward the smaller λ.
pub fn pi_disc(n: usize, fitness: usize) -> Result<usize> {
    Ok(Portfolio::new(n).nearest(pi_cont(n, fitness)?))
}

/// Fitness-indexed table of portfolio indices covering fitness `0..n`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TabularPolicy {
    n: usize,
    actions: Vec<usize>,
}

impl TabularPolicy {
    pub fn new(n: usize, actions: Vec<usize>) -> Result<Self> {
        if actions.len() != n {
            return Err(Error::Usage(format!(
                "policy table has {} entries, expected {n}",
                actions.len()
            )));
        }
        let k = Portfolio::new(n).len();
        if let Some(bad) = actions.iter().find(|&&a| a >= k) {
            return Err(Error::Usage(format!(
                "action index {bad} outside portfolio of size {k}"
            )));
        }
        Ok(Self { n, actions })
    }

    pub fn from_fn(n: usize, f: impl Fn(usize) -> usize) -> Result<Self> {
        Self::new(n, (0..n).map(f).collect())
    }

    pub fn discrete_theory(n: usize) -> Self {
        let portfolio = Portfolio::new(n);
        let actions = (0..n)
            .map(|f| portfolio.nearest((n as f64 / (n - f) as f64).sqrt()))
            .collect();
        Self { n, actions }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn actions(&self) -> &[usize] {
        &self.actions
    }

    pub fn action(&self, fitness: usize) -> Option<usize> {
        self.actions.get(fitness).copied()
    }

    /// λ values per fitness.
    pub fn lambdas(&self) -> Vec<u32> {
        let portfolio = Portfolio::new(self.n);
        self.actions
            .iter()
            .map(|&a| portfolio.lambdas()[a])
            .collect()
    }

    /// Writes the `fitness,lambda` CSV form.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["fitness", "lambda"])?;
        for (f, l) in self.lambdas().into_iter().enumerate() {
            w.write_record([f.to_string(), l.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads the `fitness,lambda` CSV form; `n` is the number of rows.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let headers = r.headers()?.clone();
        if headers.len() != 2 || &headers[0] != "fitness" || &headers[1] != "lambda" {
            return Err(Error::Parse(format!(
                "policy header must be `fitness,lambda`, found {:?}",
                headers.iter().collect::<Vec<_>>()
            )));
        }
        let mut rows = Vec::new();
        for record in r.records() {
            let record = record?;
            let parse = |i: usize| -> Result<u64> {
                record[i]
                    .trim()
                    .parse()
                    .map_err(|_| Error::Parse(format!("bad number {:?} in policy", &record[i])))
            };
            rows.push((parse(0)? as usize, parse(1)? as u32));
        }
        let n = rows.len();
        let portfolio = Portfolio::new(n);
        let mut actions = vec![usize::MAX; n];
        for (f, l) in rows {
            if f >= n {
                return Err(Error::Parse(format!("fitness {f} outside 0..{n}")));
            }
            if actions[f] != usize::MAX {
                return Err(Error::Parse(format!("fitness {f} listed twice")));
            }
            actions[f] = portfolio
                .index_of(l)
                .ok_or_else(|| Error::Parse(format!("λ = {l} is not in the portfolio for n = {n}")))?;
        }
        Self::new(n, actions)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }
}

/// What a policy asks the environment to do.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Action {
    /// Index into the portfolio.
    Portfolio(usize),
    /// A λ outside the portfolio restriction (continuous theory policy).
    Raw(u32),
}

impl Action {
    pub fn lambda(self, portfolio: &Portfolio) -> u32 {
        match self {
            Action::Portfolio(i) => portfolio.lambdas()[i],
            Action::Raw(l) => l,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    ContinuousTheory,
    DiscreteTheory,
    Constant(u32),
    Random,
    Tabular(TabularPolicy),
}

impl PolicyKind {
    /// Checks the policy can act on a problem of size `n`.
    pub fn validate(&self, n: usize) -> Result<()> {
        match self {
            PolicyKind::Constant(l) if Portfolio::new(n).index_of(*l).is_none() => Err(
                Error::Config(format!("constant λ = {l} is not in the portfolio for n = {n}")),
            ),
            PolicyKind::Tabular(t) if t.n() != n => Err(Error::Config(format!(
                "tabular policy is for n = {}, environment has n = {n}",
                t.n()
            ))),
            _ => Ok(()),
        }
    }

    pub fn act<R: Rng + ?Sized>(&self, n: usize, fitness: usize, rng: &mut R) -> Result<Action> {
        if fitness >= n {
            return Err(Error::Usage(format!("no action at the optimum (fitness {fitness})")));
        }
        Ok(match self {
            PolicyKind::ContinuousTheory => Action::Raw(round_half_up(pi_cont(n, fitness)?)),
            PolicyKind::DiscreteTheory => Action::Portfolio(pi_disc(n, fitness)?),
            PolicyKind::Constant(l) => Action::Portfolio(
                Portfolio::new(n)
                    .index_of(*l)
                    .ok_or_else(|| Error::Config(format!("constant λ = {l} not in portfolio")))?,
            ),
            PolicyKind::Random => Action::Portfolio(rng.random_range(0..Portfolio::new(n).len())),
            PolicyKind::Tabular(t) => Action::Portfolio(t.action(fitness).ok_or_else(|| {
                Error::Usage(format!("tabular policy has no entry for fitness {fitness}"))
            })?),
        })
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PolicyKind::ContinuousTheory => write!(f, "pi_cont"),
            PolicyKind::DiscreteTheory => write!(f, "pi_disc"),
            PolicyKind::Constant(l) => write!(f, "constant:{l}"),
            PolicyKind::Random => write!(f, "random"),
            PolicyKind::Tabular(_) => write!(f, "tabular"),
        }
    }
}

/// Per-fitness argmax of a network's outputs, ties toward the smaller index.
pub fn extract_greedy(net: &Mlp, n: usize) -> Result<TabularPolicy> {
    let k = Portfolio::new(n).len();
    if net.input_dim() != 1 || net.output_dim() != k {
        return Err(Error::Shape(format!(
            "network maps {} -> {}, expected 1 -> {k}",
            net.input_dim(),
            net.output_dim()
        )));
    }
    let states = Matrix::column((0..n).map(|f| encode_state(f, n)).collect());
    let out = net.forward(&states)?;
    let actions = (0..n).map(|f| argmax(out.row(f))).collect();
    TabularPolicy::new(n, actions)
}

/// First index of the maximum.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Number of fitness states on which two policies choose different actions.
pub fn pairwise_difference(a: &TabularPolicy, b: &TabularPolicy) -> Result<usize> {
    if a.n() != b.n() {
        return Err(Error::Usage(format!(
            "cannot compare policies for n = {} and n = {}",
            a.n(),
            b.n()
        )));
    }
    Ok(a.actions
        .iter()
        .zip(&b.actions)
        .filter(|(x, y)| x != y)
        .count())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::onemax::rng_from_seed;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn theory_policy_values() {
        assert!((pi_cont(100, 99).unwrap() - 10.0).abs() < 1e-12);
        assert!((pi_cont(100, 50).unwrap() - 2f64.sqrt()).abs() < 1e-12);
        assert!((pi_cont(50, 49).unwrap() - 50f64.sqrt()).abs() < 1e-12);
        assert!(pi_cont(100, 100).is_err());
        assert_eq!(pi_disc(100, 99).unwrap(), 3);
        assert_eq!(pi_disc(100, 50).unwrap(), 0);
        assert!(pi_disc(10, 10).is_err());
    }

    #[test]
    fn discrete_theory_table_matches_pointwise() {
        let t = TabularPolicy::discrete_theory(100);
        for f in 0..100 {
            assert_eq!(t.action(f).unwrap(), pi_disc(100, f).unwrap());
        }
    }

    #[test]
    fn act_dispatch() {
        let mut rng = rng_from_seed(0);
        let p = PolicyKind::Constant(1);
        for f in 0..50 {
            assert_eq!(p.act(50, f, &mut rng).unwrap(), Action::Portfolio(0));
        }
        assert!(PolicyKind::Constant(3).validate(50).is_err());
        let t = TabularPolicy::from_fn(50, |f| f % 6).unwrap();
        let tk = PolicyKind::Tabular(t.clone());
        for f in 0..50 {
            assert_eq!(tk.act(50, f, &mut rng).unwrap(), Action::Portfolio(f % 6));
        }
        assert_eq!(
            PolicyKind::ContinuousTheory.act(50, 49, &mut rng).unwrap(),
            Action::Raw(7)
        );
        assert!(PolicyKind::Random.act(50, 50, &mut rng).is_err());
    }

    #[test]
    fn random_policy_is_uniform() {
        let mut rng = rng_from_seed(42);
        let k = 7;
        let draws = 100_000;
        let mut counts = vec![0usize; k];
        for _ in 0..draws {
            match PolicyKind::Random.act(100, 10, &mut rng).unwrap() {
                Action::Portfolio(i) => counts[i] += 1,
                Action::Raw(_) => unreachable!(),
            }
        }
        let p = 1.0 / k as f64;
        let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - draws as f64 * p).abs() < 3.0 * sigma);
        }
    }

    #[test]
    fn pairwise_difference_counts() {
        let a = TabularPolicy::from_fn(20, |_| 1).unwrap();
        assert_eq!(pairwise_difference(&a, &a).unwrap(), 0);
        let b = TabularPolicy::from_fn(20, |f| if f < 3 { 2 } else { 1 }).unwrap();
        assert_eq!(pairwise_difference(&a, &b).unwrap(), 3);
        let c = TabularPolicy::from_fn(21, |_| 1).unwrap();
        assert!(pairwise_difference(&a, &c).is_err());
    }

    #[test]
    fn zero_network_extracts_index_zero() {
        let net = Mlp::zeros(&[1, 50, 50, 7]);
        let t = extract_greedy(&net, 100).unwrap();
        assert!(t.actions().iter().all(|&a| a == 0));
        assert!(extract_greedy(&net, 50).is_err());
    }

    #[test]
    fn csv_rejects_bad_tables() {
        assert!(TabularPolicy::read_csv("fitness,lam\n0,1\n".as_bytes()).is_err());
        assert!(TabularPolicy::read_csv("fitness,lambda\n0,3\n1,1\n".as_bytes()).is_err());
        assert!(TabularPolicy::read_csv("fitness,lambda\n0,1\n0,1\n".as_bytes()).is_err());
        let t = TabularPolicy::read_csv("fitness,lambda\n1,2\n0,1\n".as_bytes()).unwrap();
        assert_eq!(t.actions(), &[0, 1]);
    }

    proptest! {
        #[test]
        fn csv_round_trip(n in 2usize..120, seed in any::<u64>()) {
            let k = Portfolio::new(n).len();
            let mut rng = rng_from_seed(seed);
            let t = TabularPolicy::from_fn(n, |_| 0).unwrap();
            let t = TabularPolicy::new(n, t.actions().iter().map(|_| rng.random_range(0..k)).collect()).unwrap();
            let mut buf = Vec::new();
            t.write_csv(&mut buf).unwrap();
            prop_assert_eq!(TabularPolicy::read_csv(buf.as_slice()).unwrap(), t);
        }

        #[test]
        fn discretization_is_nearest(n in 2usize..400, frac in 0.0f64..1.0) {
            let f = ((n as f64) * frac) as usize % n;
            let target = pi_cont(n, f).unwrap();
            let chosen = Portfolio::new(n).lambdas()[pi_disc(n, f).unwrap()] as f64;
            for &l in Portfolio::new(n).lambdas() {
                prop_assert!((chosen - target).abs() <= (l as f64 - target).abs());
            }
        }
    }
}
