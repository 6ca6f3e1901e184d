//! Conditional Monte Carlo p-values by rejection sampling, and their exact
//! counterparts on finite models.

use num_rational::Ratio;
use rand::Rng;

use super::report::{Method, PivotEstimate, PivotReport};
use crate::error::{Error, Result};

/// P(stat ≥ observed | predicate) estimated from accepted draws, along with
/// the unconditional quantities from the same proposals.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalMc {
    /// p₁ = P(T ≥ t | selection).
    pub p_value: f64,
    pub se: f64,
    /// P(selection).
    pub selection_probability: f64,
    pub selection_se: f64,
    /// P(T ≥ t and selection), the uncorrected tail mass.
    pub naive: f64,
    pub naive_se: f64,
    pub accepted: u64,
    pub proposals: u64,
}

impl ConditionalMc {
    /// Report with pivot 1 − p₁, so that the upper-tail p-value is 1 − pivot.
    pub fn report(&self, target: impl Into<String>) -> PivotReport {
        PivotReport::new(
            target,
            Method::McConditional,
            PivotEstimate::sampled(1.0 - self.p_value, self.se),
        )
    }
}

fn binomial_se(p: f64, n: u64) -> f64 {
    (p * (1.0 - p) / n.max(1) as f64).sqrt()
}

/// Rejection-samples `sample` until `n_accepted` draws satisfy `predicate`,
/// or fails after `budget` proposals.
pub fn conditional_mc_pvalue<S, R, G, P, T>(
    mut sample: G,
    predicate: P,
    statistic: T,
    observed: f64,
    n_accepted: u64,
    budget: u64,
    rng: &mut R,
) -> Result<ConditionalMc>
where
    R: Rng + ?Sized,
    G: FnMut(&mut R) -> S,
    P: Fn(&S) -> bool,
    T: Fn(&S) -> f64,
{
    if n_accepted == 0 {
        return Err(Error::invalid("need at least one accepted draw"));
    }
    let (mut accepted, mut proposals, mut tail) = (0u64, 0u64, 0u64);
    while accepted < n_accepted {
        if proposals >= budget {
            return Err(Error::BudgetExhausted {
                proposals,
                accepted,
                rate: accepted as f64 / proposals.max(1) as f64,
            });
        }
        let s = sample(rng);
        proposals += 1;
        if predicate(&s) {
            accepted += 1;
            if statistic(&s) >= observed {
                tail += 1;
            }
        }
    }
    let p = tail as f64 / accepted as f64;
    let sel = accepted as f64 / proposals as f64;
    let naive = tail as f64 / proposals as f64;
    Ok(ConditionalMc {
        p_value: p,
        se: binomial_se(p, accepted),
        selection_probability: sel,
        selection_se: binomial_se(sel, proposals),
        naive,
        naive_se: binomial_se(naive, proposals),
        accepted,
        proposals,
    })
}

/// Exact p₁, P(selection) and the naive tail mass on a finite model given as
/// (outcome, probability) pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactConditional {
    pub p_value: Ratio<i64>,
    pub selection_probability: Ratio<i64>,
    pub naive: Ratio<i64>,
}

pub fn exact_conditional_pvalue<S, P, T>(
    support: &[(S, Ratio<i64>)],
    predicate: P,
    statistic: T,
    observed: f64,
) -> Result<ExactConditional>
where
    P: Fn(&S) -> bool,
    T: Fn(&S) -> f64,
{
    let zero = Ratio::from_integer(0);
    let total = support.iter().fold(zero, |a, (_, p)| a + p);
    if total != Ratio::from_integer(1) {
        return Err(Error::invalid(format!(
            "probabilities sum to {total}, not 1"
        )));
    }
    let mut sel = zero;
    let mut naive = zero;
    for (s, p) in support {
        if predicate(s) {
            sel += p;
            if statistic(s) >= observed {
                naive += p;
            }
        }
    }
    if sel == zero {
        return Err(Error::Degenerate(
            "selection event has probability zero".into(),
        ));
    }
    Ok(ExactConditional {
        p_value: naive / sel,
        selection_probability: sel,
        naive,
    })
}
