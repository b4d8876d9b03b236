//! Concentration of Poisson arrival times against the exact Gamma law.

use rayon::prelude::*;
use rwre_core::rng::nth_arrival;
use rwre_core::stats::{gamma_two_sided_tail, Wilson, CONFIDENCE};
use rwre_core::SeedKey;
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GammaRow {
    pub n: u64,
    pub epsilon: f64,
    pub replicas: u64,
    pub successes: u64,
    /// Frequency of `|T_n - n| >= eps n`.
    pub empirical: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    /// `P(|G - n| >= eps n)` for `G ~ Gamma(n, 1)`.
    pub exact: f64,
    pub agrees: bool,
}

/// One row per `n`. Replica `r` reads the clock of `key.with_replica(r)`, so
/// rows share their samples.
pub fn gamma_check(n_list: &[u64], epsilon: f64, replicas: u64, key: &SeedKey) -> Vec<GammaRow> {
    n_list
        .iter()
        .map(|&n| {
            let nf = n as f64;
            let successes = (0..replicas)
                .into_par_iter()
                .filter(|&r| (nth_arrival(&key.with_replica(r), n) - nf).abs() >= epsilon * nf)
                .count() as u64;
            let w = Wilson::<f64>::new(successes, replicas, CONFIDENCE);
            let exact = gamma_two_sided_tail(n, epsilon);
            GammaRow {
                n,
                epsilon,
                replicas,
                successes,
                empirical: w.p_hat,
                ci_lo: w.lo,
                ci_hi: w.hi,
                exact,
                agrees: w.lo <= exact && exact <= w.hi,
            }
        })
        .collect()
}
