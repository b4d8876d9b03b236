//! Jump kernels `g: S^{⟦-ℓ,ℓ⟧} × [0,1) → ⟦-R,R⟧` realized by inverse CDF.

use num_traits::Float;

use crate::error::{Error, Result};

/// Order in which displacements are laid out along `[0,1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CdfOrder {
    /// `-R, -R+1, …, R`.
    Ascending,
    /// `R, R-1, …, -R`; produced only by [`JumpKernel::mirror`].
    Descending,
}

#[derive(Debug, Clone, PartialEq)]
pub enum KernelTable<P> {
    /// One row shared by every local word.
    Uniform(Vec<P>),
    /// One row per word, indexed by the base-`|S|` value of the word read
    /// left to right.
    PerWord(Vec<Vec<P>>),
}

/// Finite-range jump kernel with an ellipticity floor.
///
/// Rows list probabilities in CDF order: displacements `-R..=R` for
/// [`CdfOrder::Ascending`], `R..=-R` for [`CdfOrder::Descending`].
#[derive(Debug, Clone, PartialEq)]
pub struct JumpKernel<P> {
    pub ell: usize,
    pub range: i64,
    pub gamma: P,
    pub states: usize,
    pub table: KernelTable<P>,
    pub order: CdfOrder,
    cum: Vec<Vec<P>>,
}

fn sum_tolerance<P: Float>() -> P {
    P::from(1e-12).unwrap().max(P::epsilon() * P::from(16.0).unwrap())
}

impl<P: Float> JumpKernel<P> {
    pub fn new(ell: usize, range: i64, gamma: P, states: usize, table: KernelTable<P>) -> Result<Self> {
        if ell < 1 {
            return Err(Error::InvalidKernel("dependency range ell must be at least 1".into()));
        }
        if range < 1 {
            return Err(Error::InvalidKernel("jump range R must be at least 1".into()));
        }
        if states < 2 {
            return Err(Error::InvalidKernel("alphabet needs at least 2 states".into()));
        }
        let width = (2 * range + 1) as usize;
        let slack = P::one() + sum_tolerance::<P>();
        if !(gamma > P::zero()) || gamma * P::from(width).unwrap() > slack {
            return Err(Error::InvalidKernel(format!(
                "gamma must lie in (0, 1/(2R+1)], got {}",
                gamma.to_f64().unwrap()
            )));
        }
        let rows: Vec<&Vec<P>> = match &table {
            KernelTable::Uniform(row) => vec![row],
            KernelTable::PerWord(rows) => {
                let words = (states as u64).checked_pow(2 * ell as u32 + 1);
                if words != Some(rows.len() as u64) {
                    return Err(Error::InvalidKernel(format!(
                        "table has {} rows, expected |S|^(2l+1) = {}^{}",
                        rows.len(),
                        states,
                        2 * ell + 1
                    )));
                }
                rows.iter().collect()
            }
        };
        for (i, row) in rows.iter().enumerate() {
            if row.len() != width {
                return Err(Error::InvalidKernel(format!("row {i} has length {}, expected {width}", row.len())));
            }
            let s = row.iter().fold(P::zero(), |a, &b| a + b);
            if (s - P::one()).abs() > sum_tolerance::<P>() {
                return Err(Error::InvalidKernel(format!("row {i} sums to {}", s.to_f64().unwrap())));
            }
        }
        let cum = cumulative_rows(&table);
        Ok(JumpKernel { ell, range, gamma, states, table, order: CdfOrder::Ascending, cum })
    }

    /// Environment-independent kernel.
    pub fn word_independent(range: i64, gamma: P, row: Vec<P>) -> Result<Self> {
        Self::new(1, range, gamma, 2, KernelTable::Uniform(row))
    }

    /// Uniform law on `⟦-R,R⟧` with the largest admissible floor.
    pub fn uniform(range: i64) -> Self {
        let w = P::from(2 * range + 1).unwrap();
        let p = P::one() / w;
        Self::word_independent(range, p, vec![p; (2 * range + 1) as usize]).unwrap()
    }

    /// Deterministic jump `d`. Not elliptic; [`validate_kernel`] rejects it.
    pub fn point_mass(range: i64, d: i64) -> Self {
        assert!(d.abs() <= range);
        let mut row = vec![P::zero(); (2 * range + 1) as usize];
        row[(d + range) as usize] = P::one();
        Self::word_independent(range, P::min_positive_value(), row).unwrap()
    }

    pub fn is_word_independent(&self) -> bool {
        matches!(self.table, KernelTable::Uniform(_))
    }

    pub fn word_len(&self) -> usize {
        2 * self.ell + 1
    }

    pub fn word_count(&self) -> usize {
        self.states.pow(self.word_len() as u32)
    }

    /// Row index of a word given as a state slice.
    pub fn word_index(&self, word: &[u8]) -> Result<usize> {
        if word.len() != self.word_len() {
            return Err(Error::MalformedWord { expected: self.word_len(), got: word.len() });
        }
        Ok(word.iter().fold(0usize, |acc, &s| acc * self.states + s as usize))
    }

    pub fn decode_word(&self, mut idx: usize) -> Vec<u8> {
        let mut w = vec![0u8; self.word_len()];
        for slot in w.iter_mut().rev() {
            *slot = (idx % self.states) as u8;
            idx /= self.states;
        }
        w
    }

    /// Probability vector for displacements `-R..=R` (ascending).
    pub fn row(&self, word_idx: usize) -> Vec<P> {
        let raw = match &self.table {
            KernelTable::Uniform(r) => r,
            KernelTable::PerWord(rows) => &rows[word_idx],
        };
        match self.order {
            CdfOrder::Ascending => raw.clone(),
            CdfOrder::Descending => raw.iter().rev().copied().collect(),
        }
    }

    /// Inverse CDF on a precomputed row index.
    #[inline]
    pub fn jump_indexed(&self, word_idx: usize, u: P) -> i64 {
        let cum = match self.table {
            KernelTable::Uniform(_) => &self.cum[0],
            KernelTable::PerWord(_) => &self.cum[word_idx],
        };
        let slot = cum.iter().position(|&c| u < c).unwrap_or(cum.len() - 1) as i64;
        match self.order {
            CdfOrder::Ascending => slot - self.range,
            CdfOrder::Descending => self.range - slot,
        }
    }

    /// The displacement `d` with `cumsum(d-1) <= u < cumsum(d)`.
    pub fn jump(&self, word: &[u8], u: P) -> Result<i64> {
        let idx = self.word_index(word)?;
        Ok(self.jump_indexed(idx, u))
    }

    /// Kernel of the mirrored system: the row for word `w` is the row of the
    /// reversed word, laid out from `+R` down, so that
    /// `mirror(g)(rev w, u) = -g(w, u)` holds bit for bit.
    pub fn mirror(&self) -> Self {
        let table = match &self.table {
            KernelTable::Uniform(r) => KernelTable::Uniform(r.clone()),
            KernelTable::PerWord(rows) => KernelTable::PerWord(
                (0..rows.len())
                    .map(|i| {
                        let mut w = self.decode_word(i);
                        w.reverse();
                        rows[self.word_index(&w).unwrap()].clone()
                    })
                    .collect(),
            ),
        };
        let order = match self.order {
            CdfOrder::Ascending => CdfOrder::Descending,
            CdfOrder::Descending => CdfOrder::Ascending,
        };
        let cum = cumulative_rows(&table);
        JumpKernel { ell: self.ell, range: self.range, gamma: self.gamma, states: self.states, table, order, cum }
    }

    /// Mean displacement of a row.
    pub fn mean(&self, word_idx: usize) -> P {
        self.row(word_idx)
            .iter()
            .enumerate()
            .fold(P::zero(), |a, (i, &p)| a + p * P::from(i as i64 - self.range).unwrap())
    }
}

fn cumulative_rows<P: Float>(table: &KernelTable<P>) -> Vec<Vec<P>> {
    let rows: Vec<&Vec<P>> = match table {
        KernelTable::Uniform(row) => vec![row],
        KernelTable::PerWord(rows) => rows.iter().collect(),
    };
    rows.iter()
        .map(|row| {
            row.iter()
                .scan(P::zero(), |acc, &v| {
                    *acc = *acc + v;
                    Some(*acc)
                })
                .collect()
        })
        .collect()
}

/// Smallest table entry; errors on the first cell below `gamma`.
pub fn validate_kernel<P: Float>(k: &JumpKernel<P>) -> Result<P> {
    let rows = match &k.table {
        KernelTable::Uniform(r) => vec![(None, r)],
        KernelTable::PerWord(rows) => rows.iter().enumerate().map(|(i, r)| (Some(i), r)).collect(),
    };
    let mut floor = P::infinity();
    for (idx, row) in rows {
        for (slot, &p) in row.iter().enumerate() {
            if p < k.gamma {
                let displacement = match k.order {
                    CdfOrder::Ascending => slot as i64 - k.range,
                    CdfOrder::Descending => k.range - slot as i64,
                };
                let word = idx.map(|i| k.decode_word(i)).unwrap_or_default();
                return Err(Error::EllipticityViolation { word, displacement, value: p.to_f64().unwrap() });
            }
            floor = floor.min(p);
        }
    }
    Ok(floor)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_word_kernel() -> JumpKernel<f64> {
        // ell = 1, alphabet 2: rows alternate between two laws by centre state
        let rows = (0..8)
            .map(|i| if (i >> 1) & 1 == 0 { vec![0.2, 0.5, 0.3] } else { vec![0.25, 0.25, 0.5] })
            .collect();
        JumpKernel::new(1, 1, 0.1, 2, KernelTable::PerWord(rows)).unwrap()
    }

    #[test]
    fn uniform_floor() {
        for r in 1..5 {
            let k = JumpKernel::<f64>::uniform(r);
            assert!((validate_kernel(&k).unwrap() - 1.0 / (2 * r + 1) as f64).abs() < 1e-15);
        }
    }

    #[test]
    fn realized_floor_is_row_minimum() {
        assert_eq!(validate_kernel(&two_word_kernel()).unwrap(), 0.2);
    }

    #[test]
    fn zero_entry_is_reported() {
        let mut k = two_word_kernel();
        if let KernelTable::PerWord(rows) = &mut k.table {
            rows[5] = vec![0.0, 0.5, 0.5];
        }
        match validate_kernel(&k) {
            Err(Error::EllipticityViolation { word, displacement, value }) => {
                assert_eq!(word, vec![1, 0, 1]);
                assert_eq!(displacement, -1);
                assert_eq!(value, 0.0);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn inverse_cdf_examples() {
        let k = JumpKernel::word_independent(1, 0.2, vec![0.2, 0.5, 0.3]).unwrap();
        let w = [0u8, 0, 0];
        assert_eq!(k.jump(&w, 0.0).unwrap(), -1);
        assert_eq!(k.jump(&w, 0.65).unwrap(), 0);
        assert_eq!(k.jump(&w, 0.71).unwrap(), 1);
        assert_eq!(JumpKernel::<f64>::uniform(1).jump(&w, 0.5).unwrap(), 0);
        assert_eq!(JumpKernel::<f64>::uniform(2).jump(&[0; 3], 0.0).unwrap(), -2);
    }

    #[test]
    fn malformed_word() {
        let k = JumpKernel::<f64>::uniform(1);
        assert_eq!(k.jump(&[0, 1], 0.3), Err(Error::MalformedWord { expected: 3, got: 2 }));
    }

    #[test]
    fn rejects_bad_rows_and_floor() {
        assert!(JumpKernel::word_independent(1, 0.1, vec![0.2, 0.4, 0.3]).is_err());
        assert!(JumpKernel::word_independent(1, 0.4, vec![0.2, 0.5, 0.3]).is_err());
        assert!(JumpKernel::word_independent(1, 0.1, vec![0.5, 0.5]).is_err());
        assert!(JumpKernel::new(1, 1, 0.1, 2, KernelTable::PerWord(vec![vec![0.2, 0.5, 0.3]; 7])).is_err());
    }

    #[test]
    fn mirror_negates_exactly() {
        let k = two_word_kernel();
        let m = k.mirror();
        for idx in 0..k.word_count() {
            let mut w = k.decode_word(idx);
            let mut u = 0.0;
            while u < 1.0 {
                let d = k.jump(&w, u).unwrap();
                w.reverse();
                assert_eq!(m.jump(&w, u).unwrap(), -d);
                w.reverse();
                u += 0.001;
            }
        }
        assert_eq!(m.mirror().jump(&[0, 0, 0], 0.65).unwrap(), 0);
    }

    #[test]
    fn empirical_marginal_matches_row() {
        use crate::rng::{aux_uniform, SeedKey, Stream};
        let k = two_word_kernel();
        let key = SeedKey::new(3, Stream::AuxUniform);
        let n = 100_000u64;
        for idx in [0usize, 2] {
            let mut counts = [0u64; 3];
            for j in 0..n {
                counts[(k.jump_indexed(idx, aux_uniform(&key, j)) + 1) as usize] += 1;
            }
            for (c, p) in counts.iter().zip(k.row(idx)) {
                assert!((*c as f64 / n as f64 - p).abs() < 0.01);
            }
        }
    }

    #[test]
    fn single_precision_kernel() {
        let k = JumpKernel::<f32>::word_independent(1, 0.2, vec![0.2, 0.5, 0.3]).unwrap();
        assert_eq!(k.jump(&[0, 0, 0], 0.65).unwrap(), 0);
        assert_eq!(k.jump(&[0, 0, 0], 0.71).unwrap(), 1);
        assert!((validate_kernel(&k).unwrap() - 0.2).abs() < 1e-7);
    }
}
