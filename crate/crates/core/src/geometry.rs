//! Intervals, boxes, allowed paths, rounded points, the scale ladder and
//! pavings of a box by intervals.

use serde::{Deserialize, Serialize};

use crate::environment::LatticeBox;
use crate::error::{Error, Result};
use crate::rng::SpaceTimePoint;
use crate::scalar::{div_floor, Scalar};

/// A point of `R × N`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RealAnchor<T> {
    pub x: T,
    pub n: u64,
}

impl<T: Scalar> RealAnchor<T> {
    pub fn new(x: T, n: u64) -> Self {
        RealAnchor { x, n }
    }

    pub fn origin() -> Self {
        RealAnchor { x: T::zero(), n: 0 }
    }

    pub fn from_point(p: SpaceTimePoint) -> Self {
        RealAnchor { x: T::from_i64(p.x), n: p.n }
    }

    /// `self + (dx, dn)`.
    pub fn shift(&self, dx: T, dn: u64) -> Self {
        RealAnchor { x: self.x + dx, n: self.n + dn }
    }
}

/// Half-open box `[x_lo, x_hi) × [n_lo, n_hi)` with real horizontal sides.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxSpec<T> {
    pub x_lo: T,
    pub x_hi: T,
    pub n_lo: u64,
    pub n_hi: u64,
}

impl<T: Scalar> BoxSpec<T> {
    pub fn contains(&self, p: SpaceTimePoint) -> bool {
        let x = T::from_i64(p.x);
        self.x_lo <= x && x < self.x_hi && self.n_lo <= p.n && p.n < self.n_hi
    }

    pub fn width(&self) -> T {
        self.x_hi - self.x_lo
    }

    pub fn height(&self) -> u64 {
        self.n_hi - self.n_lo
    }

    /// Lattice cells of the box.
    pub fn lattice(&self) -> LatticeBox {
        LatticeBox::new(self.x_lo.ceil_i64(), self.x_hi.ceil_i64(), self.n_lo, self.n_hi)
    }
}

/// Lattice sites in `[lo, lo + len)`.
fn sites_in<T: Scalar>(lo: T, len: T) -> std::ops::Range<i64> {
    lo.ceil_i64()..(lo + len).ceil_i64()
}

/// `I_H(w)`: lattice points at time `w.n` with site in `[w.x, w.x + H)`.
pub fn interval_points<T: Scalar>(w: &RealAnchor<T>, h: T) -> Vec<SpaceTimePoint> {
    if !(h > T::zero()) {
        return Vec::new();
    }
    sites_in(w.x, h).map(|x| SpaceTimePoint::new(x, w.n)).collect()
}

/// `B_H(w) = w + [-(R+1)H, (R+2)H) × [0, H)`. The time extent is `⌈H⌉`
/// lattice rows.
pub fn box_of<T: Scalar>(w: &RealAnchor<T>, h: T, range: i64) -> BoxSpec<T> {
    let r = T::from_i64(range);
    let one = T::one();
    BoxSpec {
        x_lo: w.x - (r + one) * h,
        x_hi: w.x + (r + one + one) * h,
        n_lo: w.n,
        n_hi: w.n + h.ceil_i64().max(0) as u64,
    }
}

/// Nearest-neighbour-in-time path with increments bounded by `R`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AllowedPath {
    pub points: Vec<SpaceTimePoint>,
}

impl AllowedPath {
    pub fn new(points: Vec<SpaceTimePoint>, range: i64) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidParams("allowed path needs at least one point".into()));
        }
        for w in points.windows(2) {
            if w[1].n != w[0].n + 1 || (w[1].x - w[0].x).abs() > range {
                return Err(Error::InvalidParams(format!("{:?} -> {:?} is not an allowed step", w[0], w[1])));
            }
        }
        Ok(AllowedPath { points })
    }

    /// Steps taken (points minus one).
    pub fn len(&self) -> usize {
        self.points.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.points.len() == 1
    }
}

/// Whether every point of the path, widened by `[-ℓ, ℓ]`, lies in `B_H(w)`.
/// Errors if the path does not start in `I_H(w)`.
pub fn path_localized<T: Scalar>(path: &AllowedPath, w: &RealAnchor<T>, h: T, ell: usize, range: i64) -> Result<bool> {
    if !interval_points(w, h).contains(&path.points[0]) {
        return Err(Error::StartOutsideInterval);
    }
    let b = box_of(w, h, range);
    let ell = ell as i64;
    Ok(path
        .points
        .iter()
        .all(|p| b.contains(SpaceTimePoint::new(p.x - ell, p.n)) && b.contains(SpaceTimePoint::new(p.x + ell, p.n))))
}

/// One rung `(L_k, l_k)` of the ladder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Level {
    pub big: u64,
    pub small: u64,
}

/// `L_{k+1} = l_k L_k` with `l_k = ⌊L_k^{1/4}⌋`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScaleLadder {
    pub l0: u64,
    /// Levels `0..=k_max`.
    pub levels: Vec<Level>,
}

impl ScaleLadder {
    /// `L_k`, available up to `k_max + 1`.
    pub fn big(&self, k: usize) -> u64 {
        if k < self.levels.len() {
            self.levels[k].big
        } else {
            assert_eq!(k, self.levels.len(), "level {k} beyond ladder");
            let last = self.levels[k - 1];
            last.big * last.small
        }
    }

    pub fn small(&self, k: usize) -> u64 {
        self.levels[k].small
    }

    pub fn k_max(&self) -> usize {
        self.levels.len() - 1
    }
}

/// `⌊n^{1/4}⌋` in exact integer arithmetic.
pub fn fourth_root_floor(n: u64) -> u64 {
    let mut r = (n as f64).powf(0.25) as u64;
    let pow4 = |r: u64| r.checked_pow(4);
    while pow4(r).is_none_or(|p| p > n) {
        r -= 1;
    }
    while pow4(r + 1).is_some_and(|p| p <= n) {
        r += 1;
    }
    r
}

pub fn ladder(l0: u64, k_max: usize) -> Result<ScaleLadder> {
    if l0 < 2 {
        return Err(Error::InvalidLadder(format!("L0 must be at least 2, got {l0}")));
    }
    let mut levels = Vec::with_capacity(k_max + 1);
    let mut big = l0;
    for k in 0..=k_max {
        let small = fourth_root_floor(big);
        if small < 2 {
            return Err(Error::InvalidLadder(format!("l_{k} = {small} stalls the ladder (L_{k} = {big})")));
        }
        levels.push(Level { big, small });
        big = big
            .checked_mul(small)
            .ok_or_else(|| Error::InvalidLadder(format!("L_{} overflows 64 bits", k + 1)))?;
    }
    Ok(ScaleLadder { l0, levels })
}

/// Spacing `⌊δ h_k / 4⌋` of the rounding grid.
pub fn rounding_grid<T: Scalar>(delta: T, h_k: T) -> Result<i64> {
    let dh = delta * h_k;
    let grid = (dh / T::from_i64(4)).floor_i64();
    if grid < 1 {
        return Err(Error::GridTooCoarse { delta_h: dh.to_f64() });
    }
    Ok(grid)
}

/// `⌊y⌋_k`: the closest grid point at or to the left of `y`.
pub fn rounded_point<T: Scalar>(y: SpaceTimePoint, delta: T, h_k: T) -> Result<SpaceTimePoint> {
    let grid = rounding_grid(delta, h_k)?;
    Ok(SpaceTimePoint::new(div_floor(y.x, grid) * grid, y.n))
}

/// Anchors `base + (-(R+1)·cell·blocks + i·cell, j·cell)` for
/// `i < (2R+3)·blocks`, `j < blocks`, whose length-`cell` intervals tile
/// `B_{cell·blocks}(base) ∩ (R × (base.n + cell·Z))`.
pub fn pave<T: Scalar>(base: &RealAnchor<T>, cell: u64, blocks: u64, range: i64) -> Vec<RealAnchor<T>> {
    let c = T::from_i64(cell as i64);
    let left = base.x - T::from_i64((range + 1) * (cell * blocks) as i64);
    let cols = (2 * range as u64 + 3) * blocks;
    let mut out = Vec::with_capacity((cols * blocks) as usize);
    for j in 0..blocks {
        for i in 0..cols {
            out.push(RealAnchor::new(left + T::from_i64(i as i64) * c, base.n + j * cell));
        }
    }
    out
}

/// The paving of `B_{h L_{k+1}}` by intervals of length `h L_k`.
pub fn paving<T: Scalar>(h: u64, ladder: &ScaleLadder, k: usize, range: i64) -> Result<Vec<RealAnchor<T>>> {
    if k > ladder.k_max() {
        return Err(Error::InvalidLadder(format!("level {k} beyond k_max = {}", ladder.k_max())));
    }
    Ok(pave(&RealAnchor::origin(), h * ladder.big(k), ladder.small(k), range))
}
