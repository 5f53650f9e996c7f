//! Chains of complete commuting sets and the momentum maps that make one
//! positive phase-space density reproduce all their quantum marginals.
//!
//! The phase-space density is `ρ(x, p, t) = |ψ(x, t)|² Π_j δ(p_j - p̂_j(x, t))`.
//! Each delta condition matches a cumulative of one representation's density
//! against a cumulative of the next, conditioned on the variables the two
//! sets share: solving the first condition gives `p̂_1`, substituting it into
//! the second gives `p̂_2`, and so on. Every match carries a sign ε = ±1
//! selecting the nondecreasing or nonincreasing monotone rearrangement, for
//! 2ⁿ discrete sign branches in total.
//!
//! CDF tables are trapezoid cumulatives of the grid densities: the implied
//! density is piecewise linear between nodes, so the cumulative is evaluated
//! and inverted cell-by-cell as a quadratic. Sampling, matching and the
//! Kolmogorov-Smirnov verification all use the same tables, which keeps the
//! statistical tests free of discretization bias.

use ndarray::{Array2, ArrayD, IxDyn};

use crate::error::{CoreError, Result};
use crate::grid::{interp_linear, reduce_axis, AxisSpec, GridSpec};
use crate::rng;
use crate::wavepacket::{self, density_floor_mask, AxisRep, MixedState, WavefunctionState};

/// Conditioning slices whose mass falls below this fraction of the heaviest
/// slice are flagged invalid and filled from the nearest valid slice.
pub const SLICE_MASS_FLOOR_REL: f64 = 1e-8;

// ---------------------------------------------------------------------------
// signs and chains
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    pub fn flip(self) -> Self {
        match self {
            Sign::Plus => Sign::Minus,
            Sign::Minus => Sign::Plus,
        }
    }

    pub fn as_f64(self) -> f64 {
        match self {
            Sign::Plus => 1.0,
            Sign::Minus => -1.0,
        }
    }
}

/// One ε_j per axis: the monotone-branch selector of each delta condition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignVector(pub Vec<Sign>);

impl SignVector {
    pub fn plus(n: usize) -> Self {
        Self(vec![Sign::Plus; n])
    }

    /// Branch `index` encodes ε_j = -1 where bit j is set.
    pub fn from_branch_index(n: usize, index: usize) -> Self {
        Self(
            (0..n)
                .map(|j| {
                    if index >> j & 1 == 1 {
                        Sign::Minus
                    } else {
                        Sign::Plus
                    }
                })
                .collect(),
        )
    }

    pub fn branch_index(&self) -> usize {
        self.0
            .iter()
            .enumerate()
            .map(|(j, s)| if *s == Sign::Minus { 1 << j } else { 0 })
            .sum()
    }

    /// All 2ⁿ branches in index order.
    pub fn all_branches(n: usize) -> Vec<SignVector> {
        (0..1usize << n)
            .map(|i| Self::from_branch_index(n, i))
            .collect()
    }

    pub fn label(&self) -> String {
        self.0
            .iter()
            .map(|s| if *s == Sign::Plus { '+' } else { '-' })
            .collect()
    }
}

/// Which chain of n+1 CCS the map reproduces. For n = 2 three chains contain
/// the all-position set; n = 1 has a single chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChainVariant {
    /// (X1 X2) -> (P1 X2) -> (P1 P2); the default. For n = 1: (X) -> (P).
    Forward,
    /// (X1 P2) -> (X1 X2) -> (P1 X2): both momenta come from
    /// position-conditioned matches, no substitution step.
    Centered,
    /// (X1 X2) -> (X1 P2) -> (P1 P2): the axis-swapped mirror of `Forward`.
    Reversed,
}

impl ChainVariant {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "forward" => Some(Self::Forward),
            "centered" => Some(Self::Centered),
            "reversed" => Some(Self::Reversed),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Forward => "forward",
            Self::Centered => "centered",
            Self::Reversed => "reversed",
        }
    }
}

/// An ordered chain of n+1 complete commuting sets, each obtained from the
/// previous by conjugating exactly one axis; the all-position set is always a
/// member.
#[derive(Debug, Clone, PartialEq)]
pub struct CCSChain {
    pub n: usize,
    pub variant: ChainVariant,
    /// Representation tag of each CCS in chain order.
    pub tags: Vec<Vec<AxisRep>>,
    /// For each adjacent pair, the axis whose variable is conjugated.
    pub replaced_axis: Vec<usize>,
}

impl CCSChain {
    /// Complementary variables of each CCS (every flag flipped).
    pub fn complements(&self) -> Vec<Vec<AxisRep>> {
        self.tags
            .iter()
            .map(|tag| {
                tag.iter()
                    .map(|r| match r {
                        AxisRep::Position => AxisRep::Momentum,
                        AxisRep::Momentum => AxisRep::Position,
                    })
                    .collect()
            })
            .collect()
    }
}

/// Build the CCS chain for the given dimension and variant.
pub fn build_chain(n: usize, variant: ChainVariant) -> Result<CCSChain> {
    use AxisRep::{Momentum as P, Position as X};
    let chain = match (n, variant) {
        (1, ChainVariant::Forward) => CCSChain {
            n,
            variant,
            tags: vec![vec![X], vec![P]],
            replaced_axis: vec![0],
        },
        (2, ChainVariant::Forward) => CCSChain {
            n,
            variant,
            tags: vec![vec![X, X], vec![P, X], vec![P, P]],
            replaced_axis: vec![0, 1],
        },
        (2, ChainVariant::Centered) => CCSChain {
            n,
            variant,
            tags: vec![vec![X, P], vec![X, X], vec![P, X]],
            replaced_axis: vec![1, 0],
        },
        (2, ChainVariant::Reversed) => CCSChain {
            n,
            variant,
            tags: vec![vec![X, X], vec![X, P], vec![P, P]],
            replaced_axis: vec![1, 0],
        },
        (n, variant) => {
            return Err(CoreError::UnknownVariant {
                variant: variant.name().into(),
                n,
            })
        }
    };
    debug_assert!(chain.tags.iter().any(|t| t.iter().all(|r| *r == X)));
    Ok(chain)
}

// ---------------------------------------------------------------------------
// CDF tables
// ---------------------------------------------------------------------------

/// Cumulative distribution of a one-dimensional grid density.
///
/// Node cumulatives are trapezoid integrals, i.e. the density is treated as
/// piecewise linear between nodes; evaluation and inversion inside a cell
/// solve the corresponding quadratic exactly, with ties resolved to the
/// leftmost preimage.
#[derive(Debug, Clone)]
pub struct CdfTable {
    pub axis: AxisSpec,
    /// Node densities after renormalization.
    pub density: Vec<f64>,
    /// Node cumulatives: cum[0] = 0, cum[len-1] = 1.
    pub cum: Vec<f64>,
    /// Raw mass before renormalization.
    pub mass: f64,
    pub valid: bool,
    /// Indices of the conditioning point on the remaining axes.
    pub conditioning: Vec<usize>,
}

impl CdfTable {
    pub fn from_density(axis: AxisSpec, raw: &[f64], conditioning: Vec<usize>) -> Self {
        assert_eq!(raw.len(), axis.len);
        let d = axis.delta();
        let mut density: Vec<f64> = raw.iter().map(|&v| v.max(0.0)).collect();
        let mut cum = vec![0.0; raw.len()];
        for j in 1..raw.len() {
            cum[j] = cum[j - 1] + 0.5 * d * (density[j - 1] + density[j]);
        }
        let mass = cum[raw.len() - 1];
        let valid = mass > 0.0 && mass.is_finite();
        if valid {
            let inv = 1.0 / mass;
            for v in density.iter_mut() {
                *v *= inv;
            }
            for v in cum.iter_mut() {
                *v *= inv;
            }
            cum[raw.len() - 1] = 1.0;
        }
        Self {
            axis,
            density,
            cum,
            mass,
            valid,
            conditioning,
        }
    }

    /// Cumulative at an arbitrary abscissa (quadratic inside each cell).
    pub fn value_at(&self, x: f64) -> f64 {
        let n = self.axis.len;
        let lo = self.axis.lo;
        let d = self.axis.delta();
        if x <= lo {
            return 0.0;
        }
        let last = self.axis.point(n - 1);
        if x >= last {
            return 1.0;
        }
        let t = (x - lo) / d;
        let i = (t.floor() as usize).min(n - 2);
        let xi = t - i as f64;
        let da = self.density[i];
        let db = self.density[i + 1];
        let f = self.cum[i] + d * (da * xi + 0.5 * (db - da) * xi * xi);
        f.clamp(0.0, 1.0)
    }

    /// Leftmost preimage of a probability level.
    pub fn inverse(&self, u: f64) -> f64 {
        let n = self.axis.len;
        if u <= 0.0 {
            return self.axis.point(0);
        }
        if u >= 1.0 {
            // leftmost node where the cumulative reaches one
            let idx = self.cum.partition_point(|&c| c < 1.0);
            return self.axis.point(idx.min(n - 1));
        }
        // first node with cum >= u; the preimage lies in the cell before it
        let idx = self.cum.partition_point(|&c| c < u);
        if idx == 0 {
            return self.axis.point(0);
        }
        if self.cum[idx] == u {
            return self.axis.point(idx);
        }
        let i = idx - 1;
        let d = self.axis.delta();
        let rhs = (u - self.cum[i]) / d;
        let da = self.density[i];
        let db = self.density[i + 1];
        let b = db - da;
        let xi = if rhs <= 0.0 {
            0.0
        } else if b.abs() < 1e-14 * (da.abs() + db.abs()).max(1e-300) {
            if da > 0.0 {
                rhs / da
            } else {
                0.0
            }
        } else {
            let disc = (da * da + 2.0 * b * rhs).max(0.0);
            (disc.sqrt() - da) / b
        };
        self.axis.point(i) + xi.clamp(0.0, 1.0) * d
    }
}

fn slice_values(density: &ArrayD<f64>, axis: usize, c: usize, len: usize) -> Vec<f64> {
    let view = density
        .view()
        .into_dimensionality::<ndarray::Ix2>()
        .unwrap();
    (0..len)
        .map(|j| if axis == 0 { view[[j, c]] } else { view[[c, j]] })
        .collect()
}

/// Trapezoid cumulative of one conditional slice of a density, renormalized
/// to end at one. A slice is flagged invalid when its mass falls below
/// [`SLICE_MASS_FLOOR_REL`] times the heaviest slice along the same axis.
pub fn conditional_cdf(
    density: &ArrayD<f64>,
    axes: &[AxisSpec],
    axis: usize,
    conditioning: &[usize],
) -> CdfTable {
    match axes.len() {
        1 => {
            assert!(conditioning.is_empty());
            let raw: Vec<f64> = density.iter().cloned().collect();
            CdfTable::from_density(axes[0].clone(), &raw, vec![])
        }
        2 => {
            let other = 1 - axis;
            let c = conditioning[0];
            let mut table = CdfTable::from_density(
                axes[axis].clone(),
                &slice_values(density, axis, c, axes[axis].len),
                vec![c],
            );
            let peak = (0..axes[other].len)
                .map(|cc| {
                    CdfTable::from_density(
                        axes[axis].clone(),
                        &slice_values(density, axis, cc, axes[axis].len),
                        vec![cc],
                    )
                    .mass
                })
                .fold(0.0f64, f64::max);
            table.valid = table.valid && table.mass >= SLICE_MASS_FLOOR_REL * peak;
            table
        }
        _ => unreachable!(),
    }
}

/// Samples of the monotone map that matches one cumulative onto another.
#[derive(Debug, Clone)]
pub struct MapSamples {
    pub values: Vec<f64>,
    pub valid: bool,
}

/// For each source abscissa x, the level p with target-CDF(p) equal to the
/// source cumulative at x; the ε = -1 case uses the reflected source
/// cumulative 1 - CDF, realizing the `∫^{εx}` integration limit of the
/// matching condition. Nondecreasing for ε = +1, nonincreasing for ε = -1.
pub fn match_condition_invert(target: &CdfTable, source: &CdfTable, sign: Sign) -> MapSamples {
    if !target.valid || !source.valid {
        return MapSamples {
            values: vec![0.0; source.axis.len],
            valid: false,
        };
    }
    let values = source
        .cum
        .iter()
        .map(|&u| {
            let level = match sign {
                Sign::Plus => u,
                Sign::Minus => 1.0 - u,
            };
            target.inverse(level)
        })
        .collect();
    MapSamples {
        values,
        valid: true,
    }
}

// ---------------------------------------------------------------------------
// representation sets
// ---------------------------------------------------------------------------

/// The mixed representations (and their densities) of one state needed by a
/// chain, computed once and shared by map construction and verification.
#[derive(Debug, Clone)]
pub struct RepresentationSet {
    pub grid: GridSpec,
    pub time: f64,
    entries: Vec<(Vec<AxisRep>, MixedState, ArrayD<f64>)>,
}

impl RepresentationSet {
    pub fn compute(state: &WavefunctionState, chain: &CCSChain) -> Self {
        let mut entries: Vec<(Vec<AxisRep>, MixedState, ArrayD<f64>)> = Vec::new();
        for tag in &chain.tags {
            if entries.iter().any(|(t, _, _)| t == tag) {
                continue;
            }
            let mixed = wavepacket::to_mixed_representation(state, tag);
            let rho = wavepacket::density(&mixed);
            entries.push((tag.clone(), mixed, rho));
        }
        Self {
            grid: state.grid.clone(),
            time: state.time,
            entries,
        }
    }

    pub fn mixed(&self, tag: &[AxisRep]) -> &MixedState {
        &self
            .entries
            .iter()
            .find(|(t, _, _)| t == tag)
            .expect("representation not computed for this chain")
            .1
    }

    pub fn density(&self, tag: &[AxisRep]) -> &ArrayD<f64> {
        &self
            .entries
            .iter()
            .find(|(t, _, _)| t == tag)
            .expect("representation not computed for this chain")
            .2
    }

    pub fn domain_axes(&self, tag: &[AxisRep]) -> Vec<AxisSpec> {
        self.mixed(tag).domain_axes()
    }
}

// ---------------------------------------------------------------------------
// momentum maps
// ---------------------------------------------------------------------------

/// The fields p̂_j(x, t) carrying the delta-function support of the
/// phase-space density: one grid per momentum component over the position
/// grid.
#[derive(Debug, Clone)]
pub struct MomentumMap {
    pub grid: GridSpec,
    pub components: Vec<ArrayD<f64>>,
    pub valid: ArrayD<bool>,
    pub signs: SignVector,
    pub variant: ChainVariant,
    pub time: f64,
}

impl MomentumMap {
    /// Multilinear interpolation of all components at a physical point.
    pub fn at(&self, point: &[f64]) -> Vec<f64> {
        self.components
            .iter()
            .map(|c| interp_linear(c, &self.grid.axes, point))
            .collect()
    }
}

/// Coordinates expressed through momenta: the same delta conditions solved in
/// the opposite order, defined on the momentum grid.
#[derive(Debug, Clone)]
pub struct CoordinateMap {
    pub axes: Vec<AxisSpec>,
    pub components: Vec<ArrayD<f64>>,
    pub valid: ArrayD<bool>,
    pub signs: SignVector,
    pub variant: ChainVariant,
    pub time: f64,
}

impl CoordinateMap {
    pub fn at(&self, point: &[f64]) -> Vec<f64> {
        self.components
            .iter()
            .map(|c| interp_linear(c, &self.axes, point))
            .collect()
    }
}

/// Match the `replaced` axis of a pair of 2-D densities slice-by-slice over
/// the other axis. Returns the map samples indexed `(replaced index, slice
/// index)` plus per-slice validity; invalid slices are filled from the
/// nearest valid one.
fn matched_component_2d(
    src_density: &ArrayD<f64>,
    src_axes: &[AxisSpec],
    tgt_density: &ArrayD<f64>,
    tgt_axes: &[AxisSpec],
    replaced: usize,
    sign: Sign,
) -> (Array2<f64>, Vec<bool>) {
    let other = 1 - replaced;
    let n_cond = src_axes[other].len;
    let n_rep = src_axes[replaced].len;
    assert_eq!(tgt_axes[other].len, n_cond);

    let src_tables: Vec<CdfTable> = (0..n_cond)
        .map(|c| {
            CdfTable::from_density(
                src_axes[replaced].clone(),
                &slice_values(src_density, replaced, c, n_rep),
                vec![c],
            )
        })
        .collect();
    let tgt_tables: Vec<CdfTable> = (0..n_cond)
        .map(|c| {
            CdfTable::from_density(
                tgt_axes[replaced].clone(),
                &slice_values(tgt_density, replaced, c, tgt_axes[replaced].len),
                vec![c],
            )
        })
        .collect();
    let src_peak = src_tables.iter().map(|t| t.mass).fold(0.0f64, f64::max);
    let tgt_peak = tgt_tables.iter().map(|t| t.mass).fold(0.0f64, f64::max);

    let mut out = Array2::<f64>::zeros((n_rep, n_cond));
    let mut slice_ok = vec![false; n_cond];
    for c in 0..n_cond {
        let src = &src_tables[c];
        let tgt = &tgt_tables[c];
        let ok = src.valid
            && tgt.valid
            && src.mass >= SLICE_MASS_FLOOR_REL * src_peak
            && tgt.mass >= SLICE_MASS_FLOOR_REL * tgt_peak;
        slice_ok[c] = ok;
        if ok {
            let m = match_condition_invert(tgt, src, sign);
            for j in 0..n_rep {
                out[[j, c]] = m.values[j];
            }
        }
    }
    fill_invalid_slices(&mut out, &slice_ok);
    (out, slice_ok)
}

/// Copy each invalid slice (second index) from its nearest valid neighbour.
fn fill_invalid_slices(map: &mut Array2<f64>, ok: &[bool]) {
    let n = ok.len();
    if ok.iter().all(|&v| v) || ok.iter().all(|&v| !v) {
        return;
    }
    let copy = map.clone();
    for c in 0..n {
        if !ok[c] {
            let mut best = c;
            let mut dist = usize::MAX;
            for (cc, &good) in ok.iter().enumerate() {
                if good && cc.abs_diff(c) < dist {
                    dist = cc.abs_diff(c);
                    best = cc;
                }
            }
            for j in 0..map.shape()[0] {
                map[[j, c]] = copy[[j, best]];
            }
        }
    }
}

fn to_dyn(a: Array2<f64>) -> ArrayD<f64> {
    a.into_dyn()
}

/// Sequentially invert the chain's matching conditions into the momentum map
/// p̂(x, t) for the given sign branch.
pub fn momentum_map(
    reps: &RepresentationSet,
    chain: &CCSChain,
    signs: &SignVector,
) -> Result<MomentumMap> {
    let n = chain.n;
    if signs.0.len() != n {
        return Err(CoreError::SnapshotMismatch(format!(
            "sign vector has {} entries for n = {n}",
            signs.0.len()
        )));
    }
    use AxisRep::{Momentum as P, Position as X};
    let grid = reps.grid.clone();
    let pos_tag = vec![X; n];
    let rho_x = reps.density(&pos_tag);
    let floor = density_floor_mask(rho_x);

    if n == 1 {
        let src = conditional_cdf(rho_x, &grid.axes, 0, &[]);
        let mom_axes = reps.domain_axes(&[P]);
        let tgt = conditional_cdf(reps.density(&[P]), &mom_axes, 0, &[]);
        let m = match_condition_invert(&tgt, &src, signs.0[0]);
        if !m.valid {
            return Err(CoreError::Numerical(
                "momentum map: degenerate densities".into(),
            ));
        }
        let comp = ArrayD::from_shape_vec(IxDyn(&[grid.axes[0].len]), m.values).unwrap();
        return Ok(MomentumMap {
            grid,
            components: vec![comp],
            valid: floor,
            signs: signs.clone(),
            variant: chain.variant,
            time: reps.time,
        });
    }

    let (n0, n1) = (grid.axes[0].len, grid.axes[1].len);
    let mut valid = floor;
    let (p1, p2) = match chain.variant {
        ChainVariant::Forward => {
            let ax_xx = reps.domain_axes(&[X, X]);
            let ax_px = reps.domain_axes(&[P, X]);
            let ax_pp = reps.domain_axes(&[P, P]);
            let rho_px = reps.density(&[P, X]);
            let rho_pp = reps.density(&[P, P]);
            // p1(x1, x2) from matching along axis 0 at fixed x2
            let (p1, ok1) = matched_component_2d(rho_x, &ax_xx, rho_px, &ax_px, 0, signs.0[0]);
            // p2 on the (p1-grid, x2) domain from matching along axis 1 at
            // fixed p1; indexed (x2 index, p1 slice index)
            let (q2, ok2) = matched_component_2d(rho_px, &ax_px, rho_pp, &ax_pp, 1, signs.0[1]);
            // substitute p1 = p̂1(x)
            let p_axis = &ax_px[0];
            let mut p2 = Array2::<f64>::zeros((n0, n1));
            for j in 0..n0 {
                for k in 0..n1 {
                    let level = p1[[j, k]];
                    let t = p_axis.locate(level);
                    let i = (t.floor() as usize).min(p_axis.len - 2);
                    let w = t - i as f64;
                    p2[[j, k]] = q2[[k, i]] * (1.0 - w) + q2[[k, i + 1]] * w;
                    let in_range = level >= p_axis.lo && level <= p_axis.point(p_axis.len - 1);
                    valid[[j, k]] =
                        valid[[j, k]] && ok1[k] && ok2[i] && ok2[i + 1] && in_range;
                }
            }
            (p1, p2)
        }
        ChainVariant::Centered => {
            let ax_xx = reps.domain_axes(&[X, X]);
            let ax_px = reps.domain_axes(&[P, X]);
            let ax_xp = reps.domain_axes(&[X, P]);
            let rho_px = reps.density(&[P, X]);
            let rho_xp = reps.density(&[X, P]);
            let (p1, ok1) = matched_component_2d(rho_x, &ax_xx, rho_px, &ax_px, 0, signs.0[0]);
            // indexed (x2 index, x1 slice); transpose into (x1, x2)
            let (q2, ok2) = matched_component_2d(rho_x, &ax_xx, rho_xp, &ax_xp, 1, signs.0[1]);
            let p2 = q2.t().to_owned();
            for j in 0..n0 {
                for k in 0..n1 {
                    valid[[j, k]] = valid[[j, k]] && ok1[k] && ok2[j];
                }
            }
            (p1, p2)
        }
        ChainVariant::Reversed => {
            let ax_xx = reps.domain_axes(&[X, X]);
            let ax_xp = reps.domain_axes(&[X, P]);
            let ax_pp = reps.domain_axes(&[P, P]);
            let rho_xp = reps.density(&[X, P]);
            let rho_pp = reps.density(&[P, P]);
            // p2(x1, x2) from matching along axis 1 at fixed x1
            let (q_p2, ok2) = matched_component_2d(rho_x, &ax_xx, rho_xp, &ax_xp, 1, signs.0[1]);
            let p2 = q_p2.t().to_owned();
            // p1 on the (x1, p2-grid) domain at fixed p2; indexed
            // (x1 index, p2 slice index)
            let (q1, ok1) = matched_component_2d(rho_xp, &ax_xp, rho_pp, &ax_pp, 0, signs.0[0]);
            let p_axis = &ax_xp[1];
            let mut p1 = Array2::<f64>::zeros((n0, n1));
            for j in 0..n0 {
                for k in 0..n1 {
                    let level = p2[[j, k]];
                    let t = p_axis.locate(level);
                    let l = (t.floor() as usize).min(p_axis.len - 2);
                    let w = t - l as f64;
                    p1[[j, k]] = q1[[j, l]] * (1.0 - w) + q1[[j, l + 1]] * w;
                    let in_range = level >= p_axis.lo && level <= p_axis.point(p_axis.len - 1);
                    valid[[j, k]] =
                        valid[[j, k]] && ok2[j] && ok1[l] && ok1[l + 1] && in_range;
                }
            }
            (p1, p2)
        }
    };
    Ok(MomentumMap {
        grid,
        components: vec![to_dyn(p1), to_dyn(p2)],
        valid,
        signs: signs.clone(),
        variant: chain.variant,
        time: reps.time,
    })
}

/// Solve the delta conditions in the opposite order, expressing coordinates
/// through momenta. Defined for chains ending at the all-momentum set
/// (`Forward` and `Reversed`); composing with [`momentum_map`] is the
/// identity on valid points up to interpolation tolerance.
pub fn inverse_coordinate_map(
    reps: &RepresentationSet,
    chain: &CCSChain,
    signs: &SignVector,
) -> Result<CoordinateMap> {
    use AxisRep::{Momentum as P, Position as X};
    let n = chain.n;
    let grid = &reps.grid;

    if n == 1 {
        let rho_x = reps.density(&[X]);
        let mom_axes = reps.domain_axes(&[P]);
        let rho_p = reps.density(&[P]);
        let src = conditional_cdf(rho_x, &grid.axes, 0, &[]);
        let tgt = conditional_cdf(rho_p, &mom_axes, 0, &[]);
        // x̂(p) = S⁻¹(±T(p)): the forward match with the table roles swapped
        let m = match_condition_invert(&src, &tgt, signs.0[0]);
        let valid = density_floor_mask(rho_p);
        let comp = ArrayD::from_shape_vec(IxDyn(&[mom_axes[0].len]), m.values).unwrap();
        return Ok(CoordinateMap {
            axes: mom_axes,
            components: vec![comp],
            valid,
            signs: signs.clone(),
            variant: chain.variant,
            time: reps.time,
        });
    }

    if chain.variant == ChainVariant::Centered {
        return Err(CoreError::UnknownVariant {
            variant: "centered (the chain holds no all-momentum CCS to invert from)".into(),
            n,
        });
    }

    let ax_xx = reps.domain_axes(&[X, X]);
    let ax_pp = reps.domain_axes(&[P, P]);
    let rho_x = reps.density(&[X, X]);
    let rho_pp = reps.density(&[P, P]);
    let (n0, n1) = (ax_pp[0].len, ax_pp[1].len);
    let mut valid = density_floor_mask(rho_pp);

    let (x1, x2) = match chain.variant {
        ChainVariant::Forward => {
            let ax_px = reps.domain_axes(&[P, X]);
            let rho_px = reps.density(&[P, X]);
            // x2(p1, p2) from the last condition at fixed p1; indexed
            // (x2... replaced axis 1 of the momentum pair, slice = p1)
            let (x2q, ok2) = matched_component_2d(rho_pp, &ax_pp, rho_px, &ax_px, 1, signs.0[1]);
            let x2 = x2q.t().to_owned(); // (p1, p2)
            // x1 on the (p1, x2-grid) domain from the first condition at
            // fixed x2; indexed (p1 index, x2 slice index)
            let (q1, ok1) = matched_component_2d(rho_px, &ax_px, rho_x, &ax_xx, 0, signs.0[0]);
            let x_axis = &ax_px[1];
            let mut x1 = Array2::<f64>::zeros((n0, n1));
            for i in 0..n0 {
                for l in 0..n1 {
                    let level = x2[[i, l]];
                    let t = x_axis.locate(level);
                    let k = (t.floor() as usize).min(x_axis.len - 2);
                    let w = t - k as f64;
                    x1[[i, l]] = q1[[i, k]] * (1.0 - w) + q1[[i, k + 1]] * w;
                    let in_range = level >= x_axis.lo && level <= x_axis.point(x_axis.len - 1);
                    valid[[i, l]] =
                        valid[[i, l]] && ok2[i] && ok1[k] && ok1[k + 1] && in_range;
                }
            }
            (x1, x2)
        }
        ChainVariant::Reversed => {
            let ax_xp = reps.domain_axes(&[X, P]);
            let rho_xp = reps.density(&[X, P]);
            // x1(p1, p2) from the last condition at fixed p2
            let (x1, ok1) = matched_component_2d(rho_pp, &ax_pp, rho_xp, &ax_xp, 0, signs.0[0]);
            // x2 on the (x1-grid, p2) domain from the first condition at
            // fixed x1; indexed (x2... replaced axis 1, slice = x1)
            let (q2, ok2) = matched_component_2d(rho_xp, &ax_xp, rho_x, &ax_xx, 1, signs.0[1]);
            let x_axis = &ax_xp[0];
            let mut x2 = Array2::<f64>::zeros((n0, n1));
            for i in 0..n0 {
                for l in 0..n1 {
                    let level = x1[[i, l]];
                    let t = x_axis.locate(level);
                    let k = (t.floor() as usize).min(x_axis.len - 2);
                    let w = t - k as f64;
                    x2[[i, l]] = q2[[l, k]] * (1.0 - w) + q2[[l, k + 1]] * w;
                    let in_range = level >= x_axis.lo && level <= x_axis.point(x_axis.len - 1);
                    valid[[i, l]] =
                        valid[[i, l]] && ok1[l] && ok2[k] && ok2[k + 1] && in_range;
                }
            }
            (x1, x2)
        }
        ChainVariant::Centered => unreachable!(),
    };
    Ok(CoordinateMap {
        axes: ax_pp,
        components: vec![to_dyn(x1), to_dyn(x2)],
        valid,
        signs: signs.clone(),
        variant: chain.variant,
        time: reps.time,
    })
}

// ---------------------------------------------------------------------------
// sampling
// ---------------------------------------------------------------------------

/// Inverse-CDF sampling of a grid density, conditional axis by axis.
///
/// The sampled law is exactly the normalized multilinear interpolant of the
/// grid values, whose one-dimensional projections coincide with the
/// trapezoid-reduced grid marginals — the same objects the verification
/// tables are built from. Deterministic for a fixed seed; sample `s` consumes
/// the counter words `{n s, .., n s + n - 1}` only, so index ranges can be
/// split across workers.
pub fn sample_positions(
    density: &ArrayD<f64>,
    axes: &[AxisSpec],
    n_samples: usize,
    seed: u64,
) -> Array2<f64> {
    let ndim = axes.len();
    let mut out = Array2::<f64>::zeros((n_samples, ndim));
    match ndim {
        1 => {
            let raw: Vec<f64> = density.iter().cloned().collect();
            let table = CdfTable::from_density(axes[0].clone(), &raw, vec![]);
            for s in 0..n_samples {
                out[[s, 0]] = table.inverse(rng::uniform_at(seed, s as u64));
            }
        }
        2 => {
            let view = density
                .view()
                .into_dimensionality::<ndarray::Ix2>()
                .unwrap();
            let marginal = reduce_axis(density, axes, 1);
            let m_table = CdfTable::from_density(axes[0].clone(), &marginal, vec![]);
            let n1 = axes[1].len;
            let mut cond = vec![0.0; n1];
            for s in 0..n_samples {
                let u0 = rng::uniform_at(seed, 2 * s as u64);
                let u1 = rng::uniform_at(seed, 2 * s as u64 + 1);
                let x0 = m_table.inverse(u0);
                let t = axes[0].locate(x0);
                let j = (t.floor() as usize).min(axes[0].len - 2);
                let w = t - j as f64;
                for (k, c) in cond.iter_mut().enumerate() {
                    *c = view[[j, k]] * (1.0 - w) + view[[j + 1, k]] * w;
                }
                let c_table = CdfTable::from_density(axes[1].clone(), &cond, vec![]);
                out[[s, 0]] = x0;
                out[[s, 1]] = c_table.inverse(u1);
            }
        }
        _ => unreachable!(),
    }
    out
}

// ---------------------------------------------------------------------------
// Kolmogorov-Smirnov verification
// ---------------------------------------------------------------------------

/// One-sample KS distance between samples and a tabulated reference CDF.
pub fn ks_distance(values: &[f64], reference: &CdfTable) -> f64 {
    let mut u: Vec<f64> = values.iter().map(|&v| reference.value_at(v)).collect();
    u.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
    let n = u.len() as f64;
    let mut d = 0.0f64;
    for (i, &ui) in u.iter().enumerate() {
        d = d.max(ui - i as f64 / n);
        d = d.max((i + 1) as f64 / n - ui);
    }
    d
}

/// Asymptotic KS critical value `c(α)/√N` with `c = sqrt(-ln(α/2)/2)`;
/// α = 0.01 gives c ≈ 1.628.
pub fn ks_critical(n_samples: usize, alpha: f64) -> f64 {
    (-0.5 * (alpha / 2.0).ln()).sqrt() / (n_samples as f64).sqrt()
}

/// KS distances of one marginal family: per-axis projections of one CCS.
#[derive(Debug, Clone)]
pub struct FamilyReport {
    pub tag: Vec<AxisRep>,
    pub ks: Vec<f64>,
}

/// Statistical marginal-reproduction report for one map and sign branch.
#[derive(Debug, Clone)]
pub struct MarginalReport {
    pub families: Vec<FamilyReport>,
    pub n_samples: usize,
    pub seed: u64,
    pub critical: f64,
    pub invalid_mass_fraction: f64,
}

impl MarginalReport {
    pub fn max_ks(&self) -> f64 {
        self.families
            .iter()
            .flat_map(|f| f.ks.iter())
            .cloned()
            .fold(0.0, f64::max)
    }

    pub fn all_pass(&self) -> bool {
        self.max_ks() < self.critical
    }
}

/// Momenta attached to positions through the map (multilinear interpolation
/// of the map grids).
pub fn transport(map: &MomentumMap, positions: &Array2<f64>) -> Array2<f64> {
    let n = map.components.len();
    let mut out = Array2::<f64>::zeros((positions.shape()[0], n));
    let mut point = vec![0.0; positions.shape()[1]];
    for s in 0..positions.shape()[0] {
        for (d, p) in point.iter_mut().enumerate() {
            *p = positions[[s, d]];
        }
        for (c, comp) in map.components.iter().enumerate() {
            out[[s, c]] = interp_linear(comp, &map.grid.axes, &point);
        }
    }
    out
}

/// Draw positions from |ψ(x, t)|², transport them through the map and test
/// every one-dimensional projection of every CCS in the chain against its
/// quantum marginal. Errors if invalid map regions carry more than 1% of the
/// total mass.
pub fn verify_marginals(
    map: &MomentumMap,
    reps: &RepresentationSet,
    chain: &CCSChain,
    n_samples: usize,
    seed: u64,
) -> Result<MarginalReport> {
    if n_samples < 10_000 {
        return Err(CoreError::InvalidSpec(format!(
            "verify_marginals: at least 10^4 samples required, got {n_samples}"
        )));
    }
    let n = chain.n;
    let pos_tag = vec![AxisRep::Position; n];
    let rho = reps.density(&pos_tag);

    let cell = reps.grid.cell_volume();
    let total: f64 = rho.iter().sum::<f64>() * cell;
    let invalid_mass: f64 = rho
        .iter()
        .zip(map.valid.iter())
        .filter(|(_, ok)| !**ok)
        .map(|(r, _)| r)
        .sum::<f64>()
        * cell;
    let invalid_mass_fraction = invalid_mass / total;
    if invalid_mass_fraction > 0.01 {
        return Err(CoreError::InvalidMapMass {
            fraction: invalid_mass_fraction,
            limit: 0.01,
        });
    }

    let samples = sample_positions(rho, &reps.grid.axes, n_samples, seed);
    let momenta = transport(map, &samples);

    let mut families = Vec::new();
    for tag in &chain.tags {
        let dens = reps.density(tag);
        let axes = reps.domain_axes(tag);
        let mut ks = Vec::new();
        for a in 0..n {
            let marginal: Vec<f64> = if n == 1 {
                dens.iter().cloned().collect()
            } else {
                reduce_axis(dens, &axes, 1 - a)
            };
            let table = CdfTable::from_density(axes[a].clone(), &marginal, vec![]);
            let values: Vec<f64> = (0..n_samples)
                .map(|s| match tag[a] {
                    AxisRep::Position => samples[[s, a]],
                    AxisRep::Momentum => momenta[[s, a]],
                })
                .collect();
            ks.push(ks_distance(&values, &table));
        }
        families.push(FamilyReport {
            tag: tag.clone(),
            ks,
        });
    }
    Ok(MarginalReport {
        families,
        n_samples,
        seed,
        critical: ks_critical(n_samples, 0.01),
        invalid_mass_fraction,
    })
}

// ---------------------------------------------------------------------------
// phase-space densities
// ---------------------------------------------------------------------------

/// A realized phase-space density: either the delta-supported form
/// `|ψ(x)|² Π δ(p - p̂(x))` or the product fixture `|ψ(x)|²|ψ̃(p)|²`, which
/// reproduces the position and momentum marginals but carries no momentum
/// map. Positivity is structural in both cases.
#[derive(Debug, Clone)]
pub enum PhaseSpaceDensity {
    DeltaSupport {
        grid: GridSpec,
        position_density: ArrayD<f64>,
        map: MomentumMap,
    },
    Product {
        position_axes: Vec<AxisSpec>,
        position_density: ArrayD<f64>,
        momentum_axes: Vec<AxisSpec>,
        momentum_density: ArrayD<f64>,
    },
}

impl PhaseSpaceDensity {
    /// Sample (x, p) events: the delta form transports positions through the
    /// map; the product form draws positions and momenta independently.
    pub fn sample_events(&self, n_samples: usize, seed: u64) -> (Array2<f64>, Array2<f64>) {
        match self {
            PhaseSpaceDensity::DeltaSupport {
                grid,
                position_density,
                map,
            } => {
                let xs = sample_positions(position_density, &grid.axes, n_samples, seed);
                let ps = transport(map, &xs);
                (xs, ps)
            }
            PhaseSpaceDensity::Product {
                position_axes,
                position_density,
                momentum_axes,
                momentum_density,
            } => {
                let xs = sample_positions(position_density, position_axes, n_samples, seed);
                let ps =
                    sample_positions(momentum_density, momentum_axes, n_samples, seed ^ 0x9e37);
                (xs, ps)
            }
        }
    }
}
