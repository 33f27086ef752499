//! Single-mode stochastic hybrid system: polynomial drift and diffusion on a
//! truncated box, one axis-aligned guard facet and an affine reset.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::polyalg::{MultiIndex, Polynomial};

/// Axis-aligned box; Lebesgue measure on it is the reference measure for every
/// density and integral in the crate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxDomain {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl BoxDomain {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::DimensionMismatch {
                expected: lower.len(),
                found: upper.len(),
            });
        }
        for (i, (lo, hi)) in lower.iter().zip(&upper).enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::invalid(
                    "domain",
                    format!("axis {i}: need finite lower < upper, got [{lo}, {hi}]"),
                ));
            }
        }
        Ok(BoxDomain { lower, upper })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn volume(&self) -> f64 {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(lo, hi)| hi - lo)
            .product()
    }

    pub fn center(&self) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(lo, hi)| 0.5 * (lo + hi))
            .collect()
    }

    pub fn half_widths(&self) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(lo, hi)| 0.5 * (hi - lo))
            .collect()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(&xi, (&lo, &hi))| xi >= lo && xi <= hi)
    }

    /// Closure membership with slack `tol` per axis.
    pub fn contains_approx(&self, x: &[f64], tol: f64) -> bool {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(&xi, (&lo, &hi))| xi >= lo - tol && xi <= hi + tol)
    }

    pub fn project(&self, x: &mut [f64]) {
        for (xi, (&lo, &hi)) in x.iter_mut().zip(self.lower.iter().zip(&self.upper)) {
            *xi = xi.clamp(lo, hi);
        }
    }
}

/// Guard facet `{x_axis = level}` intersected with interval constraints on the
/// remaining axes.
#[derive(Clone, Debug, PartialEq)]
pub struct GuardFacet {
    axis: usize,
    level: f64,
    /// One `(lo, hi)` per remaining axis, in increasing axis order; may be infinite.
    constraints: Vec<(f64, f64)>,
    outward_normal: Vec<f64>,
}

impl GuardFacet {
    /// `outward_sign` is the sign of the normal component along `axis`.
    pub fn new(
        dim: usize,
        axis: usize,
        level: f64,
        constraints: Vec<(f64, f64)>,
        outward_sign: f64,
    ) -> Result<Self> {
        if axis >= dim {
            return Err(Error::invalid(
                "guard.axis",
                format!("{axis} out of range for dimension {dim}"),
            ));
        }
        if constraints.len() + 1 != dim {
            return Err(Error::invalid(
                "guard.constraints",
                format!("need {} intervals, got {}", dim - 1, constraints.len()),
            ));
        }
        if outward_sign.abs() != 1.0 {
            return Err(Error::invalid(
                "guard.normal",
                "outward normal component must be +1 or -1",
            ));
        }
        if constraints.iter().any(|(lo, hi)| !(lo < hi)) {
            return Err(Error::invalid(
                "guard.constraints",
                "each interval needs lo < hi",
            ));
        }
        let mut outward_normal = vec![0.0; dim];
        outward_normal[axis] = outward_sign;
        Ok(GuardFacet {
            axis,
            level,
            constraints,
            outward_normal,
        })
    }

    pub fn axis(&self) -> usize {
        self.axis
    }

    pub fn level(&self) -> f64 {
        self.level
    }

    pub fn constraints(&self) -> &[(f64, f64)] {
        &self.constraints
    }

    pub fn outward_normal(&self) -> &[f64] {
        &self.outward_normal
    }

    pub fn dim(&self) -> usize {
        self.outward_normal.len()
    }

    /// Coordinates of `x` on the remaining axes.
    pub fn facet_coords(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .enumerate()
            .filter(|(i, _)| *i != self.axis)
            .map(|(_, &v)| v)
            .collect()
    }

    /// Embed facet coordinates back into ℝⁿ with the pinned coordinate at `level`.
    pub fn embed(&self, facet: &[f64]) -> Vec<f64> {
        let mut x = Vec::with_capacity(facet.len() + 1);
        x.extend_from_slice(&facet[..self.axis]);
        x.push(self.level);
        x.extend_from_slice(&facet[self.axis..]);
        x
    }

    /// Whether the remaining coordinates satisfy the open interval constraints.
    pub fn admits(&self, x: &[f64]) -> bool {
        self.facet_coords(x)
            .iter()
            .zip(&self.constraints)
            .all(|(&v, &(lo, hi))| v > lo && v < hi)
    }

    /// Facet ∩ domain as `(lo, hi)` per remaining axis.
    pub fn clipped_intervals(&self, domain: &BoxDomain) -> Result<Vec<(f64, f64)>> {
        let mut out = Vec::with_capacity(self.constraints.len());
        let mut k = 0;
        for i in 0..domain.dim() {
            if i == self.axis {
                continue;
            }
            let (clo, chi) = self.constraints[k];
            let lo = clo.max(domain.lower()[i]);
            let hi = chi.min(domain.upper()[i]);
            if !(lo < hi) {
                return Err(Error::EmptyFacet);
            }
            out.push((lo, hi));
            k += 1;
        }
        Ok(out)
    }
}

/// Deterministic affine map `x ↦ Ax + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct AffineMap {
    pub matrix: DMatrix<f64>,
    pub offset: DVector<f64>,
}

impl AffineMap {
    pub fn new(matrix: DMatrix<f64>, offset: DVector<f64>) -> Result<Self> {
        if !matrix.is_square() || matrix.nrows() != offset.len() {
            return Err(Error::Shape(format!(
                "reset must be square n×n with offset n; got {}×{} and {}",
                matrix.nrows(),
                matrix.ncols(),
                offset.len()
            )));
        }
        Ok(AffineMap { matrix, offset })
    }

    pub fn identity(n: usize) -> Self {
        AffineMap {
            matrix: DMatrix::identity(n, n),
            offset: DVector::zeros(n),
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let v = &self.matrix * DVector::from_column_slice(x) + &self.offset;
        v.iter().copied().collect()
    }
}

/// Guard facet with its reset map `Δ`.
#[derive(Clone, Debug, PartialEq)]
pub struct Guard {
    pub facet: GuardFacet,
    pub reset: AffineMap,
}

/// Single-mode SHS: `dx = X(x)dt + h(x)dW` inside the domain, `x⁺ = Δ(x⁻)` on the guard.
#[derive(Clone, Debug)]
pub struct ShsModel {
    dim: usize,
    drift: Vec<Polynomial>,
    diffusion: Vec<Vec<Polynomial>>,
    /// `H = ½ h hᵀ`
    diffusion_matrix: Vec<Vec<Polynomial>>,
    guard: Option<Guard>,
    domain: BoxDomain,
}

impl ShsModel {
    /// `diffusion` is `n × n_w` (rows indexed by state axis).
    pub fn new(
        drift: Vec<Polynomial>,
        diffusion: Vec<Vec<Polynomial>>,
        guard: Option<Guard>,
        domain: BoxDomain,
    ) -> Result<Self> {
        let dim = domain.dim();
        if drift.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: drift.len(),
            });
        }
        if diffusion.len() != dim {
            return Err(Error::Shape(format!(
                "diffusion needs {dim} rows, got {}",
                diffusion.len()
            )));
        }
        let nw = diffusion[0].len();
        if diffusion.iter().any(|row| row.len() != nw) {
            return Err(Error::Shape("diffusion rows have unequal length".into()));
        }
        for p in drift.iter().chain(diffusion.iter().flatten()) {
            if p.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: p.dim(),
                });
            }
        }
        let mut diffusion_matrix = vec![vec![Polynomial::zero(dim); dim]; dim];
        for i in 0..dim {
            for j in 0..dim {
                let mut acc = Polynomial::zero(dim);
                for k in 0..nw {
                    acc = &acc + &(&diffusion[i][k] * &diffusion[j][k]);
                }
                diffusion_matrix[i][j] = acc.scale(0.5);
            }
        }
        if let Some(g) = &guard {
            if g.facet.dim() != dim || g.reset.matrix.nrows() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: g.facet.dim(),
                });
            }
            check_reset_closure(g, &domain)?;
        }
        Ok(ShsModel {
            dim,
            drift,
            diffusion,
            diffusion_matrix,
            guard,
            domain,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn drift(&self) -> &[Polynomial] {
        &self.drift
    }

    pub fn diffusion(&self) -> &[Vec<Polynomial>] {
        &self.diffusion
    }

    pub fn noise_dim(&self) -> usize {
        self.diffusion[0].len()
    }

    pub fn diffusion_matrix(&self) -> &[Vec<Polynomial>] {
        &self.diffusion_matrix
    }

    pub fn guard(&self) -> Option<&Guard> {
        self.guard.as_ref()
    }

    pub fn domain(&self) -> &BoxDomain {
        &self.domain
    }

    pub fn with_domain(&self, domain: BoxDomain) -> Result<ShsModel> {
        ShsModel::new(
            self.drift.clone(),
            self.diffusion.clone(),
            self.guard.clone(),
            domain,
        )
    }

    pub fn has_zero_diffusion(&self) -> bool {
        self.diffusion.iter().flatten().all(Polynomial::is_zero)
    }

    pub fn drift_at(&self, x: &[f64], out: &mut [f64]) {
        for (o, p) in out.iter_mut().zip(&self.drift) {
            *o = p.eval(x);
        }
    }

    /// `h(x) ξ` for a noise sample `ξ ∈ ℝ^{n_w}`.
    pub fn diffusion_times(&self, x: &[f64], xi: &[f64], out: &mut [f64]) {
        for (o, row) in out.iter_mut().zip(&self.diffusion) {
            *o = row
                .iter()
                .zip(xi)
                .map(|(p, &z)| if p.is_zero() { 0.0 } else { p.eval(x) * z })
                .sum();
        }
    }
}

fn check_reset_closure(guard: &Guard, domain: &BoxDomain) -> Result<()> {
    let intervals = guard.facet.clipped_intervals(domain)?;
    // Corners and midpoint of the clipped facet.
    let m = intervals.len();
    let mut samples: Vec<Vec<f64>> = Vec::new();
    for mask in 0..(1usize << m) {
        samples.push(
            (0..m)
                .map(|k| {
                    if mask >> k & 1 == 1 {
                        intervals[k].1
                    } else {
                        intervals[k].0
                    }
                })
                .collect(),
        );
    }
    samples.push(intervals.iter().map(|(lo, hi)| 0.5 * (lo + hi)).collect());
    let scale: f64 = domain.half_widths().iter().cloned().fold(0.0, f64::max);
    for s in samples {
        let x = guard.facet.embed(&s);
        let y = guard.reset.apply(&x);
        if !domain.contains_approx(&y, 1e-9 * scale) {
            return Err(Error::invalid(
                "reset",
                format!("guard point {x:?} maps to {y:?}, outside the domain"),
            ));
        }
    }
    Ok(())
}

/// Interior generator `Af = ∇f·X + Tr(H ∇²f)`.
pub fn generator_apply(model: &ShsModel, f: &Polynomial) -> Result<Polynomial> {
    let n = model.dim;
    if f.dim() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: f.dim(),
        });
    }
    let mut out = Polynomial::zero(n);
    let grads: Vec<Polynomial> = (0..n).map(|i| f.diff(i)).collect();
    for i in 0..n {
        if !grads[i].is_zero() {
            out = &out + &(&model.drift[i] * &grads[i]);
        }
    }
    for i in 0..n {
        if grads[i].is_zero() {
            continue;
        }
        for j in 0..n {
            let h = &model.diffusion_matrix[i][j];
            if h.is_zero() {
                continue;
            }
            let second = grads[i].diff(j);
            if !second.is_zero() {
                out = &out + &(h * &second);
            }
        }
    }
    Ok(out)
}

/// `f∘Δ − f` restricted to the guard facet: the pinned coordinate is
/// substituted by its level, so the result lives on the remaining `n−1` axes.
pub fn reset_jump_polynomial(model: &ShsModel, f: &Polynomial) -> Result<Polynomial> {
    let guard = model.guard.as_ref().ok_or(Error::NoGuard)?;
    if f.dim() != model.dim {
        return Err(Error::DimensionMismatch {
            expected: model.dim,
            found: f.dim(),
        });
    }
    let pulled = f.affine_substitute(&guard.reset.matrix, &guard.reset.offset)?;
    Ok((&pulled - f).pin(guard.facet.axis, guard.facet.level))
}

/// Physical constants of the stochastic bouncing ball.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BouncingBallParams {
    /// Gravitational acceleration, m/s².
    pub gravity: f64,
    /// Linear drag, 1/s.
    pub drag: f64,
    /// Velocity noise intensity, m/s^{3/2}.
    pub noise: f64,
    /// Restitution coefficient.
    pub restitution: f64,
    pub domain_lower: [f64; 2],
    pub domain_upper: [f64; 2],
}

impl Default for BouncingBallParams {
    fn default() -> Self {
        BouncingBallParams {
            gravity: 9.81,
            drag: 0.5,
            noise: 0.5,
            restitution: 0.8,
            domain_lower: [0.0, -6.0],
            domain_upper: [3.0, 6.0],
        }
    }
}

impl BouncingBallParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.gravity > 0.0 && self.gravity.is_finite()) {
            return Err(Error::invalid(
                "gravity",
                format!("must be > 0, got {}", self.gravity),
            ));
        }
        if !(self.drag > 0.0 && self.drag.is_finite()) {
            return Err(Error::invalid(
                "drag",
                format!("must be > 0, got {}", self.drag),
            ));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::invalid(
                "noise",
                format!("must be >= 0, got {}", self.noise),
            ));
        }
        if !(self.restitution > 0.0 && self.restitution <= 1.0) {
            return Err(Error::invalid(
                "restitution",
                format!("must lie in (0, 1], got {}", self.restitution),
            ));
        }
        Ok(())
    }
}

/// Height/velocity model: `dx₁ = x₂ dt`, `dx₂ = (−g − νx₂)dt + σ dW`,
/// guard `{x₁ = 0, x₂ < 0}`, reset `x₂⁺ = −c x₂⁻`.
pub fn bouncing_ball_model(params: &BouncingBallParams) -> Result<ShsModel> {
    params.validate()?;
    bouncing_ball_unchecked(params)
}

/// Same as [`bouncing_ball_model`] without the parameter-range check; the
/// Monte Carlo tests use it for the `c = 0` and `ν = 0` limits.
pub fn bouncing_ball_unchecked(params: &BouncingBallParams) -> Result<ShsModel> {
    let n = 2;
    let domain = BoxDomain::new(params.domain_lower.to_vec(), params.domain_upper.to_vec())?;
    let drift = vec![
        Polynomial::variable(n, 1),
        Polynomial::from_terms(
            n,
            [
                (MultiIndex::zero(n), -params.gravity),
                (MultiIndex::unit(n, 1), -params.drag),
            ],
        )?,
    ];
    let diffusion = vec![
        vec![Polynomial::zero(n)],
        vec![Polynomial::constant(n, params.noise)],
    ];
    let facet = GuardFacet::new(n, 0, 0.0, vec![(f64::NEG_INFINITY, 0.0)], -1.0)?;
    let reset = AffineMap::new(
        DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -params.restitution]),
        DVector::zeros(2),
    )?;
    ShsModel::new(drift, diffusion, Some(Guard { facet, reset }), domain)
}

/// Independent Gaussian initial state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitialGaussian {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl InitialGaussian {
    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.mean.len() != dim || self.std.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: self.mean.len().min(self.std.len()),
            });
        }
        if self.std.iter().any(|s| !(*s >= 0.0)) {
            return Err(Error::invalid(
                "initial.std",
                "standard deviations must be >= 0",
            ));
        }
        Ok(())
    }

    pub fn moments(&self, order: u32) -> crate::polyalg::MomentVector {
        crate::polyalg::MomentVector::gaussian(&self.mean, &self.std, order)
    }
}
