//! Moment-constrained maximum-entropy densities on a box.
//!
//! A MED is `p(x) = exp(−Σ_{1≤|β|≤r} λ_β u(x)^β) / Z(λ)` where `u` is an affine
//! conditioning map sending the state box onto `[−1, 1]ⁿ`. The monomials in `u`
//! span the same space as those in `x`, so the family is the usual polynomial
//! exponential family; only the coordinates of `λ` differ. Normalization is
//! carried by `Z` rather than a multiplier for `α = 0`.
//!
//! Multipliers are fitted by minimizing the convex dual
//! `Γ(λ) = log Z(λ) + Σ λ_β m̃_β`, with `m̃` the target moments expressed in
//! conditioned coordinates. Its gradient is `m̃ − E_λ[u^β]` and its Hessian is
//! the covariance of the sufficient statistics under `p_λ`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::BoxDomain;
use crate::polyalg::{
    count_multiindices, enumerate_multiindices, MomentVector, MultiIndex, Polynomial,
};
use crate::quad::{tensor_rule, CompensatedSum, QuadratureRule};

/// Default per-axis node count for MED quadrature.
pub const DEFAULT_POINTS: usize = 64;

/// Affine map `u = (x − offset) / scale`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Conditioning {
    pub offset: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Conditioning {
    pub fn identity(dim: usize) -> Self {
        Conditioning {
            offset: vec![0.0; dim],
            scale: vec![1.0; dim],
        }
    }

    /// Sends `domain` onto `[−1, 1]ⁿ`.
    pub fn unit_box(domain: &BoxDomain) -> Self {
        Conditioning {
            offset: domain.center(),
            scale: domain.half_widths(),
        }
    }

    pub fn dim(&self) -> usize {
        self.offset.len()
    }

    pub fn to_unit(&self, x: &[f64], u: &mut [f64]) {
        for i in 0..x.len() {
            u[i] = (x[i] - self.offset[i]) / self.scale[i];
        }
    }

    /// `(A, b)` with `u = A x + b`.
    pub fn forward(&self) -> (DMatrix<f64>, DVector<f64>) {
        let n = self.dim();
        let a = DMatrix::from_fn(n, n, |i, j| if i == j { 1.0 / self.scale[i] } else { 0.0 });
        let b = DVector::from_fn(n, |i, _| -self.offset[i] / self.scale[i]);
        (a, b)
    }

    /// `(A, b)` with `x = A u + b`.
    pub fn inverse(&self) -> (DMatrix<f64>, DVector<f64>) {
        let n = self.dim();
        let a = DMatrix::from_fn(n, n, |i, j| if i == j { self.scale[i] } else { 0.0 });
        let b = DVector::from_column_slice(&self.offset);
        (a, b)
    }
}

/// Multipliers of a fitted (or prescribed) MED.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MedParams {
    pub dim: usize,
    pub order: u32,
    pub domain: BoxDomain,
    pub conditioning: Conditioning,
    /// `λ_β` for `1 ≤ |β| ≤ order`, graded-lexicographic, conditioned coordinates.
    pub multipliers: Vec<f64>,
    /// Cached `log Z(λ)` (state coordinates, Lebesgue on the domain).
    pub log_partition: f64,
}

impl MedParams {
    /// Uniform density on `domain` with identity or box conditioning.
    pub fn uniform(domain: &BoxDomain, order: u32, conditioning: Conditioning) -> Self {
        let k = count_multiindices(domain.dim(), order) - 1;
        MedParams {
            dim: domain.dim(),
            order,
            domain: domain.clone(),
            conditioning,
            multipliers: vec![0.0; k],
            log_partition: domain.volume().ln(),
        }
    }

    /// Multipliers from an exponent in conditioned coordinates; the constant
    /// term is ignored and `log_partition` is left at NaN until computed.
    pub fn from_unit_exponent(
        exponent: &Polynomial,
        domain: &BoxDomain,
        order: u32,
        conditioning: Conditioning,
    ) -> Result<Self> {
        if exponent.degree() > order {
            return Err(Error::invalid(
                "exponent",
                format!("degree {} exceeds order {order}", exponent.degree()),
            ));
        }
        let indices = enumerate_multiindices(domain.dim(), order);
        let multipliers = indices[1..].iter().map(|b| exponent.coeff(b)).collect();
        Ok(MedParams {
            dim: domain.dim(),
            order,
            domain: domain.clone(),
            conditioning,
            multipliers,
            log_partition: f64::NAN,
        })
    }

    /// Same as [`MedParams::from_unit_exponent`] for an exponent written in state coordinates.
    pub fn from_state_exponent(
        exponent: &Polynomial,
        domain: &BoxDomain,
        order: u32,
        conditioning: Conditioning,
    ) -> Result<Self> {
        let (a, b) = conditioning.inverse();
        let unit = exponent.affine_substitute(&a, &b)?;
        Self::from_unit_exponent(&unit, domain, order, conditioning)
    }

    pub fn indices(&self) -> Vec<MultiIndex> {
        enumerate_multiindices(self.dim, self.order).split_off(1)
    }

    /// `q(u) = Σ λ_β u^β`.
    pub fn exponent_unit_at(&self, u: &[f64]) -> f64 {
        let mut feats = vec![0.0; self.multipliers.len()];
        monomials_excluding_constant(self.dim, self.order, u, &mut feats);
        feats
            .iter()
            .zip(&self.multipliers)
            .map(|(f, l)| f * l)
            .sum()
    }

    /// Exponent evaluated at a state point.
    pub fn exponent_at(&self, x: &[f64]) -> f64 {
        let mut u = vec![0.0; self.dim];
        self.conditioning.to_unit(x, &mut u);
        self.exponent_unit_at(&u)
    }

    /// Gradient of the exponent with respect to state coordinates.
    pub fn exponent_grad_at(&self, x: &[f64]) -> Vec<f64> {
        let mut u = vec![0.0; self.dim];
        self.conditioning.to_unit(x, &mut u);
        let mut g = vec![0.0; self.dim];
        for (beta, &lam) in self.indices().iter().zip(&self.multipliers) {
            if lam == 0.0 {
                continue;
            }
            for i in 0..self.dim {
                let e = beta.exponents()[i];
                if e == 0 {
                    continue;
                }
                let lowered = beta.lowered(i, 1).expect("positive exponent");
                g[i] += lam * e as f64 * lowered.eval(&u);
            }
        }
        for i in 0..self.dim {
            g[i] /= self.conditioning.scale[i];
        }
        g
    }

    pub fn exponent_unit(&self) -> Polynomial {
        Polynomial::from_terms(
            self.dim,
            self.indices()
                .into_iter()
                .zip(self.multipliers.iter().copied()),
        )
        .expect("consistent dimension")
    }

    /// Exponent polynomial `Σ λ_β u(x)^β` expanded in state coordinates
    /// (includes the constant produced by the shift).
    pub fn exponent_state(&self) -> Polynomial {
        let (a, b) = self.conditioning.forward();
        self.exponent_unit()
            .affine_substitute(&a, &b)
            .expect("conditioning matches dimension")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("MedParams serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Schema(format!("MED record: {e}")))
    }
}

/// Diagnostics from one dual minimization.
#[derive(Clone, Debug, PartialEq)]
pub struct FitReport {
    pub iterations: usize,
    pub grad_norm: f64,
    pub potential: f64,
    /// Ratio of extreme Hessian eigenvalues at the final iterate.
    pub condition: f64,
    pub converged: bool,
}

/// Newton settings for the dual minimization.
#[derive(Clone, Debug)]
pub struct FitOptions {
    pub grad_tol: f64,
    pub max_iter: usize,
    pub armijo_slope: f64,
    pub backtrack: f64,
    pub initial_damping: f64,
    pub condition_limit: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            grad_tol: 1e-9,
            max_iter: 200,
            armijo_slope: 1e-4,
            backtrack: 0.5,
            initial_damping: 1e-10,
            condition_limit: 1e14,
        }
    }
}

/// Evaluated node weights `π_i ∝ w_i exp(−q(u_i))`.
struct NodeWeights {
    log_partition: f64,
    probs: Vec<f64>,
}

/// Quadrature-backed MED machinery for a fixed domain, order and rule. The
/// sufficient statistics at every node are tabulated once.
#[derive(Clone, Debug)]
pub struct MaxEntSolver {
    dim: usize,
    order: u32,
    domain: BoxDomain,
    conditioning: Conditioning,
    rule: QuadratureRule,
    log_weights: Vec<f64>,
    /// `u_i^β`, `1 ≤ |β| ≤ r`, row per node.
    unit_features: Vec<f64>,
    /// `x_i^α`, `0 ≤ |α| ≤ r`, row per node.
    state_features: Vec<f64>,
    /// `m̃ = T m` maps state moments to conditioned moments (all `|α| ≤ r`).
    to_unit: DMatrix<f64>,
    pub options: FitOptions,
}

impl MaxEntSolver {
    /// Box conditioning and a tensor Gauss–Legendre rule with `points` per axis.
    pub fn new(domain: &BoxDomain, order: u32, points: &[usize]) -> Result<Self> {
        let rule = tensor_rule(domain, points)?;
        Self::with_rule(rule, order, Conditioning::unit_box(domain))
    }

    pub fn with_rule(rule: QuadratureRule, order: u32, conditioning: Conditioning) -> Result<Self> {
        let domain = rule.domain().clone();
        let dim = domain.dim();
        if conditioning.dim() != dim || rule.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: conditioning.dim(),
            });
        }
        let m = count_multiindices(dim, order);
        let k = m - 1;
        let n = rule.len();
        let mut unit_features = vec![0.0; n * k];
        let mut state_features = vec![0.0; n * m];
        let mut u = vec![0.0; dim];
        for (i, x) in rule.nodes().enumerate() {
            conditioning.to_unit(x, &mut u);
            monomials_excluding_constant(dim, order, &u, &mut unit_features[i * k..(i + 1) * k]);
            state_features[i * m] = 1.0;
            monomials_excluding_constant(
                dim,
                order,
                x,
                &mut state_features[i * m + 1..(i + 1) * m],
            );
        }
        let log_weights = rule.weights().iter().map(|w| w.ln()).collect();

        let (a, b) = conditioning.forward();
        let indices = enumerate_multiindices(dim, order);
        let mut to_unit = DMatrix::zeros(m, m);
        for (row, beta) in indices.iter().enumerate() {
            let expanded = Polynomial::monomial(beta.clone(), 1.0).affine_substitute(&a, &b)?;
            for (col, alpha) in indices.iter().enumerate() {
                to_unit[(row, col)] = expanded.coeff(alpha);
            }
        }
        Ok(MaxEntSolver {
            dim,
            order,
            domain,
            conditioning,
            rule,
            log_weights,
            unit_features,
            state_features,
            to_unit,
            options: FitOptions::default(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn order(&self) -> u32 {
        self.order
    }

    pub fn domain(&self) -> &BoxDomain {
        &self.domain
    }

    pub fn conditioning(&self) -> &Conditioning {
        &self.conditioning
    }

    pub fn rule(&self) -> &QuadratureRule {
        &self.rule
    }

    fn n_features(&self) -> usize {
        count_multiindices(self.dim, self.order) - 1
    }

    /// Target moments in conditioned coordinates, excluding the mass entry.
    pub fn unit_moments(&self, m: &MomentVector) -> Result<Vec<f64>> {
        if m.dim() != self.dim || m.order() != self.order {
            return Err(Error::Shape(format!(
                "moments are order {} in {} variables, solver is order {} in {}",
                m.order(),
                m.dim(),
                self.order,
                self.dim
            )));
        }
        let v = &self.to_unit * DVector::from_column_slice(m.values());
        Ok(v.iter().skip(1).copied().collect())
    }

    fn check_params(&self, p: &MedParams) -> Result<()> {
        if p.dim != self.dim || p.order != self.order || p.multipliers.len() != self.n_features() {
            return Err(Error::Shape(format!(
                "MED of order {} in {} variables does not match solver (order {}, {} variables)",
                p.order, p.dim, self.order, self.dim
            )));
        }
        if p.conditioning != self.conditioning || p.domain != self.domain {
            return Err(Error::Shape(
                "MED domain or conditioning differs from the solver's".into(),
            ));
        }
        if p.multipliers.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("multipliers", "non-finite multiplier"));
        }
        Ok(())
    }

    fn weights(&self, lambda: &[f64], extra: Option<&[f64]>) -> NodeWeights {
        let k = lambda.len();
        let n = self.rule.len();
        let mut s = Vec::with_capacity(n);
        let mut max = f64::NEG_INFINITY;
        for i in 0..n {
            let row = &self.unit_features[i * k..(i + 1) * k];
            let q: f64 = row.iter().zip(lambda).map(|(f, l)| f * l).sum();
            let mut v = self.log_weights[i] - q;
            if let Some(e) = extra {
                v += e[i];
            }
            max = max.max(v);
            s.push(v);
        }
        let mut total = CompensatedSum::default();
        for v in s.iter_mut() {
            *v = (*v - max).exp();
            total.add(*v);
        }
        let total = total.value();
        for v in s.iter_mut() {
            *v /= total;
        }
        NodeWeights {
            log_partition: max + total.ln(),
            probs: s,
        }
    }

    fn unit_expectations(&self, probs: &[f64]) -> Vec<f64> {
        let k = self.n_features();
        let mut acc = vec![CompensatedSum::default(); k];
        for (i, &p) in probs.iter().enumerate() {
            let row = &self.unit_features[i * k..(i + 1) * k];
            for (a, f) in acc.iter_mut().zip(row) {
                a.add(p * f);
            }
        }
        acc.iter().map(CompensatedSum::value).collect()
    }

    fn covariance(&self, probs: &[f64], mean: &[f64]) -> DMatrix<f64> {
        let k = self.n_features();
        let mut acc = vec![0.0; k * k];
        let mut centered = vec![0.0; k];
        for (i, &p) in probs.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            let row = &self.unit_features[i * k..(i + 1) * k];
            for j in 0..k {
                centered[j] = row[j] - mean[j];
            }
            for a in 0..k {
                let pa = p * centered[a];
                let dst = &mut acc[a * k + a..(a + 1) * k];
                for (d, c) in dst.iter_mut().zip(&centered[a..]) {
                    *d += pa * c;
                }
            }
        }
        DMatrix::from_fn(k, k, |a, b| {
            if a <= b {
                acc[a * k + b]
            } else {
                acc[b * k + a]
            }
        })
    }

    pub fn log_partition(&self, p: &MedParams) -> Result<f64> {
        self.check_params(p)?;
        Ok(self.weights(&p.multipliers, None).log_partition)
    }

    /// `Γ(λ) = log Z(λ) + Σ λ_β m̃_β`.
    pub fn potential(&self, p: &MedParams, m: &MomentVector) -> Result<f64> {
        self.check_params(p)?;
        let target = self.unit_moments(m)?;
        Ok(self.potential_raw(&p.multipliers, &target))
    }

    fn potential_raw(&self, lambda: &[f64], target: &[f64]) -> f64 {
        let w = self.weights(lambda, None);
        w.log_partition + lambda.iter().zip(target).map(|(l, m)| l * m).sum::<f64>()
    }

    /// `∂Γ/∂λ_β = m̃_β − E_λ[u^β]`.
    pub fn potential_grad(&self, p: &MedParams, m: &MomentVector) -> Result<Vec<f64>> {
        self.check_params(p)?;
        let target = self.unit_moments(m)?;
        let w = self.weights(&p.multipliers, None);
        let e = self.unit_expectations(&w.probs);
        Ok(target.iter().zip(&e).map(|(t, e)| t - e).collect())
    }

    /// Covariance of the conditioned sufficient statistics under `p_λ`.
    pub fn potential_hess(&self, p: &MedParams) -> Result<DMatrix<f64>> {
        self.check_params(p)?;
        let w = self.weights(&p.multipliers, None);
        let e = self.unit_expectations(&w.probs);
        Ok(self.covariance(&w.probs, &e))
    }

    fn params_from(&self, lambda: Vec<f64>, log_partition: f64) -> MedParams {
        MedParams {
            dim: self.dim,
            order: self.order,
            domain: self.domain.clone(),
            conditioning: self.conditioning.clone(),
            multipliers: lambda,
            log_partition,
        }
    }

    /// Parameters with `log Z` filled in.
    pub fn normalized(&self, mut p: MedParams) -> Result<MedParams> {
        self.check_params(&p)?;
        p.log_partition = self.weights(&p.multipliers, None).log_partition;
        Ok(p)
    }

    /// Minimize `Γ` by damped Newton with Armijo backtracking.
    pub fn fit(
        &self,
        m: &MomentVector,
        init: Option<&MedParams>,
    ) -> Result<(MedParams, FitReport)> {
        m.check_mass(1e-9)?;
        let target = self.unit_moments(m)?;
        let k = target.len();
        let opts = &self.options;
        let mut lambda = match init {
            Some(p) if self.check_params(p).is_ok() => p.multipliers.clone(),
            _ => vec![0.0; k],
        };

        let mut w = self.weights(&lambda, None);
        let mut mean = self.unit_expectations(&w.probs);
        let mut grad: Vec<f64> = target.iter().zip(&mean).map(|(t, e)| t - e).collect();
        let mut gamma = w.log_partition + dot(&lambda, &target);
        let mut iterations = 0;
        let mut converged = false;
        let mut hess = self.covariance(&w.probs, &mean);

        while iterations < opts.max_iter {
            let gnorm = inf_norm(&grad);
            if gnorm <= opts.grad_tol {
                converged = true;
                break;
            }
            iterations += 1;
            let Some(step) = damped_newton_step(&hess, &grad, opts.initial_damping) else {
                break;
            };
            let slope = dot(&grad, &step);
            let mut t = 1.0;
            let mut accepted = None;
            // Γ differences this small sit at rounding level; skip straight to
            // the gradient test below.
            if -slope <= 1e3 * f64::EPSILON * (1.0 + gamma.abs()) {
                t = 0.0;
            }
            while t > 1e-12 {
                let trial: Vec<f64> = lambda.iter().zip(&step).map(|(l, d)| l + t * d).collect();
                let tw = self.weights(&trial, None);
                let tg = tw.log_partition + dot(&trial, &target);
                if tg.is_finite() && tg <= gamma + opts.armijo_slope * t * slope {
                    accepted = Some((trial, tw, tg));
                    break;
                }
                t *= opts.backtrack;
            }
            if accepted.is_none() {
                // Near the optimum Γ differences sink below rounding; accept the
                // full step if it still reduces the gradient.
                let trial: Vec<f64> = lambda.iter().zip(&step).map(|(l, d)| l + d).collect();
                let tw = self.weights(&trial, None);
                let tmean = self.unit_expectations(&tw.probs);
                let tgrad: Vec<f64> = target.iter().zip(&tmean).map(|(t, e)| t - e).collect();
                if inf_norm(&tgrad) < gnorm {
                    let tg = tw.log_partition + dot(&trial, &target);
                    accepted = Some((trial, tw, tg));
                }
            }
            let Some((trial, tw, tg)) = accepted else {
                break;
            };
            lambda = trial;
            w = tw;
            gamma = tg;
            mean = self.unit_expectations(&w.probs);
            grad = target.iter().zip(&mean).map(|(t, e)| t - e).collect();
            hess = self.covariance(&w.probs, &mean);
        }
        let grad_norm = inf_norm(&grad);
        converged = converged || grad_norm <= opts.grad_tol;
        let report = FitReport {
            iterations,
            grad_norm,
            potential: gamma,
            condition: condition_number(&hess),
            converged,
        };
        if !converged {
            return Err(Error::NonRealizable(Box::new(report)));
        }
        Ok((self.params_from(lambda, w.log_partition), report))
    }

    /// Bounding box of the nodes where the density is within `exp(−log_ratio)`
    /// of its largest nodal value.
    pub fn support_box(&self, p: &MedParams, log_ratio: f64) -> Result<BoxDomain> {
        self.check_params(p)?;
        let k = self.n_features();
        let q: Vec<f64> = (0..self.rule.len())
            .map(|i| dot(&self.unit_features[i * k..(i + 1) * k], &p.multipliers))
            .collect();
        let qmin = q.iter().cloned().fold(f64::INFINITY, f64::min);
        let mut lo = vec![f64::INFINITY; self.dim];
        let mut hi = vec![f64::NEG_INFINITY; self.dim];
        for (i, x) in self.rule.nodes().enumerate() {
            if q[i] - qmin <= log_ratio {
                for j in 0..self.dim {
                    lo[j] = lo[j].min(x[j]);
                    hi[j] = hi[j].max(x[j]);
                }
            }
        }
        for j in 0..self.dim {
            if !(hi[j] > lo[j]) {
                let c = if lo[j].is_finite() {
                    lo[j]
                } else {
                    self.domain.center()[j]
                };
                let w = 1e-3 * self.domain.half_widths()[j];
                lo[j] = (c - w).max(self.domain.lower()[j]);
                hi[j] = (c + w).min(self.domain.upper()[j]);
            }
        }
        BoxDomain::new(lo, hi)
    }

    /// State-coordinate moments of the MED up to the solver order.
    pub fn moments(&self, p: &MedParams) -> Result<MomentVector> {
        self.check_params(p)?;
        let w = self.weights(&p.multipliers, None);
        Ok(self.state_moments(&w.probs))
    }

    fn state_moments(&self, probs: &[f64]) -> MomentVector {
        let m = count_multiindices(self.dim, self.order);
        let mut acc = vec![CompensatedSum::default(); m];
        for (i, &p) in probs.iter().enumerate() {
            let row = &self.state_features[i * m..(i + 1) * m];
            for (a, f) in acc.iter_mut().zip(row) {
                a.add(p * f);
            }
        }
        let mut values: Vec<f64> = acc.iter().map(CompensatedSum::value).collect();
        values[0] = 1.0;
        MomentVector::new(self.dim, self.order, values, 0.0).expect("layout")
    }

    /// Moments of `p_λ(x)·exp(log_tilt(x))` normalized over the rule, with
    /// `log ∫ p_λ exp(log_tilt)`.
    pub fn tilted_moments(
        &self,
        p: &MedParams,
        log_tilt: impl Fn(&[f64]) -> f64,
    ) -> Result<(MomentVector, f64)> {
        self.check_params(p)?;
        let extra: Vec<f64> = self.rule.nodes().map(&log_tilt).collect();
        if let Some(i) = extra.iter().position(|v| !v.is_finite()) {
            return Err(Error::IntegrationFailure {
                node: self.rule.node(i).to_vec(),
            });
        }
        let base = self.weights(&p.multipliers, None).log_partition;
        let w = self.weights(&p.multipliers, Some(&extra));
        Ok((self.state_moments(&w.probs), w.log_partition - base))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Solves `(H + τI) d = −g`, escalating `τ` ×10 until Cholesky succeeds.
fn damped_newton_step(h: &DMatrix<f64>, g: &[f64], tau0: f64) -> Option<Vec<f64>> {
    let k = g.len();
    if k == 0 {
        return None;
    }
    let rhs = DVector::from_iterator(k, g.iter().map(|v| -v));
    let mut tau = tau0;
    while tau < 1e12 {
        let mut m = h.clone();
        for i in 0..k {
            m[(i, i)] += tau;
        }
        if let Some(ch) = m.cholesky() {
            let d = ch.solve(&rhs);
            if d.iter().all(|v| v.is_finite()) {
                return Some(d.iter().copied().collect());
            }
        }
        tau *= 10.0;
    }
    None
}

fn condition_number(h: &DMatrix<f64>) -> f64 {
    if h.nrows() == 0 {
        return 1.0;
    }
    let eig = SymmetricEigen::new(h.clone()).eigenvalues;
    let max = eig.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = eig.iter().cloned().fold(f64::INFINITY, f64::min);
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Fills `out` with `x^α` for `1 ≤ |α| ≤ order` in graded-lexicographic order.
pub fn monomials_excluding_constant(dim: usize, order: u32, x: &[f64], out: &mut [f64]) {
    // Powers per axis, then products in enumeration order.
    let r = order as usize;
    let mut pw = [[1.0f64; 17]; 4];
    if dim <= 4 && r <= 16 {
        for i in 0..dim {
            for e in 1..=r {
                pw[i][e] = pw[i][e - 1] * x[i];
            }
        }
        let mut k = 0;
        fill_products(dim, order, &pw, out, &mut k);
    } else {
        for (o, a) in out
            .iter_mut()
            .zip(enumerate_multiindices(dim, order).iter().skip(1))
        {
            *o = a.eval(x);
        }
    }
}

fn fill_products(dim: usize, order: u32, pw: &[[f64; 17]; 4], out: &mut [f64], k: &mut usize) {
    fn rec(
        axis: usize,
        dim: usize,
        remaining: usize,
        acc: f64,
        pw: &[[f64; 17]; 4],
        out: &mut [f64],
        k: &mut usize,
    ) {
        if axis == dim - 1 {
            out[*k] = acc * pw[axis][remaining];
            *k += 1;
            return;
        }
        for a in (0..=remaining).rev() {
            rec(axis + 1, dim, remaining - a, acc * pw[axis][a], pw, out, k);
        }
    }
    for d in 1..=order as usize {
        rec(0, dim, d, 1.0, pw, out, k);
    }
}

/// `log Z(λ)` on an arbitrary rule covering the MED domain.
pub fn log_partition(p: &MedParams, rule: &QuadratureRule) -> Result<f64> {
    solver_for(p, rule)?.log_partition(p)
}

pub fn potential(p: &MedParams, m: &MomentVector, rule: &QuadratureRule) -> Result<f64> {
    solver_for(p, rule)?.potential(p, m)
}

pub fn potential_grad(p: &MedParams, m: &MomentVector, rule: &QuadratureRule) -> Result<Vec<f64>> {
    solver_for(p, rule)?.potential_grad(p, m)
}

pub fn potential_hess(p: &MedParams, rule: &QuadratureRule) -> Result<DMatrix<f64>> {
    solver_for(p, rule)?.potential_hess(p)
}

/// Moments up to `order` of the MED, by quadrature on `rule`.
pub fn med_moments(p: &MedParams, order: u32, rule: &QuadratureRule) -> Result<MomentVector> {
    if p.multipliers.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("multipliers", "non-finite multiplier"));
    }
    let m = count_multiindices(p.dim, order);
    let mut s = Vec::with_capacity(rule.len());
    let mut max = f64::NEG_INFINITY;
    for (x, w) in rule.nodes().zip(rule.weights()) {
        let v = w.ln() - p.exponent_at(x);
        max = max.max(v);
        s.push(v);
    }
    let mut acc = vec![CompensatedSum::default(); m];
    let mut feats = vec![0.0; m - 1];
    let mut total = CompensatedSum::default();
    for (x, v) in rule.nodes().zip(&s) {
        let e = (v - max).exp();
        total.add(e);
        monomials_excluding_constant(p.dim, order, x, &mut feats);
        acc[0].add(e);
        for (a, f) in acc[1..].iter_mut().zip(&feats) {
            a.add(e * f);
        }
    }
    let total = total.value();
    let values = acc.iter().map(|a| a.value() / total).collect();
    MomentVector::new(p.dim, order, values, 0.0)
}

fn solver_for(p: &MedParams, rule: &QuadratureRule) -> Result<MaxEntSolver> {
    if rule.domain() != &p.domain {
        return Err(Error::Shape(
            "quadrature rule does not cover the MED domain".into(),
        ));
    }
    MaxEntSolver::with_rule(rule.clone(), p.order, p.conditioning.clone())
}

/// Fit with box conditioning and the default 64-per-axis rule on `domain`.
pub fn fit_med(
    m: &MomentVector,
    domain: &BoxDomain,
    init: Option<&MedParams>,
) -> Result<(MedParams, FitReport)> {
    let solver = MaxEntSolver::new(domain, m.order(), &vec![DEFAULT_POINTS; domain.dim()])?;
    solver.fit(m, init)
}

/// `p(x) = exp(−q(u(x)) − log Z)` inside the domain, 0 outside.
pub fn med_density(p: &MedParams, x: &[f64]) -> f64 {
    if !p.domain.contains(x) {
        return 0.0;
    }
    (-p.exponent_at(x) - p.log_partition).exp()
}

/// `∇p = −p ∇q`; zero outside the domain.
pub fn med_density_grad(p: &MedParams, x: &[f64]) -> Vec<f64> {
    let d = med_density(p, x);
    if d == 0.0 {
        return vec![0.0; p.dim];
    }
    p.exponent_grad_at(x).into_iter().map(|g| -d * g).collect()
}
