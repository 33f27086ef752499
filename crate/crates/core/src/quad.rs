//! Tensor-product Gauss–Legendre quadrature on boxes and guard facets.

use crate::error::{Error, Result};
use crate::model::{BoxDomain, GuardFacet};

pub const MAX_POINTS: usize = 256;

/// Nodes and positive weights over a box. Nodes are stored row-major, `dim`
/// coordinates each; for a guard rule they are embedded in the full state
/// space while `domain` is the facet box.
#[derive(Clone, Debug)]
pub struct QuadratureRule {
    dim: usize,
    nodes: Vec<f64>,
    weights: Vec<f64>,
    domain: BoxDomain,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Dimension of the embedded nodes.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn node(&self, i: usize) -> &[f64] {
        &self.nodes[i * self.dim..(i + 1) * self.dim]
    }

    pub fn nodes(&self) -> impl Iterator<Item = &[f64]> {
        self.nodes
            .chunks_exact(self.dim.max(1))
            .take(self.weights.len())
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn domain(&self) -> &BoxDomain {
        &self.domain
    }
}

/// Gauss–Legendre rule on `[-1, 1]`, nodes ascending.
pub fn gauss_legendre_nodes(points: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if points == 0 || points > MAX_POINTS {
        return Err(Error::invalid(
            "points_per_axis",
            format!("must lie in 1..={MAX_POINTS}, got {points}"),
        ));
    }
    let n = points;
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        // Tricomi initial guess, then Newton on P_n.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre(n, x);
        dp = if d != 0.0 { d } else { dp };
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    Ok((nodes, weights))
}

/// `(P_n(x), P_n'(x))` by the three-term recurrence.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Affinely mapped tensor-product rule; the last axis varies fastest.
pub fn tensor_rule(domain: &BoxDomain, points_per_axis: &[usize]) -> Result<QuadratureRule> {
    if points_per_axis.len() != domain.dim() {
        return Err(Error::DimensionMismatch {
            expected: domain.dim(),
            found: points_per_axis.len(),
        });
    }
    let axes: Vec<(Vec<f64>, Vec<f64>)> = points_per_axis
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            let (x, w) = gauss_legendre_nodes(p)?;
            let lo = domain.lower()[i];
            let hi = domain.upper()[i];
            let half = 0.5 * (hi - lo);
            let mid = 0.5 * (hi + lo);
            Ok((
                x.iter().map(|t| mid + half * t).collect(),
                w.iter().map(|v| v * half).collect(),
            ))
        })
        .collect::<Result<_>>()?;
    Ok(product_rule(&axes, domain.clone(), |c| c.to_vec()))
}

fn product_rule(
    axes: &[(Vec<f64>, Vec<f64>)],
    domain: BoxDomain,
    embed: impl Fn(&[f64]) -> Vec<f64>,
) -> QuadratureRule {
    let m = axes.len();
    let total: usize = axes.iter().map(|a| a.1.len()).product();
    let mut idx = vec![0usize; m];
    let mut nodes = Vec::new();
    let mut weights = Vec::with_capacity(total);
    let mut coords = vec![0.0; m];
    let mut dim = 0;
    for _ in 0..total {
        let mut w = 1.0;
        for k in 0..m {
            coords[k] = axes[k].0[idx[k]];
            w *= axes[k].1[idx[k]];
        }
        let x = embed(&coords);
        dim = x.len();
        nodes.extend_from_slice(&x);
        weights.push(w);
        for k in (0..m).rev() {
            idx[k] += 1;
            if idx[k] < axes[k].1.len() {
                break;
            }
            idx[k] = 0;
        }
    }
    QuadratureRule {
        dim,
        nodes,
        weights,
        domain,
    }
}

/// Neumaier-compensated sum, accumulated in node order.
#[derive(Default, Clone, Copy)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// `Σ wᵢ f(xᵢ)`.
pub fn integrate(f: impl Fn(&[f64]) -> f64, rule: &QuadratureRule) -> Result<f64> {
    let mut acc = CompensatedSum::default();
    for (x, &w) in rule.nodes().zip(rule.weights()) {
        let v = f(x);
        if !v.is_finite() {
            return Err(Error::IntegrationFailure { node: x.to_vec() });
        }
        acc.add(w * v);
    }
    Ok(acc.value())
}

/// Rule on `guard ∩ domain` with `points` nodes per remaining axis, nodes
/// embedded in ℝⁿ with the pinned coordinate at the guard level.
pub fn guard_rule(guard: &GuardFacet, domain: &BoxDomain, points: usize) -> Result<QuadratureRule> {
    let intervals = guard.clipped_intervals(domain)?;
    let (x, w) = gauss_legendre_nodes(points)?;
    let axes: Vec<(Vec<f64>, Vec<f64>)> = intervals
        .iter()
        .map(|&(lo, hi)| {
            let half = 0.5 * (hi - lo);
            let mid = 0.5 * (hi + lo);
            (
                x.iter().map(|t| mid + half * t).collect(),
                w.iter().map(|v| v * half).collect(),
            )
        })
        .collect();
    let facet_box = if intervals.is_empty() {
        BoxDomain::new(vec![], vec![])?
    } else {
        BoxDomain::new(
            intervals.iter().map(|i| i.0).collect(),
            intervals.iter().map(|i| i.1).collect(),
        )?
    };
    if axes.is_empty() {
        return Ok(QuadratureRule {
            dim: guard.dim(),
            nodes: guard.embed(&[]),
            weights: vec![1.0],
            domain: facet_box,
        });
    }
    Ok(product_rule(&axes, facet_box, |c| guard.embed(c)))
}
