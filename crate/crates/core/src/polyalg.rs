//! Sparse multivariate polynomial algebra.
//!
//! Multi-indices are ordered graded-lexicographically (total degree first, then
//! larger leading exponents first), so `(0,0) < (1,0) < (0,1) < (2,0) < (1,1) < ...`.
//! That order fixes every vector layout in the crate: moment vectors, MED
//! multipliers, CSV columns.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Coefficients whose magnitude falls below this are dropped after arithmetic.
pub const PRUNE_TOL: f64 = 1e-14;

/// Exponent vector `α ∈ ℕⁿ` of the monomial `x^α`.
#[derive(Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MultiIndex(Vec<u32>);

impl MultiIndex {
    pub fn new(exponents: Vec<u32>) -> Self {
        MultiIndex(exponents)
    }

    pub fn zero(dim: usize) -> Self {
        MultiIndex(vec![0; dim])
    }

    /// Unit index `e_axis`.
    pub fn unit(dim: usize, axis: usize) -> Self {
        let mut e = vec![0; dim];
        e[axis] = 1;
        MultiIndex(e)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn degree(&self) -> u32 {
        self.0.iter().sum()
    }

    pub fn exponents(&self) -> &[u32] {
        &self.0
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&a| a == 0)
    }

    pub fn add(&self, other: &MultiIndex) -> MultiIndex {
        MultiIndex(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }

    /// Decrement exponent `axis` by `by`, or `None` if it would go negative.
    pub fn lowered(&self, axis: usize, by: u32) -> Option<MultiIndex> {
        let mut e = self.0.clone();
        e[axis] = e[axis].checked_sub(by)?;
        Some(MultiIndex(e))
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.0
            .iter()
            .zip(x)
            .map(|(&a, &xi)| if a == 0 { 1.0 } else { xi.powi(a as i32) })
            .product()
    }

    /// Column label fragment, e.g. `1_0` for `(1,0)`.
    pub fn label(&self) -> String {
        self.0
            .iter()
            .map(|a| a.to_string())
            .collect::<Vec<_>>()
            .join("_")
    }
}

impl Ord for MultiIndex {
    fn cmp(&self, other: &Self) -> Ordering {
        self.degree()
            .cmp(&other.degree())
            .then_with(|| other.0.cmp(&self.0))
    }
}

impl PartialOrd for MultiIndex {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Debug for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

impl fmt::Display for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|a| a.to_string()).collect();
        write!(f, "({})", parts.join(","))
    }
}

/// All `α ∈ ℕⁿ` with `|α| ≤ r`, in graded-lexicographic order.
pub fn enumerate_multiindices(n: usize, r: u32) -> Vec<MultiIndex> {
    let mut out = Vec::new();
    for d in 0..=r {
        let mut current = vec![0u32; n];
        push_degree(&mut out, &mut current, 0, d);
    }
    out
}

fn push_degree(out: &mut Vec<MultiIndex>, current: &mut Vec<u32>, axis: usize, remaining: u32) {
    let n = current.len();
    if n == 0 {
        if remaining == 0 {
            out.push(MultiIndex(Vec::new()));
        }
        return;
    }
    if axis == n - 1 {
        current[axis] = remaining;
        out.push(MultiIndex(current.clone()));
        current[axis] = 0;
        return;
    }
    for a in (0..=remaining).rev() {
        current[axis] = a;
        push_degree(out, current, axis + 1, remaining - a);
    }
    current[axis] = 0;
}

/// Number of multi-indices with `|α| ≤ r` in `n` variables, `C(n+r, r)`.
pub fn count_multiindices(n: usize, r: u32) -> usize {
    let r = r as usize;
    (1..=r).fold(1usize, |acc, k| acc * (n + k) / k)
}

/// Sparse polynomial `Σ c_α x^α` over ℝⁿ.
#[derive(Clone, PartialEq)]
pub struct Polynomial {
    dim: usize,
    terms: BTreeMap<MultiIndex, f64>,
}

impl Polynomial {
    pub fn zero(dim: usize) -> Self {
        Polynomial {
            dim,
            terms: BTreeMap::new(),
        }
    }

    pub fn constant(dim: usize, c: f64) -> Self {
        Self::monomial(MultiIndex::zero(dim), c)
    }

    /// The coordinate function `x_axis`.
    pub fn variable(dim: usize, axis: usize) -> Self {
        Self::monomial(MultiIndex::unit(dim, axis), 1.0)
    }

    pub fn monomial(alpha: MultiIndex, c: f64) -> Self {
        let dim = alpha.dim();
        let mut terms = BTreeMap::new();
        if c.abs() >= PRUNE_TOL {
            terms.insert(alpha, c);
        }
        Polynomial { dim, terms }
    }

    /// Build from `(α, c)` pairs; repeated indices are summed.
    pub fn from_terms(
        dim: usize,
        terms: impl IntoIterator<Item = (MultiIndex, f64)>,
    ) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (alpha, c) in terms {
            if alpha.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: alpha.dim(),
                });
            }
            *map.entry(alpha).or_insert(0.0) += c;
        }
        Ok(Polynomial { dim, terms: map }.pruned())
    }

    fn pruned(mut self) -> Self {
        self.terms.retain(|_, c| c.abs() >= PRUNE_TOL);
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// Total degree; the zero polynomial has degree 0.
    pub fn degree(&self) -> u32 {
        self.terms.keys().map(MultiIndex::degree).max().unwrap_or(0)
    }

    pub fn coeff(&self, alpha: &MultiIndex) -> f64 {
        self.terms.get(alpha).copied().unwrap_or(0.0)
    }

    /// Terms in graded-lexicographic order.
    pub fn terms(&self) -> impl Iterator<Item = (&MultiIndex, f64)> {
        self.terms.iter().map(|(k, &v)| (k, v))
    }

    fn check_dim(&self, other: &Polynomial) -> Result<()> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: other.dim,
            });
        }
        Ok(())
    }

    pub fn try_add(&self, other: &Polynomial) -> Result<Polynomial> {
        self.check_dim(other)?;
        let mut terms = self.terms.clone();
        for (k, &v) in &other.terms {
            *terms.entry(k.clone()).or_insert(0.0) += v;
        }
        Ok(Polynomial {
            dim: self.dim,
            terms,
        }
        .pruned())
    }

    pub fn try_sub(&self, other: &Polynomial) -> Result<Polynomial> {
        self.try_add(&other.scale(-1.0))
    }

    pub fn scale(&self, s: f64) -> Polynomial {
        Polynomial {
            dim: self.dim,
            terms: self
                .terms
                .iter()
                .map(|(k, &v)| (k.clone(), v * s))
                .collect(),
        }
        .pruned()
    }

    /// Product `a·b` (coefficient convolution).
    pub fn try_mul(&self, other: &Polynomial) -> Result<Polynomial> {
        self.check_dim(other)?;
        let mut terms: BTreeMap<MultiIndex, f64> = BTreeMap::new();
        for (ka, &va) in &self.terms {
            for (kb, &vb) in &other.terms {
                *terms.entry(ka.add(kb)).or_insert(0.0) += va * vb;
            }
        }
        Ok(Polynomial {
            dim: self.dim,
            terms,
        }
        .pruned())
    }

    /// `p^k` by repeated squaring.
    pub fn pow(&self, k: u32) -> Polynomial {
        let mut result = Polynomial::constant(self.dim, 1.0);
        let mut base = self.clone();
        let mut k = k;
        while k > 0 {
            if k & 1 == 1 {
                result = &result * &base;
            }
            k >>= 1;
            if k > 0 {
                base = &base * &base;
            }
        }
        result
    }

    /// Formal partial derivative `∂p/∂x_axis`.
    pub fn diff(&self, axis: usize) -> Polynomial {
        let mut terms = BTreeMap::new();
        for (k, &v) in &self.terms {
            let a = k.0[axis];
            if a == 0 {
                continue;
            }
            let lowered = k.lowered(axis, 1).expect("exponent positive");
            *terms.entry(lowered).or_insert(0.0) += v * a as f64;
        }
        Polynomial {
            dim: self.dim,
            terms,
        }
        .pruned()
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dim);
        self.terms.iter().map(|(k, &v)| v * k.eval(x)).sum()
    }

    pub fn try_eval(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: x.len(),
            });
        }
        Ok(self.eval(x))
    }

    /// `q(x) = p(Ax + b)` expanded into monomials; `A` is `m×n` for `p` over ℝᵐ.
    pub fn affine_substitute(&self, a: &DMatrix<f64>, b: &DVector<f64>) -> Result<Polynomial> {
        let m = self.dim;
        if a.nrows() != m || b.len() != m {
            return Err(Error::Shape(format!(
                "substitution is {}x{} with offset {}, polynomial has {} variables",
                a.nrows(),
                a.ncols(),
                b.len(),
                m
            )));
        }
        let n = a.ncols();
        let linear: Vec<Polynomial> = (0..m)
            .map(|i| {
                let mut terms = vec![(MultiIndex::zero(n), b[i])];
                terms.extend((0..n).map(|j| (MultiIndex::unit(n, j), a[(i, j)])));
                Polynomial::from_terms(n, terms).expect("dimensions agree")
            })
            .collect();
        let max_exp: Vec<u32> = (0..m)
            .map(|i| self.terms.keys().map(|k| k.0[i]).max().unwrap_or(0))
            .collect();
        let powers: Vec<Vec<Polynomial>> = linear
            .iter()
            .zip(&max_exp)
            .map(|(l, &e)| {
                let mut pw = vec![Polynomial::constant(n, 1.0)];
                for k in 1..=e as usize {
                    let next = &pw[k - 1] * l;
                    pw.push(next);
                }
                pw
            })
            .collect();
        let mut out = Polynomial::zero(n);
        for (k, &v) in &self.terms {
            let mut term = Polynomial::constant(n, v);
            for (i, &e) in k.0.iter().enumerate() {
                if e > 0 {
                    term = &term * &powers[i][e as usize];
                }
            }
            out = &out + &term;
        }
        Ok(out)
    }

    /// Fix `x_axis = value` and drop that variable.
    pub fn pin(&self, axis: usize, value: f64) -> Polynomial {
        let mut terms = BTreeMap::new();
        for (k, &v) in &self.terms {
            let a = k.0[axis];
            let factor = if a == 0 { 1.0 } else { value.powi(a as i32) };
            let mut e = k.0.clone();
            e.remove(axis);
            *terms.entry(MultiIndex(e)).or_insert(0.0) += v * factor;
        }
        Polynomial {
            dim: self.dim - 1,
            terms,
        }
        .pruned()
    }

    /// Univariate composition `p(g(x))` for `p` over ℝ¹.
    pub fn compose_univariate(&self, inner: &Polynomial) -> Result<Polynomial> {
        if self.dim != 1 {
            return Err(Error::DimensionMismatch {
                expected: 1,
                found: self.dim,
            });
        }
        let max_deg = self.degree();
        let mut out = Polynomial::zero(inner.dim);
        // Horner in the inner polynomial.
        for d in (0..=max_deg).rev() {
            out = &(&out * inner)
                + &Polynomial::constant(inner.dim, self.coeff(&MultiIndex(vec![d])));
        }
        Ok(out)
    }

    /// Parse the text form with variables `x1 … xn`.
    pub fn parse(text: &str, dim: usize) -> Result<Polynomial> {
        let names: Vec<String> = (1..=dim).map(|i| format!("x{i}")).collect();
        let refs: Vec<&str> = names.iter().map(String::as_str).collect();
        Self::parse_with_vars(text, &refs)
    }

    /// Parse with an explicit variable list; variable `k` in the list is axis `k`.
    pub fn parse_with_vars(text: &str, vars: &[&str]) -> Result<Polynomial> {
        Parser::new(text, vars).parse()
    }

    /// Text form using the given variable names.
    pub fn to_string_with_vars(&self, vars: &[&str]) -> String {
        if self.terms.is_empty() {
            return "0".to_string();
        }
        let mut out = String::new();
        for (i, (k, &v)) in self.terms.iter().rev().enumerate() {
            let neg = v.is_sign_negative();
            let mag = v.abs();
            if i == 0 {
                if neg {
                    out.push('-');
                }
            } else {
                out.push_str(if neg { " - " } else { " + " });
            }
            let factors: Vec<String> =
                k.0.iter()
                    .enumerate()
                    .filter(|(_, &a)| a > 0)
                    .map(|(j, &a)| {
                        if a == 1 {
                            vars[j].to_string()
                        } else {
                            format!("{}^{}", vars[j], a)
                        }
                    })
                    .collect();
            if factors.is_empty() {
                out.push_str(&format!("{mag}"));
            } else if mag == 1.0 {
                out.push_str(&factors.join("*"));
            } else {
                out.push_str(&format!("{mag}*{}", factors.join("*")));
            }
        }
        out
    }
}

impl fmt::Display for Polynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<String> = (1..=self.dim).map(|i| format!("x{i}")).collect();
        let refs: Vec<&str> = names.iter().map(String::as_str).collect();
        f.write_str(&self.to_string_with_vars(&refs))
    }
}

impl fmt::Debug for Polynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Polynomial[{}]({})", self.dim, self)
    }
}

// Operator sugar for same-dimension arithmetic; mismatched dimensions are a
// programming error here, the `try_*` forms report them instead.
impl std::ops::Add for &Polynomial {
    type Output = Polynomial;
    fn add(self, rhs: &Polynomial) -> Polynomial {
        self.try_add(rhs).expect("polynomial dimension mismatch")
    }
}

impl std::ops::Sub for &Polynomial {
    type Output = Polynomial;
    fn sub(self, rhs: &Polynomial) -> Polynomial {
        self.try_sub(rhs).expect("polynomial dimension mismatch")
    }
}

impl std::ops::Mul for &Polynomial {
    type Output = Polynomial;
    fn mul(self, rhs: &Polynomial) -> Polynomial {
        self.try_mul(rhs).expect("polynomial dimension mismatch")
    }
}

impl std::ops::Neg for &Polynomial {
    type Output = Polynomial;
    fn neg(self) -> Polynomial {
        self.scale(-1.0)
    }
}

/// Free-function forms of the core operations.
pub fn poly_mul(a: &Polynomial, b: &Polynomial) -> Result<Polynomial> {
    a.try_mul(b)
}

pub fn poly_diff(p: &Polynomial, axis: usize) -> Polynomial {
    p.diff(axis)
}

pub fn poly_eval(p: &Polynomial, x: &[f64]) -> Result<f64> {
    p.try_eval(x)
}

pub fn poly_affine_substitute(
    p: &Polynomial,
    a: &DMatrix<f64>,
    b: &DVector<f64>,
) -> Result<Polynomial> {
    p.affine_substitute(a, b)
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
    vars: &'a [&'a str],
}

impl<'a> Parser<'a> {
    fn new(text: &'a str, vars: &'a [&'a str]) -> Self {
        Parser {
            src: text.as_bytes(),
            pos: 0,
            vars,
        }
    }

    fn err<T>(&self, msg: impl Into<String>) -> Result<T> {
        Err(Error::Parse {
            pos: self.pos,
            msg: msg.into(),
        })
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn parse(mut self) -> Result<Polynomial> {
        let n = self.vars.len();
        let mut acc = BTreeMap::<MultiIndex, f64>::new();
        let mut first = true;
        loop {
            let sign = match self.peek() {
                None if first => return self.err("empty polynomial"),
                None => break,
                Some(b'+') => {
                    self.pos += 1;
                    1.0
                }
                Some(b'-') => {
                    self.pos += 1;
                    -1.0
                }
                Some(_) if first => 1.0,
                Some(c) => return self.err(format!("expected `+` or `-`, found `{}`", c as char)),
            };
            first = false;
            let (alpha, c) = self.term(n)?;
            *acc.entry(alpha).or_insert(0.0) += sign * c;
        }
        Ok(Polynomial { dim: n, terms: acc }.pruned())
    }

    fn term(&mut self, n: usize) -> Result<(MultiIndex, f64)> {
        let mut coeff = 1.0;
        let mut exps = vec![0u32; n];
        loop {
            match self.peek() {
                Some(c) if c.is_ascii_digit() || c == b'.' => coeff *= self.number()?,
                Some(c) if c.is_ascii_alphabetic() => {
                    let axis = self.variable()?;
                    let mut e = 1;
                    if self.peek() == Some(b'^') {
                        self.pos += 1;
                        e = self.integer()?;
                    }
                    exps[axis] += e;
                }
                Some(c) => return self.err(format!("unexpected `{}`", c as char)),
                None => return self.err("unexpected end of input"),
            }
            if self.peek() == Some(b'*') {
                self.pos += 1;
            } else {
                break;
            }
        }
        Ok((MultiIndex(exps), coeff))
    }

    fn number(&mut self) -> Result<f64> {
        let start = self.pos;
        let s = self.src;
        let mut i = self.pos;
        while i < s.len() && (s[i].is_ascii_digit() || s[i] == b'.') {
            i += 1;
        }
        if i < s.len() && (s[i] == b'e' || s[i] == b'E') {
            let mut j = i + 1;
            if j < s.len() && (s[j] == b'+' || s[j] == b'-') {
                j += 1;
            }
            if j < s.len() && s[j].is_ascii_digit() {
                while j < s.len() && s[j].is_ascii_digit() {
                    j += 1;
                }
                i = j;
            }
        }
        let text = std::str::from_utf8(&s[start..i]).expect("ascii");
        match text.parse::<f64>() {
            Ok(v) => {
                self.pos = i;
                Ok(v)
            }
            Err(_) => self.err(format!("bad number `{text}`")),
        }
    }

    fn integer(&mut self) -> Result<u32> {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii");
        text.parse::<u32>()
            .or_else(|_| self.err("expected integer exponent"))
    }

    fn variable(&mut self) -> Result<usize> {
        let start = self.pos;
        while self.pos < self.src.len()
            && (self.src[self.pos].is_ascii_alphanumeric() || self.src[self.pos] == b'_')
        {
            self.pos += 1;
        }
        let name = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii");
        match self.vars.iter().position(|v| *v == name) {
            Some(axis) => Ok(axis),
            None => {
                self.pos = start;
                self.err(format!("unknown variable `{name}`"))
            }
        }
    }
}

/// Truncated moment vector `m_α`, `|α| ≤ r`, in graded-lexicographic layout.
#[derive(Clone, Debug, PartialEq)]
pub struct MomentVector {
    dim: usize,
    order: u32,
    values: Vec<f64>,
    pub time: f64,
}

impl MomentVector {
    pub fn new(dim: usize, order: u32, values: Vec<f64>, time: f64) -> Result<Self> {
        let expected = count_multiindices(dim, order);
        if values.len() != expected {
            return Err(Error::Shape(format!(
                "moment vector of order {order} in {dim} variables needs {expected} entries, got {}",
                values.len()
            )));
        }
        Ok(MomentVector {
            dim,
            order,
            values,
            time,
        })
    }

    /// Moments `E[x^α]` of an independent Gaussian with the given per-axis mean and std.
    pub fn gaussian(mean: &[f64], std: &[f64], order: u32) -> Self {
        let dim = mean.len();
        let axis_moments: Vec<Vec<f64>> = mean
            .iter()
            .zip(std)
            .map(|(&mu, &s)| gaussian_raw_moments(mu, s, order))
            .collect();
        let values = enumerate_multiindices(dim, order)
            .iter()
            .map(|a| {
                a.exponents()
                    .iter()
                    .enumerate()
                    .map(|(i, &e)| axis_moments[i][e as usize])
                    .product()
            })
            .collect();
        MomentVector {
            dim,
            order,
            values,
            time: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn order(&self) -> u32 {
        self.order
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn indices(&self) -> Vec<MultiIndex> {
        enumerate_multiindices(self.dim, self.order)
    }

    pub fn mass(&self) -> f64 {
        self.values[0]
    }

    pub fn get(&self, alpha: &MultiIndex) -> Option<f64> {
        index_of(self.dim, alpha).and_then(|i| self.values.get(i).copied())
    }

    /// Entries with `|α| ≤ order`, keeping the layout.
    pub fn truncated(&self, order: u32) -> MomentVector {
        let len = count_multiindices(self.dim, order.min(self.order));
        MomentVector {
            dim: self.dim,
            order: order.min(self.order),
            values: self.values[..len].to_vec(),
            time: self.time,
        }
    }

    pub fn check_mass(&self, tol: f64) -> Result<()> {
        if (self.mass() - 1.0).abs() > tol || !self.values.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid(
                "moments",
                format!(
                    "mass entry {} is not 1 or entries are not finite",
                    self.mass()
                ),
            ));
        }
        Ok(())
    }
}

/// Position of `α` in the graded-lexicographic layout.
pub fn index_of(dim: usize, alpha: &MultiIndex) -> Option<usize> {
    if alpha.dim() != dim {
        return None;
    }
    let d = alpha.degree();
    let mut idx = if d == 0 {
        0
    } else {
        count_multiindices(dim, d - 1)
    };
    // Rank within degree d: walk axes, counting indices with a larger leading exponent.
    let mut remaining = d;
    let e = alpha.exponents();
    for axis in 0..dim.saturating_sub(1) {
        let rest = dim - axis - 1;
        for a in (e[axis] + 1)..=remaining {
            idx += count_exact(rest, remaining - a);
        }
        remaining -= e[axis];
    }
    Some(idx)
}

fn count_exact(n: usize, d: u32) -> usize {
    if n == 0 {
        return usize::from(d == 0);
    }
    // C(n-1+d, d)
    let d = d as usize;
    (1..=d).fold(1usize, |acc, k| acc * (n - 1 + k) / k)
}

fn gaussian_raw_moments(mu: f64, s: f64, order: u32) -> Vec<f64> {
    // E[X^k] = mu E[X^{k-1}] + (k-1) s² E[X^{k-2}]
    let mut m = vec![1.0; order as usize + 1];
    if order >= 1 {
        m[1] = mu;
    }
    for k in 2..=order as usize {
        m[k] = mu * m[k - 1] + (k as f64 - 1.0) * s * s * m[k - 2];
    }
    m
}
