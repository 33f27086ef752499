//! Monte Carlo reference: Euler–Maruyama paths with guard resets, ensemble
//! moments and the rollout error metrics.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{InitialGaussian, ShsModel};
use crate::polyalg::{enumerate_multiindices, MomentVector, MultiIndex, Polynomial};
use crate::propagate::{csv_err, fmt, write_moment_csv, MomentTrajectory};
use crate::quad::CompensatedSum;

/// Post-impact speed below which a noise-free path is pinned to the guard.
pub const ZENO_SPEED: f64 = 1e-6;

const BLOCK: usize = 1024;

#[derive(Clone, Debug)]
pub struct McConfig {
    pub trajectories: usize,
    pub dt: f64,
    pub seed: u64,
    pub initial: InitialGaussian,
    pub t_start: f64,
    pub t_end: f64,
    /// Record every `output_stride` Euler steps.
    pub output_stride: usize,
}

impl McConfig {
    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.trajectories == 0 {
            return Err(Error::invalid(
                "mc.trajectories",
                "need at least one trajectory",
            ));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::invalid("mc.dt", "must be positive"));
        }
        if !(self.t_end > self.t_start) {
            return Err(Error::invalid("mc.t_span", "end must exceed start"));
        }
        if self.output_stride == 0 {
            return Err(Error::invalid("mc.output_stride", "must be at least 1"));
        }
        self.initial.validate(dim)
    }

    pub fn steps(&self) -> usize {
        ((self.t_end - self.t_start) / self.dt).round() as usize
    }

    /// Output times `t_start + k·stride·dt`, always ending at `t_end`.
    pub fn output_times(&self) -> Vec<f64> {
        let n = self.steps();
        let mut out: Vec<f64> = (0..=n)
            .step_by(self.output_stride)
            .map(|k| self.t_start + k as f64 * self.dt)
            .collect();
        if !n.is_multiple_of(self.output_stride) {
            out.push(self.t_start + n as f64 * self.dt);
        }
        out
    }
}

/// Polynomial split into constant, linear and higher terms for fast evaluation.
#[derive(Clone, Debug)]
struct FastPoly {
    constant: f64,
    linear: Vec<(usize, f64)>,
    higher: Vec<(f64, Vec<i32>)>,
}

impl FastPoly {
    fn new(p: &Polynomial) -> Self {
        let mut f = FastPoly {
            constant: 0.0,
            linear: Vec::new(),
            higher: Vec::new(),
        };
        for (a, c) in p.terms() {
            match a.degree() {
                0 => f.constant = c,
                1 => f.linear.push((
                    a.exponents()
                        .iter()
                        .position(|&e| e == 1)
                        .expect("degree one"),
                    c,
                )),
                _ => f
                    .higher
                    .push((c, a.exponents().iter().map(|&e| e as i32).collect())),
            }
        }
        f
    }

    fn is_zero(&self) -> bool {
        self.constant == 0.0 && self.linear.is_empty() && self.higher.is_empty()
    }

    #[inline]
    fn eval(&self, x: &[f64]) -> f64 {
        let mut s = self.constant;
        for &(i, c) in &self.linear {
            s += c * x[i];
        }
        for (c, e) in &self.higher {
            let mut v = *c;
            for (xi, &k) in x.iter().zip(e) {
                if k != 0 {
                    v *= xi.powi(k);
                }
            }
            s += v;
        }
        s
    }
}

/// Euler–Maruyama integrator for one model, reusable across paths.
#[derive(Clone, Debug)]
pub struct PathSimulator {
    dim: usize,
    drift: Vec<FastPoly>,
    /// Nonzero diffusion entries `(state axis, noise axis, h_ik)`.
    diffusion: Vec<(usize, usize, FastPoly)>,
    noise_dim: usize,
    zero_diffusion: bool,
    guard: Option<crate::model::Guard>,
}

/// State of one path between steps.
#[derive(Clone, Debug)]
pub struct PathState {
    pub x: Vec<f64>,
    pub t: f64,
    pub pinned: bool,
    pub impacts: Vec<f64>,
    xi: Vec<f64>,
    dx: Vec<f64>,
}

/// Recorded path.
#[derive(Clone, Debug, Default)]
pub struct SamplePath {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub impacts: Vec<f64>,
}

impl SamplePath {
    /// `t, x1, x2, …`
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let Some(first) = self.states.first() else {
            return Ok(());
        };
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["t".to_string()];
        header.extend((1..=first.len()).map(|i| format!("x{i}")));
        out.write_record(&header).map_err(csv_err)?;
        for (t, x) in self.times.iter().zip(&self.states) {
            let mut row = vec![fmt(*t)];
            row.extend(x.iter().map(|v| fmt(*v)));
            out.write_record(&row).map_err(csv_err)?;
        }
        out.flush().map_err(|e| Error::io("<csv>", e))
    }
}

impl PathSimulator {
    pub fn new(model: &ShsModel) -> Self {
        let mut diffusion = Vec::new();
        for (i, row) in model.diffusion().iter().enumerate() {
            for (k, p) in row.iter().enumerate() {
                if !p.is_zero() {
                    diffusion.push((i, k, FastPoly::new(p)));
                }
            }
        }
        PathSimulator {
            dim: model.dim(),
            drift: model.drift().iter().map(FastPoly::new).collect(),
            diffusion,
            noise_dim: model.noise_dim(),
            zero_diffusion: model.has_zero_diffusion(),
            guard: model.guard().cloned(),
        }
    }

    /// Increment over `h` with standard normal draws `xi`.
    #[inline]
    fn increment(&self, x: &[f64], h: f64, xi: &[f64], out: &mut [f64]) {
        for (o, p) in out.iter_mut().zip(&self.drift) {
            *o = if p.is_zero() { 0.0 } else { p.eval(x) * h };
        }
        if !self.diffusion.is_empty() {
            let sq = h.sqrt();
            for (i, k, p) in &self.diffusion {
                out[*i] += p.eval(x) * sq * xi[*k];
            }
        }
    }

    /// Advance one Euler–Maruyama step of length `dt`, resolving guard hits.
    pub fn step<R: Rng>(&self, s: &mut PathState, dt: f64, rng: &mut R) {
        if s.pinned {
            s.t += dt;
            return;
        }
        let mut remaining = dt;
        // A step can contain at most a few impacts; the bound guards against
        // chattering at the guard.
        for _ in 0..8 {
            if !self.zero_diffusion {
                for z in s.xi.iter_mut() {
                    *z = rng.sample(StandardNormal);
                }
            }
            self.increment(&s.x, remaining, &s.xi, &mut s.dx);
            let crossing = self.guard.as_ref().and_then(|guard| {
                let a = guard.facet.axis();
                let sign = guard.facet.outward_normal()[a];
                let old = s.x[a] - guard.facet.level();
                let new = old + s.dx[a];
                if !(new * sign > 0.0 && old * sign <= 0.0) {
                    return None;
                }
                let frac = (old / (old - new)).clamp(0.0, 1.0);
                let mut hit: Vec<f64> = s.x.iter().zip(&s.dx).map(|(x, d)| x + frac * d).collect();
                hit[a] = guard.facet.level();
                guard.facet.admits(&hit).then_some((guard, frac, hit))
            });
            let Some((guard, frac, hit)) = crossing else {
                for (x, d) in s.x.iter_mut().zip(&s.dx) {
                    *x += d;
                }
                break;
            };
            s.impacts.push(s.t + (dt - remaining) + frac * remaining);
            s.x = guard.reset.apply(&hit);
            remaining *= 1.0 - frac;
            if self.zero_diffusion {
                // Normal speed leaving the guard after the reset.
                let speed: f64 = guard
                    .facet
                    .outward_normal()
                    .iter()
                    .zip(&self.drift)
                    .map(|(n, p)| n * p.eval(&s.x))
                    .sum::<f64>()
                    .abs();
                if speed < ZENO_SPEED {
                    s.pinned = true;
                    break;
                }
            }
            if remaining <= 0.0 {
                break;
            }
        }
        s.t += dt;
    }

    pub fn start(&self, x0: &[f64], t0: f64) -> PathState {
        PathState {
            x: x0.to_vec(),
            t: t0,
            pinned: false,
            impacts: Vec::new(),
            xi: vec![0.0; self.noise_dim],
            dx: vec![0.0; self.dim],
        }
    }
}

/// Stream for trajectory `index` under `seed`.
pub fn path_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Simulate from a fixed `x0`, recording every `record_stride` steps.
pub fn simulate_path<R: Rng>(
    model: &ShsModel,
    x0: &[f64],
    t_span: (f64, f64),
    dt: f64,
    record_stride: usize,
    rng: &mut R,
) -> Result<SamplePath> {
    if x0.len() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            found: x0.len(),
        });
    }
    if !(dt > 0.0) || record_stride == 0 || !(t_span.1 > t_span.0) {
        return Err(Error::invalid(
            "dt",
            "need dt > 0, stride >= 1 and a non-empty span",
        ));
    }
    let sim = PathSimulator::new(model);
    let n = ((t_span.1 - t_span.0) / dt).round() as usize;
    let mut s = sim.start(x0, t_span.0);
    let mut path = SamplePath::default();
    path.times.push(t_span.0);
    path.states.push(s.x.clone());
    for k in 1..=n {
        sim.step(&mut s, dt, rng);
        if k % record_stride == 0 || k == n {
            path.times.push(t_span.0 + k as f64 * dt);
            path.states.push(s.x.clone());
        }
    }
    path.impacts = s.impacts;
    Ok(path)
}

/// Draw `x0 ~ N(mean, diag(std²))` from the path stream.
pub fn sample_initial<R: Rng>(init: &InitialGaussian, rng: &mut R) -> Vec<f64> {
    init.mean
        .iter()
        .zip(&init.std)
        .map(|(m, s)| {
            let z: f64 = rng.sample(StandardNormal);
            m + s * z
        })
        .collect()
}

/// Path `index` of the ensemble defined by `cfg`, reproducible in isolation.
pub fn ensemble_member(model: &ShsModel, cfg: &McConfig, index: u64) -> Result<SamplePath> {
    cfg.validate(model.dim())?;
    let mut rng = path_rng(cfg.seed, index);
    let x0 = sample_initial(&cfg.initial, &mut rng);
    simulate_path(
        model,
        &x0,
        (cfg.t_start, cfg.t_end),
        cfg.dt,
        cfg.output_stride,
        &mut rng,
    )
}

#[derive(Clone, Debug)]
pub struct EnsembleMoments {
    pub times: Vec<f64>,
    pub moments: Vec<MomentVector>,
    /// Sample standard deviation of `x^α` over `√N`, per time.
    pub std_errors: Vec<Vec<f64>>,
    /// Fraction of paths outside the model domain, per time.
    pub excess_mass: Vec<f64>,
    pub trajectories: usize,
}

impl EnsembleMoments {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        write_moment_csv(w, &self.times, &self.moments, Some(&self.std_errors))
    }

    /// `t, excess_mass_fraction`
    pub fn write_excess_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["t", "excess_mass_fraction"])
            .map_err(csv_err)?;
        for (t, e) in self.times.iter().zip(&self.excess_mass) {
            out.write_record([fmt(*t), fmt(*e)]).map_err(csv_err)?;
        }
        out.flush().map_err(|e| Error::io("<csv>", e))
    }

    pub fn max_excess_mass(&self) -> f64 {
        self.excess_mass.iter().cloned().fold(0.0, f64::max)
    }
}

/// Running means and centered second moments (Welford) of one block.
struct BlockSums {
    count: f64,
    means: Vec<f64>,
    m2: Vec<f64>,
    outside: Vec<u64>,
}

/// Empirical moments up to `order` at every output time.
pub fn ensemble_moments(model: &ShsModel, cfg: &McConfig, order: u32) -> Result<EnsembleMoments> {
    cfg.validate(model.dim())?;
    let sim = PathSimulator::new(model);
    let indices = enumerate_multiindices(model.dim(), order);
    let m = indices.len();
    let times = cfg.output_times();
    let nt = times.len();
    let steps = cfg.steps();
    let domain = model.domain().clone();
    let n_blocks = cfg.trajectories.div_ceil(BLOCK);

    let blocks: Vec<BlockSums> = (0..n_blocks)
        .into_par_iter()
        .map(|b| {
            let mut acc = BlockSums {
                count: 0.0,
                means: vec![0.0; nt * m],
                m2: vec![0.0; nt * m],
                outside: vec![0; nt],
            };
            let lo = b * BLOCK;
            let hi = ((b + 1) * BLOCK).min(cfg.trajectories);
            let mut feats = vec![0.0; m];
            for i in lo..hi {
                let mut rng = path_rng(cfg.seed, i as u64);
                let x0 = sample_initial(&cfg.initial, &mut rng);
                let mut s = sim.start(&x0, cfg.t_start);
                let mut slot = 0;
                acc.count += 1.0;
                for k in 0..=steps {
                    if k > 0 {
                        sim.step(&mut s, cfg.dt, &mut rng);
                    }
                    if k % cfg.output_stride == 0 || k == steps {
                        feats[0] = 1.0;
                        crate::maxent::monomials_excluding_constant(
                            s.x.len(),
                            order,
                            &s.x,
                            &mut feats[1..],
                        );
                        let row = slot * m;
                        for j in 0..m {
                            let d = feats[j] - acc.means[row + j];
                            acc.means[row + j] += d / acc.count;
                            acc.m2[row + j] += d * (feats[j] - acc.means[row + j]);
                        }
                        if !domain.contains(&s.x) {
                            acc.outside[slot] += 1;
                        }
                        slot += 1;
                    }
                }
            }
            acc
        })
        .collect();

    let n = cfg.trajectories as f64;
    let mut moments = Vec::with_capacity(nt);
    let mut std_errors = Vec::with_capacity(nt);
    let mut excess_mass = Vec::with_capacity(nt);
    for (slot, t) in times.iter().enumerate() {
        let mut values = Vec::with_capacity(m);
        let mut se = Vec::with_capacity(m);
        for j in 0..m {
            // Pairwise merge of block statistics in block order.
            let (mut count, mut mean, mut m2) = (0.0, 0.0, 0.0);
            for b in &blocks {
                let k = slot * m + j;
                let total = count + b.count;
                let d = b.means[k] - mean;
                mean += d * b.count / total;
                m2 += b.m2[k] + d * d * count * b.count / total;
                count = total;
            }
            let var = if cfg.trajectories > 1 {
                (m2 / (n - 1.0)).max(0.0)
            } else {
                0.0
            };
            values.push(mean);
            se.push((var / n).sqrt());
        }
        values[0] = 1.0;
        se[0] = 0.0;
        moments.push(MomentVector::new(model.dim(), order, values, *t)?);
        std_errors.push(se);
        let out: u64 = blocks.iter().map(|b| b.outside[slot]).sum();
        excess_mass.push(out as f64 / n);
    }
    Ok(EnsembleMoments {
        times,
        moments,
        std_errors,
        excess_mass,
        trajectories: cfg.trajectories,
    })
}

/// Normalized rollout errors per multi-index; `None` marks a vanishing reference.
#[derive(Clone, Debug, PartialEq)]
pub struct RolloutErrors {
    pub dim: usize,
    pub order: u32,
    pub entries: Vec<(MultiIndex, Option<f64>)>,
}

impl RolloutErrors {
    pub fn get(&self, alpha: &MultiIndex) -> Option<f64> {
        self.entries
            .iter()
            .find(|(a, _)| a == alpha)
            .and_then(|(_, v)| *v)
    }

    /// Entries with `|α| ≥ 1`, failing on any flagged one.
    pub fn require_all(&self) -> Result<Vec<(MultiIndex, f64)>> {
        self.entries
            .iter()
            .filter(|(a, _)| !a.is_zero())
            .map(|(a, v)| match v {
                Some(v) => Ok((a.clone(), *v)),
                None => Err(Error::ZeroReference {
                    alpha: a.to_string(),
                }),
            })
            .collect()
    }

    pub fn max(&self) -> f64 {
        self.entries
            .iter()
            .filter_map(|(_, v)| *v)
            .fold(0.0, f64::max)
    }

    pub fn mean(&self) -> f64 {
        let v: Vec<f64> = self
            .entries
            .iter()
            .filter(|(a, _)| !a.is_zero())
            .filter_map(|(_, v)| *v)
            .collect();
        if v.is_empty() {
            0.0
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        }
    }

    /// Two-dimensional heat map: rows `α₁`, columns `α₂`; blank above the
    /// order, `NA` for flagged entries.
    pub fn write_heatmap_csv<W: Write>(&self, w: W) -> Result<()> {
        if self.dim != 2 {
            return Err(Error::Shape(
                "heat map needs a two-dimensional state".into(),
            ));
        }
        let r = self.order;
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["alpha1".to_string()];
        header.extend((0..=r).map(|b| format!("a2_{b}")));
        out.write_record(&header).map_err(csv_err)?;
        for a in 0..=r {
            let mut row = vec![a.to_string()];
            for b in 0..=r {
                if a + b > r {
                    row.push(String::new());
                    continue;
                }
                let alpha = MultiIndex::new(vec![a, b]);
                let entry = self
                    .entries
                    .iter()
                    .find(|(x, _)| *x == alpha)
                    .and_then(|(_, v)| *v);
                row.push(match entry {
                    Some(v) => fmt(v),
                    None if alpha.is_zero() => fmt(0.0),
                    None => "NA".into(),
                });
            }
            out.write_record(&row).map_err(csv_err)?;
        }
        out.flush().map_err(|e| Error::io("<csv>", e))
    }
}

/// Reference value at `t` by linear interpolation between recorded times.
fn interpolate(times: &[f64], values: &[MomentVector], t: f64, j: usize) -> Option<f64> {
    let tol = 1e-9 * (1.0 + t.abs());
    if t < times[0] - tol || t > times[times.len() - 1] + tol {
        return None;
    }
    let k = times.partition_point(|&s| s < t - tol);
    if k < times.len() && (times[k] - t).abs() <= tol {
        return Some(values[k].values()[j]);
    }
    let k = k.clamp(1, times.len() - 1);
    let (t0, t1) = (times[k - 1], times[k]);
    let w = (t - t0) / (t1 - t0);
    Some((1.0 - w) * values[k - 1].values()[j] + w * values[k].values()[j])
}

/// `RMS_t(|m_α − m^MC_α|^{1/|α|}) / RMS_t(|m^MC_α|^{1/|α|})` over the
/// propagated times covered by the reference.
pub fn normalized_rollout_error(
    times: &[f64],
    propagated: &[MomentVector],
    reference_times: &[f64],
    reference: &[MomentVector],
) -> Result<RolloutErrors> {
    let (Some(p0), Some(r0)) = (propagated.first(), reference.first()) else {
        return Err(Error::Schema("empty moment series".into()));
    };
    if p0.dim() != r0.dim() || p0.order() != r0.order() {
        return Err(Error::Schema(format!(
            "order {} / dimension {} does not match reference order {} / dimension {}",
            p0.order(),
            p0.dim(),
            r0.order(),
            r0.dim()
        )));
    }
    let indices = p0.indices();
    let mut entries = Vec::with_capacity(indices.len());
    for (j, alpha) in indices.iter().enumerate() {
        if alpha.is_zero() {
            entries.push((alpha.clone(), Some(0.0)));
            continue;
        }
        let inv = 1.0 / alpha.degree() as f64;
        let mut num = CompensatedSum::default();
        let mut den = CompensatedSum::default();
        let mut count = 0usize;
        for (t, m) in times.iter().zip(propagated) {
            let Some(r) = interpolate(reference_times, reference, *t, j) else {
                continue;
            };
            num.add((m.values()[j] - r).abs().powf(inv).powi(2));
            den.add(r.abs().powf(inv).powi(2));
            count += 1;
        }
        if count == 0 {
            return Err(Error::Schema("time grids do not overlap".into()));
        }
        let num = (num.value() / count as f64).sqrt();
        let den = (den.value() / count as f64).sqrt();
        entries.push((alpha.clone(), (den >= 1e-12).then(|| num / den)));
    }
    Ok(RolloutErrors {
        dim: p0.dim(),
        order: p0.order(),
        entries,
    })
}

/// Convenience wrapper for a propagated trajectory against an ensemble.
pub fn trajectory_rollout_error(
    traj: &MomentTrajectory,
    reference: &EnsembleMoments,
) -> Result<RolloutErrors> {
    normalized_rollout_error(
        &traj.times,
        &traj.moments,
        &reference.times,
        &reference.moments,
    )
}

/// Componentwise RMSE of estimates against truth on a shared grid.
pub fn rollout_rmse(estimates: &[Vec<f64>], truth: &[Vec<f64>]) -> Result<Vec<f64>> {
    if estimates.len() != truth.len() || estimates.is_empty() {
        return Err(Error::Shape(format!(
            "{} estimates against {} truth states",
            estimates.len(),
            truth.len()
        )));
    }
    let dim = truth[0].len();
    let mut acc = vec![0.0; dim];
    for (e, x) in estimates.iter().zip(truth) {
        if e.len() != dim || x.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: e.len(),
            });
        }
        for i in 0..dim {
            acc[i] += (e[i] - x[i]).powi(2);
        }
    }
    Ok(acc
        .iter()
        .map(|s| (s / estimates.len() as f64).sqrt())
        .collect())
}
