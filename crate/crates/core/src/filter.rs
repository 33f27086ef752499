//! Measurement fusion: residual MED, induced likelihood, posterior moments,
//! posterior refit and MAP estimation, and the predict/update loop.

use std::io::Write;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::maxent::{monomials_excluding_constant, MaxEntSolver, MedParams};
use crate::mcref::{rollout_rmse, SamplePath};
use crate::model::{BoxDomain, ShsModel};
use crate::polyalg::{MomentVector, MultiIndex, Polynomial};
use crate::propagate::{csv_err, fmt, FluxRecord, PropagationConfig, Propagator};

/// Node count for the one-dimensional residual MED.
pub const RESIDUAL_POINTS: usize = 128;

/// Smallest admissible `∫ p⁻ exp(−ν)`.
pub const MIN_LOG_MASS: f64 = -690.775_527_898_213_7; // ln 1e-300

/// Polynomial residual `v = g(y, x)` with prescribed residual moments.
#[derive(Clone, Debug)]
pub struct MeasurementModel {
    /// Variables `(y, x1, …, xn)`: axis 0 is the measurement.
    pub residual_map: Polynomial,
    pub residual_order: u32,
    pub residual_moments: MomentVector,
    pub residual_domain: BoxDomain,
}

impl MeasurementModel {
    pub fn validate(&self, state_dim: usize) -> Result<()> {
        if self.residual_map.dim() != state_dim + 1 {
            return Err(Error::DimensionMismatch {
                expected: state_dim + 1,
                found: self.residual_map.dim(),
            });
        }
        if self.residual_moments.dim() != 1 || self.residual_domain.dim() != 1 {
            return Err(Error::Shape(
                "residual moments and domain must be one-dimensional".into(),
            ));
        }
        if self.residual_moments.order() != self.residual_order {
            return Err(Error::Shape(format!(
                "residual moments have order {}, residual order is {}",
                self.residual_moments.order(),
                self.residual_order
            )));
        }
        self.residual_moments.check_mass(1e-12)
    }

    /// `h(x)` when the residual has the form `y − h(x)`.
    pub fn observation_function(&self) -> Option<Polynomial> {
        let dim = self.residual_map.dim();
        let y = MultiIndex::unit(dim, 0);
        let mut h = Polynomial::zero(dim - 1);
        for (a, c) in self.residual_map.terms() {
            if *a == y {
                if c != 1.0 {
                    return None;
                }
            } else if a.exponents()[0] != 0 {
                return None;
            } else {
                let mut e = a.exponents().to_vec();
                e.remove(0);
                h = &h + &Polynomial::monomial(MultiIndex::new(e), -c);
            }
        }
        (self.residual_map.coeff(&y) == 1.0).then_some(h)
    }
}

/// Sign-mixture plus Gaussian noise `v = b·s + ε`, `P(s = 1) = p_bias`.
#[derive(Clone, Debug, PartialEq)]
pub struct BimodalNoise {
    pub bias: f64,
    pub p_bias: f64,
    pub sigma: f64,
}

impl BimodalNoise {
    pub fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        let s = if rng.random::<f64>() < self.p_bias {
            1.0
        } else {
            -1.0
        };
        let z: f64 = rng.sample(StandardNormal);
        self.bias * s + self.sigma * z
    }

    pub fn effective_std(&self) -> f64 {
        let mean = self.bias * (2.0 * self.p_bias - 1.0);
        (self.bias * self.bias + self.sigma * self.sigma - mean * mean).sqrt()
    }
}

/// Exact moments of `v = b·s + ε` up to `order ≤ 8`.
pub fn residual_noise_moments(
    bias: f64,
    p_bias: f64,
    sigma: f64,
    order: u32,
) -> Result<MomentVector> {
    if order > 8 {
        return Err(Error::invalid("residual_order", "at most 8"));
    }
    if !(0.0..=1.0).contains(&p_bias) || sigma < 0.0 || !bias.is_finite() {
        return Err(Error::invalid(
            "noise",
            "need 0 <= p_bias <= 1 and sigma >= 0",
        ));
    }
    let r = order as usize;
    let sign_mean = 2.0 * p_bias - 1.0;
    let mixture: Vec<f64> = (0..=r)
        .map(|j| bias.powi(j as i32) * if j % 2 == 0 { 1.0 } else { sign_mean })
        .collect();
    let gauss: Vec<f64> = (0..=r)
        .map(|j| {
            if j % 2 == 1 {
                0.0
            } else {
                let dfact: f64 = (1..j).step_by(2).map(|k| k as f64).product();
                dfact * sigma.powi(j as i32)
            }
        })
        .collect();
    let values = (0..=r)
        .map(|k| {
            (0..=k)
                .map(|j| binomial(k, j) * mixture[j] * gauss[k - j])
                .sum()
        })
        .collect();
    MomentVector::new(1, order, values, 0.0)
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Residual MED with box conditioning on `domain`.
pub fn fit_residual_med(moments: &MomentVector, domain: &BoxDomain) -> Result<MedParams> {
    let solver = MaxEntSolver::new(domain, moments.order(), &[RESIDUAL_POINTS])?;
    Ok(solver.fit(moments, None)?.0)
}

/// `Σ_α μ_α g(y, x)^α` expanded over state monomials.
pub fn induced_likelihood_coeffs(
    residual: &MedParams,
    residual_map: &Polynomial,
    y: f64,
) -> Result<Polynomial> {
    if residual.dim != 1 {
        return Err(Error::DimensionMismatch {
            expected: 1,
            found: residual.dim,
        });
    }
    let exponent = residual.exponent_state();
    let inner = residual_map.pin(0, y);
    exponent.compose_univariate(&inner)
}

/// Posterior moments `∫x^α p⁻ e^{−ν} / ∫p⁻ e^{−ν}` and the log denominator.
pub fn moment_update(
    prior: &MedParams,
    nu: &Polynomial,
    solver: &MaxEntSolver,
) -> Result<(MomentVector, f64)> {
    let (m, log_mass) = solver.tilted_moments(prior, |x| -nu.eval(x))?;
    if !(log_mass >= MIN_LOG_MASS) {
        return Err(Error::DegenerateUpdate { log_mass });
    }
    Ok((m, log_mass))
}

/// `λ⁻ + ν` in the prior's coordinates, normalized; `None` when `ν` exceeds the order.
pub fn direct_posterior(
    prior: &MedParams,
    nu: &Polynomial,
    solver: &MaxEntSolver,
) -> Result<Option<MedParams>> {
    if nu.degree() > prior.order {
        return Ok(None);
    }
    let add =
        MedParams::from_state_exponent(nu, &prior.domain, prior.order, prior.conditioning.clone())?;
    let mut p = prior.clone();
    for (l, a) in p.multipliers.iter_mut().zip(&add.multipliers) {
        *l += a;
    }
    solver.normalized(p).map(Some)
}

/// Refit the posterior MED, warm-started at `λ⁻ + ν` when degree-compatible.
pub fn posterior_refit(
    posterior: &MomentVector,
    prior: &MedParams,
    nu: &Polynomial,
    solver: &MaxEntSolver,
) -> Result<MedParams> {
    if is_constant(nu) {
        return Ok(prior.clone());
    }
    let init = direct_posterior(prior, nu, solver)?;
    let init = init.as_ref().unwrap_or(prior);
    Ok(solver.fit(posterior, Some(init))?.0)
}

fn is_constant(p: &Polynomial) -> bool {
    p.degree() == 0
}

/// MAP search settings.
#[derive(Clone, Debug)]
pub struct MapConfig {
    pub grid: usize,
    pub iterations: usize,
}

impl Default for MapConfig {
    fn default() -> Self {
        MapConfig {
            grid: 200,
            iterations: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MapEstimate {
    pub x: Vec<f64>,
    /// Exponent value at `x`, without the normalizing constant.
    pub value: f64,
    pub degenerate_flat: bool,
}

/// Minimize the MED exponent over `domain`: grid scan, then projected
/// gradient descent with backtracking.
pub fn map_estimate(med: &MedParams, domain: &BoxDomain, cfg: &MapConfig) -> Result<MapEstimate> {
    if domain.dim() != med.dim {
        return Err(Error::DimensionMismatch {
            expected: med.dim,
            found: domain.dim(),
        });
    }
    if cfg.grid < 2 {
        return Err(Error::invalid(
            "map.grid",
            "need at least 2 points per axis",
        ));
    }
    let n = med.dim;
    let g = cfg.grid;
    let axis: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let (lo, hi) = (domain.lower()[i], domain.upper()[i]);
            (0..g)
                .map(|k| lo + (hi - lo) * k as f64 / (g - 1) as f64)
                .collect()
        })
        .collect();
    let total = g.pow(n as u32);
    let mut best = f64::INFINITY;
    let mut worst = f64::NEG_INFINITY;
    let mut best_x = vec![0.0; n];
    let mut x = vec![0.0; n];
    let mut u = vec![0.0; n];
    let mut feats = vec![0.0; med.multipliers.len()];
    for flat in 0..total {
        let mut r = flat;
        for i in (0..n).rev() {
            x[i] = axis[i][r % g];
            r /= g;
        }
        med.conditioning.to_unit(&x, &mut u);
        monomials_excluding_constant(n, med.order, &u, &mut feats);
        let v: f64 = feats.iter().zip(&med.multipliers).map(|(f, l)| f * l).sum();
        if v < best {
            best = v;
            best_x.copy_from_slice(&x);
        }
        worst = worst.max(v);
    }
    if !best.is_finite() {
        return Err(Error::IntegrationFailure { node: best_x });
    }
    if worst - best <= 1e-12 * (1.0 + best.abs()) {
        let corner: Vec<f64> = axis.iter().map(|a| a[0]).collect();
        return Ok(MapEstimate {
            value: med.exponent_at(&corner),
            x: corner,
            degenerate_flat: true,
        });
    }
    let mut x = best_x;
    let mut fx = best;
    let mut step = 0.5
        * domain
            .half_widths()
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min);
    for _ in 0..cfg.iterations {
        let grad = med.exponent_grad_at(&x);
        let gnorm = grad.iter().map(|v| v * v).sum::<f64>().sqrt();
        if gnorm == 0.0 {
            break;
        }
        let mut t = step / gnorm;
        let mut moved = false;
        for _ in 0..60 {
            let mut trial: Vec<f64> = x.iter().zip(&grad).map(|(xi, gi)| xi - t * gi).collect();
            domain.project(&mut trial);
            let ft = med.exponent_at(&trial);
            let dec: f64 = x
                .iter()
                .zip(&trial)
                .zip(&grad)
                .map(|((a, b), g)| g * (a - b))
                .sum();
            if ft <= fx - 1e-4 * dec && ft < fx {
                x = trial;
                fx = ft;
                moved = true;
                break;
            }
            t *= 0.5;
        }
        if !moved {
            break;
        }
        step = (2.0 * t * gnorm).min(step * 4.0);
    }
    Ok(MapEstimate {
        x,
        value: fx,
        degenerate_flat: false,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct MeasurementRecord {
    pub t: f64,
    pub y: f64,
}

/// Reads `t, y` rows.
pub fn read_schedule_csv<R: std::io::Read>(r: R) -> Result<Vec<MeasurementRecord>> {
    let mut rd = csv::Reader::from_reader(r);
    let header = rd.headers().map_err(csv_err)?.clone();
    if header.len() < 2 || header.get(0) != Some("t") || header.get(1) != Some("y") {
        return Err(Error::Schema("schedule needs columns `t,y`".into()));
    }
    let mut out = Vec::new();
    for rec in rd.records() {
        let rec = rec.map_err(csv_err)?;
        let parse = |i: usize| -> Result<f64> {
            rec.get(i)
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| Error::Schema(format!("bad schedule row {:?}", rec)))
        };
        out.push(MeasurementRecord {
            t: parse(0)?,
            y: parse(1)?,
        });
    }
    Ok(out)
}

pub fn write_schedule_csv<W: Write>(w: W, schedule: &[MeasurementRecord]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["t", "y"]).map_err(csv_err)?;
    for m in schedule {
        out.write_record([fmt(m.t), fmt(m.y)]).map_err(csv_err)?;
    }
    out.flush().map_err(|e| Error::io("<csv>", e))
}

/// `y_k = h(x(t_k)) + v_k` along a recorded path.
pub fn synthesize_measurements<R: Rng>(
    truth: &SamplePath,
    times: &[f64],
    observation: &Polynomial,
    noise: &BimodalNoise,
    rng: &mut R,
) -> Result<Vec<MeasurementRecord>> {
    times
        .iter()
        .map(|&t| {
            let x = state_at(truth, t)
                .ok_or_else(|| Error::invalid("schedule", format!("no truth state at t = {t}")))?;
            Ok(MeasurementRecord {
                t,
                y: observation.eval(x) + noise.sample(rng),
            })
        })
        .collect()
}

fn state_at(path: &SamplePath, t: f64) -> Option<&[f64]> {
    let tol = 1e-9 * (1.0 + t.abs());
    let k = path.times.partition_point(|&s| s < t - tol);
    (k < path.times.len() && (path.times[k] - t).abs() <= tol).then(|| path.states[k].as_slice())
}

/// Settings for a filtering run.
#[derive(Clone, Debug)]
pub struct FilterConfig {
    pub propagation: PropagationConfig,
    pub measurement: MeasurementModel,
    pub map: MapConfig,
}

/// Step length that lands on every measurement time.
pub fn aligned_step(cfg: &PropagationConfig, schedule: &[MeasurementRecord]) -> Result<f64> {
    let mut gap = f64::INFINITY;
    let mut prev = cfg.t_start;
    for m in schedule {
        if m.t - prev > 0.0 {
            gap = gap.min(m.t - prev);
        }
        prev = m.t;
    }
    let mut dt = cfg.dt;
    if gap.is_finite() && gap < f64::INFINITY {
        dt = gap / (gap / cfg.dt).ceil();
    }
    let span = cfg.t_end - cfg.t_start;
    let on_grid = |t: f64| ((t / dt) - (t / dt).round()).abs() < 1e-6;
    if !on_grid(span) {
        return Err(Error::config(
            "filter.schedule",
            format!("step {dt} does not divide the time span"),
        ));
    }
    for m in schedule {
        if !on_grid(m.t - cfg.t_start) {
            return Err(Error::config(
                "filter.schedule",
                format!(
                    "measurement at t = {} is not on the step grid (dt = {dt})",
                    m.t
                ),
            ));
        }
    }
    Ok(dt)
}

/// Measurement update record.
#[derive(Clone, Debug)]
pub struct UpdateRecord {
    pub t: f64,
    pub y: f64,
    pub prior: MomentVector,
    pub prior_med: MedParams,
    pub posterior: MomentVector,
    pub posterior_med: MedParams,
    pub log_mass: f64,
}

#[derive(Clone, Debug, Default)]
pub struct FilterRun {
    pub times: Vec<f64>,
    pub moments: Vec<MomentVector>,
    pub med: Vec<MedParams>,
    pub map: Vec<MapEstimate>,
    /// Measurement applied at the recorded time, if any.
    pub measured: Vec<Option<f64>>,
    pub flux_log: Vec<FluxRecord>,
    pub updates: Vec<UpdateRecord>,
    pub schedule: Vec<MeasurementRecord>,
    /// Truth state at each recorded time when a path was supplied.
    pub truth: Vec<Option<Vec<f64>>>,
    pub dt: f64,
}

impl FilterRun {
    /// Per-component RMSE of MAP against truth over recorded times with truth.
    pub fn rmse(&self) -> Option<Vec<f64>> {
        let (est, tru): (Vec<Vec<f64>>, Vec<Vec<f64>>) = self
            .map
            .iter()
            .zip(&self.truth)
            .filter_map(|(m, t)| t.as_ref().map(|t| (m.x.clone(), t.clone())))
            .unzip();
        rollout_rmse(&est, &tru).ok()
    }

    pub fn max_mass_defect(&self) -> f64 {
        self.moments
            .iter()
            .map(|m| (m.mass() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// `t, map_x…, truth_x…, y, m_…`
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let Some(first) = self.moments.first() else {
            return Ok(());
        };
        let n = first.dim();
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["t".to_string()];
        header.extend((1..=n).map(|i| format!("map_x{i}")));
        header.extend((1..=n).map(|i| format!("truth_x{i}")));
        header.push("y".into());
        header.extend(first.indices().iter().map(|a| format!("m_{}", a.label())));
        out.write_record(&header).map_err(csv_err)?;
        for k in 0..self.times.len() {
            let mut row = vec![fmt(self.times[k])];
            row.extend(self.map[k].x.iter().map(|v| fmt(*v)));
            match &self.truth[k] {
                Some(x) => row.extend(x.iter().map(|v| fmt(*v))),
                None => row.extend((0..n).map(|_| String::new())),
            }
            row.push(self.measured[k].map(fmt).unwrap_or_default());
            row.extend(self.moments[k].values().iter().map(|v| fmt(*v)));
            out.write_record(&row).map_err(csv_err)?;
        }
        out.flush().map_err(|e| Error::io("<csv>", e))
    }
}

/// Predict/update loop with MAP estimates at every recorded time.
pub fn run_filter(
    model: &ShsModel,
    m0: &MomentVector,
    schedule: &[MeasurementRecord],
    cfg: &FilterConfig,
    truth: Option<&SamplePath>,
) -> Result<FilterRun> {
    let p = &cfg.propagation;
    p.validate()?;
    cfg.measurement.validate(model.dim())?;
    for w in schedule.windows(2) {
        if !(w[1].t > w[0].t) {
            return Err(Error::config(
                "filter.schedule",
                "measurement times must increase strictly",
            ));
        }
    }
    if let (Some(a), Some(b)) = (schedule.first(), schedule.last()) {
        if a.t < p.t_start || b.t > p.t_end {
            return Err(Error::config(
                "filter.schedule",
                "measurement times fall outside the time span",
            ));
        }
    }
    let dt = aligned_step(p, schedule)?;
    let steps = ((p.t_end - p.t_start) / dt).round() as usize;
    // Keep the recording cadence in time when dt was reduced.
    let stride = ((p.output_stride as f64 * p.dt / dt).round() as usize).max(1);
    let mut pcfg = p.clone();
    pcfg.dt = dt;

    let residual = fit_residual_med(
        &cfg.measurement.residual_moments,
        &cfg.measurement.residual_domain,
    )?;
    let mut prop = Propagator::new(model, m0, &pcfg)?;
    let mut run = FilterRun {
        schedule: schedule.to_vec(),
        dt,
        ..Default::default()
    };
    let step_of = |t: f64| ((t - p.t_start) / dt).round() as usize;
    let mut next = 0usize;

    for k in 0..=steps {
        if k > 0 {
            prop.step(dt)?;
        }
        let t = p.t_start + k as f64 * dt;
        let mut measured = None;
        while next < schedule.len() && step_of(schedule[next].t) == k {
            let rec = &schedule[next];
            let nu = induced_likelihood_coeffs(&residual, &cfg.measurement.residual_map, rec.y)?;
            let prior = prop.moments().clone();
            let prior_med = prop.med().clone();
            let (posterior, log_mass) = if is_constant(&nu) {
                (prior.clone(), 0.0)
            } else {
                moment_update(&prior_med, &nu, prop.solver()).map_err(|e| e.at_time(t))?
            };
            let posterior_med = posterior_refit(&posterior, &prior_med, &nu, prop.solver())
                .map_err(|e| e.at_time(t))?;
            prop.reset_state(posterior.clone(), posterior_med.clone());
            run.updates.push(UpdateRecord {
                t,
                y: rec.y,
                prior,
                prior_med,
                posterior,
                posterior_med,
                log_mass,
            });
            measured = Some(rec.y);
            next += 1;
        }
        if k % stride == 0 || k == steps || measured.is_some() {
            let est =
                map_estimate(prop.med(), &prop.med().domain, &cfg.map).map_err(|e| e.at_time(t))?;
            run.times.push(t);
            let mut m = prop.moments().clone();
            m.time = t;
            run.moments.push(m);
            run.med.push(prop.med().clone());
            run.map.push(est);
            run.measured.push(measured);
            run.flux_log.push(prop.flux_record());
            run.truth
                .push(truth.and_then(|tr| state_at(tr, t).map(<[f64]>::to_vec)));
        }
    }
    Ok(run)
}
