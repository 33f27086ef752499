//! Moment prediction: generator table, guard flux correction and time stepping.
//!
//! The moment ODE is `ṁ_α = E[Aφ_α] + Δ_α`. For models in the closed class the
//! first term is a fixed linear map of `m`; the second is a guard-surface
//! integral evaluated on the current MED.

use std::io::Write;

use crate::error::{Error, Result};
use crate::maxent::{med_density, med_density_grad, FitReport, MaxEntSolver, MedParams};
use crate::model::{generator_apply, BoxDomain, Guard, ShsModel};
use crate::polyalg::{
    count_multiindices, enumerate_multiindices, index_of, MomentVector, MultiIndex, Polynomial,
};
use crate::quad::{guard_rule, CompensatedSum, QuadratureRule};

/// `E[Aφ_α]` as sparse rows over moment indices.
#[derive(Clone, Debug)]
pub struct GeneratorTable {
    dim: usize,
    order: u32,
    indices: Vec<MultiIndex>,
    rows: Vec<Vec<(usize, f64)>>,
}

impl GeneratorTable {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn order(&self) -> u32 {
        self.order
    }

    pub fn indices(&self) -> &[MultiIndex] {
        &self.indices
    }

    /// Coefficients `(β, c)` with `E[Aφ_α] = Σ c·m_β`.
    pub fn row(&self, alpha: &MultiIndex) -> Option<Vec<(MultiIndex, f64)>> {
        let i = index_of(self.dim, alpha)?;
        let row = self.rows.get(i)?;
        Some(
            row.iter()
                .map(|&(j, c)| (self.indices[j].clone(), c))
                .collect(),
        )
    }

    pub fn apply(&self, m: &[f64], out: &mut [f64]) {
        for (o, row) in out.iter_mut().zip(&self.rows) {
            *o = row.iter().map(|&(j, c)| c * m[j]).sum();
        }
    }
}

pub fn build_generator_table(model: &ShsModel, order: u32) -> Result<GeneratorTable> {
    let dim = model.dim();
    let indices = enumerate_multiindices(dim, order);
    let mut rows = Vec::with_capacity(indices.len());
    for alpha in &indices {
        let image = generator_apply(model, &Polynomial::monomial(alpha.clone(), 1.0))?;
        if image.degree() > order {
            return Err(Error::ClosureViolation {
                alpha: alpha.to_string(),
                degree: image.degree(),
                order,
            });
        }
        let mut row: Vec<(usize, f64)> = image
            .terms()
            .map(|(b, c)| (index_of(dim, b).expect("degree checked"), c))
            .collect();
        row.sort_by_key(|r| r.0);
        rows.push(row);
    }
    Ok(GeneratorTable {
        dim,
        order,
        indices,
        rows,
    })
}

/// Guard quadrature with the model data needed for `J·n` tabulated per node.
#[derive(Clone, Debug)]
pub struct FluxEvaluator {
    dim: usize,
    order: u32,
    rule: QuadratureRule,
    normal: Vec<f64>,
    /// `X(x_i)·n`
    drift_normal: Vec<f64>,
    /// `Σ_ij (∂_j H_ij)(x_i) n_i`
    div_h_normal: Vec<f64>,
    /// `Σ_i n_i H_ij(x)` per node, length `dim` each.
    h_normal: Vec<Vec<f64>>,
    /// `φ_α(Δx_i) − φ_α(x_i)`, row per node.
    jumps: Vec<f64>,
}

impl FluxEvaluator {
    pub fn new(model: &ShsModel, order: u32, points: usize) -> Result<Self> {
        let guard = model.guard().ok_or(Error::NoGuard)?;
        let rule = guard_rule(&guard.facet, model.domain(), points)?;
        let dim = model.dim();
        let normal = guard.facet.outward_normal().to_vec();
        let indices = enumerate_multiindices(dim, order);
        let m = indices.len();
        let h = model.diffusion_matrix();
        let dh: Vec<Vec<Polynomial>> = (0..dim)
            .map(|i| (0..dim).map(|j| h[i][j].diff(j)).collect())
            .collect();
        let mut drift_normal = Vec::with_capacity(rule.len());
        let mut div_h_normal = Vec::with_capacity(rule.len());
        let mut h_normal = Vec::with_capacity(rule.len());
        let mut jumps = Vec::with_capacity(rule.len() * m);
        let mut drift = vec![0.0; dim];
        for x in rule.nodes() {
            model.drift_at(x, &mut drift);
            drift_normal.push(dot(&drift, &normal));
            let mut dv = 0.0;
            let mut hn = vec![0.0; dim];
            for i in 0..dim {
                if normal[i] == 0.0 {
                    continue;
                }
                for j in 0..dim {
                    dv += normal[i] * dh[i][j].eval(x);
                    hn[j] += normal[i] * h[i][j].eval(x);
                }
            }
            div_h_normal.push(dv);
            h_normal.push(hn);
            let y = guard.reset.apply(x);
            for a in &indices {
                jumps.push(a.eval(&y) - a.eval(x));
            }
        }
        Ok(FluxEvaluator {
            dim,
            order,
            rule,
            normal,
            drift_normal,
            div_h_normal,
            h_normal,
            jumps,
        })
    }

    pub fn rule(&self) -> &QuadratureRule {
        &self.rule
    }

    pub fn normal(&self) -> &[f64] {
        &self.normal
    }

    /// `(J·n)₊` at every guard node for the given density.
    pub fn outflow(&self, med: &MedParams) -> Vec<f64> {
        self.rule
            .nodes()
            .enumerate()
            .map(|(i, x)| {
                let p = med_density(med, x);
                if p == 0.0 {
                    return 0.0;
                }
                let grad = med_density_grad(med, x);
                let jn = self.drift_normal[i] * p
                    - self.div_h_normal[i] * p
                    - dot(&self.h_normal[i], &grad);
                jn.max(0.0)
            })
            .collect()
    }

    /// `Δ_α` for every `|α| ≤ order`, graded-lex.
    pub fn flux(&self, med: &MedParams) -> Vec<f64> {
        let m = count_multiindices(self.dim, self.order);
        let outflow = self.outflow(med);
        let mut acc = vec![CompensatedSum::default(); m];
        for (i, (&w, &q)) in self.rule.weights().iter().zip(&outflow).enumerate() {
            if q == 0.0 {
                continue;
            }
            let row = &self.jumps[i * m..(i + 1) * m];
            for (a, j) in acc.iter_mut().zip(row) {
                a.add(w * q * j);
            }
        }
        acc.iter().map(CompensatedSum::value).collect()
    }
}

/// `∫_G (φ_α(Δx) − φ_α(x)) (J·n)₊ dS` on an explicit guard rule.
pub fn boundary_flux(
    model: &ShsModel,
    med: &MedParams,
    alpha: &MultiIndex,
    grule: &QuadratureRule,
) -> Result<f64> {
    let guard = model.guard().ok_or(Error::NoGuard)?;
    if alpha.dim() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            found: alpha.dim(),
        });
    }
    let n = guard.facet.outward_normal();
    let dim = model.dim();
    let h = model.diffusion_matrix();
    let mut drift = vec![0.0; dim];
    let mut acc = CompensatedSum::default();
    for (x, &w) in grule.nodes().zip(grule.weights()) {
        let p = med_density(med, x);
        if p == 0.0 {
            continue;
        }
        let grad = med_density_grad(med, x);
        model.drift_at(x, &mut drift);
        let mut jn = 0.0;
        for i in 0..dim {
            if n[i] == 0.0 {
                continue;
            }
            let mut ji = drift[i] * p;
            for j in 0..dim {
                ji -= h[i][j].diff(j).eval(x) * p + h[i][j].eval(x) * grad[j];
            }
            jn += n[i] * ji;
        }
        let y = guard.reset.apply(x);
        acc.add(w * (alpha.eval(&y) - alpha.eval(x)) * jn.max(0.0));
    }
    Ok(acc.value())
}

/// `ṁ = E[Aφ] + Δ`.
pub fn moment_rhs(table: &GeneratorTable, m: &MomentVector, flux: &[f64]) -> Result<Vec<f64>> {
    if m.order() != table.order || m.dim() != table.dim || flux.len() != m.values().len() {
        return Err(Error::Shape(
            "moment vector, generator table and flux disagree in order".into(),
        ));
    }
    let mut out = vec![0.0; flux.len()];
    table.apply(m.values(), &mut out);
    for (o, f) in out.iter_mut().zip(flux) {
        *o += f;
    }
    out[0] = 0.0;
    Ok(out)
}

/// Settings for a propagation run.
#[derive(Clone, Debug)]
pub struct PropagationConfig {
    pub order: u32,
    pub dt: f64,
    pub t_start: f64,
    pub t_end: f64,
    pub refit_every: usize,
    pub state_points: Vec<usize>,
    pub guard_points: usize,
    /// Record every `output_stride` steps.
    pub output_stride: usize,
    pub max_consecutive_failures: usize,
    /// Half-width, in standard deviations, of the adaptive MED support
    /// window; `0` fits on the full model box.
    pub window_sigmas: f64,
}

impl Default for PropagationConfig {
    fn default() -> Self {
        PropagationConfig {
            order: 4,
            dt: 1e-3,
            t_start: 0.0,
            t_end: 3.0,
            refit_every: 1,
            state_points: vec![64, 64],
            guard_points: 64,
            output_stride: 10,
            max_consecutive_failures: 10,
            window_sigmas: 8.0,
        }
    }
}

impl PropagationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::invalid("dt", "must be positive"));
        }
        if !(self.t_end > self.t_start) {
            return Err(Error::invalid("t_span", "end must exceed start"));
        }
        if self.refit_every == 0 || self.output_stride == 0 {
            return Err(Error::invalid("refit_every", "cadences must be at least 1"));
        }
        if self.order == 0 {
            return Err(Error::invalid("order", "must be at least 1"));
        }
        if !(self.window_sigmas >= 0.0 && self.window_sigmas.is_finite()) {
            return Err(Error::invalid("window_sigmas", "must be finite and >= 0"));
        }
        Ok(())
    }

    /// Number of steps; `dt` must divide the span up to rounding.
    pub fn steps(&self) -> Result<usize> {
        let n = ((self.t_end - self.t_start) / self.dt).round();
        if ((n * self.dt) - (self.t_end - self.t_start)).abs() > 1e-9 * (self.t_end - self.t_start)
        {
            return Err(Error::invalid("dt", "must divide the time span"));
        }
        Ok(n as usize)
    }
}

/// Flux evaluated at a recorded time with fit diagnostics.
#[derive(Clone, Debug, PartialEq)]
pub struct FluxRecord {
    pub t: f64,
    pub flux: Vec<f64>,
    pub fit_failed: bool,
    pub fit_iterations: usize,
}

#[derive(Clone, Debug, Default)]
pub struct MomentTrajectory {
    pub times: Vec<f64>,
    pub moments: Vec<MomentVector>,
    pub med: Vec<MedParams>,
    pub flux_log: Vec<FluxRecord>,
}

impl MomentTrajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Largest `|m₀ − 1|` over the record.
    pub fn max_mass_defect(&self) -> f64 {
        self.moments
            .iter()
            .map(|m| (m.mass() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        write_moment_csv(w, &self.times, &self.moments, None)
    }

    pub fn write_flux_csv<W: Write>(&self, w: W) -> Result<()> {
        let Some(first) = self.moments.first() else {
            return Ok(());
        };
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["t".to_string()];
        header.extend(first.indices().iter().map(|a| format!("d_{}", a.label())));
        header.push("fit_failed".into());
        header.push("fit_iterations".into());
        out.write_record(&header).map_err(csv_err)?;
        for r in &self.flux_log {
            let mut row = vec![fmt(r.t)];
            row.extend(r.flux.iter().map(|v| fmt(*v)));
            row.push((r.fit_failed as u8).to_string());
            row.push(r.fit_iterations.to_string());
            out.write_record(&row).map_err(csv_err)?;
        }
        out.flush().map_err(|e| Error::io("<csv>", e))
    }

    /// One JSON object per line: `{"t": …, "med": {…}}`.
    pub fn write_checkpoints<W: Write>(&self, mut w: W) -> Result<()> {
        for (t, p) in self.times.iter().zip(&self.med) {
            writeln!(w, "{}", checkpoint_line(*t, p)).map_err(|e| Error::io("<checkpoint>", e))?;
        }
        Ok(())
    }
}

pub fn checkpoint_line(t: f64, p: &MedParams) -> String {
    serde_json::json!({ "t": t, "med": p }).to_string()
}

/// Parses one checkpoint line.
pub fn parse_checkpoint_line(line: &str) -> Result<(f64, MedParams)> {
    #[derive(serde::Deserialize)]
    struct Record {
        t: f64,
        med: MedParams,
    }
    let r: Record =
        serde_json::from_str(line).map_err(|e| Error::Schema(format!("checkpoint: {e}")))?;
    Ok((r.t, r.med))
}

pub(crate) fn fmt(v: f64) -> String {
    format!("{v:e}")
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::Schema(format!("csv: {e}"))
}

/// `t, m_0_0, m_1_0, …` and optional `se_…` columns.
pub fn write_moment_csv<W: Write>(
    w: W,
    times: &[f64],
    moments: &[MomentVector],
    se: Option<&[Vec<f64>]>,
) -> Result<()> {
    let Some(first) = moments.first() else {
        return Ok(());
    };
    let labels: Vec<String> = first.indices().iter().map(MultiIndex::label).collect();
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["t".to_string()];
    header.extend(labels.iter().map(|l| format!("m_{l}")));
    if se.is_some() {
        header.extend(labels.iter().map(|l| format!("se_{l}")));
    }
    out.write_record(&header).map_err(csv_err)?;
    for (k, (t, m)) in times.iter().zip(moments).enumerate() {
        let mut row = vec![fmt(*t)];
        row.extend(m.values().iter().map(|v| fmt(*v)));
        if let Some(se) = se {
            row.extend(se[k].iter().map(|v| fmt(*v)));
        }
        out.write_record(&row).map_err(csv_err)?;
    }
    out.flush().map_err(|e| Error::io("<csv>", e))
}

/// Columns of a moment CSV: times, moment vectors and (when present) standard errors.
pub type MomentTable = (Vec<f64>, Vec<MomentVector>, Option<Vec<Vec<f64>>>);

/// Reads a file written by [`write_moment_csv`]; dimension and order are
/// inferred from the header.
pub fn read_moment_csv<R: std::io::Read>(r: R) -> Result<MomentTable> {
    let mut rd = csv::Reader::from_reader(r);
    let header = rd.headers().map_err(csv_err)?.clone();
    if header.get(0) != Some("t") {
        return Err(Error::Schema("first column must be `t`".into()));
    }
    let mcols: Vec<&str> = header.iter().filter(|h| h.starts_with("m_")).collect();
    let secols = header.iter().filter(|h| h.starts_with("se_")).count();
    let Some(last) = mcols.last() else {
        return Err(Error::Schema("no moment columns".into()));
    };
    let alpha_last: Vec<u32> = last[2..]
        .split('_')
        .map(|s| {
            s.parse()
                .map_err(|_| Error::Schema(format!("bad column `{last}`")))
        })
        .collect::<Result<_>>()?;
    let dim = alpha_last.len();
    let order: u32 = alpha_last.iter().sum();
    let expected: Vec<String> = enumerate_multiindices(dim, order)
        .iter()
        .map(|a| format!("m_{}", a.label()))
        .collect();
    if mcols.len() != expected.len() || mcols.iter().zip(&expected).any(|(a, b)| a != b) {
        return Err(Error::Schema(
            "moment columns are not a complete graded-lex set".into(),
        ));
    }
    if secols != 0 && secols != expected.len() {
        return Err(Error::Schema(
            "standard-error columns do not match moment columns".into(),
        ));
    }
    let m = expected.len();
    let mut times = Vec::new();
    let mut moments = Vec::new();
    let mut ses = Vec::new();
    for rec in rd.records() {
        let rec = rec.map_err(csv_err)?;
        let vals: Vec<f64> = rec
            .iter()
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Schema(format!("not a number: `{s}`")))
            })
            .collect::<Result<_>>()?;
        if vals.len() != 1 + m + secols {
            return Err(Error::Schema("ragged row".into()));
        }
        times.push(vals[0]);
        moments.push(MomentVector::new(
            dim,
            order,
            vals[1..=m].to_vec(),
            vals[0],
        )?);
        if secols > 0 {
            ses.push(vals[1 + m..].to_vec());
        }
    }
    Ok((times, moments, (secols > 0).then_some(ses)))
}

/// A new window is cut this much wider than the one that triggered it.
const WINDOW_MARGIN: f64 = 1.25;

/// Nodes with density above `e^{−28} ≈ 7e-13` of the peak count as support.
const SUPPORT_LOG_RATIO: f64 = 28.0;

/// `mean ± k·std` per axis from first and second moments, clipped to `domain`.
/// Returns `domain` for `k = 0` or order-1 moments.
pub fn moment_window(m: &MomentVector, domain: &BoxDomain, sigmas: f64) -> BoxDomain {
    if sigmas == 0.0 || m.order() < 2 {
        return domain.clone();
    }
    let n = m.dim();
    let half = domain.half_widths();
    let mut lo = Vec::with_capacity(n);
    let mut hi = Vec::with_capacity(n);
    for i in 0..n {
        let mut e = vec![0; n];
        e[i] = 1;
        let mean = m.get(&MultiIndex::new(e.clone())).unwrap_or(0.0);
        e[i] = 2;
        let var = m.get(&MultiIndex::new(e)).unwrap_or(0.0) - mean * mean;
        let w = (sigmas * var.max(0.0).sqrt()).max(1e-3 * half[i]);
        let (dl, du) = (domain.lower()[i], domain.upper()[i]);
        let mut a = (mean - w).max(dl);
        let mut b = (mean + w).min(du);
        // Keep a usable width when the mean sits at or beyond a face.
        if b - a < 1e-3 * half[i] {
            a = (b - 1e-3 * half[i]).max(dl);
            b = (a + 1e-3 * half[i]).min(du);
        }
        lo.push(a);
        hi.push(b);
    }
    BoxDomain::new(lo, hi).unwrap_or_else(|_| domain.clone())
}

/// Extends `window` by the reset image of its guard face, so mass about to
/// jump lands inside the support.
pub fn guard_aware_window(
    window: BoxDomain,
    guard: Option<&Guard>,
    domain: &BoxDomain,
) -> BoxDomain {
    let Some(g) = guard else {
        return window;
    };
    let (axis, level) = (g.facet.axis(), g.facet.level());
    if !(window.lower()[axis] <= level && level <= window.upper()[axis]) {
        return window;
    }
    let Ok(face) = g.facet.clipped_intervals(&window) else {
        return window;
    };
    let mut lo = window.lower().to_vec();
    let mut hi = window.upper().to_vec();
    for corner in 0..1usize << face.len() {
        let f: Vec<f64> = face
            .iter()
            .enumerate()
            .map(|(k, (a, b))| if corner >> k & 1 == 0 { *a } else { *b })
            .collect();
        let y = g.reset.apply(&g.facet.embed(&f));
        for i in 0..y.len() {
            lo[i] = lo[i].min(y[i]).max(domain.lower()[i]);
            hi[i] = hi[i].max(y[i]).min(domain.upper()[i]);
        }
    }
    BoxDomain::new(lo, hi).unwrap_or(window)
}

/// `current` covers `want` and is no more than 2.5 times as wide on any axis.
fn window_still_fits(current: &BoxDomain, want: &BoxDomain) -> bool {
    (0..want.dim()).all(|i| {
        let (cl, cu) = (current.lower()[i], current.upper()[i]);
        let (wl, wu) = (want.lower()[i], want.upper()[i]);
        cl <= wl && cu >= wu && (cu - cl) <= 2.5 * (wu - wl)
    })
}

/// Stateful moment integrator shared by propagation and filtering.
#[derive(Clone, Debug)]
pub struct Propagator {
    table: GeneratorTable,
    solver: MaxEntSolver,
    domain: BoxDomain,
    guard: Option<Guard>,
    points: Vec<usize>,
    window_sigmas: f64,
    flux: Option<FluxEvaluator>,
    m: MomentVector,
    med: MedParams,
    t: f64,
    refit_every: usize,
    steps_since_refit: usize,
    consecutive_failures: usize,
    max_failures: usize,
    last_fit_failed: bool,
    last_iterations: usize,
}

impl Propagator {
    pub fn new(model: &ShsModel, m0: &MomentVector, cfg: &PropagationConfig) -> Result<Self> {
        cfg.validate()?;
        let table = build_generator_table(model, cfg.order)?;
        if m0.order() != cfg.order || m0.dim() != model.dim() {
            return Err(Error::Shape(format!(
                "initial moments are order {}, propagation order is {}",
                m0.order(),
                cfg.order
            )));
        }
        let window = guard_aware_window(
            moment_window(m0, model.domain(), WINDOW_MARGIN * cfg.window_sigmas),
            model.guard(),
            model.domain(),
        );
        let solver = MaxEntSolver::new(&window, cfg.order, &cfg.state_points)?;
        let flux = match model.guard() {
            Some(_) => Some(FluxEvaluator::new(model, cfg.order, cfg.guard_points)?),
            None => None,
        };
        let (med, report) = solver.fit(m0, None).map_err(|e| e.at_time(cfg.t_start))?;
        let mut m = m0.clone();
        m.time = cfg.t_start;
        Ok(Propagator {
            table,
            solver,
            domain: model.domain().clone(),
            guard: model.guard().cloned(),
            points: cfg.state_points.clone(),
            window_sigmas: cfg.window_sigmas,
            flux,
            m,
            med,
            t: cfg.t_start,
            refit_every: cfg.refit_every,
            steps_since_refit: 0,
            consecutive_failures: 0,
            max_failures: cfg.max_consecutive_failures,
            last_fit_failed: false,
            last_iterations: report.iterations,
        })
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    pub fn moments(&self) -> &MomentVector {
        &self.m
    }

    pub fn med(&self) -> &MedParams {
        &self.med
    }

    pub fn solver(&self) -> &MaxEntSolver {
        &self.solver
    }

    pub fn table(&self) -> &GeneratorTable {
        &self.table
    }

    /// Current flux vector (zero for guard-free models).
    pub fn current_flux(&self) -> Vec<f64> {
        match &self.flux {
            Some(f) => f.flux(&self.med),
            None => vec![0.0; self.m.values().len()],
        }
    }

    pub fn flux_record(&self) -> FluxRecord {
        FluxRecord {
            t: self.t,
            flux: self.current_flux(),
            fit_failed: self.last_fit_failed,
            fit_iterations: self.last_iterations,
        }
    }

    /// Replace the state after a measurement update.
    pub fn reset_state(&mut self, m: MomentVector, med: MedParams) {
        self.m = m;
        self.m.time = self.t;
        self.med = med;
        self.steps_since_refit = 0;
    }

    /// Refit the MED to the current moments, falling back to the previous one.
    fn refit(&mut self) -> Result<()> {
        let adaptive = self.window_sigmas > 0.0;
        let moved = adaptive && !window_still_fits(self.solver.domain(), &self.window_for(1.0));
        let fitted = if moved {
            self.refit_on_new_window()
        } else {
            match self.solver.fit(&self.m, Some(&self.med)) {
                Ok((med, rep)) => Ok((med, rep, None)),
                // A fresh window may still hold the moments.
                Err(Error::NonRealizable(_)) if adaptive => self.refit_on_new_window(),
                Err(e) => Err(e),
            }
        };
        match fitted {
            Ok((med, report, solver)) => {
                if let Some(solver) = solver {
                    self.solver = solver;
                }
                self.med = med;
                self.consecutive_failures = 0;
                self.last_fit_failed = false;
                self.last_iterations = report.iterations;
                Ok(())
            }
            Err(e @ Error::NonRealizable(_)) => {
                self.consecutive_failures += 1;
                self.last_fit_failed = true;
                if self.consecutive_failures >= self.max_failures {
                    return Err(e.at_time(self.t));
                }
                Ok(())
            }
            Err(e) => Err(e.at_time(self.t)),
        }
    }

    /// Hull of `mean ± k·std` and the current MED's effective support, widened
    /// by `margin − 1` of its width and extended by the reset image.
    fn window_for(&self, margin: f64) -> BoxDomain {
        let w = moment_window(&self.m, &self.domain, margin * self.window_sigmas);
        let w = match self.solver.support_box(&self.med, SUPPORT_LOG_RATIO) {
            Ok(b) => {
                let pad: Vec<f64> = (0..b.dim())
                    .map(|i| 0.5 * (margin - 1.0) * (b.upper()[i] - b.lower()[i]))
                    .collect();
                let lo = (0..b.dim()).map(|i| {
                    (b.lower()[i] - pad[i])
                        .max(self.domain.lower()[i])
                        .min(w.lower()[i])
                });
                let hi = (0..b.dim()).map(|i| {
                    (b.upper()[i] + pad[i])
                        .min(self.domain.upper()[i])
                        .max(w.upper()[i])
                });
                BoxDomain::new(lo.collect(), hi.collect()).unwrap_or(w)
            }
            Err(_) => w,
        };
        guard_aware_window(w, self.guard.as_ref(), &self.domain)
    }

    fn refit_on_new_window(&self) -> Result<(MedParams, FitReport, Option<MaxEntSolver>)> {
        let window = self.window_for(WINDOW_MARGIN);
        let solver = MaxEntSolver::new(&window, self.table.order(), &self.points)?;
        let exponent = self.med.exponent_state();
        let init = MedParams::from_state_exponent(
            &exponent,
            &window,
            self.med.order,
            solver.conditioning().clone(),
        )?;
        let (med, report) = solver.fit(&self.m, Some(&init))?;
        Ok((med, report, Some(solver)))
    }

    /// One RK4 step of length `dt` with the flux frozen at the current MED.
    pub fn step(&mut self, dt: f64) -> Result<()> {
        let flux = self.current_flux();
        let n = flux.len();
        let rhs = |m: &[f64], out: &mut [f64]| {
            self.table.apply(m, out);
            for (o, f) in out.iter_mut().zip(&flux) {
                *o += f;
            }
            out[0] = 0.0;
        };
        let m0 = self.m.values().to_vec();
        let mut k1 = vec![0.0; n];
        let mut k2 = vec![0.0; n];
        let mut k3 = vec![0.0; n];
        let mut k4 = vec![0.0; n];
        let mut tmp = vec![0.0; n];
        rhs(&m0, &mut k1);
        for i in 0..n {
            tmp[i] = m0[i] + 0.5 * dt * k1[i];
        }
        rhs(&tmp, &mut k2);
        for i in 0..n {
            tmp[i] = m0[i] + 0.5 * dt * k2[i];
        }
        rhs(&tmp, &mut k3);
        for i in 0..n {
            tmp[i] = m0[i] + dt * k3[i];
        }
        rhs(&tmp, &mut k4);
        let values = self.m.values_mut();
        for i in 0..n {
            values[i] = m0[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::IntegrationFailure { node: vec![self.t] }.at_time(self.t));
        }
        self.t += dt;
        self.m.time = self.t;
        self.steps_since_refit += 1;
        if self.steps_since_refit >= self.refit_every {
            self.steps_since_refit = 0;
            self.refit()?;
        }
        Ok(())
    }
}

/// Integrate the moment ODE over the configured span.
pub fn propagate(
    model: &ShsModel,
    m0: &MomentVector,
    cfg: &PropagationConfig,
) -> Result<MomentTrajectory> {
    let steps = cfg.steps()?;
    let mut prop = Propagator::new(model, m0, cfg)?;
    let mut traj = MomentTrajectory::default();
    let record = |p: &Propagator, traj: &mut MomentTrajectory| {
        traj.times.push(p.time());
        traj.moments.push(p.moments().clone());
        traj.med.push(p.med().clone());
        traj.flux_log.push(p.flux_record());
    };
    record(&prop, &mut traj);
    for k in 1..=steps {
        prop.step(cfg.dt)?;
        if k % cfg.output_stride == 0 || k == steps {
            record(&prop, &mut traj);
        }
    }
    Ok(traj)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
