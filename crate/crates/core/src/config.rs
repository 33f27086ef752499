//! TOML scenario files: parsing, defaults and validation into typed settings.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::{
    residual_noise_moments, BimodalNoise, MapConfig, MeasurementModel, MeasurementRecord,
};
use crate::mcref::McConfig;
use crate::model::{
    bouncing_ball_model, AffineMap, BouncingBallParams, BoxDomain, Guard, GuardFacet,
    InitialGaussian, ShsModel,
};
use crate::polyalg::Polynomial;
use crate::propagate::PropagationConfig;

/// Raw scenario file. Every section is optional and falls back to defaults.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioFile {
    pub model: ModelSection,
    pub initial: InitialSection,
    pub propagation: PropagationSection,
    pub mc: McSection,
    pub filter: FilterSection,
    pub output: OutputSection,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    /// `bouncing_ball` or `polynomial`.
    pub kind: String,
    pub gravity: f64,
    pub drag: f64,
    pub noise: f64,
    pub restitution: f64,
    pub domain_lower: Vec<f64>,
    pub domain_upper: Vec<f64>,
    /// Polynomial models: variable names, drift and diffusion entries.
    pub vars: Vec<String>,
    pub drift: Vec<String>,
    pub diffusion: Vec<Vec<String>>,
    pub guard: Option<GuardSection>,
}

impl Default for ModelSection {
    fn default() -> Self {
        let p = BouncingBallParams::default();
        ModelSection {
            kind: "bouncing_ball".into(),
            gravity: p.gravity,
            drag: p.drag,
            noise: p.noise,
            restitution: p.restitution,
            domain_lower: p.domain_lower.to_vec(),
            domain_upper: p.domain_upper.to_vec(),
            vars: Vec::new(),
            drift: Vec::new(),
            diffusion: Vec::new(),
            guard: None,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GuardSection {
    pub axis: usize,
    pub level: f64,
    /// `+1` or `−1`: sign of the outward normal along `axis`.
    pub outward_sign: f64,
    /// `[lo, hi]` per remaining axis; `inf` and `-inf` are allowed.
    pub constraints: Vec<[f64; 2]>,
    pub reset_matrix: Vec<Vec<f64>>,
    #[serde(default)]
    pub reset_offset: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InitialSection {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Default for InitialSection {
    fn default() -> Self {
        InitialSection {
            mean: vec![1.5, 0.0],
            std: vec![0.2, 0.5],
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PropagationSection {
    pub order: u32,
    pub dt: f64,
    pub t_start: f64,
    pub t_end: f64,
    pub refit_every: usize,
    pub state_points: Vec<usize>,
    pub guard_points: usize,
    pub max_consecutive_failures: usize,
    /// Adaptive MED window half-width in standard deviations; 0 disables it.
    pub window_sigmas: f64,
}

impl Default for PropagationSection {
    fn default() -> Self {
        let p = PropagationConfig::default();
        PropagationSection {
            order: p.order,
            dt: p.dt,
            t_start: p.t_start,
            t_end: p.t_end,
            refit_every: p.refit_every,
            state_points: p.state_points,
            guard_points: p.guard_points,
            max_consecutive_failures: p.max_consecutive_failures,
            window_sigmas: p.window_sigmas,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McSection {
    pub trajectories: usize,
    pub dt: f64,
    /// Moment order of the ensemble statistics; defaults to the propagation order.
    pub order: Option<u32>,
}

impl Default for McSection {
    fn default() -> Self {
        McSection {
            trajectories: 200_000,
            dt: 1e-4,
            order: None,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FilterSection {
    /// Residual `v = g(y, x)` in the variables `y, x1, …`.
    pub residual_map: String,
    pub residual_order: u32,
    pub bias: f64,
    pub p_bias: f64,
    pub sigma: f64,
    /// Residual box half-width; defaults to 8 effective noise standard deviations.
    pub residual_halfwidth: Option<f64>,
    /// Spacing of synthesized measurements, first one at `t_start + interval`.
    pub interval: f64,
    /// Measurement file with columns `t,y`, relative to the scenario file.
    pub schedule: Option<PathBuf>,
    pub map_grid: usize,
    pub map_iterations: usize,
    /// Times at which posterior MED checkpoints are written.
    pub snapshot_times: Vec<f64>,
}

impl Default for FilterSection {
    fn default() -> Self {
        FilterSection {
            residual_map: "y - x1".into(),
            residual_order: 4,
            bias: 0.05,
            p_bias: 0.5,
            sigma: 0.1,
            residual_halfwidth: None,
            interval: 0.1,
            schedule: None,
            map_grid: 200,
            map_iterations: 100,
            snapshot_times: vec![0.5, 1.0, 1.5, 2.0, 2.5, 3.0],
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub directory: PathBuf,
    /// Record every `stride` propagation steps.
    pub stride: usize,
    pub seed: u64,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            directory: PathBuf::from("out"),
            stride: 10,
            seed: 1,
        }
    }
}

/// How filter measurements are obtained.
#[derive(Clone, Debug)]
pub enum ScheduleSource {
    /// Simulate a truth path and draw `y = h(x) + v` every `interval`.
    Synthesize {
        times: Vec<f64>,
        observation: Polynomial,
    },
    Loaded(Vec<MeasurementRecord>),
}

#[derive(Clone, Debug)]
pub struct FilterSettings {
    pub measurement: MeasurementModel,
    pub noise: BimodalNoise,
    pub schedule: ScheduleSource,
    pub map: MapConfig,
    pub snapshot_times: Vec<f64>,
}

/// Validated scenario.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub file: ScenarioFile,
    pub model: ShsModel,
    pub initial: InitialGaussian,
    pub propagation: PropagationConfig,
    pub mc: McConfig,
    pub mc_order: u32,
    pub filter: FilterSettings,
    pub output_dir: PathBuf,
    pub seed: u64,
}

impl ScenarioFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| {
            Error::config(
                "<file>",
                e.message().to_string() + &span_hint(text, e.span()),
            )
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    /// Validate every section. `base` resolves a relative schedule path.
    pub fn validate(&self, base: Option<&Path>) -> Result<Scenario> {
        let model = build_model(&self.model).map_err(|e| scoped("model", e))?;
        let dim = model.dim();
        let initial = InitialGaussian {
            mean: self.initial.mean.clone(),
            std: self.initial.std.clone(),
        };
        initial.validate(dim).map_err(|e| scoped("initial", e))?;

        let p = &self.propagation;
        if self.output.stride == 0 {
            return Err(Error::config("output.stride", "must be at least 1"));
        }
        if p.state_points.len() != dim || p.state_points.contains(&0) {
            return Err(Error::config(
                "propagation.state_points",
                format!("need {dim} positive node counts"),
            ));
        }
        if p.guard_points == 0 {
            return Err(Error::config(
                "propagation.guard_points",
                "must be positive",
            ));
        }
        if p.max_consecutive_failures == 0 {
            return Err(Error::config(
                "propagation.max_consecutive_failures",
                "must be positive",
            ));
        }
        let propagation = PropagationConfig {
            order: p.order,
            dt: p.dt,
            t_start: p.t_start,
            t_end: p.t_end,
            refit_every: p.refit_every,
            state_points: p.state_points.clone(),
            guard_points: p.guard_points,
            output_stride: self.output.stride,
            max_consecutive_failures: p.max_consecutive_failures,
            window_sigmas: p.window_sigmas,
        };
        propagation
            .validate()
            .map_err(|e| scoped("propagation", e))?;
        propagation.steps().map_err(|e| scoped("propagation", e))?;

        let m = &self.mc;
        if !(m.dt > 0.0 && m.dt.is_finite()) {
            return Err(Error::config("mc.dt", "must be positive"));
        }
        let ratio = self.output.stride as f64 * p.dt / m.dt;
        if (ratio - ratio.round()).abs() > 1e-6 || ratio.round() < 1.0 {
            return Err(Error::config(
                "mc.dt",
                "must divide output.stride × propagation.dt so both record on the same times",
            ));
        }
        let mc = McConfig {
            trajectories: m.trajectories,
            dt: m.dt,
            seed: self.output.seed,
            initial: initial.clone(),
            t_start: p.t_start,
            t_end: p.t_end,
            output_stride: ratio.round() as usize,
        };
        mc.validate(dim).map_err(|e| scoped("mc", e))?;
        let mc_order = m.order.unwrap_or(p.order);
        if mc_order == 0 {
            return Err(Error::config("mc.order", "must be at least 1"));
        }

        let filter =
            build_filter(&self.filter, &propagation, dim, base).map_err(|e| scoped("filter", e))?;
        Ok(Scenario {
            file: self.clone(),
            model,
            initial,
            propagation,
            mc,
            mc_order,
            filter,
            output_dir: self.output.directory.clone(),
            seed: self.output.seed,
        })
    }
}

impl Scenario {
    /// Override the seed everywhere it is used.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.mc.seed = seed;
        self.file.output.seed = seed;
        self
    }
}

fn span_hint(text: &str, span: Option<std::ops::Range<usize>>) -> String {
    match span {
        Some(r) => {
            let line = text[..r.start.min(text.len())].matches('\n').count() + 1;
            format!(" (line {line})")
        }
        None => String::new(),
    }
}

/// Re-labels parameter errors with a section prefix.
fn scoped(section: &str, e: Error) -> Error {
    match e {
        Error::InvalidParameter { name, msg } => {
            let name = name
                .strip_prefix(&format!("{section}."))
                .unwrap_or(&name)
                .to_string();
            Error::config(&format!("{section}.{name}"), msg)
        }
        Error::Config { field, msg } if !field.starts_with(section) => {
            Error::config(&format!("{section}.{field}"), msg)
        }
        Error::Config { .. } | Error::Io { .. } => e,
        other => Error::config(section, other.to_string()),
    }
}

fn build_model(s: &ModelSection) -> Result<ShsModel> {
    match s.kind.as_str() {
        "bouncing_ball" => {
            let pair = |v: &[f64], name: &str| -> Result<[f64; 2]> {
                <[f64; 2]>::try_from(v).map_err(|_| Error::invalid(name, "need two entries"))
            };
            bouncing_ball_model(&BouncingBallParams {
                gravity: s.gravity,
                drag: s.drag,
                noise: s.noise,
                restitution: s.restitution,
                domain_lower: pair(&s.domain_lower, "domain_lower")?,
                domain_upper: pair(&s.domain_upper, "domain_upper")?,
            })
        }
        "polynomial" => {
            let dim = s.vars.len();
            if dim == 0 {
                return Err(Error::invalid("vars", "need at least one state variable"));
            }
            let vars: Vec<&str> = s.vars.iter().map(String::as_str).collect();
            let parse = |text: &str, name: &str| {
                Polynomial::parse_with_vars(text, &vars)
                    .map_err(|e| Error::invalid(name, e.to_string()))
            };
            if s.drift.len() != dim {
                return Err(Error::invalid("drift", format!("need {dim} entries")));
            }
            let drift = s
                .drift
                .iter()
                .map(|t| parse(t, "drift"))
                .collect::<Result<Vec<_>>>()?;
            if s.diffusion.len() != dim {
                return Err(Error::invalid("diffusion", format!("need {dim} rows")));
            }
            let diffusion = s
                .diffusion
                .iter()
                .map(|row| {
                    row.iter()
                        .map(|t| parse(t, "diffusion"))
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<Vec<_>>>()?;
            let domain = BoxDomain::new(s.domain_lower.clone(), s.domain_upper.clone())
                .map_err(|e| Error::invalid("domain_lower", e.to_string()))?;
            let guard = s.guard.as_ref().map(|g| build_guard(g, dim)).transpose()?;
            ShsModel::new(drift, diffusion, guard, domain)
        }
        other => Err(Error::invalid(
            "kind",
            format!("unknown model kind `{other}` (expected bouncing_ball or polynomial)"),
        )),
    }
}

fn build_guard(g: &GuardSection, dim: usize) -> Result<Guard> {
    let facet = GuardFacet::new(
        dim,
        g.axis,
        g.level,
        g.constraints.iter().map(|c| (c[0], c[1])).collect(),
        g.outward_sign,
    )?;
    if g.reset_matrix.len() != dim || g.reset_matrix.iter().any(|r| r.len() != dim) {
        return Err(Error::invalid(
            "guard.reset_matrix",
            format!("need a {dim}×{dim} matrix"),
        ));
    }
    let offset = if g.reset_offset.is_empty() {
        vec![0.0; dim]
    } else {
        g.reset_offset.clone()
    };
    if offset.len() != dim {
        return Err(Error::invalid(
            "guard.reset_offset",
            format!("need {dim} entries"),
        ));
    }
    let flat: Vec<f64> = g.reset_matrix.iter().flatten().copied().collect();
    let reset = AffineMap::new(
        DMatrix::from_row_slice(dim, dim, &flat),
        DVector::from_vec(offset),
    )?;
    Ok(Guard { facet, reset })
}

fn build_filter(
    s: &FilterSection,
    p: &PropagationConfig,
    dim: usize,
    base: Option<&Path>,
) -> Result<FilterSettings> {
    let residual_moments = residual_noise_moments(s.bias, s.p_bias, s.sigma, s.residual_order)
        .map_err(|e| Error::invalid("residual_order", e.to_string()))?;
    if s.residual_order == 0 {
        return Err(Error::invalid("residual_order", "must be at least 1"));
    }
    let noise = BimodalNoise {
        bias: s.bias,
        p_bias: s.p_bias,
        sigma: s.sigma,
    };
    let half = s.residual_halfwidth.unwrap_or(8.0 * noise.effective_std());
    if !(half > 0.0 && half.is_finite()) {
        return Err(Error::invalid("residual_halfwidth", "must be positive"));
    }
    let mut vars = vec!["y".to_string()];
    vars.extend((1..=dim).map(|i| format!("x{i}")));
    let names: Vec<&str> = vars.iter().map(String::as_str).collect();
    let residual_map = Polynomial::parse_with_vars(&s.residual_map, &names)
        .map_err(|e| Error::invalid("residual_map", e.to_string()))?;
    let measurement = MeasurementModel {
        residual_map,
        residual_order: s.residual_order,
        residual_moments,
        residual_domain: BoxDomain::new(vec![-half], vec![half])?,
    };
    measurement.validate(dim)?;
    if s.map_grid < 2 {
        return Err(Error::invalid(
            "map_grid",
            "need at least 2 points per axis",
        ));
    }
    let schedule = match &s.schedule {
        Some(path) => {
            let path = match base {
                Some(b) if path.is_relative() => b.join(path),
                _ => path.clone(),
            };
            let file = std::fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
            ScheduleSource::Loaded(crate::filter::read_schedule_csv(file)?)
        }
        None => {
            if !(s.interval > 0.0) {
                return Err(Error::invalid("interval", "must be positive"));
            }
            let observation = measurement.observation_function().ok_or_else(|| {
                Error::invalid(
                    "residual_map",
                    "synthesized measurements need a residual of the form `y - h(x)`",
                )
            })?;
            let n = ((p.t_end - p.t_start) / s.interval + 1e-9).floor() as usize;
            let times = (1..=n).map(|k| p.t_start + k as f64 * s.interval).collect();
            ScheduleSource::Synthesize { times, observation }
        }
    };
    let times: Vec<f64> = match &schedule {
        ScheduleSource::Synthesize { times, .. } => times.clone(),
        ScheduleSource::Loaded(recs) => recs.iter().map(|r| r.t).collect(),
    };
    if times.iter().any(|&t| t < p.t_start || t > p.t_end + 1e-12) {
        return Err(Error::invalid(
            "schedule",
            "measurement times fall outside the propagation span",
        ));
    }
    if times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::invalid(
            "schedule",
            "measurement times must increase strictly",
        ));
    }
    Ok(FilterSettings {
        measurement,
        noise,
        schedule,
        map: MapConfig {
            grid: s.map_grid,
            iterations: s.map_iterations,
        },
        snapshot_times: s.snapshot_times.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        let s = ScenarioFile::parse("").unwrap().validate(None).unwrap();
        assert_eq!(s.propagation.order, 4);
        assert_eq!(s.mc.output_stride, 100);
        assert_eq!(s.mc.trajectories, 200_000);
        match &s.filter.schedule {
            ScheduleSource::Synthesize { times, .. } => {
                assert_eq!(times.len(), 30);
                assert!((times[29] - 3.0).abs() < 1e-12);
            }
            _ => panic!("expected synthesized schedule"),
        }
        assert!(
            (s.filter.measurement.residual_domain.upper()[0] - 8.0 * 0.0125f64.sqrt()).abs()
                < 1e-12
        );
    }

    #[test]
    fn invalid_restitution_names_field() {
        let e = ScenarioFile::parse("[model]\nrestitution = 1.5\n")
            .unwrap()
            .validate(None)
            .unwrap_err();
        match &e {
            Error::Config { field, .. } => assert_eq!(field, "model.restitution"),
            other => panic!("{other:?}"),
        }
        assert_eq!(e.exit_code(), 2);
    }

    #[test]
    fn unknown_keys_and_bad_types_rejected() {
        assert!(ScenarioFile::parse("[model]\nrestitusion = 0.5\n").is_err());
        assert!(ScenarioFile::parse("[propagation]\norder = \"four\"\n").is_err());
        let e = ScenarioFile::parse("[propagation]\ndt = 0.0007\n")
            .unwrap()
            .validate(None)
            .unwrap_err();
        assert!(
            matches!(e, Error::Config { ref field, .. } if field.starts_with("propagation")),
            "{e:?}"
        );
        let e = ScenarioFile::parse("[mc]\ndt = 3e-4\n")
            .unwrap()
            .validate(None)
            .unwrap_err();
        assert!(
            matches!(e, Error::Config { ref field, .. } if field == "mc.dt"),
            "{e:?}"
        );
    }

    #[test]
    fn polynomial_model_matches_builtin() {
        let text = r#"
[model]
kind = "polynomial"
vars = ["h", "v"]
drift = ["v", "-9.81 - 0.5*v"]
diffusion = [["0"], ["0.5"]]
domain_lower = [0.0, -6.0]
domain_upper = [3.0, 6.0]
[model.guard]
axis = 0
level = 0.0
outward_sign = -1.0
constraints = [[-inf, 0.0]]
reset_matrix = [[1.0, 0.0], [0.0, -0.8]]
"#;
        let s = ScenarioFile::parse(text).unwrap().validate(None).unwrap();
        let b = bouncing_ball_model(&BouncingBallParams::default()).unwrap();
        assert_eq!(s.model.drift(), b.drift());
        assert_eq!(s.model.diffusion_matrix(), b.diffusion_matrix());
        assert_eq!(s.model.guard().unwrap().facet, b.guard().unwrap().facet);
    }

    #[test]
    fn schedule_outside_span_rejected() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("s.csv"), "t,y\n0.5,1.0\n3.5,0.2\n").unwrap();
        let e = ScenarioFile::parse("[filter]\nschedule = \"s.csv\"\n")
            .unwrap()
            .validate(Some(dir.path()))
            .unwrap_err();
        assert!(
            matches!(e, Error::Config { ref field, .. } if field == "filter.schedule"),
            "{e:?}"
        );
    }

    #[test]
    fn round_trip_through_toml() {
        let f = ScenarioFile::default();
        let back = ScenarioFile::parse(&f.to_toml()).unwrap();
        assert_eq!(back.to_toml(), f.to_toml());
    }
}
