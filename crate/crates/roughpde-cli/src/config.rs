//! Experiment configuration: the JSON schema, schema- and cross-reference
//! validation, and the named presets that double as regression anchors.
//!
//! A config is one JSON object per experiment. Parsing is strict
//! (`deny_unknown_fields` throughout) and parse errors carry the offending
//! field path. After parsing, [`cross_validate`] checks everything that the
//! schema alone cannot: dimensional agreement between grid, fields, driver,
//! and operator; command-specific requirements; and basic numeric sanity.

use serde::{Deserialize, Serialize};
use std::path::PathBuf;

/// What the experiment runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CommandKind {
    /// One full pipeline solve; writes the solution table.
    Solve,
    /// Refinement study along dyadic coarsenings of the driver.
    Wongzakai,
    /// Sup-norm contraction check over random initial-data pairs.
    Contraction,
    /// Area-decorated approximations against the drift-corrected equation.
    Twisted,
    /// Flow solve with forward/inverse round-trip reporting.
    Flowcheck,
    /// Structural checks of the conjugated operator.
    Opcheck,
}

impl CommandKind {
    pub fn name(self) -> &'static str {
        match self {
            CommandKind::Solve => "solve",
            CommandKind::Wongzakai => "wongzakai",
            CommandKind::Contraction => "contraction",
            CommandKind::Twisted => "twisted",
            CommandKind::Flowcheck => "flowcheck",
            CommandKind::Opcheck => "opcheck",
        }
    }
}

/// Operator coefficients: constant tables; the closure forms live in the
/// library API, the CLI covers the named shapes.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum OperatorSpec {
    /// `F ≡ 0`: pure transport by the driving fields.
    Zero,
    /// `tr(σσᵀ X) + b·p` with constant `σ` (rows × columns) and `b`.
    Linear { sigma: Vec<Vec<f64>>, drift: Vec<f64> },
    /// Infimum over a finite control family of constant-coefficient linear
    /// operators: one `sigma` matrix and one `drift` vector per control.
    Hjb {
        sigmas: Vec<Vec<Vec<f64>>>,
        drifts: Vec<Vec<f64>>,
    },
}

/// Driving vector fields: a named library family or coefficient tables.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum FieldsSpec {
    /// Named library set: `"sin-cos"` (V = (sin x, cos x) on R¹) or
    /// `"ones"` (the single constant field 1 on R¹).
    Library { name: String },
    /// Constant fields, one column vector per driving channel.
    Constant { columns: Vec<Vec<f64>> },
    /// Linear fields `V_i(x) = A_i x`, one square matrix per channel.
    Linear { matrices: Vec<Vec<Vec<f64>>> },
}

impl FieldsSpec {
    /// `(state dimension, channel count)` when derivable from the spec.
    pub fn shape(&self) -> Option<(usize, usize)> {
        match self {
            FieldsSpec::Library { name } => match name.as_str() {
                "sin-cos" => Some((1, 2)),
                "ones" => Some((1, 1)),
                _ => None,
            },
            FieldsSpec::Constant { columns } => {
                let n = columns.first()?.len();
                Some((n, columns.len()))
            }
            FieldsSpec::Linear { matrices } => {
                let n = matrices.first()?.len();
                Some((n, matrices.len()))
            }
        }
    }
}

/// Driving signal: seeded Brownian sample, named smooth path, pure-area
/// rotation, the motionless driver, or a driver table from disk.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DriverSpec {
    /// Chord lift of a Brownian sample on the dyadic mesh `2^level`.
    Brownian {
        seed: u64,
        dimension: usize,
        level: u32,
        horizon: f64,
    },
    /// Named smooth path sampled on a uniform mesh: `"sine"`
    /// (`A·sin(ω t)` on R¹), `"line-sine"` (`s·t + A·sin(ω t)` on R¹), or
    /// `"circle"` (`radius·(cos θ − 1, sin θ)`, `θ = 2π·turns·t/T`, on R²).
    Smooth {
        name: String,
        horizon: f64,
        mesh: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        amplitude: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        frequency: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        slope: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        turns: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        radius: Option<f64>,
    },
    /// Zero displacement with a constant-rate area cell on axes `(i, j)`.
    PureArea {
        dimension: usize,
        horizon: f64,
        mesh: usize,
        i: usize,
        j: usize,
        rate: f64,
    },
    /// The motionless driver (identity flow).
    Stationary {
        dimension: usize,
        horizon: f64,
        mesh: usize,
    },
    /// A driver table written by this tool or by hand.
    File { path: PathBuf },
}

impl DriverSpec {
    /// Channel count when derivable without reading files.
    pub fn dimension(&self) -> Option<usize> {
        match self {
            DriverSpec::Brownian { dimension, .. }
            | DriverSpec::PureArea { dimension, .. }
            | DriverSpec::Stationary { dimension, .. } => Some(*dimension),
            DriverSpec::Smooth { name, .. } => match name.as_str() {
                "sine" | "line-sine" => Some(1),
                "circle" => Some(2),
                _ => None,
            },
            DriverSpec::File { .. } => None,
        }
    }

    /// Horizon when derivable without reading files.
    pub fn horizon(&self) -> Option<f64> {
        match self {
            DriverSpec::Brownian { horizon, .. }
            | DriverSpec::Smooth { horizon, .. }
            | DriverSpec::PureArea { horizon, .. }
            | DriverSpec::Stationary { horizon, .. } => Some(*horizon),
            DriverSpec::File { .. } => None,
        }
    }
}

/// Uniform solution grid (mirrors the library grid).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub n: usize,
    pub extent: f64,
    pub spacing: f64,
    pub horizon: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(default = "default_slices")]
    pub output_slices: usize,
}

fn default_slices() -> usize {
    1
}

/// Initial data shapes.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum InitialSpec {
    Gaussian {
        amplitude: f64,
        center: Vec<f64>,
        width: f64,
    },
    Bump {
        amplitude: f64,
        center: Vec<f64>,
        radius: f64,
    },
    Box {
        amplitude: f64,
        center: Vec<f64>,
        halfwidth: f64,
    },
    Zero,
}

/// Knobs for the refinement studies (`wongzakai`, `twisted`).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudySpec {
    /// Dyadic levels, strictly increasing.
    pub levels: Vec<u32>,
    /// Reference mesh level for seeded studies; defaults inside the library.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fine_level: Option<u32>,
    /// Driver axes carrying the area decoration (`twisted` only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub axes: Option<[usize; 2]>,
    /// Pre-registered bound for the `twisted` ratio assertion: the last
    /// level's distance to the corrected solution must be at most this
    /// fraction of its distance to the uncorrected one.
    #[serde(default = "default_ratio_bound")]
    pub ratio_bound: f64,
}

fn default_ratio_bound() -> f64 {
    0.1
}

/// Knobs for the contraction sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContractionSpec {
    pub pairs: usize,
    pub seed: u64,
}

/// Knobs for `flowcheck`/`opcheck` and the solve-quality assertion.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckSpec {
    #[serde(default = "default_samples")]
    pub samples: usize,
    /// Assertion tolerance. Defaults: flow round trip 1e-6 for sampled
    /// smooth drivers, 1e-3 for level-2 rough drivers (the truncated-step
    /// inverse is a method error, not a bug); operator consistency 1e-8.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
    /// Probe points for `flowcheck`; defaults to a spread over the grid box.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probes: Option<Vec<Vec<f64>>>,
}

fn default_samples() -> usize {
    1000
}

impl Default for CheckSpec {
    fn default() -> Self {
        CheckSpec {
            samples: default_samples(),
            tolerance: None,
            probes: None,
        }
    }
}

/// One experiment: a command plus everything it needs.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub command: CommandKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub operator: Option<OperatorSpec>,
    pub fields: FieldsSpec,
    pub driver: DriverSpec,
    pub grid: GridSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial: Option<InitialSpec>,
    /// Output directory; the `--out` flag overrides it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub study: Option<StudySpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contraction: Option<ContractionSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub check: Option<CheckSpec>,
}

/// One validation finding: the config field it concerns and what is wrong.
#[derive(Debug, Clone, Serialize)]
pub struct Diagnostic {
    pub field: String,
    pub message: String,
}

impl std::fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

fn diag(list: &mut Vec<Diagnostic>, field: &str, message: impl Into<String>) {
    list.push(Diagnostic {
        field: field.to_string(),
        message: message.into(),
    });
}

/// Parse a config from JSON text; errors name the field path and position.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, Diagnostic> {
    let mut de = serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let path = e.path().to_string();
        let field = if path == "." { "config".to_string() } else { path };
        Diagnostic {
            field,
            message: e.inner().to_string(),
        }
    })
}

/// Everything the schema cannot express: dimensional cross-references and
/// command-specific requirements. Returns every finding, not just the first.
pub fn cross_validate(cfg: &ExperimentConfig) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let grid = &cfg.grid;

    // Grid sanity.
    if grid.n != 1 && grid.n != 2 {
        diag(&mut out, "grid.n", format!("dimension {} is not 1 or 2", grid.n));
    }
    if !(grid.spacing > 0.0) {
        diag(&mut out, "grid.spacing", "spacing must be positive");
    }
    if grid.extent < grid.spacing {
        diag(
            &mut out,
            "grid.extent",
            "extent must be at least one spacing",
        );
    }
    if !(grid.horizon > 0.0) {
        diag(&mut out, "grid.horizon", "horizon must be positive");
    }
    if grid.output_slices == 0 {
        diag(&mut out, "grid.output_slices", "need at least one slice");
    }
    if let Some(dt) = grid.dt {
        if !(dt > 0.0) {
            diag(&mut out, "grid.dt", "a pinned step must be positive");
        }
    }

    // Fields shape and cross-reference with the grid.
    let fields_shape = cfg.fields.shape();
    match &cfg.fields {
        FieldsSpec::Library { name } => {
            if fields_shape.is_none() {
                diag(
                    &mut out,
                    "fields.name",
                    format!("unknown library set {name:?}; known: \"sin-cos\", \"ones\""),
                );
            }
        }
        FieldsSpec::Constant { columns } => {
            if columns.is_empty() {
                diag(&mut out, "fields.columns", "need at least one column");
            } else if columns.iter().any(|c| c.len() != columns[0].len()) {
                diag(&mut out, "fields.columns", "columns differ in length");
            }
        }
        FieldsSpec::Linear { matrices } => {
            if matrices.is_empty() {
                diag(&mut out, "fields.matrices", "need at least one matrix");
            } else {
                let n = matrices[0].len();
                if matrices
                    .iter()
                    .any(|m| m.len() != n || m.iter().any(|r| r.len() != n))
                {
                    diag(
                        &mut out,
                        "fields.matrices",
                        "matrices must be square and share one shape",
                    );
                }
            }
        }
    }
    if let Some((fields_n, fields_d)) = fields_shape {
        if fields_n != grid.n {
            diag(
                &mut out,
                "grid.n",
                format!(
                    "grid dimension {} does not match the field dimension {}",
                    grid.n, fields_n
                ),
            );
        }
        if let Some(driver_d) = cfg.driver.dimension() {
            if driver_d != fields_d {
                diag(
                    &mut out,
                    "driver.dimension",
                    format!(
                        "driver supplies {driver_d} channels but the fields expect {fields_d}"
                    ),
                );
            }
        }
    }

    // Driver sanity.
    match &cfg.driver {
        DriverSpec::Brownian {
            dimension,
            level,
            horizon,
            ..
        } => {
            if *dimension == 0 {
                diag(&mut out, "driver.dimension", "need at least one channel");
            }
            if *level == 0 || *level > 24 {
                diag(&mut out, "driver.level", "level must lie in 1..=24");
            }
            if !(*horizon > 0.0) {
                diag(&mut out, "driver.horizon", "horizon must be positive");
            }
        }
        DriverSpec::Smooth {
            name,
            horizon,
            mesh,
            ..
        } => {
            if !matches!(name.as_str(), "sine" | "line-sine" | "circle") {
                diag(
                    &mut out,
                    "driver.name",
                    format!(
                        "unknown smooth path {name:?}; known: \"sine\", \"line-sine\", \"circle\""
                    ),
                );
            }
            if !(*horizon > 0.0) {
                diag(&mut out, "driver.horizon", "horizon must be positive");
            }
            if *mesh == 0 {
                diag(&mut out, "driver.mesh", "need at least one interval");
            }
        }
        DriverSpec::PureArea {
            dimension,
            horizon,
            mesh,
            i,
            j,
            ..
        } => {
            if *i >= *dimension || *j >= *dimension || i == j {
                diag(
                    &mut out,
                    "driver.i",
                    format!("axes ({i}, {j}) invalid for dimension {dimension}"),
                );
            }
            if !(*horizon > 0.0) {
                diag(&mut out, "driver.horizon", "horizon must be positive");
            }
            if *mesh == 0 {
                diag(&mut out, "driver.mesh", "need at least one interval");
            }
        }
        DriverSpec::Stationary { horizon, mesh, .. } => {
            if !(*horizon > 0.0) {
                diag(&mut out, "driver.horizon", "horizon must be positive");
            }
            if *mesh == 0 {
                diag(&mut out, "driver.mesh", "need at least one interval");
            }
        }
        DriverSpec::File { path } => {
            if !path.exists() {
                diag(
                    &mut out,
                    "driver.path",
                    format!("driver file {} not found", path.display()),
                );
            }
        }
    }
    if let Some(h) = cfg.driver.horizon() {
        if h < grid.horizon - 1e-9 * grid.horizon.max(1.0) {
            diag(
                &mut out,
                "driver.horizon",
                format!(
                    "driver ends at {h} but the grid marches to {}",
                    grid.horizon
                ),
            );
        }
    }

    // Operator requirements and shapes.
    let needs_operator = !matches!(cfg.command, CommandKind::Flowcheck);
    match (&cfg.operator, needs_operator) {
        (None, true) => diag(
            &mut out,
            "operator",
            format!("command {:?} needs an operator", cfg.command.name()),
        ),
        (Some(OperatorSpec::Linear { sigma, drift }), _) => {
            if sigma.is_empty() || sigma.iter().any(|r| r.len() != sigma[0].len()) {
                diag(
                    &mut out,
                    "operator.sigma",
                    "sigma must be a nonempty rectangular matrix",
                );
            } else if sigma.len() != grid.n {
                diag(
                    &mut out,
                    "operator.sigma",
                    format!("{} rows for a grid of dimension {}", sigma.len(), grid.n),
                );
            }
            if drift.len() != grid.n {
                diag(
                    &mut out,
                    "operator.drift",
                    format!("length {} for a grid of dimension {}", drift.len(), grid.n),
                );
            }
        }
        (Some(OperatorSpec::Hjb { sigmas, drifts }), _) => {
            if sigmas.is_empty() {
                diag(&mut out, "operator.sigmas", "need at least one control");
            } else {
                let rows = sigmas[0].len();
                let cols = sigmas[0].first().map(|r| r.len()).unwrap_or(0);
                if rows != grid.n {
                    diag(
                        &mut out,
                        "operator.sigmas",
                        format!("{rows} rows for a grid of dimension {}", grid.n),
                    );
                }
                if cols == 0
                    || sigmas
                        .iter()
                        .any(|m| m.len() != rows || m.iter().any(|r| r.len() != cols))
                {
                    diag(
                        &mut out,
                        "operator.sigmas",
                        "all control matrices must share one nonempty shape",
                    );
                }
            }
            if drifts.len() != sigmas.len() {
                diag(
                    &mut out,
                    "operator.drifts",
                    format!(
                        "{} drift vectors for {} control matrices",
                        drifts.len(),
                        sigmas.len()
                    ),
                );
            }
            if drifts.iter().any(|d| d.len() != grid.n) {
                diag(
                    &mut out,
                    "operator.drifts",
                    format!("every drift must have length {}", grid.n),
                );
            }
        }
        _ => {}
    }

    // Initial data.
    if let Some(init) = &cfg.initial {
        let (center, scale, scale_field) = match init {
            InitialSpec::Gaussian { center, width, .. } => (Some(center), *width, "initial.width"),
            InitialSpec::Bump { center, radius, .. } => (Some(center), *radius, "initial.radius"),
            InitialSpec::Box {
                center, halfwidth, ..
            } => (Some(center), *halfwidth, "initial.halfwidth"),
            InitialSpec::Zero => (None, 1.0, ""),
        };
        if let Some(center) = center {
            if center.len() != grid.n {
                diag(
                    &mut out,
                    "initial.center",
                    format!("length {} for a grid of dimension {}", center.len(), grid.n),
                );
            }
            if !(scale > 0.0) {
                diag(&mut out, scale_field, "must be positive");
            }
        }
    }

    // Commands that march an initial condition need one.
    if matches!(
        cfg.command,
        CommandKind::Solve | CommandKind::Wongzakai | CommandKind::Twisted
    ) && cfg.initial.is_none()
    {
        diag(
            &mut out,
            "initial",
            format!("command {:?} needs initial data", cfg.command.name()),
        );
    }

    // Command-specific requirements.
    match cfg.command {
        CommandKind::Wongzakai | CommandKind::Twisted => {
            let Some(study) = &cfg.study else {
                diag(
                    &mut out,
                    "study",
                    format!("command {:?} needs a study block", cfg.command.name()),
                );
                return out;
            };
            if study.levels.is_empty() {
                diag(&mut out, "study.levels", "need at least one level");
            }
            if study.levels.windows(2).any(|w| w[1] <= w[0]) {
                diag(
                    &mut out,
                    "study.levels",
                    "levels must be strictly increasing",
                );
            }
            let top = study.levels.last().copied().unwrap_or(0);
            match &cfg.driver {
                DriverSpec::Brownian { .. } => {
                    let fine = study.fine_level.unwrap_or(top + 2);
                    if fine < top {
                        diag(
                            &mut out,
                            "study.fine_level",
                            format!("reference level {fine} is coarser than the top level {top}"),
                        );
                    }
                }
                DriverSpec::Smooth { mesh, .. }
                | DriverSpec::PureArea { mesh, .. }
                | DriverSpec::Stationary { mesh, .. } => {
                    let cells = 1usize << top.min(63);
                    if *mesh % cells != 0 {
                        diag(
                            &mut out,
                            "driver.mesh",
                            format!(
                                "{mesh} intervals do not refine the dyadic level {top} \
                                 ({cells} cells)"
                            ),
                        );
                    }
                }
                DriverSpec::File { .. } => {}
            }
            if cfg.command == CommandKind::Twisted {
                let axes = study.axes.unwrap_or([0, 1]);
                let d = cfg.driver.dimension().or(fields_shape.map(|s| s.1));
                if let Some(d) = d {
                    if axes[0] >= d || axes[1] >= d || axes[0] == axes[1] {
                        diag(
                            &mut out,
                            "study.axes",
                            format!("axes {axes:?} invalid for {d} channels"),
                        );
                    }
                }
            }
            if !(study.ratio_bound > 0.0) {
                diag(&mut out, "study.ratio_bound", "must be positive");
            }
        }
        CommandKind::Contraction => {
            if let Some(c) = &cfg.contraction {
                if c.pairs == 0 {
                    diag(&mut out, "contraction.pairs", "need at least one pair");
                }
            }
        }
        CommandKind::Flowcheck | CommandKind::Opcheck => {
            if let Some(check) = &cfg.check {
                if check.samples == 0 {
                    diag(&mut out, "check.samples", "need at least one sample");
                }
                if let Some(tol) = check.tolerance {
                    if !(tol > 0.0) {
                        diag(&mut out, "check.tolerance", "must be positive");
                    }
                }
                if let Some(probes) = &check.probes {
                    if probes.iter().any(|p| p.len() != grid.n) {
                        diag(
                            &mut out,
                            "check.probes",
                            format!("every probe must have length {}", grid.n),
                        );
                    }
                }
            }
        }
        CommandKind::Solve => {}
    }

    out
}

/// Named presets. Each returns a complete, validating config.
pub fn preset(name: &str) -> Option<ExperimentConfig> {
    let cfg = match name {
        // Pure transport by a constant field along a smooth sine path; the
        // solution is the initial bump carried by the path.
        "transport" => ExperimentConfig {
            command: CommandKind::Solve,
            operator: Some(OperatorSpec::Zero),
            fields: FieldsSpec::Library {
                name: "ones".into(),
            },
            driver: DriverSpec::Smooth {
                name: "sine".into(),
                horizon: 0.5,
                mesh: 512,
                amplitude: Some(0.7),
                frequency: Some(2.0),
                slope: None,
                turns: None,
                radius: None,
            },
            grid: GridSpec {
                n: 1,
                extent: 4.0,
                spacing: 0.01,
                horizon: 0.5,
                dt: None,
                output_slices: 4,
            },
            initial: Some(InitialSpec::Bump {
                amplitude: 1.0,
                center: vec![0.0],
                radius: 1.5,
            }),
            output: Some(PathBuf::from("out/transport")),
            study: None,
            contraction: None,
            check: None,
        },
        // Heat equation whose spatial argument rides a drifting sine path.
        "heat-shift" => ExperimentConfig {
            command: CommandKind::Solve,
            operator: Some(OperatorSpec::Linear {
                sigma: vec![vec![1.0]],
                drift: vec![0.0],
            }),
            fields: FieldsSpec::Library {
                name: "ones".into(),
            },
            driver: DriverSpec::Smooth {
                name: "line-sine".into(),
                horizon: 0.25,
                mesh: 512,
                amplitude: Some(0.2),
                frequency: Some(4.0),
                slope: Some(0.6),
                turns: None,
                radius: None,
            },
            grid: GridSpec {
                n: 1,
                extent: 4.0,
                spacing: 0.02,
                horizon: 0.25,
                dt: None,
                output_slices: 2,
            },
            initial: Some(InitialSpec::Gaussian {
                amplitude: 1.0,
                center: vec![0.0],
                width: 0.5,
            }),
            output: Some(PathBuf::from("out/heat-shift")),
            study: None,
            contraction: None,
            check: None,
        },
        // The rotation driver with zero displacement: the flow spirals while
        // the path stands still, landing at -pi after one unit of time.
        "oscillatory-circle" => ExperimentConfig {
            command: CommandKind::Flowcheck,
            operator: None,
            fields: FieldsSpec::Library {
                name: "sin-cos".into(),
            },
            driver: DriverSpec::PureArea {
                dimension: 2,
                horizon: 1.0,
                mesh: 64,
                i: 0,
                j: 1,
                rate: std::f64::consts::PI,
            },
            grid: GridSpec {
                n: 1,
                extent: 2.0,
                spacing: 0.05,
                horizon: 1.0,
                dt: None,
                output_slices: 1,
            },
            initial: None,
            output: Some(PathBuf::from("out/oscillatory-circle")),
            study: None,
            contraction: None,
            check: Some(CheckSpec {
                samples: default_samples(),
                tolerance: Some(1e-6),
                probes: Some(vec![vec![-1.0], vec![0.0], vec![1.0]]),
            }),
        },
        // Area-decorated chordal approximations drift to the corrected
        // transport equation instead of the plain one.
        "twisted-sincos" => ExperimentConfig {
            command: CommandKind::Twisted,
            operator: Some(OperatorSpec::Zero),
            fields: FieldsSpec::Library {
                name: "sin-cos".into(),
            },
            driver: DriverSpec::Stationary {
                dimension: 2,
                horizon: 0.5,
                mesh: 64,
            },
            grid: GridSpec {
                n: 1,
                extent: 3.0,
                spacing: 0.02,
                horizon: 0.5,
                dt: None,
                output_slices: 1,
            },
            initial: Some(InitialSpec::Gaussian {
                amplitude: 1.0,
                center: vec![0.0],
                width: 0.6,
            }),
            output: Some(PathBuf::from("out/twisted-sincos")),
            study: Some(StudySpec {
                levels: vec![3, 4, 5, 6],
                fine_level: None,
                axes: Some([0, 1]),
                ratio_bound: 0.1,
            }),
            contraction: None,
            check: None,
        },
        // Two-control Bellman operator under a Brownian driver; random
        // initial-data pairs must contract in sup norm.
        "hjb-two-controls" => ExperimentConfig {
            command: CommandKind::Contraction,
            operator: Some(OperatorSpec::Hjb {
                sigmas: vec![vec![vec![0.8]], vec![vec![1.2]]],
                drifts: vec![vec![1.0], vec![-1.0]],
            }),
            fields: FieldsSpec::Library {
                name: "sin-cos".into(),
            },
            driver: DriverSpec::Brownian {
                seed: 7,
                dimension: 2,
                level: 6,
                horizon: 0.25,
            },
            grid: GridSpec {
                n: 1,
                extent: 2.0,
                spacing: 0.05,
                horizon: 0.25,
                dt: None,
                output_slices: 1,
            },
            initial: None,
            output: Some(PathBuf::from("out/hjb-two-controls")),
            study: None,
            contraction: Some(ContractionSpec { pairs: 10, seed: 99 }),
            check: None,
        },
        _ => return None,
    };
    Some(cfg)
}

/// Preset names, for listings and error messages.
pub const PRESET_NAMES: [&str; 5] = [
    "transport",
    "heat-shift",
    "oscillatory-circle",
    "twisted-sincos",
    "hjb-two-controls",
];
