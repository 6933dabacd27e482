//! Experiment execution: build solver objects from a validated config, run
//! the command, and write the artifacts.
//!
//! Every artifact is written atomically (temp file, then rename), so readers
//! never observe a half-written table. Each run produces `config.json` (the
//! effective config, seed override applied), the command's data files, and
//! `summary.json` with one pass/fail record per assertion. Identical configs
//! produce byte-identical data files; only the recorded runtimes vary.

use crate::config::{
    cross_validate, CheckSpec, CommandKind, ContractionSpec, Diagnostic, DriverSpec,
    ExperimentConfig, FieldsSpec, GridSpec, InitialSpec, OperatorSpec,
};
use roughpde::flow::{solve_flow_rough, FlowParams};
use roughpde::operators::{
    check_ellipticity, transform_operator, DriftFn, Operator, SamplerConfig, SigmaFn,
    TransformedOperator,
};
use roughpde::pdesolve::{Field, Grid, InitialData};
use roughpde::roughpath::{lift_smooth, sample_brownian, MeshSpec, RoughDriver};
use roughpde::rpde::{
    contraction_sweep, solve_rpde, twisted_study, wong_zakai_study,
    wong_zakai_study_with_driver, RpdeProblem, StudyReport,
};
use roughpde::vecfield::VectorFieldSet;
use roughpde::{Matrix, Vector};
use serde::Serialize;
use serde_json::json;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

/// How a run can end without a summary.
#[derive(Debug)]
pub enum RunError {
    /// The config failed cross-validation; one entry per finding.
    Config(Vec<Diagnostic>),
    /// The filesystem got in the way (unreadable input, unwritable output).
    Io(String),
    /// The solver aborted; carries the failing pipeline stage.
    Numerical(roughpde::Error),
}

impl From<roughpde::Error> for RunError {
    fn from(e: roughpde::Error) -> Self {
        RunError::Numerical(e)
    }
}

fn io_err(context: &str, e: std::io::Error) -> RunError {
    RunError::Io(format!("{context}: {e}"))
}

/// One checked claim about the run's output.
#[derive(Debug, Clone, Serialize)]
pub struct Assertion {
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
}

fn assert_on(name: &'static str, pass: bool, detail: String) -> Assertion {
    Assertion { name, pass, detail }
}

/// Contents of `summary.json`.
#[derive(Debug, Serialize)]
pub struct Summary {
    pub command: &'static str,
    /// Seed forced by `--seed`, when given.
    pub seed_override: Option<u64>,
    pub assertions: Vec<Assertion>,
    /// Data files written next to this summary.
    pub artifacts: Vec<String>,
    pub runtime_seconds: f64,
    /// Command-specific report (solver diagnostics, study records, ...).
    pub report: serde_json::Value,
}

impl Summary {
    pub fn all_passed(&self) -> bool {
        self.assertions.iter().all(|a| a.pass)
    }
}

/// Run one experiment. `seed_override` replaces the Brownian driver seed
/// before anything is built, so the echoed config reproduces the run.
pub fn run(
    mut cfg: ExperimentConfig,
    out_dir: &Path,
    seed_override: Option<u64>,
) -> Result<Summary, RunError> {
    let started = Instant::now();
    if let Some(seed) = seed_override {
        if let DriverSpec::Brownian { seed: s, .. } = &mut cfg.driver {
            *s = seed;
        }
    }
    let diagnostics = cross_validate(&cfg);
    if !diagnostics.is_empty() {
        return Err(RunError::Config(diagnostics));
    }

    fs::create_dir_all(out_dir).map_err(|e| io_err("creating output directory", e))?;
    let mut artifacts = Vec::new();
    let echo = serde_json::to_string_pretty(&cfg)
        .map_err(|e| RunError::Io(format!("encoding config echo: {e}")))?;
    write_artifact(out_dir, "config.json", &(echo + "\n"), &mut artifacts)?;

    let (assertions, report) = match cfg.command {
        CommandKind::Solve => run_solve(&cfg, out_dir, &mut artifacts)?,
        CommandKind::Wongzakai => run_wongzakai(&cfg, out_dir, &mut artifacts)?,
        CommandKind::Contraction => run_contraction(&cfg, out_dir, &mut artifacts)?,
        CommandKind::Twisted => run_twisted(&cfg, out_dir, &mut artifacts)?,
        CommandKind::Flowcheck => run_flowcheck(&cfg, out_dir, &mut artifacts)?,
        CommandKind::Opcheck => run_opcheck(&cfg, out_dir, &mut artifacts)?,
    };

    let mut summary = Summary {
        command: cfg.command.name(),
        seed_override,
        assertions,
        artifacts: artifacts.clone(),
        runtime_seconds: started.elapsed().as_secs_f64(),
        report,
    };
    summary.artifacts.push("summary.json".to_string());
    let text = serde_json::to_string_pretty(&summary)
        .map_err(|e| RunError::Io(format!("encoding summary: {e}")))?;
    write_artifact(out_dir, "summary.json", &(text + "\n"), &mut artifacts)?;
    Ok(summary)
}

/// Write `dir/name` via a temp file in the same directory plus rename.
fn write_artifact(
    dir: &Path,
    name: &str,
    content: &str,
    artifacts: &mut Vec<String>,
) -> Result<(), RunError> {
    let tmp = dir.join(format!(".{name}.tmp"));
    let target = dir.join(name);
    fs::write(&tmp, content).map_err(|e| io_err(&format!("writing {}", tmp.display()), e))?;
    fs::rename(&tmp, &target)
        .map_err(|e| io_err(&format!("renaming into {}", target.display()), e))?;
    artifacts.push(name.to_string());
    Ok(())
}

// ---------------------------------------------------------------------------
// Spec -> solver objects
// ---------------------------------------------------------------------------

fn vecf(v: &[f64]) -> Vector {
    Vector::from_column_slice(v)
}

fn matf(rows: &[Vec<f64>]) -> Matrix {
    Matrix::from_fn(rows.len(), rows[0].len(), |r, c| rows[r][c])
}

pub fn build_fields(spec: &FieldsSpec) -> roughpde::Result<VectorFieldSet> {
    match spec {
        FieldsSpec::Library { name } => match name.as_str() {
            "sin-cos" => Ok(VectorFieldSet::sin_cos()),
            "ones" => VectorFieldSet::constant(vec![Vector::from_element(1, 1.0)]),
            other => Err(roughpde::Error::invalid(
                roughpde::Stage::Flow,
                format!("unknown field library {other:?}"),
            )),
        },
        FieldsSpec::Constant { columns } => {
            VectorFieldSet::constant(columns.iter().map(|c| vecf(c)).collect())
        }
        FieldsSpec::Linear { matrices } => {
            VectorFieldSet::linear(matrices.iter().map(|m| matf(m)).collect())
        }
    }
}

pub fn build_driver(spec: &DriverSpec) -> roughpde::Result<RoughDriver> {
    match spec {
        DriverSpec::Brownian {
            seed,
            dimension,
            level,
            horizon,
        } => sample_brownian(
            *seed,
            *dimension,
            MeshSpec {
                horizon: *horizon,
                level: *level,
            },
        ),
        DriverSpec::Smooth {
            name,
            horizon,
            mesh,
            amplitude,
            frequency,
            slope,
            turns,
            radius,
        } => {
            let times: Vec<f64> = (0..=*mesh)
                .map(|k| horizon * k as f64 / *mesh as f64)
                .collect();
            let points: Vec<Vector> = match name.as_str() {
                "sine" => {
                    let a = amplitude.unwrap_or(1.0);
                    let w = frequency.unwrap_or(1.0);
                    times
                        .iter()
                        .map(|&t| Vector::from_element(1, a * (w * t).sin()))
                        .collect()
                }
                "line-sine" => {
                    let a = amplitude.unwrap_or(0.0);
                    let w = frequency.unwrap_or(1.0);
                    let s = slope.unwrap_or(1.0);
                    times
                        .iter()
                        .map(|&t| Vector::from_element(1, s * t + a * (w * t).sin()))
                        .collect()
                }
                "circle" => {
                    let r = radius.unwrap_or(1.0);
                    let n = turns.unwrap_or(1.0);
                    times
                        .iter()
                        .map(|&t| {
                            let theta = 2.0 * std::f64::consts::PI * n * t / horizon;
                            Vector::from_column_slice(&[r * (theta.cos() - 1.0), r * theta.sin()])
                        })
                        .collect()
                }
                other => {
                    return Err(roughpde::Error::invalid(
                        roughpde::Stage::RoughPath,
                        format!("unknown smooth path {other:?}"),
                    ))
                }
            };
            lift_smooth(times, &points)
        }
        DriverSpec::PureArea {
            dimension,
            horizon,
            mesh,
            i,
            j,
            rate,
        } => RoughDriver::pure_area(*dimension, *horizon, *mesh, *i, *j, *rate),
        DriverSpec::Stationary {
            dimension,
            horizon,
            mesh,
        } => RoughDriver::stationary(*dimension, *horizon, *mesh),
        DriverSpec::File { path } => {
            let text = fs::read_to_string(path).map_err(|e| {
                roughpde::Error::invalid(
                    roughpde::Stage::RoughPath,
                    format!("reading driver file {}: {e}", path.display()),
                )
            })?;
            RoughDriver::from_json(&text)
        }
    }
}

pub fn build_operator(spec: &OperatorSpec, n: usize) -> roughpde::Result<Operator> {
    match spec {
        OperatorSpec::Zero => Ok(Operator::zero(n)),
        OperatorSpec::Linear { sigma, drift } => Operator::linear_const(matf(sigma), vecf(drift)),
        OperatorSpec::Hjb { sigmas, drifts } => {
            let mats: Vec<Matrix> = sigmas.iter().map(|m| matf(m)).collect();
            let vecs: Vec<Vector> = drifts.iter().map(|d| vecf(d)).collect();
            let width = mats[0].ncols();
            let controls = mats.len();
            let sigma_fn: SigmaFn = Arc::new(move |_t, _x, _p, gamma, _beta| mats[gamma].clone());
            let drift_fn: DriftFn = Arc::new(move |_t, _x, _p, gamma, _beta| vecs[gamma].clone());
            Operator::hjb(n, width, controls, sigma_fn, drift_fn)
        }
    }
}

pub fn build_grid(spec: &GridSpec) -> Grid {
    Grid {
        n: spec.n,
        extent: spec.extent,
        spacing: spec.spacing,
        horizon: spec.horizon,
        dt: spec.dt,
        output_slices: spec.output_slices,
    }
}

pub fn build_initial(spec: &InitialSpec) -> InitialData {
    match spec {
        InitialSpec::Gaussian {
            amplitude,
            center,
            width,
        } => InitialData::Gaussian {
            amplitude: *amplitude,
            center: vecf(center),
            width: *width,
        },
        InitialSpec::Bump {
            amplitude,
            center,
            radius,
        } => InitialData::Bump {
            amplitude: *amplitude,
            center: vecf(center),
            radius: *radius,
        },
        InitialSpec::Box {
            amplitude,
            center,
            halfwidth,
        } => InitialData::Box {
            amplitude: *amplitude,
            center: vecf(center),
            halfwidth: *halfwidth,
        },
        InitialSpec::Zero => InitialData::Zero,
    }
}

fn check_spec(cfg: &ExperimentConfig) -> CheckSpec {
    cfg.check.clone().unwrap_or_default()
}

/// Default bar for the forward/inverse round-trip checks. Sampled smooth
/// paths ride the adaptive integrator (local tolerance 1e-8), so their round
/// trips sit near machine precision. Level-2 drivers are stepped by the
/// truncated log-ODE whose inverse replays inverted increments, leaving a
/// method error that shrinks with the driver mesh but is far from zero —
/// the default only has to catch a broken flow, and `check.tolerance`
/// tightens it when the mesh warrants.
fn default_roundtrip_tol(cfg: &ExperimentConfig) -> f64 {
    match cfg.driver {
        DriverSpec::Smooth { .. } => 1e-6,
        _ => 1e-3,
    }
}

fn roundtrip_tolerance(cfg: &ExperimentConfig) -> f64 {
    check_spec(cfg)
        .tolerance
        .unwrap_or_else(|| default_roundtrip_tol(cfg))
}

fn json_of<T: Serialize>(value: &T) -> Result<serde_json::Value, RunError> {
    serde_json::to_value(value).map_err(|e| RunError::Io(format!("encoding report: {e}")))
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

type CommandOutput = (Vec<Assertion>, serde_json::Value);

fn run_solve(
    cfg: &ExperimentConfig,
    out_dir: &Path,
    artifacts: &mut Vec<String>,
) -> Result<CommandOutput, RunError> {
    let grid = build_grid(&cfg.grid);
    let fields = build_fields(&cfg.fields)?;
    let operator = build_operator(cfg.operator.as_ref().expect("cross-validated"), grid.n)?;
    let driver = build_driver(&cfg.driver)?;
    let u0 = build_initial(cfg.initial.as_ref().expect("cross-validated")).field(grid.clone());
    let problem = RpdeProblem {
        operator,
        fields,
        driver,
        u0,
        grid,
    };
    let (u, report) = solve_rpde(&problem)?;
    write_artifact(out_dir, "solution.csv", &u.to_csv(), artifacts)?;
    write_artifact(
        out_dir,
        "driver.json",
        &(problem.driver.to_json() + "\n"),
        artifacts,
    )?;

    let tol = roundtrip_tolerance(cfg);
    let finite = u.slices.iter().flatten().all(|v| v.is_finite());
    let assertions = vec![
        assert_on(
            "finite-output",
            finite,
            format!("sup |u| = {:.6e} over {} slices", u.sup_norm(), u.slices.len()),
        ),
        assert_on(
            "flow-round-trip",
            report.flow_quality <= tol,
            format!(
                "worst probe round-trip {:.3e} (tolerance {:.1e})",
                report.flow_quality, tol
            ),
        ),
    ];
    Ok((assertions, json_of(&report)?))
}

fn study_prerequisites(
    cfg: &ExperimentConfig,
) -> Result<(Grid, VectorFieldSet, Operator, Field), RunError> {
    let grid = build_grid(&cfg.grid);
    let fields = build_fields(&cfg.fields)?;
    let operator = build_operator(cfg.operator.as_ref().expect("cross-validated"), grid.n)?;
    let u0 = build_initial(cfg.initial.as_ref().expect("cross-validated")).field(grid.clone());
    Ok((grid, fields, operator, u0))
}

fn distances_finite(report: &StudyReport) -> Assertion {
    let finite = report.records.iter().all(|r| {
        r.to_reference.is_finite()
            && r.driver_distance.is_finite()
            && r.secondary.map(|s| s.is_finite()).unwrap_or(true)
    });
    assert_on(
        "distances-finite",
        finite,
        format!("{} level records", report.records.len()),
    )
}

fn run_wongzakai(
    cfg: &ExperimentConfig,
    out_dir: &Path,
    artifacts: &mut Vec<String>,
) -> Result<CommandOutput, RunError> {
    let (_grid, fields, operator, u0) = study_prerequisites(cfg)?;
    let study = cfg.study.as_ref().expect("cross-validated");
    let report = match &cfg.driver {
        // Seeded study: the library samples its own reference-mesh Brownian
        // driver on the grid horizon, so the seed is the whole story.
        DriverSpec::Brownian { seed, .. } => wong_zakai_study(
            &operator,
            &fields,
            &u0,
            *seed,
            &study.levels,
            study.fine_level,
        )?,
        // Explicit driver: its own dyadic coarsenings are the levels.
        _ => {
            let fine = build_driver(&cfg.driver)?;
            wong_zakai_study_with_driver(&operator, &fields, &u0, &fine, &study.levels)?
        }
    };
    write_artifact(out_dir, "study.csv", &report.to_csv(), artifacts)?;

    let first = report.records.first().expect("nonempty levels");
    let last = report.records.last().expect("nonempty levels");
    let assertions = vec![
        distances_finite(&report),
        assert_on(
            "net-refinement",
            last.to_reference <= first.to_reference + 1e-12,
            format!(
                "distance to reference: level {} gives {:.6e}, level {} gives {:.6e}",
                first.level, first.to_reference, last.level, last.to_reference
            ),
        ),
    ];
    Ok((assertions, json_of(&report)?))
}

fn run_twisted(
    cfg: &ExperimentConfig,
    out_dir: &Path,
    artifacts: &mut Vec<String>,
) -> Result<CommandOutput, RunError> {
    let (_grid, fields, operator, u0) = study_prerequisites(cfg)?;
    let study = cfg.study.as_ref().expect("cross-validated");
    let axes = study.axes.unwrap_or([0, 1]);
    let fine = build_driver(&cfg.driver)?;
    let report = twisted_study(
        &operator,
        &fields,
        &u0,
        &fine,
        &study.levels,
        (axes[0], axes[1]),
    )?;
    write_artifact(out_dir, "study.csv", &report.to_csv(), artifacts)?;

    let last = report.records.last().expect("nonempty levels");
    let to_corrected = last.to_reference;
    let to_plain = last.secondary.unwrap_or(f64::INFINITY);
    let assertions = vec![
        distances_finite(&report),
        // Pre-registered limit check: at the finest level the decorated
        // approximations must sit much closer to the drift-corrected
        // solution than to the uncorrected one.
        assert_on(
            "corrected-limit-ratio",
            to_corrected <= study.ratio_bound * to_plain,
            format!(
                "level {}: {:.6e} to corrected vs {:.6e} to uncorrected (bound {})",
                last.level, to_corrected, to_plain, study.ratio_bound
            ),
        ),
    ];
    Ok((assertions, json_of(&report)?))
}

fn run_contraction(
    cfg: &ExperimentConfig,
    out_dir: &Path,
    artifacts: &mut Vec<String>,
) -> Result<CommandOutput, RunError> {
    let grid = build_grid(&cfg.grid);
    let fields = build_fields(&cfg.fields)?;
    let operator = build_operator(cfg.operator.as_ref().expect("cross-validated"), grid.n)?;
    let driver = build_driver(&cfg.driver)?;
    let spec = cfg
        .contraction
        .clone()
        .unwrap_or(ContractionSpec { pairs: 10, seed: 0 });
    let reports = contraction_sweep(&operator, &fields, &driver, &grid, spec.pairs, spec.seed)?;

    let mut csv = String::from("pair,initial_gap,final_gap,slack,ok\n");
    for (k, r) in reports.iter().enumerate() {
        csv.push_str(&format!(
            "{k},{},{},{},{}\n",
            r.initial_gap, r.final_gap, r.slack, r.ok
        ));
    }
    write_artifact(out_dir, "contraction.csv", &csv, artifacts)?;

    let passed = reports.iter().filter(|r| r.ok).count();
    let worst = reports
        .iter()
        .map(|r| r.final_gap - r.initial_gap)
        .fold(f64::NEG_INFINITY, f64::max);
    let assertions = vec![assert_on(
        "all-pairs-contract",
        passed == reports.len(),
        format!(
            "{passed}/{} pairs contract; worst final-minus-initial gap {worst:.3e}",
            reports.len()
        ),
    )];
    Ok((assertions, json_of(&reports)?))
}

fn default_probes(grid: &Grid) -> Vec<Vector> {
    let e = grid.extent;
    let line = [-e, -0.5 * e, 0.0, 0.5 * e, e];
    match grid.n {
        1 => line.iter().map(|&x| Vector::from_element(1, x)).collect(),
        _ => {
            let picks = [-e, 0.0, e];
            let mut out = Vec::new();
            for &x in &picks {
                for &y in &picks {
                    out.push(Vector::from_column_slice(&[x, y]));
                }
            }
            out
        }
    }
}

fn run_flowcheck(
    cfg: &ExperimentConfig,
    out_dir: &Path,
    artifacts: &mut Vec<String>,
) -> Result<CommandOutput, RunError> {
    let grid = build_grid(&cfg.grid);
    let fields = build_fields(&cfg.fields)?;
    let driver = build_driver(&cfg.driver)?;
    let check = check_spec(cfg);
    let probes: Vec<Vector> = match &check.probes {
        Some(ps) => ps.iter().map(|p| vecf(p)).collect(),
        None => default_probes(&grid),
    };
    let params = FlowParams {
        lattice: probes.clone(),
        probes: probes.clone(),
        ..FlowParams::default()
    };
    let flow = solve_flow_rough(&fields, &driver, params)?;

    let t_end = grid.horizon;
    let mut csv = if grid.n == 1 {
        String::from("x,forward,back,error\n")
    } else {
        String::from("x0,x1,forward0,forward1,back0,back1,error\n")
    };
    let mut worst = 0.0_f64;
    for x in &probes {
        let fwd = flow.forward(t_end, x)?;
        let back = flow.inverse(t_end, &fwd)?;
        let err = (&back - x).amax();
        worst = worst.max(err);
        let cells: Vec<String> = x
            .iter()
            .chain(fwd.iter())
            .chain(back.iter())
            .map(|v| v.to_string())
            .collect();
        csv.push_str(&format!("{},{err}\n", cells.join(",")));
    }
    write_artifact(out_dir, "flowcheck.csv", &csv, artifacts)?;

    let tol = roundtrip_tolerance(cfg);
    let assertions = vec![assert_on(
        "round-trip",
        worst <= tol,
        format!(
            "worst inverse-of-forward error {:.3e} over {} probes at t = {t_end} (tolerance {:.1e})",
            worst,
            probes.len(),
            tol
        ),
    )];
    let report = json!({
        "quality": flow.quality,
        "worst_round_trip": worst,
        "probes": probes.len(),
        "time": t_end,
    });
    Ok((assertions, report))
}

/// Deterministic sample tuples for the closed-form consistency probe.
fn consistency_gap(
    transformed: &TransformedOperator,
    grid: &Grid,
) -> roughpde::Result<f64> {
    let n = grid.n;
    let e = grid.extent;
    let times = [0.0, 0.37 * grid.horizon, grid.horizon];
    let points: Vec<Vector> = match n {
        1 => [-0.5 * e, 0.1, 0.45 * e]
            .iter()
            .map(|&x| Vector::from_element(1, x))
            .collect(),
        _ => vec![
            Vector::from_column_slice(&[-0.5 * e, 0.25 * e]),
            Vector::from_column_slice(&[0.1, -0.3]),
        ],
    };
    let gradients: Vec<Vector> = vec![
        Vector::zeros(n),
        Vector::from_element(n, 1.0),
        Vector::from_fn(n, |k, _| if k == 0 { -0.7 } else { 0.4 }),
    ];
    let hessians: Vec<Matrix> = vec![
        Matrix::zeros(n, n),
        Matrix::identity(n, n),
        Matrix::from_fn(n, n, |r, c| if r == c { -1.5 } else { 0.25 }),
    ];
    let mut worst = 0.0_f64;
    for &t in &times {
        for x in &points {
            let (jsig, b) = transformed.linear_closed_form(t, x)?;
            let diffusion = &jsig * jsig.transpose();
            for p in &gradients {
                for x_mat in &hessians {
                    let direct = transformed.eval(t, x, p, x_mat)?;
                    let closed = (&diffusion * x_mat).trace() + b.dot(p);
                    worst = worst.max((direct - closed).abs());
                }
            }
        }
    }
    Ok(worst)
}

fn run_opcheck(
    cfg: &ExperimentConfig,
    out_dir: &Path,
    artifacts: &mut Vec<String>,
) -> Result<CommandOutput, RunError> {
    let grid = build_grid(&cfg.grid);
    let fields = build_fields(&cfg.fields)?;
    let operator = build_operator(cfg.operator.as_ref().expect("cross-validated"), grid.n)?;
    let driver = build_driver(&cfg.driver)?;
    let check = check_spec(cfg);

    let sampler = SamplerConfig {
        samples: check.samples,
        seed: 0,
        time_range: (0.0, grid.horizon),
        x_scale: 0.5 * grid.extent,
        p_scale: 1.0,
        mat_scale: 1.0,
    };
    let raw = check_ellipticity(&operator, &sampler)?;

    let flow = Arc::new(solve_flow_rough(&fields, &driver, FlowParams::default())?);
    let transformed = transform_operator(&operator, flow)?;
    let conjugated = check_ellipticity(&transformed, &sampler)?;

    // Closed-form coefficients exist only for the linear shapes; for those
    // the pointwise transform must reproduce them exactly.
    let is_linear = matches!(
        cfg.operator,
        Some(OperatorSpec::Zero) | Some(OperatorSpec::Linear { .. })
    );
    let gap = if is_linear {
        Some(consistency_gap(&transformed, &grid)?)
    } else {
        None
    };

    let report = json!({
        "raw": json_of(&raw)?,
        "transformed": json_of(&conjugated)?,
        "consistency_gap": gap,
    });
    write_artifact(
        out_dir,
        "opcheck.json",
        &(serde_json::to_string_pretty(&report)
            .map_err(|e| RunError::Io(format!("encoding opcheck report: {e}")))?
            + "\n"),
        artifacts,
    )?;

    let mut assertions = vec![assert_on(
        "degenerate-ellipticity",
        raw.violations == 0 && conjugated.violations == 0,
        format!(
            "raw: {}/{} violations (worst gap {:.3e}); conjugated: {}/{} (worst gap {:.3e})",
            raw.violations,
            raw.samples,
            raw.worst_gap,
            conjugated.violations,
            conjugated.samples,
            conjugated.worst_gap
        ),
    )];
    if let Some(gap) = gap {
        let tol = check.tolerance.unwrap_or(1e-8);
        assertions.push(assert_on(
            "transform-consistency",
            gap <= tol,
            format!(
                "pointwise transform vs closed-form coefficients: worst gap {gap:.3e} (tolerance {tol:.1e})"
            ),
        ));
    }
    Ok((assertions, report))
}

/// Resolve the output directory: the `--out` flag wins, then the config's
/// `output`, then `./out/<command>`.
pub fn resolve_out_dir(cfg: &ExperimentConfig, flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| cfg.output.clone())
        .unwrap_or_else(|| PathBuf::from("out").join(cfg.command.name()))
}
