//! Minimal end-to-end use: heat flow with a half-strength diffusion whose
//! spatial coordinate rides a two-channel Brownian driver through the
//! sine/cosine fields. Prints a few solve diagnostics.

use roughpde::operators::Operator;
use roughpde::pdesolve::{Grid, InitialData};
use roughpde::roughpath::{sample_brownian, MeshSpec};
use roughpde::rpde::{solve_rpde, RpdeProblem};
use roughpde::vecfield::VectorFieldSet;
use roughpde::{Matrix, Vector};

fn main() -> roughpde::Result<()> {
    let grid = Grid { n: 1, extent: 3.0, spacing: 0.05, horizon: 0.25, dt: None, output_slices: 2 };
    let problem = RpdeProblem {
        operator: Operator::linear_const(Matrix::from_element(1, 1, 0.5), Vector::zeros(1))?,
        fields: VectorFieldSet::sin_cos(),
        driver: sample_brownian(7, 2, MeshSpec { horizon: 0.25, level: 8 })?,
        u0: InitialData::Gaussian { amplitude: 1.0, center: Vector::zeros(1), width: 0.5 }
            .field(grid.clone()),
        grid,
    };
    let (u, report) = solve_rpde(&problem)?;
    println!("sup |u| = {:.4}; {} steps at dt = {:.2e}; flow round-trip {:.1e}",
             u.sup_norm(), report.steps, report.dt, report.flow_quality);
    Ok(())
}
