//! Sweep the efficient frontier of the sample universe and print its fit.

use fiopt::frontier::{fit_frontier, log_grid, sleeve_expected_return, sweep_frontier};
use fiopt::io::RunConfig;
use fiopt::optimizer::{build_constraints, PortfolioProblem};
use fiopt::risk::RiskModel;

fn main() -> fiopt::Result<()> {
    let cfg = RunConfig::sample();
    let sleeves = cfg.universe(None)?;
    let curves = cfg.rating_curves()?;
    let matrix = cfg.transition_matrix()?;

    let er = sleeves
        .iter()
        .map(|s| sleeve_expected_return(s, &curves, &matrix, cfg.horizon, cfg.return_options()).map(|e| e.total))
        .collect::<fiopt::Result<Vec<_>>>()?;
    let problem = PortfolioProblem::new(er, build_constraints(&sleeves, &cfg.caps)?)?;
    let model = RiskModel::new(&sleeves, &cfg.risk)?;

    let grid = log_grid(0.005, 0.40, 20)?;
    let points = sweep_frontier(&problem, &model, &grid, &cfg.cutting_plane.into())?;
    for p in &points {
        println!("{:>8.4} {:>8.4}  {}", p.risk_limit, p.expected_return, p.binding);
    }
    let fit = fit_frontier(&points.iter().map(|p| (p.risk_limit, p.expected_return)).collect::<Vec<_>>())?;
    println!("a = {:.4}, b = {:.4}, rmse = {:.2e}", fit.a, fit.b, fit.rmse);
    Ok(())
}
