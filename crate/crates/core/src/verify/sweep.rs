//! Stability-threshold sweep: for each spatial resolution, find the critical
//! time step of the explicit coupling by grid scan plus bisection, then fit
//! the critical dt against dx.

use crate::error::{Error, Result};
use crate::forms::PhysicalParams;
use crate::mesh::BilayerMesh;
use crate::solver::{CflEnforcement, Mode, Stepper, TimeConfig};
use crate::verify::convergence::GeometrySpec;
use crate::verify::driver::BLOWUP_ENERGY;

#[derive(Clone, Copy, Debug)]
pub struct SweepSample {
    pub dt: f64,
    /// Total energy at the final time, or at the blow-up step.
    pub final_energy: f64,
    pub blew_up: bool,
}

#[derive(Clone, Debug)]
pub struct DxSweep {
    pub dx: f64,
    pub samples: Vec<SweepSample>,
    pub critical_dt: Option<f64>,
    /// Whether blow-up was monotone in dt over the scanned grid. Violations
    /// are reported, not hidden.
    pub monotone: bool,
    pub note: Option<String>,
}

#[derive(Clone, Debug)]
pub struct StabilitySweepResult {
    pub per_dx: Vec<DxSweep>,
    /// Least-squares fit critical_dt = slope * dx + intercept.
    pub slope: Option<f64>,
    pub intercept: Option<f64>,
    pub r_squared: Option<f64>,
}

pub struct SweepSetup {
    pub geometry: GeometrySpec,
    pub mode: Mode,
    pub t_end: f64,
    /// Hard in-run blow-up threshold on the total energy.
    pub blowup_threshold: f64,
    /// A run whose final energy exceeds `divergence_factor` times the
    /// smallest-dt (stable) sample of its grid counts as unstable even if it
    /// never crossed `blowup_threshold` within the horizon: large dt means
    /// few steps, so a strongly diverging run can end below the hard cut.
    pub divergence_factor: f64,
    pub workers: usize,
    /// Relative bisection tolerance on the critical dt.
    pub tol: f64,
}

impl Default for SweepSetup {
    fn default() -> Self {
        SweepSetup {
            geometry: GeometrySpec {
                length: 6.0,
                radius: 0.5,
                thickness: 0.1,
                fluid_aspect: 2.0,
            },
            mode: Mode::Stokes,
            t_end: 6e-3,
            blowup_threshold: BLOWUP_ENERGY,
            divergence_factor: 1e3,
            workers: 1,
            tol: 0.05,
        }
    }
}

/// Snap dt onto an integer divisor of the horizon (the stepper rejects
/// partial final steps).
fn snap_dt(dt: f64, t_end: f64) -> f64 {
    let n = (t_end / dt).ceil().max(1.0);
    t_end / n
}

/// Run the driven problem at one dt; returns (final or blow-up energy,
/// crossed the hard threshold).
fn probe(
    params: &PhysicalParams,
    mesh: &BilayerMesh,
    dt: f64,
    setup: &SweepSetup,
) -> Result<(f64, bool)> {
    let mut cfg = TimeConfig::new(dt, setup.t_end, setup.mode);
    cfg.cfl_enforcement = CflEnforcement::Off;
    let mut stepper = Stepper::new(mesh.clone(), params.clone(), cfg, setup.workers)?;
    let mut state = stepper.initial_state();
    let n = stepper.config.n_steps()?;
    let mut energy = 0.0;
    for _ in 0..n {
        state = match stepper.advance(&state) {
            Ok(s) => s,
            // A failed solve during an exponential blow-up counts as unstable.
            Err(Error::StepFailure { .. }) => return Ok((f64::INFINITY, true)),
            Err(e) => return Err(e),
        };
        energy = stepper.energy_log.last().unwrap().total();
        if !state.is_finite() || energy > setup.blowup_threshold {
            return Ok((energy.max(setup.blowup_threshold), true));
        }
    }
    Ok((energy, false))
}

fn classify(energy: f64, hard: bool, cut: f64) -> bool {
    hard || !energy.is_finite() || energy > cut
}

/// Bisect the stability boundary between a stable and an unstable dt.
/// `divergence_cut` is the absolute final-energy level above which a run
/// counts as unstable.
pub fn measure_critical_dt(
    params: &PhysicalParams,
    mesh: &BilayerMesh,
    mut dt_lo: f64,
    mut dt_hi: f64,
    divergence_cut: f64,
    setup: &SweepSetup,
) -> Result<f64> {
    loop {
        if dt_hi / dt_lo <= 1.0 + setup.tol {
            return Ok(dt_lo);
        }
        let mid = snap_dt((dt_lo * dt_hi).sqrt(), setup.t_end);
        if mid <= dt_lo || mid >= dt_hi {
            return Ok(dt_lo);
        }
        let (energy, hard) = probe(params, mesh, mid, setup)?;
        if classify(energy, hard, divergence_cut) {
            dt_hi = mid;
        } else {
            dt_lo = mid;
        }
    }
}

/// Sweep the dt grid at every dx, bisect the threshold, and fit it linearly
/// against dx.
pub fn stability_sweep(
    params: &PhysicalParams,
    dx_list: &[f64],
    dt_grid: &dyn Fn(f64) -> Vec<f64>,
    setup: &SweepSetup,
) -> Result<StabilitySweepResult> {
    let mut per_dx = Vec::new();
    for &dx in dx_list {
        let mesh = setup.geometry.mesh_for(dx)?;
        let mut grid: Vec<f64> = dt_grid(dx).iter().map(|&d| snap_dt(d, setup.t_end)).collect();
        grid.sort_by(|a, b| a.partial_cmp(b).unwrap());
        grid.dedup();
        if grid.is_empty() {
            return Err(Error::invalid("empty dt grid"));
        }
        let mut raw = Vec::with_capacity(grid.len());
        for &dt in &grid {
            raw.push(probe(params, &mesh, dt, setup)?);
        }
        // Divergence cut relative to the smallest-dt sample, which the grid
        // is expected to place in the stable regime.
        let baseline = raw[0].0.abs().max(f64::MIN_POSITIVE);
        let cut = setup.divergence_factor * baseline;
        let samples: Vec<SweepSample> = grid
            .iter()
            .zip(&raw)
            .map(|(&dt, &(energy, hard))| SweepSample {
                dt,
                final_energy: energy,
                blew_up: classify(energy, hard, cut),
            })
            .collect();
        // Monotone pattern: a (possibly empty) stable prefix, unstable suffix.
        let first_unstable = samples.iter().position(|s| s.blew_up);
        let monotone = match first_unstable {
            Some(k) => samples[k..].iter().all(|s| s.blew_up),
            None => true,
        };
        let (critical_dt, note) = match first_unstable {
            None => (None, Some("threshold above the scanned grid".to_string())),
            Some(0) => (None, Some("threshold below the scanned grid".to_string())),
            Some(k) => {
                let crit = measure_critical_dt(
                    params,
                    &mesh,
                    samples[k - 1].dt,
                    samples[k].dt,
                    cut,
                    setup,
                )?;
                (Some(crit), None)
            }
        };
        per_dx.push(DxSweep {
            dx,
            samples,
            critical_dt,
            monotone,
            note,
        });
    }

    let pts: Vec<(f64, f64)> = per_dx
        .iter()
        .filter_map(|s| s.critical_dt.map(|c| (s.dx, c)))
        .collect();
    let (slope, intercept, r_squared) = if pts.len() >= 2 {
        let n = pts.len() as f64;
        let sx: f64 = pts.iter().map(|p| p.0).sum();
        let sy: f64 = pts.iter().map(|p| p.1).sum();
        let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
        let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
        let denom = n * sxx - sx * sx;
        let a = (n * sxy - sx * sy) / denom;
        let b = (sy - a * sx) / n;
        let mean = sy / n;
        let ss_tot: f64 = pts.iter().map(|p| (p.1 - mean).powi(2)).sum();
        let ss_res: f64 = pts.iter().map(|p| (p.1 - (a * p.0 + b)).powi(2)).sum();
        let r2 = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
        (Some(a), Some(b), Some(r2))
    } else {
        (None, None, None)
    };

    Ok(StabilitySweepResult {
        per_dx,
        slope,
        intercept,
        r_squared,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn snap_divides_horizon() {
        let t_end = 6e-3;
        for dt in [1e-5, 2.3e-5, 9.9e-4] {
            let s = snap_dt(dt, t_end);
            let n = (t_end / s).round();
            assert!(((n * s - t_end) / t_end).abs() < 1e-12);
            assert!(s <= dt * (1.0 + 1e-12));
        }
    }

    #[test]
    fn sweep_finds_a_threshold_on_a_tiny_problem() {
        // Coarse, short-horizon sweep: fast, and the threshold must sit
        // inside a wide dt grid.
        let params = PhysicalParams::default();
        let setup = SweepSetup {
            geometry: GeometrySpec {
                length: 6.0,
                radius: 0.5,
                thickness: 0.1,
                fluid_aspect: 2.0,
            },
            t_end: 3e-3,
            tol: 0.2,
            ..Default::default()
        };
        let grid = |_dx: f64| vec![2e-5, 5e-5, 1e-4, 2e-4];
        let res = stability_sweep(&params, &[0.05], &grid, &setup).unwrap();
        let sweep = &res.per_dx[0];
        assert!(sweep.monotone, "samples: {:?}", sweep.samples);
        assert!(
            sweep.critical_dt.is_some(),
            "no threshold inside the grid: {:?}",
            sweep.samples
        );
        let crit = sweep.critical_dt.unwrap();
        assert!(crit >= 2e-5 && crit <= 2e-4, "critical dt = {crit}");
    }
}
