//! Averaged quantities on vertical mesh lines: mean pressures, flow rate,
//! and membrane displacement per station.

use crate::fem::Spaces;
use crate::mesh::BilayerMesh;
use crate::solver::SystemState;

#[derive(Clone, Copy, Debug)]
pub struct StationSample {
    pub x: f64,
    /// Mean fluid pressure over the vertical fluid line (dyn/cm^2).
    pub pf_mean: f64,
    /// Mean pore pressure over the vertical wall line (dyn/cm^2).
    pub pp_mean: f64,
    /// Flow rate through the fluid line (cm^2/s): integral of v_x.
    pub flowrate: f64,
    /// Radial membrane displacement at the station (cm).
    pub eta_y: f64,
}

/// Integrate one scalar P1 column by the trapezoid rule (exact for the P1
/// trace) and one P2 velocity column by Simpson on each cell (exact for the
/// quadratic trace).
pub fn mean_quantities(
    state: &SystemState,
    mesh: &BilayerMesh,
    spaces: &Spaces,
    stations: &[f64],
) -> Vec<StationSample> {
    let d = &mesh.dims;
    let dx = d.length / d.nx as f64;
    stations
        .iter()
        .map(|&x_req| {
            let i = ((x_req / dx).round() as usize).min(d.nx);
            let x = i as f64 * dx;
            if (x - x_req).abs() > 1e-9 * d.length.max(1.0) {
                eprintln!(
                    "warning: station x = {x_req} is off-mesh; snapped to nearest line x = {x}"
                );
            }

            // Fluid pressure: P1 vertices up the column.
            let fp = &spaces.fluid_p;
            let dy_f = d.radius / d.ny_f as f64;
            let mut pf_int = 0.0;
            let mut q_int = 0.0;
            let fv = &spaces.fluid_v;
            for j in 0..d.ny_f {
                let y0 = j as f64 * dy_f;
                let y1 = y0 + dy_f;
                let n0 = fp.node_at(x, y0, 1e-9).expect("fluid pressure node");
                let n1 = fp.node_at(x, y1, 1e-9).expect("fluid pressure node");
                pf_int += 0.5 * dy_f * (state.p_f[n0] + state.p_f[n1]);

                let v0 = fv.node_at(x, y0, 1e-9).expect("fluid velocity node");
                let vm = fv.node_at(x, 0.5 * (y0 + y1), 1e-9).expect("edge midpoint node");
                let v1 = fv.node_at(x, y1, 1e-9).expect("fluid velocity node");
                let (a, m, b) = (
                    state.v[fv.dof(v0, 0)],
                    state.v[fv.dof(vm, 0)],
                    state.v[fv.dof(v1, 0)],
                );
                q_int += dy_f / 6.0 * (a + 4.0 * m + b);
            }

            // Pore pressure: P1 vertices across the wall.
            let pp = &spaces.poro_p;
            let dy_p = d.wall_thickness / d.ny_p as f64;
            let mut pp_int = 0.0;
            for j in 0..d.ny_p {
                let y0 = d.radius + j as f64 * dy_p;
                let y1 = y0 + dy_p;
                let n0 = pp.node_at(x, y0, 1e-9).expect("pore pressure node");
                let n1 = pp.node_at(x, y1, 1e-9).expect("pore pressure node");
                pp_int += 0.5 * dy_p * (state.p_p[n0] + state.p_p[n1]);
            }

            let pv = &spaces.poro_v;
            let iface = pv.node_at(x, d.radius, 1e-9).expect("interface wall node");
            StationSample {
                x,
                pf_mean: pf_int / d.radius,
                pp_mean: pp_int / d.wall_thickness,
                flowrate: q_int,
                eta_y: state.u[pv.dof(iface, 1)],
            }
        })
        .collect()
}
