//! Fully implicit monolithic reference solver.
//!
//! One backward-Euler linear system per step over all unknowns
//! (v, p_f, U, p_p; wall velocity eliminated by the midpoint relation), with
//! every interface term implicit and the kinematic tangential condition
//! enforced in the trial/test space: the fluid's interface tangential trace
//! is constrained to the degree-1 membrane velocity through the Newmark
//! relation (vertex DOFs slaved to wall displacement DOFs, quadratic
//! midpoints to vertex averages). This is an oracle for the splitting error,
//! not a production path, and refuses problems above a few thousand DOFs.

use crate::error::{Error, Result};
use crate::fem::{
    volume_load, BlockBuilder, Constraint, Factorization, Reducer, Spaces, SparseMatrix,
};
use crate::forms::{convection_matrix, inlet_pressure, FormCatalog, PhysicalParams};
use crate::mesh::BilayerMesh;
use crate::solver::{EnergyRecord, Mode, Stepper, SystemState, TimeConfig};
use std::collections::BTreeMap;

pub const DOF_GUARD: usize = 5000;

/// One interface tangential constraint: a fluid x-DOF slaved to wall masters.
struct TangentialTie {
    fluid_dof: usize,
    /// Wall x-displacement DOFs (space-local) whose Newmark velocity drives
    /// this fluid DOF, with weights.
    wall_nodes: Vec<(usize, f64)>,
}

pub struct MonolithicSolver {
    pub params: PhysicalParams,
    pub config: TimeConfig,
    pub mesh: BilayerMesh,
    pub spaces: Spaces,
    pub forms: FormCatalog,
    offsets: [usize; 4],
    matrix: SparseMatrix,
    reducer: Reducer,
    fact: Option<Factorization>,
    ties: Vec<TangentialTie>,
    rhs_base_trips: Vec<(usize, usize, f64)>,
}

impl MonolithicSolver {
    pub fn new(mesh: BilayerMesh, params: PhysicalParams, config: TimeConfig) -> Result<Self> {
        config.n_steps()?;
        params.validate()?;
        let spaces = Spaces::build(&mesh);
        let total = spaces.total_dofs() - spaces.poro_v.ndofs(); // V eliminated
        if total > DOF_GUARD {
            return Err(Error::SizeGuard {
                dofs: total,
                limit: DOF_GUARD,
                hint: "the monolithic oracle is meant for desk-scale comparisons; coarsen the mesh"
                    .into(),
            });
        }
        let forms = crate::forms::form_catalog(&params, &mesh, &spaces, None)?;
        let nv = spaces.fluid_v.ndofs();
        let nq = spaces.fluid_p.ndofs();
        let nu = spaces.poro_v.ndofs();
        let np = spaces.poro_p.ndofs();
        let offsets = [0, nv, nv + nq, nv + nq + nu];
        let n = nv + nq + nu + np;
        let dt = config.dt;

        let mut bb = BlockBuilder::new(n, n);
        let [ov, oq, ou, op] = offsets;
        bb.add_block(ov, ov, 1.0 / dt, &forms.m_f);
        bb.add_block(ov, ov, 1.0, &forms.a_f);
        bb.add_block_transposed(ov, oq, -1.0, &forms.b_f);
        bb.add_block(oq, ov, 1.0, &forms.b_f);
        // Implicit pore-pressure load on the fluid.
        bb.add_block(ov, op, 1.0, &forms.c_fp);
        let w = 2.0 / (dt * dt);
        bb.add_block(ou, ou, w, &forms.m_p);
        bb.add_block(ou, ou, w, &forms.m_g);
        bb.add_block(ou, ou, 0.5, &forms.a_e);
        bb.add_block(ou, ou, 0.5, &forms.a_m);
        bb.add_block(ou, ou, 0.5, &forms.m_beta);
        bb.add_block_transposed(ou, op, -1.0, &forms.d_ep);
        bb.add_block(ou, op, -1.0, &forms.e_ep);
        bb.add_block(op, ou, 1.0 / dt, &forms.d_ep);
        bb.add_block_transposed(op, ou, 1.0 / dt, &forms.e_ep);
        bb.add_block(op, op, 1.0 / dt, &forms.s_p);
        bb.add_block(op, op, 1.0, &forms.a_p);
        // Implicit normal-flux balance against the fluid velocity.
        bb.add_block_transposed(op, ov, -1.0, &forms.c_fp);
        bb.reserve_diagonal();
        let matrix = bb.build();

        let (constraints, ties) = Self::build_constraints(&spaces, &mesh, offsets, dt)?;
        let reducer = Reducer::new(n, &constraints)?;

        // RHS operator: per-step right-hand side = R * state_stack where the
        // stack is [v; p_f; U; V; p_p] at level n (see reduce_rhs call site).
        let mut rb = BlockBuilder::new(n, n + nu);
        rb.add_block(ov, 0, 1.0 / dt, &forms.m_f);
        rb.add_block(ou, ou, w, &forms.m_p);
        rb.add_block(ou, ou, w, &forms.m_g);
        rb.add_block(ou, ou + nu, 2.0 / dt, &forms.m_p);
        rb.add_block(ou, ou + nu, 2.0 / dt, &forms.m_g);
        rb.add_block(ou, ou, -0.5, &forms.a_e);
        rb.add_block(ou, ou, -0.5, &forms.a_m);
        rb.add_block(ou, ou, -0.5, &forms.m_beta);
        rb.add_block(op, ou + nu + np, 1.0 / dt, &forms.s_p);
        rb.add_block(op, ou, 1.0 / dt, &forms.d_ep);
        rb.add_block_transposed(op, ou, 1.0 / dt, &forms.e_ep);
        let rhs_op = rb.build();
        let mut rhs_base_trips = Vec::with_capacity(rhs_op.nnz());
        for r in 0..rhs_op.nrows {
            for (c, v) in rhs_op.row(r) {
                rhs_base_trips.push((r, c, v));
            }
        }

        let mut solver = MonolithicSolver {
            params,
            config,
            mesh,
            spaces,
            forms,
            offsets,
            matrix,
            reducer,
            fact: None,
            ties,
            rhs_base_trips,
        };
        if solver.config.mode == Mode::Stokes {
            let reduced = solver.reducer.reduce_matrix(&solver.matrix);
            solver.fact = Some(Factorization::new(&reduced, "monolithic step")?);
        }
        Ok(solver)
    }

    /// Dirichlet rows plus the tangential kinematic ties.
    fn build_constraints(
        spaces: &Spaces,
        mesh: &BilayerMesh,
        offsets: [usize; 4],
        dt: f64,
    ) -> Result<(BTreeMap<usize, Constraint>, Vec<TangentialTie>)> {
        let [ov, _oq, ou, op] = offsets;
        let nu = spaces.poro_v.ndofs();
        let mut cons: BTreeMap<usize, Constraint> = BTreeMap::new();
        for (d, v) in Stepper::fluid_constraints_for(spaces, mesh) {
            cons.insert(ov + d, Constraint::Fixed(v));
        }
        for (d, v) in Stepper::wall_clamp_constraints_for(spaces) {
            if d < nu {
                cons.insert(ou + d, Constraint::Fixed(v));
            }
        }
        for d in Stepper::drained_pressure_dofs(spaces) {
            cons.insert(op + d, Constraint::Fixed(0.0));
        }

        // Kinematic ties paired with the Newmark midpoint: the fluid
        // tangential trace matches the membrane midpoint velocity,
        // v_x = xi_x^{n+1/2} = (U_x - U_x^n)/dt on the interface, with
        // quadratic midpoints tied to vertex averages. The midpoint pairing
        // keeps the implicit scheme's energy identity exact.
        let fv = &spaces.fluid_v;
        let pv = &spaces.poro_v;
        let mut ties = Vec::new();
        let fluid_iface = &fv.interface_nodes;
        let poro_iface = &pv.interface_nodes;
        if fluid_iface.len() != 2 * poro_iface.len() - 1 {
            return Err(Error::Inconsistent(
                "interface trace sizes do not match the expected 2n+1 / n+1 pattern".into(),
            ));
        }
        for (k, &fnode) in fluid_iface.iter().enumerate() {
            let fdof = ov + fv.dof(fnode, 0);
            if cons.contains_key(&fdof) {
                continue; // corner: already pinned, and so are its masters
            }
            let wall_nodes: Vec<(usize, f64)> = if k % 2 == 0 {
                vec![(pv.dof(poro_iface[k / 2], 0), 1.0)]
            } else {
                vec![
                    (pv.dof(poro_iface[k / 2], 0), 0.5),
                    (pv.dof(poro_iface[k / 2 + 1], 0), 0.5),
                ]
            };
            // Trial: v_x = (1/dt) sum w U_x + offset (Newmark midpoint);
            // test: contact forces pair with unit weight.
            let trial: Vec<(usize, f64)> = wall_nodes
                .iter()
                .map(|&(d, wgt)| (ou + d, wgt / dt))
                .collect();
            let test: Vec<(usize, f64)> = wall_nodes
                .iter()
                .map(|&(d, wgt)| (ou + d, wgt))
                .collect();
            cons.insert(fdof, Constraint::Petrov { trial, test, offset: 0.0 });
            ties.push(TangentialTie { fluid_dof: fdof, wall_nodes });
        }
        Ok((cons, ties))
    }

    pub fn initial_state(&self) -> SystemState {
        SystemState::zeros(&self.spaces)
    }

    pub fn advance(&mut self, state: &SystemState) -> Result<SystemState> {
        let [ov, _oq, ou, op] = self.offsets;
        let nv = self.spaces.fluid_v.ndofs();
        let nq = self.spaces.fluid_p.ndofs();
        let nu = self.spaces.poro_v.ndofs();
        let np = self.spaces.poro_p.ndofs();
        let n = nv + nq + nu + np;
        let dt = self.config.dt;
        let t_next = (state.n as f64 + 1.0) * dt;

        // Assemble the right-hand side from the level-n stack.
        let mut stack = Vec::with_capacity(n + nu);
        stack.extend_from_slice(&state.v);
        stack.extend_from_slice(&state.p_f);
        stack.extend_from_slice(&state.u);
        stack.extend_from_slice(&state.v_p);
        stack.extend_from_slice(&state.p_p);
        let mut rhs = vec![0.0; n];
        for &(r, c, v) in &self.rhs_base_trips {
            rhs[r] += v * stack[c];
        }
        let p_in = inlet_pressure(t_next, &self.params);
        if p_in != 0.0 {
            for (r, b) in rhs[ov..ov + nv].iter_mut().zip(&self.forms.b_in) {
                *r += p_in * b;
            }
        }
        if self.params.p_e != 0.0 {
            for (r, b) in rhs[ou..ou + nu].iter_mut().zip(&self.forms.b_ext) {
                *r -= self.params.p_e * b;
            }
        }
        if let Some(g) = self.params.g.clone() {
            let load = volume_load(&self.spaces.fluid_v, &self.mesh, &|x| {
                g(x[0], x[1], t_next).to_vec()
            });
            for (r, b) in rhs[ov..ov + nv].iter_mut().zip(&load) {
                *r += b;
            }
        }
        if let Some(h) = self.params.h.clone() {
            let load = volume_load(&self.spaces.poro_v, &self.mesh, &|x| {
                h(x[0], x[1], t_next).to_vec()
            });
            for (r, b) in rhs[ou..ou + nu].iter_mut().zip(&load) {
                *r += b;
            }
        }
        if let Some(sfn) = self.params.s.clone() {
            let load = volume_load(&self.spaces.poro_p, &self.mesh, &|x| {
                vec![sfn(x[0], x[1], t_next)]
            });
            for (r, b) in rhs[op..op + np].iter_mut().zip(&load) {
                *r += b;
            }
        }

        // Refresh the affine offsets of the kinematic ties:
        // v_x = (U_x - U_x^n)/dt (wall averages for midpoints).
        for tie in &self.ties {
            let mut off = 0.0;
            for &(wd, wgt) in &tie.wall_nodes {
                off -= wgt * state.u[wd] / dt;
            }
            self.reducer.set_offset(tie.fluid_dof, off)?;
        }

        let solution = match self.config.mode {
            Mode::Stokes => {
                let rb = self.reducer.reduce_rhs(&self.matrix, &rhs);
                let y = self
                    .fact
                    .as_ref()
                    .expect("stokes factorization present")
                    .solve(&rb, "monolithic step")?;
                self.reducer.expand(&y)
            }
            Mode::NavierStokes => {
                let conv = convection_matrix(
                    &self.params,
                    &self.mesh,
                    &self.spaces,
                    &state.v,
                    None,
                    None,
                )?;
                let mut trips = Vec::with_capacity(self.matrix.nnz() + conv.nnz());
                for r in 0..self.matrix.nrows {
                    for (c, v) in self.matrix.row(r) {
                        trips.push((r, c, v));
                    }
                }
                for r in 0..conv.nrows {
                    for (c, v) in conv.row(r) {
                        trips.push((ov + r, ov + c, v));
                    }
                }
                let full = SparseMatrix::from_triplets(n, n, &trips);
                let ra = self.reducer.reduce_matrix(&full);
                let rb = self.reducer.reduce_rhs(&full, &rhs);
                let fact = Factorization::new(&ra, "monolithic step")?;
                let y = fact.solve(&rb, "monolithic step")?;
                self.reducer.expand(&y)
            }
        };

        let v = solution[ov..ov + nv].to_vec();
        let p_f = solution[ov + nv..ov + nv + nq].to_vec();
        let u = solution[ou..ou + nu].to_vec();
        let p_p = solution[op..op + np].to_vec();
        let v_p: Vec<f64> = u
            .iter()
            .zip(&state.u)
            .zip(&state.v_p)
            .map(|((un, uo), vo)| 2.0 * (un - uo) / dt - vo)
            .collect();
        Ok(SystemState {
            n: state.n + 1,
            t: t_next,
            v,
            p_f,
            u,
            v_p,
            p_p,
        })
    }

    /// Energy monitored by the implicit scheme: fluid kinetic energy plus
    /// wall and membrane energies. The membrane tangential kinetic term is
    /// counted once (inside `e_m`) because the kinematic tie makes the fluid
    /// trace and the membrane velocity one quantity.
    pub fn total_energy(&self, state: &SystemState) -> f64 {
        let f = &self.forms;
        let fluid_kinetic = 0.5 * f.m_f.quadratic_form(&state.v, &state.v);
        let rec = self.energy(state);
        fluid_kinetic + rec.e_p + rec.e_m
    }

    pub fn energy(&self, state: &SystemState) -> EnergyRecord {
        let f = &self.forms;
        EnergyRecord {
            e_f: 0.5 * f.m_f.quadratic_form(&state.v, &state.v)
                + 0.5 * f.m_gt.quadratic_form(&state.v, &state.v),
            e_p: 0.5 * f.m_p.quadratic_form(&state.v_p, &state.v_p)
                + 0.5 * f.a_e.quadratic_form(&state.u, &state.u)
                + 0.5 * f.s_p.quadratic_form(&state.p_p, &state.p_p),
            e_m: 0.5 * f.m_g.quadratic_form(&state.v_p, &state.v_p)
                + 0.5 * f.a_me.quadratic_form(&state.u, &state.u),
            visc_diss: f.a_f.quadratic_form(&state.v, &state.v),
            darcy_diss: f.a_p.quadratic_form(&state.p_p, &state.p_p),
        }
    }
}

/// Run the monolithic reference over the whole horizon, returning the full
/// trajectory (including the initial state).
pub fn monolithic_solve(
    params: &PhysicalParams,
    mesh: &BilayerMesh,
    dt: f64,
    t_end: f64,
    mode: Mode,
) -> Result<Vec<SystemState>> {
    let mut config = TimeConfig::new(dt, t_end, mode);
    config.cfl_enforcement = crate::solver::CflEnforcement::Off;
    let mut solver = MonolithicSolver::new(mesh.clone(), params.clone(), config)?;
    let n_steps = config.n_steps()?;
    let mut out = Vec::with_capacity(n_steps + 1);
    let mut state = solver.initial_state();
    out.push(state.clone());
    for _ in 0..n_steps {
        state = solver.advance(&state)?;
        out.push(state.clone());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_mesh;

    fn small_mesh() -> BilayerMesh {
        build_mesh(1.0, 0.5, 0.1, 8, 3, 2).unwrap()
    }

    #[test]
    fn zero_drive_zero_trajectory() {
        let params = PhysicalParams { p_max: 0.0, ..Default::default() };
        let traj = monolithic_solve(&params, &small_mesh(), 1e-5, 5e-5, Mode::Stokes).unwrap();
        assert_eq!(traj.len(), 6);
        for s in traj {
            assert_eq!(s.max_abs(), 0.0);
        }
    }

    #[test]
    fn size_guard_refuses_large_meshes() {
        let mesh = build_mesh(6.0, 0.5, 0.1, 60, 10, 4).unwrap();
        let err = monolithic_solve(&PhysicalParams::default(), &mesh, 1e-5, 1e-4, Mode::Stokes);
        match err {
            Err(Error::SizeGuard { hint, .. }) => assert!(hint.contains("coarsen")),
            other => panic!("expected size guard, got {other:?}"),
        }
    }

    #[test]
    fn kinematic_tie_holds_after_each_step() {
        let params = PhysicalParams::default();
        let mesh = small_mesh();
        let mut config = TimeConfig::new(2e-5, 2e-4, Mode::Stokes);
        config.cfl_enforcement = crate::solver::CflEnforcement::Off;
        let mut solver = MonolithicSolver::new(mesh, params, config).unwrap();
        let mut prev = solver.initial_state();
        for _ in 0..10 {
            let next = solver.advance(&prev).unwrap();
            // On every interface vertex the fluid tangential velocity equals
            // the membrane midpoint velocity (xi^{n+1} + xi^n)/2.
            let fv = &solver.spaces.fluid_v;
            let pv = &solver.spaces.poro_v;
            for (k, &fnode) in fv.interface_nodes.iter().enumerate() {
                if k % 2 != 0 {
                    continue;
                }
                let pnode = pv.interface_nodes[k / 2];
                let vx = next.v[fv.dof(fnode, 0)];
                let xi_mid =
                    0.5 * (next.v_p[pv.dof(pnode, 0)] + prev.v_p[pv.dof(pnode, 0)]);
                assert!(
                    (vx - xi_mid).abs() <= 1e-9 * xi_mid.abs().max(1e-9),
                    "tie broken at interface node {k}: {vx} vs {xi_mid}"
                );
            }
            prev = next;
        }
        assert!(prev.max_abs() > 0.0);
    }

    #[test]
    fn isolated_system_energy_nonincreasing_any_dt() {
        // Nonzero initial data, no loads: the implicit scheme dissipates at
        // every step regardless of dt.
        let params = PhysicalParams { p_max: 0.0, ..Default::default() };
        let mesh = small_mesh();
        for dt in [1e-5, 1e-3] {
            let mut config = TimeConfig::new(dt, dt * 100.0, Mode::Stokes);
            config.cfl_enforcement = crate::solver::CflEnforcement::Off;
            let mut solver = MonolithicSolver::new(mesh.clone(), params.clone(), config).unwrap();
            let mut state = solver.initial_state();
            // Admissible nonzero initial data: respect Dirichlet rows.
            let mut seed = 0x2545f4914f6cdd1du64;
            let mut rand = || {
                seed ^= seed << 13;
                seed ^= seed >> 7;
                seed ^= seed << 17;
                (seed >> 11) as f64 / (1u64 << 53) as f64 - 0.5
            };
            for x in state.u.iter_mut().chain(state.v_p.iter_mut()).chain(state.p_p.iter_mut()) {
                *x = rand() * 1e-4;
            }
            for (d, v) in Stepper::wall_clamp_constraints_for(&solver.spaces) {
                state.u[d] = v;
                state.v_p[d] = v;
            }
            for d in Stepper::drained_pressure_dofs(&solver.spaces) {
                state.p_p[d] = 0.0;
            }
            let mut e_prev = solver.total_energy(&state);
            let e0 = e_prev;
            for _ in 0..100 {
                state = solver.advance(&state).unwrap();
                let e = solver.total_energy(&state);
                assert!(
                    e <= e_prev + 1e-10 * e0,
                    "energy grew at dt={dt}: {e_prev} -> {e}"
                );
                e_prev = e;
            }
        }
    }
}
