//! Purely elastic thick-wall comparison model.
//!
//! The wall carries no pore fluid: displacement solves elastodynamics with
//! the spring recoil term, and the membrane stays on the interface trace.
//! Without a pore pressure the splitting exchanges momentum through the
//! kinematic trace handoff: the fluid step carries the full-vector membrane
//! inertia Robin condition seeded with the wall trace velocity, and the wall
//! step's membrane inertia is seeded with the fresh fluid trace velocity.

use crate::error::{Error, Result};
use crate::fem::{volume_load, BlockBuilder, Factorization, LinearSystem, Spaces, SparseMatrix};
use crate::forms::{convection_matrix, inlet_pressure, FormCatalog, PhysicalParams};
use crate::mesh::BilayerMesh;
use crate::solver::{EnergyRecord, Mode, Stepper, SystemState, TimeConfig};

pub struct ElasticStepper {
    params: PhysicalParams,
    config: TimeConfig,
    pub mesh: BilayerMesh,
    pub spaces: Spaces,
    pub forms: FormCatalog,
    pool: Option<rayon::ThreadPool>,
    fluid_static: Vec<(usize, usize, f64)>,
    fluid_fact: Option<Factorization>,
    fluid_dirichlet: Vec<(usize, f64)>,
    wall_fact: Factorization,
    wall_dirichlet: Vec<(usize, f64)>,
    pub energy_log: Vec<EnergyRecord>,
}

impl ElasticStepper {
    pub fn new(
        mesh: BilayerMesh,
        params: PhysicalParams,
        config: TimeConfig,
        workers: usize,
    ) -> Result<Self> {
        config.n_steps()?;
        params.validate()?;
        let pool = if workers > 1 {
            Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(workers)
                    .build()
                    .map_err(|e| Error::Config(format!("worker pool: {e}")))?,
            )
        } else {
            None
        };
        let spaces = Spaces::build(&mesh);
        let forms = crate::forms::form_catalog(&params, &mesh, &spaces, pool.as_ref())?;
        let dt = config.dt;

        let nv = spaces.fluid_v.ndofs();
        let nq = spaces.fluid_p.ndofs();
        let mut bb = BlockBuilder::new(nv + nq, nv + nq);
        bb.add_block(0, 0, 1.0 / dt, &forms.m_f);
        bb.add_block(0, 0, 1.0, &forms.a_f);
        // Full-vector membrane inertia on the interface.
        bb.add_block(0, 0, 1.0 / dt, &forms.m_g_ff);
        bb.add_block_transposed(0, nv, -1.0, &forms.b_f);
        bb.add_block(nv, 0, 1.0, &forms.b_f);
        bb.reserve_diagonal();
        let fluid_matrix = bb.build();
        let mut fluid_static = Vec::with_capacity(fluid_matrix.nnz());
        for r in 0..fluid_matrix.nrows {
            for (c, v) in fluid_matrix.row(r) {
                fluid_static.push((r, c, v));
            }
        }

        // Same essential conditions as the poroelastic fluid step.
        let fluid_dirichlet = Stepper::fluid_constraints_for(&spaces, &mesh);
        let fluid_fact = match config.mode {
            Mode::Stokes => {
                let mut sys = LinearSystem::new(
                    SparseMatrix::from_triplets(nv + nq, nv + nq, &fluid_static),
                    vec![0.0; nv + nq],
                );
                sys.apply_dirichlet(&fluid_dirichlet)?;
                Some(Factorization::new(&sys.matrix, "elastic fluid step")?)
            }
            Mode::NavierStokes => None,
        };

        let nu = spaces.poro_v.ndofs();
        let mut wb = BlockBuilder::new(nu, nu);
        let w = 2.0 / (dt * dt);
        wb.add_block(0, 0, w, &forms.m_p);
        wb.add_block(0, 0, w, &forms.m_g);
        wb.add_block(0, 0, 0.5, &forms.a_e);
        wb.add_block(0, 0, 0.5, &forms.a_m);
        wb.add_block(0, 0, 0.5, &forms.m_beta);
        wb.reserve_diagonal();
        let wall_dirichlet = Stepper::wall_clamp_constraints_for(&spaces);
        let wall_fact = {
            let mut sys = LinearSystem::new(wb.build(), vec![0.0; nu]);
            sys.apply_dirichlet(&wall_dirichlet)?;
            Factorization::new(&sys.matrix, "elastic wall step")?
        };

        Ok(ElasticStepper {
            params,
            config,
            mesh,
            spaces,
            forms,
            pool,
            fluid_static,
            fluid_fact,
            fluid_dirichlet,
            wall_fact,
            wall_dirichlet,
            energy_log: Vec::new(),
        })
    }

    pub fn config(&self) -> &TimeConfig {
        &self.config
    }

    pub fn initial_state(&self) -> SystemState {
        SystemState::zeros(&self.spaces)
    }

    fn fluid_step(&mut self, state: &SystemState) -> Result<(Vec<f64>, Vec<f64>)> {
        let dt = self.config.dt;
        let t_next = (state.n as f64 + 1.0) * dt;
        let nv = self.spaces.fluid_v.ndofs();
        let nq = self.spaces.fluid_p.ndofs();
        let mut rhs = vec![0.0; nv + nq];
        self.forms.m_f.matvec_add(1.0 / dt, &state.v, &mut rhs[..nv]);
        // Previous membrane velocity = wall trace velocity (handoff).
        self.forms.m_g_fp.matvec_add(1.0 / dt, &state.v_p, &mut rhs[..nv]);
        let p_in = inlet_pressure(t_next, &self.params);
        if p_in != 0.0 {
            for (r, b) in rhs[..nv].iter_mut().zip(&self.forms.b_in) {
                *r += p_in * b;
            }
        }
        if let Some(g) = self.params.g.clone() {
            let load = volume_load(&self.spaces.fluid_v, &self.mesh, &|x| {
                g(x[0], x[1], t_next).to_vec()
            });
            for (r, b) in rhs[..nv].iter_mut().zip(&load) {
                *r += b;
            }
        }
        for &(dof, v) in &self.fluid_dirichlet {
            rhs[dof] = v;
        }
        let sol = match self.config.mode {
            Mode::Stokes => self
                .fluid_fact
                .as_ref()
                .expect("factorization present")
                .solve(&rhs, "elastic fluid step")?,
            Mode::NavierStokes => {
                let conv = convection_matrix(
                    &self.params,
                    &self.mesh,
                    &self.spaces,
                    &state.v,
                    None,
                    self.pool.as_ref(),
                )?;
                let mut trips = self.fluid_static.clone();
                for r in 0..conv.nrows {
                    for (c, v) in conv.row(r) {
                        trips.push((r, c, v));
                    }
                }
                let mut sys = LinearSystem::new(
                    SparseMatrix::from_triplets(nv + nq, nv + nq, &trips),
                    rhs,
                );
                sys.apply_dirichlet(&self.fluid_dirichlet)?;
                let fact = Factorization::new(&sys.matrix, "elastic fluid step")?;
                let sol = fact.solve(&sys.rhs, "elastic fluid step")?;
                self.fluid_fact = Some(fact);
                sol
            }
        };
        let (v, p) = sol.split_at(nv);
        Ok((v.to_vec(), p.to_vec()))
    }

    fn wall_step(&self, state: &SystemState, v_new: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let dt = self.config.dt;
        let nu = self.spaces.poro_v.ndofs();
        let mut rhs = vec![0.0; nu];
        let w = 2.0 / (dt * dt);
        self.forms.m_p.matvec_add(w, &state.u, &mut rhs);
        self.forms.m_g.matvec_add(w, &state.u, &mut rhs);
        self.forms.m_p.matvec_add(2.0 / dt, &state.v_p, &mut rhs);
        // Membrane inertia seeded with the fresh fluid trace velocity.
        self.forms.m_g.matvec_add(1.0 / dt, &state.v_p, &mut rhs);
        self.forms.m_g_fp.matvec_transpose_add(1.0 / dt, v_new, &mut rhs);
        self.forms.a_e.matvec_add(-0.5, &state.u, &mut rhs);
        self.forms.a_m.matvec_add(-0.5, &state.u, &mut rhs);
        self.forms.m_beta.matvec_add(-0.5, &state.u, &mut rhs);
        if self.params.p_e != 0.0 {
            for (r, b) in rhs.iter_mut().zip(&self.forms.b_ext) {
                *r -= self.params.p_e * b;
            }
        }
        for &(dof, v) in &self.wall_dirichlet {
            rhs[dof] = v;
        }
        let u_new = self.wall_fact.solve(&rhs, "elastic wall step")?;
        let v_p_new: Vec<f64> = u_new
            .iter()
            .zip(&state.u)
            .zip(&state.v_p)
            .map(|((un, uo), vo)| 2.0 * (un - uo) / dt - vo)
            .collect();
        Ok((u_new, v_p_new))
    }

    pub fn advance(&mut self, state: &SystemState) -> Result<SystemState> {
        let idx = state.n + 1;
        let (v, p_f) = self.fluid_step(state).map_err(|e| e.at_step(idx))?;
        let (u, v_p) = self.wall_step(state, &v).map_err(|e| e.at_step(idx))?;
        let next = SystemState {
            n: idx,
            t: idx as f64 * self.config.dt,
            v,
            p_f,
            u,
            v_p,
            p_p: state.p_p.clone(), // stays zero: no pore fluid
        };
        self.energy_log.push(self.compute_energy(&next));
        Ok(next)
    }

    pub fn compute_energy(&self, state: &SystemState) -> EnergyRecord {
        let f = &self.forms;
        let e_f = 0.5 * f.m_f.quadratic_form(&state.v, &state.v)
            + 0.5 * f.m_gt.quadratic_form(&state.v, &state.v);
        let e_p = 0.5 * f.m_p.quadratic_form(&state.v_p, &state.v_p)
            + 0.5 * f.a_e.quadratic_form(&state.u, &state.u);
        let e_m = 0.5 * f.m_g.quadratic_form(&state.v_p, &state.v_p)
            + 0.5 * f.a_me.quadratic_form(&state.u, &state.u);
        EnergyRecord {
            e_f,
            e_p,
            e_m,
            visc_diss: f.a_f.quadratic_form(&state.v, &state.v),
            darcy_diss: 0.0,
        }
    }

    pub fn eta_y(&self, state: &SystemState) -> Vec<f64> {
        let pv = &self.spaces.poro_v;
        pv.interface_nodes
            .iter()
            .map(|&n| state.u[pv.dof(n, 1)])
            .collect()
    }
}
