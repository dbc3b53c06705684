//! Reference-solution convergence studies in time and space.
//!
//! Errors are measured in the discrete-in-time norms
//! `l2(0,T;X): sqrt(sum_n ||e^{n+1}||_X^2 dt)` and
//! `linf(0,T;X): max_n ||e^n||_X`, with X the L2 or full H1 norm of the
//! variable's space. Spatial studies evaluate the fine reference at the
//! coarse quadrature points rather than interpolating nodally.

use crate::error::{Error, Result};
use crate::fem::quadrature::TRI_DEG6;
use crate::fem::{assemble, FieldEvaluator, Kernel, Spaces, SparseMatrix};
use crate::mesh::{build_mesh, BilayerMesh};
use crate::solver::{CflEnforcement, Mode, Stepper, SystemState, TimeConfig};
use crate::verify::driver::BLOWUP_ENERGY;
use std::collections::BTreeMap;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormTag {
    LinfL2,
    L2H1,
    L2L2,
    LinfH1,
}

impl NormTag {
    pub fn label(&self) -> &'static str {
        match self {
            NormTag::LinfL2 => "linf_l2",
            NormTag::L2H1 => "l2_h1",
            NormTag::L2L2 => "l2_l2",
            NormTag::LinfH1 => "linf_h1",
        }
    }
}

/// The (variable, norm) pairs reported by the studies.
pub const REPORTED: [(&str, NormTag); 7] = [
    ("v", NormTag::LinfL2),
    ("v", NormTag::L2H1),
    ("p_f", NormTag::L2L2),
    ("p_p", NormTag::LinfL2),
    ("p_p", NormTag::L2H1),
    ("V", NormTag::LinfL2),
    ("U", NormTag::LinfH1),
];

#[derive(Clone, Debug)]
pub struct ConvRow {
    pub resolution: f64,
    pub variable: &'static str,
    pub norm: NormTag,
    pub abs_error: f64,
    pub rel_error: f64,
    /// Observed rate against the previous (coarser) resolution:
    /// ln(e_coarse/e_fine) / ln(r_coarse/r_fine).
    pub rate: Option<f64>,
    pub blew_up: bool,
}

#[derive(Clone, Debug, Default)]
pub struct ConvergenceReport {
    pub rows: Vec<ConvRow>,
}

impl ConvergenceReport {
    /// Least-squares slope of ln(error) against ln(resolution) over the
    /// non-blown rows of one (variable, norm) pair.
    pub fn fitted_rate(&self, variable: &str, norm: NormTag) -> Option<f64> {
        let pts: Vec<(f64, f64)> = self
            .rows
            .iter()
            .filter(|r| r.variable == variable && r.norm == norm && !r.blew_up && r.abs_error > 0.0)
            .map(|r| (r.resolution.ln(), r.abs_error.ln()))
            .collect();
        if pts.len() < 2 {
            return None;
        }
        let n = pts.len() as f64;
        let sx: f64 = pts.iter().map(|p| p.0).sum();
        let sy: f64 = pts.iter().map(|p| p.1).sum();
        let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
        let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
        let denom = n * sxx - sx * sx;
        if denom.abs() < 1e-300 {
            return None;
        }
        Some((n * sxy - sx * sy) / denom)
    }

    /// Pairwise rate of the finest resolution pair.
    pub fn finest_pair_rate(&self, variable: &str, norm: NormTag) -> Option<f64> {
        let mut rows: Vec<&ConvRow> = self
            .rows
            .iter()
            .filter(|r| r.variable == variable && r.norm == norm && !r.blew_up && r.abs_error > 0.0)
            .collect();
        rows.sort_by(|a, b| a.resolution.partial_cmp(&b.resolution).unwrap());
        if rows.len() < 2 {
            return None;
        }
        let (f, c) = (rows[0], rows[1]);
        Some((c.abs_error / f.abs_error).ln() / (c.resolution / f.resolution).ln())
    }

    /// Fraction of same-norm consecutive pairs whose error decreases with
    /// resolution (the self-consistency check for the reference protocol).
    pub fn monotone_fraction(&self) -> f64 {
        let mut total = 0usize;
        let mut good = 0usize;
        for (variable, norm) in REPORTED {
            let mut rows: Vec<&ConvRow> = self
                .rows
                .iter()
                .filter(|r| r.variable == variable && r.norm == norm && !r.blew_up)
                .collect();
            rows.sort_by(|a, b| b.resolution.partial_cmp(&a.resolution).unwrap());
            for w in rows.windows(2) {
                total += 1;
                if w[1].abs_error <= w[0].abs_error {
                    good += 1;
                }
            }
        }
        if total == 0 {
            1.0
        } else {
            good as f64 / total as f64
        }
    }
}

/// Unweighted norm matrices of every variable's space.
pub struct NormSet {
    pub m_v: SparseMatrix,
    pub g_v: SparseMatrix,
    pub m_q: SparseMatrix,
    pub m_u: SparseMatrix,
    pub g_u: SparseMatrix,
    pub m_p: SparseMatrix,
    pub g_p: SparseMatrix,
}

impl NormSet {
    pub fn build(mesh: &BilayerMesh, spaces: &Spaces) -> Result<Self> {
        Ok(NormSet {
            m_v: assemble(&spaces.fluid_v, &spaces.fluid_v, Kernel::Mass { coeff: 1.0 }, mesh, None)?,
            g_v: assemble(&spaces.fluid_v, &spaces.fluid_v, Kernel::GradGrad { coeff: 1.0 }, mesh, None)?,
            m_q: assemble(&spaces.fluid_p, &spaces.fluid_p, Kernel::Mass { coeff: 1.0 }, mesh, None)?,
            m_u: assemble(&spaces.poro_v, &spaces.poro_v, Kernel::Mass { coeff: 1.0 }, mesh, None)?,
            g_u: assemble(&spaces.poro_v, &spaces.poro_v, Kernel::GradGrad { coeff: 1.0 }, mesh, None)?,
            m_p: assemble(&spaces.poro_p, &spaces.poro_p, Kernel::Mass { coeff: 1.0 }, mesh, None)?,
            g_p: assemble(&spaces.poro_p, &spaces.poro_p, Kernel::Stiffness { coeff: 1.0 }, mesh, None)?,
        })
    }

    fn l2(m: &SparseMatrix, e: &[f64]) -> f64 {
        m.quadratic_form(e, e).max(0.0).sqrt()
    }

    fn h1(m: &SparseMatrix, g: &SparseMatrix, e: &[f64]) -> f64 {
        (m.quadratic_form(e, e) + g.quadratic_form(e, e)).max(0.0).sqrt()
    }
}

/// Per-variable instantaneous norms of a state difference.
struct InstNorms {
    v_l2: f64,
    v_h1: f64,
    pf_l2: f64,
    pp_l2: f64,
    pp_h1: f64,
    vp_l2: f64,
    u_h1: f64,
}

fn diff(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

fn inst_norms(ns: &NormSet, a: &SystemState, b: &SystemState) -> InstNorms {
    let ev = diff(&a.v, &b.v);
    let epf = diff(&a.p_f, &b.p_f);
    let epp = diff(&a.p_p, &b.p_p);
    let evp = diff(&a.v_p, &b.v_p);
    let eu = diff(&a.u, &b.u);
    InstNorms {
        v_l2: NormSet::l2(&ns.m_v, &ev),
        v_h1: NormSet::h1(&ns.m_v, &ns.g_v, &ev),
        pf_l2: NormSet::l2(&ns.m_q, &epf),
        pp_l2: NormSet::l2(&ns.m_p, &epp),
        pp_h1: NormSet::h1(&ns.m_p, &ns.g_p, &epp),
        vp_l2: NormSet::l2(&ns.m_u, &evp),
        u_h1: NormSet::h1(&ns.m_u, &ns.g_u, &eu),
    }
}

/// Accumulates the discrete-in-time norms from instantaneous samples.
#[derive(Default, Clone, Copy)]
struct TimeAcc {
    v_linf_l2: f64,
    v_l2_h1_sq: f64,
    pf_l2_l2_sq: f64,
    pp_linf_l2: f64,
    pp_l2_h1_sq: f64,
    vp_linf_l2: f64,
    u_linf_h1: f64,
}

impl TimeAcc {
    fn update(&mut self, n: &InstNorms, dt: f64) {
        self.v_linf_l2 = self.v_linf_l2.max(n.v_l2);
        self.v_l2_h1_sq += n.v_h1 * n.v_h1 * dt;
        self.pf_l2_l2_sq += n.pf_l2 * n.pf_l2 * dt;
        self.pp_linf_l2 = self.pp_linf_l2.max(n.pp_l2);
        self.pp_l2_h1_sq += n.pp_h1 * n.pp_h1 * dt;
        self.vp_linf_l2 = self.vp_linf_l2.max(n.vp_l2);
        self.u_linf_h1 = self.u_linf_h1.max(n.u_h1);
    }

    fn values(&self) -> [f64; 7] {
        [
            self.v_linf_l2,
            self.v_l2_h1_sq.sqrt(),
            self.pf_l2_l2_sq.sqrt(),
            self.pp_linf_l2,
            self.pp_l2_h1_sq.sqrt(),
            self.vp_linf_l2,
            self.u_linf_h1,
        ]
    }
}

fn push_rows(
    report: &mut ConvergenceReport,
    resolution: f64,
    abs: [f64; 7],
    rel: [f64; 7],
    blew_up: bool,
) {
    for (k, (variable, norm)) in REPORTED.iter().enumerate() {
        let prev_rate = report
            .rows
            .iter()
            .rev()
            .find(|r| r.variable == *variable && r.norm == *norm && !r.blew_up && r.abs_error > 0.0)
            .map(|r| (r.resolution, r.abs_error));
        let rate = if blew_up {
            None
        } else {
            prev_rate.and_then(|(r_prev, e_prev)| {
                if abs[k] > 0.0 && e_prev > 0.0 {
                    Some((e_prev / abs[k]).ln() / (r_prev / resolution).ln())
                } else {
                    None
                }
            })
        };
        report.rows.push(ConvRow {
            resolution,
            variable,
            norm: *norm,
            abs_error: abs[k],
            rel_error: rel[k],
            rate,
            blew_up,
        });
    }
}

fn make_stepper(
    mesh: &BilayerMesh,
    params: &crate::forms::PhysicalParams,
    dt: f64,
    t_end: f64,
    mode: Mode,
    workers: usize,
) -> Result<Stepper> {
    let mut cfg = TimeConfig::new(dt, t_end, mode);
    cfg.cfl_enforcement = CflEnforcement::Off;
    Stepper::new(mesh.clone(), params.clone(), cfg, workers)
}

/// Temporal study on a fixed mesh: every run is compared against the
/// `dt_ref` reference at the run's own time levels.
pub fn convergence_in_time(
    params: &crate::forms::PhysicalParams,
    mesh: &BilayerMesh,
    dt_list: &[f64],
    dt_ref: f64,
    t_end: f64,
    mode: Mode,
    workers: usize,
) -> Result<ConvergenceReport> {
    let dt_min = dt_list.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(dt_ref < dt_min / 2.0) {
        return Err(Error::invalid(format!(
            "reference dt = {dt_ref} must be smaller than half the finest tested dt = {dt_min}"
        )));
    }
    // Every comparison time must land on the reference grid.
    let mut needed: BTreeMap<i64, Option<SystemState>> = BTreeMap::new();
    for &dt in dt_list {
        let m = dt / dt_ref;
        if (m - m.round()).abs() > 1e-9 * m {
            return Err(Error::invalid(format!(
                "tested dt = {dt} is not an integer multiple of the reference dt = {dt_ref}"
            )));
        }
        let steps = (t_end / dt).round() as i64;
        let m = m.round() as i64;
        for k in 1..=steps {
            needed.insert(k * m, None);
        }
    }

    // Reference run, snapshotting the needed levels.
    let mut stepper = make_stepper(mesh, params, dt_ref, t_end, mode, workers)?;
    let mut state = stepper.initial_state();
    let n_ref = stepper.config.n_steps()?;
    for k in 1..=n_ref as i64 {
        state = stepper.advance(&state)?;
        if let Some(slot) = needed.get_mut(&k) {
            *slot = Some(state.clone());
        }
    }

    let spaces = Spaces::build(mesh);
    let norms = NormSet::build(mesh, &spaces)?;
    let zero = SystemState::zeros(&spaces);

    let mut sorted: Vec<f64> = dt_list.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut report = ConvergenceReport::default();
    for &dt in &sorted {
        let m = (dt / dt_ref).round() as i64;
        let mut st = make_stepper(mesh, params, dt, t_end, mode, workers)?;
        let mut s = st.initial_state();
        let mut acc = TimeAcc::default();
        let mut ref_acc = TimeAcc::default();
        let mut blew_up = false;
        let steps = st.config.n_steps()?;
        for k in 1..=steps as i64 {
            match st.advance(&s) {
                Ok(next) => s = next,
                Err(_) => {
                    blew_up = true;
                    break;
                }
            }
            let rec = st.energy_log.last().unwrap();
            if !s.is_finite() || rec.total() > BLOWUP_ENERGY {
                blew_up = true;
                break;
            }
            let r = needed[&(k * m)].as_ref().expect("reference snapshot recorded");
            acc.update(&inst_norms(&norms, &s, r), dt);
            ref_acc.update(&inst_norms(&norms, r, &zero), dt);
        }
        let abs = acc.values();
        let refs = ref_acc.values();
        let mut rel = [0.0; 7];
        for i in 0..7 {
            rel[i] = if refs[i] > 0.0 { abs[i] / refs[i] } else { 0.0 };
        }
        push_rows(&mut report, dt, abs, rel, blew_up);
    }
    Ok(report)
}

/// Geometry of the bilayer channel for resolution sweeps.
#[derive(Clone, Copy, Debug)]
pub struct GeometrySpec {
    pub length: f64,
    pub radius: f64,
    pub thickness: f64,
    /// Fluid vertical spacing relative to dx (2.0 keeps the desk-scale DOF
    /// count inside budget while refining isotropically).
    pub fluid_aspect: f64,
}

impl GeometrySpec {
    pub fn mesh_for(&self, dx: f64) -> Result<BilayerMesh> {
        let nx = (self.length / dx).round().max(1.0) as usize;
        let ny_f = (self.radius / (self.fluid_aspect * dx)).round().max(1.0) as usize;
        let ny_p = (self.thickness / dx).round().max(1.0) as usize;
        build_mesh(self.length, self.radius, self.thickness, nx, ny_f, ny_p)
    }
}

/// Cross-mesh instantaneous norms: quadrature on the coarse mesh, fine field
/// evaluated through its own basis at the coarse quadrature points.
struct CrossMesh<'a> {
    coarse_mesh: &'a BilayerMesh,
    coarse: &'a Spaces,
    fine_mesh: &'a BilayerMesh,
    fine: &'a Spaces,
}

impl<'a> CrossMesh<'a> {
    /// (L2^2, H1^2) of (coarse field - fine field) over the coarse region,
    /// plus the same for the fine field alone (for relative errors).
    #[allow(clippy::too_many_arguments)]
    fn field_error(
        &self,
        coarse_space: &crate::fem::FESpace,
        fine_space: &crate::fem::FESpace,
        coarse_dofs: &[f64],
        fine_dofs: &[f64],
    ) -> (f64, f64, f64, f64) {
        let ev_c = FieldEvaluator::new(self.coarse_mesh, coarse_space);
        let ev_f = FieldEvaluator::new(self.fine_mesh, fine_space);
        let mut l2 = 0.0;
        let mut h1 = 0.0;
        let mut ref_l2 = 0.0;
        let mut ref_h1 = 0.0;
        for (e, _) in coarse_space.tri_nodes.iter().enumerate() {
            let tri = &self.coarse_mesh.triangles[coarse_space.tri_mesh_ids[e]];
            let c = [
                self.coarse_mesh.nodes[tri.v[0]],
                self.coarse_mesh.nodes[tri.v[1]],
                self.coarse_mesh.nodes[tri.v[2]],
            ];
            let area = 0.5
                * ((c[1][0] - c[0][0]) * (c[2][1] - c[0][1])
                    - (c[2][0] - c[0][0]) * (c[1][1] - c[0][1]))
                    .abs();
            for tp in TRI_DEG6.iter() {
                let x = tp.l[0] * c[0][0] + tp.l[1] * c[1][0] + tp.l[2] * c[2][0];
                let y = tp.l[0] * c[0][1] + tp.l[1] * c[1][1] + tp.l[2] * c[2][1];
                let w = tp.w * area;
                let (vc, gc) = ev_c.eval(coarse_dofs, x, y);
                let (vf, gf) = ev_f.eval(fine_dofs, x, y);
                for comp in 0..coarse_space.ncomp {
                    let dv = vc[comp] - vf[comp];
                    let dgx = gc[comp][0] - gf[comp][0];
                    let dgy = gc[comp][1] - gf[comp][1];
                    l2 += w * dv * dv;
                    h1 += w * (dv * dv + dgx * dgx + dgy * dgy);
                    ref_l2 += w * vf[comp] * vf[comp];
                    ref_h1 += w
                        * (vf[comp] * vf[comp]
                            + gf[comp][0] * gf[comp][0]
                            + gf[comp][1] * gf[comp][1]);
                }
            }
        }
        (l2, h1, ref_l2, ref_h1)
    }

    fn inst(&self, a: &SystemState, b: &SystemState) -> (InstNorms, InstNorms) {
        let (v_l2, v_h1, rv_l2, rv_h1) =
            self.field_error(&self.coarse.fluid_v, &self.fine.fluid_v, &a.v, &b.v);
        let (pf_l2, _, rpf_l2, _) =
            self.field_error(&self.coarse.fluid_p, &self.fine.fluid_p, &a.p_f, &b.p_f);
        let (pp_l2, pp_h1, rpp_l2, rpp_h1) =
            self.field_error(&self.coarse.poro_p, &self.fine.poro_p, &a.p_p, &b.p_p);
        let (vp_l2, _, rvp_l2, _) =
            self.field_error(&self.coarse.poro_v, &self.fine.poro_v, &a.v_p, &b.v_p);
        let (_, u_h1, _, ru_h1) =
            self.field_error(&self.coarse.poro_v, &self.fine.poro_v, &a.u, &b.u);
        (
            InstNorms {
                v_l2: v_l2.sqrt(),
                v_h1: v_h1.sqrt(),
                pf_l2: pf_l2.sqrt(),
                pp_l2: pp_l2.sqrt(),
                pp_h1: pp_h1.sqrt(),
                vp_l2: vp_l2.sqrt(),
                u_h1: u_h1.sqrt(),
            },
            InstNorms {
                v_l2: rv_l2.sqrt(),
                v_h1: rv_h1.sqrt(),
                pf_l2: rpf_l2.sqrt(),
                pp_l2: rpp_l2.sqrt(),
                pp_h1: rpp_h1.sqrt(),
                vp_l2: rvp_l2.sqrt(),
                u_h1: ru_h1.sqrt(),
            },
        )
    }
}

/// Spatial study at fixed `dt`: every coarse run is compared against the
/// `dx_ref` reference on the coarse quadrature points, at every time level.
#[allow(clippy::too_many_arguments)]
pub fn convergence_in_space(
    params: &crate::forms::PhysicalParams,
    geometry: GeometrySpec,
    dx_list: &[f64],
    dx_ref: f64,
    dt: f64,
    t_end: f64,
    mode: Mode,
    workers: usize,
) -> Result<ConvergenceReport> {
    let dx_min = dx_list.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(dx_ref < dx_min) {
        return Err(Error::invalid(format!(
            "reference dx = {dx_ref} must be finer than the finest tested dx = {dx_min}"
        )));
    }
    // Reference trajectory, stored at every level.
    let fine_mesh = geometry.mesh_for(dx_ref)?;
    let fine_spaces = Spaces::build(&fine_mesh);
    let mut ref_states = Vec::new();
    {
        let mut st = make_stepper(&fine_mesh, params, dt, t_end, mode, workers)?;
        let mut s = st.initial_state();
        for _ in 0..st.config.n_steps()? {
            s = st.advance(&s)?;
            ref_states.push(s.clone());
        }
    }

    let mut sorted: Vec<f64> = dx_list.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut report = ConvergenceReport::default();
    for &dx in &sorted {
        let mesh = geometry.mesh_for(dx)?;
        let spaces = Spaces::build(&mesh);
        let cross = CrossMesh {
            coarse_mesh: &mesh,
            coarse: &spaces,
            fine_mesh: &fine_mesh,
            fine: &fine_spaces,
        };
        let mut st = make_stepper(&mesh, params, dt, t_end, mode, workers)?;
        let mut s = st.initial_state();
        let mut acc = TimeAcc::default();
        let mut ref_acc = TimeAcc::default();
        let mut blew_up = false;
        for k in 0..st.config.n_steps()? {
            match st.advance(&s) {
                Ok(next) => s = next,
                Err(_) => {
                    blew_up = true;
                    break;
                }
            }
            let rec = st.energy_log.last().unwrap();
            if !s.is_finite() || rec.total() > BLOWUP_ENERGY {
                blew_up = true;
                break;
            }
            let (err, refmag) = cross.inst(&s, &ref_states[k]);
            acc.update(&err, dt);
            ref_acc.update(&refmag, dt);
        }
        let abs = acc.values();
        let refs = ref_acc.values();
        let mut rel = [0.0; 7];
        for i in 0..7 {
            rel[i] = if refs[i] > 0.0 { abs[i] / refs[i] } else { 0.0 };
        }
        push_rows(&mut report, dx, abs, rel, blew_up);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forms::PhysicalParams;

    #[test]
    fn self_reference_error_is_zero() {
        let mesh = build_mesh(1.0, 0.5, 0.1, 6, 2, 1).unwrap();
        let spaces = Spaces::build(&mesh);
        let norms = NormSet::build(&mesh, &spaces).unwrap();
        let mut s = SystemState::zeros(&spaces);
        for (i, x) in s.v.iter_mut().enumerate() {
            *x = (i as f64 * 0.37).sin();
        }
        let n = inst_norms(&norms, &s, &s.clone());
        assert_eq!(n.v_l2, 0.0);
        assert_eq!(n.v_h1, 0.0);
    }

    #[test]
    fn rejects_reference_coarser_than_half_finest() {
        let mesh = build_mesh(1.0, 0.5, 0.1, 4, 2, 1).unwrap();
        let p = PhysicalParams::default();
        let err = convergence_in_time(&p, &mesh, &[1e-5, 5e-6], 4e-6, 1e-4, Mode::Stokes, 1);
        assert!(err.is_err());
    }

    #[test]
    fn fitted_rate_recovers_synthetic_slope() {
        let mut rep = ConvergenceReport::default();
        for &r in &[4e-5f64, 2e-5, 1e-5] {
            let e = 3.0 * r.powf(1.2);
            push_rows(&mut rep, r, [e; 7], [0.0; 7], false);
        }
        let rate = rep.fitted_rate("v", NormTag::LinfL2).unwrap();
        assert!((rate - 1.2).abs() < 1e-10);
        let pair = rep.finest_pair_rate("v", NormTag::LinfL2).unwrap();
        assert!((pair - 1.2).abs() < 1e-10);
        assert_eq!(rep.monotone_fraction(), 1.0);
    }

    #[test]
    fn blown_rows_are_excluded() {
        let mut rep = ConvergenceReport::default();
        push_rows(&mut rep, 4e-5, [1.0; 7], [0.0; 7], true);
        push_rows(&mut rep, 2e-5, [0.5; 7], [0.0; 7], false);
        push_rows(&mut rep, 1e-5, [0.25; 7], [0.0; 7], false);
        let rate = rep.fitted_rate("v", NormTag::LinfL2).unwrap();
        assert!((rate - 1.0).abs() < 1e-10);
        assert!(rep.rows.iter().filter(|r| r.blew_up).count() == 7);
    }
}
