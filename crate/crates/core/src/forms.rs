//! Physical parameters, membrane coefficients, the inlet pressure pulse, and
//! every variational form of the coupled scheme as a named assembled matrix.
//!
//! Units are CGS throughout: lengths in cm, stresses in dyn/cm^2, time in s.

use crate::error::{Error, Result};
use crate::fem::{
    assemble, assemble_interface, boundary_component_load, IfaceKernel, Kernel, SparseMatrix,
    Spaces,
};
use crate::mesh::{BilayerMesh, BoundaryTag};
use std::sync::Arc;

/// Vector-valued body force handle `(x, y, t) -> (fx, fy)`.
pub type BodyForce = Arc<dyn Fn(f64, f64, f64) -> [f64; 2] + Send + Sync>;
/// Scalar source handle `(x, y, t) -> s`.
pub type ScalarSource = Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>;

/// Every physical constant of the model. Defaults reproduce the benchmark
/// configuration: blood-like fluid in a 6 cm channel of radius 0.5 cm with a
/// 0.02 cm membrane and a 0.1 cm poroelastic wall.
#[derive(Clone)]
pub struct PhysicalParams {
    /// Fluid density (g/cm^3).
    pub rho_f: f64,
    /// Dynamic viscosity (g/(cm s)).
    pub mu_f: f64,
    /// Membrane density (g/cm^3).
    pub rho_m: f64,
    /// Membrane thickness (cm).
    pub r_m: f64,
    /// Membrane Lame coefficients (dyn/cm^2).
    pub mu_m: f64,
    pub lambda_m: f64,
    /// Poroelastic wall density (g/cm^3).
    pub rho_p: f64,
    /// Skeleton Lame coefficients (dyn/cm^2).
    pub mu_p: f64,
    pub lambda_p: f64,
    /// Hydraulic conductivity (cm^3 s/g).
    pub kappa: f64,
    /// Mass storativity (cm^2/dyn).
    pub s0: f64,
    /// Pressure-storage coupling coefficient (dimensionless).
    pub alpha: f64,
    /// Spring coefficient from the axially symmetric recoil (dyn/cm^4);
    /// 0 disables the term.
    pub beta: f64,
    /// External ambient pressure on the outer wall (dyn/cm^2).
    pub p_e: f64,
    /// Peak of the inlet pressure pulse (dyn/cm^2).
    pub p_max: f64,
    /// Duration of the inlet pressure pulse (s).
    pub t_max: f64,
    /// Optional body force on the fluid.
    pub g: Option<BodyForce>,
    /// Optional body force on the wall.
    pub h: Option<BodyForce>,
    /// Optional pore fluid source.
    pub s: Option<ScalarSource>,
}

impl std::fmt::Debug for PhysicalParams {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PhysicalParams")
            .field("rho_f", &self.rho_f)
            .field("mu_f", &self.mu_f)
            .field("rho_m", &self.rho_m)
            .field("r_m", &self.r_m)
            .field("mu_m", &self.mu_m)
            .field("lambda_m", &self.lambda_m)
            .field("rho_p", &self.rho_p)
            .field("mu_p", &self.mu_p)
            .field("lambda_p", &self.lambda_p)
            .field("kappa", &self.kappa)
            .field("s0", &self.s0)
            .field("alpha", &self.alpha)
            .field("beta", &self.beta)
            .field("p_e", &self.p_e)
            .field("p_max", &self.p_max)
            .field("t_max", &self.t_max)
            .finish()
    }
}

impl Default for PhysicalParams {
    fn default() -> Self {
        PhysicalParams {
            rho_f: 1.0,
            mu_f: 0.035,
            rho_m: 1.1,
            r_m: 0.02,
            mu_m: 1.07e6,
            lambda_m: 4.28e6,
            rho_p: 1.1,
            mu_p: 1.07e6,
            lambda_p: 4.28e6,
            kappa: 5e-9,
            s0: 5e-6,
            alpha: 1.0,
            beta: 5e7,
            p_e: 0.0,
            p_max: 1.3334,
            t_max: 0.003,
            g: None,
            h: None,
            s: None,
        }
    }
}

impl PhysicalParams {
    pub fn validate(&self) -> Result<()> {
        let pos = [
            ("rho_f", self.rho_f),
            ("mu_f", self.mu_f),
            ("rho_m", self.rho_m),
            ("r_m", self.r_m),
            ("mu_m", self.mu_m),
            ("rho_p", self.rho_p),
            ("mu_p", self.mu_p),
            ("kappa", self.kappa),
            ("s0", self.s0),
        ];
        for (name, v) in pos {
            if !(v > 0.0) {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        let nonneg = [
            ("lambda_m", self.lambda_m),
            ("lambda_p", self.lambda_p),
            ("beta", self.beta),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0) {
                return Err(Error::invalid(format!("{name} must be nonnegative, got {v}")));
            }
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::invalid(format!(
                "alpha must lie in (0, 1], got {}",
                self.alpha
            )));
        }
        Ok(())
    }
}

/// Membrane coefficients: `C0` couples radial displacement to itself, `C1`
/// the axial stretch, `C2` the axial/radial cross terms.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KoiterCoeffs {
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
}

/// Coefficients of the membrane operator for a channel of radius `radius`:
/// with `G = 2 mu_m lambda_m / (lambda_m + 2 mu_m)`,
/// `C1 = r_m (G + 2 mu_m)`, `C0 = C1 / R^2`, `C2 = (r_m / R) G`.
pub fn koiter_coeffs(params: &PhysicalParams, radius: f64) -> Result<KoiterCoeffs> {
    let denom = params.lambda_m + 2.0 * params.mu_m;
    if !(denom > 0.0) {
        return Err(Error::invalid("lambda_m + 2 mu_m must be positive"));
    }
    if !(radius > 0.0) {
        return Err(Error::invalid("radius must be positive"));
    }
    let g = 2.0 * params.mu_m * params.lambda_m / denom;
    let c1 = params.r_m * (g + 2.0 * params.mu_m);
    Ok(KoiterCoeffs {
        c0: c1 / (radius * radius),
        c1,
        c2: params.r_m / radius * g,
    })
}

/// Time-dependent inlet pressure: a single raised-cosine pulse of height
/// `p_max` over `[0, t_max]`, zero afterwards.
pub fn inlet_pressure(t: f64, params: &PhysicalParams) -> f64 {
    if t <= params.t_max {
        0.5 * params.p_max * (1.0 - (2.0 * std::f64::consts::PI * t / params.t_max).cos())
    } else {
        0.0
    }
}

/// Every time-independent matrix of the coupled scheme.
///
/// Orientation of the coupling blocks: `b_f` and `d_ep` have scalar (test
/// pressure) rows and vector columns; `c_fp` and `e_ep` have vector (test
/// velocity/displacement) rows and scalar pressure columns.
pub struct FormCatalog {
    /// rho_f (u, v) on the fluid.
    pub m_f: SparseMatrix,
    /// 2 mu_f (D(u), D(v)) on the fluid.
    pub a_f: SparseMatrix,
    /// (psi, div u): fluid pressure rows, fluid velocity columns.
    pub b_f: SparseMatrix,
    /// rho_m r_m tangential trace mass on the fluid velocity.
    pub m_gt: SparseMatrix,
    /// (phi . n, p_p) over the interface: fluid velocity rows, pore pressure columns.
    pub c_fp: SparseMatrix,
    /// rho_p (u, v) on the wall.
    pub m_p: SparseMatrix,
    /// 2 mu_p (D(u), D(v)) + lambda_p (div u, div v) on the wall.
    pub a_e: SparseMatrix,
    /// kappa (grad p, grad q) on the wall.
    pub a_p: SparseMatrix,
    /// alpha (psi, div u): pore pressure rows, displacement columns.
    pub d_ep: SparseMatrix,
    /// alpha (phi . n, p_p) over the interface: displacement rows, pressure columns.
    pub e_ep: SparseMatrix,
    /// Membrane operator on the wall trace (nonsymmetric cross terms).
    pub a_m: SparseMatrix,
    /// Equivalent symmetric membrane strain form (energy monitor).
    pub a_me: SparseMatrix,
    /// rho_m r_m full trace mass on the wall displacement/velocity space.
    pub m_g: SparseMatrix,
    /// beta (u, v) on the wall (spring recoil), zero matrix when beta = 0.
    pub m_beta: SparseMatrix,
    /// s0 (p, q) on the wall.
    pub s_p: SparseMatrix,
    /// rho_m r_m full trace mass on the fluid velocity (elastic-wall mode).
    pub m_g_ff: SparseMatrix,
    /// rho_m r_m mixed trace mass: fluid velocity rows, wall velocity columns.
    pub m_g_fp: SparseMatrix,
    /// Inlet boundary load: integral of phi_x over the inlet per DOF.
    pub b_in: Vec<f64>,
    /// Exterior boundary load: integral of phi_y over the outer wall per DOF.
    pub b_ext: Vec<f64>,
    pub koiter: KoiterCoeffs,
}

/// Assemble the full catalog. `pool` distributes element integration; the
/// result is identical for any worker count.
pub fn form_catalog(
    params: &PhysicalParams,
    mesh: &BilayerMesh,
    spaces: &Spaces,
    pool: Option<&rayon::ThreadPool>,
) -> Result<FormCatalog> {
    params.validate()?;
    let radius = mesh.dims.radius;
    let koiter = koiter_coeffs(params, radius)?;
    let g_m = 2.0 * params.mu_m * params.lambda_m / (params.lambda_m + 2.0 * params.mu_m);
    let rm = params.rho_m * params.r_m;

    let fv = &spaces.fluid_v;
    let fp = &spaces.fluid_p;
    let pv = &spaces.poro_v;
    let pp = &spaces.poro_p;

    Ok(FormCatalog {
        m_f: assemble(fv, fv, Kernel::Mass { coeff: params.rho_f }, mesh, pool)?,
        a_f: assemble(fv, fv, Kernel::Elasticity { mu: params.mu_f, lambda: 0.0 }, mesh, pool)?,
        b_f: assemble(fp, fv, Kernel::Divergence { coeff: 1.0 }, mesh, pool)?,
        m_gt: assemble_interface(fv, fv, IfaceKernel::Mass { coeff: rm, comp: Some(0) })?,
        c_fp: assemble_interface(fv, pp, IfaceKernel::NormalCoupling { coeff: 1.0 })?,
        m_p: assemble(pv, pv, Kernel::Mass { coeff: params.rho_p }, mesh, pool)?,
        a_e: assemble(
            pv,
            pv,
            Kernel::Elasticity { mu: params.mu_p, lambda: params.lambda_p },
            mesh,
            pool,
        )?,
        a_p: assemble(pp, pp, Kernel::Stiffness { coeff: params.kappa }, mesh, pool)?,
        d_ep: assemble(pp, pv, Kernel::Divergence { coeff: params.alpha }, mesh, pool)?,
        e_ep: assemble_interface(pv, pp, IfaceKernel::NormalCoupling { coeff: params.alpha })?,
        a_m: assemble_interface(
            pv,
            pv,
            IfaceKernel::Membrane { c0: koiter.c0, c1: koiter.c1, c2: koiter.c2 },
        )?,
        a_me: assemble_interface(
            pv,
            pv,
            IfaceKernel::MembraneEnergy {
                mu_r: params.r_m * params.mu_m,
                g_r: params.r_m * g_m,
                radius,
            },
        )?,
        m_g: assemble_interface(pv, pv, IfaceKernel::Mass { coeff: rm, comp: None })?,
        m_beta: assemble(pv, pv, Kernel::Mass { coeff: params.beta }, mesh, pool)?,
        s_p: assemble(pp, pp, Kernel::Mass { coeff: params.s0 }, mesh, pool)?,
        m_g_ff: assemble_interface(fv, fv, IfaceKernel::Mass { coeff: rm, comp: None })?,
        m_g_fp: assemble_interface(fv, pv, IfaceKernel::Mass { coeff: rm, comp: None })?,
        b_in: boundary_component_load(fv, BoundaryTag::InletF, 0),
        b_ext: boundary_component_load(pv, BoundaryTag::Exterior, 1),
        koiter,
    })
}

/// Semi-implicit convection operator `rho_f ((v_adv - w) . grad) u . phi`,
/// reassembled each step from the previous velocity. `domain_velocity` is the
/// mesh-motion slot; `None` is the fixed-domain mode (w = 0).
pub fn convection_matrix(
    params: &PhysicalParams,
    mesh: &BilayerMesh,
    spaces: &Spaces,
    v_adv: &[f64],
    domain_velocity: Option<&[f64]>,
    pool: Option<&rayon::ThreadPool>,
) -> Result<SparseMatrix> {
    let fv = &spaces.fluid_v;
    if v_adv.len() != fv.ndofs() {
        return Err(Error::invalid(format!(
            "advecting field has {} DOFs, expected {}",
            v_adv.len(),
            fv.ndofs()
        )));
    }
    let effective: Vec<f64> = match domain_velocity {
        Some(w) => {
            if w.len() != v_adv.len() {
                return Err(Error::invalid("domain velocity size mismatch"));
            }
            v_adv.iter().zip(w).map(|(a, b)| a - b).collect()
        }
        None => v_adv.to_vec(),
    };
    assemble(
        fv,
        fv,
        Kernel::Convection { coeff: params.rho_f, field: &effective },
        mesh,
        pool,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_mesh;
    use proptest::prelude::*;

    #[test]
    fn koiter_benchmark_values() {
        let p = PhysicalParams::default();
        let k = koiter_coeffs(&p, 0.5).unwrap();
        assert!((k.c1 - 7.1333e4).abs() / 7.1333e4 < 1e-4, "c1 = {}", k.c1);
        assert!((k.c0 - 2.8533e5).abs() / 2.8533e5 < 1e-4, "c0 = {}", k.c0);
        assert!((k.c2 - 5.7067e4).abs() / 5.7067e4 < 1e-4, "c2 = {}", k.c2);
    }

    #[test]
    fn koiter_lambda_zero_kills_cross_coupling() {
        let p = PhysicalParams { lambda_m: 0.0, ..Default::default() };
        let k = koiter_coeffs(&p, 0.5).unwrap();
        assert_eq!(k.c2, 0.0);
        assert!(k.c0 > 0.0 && k.c1 > 0.0);
    }

    #[test]
    fn koiter_linear_in_thickness() {
        let p = PhysicalParams::default();
        let k1 = koiter_coeffs(&p, 0.5).unwrap();
        let p2 = PhysicalParams { r_m: 2.0 * p.r_m, ..p };
        let k2 = koiter_coeffs(&p2, 0.5).unwrap();
        assert!((k2.c0 - 2.0 * k1.c0).abs() < 1e-9 * k1.c0);
        assert!((k2.c1 - 2.0 * k1.c1).abs() < 1e-9 * k1.c1);
        assert!((k2.c2 - 2.0 * k1.c2).abs() < 1e-9 * k1.c2);
    }

    #[test]
    fn pulse_shape() {
        let p = PhysicalParams::default();
        assert_eq!(inlet_pressure(0.0, &p), 0.0);
        let peak = inlet_pressure(0.0015, &p);
        assert!((peak - 1.3334).abs() < 1e-12, "peak = {peak}");
        assert_eq!(inlet_pressure(0.004, &p), 0.0);
    }

    fn small_catalog() -> (BilayerMesh, Spaces, FormCatalog, PhysicalParams) {
        let mesh = build_mesh(6.0, 0.5, 0.1, 8, 3, 2).unwrap();
        let spaces = Spaces::build(&mesh);
        let params = PhysicalParams::default();
        let cat = form_catalog(&params, &mesh, &spaces, None).unwrap();
        (mesh, spaces, cat, params)
    }

    #[test]
    fn symmetric_forms_are_symmetric() {
        let (_, _, cat, _) = small_catalog();
        for (name, m) in [
            ("m_f", &cat.m_f),
            ("a_f", &cat.a_f),
            ("m_p", &cat.m_p),
            ("a_e", &cat.a_e),
            ("a_p", &cat.a_p),
            ("s_p", &cat.s_p),
            ("a_me", &cat.a_me),
            ("m_g", &cat.m_g),
        ] {
            let asym = m.asymmetry();
            assert!(asym <= 1e-12 * m.max_abs().max(1.0), "{name}: {asym}");
        }
    }

    #[test]
    fn membrane_form_is_asymmetric_but_energy_equivalent() {
        let (_, spaces, cat, _) = small_catalog();
        // The cross terms make a_m nonsymmetric as a matrix.
        assert!(cat.a_m.asymmetry() > 1e-6 * cat.a_m.max_abs());
        // On trace vectors vanishing at the membrane endpoints, the quadratic
        // form agrees with the symmetric strain-energy form.
        let pv = &spaces.poro_v;
        let iface = &pv.interface_nodes;
        let mut rng_state = 0x9e3779b97f4a7c15u64;
        let mut rand = || {
            rng_state = rng_state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (rng_state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        for _ in 0..20 {
            let mut eta = vec![0.0; pv.ndofs()];
            for (k, &node) in iface.iter().enumerate() {
                if k == 0 || k == iface.len() - 1 {
                    continue;
                }
                eta[pv.dof(node, 0)] = rand();
                eta[pv.dof(node, 1)] = rand();
            }
            let qa = cat.a_m.quadratic_form(&eta, &eta);
            let qe = cat.a_me.quadratic_form(&eta, &eta);
            assert!(
                (qa - qe).abs() <= 1e-10 * qe.abs().max(1.0),
                "a_m = {qa}, energy form = {qe}"
            );
        }
    }

    #[test]
    fn normal_coupling_on_constants_measures_interface() {
        let (_, spaces, cat, _) = small_catalog();
        let ones_p = vec![1.0; spaces.poro_p.ndofs()];
        let mut n_field = vec![0.0; spaces.fluid_v.ndofs()];
        for node in 0..spaces.fluid_v.n_nodes() {
            n_field[spaces.fluid_v.dof(node, 1)] = 1.0;
        }
        let val = cat.c_fp.quadratic_form(&n_field, &ones_p);
        assert!((val - 6.0).abs() < 1e-12);
    }

    #[test]
    fn forms_scale_linearly_in_coefficients() {
        let mesh = build_mesh(2.0, 0.5, 0.1, 4, 2, 1).unwrap();
        let spaces = Spaces::build(&mesh);
        let p1 = PhysicalParams::default();
        let p2 = PhysicalParams { mu_f: 2.0 * p1.mu_f, ..p1.clone() };
        let c1 = form_catalog(&p1, &mesh, &spaces, None).unwrap();
        let c2 = form_catalog(&p2, &mesh, &spaces, None).unwrap();
        for (a, b) in c1.a_f.values.iter().zip(&c2.a_f.values) {
            assert!((2.0 * a - b).abs() <= 1e-12 * a.abs().max(1e-300));
        }
    }

    #[test]
    fn convection_zero_field_gives_zero_matrix() {
        let (mesh, spaces, _, params) = small_catalog();
        let zero = vec![0.0; spaces.fluid_v.ndofs()];
        let d = convection_matrix(&params, &mesh, &spaces, &zero, None, None).unwrap();
        assert_eq!(d.max_abs(), 0.0);
    }

    #[test]
    fn sparsity_confined_to_interface_neighbours() {
        let (_, spaces, cat, _) = small_catalog();
        // c_fp rows touch only interface-adjacent fluid velocity DOFs.
        for r in 0..cat.c_fp.nrows {
            if cat.c_fp.row(r).any(|(_, v)| v != 0.0) {
                let node = r / spaces.fluid_v.ncomp;
                assert!(
                    spaces.fluid_v.interface_nodes.contains(&node),
                    "row {r} off the interface has entries"
                );
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        #[test]
        fn koiter_identities(
            mu in 1e3f64..1e8,
            lambda in 0.0f64..1e8,
            rm in 1e-4f64..0.2,
            radius in 0.05f64..5.0,
        ) {
            let p = PhysicalParams { mu_m: mu, lambda_m: lambda, r_m: rm, ..Default::default() };
            let k = koiter_coeffs(&p, radius).unwrap();
            let g = 2.0 * mu * lambda / (lambda + 2.0 * mu);
            prop_assert!((k.c0 - k.c1 / (radius * radius)).abs() <= 1e-12 * k.c0.abs());
            prop_assert!((k.c2 - rm / radius * g).abs() <= 1e-12 * k.c2.abs().max(1e-30));
            prop_assert!(k.c0 > 0.0 && k.c1 > 0.0 && k.c2 >= 0.0);
        }
    }
}
