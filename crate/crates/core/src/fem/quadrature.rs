//! Quadrature rules.
//!
//! Volume integrals use a 12-point degree-6 rule on the reference triangle,
//! exact for every assembled product of the chosen element degrees including
//! the degree-5 convection integrand. Interface integrals use 4-point
//! Gauss-Legendre (degree 7).

/// Barycentric point (l1, l2, l3) with weight scaled so weights sum to 1;
/// multiply by the triangle area when integrating.
pub struct TriPoint {
    pub l: [f64; 3],
    pub w: f64,
}

const A1: f64 = 0.873_821_971_016_996;
const B1: f64 = 0.063_089_014_491_502;
const W1: f64 = 0.050_844_906_370_207;
const A2: f64 = 0.501_426_509_658_179;
const B2: f64 = 0.249_286_745_170_910;
const W2: f64 = 0.116_786_275_726_379;
const A3: f64 = 0.636_502_499_121_399;
const B3: f64 = 0.310_352_451_033_785;
const C3: f64 = 0.053_145_049_844_816;
const W3: f64 = 0.082_851_075_618_374;

/// Dunavant degree-6 rule, 12 points.
pub const TRI_DEG6: [TriPoint; 12] = [
    TriPoint { l: [A1, B1, B1], w: W1 },
    TriPoint { l: [B1, A1, B1], w: W1 },
    TriPoint { l: [B1, B1, A1], w: W1 },
    TriPoint { l: [A2, B2, B2], w: W2 },
    TriPoint { l: [B2, A2, B2], w: W2 },
    TriPoint { l: [B2, B2, A2], w: W2 },
    TriPoint { l: [A3, B3, C3], w: W3 },
    TriPoint { l: [A3, C3, B3], w: W3 },
    TriPoint { l: [B3, A3, C3], w: W3 },
    TriPoint { l: [B3, C3, A3], w: W3 },
    TriPoint { l: [C3, A3, B3], w: W3 },
    TriPoint { l: [C3, B3, A3], w: W3 },
];

/// 4-point Gauss-Legendre on [0,1]: (position, weight), weights sum to 1.
pub const EDGE_GAUSS4: [(f64, f64); 4] = [
    (0.5 - 0.339_981_043_584_856_26 / 2.0, 0.326_072_577_431_273_05),
    (0.5 + 0.339_981_043_584_856_26 / 2.0, 0.326_072_577_431_273_05),
    (0.5 - 0.861_136_311_594_052_6 / 2.0, 0.173_927_422_568_726_94),
    (0.5 + 0.861_136_311_594_052_6 / 2.0, 0.173_927_422_568_726_94),
];

#[cfg(test)]
mod tests {
    use super::*;

    fn tri_integrate(f: impl Fn(f64, f64) -> f64) -> f64 {
        // Reference triangle (0,0)-(1,0)-(0,1), area 1/2.
        TRI_DEG6
            .iter()
            .map(|p| 0.5 * p.w * f(p.l[1], p.l[2]))
            .sum()
    }

    #[test]
    fn triangle_rule_exact_to_degree_6() {
        // Monomial integrals over the reference triangle:
        // int x^a y^b = a! b! / (a+b+2)!.
        let fact = |n: u32| (1..=n).map(|k| k as f64).product::<f64>().max(1.0);
        for a in 0..=6u32 {
            for b in 0..=(6 - a) {
                let exact = fact(a) * fact(b) / fact(a + b + 2);
                let got = tri_integrate(|x, y| x.powi(a as i32) * y.powi(b as i32));
                assert!(
                    (got - exact).abs() < 1e-14,
                    "x^{a} y^{b}: got {got}, want {exact}"
                );
            }
        }
    }

    #[test]
    fn edge_rule_exact_to_degree_7() {
        for d in 0..=7u32 {
            let exact = 1.0 / (d as f64 + 1.0);
            let got: f64 = EDGE_GAUSS4
                .iter()
                .map(|&(s, w)| w * s.powi(d as i32))
                .sum();
            assert!((got - exact).abs() < 1e-14, "s^{d}: got {got}, want {exact}");
        }
    }
}
