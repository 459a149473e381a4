//! Data-driven surrogate: linear and bilinear monomials on a local stencil plus
//! a forcing term, optionally stacked in coupled layers.
//!
//! Monomial coefficients are stored flat, linear ones first:
//!
//! * `v_{L+m+1}` multiplying `x_{n+m}` for `m = -L..=L`;
//! * `M_{l+1, L+m+1}` multiplying `x_{n+m} x_{n+m+l}` for `l = 0..=L`,
//!   `m = -L..=L-l` (outer loop over `l`).

use super::models::{add_vertical_coupling, L96iModel, ML96Model};
use super::Tendency;

#[derive(Debug, Clone, PartialEq)]
pub enum Forcing {
    /// One coefficient per grid point of a single ring.
    Local(Vec<f64>),
    /// `F_{v,h} = F_v(v) F_h(h)` on a layer stack; `vertical` holds
    /// `F_v(2..=N_v)` since `F_v(1) ≡ 1`.
    Separable {
        vertical: Vec<f64>,
        horizontal: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateParams {
    pub stencil: usize,
    pub monomials: Vec<f64>,
    pub forcing: Forcing,
}

impl SurrogateParams {
    /// Number of active monomial coefficients, `(3/2)(L+1)(L+2) - 1`.
    pub fn monomial_count(stencil: usize) -> usize {
        3 * (stencil + 1) * (stencil + 2) / 2 - 1
    }

    /// `(l, m)` pairs of the quadratic monomials in storage order.
    pub fn quadratic_terms(stencil: usize) -> Vec<(usize, isize)> {
        let l_max = stencil as isize;
        (0..=l_max)
            .flat_map(|l| (-l_max..=l_max - l).map(move |m| (l as usize, m)))
            .collect()
    }

    /// Coefficients reproducing `x_{n-1} x_{n+1} - x_{n-2} x_{n-1} - x_n`.
    pub fn identifying_monomials(stencil: usize) -> Vec<f64> {
        assert!(stencil >= 2, "the L96 advection needs a stencil of at least 2");
        let mut a = vec![0.0; Self::monomial_count(stencil)];
        a[stencil] = -1.0;
        let offset = 2 * stencil + 1;
        for (k, (deg, m)) in Self::quadratic_terms(stencil).into_iter().enumerate() {
            match (deg, m) {
                (1, -2) => a[offset + k] = -1.0,
                (2, -1) => a[offset + k] = 1.0,
                _ => {}
            }
        }
        a
    }

    /// Parameters under which the surrogate is exactly the L96i model.
    pub fn for_l96i(model: &L96iModel, stencil: usize) -> Self {
        Self {
            stencil,
            monomials: Self::identifying_monomials(stencil),
            forcing: Forcing::Local(model.forcing.clone()),
        }
    }

    /// Parameters under which the surrogate is exactly the mL96 model. The
    /// forcing must factor as `F_v(v) F_h(h)`; it is normalised so that
    /// `F_v(1) = 1`.
    pub fn for_ml96(model: &ML96Model, stencil: usize) -> Self {
        let horizontal: Vec<f64> = model.forcing[..model.n_h].to_vec();
        let vertical = (1..model.n_v)
            .map(|v| model.forcing[v * model.n_h] / horizontal[0])
            .collect();
        Self {
            stencil,
            monomials: Self::identifying_monomials(stencil),
            forcing: Forcing::Separable {
                vertical,
                horizontal,
            },
        }
    }

    pub fn zeros(stencil: usize, forcing: Forcing) -> Self {
        let forcing = match forcing {
            Forcing::Local(f) => Forcing::Local(vec![0.0; f.len()]),
            Forcing::Separable {
                vertical,
                horizontal,
            } => Forcing::Separable {
                vertical: vec![0.0; vertical.len()],
                horizontal: vec![0.0; horizontal.len()],
            },
        };
        Self {
            stencil,
            monomials: vec![0.0; Self::monomial_count(stencil)],
            forcing,
        }
    }

    pub fn linear(&self) -> &[f64] {
        &self.monomials[..2 * self.stencil + 1]
    }

    /// Coefficient `M_{l+1, L+m+1}`; zero for inactive entries.
    pub fn quadratic(&self, l: usize, m: isize) -> f64 {
        Self::quadratic_terms(self.stencil)
            .iter()
            .position(|&t| t == (l, m))
            .map(|k| self.monomials[2 * self.stencil + 1 + k])
            .unwrap_or(0.0)
    }

    /// `(N_v, N_h)`; a single ring has `N_v = 1`.
    pub fn layers(&self) -> (usize, usize) {
        match &self.forcing {
            Forcing::Local(f) => (1, f.len()),
            Forcing::Separable {
                vertical,
                horizontal,
            } => (vertical.len() + 1, horizontal.len()),
        }
    }

    pub fn n_x(&self) -> usize {
        let (v, h) = self.layers();
        v * h
    }

    /// Forcing on every grid point, layer-major.
    pub fn forcing_field(&self) -> Vec<f64> {
        match &self.forcing {
            Forcing::Local(f) => f.clone(),
            Forcing::Separable {
                vertical,
                horizontal,
            } => std::iter::once(1.0)
                .chain(vertical.iter().copied())
                .flat_map(|fv| horizontal.iter().map(move |fh| fv * fh))
                .collect(),
        }
    }

    fn ring_tendency(&self, x: &[f64], pad: &mut Vec<f64>, out: &mut [f64]) {
        let n = x.len();
        let l = self.stencil;
        pad.clear();
        pad.extend_from_slice(&x[n - l..]);
        pad.extend_from_slice(x);
        pad.extend_from_slice(&x[..l]);
        let lin = self.linear();
        let quad = &self.monomials[2 * l + 1..];
        let terms = Self::quadratic_terms(l);
        for (i, o) in out.iter_mut().enumerate() {
            let c = i + l;
            // Term order is fixed so that the identifying coefficients reproduce
            // the truth models bit for bit.
            let mut s = 0.0;
            for (k, &coef) in lin.iter().enumerate() {
                s += coef * pad[c + k - l];
            }
            for (&coef, &(deg, m)) in quad.iter().zip(&terms) {
                let j = (c as isize + m) as usize;
                s += coef * (pad[j] * pad[j + deg]);
            }
            *o = s;
        }
    }
}

impl Tendency for SurrogateParams {
    fn dim(&self) -> usize {
        self.n_x()
    }

    fn tendency(&self, x: &[f64], out: &mut [f64]) {
        let (n_v, n_h) = self.layers();
        let mut pad = Vec::with_capacity(n_h + 2 * self.stencil);
        for v in 0..n_v {
            let r = v * n_h..(v + 1) * n_h;
            self.ring_tendency(&x[r.clone()], &mut pad, &mut out[r]);
        }
        match &self.forcing {
            Forcing::Local(f) => {
                for (o, fi) in out.iter_mut().zip(f) {
                    *o += fi;
                }
            }
            Forcing::Separable {
                vertical,
                horizontal,
            } => {
                for v in 0..n_v {
                    let fv = if v == 0 { 1.0 } else { vertical[v - 1] };
                    for (h, fh) in horizontal.iter().enumerate() {
                        out[v * n_h + h] += fv * fh;
                    }
                }
                add_vertical_coupling(x, n_v, n_h, out);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{integrate, Rk4};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn monomial_count_matches_formula() {
        assert_eq!(SurrogateParams::monomial_count(2), 17);
        for l in 0..6 {
            assert_eq!(
                SurrogateParams::monomial_count(l),
                2 * l + 1 + SurrogateParams::quadratic_terms(l).len()
            );
        }
    }

    #[test]
    fn identifying_values_are_ternary() {
        let a = SurrogateParams::identifying_monomials(2);
        assert!(a.iter().all(|v| [-1.0, 0.0, 1.0].contains(v)));
        assert_eq!(a.iter().filter(|v| **v != 0.0).count(), 3);
        let p = SurrogateParams::for_l96i(&L96iModel::new(40), 2);
        assert_eq!(p.linear(), &[0.0, 0.0, -1.0, 0.0, 0.0]);
        assert_eq!(p.quadratic(1, -2), -1.0);
        assert_eq!(p.quadratic(2, -1), 1.0);
        assert_eq!(p.quadratic(2, 1), 0.0);
        assert_eq!(p.monomials.len() + 40, 57);
    }

    #[test]
    fn identifying_params_reproduce_l96i() {
        let model = L96iModel::new(40);
        let params = SurrogateParams::for_l96i(&model, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut worst: f64 = 0.0;
        for _ in 0..1000 {
            let x: Vec<f64> = (0..40).map(|_| rng.random_range(-10.0..15.0)).collect();
            let a = params.tendency_vec(&x);
            let b = model.tendency_vec(&x);
            for (u, v) in a.iter().zip(&b) {
                worst = worst.max((u - v).abs());
            }
        }
        assert!(worst <= 1e-12, "max diff {worst}");
    }

    #[test]
    fn identifying_params_reproduce_ml96() {
        let model = ML96Model::new(8, 20);
        let params = SurrogateParams::for_ml96(&model, 2);
        assert_eq!(params.forcing_field(), model.forcing);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..200 {
            let x: Vec<f64> = (0..160).map(|_| rng.random_range(-10.0..15.0)).collect();
            let a = params.tendency_vec(&x);
            let b = model.tendency_vec(&x);
            for (u, v) in a.iter().zip(&b) {
                assert!((u - v).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn zero_params_give_zero_tendency() {
        let p = SurrogateParams::zeros(2, Forcing::Local(vec![1.0; 12]));
        let x: Vec<f64> = (0..12).map(|i| i as f64 - 3.0).collect();
        assert!(p.tendency_vec(&x).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn trajectories_match_truth_model() {
        let model = L96iModel::new(40);
        let params = SurrogateParams::for_l96i(&model, 2);
        let rk = Rk4::new(0.05);
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let mut x: Vec<f64> = (0..40).map(|_| 8.0 + rng.random_range(-1.0..1.0)).collect();
        integrate(&model, &rk, &mut x, 500).unwrap();
        let mut y = x.clone();
        integrate(&model, &rk, &mut x, 200).unwrap();
        integrate(&params, &rk, &mut y, 200).unwrap();
        let diff = x.iter().zip(&y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(diff <= 1e-10);
    }
}
