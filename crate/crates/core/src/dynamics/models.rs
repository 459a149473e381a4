use std::f64::consts::PI;

use super::{wrap, Tendency};

/// `(x_{n+1} - x_{n-2}) x_{n-1} - x_n` on a periodic ring, evaluated in
/// expanded form in the same term order as the surrogate model.
#[inline]
pub(crate) fn l96_core(x: &[f64], out: &mut [f64]) {
    let n = x.len();
    for i in 0..n {
        let ip1 = if i + 1 == n { 0 } else { i + 1 };
        let im1 = wrap(i as isize - 1, n);
        let im2 = wrap(i as isize - 2, n);
        out[i] = (-x[i] - x[im2] * x[im1]) + x[im1] * x[ip1];
    }
}

/// Adds `Γ_{v+1,h} - Γ_{v,h}` with `Γ_{v,h} = x_{v,h} - x_{v-1,h}` for `2 ≤ v ≤ N_v`
/// (one-based) and zero otherwise. Layer-major layout.
#[inline]
pub(crate) fn add_vertical_coupling(x: &[f64], n_v: usize, n_h: usize, out: &mut [f64]) {
    for v in 0..n_v {
        for h in 0..n_h {
            let i = v * n_h + h;
            let gamma_here = if v >= 1 { x[i] - x[i - n_h] } else { 0.0 };
            let gamma_above = if v + 1 < n_v { x[i + n_h] - x[i] } else { 0.0 };
            out[i] += gamma_above - gamma_here;
        }
    }
}

/// Lorenz-96 with a site-dependent forcing.
#[derive(Debug, Clone, PartialEq)]
pub struct L96iModel {
    pub forcing: Vec<f64>,
}

impl L96iModel {
    /// `F_n = 8 + cos(2πn/N_x)` with one-based `n`.
    pub fn new(n_x: usize) -> Self {
        let forcing = (1..=n_x)
            .map(|n| 8.0 + (2.0 * PI * n as f64 / n_x as f64).cos())
            .collect();
        Self { forcing }
    }

    /// Standard homogeneous L96.
    pub fn homogeneous(n_x: usize, forcing: f64) -> Self {
        Self {
            forcing: vec![forcing; n_x],
        }
    }

    pub fn n_x(&self) -> usize {
        self.forcing.len()
    }
}

impl Default for L96iModel {
    fn default() -> Self {
        Self::new(40)
    }
}

impl Tendency for L96iModel {
    fn dim(&self) -> usize {
        self.forcing.len()
    }

    fn tendency(&self, x: &[f64], out: &mut [f64]) {
        l96_core(x, out);
        for (o, f) in out.iter_mut().zip(&self.forcing) {
            *o += f;
        }
    }
}

/// Vertical stack of coupled L96 layers, stored layer-major:
/// `(v, h) -> v * n_h + h` (zero-based).
#[derive(Debug, Clone, PartialEq)]
pub struct ML96Model {
    pub n_v: usize,
    pub n_h: usize,
    pub forcing: Vec<f64>,
}

impl ML96Model {
    /// Layer forcing decreasing linearly from 8 (bottom) to 4 (top).
    pub fn new(n_v: usize, n_h: usize) -> Self {
        let forcing = (0..n_v)
            .flat_map(|v| std::iter::repeat_n(Self::layer_forcing(v, n_v), n_h))
            .collect();
        Self { n_v, n_h, forcing }
    }

    pub fn with_forcing(n_v: usize, n_h: usize, forcing: Vec<f64>) -> Self {
        assert_eq!(forcing.len(), n_v * n_h, "forcing must cover every variable");
        Self { n_v, n_h, forcing }
    }

    /// Default forcing of the zero-based layer `v`.
    pub fn layer_forcing(v: usize, n_v: usize) -> f64 {
        if n_v <= 1 {
            8.0
        } else {
            8.0 - 4.0 * v as f64 / (n_v - 1) as f64
        }
    }

    pub fn n_x(&self) -> usize {
        self.n_v * self.n_h
    }

    pub fn index(&self, v: usize, h: usize) -> usize {
        v * self.n_h + h
    }
}

impl Default for ML96Model {
    fn default() -> Self {
        Self::new(32, 40)
    }
}

impl Tendency for ML96Model {
    fn dim(&self) -> usize {
        self.n_v * self.n_h
    }

    fn tendency(&self, x: &[f64], out: &mut [f64]) {
        let n_h = self.n_h;
        for v in 0..self.n_v {
            let r = v * n_h..(v + 1) * n_h;
            l96_core(&x[r.clone()], &mut out[r]);
        }
        for (o, f) in out.iter_mut().zip(&self.forcing) {
            *o += f;
        }
        add_vertical_coupling(x, self.n_v, n_h, out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Index-by-index evaluation of the cyclic formula, one-based as written.
    fn l96i_reference(x: &[f64], f: &[f64]) -> Vec<f64> {
        let n = x.len() as isize;
        let at = |k: isize| x[(((k - 1) % n + n) % n) as usize];
        (1..=n)
            .map(|k| (at(k + 1) - at(k - 2)) * at(k - 1) - at(k) + f[(k - 1) as usize])
            .collect()
    }

    fn ml96_reference(x: &[f64], m: &ML96Model) -> Vec<f64> {
        let (nv, nh) = (m.n_v as isize, m.n_h as isize);
        let at = |v: isize, h: isize| x[((v - 1) * nh + ((h - 1) % nh + nh) % nh) as usize];
        let gamma = |v: isize, h: isize| {
            if (2..=nv).contains(&v) {
                at(v, h) - at(v - 1, h)
            } else {
                0.0
            }
        };
        let mut out = Vec::new();
        for v in 1..=nv {
            for h in 1..=nh {
                let f = m.forcing[((v - 1) * nh + h - 1) as usize];
                out.push(
                    (at(v, h + 1) - at(v, h - 2)) * at(v, h - 1) - at(v, h)
                        + f
                        + gamma(v + 1, h)
                        - gamma(v, h),
                );
            }
        }
        out
    }

    #[test]
    fn l96i_uniform_states() {
        let m = L96iModel::new(40);
        let t = m.tendency_vec(&[8.0; 40]);
        for (i, v) in t.iter().enumerate() {
            let n = (i + 1) as f64;
            assert!((v - (2.0 * PI * n / 40.0).cos()).abs() < 1e-14);
        }
        let t0 = m.tendency_vec(&[0.0; 40]);
        assert_eq!(t0, m.forcing);
    }

    #[test]
    fn l96i_matches_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = L96iModel::new(40);
        for _ in 0..20 {
            let x: Vec<f64> = (0..40).map(|_| rng.random_range(-10.0..10.0)).collect();
            let a = m.tendency_vec(&x);
            let b = l96i_reference(&x, &m.forcing);
            for (u, v) in a.iter().zip(&b) {
                assert!((u - v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn ml96_uniform_layers() {
        let m = ML96Model::new(5, 12);
        let c: Vec<f64> = (0..5).map(|v| 1.0 + 0.7 * v as f64).collect();
        let x: Vec<f64> = (0..5).flat_map(|v| vec![c[v]; 12]).collect();
        let t = m.tendency_vec(&x);
        let gamma = |v: usize| if v >= 1 && v < 5 { c[v] - c[v - 1] } else { 0.0 };
        for v in 0..5 {
            for h in 0..12 {
                let expect = -c[v] + m.forcing[v * 12 + h] + gamma(v + 1) - gamma(v);
                assert!((t[v * 12 + h] - expect).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn ml96_single_layer_is_l96() {
        let m = ML96Model::with_forcing(1, 40, L96iModel::new(40).forcing);
        let l = L96iModel::new(40);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x: Vec<f64> = (0..40).map(|_| rng.random_range(-5.0..10.0)).collect();
        assert_eq!(m.tendency_vec(&x), l.tendency_vec(&x));
    }

    #[test]
    fn ml96_matches_reference() {
        let m = ML96Model::new(6, 9);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x: Vec<f64> = (0..54).map(|_| rng.random_range(-5.0..10.0)).collect();
        let a = m.tendency_vec(&x);
        let b = ml96_reference(&x, &m);
        for (u, v) in a.iter().zip(&b) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn default_ml96_forcing_profile() {
        let m = ML96Model::default();
        assert_eq!(m.forcing[0], 8.0);
        assert!((m.forcing[31 * 40] - 4.0).abs() < 1e-14);
    }

    #[test]
    fn translation_equivariance() {
        let m = L96iModel::new(20);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x: Vec<f64> = (0..20).map(|_| rng.random_range(-5.0..10.0)).collect();
        let shift = 7;
        let rot = |v: &[f64]| -> Vec<f64> { (0..20).map(|i| v[(i + shift) % 20]).collect() };
        let rotated = L96iModel {
            forcing: rot(&m.forcing),
        };
        let a = rot(&m.tendency_vec(&x));
        let b = rotated.tendency_vec(&rot(&x));
        for (u, v) in a.iter().zip(&b) {
            assert!((u - v).abs() < 1e-12);
        }
    }
}
