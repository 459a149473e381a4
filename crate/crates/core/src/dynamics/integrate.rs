use super::Tendency;
use crate::error::{Error, Result};

/// Classical fourth-order Runge–Kutta with a fixed step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rk4 {
    pub dt: f64,
}

impl Default for Rk4 {
    fn default() -> Self {
        Self { dt: 0.05 }
    }
}

/// Scratch buffers reused across steps.
#[derive(Debug, Clone, Default)]
pub struct Rk4Work {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Rk4Work {
    fn resize(&mut self, n: usize) {
        for v in [
            &mut self.k1,
            &mut self.k2,
            &mut self.k3,
            &mut self.k4,
            &mut self.tmp,
        ] {
            v.resize(n, 0.0);
        }
    }
}

impl Rk4 {
    pub fn new(dt: f64) -> Self {
        assert!(dt > 0.0 && dt.is_finite(), "time step must be positive");
        Self { dt }
    }

    /// One step in place. Does not check for finiteness.
    pub fn step_with<T: Tendency + ?Sized>(&self, model: &T, x: &mut [f64], w: &mut Rk4Work) {
        let n = x.len();
        w.resize(n);
        let h = self.dt;
        model.tendency(x, &mut w.k1);
        for i in 0..n {
            w.tmp[i] = x[i] + 0.5 * h * w.k1[i];
        }
        model.tendency(&w.tmp, &mut w.k2);
        for i in 0..n {
            w.tmp[i] = x[i] + 0.5 * h * w.k2[i];
        }
        model.tendency(&w.tmp, &mut w.k3);
        for i in 0..n {
            w.tmp[i] = x[i] + h * w.k3[i];
        }
        model.tendency(&w.tmp, &mut w.k4);
        for i in 0..n {
            x[i] += h / 6.0 * (w.k1[i] + 2.0 * w.k2[i] + 2.0 * w.k3[i] + w.k4[i]);
        }
    }

    pub fn step<T: Tendency + ?Sized>(&self, model: &T, x: &mut [f64]) -> Result<()> {
        let mut w = Rk4Work::default();
        self.step_with(model, x, &mut w);
        check_finite(x)
    }
}

fn check_finite(x: &[f64]) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite)
    }
}

/// Advances `x` by `steps` RK4 steps, failing as soon as the state stops being finite.
pub fn integrate<T: Tendency + ?Sized>(
    model: &T,
    rk: &Rk4,
    x: &mut [f64],
    steps: usize,
) -> Result<()> {
    if x.len() != model.dim() {
        return Err(Error::Dimension(format!(
            "state has length {}, model expects {}",
            x.len(),
            model.dim()
        )));
    }
    let mut w = Rk4Work::default();
    for _ in 0..steps {
        rk.step_with(model, x, &mut w);
        check_finite(x)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{FnTendency, L96iModel};

    #[test]
    fn zero_tendency_keeps_state() {
        let m = FnTendency::new(3, |_: &[f64], o: &mut [f64]| o.fill(0.0));
        let mut x = vec![1.0, -2.0, 3.5];
        integrate(&m, &Rk4::new(0.05), &mut x, 10).unwrap();
        assert_eq!(x, vec![1.0, -2.0, 3.5]);
    }

    #[test]
    fn linear_decay_matches_taylor_polynomial() {
        let m = FnTendency::new(1, |x: &[f64], o: &mut [f64]| o[0] = -x[0]);
        let mut x = vec![1.0];
        Rk4::new(0.05).step(&m, &mut x).unwrap();
        let h: f64 = 0.05;
        let expect = 1.0 - h + h * h / 2.0 - h.powi(3) / 6.0 + h.powi(4) / 24.0;
        assert!((x[0] - expect).abs() < 1e-15);
        assert!((x[0] - 0.951_229_427_083_333).abs() < 1e-14);
        // Local truncation error against the exact flow is O(h^5).
        assert!((x[0] - (-h).exp()).abs() < 5e-9);
    }

    #[test]
    fn nan_is_reported() {
        let m = FnTendency::new(1, |x: &[f64], o: &mut [f64]| o[0] = x[0] * x[0]);
        let mut x = vec![1e200];
        assert!(matches!(
            integrate(&m, &Rk4::new(0.05), &mut x, 5),
            Err(Error::NonFinite)
        ));
    }

    #[test]
    fn fourth_order_convergence_on_l96i() {
        let model = L96iModel::new(40);
        let mut x0: Vec<f64> = (0..40).map(|i| 8.0 + ((i * 7) % 5) as f64 * 0.3).collect();
        integrate(&model, &Rk4::new(0.05), &mut x0, 200).unwrap();
        let run = |dt: f64| {
            let mut x = x0.clone();
            let steps = (1.0 / dt).round() as usize;
            integrate(&model, &Rk4::new(dt), &mut x, steps).unwrap();
            x
        };
        let reference = run(0.05 / 64.0);
        let err = |dt: f64| {
            run(dt)
                .iter()
                .zip(&reference)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max)
        };
        let e = [err(0.05), err(0.025), err(0.0125)];
        for k in 0..2 {
            let order = (e[k] / e[k + 1]).log2();
            assert!(order >= 3.8, "observed order {order}");
        }
    }
}
