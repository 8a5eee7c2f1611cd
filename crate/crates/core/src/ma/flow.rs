//! Fixed-step RK4 integration of closed-loop affine fields and bisection
//! refinement of face crossings.

use super::MaComponent;

/// Closed-loop affine dynamics `ẋ = A x + b` of one primitive.
#[derive(Debug, Clone)]
pub struct AffineFlow {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
}

impl AffineFlow {
    pub fn from_primitive(component: &MaComponent, m: usize) -> Self {
        let (a, b) = component.closed_loop_affine(m);
        Self { a, b }
    }

    pub fn deriv(&self, x: &[f64], out: &mut [f64]) {
        for i in 0..x.len() {
            out[i] = self.b[i] + self.a[i].iter().zip(x).map(|(c, v)| c * v).sum::<f64>();
        }
    }

    /// One classical RK4 step of size `dt`.
    pub fn rk4(&self, x: &[f64], dt: f64) -> Vec<f64> {
        let n = x.len();
        let mut k1 = vec![0.0; n];
        let mut k2 = vec![0.0; n];
        let mut k3 = vec![0.0; n];
        let mut k4 = vec![0.0; n];
        let mut tmp = vec![0.0; n];
        self.deriv(x, &mut k1);
        for i in 0..n {
            tmp[i] = x[i] + 0.5 * dt * k1[i];
        }
        self.deriv(&tmp, &mut k2);
        for i in 0..n {
            tmp[i] = x[i] + 0.5 * dt * k2[i];
        }
        self.deriv(&tmp, &mut k3);
        for i in 0..n {
            tmp[i] = x[i] + dt * k3[i];
        }
        self.deriv(&tmp, &mut k4);
        (0..n)
            .map(|i| x[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
            .collect()
    }
}

/// Time tolerance for crossing refinement.
pub const EVENT_TIME_TOL: f64 = 1e-9;

/// Earliest time `t ∈ (0, dt]` at which `f(x(t))` becomes non-negative,
/// given `f(x(0)) < 0`, refined by bisection on single RK4 steps from `x0`.
/// Returns the crossing time and state.
pub fn locate_crossing(
    flow: &AffineFlow,
    x0: &[f64],
    dt: f64,
    f: impl Fn(&[f64]) -> f64,
) -> Option<(f64, Vec<f64>)> {
    let x_end = flow.rk4(x0, dt);
    if f(&x_end) < 0.0 {
        return None;
    }
    let mut lo = 0.0;
    let mut hi = dt;
    let mut x_hi = x_end;
    while hi - lo > EVENT_TIME_TOL {
        let mid = 0.5 * (lo + hi);
        let x_mid = flow.rk4(x0, mid);
        if f(&x_mid) >= 0.0 {
            hi = mid;
            x_hi = x_mid;
        } else {
            lo = mid;
        }
    }
    Some((hi, x_hi))
}
