//! Oracles shared by several test targets.
#![allow(dead_code)]

use lightsbb::gmm::GmmPotential;

/// Direct evaluation of `log h_t(y)` for a diagonal mixture, one coordinate at
/// a time: each component factorises into 1D Gaussian integrals
/// `∫ N(x | y, ετ) exp(x²/(2ε)) N(x | r, εs) dx`, done here by completing the
/// square on the exponent `p x² − 2 q x + const` directly.
pub fn log_h_oracle(logits: &[f64], r: &[f64], log_s: &[f64], eps: f64, horizon: f64, t: f64, y: &[f64]) -> f64 {
    let d = y.len();
    let tau = horizon - t;
    let lmax = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lz = lmax + logits.iter().map(|l| (l - lmax).exp()).sum::<f64>().ln();
    let comps: Vec<f64> = (0..logits.len())
        .map(|j| {
            let mut acc = logits[j] - lz;
            for k in 0..d {
                let s = log_s[j * d + k].exp();
                let rr = r[j * d + k];
                // exponent: −(x−y)²/(2ετ) + x²/(2ε) − (x−r)²/(2εs)
                let p = 1.0 / (eps * tau) - 1.0 / eps + 1.0 / (eps * s);
                let q = y[k] / (eps * tau) + rr / (eps * s);
                let c0 = -y[k] * y[k] / (2.0 * eps * tau) - rr * rr / (2.0 * eps * s);
                // ∫ exp(−p x²/2 + q x + c0) dx = sqrt(2π/p) exp(q²/(2p) + c0)
                acc += 0.5 * (2.0 * std::f64::consts::PI / p).ln() + q * q / (2.0 * p) + c0
                    - 0.5 * (2.0 * std::f64::consts::PI * eps * tau).ln()
                    - 0.5 * (2.0 * std::f64::consts::PI * eps * s).ln();
            }
            acc
        })
        .collect();
    let m = comps.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + comps.iter().map(|c| (c - m).exp()).sum::<f64>().ln()
}

/// Adaptive Simpson quadrature.
pub fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    fn rec<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
            return left + right + (left + right - whole) / 15.0;
        }
        rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
    }
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    rec(f, a, b, fa, fm, fb, whole, tol, 50)
}

/// Composite trapezoid rule with `n` intervals. For smooth integrands that
/// decay well inside `[a, b]` it converges faster than any power of the step.
pub fn trapezoid<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let inner: f64 = (1..n).map(|i| f(a + i as f64 * h)).sum();
    h * (0.5 * (f(a) + f(b)) + inner)
}

pub fn coupling_density_oracle(p: &GmmPotential, x0: f64) -> impl Fn(f64) -> f64 + '_ {
    let eps = p.epsilon();
    let alpha = p.alpha();
    let phi = move |x: f64| {
        (0..p.components())
            .map(|j| {
                let v = eps * p.log_diag_sigma()[j].exp();
                let z = x - p.locations()[j];
                alpha[j] * (-0.5 * z * z / v).exp() / (2.0 * std::f64::consts::PI * v).sqrt()
            })
            .sum::<f64>()
    };
    let unnorm = move |x: f64| (x0 * x / eps).exp() * phi(x);
    let z = trapezoid(&unnorm, -30.0, 30.0, 60_000);
    move |x: f64| unnorm(x) / z
}
