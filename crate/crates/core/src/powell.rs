//! Derivative-free minimization: Powell's conjugate-direction method with
//! Brent line searches, plus a bounded scalar Brent minimizer.

use alloc::vec;
use alloc::vec::Vec;

const GOLD: f64 = 1.618_033_988_749_895;
const CGOLD: f64 = 0.381_966_011_250_105_1;
const TINY: f64 = 1e-21;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowellOptions {
    pub max_sweeps: usize,
    /// Relative decrease per sweep below which the search stops.
    pub ftol: f64,
    /// Absolute floor on the decrease per sweep.
    pub abs_tol: f64,
    /// Relative tolerance of the line searches.
    pub line_tol: f64,
    /// Length of the initial coordinate directions.
    pub initial_step: f64,
}

impl Default for PowellOptions {
    fn default() -> Self {
        Self { max_sweeps: 200, ftol: 1e-12, abs_tol: 1e-15, line_tol: 1e-8, initial_step: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowellResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub sweeps: usize,
    pub evaluations: usize,
    pub converged: bool,
}

/// Minimizes `f` starting from `x0`. Returns the best point found even when
/// the sweep budget runs out, with `converged = false`.
pub fn powell<F: FnMut(&[f64]) -> f64>(mut f: F, x0: &[f64], opts: &PowellOptions) -> PowellResult {
    let n = x0.len();
    let mut evaluations = 0usize;
    let mut eval = |x: &[f64]| {
        evaluations += 1;
        f(x)
    };
    let mut dirs: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let mut d = vec![0.0; n];
            d[i] = opts.initial_step;
            d
        })
        .collect();
    let mut x = x0.to_vec();
    let mut fx = eval(&x);
    let mut sweeps = 0;
    let mut converged = false;
    while sweeps < opts.max_sweeps {
        sweeps += 1;
        let x_start = x.clone();
        let f_start = fx;
        let mut biggest = 0.0;
        let mut biggest_idx = 0;
        for (i, d) in dirs.iter().enumerate() {
            let before = fx;
            let (t, ft) = line_minimize(&mut eval, &x, d, fx, opts.line_tol);
            for (xi, di) in x.iter_mut().zip(d) {
                *xi += t * di;
            }
            fx = ft;
            if before - fx > biggest {
                biggest = before - fx;
                biggest_idx = i;
            }
        }
        if 2.0 * (f_start - fx) <= opts.ftol * (f_start.abs() + fx.abs()) + opts.abs_tol {
            converged = true;
            break;
        }
        let new_dir: Vec<f64> = x.iter().zip(&x_start).map(|(a, b)| a - b).collect();
        let extrapolated: Vec<f64> = x.iter().zip(&new_dir).map(|(a, d)| a + d).collect();
        let fe = eval(&extrapolated);
        if fe < f_start {
            let t = 2.0 * (f_start - 2.0 * fx + fe) * (f_start - fx - biggest).powi(2)
                - biggest * (f_start - fe).powi(2);
            if t < 0.0 {
                let (s, fs) = line_minimize(&mut eval, &x, &new_dir, fx, opts.line_tol);
                for (xi, di) in x.iter_mut().zip(&new_dir) {
                    *xi += s * di;
                }
                fx = fs;
                dirs[biggest_idx] = dirs[n - 1].clone();
                dirs[n - 1] = new_dir;
            }
        }
    }
    PowellResult { x, value: fx, sweeps, evaluations, converged }
}

/// Minimizes `t -> f(x + t d)`; returns `(t, f)` with `f <= f0`.
fn line_minimize<F: FnMut(&[f64]) -> f64>(
    f: &mut F,
    x: &[f64],
    d: &[f64],
    f0: f64,
    tol: f64,
) -> (f64, f64) {
    let mut buf = vec![0.0; x.len()];
    let mut g = |t: f64| {
        for ((b, xi), di) in buf.iter_mut().zip(x).zip(d) {
            *b = xi + t * di;
        }
        f(&buf)
    };
    let br = bracket(&mut g, 0.0, 1.0, f0);
    let (t, ft) = brent(&mut g, br, tol);
    if ft < f0 {
        (t, ft)
    } else {
        (0.0, f0)
    }
}

#[derive(Debug, Clone, Copy)]
struct Bracket {
    a: f64,
    b: f64,
    c: f64,
    fb: f64,
}

fn bracket<G: FnMut(f64) -> f64>(g: &mut G, a0: f64, b0: f64, fa0: f64) -> Bracket {
    let (mut a, mut b) = (a0, b0);
    let mut fa = fa0;
    let mut fb = g(b);
    if fb > fa {
        core::mem::swap(&mut a, &mut b);
        core::mem::swap(&mut fa, &mut fb);
    }
    let mut c = b + GOLD * (b - a);
    let mut fc = g(c);
    let mut guard = 0;
    while fb > fc && guard < 200 {
        guard += 1;
        let r = (b - a) * (fb - fc);
        let q = (b - c) * (fb - fa);
        let denom = 2.0 * (q - r).abs().max(TINY).copysign(q - r);
        let mut u = b - ((b - c) * q - (b - a) * r) / denom;
        let ulim = b + 100.0 * (c - b);
        let mut fu;
        if (b - u) * (u - c) > 0.0 {
            fu = g(u);
            if fu < fc {
                return order(Bracket { a: b, b: u, c, fb: fu });
            } else if fu > fb {
                return order(Bracket { a, b, c: u, fb });
            }
            u = c + GOLD * (c - b);
            fu = g(u);
        } else if (c - u) * (u - ulim) > 0.0 {
            fu = g(u);
            if fu < fc {
                b = c;
                c = u;
                u = c + GOLD * (c - b);
                fb = fc;
                fc = fu;
                fu = g(u);
            }
        } else if (u - ulim) * (ulim - c) >= 0.0 {
            u = ulim;
            fu = g(u);
        } else {
            u = c + GOLD * (c - b);
            fu = g(u);
        }
        a = b;
        b = c;
        c = u;
        fa = fb;
        fb = fc;
        fc = fu;
    }
    let _ = fa;
    order(Bracket { a, b, c, fb })
}

fn order(br: Bracket) -> Bracket {
    if br.a > br.c {
        Bracket { a: br.c, c: br.a, ..br }
    } else {
        br
    }
}

fn brent<G: FnMut(f64) -> f64>(g: &mut G, br: Bracket, tol: f64) -> (f64, f64) {
    let (mut a, mut b) = (br.a.min(br.c), br.a.max(br.c));
    let mut x = br.b;
    let (mut w, mut v) = (x, x);
    let mut fx = br.fb;
    let (mut fw, mut fv) = (fx, fx);
    let mut d: f64 = 0.0;
    let mut e: f64 = 0.0;
    for _ in 0..200 {
        let xm = 0.5 * (a + b);
        let tol1 = tol * x.abs() + 1e-12;
        let tol2 = 2.0 * tol1;
        if (x - xm).abs() <= tol2 - 0.5 * (b - a) {
            break;
        }
        if e.abs() > tol1 {
            let r = (x - w) * (fx - fv);
            let mut q = (x - v) * (fx - fw);
            let mut p = (x - v) * q - (x - w) * r;
            q = 2.0 * (q - r);
            if q > 0.0 {
                p = -p;
            }
            q = q.abs();
            let etemp = e;
            e = d;
            if p.abs() >= (0.5 * q * etemp).abs() || p <= q * (a - x) || p >= q * (b - x) {
                e = if x >= xm { a - x } else { b - x };
                d = CGOLD * e;
            } else {
                d = p / q;
                let u = x + d;
                if u - a < tol2 || b - u < tol2 {
                    d = tol1.copysign(xm - x);
                }
            }
        } else {
            e = if x >= xm { a - x } else { b - x };
            d = CGOLD * e;
        }
        let u = if d.abs() >= tol1 { x + d } else { x + tol1.copysign(d) };
        let fu = g(u);
        if fu <= fx {
            if u >= x {
                a = x;
            } else {
                b = x;
            }
            v = w;
            w = x;
            x = u;
            fv = fw;
            fw = fx;
            fx = fu;
        } else {
            if u < x {
                a = u;
            } else {
                b = u;
            }
            if fu <= fw || w == x {
                v = w;
                w = u;
                fv = fw;
                fw = fu;
            } else if fu <= fv || v == x || v == w {
                v = u;
                fv = fu;
            }
        }
    }
    (x, fx)
}

/// Minimizes a scalar function on `[lo, hi]` by golden-section search with
/// parabolic steps. Returns `(x, f(x))`.
pub fn minimize_bounded<G: FnMut(f64) -> f64>(mut g: G, lo: f64, hi: f64, xtol: f64) -> (f64, f64) {
    let (mut a, mut b) = (lo, hi);
    let mut x = a + CGOLD * (b - a);
    let (mut w, mut v) = (x, x);
    let mut fx = g(x);
    let (mut fw, mut fv) = (fx, fx);
    let mut d: f64 = 0.0;
    let mut e: f64 = 0.0;
    for _ in 0..500 {
        let xm = 0.5 * (a + b);
        let tol1 = 1.5e-8 * x.abs() + xtol / 3.0;
        let tol2 = 2.0 * tol1;
        if (x - xm).abs() <= tol2 - 0.5 * (b - a) {
            break;
        }
        let mut golden = true;
        if e.abs() > tol1 {
            let r = (x - w) * (fx - fv);
            let mut q = (x - v) * (fx - fw);
            let mut p = (x - v) * q - (x - w) * r;
            q = 2.0 * (q - r);
            if q > 0.0 {
                p = -p;
            }
            q = q.abs();
            if p.abs() < (0.5 * q * e).abs() && p > q * (a - x) && p < q * (b - x) {
                e = d;
                d = p / q;
                let u = x + d;
                if u - a < tol2 || b - u < tol2 {
                    d = tol1.copysign(xm - x);
                }
                golden = false;
            }
        }
        if golden {
            e = if x >= xm { a - x } else { b - x };
            d = CGOLD * e;
        }
        let u = if d.abs() >= tol1 { x + d } else { x + tol1.copysign(d) };
        let fu = g(u);
        if fu <= fx {
            if u >= x {
                a = x;
            } else {
                b = x;
            }
            v = w;
            w = x;
            x = u;
            fv = fw;
            fw = fx;
            fx = fu;
        } else {
            if u < x {
                a = u;
            } else {
                b = u;
            }
            if fu <= fw || w == x {
                v = w;
                w = u;
                fv = fw;
                fw = fu;
            } else if fu <= fv || v == x || v == w {
                v = u;
                fv = fu;
            }
        }
    }
    (x, fx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_bowl() {
        let r = powell(
            |x| (x[0] - 1.0).powi(2) + 10.0 * (x[1] + 2.0).powi(2) + (x[0] - x[1] - 3.0).powi(2),
            &[0.0, 0.0],
            &PowellOptions::default(),
        );
        assert!(r.converged);
        assert!(r.value < 1e-14, "{}", r.value);
        assert!((r.x[0] - 1.0).abs() < 1e-6 && (r.x[1] + 2.0).abs() < 1e-6);
    }

    #[test]
    fn rosenbrock() {
        let r = powell(
            |x| 100.0 * (x[1] - x[0] * x[0]).powi(2) + (1.0 - x[0]).powi(2),
            &[-1.2, 1.0],
            &PowellOptions { max_sweeps: 1000, ..Default::default() },
        );
        assert!((r.x[0] - 1.0).abs() < 1e-4 && (r.x[1] - 1.0).abs() < 1e-4, "{:?}", r.x);
    }

    #[test]
    fn budget_exhaustion_keeps_best_point() {
        let r = powell(
            |x| 100.0 * (x[1] - x[0] * x[0]).powi(2) + (1.0 - x[0]).powi(2),
            &[-1.2, 1.0],
            &PowellOptions { max_sweeps: 1, ..Default::default() },
        );
        assert!(!r.converged);
        assert!(r.value < 24.2);
    }

    #[test]
    fn bounded_scalar() {
        let (x, fx) = minimize_bounded(|x| (x - 0.3).powi(2) + 1.0, 0.0, 1.0, 1e-10);
        assert!((x - 0.3).abs() < 1e-8 && (fx - 1.0).abs() < 1e-15);
        let (x, _) = minimize_bounded(|x| x, 0.0, 1.0, 1e-10);
        assert!(x < 1e-8);
    }
}
