//! Generic derivative-free minimizers used by the test oracles and the
//! quadrature fitter: Nelder–Mead for a rough solve, bounded Brent line
//! search for coordinate-wise polishing.

/// Nelder–Mead on an unconstrained vector. `scale` sets the initial simplex
/// edge per coordinate. Returns (argmin, min).
pub fn nelder_mead<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    x0: &[f64],
    scale: &[f64],
    max_iter: usize,
    ftol: f64,
) -> (Vec<f64>, f64) {
    let n = x0.len();
    let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);
    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    simplex.push(x0.to_vec());
    for i in 0..n {
        let mut v = x0.to_vec();
        v[i] += scale[i].max(1e-8);
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|v| f(v)).collect();

    for _ in 0..max_iter {
        let mut idx: Vec<usize> = (0..=n).collect();
        idx.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
        let (best, worst, second_worst) = (idx[0], idx[n], idx[n - 1]);
        if (values[worst] - values[best]).abs()
            <= ftol * (values[best].abs() + values[worst].abs()).max(1e-12)
        {
            break;
        }
        let mut centroid = vec![0.0; n];
        for &i in idx.iter().take(n) {
            for j in 0..n {
                centroid[j] += simplex[i][j] / n as f64;
            }
        }
        let reflect: Vec<f64> =
            (0..n).map(|j| centroid[j] + alpha * (centroid[j] - simplex[worst][j])).collect();
        let fr = f(&reflect);
        if fr < values[best] {
            let expand: Vec<f64> =
                (0..n).map(|j| centroid[j] + gamma * (reflect[j] - centroid[j])).collect();
            let fe = f(&expand);
            if fe < fr {
                simplex[worst] = expand;
                values[worst] = fe;
            } else {
                simplex[worst] = reflect;
                values[worst] = fr;
            }
        } else if fr < values[second_worst] {
            simplex[worst] = reflect;
            values[worst] = fr;
        } else {
            let contract: Vec<f64> =
                (0..n).map(|j| centroid[j] + rho * (simplex[worst][j] - centroid[j])).collect();
            let fc = f(&contract);
            if fc < values[worst] {
                simplex[worst] = contract;
                values[worst] = fc;
            } else {
                let best_point = simplex[best].clone();
                for i in 0..=n {
                    if i == best {
                        continue;
                    }
                    for j in 0..n {
                        simplex[i][j] = best_point[j] + sigma * (simplex[i][j] - best_point[j]);
                    }
                    values[i] = f(&simplex[i]);
                }
            }
        }
    }
    let mut best = 0;
    for i in 1..=n {
        if values[i] < values[best] {
            best = i;
        }
    }
    (simplex[best].clone(), values[best])
}

/// Bounded scalar minimization by Brent's method on [a, b].
pub fn brent_min<F: FnMut(f64) -> f64>(
    mut f: F,
    a: f64,
    b: f64,
    xtol: f64,
    max_iter: usize,
) -> (f64, f64) {
    let golden = 0.5 * (3.0 - 5.0_f64.sqrt());
    let (mut lo, mut hi) = (a.min(b), a.max(b));
    let mut x = lo + golden * (hi - lo);
    let mut w = x;
    let mut v = x;
    let mut fx = f(x);
    let mut fw = fx;
    let mut fv = fx;
    let mut d: f64 = 0.0;
    let mut e: f64 = 0.0;
    for _ in 0..max_iter {
        let mid = 0.5 * (lo + hi);
        let tol1 = xtol * x.abs() + 1e-15;
        let tol2 = 2.0 * tol1;
        if (x - mid).abs() <= tol2 - 0.5 * (hi - lo) {
            break;
        }
        let mut use_golden = true;
        if e.abs() > tol1 {
            // parabolic fit through (x, w, v)
            let r = (x - w) * (fx - fv);
            let q0 = (x - v) * (fx - fw);
            let mut p = (x - v) * q0 - (x - w) * r;
            let mut q = 2.0 * (q0 - r);
            if q > 0.0 {
                p = -p;
            }
            q = q.abs();
            let e_old = e;
            e = d;
            if p.abs() < (0.5 * q * e_old).abs() && p > q * (lo - x) && p < q * (hi - x) {
                d = p / q;
                let u = x + d;
                if (u - lo) < tol2 || (hi - u) < tol2 {
                    d = if mid > x { tol1 } else { -tol1 };
                }
                use_golden = false;
            }
        }
        if use_golden {
            e = if x < mid { hi - x } else { lo - x };
            d = golden * e;
        }
        let u = if d.abs() >= tol1 { x + d } else { x + if d > 0.0 { tol1 } else { -tol1 } };
        let fu = f(u);
        if fu <= fx {
            if u < x {
                hi = x;
            } else {
                lo = x;
            }
            v = w;
            fv = fw;
            w = x;
            fw = fx;
            x = u;
            fx = fu;
        } else {
            if u < x {
                lo = u;
            } else {
                hi = u;
            }
            if fu <= fw || w == x {
                v = w;
                fv = fw;
                w = u;
                fw = fu;
            } else if fu <= fv || v == x || v == w {
                v = u;
                fv = fu;
            }
        }
    }
    (x, fx)
}

/// Cyclic coordinate descent with bounded Brent on each coordinate,
/// evaluating the boundary explicitly so minima at a bound are found
/// exactly. Bounds are inclusive.
pub fn coordinate_polish<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    x0: &[f64],
    bounds: &[(f64, f64)],
    sweeps: usize,
    xtol: f64,
) -> (Vec<f64>, f64) {
    let mut x = x0.to_vec();
    let mut fx = f(&x);
    for _ in 0..sweeps {
        for i in 0..x.len() {
            let (lo, hi) = bounds[i];
            let mut probe = |xi: f64| {
                let mut p = x.clone();
                p[i] = xi;
                f(&p)
            };
            let (xi, fxi) = brent_min(&mut probe, lo, hi, xtol, 200);
            let f_lo = probe(lo);
            let (best_x, best_f) = if f_lo < fxi { (lo, f_lo) } else { (xi, fxi) };
            if best_f < fx {
                x[i] = best_x;
                fx = best_f;
            }
        }
    }
    (x, fx)
}
