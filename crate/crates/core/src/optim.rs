//! Box-constrained Nelder–Mead minimizer.

#[derive(Debug, Clone)]
pub(crate) struct Minimum {
    pub point: Vec<f64>,
    pub value: f64,
}

/// Minimizes `f` starting from `start`; points are clamped into `bounds`
/// before every evaluation. `step` sets the initial simplex size per coordinate.
pub(crate) fn nelder_mead<F>(f: F, start: &[f64], step: &[f64], bounds: &[(f64, f64)], max_evals: usize, tol: f64) -> Minimum
where
    F: Fn(&[f64]) -> f64,
{
    let n = start.len();
    let clamp = |x: &mut Vec<f64>| {
        for (v, (lo, hi)) in x.iter_mut().zip(bounds) {
            *v = v.clamp(*lo, *hi);
        }
    };
    let evals = std::cell::Cell::new(0usize);
    let eval = |x: &[f64]| {
        evals.set(evals.get() + 1);
        let v = f(x);
        if v.is_nan() { f64::INFINITY } else { v }
    };

    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    let mut x0 = start.to_vec();
    clamp(&mut x0);
    let v0 = eval(&x0);
    simplex.push((x0.clone(), v0));
    for i in 0..n {
        let mut x = x0.clone();
        x[i] += step[i];
        if x[i] > bounds[i].1 {
            x[i] = x0[i] - step[i];
        }
        clamp(&mut x);
        let v = eval(&x);
        simplex.push((x, v));
    }

    while evals.get() < max_evals {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let best = simplex[0].1;
        let worst = simplex[n].1;
        if (worst - best).abs() <= tol * (best.abs() + tol) {
            break;
        }
        let centroid: Vec<f64> = (0..n)
            .map(|j| simplex[..n].iter().map(|(x, _)| x[j]).sum::<f64>() / n as f64)
            .collect();
        let along = |t: f64| {
            let mut x: Vec<f64> = (0..n).map(|j| centroid[j] + t * (simplex[n].0[j] - centroid[j])).collect();
            clamp(&mut x);
            x
        };
        let xr = along(-1.0);
        let vr = eval(&xr);
        if vr < simplex[0].1 {
            let xe = along(-2.0);
            let ve = eval(&xe);
            simplex[n] = if ve < vr { (xe, ve) } else { (xr, vr) };
        } else if vr < simplex[n - 1].1 {
            simplex[n] = (xr, vr);
        } else {
            let (xc, vc) = if vr < worst {
                let x = along(-0.5);
                let v = eval(&x);
                (x, v)
            } else {
                let x = along(0.5);
                let v = eval(&x);
                (x, v)
            };
            if vc < worst.min(vr) {
                simplex[n] = (xc, vc);
            } else {
                let best_point = simplex[0].0.clone();
                for item in simplex.iter_mut().skip(1) {
                    let mut x: Vec<f64> = best_point.iter().zip(&item.0).map(|(b, v)| b + 0.5 * (v - b)).collect();
                    clamp(&mut x);
                    let v = eval(&x);
                    *item = (x, v);
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (point, value) = simplex.swap_remove(0);
    Minimum { point, value }
}
