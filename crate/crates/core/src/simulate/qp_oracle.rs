//! Independent checks for the QP solver: seeded random instances and an
//! exhaustive active-set enumeration that finds the optimum without the
//! solver.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::qp::QpProblem;

/// Random strictly convex instance whose constraints admit a strictly
/// feasible point.
pub fn random_instance<R: Rng>(rng: &mut R, d: usize, e: usize, i: usize) -> QpProblem {
    let m = DMatrix::from_fn(d, d, |_, _| rng.gen_range(-1.0..1.0));
    let h = m.tr_mul(&m) + DMatrix::identity(d, d) * 0.1;
    let g = DVector::from_fn(d, |_, _| rng.gen_range(-3.0..3.0));
    let x0 = DVector::from_fn(d, |_, _| rng.gen_range(-1.0..1.0));
    let a_eq = DMatrix::from_fn(e, d, |_, _| rng.gen_range(-1.0..1.0));
    let b_eq = -(&a_eq * &x0);
    let a_in = DMatrix::from_fn(i, d, |_, _| rng.gen_range(-1.0..1.0));
    let slack = DVector::from_fn(i, |_, _| rng.gen_range(0.01..1.0));
    let b_in = -(&a_in * &x0) + slack;
    QpProblem::new(h, g, a_eq, b_eq, a_in, b_in)
}

/// Minimum objective over every equality-restricted subproblem whose
/// solution is primal feasible and dual feasible.
pub fn enumerate_optimum(p: &QpProblem) -> Option<f64> {
    let d = p.dim();
    let e = p.b_eq.len();
    let i = p.b_in.len();
    let mut best: Option<f64> = None;
    for mask in 0u32..(1 << i) {
        let rows: Vec<usize> = (0..i).filter(|k| mask & (1 << k) != 0).collect();
        let m = e + rows.len();
        if m > d {
            continue;
        }
        let mut kkt = DMatrix::zeros(d + m, d + m);
        let mut rhs = DVector::zeros(d + m);
        kkt.view_mut((0, 0), (d, d)).copy_from(&p.h);
        rhs.rows_mut(0, d).copy_from(&(-&p.g));
        let mut put = |r: usize, a: DVector<f64>, b: f64| {
            for c in 0..d {
                kkt[(d + r, c)] = a[c];
                kkt[(c, d + r)] = -a[c];
            }
            rhs[d + r] = -b;
        };
        for k in 0..e {
            put(k, p.a_eq.row(k).transpose(), p.b_eq[k]);
        }
        for (r, &k) in rows.iter().enumerate() {
            put(e + r, p.a_in.row(k).transpose(), p.b_in[k]);
        }
        let Some(sol) = kkt.clone().lu().solve(&rhs) else {
            continue;
        };
        if (&kkt * &sol - &rhs).amax() > 1e-9 {
            continue;
        }
        let x = sol.rows(0, d).into_owned();
        let feasible = (&p.a_in * &x + &p.b_in).iter().all(|s| *s >= -1e-9);
        let duals_ok = (0..rows.len()).all(|r| sol[d + e + r] >= -1e-9);
        if feasible && duals_ok {
            let f = p.objective(&x);
            best = Some(best.map_or(f, |b: f64| b.min(f)));
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn enumeration_finds_the_constrained_minimum() {
        // min x² − 2x, unconstrained at x = 1.
        let h = DMatrix::from_element(1, 1, 2.0);
        let g = DVector::from_element(1, -2.0);
        let free = QpProblem::new(
            h.clone(),
            g.clone(),
            DMatrix::zeros(0, 1),
            DVector::zeros(0),
            DMatrix::zeros(0, 1),
            DVector::zeros(0),
        );
        assert!((enumerate_optimum(&free).unwrap() + 1.0).abs() < 1e-12);
        // x ≤ 0.5 written as −x + 0.5 ≥ 0.
        let capped = QpProblem::new(
            h,
            g,
            DMatrix::zeros(0, 1),
            DVector::zeros(0),
            DMatrix::from_element(1, 1, -1.0),
            DVector::from_element(1, 0.5),
        );
        assert!((enumerate_optimum(&capped).unwrap() + 0.75).abs() < 1e-12);
    }
}
