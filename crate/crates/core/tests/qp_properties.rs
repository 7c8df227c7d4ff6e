//! Solver checks against exhaustive active-set enumeration and the KKT
//! residual contract.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use retarget_core::qp::{kkt_residuals, solve_qp, QpSolver, QpStatus};
use retarget_core::simulate::qp_oracle::{enumerate_optimum, random_instance};

#[test]
fn small_instances_match_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..1000 {
        let d = rng.gen_range(1..=4);
        let e = rng.gen_range(0..=2.min(d - 1));
        let i = rng.gen_range(0..=6);
        let p = random_instance(&mut rng, d, e, i);
        let s = solve_qp(&p);
        assert_eq!(s.status, QpStatus::Optimal);
        let best = enumerate_optimum(&p).expect("feasible by construction");
        let got = p.objective(&s.x);
        assert!((got - best).abs() <= 1e-8, "objective {got} vs enumeration {best}");
    }
}

#[test]
fn kkt_contract_on_larger_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..200 {
        let d = rng.gen_range(5..=30);
        let e = rng.gen_range(0..=d / 3);
        let i = rng.gen_range(0..=3 * d);
        let p = random_instance(&mut rng, d, e, i);
        let s = solve_qp(&p);
        assert_eq!(s.status, QpStatus::Optimal);
        let [eq, ineq, stat, comp, min_dual] = kkt_residuals(&p, &s);
        assert!(eq <= 1e-8, "equality residual {eq}");
        assert!(ineq <= 1e-8, "inequality violation {ineq}");
        assert!(stat <= 1e-6, "stationarity {stat}");
        assert!(comp <= 1e-6, "complementarity {comp}");
        assert!(min_dual >= -1e-12, "negative multiplier {min_dual}");
    }
}

#[test]
fn warm_start_resolves_quickly() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..200 {
        let d = rng.gen_range(2..=12);
        let e = rng.gen_range(0..d / 2 + 1);
        let p = random_instance(&mut rng, d, e, 2 * d);
        let cold = solve_qp(&p);
        let mut again = p.clone();
        again.warm_start = Some(cold.x.clone());
        let warm = solve_qp(&again);
        assert_eq!(warm.status, QpStatus::Optimal);
        assert!(warm.iterations <= 2, "warm start took {} iterations", warm.iterations);
        assert!((&warm.x - &cold.x).amax() <= 1e-8);
    }
}

#[test]
fn scaling_the_objective_keeps_the_argmin() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..200 {
        let d = rng.gen_range(1..=8);
        let (e, i) = (rng.gen_range(0..d), rng.gen_range(0..10));
        let p = random_instance(&mut rng, d, e, i);
        let alpha = rng.gen_range(0.01..100.0);
        let mut q = p.clone();
        q.h *= alpha;
        q.g *= alpha;
        let a = solve_qp(&p);
        let b = solve_qp(&q);
        assert!((&a.x - &b.x).amax() <= 1e-8);
    }
}

#[test]
fn solver_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let p = random_instance(&mut rng, 20, 4, 40);
    let a = QpSolver::default().solve(&p);
    let b = QpSolver::default().solve(&p);
    assert_eq!(a.x.as_slice(), b.x.as_slice());
    assert_eq!(a.in_duals.as_slice(), b.in_duals.as_slice());
}
