//! Derivative feedback `F_D = k_D a†a` damps the cavity amplitude at
//! `½(γ₀ + k_D²)`: the dephasing from `−iF_D` in the closed-loop coupling adds
//! to the decay rather than cancelling it.

use num_complex::Complex64;

use slhlab::control::pid_coefficients;
use slhlab::operator::{annihilator, c, number, Operator};
use slhlab::sim::{coherent_state, ensemble, NamedObservable, SimConfig, Unravelling};

#[test]
fn derivative_feedback_adds_to_damping() {
    let (d, gamma0, omega0, kd) = (10, 1.0f64, 0.5, 0.6);
    let a = annihilator(d).unwrap();
    let n = number(d).unwrap();
    let zero = Operator::zeros(a.space());
    let coeffs = pid_coefficients(&a * gamma0.sqrt(), &n * omega0, zero.clone(), zero, n.scale_re(kd)).unwrap();
    let cfg = SimConfig {
        dt: 1e-3,
        t_final: 3.0,
        n_traj: 1500,
        seed: 9,
        unravelling: Unravelling::Homodyne,
        system_dim: d,
        observables: vec![
            NamedObservable::new("a", a.clone()),
            NamedObservable::new("a2", &a * &a),
            NamedObservable::new("n", n.clone()),
        ],
    };
    let t = ensemble(&coeffs, &coherent_state(d, c(1.0, 0.0)).unwrap(), &cfg, None).unwrap();
    let z = |i: usize, k: usize| c(t.observables[i].re.mean[k], t.observables[i].im.mean[k]);
    // Exact mean drift: c1⟨a⟩ − i k_D √γ₀ ⟨a² + a†a⟩; fit c1 in integral form.
    let (mut num, mut den) = (c(0.0, 0.0), 0.0);
    let (mut s_a, mut s_drive) = (c(0.0, 0.0), c(0.0, 0.0));
    for k in 0..t.times.len() {
        let y: Complex64 = z(0, k) - z(0, 0) - c(0.0, -1.0) * s_drive;
        num += s_a.conj() * y;
        den += s_a.norm_sqr();
        s_a += z(0, k) * cfg.dt;
        s_drive += (z(1, k) + z(2, k)) * (kd * gamma0.sqrt() * cfg.dt);
    }
    let c1 = num / den;
    let expected = 0.5 * (gamma0 + kd * kd);
    assert!((-c1.re - expected).abs() < 0.05 * expected, "damping {} vs {expected}", -c1.re);
    assert!((c1.im + omega0).abs() < 0.05 * omega0, "frequency {}", -c1.im);
}
