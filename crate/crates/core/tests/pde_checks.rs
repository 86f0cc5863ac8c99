use std::f64::consts::PI;

use glauber_core::pde::{hydro_compare, solve_rd, DensityField, Rho0Profile};
use glauber_core::poly::Polynomial;
use glauber_core::rates::{make_dmfl, reaction_profile, ReactionProfile};

fn cos_field(m: usize, amp: f64) -> DensityField {
    DensityField::new(
        (0..m).map(|i| amp * (2.0 * PI * i as f64 / m as f64).cos()).collect(),
        0.0,
    )
    .unwrap()
}

/// Coefficient of `cos(2πu)` on the grid.
fn first_mode(f: &DensityField) -> f64 {
    let m = f.m() as f64;
    2.0 / m
        * f.values()
            .iter()
            .enumerate()
            .map(|(i, v)| v * (2.0 * PI * i as f64 / m).cos())
            .sum::<f64>()
}

fn zero_reaction() -> ReactionProfile {
    ReactionProfile::from_reaction(Polynomial::zero())
}

#[test]
fn heat_equation_constant_stays_put() {
    let rho0 = DensityField::new(vec![0.3; 32], 0.0).unwrap();
    let out = solve_rd(&zero_reaction(), &rho0, 0.5, 0.5 / (32.0 * 32.0)).unwrap();
    assert!(out.values().iter().all(|v| (v - 0.3).abs() < 1e-12));
    assert_eq!(out.time(), 0.5);
}

#[test]
fn heat_equation_fourier_mode_decay() {
    let m = 256;
    let t = 0.1;
    let out = solve_rd(&zero_reaction(), &cos_field(m, 1.0), t, 0.5 / (m * m) as f64).unwrap();
    let want = (-0.5 * (2.0 * PI).powi(2) * t).exp();
    assert!((first_mode(&out) / want - 1.0).abs() < 1e-3);
}

#[test]
fn linear_reaction_fourier_mode_decay() {
    let profile = reaction_profile(&make_dmfl(0.0).unwrap());
    let m = 256;
    let t = 0.1;
    let out = solve_rd(&profile, &cos_field(m, 0.5), t, 0.5 / (m * m) as f64).unwrap();
    let want = 0.5 * (-(0.5 * (2.0 * PI).powi(2) + 2.0) * t).exp();
    assert!((first_mode(&out) / want - 1.0).abs() < 1e-3);
}

#[test]
fn heat_equation_conserves_mass() {
    let m = 64;
    let values: Vec<f64> = (0..m).map(|i| if i < 20 { 0.9 } else { -0.4 }).collect();
    let rho0 = DensityField::new(values, 0.0).unwrap();
    let out = solve_rd(&zero_reaction(), &rho0, 0.3, 0.4 / (m * m) as f64).unwrap();
    assert!((out.mean() - rho0.mean()).abs() < 1e-12);
}

#[test]
fn comparison_principle() {
    let profile = reaction_profile(&make_dmfl(0.25).unwrap());
    let m = 64;
    let low = cos_field(m, 0.5);
    let high = DensityField::new(low.values().iter().map(|v| (v + 0.3).min(1.0)).collect(), 0.0).unwrap();
    let dt = 0.5 / (m * m) as f64;
    let a = solve_rd(&profile, &low, 0.2, dt).unwrap();
    let b = solve_rd(&profile, &high, 0.2, dt).unwrap();
    assert!(a.values().iter().zip(b.values()).all(|(x, y)| x <= y));
}

#[test]
fn grid_refinement_is_second_order() {
    let profile = reaction_profile(&make_dmfl(0.25).unwrap());
    let t = 0.05;
    let solve = |m: usize| solve_rd(&profile, &cos_field(m, 0.8), t, 0.5 / (m * m) as f64).unwrap();
    let reference = solve(512);
    let error = |m: usize| {
        let f = solve(m);
        let stride = 512 / m;
        f.values()
            .iter()
            .enumerate()
            .map(|(i, v)| (v - reference.values()[i * stride]).abs())
            .fold(0.0, f64::max)
    };
    let (e1, e2) = (error(32), error(64));
    let order = (e1 / e2).log2();
    assert!(order >= 1.8, "observed order {order}");
}

#[test]
fn hydro_at_time_zero_is_sampling_noise() {
    let rule = make_dmfl(0.25).unwrap();
    let (n, m, replicas) = (128, 16, 100);
    let cmp = hydro_compare(&rule, &Rho0Profile::Cos(0.8), n, m, 0.0, replicas, 3).unwrap();
    assert!(
        cmp.linf <= 3.0 * (m as f64 / (replicas * n) as f64).sqrt(),
        "{}",
        cmp.linf
    );
}

#[test]
fn hydro_constant_rule_matches_linear_solution() {
    let rule = make_dmfl(0.0).unwrap();
    let (n, m, t, amp) = (128, 16, 0.3, 0.8);
    let cmp = hydro_compare(&rule, &Rho0Profile::Cos(amp), n, m, t, 200, 4).unwrap();
    let decay = (-(0.5 * (2.0 * PI).powi(2) + 2.0) * t).exp();
    let per_block = n / m;
    for (j, block) in cmp.blocks.iter().enumerate() {
        let exact: f64 = (j * per_block..(j + 1) * per_block)
            .map(|x| amp * decay * (2.0 * PI * x as f64 / n as f64).cos())
            .sum::<f64>()
            / per_block as f64;
        assert!((block.pde_value - exact).abs() < 1e-3 * amp, "block {j}");
        assert!((block.empirical_mean - exact).abs() <= 4.0 * block.empirical_se.max(1e-3));
    }
}
