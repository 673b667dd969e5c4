//! Contact densities along an approach sequence against the slice problem
//! of the limit direction on the laminar d = 3 medium.

use homog_core::coeffs::{project_a, CoefficientField, Mat, TrigSeries};
use homog_core::lattice::{approach_sequence, primitive_direction, Direction};
use homog_core::obstacle::{solve_obstacle, CriticalOptions, CubeSpec, ObstacleKind};

fn laminar() -> CoefficientField {
    CoefficientField::laminar(
        Mat::identity(3, 3),
        0.5,
        vec![0, 0, 1],
        vec![1.0, 0.0, 0.0],
        TrigSeries::constant(1.0),
    )
    .unwrap()
}

fn mean_density(
    field: &CoefficientField,
    e: &Direction,
    x: &Mat,
    mu: f64,
    opts: &CriticalOptions,
) -> f64 {
    let op = project_a(field, e).unwrap();
    let total: f64 = opts
        .shifts
        .iter()
        .map(|s| {
            let cube = CubeSpec {
                r: opts.r,
                x_shift: s.clone(),
                theta: opts.theta,
                m: opts.m,
            };
            solve_obstacle(&op, ObstacleKind::Sub, x, mu, &cube)
                .unwrap()
                .density
        })
        .sum();
    total / opts.shifts.len() as f64
}

#[test]
fn approach_densities_stay_below_the_limit_direction() {
    let field = laminar();
    let e = primitive_direction(&[0, 0, 1]).unwrap();
    let approach = approach_sequence(&e, &[1.0, 0.0, 0.0], 4).unwrap();
    let opts = CriticalOptions::with_default_shifts(3, 4.0, 0.05);
    let mut x = Mat::zeros(3, 3);
    x[(0, 0)] = 1.0;
    for mu in [-1.2, -1.0, -0.8] {
        let reference = mean_density(&field, &e, &x, mu, &opts);
        for en in &approach.sequence[2..] {
            let d = mean_density(&field, en, &x, mu, &opts);
            assert!(
                d <= reference + 0.05,
                "mu {mu}, {en}: {d} vs limit direction {reference}"
            );
        }
    }
}

#[test]
fn laminar_densities_are_monotone_in_mu() {
    let field = laminar();
    let e = primitive_direction(&[-1, 0, 4]).unwrap();
    let opts = CriticalOptions::with_default_shifts(3, 4.0, 0.05);
    let mut x = Mat::zeros(3, 3);
    x[(0, 0)] = 1.0;
    let dens: Vec<f64> = [-1.2, -1.0, -0.9, -0.85, -0.8, -0.6]
        .iter()
        .map(|&mu| mean_density(&field, &e, &x, mu, &opts))
        .collect();
    assert!(dens.windows(2).all(|w| w[1] >= w[0]), "{dens:?}");
    assert_eq!(dens[0], 0.0);
    assert!(*dens.last().unwrap() > 0.1, "{dens:?}");
}
