#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use transit_core::system::{Builtins, ScalarForcing};
use transit_core::{CompartmentalSystem, Matrix, TimeDomain};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random constant compliant pair: off-diagonals in [0, 1) with roughly
/// `density` fill, diagonal equal to minus the column's transfers plus a loss
/// of at least 0.1, inputs in [0.1, 2).
pub fn constant_pair(rng: &mut impl Rng, d: usize, density: f64) -> (Matrix, Vec<f64>) {
    let mut b = Matrix::zeros(d, d);
    for j in 0..d {
        let mut outflow = 0.0;
        for i in 0..d {
            if i != j && rng.gen_bool(density) {
                let v = rng.gen_range(0.0..1.0);
                b[(i, j)] = v;
                outflow += v;
            }
        }
        b[(j, j)] = -(outflow + rng.gen_range(0.1..1.0));
    }
    let s = (0..d).map(|_| rng.gen_range(0.1..2.0)).collect();
    (b, s)
}

fn column_forcing(rng: &mut impl Rng) -> ScalarForcing {
    match rng.gen_range(0..4) {
        0 => ScalarForcing::default(),
        1 => ScalarForcing::Builtin("one_plus_half_sin".into()),
        2 => ScalarForcing::Builtin("one_plus_half_cos".into()),
        _ => {
            let t = vec![0.0, 2.0, 5.0, 9.0];
            let v = (0..4).map(|_| rng.gen_range(0.3..2.0)).collect();
            ScalarForcing::table(t, v).unwrap()
        }
    }
}

/// Time-varying compliant system: each column of the base matrix shares one
/// positive forcing, so column sums stay nonpositive at every time.
pub fn varying_system(rng: &mut impl Rng, d: usize) -> CompartmentalSystem {
    let (b, s) = constant_pair(rng, d, 0.5);
    let cols: Vec<ScalarForcing> = (0..d).map(|_| column_forcing(rng)).collect();
    let matrix_forcing = (0..d * d).map(|k| cols[k % d].clone()).collect();
    let input_forcing = (0..d).map(|_| column_forcing(rng)).collect();
    CompartmentalSystem::new(b, matrix_forcing, s, input_forcing, TimeDomain::UNBOUNDED, &Builtins::standard()).unwrap()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
