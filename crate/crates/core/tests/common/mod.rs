#![allow(dead_code)]

use rand::Rng;
use rand_distr::StandardNormal;

pub fn gaussian(rng: &mut impl Rng) -> f64 {
    rng.sample(StandardNormal)
}
