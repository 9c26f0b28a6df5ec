//! Compares analytic and central-difference gradients of a critic.
//!
//! `cargo run --release --example gradient_check`

use prefrec::nn::finite_diff_check;
use prefrec::policy::init_critic;
use prefrec::rng::{stream_rng, streams};
use rand_distr::{Distribution, StandardNormal};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = stream_rng(0, streams::INIT, 0);
    let q = init_critic(32, 8, 64, 2, &mut rng);
    for trial in 0..5 {
        let x: Vec<f64> = (0..40).map(|_| StandardNormal.sample(&mut rng)).collect();
        let margin = q.kink_margin(&x)?;
        let err = finite_diff_check(&q, &x, 1e-4)?;
        println!("trial {trial}: kink margin {margin:.2e}, max relative error {err:.2e}");
    }
    Ok(())
}
