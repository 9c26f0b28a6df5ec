//! Fits `V` to Gaussian samples of a frozen `Q` for several expectiles.
//!
//! `cargo run --release --example expectile`

use prefrec::agent::{AgentConfig, PrefRecAgent};
use prefrec::nn::{Activation, Layer, Matrix, Mlp};
use prefrec::policy::{init_value, Policy};
use prefrec::rng::{stream_rng, streams};
use rand_distr::{Distribution, StandardNormal};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let n = 4000;
    let mut rng = stream_rng(0, streams::SIM, 0);
    let samples: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
    let states = Matrix::zeros(n, 1);
    let actions = Matrix::from_vec(n, 1, samples);
    // Q(s, a) = a
    let q = Mlp::from_layers(vec![Layer::new(2, 1, vec![0.0, 1.0], vec![0.0], Activation::Identity)?])?;
    for tau in [0.5, 0.6, 0.7, 0.8, 0.9] {
        let config = AgentConfig {
            expectile: tau,
            critic_lr: 1e-3,
            hidden: 16,
            hidden_layers: 2,
            ..AgentConfig::default()
        };
        let mut init = stream_rng(0, streams::INIT, 0);
        let v = init_value(1, 16, 2, &mut init);
        let policy = Policy::new(1, 1, 16, 2, &mut init);
        let mut agent = PrefRecAgent::from_parts(q.clone(), v, policy, config);
        for _ in 0..3000 {
            agent.v_update(&states, &actions)?;
        }
        println!("tau {tau:.1}: V = {:.4}", agent.v.net.forward(&[0.0])?[0]);
    }
    Ok(())
}
