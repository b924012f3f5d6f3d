//! Compares the hand-written backward pass of the Q- and value networks with
//! central finite differences.
//!
//!     cargo run --example gradcheck

use rescore_agent::critic::{CriticParams, ExpectileBatch, IqlConfig, RegressionSample};
use rescore_agent::nn::{finite_diff_check, NetConfig};

fn sample(fields: usize, offset: usize, target: f64) -> RegressionSample {
    RegressionSample {
        fields: (0..fields).map(|f| vec![(7 * f + offset) % 50, (3 * f + 11) % 50]).collect(),
        target,
    }
}

fn main() -> rescore_agent::Result<()> {
    for twin in [false, true] {
        let cfg = IqlConfig {
            net: NetConfig {
                vocab_size: 50,
                embed_dim: 4,
                hidden_dim: 8,
            },
            twin_q: twin,
            ..IqlConfig::default()
        };
        let params = CriticParams::init(&cfg);
        let n = cfg.layout.q_fields().len();
        let q_batch = [sample(n, 1, 0.4), sample(n, 5, -0.2), sample(n, 9, 1.0)];
        let r = finite_diff_check(&params.q, q_batch.as_slice(), 1e-4)?;
        println!("Q (twin {twin}): {} coordinates, max relative error {:.2e} in {}", r.coordinates, r.max_rel_error, r.worst_tensor);
        if !twin {
            let v_batch = ExpectileBatch {
                tau: 0.9,
                samples: vec![sample(n - 1, 2, 0.3), sample(n - 1, 4, -0.6)],
            };
            let r = finite_diff_check(&params.v, &v_batch, 1e-4)?;
            println!("V: {} coordinates, max relative error {:.2e} in {}", r.coordinates, r.max_rel_error, r.worst_tensor);
        }
    }
    Ok(())
}
