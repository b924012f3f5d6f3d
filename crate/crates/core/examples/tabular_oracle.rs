//! Solves the IQL fixed point exactly on the logged data of a five-cell chain and
//! shows how the expectile moves `V` from the mean towards the best logged action.
//!
//!     cargo run --example tabular_oracle

use rescore_agent::critic::chain::{chain_memory, chain_state, CHAIN_CELLS, CHAIN_TASK};
use rescore_agent::critic::{state_key, tabular_dataset, tabular_iql};
use rescore_agent::experience::RewardMode;

fn main() -> rescore_agent::Result<()> {
    let memory = chain_memory(200, 0.5, 3)?;
    let data = tabular_dataset(&memory, RewardMode::Delta)?;
    println!("{} logged transitions", data.len());
    for tau in [0.5, 0.9, 0.99] {
        let sol = tabular_iql(&data, tau, 0.9)?;
        println!("\ntau {tau} ({} sweeps)", sol.sweeps);
        for cell in 0..CHAIN_CELLS - 1 {
            let key = state_key(CHAIN_TASK, &chain_state(cell, 0).whole());
            let q: Vec<String> = sol.actions_of(&key).iter().map(|(a, v)| format!("{a}={v:.3}")).collect();
            println!("  cell {cell}: V={:.3}  {}", sol.v[&key], q.join("  "));
        }
    }
    Ok(())
}
