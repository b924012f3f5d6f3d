//! Maps free-text candidates onto the valid action set: exact matches are kept and
//! every invalid candidate pulls in the closest remaining valid action.
//!
//!     cargo run --example grounding

use rescore_agent::experience::ActionText;
use rescore_agent::grounding::{map_to_valid, TrigramEmbedder};
use rescore_agent::policy::Candidate;

fn main() -> rescore_agent::Result<()> {
    let valid: Vec<ActionText> = ["go left", "go right", "take key", "open box", "look"]
        .into_iter()
        .map(ActionText::new)
        .collect::<Result<_, _>>()?;
    let sampled = [("Take Key", -0.3), ("walk to the right", -1.1), ("open the box", -1.7)];
    let candidates: Vec<Candidate> = sampled
        .iter()
        .map(|&(text, lp)| {
            Ok(Candidate {
                text: ActionText::new(text)?,
                log_likelihood: lp,
            })
        })
        .collect::<rescore_agent::Result<_>>()?;

    let grounded = map_to_valid(&candidates, &valid, 5, &TrigramEmbedder::default())?;
    for g in &grounded.actions {
        match g.similarity_sum {
            Some(sim) => println!("{:<10} {:?} similarity sum {sim:.3}", g.action, g.origin),
            None => println!("{:<10} {:?} log-likelihood {:?}", g.action, g.origin, g.log_likelihood),
        }
    }
    Ok(())
}
