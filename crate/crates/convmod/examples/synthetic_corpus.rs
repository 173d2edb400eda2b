//! Writes a synthetic labeled corpus to try the CLI against:
//!
//! ```sh
//! cargo run -p convmod --example synthetic_corpus -- corpus.jsonl [seed]
//! ```

use convmod::synthetic::{generate, SyntheticSpec};

fn main() -> convmod::Result<()> {
    let mut args = std::env::args().skip(1);
    let path = args.next().unwrap_or_else(|| "corpus.jsonl".to_string());
    let seed: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(42);
    let corpus = generate(&SyntheticSpec::three_state(seed))?;
    corpus.save(&path)?;
    println!("wrote {} threads / {} posts to {path}", corpus.num_threads(), corpus.num_posts());
    Ok(())
}
