//! Runs the fast self-checks and prints a pass/fail table.
//!
//! Run: `cargo run --release --example verify_checks`

use scoregrad::verify::{table, verify_all};
use scoregrad::Result;

fn main() -> Result<()> {
    let results = verify_all(&mut |r| eprintln!("{}", r.line()))?;
    print!("{}", table(&results));
    Ok(())
}
