//! Euclidean projection onto the probability simplex, the building block of
//! the ERC solver.
//!
//! ```text
//! cargo run --example simplex_projection
//! ```

use defi_parity::allocate::project_to_simplex;

fn main() -> defi_parity::Result<()> {
    for v in [
        vec![2.0, 0.0],
        vec![0.5, 0.5, -1.0],
        vec![0.2, 0.3, 0.5],
        vec![1.0, 1.0, 1.0, 1.0],
        vec![-3.0, 0.1, 0.4],
    ] {
        let p = project_to_simplex(&v)?;
        println!("{v:?} -> {p:?} (sum {})", p.iter().sum::<f64>());
    }
    Ok(())
}
