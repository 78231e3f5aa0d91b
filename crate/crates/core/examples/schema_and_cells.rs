//! Reading a schema file, checking it, and looking at the latent cells that
//! discrete outcomes round from.
//!
//!     cargo run --example schema_and_cells

use mixscale::schema::{cell_of, latent_of_continuous, validate_schema, MixedSchema};

const SCHEMA: &str = r#"
[[column]]
name = "income"
kind = "continuous"
map = "log"

[[column]]
name = "smoker"
kind = "binary"
cuts = [0.0]

[[column]]
name = "grade"
kind = "categorical"
levels = 3
cuts = [-0.5, 0.7]

[[column]]
name = "visits"
kind = "count"
"#;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let schema = MixedSchema::from_toml_str(SCHEMA)?;
    println!("p1 = {}, p2 = {}", schema.p1(), schema.p2());
    println!("problems: {:?}", validate_schema(&schema));

    for y2 in [[0, 0, 0], [1, 2, 3]] {
        let cell = cell_of(&schema, &y2)?;
        println!("y2 = {y2:?} rounds from {:?} .. {:?}", cell.lower, cell.upper);
    }

    let (latent, log_jac) = latent_of_continuous(&schema, &[2.5])?;
    println!("income 2.5 -> latent {:.6}, log|J| = {log_jac:.6}", latent[0]);

    // a latent vector rounds to exactly one observed point
    println!("round([0.3, -1.2, 0.1, 2.4]) = {:?}", schema.round(&[0.3, -1.2, 0.1, 2.4]));

    let broken = SCHEMA.replace("cuts = [-0.5, 0.7]", "cuts = [0.7, -0.5]");
    match MixedSchema::from_toml_str(&broken) {
        Ok(_) => println!("unexpectedly accepted"),
        Err(e) => println!("rejected: {e}"),
    }
    Ok(())
}
