//! Print the built-in desk-scale benchmark configuration as JSON, as a
//! starting point for custom runs:
//!
//! ```text
//! cargo run -p modelprint-cli --example dump_config > my_config.json
//! ```

fn main() {
    let cfg = modelprint_cli::desk_config();
    println!("{}", serde_json::to_string_pretty(&cfg).unwrap());
}
