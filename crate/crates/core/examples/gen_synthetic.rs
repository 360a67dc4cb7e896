//! Regenerate the bundled synthetic dataset. Usage:
//!
//! ```text
//! cargo run -p statarb-core --example gen_synthetic -- [out_dir] [seed]
//! ```

use statarb_core::synthetic::{generate, write_csv, SyntheticConfig};

fn main() {
    let mut args = std::env::args().skip(1);
    let out_dir = args.next().unwrap_or_else(|| "data".to_string());
    let seed: u64 = args
        .next()
        .map(|s| s.parse().expect("seed must be an integer"))
        .unwrap_or(42);

    let config = SyntheticConfig {
        seed,
        ..SyntheticConfig::default()
    };
    let (panel, universe) = generate(&config).expect("generation failed");
    std::fs::create_dir_all(&out_dir).expect("cannot create output directory");
    let prices = format!("{out_dir}/synthetic_prices.csv");
    let members = format!("{out_dir}/synthetic_universe.csv");
    write_csv(&panel, &universe, &prices, &members).expect("write failed");
    println!(
        "wrote {} dates x {} tickers (seed {seed}) to {prices} and {members}",
        panel.n_dates(),
        panel.n_tickers()
    );
}
