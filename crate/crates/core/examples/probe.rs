use statarb_core::backtest::{run, BacktestConfig, CostModel, IdleMode};
use statarb_core::synthetic::{generate, SyntheticConfig};

fn main() {
    let configs: Vec<(&str, BacktestConfig, CostModel)> = vec![
        ("default", BacktestConfig::default(), CostModel::default()),
        ("daily+L2", BacktestConfig { resolve_daily: true, ..BacktestConfig::default() },
         CostModel { leverage: 2.0, ..CostModel::default() }),
        ("index+delay", BacktestConfig { idle_mode: IdleMode::Index, index_ticker: Some("MKT".into()), delay_fill: true, ..BacktestConfig::default() },
         CostModel::default()),
    ];
    for seed in [2u64, 5, 9] {
        let synth = SyntheticConfig { seed, days: 500, ..SyntheticConfig::default() };
        let (panel, universe) = generate(&synth).unwrap();
        for (name, bt, costs) in &configs {
            let r = run(&panel, &universe, bt, costs).unwrap();
            println!("seed {seed} {name}: max_kkt {:.3e} ledger {:.1e}", r.max_kkt_residual, r.max_ledger_error);
        }
    }
}
