//! Checks every layer's backward pass against central finite differences,
//! then the whole desk-scale network end to end.

use hnet::nn::gradcheck::{check_all_layers, check_desk_network};
use hnet::nn::Head;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let seed = 7;
    let mut results = check_all_layers(seed)?;
    results.push(check_desk_network(Head::Regression, 16, seed)?);
    results.push(check_desk_network(Head::Classification { rho: 8.0 }, 16, seed)?);
    for r in &results {
        println!(
            "{:<30} max rel err {:.3e} (threshold {:.0e}, {} checked, {} skipped) {}",
            r.name,
            r.max_rel_error,
            r.threshold,
            r.checked,
            r.skipped,
            if r.passed() { "ok" } else { "FAIL" }
        );
    }
    Ok(())
}
