//! Draw a synthetic sample, truncate it, and write both views as CSV.
//!
//! The full view keeps every row plus the 0/1 retention column R; the
//! observed-only view is what an analyst downstream of the selection
//! process would actually have -- latent confounders hidden, truncated
//! rows gone.

use ivsel::mc::{apply_selection, simulate, write_csv};
use ivsel::{PathModel, Scenario, SelectionRule};

fn main() -> ivsel::Result<()> {
    let model = PathModel::preset(Scenario::Baseline, &Default::default())?;
    let rule = SelectionRule::truncation_at_severity(0.291)?;
    let data = apply_selection(&simulate(&model, 2_000, 42)?, &rule)?;

    println!(
        "n = {}, retained = {} ({:.1}%; the cut removes 29.1% in the limit)",
        data.n(),
        data.retained_count(),
        100.0 * data.retained_fraction()
    );

    let mut full = Vec::new();
    write_csv(&data, &mut full, false)?;
    let full = String::from_utf8(full).expect("utf8");
    println!("\nfull dump ({} lines), first rows:", full.lines().count());
    for line in full.lines().take(4) {
        println!("  {line}");
    }

    let mut observed = Vec::new();
    write_csv(&data, &mut observed, true)?;
    let observed = String::from_utf8(observed).expect("utf8");
    println!("\nobserved-only dump ({} lines), first rows:", observed.lines().count());
    for line in observed.lines().take(4) {
        println!("  {line}");
    }

    println!("\nsame seed, same draws: re-simulating reproduces the data bit for bit.");
    let again = apply_selection(&simulate(&model, 2_000, 42)?, &rule)?;
    assert_eq!(data.column("Y").unwrap(), again.column("Y").unwrap());
    Ok(())
}
