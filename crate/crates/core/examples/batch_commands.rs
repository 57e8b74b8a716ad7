//! The `leapgrid` subcommands called as library functions on an inline
//! config.

use leapgrid::commands;
use leapgrid::config::Config;

fn main() -> leapgrid::Result<()> {
    let cfg = Config::from_json(
        r#"{
            "grid": {"nx": 48, "ny": 24, "nz": 8},
            "decomp": {"px": 2, "py": 3, "pz": 2, "order": "z-prior", "cores_per_node": 4},
            "run": {"steps": 2, "dt_s": "auto"}
        }"#,
    )?;

    let table = commands::leap_table(&cfg)?;
    println!("leap-table (first rows):");
    table.lines().take(4).for_each(|l| println!("  {l}"));

    println!("\nestimate (first rows):");
    commands::estimate(&cfg)?.lines().take(5).for_each(|l| println!("  {l}"));

    println!("\nverify:");
    print!("{}", commands::verify(&cfg, true, None)?.render());

    let art = commands::run(&cfg, true, None)?;
    println!("\nfilter-load:\n{}", art.filter_load);

    match Config::from_json(r#"{"run": {"stpes": 3}}"#) {
        Err(e) => println!("bad key -> exit {}: {e}", commands::exit_code(&e)),
        Ok(_) => unreachable!(),
    }
    Ok(())
}
