use levy_fp::acceptance::Suite;

#[test]
fn acceptance_suite() {
    let mut suite = Suite::new();
    let outcomes = suite.run_all();
    println!();
    for o in &outcomes {
        println!("{}", o.line());
        for d in &o.details {
            println!("    {d}");
        }
    }
    let failed: Vec<&str> = outcomes
        .iter()
        .filter(|o| !o.passed)
        .map(|o| o.name)
        .collect();
    println!(
        "\n{} of {} criteria passed",
        outcomes.len() - failed.len(),
        outcomes.len()
    );
    assert!(failed.is_empty(), "failing criteria: {failed:?}");
}
