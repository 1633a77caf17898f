fn main() {
    use std::time::Instant;
    let t0 = Instant::now();
    for check in fedpoint::gradsuite::run_suite() {
        println!("{} -> {:.3e} (tol {:.0e}) {}", check.name, check.max_rel_err, check.tolerance, if check.passed() { "ok" } else { "FAIL" });
    }
    println!("suite took {:?}", t0.elapsed());
}
