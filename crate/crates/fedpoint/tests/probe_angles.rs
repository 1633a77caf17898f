use fedpoint_core::rng::Rng;

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(&x, &y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

#[test]
#[ignore = "diagnostic probe; run explicitly"]
fn direction_angles() {
    let d = 8;
    // experiment recipe streams
    for seed in [777u64, 100, 200, 300, 4242] {
        let signal = Rng::stream(seed, "signal", &[]).unit_vector(d);
        let base = Rng::stream(seed, "base", &[]).unit_vector(d);
        println!("build_sites seed {seed}: cos(signal, base) = {:+.3}", cosine(&signal, &base));
    }
    // diagnostic recipe (consecutive draws from one stream)
    for seed in [4242u64, 777] {
        let mut rng = Rng::stream(seed, "data", &[]);
        let signal = rng.unit_vector(d);
        let _shift = rng.unit_vector(d);
        let base = rng.unit_vector(d);
        println!("make_site seed {seed}: cos(signal, base) = {:+.3}", cosine(&signal, &base));
    }
}
