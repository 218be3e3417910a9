#![allow(dead_code)]

/// Brute-force EER: FAR/FRR at -inf, every midpoint between adjacent distinct
/// scores and +inf, counted directly, with linear interpolation at the first
/// threshold where FAR - FRR stops being positive.
pub fn eer_oracle(targets: &[f64], nontargets: &[f64]) -> f64 {
    let mut all: Vec<f64> = targets.iter().chain(nontargets).copied().collect();
    all.sort_by(|a, b| a.partial_cmp(b).unwrap());
    all.dedup();
    let mut thresholds = vec![f64::NEG_INFINITY];
    thresholds.extend(all.windows(2).map(|w| w[0] + (w[1] - w[0]) / 2.0));
    thresholds.push(f64::INFINITY);
    let rates = |t: f64| {
        let far = nontargets.iter().filter(|&&s| s >= t).count() as f64 / nontargets.len() as f64;
        let frr = targets.iter().filter(|&&s| s < t).count() as f64 / targets.len() as f64;
        (far, frr)
    };
    let mut prev = rates(thresholds[0]);
    for &t in &thresholds {
        let (far, frr) = rates(t);
        let d = far - frr;
        if d <= 0.0 {
            if d == 0.0 {
                return far;
            }
            let (fa, fr) = prev;
            let da = fa - fr;
            return fa + da / (da - d) * (far - fa);
        }
        prev = (far, frr);
    }
    unreachable!()
}

/// Seeded score sets: 2-50 per class, mixed continuous and tied values.
pub fn random_score_sets(n: usize, seed: u64) -> Vec<(Vec<f64>, Vec<f64>)> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let nt = rng.gen_range(2..=50);
            let nn = rng.gen_range(2..=50);
            let sep = rng.gen_range(-1.0..2.0);
            let mut draw = |shift: f64, k: usize| -> Vec<f64> {
                (0..k)
                    .map(|_| {
                        let v: f64 = rng.gen_range(-1.0..1.0) + shift;
                        if i % 3 == 0 {
                            (v * 8.0).round() / 8.0
                        } else {
                            v
                        }
                    })
                    .collect()
            };
            let t = draw(sep, nt);
            let n = draw(0.0, nn);
            (t, n)
        })
        .collect()
}
