use specwav_demo::{error_curve, gl_convergence, resize_heatmap, DEMO_MELS};

#[test]
fn heatmap_keeps_shape_and_identity() {
    let a = resize_heatmap(3, 1.0, "repeat_edge").unwrap();
    let b = resize_heatmap(3, 1.0, "energy_floor").unwrap();
    assert_eq!(a, b);
    assert_eq!(a.bins(), DEMO_MELS);
    assert_eq!(a.frames(), 63);
    assert_eq!(a.data().len(), a.frames() * a.bins());
    let up = resize_heatmap(3, 1.2, "repeat_edge").unwrap();
    assert_eq!((up.frames(), up.bins()), (a.frames(), a.bins()));
    assert_ne!(up.data(), a.data());
    assert!(resize_heatmap(3, 0.01, "repeat_edge").is_err());
    assert!(resize_heatmap(3, 1.0, "zero").is_err());
}

#[test]
fn error_curve_crosses_at_the_eer() {
    let c = error_curve(2.0, 200, 5).unwrap();
    let (far, frr) = (c.far(), c.frr());
    assert_eq!(far.len(), c.thresholds().len());
    assert!(far.windows(2).all(|w| w[1] <= w[0]));
    assert!(frr.windows(2).all(|w| w[1] >= w[0]));
    let cross = far.iter().zip(&frr).position(|(a, r)| a <= r).unwrap();
    let lo = far[cross].min(frr[cross]);
    let hi = far[cross - 1].max(frr[cross - 1]);
    assert!(c.eer() >= lo - 1e-12 && c.eer() <= hi + 1e-12);
    assert!(c.eer() > 0.05 && c.eer() < 0.3, "{}", c.eer());
    assert!(error_curve(6.0, 200, 5).unwrap().eer() < c.eer());
    assert!(error_curve(1.0, 1, 5).is_err());
}

#[test]
fn gl_curve_is_non_increasing() {
    let sc = gl_convergence(1, 20).unwrap();
    assert_eq!(sc.len(), 20);
    assert!(sc.windows(2).all(|w| w[1] <= w[0] + 1e-9));
    assert!(sc[19] < sc[0]);
}
