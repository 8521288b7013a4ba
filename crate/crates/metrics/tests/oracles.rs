mod common;

use common::{crps_integral_oracle, csi_oracle, ladder_oracle, pool_oracle, rouge_oracle};
use metrics::{crps_ensemble, csi, csi_mean, pooled_csi, rouge_l, CSI_THRESHOLDS};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn field() -> impl Strategy<Value = (usize, usize, Vec<f32>, Vec<f32>)> {
    (1usize..=8, 1usize..=8).prop_flat_map(|(h, w)| {
        let vals =
            prop::collection::vec(prop_oneof![Just(0.0f32), 0.0f32..255.0, Just(16.0f32), Just(219.0f32)], h * w);
        (Just(h), Just(w), vals.clone(), vals)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn csi_matches_oracle((_h, _w, p, o) in field(), ti in 0usize..6) {
        let t = CSI_THRESHOLDS[ti];
        prop_assert_eq!(csi(&p, &o, t).unwrap(), csi_oracle(&p, &o, t));
        prop_assert_eq!(csi_mean(&p, &o).unwrap(), ladder_oracle(&p, &o));
    }

    #[test]
    fn pooled_csi_matches_oracle((h, w, p, o) in field(), s in 1usize..=4) {
        let want = ladder_oracle(&pool_oracle(&p, h, w, s), &pool_oracle(&o, h, w, s));
        prop_assert_eq!(pooled_csi(&p, &o, h, w, s).unwrap(), want);
    }

    #[test]
    fn rouge_matches_oracle(
        c in prop::collection::vec(prop::sample::select(vec!["a", "b", "c", "d", "e"]), 0..=8),
        r in prop::collection::vec(prop::sample::select(vec!["a", "b", "c", "d", "e"]), 0..=8),
    ) {
        let (c, r) = (c.join(" "), r.join(" "));
        prop_assert_eq!(rouge_l(&c, &r), rouge_oracle(&c, &r));
    }

    #[test]
    fn crps_matches_integral(members in prop::collection::vec(-50.0f64..300.0, 1..7), x in -50.0f64..300.0) {
        let mem32: Vec<f32> = members.iter().map(|&v| v as f32).collect();
        let exact: Vec<f64> = mem32.iter().map(|&v| v as f64).collect();
        let cols: Vec<[f32; 1]> = mem32.iter().map(|&v| [v]).collect();
        let refs: Vec<&[f32]> = cols.iter().map(|c| c.as_slice()).collect();
        let got = crps_ensemble(&refs, &[x as f32]).unwrap();
        let want = crps_integral_oracle(&exact, x as f32 as f64);
        prop_assert!((got - want).abs() < 1e-6, "{} vs {}", got, want);
    }
}

#[test]
fn csi_threshold_monotone_constructed() {
    // pred over-forecasts a nested obs: CSI falls as fewer obs pixels survive
    let obs: Vec<f32> = vec![250.0, 200.0, 170.0, 140.0, 100.0, 50.0, 0.0, 0.0];
    let pred: Vec<f32> = vec![250.0, 250.0, 250.0, 250.0, 250.0, 250.0, 250.0, 0.0];
    let vals: Vec<f64> = CSI_THRESHOLDS.iter().map(|&t| csi(&pred, &obs, t).unwrap()).collect();
    assert!(vals.windows(2).all(|w| w[1] <= w[0]), "{vals:?}");
}

#[test]
fn pooled_tolerates_small_shift() {
    let (h, w) = (16, 16);
    let mut obs = vec![0.0f32; h * w];
    let mut pred = vec![0.0f32; h * w];
    for y in 4..6 {
        for x in 4..6 {
            obs[y * w + x] = 150.0;
            pred[y * w + x + 3] = 150.0;
        }
    }
    let raw = csi_mean(&pred, &obs).unwrap();
    let pooled = pooled_csi(&pred, &obs, h, w, 4).unwrap();
    assert!(pooled >= raw, "{pooled} < {raw}");
    let pooled16 = pooled_csi(&pred, &obs, h, w, 16).unwrap();
    assert_eq!(pooled16, 1.0);
}

#[test]
fn crps_is_proper_against_constants() {
    let ens = [10.0f32, 40.0, 45.0, 90.0, 200.0];
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let draws: Vec<f32> = (0..10_000).map(|_| ens[rng.random_range(0..ens.len())]).collect();
    let cols: Vec<Vec<f32>> = ens.iter().map(|&v| vec![v; draws.len()]).collect();
    let refs: Vec<&[f32]> = cols.iter().map(|c| c.as_slice()).collect();
    let own = crps_ensemble(&refs, &draws).unwrap();
    for c in (0..=255).step_by(5) {
        let constant = vec![c as f32; draws.len()];
        let score = crps_ensemble(&[&constant], &draws).unwrap();
        assert!(own <= score, "constant {c}: {score} < {own}");
    }
}
