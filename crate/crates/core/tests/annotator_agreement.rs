use omniweather::cot::{annotate_from_frames, Attribute};
use omniweather::stormsim::{synth_event, GeneratorConfig};

const CHECKED: [Attribute; 4] =
    [Attribute::MotionDirection, Attribute::InitialPosition, Attribute::MaxPixelLevel, Attribute::IntensityEvolution];

#[test]
fn frame_annotator_matches_generator_truth_on_sweep() {
    let cfg = GeneratorConfig::default();
    let mut agree = [0usize; 4];
    let mut disagreements = Vec::new();
    let n = 500;
    for seed in 0..n {
        let ev = synth_event(seed, &cfg).unwrap();
        let seen = annotate_from_frames(&ev.frames).unwrap();
        for (k, a) in CHECKED.iter().enumerate() {
            if seen.choice(*a) == ev.truth.choice(*a) {
                agree[k] += 1;
            } else {
                disagreements.push((
                    seed,
                    a.key(),
                    ev.params.scenario,
                    ev.truth.choice(*a).to_string(),
                    seen.choice(*a).to_string(),
                ));
            }
        }
    }
    for d in &disagreements {
        eprintln!("seed {} {} [{}]: truth {:?} frames {:?}", d.0, d.1, d.2, d.3, d.4);
    }
    for (k, a) in CHECKED.iter().enumerate() {
        let rate = agree[k] as f64 / n as f64;
        eprintln!("{}: {rate:.3}", a.key());
        assert!(rate >= 0.95, "{} agreement {rate}", a.key());
    }
}

#[test]
fn sweep_covers_every_checked_option() {
    use std::collections::BTreeMap;
    let cfg = GeneratorConfig::default();
    let mut seen: BTreeMap<&str, BTreeMap<String, usize>> = BTreeMap::new();
    for seed in 0..500 {
        let ev = synth_event(seed, &cfg).unwrap();
        for a in Attribute::ALL {
            *seen.entry(a.key()).or_default().entry(ev.truth.choice(a).to_string()).or_default() += 1;
        }
        *seen.entry("scenario").or_default().entry(ev.params.scenario.to_string()).or_default() += 1;
    }
    for (k, v) in &seen {
        eprintln!("{k}: {v:?}");
    }
    for a in CHECKED {
        let got = &seen[a.key()];
        for opt in a.options().iter().filter(|o| **o != "no clear main system") {
            assert!(got.contains_key(*opt), "{}: option {opt:?} never generated", a.key());
        }
    }
}
