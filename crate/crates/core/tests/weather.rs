use greenhouse_core::weather::{perturb, perturb_with_factors, resample, synthesize, PerturbRange, WeatherProfile};
use greenhouse_core::{WeatherRecord, WeatherSeries};
use proptest::prelude::*;

fn channel_means(s: &WeatherSeries) -> [f64; 4] {
    let mut m = [0.0; 4];
    for r in s.records() {
        for i in 0..4 {
            m[i] += r.d[i];
        }
    }
    m.map(|v| v / s.len() as f64)
}

proptest! {
    #[test]
    fn resampling_preserves_channel_means(
        values in prop::collection::vec(prop::array::uniform4(0.0f64..500.0), 3..300),
        block in 1usize..6,
    ) {
        let n = values.len() / block * block;
        prop_assume!(n > 0);
        let records: Vec<WeatherRecord> = values[..n].iter().enumerate().map(|(i, d)| WeatherRecord::new(i as f64 * 300.0, *d)).collect();
        let fine = WeatherSeries::new(records, 300.0).unwrap();
        let coarse = resample(&fine, 300.0 * block as f64).unwrap();
        prop_assert_eq!(coarse.len(), n / block);
        let (a, b) = (channel_means(&fine), channel_means(&coarse));
        for i in 0..4 {
            prop_assert!((a[i] - b[i]).abs() <= 1e-9 * a[i].abs().max(1e-300), "channel {}: {} vs {}", i, a[i], b[i]);
        }
    }

    #[test]
    fn perturbation_keeps_nonnegative_channels_nonnegative(seed in any::<u64>(), days in 1usize..3) {
        let base = synthesize(days, seed % 17, &WeatherProfile::default()).unwrap();
        let out = perturb(&base, seed);
        for r in out.records() {
            prop_assert!(r.d[0] >= 0.0 && r.d[1] >= 0.0 && r.d[3] >= 0.0);
        }
    }
}

#[test]
fn synthetic_weather_resamples_to_controller_period() {
    let fine = synthesize(3, 4, &WeatherProfile::default()).unwrap();
    let coarse = resample(&fine, 900.0).unwrap();
    assert_eq!(coarse.len(), 3 * 96);
    let (a, b) = (channel_means(&fine), channel_means(&coarse));
    for i in 0..4 {
        assert!((a[i] - b[i]).abs() <= 1e-9 * a[i].abs());
    }
}

/// Kolmogorov-Smirnov test of the per-channel factors against U(0.7, 1.3)
/// over 10⁴ seeds, at the 1% level (asymptotic critical value 1.628/√n).
#[test]
fn perturbation_factors_are_uniform() {
    let base = WeatherSeries::new(vec![WeatherRecord::new(0.0, [1.0; 4])], 900.0).unwrap();
    let n = 10_000;
    let mut per_channel: Vec<Vec<f64>> = (0..4).map(|_| Vec::with_capacity(n)).collect();
    for seed in 0..n as u64 {
        let (_, k) = perturb_with_factors(&base, seed, PerturbRange::default());
        for c in 0..4 {
            per_channel[c].push(k[c]);
        }
    }
    let critical = 1.628 / (n as f64).sqrt();
    for (c, mut xs) in per_channel.into_iter().enumerate() {
        xs.sort_by(f64::total_cmp);
        assert!(xs[0] >= 0.7 && xs[n - 1] < 1.3);
        let d = xs
            .iter()
            .enumerate()
            .map(|(i, x)| {
                let f = (x - 0.7) / 0.6;
                (f - i as f64 / n as f64).max((i + 1) as f64 / n as f64 - f)
            })
            .fold(0.0, f64::max);
        assert!(d < critical, "channel {c}: D = {d}");
    }
}
