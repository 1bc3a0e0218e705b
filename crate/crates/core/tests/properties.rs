use std::collections::HashSet;

use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::SeedableRng;

use proxtrace::classify::{confusion, metrics, train, Dataset, GaussianNb, Hyper, Lda, ModelKind, TrainedModel};
use proxtrace::features::{
    build_labeled, extract_windows, FeatureVector, Label, Observation, RiskPolicy, WindowingPolicy,
};
use proxtrace::protocol::{read_contact_log, write_contact_log, Device, DeviceId, InfectedBundle, ProtocolTimings, DAY_MS};
use proxtrace::radio::{distance_for_rss, mean_rss_at, moving_average, sample_rss, ChannelParams, Geometry};

fn label(b: bool) -> Label {
    if b {
        Label::High
    } else {
        Label::Low
    }
}

fn channel() -> impl Strategy<Value = ChannelParams> {
    (-80.0..-40.0f64, 1.0..4.0f64, 0.0..8.0f64, 0.0..12.0f64).prop_map(|(p0, n, s, b)| ChannelParams {
        ref_rss_dbm: p0,
        path_loss_exp: n,
        shadow_sigma_db: s,
        body_atten_db: b,
        ..ChannelParams::default()
    })
}

fn dataset(max_rows: usize, dim: usize) -> impl Strategy<Value = Dataset> {
    prop::collection::vec((prop::collection::vec(-90.0..-40.0f64, dim), any::<bool>()), 12..max_rows).prop_filter_map(
        "needs both classes with two rows each",
        |rows| {
            let (x, y): (Vec<_>, Vec<_>) = rows.into_iter().map(|(r, b)| (r, label(b))).unzip();
            let d = Dataset::new(x, y).ok()?;
            (d.count(Label::High) >= 2 && d.count(Label::Low) >= 2).then_some(d)
        },
    )
}

proptest! {
    #[test]
    fn rss_decreases_with_distance(p in channel(), d1 in 0.05..20.0f64, step in 0.01..20.0f64) {
        for g in [Geometry::Direct, Geometry::Crosswise] {
            prop_assert!(mean_rss_at(&p, d1 + step, g).unwrap() < mean_rss_at(&p, d1, g).unwrap());
        }
        let gap = mean_rss_at(&p, d1, Geometry::Direct).unwrap() - mean_rss_at(&p, d1, Geometry::Crosswise).unwrap();
        prop_assert!((gap - p.body_atten_db).abs() < 1e-9);
    }

    #[test]
    fn distance_is_recoverable(p in channel(), d in 0.05..50.0f64) {
        for g in [Geometry::Direct, Geometry::Crosswise] {
            let back = distance_for_rss(&p, mean_rss_at(&p, d, g).unwrap(), g);
            prop_assert!((back - d).abs() <= 1e-9 * d);
        }
    }

    #[test]
    fn moving_average_shape(series in prop::collection::vec(-100.0..-30.0f64, 0..80), w in 1usize..12) {
        let out = moving_average(&series, w).unwrap();
        prop_assert_eq!(out.len(), series.len());
        for (i, v) in out.iter().enumerate() {
            let lo = i.saturating_sub(w - 1);
            let expect = series[lo..=i].iter().sum::<f64>() / (i + 1 - lo) as f64;
            prop_assert!((v - expect).abs() < 1e-9);
        }
        prop_assert_eq!(moving_average(&series, 1).unwrap(), series);
    }

    #[test]
    fn metric_identities_and_label_symmetry(pairs in prop::collection::vec((any::<bool>(), any::<bool>()), 0..200)) {
        let t: Vec<Label> = pairs.iter().map(|p| label(p.0)).collect();
        let p: Vec<Label> = pairs.iter().map(|p| label(p.1)).collect();
        let c = confusion(&t, &p).unwrap();
        prop_assert_eq!(c.total(), pairs.len());
        let m = metrics(&c);
        for v in [m.precision, m.recall, m.f1, m.accuracy] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        if m.precision + m.recall > 0.0 {
            prop_assert!((m.f1 - 2.0 * m.precision * m.recall / (m.precision + m.recall)).abs() < 1e-15);
        }
        let tf: Vec<Label> = t.iter().map(|l| l.flipped()).collect();
        let pf: Vec<Label> = p.iter().map(|l| l.flipped()).collect();
        let s = confusion(&tf, &pf).unwrap();
        prop_assert_eq!((s.tp, s.tn, s.fp, s.fn_), (c.tn, c.tp, c.fn_, c.fp));
        prop_assert_eq!(metrics(&s).accuracy, m.accuracy);
    }

    #[test]
    fn dt_ignores_monotone_transforms(d in dataset(80, 3), col in 0usize..3) {
        let hyper = Hyper { min_leaf: 2, ..Hyper::default() };
        let a = train(ModelKind::Dt, &d, &hyper).unwrap();
        let mut t = d.clone();
        for r in t.x.iter_mut() {
            // Strictly increasing on the sampled range.
            r[col] = (r[col] / 10.0).powi(3) + r[col];
        }
        let b = train(ModelKind::Dt, &t, &hyper).unwrap();
        prop_assert_eq!(a.predict(&d.x).unwrap(), b.predict(&t.x).unwrap());
    }

    #[test]
    fn lda_posteriors_normalised(d in dataset(60, 4), q in prop::collection::vec(-100.0..-30.0f64, 4)) {
        let lda = Lda::fit(&d).unwrap();
        let (lo, hi) = lda.posteriors(&q);
        prop_assert!((lo + hi - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn nb_log_domain_matches_linear(d in dataset(60, 3), q in prop::collection::vec(-100.0..-30.0f64, 3)) {
        let nb = GaussianNb::fit(&d).unwrap();
        let model = train(ModelKind::Nb, &d, &Hyper::default()).unwrap();
        let lin = |l: Label| {
            let m = nb.class_moments(l);
            m.log_prior.exp()
                * q.iter()
                    .zip(&m.mean)
                    .zip(&m.var)
                    .map(|((x, mu), v)| (-(x - mu).powi(2) / (2.0 * v)).exp() / (2.0 * std::f64::consts::PI * v).sqrt())
                    .product::<f64>()
        };
        let (lo, hi) = (lin(Label::Low), lin(Label::High));
        prop_assume!(lo > 1e-290 && hi > 1e-290 && (hi - lo).abs() > 1e-9 * hi.max(lo));
        prop_assert_eq!(model.predict(std::slice::from_ref(&q)).unwrap()[0], label(hi > lo));
    }

    #[test]
    fn reload_is_identical(d in dataset(60, 5), kind in prop::sample::select(ModelKind::ALL.to_vec())) {
        let m = train(kind, &d, &Hyper { k: 3, ..Hyper::default() }).unwrap();
        let mut buf = Vec::new();
        m.save(&mut buf).unwrap();
        let back = TrainedModel::load(&buf[..]).unwrap();
        prop_assert_eq!(m.predict(&d.x).unwrap(), back.predict(&d.x).unwrap());
        prop_assert_eq!(m.scores(&d.x).unwrap(), back.scores(&d.x).unwrap());
    }

    #[test]
    fn feature_vector_bounds(rss in prop::collection::vec(-100.0..-30.0f64, 1..50)) {
        let f = FeatureVector::from_rss(&rss).unwrap();
        prop_assert_eq!(f.n_samples, rss.len());
        prop_assert!(f.min_rss <= f.mean_rss && f.mean_rss <= f.max_rss);
        prop_assert_eq!(f.rss_range, f.max_rss - f.min_rss);
    }

    #[test]
    fn labels_follow_ground_truth(
        dist in prop::collection::vec(0.2..6.0f64, 1..300),
        threshold in 0.5..4.0f64,
    ) {
        let obs: Vec<Observation> = dist
            .iter()
            .enumerate()
            .map(|(i, &d)| Observation { timestamp_ms: i as u64 * 100, rss_dbm: -60.0 - d, distance_m: Some(d) })
            .collect();
        let policy = WindowingPolicy::default();
        let risk = RiskPolicy::new(threshold).unwrap();
        let windows = extract_windows(&obs, &policy).unwrap();
        let rows = build_labeled(&[obs], &policy, &risk).unwrap();
        prop_assert_eq!(rows.len(), windows.len());
        for (w, r) in windows.iter().zip(&rows) {
            let med = w.representative_distance().unwrap();
            prop_assert_eq!(r.label.unwrap(), label(med < threshold));
        }
    }

    #[test]
    fn contact_log_round_trip(entries in prop::collection::vec((any::<[u8; 31]>(), -100.0..-30.0f64), 0..40)) {
        let mut dev = Device::new(DeviceId(1), ProtocolTimings::default().continuous_scan()).unwrap();
        let mut t = 1;
        for (p, rss) in &entries {
            while !dev.is_listening(t) {
                t += 1;
            }
            dev.receive(p, *rss, t).unwrap();
            t += 1;
        }
        let mut buf = Vec::new();
        write_contact_log(dev.contact_log(), &mut buf).unwrap();
        prop_assert_eq!(read_contact_log(&buf[..]).unwrap(), dev.contact_log().to_vec());
    }
}

#[test]
fn shadowing_is_unbiased_and_filter_reduces_variance() {
    let p = ChannelParams::default();
    let mut rng = StdRng::seed_from_u64(5);
    let n = 20_000;
    let draws: Vec<f64> = (0..n)
        .map(|_| sample_rss(&p, 2.0, Geometry::Direct, &mut rng).unwrap() - mean_rss_at(&p, 2.0, Geometry::Direct).unwrap())
        .collect();
    let mean = draws.iter().sum::<f64>() / n as f64;
    assert!(mean.abs() < 3.0 * p.shadow_sigma_db / (n as f64).sqrt(), "bias {mean}");

    let var = |v: &[f64]| {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64
    };
    for w in [2, 5, 10] {
        let smooth = moving_average(&draws, w).unwrap();
        assert!(var(&smooth[w..]) <= var(&draws));
    }
}

#[test]
fn retention_caps_stored_signatures() {
    let timings = ProtocolTimings::default();
    let mut dev = Device::new(DeviceId(9), timings).unwrap();
    let mut rng = StdRng::seed_from_u64(0);
    let mut t = 0;
    while t <= 20 * DAY_MS {
        dev.generate_signature(t, &mut rng);
        t += timings.t_gen_ms;
    }
    assert_eq!(dev.own_signatures().len(), 2016);
    let bundle = dev.publish_infected(t - timings.t_gen_ms);
    assert_eq!(bundle.len(), 2016);
    let mut bytes = Vec::new();
    bundle.write_records(&mut bytes).unwrap();
    assert_eq!(InfectedBundle::read_records(&bytes[..]).unwrap(), bundle);
    let distinct: HashSet<_> = bundle.signatures.iter().map(|s| s.payload).collect();
    assert_eq!(distinct.len(), 2016);
}
