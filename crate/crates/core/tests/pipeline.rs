mod common;

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::net::TcpListener;
use std::time::Duration;

use common::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use trendwatch::evaluation::{quantile_threshold, score_power_delay, StatPanel};
use trendwatch::fusion::{fuse_region, stouffer_combine};
use trendwatch::ground_truth::{consensus_trends, Interval, RegionTruth, TrendIntervalSet};
use trendwatch::regression::{fit_linear_log, FitSeries, Model};
use trendwatch::smoother::GrowthSeries;
use trendwatch::synthetic::{desk_scenario, generate_panel, DeskParams};
use trendwatch::timeseries::epidata::{fetch_epidata, EpidataQuery, FetchOptions, UreqTransport};
use trendwatch::timeseries::{read_panel_csv, write_panel_csv, PanelSchema, Window};
use trendwatch::Day;

fn day(s: &str) -> Day {
    Day::parse(s).unwrap()
}

fn phi(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// Upper-tail normal quantile by bisection on the CDF.
fn isf_oracle(p: f64) -> f64 {
    let (mut lo, mut hi) = (-40.0, 40.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if 1.0 - phi(mid) > p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[test]
fn stouffer_matches_weighted_formula() {
    let ps = [0.01, 0.3, 0.7, 0.045];
    let ws = [1.0, 2.0, 0.5, 3.0];
    let num: f64 = ps.iter().zip(&ws).map(|(p, w)| w * isf_oracle(*p)).sum();
    let den = ws.iter().map(|w| w * w).sum::<f64>().sqrt();
    let (z, p) = stouffer_combine(&ps, &ws).unwrap();
    assert!((z - num / den).abs() < 1e-8);
    assert!((p - (1.0 - phi(num / den))).abs() < 1e-10);
}

#[test]
fn stouffer_of_one_p_value_is_identity() {
    for p in [1e-6, 0.02, 0.5, 0.97] {
        let (_, q) = stouffer_combine(&[p], &[2.5]).unwrap();
        assert!((q - p).abs() < 1e-12 * (1.0 + 1.0 / p));
    }
}

#[test]
fn stouffer_rejects_bad_weights() {
    assert!(stouffer_combine(&[0.5], &[0.0]).is_err());
    assert!(stouffer_combine(&[0.5, 0.5], &[1.0]).is_err());
    assert!(stouffer_combine(&[], &[]).is_err());
    assert!(stouffer_combine(&[f64::NAN], &[1.0]).is_err());
}

#[test]
fn fused_null_p_values_are_uniform() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for k in [2, 5, 12] {
        let draws: Vec<f64> = (0..3000)
            .map(|_| {
                let ps: Vec<f64> = (0..k).map(|_| rng.random::<f64>()).collect();
                stouffer_combine(&ps, &vec![1.0; k]).unwrap().1
            })
            .collect();
        let d = ks_statistic(&draws, |x| x.clamp(0.0, 1.0));
        assert!(d < ks_critical_01(draws.len()), "k={k}: D={d}");
    }
}

#[test]
fn fusion_skips_unconverged_streams() {
    let d = day("2021-03-01");
    let fit = |vals: &[f64]| fit_linear_log(&Window::from_values(vals.to_vec()).unwrap()).unwrap();
    let mut a = FitSeries::new("R1", "a", 5, Model::LinearLog);
    a.fits.insert(d, fit(&[1.0, 2.0, 4.0, 7.0, 16.0]));
    let mut b = FitSeries::new("R1", "b", 5, Model::LinearLog);
    let mut bad = fit(&[3.0, 2.0, 2.0, 3.0, 1.0]);
    bad.converged = false;
    b.fits.insert(d, bad);
    let f = fuse_region(&[a.clone(), b], &BTreeMap::new()).unwrap();
    let pt = f.get(d).unwrap();
    assert_eq!(pt.streams, ["a"]);
    assert!((pt.p - a.fits[&d].p_one_sided).abs() < 1e-12);
}

#[test]
fn power_and_delay_on_a_hand_example() {
    let mut truth = TrendIntervalSet::default();
    truth.regions.insert(
        "A".into(),
        RegionTruth {
            span: Some(Interval::new(day("2021-01-01"), day("2021-03-01"))),
            increasing: vec![
                Interval::new(day("2021-01-10"), day("2021-01-30")),
                Interval::new(day("2021-02-10"), day("2021-02-20")),
            ],
            null: vec![Interval::new(day("2021-01-01"), day("2021-01-09"))],
        },
    );
    let alarms = BTreeMap::from([(
        "A".to_string(),
        vec![day("2021-01-05"), day("2021-01-14"), day("2021-02-25")],
    )]);
    let stats: StatPanel = BTreeMap::from([(
        "A".to_string(),
        day("2021-01-01")
            .range_inclusive(day("2021-03-01"))
            .map(|d| (d, 0.0))
            .collect(),
    )]);
    let r = score_power_delay(&alarms, &truth, 60, &stats).unwrap();
    assert_eq!(r.n_intervals, 2);
    assert_eq!(r.n_detected, 1);
    assert_eq!(r.power, 50.0);
    // One detection 4 days in, one miss charged the full 60.
    assert_eq!(r.mean_delay, 32.0);
    assert_eq!(r.n_null_dates, 9);
    assert!((r.realized_fpr - 1.0 / 9.0).abs() < 1e-15);
}

#[test]
fn epidata_over_http() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let server = std::thread::spawn(move || {
        let mut seen = Vec::new();
        for stream in listener.incoming().take(2) {
            let mut stream = stream.unwrap();
            let mut line = String::new();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            reader.read_line(&mut line).unwrap();
            loop {
                let mut h = String::new();
                reader.read_line(&mut h).unwrap();
                if h == "\r\n" || h.is_empty() {
                    break;
                }
            }
            let body = if line.contains("20210101-20210102") {
                r#"{"result":1,"message":"success","epidata":[
                    {"geo_value":"ca","time_value":20210101,"value":5},
                    {"geo_value":"ca","time_value":20210102,"value":7}]}"#
            } else {
                r#"{"result":1,"message":"success","epidata":[
                    {"geo_value":"ca","time_value":20210103,"value":null}]}"#
            };
            seen.push(line);
            write!(
                stream,
                "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            )
            .unwrap();
        }
        seen
    });
    let q = EpidataQuery {
        data_source: "hhs".into(),
        signal: "admissions".into(),
        geo_type: "state".into(),
        geo_values: vec!["ca".into()],
        start: day("2021-01-01"),
        end: day("2021-01-03"),
    };
    let opts = FetchOptions {
        page_days: 2,
        ..FetchOptions::default()
    };
    let t = UreqTransport::new(Duration::from_secs(5));
    let res = fetch_epidata(&format!("http://{addr}/epidata/"), &q, &opts, &t).unwrap();
    let lines = server.join().unwrap();
    assert!(lines[0].contains("signal=admissions"));
    assert_eq!(res.panel.get("ca", "admissions", day("2021-01-02")), Some(7.0));
    assert_eq!(res.panel.n_observations(), 2);
    assert_eq!(res.warnings.len(), 1);
}

#[test]
fn synthetic_panel_round_trips_and_is_reproducible() {
    let p = DeskParams {
        n_regions: 6,
        n_days: 200,
        n_clusters: 2,
        ..DeskParams::default()
    };
    let spec = desk_scenario(&p);
    let (a, ta) = generate_panel(&spec).unwrap();
    let (b, tb) = generate_panel(&spec).unwrap();
    assert_eq!(ta, tb);
    let mut ca = Vec::new();
    let mut cb = Vec::new();
    write_panel_csv(&a, &mut ca).unwrap();
    write_panel_csv(&b, &mut cb).unwrap();
    assert_eq!(ca, cb);
    let back = read_panel_csv(ca.as_slice(), &PanelSchema::default()).unwrap();
    assert!(back.rejected.is_empty());
    let mut again = Vec::new();
    write_panel_csv(&back.panel, &mut again).unwrap();
    assert_eq!(ca, again);
    for rt in ta.regions.values() {
        for iv in &rt.increasing {
            assert!(rt.null.iter().all(|n| n.end < iv.start || n.start > iv.end));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn threshold_respects_fpr(vals in prop::collection::vec(-5.0f64..5.0, 100..400), fpr in 0.0f64..0.3) {
        let q = quantile_threshold(&vals, fpr).unwrap();
        let above = vals.iter().filter(|&&v| v > q).count();
        prop_assert!(above as f64 <= fpr * vals.len() as f64 + 1e-9);
        // Lowering the threshold to the next observed value below would
        // exceed the budget, unless q is already the minimum.
        let below = vals.iter().copied().filter(|&v| v < q).fold(f64::NEG_INFINITY, f64::max);
        if below.is_finite() {
            let above2 = vals.iter().filter(|&&v| v > below).count();
            prop_assert!(above2 as f64 > fpr * vals.len() as f64 - 1e-9);
        }
    }

    #[test]
    fn consensus_is_inside_every_positive_set(
        series in prop::collection::vec(prop::collection::vec(-0.05f64..0.05, 60), 1..4),
        min_duration in 1usize..8,
    ) {
        let start = day("2021-01-01");
        let gs: Vec<GrowthSeries> = series.iter().map(|v| GrowthSeries { start, values: v.clone() }).collect();
        let rt = consensus_trends(&gs, min_duration, 0.0).unwrap();
        for iv in &rt.increasing {
            prop_assert!(iv.len() >= min_duration);
            for d in iv.start.range_inclusive(iv.end) {
                prop_assert!(gs.iter().all(|g| g.get(d).unwrap() > 0.0));
                prop_assert!(!rt.is_null(d));
            }
        }
        for iv in &rt.null {
            for d in iv.start.range_inclusive(iv.end) {
                prop_assert!(gs.iter().all(|g| g.get(d).unwrap() <= 0.0));
            }
        }
    }
}
