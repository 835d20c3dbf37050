use std::collections::HashMap;

use ec2st::data::{
    blob_sample, discrete_toy_stream, load_csv, write_csv, BatchStream, BlobConfig, CsvSchema, DiscreteToyConfig,
    LabeledSample, Source,
};
use ec2st::Error;

fn nearest_mode(config: &BlobConfig, p: &[f64]) -> usize {
    let centers = config.centers();
    (0..9)
        .min_by(|&a, &b| {
            let da = (p[0] - centers[a][0]).powi(2) + (p[1] - centers[a][1]).powi(2);
            let db = (p[0] - centers[b][0]).powi(2) + (p[1] - centers[b][1]).powi(2);
            da.total_cmp(&db)
        })
        .unwrap()
}

#[test]
fn blob_modes_and_covariances_follow_the_law_of_large_numbers() {
    let sigma = 0.5;
    let config = BlobConfig {
        spacing: 5.0,
        sigma0: sigma,
        sigma1: sigma,
    };
    let n = 90_000;
    let points = blob_sample(&config, n, 0, 42);
    assert_eq!(points.len(), n);
    let centers = config.centers();
    let mut groups: Vec<Vec<[f64; 2]>> = vec![Vec::new(); 9];
    for p in &points {
        let m = nearest_mode(&config, p);
        groups[m].push([p[0] - centers[m][0], p[1] - centers[m][1]]);
    }
    let expected = n as f64 / 9.0;
    let sd = (n as f64 * (1.0 / 9.0) * (8.0 / 9.0)).sqrt();
    let s2 = sigma * sigma;
    for g in &groups {
        assert!((g.len() as f64 - expected).abs() <= 3.0 * sd, "count {}", g.len());
        let k = g.len() as f64;
        let mx = g.iter().map(|d| d[0]).sum::<f64>() / k;
        let my = g.iter().map(|d| d[1]).sum::<f64>() / k;
        let cxx = g.iter().map(|d| (d[0] - mx).powi(2)).sum::<f64>() / (k - 1.0);
        let cyy = g.iter().map(|d| (d[1] - my).powi(2)).sum::<f64>() / (k - 1.0);
        let cxy = g.iter().map(|d| (d[0] - mx) * (d[1] - my)).sum::<f64>() / (k - 1.0);
        assert!((cxx - s2).abs() <= 0.05 * s2 && (cyy - s2).abs() <= 0.05 * s2, "{cxx} {cyy}");
        assert!(cxy.abs() <= 0.05 * s2, "{cxy}");
    }
}

#[test]
fn plug_in_mutual_information_agrees_with_exact_value() {
    let table = DiscreteToyConfig {
        table: vec![[0.4, 0.1], [0.1, 0.4]],
    };
    let exact = table.mutual_information();
    let stream = discrete_toy_stream(table.clone(), 1000, false, 8).unwrap();
    assert_eq!(stream.exact_mutual_information(), Some(exact));
    let mut counts = HashMap::new();
    let mut total = 0.0f64;
    for batch in stream.take(1000) {
        for s in batch {
            *counts.entry((s.x[0] as usize, s.y)).or_insert(0.0f64) += 1.0;
            total += 1.0;
        }
    }
    assert_eq!(total, 1e6);
    let pxy = |x: usize, y: u8| counts.get(&(x, y)).copied().unwrap_or(0.0) / total;
    let px = |x: usize| pxy(x, 0) + pxy(x, 1);
    let py = |y: u8| pxy(0, y) + pxy(1, y);
    let mut plug_in = 0.0f64;
    for x in 0..2 {
        for y in 0..2u8 {
            let p = pxy(x, y);
            if p > 0.0 {
                plug_in += p * (p / (px(x) * py(y))).ln();
            }
        }
    }
    assert!((plug_in - exact).abs() <= 1e-3, "{plug_in} vs {exact}");
    // the tolerance above is under two standard errors; check the sampler cell by cell too
    for (x, row) in table.table.iter().enumerate() {
        for (y, &p) in row.iter().enumerate() {
            let sd = (p * (1.0 - p) / total).sqrt();
            assert!((pxy(x, y as u8) - p).abs() <= 4.0 * sd);
        }
    }
}

#[test]
fn toy_tables_have_known_information() {
    let dependent = DiscreteToyConfig {
        table: vec![[0.5, 0.0], [0.0, 0.5]],
    };
    assert!((dependent.mutual_information() - 2f64.ln()).abs() < 1e-15);
    let independent = DiscreteToyConfig {
        table: vec![[0.12, 0.18], [0.28, 0.42]],
    };
    assert!(independent.mutual_information().abs() < 1e-12);
    assert!(DiscreteToyConfig { table: vec![[0.5, 0.6]] }.validate().is_err());
}

#[test]
fn streams_are_pure_functions_of_seed_and_cursor() {
    let source = Source::Blob(BlobConfig::default());
    let a: Vec<Vec<LabeledSample>> = BatchStream::new(source.clone(), 90, true, 5).unwrap().take(4).collect();
    let b: Vec<Vec<LabeledSample>> = BatchStream::new(source.clone(), 90, true, 5).unwrap().take(4).collect();
    assert_eq!(a, b);
    let mut c = BatchStream::new(source, 90, true, 5).unwrap();
    c.seek(2);
    assert_eq!(c.next().unwrap(), a[2]);
    assert_eq!(c.batch_at(3).unwrap(), a[3]);
    for batch in &a {
        assert_eq!(batch.iter().filter(|s| s.y == 1).count(), 45);
    }
}

#[test]
fn csv_round_trip_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let samples = vec![
        LabeledSample::new(vec![0.1, -2.5e-8], 0).unwrap(),
        LabeledSample::new(vec![1.0 / 3.0, 7.0], 1).unwrap(),
    ];
    let path = dir.path().join("data.csv");
    write_csv(&path, &samples).unwrap();
    assert_eq!(load_csv(&path, &CsvSchema::default()).unwrap(), samples);

    let write = |name: &str, text: &str| {
        let p = dir.path().join(name);
        std::fs::write(&p, text).unwrap();
        p
    };
    let two_rows = write("ok.csv", "a,b,label\n1,2,0\n3,4,1\n");
    assert_eq!(load_csv(&two_rows, &CsvSchema::default()).unwrap().len(), 2);
    let picked = CsvSchema {
        features: Some(vec!["b".into()]),
        label: "label".into(),
    };
    assert_eq!(load_csv(&two_rows, &picked).unwrap()[1].x, vec![4.0]);

    let missing = CsvSchema {
        features: Some(vec!["zz".into()]),
        label: "label".into(),
    };
    match load_csv(&two_rows, &missing) {
        Err(Error::Schema(msg)) => assert!(msg.contains("zz"), "{msg}"),
        other => panic!("expected schema error, got {other:?}"),
    }
    let bad_number = write("bad.csv", "a,label\n1,0\nx,1\n");
    match load_csv(&bad_number, &CsvSchema::default()) {
        Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
        other => panic!("expected parse error, got {other:?}"),
    }
    let bad_label = write("label.csv", "a,label\n1,2\n");
    assert!(matches!(load_csv(&bad_label, &CsvSchema::default()), Err(Error::Schema(_))));
}
