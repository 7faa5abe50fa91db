mod common;

use std::collections::BTreeSet;
use std::io::{BufRead, BufReader, Write};
use std::net::TcpListener;
use std::path::Path;
use std::sync::{Arc, Mutex, OnceLock};
use std::thread;

use archive_census::cdx::{count_by_format_year, read_rows_csv};

use common::*;

fn pipeline() -> &'static PipelineRun {
    static RUN: OnceLock<(tempfile::TempDir, PipelineRun)> = OnceLock::new();
    &RUN.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let run = run_pipeline(dir.path());
        (dir, run)
    })
    .1
}

fn store_arg() -> &'static str {
    pipeline().store.to_str().unwrap()
}

fn csv_records(text: &str) -> Vec<csv::StringRecord> {
    csv::Reader::from_reader(text.as_bytes())
        .records()
        .map(Result::unwrap)
        .collect()
}

#[test]
fn query_accepts_urls_keys_and_nodes() {
    let by_url = run_ok(&[
        "query",
        "--store",
        store_arg(),
        "--channel",
        "https://www.youtube.com/user/smosh",
        "--closest",
        "201301",
    ]);
    let by_key = run_ok(&[
        "query",
        "--store",
        store_arg(),
        "--channel",
        "UCY30JRSgfhYXA6i6xX1erWg",
        "--closest",
        "201301",
    ]);
    let by_node = run_ok(&[
        "query",
        "--store",
        store_arg(),
        "--channel",
        "handle:smosh",
        "--closest",
        "201301",
    ]);
    assert_eq!(by_url, by_key);
    assert_eq!(by_url, by_node);
    let v: serde_json::Value = serde_json::from_str(&by_url).unwrap();
    assert_eq!(v["subs"], 6561257);

    let out = acensus(&[
        "query",
        "--store",
        store_arg(),
        "--channel",
        "nobody",
        "--closest",
        "2013",
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown channel"));
}

#[test]
fn sample_is_seeded_and_capped_at_population() {
    let a = run_ok(&["sample", "--store", store_arg(), "--n", "1", "--seed", "5"]);
    assert_eq!(
        a,
        run_ok(&["sample", "--store", store_arg(), "--n", "1", "--seed", "5"])
    );
    assert_eq!(csv_records(&a).len(), 1);
    let all = csv_records(&run_ok(&["sample", "--store", store_arg(), "--n", "1000"]));
    let census = std::fs::read_to_string(pipeline().store.join("census.csv")).unwrap();
    assert_eq!(all.len(), csv_records(&census).len());
    let by = csv_records(&run_ok(&[
        "sample",
        "--store",
        store_arg(),
        "--n",
        "1000",
        "--by",
        "handle",
    ]));
    assert!(!by.is_empty() && by.len() < all.len());
    assert!(by.iter().all(|r| r[2].contains("handle:")));
}

#[test]
fn rank_frequency_is_nonincreasing() {
    let rows = csv_records(&run_ok(&["rank-frequency", "--store", store_arg()]));
    assert!(!rows.is_empty());
    let counts: Vec<u64> = rows.iter().map(|r| r[1].parse().unwrap()).collect();
    assert!(counts.windows(2).all(|w| w[0] >= w[1]));
    let ranks: Vec<usize> = rows.iter().map(|r| r[0].parse().unwrap()).collect();
    assert_eq!(ranks, (1..=rows.len()).collect::<Vec<_>>());
}

#[test]
fn count_formats_matches_the_library() {
    let dir = tempfile::tempdir().unwrap();
    let rows = dir.path().join("rows.csv");
    let index = fixtures().join("accounting/index.cdx.gz");
    let mut args = vec![
        "enumerate",
        "--index",
        index.to_str().unwrap(),
        "-o",
        rows.to_str().unwrap(),
    ];
    for p in [
        "youtube.com/user/",
        "youtube.com/channel/",
        "youtube.com/c/",
        "youtube.com/@",
        "youtube.com/profile?user=",
    ] {
        args.extend(["--prefix", p]);
    }
    run_ok(&args);
    let refs = read_rows_csv(std::fs::File::open(&rows).unwrap()).unwrap();
    let mut expected = Vec::new();
    count_by_format_year(&refs).write_long_csv(&mut expected).unwrap();
    let got = run_ok(&["count-formats", "--input", rows.to_str().unwrap(), "--long"]);
    assert_eq!(got, String::from_utf8(expected).unwrap());
    let seq = run_ok(&[
        "--sequential",
        "count-formats",
        "--input",
        rows.to_str().unwrap(),
        "--long",
    ]);
    assert_eq!(seq, got);
}

#[test]
fn validate_reports_overlap_and_correlations() {
    let v = fixtures().join("validation");
    let out = csv_records(&run_ok(&[
        "validate",
        "--ours",
        v.join("ours_2010_12.csv").to_str().unwrap(),
        "--reference",
        v.join("reference_2010_12.csv").to_str().unwrap(),
    ]));
    assert_eq!(out.len(), 1);
    assert_eq!(&out[0][1], "500");
    assert_eq!(&out[0][2], "485");
    assert!(out[0][3].parse::<f64>().unwrap() >= 0.99);
    assert!(out[0][4].parse::<f64>().unwrap() >= 0.99);
}

#[test]
fn cohort_writes_rows_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("report.json");
    let spec = fixtures().join("cohorts/monthly_2014_2016.toml");
    let out = run_ok(&[
        "cohort",
        "--spec",
        spec.to_str().unwrap(),
        "--store",
        store_arg(),
        "--report",
        report.to_str().unwrap(),
    ]);
    let rows: Vec<serde_json::Value> = out.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert!(!rows.is_empty());
    let cells: BTreeSet<String> = rows
        .iter()
        .map(|r| format!("{}|{}|{}", r["group"], r["key"], r["period"]))
        .collect();
    assert_eq!(cells.len(), rows.len());
    let rep: serde_json::Value = serde_json::from_slice(&std::fs::read(&report).unwrap()).unwrap();
    let groups = rep["groups"].as_array().unwrap();
    assert_eq!(groups.len(), 2);
    let captures: u64 = groups.iter().map(|g| g["captures"].as_u64().unwrap()).sum();
    assert_eq!(captures, rows.len() as u64);
    for g in groups {
        assert_eq!(
            g["shortfall"].as_u64().unwrap(),
            g["budget"].as_u64().unwrap() - g["captures"].as_u64().unwrap()
        );
    }
}

#[test]
fn coverage_estimate_from_a_sample_plan() {
    let dir = tempfile::tempdir().unwrap();
    let plan = csv_records(&run_ok(&[
        "stratified-sample",
        "--store",
        store_arg(),
        "--per-stratum",
        "5",
        "--seed",
        "3",
    ]));
    let census = csv_records(&std::fs::read_to_string(pipeline().store.join("census.csv")).unwrap());
    assert_eq!(plan.len(), census.len());
    let videos = dir.path().join("videos.csv");
    let mut f = std::fs::File::create(&videos).unwrap();
    writeln!(f, "key,video_count").unwrap();
    for r in &plan {
        writeln!(f, "{},12", &r[2]).unwrap();
    }
    drop(f);
    let est: serde_json::Value = serde_json::from_str(&run_ok(&[
        "estimate-coverage",
        "--store",
        store_arg(),
        "--videos",
        videos.to_str().unwrap(),
        "--known-ids",
        "1000",
    ]))
    .unwrap();
    assert_eq!(est["weighted_mean"], 12.0);
    assert_eq!(est["ci95"][0], 12_000.0);
    assert_eq!(est["ci95"][1], 12_000.0);
}

#[test]
fn fit_growth_recovers_a_noiseless_curve() {
    let dir = tempfile::tempdir().unwrap();
    let series = dir.path().join("series.csv");
    let mut f = std::fs::File::create(&series).unwrap();
    writeln!(f, "key,timestamp,subs,subs_exact,source_url").unwrap();
    let start = chrono::NaiveDate::from_ymd_opt(2012, 1, 1).unwrap();
    for i in 0..40 {
        let day = i as f64 * 5.0;
        let subs = 2.0e6 / (1.0 + (-0.04 * (day - 90.0)).exp());
        let t = start + chrono::Duration::days(i * 5);
        writeln!(f, "c1,{}000000,{},true,u", t.format("%Y%m%d"), subs.round()).unwrap();
    }
    drop(f);
    let residuals = dir.path().join("res.csv");
    let out = run_ok(&[
        "fit-growth",
        "--series",
        series.to_str().unwrap(),
        "--residuals",
        residuals.to_str().unwrap(),
    ]);
    let v: serde_json::Value = serde_json::from_str(out.lines().next().unwrap()).unwrap();
    assert_eq!(v["key"], "c1");
    let k = v["fit"]["k"].as_f64().unwrap();
    let r = v["fit"]["r"].as_f64().unwrap();
    assert!((k / 2.0e6 - 1.0).abs() < 0.01, "{k}");
    assert!((r / 0.04 - 1.0).abs() < 0.01, "{r}");
    assert_eq!(csv_records(&std::fs::read_to_string(residuals).unwrap()).len(), 40);
}

/// Index server with three pages of two rows. Page 1 answers 404 until
/// `healthy` is set.
fn index_server(healthy: Arc<Mutex<bool>>, log: Arc<Mutex<Vec<usize>>>) -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let base = format!("http://{}/cdx", listener.local_addr().unwrap());
    thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(stream) = stream else { break };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut request = String::new();
            reader.read_line(&mut request).unwrap();
            let mut line = String::new();
            while reader.read_line(&mut line).is_ok_and(|n| n > 0) && line != "\r\n" {
                line.clear();
            }
            let page: usize = request
                .split("page=")
                .nth(1)
                .and_then(|s| s.split('&').next())
                .unwrap()
                .parse()
                .unwrap();
            log.lock().unwrap().push(page);
            let (status, body) = if page == 1 && !*healthy.lock().unwrap() {
                (404, String::new())
            } else if page < 3 {
                let rows: Vec<String> = (0..2)
                    .map(|j| {
                        let i = page * 2 + j;
                        format!(r#"["com,youtube)/user/u{i}","2011010{}000000","http://www.youtube.com/user/u{i}","text/html","200","D{i}","10"]"#, j + 1)
                    })
                    .collect();
                (200, format!("[{}]\n", rows.join(",\n")))
            } else {
                (200, "[]\n".to_string())
            };
            let mut out = stream;
            let _ = write!(
                out,
                "HTTP/1.1 {status} X\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            );
        }
    });
    base
}

fn enumerate_remote(endpoint: &str, checkpoint: &Path, out: &Path) -> std::process::Output {
    acensus(&[
        "enumerate",
        "--cdx-endpoint",
        endpoint,
        "--prefix",
        "youtube.com/user/",
        "--rate",
        "0",
        "--checkpoint-dir",
        checkpoint.to_str().unwrap(),
        "-o",
        out.to_str().unwrap(),
    ])
}

#[test]
fn interrupted_enumeration_resumes_without_gaps() {
    let healthy = Arc::new(Mutex::new(false));
    let log = Arc::new(Mutex::new(Vec::new()));
    let endpoint = index_server(healthy.clone(), log.clone());
    let dir = tempfile::tempdir().unwrap();
    let (ckpt, out) = (dir.path().join("ckpt"), dir.path().join("rows.csv"));

    let first = enumerate_remote(&endpoint, &ckpt, &out);
    assert!(!first.status.success());
    assert_eq!(*log.lock().unwrap(), [0, 1]);

    *healthy.lock().unwrap() = true;
    log.lock().unwrap().clear();
    let second = enumerate_remote(&endpoint, &ckpt, &out);
    assert!(second.status.success(), "{}", String::from_utf8_lossy(&second.stderr));
    assert_eq!(*log.lock().unwrap(), [1, 2, 3]);

    let resumed = std::fs::read_to_string(&out).unwrap();
    let fresh_dir = tempfile::tempdir().unwrap();
    let fresh_out = fresh_dir.path().join("rows.csv");
    assert!(enumerate_remote(&endpoint, &fresh_dir.path().join("ckpt"), &fresh_out)
        .status
        .success());
    assert_eq!(resumed, std::fs::read_to_string(&fresh_out).unwrap());
    assert_eq!(csv_records(&resumed).len(), 6);
}
