use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::path::Path;
use std::process::{Command, Output, Stdio};

const ELEVATOR_LIGHTS_QUERY: &str = r#"SELECT ?level ?space ?ele ?ucode   WHERE { {
 daiwa_bot:Elevator bot:intersectsZone ?level .
 ?level  bot:hasSpace ?space .
 ?space bot:hasElement ?ele .
 ?ele daiwa_bot:element_type "Light" .
 ?ele daiwa_bot:ucode ?ucode .
 ?ele rdf:type bot:Element .
 FILTER (?level = daiwa_bot:Level1)
} }"#;

fn buildkg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_buildkg"))
        .args(args)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn simulate_into(dir: &Path, days: &str) {
    let o = buildkg(&[
        "simulate",
        "--days",
        days,
        "--seed",
        "7",
        "--out",
        path(dir),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn query_prints_csv() {
    let dir = tempfile::tempdir().unwrap();
    let q = dir.path().join("q.rq");
    fs::write(&q, ELEVATOR_LIGHTS_QUERY).unwrap();
    let o = buildkg(&["query", path(&q)]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(
        stdout(&o),
        "level,space,ele,ucode\n\
         daiwa_bot:Level1,daiwa_bot:A101,daiwa_bot:A101_light,A101_light\n\
         daiwa_bot:Level1,daiwa_bot:A102,daiwa_bot:A102_light,A102_light\n"
    );

    fs::write(&q, ELEVATOR_LIGHTS_QUERY.replace("Level1", "Level7")).unwrap();
    let o = buildkg(&["query", path(&q)]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o), "level,space,ele,ucode\n");
}

#[test]
fn query_syntax_error_exits_2_with_position() {
    let dir = tempfile::tempdir().unwrap();
    let q = dir.path().join("q.rq");
    fs::write(&q, "SELECT ?x WHERE {\n  ?x bot:hasSpace }").unwrap();
    let o = buildkg(&["query", path(&q)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 2, column"), "{}", stderr(&o));
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(buildkg(&["frobnicate"]).status.code(), Some(2));
    let o = buildkg(&["pipeline", "--events", "x", "--out", "y", "--coarse-s", "0"]);
    assert_eq!(o.status.code(), Some(2));
    let o = buildkg(&[
        "pipeline", "--events", "x", "--out", "y", "--pbar", "mass:2",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(buildkg(&["--help"]).status.code(), Some(0));
}

#[test]
fn missing_events_fail_in_ingest() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("none.jsonl");
    let o = buildkg(&[
        "pipeline",
        "--events",
        path(&missing),
        "--out",
        path(&dir.path().join("out")),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(
        stderr(&o).contains("stage `ingest` failed"),
        "{}",
        stderr(&o)
    );
}

#[test]
fn simulate_and_pipeline_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    simulate_into(&a, "15");
    simulate_into(&b, "15");
    for f in ["samples.jsonl", "truth.csv"] {
        assert_eq!(
            fs::read(a.join(f)).unwrap(),
            fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }

    let events = a.join("samples.jsonl");
    let (r1, r2) = (dir.path().join("r1"), dir.path().join("r2"));
    for out in [&r1, &r2] {
        let o = buildkg(&["pipeline", "--events", path(&events), "--out", path(out)]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    for f in [
        "stats.csv",
        "anomalies.csv",
        "model.json",
        "verdicts.csv",
        "report.csv",
    ] {
        assert_eq!(
            fs::read(r1.join(f)).unwrap(),
            fs::read(r2.join(f)).unwrap(),
            "{f}"
        );
    }
    let report = fs::read_to_string(r1.join("report.csv")).unwrap();
    let lines: Vec<&str> = report.lines().collect();
    assert_eq!(lines[0], "space,count_room,count_conj,probability");
    assert!(lines[1].starts_with("Count,"));
    assert!(lines.len() > 2);
}

#[test]
fn stagewise_commands_match_the_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let sim = dir.path().join("sim");
    simulate_into(&sim, "15");
    let events = sim.join("samples.jsonl");
    let run = dir.path().join("run");
    assert!(
        buildkg(&["pipeline", "--events", path(&events), "--out", path(&run)])
            .status
            .success()
    );

    let model = dir.path().join("model.json");
    let verdicts = dir.path().join("verdicts.csv");
    let report = dir.path().join("report.csv");
    let stats = dir.path().join("stats.csv");
    let steps: [&[&str]; 4] = [
        &[
            "calibrate",
            "--events",
            path(&events),
            "--out",
            path(&model),
        ],
        &[
            "detect",
            "--events",
            path(&events),
            "--model",
            path(&model),
            "--out",
            path(&verdicts),
        ],
        &[
            "report",
            "--events",
            path(&events),
            "--verdicts",
            path(&verdicts),
            "--out",
            path(&report),
        ],
        &["stats", "--events", path(&events), "--out", path(&stats)],
    ];
    for args in steps {
        let o = buildkg(args);
        assert!(o.status.success(), "{args:?}: {}", stderr(&o));
    }
    for (mine, theirs) in [
        (&model, "model.json"),
        (&verdicts, "verdicts.csv"),
        (&report, "report.csv"),
        (&stats, "stats.csv"),
    ] {
        assert_eq!(
            fs::read(mine).unwrap(),
            fs::read(run.join(theirs)).unwrap(),
            "{theirs}"
        );
    }

    let o = buildkg(&[
        "score",
        "--truth",
        path(&sim.join("truth.csv")),
        "--verdicts",
        path(&verdicts),
        "--direction",
        "lightoff-elevator",
    ]);
    assert!(o.status.success());
    assert!(stdout(&o).starts_with("precision "), "{}", stdout(&o));
}

fn http_get(addr: &str, target: &str) -> (u16, String) {
    let mut s = TcpStream::connect(addr).unwrap();
    write!(
        s,
        "GET {target} HTTP/1.1\r\nHost: {addr}\r\nConnection: close\r\n\r\n"
    )
    .unwrap();
    let mut response = String::new();
    s.read_to_string(&mut response).unwrap();
    let status = response.split(' ').nth(1).unwrap().parse().unwrap();
    let body = response
        .split_once("\r\n\r\n")
        .map(|(_, b)| b.to_owned())
        .unwrap_or_default();
    (status, body)
}

#[test]
fn serve_answers_status_requests() {
    let dir = tempfile::tempdir().unwrap();
    let events = dir.path().join("s.jsonl");
    fs::write(
        &events,
        "{\"ucode\":\"A302_light\",\"name\":\"A302 light\",\"data\":{\"instance\":0,\"time\":\"2023-05-01T00:00:00Z\"}}\n\
         {\"ucode\":\"A302_light\",\"name\":\"A302 light\",\"data\":{\"instance\":1,\"time\":\"2023-05-01T09:00:00Z\"}}\n",
    )
    .unwrap();
    let mut child = Command::new(env!("CARGO_BIN_EXE_buildkg"))
        .args(["serve", "--events", path(&events), "--bind", "127.0.0.1:0"])
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap())
        .read_line(&mut line)
        .unwrap();
    let addr = line
        .trim()
        .trim_start_matches("listening on http://")
        .to_owned();

    let (code, body) = http_get(&addr, "/v1/status?ucode=A302_light");
    let json: serde_json::Value = serde_json::from_str(&body).unwrap();
    let ranged = http_get(
        &addr,
        "/v1/status?ucode=A302_light&from=2023-05-01T08:00:00Z",
    );
    let unknown = http_get(&addr, "/v1/status?ucode=Ghost").0;
    let bad_range = http_get(&addr, "/v1/status?ucode=A302_light&from=noon").0;
    let no_ucode = http_get(&addr, "/v1/status").0;
    child.kill().unwrap();
    child.wait().unwrap();

    assert_eq!(code, 200);
    assert_eq!(json["ucode"], "A302_light");
    assert_eq!(json["name"], "A302 light");
    assert_eq!(json["data"].as_array().unwrap().len(), 2);
    assert_eq!(json["data"][1]["time"], "2023-05-01T09:00:00Z");
    let ranged: serde_json::Value = serde_json::from_str(&ranged.1).unwrap();
    assert_eq!(ranged["data"].as_array().unwrap().len(), 1);
    assert_eq!((unknown, bad_range, no_ucode), (404, 400, 400));
}
