use std::path::Path;
use std::process::{Command, Output};

fn leapgrid(args: &[&str], config: Option<&str>) -> Output {
    let dir = tempfile::tempdir().unwrap();
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_leapgrid"));
    if let Some(text) = config {
        let path = dir.path().join("config.json");
        std::fs::write(&path, text).unwrap();
        cmd.arg("--config").arg(&path);
    }
    cmd.args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn column(csv: &str, name: &str) -> Vec<String> {
    let mut lines = csv.lines();
    let at = lines.next().unwrap().split(',').position(|h| h == name).unwrap();
    lines.map(|l| l.split(',').nth(at).unwrap().to_string()).collect()
}

const HALF_DEGREE: &str = r#"{"grid": {"nx": 768, "ny": 361, "nz": 30}}"#;

#[test]
fn leap_table_raw_counts() {
    let o = leapgrid(&["leap-table"], Some(HALF_DEGREE));
    assert_eq!(o.status.code(), Some(0));
    let csv = stdout(&o);
    assert!(csv.starts_with("j,latitude_deg,colatitude_deg,n_leap,effective_spacing_km,active\n"));
    let n: Vec<u32> = column(&csv, "n_leap").iter().map(|v| v.parse().unwrap()).collect();
    assert_eq!(n.iter().max(), Some(&82));
    assert_eq!((n[1], n[2]), (82, 41));
    assert_eq!(column(&csv, "colatitude_deg")[1], "0.500000");

    let o = leapgrid(&["leap-table"], Some(r#"{"grid": {"nx": 1152, "ny": 768, "nz": 30}}"#));
    let n = column(&stdout(&o), "n_leap");
    assert_eq!((n[1].as_str(), n[2].as_str()), ("173", "87"));

    let o = leapgrid(
        &["leap-table"],
        Some(r#"{"grid": {"nx": 768, "ny": 361}, "leap": {"activation_lat_deg": 90}}"#),
    );
    assert!(column(&stdout(&o), "n_leap").iter().all(|v| v == "1"));
}

#[test]
fn leap_table_fixture_is_bit_exact() {
    let o = leapgrid(&["leap-table"], Some(r#"{"grid": {"nx": 8, "ny": 5, "nz": 1}}"#));
    let want = "j,latitude_deg,colatitude_deg,n_leap,effective_spacing_km,active\n\
0,90.000000,0.000000,1,0.000000,false\n\
1,45.000000,45.000000,1,3538.200900,false\n\
2,0.000000,90.000000,1,5003.771699,false\n\
3,-45.000000,135.000000,1,3538.200900,false\n\
4,-90.000000,180.000000,1,0.000000,false\n";
    assert_eq!(stdout(&o), want);
    assert!(!stdout(&o).contains('\r'));
}

#[test]
fn estimate_lists_2d_and_3d() {
    let cfg = r#"{"grid": {"nx": 256, "ny": 128, "nz": 30}, "decomp": {"px": 4, "py": 4, "pz": 2}, "model": {"alpha": 2, "beta": 5}}"#;
    let o = leapgrid(&["estimate"], Some(cfg));
    assert_eq!(o.status.code(), Some(0));
    let csv = stdout(&o);
    let rows: Vec<Vec<&str>> = csv.lines().skip(1).map(|l| l.split(',').collect()).collect();
    let find = |p: [&str; 3]| rows.iter().find(|r| r[..3] == p).unwrap().clone();
    let two = find(["1", "4", "2"]);
    let three = find(["4", "4", "2"]);
    assert_eq!(two[3], "2d");
    assert_eq!(two[5], "0");
    let ratio: f64 = three[6].parse::<f64>().unwrap() / two[6].parse::<f64>().unwrap();
    assert_eq!(ratio, 0.25);
    // nz = 30 cannot take 32 parts; reported, not fatal
    let bad = find(["1", "1", "32"]);
    assert_eq!(bad[4], "false");
    assert!(bad[10].contains("infeasible"));
}

#[test]
fn verify_passes_and_detects_injected_fault() {
    let cfg = r#"{"run": {"steps": 2}}"#;
    let o = leapgrid(&["verify"], Some(cfg));
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(stdout(&o).contains("degenerate-pass"));

    let o = leapgrid(&["verify", "--inject-fault", "halo-width"], Some(cfg));
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("planner-coverage       FAIL"));

    let o = leapgrid(&["verify"], Some(r#"{"run": {"steps": 2}, "decomp": {"px": 2, "py": 3, "pz": 2}}"#));
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(!stdout(&o).contains("degenerate"));
}

fn run_into(dir: &Path, cfg: &str, extra: &[&str]) -> Output {
    let mut args = vec!["run", "--out", dir.to_str().unwrap()];
    args.extend_from_slice(extra);
    leapgrid(&args, Some(cfg))
}

fn read(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join(name)).unwrap()
}

const LAYOUT: &str = r#"{"decomp": {"px": 2, "py": 3, "pz": 2}, "run": {"steps": 2}}"#;

#[test]
fn run_is_deterministic() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    assert_eq!(run_into(a.path(), LAYOUT, &[]).status.code(), Some(0));
    assert_eq!(run_into(b.path(), LAYOUT, &[]).status.code(), Some(0));
    for f in ["checksums.json", "commstats.json", "filter_load.csv"] {
        assert_eq!(read(a.path(), f), read(b.path(), f), "{f}");
    }
    let c = tempfile::tempdir().unwrap();
    run_into(c.path(), LAYOUT, &["--seed", "5"]);
    assert_ne!(read(a.path(), "checksums.json"), read(c.path(), "checksums.json"));
}

#[test]
fn run_filter_load_by_mode() {
    let cfg = r#"{"grid": {"nx": 96, "ny": 61, "nz": 2}, "decomp": {"py": 10}, "run": {"steps": 1}}"#;
    let load = |mode: &str| {
        let d = tempfile::tempdir().unwrap();
        let o = run_into(d.path(), cfg, &["--mode", mode]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        column(&read(d.path(), "filter_load.csv"), "filter_ops_per_step")
            .iter()
            .map(|v| v.parse::<u64>().unwrap())
            .collect::<Vec<_>>()
    };
    let (conv, leap) = (load("conventional"), load("leap"));
    // the first and last ranks own only rows poleward of 70°
    assert!(conv[0] > 0 && conv[9] > 0);
    assert_eq!((leap[0], leap[9]), (0, 0));
    assert!(leap[4] > 0);
}

#[test]
fn run_aggregation_flag() {
    let (on, off) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let cfg = r#"{"decomp": {"px": 4, "py": 3, "pz": 2}, "run": {"steps": 1}}"#;
    run_into(on.path(), cfg, &["--aggregate", "on"]);
    run_into(off.path(), cfg, &["--aggregate", "off"]);
    let parse = |d: &Path| serde_json::from_str::<serde_json::Value>(&read(d, "commstats.json")).unwrap();
    let (a, b) = (parse(on.path()), parse(off.path()));
    for (label, size) in [
        ("adaption/minus-half", 6),
        ("adaption/plus-half", 2),
        ("advection/wide", 3),
        ("adaption/wide", 1),
    ] {
        let (la, lb) = (&a["per_label"][label], &b["per_label"][label]);
        assert_eq!(lb["p2p_msgs"].as_u64().unwrap(), size * la["p2p_msgs"].as_u64().unwrap(), "{label}");
        assert_eq!(la["p2p_bytes"], lb["p2p_bytes"], "{label}");
    }
}

#[test]
fn cfl_violation_and_bad_config_exit_2() {
    let d = tempfile::tempdir().unwrap();
    let o = run_into(d.path(), r#"{"run": {"dt_s": 1e9}}"#, &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("row j="));

    assert_eq!(leapgrid(&["estimate"], Some(r#"{"gird": {}}"#)).status.code(), Some(2));
    assert_eq!(leapgrid(&["plan"], Some("{")).status.code(), Some(2));
    assert_eq!(leapgrid(&["run", "--mode", "fast"], None).status.code(), Some(2));
    assert_eq!(leapgrid(&["filter-load"], Some(r#"{"decomp": {"py": 99}}"#)).status.code(), Some(2));
}

#[test]
fn plan_and_filter_load_outputs() {
    let d = tempfile::tempdir().unwrap();
    let o = leapgrid(
        &["plan", "--out", d.path().to_str().unwrap()],
        Some(r#"{"decomp": {"px": 4}}"#),
    );
    assert_eq!(o.status.code(), Some(0));
    let csv = stdout(&o);
    assert!(csv.starts_with("j,latitude_deg,n_leap,pattern,direction,x_rank,width,classification,segments\n"));
    assert!(csv.contains("Crossed") || csv.contains("Neighbor"));
    let traffic: serde_json::Value = serde_json::from_str(&read(d.path(), "group_traffic.json")).unwrap();
    assert!(traffic["groups"]["adaption/minus-half"]["messages"].as_u64().unwrap() > 0);

    let o = leapgrid(&["filter-load", "--mode", "conventional"], Some(r#"{"decomp": {"py": 4}}"#));
    let csv = stdout(&o);
    assert!(csv.starts_with("rank,filter_ops_per_step,mode\n"));
    assert_eq!(csv.lines().count(), 5);
    assert!(csv.lines().skip(1).all(|l| l.ends_with(",conventional")));
}

#[test]
fn order_flag_changes_placement() {
    let cfg = r#"{"decomp": {"py": 6, "pz": 2, "cores_per_node": 4}, "run": {"steps": 1}}"#;
    let intra_share = |order: &str| {
        let d = tempfile::tempdir().unwrap();
        run_into(d.path(), cfg, &["--order", order]);
        let v: serde_json::Value = serde_json::from_str(&read(d.path(), "commstats.json")).unwrap();
        let z = &v["per_comm"]["z"];
        let intra = z["intra_bytes"].as_f64().unwrap();
        intra / (intra + z["inter_bytes"].as_f64().unwrap())
    };
    assert_eq!(intra_share("z-prior"), 1.0);
    assert!(intra_share("y-prior") < 1.0);
}
