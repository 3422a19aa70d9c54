use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = "N_u = 32
N_x = 128
K_max = 8
K_p = 16
t = 0.1
ibp_s = 0.05
M_W = 12
M_beta = 2
moments_paths = 10
";

fn wdiff(dir: &Path, args: &[&str]) -> Output {
    let cfg = dir.join("small.cfg");
    if !cfg.exists() {
        fs::write(&cfg, SMALL).unwrap();
    }
    Command::new(env!("CARGO_BIN_EXE_wdiff"))
        .args(args)
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(dir.join("out"))
        .output()
        .unwrap()
}

fn read(dir: &Path, file: &str) -> String {
    fs::read_to_string(dir.join("out").join(file)).unwrap()
}

#[test]
fn zero_direction_gives_zero_gradients() {
    let d = tempfile::tempdir().unwrap();
    let o = wdiff(d.path(), &["gradient", "--set", "direction=zero"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = read(d.path(), "gradient.csv");
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "estimator,t,eps,rho,value,std_error,M_W,M_beta,seed");
    let mut names = Vec::new();
    for l in lines {
        let f: Vec<&str> = l.split(',').collect();
        names.push(f[0].to_string());
        assert_eq!(f[4].parse::<f64>().unwrap(), 0.0, "{l}");
    }
    assert_eq!(names, ["direct", "fd", "bel", "I1", "I2"]);
}

#[test]
fn output_bytes_do_not_depend_on_threads() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert!(wdiff(a.path(), &["gradient", "--threads", "1"]).status.success());
    assert!(wdiff(b.path(), &["gradient", "--threads", "3"]).status.success());
    assert_eq!(read(a.path(), "gradient.csv"), read(b.path(), "gradient.csv"));
}

#[test]
fn manifest_reproduces_the_run() {
    let a = tempfile::tempdir().unwrap();
    assert!(wdiff(a.path(), &["gradient", "--seed", "77"]).status.success());
    let manifest = read(a.path(), "gradient_manifest.txt");
    let cfg: Vec<&str> = manifest
        .lines()
        .skip_while(|l| !l.starts_with("scenario ="))
        .take_while(|l| !l.starts_with("sum_sq ="))
        .filter(|l| !l.starts_with("output_dir ="))
        .collect();
    let b = tempfile::tempdir().unwrap();
    fs::write(b.path().join("small.cfg"), cfg.join("\n")).unwrap();
    assert!(wdiff(b.path(), &["gradient"]).status.success());
    assert_eq!(read(a.path(), "gradient.csv"), read(b.path(), "gradient.csv"));
    assert!(manifest.contains("seed = 77"));
    assert!(manifest.contains("tail_bound = "));
}

#[test]
fn eps_sweep_has_one_row_per_width_and_a_fit() {
    let d = tempfile::tempdir().unwrap();
    let o = wdiff(d.path(), &["eps-sweep", "--k-paths", "3", "--plot"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = read(d.path(), "eps_sweep.csv");
    let eps: Vec<f64> = csv.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(eps, [0.4, 0.283, 0.2, 0.141, 0.1, 0.071, 0.05]);
    let fit = read(d.path(), "eps_sweep_fit.csv");
    assert!(fit.starts_with("quantity,slope,intercept\nI2,"));
    assert!(read(d.path(), "eps_sweep.svg").starts_with("<svg"));
}

#[test]
fn config_errors_exit_with_two() {
    let d = tempfile::tempdir().unwrap();
    for args in [
        &["gradient", "--set", "dt=-1"][..],
        &["gradient", "--set", "nonsense=1"],
        &["gradient", "--set", "t=0.1234"],
        &["validate", "--only", "99"],
        &["no-such-command"],
    ] {
        let o = wdiff(d.path(), args);
        assert_eq!(o.status.code(), Some(2), "{args:?}");
        let err = String::from_utf8_lossy(&o.stderr);
        assert!(!err.trim().is_empty());
    }
}

#[test]
fn validate_lists_checks_in_manifest() {
    let d = tempfile::tempdir().unwrap();
    let o = wdiff(d.path(), &["validate", "--only", "2,10"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert_eq!(stdout.lines().filter(|l| l.starts_with("PASS criterion")).count(), 2);
    let m = read(d.path(), "validate_manifest.txt");
    assert!(m.contains("check_02 = PASS criterion  2"));
    assert!(m.contains("check_10 = PASS criterion 10"));
    assert!(m.contains("status = pass"));
    assert_eq!(read(d.path(), "validate.csv").lines().count(), 3);
}

#[test]
fn failed_check_exits_with_one_and_names_it() {
    let d = tempfile::tempdir().unwrap();
    // a bandwidth this wide cannot match the spectral density
    let o = wdiff(d.path(), &["density-compare", "--m-beta", "8", "--set", "bandwidth=3"]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert_eq!(err.lines().count(), 1);
    assert!(err.contains("L1 distance"), "{err}");
    assert!(read(d.path(), "density-compare_manifest.txt").contains("status = fail"));
}

#[test]
fn other_subcommands_write_documented_tables() {
    let d = tempfile::tempdir().unwrap();
    for (args, file, header) in [
        (&["simulate", "--paths", "2"][..], "simulate_invariants.csv", "w_replica,min_dx_du,periodicity_violations,realized_qv,expected_qv"),
        (&["simulate", "--paths", "1"], "simulate_w0.csv", "t,u,x,dx_du"),
        (&["rate-sweep"], "rate_sweep.csv", "t,eps,I1,I1_se,I2,I2_se,total,direct,direct_se,weight_l2,dropped_energy,seed,total_se,fd,fd_se,scaled"),
        (&["ibp-check"], "ibp_check.csv", "s,t,u_index,lhs,lhs_se,rhs,rhs_se,combined_se,samples"),
        (&["density-compare", "--m-beta", "32"], "density_compare.csv", "t,L1_distance,bandwidth"),
        (&["density-compare", "--m-beta", "32"], "density_spde.csv", "t,x,p"),
        (&["moments"], "moments.csv", "statistic,p,j,estimate,std_error,paths,reference,ratio,ratio_se"),
    ] {
        let o = wdiff(d.path(), args);
        assert!(o.status.code() == Some(0) || o.status.code() == Some(1), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
        let text = read(d.path(), file);
        assert_eq!(text.lines().next().unwrap(), header, "{file}");
        assert!(text.lines().count() > 1);
    }
}
