use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use nptrack::config::RunConfig;
use nptrack::plant_sim::TrackShape;
use nptrack::sparse_gp::{read_dataset, read_model, write_dataset, Input};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn nptrack(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nptrack"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stat(report: &str, key: &str) -> f64 {
    report
        .lines()
        .find_map(|l| l.strip_prefix(key)?.trim().strip_prefix('=')?.trim().parse().ok())
        .unwrap_or_else(|| panic!("{key} missing from\n{report}"))
}

/// Small and fast configuration written to `dir/config.toml`.
fn fast_config(dir: &Path, shape: TrackShape, profile: &str) -> PathBuf {
    let mut cfg = RunConfig::default();
    cfg.track = nptrack::plant_sim::TrackConfig::new(shape, profile);
    cfg.mppi.samples = 96;
    cfg.mppi.horizon = 12;
    cfg.collect.duration = 4.0;
    cfg.loop_cfg.max_steps = 60;
    cfg.gp.num_inducing = 12;
    cfg.out_dir = dir.to_path_buf();
    let path = dir.join("config.toml");
    fs::write(&path, cfg.to_toml()).unwrap();
    path
}

#[test]
fn gen_track_oval_flat_has_no_elevation_range() {
    let dir = tempfile::tempdir().unwrap();
    let o = nptrack(&["gen-track", "--shape", "oval", "--profile", "flat", "--out-dir", s(dir.path())]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for f in ["terrain.nptg", "reference.csv", "map_stats.txt"] {
        assert!(dir.path().join(f).is_file(), "{f} missing");
    }
    let report = fs::read_to_string(dir.path().join("map_stats.txt")).unwrap();
    assert_eq!(stat(&report, "Elevation range (m)"), 0.0);
    assert_eq!(stat(&report, "Max slope (degrees)"), 0.0);
}

#[test]
fn gen_track_hills_report_positive_slope() {
    let dir = tempfile::tempdir().unwrap();
    let o = nptrack(&[
        "gen-track", "--shape", "kidney", "--profile", "sinusoidal_hills", "--amp", "2",
        "--out-dir", s(dir.path()),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report = fs::read_to_string(dir.path().join("map_stats.txt")).unwrap();
    assert!(stat(&report, "Max slope (degrees)") > 0.0);
}

#[test]
fn unknown_shape_is_a_usage_error_naming_the_valid_set() {
    let dir = tempfile::tempdir().unwrap();
    let o = nptrack(&["gen-track", "--shape", "triangle", "--out-dir", s(dir.path())]);
    assert_eq!(code(&o), 2);
    let err = stderr(&o);
    for name in ["kidney", "l_shape", "oval"] {
        assert!(err.contains(name), "{err}");
    }
}

#[test]
fn unknown_profile_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = nptrack(&["gen-track", "--profile", "dunes", "--out-dir", s(dir.path())]);
    assert_eq!(code(&o), 2);
}

#[test]
fn dumped_config_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let o = nptrack(&["--dump-config", "--seed", "7", "run", "--mode", "gp", "--seeds", "3"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = stdout(&o);
    let cfg = RunConfig::from_toml(&text).unwrap();
    assert_eq!(cfg.seed, 7);
    assert_eq!(cfg.seeds, 3);
    let path = dir.path().join("dumped.toml");
    fs::write(&path, &text).unwrap();
    let again = nptrack(&["--config", s(&path), "--dump-config"]);
    assert_eq!(code(&again), 0, "{}", stderr(&again));
    assert_eq!(RunConfig::from_toml(&stdout(&again)).unwrap(), cfg);
    assert_eq!(stdout(&again), text);
}

#[test]
fn schema_violations_exit_three_for_run_and_two_elsewhere() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    fs::write(&path, format!("{}\nunknown_key = 1\n", RunConfig::default().to_toml())).unwrap();
    let o = nptrack(&["--config", s(&path), "--out-dir", s(dir.path()), "run"]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(stderr(&o).contains("unknown_key"));
    let o = nptrack(&["--config", s(&path), "--out-dir", s(dir.path()), "gen-track"]);
    assert_eq!(code(&o), 2);

    let mut cfg: toml::Table = toml::from_str(&RunConfig::default().to_toml()).unwrap();
    cfg["plant"].as_table_mut().unwrap().remove("k_a");
    fs::write(&path, toml::to_string(&cfg).unwrap()).unwrap();
    let o = nptrack(&["--config", s(&path), "run"]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("k_a"), "{}", stderr(&o));
}

#[test]
fn missing_config_file_is_a_usage_error() {
    let o = nptrack(&["--config", "/nonexistent/run.toml", "gen-track"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn collect_with_zero_duration_writes_an_empty_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fast_config(dir.path(), TrackShape::Oval, "flat");
    assert_eq!(code(&nptrack(&["--config", s(&cfg), "gen-track"])), 0);
    let o = nptrack(&["--config", s(&cfg), "collect", "--duration", "0"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rows = read_dataset(fs::File::open(dir.path().join("dataset.txt")).map(std::io::BufReader::new).unwrap()).unwrap();
    assert!(rows.is_empty());
}

#[test]
fn collect_without_track_files_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = nptrack(&["--out-dir", s(dir.path()), "collect"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn flat_collection_residuals_stay_in_the_noise_band() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fast_config(dir.path(), TrackShape::Oval, "flat");
    assert_eq!(code(&nptrack(&["--config", s(&cfg), "gen-track"])), 0);
    let o = nptrack(&["--config", s(&cfg), "collect"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rows = read_dataset(std::io::BufReader::new(fs::File::open(dir.path().join("dataset.txt")).unwrap())).unwrap();
    assert!(rows.len() > 100);
    let n = rows.len() as f64;
    for k in 0..3 {
        let mean = rows.iter().map(|r| r.1[k]).sum::<f64>() / n;
        let var = rows.iter().map(|r| (r.1[k] - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!(mean.abs() < 3.0 * var.sqrt() / n.sqrt(), "head {k}: mean {mean}, std {}", var.sqrt());
    }
}

#[test]
fn sloped_collection_rows_are_steps_minus_rejections() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fast_config(dir.path(), TrackShape::Kidney, "sinusoidal_hills");
    assert_eq!(code(&nptrack(&["--config", s(&cfg), "gen-track"])), 0);
    let o = nptrack(&["--config", s(&cfg), "collect"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let line = stdout(&o);
    let nums: Vec<usize> = line
        .split(|c: char| !c.is_ascii_digit())
        .filter_map(|t| t.parse().ok())
        .collect();
    let (rows, steps, rejected) = (nums[0], nums[1], nums[2]);
    let on_disk = read_dataset(std::io::BufReader::new(fs::File::open(dir.path().join("dataset.txt")).unwrap())).unwrap();
    assert_eq!(on_disk.len(), rows);
    assert_eq!(rows, steps - rejected);
    assert!(steps > 0);
}

#[test]
fn fit_gp_missing_dataset_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = nptrack(&["--out-dir", s(dir.path()), "fit-gp"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn fit_gp_degenerate_dataset_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let rows: Vec<(Input, [f64; 3])> = vec![([0.1; 9], [0.0; 3]); 40];
    write_dataset(&rows, fs::File::create(dir.path().join("dataset.txt")).unwrap()).unwrap();
    let o = nptrack(&["--out-dir", s(dir.path()), "fit-gp"]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
}

fn random_inputs(rng: &mut ChaCha8Rng, n: usize) -> Vec<Input> {
    let ls = RunConfig::default().gp.hyper_v.lengthscales;
    (0..n)
        .map(|_| std::array::from_fn(|d| ls[d] * rng.random_range(-2.0..2.0)))
        .collect()
}

#[test]
fn zero_generator_holdout_rmse_is_within_twice_the_noise() {
    let dir = tempfile::tempdir().unwrap();
    let hypers = RunConfig::default().gp.hypers();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let z = random_inputs(&mut rng, 300);
    let rows: Vec<(Input, [f64; 3])> = z
        .into_iter()
        .map(|x| {
            let y = std::array::from_fn(|k| {
                Normal::new(0.0, hypers[k].noise_var.sqrt()).unwrap().sample(&mut rng)
            });
            (x, y)
        })
        .collect();
    write_dataset(&rows, fs::File::create(dir.path().join("dataset.txt")).unwrap()).unwrap();
    let o = nptrack(&["--out-dir", s(dir.path()), "fit-gp"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = stdout(&o);
    for (k, head) in ["v", "beta", "r"].iter().enumerate() {
        let rmse = stat(&out, &format!("held-out RMSE {head}"));
        assert!(rmse < 2.0 * hypers[k].noise_var.sqrt(), "{head}: {rmse}");
    }
    assert!(dir.path().join("model.npgp").is_file());
}

/// Exact GP mean by Gaussian elimination on `(K + s2 I) a = y`.
fn exact_mean(z: &[Input], y: &[f64], ls: &[f64; 9], sf2: f64, sn2: f64, q: &Input) -> f64 {
    let k = |a: &Input, b: &Input| {
        sf2 * (-0.5 * (0..9).map(|d| ((a[d] - b[d]) / ls[d]).powi(2)).sum::<f64>()).exp()
    };
    let n = z.len();
    let mut m: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let mut row: Vec<f64> = (0..n).map(|j| k(&z[i], &z[j])).collect();
            row[i] += sn2;
            row.push(y[i]);
            row
        })
        .collect();
    for c in 0..n {
        let p = (c..n).max_by(|&a, &b| m[a][c].abs().total_cmp(&m[b][c].abs())).unwrap();
        m.swap(c, p);
        for r in 0..n {
            if r != c {
                let f = m[r][c] / m[c][c];
                for j in c..=n {
                    m[r][j] -= f * m[c][j];
                }
            }
        }
    }
    (0..n).map(|i| k(q, &z[i]) * m[i][n] / m[i][i]).sum()
}

#[test]
fn tiny_fit_with_all_points_inducing_matches_the_exact_gp() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::default();
    cfg.gp.num_inducing = 10;
    cfg.out_dir = dir.path().to_path_buf();
    let cfg_path = dir.path().join("config.toml");
    fs::write(&cfg_path, cfg.to_toml()).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let z = random_inputs(&mut rng, 10);
    let rows: Vec<(Input, [f64; 3])> = z
        .iter()
        .map(|&x| (x, std::array::from_fn(|k| 0.01 * (k as f64 + 1.0) * rng.random_range(-1.0..1.0))))
        .collect();
    write_dataset(&rows, fs::File::create(dir.path().join("dataset.txt")).unwrap()).unwrap();
    let o = nptrack(&["--config", s(&cfg_path), "fit-gp"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));

    let model = read_model(fs::File::open(dir.path().join("model.npgp")).unwrap()).unwrap();
    let queries = random_inputs(&mut rng, 5);
    for (k, h) in cfg.gp.hypers().iter().enumerate() {
        let y: Vec<f64> = rows.iter().map(|r| r.1[k]).collect();
        for q in queries.iter().chain(z.iter()) {
            let want = exact_mean(&z, &y, &h.lengthscales, h.signal_var, h.noise_var, q);
            let got = model.predict(q)[k].0;
            assert!((got - want).abs() < 1e-6, "head {k}: {got} vs {want}");
        }
    }
}

/// Generates a flat oval, collects, fits and returns the config path.
fn prepared(dir: &Path) -> PathBuf {
    let cfg = fast_config(dir, TrackShape::Oval, "flat");
    for cmd in ["gen-track", "collect", "fit-gp"] {
        let o = nptrack(&["--config", s(&cfg), cmd]);
        assert_eq!(code(&o), 0, "{cmd}: {}", stderr(&o));
    }
    cfg
}

fn summary_rows(dir: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(dir.join("summary.csv"))
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn run_summarizes_every_mode_and_seed_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = prepared(dir.path());
    let args = ["--config", s(&cfg), "run", "--mode", "baseline", "--mode", "gp_recursive", "--seeds", "5"];
    let o = nptrack(&args);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let header = fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    let header: Vec<&str> = header.lines().next().unwrap().split(',').collect();
    let col = |name: &str| header.iter().position(|h| *h == name).unwrap();
    let rows = summary_rows(dir.path());
    assert_eq!(rows.len(), 10);
    for mode in ["baseline", "gp_recursive"] {
        assert_eq!(rows.iter().filter(|r| r[col("mode")] == mode).count(), 5);
    }
    for r in &rows {
        let ms: f64 = r[col("median_solve_ms")].parse().unwrap();
        let hz: f64 = r[col("frequency_hz")].parse().unwrap();
        assert_eq!(hz, 1000.0 / ms);
    }
    let hist = fs::read_to_string(dir.path().join("histograms/cte_baseline.csv")).unwrap();
    assert_eq!(hist.lines().count(), 31);

    let log = dir.path().join("runs/gp_recursive_seed2.csv");
    let first = fs::read(&log).unwrap();
    let o = nptrack(&args);
    assert_eq!(code(&o), 0);
    assert_eq!(fs::read(&log).unwrap(), first);
    let base = fs::read(dir.path().join("runs/baseline_seed0.csv")).unwrap();
    assert!(String::from_utf8(base).unwrap().lines().count() > 1);
}

#[test]
fn run_without_model_for_gp_mode_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fast_config(dir.path(), TrackShape::Oval, "flat");
    assert_eq!(code(&nptrack(&["--config", s(&cfg), "gen-track"])), 0);
    let o = nptrack(&["--config", s(&cfg), "run", "--mode", "gp"]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn plot_writes_figures_and_honors_the_bin_count() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = prepared(dir.path());
    let o = nptrack(&["--config", s(&cfg), "run", "--mode", "baseline", "--mode", "gp", "--seeds", "1"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = nptrack(&["--config", s(&cfg), "plot", "--bins", "17"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let plots = dir.path().join("plots");
    for f in ["trajectory.svg", "cte_timeseries.svg", "cte_histogram.svg", "solve_frequency.svg"] {
        let svg = fs::read_to_string(plots.join(f)).unwrap();
        assert!(svg.starts_with("<svg"), "{f}");
    }
    let traj = fs::read_to_string(plots.join("trajectory.svg")).unwrap();
    assert!(traj.contains("baseline") && traj.contains("gp"));
    let hist = fs::read_to_string(plots.join("cte_histogram.csv")).unwrap();
    for mode in ["baseline", "gp"] {
        let n = hist.lines().filter(|l| l.starts_with(&format!("{mode},"))).count();
        assert_eq!(n, 17, "{mode}");
    }
}

#[test]
fn plot_without_logs_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = nptrack(&["--out-dir", s(dir.path()), "plot"]);
    assert_eq!(code(&o), 2);
    fs::create_dir_all(dir.path().join("runs")).unwrap();
    let o = nptrack(&["--out-dir", s(dir.path()), "plot"]);
    assert_eq!(code(&o), 2);
}
