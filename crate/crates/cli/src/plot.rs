use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use nptrack::config::RunConfig;
use nptrack::plant_sim::{histogram, read_reference_csv};
use plotters::prelude::*;

use crate::commands::{DIAGNOSTICS_DIR, REFERENCE_FILE, RUNS_DIR};
use crate::Failure;

pub const PLOTS_DIR: &str = "plots";
const SIZE: (u32, u32) = (900, 700);

/// Columns of one CSV log keyed by header name.
struct Table {
    label: String,
    mode: String,
    columns: BTreeMap<String, Vec<f64>>,
}

impl Table {
    fn column(&self, name: &str) -> Result<&[f64], Failure> {
        self.columns
            .get(name)
            .map(Vec::as_slice)
            .ok_or_else(|| Failure::runtime(format!("{}: missing column {name}", self.label)))
    }

    fn rows(&self) -> usize {
        self.columns.values().next().map_or(0, Vec::len)
    }
}

fn read_table(path: &Path) -> Result<Table, Failure> {
    let file = fs::File::open(path)
        .map_err(|e| Failure::usage(format!("cannot open {}: {e}", path.display())))?;
    let mut lines = std::io::BufReader::new(file).lines();
    let bad = |m: String| Failure::runtime(format!("{}: {m}", path.display()));
    let header = match lines.next() {
        Some(h) => h.map_err(|e| bad(e.to_string()))?,
        None => String::new(),
    };
    let names: Vec<String> = header.split(',').map(|s| s.trim().to_string()).collect();
    let mut cols: Vec<Vec<f64>> = vec![Vec::new(); names.len()];
    for (i, line) in lines.enumerate() {
        let line = line.map_err(|e| bad(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != names.len() {
            return Err(bad(format!("line {} has {} fields, expected {}", i + 2, fields.len(), names.len())));
        }
        for (c, f) in cols.iter_mut().zip(fields) {
            c.push(f.trim().parse().map_err(|_| bad(format!("line {}: bad number '{f}'", i + 2)))?);
        }
    }
    let label = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let mode = label.split("_seed").next().unwrap_or(&label).to_string();
    Ok(Table {
        label,
        mode,
        columns: names.into_iter().zip(cols).collect(),
    })
}

fn read_logs(dir: &Path) -> Result<Vec<Table>, Failure> {
    let entries = fs::read_dir(dir)
        .map_err(|e| Failure::usage(format!("no run logs in {}: {e}", dir.display())))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    paths.sort();
    let mut tables = Vec::new();
    for p in paths {
        let t = read_table(&p)?;
        if t.rows() > 0 {
            tables.push(t);
        }
    }
    Ok(tables)
}

fn mode_colors(tables: &[Table]) -> BTreeMap<String, RGBColor> {
    let palette = [
        RGBColor(31, 119, 180),
        RGBColor(214, 39, 40),
        RGBColor(44, 160, 44),
        RGBColor(148, 103, 189),
        RGBColor(255, 127, 14),
    ];
    let mut modes: Vec<&str> = tables.iter().map(|t| t.mode.as_str()).collect();
    modes.sort();
    modes.dedup();
    modes
        .into_iter()
        .enumerate()
        .map(|(i, m)| (m.to_string(), palette[i % palette.len()]))
        .collect()
}

fn draw_error(path: &Path) -> impl Fn(String) -> Failure + '_ {
    move |e| Failure::runtime(format!("cannot draw {}: {e}", path.display()))
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    let pad = ((hi - lo) * 0.05).max(1e-6);
    (lo - pad, hi + pad)
}

fn plot_trajectories(
    out: &Path,
    reference: &[[f64; 2]],
    tables: &[Table],
    colors: &BTreeMap<String, RGBColor>,
) -> Result<(), Failure> {
    let path = out.join("trajectory.svg");
    let err = draw_error(&path);
    let mut xs = reference.iter().map(|p| p[0]).collect::<Vec<_>>();
    let mut ys = reference.iter().map(|p| p[1]).collect::<Vec<_>>();
    for t in tables {
        xs.extend_from_slice(t.column("px")?);
        ys.extend_from_slice(t.column("py")?);
    }
    let (x0, x1) = bounds(xs.into_iter());
    let (y0, y1) = bounds(ys.into_iter());
    let root = SVGBackend::new(&path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(|e| err(e.to_string()))?;
    let mut chart = ChartBuilder::on(&root)
        .caption("Trajectories over the reference", ("sans-serif", 22))
        .margin(15)
        .x_label_area_size(40)
        .y_label_area_size(50)
        .build_cartesian_2d(x0..x1, y0..y1)
        .map_err(|e| err(e.to_string()))?;
    chart
        .configure_mesh()
        .x_desc("x (m)")
        .y_desc("y (m)")
        .draw()
        .map_err(|e| err(e.to_string()))?;
    chart
        .draw_series(LineSeries::new(
            reference.iter().map(|p| (p[0], p[1])),
            BLACK.stroke_width(2),
        ))
        .map_err(|e| err(e.to_string()))?
        .label("reference")
        .legend(|(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], BLACK));
    let mut labelled = std::collections::BTreeSet::new();
    for t in tables {
        let color = colors[&t.mode];
        let series = chart
            .draw_series(LineSeries::new(
                t.column("px")?.iter().copied().zip(t.column("py")?.iter().copied()),
                color.mix(0.7),
            ))
            .map_err(|e| err(e.to_string()))?;
        if labelled.insert(t.mode.clone()) {
            series
                .label(t.mode.clone())
                .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], color));
        }
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(|e| err(e.to_string()))?;
    root.present().map_err(|e| err(e.to_string()))
}

fn plot_error_series(
    out: &Path,
    tables: &[Table],
    colors: &BTreeMap<String, RGBColor>,
) -> Result<(), Failure> {
    let path = out.join("cte_timeseries.svg");
    let err = draw_error(&path);
    let mut t_all = Vec::new();
    let mut e_all = Vec::new();
    for t in tables {
        t_all.extend_from_slice(t.column("time")?);
        e_all.extend_from_slice(t.column("cte")?);
    }
    let (t0, t1) = bounds(t_all.into_iter());
    let (e0, e1) = bounds(e_all.into_iter());
    let root = SVGBackend::new(&path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(|e| err(e.to_string()))?;
    let mut chart = ChartBuilder::on(&root)
        .caption("Cross-track error", ("sans-serif", 22))
        .margin(15)
        .x_label_area_size(40)
        .y_label_area_size(60)
        .build_cartesian_2d(t0..t1, e0..e1)
        .map_err(|e| err(e.to_string()))?;
    chart
        .configure_mesh()
        .x_desc("time (s)")
        .y_desc("cross-track error (m)")
        .draw()
        .map_err(|e| err(e.to_string()))?;
    for t in tables {
        chart
            .draw_series(LineSeries::new(
                t.column("time")?.iter().copied().zip(t.column("cte")?.iter().copied()),
                colors[&t.mode].mix(0.7),
            ))
            .map_err(|e| err(e.to_string()))?;
    }
    root.present().map_err(|e| err(e.to_string()))
}

/// Per-mode histograms over shared bins; also written as CSV.
fn plot_histograms(
    out: &Path,
    stem: &str,
    title: &str,
    x_desc: &str,
    per_mode: &BTreeMap<String, Vec<f64>>,
    colors: &BTreeMap<String, RGBColor>,
    bins: usize,
) -> Result<(), Failure> {
    let upper = per_mode
        .values()
        .flatten()
        .copied()
        .filter(|v| v.is_finite())
        .fold(0.0f64, f64::max);
    let upper = if upper > 0.0 { upper } else { 1.0 };
    let hists: BTreeMap<&String, Vec<(f64, f64, usize)>> = per_mode
        .iter()
        .map(|(m, v)| (m, histogram(v, bins, upper)))
        .collect();

    let csv_path = out.join(format!("{stem}.csv"));
    let mut csv = String::from("mode,bin_lo,bin_hi,count\n");
    for (m, h) in &hists {
        for (lo, hi, c) in h {
            csv.push_str(&format!("{m},{lo},{hi},{c}\n"));
        }
    }
    fs::write(&csv_path, csv)
        .map_err(|e| Failure::runtime(format!("cannot write {}: {e}", csv_path.display())))?;

    let path = out.join(format!("{stem}.svg"));
    let err = draw_error(&path);
    let max_count = hists
        .values()
        .flat_map(|h| h.iter().map(|b| b.2))
        .max()
        .unwrap_or(1)
        .max(1);
    let root = SVGBackend::new(&path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(|e| err(e.to_string()))?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 22))
        .margin(15)
        .x_label_area_size(40)
        .y_label_area_size(60)
        .build_cartesian_2d(0.0..upper, 0usize..max_count + max_count / 10 + 1)
        .map_err(|e| err(e.to_string()))?;
    chart
        .configure_mesh()
        .x_desc(x_desc)
        .y_desc("count")
        .draw()
        .map_err(|e| err(e.to_string()))?;
    for (m, h) in &hists {
        let color = colors.get(*m).copied().unwrap_or(BLACK);
        chart
            .draw_series(h.iter().map(|&(lo, hi, c)| {
                Rectangle::new([(lo, 0), (hi, c)], color.mix(0.4).filled())
            }))
            .map_err(|e| err(e.to_string()))?
            .label(m.as_str())
            .legend(move |(x, y)| Rectangle::new([(x, y - 5), (x + 15, y + 5)], color.filled()));
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(|e| err(e.to_string()))?;
    root.present().map_err(|e| err(e.to_string()))
}

pub fn plot(cfg: &RunConfig, logs: Option<&Path>, bins: usize) -> Result<(), Failure> {
    if bins == 0 {
        return Err(Failure::usage("--bins must be at least 1"));
    }
    let out = &cfg.out_dir;
    let logs_dir = logs.map(Path::to_path_buf).unwrap_or_else(|| out.join(RUNS_DIR));
    let tables = read_logs(&logs_dir)?;
    if tables.is_empty() {
        return Err(Failure::usage(format!("no run logs in {}", logs_dir.display())));
    }
    let colors = mode_colors(&tables);
    let plots = out.join(PLOTS_DIR);
    fs::create_dir_all(&plots)
        .map_err(|e| Failure::runtime(format!("cannot create {}: {e}", plots.display())))?;

    let reference: Vec<[f64; 2]> = match fs::File::open(out.join(REFERENCE_FILE)) {
        Ok(f) => read_reference_csv(std::io::BufReader::new(f))
            .map_err(|e| Failure::runtime(format!("{REFERENCE_FILE}: {e}")))?
            .points()
            .to_vec(),
        Err(_) => {
            let t = &tables[0];
            t.column("ref_px")?
                .iter()
                .copied()
                .zip(t.column("ref_py")?.iter().copied())
                .map(|(x, y)| [x, y])
                .collect()
        }
    };
    plot_trajectories(&plots, &reference, &tables, &colors)?;
    plot_error_series(&plots, &tables, &colors)?;

    let mut abs_cte: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for t in &tables {
        abs_cte
            .entry(t.mode.clone())
            .or_default()
            .extend(t.column("cte")?.iter().map(|e| e.abs()));
    }
    plot_histograms(
        &plots,
        "cte_histogram",
        "Distribution of absolute cross-track error",
        "|cross-track error| (m)",
        &abs_cte,
        &colors,
        bins,
    )?;

    let diag_dir = logs_dir
        .parent()
        .map(|p| p.join(DIAGNOSTICS_DIR))
        .unwrap_or_else(|| out.join(DIAGNOSTICS_DIR));
    let mut written = vec!["trajectory.svg", "cte_timeseries.svg", "cte_histogram.svg"];
    if let Ok(diags) = read_logs(&diag_dir) {
        let mut freq: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for t in &diags {
            freq.entry(t.mode.clone())
                .or_default()
                .extend(t.column("solve_ms")?.iter().filter(|&&ms| ms > 0.0).map(|ms| 1000.0 / ms));
        }
        if !freq.is_empty() {
            plot_histograms(
                &plots,
                "solve_frequency",
                "Controller solve frequency",
                "frequency (Hz)",
                &freq,
                &colors,
                bins,
            )?;
            written.push("solve_frequency.svg");
        }
    }
    let mut stdout = std::io::stdout();
    for name in written {
        let _ = writeln!(stdout, "wrote {}", plots.join(name).display());
    }
    Ok(())
}
