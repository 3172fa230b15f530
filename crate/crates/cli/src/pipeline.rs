//! The four pipeline stages. Each stage reads and rewrites the manifest so
//! that every file in the output tree is listed with its hash.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use teleop_core::metrics::{error_index, five_number, packet_delays, tick_error_series, timing_stats, TimingStats};
use teleop_core::sim::{run_batch, PacketRecord, RunTrace, TickRecord};
use teleop_core::stats::{compare_conditions, AnalysisReport, PairedData};
use teleop_core::trace_io::{read_packets, read_states, write_packets, write_states};
use teleop_core::{Direction, DOF};

use crate::manifest::{Manifest, RunRecord, RunStatus};
use crate::spec::ExperimentSpec;
use crate::{CliError, EXIT_ANALYSIS, EXIT_OK, EXIT_PARTIAL};

const TRACES: &str = "traces";
const METRICS: &str = "metrics";
const STATS: &str = "stats";
const PLOTDATA: &str = "plotdata";
pub const METRICS_CSV: &str = "metrics/metrics.csv";

/// Metrics compared across conditions, as (name, metrics.csv column).
pub const COMPARED_METRICS: [(&str, &str); 6] = [
    ("epsilon", "epsilon"),
    ("epsilon_dot", "epsilon_dot"),
    ("t_send_l2f", "mean_t_send_l2f_ms"),
    ("t_recv_l2f", "mean_t_recv_l2f_ms"),
    ("t_send_f2l", "mean_t_send_f2l_ms"),
    ("t_recv_f2l", "mean_t_recv_f2l_ms"),
];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Outcome {
    pub code: i32,
}

impl Outcome {
    fn code(code: i32) -> Self {
        Outcome { code }
    }
}

fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<fs::File>>, CliError> {
    let file = fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    Ok(csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(BufWriter::new(file)))
}

fn csv_err(path: &Path, e: csv::Error) -> CliError {
    CliError::Analysis(format!("{}: {e}", path.display()))
}

/// Remove a stage's output directory and forget its files.
fn clear_dir(out: &Path, dir: &str, manifest: &mut Manifest) -> Result<(), CliError> {
    let path = out.join(dir);
    if path.exists() {
        fs::remove_dir_all(&path).map_err(|e| CliError::io(&path, e))?;
    }
    manifest.drop_dir(dir);
    Ok(())
}

fn reset_dir(out: &Path, dir: &str, manifest: &mut Manifest) -> Result<(), CliError> {
    clear_dir(out, dir, manifest)?;
    let path = out.join(dir);
    fs::create_dir_all(&path).map_err(|e| CliError::io(&path, e))
}

fn write_trace(out: &Path, run_id: &str, trace: &RunTrace) -> Result<(String, String), CliError> {
    let states = format!("{TRACES}/{run_id}.states.csv");
    let packets = format!("{TRACES}/{run_id}.packets.csv");
    for (rel, is_states) in [(&states, true), (&packets, false)] {
        let path = out.join(rel);
        let file = fs::File::create(&path).map_err(|e| CliError::io(&path, e))?;
        let w = BufWriter::new(file);
        if is_states {
            write_states(w, &trace.ticks)?;
        } else {
            write_packets(w, &trace.packets)?;
        }
    }
    Ok((states, packets))
}

/// Simulate every planned run and write the traces and a fresh manifest.
/// Exit code 2 if any run failed; the others are still written.
pub fn cmd_run(spec: &ExperimentSpec, out: &Path, jobs: usize, seed: Option<u64>) -> Result<Outcome, CliError> {
    let plan = spec.plan(seed)?;
    fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    let master = seed.unwrap_or(spec.experiment.master_seed);
    let mut manifest = Manifest::new(spec, master);
    for dir in [METRICS, STATS, PLOTDATA] {
        clear_dir(out, dir, &mut manifest)?;
    }
    reset_dir(out, TRACES, &mut manifest)?;

    // Bounded chunks keep at most a few traces in memory at once.
    let chunk = jobs.max(1) * 2;
    let mut failed = 0;
    for group in plan.chunks(chunk) {
        let configs: Vec<_> = group.iter().map(|r| r.config.clone()).collect();
        let results = run_batch(&configs, 1, jobs)?;
        for (planned, result) in group.iter().zip(results) {
            debug_assert_eq!(planned.seed, result.seed);
            let mut record = RunRecord {
                run_id: planned.run_id.clone(),
                condition: planned.condition.clone(),
                transport: planned.transport,
                expert: planned.expert,
                repetition: planned.repetition,
                block: planned.block,
                seed: planned.seed,
                status: RunStatus::Ok,
                error: None,
                states: None,
                packets: None,
            };
            match result.outcome {
                Ok(trace) => {
                    let (states, packets) = write_trace(out, &planned.run_id, &trace)?;
                    manifest.register(out, &states)?;
                    manifest.register(out, &packets)?;
                    record.states = Some(states);
                    record.packets = Some(packets);
                }
                Err(e) => {
                    eprintln!("run {} failed: {e}", planned.run_id);
                    failed += 1;
                    record.status = RunStatus::Failed;
                    record.error = Some(e.to_string());
                }
            }
            manifest.runs.push(record);
        }
    }
    manifest.save(out)?;
    println!("run: {} of {} runs succeeded", plan.len() - failed, plan.len());
    Ok(Outcome::code(if failed > 0 { EXIT_PARTIAL } else { EXIT_OK }))
}

/// One row of `metrics/metrics.csv`.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub run_id: String,
    pub condition: String,
    pub block: u32,
    pub transport: String,
    pub seed: u64,
    pub epsilon: f64,
    pub epsilon_dot: f64,
    pub rms: [f64; DOF],
    pub rms_dot: [f64; DOF],
    /// Mean t_send / t_recv in ms, for l2f then f2l.
    pub mean_delays_ms: [f64; 4],
}

pub fn metrics_header() -> Vec<String> {
    let mut h: Vec<String> = ["run_id", "condition", "block", "transport", "seed", "epsilon", "epsilon_dot"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    h.extend((0..DOF).map(|i| format!("rms_{i}")));
    h.extend((0..DOF).map(|i| format!("rms_dot_{i}")));
    for c in ["mean_t_send_l2f_ms", "mean_t_recv_l2f_ms", "mean_t_send_f2l_ms", "mean_t_recv_f2l_ms"] {
        h.push(c.to_string());
    }
    h
}

impl MetricsRow {
    fn to_record(&self) -> Vec<String> {
        let mut r = vec![
            self.run_id.clone(),
            self.condition.clone(),
            self.block.to_string(),
            self.transport.clone(),
            self.seed.to_string(),
            self.epsilon.to_string(),
            self.epsilon_dot.to_string(),
        ];
        r.extend(self.rms.iter().map(f64::to_string));
        r.extend(self.rms_dot.iter().map(f64::to_string));
        r.extend(self.mean_delays_ms.iter().map(f64::to_string));
        r
    }
}

fn mean_ms(us: &[u64]) -> f64 {
    if us.is_empty() {
        return f64::NAN;
    }
    us.iter().map(|&u| u as f64).sum::<f64>() / us.len() as f64 / 1000.0
}

/// Verified ticks and packets of one run, or every problem found.
fn load_run(out: &Path, manifest: &Manifest, run: &RunRecord) -> Result<(Vec<TickRecord>, Vec<PacketRecord>), Vec<CliError>> {
    let mut errors = Vec::new();
    let mut open = |rel: &Option<String>| -> Option<(String, fs::File)> {
        let Some(rel) = rel else {
            errors.push(CliError::Analysis(format!("run {} lists no trace file", run.run_id)));
            return None;
        };
        if let Err(e) = manifest.verify(out, rel) {
            errors.push(e);
            return None;
        }
        let path = out.join(rel);
        match fs::File::open(&path) {
            Ok(f) => Some((rel.clone(), f)),
            Err(e) => {
                errors.push(CliError::io(&path, e));
                None
            }
        }
    };
    let states = open(&run.states);
    let packets = open(&run.packets);
    let ticks = states.and_then(|(rel, f)| {
        read_states(BufReader::new(f))
            .map_err(|e| errors.push(CliError::Analysis(format!("{rel}: {e}"))))
            .ok()
    });
    let packets = packets.and_then(|(rel, f)| {
        read_packets(BufReader::new(f))
            .map_err(|e| errors.push(CliError::Analysis(format!("{rel}: {e}"))))
            .ok()
    });
    match (ticks, packets) {
        (Some(t), Some(p)) if errors.is_empty() => Ok((t, p)),
        _ => Err(errors),
    }
}

fn write_timing_table(path: &Path, send: &TimingStats, recv: &TimingStats) -> Result<(), CliError> {
    let mut w = csv_writer(path)?;
    let err = |e| csv_err(path, e);
    w.write_record(["stat", "t_send_ms", "t_recv_ms"]).map_err(err)?;
    w.write_record(["N".to_string(), send.n.to_string(), recv.n.to_string()]).map_err(err)?;
    for (name, a, b) in [
        ("mean", send.mean, recv.mean),
        ("sigma", send.sigma, recv.sigma),
        ("range", send.range, recv.range),
        ("iqr", send.iqr, recv.iqr),
    ] {
        w.write_record([name.to_string(), a.to_string(), b.to_string()]).map_err(err)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Per-run error indices and per-condition timing tables. Corrupt or
/// missing traces are reported one by one and skipped (exit code 3).
pub fn cmd_metrics(out: &Path) -> Result<Outcome, CliError> {
    let mut manifest = Manifest::load(out)?;
    reset_dir(out, METRICS, &mut manifest)?;
    let mut rows = Vec::new();
    let mut errors = Vec::new();
    // condition -> direction -> (t_send, t_recv), in condition order
    let mut pooled: Vec<(String, [(Vec<u64>, Vec<u64>); 2])> = Vec::new();
    for run in manifest.runs.iter().filter(|r| r.status == RunStatus::Ok) {
        let (ticks, packets) = match load_run(out, &manifest, run) {
            Ok(t) => t,
            Err(errs) => {
                errors.extend(errs);
                continue;
            }
        };
        let idx = match error_index(&tick_error_series(&ticks)) {
            Ok(i) => i,
            Err(e) => {
                errors.push(CliError::Analysis(format!("run {}: {e}", run.run_id)));
                continue;
            }
        };
        let pos = match pooled.iter().position(|(c, _)| *c == run.condition) {
            Some(p) => p,
            None => {
                pooled.push((run.condition.clone(), Default::default()));
                pooled.len() - 1
            }
        };
        let mut means = [0.0; 4];
        for (d, dir) in Direction::BOTH.into_iter().enumerate() {
            let (send, recv) = packet_delays(&packets, dir);
            means[2 * d] = mean_ms(&send);
            means[2 * d + 1] = mean_ms(&recv);
            pooled[pos].1[d].0.extend(send);
            pooled[pos].1[d].1.extend(recv);
        }
        rows.push(MetricsRow {
            run_id: run.run_id.clone(),
            condition: run.condition.clone(),
            block: run.block,
            transport: run.transport.as_str().to_string(),
            seed: run.seed,
            epsilon: idx.epsilon,
            epsilon_dot: idx.epsilon_dot,
            rms: idx.rms,
            rms_dot: idx.rms_dot,
            mean_delays_ms: means,
        });
    }

    let path = out.join(METRICS_CSV);
    let mut w = csv_writer(&path)?;
    w.write_record(metrics_header()).map_err(|e| csv_err(&path, e))?;
    for r in &rows {
        w.write_record(r.to_record()).map_err(|e| csv_err(&path, e))?;
    }
    w.flush().map_err(|e| CliError::io(&path, e))?;
    drop(w);
    manifest.register(out, METRICS_CSV)?;

    for (cond, dirs) in &pooled {
        for (d, dir) in Direction::BOTH.into_iter().enumerate() {
            let (send, recv) = &dirs[d];
            let (Ok(s), Ok(r)) = (timing_stats(send), timing_stats(recv)) else {
                eprintln!("warning: no {} packets for condition {cond}", dir.as_str());
                continue;
            };
            let rel = format!("{METRICS}/timing_{cond}_{}.csv", dir.as_str());
            write_timing_table(&out.join(&rel), &s, &r)?;
            manifest.register(out, &rel)?;
        }
    }
    manifest.save(out)?;
    for e in &errors {
        eprintln!("error: {e}");
    }
    println!("metrics: {} runs", rows.len());
    Ok(Outcome::code(if errors.is_empty() { EXIT_OK } else { EXIT_ANALYSIS }))
}

/// `metrics/metrics.csv`, as (condition, block, column -> value) rows.
struct MetricsTable {
    rows: Vec<(String, u32, BTreeMap<String, f64>)>,
}

fn read_metrics(out: &Path, manifest: &Manifest) -> Result<MetricsTable, CliError> {
    manifest.verify(out, METRICS_CSV)?;
    let path = out.join(METRICS_CSV);
    let mut rdr = csv::Reader::from_path(&path).map_err(|e| csv_err(&path, e))?;
    let header = rdr.headers().map_err(|e| csv_err(&path, e))?.clone();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::Analysis(format!("{}: missing column {name}", path.display())))
    };
    let (ci, bi) = (col("condition")?, col("block")?);
    let numeric: Vec<(String, usize)> = COMPARED_METRICS
        .iter()
        .map(|(_, c)| Ok((c.to_string(), col(c)?)))
        .collect::<Result<_, CliError>>()?;
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(&path, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        let bad = |what: &str| CliError::Analysis(format!("{} line {line}: bad {what}", path.display()));
        let block: u32 = rec[bi].parse().map_err(|_| bad("block"))?;
        let mut vals = BTreeMap::new();
        for (name, i) in &numeric {
            vals.insert(name.clone(), rec[*i].parse::<f64>().map_err(|_| bad(name))?);
        }
        rows.push((rec[ci].to_string(), block, vals));
    }
    Ok(MetricsTable { rows })
}

impl MetricsTable {
    fn conditions(&self) -> Vec<String> {
        let mut seen = Vec::new();
        for (c, _, _) in &self.rows {
            if !seen.contains(c) {
                seen.push(c.clone());
            }
        }
        seen
    }

    /// Blocks by conditions for one column. Every (condition, block) cell
    /// must be present exactly once.
    fn paired(&self, column: &str) -> Result<PairedData, CliError> {
        let conds = self.conditions();
        let blocks: BTreeSet<u32> = self.rows.iter().map(|r| r.1).collect();
        let mut cells: BTreeMap<(usize, u32), f64> = BTreeMap::new();
        for (c, b, vals) in &self.rows {
            let j = conds.iter().position(|x| x == c).unwrap_or(0);
            if cells.insert((j, *b), vals[column]).is_some() {
                return Err(CliError::Analysis(format!("duplicate metrics row for condition {c} block {b}")));
            }
        }
        let mut missing = Vec::new();
        let mut rows = Vec::new();
        for &b in &blocks {
            let mut row = Vec::with_capacity(conds.len());
            for (j, c) in conds.iter().enumerate() {
                match cells.get(&(j, b)) {
                    Some(v) => row.push(*v),
                    None => missing.push(format!("{c} block {b}")),
                }
            }
            rows.push(row);
        }
        if !missing.is_empty() {
            return Err(CliError::Core(teleop_core::Error::Shape(format!(
                "metrics are not rectangular; missing cells: {}",
                missing.join(", ")
            ))));
        }
        Ok(PairedData::new(conds, rows)?)
    }
}

/// Compare conditions on every metric in [`COMPARED_METRICS`].
pub fn cmd_stats(out: &Path, alpha: f64) -> Result<Outcome, CliError> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(CliError::Usage(format!("--alpha must lie in (0, 1), got {alpha}")));
    }
    let mut manifest = Manifest::load(out)?;
    let table = read_metrics(out, &manifest)?;
    if table.conditions().len() < 2 {
        return Err(CliError::Analysis(format!(
            "need at least 2 conditions to compare, found {}",
            table.conditions().len()
        )));
    }
    let mut reports: Vec<(&str, AnalysisReport)> = Vec::new();
    for (name, column) in COMPARED_METRICS {
        let data = table.paired(column)?;
        let report = compare_conditions(&data, alpha)
            .map_err(|e| CliError::Analysis(format!("metric {name}: {e}")))?;
        reports.push((name, report));
    }

    reset_dir(out, STATS, &mut manifest)?;
    let csv_rel = format!("{STATS}/stats_report.csv");
    let path = out.join(&csv_rel);
    let mut w = csv_writer(&path)?;
    let mut header = vec!["metric"];
    header.extend(AnalysisReport::CSV_HEADER);
    w.write_record(&header).map_err(|e| csv_err(&path, e))?;
    for (name, report) in &reports {
        for row in report.csv_rows() {
            let mut rec = vec![name.to_string()];
            rec.extend(row);
            w.write_record(&rec).map_err(|e| csv_err(&path, e))?;
        }
    }
    w.flush().map_err(|e| CliError::io(&path, e))?;
    drop(w);
    manifest.register(out, &csv_rel)?;

    let txt_rel = format!("{STATS}/stats_report.txt");
    let mut text = String::new();
    for (name, report) in &reports {
        text.push_str(&format!("== {name} ==\n"));
        text.push_str(&report.to_text());
        text.push('\n');
    }
    let path = out.join(&txt_rel);
    fs::write(&path, &text).map_err(|e| CliError::io(&path, e))?;
    manifest.register(out, &txt_rel)?;
    manifest.save(out)?;
    println!("stats: {} metrics compared", reports.len());
    Ok(Outcome::code(EXIT_OK))
}

/// Log-spaced histogram edges in ms: 10 bins per decade over [0.01, 1e4].
pub fn histogram_edges_ms() -> Vec<f64> {
    (0..=60).map(|i| 10f64.powf(-2.0 + i as f64 / 10.0)).collect()
}

/// Bin index into `edges.len() + 1` bins: 0 is underflow, the last is
/// overflow.
pub fn histogram_bin(edges: &[f64], value_ms: f64) -> usize {
    edges.partition_point(|e| *e <= value_ms)
}

/// Boxplot summaries of the error indices and per-condition delay
/// histograms.
pub fn cmd_plotdata(out: &Path) -> Result<Outcome, CliError> {
    let mut manifest = Manifest::load(out)?;
    let table = read_metrics(out, &manifest)?;
    reset_dir(out, PLOTDATA, &mut manifest)?;
    let conds = table.conditions();
    let mut errors = 0;

    for metric in ["epsilon", "epsilon_dot"] {
        let rel = format!("{PLOTDATA}/boxplot_{metric}.csv");
        let path = out.join(&rel);
        let mut w = csv_writer(&path)?;
        let err = |e| csv_err(&path, e);
        w.write_record(["condition", "min", "q1", "median", "q3", "max", "n"]).map_err(err)?;
        for c in &conds {
            let vals: Vec<f64> = table.rows.iter().filter(|r| &r.0 == c).map(|r| r.2[metric]).collect();
            let Ok(f) = five_number(&vals) else {
                eprintln!("warning: boxplot_{metric}: condition {c} has no values, skipped");
                continue;
            };
            w.write_record([
                c.clone(),
                f.min.to_string(),
                f.q1.to_string(),
                f.median.to_string(),
                f.q3.to_string(),
                f.max.to_string(),
                vals.len().to_string(),
            ])
            .map_err(err)?;
        }
        w.flush().map_err(|e| CliError::io(&path, e))?;
        drop(w);
        manifest.register(out, &rel)?;
    }

    let edges = histogram_edges_ms();
    // [t_send/t_recv][direction] -> per-condition counts
    let mut counts: BTreeMap<(usize, usize), Vec<Vec<u64>>> = BTreeMap::new();
    for run in manifest.runs.iter().filter(|r| r.status == RunStatus::Ok) {
        let Some(j) = conds.iter().position(|c| *c == run.condition) else {
            continue;
        };
        let Some(rel) = &run.packets else { continue };
        if let Err(e) = manifest.verify(out, rel) {
            eprintln!("error: {e}");
            errors += 1;
            continue;
        }
        let path = out.join(rel);
        let file = fs::File::open(&path).map_err(|e| CliError::io(&path, e))?;
        let packets = read_packets(BufReader::new(file))?;
        for p in &packets {
            let d = Direction::BOTH.iter().position(|x| *x == p.direction).unwrap_or(0);
            for (k, us) in [p.t_send_us, p.t_recv_us].into_iter().enumerate() {
                let hist = counts.entry((k, d)).or_insert_with(|| vec![vec![0; edges.len() + 1]; conds.len()]);
                hist[j][histogram_bin(&edges, us as f64 / 1000.0)] += 1;
            }
        }
    }
    for (k, quantity) in ["t_send", "t_recv"].into_iter().enumerate() {
        for (d, dir) in Direction::BOTH.into_iter().enumerate() {
            let Some(hist) = counts.get(&(k, d)) else {
                eprintln!("warning: no packets for hist_{quantity}_{}, skipped", dir.as_str());
                continue;
            };
            let rel = format!("{PLOTDATA}/hist_{quantity}_{}.csv", dir.as_str());
            let path = out.join(&rel);
            let mut w = csv_writer(&path)?;
            let mut header = vec!["bin".to_string(), "lo_ms".to_string(), "hi_ms".to_string()];
            header.extend(conds.iter().cloned());
            w.write_record(&header).map_err(|e| csv_err(&path, e))?;
            for b in 0..=edges.len() {
                let (label, lo, hi) = if b == 0 {
                    ("underflow".to_string(), 0.0, edges[0])
                } else if b == edges.len() {
                    ("overflow".to_string(), edges[b - 1], f64::INFINITY)
                } else {
                    ((b - 1).to_string(), edges[b - 1], edges[b])
                };
                let mut rec = vec![label, lo.to_string(), hi.to_string()];
                rec.extend(hist.iter().map(|h| h[b].to_string()));
                w.write_record(&rec).map_err(|e| csv_err(&path, e))?;
            }
            w.flush().map_err(|e| CliError::io(&path, e))?;
            drop(w);
            manifest.register(out, &rel)?;
        }
    }
    manifest.save(out)?;
    println!("plotdata: {} conditions", conds.len());
    Ok(Outcome::code(if errors > 0 { EXIT_ANALYSIS } else { EXIT_OK }))
}

/// run, metrics, stats, plotdata. A stage that fails with an analysis
/// error is reported and the chain continues; usage errors stop it. The
/// first nonzero exit code is returned.
pub fn cmd_all(
    spec: &ExperimentSpec,
    out: &Path,
    jobs: usize,
    seed: Option<u64>,
    alpha: f64,
) -> Result<Outcome, CliError> {
    let mut first = EXIT_OK;
    let stages: [&dyn Fn() -> Result<Outcome, CliError>; 4] = [
        &|| cmd_run(spec, out, jobs, seed),
        &|| cmd_metrics(out),
        &|| cmd_stats(out, alpha),
        &|| cmd_plotdata(out),
    ];
    for stage in stages {
        let code = match stage() {
            Ok(o) => o.code,
            Err(e @ (CliError::Usage(_) | CliError::Config(_))) => return Err(e),
            Err(e) => {
                eprintln!("error: {e}");
                e.exit_code()
            }
        };
        if first == EXIT_OK {
            first = code;
        }
    }
    Ok(Outcome::code(first))
}
