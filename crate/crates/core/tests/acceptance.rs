//! Acceptance gate. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any fails.

use std::path::PathBuf;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use marchon::bregman::MirrorKind;
use marchon::data::{
    normalize, parse_libsvm, read_libsvm, serialize_libsvm, RawDataset, SyntheticSpec, BENCHMARK_DATASETS,
};
use marchon::engine::{run, Algorithm, DisplacementCheck, EngineError, RunTrace};
use marchon::experiment::{run_cells, summarize, DatasetSource, Experiment, ExperimentConfig, MethodConfig};
use marchon::graph::{build_topology, metropolis_transition, stationary_distribution, Topology, TransitionMatrix};
use marchon::losses::{local_loss, local_loss_and_grad, DatasetShard, LossKind, LossSpec};
use marchon::sampler::occupancy_histogram;
use marchon::schedules::ScheduleKind;
use marchon::spectral::spectral_report;

type Verdict = Result<(bool, String), String>;

struct Outcome {
    id: u32,
    name: &'static str,
    pass: bool,
    detail: String,
    elapsed: Duration,
}

fn criterion(id: u32, name: &'static str, limit: Duration, body: impl FnOnce() -> Verdict) -> Outcome {
    eprintln!("running criterion {id}: {name}");
    let start = Instant::now();
    let result = body();
    let elapsed = start.elapsed();
    let (pass, mut detail) = match result {
        Ok(v) => v,
        Err(e) => (false, format!("error: {e}")),
    };
    let in_time = elapsed <= limit;
    if !in_time {
        detail.push_str(&format!("; over the {:.0} s budget", limit.as_secs_f64()));
    }
    Outcome { id, name, pass: pass && in_time, detail, elapsed }
}

fn jobs() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

const TOPOLOGIES: [Topology; 4] = [
    Topology::Complete,
    Topology::Star,
    Topology::ErdosRenyi { p: 0.2 },
    Topology::WattsStrogatz { k: 4, beta: 0.3 },
];

fn synthetic(rows: usize, d: usize) -> DatasetSource {
    DatasetSource::Synthetic(SyntheticSpec { rows, d, feature_scale: 0.5, flip: 0.05, seed: 0 })
}

fn config(n: usize, horizon_t: u64, seeds: u64) -> ExperimentConfig {
    let mut c = ExperimentConfig::default();
    c.n = n;
    c.horizon_t = horizon_t;
    c.seeds = (0..seeds).collect();
    c.dataset = synthetic(5000, 5);
    c.regret = false;
    c.stride = Some(horizon_t);
    c
}

fn method(schedule: ScheduleKind, coefficient: Option<f64>) -> MethodConfig {
    MethodConfig { name: None, schedule, algorithm: None, coefficient }
}

fn traces(exp: &Experiment) -> Result<Vec<Vec<RunTrace>>, String> {
    let outcomes = run_cells(exp, jobs()).map_err(|e| e.to_string())?;
    let mut by_method = vec![Vec::new(); exp.methods.len()];
    for o in outcomes {
        by_method[o.method].push(o.result.map_err(|e| format!("{} seed {}: {e}", exp.methods[o.method].label, o.seed))?);
    }
    Ok(by_method)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Mean `f(x_bar_T) - f*` over the seeds of a one-method experiment.
fn mean_suboptimality(c: ExperimentConfig) -> Result<f64, String> {
    let exp = Experiment::resolve(c).map_err(|e| e.to_string())?;
    let runs = traces(&exp)?;
    Ok(mean(&runs[0].iter().map(|t| t.f_x_bar - exp.f_star).collect::<Vec<_>>()))
}

fn ols_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let (mx, my) = (mean(xs), mean(ys));
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

fn dense(p: &TransitionMatrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(p.n(), p.n(), p.as_slice())
}

fn row_sum_deviation(m: &DMatrix<f64>) -> f64 {
    let target = 1.0 / m.nrows() as f64;
    m.row_iter().map(|r| r.iter().map(|v| (v - target).abs()).sum::<f64>()).fold(0.0, f64::max)
}

fn metropolis_chains() -> Result<Vec<(String, TransitionMatrix)>, String> {
    let mut out = Vec::new();
    for topology in TOPOLOGIES {
        for n in [5usize, 10, 25, 50] {
            let g = build_topology(topology, n, 1).map_err(|e| e.to_string())?;
            out.push((format!("{} n={n}", topology.name()), metropolis_transition(&g).map_err(|e| e.to_string())?));
        }
    }
    Ok(out)
}

fn mixing_bound() -> Verdict {
    let mut worst = f64::NEG_INFINITY;
    let mut failures = Vec::new();
    let chains = metropolis_chains()?;
    for (label, p) in &chains {
        let report = spectral_report(p).map_err(|e| format!("{label}: {e}"))?;
        let (Some(c_p), Some(tau)) = (report.c_p, report.tau) else {
            failures.push(format!("{label}: not diagonalizable"));
            continue;
        };
        let pm = dense(p);
        let mut power = pm.clone();
        for t in 1..=200u64 {
            if t >= tau.max(1) {
                let gap = row_sum_deviation(&power) - (c_p * report.rho.powi(t as i32) + 1e-9);
                worst = worst.max(gap);
                if gap > 0.0 {
                    failures.push(format!("{label} t={t}"));
                    break;
                }
            }
            power = &power * &pm;
        }
    }
    Ok((
        failures.is_empty(),
        format!("{} chains, t up to 200, max(dev - bound) = {worst:.2e}{}", chains.len(), fail_list(&failures)),
    ))
}

fn fail_list(f: &[String]) -> String {
    if f.is_empty() {
        String::new()
    } else {
        format!("; failing: {}", f.join(", "))
    }
}

fn euclidean_reduction() -> Verdict {
    let setups = [
        (Topology::Complete, LossKind::LogisticLog, ScheduleKind::Marchon),
        (Topology::Star, LossKind::LeastSquares, ScheduleKind::Mcgd { q: 0.75 }),
        (Topology::ErdosRenyi { p: 0.4 }, LossKind::RidgeLogistic { lambda: 0.1 }, ScheduleKind::McsgdEmd),
        (Topology::WattsStrogatz { k: 4, beta: 0.3 }, LossKind::NonconvexLogistic { lambda: 1.0 }, ScheduleKind::MarkovSgd),
        (Topology::Complete, LossKind::LogisticLiteral, ScheduleKind::Marchon),
    ];
    let mut worst = 0.0f64;
    for (i, (topology, loss, schedule)) in setups.into_iter().enumerate() {
        let mut c = config(10, 500, 1);
        c.topology = topology;
        c.graph_seed = i as u64;
        c.partition_seed = i as u64;
        c.loss = loss;
        c.dataset = DatasetSource::Synthetic(SyntheticSpec { rows: 400, d: 4, feature_scale: 0.5, flip: 0.05, seed: i as u64 });
        c.methods = vec![method(schedule, Some(0.5))];
        let exp = Experiment::resolve(c).map_err(|e| e.to_string())?;
        let mut rc = exp.run_config(&exp.methods[0], 100 + i as u64);
        rc.retain_every = Some(1);
        rc.algorithm = Algorithm::Marchon;
        let a = run(&rc, None).map_err(|e| e.to_string())?;
        rc.algorithm = Algorithm::BaselineSgd;
        let b = run(&rc, None).map_err(|e| e.to_string())?;
        if a.retained.len() != 500 || b.retained.len() != 500 {
            return Err("trajectory not fully retained".into());
        }
        for ((_, x), (_, y)) in a.retained.iter().zip(&b.retained) {
            for (u, v) in x.iter().zip(y) {
                worst = worst.max((u - v).abs());
            }
        }
    }
    Ok((worst <= 1e-12, format!("5 configs, n=10, T=500, max |x_marchon - x_sgd| = {worst:.2e}")))
}

fn displacement_bound() -> Verdict {
    let losses = [
        LossKind::LogisticLog,
        LossKind::LogisticLiteral,
        LossKind::RidgeLogistic { lambda: 0.1 },
        LossKind::LeastSquares,
        LossKind::NonconvexLogistic { lambda: 1.0 },
    ];
    let schedules = [
        ScheduleKind::Marchon,
        ScheduleKind::MarchonConvex,
        ScheduleKind::Mcgd { q: 0.75 },
        ScheduleKind::MarkovSgd,
        ScheduleKind::McsgdEmd,
    ];
    let mut runs = 0;
    let mut steps = 0u64;
    let mut diverged = Vec::new();
    for map in [MirrorKind::SquaredEuclidean, MirrorKind::NegativeEntropy] {
        for (li, loss) in losses.into_iter().enumerate() {
            let mut c = config(10, 500, 2);
            c.topology = TOPOLOGIES[li % TOPOLOGIES.len()];
            c.loss = loss;
            c.map = map;
            c.eta1 = 0.005;
            c.dataset = DatasetSource::Synthetic(SyntheticSpec { rows: 300, d: 4, feature_scale: 0.5, flip: 0.05, seed: li as u64 });
            c.methods = schedules
                .iter()
                .map(|&s| MethodConfig { algorithm: Some(Algorithm::Marchon), ..method(s, None) })
                .collect();
            let exp = Experiment::resolve(c).map_err(|e| e.to_string())?;
            for m in &exp.methods {
                for &seed in &exp.config.seeds {
                    let mut rc = exp.run_config(m, seed);
                    rc.displacement = DisplacementCheck::Strict;
                    runs += 1;
                    match run(&rc, None) {
                        Ok(trace) => steps += trace.horizon_t,
                        Err(EngineError::Divergence { step, .. }) => {
                            steps += step - 1;
                            diverged.push(format!("{map:?}/{loss:?}/{}", m.label));
                        }
                        Err(e) => return Err(format!("{map:?} {loss:?} {}: {e}", m.label)),
                    }
                }
            }
        }
    }
    diverged.dedup();
    let note = if diverged.is_empty() {
        String::new()
    } else {
        format!("; checked up to divergence: {}", diverged.join(", "))
    };
    Ok((true, format!("{runs} runs, {steps} steps, both mirror maps, zero violations{note}")))
}

fn gradient_check() -> Verdict {
    let kinds = [
        LossKind::LogisticLog,
        LossKind::LogisticLiteral,
        LossKind::RidgeLogistic { lambda: 0.1 },
        LossKind::LeastSquares,
        LossKind::NonconvexLogistic { lambda: 1.0 },
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    let d = 5;
    for kind in kinds {
        for _ in 0..100 {
            let rows: Vec<Vec<f64>> = (0..8).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
            let labels = (0..8).map(|_| if rng.random_bool(0.5) { 1.0 } else { -1.0 }).collect();
            let shard = DatasetShard::new(rows, labels).map_err(|e| e.to_string())?;
            let spec = LossSpec::new(kind, std::slice::from_ref(&shard)).map_err(|e| e.to_string())?;
            let x: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            let (_, g) = local_loss_and_grad(&spec, &shard, &x).map_err(|e| e.to_string())?;
            let h = 1e-5;
            let mut fd = vec![0.0; d];
            for j in 0..d {
                let (mut xp, mut xm) = (x.clone(), x.clone());
                xp[j] += h;
                xm[j] -= h;
                let fp = local_loss(&spec, &shard, &xp).map_err(|e| e.to_string())?;
                let fm = local_loss(&spec, &shard, &xm).map_err(|e| e.to_string())?;
                fd[j] = (fp - fm) / (2.0 * h);
            }
            let diff = fd.iter().zip(&g).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            let scale = g.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            worst = worst.max(diff / scale);
        }
    }
    Ok((worst <= 1e-5, format!("5 loss kinds x 100 probes, max relative error {worst:.2e}")))
}

/// Power iteration from a point mass, independent of the library routine.
fn power_iteration(p: &TransitionMatrix) -> Vec<f64> {
    let n = p.n();
    let mut pi = vec![0.0; n];
    pi[0] = 1.0;
    for _ in 0..1_000_000 {
        let mut next = vec![0.0; n];
        for (i, &w) in pi.iter().enumerate() {
            for (j, v) in p.row(i).iter().enumerate() {
                next[j] += w * v;
            }
        }
        let delta: f64 = next.iter().zip(&pi).map(|(a, b)| (a - b).abs()).sum();
        pi = next;
        if delta < 1e-15 {
            break;
        }
    }
    pi
}

fn stationary_uniformity() -> Verdict {
    let chains = metropolis_chains()?;
    let (mut worst_pi, mut worst_occ) = (0.0f64, 0.0f64);
    for (_, p) in &chains {
        let uniform = 1.0 / p.n() as f64;
        for pi in [stationary_distribution(p, 1e-15, 1_000_000), power_iteration(p)] {
            worst_pi = worst_pi.max(pi.iter().map(|v| (v - uniform).abs()).fold(0.0, f64::max));
        }
        for seed in 0..3 {
            let occ = occupancy_histogram(p, 0, 1_000_000, seed).map_err(|e| e.to_string())?;
            worst_occ = worst_occ.max(occ.iter().map(|v| (v - uniform).abs()).fold(0.0, f64::max));
        }
    }
    Ok((
        worst_pi <= 1e-9 && worst_occ <= 0.01,
        format!("{} chains, max |pi - 1/n| = {worst_pi:.2e}, max occupancy error at t=1e6 = {worst_occ:.2e}", chains.len()),
    ))
}

fn rate_slope(loss: LossKind, schedule: ScheduleKind, lo: f64, hi: f64) -> Verdict {
    let horizons = [100u64, 1_000, 10_000, 100_000];
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for &t in &horizons {
        let mut c = config(50, t, 20);
        c.loss = loss;
        c.methods = vec![method(schedule, Some(1.0))];
        let s = mean_suboptimality(c)?;
        if !(s > 0.0) {
            return Err(format!("non-positive suboptimality {s:e} at T={t}"));
        }
        xs.push((t as f64).ln());
        ys.push(s.ln());
    }
    let slope = ols_slope(&xs, &ys);
    let values: Vec<String> = ys.iter().map(|y| format!("{:.2e}", y.exp())).collect();
    Ok((
        (lo..=hi).contains(&slope),
        format!("mean f(x_bar_T) - f* = [{}], slope {slope:.3} (want [{lo}, {hi}])", values.join(", ")),
    ))
}

fn data_dir() -> PathBuf {
    std::env::var_os("MARCHON_DATA_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data"))
}

fn local_dataset(name: &str) -> Option<PathBuf> {
    let path = data_dir().join(name);
    path.is_file().then_some(path)
}

fn comparison_once(dataset: DatasetSource, tag: &str, regret_bound: &mut Vec<String>) -> Result<(bool, String), String> {
    let mut c = config(50, 2000, 20);
    c.dataset = dataset;
    c.regret = true;
    let exp = Experiment::resolve(c).map_err(|e| e.to_string())?;
    let outcomes = run_cells(&exp, jobs()).map_err(|e| e.to_string())?;
    for s in summarize(&exp, &outcomes) {
        match s.regret_bound {
            Some(r) if [r.mean_suboptimality, r.mean_regret, r.denominator, r.bound, r.ratio].iter().all(|v| v.is_finite()) => {}
            other => regret_bound.push(format!("{tag}/{}: {other:?}", s.method)),
        }
    }
    let mut runs = vec![Vec::new(); exp.methods.len()];
    for o in outcomes {
        runs[o.method].push(o.result.map_err(|e| format!("{} seed {}: {e}", exp.methods[o.method].label, o.seed))?);
    }
    let ours: Vec<f64> = runs[0].iter().map(|t| t.f_final).collect();
    let mut pass = true;
    let mut parts = vec![format!("{tag}: marchon f(x_T) {:.4e}", mean(&ours))];
    for (m, baseline) in exp.methods.iter().zip(&runs).skip(1) {
        let theirs: Vec<f64> = baseline.iter().map(|t| t.f_final).collect();
        let wins = ours.iter().zip(&theirs).filter(|(a, b)| a <= b).count();
        let share = wins as f64 / ours.len() as f64;
        pass &= share >= 0.8;
        parts.push(format!("{} {:.4e} ({wins}/{})", m.label, mean(&theirs), ours.len()));
    }
    Ok((pass, parts.join(", ")))
}

fn method_comparison(regret_bound: &mut Vec<String>) -> Verdict {
    let (mut pass, mut detail) = comparison_once(synthetic(5000, 5), "synthetic", regret_bound)?;
    match local_dataset("cod-rna") {
        Some(path) => {
            let (p, d) = comparison_once(DatasetSource::Libsvm { path }, "cod-rna", regret_bound)?;
            pass &= p;
            detail = format!("{detail}; {d}");
        }
        None => detail.push_str("; cod-rna not present"),
    }
    Ok((pass, detail))
}

fn network_size() -> Verdict {
    let sizes = [200usize, 50, 10];
    let mut subs = Vec::new();
    for &n in &sizes {
        let mut c = config(n, 2000, 20);
        c.methods = vec![method(ScheduleKind::Marchon, None)];
        subs.push(mean_suboptimality(c)?);
    }
    let pass = subs.windows(2).all(|w| w[1] <= 1.05 * w[0]);
    let parts: Vec<String> = sizes.iter().zip(&subs).map(|(n, s)| format!("n={n} {s:.4e}")).collect();
    Ok((pass, format!("T=2000, {}", parts.join(", "))))
}

fn topology_comparison() -> Verdict {
    let mut subs = Vec::new();
    for topology in TOPOLOGIES {
        let mut c = config(200, 2000, 20);
        c.topology = topology;
        c.methods = vec![method(ScheduleKind::Marchon, None)];
        subs.push((topology.name(), mean_suboptimality(c)?));
    }
    let star = subs.iter().find(|(n, _)| *n == "star").unwrap().1;
    let complete = subs.iter().find(|(n, _)| *n == "complete").unwrap().1;
    let largest = subs.iter().all(|&(_, s)| s <= star);
    let parts: Vec<String> = subs.iter().map(|(n, s)| format!("{n} {s:.4e}")).collect();
    Ok((
        largest && star <= 5.0 * complete,
        format!("n=200, T=2000, {}; star/complete = {:.2}", parts.join(", "), star / complete),
    ))
}

fn nonconvex() -> Verdict {
    let mut c = config(10, 100_000, 20);
    c.loss = LossKind::NonconvexLogistic { lambda: 1.0 };
    c.stride = None;
    c.methods = vec![method(ScheduleKind::MarchonNonconvex, Some(1.0))];
    let exp = Experiment::resolve(c).map_err(|e| e.to_string())?;
    let runs = traces(&exp)?;
    let at = |t: u64| -> Result<f64, String> {
        let v: Option<Vec<f64>> = runs[0].iter().map(|r| r.mean_grad_sq(t)).collect();
        v.map(|v| mean(&v)).ok_or_else(|| "missing gradient evaluations".to_string())
    };
    let (early, late) = (at(1_000)?, at(100_000)?);
    let eta = runs[0][0].rows[0].eta;
    Ok((
        late < 0.1 * early,
        format!("eta = {eta:.3e}, running mean |grad f|^2: T=1e3 {early:.3e}, T=1e5 {late:.3e}, ratio {:.3}", late / early),
    ))
}

fn regret_bound_present(problems: &[String]) -> Verdict {
    Ok((problems.is_empty(), if problems.is_empty() { "finite report for every method of every comparison run".into() } else { problems.join("; ") }))
}

fn random_dataset(rng: &mut ChaCha8Rng) -> RawDataset {
    let d = rng.random_range(1..8);
    let rows = rng.random_range(1..30);
    let feature = |rng: &mut ChaCha8Rng| match rng.random_range(0..4) {
        0 | 1 => 0.0,
        2 => rng.random_range(-1e3..1e3),
        _ => rng.random_range(-1.0..1.0),
    };
    let two_labels = rng.random_bool(0.8);
    RawDataset {
        d,
        rows: (0..rows).map(|_| (0..d).map(|_| feature(rng)).collect()).collect(),
        labels: (0..rows).map(|_| if !two_labels || rng.random_bool(0.5) { 1.0 } else { -1.0 }).collect(),
        normalization: None,
    }
}

fn data_layer() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut bad = Vec::new();
    for i in 0..1000 {
        let ds = random_dataset(&mut rng);
        let mut buf = Vec::new();
        serialize_libsvm(&ds, &mut buf).map_err(|e| e.to_string())?;
        let back = parse_libsvm(buf.as_slice()).map_err(|e| e.to_string())?;
        if back.d != ds.d || back.rows != ds.rows || back.labels != ds.labels {
            bad.push(format!("round trip #{i}"));
        }
        let once = normalize(&ds);
        if normalize(&once).rows != once.rows {
            bad.push(format!("idempotence #{i}"));
        }
    }
    let mut checked = Vec::new();
    for (name, rows, d) in BENCHMARK_DATASETS {
        if let Some(path) = local_dataset(name) {
            let ds = read_libsvm(&path).map_err(|e| format!("{name}: {e}"))?;
            if ds.len() != rows || ds.d != d {
                bad.push(format!("{name}: {}x{} vs {rows}x{d}", ds.len(), ds.d));
            }
            checked.push(name);
        }
    }
    let present = if checked.is_empty() { "no benchmark datasets present".to_string() } else { format!("checked {}", checked.join(", ")) };
    Ok((bad.is_empty(), format!("1000 random datasets round-trip and normalize idempotently; {present}{}", fail_list(&bad))))
}

fn main() {
    let secs = Duration::from_secs;
    let mut regret_bound = Vec::new();
    let mut outcomes = vec![
        criterion(1, "mixing bound", secs(10), mixing_bound),
        criterion(2, "euclidean reduction", secs(5), euclidean_reduction),
        criterion(3, "displacement bound", Duration::MAX, displacement_bound),
        criterion(4, "gradient correctness", secs(2), gradient_check),
        criterion(5, "stationary uniformity", secs(30), stationary_uniformity),
        criterion(6, "convex rate shape", secs(300), || {
            rate_slope(LossKind::LeastSquares, ScheduleKind::Marchon, -1.2, -0.4)
        }),
        criterion(7, "strongly convex rate shape", secs(300), || {
            rate_slope(LossKind::RidgeLogistic { lambda: 0.1 }, ScheduleKind::MarchonStronglyConvex, -1.3, -0.7)
        }),
        criterion(8, "method comparison", secs(600), || method_comparison(&mut regret_bound)),
        criterion(9, "network size", secs(600), network_size),
        criterion(10, "topology", secs(900), topology_comparison),
        criterion(11, "non-convex diagnostics", secs(300), nonconvex),
    ];
    let t1 = regret_bound.clone();
    outcomes.push(criterion(12, "regret diagnostic", Duration::MAX, move || regret_bound_present(&t1)));
    outcomes.push(criterion(13, "data layer", secs(10), data_layer));

    println!();
    for o in &outcomes {
        println!(
            "{} {:>2} {:<28} {:>7.2}s  {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.id,
            o.name,
            o.elapsed.as_secs_f64(),
            o.detail
        );
    }
    let failed = outcomes.iter().filter(|o| !o.pass).count();
    println!("\nacceptance: {} passed, {failed} failed", outcomes.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
