use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use thzcabin::channel::{
    cfr_to_cir, extract_mpcs, synthesize_cfr_from_mpcs, ExtractConfig, MpcSource, Window,
};
use thzcabin::format::{g6, VERSION_HEADER};
use thzcabin::hybrid::{
    cluster_mpcs, identify_by_rl, synthesize_realization, Gates, Identification,
};
use thzcabin::optimize::{stage1_screen, stage2_refine, OptProblem, RefineConfig, ScreenEntry};
use thzcabin::planning::{
    coverage_map, evaluate_population, sample_rx_population, threshold_grid, SinrSamples,
};
use thzcabin::raytrace::trace;
use thzcabin::scene::load_scene;
use thzcabin::{Cfr, Error, HybridModel, MaterialDb, MpcSet, OptResult, RxPopulation, Scene, Vec3};

use crate::config::{vec3, RunConfig};
use crate::{
    Cli, Command, CovermapArgs, ExtractArgs, FitArgs, IdentifyArgs, OptimizeArgs, OutArgs,
    PlanArgs, PopulationArgs, SceneArgs, SynthArgs, TraceArgs, WindowArg,
};

pub enum Failure {
    Usage(String),
    Data(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Data(e)
    }
}

type Res<T = ()> = std::result::Result<T, Failure>;

pub fn run(cli: Cli) -> Res {
    let cfg = RunConfig::load(cli.config.as_deref())?;
    if let Some(n) = cli.workers.or(cfg.workers) {
        if n == 0 {
            return Err(Failure::Usage("--workers must be at least 1".into()));
        }
        // only fails when a pool already exists, which cannot happen here
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    match cli.command {
        Command::Trace(a) => run_trace(&cfg, a),
        Command::Synth(a) => run_synth(&cfg, a),
        Command::Extract(a) => run_extract(a),
        Command::Fit(a) => run_fit(&cfg, a),
        Command::Identify(a) => run_identify(&cfg, a),
        Command::Covermap(a) => run_covermap(&cfg, a),
        Command::Plan(a) => run_plan(&cfg, a),
        Command::Optimize(a) => run_optimize(&cfg, a),
    }
}

fn emit(out: &Option<PathBuf>, bytes: &[u8]) -> Res {
    match out {
        Some(path) => std::fs::write(path, bytes).map_err(|e| Error::io(path, e))?,
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(bytes)
                .and_then(|_| stdout.flush())
                .map_err(|e| Error::io("<stdout>", e))?;
        }
    }
    Ok(())
}

fn emit_out(out: &OutArgs, bytes: &[u8]) -> Res {
    emit(&out.out, bytes)
}

fn read_file(path: &Path) -> Res<std::fs::File> {
    Ok(std::fs::File::open(path).map_err(|e| Error::io(path, e))?)
}

fn json<T: Serialize>(value: &T) -> Res<Vec<u8>> {
    let mut s = serde_json::to_string_pretty(value).map_err(Error::from)?;
    s.push('\n');
    Ok(s.into_bytes())
}

fn load(args: &SceneArgs) -> Res<Scene> {
    std::fs::metadata(&args.scene).map_err(|e| Error::io(&args.scene, e))?;
    let materials = match &args.materials {
        Some(p) => p.clone(),
        None => args
            .scene
            .parent()
            .unwrap_or_else(|| Path::new("."))
            .join("materials.csv"),
    };
    let db = MaterialDb::load(&materials)?;
    Ok(load_scene(&args.scene, db)?)
}

fn named(map: &BTreeMap<String, Vec3>, name: &str, what: &str) -> Res<Vec3> {
    map.get(name).copied().ok_or_else(|| {
        let known: Vec<&str> = map.keys().map(String::as_str).collect();
        Failure::Data(Error::InvalidInput(format!(
            "no {what} named `{name}` (scene has: {})",
            known.join(", ")
        )))
    })
}

fn named_all(scene: &Scene, names: &[String]) -> Res<Vec<Vec3>> {
    names
        .iter()
        .map(|n| named(scene.tx(), n, "transmitter"))
        .collect()
}

fn run_trace(cfg: &RunConfig, a: TraceArgs) -> Res {
    let scene = load(&a.scene)?;
    let tx = named(scene.tx(), &a.tx, "transmitter")?;
    let rx = named(scene.rx(), &a.rx, "receiver")?;
    let mut tc = cfg.plan.trace_config();
    if let Some(k) = a.max_order {
        tc.max_order = k;
    }
    tc.validate()?;
    let paths = trace(&scene, tx, rx, &tc);
    let mut buf = Vec::new();
    MpcSet::from_paths(&paths).write_csv(&mut buf, true)?;
    emit_out(&a.out, &buf)
}

fn run_synth(cfg: &RunConfig, a: SynthArgs) -> Res {
    let mpcs = MpcSet::read_csv(read_file(&a.paths)?, MpcSource::Measured)?;
    let cfr = synthesize_cfr_from_mpcs(&mpcs, cfg.band(a.band)?, cfg.axes()?)?;
    let mut buf = Vec::new();
    cfr.write_csv(&mut buf)?;
    emit_out(&a.out, &buf)
}

fn run_extract(a: ExtractArgs) -> Res {
    let cfr = Cfr::read_csv(read_file(&a.cfr)?)?;
    let window = match a.window {
        WindowArg::Rect => Window::Rect,
        WindowArg::Hann => Window::Hann,
    };
    if a.min_sep == 0 {
        return Err(Failure::Usage("--min-sep must be at least 1".into()));
    }
    let grid = cfr_to_cir(&cfr, window);
    let ec = ExtractConfig {
        noise_floor_db: a.floor_db,
        min_separation: a.min_sep,
    };
    let mut buf = Vec::new();
    extract_mpcs(&grid, &ec).write_csv(&mut buf, true)?;
    emit_out(&a.out, &buf)
}

fn run_fit(cfg: &RunConfig, a: FitArgs) -> Res {
    let measured = MpcSet::read_csv(read_file(&a.measured)?, MpcSource::Measured)?;
    let scene = load(&a.scene)?;
    let tx = named(scene.tx(), &a.tx, "transmitter")?;
    let rx = named(scene.rx(), &a.rx, "receiver")?;
    let tc = cfg.plan.trace_config();
    tc.validate()?;
    let anchors = trace(&scene, tx, rx, &tc);
    let gates = Gates {
        delay: a.gate_delay_ns * 1e-9,
        azimuth_deg: a.gate_az,
        zenith_deg: a.gate_zen,
    };
    let model = cluster_mpcs(&measured, &anchors, gates, tc.frequency)?;
    if let (Some(n), Some(seed), Some(path)) = (a.realize, a.seed.or(cfg.seed), &a.realization) {
        let mut buf = Vec::new();
        synthesize_realization(&model, n, seed)?.write_csv(&mut buf, true)?;
        emit(&Some(path.clone()), &buf)?;
    }
    emit_out(&a.out, model.to_json_string()?.as_bytes())
}

fn identification_fields(id: &Identification<f64>) -> String {
    format!(
        "{},{},{},{}",
        g6(id.rl_db),
        id.label,
        id.best_reference_db.map(g6).unwrap_or_default(),
        id.delta_db.map(g6).unwrap_or_default()
    )
}

fn run_identify(cfg: &RunConfig, a: IdentifyArgs) -> Res {
    let db = MaterialDb::load(&a.materials)?;
    if !(a.tolerance > 0.0) {
        return Err(Failure::Usage("--tolerance must be > 0".into()));
    }
    let mut lines = vec![VERSION_HEADER.to_string()];
    if let Some(rls) = &a.rl {
        lines.push("rl_db,label,reference_db,delta_db".into());
        for &rl in rls {
            lines.push(identification_fields(&identify_by_rl(rl, &db, a.tolerance)));
        }
    } else if let Some(path) = &a.model {
        let mut model = HybridModel::load(path)?;
        let reference = a.reference_db.unwrap_or_else(|| cfg.reference_db());
        model.identify_materials(&db, a.tolerance, reference)?;
        lines.push(
            "cluster,kind,mean_delay_ns,mean_power_db,rl_db,label,reference_db,delta_db".into(),
        );
        let kinds = model
            .rt_clusters
            .iter()
            .map(|c| (c, "rt"))
            .chain(model.non_rt_clusters.iter().map(|c| (c, "non_rt")));
        for (i, (c, kind)) in kinds.enumerate() {
            let fields = match &c.identified {
                Some(id) => identification_fields(id),
                None => ",los,,".into(),
            };
            lines.push(format!(
                "{i},{kind},{},{},{fields}",
                g6(c.mean_delay * 1e9),
                g6(c.mean_power_db),
            ));
        }
    }
    let mut text = lines.join("\n");
    text.push('\n');
    emit_out(&a.out, text.as_bytes())
}

fn run_covermap(cfg: &RunConfig, a: CovermapArgs) -> Res {
    let scene = load(&a.scene)?;
    let txs = named_all(&scene, &a.tx)?;
    cfg.plan.validate()?;
    let map = coverage_map(&scene, &txs, &cfg.plan, a.z, a.res)?;
    let mut buf = Vec::new();
    map.write_csv(&mut buf)?;
    emit_out(&a.out, &buf)
}

fn population(cfg: &RunConfig, scene: &Scene, p: &PopulationArgs) -> Res<RxPopulation> {
    let seed = p
        .rx_seed
        .or(cfg.rx_seed)
        .ok_or_else(|| Failure::Usage("--rx-seed is required (flag or config rx_seed)".into()))?;
    let count = p
        .rx_count
        .or(cfg.rx_count)
        .ok_or_else(|| Failure::Usage("--rx-count is required (flag or config rx_count)".into()))?;
    let b = scene.bounds();
    let from_flag = |v: &Option<Vec<f64>>| v.as_ref().map(|v| Vec3::new(v[0], v[1], v[2]));
    let mean = from_flag(&p.rx_mean)
        .or(cfg.rx_mean.map(vec3))
        .unwrap_or_else(|| (b.min + b.max) * 0.5);
    let stddev = from_flag(&p.rx_stddev)
        .or(cfg.rx_stddev.map(vec3))
        .unwrap_or_else(|| (b.max - b.min) * 0.25);
    Ok(sample_rx_population(scene, count, mean, stddev, seed)?)
}

fn parse_thresholds(s: &str) -> Res<Vec<f64>> {
    let bad = || Failure::Usage(format!("thresholds `{s}` are not lo:hi"));
    let (lo, hi) = s.split_once(':').ok_or_else(bad)?;
    let lo: i32 = lo.trim().parse().map_err(|_| bad())?;
    let hi: i32 = hi.trim().parse().map_err(|_| bad())?;
    if lo > hi {
        return Err(bad());
    }
    Ok(threshold_grid(lo, hi))
}

#[derive(Serialize)]
struct PlanSummary {
    transmitters: Vec<String>,
    rx_count: usize,
    rate_bps: f64,
    reachable: f64,
    served: Vec<usize>,
}

fn run_plan(cfg: &RunConfig, a: PlanArgs) -> Res {
    let thresholds = parse_thresholds(&a.thresholds)?;
    let scene = load(&a.scene)?;
    let txs = named_all(&scene, &a.tx)?;
    let pop = population(cfg, &scene, &a.pop)?;
    cfg.plan.validate()?;
    let outcomes = evaluate_population(&scene, &txs, &pop.points, &cfg.plan);
    let samples = SinrSamples::from_outcomes(&outcomes, &pop)?;
    let mut buf = Vec::new();
    samples.curve(&thresholds).write_csv(&mut buf)?;
    emit_out(&a.out, &buf)?;
    let rate = samples.rate_bps(cfg.plan.bandwidth, txs.len());
    log::info!("average rate {:.3} Gbps", rate / 1e9);
    if let Some(path) = &a.summary {
        let summary = PlanSummary {
            transmitters: a.tx.clone(),
            rx_count: pop.len(),
            rate_bps: rate,
            reachable: samples.coverage(f64::NEG_INFINITY),
            served: (0..txs.len())
                .map(|i| {
                    outcomes
                        .iter()
                        .filter(|o| o.serving == Some(i) && o.sinr_db.is_some())
                        .count()
                })
                .collect(),
        };
        emit(&Some(path.clone()), &json(&summary)?)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct OptimizeReport {
    version: &'static str,
    gamma_db: f64,
    p_th: f64,
    screen: Vec<ScreenEntry<f64>>,
    result: Option<OptResult>,
}

fn run_optimize(cfg: &RunConfig, a: OptimizeArgs) -> Res {
    let scene = load(&a.scene)?;
    let coords = named_all(&scene, &a.candidates)?;
    let pop = population(cfg, &scene, &a.pop)?;
    let gamma_db = a.gamma.or(cfg.gamma_db).unwrap_or(10.0);
    let p_th = a.pth.or(cfg.p_th).unwrap_or(0.9);
    let tol = a.tol.or(cfg.tol).unwrap_or(1e-4);
    if !(tol > 0.0) {
        return Err(Failure::Usage("--tol must be > 0".into()));
    }
    let mut problem = OptProblem {
        scene: &scene,
        cfg: cfg.plan.clone(),
        rx_pop: pop,
        n_tx: 1,
        bounds: *scene.bounds(),
        gamma_db,
        p_th,
        candidates: a.candidates.iter().cloned().zip(coords).collect(),
    };
    problem.validate()?;
    let thresholds = threshold_grid(-10, 40);
    let report = stage1_screen(&problem, &a.n, &thresholds)?;
    let result = if a.stage1_only {
        None
    } else {
        let start = report
            .best()
            .expect("at least one combination")
            .coords
            .clone();
        problem.n_tx = start.len();
        let d = RefineConfig::default();
        let rc = RefineConfig {
            tol,
            max_iter: a.max_iter.or(cfg.max_iter).unwrap_or(d.max_iter),
            mount_distance: cfg.mount_distance.unwrap_or(d.mount_distance),
        };
        let r = stage2_refine(&problem, &start, &rc, &thresholds)?;
        if !r.feasible {
            log::warn!("refined deployment violates the coverage constraint");
        }
        if let Some(path) = &a.map_out {
            let map = coverage_map(&scene, &r.coords, &problem.cfg, a.map_z, a.map_res)?;
            let mut buf = Vec::new();
            map.write_csv(&mut buf)?;
            emit(&Some(path.clone()), &buf)?;
        }
        Some(r)
    };
    let out = OptimizeReport {
        version: VERSION_HEADER,
        gamma_db,
        p_th,
        screen: report.entries,
        result,
    };
    emit_out(&a.out, &json(&out)?)
}
