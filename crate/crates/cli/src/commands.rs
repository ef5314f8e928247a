use std::io::Write;

use hybridsim::columnar::{coordinate_columns, fmt_f64, write_cell_set, write_header, write_measure};
use hybridsim::flow::{classify_fixed_point, find_fixed_points};
use hybridsim::hybrid::{self, markov_operator, monte_carlo_operator};
use hybridsim::limitset::{estimate_limit_set, hitting_experiment, LimitSetParams};
use hybridsim::measure::{default_transfer_refinement, estimate_invariant_family};
use hybridsim::systems::CATALOG;
use hybridsim::{HybridState, HybridSystemSpec, SamplingParams};

use crate::error::CliError;
use crate::run::{load_config, manifest_beside, LoadedConfig, Run};
use crate::{
    FixedPointArgs, HittingArgs, LimitSetArgs, MeasureArgs, OperatorArgs, SimulateArgs, SpiderArgs, StartArgs,
    StationaryArgs,
};

const UNITS: &str = "time in model units; x in state coordinates; state is a chain index";

/// Renders into memory; writes to a `Vec` cannot fail.
fn render(f: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> Vec<u8> {
    let mut buf = Vec::new();
    f(&mut buf).expect("in-memory write");
    buf
}

fn start_state(spec: &HybridSystemSpec, start: &StartArgs) -> Result<HybridState, CliError> {
    if start.x0.len() != spec.dim() {
        return Err(CliError::Usage(format!(
            "--x0 has {} coordinates but {} is {}-dimensional",
            start.x0.len(),
            spec.name(),
            spec.dim()
        )));
    }
    if start.z0 >= spec.state_count() {
        return Err(CliError::Usage(format!("--z0 {} must be below {}", start.z0, spec.state_count())));
    }
    Ok(HybridState::new(start.x0.clone(), start.z0))
}

fn system_meta(cfg: &LoadedConfig) -> Vec<(&'static str, String)> {
    vec![
        ("system", cfg.spec.name().to_string()),
        ("h", fmt_f64(cfg.spec.period())),
        ("states", cfg.spec.state_count().to_string()),
        ("units", UNITS.to_string()),
    ]
}

fn coords(x: &[f64]) -> String {
    x.iter().map(|v| fmt_f64(*v)).collect::<Vec<_>>().join(" ")
}

pub fn simulate(a: &SimulateArgs) -> Result<(), CliError> {
    let cfg = load_config(&a.config.config)?;
    let spec = &cfg.spec;
    let y0 = start_state(spec, &a.start)?;
    let dt = a.sample_dt.unwrap_or(spec.period() / 100.0);
    let traj = hybrid::simulate(spec, &y0, a.t_end, dt, a.seed)?;

    let mut meta = system_meta(&cfg);
    meta.extend([("seed", a.seed.to_string()), ("sample_dt", fmt_f64(dt)), ("t_end", fmt_f64(a.t_end))]);
    let mut columns = vec!["time".to_string(), "state".into()];
    columns.extend(coordinate_columns(spec.dim()));
    let data = render(|w| {
        write_header(w, "trajectory", &cfg.hash, &meta, &columns)?;
        for (t, y) in &traj.samples {
            writeln!(w, "{} {} {}", fmt_f64(*t), y.state, coords(&y.x))?;
        }
        Ok(())
    });
    let mut run = Run::new("simulate", &cfg, Some(a.seed), a);
    run.add(a.out.clone(), data);
    run.commit(manifest_beside(&a.out))?;
    println!("wrote {} samples to {}", traj.samples.len(), a.out.display());
    Ok(())
}

pub fn spider(a: &SpiderArgs) -> Result<(), CliError> {
    let cfg = load_config(&a.config.config)?;
    let spec = &cfg.spec;
    let y0 = start_state(spec, &a.start)?;
    let tree = hybrid::spider(spec, &y0, a.t0, a.depth, a.max_nodes)?;

    let mut meta = system_meta(&cfg);
    meta.extend([("t0", fmt_f64(a.t0)), ("depth", a.depth.to_string())]);
    let mut columns: Vec<String> = ["level", "node", "parent", "state", "probability"].map(String::from).to_vec();
    columns.extend(coordinate_columns(spec.dim()));
    let data = render(|w| {
        write_header(w, "spider", &cfg.hash, &meta, &columns)?;
        let mut offset = 0usize;
        let mut prev_offset = 0usize;
        for (level, nodes) in tree.levels.iter().enumerate() {
            for (i, n) in nodes.iter().enumerate() {
                let parent = n.parent.map_or(-1, |p| (prev_offset + p) as i64);
                let id = offset + i;
                writeln!(w, "{level} {id} {parent} {} {} {}", n.y.state, fmt_f64(n.probability), coords(&n.y.x))?;
            }
            prev_offset = offset;
            offset += nodes.len();
        }
        Ok(())
    });
    let mut run = Run::new("spider", &cfg, None, a);
    run.add(a.out.clone(), data);
    run.commit(manifest_beside(&a.out))?;
    println!("depth {}: {} leaves written to {}", tree.depth(), tree.leaves().len(), a.out.display());
    Ok(())
}

pub fn stationary(a: &StationaryArgs) -> Result<(), CliError> {
    let cfg = load_config(&a.config.config)?;
    let pi = cfg.spec.transition().stationary_distribution().map_err(hybridsim::Error::from)?;
    let values = cfg.spec.fields().state_values();
    let data = render(|w| {
        write_header(w, "stationary", &cfg.hash, &system_meta(&cfg), &["state", "z", "probability"].map(String::from))?;
        for (s, p) in pi.weights().iter().enumerate() {
            writeln!(w, "{s} {} {}", fmt_f64(values[s]), fmt_f64(*p))?;
        }
        Ok(())
    });
    let mut run = Run::new("stationary", &cfg, None, a);
    run.add(a.out.clone(), data);
    run.commit(manifest_beside(&a.out))?;
    for (s, p) in pi.weights().iter().enumerate() {
        println!("state {s} (z = {}): {p:.15}", values[s]);
    }
    Ok(())
}

fn measure_phases(a: &MeasureArgs, h: f64) -> Result<Vec<f64>, CliError> {
    let phases = match (&a.phases, a.n_phases) {
        (Some(p), _) => p.clone(),
        (None, Some(0)) => return Err(CliError::Usage("--n-phases must be positive".into())),
        (None, Some(n)) => (0..n).map(|i| i as f64 * h / n as f64).collect(),
        (None, None) => vec![0.0],
    };
    if let Some(bad) = phases.iter().find(|p| !(0.0..h).contains(*p)) {
        return Err(CliError::Usage(format!("phase {bad} outside [0, {h})")));
    }
    Ok(phases)
}

pub fn measure(a: &MeasureArgs) -> Result<(), CliError> {
    let cfg = load_config(&a.config.config)?;
    let spec = &cfg.spec;
    let y0 = start_state(spec, &a.start)?;
    let phases = measure_phases(a, spec.period())?;
    let refine = a.refine.unwrap_or_else(|| default_transfer_refinement(spec.dim()));
    let params = SamplingParams { burn_in: a.burn_in, n_samples: a.n_samples, seed: a.seed };
    let family = estimate_invariant_family(spec, &y0, &phases, params, spec.domain(), refine)?;

    let mut run = Run::new("measure", &cfg, Some(a.seed), a);
    for (i, est) in family.iter().enumerate() {
        let data = render(|w| write_measure(w, &est.measure, run.hash()));
        run.add(a.out_dir.join(format!("measure_phase{i}.txt")), data);
    }
    let mut meta = system_meta(&cfg);
    meta.extend([
        ("n_samples", a.n_samples.to_string()),
        ("burn_in", a.burn_in.to_string()),
        ("seed", a.seed.to_string()),
        ("refine", refine.to_string()),
    ]);
    let report = render(|w| {
        write_header(w, "invariance_report", &cfg.hash, &meta, &["phase", "t0", "tv"].map(String::from))?;
        for (i, est) in family.iter().enumerate() {
            writeln!(w, "{i} {} {}", fmt_f64(phases[i]), fmt_f64(est.invariance_tv))?;
        }
        Ok(())
    });
    run.add(a.out_dir.join("invariance.txt"), report);
    run.commit(a.out_dir.join("manifest.json"))?;
    for (i, est) in family.iter().enumerate() {
        println!("phase {i} t0 = {:.6}: TV(P_h mu, mu) = {:.6}", phases[i], est.invariance_tv);
    }
    Ok(())
}

pub fn limitset(a: &LimitSetArgs) -> Result<(), CliError> {
    let cfg = load_config(&a.config.config)?;
    let spec = &cfg.spec;
    let y0 = start_state(spec, &a.start)?;
    let params = LimitSetParams {
        t_total: a.t_total,
        sample_dt: a.sample_dt.unwrap_or(spec.period() / 50.0),
        burn_in: a.burn_in,
        revisit_threshold: a.revisit_threshold,
        seed: a.seed,
    };
    let ls = estimate_limit_set(spec, &y0, params)?;
    let mut meta = system_meta(&cfg);
    meta.extend([
        ("t_total", fmt_f64(params.t_total)),
        ("burn_in", fmt_f64(params.burn_in)),
        ("sample_dt", fmt_f64(params.sample_dt)),
        ("revisit_threshold", params.revisit_threshold.to_string()),
        ("seed", a.seed.to_string()),
    ]);
    let occ = &ls.occupancy;
    let data = render(|w| {
        write_cell_set(w, &ls.grid, &ls.cells, &[("visits", occ.visits()), ("epochs", occ.epochs())], &meta, &cfg.hash)
    });
    let mut run = Run::new("limitset", &cfg, Some(a.seed), a);
    run.add(a.out.clone(), data);
    run.commit(manifest_beside(&a.out))?;
    println!("{} recurrent cells of {} written to {}", ls.cells.len(), ls.grid.cell_count(), a.out.display());
    if let (Some(&first), Some(&last), 1) = (ls.cells.first(), ls.cells.last(), ls.grid.dim()) {
        let lo = ls.grid.cell_bounds(first).0[0];
        let hi = ls.grid.cell_bounds(last).1[0];
        println!("cells span [{lo:.4}, {hi:.4}]");
    }
    Ok(())
}

pub fn hitting(a: &HittingArgs) -> Result<(), CliError> {
    let cfg = load_config(&a.config.config)?;
    let r = hitting_experiment(&cfg.spec, a.x0, a.z0, a.x_star, a.m, a.trials, a.seed)?;
    let mut meta = system_meta(&cfg);
    meta.extend([("x0", fmt_f64(a.x0)), ("z0", a.z0.to_string()), ("seed", a.seed.to_string())]);
    let columns =
        ["x_star", "m", "k", "p_lower", "hits", "trials", "rate", "bound", "std_err", "pass"].map(String::from);
    let data = render(|w| {
        write_header(w, "hitting_report", &cfg.hash, &meta, &columns)?;
        writeln!(
            w,
            "{} {} {} {} {} {} {} {} {} {}",
            fmt_f64(a.x_star),
            r.m,
            r.k,
            fmt_f64(r.p_lower),
            r.hits,
            r.trials,
            fmt_f64(r.rate),
            fmt_f64(r.bound),
            fmt_f64(r.std_err),
            u8::from(r.passes())
        )
    });
    let mut run = Run::new("hitting", &cfg, Some(a.seed), a);
    run.add(a.out.clone(), data);
    run.commit(manifest_beside(&a.out))?;
    println!(
        "k = {}, p_lower = {:.6}; hit rate {:.6} over {} trials vs bound {:.6} (SE {:.2e}): {}",
        r.k,
        r.p_lower,
        r.rate,
        r.trials,
        r.bound,
        r.std_err,
        if r.passes() { "within bound" } else { "BELOW bound" }
    );
    Ok(())
}

fn parse_seeds(text: &str, dim: usize) -> Result<Vec<Vec<f64>>, CliError> {
    text.split(';')
        .filter(|s| !s.trim().is_empty())
        .map(|s| {
            let v = s
                .split(',')
                .map(|t| t.trim().parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| CliError::Usage(format!("bad seed `{s}`: {e}")))?;
            if v.len() != dim {
                return Err(CliError::Usage(format!("seed `{s}` needs {dim} coordinates")));
            }
            Ok(v)
        })
        .collect()
}

fn lattice_seeds(spec: &HybridSystemSpec, per_axis: usize) -> Vec<Vec<f64>> {
    let domain = spec.domain();
    let lattice = hybridsim::Grid::new(domain.lo().to_vec(), domain.hi().to_vec(), vec![per_axis; spec.dim()])
        .expect("domain box is valid");
    (0..lattice.cell_count()).map(|c| lattice.center(c)).collect()
}

pub fn fixed_points(a: &FixedPointArgs) -> Result<(), CliError> {
    let cfg = load_config(&a.config.config)?;
    let spec = &cfg.spec;
    if a.state >= spec.state_count() {
        return Err(CliError::Usage(format!("--state {} must be below {}", a.state, spec.state_count())));
    }
    let seeds = match &a.seeds {
        Some(text) => parse_seeds(text, spec.dim())?,
        None => lattice_seeds(spec, 12),
    };
    let found = find_fixed_points(spec.fields(), a.state, &seeds, a.tol);
    let mut meta = system_meta(&cfg);
    meta.extend([
        ("field_state", a.state.to_string()),
        ("seeds", seeds.len().to_string()),
        ("failed_seeds", found.failed_seeds.len().to_string()),
    ]);
    let mut columns = vec!["root".to_string()];
    columns.extend(coordinate_columns(spec.dim()));
    columns.push("kind".into());
    let kinds: Vec<_> = found.roots.iter().map(|r| classify_fixed_point(spec.fields(), a.state, r)).collect();
    let data = render(|w| {
        write_header(w, "fixed_points", &cfg.hash, &meta, &columns)?;
        for (i, (r, k)) in found.roots.iter().zip(&kinds).enumerate() {
            writeln!(w, "{i} {} {k:?}", coords(r))?;
        }
        Ok(())
    });
    let mut run = Run::new("fixed-points", &cfg, None, a);
    run.add(a.out.clone(), data);
    run.commit(manifest_beside(&a.out))?;
    for (r, k) in found.roots.iter().zip(&kinds) {
        println!("{r:?} {k:?}");
    }
    Ok(())
}

pub fn operator(a: &OperatorArgs) -> Result<(), CliError> {
    let cfg = load_config(&a.config.config)?;
    let spec = &cfg.spec;
    let y0 = start_state(spec, &a.start)?;
    if a.coordinate == 0 || a.coordinate > spec.dim() {
        return Err(CliError::Usage(format!("--coordinate must lie in 1..={}", spec.dim())));
    }
    let axis = a.coordinate - 1;
    let f = |y: &HybridState| y.x[axis];
    let mut rows = Vec::new();
    for n in 0..=a.steps {
        let exact = markov_operator(spec, f, &y0, n, a.t0, a.max_nodes)?;
        let mc = match a.mc_trials {
            Some(trials) => Some(monte_carlo_operator(spec, f, &y0, n, a.t0, trials, a.seed)?),
            None => None,
        };
        rows.push((n, exact, mc));
    }
    let mut meta = system_meta(&cfg);
    meta.extend([("t0", fmt_f64(a.t0)), ("observable", format!("x{}", a.coordinate))]);
    let mut columns: Vec<String> = vec!["n".into(), "exact".into()];
    if a.mc_trials.is_some() {
        columns.extend(["mc_mean".into(), "mc_std_err".into()]);
    }
    let data = render(|w| {
        write_header(w, "operator", &cfg.hash, &meta, &columns)?;
        for (n, exact, mc) in &rows {
            write!(w, "{n} {}", fmt_f64(*exact))?;
            if let Some(mc) = mc {
                write!(w, " {} {}", fmt_f64(mc.mean), fmt_f64(mc.std_err))?;
            }
            writeln!(w)?;
        }
        Ok(())
    });
    let mut run = Run::new("operator", &cfg, a.mc_trials.map(|_| a.seed), a);
    run.add(a.out.clone(), data);
    run.commit(manifest_beside(&a.out))?;
    for (n, exact, mc) in &rows {
        match mc {
            Some(mc) => println!("n = {n}: exact {exact:.10}, Monte Carlo {:.10} +/- {:.2e}", mc.mean, mc.std_err),
            None => println!("n = {n}: exact {exact:.10}"),
        }
    }
    Ok(())
}

pub fn example_config(system: &str) -> Result<(), CliError> {
    let entry = CATALOG.iter().find(|e| e.name == system).ok_or_else(|| {
        let names: Vec<_> = CATALOG.iter().map(|e| e.name).collect();
        CliError::Usage(format!("unknown system `{system}`; available: {}", names.join(", ")))
    })?;
    print!("{}", entry.example_config);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::PathBuf;

    #[test]
    fn seeds_parse() {
        assert_eq!(parse_seeds("0.67,0.09; 2.64,0.41", 2).unwrap(), vec![vec![0.67, 0.09], vec![2.64, 0.41]]);
        assert!(parse_seeds("1,2,3", 2).is_err());
        assert!(parse_seeds("a,b", 2).is_err());
    }

    #[test]
    fn manifest_name() {
        assert_eq!(manifest_beside(&PathBuf::from("out/traj.txt")), PathBuf::from("out/traj.txt.manifest.json"));
    }
}
