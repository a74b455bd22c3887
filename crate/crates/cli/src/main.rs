use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use nlw_ldp::dynamics::{find_equilibria, heteroclinic_scan, ModelConfig};
use nlw_ldp::energy;
use nlw_ldp::graph::fmt_real;
use nlw_ldp::harness::{
    emit, ldp_verify, load_or_compute_pipeline, transition_vs_vtilde, ExperimentConfig, Format, Pipeline, Report,
};
use nlw_ldp::stochastic::{simulate, write_trajectory_csv};

#[derive(Parser)]
#[command(name = "nlw-ldp", version, about = "Equilibria, quasipotentials and Monte Carlo large-deviation checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment file (TOML).
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated noise intensities, strictly decreasing.
    #[arg(long, value_delimiter = ',')]
    eps_list: Option<Vec<f64>>,
}

#[derive(Subcommand)]
enum Command {
    /// Equilibria and their stability.
    Equilibria(Common),
    /// One sample path of the stochastic equation.
    Simulate(Common),
    /// Branches of the unstable manifolds and where they settle.
    Map(Common),
    /// Quasipotentials between all equilibria.
    Quasipotential(Common),
    /// Chain minima W and the rate function.
    Wgraph(Common),
    /// Occupation of neighbourhoods against the rate function.
    LdpVerify(Common),
    /// Boundary chain transitions against V~.
    Chain(Common),
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut exp = ExperimentConfig::load(&self.config)?;
        if let Some(s) = self.seed {
            exp.seed = s;
        }
        if let Some(o) = &self.out {
            exp.output.dir = o.clone();
        }
        if let Some(e) = &self.eps_list {
            exp.eps = e.clone();
        }
        exp.validate()?;
        fs::create_dir_all(&exp.output.dir).with_context(|| format!("creating {}", exp.output.dir.display()))?;
        Ok(exp)
    }
}

fn pipeline(exp: &ExperimentConfig) -> Result<Pipeline> {
    let mut exp = exp.clone();
    let cached = exp.output.dir.join("pipeline.json");
    if exp.output.pipeline.is_none() {
        exp.output.pipeline = Some(cached.clone());
    }
    let p = load_or_compute_pipeline(&exp)?;
    if !cached.exists() {
        p.write_json(&cached)?;
    }
    Ok(p)
}

fn write_rows(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut s = header.join(",");
    s.push('\n');
    for r in rows {
        s.push_str(&r.join(","));
        s.push('\n');
    }
    fs::write(path, s).with_context(|| format!("writing {}", path.display()))
}

fn report<R: Report>(r: &R, dir: &Path, stem: &str) -> Result<u8> {
    for p in emit(r, dir, stem, Format::Both)? {
        println!("{}", p.display());
    }
    Ok(if r.any_inconclusive() { 2 } else { 0 })
}

fn run(cmd: Command) -> Result<u8> {
    match cmd {
        Command::Equilibria(c) => {
            let exp = c.load()?;
            let cfg = ModelConfig::from_params(&exp.model)?;
            let eq = find_equilibria(&cfg)?;
            let dir = &exp.output.dir;
            let json = dir.join("equilibria.json");
            fs::write(&json, serde_json::to_string_pretty(&eq)? + "\n")?;
            let rows: Vec<Vec<String>> = eq
                .equilibria
                .iter()
                .enumerate()
                .map(|(i, e)| {
                    Ok(vec![
                        i.to_string(),
                        format!("{:?}", e.stability).to_lowercase(),
                        e.spectrum.n_unstable.to_string(),
                        fmt_real(cfg.basis().norm_h(&e.state, cfg.alpha())?),
                        fmt_real(energy(&e.state, &cfg)?),
                        fmt_real(e.residual),
                    ])
                })
                .collect::<Result<_>>()?;
            let csv = dir.join("equilibria.csv");
            write_rows(&csv, &["index", "stability", "n_unstable", "norm_h", "energy", "residual"], &rows)?;
            println!("{}\n{}", csv.display(), json.display());
            Ok(0)
        }
        Command::Simulate(c) => {
            let exp = c.load()?;
            let cfg = ModelConfig::from_params(&exp.model)?;
            let eq = find_equilibria(&cfg)?;
            let sp = &exp.simulate;
            let k = sp.start.or_else(|| eq.stable_indices().first().copied()).unwrap_or(0);
            let s0 = eq.equilibria.get(k).map(|e| e.state.clone()).context("no start equilibrium")?;
            let eps = sp.eps.unwrap_or(exp.eps[0]);
            let tr = simulate(&cfg, &s0, eps, sp.horizon, sp.dt, exp.seed, sp.stride)?;
            let path = exp.output.dir.join("trajectory.csv");
            write_trajectory_csv(&path, &tr)?;
            println!("{}", path.display());
            Ok(0)
        }
        Command::Map(c) => {
            let exp = c.load()?;
            let cfg = ModelConfig::from_params(&exp.model)?;
            let eq = find_equilibria(&cfg)?;
            let conns = heteroclinic_scan(&eq, &cfg, &exp.scan)?;
            let json = exp.output.dir.join("map.json");
            fs::write(&json, serde_json::to_string_pretty(&conns)? + "\n")?;
            let rows: Vec<Vec<String>> = conns
                .iter()
                .map(|k| {
                    vec![
                        k.from.to_string(),
                        k.to.map(|t| t.to_string()).unwrap_or_default(),
                        k.direction.to_string(),
                        k.sign.to_string(),
                        k.arrival_time.map(fmt_real).unwrap_or_default(),
                    ]
                })
                .collect();
            let csv = exp.output.dir.join("map.csv");
            write_rows(&csv, &["from", "to", "direction", "sign", "arrival_time"], &rows)?;
            println!("{}\n{}", csv.display(), json.display());
            Ok(0)
        }
        Command::Quasipotential(c) => {
            let exp = c.load()?;
            let p = pipeline(&exp)?;
            let l = p.raw.size();
            let rows: Vec<Vec<String>> = (0..l)
                .flat_map(|i| (0..l).map(move |j| (i, j)))
                .filter(|(i, j)| i != j)
                .map(|(i, j)| {
                    vec![
                        i.to_string(),
                        j.to_string(),
                        fmt_real(p.raw.get(i, j)),
                        fmt_real(p.closed.get(i, j)),
                        p.closed.provenance(i, j).to_string(),
                    ]
                })
                .collect();
            let csv = exp.output.dir.join("quasipotentials.csv");
            write_rows(&csv, &["from", "to", "raw", "closed", "provenance"], &rows)?;
            println!("{}\n{}", csv.display(), exp.output.dir.join("pipeline.json").display());
            Ok(0)
        }
        Command::Wgraph(c) => {
            let exp = c.load()?;
            let p = pipeline(&exp)?;
            let csv = exp.output.dir.join("rate.csv");
            let json = exp.output.dir.join("rate.json");
            p.rate.write_csv(&csv)?;
            p.rate.write_json(&json)?;
            println!("{}\n{}", csv.display(), json.display());
            Ok(0)
        }
        Command::LdpVerify(c) => {
            let exp = c.load()?;
            let p = pipeline(&exp)?;
            let r = ldp_verify(&exp, &p)?;
            let mut code = report(&r, &exp.output.dir, "ldp")?;
            if let Some(s) = &r.stability {
                code = code.max(report(s, &exp.output.dir, "stability")?);
            }
            Ok(code)
        }
        Command::Chain(c) => {
            let exp = c.load()?;
            let p = pipeline(&exp)?;
            let r = transition_vs_vtilde(&exp, &p, &exp.chain.pairs)?;
            report(&r, &exp.output.dir, "chain")
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
