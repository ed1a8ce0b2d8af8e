use std::fs;
use std::io::Read;

use proxtrend::data::{self, GridKind, SimulationConfig, Trend};
use proxtrend::epigraph::{project_epi_l1, project_epi_tv, project_shape_restricted, Projection, ShapeSpec};
use proxtrend::linalg::{DiffOperator, PseudoSolve};
use proxtrend::pipeline::{self, BenchConfig, FitOptions};
use proxtrend::posterior::Model;
use proxtrend::sampler::SamplerConfig;
use proxtrend::{Error, Result};
use serde::Deserialize;
use serde_json::json;

use crate::output;
use crate::{BenchArgs, FitArgs, ModelArgs, ProjectArgs, SimulateArgs, ThinArgs};

fn fit_options(m: &ModelArgs) -> Result<FitOptions> {
    let model: Model = m.model.parse()?;
    let shape = m.shape.as_deref().map(ShapeSpec::parse).transpose()?;
    if model == Model::Pbtf && shape.is_some() {
        return Err(Error::InvalidConfig("--shape only applies to --model pbsrtf".into()));
    }
    let opts = FitOptions {
        model,
        k: m.order,
        shape,
        lambda: m.lambda,
        s2: m.s2,
        mu: m.mu,
        thin: m.thin,
        sampler: SamplerConfig {
            n_warmup: m.warmup,
            n_draws: m.draws,
            n_chains: m.chains,
            target_accept: m.target_accept,
            max_tree_depth: m.max_depth,
            seed: m.seed,
        },
    };
    opts.sampler.validate()?;
    if let Some(b) = opts.thin {
        if b < 2 {
            return Err(Error::InvalidConfig(format!("--thin needs at least 2 bins, got {b}")));
        }
    }
    Ok(opts)
}

fn grid_kind(s: &str) -> Result<GridKind> {
    serde_json::from_value(json!(s.replace('-', "_")))
        .map_err(|_| Error::InvalidConfig(format!("unknown grid `{s}`; use unit or uniform_random")))
}

pub fn fit(args: &FitArgs) -> Result<()> {
    let opts = fit_options(&args.model)?;
    let data = data::load_csv(&args.input)?;
    // Reject table-rule violations before touching the output directory.
    pipeline::check_fit_size(&data, &opts)?;
    let out = pipeline::fit(&data, &opts)?;
    fs::create_dir_all(&args.out)?;
    let summary = out.summary_at_original(&data.grid);
    output::write_summary(&args.out.join("summary.csv"), &data.grid, &summary)?;
    output::write_json(&args.out.join("diagnostics.json"), &output::diagnostics_json(&out))?;
    let mut files = vec!["summary.csv", "diagnostics.json"];
    if args.save_draws {
        output::write_draws(&args.out.join("draws.bin"), &out.chains)?;
        files.push("draws.bin");
    }
    files.push("manifest.json");
    let manifest = output::manifest(
        "fit",
        json!(args),
        json!({
            "spec": out.spec,
            "sampler": opts.sampler,
            "rescale": out.rescale,
            "thinned_locations": out.thinning.as_ref().map(|t| t.data.n()),
            "thinning_interval_width": out.thinning.as_ref().map(|t| t.interval_width),
            "n_locations": data.n(),
            "n_observations": data.m,
        }),
        &files,
    );
    output::write_json(&args.out.join("manifest.json"), &manifest)
}

pub fn bench(args: &BenchArgs) -> Result<()> {
    let cfg = BenchConfig {
        trend: args.trend.parse()?,
        sigma: args.sigma,
        n: args.n,
        grid: grid_kind(&args.grid)?,
        replicates: args.replicates,
        first_seed: args.first_seed,
        fit: fit_options(&args.model)?,
    };
    if !(cfg.sigma > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "--sigma must be positive, got {}",
            cfg.sigma
        )));
    }
    if cfg.replicates == 0 {
        return Err(Error::InvalidConfig("--replicates must be at least 1".into()));
    }
    let probe = SimulationConfig {
        trend: cfg.trend,
        sigma: cfg.sigma,
        n: cfg.n,
        grid: cfg.grid,
        seed: cfg.first_seed,
    };
    pipeline::check_fit_size(&probe.run()?.0, &cfg.fit)?;
    let row = pipeline::bench(&cfg)?;
    fs::create_dir_all(&args.out)?;
    output::write_bench_row(&args.out.join("bench.csv"), &row)?;
    output::write_json(&args.out.join("bench.json"), &json!(row))?;
    println!(
        "{} {:?} k={} sigma={}: MAD {:.2} ({:.2})  MCIW {:.2}  CP {:.2}  TCPU {:.1}s  [{} replicates]",
        row.trend.name(),
        row.model,
        row.k,
        row.sigma,
        row.mad_mean,
        row.mad_sd,
        row.mciw,
        row.cp,
        row.tcpu_mean,
        row.replicates
    );
    let manifest = output::manifest(
        "bench",
        json!(args),
        json!({ "bench": cfg }),
        &["bench.csv", "bench.json", "manifest.json"],
    );
    output::write_json(&args.out.join("manifest.json"), &manifest)
}

pub fn simulate(args: &SimulateArgs) -> Result<()> {
    let cfg = match &args.config {
        Some(path) => serde_json::from_str::<SimulationConfig>(&fs::read_to_string(path)?)?,
        None => SimulationConfig {
            trend: args.trend.parse::<Trend>()?,
            sigma: args.sigma,
            n: args.n,
            grid: grid_kind(&args.grid)?,
            seed: args.seed,
        },
    };
    if !(cfg.sigma > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "sigma must be positive, got {}",
            cfg.sigma
        )));
    }
    let (data, truth) = cfg.run()?;
    fs::create_dir_all(&args.out)?;
    output::write_columns(&args.out.join("data.csv"), &["x", "y"], &[&data.grid, &data.ybar])?;
    output::write_columns(&args.out.join("truth.csv"), &["x", "truth"], &[&data.grid, &truth])?;
    let manifest = output::manifest(
        "simulate",
        json!(args),
        json!({ "simulation": cfg }),
        &["data.csv", "truth.csv", "manifest.json"],
    );
    output::write_json(&args.out.join("manifest.json"), &manifest)
}

#[derive(Deserialize)]
struct ProjectRequest {
    kind: String,
    theta: Vec<f64>,
    alpha: f64,
    #[serde(default)]
    grid: Option<Vec<f64>>,
    /// Order of the difference operator in the ℓ1 term of the shape set.
    #[serde(default)]
    order: Option<usize>,
    #[serde(default)]
    shape: Option<ShapeField>,
}

/// Shapes may be given as a label (`"inc-convex"`) or as a full object.
#[derive(Deserialize)]
#[serde(untagged)]
enum ShapeField {
    Label(String),
    Spec(ShapeSpec),
}

pub fn project(args: &ProjectArgs) -> Result<()> {
    let text = if args.input.as_os_str() == "-" {
        let mut s = String::new();
        std::io::stdin().read_to_string(&mut s)?;
        s
    } else {
        fs::read_to_string(&args.input)?
    };
    let req: ProjectRequest = serde_json::from_str(&text)?;
    let p = run_projection(&req)?;
    let body = serde_json::to_string_pretty(&p)?;
    match &args.out {
        Some(path) => fs::write(path, body + "\n")?,
        None => println!("{body}"),
    }
    Ok(())
}

fn run_projection(req: &ProjectRequest) -> Result<Projection> {
    if req.theta.is_empty() {
        return Err(Error::EmptyData);
    }
    match req.kind.to_ascii_lowercase().as_str() {
        "l1" | "e1" => project_epi_l1(&req.theta, req.alpha),
        "tv" | "tv1d" | "e2" => project_epi_tv(&req.theta, req.alpha, &PseudoSolve::new(req.theta.len())),
        "shape" | "shaperestricted" | "shape_restricted" | "s" => {
            let grid = match &req.grid {
                Some(g) => g.clone(),
                None => (0..req.theta.len()).map(|i| i as f64).collect(),
            };
            let order = req.order.unwrap_or(2);
            let shape = match &req.shape {
                Some(ShapeField::Label(s)) => ShapeSpec::parse(s)?,
                Some(ShapeField::Spec(s)) => s.clone(),
                None => ShapeSpec::default(),
            };
            let op = DiffOperator::new(&grid, order)?;
            if grid.len() != req.theta.len() {
                return Err(Error::DimMismatch {
                    expected: grid.len(),
                    got: req.theta.len(),
                });
            }
            project_shape_restricted(&req.theta, req.alpha, &op, &shape)
        }
        other => Err(Error::InvalidConfig(format!(
            "unknown projection kind `{other}`; use l1, tv or shape"
        ))),
    }
}

pub fn thin(args: &ThinArgs) -> Result<()> {
    let d = data::load_csv(&args.input)?;
    let t = data::thin(&d, args.bins)?;
    fs::create_dir_all(&args.out)?;
    let w: Vec<f64> = t.data.weights.iter().map(|&w| w as f64).collect();
    output::write_columns(
        &args.out.join("thinned.csv"),
        &["x", "ybar", "weight"],
        &[&t.data.grid, &t.data.ybar, &w],
    )?;
    let merged: Vec<f64> = t.mapping.iter().map(|&j| t.data.grid[j]).collect();
    output::write_columns(&args.out.join("mapping.csv"), &["x", "merged_x"], &[&d.grid, &merged])?;
    if let Some(raw) = &t.data.raw {
        let (x, y): (Vec<f64>, Vec<f64>) = raw.iter().copied().unzip();
        output::write_columns(&args.out.join("shifted.csv"), &["x", "y"], &[&x, &y])?;
    }
    let manifest = output::manifest(
        "thin",
        json!(args),
        json!({
            "bins": args.bins,
            "interval_width": t.interval_width,
            "locations_before": d.n(),
            "locations_after": t.data.n(),
            "sse": t.data.sse,
        }),
        &["thinned.csv", "mapping.csv", "shifted.csv", "manifest.json"],
    );
    output::write_json(&args.out.join("manifest.json"), &manifest)
}
