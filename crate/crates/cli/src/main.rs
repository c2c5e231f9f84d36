use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use skembed_core::barrier;
use skembed_core::embed;
use skembed_core::envelope::{envelope_onestep, GridFunction};
use skembed_core::gain;
use skembed_core::io::{self, InstanceJson};
use skembed_core::lattice::{LatticeSpec, Node, WalkKernel};
use skembed_core::lp::Sense;
use skembed_core::mc;
use skembed_core::measures::{modulus_pushforward, DiscreteMeasure};
use skembed_core::order;
use skembed_core::presets;

const EXIT_OK: u8 = 0;
const EXIT_VIOLATION: u8 = 1;
const EXIT_CONFIG: u8 = 2;

#[derive(Parser)]
#[command(name = "skembed", about = "Lattice Skorokhod-embedding laboratory", version)]
struct Cli {
    /// Worker threads (also honors SKEMBED_THREADS).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum PresetName {
    UniformShell,
    AnnulusPair,
    TwoShell,
    OverlapPair,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodName {
    Exact,
    Entropic,
}

#[derive(Subcommand)]
enum Command {
    /// Write a generated instance (or pair) as JSON.
    Gen {
        #[arg(long, value_enum)]
        preset: PresetName,
        #[arg(long, default_value_t = 2)]
        d: usize,
        #[arg(long, default_value_t = 0.5)]
        h: f64,
        #[arg(long, default_value_t = 4.0)]
        r_outer: f64,
        #[arg(long)]
        shell_tol: Option<f64>,
        #[arg(long, default_value_t = 2.0)]
        r_mu: f64,
        #[arg(long, default_value_t = 3.0)]
        r_nu: f64,
        /// Second target radius (two-shell preset).
        #[arg(long)]
        r_nu2: Option<f64>,
        /// Shared atom (overlap preset), e.g. "1,1".
        #[arg(long)]
        atom: Option<String>,
        #[arg(long, default_value_t = 1.0)]
        alpha: f64,
        #[arg(long, default_value = "min")]
        sense: String,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Decide subharmonic order by both routes; writes a witness on failure.
    CheckOrder {
        #[arg(long)]
        instance: PathBuf,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Solve the embedding LP; writes summary JSON and solution CSV.
    Solve {
        #[arg(long)]
        instance: PathBuf,
        #[arg(long, value_enum, default_value_t = MethodName::Exact)]
        method: MethodName,
        #[arg(long, default_value_t = 1e-3)]
        eps: f64,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Cap-structure report and replayable stop policy from a solve.
    Barrier {
        #[arg(long)]
        instance: PathBuf,
        #[arg(long)]
        angular_tol: Option<f64>,
        #[arg(long, default_value_t = barrier::DEFAULT_MASS_TOL)]
        mass_tol: f64,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Gain bounds along a shell of starts; writes the scan table.
    GainScan {
        #[arg(long)]
        instance: PathBuf,
        /// Profile anchor, e.g. "2,0"; the scan optimizes stop laws from here.
        #[arg(long)]
        y: String,
        /// Shell radius for the scanned starts.
        #[arg(long)]
        r_x: f64,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Subharmonic envelope of a grid function over the instance lattice.
    Envelope {
        #[arg(long)]
        instance: PathBuf,
        /// CSV with columns z1[,z2[,z3]],value; default -(|z| h)^2.
        #[arg(long)]
        grid: Option<PathBuf>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Monte Carlo replay of the solved policy against the LP target.
    Simulate {
        #[arg(long)]
        instance: PathBuf,
        #[arg(long, default_value_t = 100_000)]
        paths: u64,
        #[arg(long, default_value_t = 17)]
        seed: u64,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Solve and verify the dual certificate.
    Duality {
        #[arg(long)]
        instance: PathBuf,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// All checks for one instance; fails if any check fails.
    Report {
        #[arg(long)]
        instance: PathBuf,
        #[arg(long, default_value_t = 100_000)]
        paths: u64,
        #[arg(long, default_value_t = 17)]
        seed: u64,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            // clap handles --help/--version as "errors" with success status
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let threads = cli.threads.or_else(|| {
        std::env::var("SKEMBED_THREADS")
            .ok()
            .and_then(|v| v.parse().ok())
    });
    if let Some(t) = threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            eprintln!("config error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    }
    match run(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(msg) => {
            eprintln!("config error: {msg}");
            ExitCode::from(EXIT_CONFIG)
        }
    }
}

struct Loaded {
    spec: LatticeSpec,
    kernel: WalkKernel,
    mu: DiscreteMeasure,
    nu: DiscreteMeasure,
    alpha: f64,
    sense: Sense,
}

fn load(path: &Path) -> Result<Loaded, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let inst = InstanceJson::parse(&text).map_err(|e| format!("{}: {e}", path.display()))?;
    let (spec, mu, nu, alpha, sense) = inst.build().map_err(|e| e.to_string())?;
    let kernel = WalkKernel::new(&spec);
    Ok(Loaded {
        spec,
        kernel,
        mu,
        nu,
        alpha,
        sense,
    })
}

fn write(path: &Path, content: &str) -> Result<(), String> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| format!("{}: {e}", dir.display()))?;
    }
    fs::write(path, content).map_err(|e| format!("{}: {e}", path.display()))
}

fn parse_node(text: &str, d: usize) -> Result<Node, String> {
    let coords: Vec<i32> = text
        .split(',')
        .map(|c| c.trim().parse().map_err(|e| format!("bad coordinate {c:?}: {e}")))
        .collect::<Result<_, _>>()?;
    if coords.len() != d {
        return Err(format!("expected {d} coordinates, got {}", coords.len()));
    }
    Ok(Node::from_slice(&coords))
}

fn solve_auto(l: &Loaded) -> Result<embed::StoppingSolution, String> {
    let reduce =
        embed::is_group_invariant(&l.spec, &l.mu) && embed::is_group_invariant(&l.spec, &l.nu);
    let boundary_target = l.nu.iter().any(|(z, _)| {
        l.spec
            .node_index(z)
            .map(|i| !l.spec.interior[i])
            .unwrap_or(false)
    });
    let built = embed::build_problem(
        &l.spec,
        &l.kernel,
        embed::EmbeddingProblem {
            mu: l.mu.clone(),
            nu: l.nu.clone(),
            alpha: l.alpha,
            sense: l.sense,
            allow_boundary_target: boundary_target,
            symmetry_reduction: reduce,
        },
    )
    .map_err(|e| e.to_string())?;
    embed::solve(&l.spec, &l.kernel, &built, embed::Method::Exact).map_err(|e| e.to_string())
}

fn summary_json(sol: &embed::StoppingSolution) -> String {
    let s = io::SummaryJson::of(sol);
    format!(
        "{{\"objective\": {}, \"E_tau\": {}, \"gap\": {}, \"status\": \"{}\"}}\n",
        io::fmt(s.objective),
        io::fmt(s.e_tau),
        io::fmt(s.gap),
        s.status
    )
}

fn policy_json(spec: &LatticeSpec, policy: &barrier::BarrierPolicy) -> String {
    let mut out = String::from("{\"starts\": [");
    for (p, &xi) in policy.starts.iter().enumerate() {
        if p > 0 {
            out.push_str(", ");
        }
        out.push_str(&format!(
            "{{\"z\": {:?}, \"rho\": [",
            spec.nodes[xi].coords(spec.d)
        ));
        let mut first = true;
        for (i, &r) in policy.rho[p].iter().enumerate() {
            if r <= 0.0 {
                continue;
            }
            if !first {
                out.push_str(", ");
            }
            first = false;
            out.push_str(&format!(
                "{{\"z\": {:?}, \"p\": {}}}",
                spec.nodes[i].coords(spec.d),
                io::fmt(r)
            ));
        }
        out.push_str("]}");
    }
    out.push_str("]}\n");
    out
}

fn run(cmd: Command) -> Result<u8, String> {
    match cmd {
        Command::Gen {
            preset,
            d,
            h,
            r_outer,
            shell_tol,
            r_mu,
            r_nu,
            r_nu2,
            atom,
            alpha,
            sense,
            out,
        } => {
            let sense = match sense.as_str() {
                "min" => Sense::Min,
                "max" => Sense::Max,
                other => return Err(format!("sense must be min or max, got {other:?}")),
            };
            let mut emitted = Vec::new();
            match preset {
                PresetName::UniformShell => {
                    let i = presets::uniform_shell(d, h, r_outer, r_mu, r_nu, alpha, sense)
                        .map_err(|e| e.to_string())?;
                    emitted.push(i);
                }
                PresetName::AnnulusPair => {
                    let (u, v) = presets::annulus_pair(h).map_err(|e| e.to_string())?;
                    emitted.push(u);
                    emitted.push(v);
                }
                PresetName::TwoShell => {
                    let i = presets::two_shell(
                        d,
                        h,
                        r_outer,
                        shell_tol.unwrap_or(h / 2.0),
                        r_mu,
                        r_nu,
                        r_nu2.ok_or("two-shell preset needs --r-nu2")?,
                        alpha,
                        sense,
                    )
                    .map_err(|e| e.to_string())?;
                    emitted.push(i);
                }
                PresetName::OverlapPair => {
                    let a = parse_node(&atom.ok_or("overlap preset needs --atom")?, d)?;
                    let i = presets::overlap_pair(d, h, r_outer, a, alpha)
                        .map_err(|e| e.to_string())?;
                    emitted.push(i);
                }
            }
            for inst in &emitted {
                let json = InstanceJson::from_parts(
                    &inst.spec,
                    &inst.mu,
                    &inst.nu,
                    inst.alpha,
                    inst.sense,
                );
                let text =
                    serde_json::to_string_pretty(&json).map_err(|e| e.to_string())?;
                let path = out.join(format!("{}.json", inst.name));
                write(&path, &(text + "\n"))?;
                println!("wrote {}", path.display());
            }
            Ok(EXIT_OK)
        }
        Command::CheckOrder { instance, out } => {
            let l = load(&instance)?;
            let a = order::check_order_lp(&l.spec, &l.kernel, &l.mu, &l.nu)
                .map_err(|e| e.to_string())?;
            let b = order::check_order_potential(&l.spec, &l.kernel, &l.mu, &l.nu)
                .map_err(|e| e.to_string())?;
            if a.in_order != b.in_order {
                return Err(format!(
                    "order checkers disagree: lp {} potential {}",
                    a.in_order, b.in_order
                ));
            }
            if a.in_order {
                println!("in order");
                Ok(EXIT_OK)
            } else {
                let w = a.witness.as_ref().unwrap();
                let path = out.join("witness.csv");
                write(&path, &io::grid_csv(&l.spec, w))?;
                println!(
                    "not in order; witness gap {} written to {}",
                    io::fmt(a.witness_gap),
                    path.display()
                );
                Ok(EXIT_VIOLATION)
            }
        }
        Command::Solve {
            instance,
            method,
            eps,
            out,
        } => {
            let l = load(&instance)?;
            let sol = match method {
                MethodName::Exact => solve_auto(&l)?,
                MethodName::Entropic => {
                    let built = embed::build_problem(
                        &l.spec,
                        &l.kernel,
                        embed::EmbeddingProblem {
                            mu: l.mu.clone(),
                            nu: l.nu.clone(),
                            alpha: l.alpha,
                            sense: l.sense,
                            allow_boundary_target: true,
                            symmetry_reduction: false,
                        },
                    )
                    .map_err(|e| e.to_string())?;
                    embed::solve(
                        &l.spec,
                        &l.kernel,
                        &built,
                        embed::Method::Entropic {
                            eps,
                            max_iter: 100_000,
                            tol: 1e-10,
                        },
                    )
                    .map_err(|e| e.to_string())?
                }
            };
            write(&out.join("summary.json"), &summary_json(&sol))?;
            write(&out.join("solution.csv"), &io::solution_csv(&l.spec, &sol))?;
            print!("{}", summary_json(&sol));
            Ok(EXIT_OK)
        }
        Command::Barrier {
            instance,
            angular_tol,
            mass_tol,
            out,
        } => {
            let l = load(&instance)?;
            let sol = solve_auto(&l)?;
            let policy = barrier::build_policy(&l.spec, &sol).map_err(|e| e.to_string())?;
            write(&out.join("policy.json"), &policy_json(&l.spec, &policy))?;
            let Some(regime) = barrier::Regime::of(l.sense, l.alpha) else {
                println!("alpha = 2 has no cap regime; policy written");
                return Ok(EXIT_OK);
            };
            let report =
                barrier::verify_cap_structure(&l.spec, &sol, regime, angular_tol, mass_tol)
                    .map_err(|e| e.to_string())?;
            write(&out.join("caps.csv"), &io::cap_csv(&l.spec, &report))?;
            println!(
                "{} cap rows, {} violations{}",
                report.rows.len(),
                report.violations,
                if report.advisory { " (advisory: d = 2)" } else { "" }
            );
            if report.violations > 0 && !report.advisory {
                Ok(EXIT_VIOLATION)
            } else {
                Ok(EXIT_OK)
            }
        }
        Command::GainScan {
            instance,
            y,
            r_x,
            out,
        } => {
            let l = load(&instance)?;
            let y = parse_node(&y, l.spec.d)?;
            let profile = modulus_pushforward(&l.nu, &l.spec).map_err(|e| e.to_string())?;
            let table = gain::monotonicity_scan(&l.spec, &l.kernel, r_x, &y, &profile, l.alpha)
                .map_err(|e| e.to_string())?;
            write(&out.join("gain-scan.csv"), &io::scan_csv(&table, l.spec.d))?;
            println!("verdict: {:?}", table.verdict);
            Ok(EXIT_OK)
        }
        Command::Envelope {
            instance,
            grid,
            out,
        } => {
            let l = load(&instance)?;
            let f = match grid {
                Some(path) => read_grid(&l.spec, &path)?,
                None => GridFunction::from_fn(&l.spec, |z| -(z.norm() * l.spec.h).powi(2)),
            };
            let (g, run) = envelope_onestep(
                &l.spec,
                &l.kernel,
                &f,
                100 * l.spec.n_nodes().max(100),
                1e-12,
            );
            if !run.converged {
                return Err(format!(
                    "envelope iteration did not converge (max delta {})",
                    run.max_delta
                ));
            }
            write(&out.join("envelope.csv"), &io::grid_csv(&l.spec, &g))?;
            println!("converged in {} sweeps", run.iters);
            Ok(EXIT_OK)
        }
        Command::Simulate {
            instance,
            paths,
            seed,
            out,
        } => {
            let l = load(&instance)?;
            let sol = solve_auto(&l)?;
            let policy = barrier::build_policy(&l.spec, &sol).map_err(|e| e.to_string())?;
            let config = mc::SimConfig {
                n_paths: paths,
                seed,
                max_steps: mc::SimConfig::default_max_steps(&l.spec),
                start: mc::StartMode::FromMu(l.mu.clone()),
            };
            let report =
                mc::simulate(&l.spec, &l.kernel, &policy, &config).map_err(|e| e.to_string())?;
            write(
                &out.join("terminal.csv"),
                &io::measure_csv(&report.terminal, l.spec.d),
            )?;
            let target = sol.target_measure(&l.spec);
            let outcome = mc::compare(&report, &target, l.spec.h).map_err(|e| e.to_string())?;
            println!(
                "W1 {} bound {} mean steps {} (LP {})",
                io::fmt(outcome.distance),
                io::fmt(outcome.bound),
                io::fmt(report.mean_steps),
                io::fmt(sol.e_tau)
            );
            if report.capped_flag {
                println!("warning: {} paths hit the step cap", report.capped);
            }
            Ok(if outcome.pass { EXIT_OK } else { EXIT_VIOLATION })
        }
        Command::Duality { instance, out } => {
            let l = load(&instance)?;
            let sol = solve_auto(&l)?;
            let report = embed::verify_dual(&l.spec, &l.kernel, &sol, 1e-8)
                .map_err(|e| e.to_string())?;
            write(&out.join("summary.json"), &summary_json(&sol))?;
            println!(
                "gap {} majorant violations {} superharmonic violations {}",
                io::fmt(report.gap),
                report.majorant_violations,
                report.superharmonic_violations
            );
            let ok = report.gap <= 1e-8
                && report.majorant_violations == 0
                && report.superharmonic_violations == 0;
            Ok(if ok { EXIT_OK } else { EXIT_VIOLATION })
        }
        Command::Report {
            instance,
            paths,
            seed,
            out,
        } => {
            let mut worst = EXIT_OK;
            let mut note = |name: &str, code: u8| {
                println!("[{}] {}", if code == EXIT_OK { "ok" } else { "fail" }, name);
                worst = worst.max(code);
            };
            let order_code = run(Command::CheckOrder {
                instance: instance.clone(),
                out: out.clone(),
            })?;
            note("check-order", order_code);
            if order_code == EXIT_OK {
                note(
                    "solve",
                    run(Command::Solve {
                        instance: instance.clone(),
                        method: MethodName::Exact,
                        eps: 1e-3,
                        out: out.clone(),
                    })?,
                );
                note(
                    "duality",
                    run(Command::Duality {
                        instance: instance.clone(),
                        out: out.clone(),
                    })?,
                );
                note(
                    "barrier",
                    run(Command::Barrier {
                        instance: instance.clone(),
                        angular_tol: None,
                        mass_tol: barrier::DEFAULT_MASS_TOL,
                        out: out.clone(),
                    })?,
                );
                note(
                    "simulate",
                    run(Command::Simulate {
                        instance,
                        paths,
                        seed,
                        out,
                    })?,
                );
            }
            Ok(worst)
        }
    }
}

fn read_grid(spec: &LatticeSpec, path: &Path) -> Result<GridFunction, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut g = GridFunction::constant(spec, 0.0);
    let mut seen = vec![false; spec.n_nodes()];
    for (lineno, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != spec.d + 1 {
            return Err(format!(
                "{}:{}: expected {} fields",
                path.display(),
                lineno + 1,
                spec.d + 1
            ));
        }
        let coords: Vec<i32> = fields[..spec.d]
            .iter()
            .map(|c| c.trim().parse().map_err(|e| format!("{}:{}: {e}", path.display(), lineno + 1)))
            .collect::<Result<_, _>>()?;
        let value: f64 = fields[spec.d]
            .trim()
            .parse()
            .map_err(|e| format!("{}:{}: {e}", path.display(), lineno + 1))?;
        let node = Node::from_slice(&coords);
        let i = spec.node_index(&node).ok_or_else(|| {
            format!("{}:{}: node {:?} not on lattice", path.display(), lineno + 1, coords)
        })?;
        g.values[i] = value;
        seen[i] = true;
    }
    if !seen.iter().all(|&b| b) {
        return Err(format!("{}: grid does not cover every node", path.display()));
    }
    Ok(g)
}
