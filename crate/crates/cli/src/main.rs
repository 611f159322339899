//! `ddsos`: experiment, rank check, synthesis, verification and SDPA export.
//!
//! Exit codes: 0 success, 1 usage or input error, 2 simulation blow-up,
//! 3 infeasible program or compile error, 4 rank failure, 5 failed check.

use std::fmt::Write as _;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ddsos::control::{
    certificate_check, circle_states, model_based_synthesize, plant_side_vdot, synthesize, verify_closed_loop,
    Controller, Grid, LyapunovCertificate, SynthesisOutcome,
};
use ddsos::data::{build_data_matrices_with, rank_report, z_matrix, DataRecord, DEFAULT_RANK_FACTOR};
use ddsos::plant::{run_experiment_with_trajectory, ExperimentConfig, PolySystem};
use ddsos::poly::Polynomial;
use ddsos::soscompile::{compile, compile_scalar, SosOptions};
use ddsos::Error;
use ddsos_sdp::sdpa::{read_sdpa, write_sdpa};
use ddsos_sdp::{SdpSolution, SolverOptions};

const EXIT_USAGE: u8 = 1;
const EXIT_BLOWUP: u8 = 2;
const EXIT_INFEASIBLE: u8 = 3;
const EXIT_RANK: u8 = 4;
const EXIT_CHECK: u8 = 5;

#[derive(Parser, Debug)]
#[command(name = "ddsos", version, about = "Data-driven SOS synthesis of polynomial state feedback")]
struct Cli {
    /// Directory for all output files.
    #[arg(long, global = true, env = "DDSOS_OUT_DIR", default_value = "ddsos-out")]
    out_dir: PathBuf,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Simulate one experiment and write the sampled data record.
    Experiment {
        /// Plant file (TOML: a, b, n, z).
        #[arg(long)]
        system: PathBuf,
        /// Experiment file (TOML: tau, samples, x0, input, ...).
        #[arg(long)]
        experiment: PathBuf,
        /// Overrides the noise seed of the experiment file.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Report singular values and numerical rank of the data matrix Z0T.
    Rank {
        #[arg(long)]
        data: PathBuf,
        /// Rank tolerance is max(N, T) * sigma_max * machine eps * factor.
        #[arg(long, default_value_t = DEFAULT_RANK_FACTOR)]
        rank_factor: f64,
    },
    /// Solve the SOS program and write controller, certificate and solver log.
    Synthesize {
        /// Data record written by `experiment`.
        #[arg(long, required_unless_present = "model", conflicts_with = "model")]
        data: Option<PathBuf>,
        /// Model-based variant: plant file with known A and B instead of data.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_RANK_FACTOR)]
        rank_factor: f64,
        #[command(flatten)]
        sos: SosArgs,
    },
    /// Check a controller: certificate, dV/dt on a grid, and simulations.
    Verify {
        #[arg(long)]
        system: PathBuf,
        #[arg(long)]
        controller: PathBuf,
        /// Certificate written by `synthesize`; its P is used for dV/dt.
        #[arg(long)]
        certificate: Option<PathBuf>,
        #[arg(long, default_value_t = 60.0)]
        horizon: f64,
        #[arg(long, default_value_t = 1e-3)]
        step: f64,
        /// Required bound on |x(horizon)|.
        #[arg(long, default_value_t = 1e-3)]
        tol: f64,
        /// Grid points per axis for dV/dt.
        #[arg(long, default_value_t = 21)]
        grid: usize,
        /// The dV/dt grid covers [-half_width, half_width]^n.
        #[arg(long, default_value_t = 2.0)]
        half_width: f64,
        /// Grid points with |x| < r0 are skipped.
        #[arg(long, default_value_t = 1e-2)]
        r0: f64,
        /// Number of initial states on the circle of radius `radius`.
        #[arg(long, default_value_t = 12)]
        states: usize,
        #[arg(long, default_value_t = 1.0)]
        radius: f64,
    },
    /// Write the compiled SDP in SDPA sparse format and check the round trip.
    ExportSdpa {
        /// Data record; compiles the synthesis program.
        #[arg(long, required_unless_present = "scalar", conflicts_with = "scalar")]
        data: Option<PathBuf>,
        /// Scalar polynomial; compiles its SOS program instead.
        #[arg(long, requires = "nvars")]
        scalar: Option<String>,
        #[arg(long)]
        nvars: Option<usize>,
        /// Output path; defaults to `<out-dir>/program.dat-s`.
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_RANK_FACTOR)]
        rank_factor: f64,
        #[command(flatten)]
        sos: SosArgs,
    },
}

#[derive(Args, Debug)]
struct SosArgs {
    /// Degree of Y(x).
    #[arg(long, default_value_t = 1)]
    dy: u32,
    /// Lower bound on the eigenvalues of P.
    #[arg(long, default_value_t = 1e-3)]
    mu: f64,
    /// SOS polynomial subtracted from the diagonal of Q; default 1e-5 * sum xi^2.
    #[arg(long, allow_hyphen_values = true)]
    epsilon: Option<String>,
    /// Extra half-degree added to the Gram basis.
    #[arg(long, default_value_t = 0)]
    pad: u32,
}

impl SosArgs {
    fn options(&self, n: usize) -> Result<SosOptions, Error> {
        let mut o = SosOptions::default_for(n);
        o.dy = self.dy;
        o.mu = self.mu;
        o.gram_degree_pad = self.pad;
        if let Some(e) = &self.epsilon {
            o.epsilon = Polynomial::parse(e, n)?;
        }
        Ok(o)
    }
}

/// A failure carrying its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::BlowUp { .. } => EXIT_BLOWUP,
            Error::Infeasible { .. } | Error::Compile(_) => EXIT_INFEASIBLE,
            Error::RankDeficient { .. } | Error::TooFewSamples { .. } => EXIT_RANK,
            _ => EXIT_USAGE,
        };
        let message = match &e {
            Error::RankDeficient { .. } | Error::TooFewSamples { .. } => {
                format!("{e}\nZ0T must have full row rank; collect more or richer samples")
            }
            _ => e.to_string(),
        };
        Failure { code, message }
    }
}

fn fail(code: u8, message: impl Into<String>) -> Failure {
    Failure { code, message: message.into() }
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn run(cli: Cli) -> CmdResult {
    let out = cli.out_dir;
    match cli.cmd {
        Cmd::Experiment { system, experiment, seed } => cmd_experiment(&out, &system, &experiment, seed),
        Cmd::Rank { data, rank_factor } => cmd_rank(&data, rank_factor),
        Cmd::Synthesize { data, model, rank_factor, sos } => cmd_synthesize(&out, data, model, rank_factor, &sos),
        Cmd::Verify { system, controller, certificate, horizon, step, tol, grid, half_width, r0, states, radius } => {
            let grid = Grid { lo: -half_width, hi: half_width, per_axis: grid, r0 };
            let sim = SimArgs { horizon, step, tol, states, radius };
            cmd_verify(&out, &system, &controller, certificate.as_deref(), &grid, &sim)
        }
        Cmd::ExportSdpa { data, scalar, nvars, output, rank_factor, sos } => {
            let output = output.unwrap_or_else(|| out.join("program.dat-s"));
            cmd_export(&output, data, scalar.zip(nvars), rank_factor, &sos)
        }
    }
}

fn read(path: &Path) -> Result<String, Failure> {
    if path.as_os_str().is_empty() {
        return Err(fail(EXIT_USAGE, "empty path"));
    }
    fs::read_to_string(path).map_err(|e| Error::io(path, e).into())
}

fn write(path: &Path, contents: &str) -> CmdResult {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn read_data(path: &Path) -> Result<DataRecord, Failure> {
    if path.as_os_str().is_empty() {
        return Err(fail(EXIT_USAGE, "empty data path"));
    }
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(DataRecord::read_csv(BufReader::new(file))?)
}

fn cmd_experiment(out: &Path, system: &Path, experiment: &Path, seed: Option<u64>) -> CmdResult {
    let sys = PolySystem::from_toml_str(&read(system)?)?;
    let mut cfg = ExperimentConfig::from_toml_str(&read(experiment)?)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let (rec, traj) = run_experiment_with_trajectory(&sys, &cfg)?;

    let mut data = Vec::new();
    rec.write_csv(&mut data)?;
    write(&out.join("data.csv"), &String::from_utf8(data).expect("csv is utf-8"))?;
    let mut tr = Vec::new();
    traj.write_csv(&mut tr)?;
    write(&out.join("trajectory.csv"), &String::from_utf8(tr).expect("csv is utf-8"))?;
    write(&out.join("experiment.toml"), &cfg.to_toml_string())?;

    println!("{:>3} {:>10} {:>36} {:>36} {:>24}", "k", "t", "x", "dx/dt", "u");
    for k in 0..rec.samples() {
        let t = rec.times.as_ref().map(|t| t[k]).unwrap_or(k as f64);
        println!(
            "{k:>3} {t:>10.6} {:>36} {:>36} {:>24}",
            fmt_col(rec.x0.column(k).iter()),
            fmt_col(rec.x1.column(k).iter()),
            fmt_col(rec.u.column(k).iter())
        );
    }
    println!("wrote {}", out.join("data.csv").display());
    Ok(())
}

fn fmt_col<'a>(it: impl Iterator<Item = &'a f64>) -> String {
    let v: Vec<String> = it.map(|x| format!("{x:.6}")).collect();
    format!("[{}]", v.join(", "))
}

fn cmd_rank(data: &Path, factor: f64) -> CmdResult {
    let rec = read_data(data)?;
    let z0t = z_matrix(&rec);
    let rep = rank_report(&z0t, factor);
    println!("Z = {}", rec.z);
    println!("N = {}, T = {}", rec.z.len(), rec.samples());
    let sv: Vec<String> = rep.singular_values.iter().map(|s| format!("{s:.6e}")).collect();
    println!("singular values: [{}]", sv.join(", "));
    println!("tolerance: {:.3e}", rep.tol);
    println!("rank: {}", rep.rank);
    build_data_matrices_with(rec, factor)?;
    println!("Z0T has full row rank");
    Ok(())
}

fn solver_log(sdp: &SdpSolution, margin: f64) -> String {
    let r = &sdp.residuals;
    let mut s = String::new();
    let _ = writeln!(s, "status = {}", sdp.status);
    let _ = writeln!(s, "message = {}", sdp.message);
    let _ = writeln!(s, "iterations = {}", sdp.iterations);
    let _ = writeln!(s, "primal_objective = {:e}", sdp.primal_objective);
    let _ = writeln!(s, "dual_objective = {:e}", sdp.dual_objective);
    let _ = writeln!(s, "primal_residual = {:e}", r.primal);
    let _ = writeln!(s, "dual_residual = {:e}", r.dual);
    let _ = writeln!(s, "relative_gap = {:e}", r.rel_gap);
    let _ = writeln!(s, "schur_condition = {:e}", sdp.schur_condition);
    let _ = writeln!(s, "margin = {margin:e}");
    s
}

fn cmd_synthesize(
    out: &Path,
    data: Option<PathBuf>,
    model: Option<PathBuf>,
    rank_factor: f64,
    sos: &SosArgs,
) -> CmdResult {
    let solver = SolverOptions::default();
    let outcome = if let Some(model) = model {
        let sys = PolySystem::from_toml_str(&read(&model)?)?;
        model_based_synthesize(sys.a(), sys.b(), sys.z(), &sos.options(sys.n())?, &solver)?
    } else {
        let rec = read_data(data.as_deref().expect("clap requires --data or --model"))?;
        let dm = build_data_matrices_with(rec, rank_factor)?;
        synthesize(&dm, &sos.options(dm.n())?, &solver)?
    };
    let margin = outcome.margin();
    match outcome {
        SynthesisOutcome::Feasible(s) => {
            let mut log = solver_log(&s.sdp, s.solution.margin);
            let rep = certificate_check(&s.certificate);
            for item in rep.items() {
                let _ = writeln!(log, "{item}");
            }
            write(&out.join("solver.log"), &log)?;
            write(&out.join("controller.toml"), &s.controller.to_toml_string(Some(&s.certificate.p)))?;
            write(&out.join("certificate.toml"), &s.certificate.to_toml_string())?;
            println!("feasible, margin t* = {:.6e}", s.solution.margin);
            println!("{}", s.controller);
            println!("wrote {}", out.join("controller.toml").display());
            Ok(())
        }
        SynthesisOutcome::Rejected { sdp, error, .. } => {
            let mut log = solver_log(&sdp, margin);
            let _ = writeln!(log, "rejected: {error}");
            write(&out.join("solver.log"), &log)?;
            Err(fail(EXIT_INFEASIBLE, format!("infeasible: margin t* = {margin:.6e} ({error})")))
        }
    }
}

struct SimArgs {
    horizon: f64,
    step: f64,
    tol: f64,
    states: usize,
    radius: f64,
}

fn cmd_verify(
    out: &Path,
    system: &Path,
    controller: &Path,
    certificate: Option<&Path>,
    grid: &Grid,
    sim: &SimArgs,
) -> CmdResult {
    let sys = PolySystem::from_toml_str(&read(system)?)?;
    let (ctrl, p) = Controller::from_toml_str_with_p(&read(controller)?)?;
    if ctrl.z() != sys.z() || ctrl.m() != sys.m() {
        return Err(fail(EXIT_USAGE, "controller does not match the system (m or Z differ)"));
    }
    let mut report = String::new();
    let mut failed = Vec::new();
    let _ = writeln!(report, "controller: {}", ctrl.to_string().replace('\n', "; "));

    let mut p_inv = None;
    if let Some(path) = certificate {
        let cert = LyapunovCertificate::from_toml_str(&read(path)?)?;
        let rep = certificate_check(&cert);
        for item in rep.items() {
            let _ = writeln!(report, "certificate {item}");
        }
        if !rep.pass() {
            failed.push("certificate");
        }
        p_inv = Some(cert.p_inv.clone());
    } else if let Some(p) = p {
        p_inv = Some(ddsos::control::invert_spd(&p)?.0);
    }

    match p_inv {
        Some(p_inv) => {
            let v = plant_side_vdot(&sys, &ctrl, &p_inv, grid)?;
            let tag = if v.pass() { "PASS" } else { "FAIL" };
            let _ = writeln!(
                report,
                "dV/dt {tag}: max {:.6e} at {:?} over {} grid points in [{}, {}]^{} (|x| >= {})",
                v.max_vdot,
                v.argmax,
                v.points,
                grid.lo,
                grid.hi,
                sys.n(),
                grid.r0
            );
            if !v.pass() {
                failed.push("dV/dt");
            }
        }
        None => {
            let _ = writeln!(report, "dV/dt skipped: no P in the controller file and no certificate");
        }
    }

    let initial = circle_states(sys.n(), sim.radius, sim.states);
    let ver = verify_closed_loop(&sys, &ctrl, &initial, sim.horizon, sim.step, sim.tol)?;
    for r in &ver.runs {
        let tag = if r.pass { "PASS" } else { "FAIL" };
        match r.blow_up {
            Some(t) => {
                let _ = writeln!(report, "run {tag}: x0 = {:?} diverged at t = {t:.6}", r.x0);
            }
            None => {
                let _ = writeln!(report, "run {tag}: x0 = {:?} |x({})| = {:.6e}", r.x0, sim.horizon, r.final_norm);
            }
        }
    }
    if !ver.pass() {
        failed.push("simulation");
    }
    let _ = writeln!(
        report,
        "simulation checks cover {} initial states on a bounded set; global behaviour is not tested",
        ver.runs.len()
    );

    let mut phase = String::from("run,t");
    for i in 1..=sys.n() {
        let _ = write!(phase, ",x{i}");
    }
    phase.push('\n');
    for (k, traj) in ver.trajectories.iter().enumerate() {
        let Some(traj) = traj else { continue };
        for (t, x) in traj.times.iter().zip(&traj.states) {
            let _ = write!(phase, "{k},{t:e}");
            for v in x.iter() {
                let _ = write!(phase, ",{v:e}");
            }
            phase.push('\n');
        }
    }
    write(&out.join("phase.csv"), &phase)?;
    write(&out.join("verify.txt"), &report)?;
    print!("{report}");

    if failed.is_empty() {
        println!("all checks passed");
        Ok(())
    } else {
        Err(fail(EXIT_CHECK, format!("failed checks: {}", failed.join(", "))))
    }
}

fn cmd_export(
    output: &Path,
    data: Option<PathBuf>,
    scalar: Option<(String, usize)>,
    rank_factor: f64,
    sos: &SosArgs,
) -> CmdResult {
    let prob = match (data, scalar) {
        (_, Some((poly, n))) => compile_scalar(&Polynomial::parse(&poly, n)?, sos.pad)?.1,
        (Some(data), None) => {
            let dm = build_data_matrices_with(read_data(&data)?, rank_factor)?;
            compile(&dm, &sos.options(dm.n())?)?.1
        }
        (None, None) => return Err(fail(EXIT_USAGE, "need --data or --scalar")),
    };
    let text = write_sdpa(&prob);
    write(output, &text)?;
    let back = read_sdpa(&read(output)?).map_err(Error::from)?;
    if write_sdpa(&back) != text {
        return Err(fail(EXIT_USAGE, "SDPA round trip changed the file"));
    }
    println!(
        "wrote {} ({} constraints, blocks {:?}); round trip identical",
        output.display(),
        prob.num_constraints(),
        prob.blocks
    );
    Ok(())
}
