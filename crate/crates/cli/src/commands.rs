//! Pipeline stages: reduce → relate → abstract → synthesize → simulate, plus
//! check-relation and plot.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use gamesynth::abstraction::{AbstractSpaces, FiniteAbstraction, TransitionKernel};
use gamesynth::dfa::{Dfa, DfaSpec, LabelMap};
use gamesynth::linalg::Vector;
use gamesynth::model::{check_stabilizability, reduce_model, ReducedOrderGame, StabilizabilityReport, StochasticGame};
use gamesynth::relation::{
    establish_relation, verify_certificate, InputConstraintSet, RelationCertificate, VerificationReport, RELAXED_TOL,
};
use gamesynth::runtime::{simulate_closed_loop, Controller, SimulationReport, SimulationSettings, TrajectoryRow};
use gamesynth::synthesis::{guarantee_at, synthesize, Guarantee, PolicyTable, Problem, ProductContext, SynthesisResult, ValueTable};
use serde::{Deserialize, Serialize};

use crate::artifacts::*;
use crate::config::ProjectConfig;
use crate::error::{CliError, CliResult};
use crate::plot::emit_plots;

/// Per-invocation settings shared by all stages.
#[derive(Debug, Clone)]
pub struct Context {
    pub config: ProjectConfig,
    pub config_path: PathBuf,
    pub out: PathBuf,
    pub force: bool,
    pub seed: Option<u64>,
    pub timing: bool,
    pub quiet: bool,
}

impl Context {
    pub fn new(config_path: &Path, out: &Path) -> CliResult<Self> {
        let config = ProjectConfig::load(config_path)?;
        std::fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
        Ok(Self {
            config,
            config_path: config_path.to_path_buf(),
            out: out.to_path_buf(),
            force: false,
            seed: None,
            timing: false,
            quiet: false,
        })
    }

    fn say(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            println!("{}", msg.as_ref());
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn skip(&self, record: &str, prov: &Provenance) -> bool {
        if !self.force && up_to_date(&self.out, record, prov) {
            self.say(format!("{}: up to date", prov.stage));
            return true;
        }
        false
    }

    pub fn game(&self) -> CliResult<StochasticGame> {
        Ok(StochasticGame::load(&self.config.game_path())?)
    }

    pub fn automaton(&self) -> CliResult<(Dfa, LabelMap)> {
        Ok(DfaSpec::load(&self.config.dfa_path())?.build()?)
    }

    pub fn spaces(&self) -> CliResult<AbstractSpaces> {
        let a = &self.config.abstraction;
        Ok(AbstractSpaces::new(
            a.grid.clone(),
            a.u_grid.clone(),
            a.w_grid.clone(),
            a.u_prime.as_ref(),
        )?)
    }

    fn simulation_block(&self) -> crate::config::SimulationBlock {
        let mut b = self.config.simulation.clone();
        if let Some(seed) = self.seed {
            b.seed = seed;
        }
        b
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReducedArtifact {
    pub provenance: Provenance,
    pub reduced: ReducedOrderGame,
    pub matching_residuals: [f64; 3],
    pub stabilizability: Vec<StabilizabilityReport>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SearchSummary {
    pub bundled: bool,
    pub samples_tried: usize,
    pub sdp_feasible: usize,
    pub best_slack: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CertificateArtifact {
    pub provenance: Provenance,
    #[serde(flatten)]
    pub certificate: RelationCertificate,
    pub search: SearchSummary,
    pub constraints: Option<InputConstraintSet>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KernelArtifact {
    pub provenance: Provenance,
    pub spaces: AbstractSpaces,
    pub rows: usize,
    pub stored_entries: usize,
    pub sparse: bool,
    pub threshold: f64,
    pub total_truncated: f64,
    pub max_truncated: f64,
    pub dense_bytes_f64: usize,
    pub dense_bytes_f32: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GuaranteeEntry {
    pub x0: Vec<f64>,
    pub guarantee: Option<Guarantee>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolicyArtifact {
    pub provenance: Provenance,
    pub problem: Problem,
    pub horizon: usize,
    pub n_states: usize,
    pub n_q: usize,
    pub eps: f64,
    pub delta: f64,
    pub policy_bytes: usize,
    pub guarantees: Vec<GuaranteeEntry>,
    pub values: ValueTable,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportArtifact {
    pub provenance: Provenance,
    pub reports: Vec<SimulationReport>,
}

pub fn load_reduced(ctx: &Context) -> CliResult<ReducedArtifact> {
    read_json(&ctx.path(REDUCED))
}

pub fn load_certificate(ctx: &Context) -> CliResult<CertificateArtifact> {
    read_json(&ctx.path(CERTIFICATE))
}

pub fn load_kernel(ctx: &Context) -> CliResult<(KernelArtifact, TransitionKernel)> {
    let meta: KernelArtifact = read_json(&ctx.path(KERNEL_JSON))?;
    let path = ctx.path(KERNEL_BIN);
    let f = File::open(&path).map_err(|e| CliError::io(&path, e))?;
    let kernel = TransitionKernel::read_from(BufReader::new(f))?;
    Ok((meta, kernel))
}

pub fn load_policy(ctx: &Context) -> CliResult<(PolicyArtifact, PolicyTable)> {
    let meta: PolicyArtifact = read_json(&ctx.path(POLICY_JSON))?;
    let path = ctx.path(POLICY_BIN);
    let f = File::open(&path).map_err(|e| CliError::io(&path, e))?;
    let policy = PolicyTable::read_from(BufReader::new(f), meta.problem)?;
    Ok((meta, policy))
}

fn reduced_with_noise(ctx: &Context, cert: &RelationCertificate) -> CliResult<ReducedOrderGame> {
    let mut red = load_reduced(ctx)?.reduced;
    red.r_r = Some(cert.r_r.clone());
    Ok(red)
}

pub fn cmd_reduce(ctx: &Context) -> CliResult<()> {
    let cfg = &ctx.config;
    let mut prov = Provenance::new("reduce");
    prov.file("game", &cfg.game_path())?;
    prov.block("reduction", &cfg.reduction);
    if ctx.skip(REDUCED, &prov) {
        return Ok(());
    }
    let game = ctx.game()?;
    let red = reduce_model(&game, &cfg.reduction.p, cfg.reduction.b_r.as_ref(), &cfg.reduction.hints)?;
    let residuals = red.matching_residuals(&game);
    let stab = check_stabilizability(&game);
    ctx.say(format!(
        "reduce: {} -> {} states, residuals {:.2e} {:.2e} {:.2e}",
        game.n_x(),
        red.n_xr(),
        residuals[0],
        residuals[1],
        residuals[2]
    ));
    for s in stab.iter().filter(|s| !s.stabilizable) {
        log::warn!("(A + {} EF, B) is not stabilizable", s.slope);
    }
    write_json(
        &ctx.path(REDUCED),
        &ReducedArtifact {
            provenance: prov,
            reduced: red,
            matching_residuals: residuals,
            stabilizability: stab,
        },
    )
}

fn print_verification(ctx: &Context, rep: &VerificationReport) {
    let g = &rep.gammas;
    ctx.say(format!(
        "  gamma0 {:.6}  gamma1 {:.6}  gamma2 {:.6}  gamma3 {:.6}  gamma4 {:.6}  total {:.6}",
        g.gamma0, g.gamma1, g.gamma2, g.gamma3, g.gamma4, g.total
    ));
    ctx.say(format!("  kappa_min {:.6} (sqrt {:.6}), tolerance {:.0e}", rep.kappa_min, rep.kappa_min.sqrt(), rep.tolerance));
    for c in &rep.conditions {
        ctx.say(format!("  [{}] {:<36} margin {:+.6e}", if c.pass { "pass" } else { "FAIL" }, c.name, c.margin));
    }
}

pub fn cmd_relate(ctx: &Context) -> CliResult<()> {
    let cfg = &ctx.config;
    check_chain(&ctx.out, &[REDUCED])?;
    let mut prov = Provenance::new("relate");
    prov.file("game", &cfg.game_path())?;
    prov.block("relation", &cfg.relation);
    prov.block("abstraction", &cfg.abstraction);
    prov.artifact(&ctx.out, REDUCED)?;
    if let Some(p) = cfg.certificate_path() {
        prov.file("certificate", &p)?;
    }
    if ctx.skip(CERTIFICATE, &prov) {
        return Ok(());
    }
    let game = ctx.game()?;
    let mut red = load_reduced(ctx)?.reduced;
    let spaces = ctx.spaces()?;
    spaces.check_against(&game, &red)?;
    let artifact = if let Some(path) = cfg.certificate_path() {
        let mut cert = RelationCertificate::load(&path)?;
        red.r_r = Some(cert.r_r.clone());
        let rep = verify_certificate(&game, &red, &spaces, &cert, RELAXED_TOL)?;
        ctx.say(format!("relate: verifying bundled certificate {}", path.display()));
        print_verification(ctx, &rep);
        if !rep.all_pass {
            let names: Vec<_> = rep.failed().iter().map(|c| c.name.clone()).collect();
            return Err(CliError::Infeasible(format!("bundled certificate fails: {}", names.join(", "))));
        }
        cert.kappa.get_or_insert(rep.kappa_min);
        cert.gammas = Some(rep.gammas);
        cert.verification = Some(rep);
        let constraints = gamesynth::relation::intersect_input_constraints(&game, &red, &spaces, &cert.r_tilde).ok();
        CertificateArtifact {
            provenance: prov,
            certificate: cert,
            search: SearchSummary {
                bundled: true,
                samples_tried: 0,
                sdp_feasible: 0,
                best_slack: None,
            },
            constraints,
        }
    } else {
        let report = establish_relation(&game, &red, &spaces, &cfg.relation.settings())?;
        if let Some(m) = report.noise_mismatch {
            if report.certificate.is_none() {
                return Err(gamesynth::Error::InfeasibleNoiseMismatch(m).into());
            }
        }
        let Some(cert) = report.certificate else {
            return Err(CliError::Infeasible(format!(
                "no (eps, kappa) sample passed: {} tried, {} SDP-feasible, best slack eps(1 - sqrt kappa) - gamma = {}",
                report.samples_tried,
                report.sdp_feasible,
                report.best_slack.map_or("none".into(), |s| format!("{s:.4e}"))
            )));
        };
        ctx.say(format!(
            "relate: eps {:.6} kappa {:.4} after {} samples",
            cert.eps,
            cert.kappa.unwrap_or(f64::NAN),
            report.samples_tried
        ));
        if let Some(v) = &cert.verification {
            print_verification(ctx, v);
        }
        CertificateArtifact {
            provenance: prov,
            certificate: cert,
            search: SearchSummary {
                bundled: false,
                samples_tried: report.samples_tried,
                sdp_feasible: report.sdp_feasible,
                best_slack: report.best_slack,
            },
            constraints: report.constraints,
        }
    };
    write_json(&ctx.path(CERTIFICATE), &artifact)
}

pub fn gib(bytes: usize) -> f64 {
    bytes as f64 / (1u64 << 30) as f64
}

pub fn cmd_abstract(ctx: &Context) -> CliResult<()> {
    let cfg = &ctx.config;
    check_chain(&ctx.out, &[REDUCED, CERTIFICATE])?;
    let mut prov = Provenance::new("abstract");
    prov.block("abstraction", &cfg.abstraction);
    prov.artifact(&ctx.out, REDUCED)?;
    prov.artifact(&ctx.out, CERTIFICATE)?;
    if ctx.skip(KERNEL_JSON, &prov) {
        return Ok(());
    }
    let cert = load_certificate(ctx)?.certificate;
    let red = reduced_with_noise(ctx, &cert)?;
    let abs = FiniteAbstraction::build(&red, ctx.spaces()?, cfg.abstraction.kernel)?;
    let k = &abs.kernel;
    let bin = ctx.path(KERNEL_BIN);
    {
        let f = File::create(&bin).map_err(|e| CliError::io(&bin, e))?;
        let mut w = BufWriter::new(f);
        k.write_to(&mut w)?;
        std::io::Write::flush(&mut w).map_err(|e| CliError::io(&bin, e))?;
    }
    prov.outputs.insert(KERNEL_BIN.into(), sha256_file(&bin)?);
    let meta = KernelArtifact {
        provenance: prov,
        rows: k.n_rows(),
        stored_entries: k.stored_entries(),
        sparse: k.is_sparse(),
        threshold: k.threshold(),
        total_truncated: k.total_truncated(),
        max_truncated: k.max_truncated(),
        dense_bytes_f64: k.dense_footprint(8),
        dense_bytes_f32: k.dense_footprint(4),
        spaces: abs.spaces,
    };
    ctx.say(format!(
        "abstract: {} states x {} inputs x {} adversary inputs, {} stored entries, dense footprint {:.3e} GiB (f64) / {:.3e} GiB (f32), max truncated mass {:.2e}",
        k.n_states(),
        k.n_u(),
        k.n_w(),
        meta.stored_entries,
        gib(meta.dense_bytes_f64),
        gib(meta.dense_bytes_f32),
        meta.max_truncated
    ));
    write_json(&ctx.path(KERNEL_JSON), &meta)
}

pub fn cmd_synthesize(ctx: &Context) -> CliResult<()> {
    let cfg = &ctx.config;
    check_chain(&ctx.out, &[REDUCED, CERTIFICATE, KERNEL_JSON])?;
    let mut prov = Provenance::new("synthesize");
    prov.file("game", &cfg.game_path())?;
    prov.file("dfa", &cfg.dfa_path())?;
    prov.block("synthesis", &cfg.synthesis);
    prov.block("x0", &cfg.simulation.x0);
    for a in [REDUCED, CERTIFICATE, KERNEL_JSON, KERNEL_BIN] {
        prov.artifact(&ctx.out, a)?;
    }
    if ctx.skip(POLICY_JSON, &prov) {
        return Ok(());
    }
    let game = ctx.game()?;
    let (dfa, map) = ctx.automaton()?;
    let cert = load_certificate(ctx)?.certificate;
    let red = reduced_with_noise(ctx, &cert)?;
    let (meta, kernel) = load_kernel(ctx)?;
    let spaces = meta.spaces;
    let pctx = ProductContext::new(&spaces, &red, &dfa, &map, cert.eps, cert.delta);
    let res = synthesize(&kernel, &pctx, &spaces.u_prime, &dfa, cfg.synthesis.horizon, cfg.synthesis.problem, cert.eps)?;
    let guarantees = guarantees_for(&res, &cert, &game, &red, &spaces, &dfa, &map, &cfg.simulation.x0);
    let bin = ctx.path(POLICY_BIN);
    {
        let f = File::create(&bin).map_err(|e| CliError::io(&bin, e))?;
        let mut w = BufWriter::new(f);
        res.policy.write_to(&mut w)?;
        std::io::Write::flush(&mut w).map_err(|e| CliError::io(&bin, e))?;
    }
    prov.outputs.insert(POLICY_BIN.into(), sha256_file(&bin)?);
    ctx.say(format!(
        "synthesize: {:?} problem, H = {}, policy {:.3e} GiB",
        res.problem,
        res.policy.horizon,
        gib(res.policy.footprint_bytes())
    ));
    for g in &guarantees {
        match (&g.guarantee, &g.error) {
            (Some(gr), _) => ctx.say(format!(
                "  x0 {:?}: satisfaction >= {:.6} (V = {:.6} at abstract state {}, q {})",
                g.x0, gr.satisfaction, gr.value, gr.x_hat, gr.q0
            )),
            (None, Some(e)) => ctx.say(format!("  x0 {:?}: {e}", g.x0)),
            _ => {}
        }
    }
    write_json(
        &ctx.path(POLICY_JSON),
        &PolicyArtifact {
            provenance: prov,
            problem: res.problem,
            horizon: res.policy.horizon,
            n_states: res.policy.n_states,
            n_q: res.policy.n_q,
            eps: res.eps,
            delta: res.delta,
            policy_bytes: res.policy.footprint_bytes(),
            guarantees,
            values: res.values,
        },
    )
}

#[allow(clippy::too_many_arguments)]
fn guarantees_for(
    res: &SynthesisResult,
    cert: &RelationCertificate,
    game: &StochasticGame,
    red: &ReducedOrderGame,
    spaces: &AbstractSpaces,
    dfa: &Dfa,
    map: &LabelMap,
    x0s: &[Vec<f64>],
) -> Vec<GuaranteeEntry> {
    x0s.iter()
        .map(|x0| match guarantee_at(res, cert, game, red, spaces, dfa, map, &Vector::from_column_slice(x0)) {
            Ok(g) => GuaranteeEntry {
                x0: x0.clone(),
                guarantee: Some(g),
                error: None,
            },
            Err(e) => GuaranteeEntry {
                x0: x0.clone(),
                guarantee: None,
                error: Some(e.to_string()),
            },
        })
        .collect()
}

pub fn trajectory_file(i: usize) -> String {
    format!("trajectories_{i}.csv")
}

fn write_trajectories(path: &Path, rows: &[TrajectoryRow], game: &StochasticGame) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["run".to_string(), "k".to_string()];
    header.extend((1..=game.n_x()).map(|i| format!("x{i}")));
    header.extend((1..=game.n_y()).map(|i| if game.n_y() == 1 { "y".into() } else { format!("y{i}") }));
    header.extend((1..=game.n_u()).map(|i| format!("u{i}")));
    header.extend((1..=game.n_w()).map(|i| if game.n_w() == 1 { "w".into() } else { format!("w{i}") }));
    header.extend(["q".into(), "xhat_index".into(), "in_relation".into()]);
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![r.run.to_string(), r.k.to_string()];
        for v in r.x.iter().chain(&r.y).chain(&r.u).chain(&r.w) {
            rec.push(format!("{v}"));
        }
        rec.extend([r.q.to_string(), r.x_hat.to_string(), r.in_relation.to_string()]);
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn cmd_simulate(ctx: &Context) -> CliResult<()> {
    let cfg = &ctx.config;
    check_chain(&ctx.out, &[REDUCED, CERTIFICATE, KERNEL_JSON, POLICY_JSON])?;
    let sim = ctx.simulation_block();
    let mut prov = Provenance::new("simulate");
    prov.file("game", &cfg.game_path())?;
    prov.file("dfa", &cfg.dfa_path())?;
    prov.block("simulation", &sim);
    prov.block("timing", &ctx.timing);
    for a in [REDUCED, CERTIFICATE, KERNEL_JSON, POLICY_JSON, POLICY_BIN] {
        prov.artifact(&ctx.out, a)?;
    }
    if ctx.skip(REPORT, &prov) {
        return Ok(());
    }
    let game = ctx.game()?;
    let (dfa, map) = ctx.automaton()?;
    let cert = load_certificate(ctx)?.certificate;
    let red = reduced_with_noise(ctx, &cert)?;
    let spaces: AbstractSpaces = read_json::<KernelArtifact>(&ctx.path(KERNEL_JSON))?.spaces;
    let (meta, policy) = load_policy(ctx)?;
    let ctrl = Controller {
        game: &game,
        red: &red,
        spaces: &spaces,
        cert: &cert,
        dfa: &dfa,
        map: &map,
        policy: &policy,
    };
    let settings = SimulationSettings {
        runs: sim.runs,
        seed: sim.seed,
        horizon: sim.horizon.unwrap_or(meta.horizon),
        adversary: sim.adversary.clone(),
        record_trajectories: sim.record_trajectories,
        timing: ctx.timing,
    };
    let mut reports = Vec::new();
    for (i, x0) in sim.x0.iter().enumerate() {
        let bound = meta
            .guarantees
            .iter()
            .find(|g| &g.x0 == x0)
            .and_then(|g| g.guarantee)
            .map(|g| g.satisfaction);
        let (rep, rows) = simulate_closed_loop(&ctrl, &Vector::from_column_slice(x0), &settings, bound)?;
        ctx.say(format!(
            "simulate: x0 {:?}: {}/{} satisfied ({:.4}, 95% CI [{:.4}, {:.4}]), guarantee {}, relation kept {}/{}{}",
            x0,
            rep.satisfied,
            rep.runs,
            rep.rate,
            rep.ci95.0,
            rep.ci95.1,
            bound.map_or("n/a".into(), |b| format!("{b:.4}")),
            rep.relation_checks - rep.relation_violations,
            rep.relation_checks,
            rep.mean_step_ms.map_or(String::new(), |t| format!(", {t:.4} ms/step")),
        ));
        if sim.record_trajectories {
            write_trajectories(&ctx.path(&trajectory_file(i)), &rows, &game)?;
        }
        reports.push(rep);
    }
    write_json(
        &ctx.path(REPORT),
        &ReportArtifact {
            provenance: prov,
            reports,
        },
    )
}

pub fn cmd_plot(ctx: &Context) -> CliResult<()> {
    let reports = if ctx.path(REPORT).is_file() {
        check_chain(&ctx.out, &[REPORT])?;
        read_json::<ReportArtifact>(&ctx.path(REPORT))?.reports
    } else {
        Vec::new()
    };
    let (dfa, map) = ctx.automaton()?;
    emit_plots(&reports, &dfa, &map, &ctx.out)?;
    ctx.say(format!("plot: bands.csv and quantiles.csv written to {}", ctx.out.display()));
    Ok(())
}

/// Verifies a certificate file against the configured game, reduction and grids.
pub fn cmd_check_relation(ctx: &Context, certificate: Option<&Path>, tol: f64) -> CliResult<VerificationReport> {
    let cfg = &ctx.config;
    let path = certificate
        .map(Path::to_path_buf)
        .or_else(|| cfg.certificate_path())
        .unwrap_or_else(|| ctx.path(CERTIFICATE));
    let cert: RelationCertificate = read_json(&path)?;
    let game = ctx.game()?;
    let mut red = reduce_model(&game, &cfg.reduction.p, cfg.reduction.b_r.as_ref(), &cfg.reduction.hints)?;
    red.r_r = Some(cert.r_r.clone());
    let spaces = ctx.spaces()?;
    let rep = verify_certificate(&game, &red, &spaces, &cert, tol)?;
    ctx.say(format!("check-relation: {}", path.display()));
    print_verification(ctx, &rep);
    Ok(rep)
}

pub fn cmd_run(ctx: &Context) -> CliResult<()> {
    cmd_reduce(ctx)?;
    cmd_relate(ctx)?;
    cmd_abstract(ctx)?;
    cmd_synthesize(ctx)?;
    cmd_simulate(ctx)?;
    cmd_plot(ctx)
}
