//! Command implementations.

use std::fmt::Write as _;
use std::path::PathBuf;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sketchlab::attack::{
    run_attack, verify_certificate, AttackConfig, AttackError, FailureCertificate, Verification,
};
use sketchlab::dgauss::normalizer;
use sketchlab::harddist::{
    calibrate, gap_battery, gen_hard_instance, sketched_indistinguishability, verify_gap_event, CalibratedFamily,
    GapEvent, HardFamily, HardInstance, Side, SpikeModel,
};
use sketchlab::lattice::IntMatrix;
use sketchlab::seed::{label, SeedTree};
use sketchlab::sketch::{build_sketch, sketch_info, ExactNormOracle, GapOracle, SketchInfo, SketchSpec};
use sketchlab::stats::{cell_lemma_check, mgf_check, pmf_ratio_check, singular_value_check};
use sketchlab::suite::{run_criterion, CRITERIA, NORMALIZER_REL_TOL};

use crate::config::{self, AttackBlock, ExperimentConfig, OracleKind, StatsCheck};
use crate::output::OutDir;
use crate::{
    AttackCommand, Cli, CliError, Command, GlobalArgs, HardCommand, SideArg, SketchCommand, StatsCommand, Status,
    SuiteCommand,
};

const DEFAULT_OUT: &str = "sketchlab-out";

struct Context {
    config: ExperimentConfig,
    seed: u64,
    out: PathBuf,
}

impl Context {
    fn new(global: GlobalArgs) -> Result<Self, CliError> {
        let config = match &global.config {
            Some(p) => config::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(t) = global.threads {
            rayon::ThreadPoolBuilder::new()
                .num_threads(t)
                .build_global()
                .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
        }
        let seed = global.seed.or(config.seed).unwrap_or(0);
        let out = global.out.or_else(|| config.out.clone()).unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
        Ok(Context { config, seed, out })
    }

    fn attack(&self) -> Result<&AttackBlock, CliError> {
        self.config.attack.as_ref().ok_or_else(|| CliError::Usage("this command needs --config with an `attack` block".into()))
    }

    fn out_dir(&self) -> Result<OutDir, CliError> {
        OutDir::create(self.out.clone())
    }

    /// The config as run, with the effective seed, for replay.
    fn emit_config(&self, out: &OutDir) -> Result<(), CliError> {
        let mut c = self.config.clone();
        c.seed = Some(self.seed);
        c.out = None;
        out.write_json("config.json", &c)?;
        Ok(())
    }
}

fn finish(out: &OutDir, report: &str, status: Status) -> Result<Status, CliError> {
    out.write_text("report.txt", report)?;
    print!("{report}");
    Ok(status)
}

pub fn dispatch(cli: Cli) -> Result<Status, CliError> {
    let ctx = Context::new(cli.global)?;
    match cli.command {
        Command::Attack(AttackCommand::Run) => attack_run(&ctx),
        Command::Attack(AttackCommand::Verify { certificate }) => attack_verify(&ctx, certificate),
        Command::Sketch(SketchCommand::Build) => sketch_build(&ctx),
        Command::Sketch(SketchCommand::Info { sketch }) => sketch_info_cmd(&ctx, sketch),
        Command::Harddist(HardCommand::Gen { family, side, count }) => hard_gen(&ctx, family, side, count),
        Command::Harddist(HardCommand::Gap { family, pairs, min_fraction }) => hard_gap(&ctx, family, pairs, min_fraction),
        Command::Harddist(HardCommand::Tvd { n, spike, noise, d, trials, max_tvd, min_tvd }) => {
            hard_tvd(&ctx, n, spike, noise, d, trials, max_tvd, min_tvd)
        }
        Command::Stats(StatsCommand::Check { check }) => {
            let check = check
                .or_else(|| ctx.config.stats.clone())
                .ok_or_else(|| CliError::Usage("name a check or pass --config with a `stats` block".into()))?;
            stats_check(&ctx, &check)
        }
        Command::Suite(SuiteCommand::Acceptance { criteria }) => suite(&ctx, criteria),
    }
}

/// Seeds of run `run`: the sketch, attack and verification streams.
struct RunSeeds {
    run: u64,
    sketch: u64,
    attack: u64,
    verify: u64,
}

fn run_seeds(root: u64, run: usize) -> RunSeeds {
    let s = SeedTree::new(root).child(label::RUN).child(run as u64);
    RunSeeds {
        run: s.value(),
        sketch: s.child(label::SKETCH).value(),
        attack: s.child(label::ATTACK).value(),
        verify: s.child(label::VERIFY).value(),
    }
}

/// The run's oracle, with a sketch summary when it is sketch-backed.
fn oracle_for(
    block: &AttackBlock,
    alpha: f64,
    seeds: &RunSeeds,
    config: &AttackConfig,
) -> Result<(Box<dyn GapOracle>, Option<SketchInfo>), CliError> {
    Ok(match block.oracle {
        OracleKind::Sketch => {
            let spec = block.sketch_spec(alpha, seeds.sketch);
            let oracle = build_sketch(&spec)?;
            let info = sketch_info(&spec, &oracle);
            (Box::new(oracle), Some(info))
        }
        OracleKind::Exact => (Box::new(ExactNormOracle::for_params(block.n, config.params)), None),
    })
}

#[derive(Serialize)]
#[serde(tag = "event", rename_all = "kebab-case")]
enum Event<'a> {
    Run { run_id: usize, seed: u64, alpha: f64, sketch: Option<&'a SketchInfo> },
    Grid { run_id: usize, record: &'a sketchlab::attack::GridRecord },
    Accepted { run_id: usize, direction: &'a sketchlab::attack::AcceptedDirection },
    Certificate { run_id: usize, certificate: &'a FailureCertificate },
    Verification { run_id: usize, failure_rate: f64, trials: usize, exploits: usize },
    End { run_id: usize, rounds: usize, certified: bool },
}

#[derive(Serialize)]
struct SummaryRow {
    run_id: usize,
    seed: u64,
    round: usize,
    sigma2: f64,
    rate: f64,
    m_prime: usize,
    score: Option<f64>,
    accepted: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct RunCertificate {
    run_id: usize,
    seed: u64,
    alpha: f64,
    certificate: Option<FailureCertificate>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct RunExploits {
    run_id: usize,
    seed: u64,
    failure_rate: f64,
    trials: usize,
    exploit_count: usize,
    exploits: Vec<sketchlab::attack::Exploit>,
}

/// Verifies one certificate; an exploit-free verification is a result, not an error.
fn verify_run(
    oracle: &dyn GapOracle,
    cert: &FailureCertificate,
    config: &AttackConfig,
    seed: u64,
) -> Result<Verification, CliError> {
    match verify_certificate(oracle, cert, config.params, config.verification_trials, seed) {
        Ok(v) => Ok(v),
        Err(AttackError::NoExploitFound { trials }) => Ok(Verification { failure_rate: 0.0, trials, exploits: Vec::new() }),
        Err(e) => Err(e.into()),
    }
}

fn attack_run(ctx: &Context) -> Result<Status, CliError> {
    let block = ctx.attack()?;
    let out = ctx.out_dir()?;
    ctx.emit_config(&out)?;
    let mut transcript = out.jsonl("transcript.jsonl")?;
    let mut summary = out.csv("summary.csv")?;
    let (mut certs, mut exploits) = (Vec::new(), Vec::new());
    let mut report = format!(
        "attack run: family {:?}, n={}, r={}, B={}, m={}, runs={}, oracle {:?}, root seed {}\n",
        block.family, block.n, block.r, block.b, block.m, block.runs, block.oracle, ctx.seed
    );
    let (mut certified, mut verified) = (0, 0);
    for run_id in 0..block.runs {
        let seeds = run_seeds(ctx.seed, run_id);
        let alpha = block.resolve_alpha(seeds.sketch)?;
        let config = block.attack_config(alpha)?;
        let (oracle, info) = oracle_for(block, alpha, &seeds, &config)?;
        transcript.write(&Event::Run { run_id, seed: seeds.run, alpha, sketch: info.as_ref() })?;
        let result = run_attack(oracle.as_ref(), block.r_budget.unwrap_or(block.r), &config, seeds.attack)?;
        for record in &result.state.records {
            transcript.write(&Event::Grid { run_id, record })?;
            summary.serialize(SummaryRow {
                run_id,
                seed: seeds.run,
                round: record.round,
                sigma2: record.sigma2,
                rate: record.rate,
                m_prime: record.m_prime,
                score: record.score,
                accepted: record.accepted,
            })?;
        }
        for direction in &result.state.accepted {
            transcript.write(&Event::Accepted { run_id, direction })?;
        }
        let _ = write!(report, "run {run_id} (seed {}): alpha {alpha:.1}, ", seeds.run);
        if let Some(cert) = &result.certificate {
            certified += 1;
            transcript.write(&Event::Certificate { run_id, certificate: cert })?;
            let v = verify_run(oracle.as_ref(), cert, &config, seeds.verify)?;
            transcript.write(&Event::Verification {
                run_id,
                failure_rate: v.failure_rate,
                trials: v.trials,
                exploits: v.exploits.len(),
            })?;
            if !v.exploits.is_empty() {
                verified += 1;
            }
            let _ = writeln!(
                report,
                "certificate {:?} at sigma2 {:.1} (rate {:.4}, dim V {}), {} exploits in {} trials",
                cert.side,
                cert.sigma2,
                cert.rate,
                cert.dim(),
                v.exploits.len(),
                v.trials
            );
            exploits.push(RunExploits {
                run_id,
                seed: seeds.run,
                failure_rate: v.failure_rate,
                trials: v.trials,
                exploit_count: v.exploits.len(),
                exploits: v.exploits.into_iter().take(block.max_exploits).collect(),
            });
        } else {
            let _ = writeln!(report, "no certificate after {} rounds", result.state.round - 1);
        }
        transcript.write(&Event::End { run_id, rounds: result.state.round - 1, certified: result.certificate.is_some() })?;
        certs.push(RunCertificate { run_id, seed: seeds.run, alpha, certificate: result.certificate });
    }
    transcript.finish()?;
    summary.flush().map_err(|e| CliError::Io { path: out.path("summary.csv"), source: e })?;
    out.write_json("certificate.json", &certs)?;
    out.write_json("exploits.json", &exploits)?;
    let _ = writeln!(report, "certified {certified}/{}, verified with exploits {verified}/{}", block.runs, block.runs);
    finish(&out, &report, Status::Ok)
}

fn attack_verify(ctx: &Context, certificate: Option<PathBuf>) -> Result<Status, CliError> {
    let block = ctx.attack()?;
    let out = ctx.out_dir()?;
    let path = certificate.unwrap_or_else(|| out.path("certificate.json"));
    let text = std::fs::read_to_string(&path).map_err(|e| CliError::Io { path: path.clone(), source: e })?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    let certs: Vec<RunCertificate> = serde_path_to_error::deserialize(de).map_err(|e| CliError::Config {
        path: format!("{}:{}", path.display(), e.path()),
        message: e.into_inner().to_string(),
    })?;
    let mut report = format!("attack verify: {}\n", path.display());
    let mut results = Vec::new();
    let mut all = true;
    for rc in &certs {
        let Some(cert) = &rc.certificate else { continue };
        let seeds = run_seeds(ctx.seed, rc.run_id);
        let config = block.attack_config(rc.alpha)?;
        let (oracle, _) = oracle_for(block, rc.alpha, &seeds, &config)?;
        let v = verify_run(oracle.as_ref(), cert, &config, seeds.verify)?;
        all &= !v.exploits.is_empty();
        let _ = writeln!(report, "run {}: {} exploits in {} trials (failure rate {:.4})", rc.run_id, v.exploits.len(), v.trials, v.failure_rate);
        results.push(RunExploits {
            run_id: rc.run_id,
            seed: rc.seed,
            failure_rate: v.failure_rate,
            trials: v.trials,
            exploit_count: v.exploits.len(),
            exploits: v.exploits.into_iter().take(block.max_exploits).collect(),
        });
    }
    if results.is_empty() {
        let _ = writeln!(report, "no certificates to verify");
        all = false;
    }
    out.write_json("verification.json", &results)?;
    finish(&out, &report, if all { Status::Ok } else { Status::ThresholdFailed })
}

#[derive(Serialize, Deserialize)]
struct SketchFile {
    spec: SketchSpec,
    info: SketchInfo,
    matrix: IntMatrix,
}

fn sketch_build(ctx: &Context) -> Result<Status, CliError> {
    let block = ctx.attack()?;
    let out = ctx.out_dir()?;
    let seeds = run_seeds(ctx.seed, 0);
    let alpha = block.resolve_alpha(seeds.sketch)?;
    let spec = block.sketch_spec(alpha, seeds.sketch);
    let oracle = build_sketch(&spec)?;
    let info = sketch_info(&spec, &oracle);
    let file = SketchFile { spec, info: info.clone(), matrix: oracle.sketch().matrix().clone() };
    let path = out.write_json("sketch.json", &file)?;
    finish(&out, &format!("{}\nwritten to {}\n", serde_json::to_string_pretty(&info)?, path.display()), Status::Ok)
}

fn sketch_info_cmd(ctx: &Context, sketch: Option<PathBuf>) -> Result<Status, CliError> {
    let spec = match sketch {
        Some(p) => {
            let text = std::fs::read_to_string(&p).map_err(|e| CliError::Io { path: p.clone(), source: e })?;
            serde_json::from_str::<SketchFile>(&text)?.spec
        }
        None => {
            let block = ctx.attack()?;
            let seeds = run_seeds(ctx.seed, 0);
            block.sketch_spec(block.resolve_alpha(seeds.sketch)?, seeds.sketch)
        }
    };
    let info = sketch_info(&spec, &build_sketch(&spec)?);
    println!("{}", serde_json::to_string_pretty(&info)?);
    Ok(Status::Ok)
}

fn hard_family(ctx: &Context, name: Option<String>) -> Result<HardFamily, CliError> {
    match (name, &ctx.config.harddist) {
        (Some(n), _) => Ok(HardFamily::desk(&n)?),
        (None, Some(h)) => Ok(h.family.clone()),
        (None, None) => Err(CliError::Usage("pass --family or a config with a `harddist` block".into())),
    }
}

#[derive(Serialize)]
struct InstanceLine<'a> {
    index: usize,
    instance: &'a HardInstance,
    event: &'a GapEvent,
}

fn hard_gen(ctx: &Context, family: Option<String>, side: SideArg, count: Option<usize>) -> Result<Status, CliError> {
    let family = hard_family(ctx, family)?;
    let count = count.or(ctx.config.harddist.as_ref().map(|h| h.count)).unwrap_or(10);
    let out = ctx.out_dir()?;
    ctx.emit_config(&out)?;
    let cal: CalibratedFamily = calibrate(&family, ctx.seed)?;
    out.write_json("calibration.json", &cal)?;
    let sides: &[Side] = match side {
        SideArg::D1 => &[Side::D1],
        SideArg::D2 => &[Side::D2],
        SideArg::Both => &[Side::D1, Side::D2],
    };
    let mut lines = out.jsonl("instances.jsonl")?;
    let (mut total, mut holds) = (0, 0);
    for i in 0..count {
        let seed = SeedTree::new(ctx.seed).child(label::RUN).child(i as u64).value();
        for &s in sides {
            let instance = gen_hard_instance(&cal, s, seed)?;
            let event = verify_gap_event(&cal, &instance)?;
            total += 1;
            holds += event.event_holds as usize;
            lines.write(&InstanceLine { index: i, instance: &instance, event: &event })?;
        }
    }
    lines.finish()?;
    let mut report = format!("harddist gen: {} ({count} per side), root seed {}\n", family.name(), ctx.seed);
    for w in family.regime_warnings() {
        let _ = writeln!(report, "warning: {w}");
    }
    let _ = writeln!(report, "separating event holds on {holds}/{total} instances");
    finish(&out, &report, Status::Ok)
}

fn hard_gap(ctx: &Context, family: Option<String>, pairs: Option<usize>, min_fraction: f64) -> Result<Status, CliError> {
    let family = hard_family(ctx, family)?;
    let pairs = pairs.or(ctx.config.harddist.as_ref().map(|h| h.count)).unwrap_or(100);
    let out = ctx.out_dir()?;
    ctx.emit_config(&out)?;
    let cal = calibrate(&family, ctx.seed)?;
    let battery = gap_battery(&cal, pairs, SeedTree::new(ctx.seed).child(label::RUN).value())?;
    out.write_json("gap.json", &battery)?;
    let need = (min_fraction * pairs as f64).ceil() as usize;
    let ok = battery.both_hold >= need;
    let mut report = format!(
        "harddist gap: {}: D1 {}/{pairs}, D2 {}/{pairs}, both {}/{pairs} (need {need}) -> {}\n",
        family.name(),
        battery.d1_holds,
        battery.d2_holds,
        battery.both_hold,
        if ok { "PASS" } else { "FAIL" }
    );
    for w in &battery.warnings {
        let _ = writeln!(report, "warning: {w}");
    }
    finish(&out, &report, if ok { Status::Ok } else { Status::ThresholdFailed })
}

#[allow(clippy::too_many_arguments)]
fn hard_tvd(
    ctx: &Context,
    n: usize,
    spike: f64,
    noise: f64,
    d: usize,
    trials: usize,
    max_tvd: Option<f64>,
    min_tvd: Option<f64>,
) -> Result<Status, CliError> {
    let out = ctx.out_dir()?;
    let model = SpikeModel { rows: n, cols: n, noise, scales: vec![spike / (n as f64).sqrt()] };
    let est = sketched_indistinguishability(&model, d, trials, ctx.seed)?;
    out.write_json("tvd.json", &est)?;
    let ok = max_tvd.is_none_or(|m| est.value <= m) && min_tvd.is_none_or(|m| est.value >= m);
    let report = format!(
        "harddist tvd: n={n}, spike {spike}/sqrt(n), noise {noise}, d={d}, {trials} trials: TVD {:.4} +- {:.4}{}\n",
        est.value,
        est.ci_halfwidth,
        if max_tvd.is_some() || min_tvd.is_some() { if ok { " PASS" } else { " FAIL" } } else { "" }
    );
    finish(&out, &report, if ok { Status::Ok } else { Status::ThresholdFailed })
}

#[derive(Serialize)]
struct NormalizerRow {
    sigma2: f64,
    z: f64,
    lower: f64,
    upper: f64,
    pass: bool,
}

fn stats_check(ctx: &Context, check: &StatsCheck) -> Result<Status, CliError> {
    let out = ctx.out_dir()?;
    let seed = SeedTree::new(ctx.seed).child(label::STATS).value();
    let file = format!("stats_{}.json", check.name());
    let (pass, report) = match check {
        StatsCheck::PmfRatio { n, c, sigma2, z_range } => {
            let r = pmf_ratio_check(*sigma2, *n, *c, *z_range)?;
            out.write_json(&file, &r)?;
            let text = format!(
                "pmf-ratio: sigma2 {sigma2}, n {n}, C {c}: max |ratio - 1| = {:.3e} at z = {} over |z| <= {}; bound {:.3e}\n",
                r.max_deviation, r.argmax, r.z_range, r.bound
            );
            (r.pass, text)
        }
        StatsCheck::Normalizer { sigma2 } => {
            let rows = sigma2
                .iter()
                .map(|&s2| {
                    let z = normalizer(s2)?;
                    let g = (2.0 * std::f64::consts::PI * s2).sqrt();
                    let (lower, upper) = (g.max(1.0), g + 1.0);
                    Ok(NormalizerRow { sigma2: s2, z, lower, upper, pass: z >= lower * (1.0 - NORMALIZER_REL_TOL) && z <= upper * (1.0 + NORMALIZER_REL_TOL) })
                })
                .collect::<Result<Vec<_>, CliError>>()?;
            out.write_json(&file, &rows)?;
            let mut text = String::from("normalizer:\n");
            for r in &rows {
                let _ = writeln!(text, "  sigma2 {}: Z = {:.9} in [{:.9}, {:.9}] {}", r.sigma2, r.z, r.lower, r.upper, if r.pass { "ok" } else { "VIOLATED" });
            }
            (rows.iter().all(|r| r.pass), text)
        }
        StatsCheck::Cell { r, n, entry_bound, sigma2, samples, variant } => {
            let mut rng = SeedTree::new(seed).child(1).rng();
            let data = (0..r * n).map(|_| rng.random_range(-*entry_bound..=*entry_bound)).collect();
            let a = IntMatrix::from_row_major(*r, *n, data)?;
            let rep = cell_lemma_check(&a, *entry_bound, *sigma2, *samples, (*variant).into(), seed)?;
            out.write_json(&file, &rep)?;
            (rep.pass, format!("cell ({variant:?}): {}\n", serde_json::to_string(&rep)?))
        }
        StatsCheck::SingularValues { m, n, noise, trials, min_fraction } => {
            let r = singular_value_check(*m, *n, *noise, *trials, seed)?;
            out.write_json(&file, &r)?;
            let need = (min_fraction * *trials as f64).ceil() as usize;
            let text = format!(
                "singular-values: {}/{} trials inside [{:.1}, {:.1}] (need {need}); observed [{:.1}, {:.1}]\n",
                r.within, r.trials, r.lower, r.upper, r.smallest, r.largest
            );
            (r.within >= need, text)
        }
        StatsCheck::Mgf { a, sigma2, samples } => {
            let r = mgf_check(*a, *sigma2, *samples, seed)?;
            out.write_json(&file, &r)?;
            let text = format!("mgf: a {a}: estimate {:.5} (SE {:.5}), bound {:.5}\n", r.estimate, r.standard_error, r.bound);
            (r.pass, text)
        }
    };
    let report = format!("{report}{}\n", if pass { "PASS" } else { "FAIL" });
    finish(&out, &report, if pass { Status::Ok } else { Status::ThresholdFailed })
}

fn suite(ctx: &Context, criteria: Vec<u8>) -> Result<Status, CliError> {
    let out = ctx.out_dir()?;
    let ids: Vec<u8> = if criteria.is_empty() { CRITERIA.collect() } else { criteria };
    let mut outcomes = Vec::new();
    let mut report = format!("acceptance battery, root seed {}\n", ctx.seed);
    for id in ids {
        let o = run_criterion(id, ctx.seed)?;
        println!("{}", o.line());
        let _ = writeln!(report, "{}", o.line());
        outcomes.push(o);
    }
    let passed = outcomes.iter().filter(|o| o.pass).count();
    let _ = writeln!(report, "{passed}/{} criteria pass", outcomes.len());
    println!("{passed}/{} criteria pass", outcomes.len());
    out.write_json("acceptance.json", &outcomes)?;
    out.write_text("report.txt", &report)?;
    Ok(if passed == outcomes.len() { Status::Ok } else { Status::ThresholdFailed })
}
