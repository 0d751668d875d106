use std::net::TcpListener;
use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde_json::{json, Value};

use rsp_core::copy_protection::{self as cp, ChallengeDist, PointFunction};
use rsp_core::delegation::{self, Circuit};
use rsp_core::protocol::{self, CheatStrategy, MultiRoundConfig, Prover, RemoteProver, SimulatedProver};
use rsp_core::unclonable::{self as uc, CloningAttack};
use rsp_core::{rigidity, BitString, ProtocolTranscript};

use crate::{
    DiagnoseArgs, EvalArgs, Failure, PirateArgs, ProtectArgs, QcedArgs, Report, RunArgs, ServeArgs, UnclonableArgs,
    VerifyArgs,
};

fn ok(value: Value) -> Result<Report, Failure> {
    Ok(Report { value, abort: false })
}

fn bits(s: &str, what: &str) -> Result<BitString, Failure> {
    s.parse().map_err(|e| Failure::Usage(format!("{what}: {e}")))
}

fn required<T>(v: Option<T>, flag: &str) -> Result<T, Failure> {
    v.ok_or_else(|| Failure::Usage(format!("missing --{flag}")))
}

fn simulated_prover(strategy: Option<&str>, seed: u64) -> Result<SimulatedProver, Failure> {
    match strategy {
        None | Some("honest") => Ok(SimulatedProver::honest(seed)),
        Some(name) => CheatStrategy::ALL
            .into_iter()
            .find(|s| s.name() == name)
            .map(|s| SimulatedProver::cheating(s, seed))
            .ok_or_else(|| Failure::Usage(format!("unknown strategy {name}"))),
    }
}

fn base_config(m: Option<usize>, width: Option<u32>) -> MultiRoundConfig {
    MultiRoundConfig { m: m.unwrap_or(2), width: width.unwrap_or(2), ..Default::default() }
}

pub fn rsp_run(a: RunArgs) -> Result<Report, Failure> {
    let d = MultiRoundConfig::default();
    let cfg = MultiRoundConfig {
        n: a.n.unwrap_or(d.n),
        m: a.m.unwrap_or(d.m),
        delta: a.delta.unwrap_or(d.delta),
        width: a.width.unwrap_or(d.width),
        seed: a.seed.unwrap_or(d.seed),
        strict: a.strict,
    };
    cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    let mut prover: Box<dyn Prover> = match &a.connect {
        Some(addr) => {
            if a.strategy.is_some() {
                return Err(Failure::Usage("--strategy applies to the in-process prover only".into()));
            }
            Box::new(RemoteProver::connect(addr)?)
        }
        None => Box::new(simulated_prover(a.strategy.as_deref(), a.prover_seed.unwrap_or(cfg.seed))?),
    };
    let res = protocol::run_multi_round(&cfg, prover.as_mut())?;
    if let Some(path) = &a.transcript {
        res.transcript.write(path)?;
    }
    let value = json!({
        "accepted": res.accepted,
        "config": cfg,
        "s": res.s,
        "r": res.r,
        "abort_block": res.abort_block,
        "test_rounds": res.test_rounds.len(),
        "failures": res.failures(),
        "theta": res.theta.as_ref().map(|t| t.to_string()),
        "v": res.v.as_ref().map(|v| v.to_string()),
        "transcript": a.transcript,
    });
    Ok(Report { value, abort: !res.accepted })
}

pub fn serve_prover(a: ServeArgs) -> Result<Report, Failure> {
    let listen = a.listen.unwrap_or_else(|| "127.0.0.1:7878".into());
    let seed = a.seed.unwrap_or(0);
    let mut prover = simulated_prover(a.strategy.as_deref(), seed)?;
    let listener = TcpListener::bind(&listen)?;
    let addr = listener.local_addr()?;
    eprintln!("listening on {addr}");
    let (stream, peer) = listener.accept()?;
    protocol::serve_prover(stream, &mut prover)?;
    ok(json!({
        "served": true,
        "listen": addr.to_string(),
        "peer": peer.to_string(),
        "seed": seed,
        "strategy": a.strategy.unwrap_or_else(|| "honest".into()),
    }))
}

pub fn diagnose(a: DiagnoseArgs) -> Result<Report, Failure> {
    let mut rng = ChaCha20Rng::seed_from_u64(a.seed.unwrap_or(0));
    let honest = rigidity::device_from_honest(a.n.unwrap_or(2), a.width.unwrap_or(2), &mut rng)
        .map_err(|e| Failure::Usage(e.to_string()))?;
    let dev = rigidity::perturb_device(&honest, a.epsilon.unwrap_or(0.0)).map_err(|e| Failure::Usage(e.to_string()))?;
    let (report, grid) = rigidity::diagnose(&dev)?;
    if let Some(path) = &a.csv {
        std::fs::write(path, grid.to_csv())?;
    }
    ok(json!({ "report": report, "grid": grid }))
}

pub fn unclonable_demo(a: UnclonableArgs) -> Result<Report, Failure> {
    let attack: Box<dyn CloningAttack> = match a.attack.as_deref().unwrap_or("breidbart") {
        "breidbart" => Box::new(uc::breidbart_attack()),
        "forward" => Box::new(uc::forward_attack()),
        other => return Err(Failure::Usage(format!("unknown attack {other}"))),
    };
    let lambda = a.lambda.unwrap_or(1);
    let trials = a.trials.unwrap_or(1000);
    let mut rng = ChaCha20Rng::seed_from_u64(a.seed.unwrap_or(0));
    let res = match a.mode.as_deref().unwrap_or("exact") {
        "exact" => uc::cloning_experiment_exact(attack.as_ref(), lambda),
        "mc" => uc::cloning_experiment_mc(attack.as_ref(), lambda, trials, &mut rng),
        "classical" => {
            let base = base_config(a.m, a.width);
            uc::cloning_experiment_classical_client(attack.as_ref(), lambda, trials, &base, &mut rng)
        }
        other => return Err(Failure::Usage(format!("unknown mode {other}"))),
    }
    .map_err(|e| Failure::Usage(e.to_string()))?;
    ok(serde_json::to_value(res)?)
}

pub fn cp_protect(a: ProtectArgs) -> Result<Report, Failure> {
    let lambda = a.lambda.unwrap_or(1);
    let mut rng = ChaCha20Rng::seed_from_u64(a.seed.unwrap_or(0));
    let random = PointFunction::random(lambda, &mut rng).map_err(|e| Failure::Usage(e.to_string()))?;
    let y = a.y.as_deref().map(|s| bits(s, "--y")).transpose()?.unwrap_or(random.y);
    let m = a.marked_output.as_deref().map(|s| bits(s, "--output")).transpose()?.unwrap_or(random.m);
    let f = PointFunction::new(y, m).map_err(|e| Failure::Usage(e.to_string()))?;
    let base = MultiRoundConfig { seed: rng.gen(), ..base_config(a.m, a.width) };
    let out = a.out.unwrap_or_else(|| PathBuf::from("program.json"));
    let mut prover = SimulatedProver::honest(base.seed);
    let Some((prog, _)) = cp::cp_protect(&f, &base, &mut prover, &mut rng)? else {
        return Ok(Report { value: json!({ "accepted": false, "rsp_seed": base.seed }), abort: true });
    };
    let state = cp::save_program(&prog, &out)?;
    ok(json!({
        "accepted": true,
        "lambda": lambda,
        "function": { "y": f.y.to_string(), "m": f.m.to_string() },
        "program": out,
        "state_file": state,
        "r": prog.public.r.to_string(),
        "t": prog.public.t.to_string(),
        "rsp_seed": base.seed,
    }))
}

pub fn cp_eval(a: EvalArgs) -> Result<Report, Failure> {
    let path = required(a.program, "program")?;
    let x = bits(&required(a.x, "x")?, "--x")?;
    let prog = cp::load_program(&path).map_err(|e| Failure::Usage(e.to_string()))?;
    let mut rng = ChaCha20Rng::seed_from_u64(a.seed.unwrap_or(0));
    let (output, after) = cp::cp_eval(&prog, &x, &mut rng).map_err(|e| Failure::Usage(e.to_string()))?;
    if let Some(out) = &a.out {
        cp::save_program(&after, out)?;
    }
    ok(json!({ "x": x.to_string(), "output": output.to_string(), "saved": a.out }))
}

pub fn cp_pirate(a: PirateArgs) -> Result<Report, Failure> {
    let name = a.pirate.as_deref().unwrap_or("breidbart");
    let pirate = cp::pirate_by_name(name).ok_or_else(|| Failure::Usage(format!("unknown pirate {name}")))?;
    let dist = match a.challenge.as_deref().unwrap_or("marked") {
        "marked" => ChallengeDist::BothMarked,
        "never" => ChallengeDist::NeverMarked,
        "independent" => ChallengeDist::Independent { p_marked: a.p_marked.unwrap_or(0.5) },
        other => return Err(Failure::Usage(format!("unknown challenge distribution {other}"))),
    };
    let lambda = a.lambda.unwrap_or(1);
    let mut rng = ChaCha20Rng::seed_from_u64(a.seed.unwrap_or(0));
    let res = match a.mode.as_deref().unwrap_or(if lambda == 1 { "exact" } else { "trials" }) {
        "exact" => cp::piracy_experiment_exact(pirate.as_ref(), lambda, dist),
        "trials" => {
            let base = base_config(a.m, a.width);
            cp::piracy_experiment_trials(pirate.as_ref(), lambda, dist, a.trials.unwrap_or(1000), &base, &mut rng)
        }
        other => return Err(Failure::Usage(format!("unknown mode {other}"))),
    }
    .map_err(|e| Failure::Usage(e.to_string()))?;
    ok(serde_json::to_value(res)?)
}

pub fn qced_demo(a: QcedArgs) -> Result<Report, Failure> {
    let path = required(a.circuit, "circuit")?;
    let text = std::fs::read_to_string(&path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    let c = Circuit::from_json(&text).map_err(|e| Failure::Usage(e.to_string()))?;
    let input = bits(&required(a.input, "input")?, "--input")?;
    if input.len() != c.n {
        return Err(Failure::Usage(format!("input has {} bits, circuit acts on {}", input.len(), c.n)));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(a.seed.unwrap_or(0));
    let keys = delegation::qced_setup(&c, c.n, &base_config(a.m, a.width), &mut rng)?;
    let Some(prep) = delegation::qced_stateprep(&keys, &mut SimulatedProver::honest(keys.rsp.seed))? else {
        return Ok(Report { value: json!({ "rsp_accepted": false, "t_count": c.t_count() }), abort: true });
    };
    let ct_in = delegation::otp_enc(&prep.keys.sk_in, &input)?;
    let (sk_out, ct_out) = delegation::qced_evaluate_reference(&prep.keys, &c, &ct_in, &mut rng)?;
    let output = delegation::otp_dec(&sk_out, &ct_out)?;
    let dist: Vec<Value> = delegation::qced_reference_distribution(&prep.keys, &c, &ct_in)?
        .into_iter()
        .enumerate()
        .filter(|(_, p)| *p > 1e-12)
        .map(|(i, p)| json!({ "bits": BitString::from_u64(i as u64, c.n).to_string(), "p": p }))
        .collect();
    ok(json!({
        "evaluator": "reference (not private)",
        "n": c.n,
        "gates": c.len(),
        "t_count": c.t_count(),
        "rsp_accepted": true,
        "ct_in": ct_in.to_string(),
        "ct_out": ct_out.to_string(),
        "output": output.to_string(),
        "distribution": dist,
    }))
}

pub fn transcript_verify(a: VerifyArgs) -> Result<Report, Failure> {
    let path = required(a.file, "file")?;
    let t = ProtocolTranscript::read(&path).map_err(|e| Failure::Usage(e.to_string()))?;
    let rep = protocol::replay(&t).map_err(|e| Failure::Usage(e.to_string()))?;
    let abort = !rep.is_consistent();
    Ok(Report { value: json!({ "consistent": !abort, "report": rep }), abort })
}
