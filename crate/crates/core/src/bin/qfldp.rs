use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{value_parser, Arg, ArgMatches, Command};

use qfldp_core::accountant::PrivacyLedger;
use qfldp_core::harness::config::{Preset, KEYS};
use qfldp_core::harness::data::{generate_synthetic, write_features_csv};
use qfldp_core::harness::run_experiment;
use qfldp_core::model::{format_f64, HybridModel};
use qfldp_core::rng::{stream, Purpose};
use qfldp_core::vqc::{vqc_jacobian, EncodedInput, VqcParameters};
use qfldp_core::{Error, Result};

fn cli() -> Command {
    let mut train = Command::new("train")
        .about("Run federated DP training and write metrics.csv, model.txt and manifest.txt")
        .arg(Arg::new("config").long("config").value_name("FILE").help("key=value config file"))
        .arg(
            Arg::new("preset")
                .long("preset")
                .default_value("default")
                .help("default, paper-shape, sigma-sweep or local-epochs"),
        );
    for (key, help) in KEYS {
        train = train.arg(Arg::new(*key).long(*key).value_name("VALUE").help(*help));
    }

    let accountant = Command::new("accountant")
        .about("Epsilon of the subsampled Gaussian mechanism after a number of steps")
        .arg(Arg::new("q").long("q").required(true).value_parser(value_parser!(f64)))
        .arg(Arg::new("sigma").long("sigma").required(true).value_parser(value_parser!(f64)))
        .arg(Arg::new("steps").long("steps").required(true).value_parser(value_parser!(u64)))
        .arg(Arg::new("delta").long("delta").default_value("1e-5").value_parser(value_parser!(f64)));

    let synth = Command::new("synth")
        .about("Write a synthetic two-cluster dataset as CSV")
        .arg(Arg::new("n").long("n").default_value("1000").value_parser(value_parser!(usize)))
        .arg(Arg::new("d").long("d").default_value("16").value_parser(value_parser!(usize)))
        .arg(Arg::new("separation").long("separation").default_value("6").value_parser(value_parser!(f64)))
        .arg(Arg::new("seed").long("seed").default_value("0").value_parser(value_parser!(u64)))
        .arg(Arg::new("out").long("out").value_name("FILE").help("defaults to stdout"));

    let simulate = Command::new("simulate")
        .about("Dump one VQC forward pass and its parameter-shift gradients")
        .arg(Arg::new("x").long("x").required(true).help("four comma-separated encoded features"))
        .arg(Arg::new("angles").long("angles").help("twelve comma-separated angles (default: zeros)"))
        .arg(Arg::new("model").long("model").value_name("FILE").help("also print class probabilities of this model for --features"))
        .arg(Arg::new("features").long("features").help("raw comma-separated features for --model"));

    Command::new("qfldp")
        .about("Differentially-private federated training of a hybrid quantum-classical classifier")
        .subcommand_required(true)
        .subcommands([train, accountant, synth, simulate])
}

fn parse_list(name: &str, s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|t| t.trim().parse().map_err(|_| Error::Config(format!("--{name}: bad number '{t}'"))))
        .collect()
}

fn train(m: &ArgMatches) -> Result<()> {
    let preset: Preset = m.get_one::<String>("preset").expect("defaulted").parse()?;
    let mut cfg = preset.base();
    if let Some(path) = m.get_one::<String>("config") {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config '{path}': {e}")))?;
        cfg.apply_text(&text)?;
    }
    for (key, _) in KEYS {
        if let Some(v) = m.get_one::<String>(key) {
            cfg.set(key, v)?;
        }
    }
    let mut out = std::io::stdout().lock();
    for (name, run) in preset.expand(&cfg) {
        let report = run_experiment(&run)?;
        let label = if name.is_empty() { String::new() } else { format!("[{name}] ") };
        let acc = report.rows.last().map_or(f64::NAN, |r| r.test_accuracy);
        if report.final_epsilon.is_infinite() {
            writeln!(out, "{label}non-private run; final test accuracy {acc:.4}")?;
        } else {
            writeln!(
                out,
                "{label}final epsilon {:.4} (delta {}), sigma {:.4}, final test accuracy {acc:.4}",
                report.final_epsilon, run.delta, report.plan.noise_multiplier
            )?;
        }
        writeln!(out, "{label}wrote {}", report.config.output_dir.display())?;
    }
    Ok(())
}

fn accountant(m: &ArgMatches) -> Result<()> {
    let get = |k: &str| *m.get_one::<f64>(k).expect("required");
    let steps = *m.get_one::<u64>("steps").expect("required");
    let ledger = PrivacyLedger::new(get("q"), get("sigma"), get("delta"))?.accumulated(steps);
    let spent = ledger.epsilon()?;
    let mut out = std::io::stdout().lock();
    if spent.epsilon.is_infinite() {
        writeln!(out, "epsilon=inf (non-private)")?;
    } else {
        writeln!(out, "epsilon={}", format_f64(spent.epsilon))?;
        writeln!(out, "order={}", spent.order)?;
    }
    Ok(())
}

fn synth(m: &ArgMatches) -> Result<()> {
    let seed = *m.get_one::<u64>("seed").expect("defaulted");
    let examples = generate_synthetic(
        *m.get_one::<usize>("n").expect("defaulted"),
        *m.get_one::<usize>("d").expect("defaulted"),
        *m.get_one::<f64>("separation").expect("defaulted"),
        &mut stream(seed, Purpose::Synthetic, 0, 0),
    )?;
    match m.get_one::<String>("out") {
        Some(path) => write_features_csv(&examples, std::fs::File::create(PathBuf::from(path))?),
        None => write_features_csv(&examples, std::io::stdout().lock()),
    }
}

fn simulate(m: &ArgMatches) -> Result<()> {
    let x = EncodedInput::from_slice(&parse_list("x", m.get_one::<String>("x").expect("required"))?)?;
    let params = match m.get_one::<String>("angles") {
        Some(s) => VqcParameters::from_flat(&parse_list("angles", s)?)?,
        None => VqcParameters::zeros(),
    };
    let jac = vqc_jacobian(&x, &params)?;
    let mut out = std::io::stdout().lock();
    for k in 0..jac.outputs.len() {
        let grads: Vec<String> = jac.grads[k].iter().map(|g| format_f64(*g)).collect();
        writeln!(out, "z{k}={}", format_f64(jac.outputs[k]))?;
        writeln!(out, "grad_z{k}={}", grads.join(","))?;
    }
    if let Some(path) = m.get_one::<String>("model") {
        let model = HybridModel::from_text(&std::fs::read_to_string(path)?)?;
        let raw = m
            .get_one::<String>("features")
            .ok_or_else(|| Error::Config("--model needs --features".into()))?;
        let p = model.forward(&parse_list("features", raw)?)?;
        writeln!(out, "probabilities={},{}", format_f64(p[0]), format_f64(p[1]))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let matches = match cli().try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match matches.subcommand() {
        Some(("train", m)) => train(m),
        Some(("accountant", m)) => accountant(m),
        Some(("synth", m)) => synth(m),
        Some(("simulate", m)) => simulate(m),
        _ => unreachable!("subcommand required"),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Error::Io(e)) if e.kind() == std::io::ErrorKind::BrokenPipe => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
