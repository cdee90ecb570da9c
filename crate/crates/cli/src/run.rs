use std::fs;
use std::path::{Path, PathBuf};

use egnn::checkpoint::{load_checkpoint, save_checkpoint};
use egnn::diagnostics::{record_trace, verify_lemmas, EnergyTrace, VerifyOptions};
use egnn::gradcheck::{gradcheck, GradcheckOptions};
use egnn::graph::{generate_synthetic, load_dataset, write_dataset};
use egnn::model::{Activation, ModelConfig, ModelParams, Variant, NEG_INF_SHIFT};
use egnn::presets::{preset, DatasetKind};
use egnn::spectral::{spectral_summary_capped, SpectralSummary};
use egnn::train::{train, Aggregate, TrainConfig};
use egnn::{build_operators, Graph, PropagationOperators};
use serde_json::Value;

use crate::args::{
    parse_seeds, DatasetArgs, GradcheckArgs, ModelOverrides, SynthArgs, TraceArgs, TrainArgs, TrainOverrides,
    VerifyArgs,
};

#[derive(Debug)]
pub enum CliError {
    /// Exit code 2.
    Usage(String),
    /// Exit code 1.
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

impl From<egnn::Error> for CliError {
    fn from(e: egnn::Error) -> Self {
        match e {
            egnn::Error::Config(_) => CliError::Usage(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

type CliResult<T> = Result<T, CliError>;

fn runtime(msg: impl std::fmt::Display) -> CliError {
    CliError::Runtime(msg.to_string())
}

fn resolve_dataset(name: &str) -> CliResult<PathBuf> {
    let direct = PathBuf::from(name);
    if direct.is_dir() {
        return Ok(direct);
    }
    let under_data = Path::new("data").join(name);
    if under_data.is_dir() {
        return Ok(under_data);
    }
    Err(runtime(format!("dataset '{name}' not found (tried {name} and data/{name})")))
}

struct Loaded {
    kind: DatasetKind,
    graph: Graph,
    ops: PropagationOperators,
}

fn load(data: &DatasetArgs) -> CliResult<Loaded> {
    let dir = resolve_dataset(&data.dataset)?;
    let raw = load_dataset(&dir)?;
    let graph = if data.raw_features { raw } else { raw.row_normalized() };
    let ops = build_operators(&graph)?;
    log::info!("loaded {}: n={} edges={} d_in={} classes={}", dir.display(), graph.n(), graph.n_edges(), graph.d_in(), graph.n_classes());
    Ok(Loaded {
        kind: DatasetKind::from_name(&data.dataset),
        graph,
        ops,
    })
}

fn spectral(ops: &PropagationOperators, cap: usize) -> Result<SpectralSummary, String> {
    let s = spectral_summary_capped(&ops.delta_tilde, cap).map_err(|e| e.to_string());
    if let Err(reason) = &s {
        log::warn!("spectral bounds omitted: {reason}");
    }
    s
}

fn read_config_file(path: Option<&Path>) -> CliResult<(Value, Value)> {
    let Some(path) = path else {
        return Ok((Value::Null, Value::Null));
    };
    let text = fs::read_to_string(path).map_err(|e| runtime(format!("cannot read {}: {e}", path.display())))?;
    let v: Value = serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let Value::Object(mut obj) = v else {
        return Err(CliError::Usage("config file must hold a JSON object".into()));
    };
    let model = obj.remove("model").unwrap_or(Value::Null);
    let train = obj.remove("train").unwrap_or(Value::Null);
    if let Some(k) = obj.keys().next() {
        return Err(CliError::Usage(format!("unknown config section '{k}' (expected model, train)")));
    }
    Ok((model, train))
}

/// Overlay the keys of `patch` onto a serializable value; unknown keys are usage errors.
fn overlay<T: serde::Serialize + serde::de::DeserializeOwned>(base: &T, patch: &Value, what: &str) -> CliResult<T> {
    let mut v = serde_json::to_value(base).expect("serializable");
    match patch {
        Value::Null => {}
        Value::Object(p) => {
            let target = v.as_object_mut().expect("struct serializes to object");
            for (k, val) in p {
                if !target.contains_key(k) {
                    return Err(CliError::Usage(format!("unknown {what} key '{k}'")));
                }
                target.insert(k.clone(), val.clone());
            }
        }
        _ => return Err(CliError::Usage(format!("{what} section must be an object"))),
    }
    serde_json::from_value(v).map_err(|e| CliError::Usage(format!("bad {what} config: {e}")))
}

fn file_field<T: serde::de::DeserializeOwned>(patch: &Value, key: &str) -> CliResult<Option<T>> {
    match patch.get(key) {
        None => Ok(None),
        Some(v) => serde_json::from_value(v.clone())
            .map(Some)
            .map_err(|e| CliError::Usage(format!("bad '{key}' in config file: {e}"))),
    }
}

/// Preset for (dataset, variant, K), then the config file, then explicit flags.
fn build_config(
    kind: DatasetKind,
    flags: &ModelOverrides,
    train_flags: Option<&TrainOverrides>,
    file: (Value, Value),
) -> CliResult<(ModelConfig, TrainConfig)> {
    let (file_model, file_train) = file;
    let variant = match flags.variant {
        Some(v) => v,
        None => file_field::<Variant>(&file_model, "variant")?.unwrap_or(Variant::Egnn),
    };
    let k = match flags.layers {
        Some(k) => k,
        None => file_field::<usize>(&file_model, "k_layers")?.unwrap_or(2),
    };
    let (m0, t0) = preset(kind, variant, k);
    let mut m = overlay(&m0, &file_model, "model")?;
    let mut t = overlay(&t0, &file_train, "train")?;
    m.variant = variant;
    m.k_layers = k;

    let set = |dst: &mut f64, v: Option<f64>| {
        if let Some(v) = v {
            *dst = v;
        }
    };
    if let Some(d) = flags.hidden {
        m.d_hidden = d;
    }
    set(&mut m.c_max, flags.cmax);
    set(&mut m.gamma, flags.gamma);
    set(&mut m.b_init, flags.b_init);
    set(&mut m.dropout, flags.dropout);
    if let Some(a) = flags.activation {
        m.activation = a;
    }
    if let Some(i) = flags.init {
        m.weight_init = i;
    }
    if let Some(c) = flags.cmin {
        m.c_min = c;
        let (alpha, beta) = match (flags.alpha, flags.beta) {
            (Some(a), Some(b)) => (a, b),
            (Some(a), None) => (a, c - a),
            (None, Some(b)) => (c - b, b),
            (None, None) => kind.residual_split(c),
        };
        m.alpha = alpha;
        m.beta = beta;
    } else {
        set(&mut m.alpha, flags.alpha);
        set(&mut m.beta, flags.beta);
    }

    if let Some(tf) = train_flags {
        set(&mut t.lr, tf.lr);
        set(&mut t.weight_decay, tf.weight_decay);
        if let Some(e) = tf.epochs {
            t.max_epochs = e;
            if tf.patience.is_none() {
                t.patience = t.patience.min(e);
            }
        }
        if let Some(p) = tf.patience {
            t.patience = p;
        }
        if let Some(s) = tf.trace_every {
            t.trace_every = s;
        }
        if let Some(b) = tf.trunk_weight_decay {
            t.trunk_weight_decay = b;
        }
    }
    m.validate()?;
    t.validate()?;
    Ok((m, t))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> CliResult<()> {
    fs::write(path, contents).map_err(|e| runtime(format!("cannot write {}: {e}", path.display())))
}

fn print_trace_summary(trace: &EnergyTrace) {
    let k = trace.rows.len() - 1;
    let v = trace.violations();
    println!("layers in band: {}/{k}", k - v.len());
    if !v.is_empty() {
        println!("band violations at layers {v:?}");
    }
    if let Some(reason) = &trace.bounds_omitted {
        println!("spectral bounds omitted: {reason}");
    }
    println!(
        "E(X0) = {:e}, E(XK) = {:e}, ratio = {:e}{}",
        trace.e0(),
        trace.final_energy(),
        trace.final_ratio(),
        if trace.collapsed() { " (collapsed)" } else { "" }
    );
}

pub fn cmd_train(args: &TrainArgs) -> CliResult<()> {
    let seeds = parse_seeds(&args.seeds).map_err(CliError::Usage)?;
    let file = read_config_file(args.config.as_deref())?;
    let data = load(&args.data)?;
    let (model, train_cfg) = build_config(data.kind, &args.model, Some(&args.train), file)?;
    fs::create_dir_all(&args.out).map_err(|e| runtime(format!("cannot create {}: {e}", args.out.display())))?;
    let spec = spectral(&data.ops, args.data.eigen_cap);

    let mut reports = Vec::with_capacity(seeds.len());
    for &seed in &seeds {
        let m = ModelConfig { seed, ..model.clone() };
        let t = TrainConfig { seed, ..train_cfg.clone() };
        let out = train(&data.graph, &data.ops, &m, &t, spec.as_ref().map_err(Clone::clone))?;
        let r = &out.report;
        println!(
            "seed {seed}: test {:.2}% (best epoch {}, {} epochs, {:.1}s)",
            100.0 * r.test_accuracy,
            r.best_epoch,
            r.epochs_run,
            r.timing.wall_time_secs
        );
        let stem = args.out.join(format!("seed{seed}"));
        write_file(&stem.with_extension("json"), r.to_json())?;
        write_file(&stem.with_extension("csv"), r.trace.to_csv())?;
        save_checkpoint(stem.with_extension("ckpt"), &m, &out.params)?;
        reports.push(out.report);
    }
    let agg = Aggregate::from_reports(&reports);
    write_file(
        &args.out.join("aggregate.json"),
        serde_json::to_string_pretty(&agg).expect("aggregate serializes"),
    )?;
    println!(
        "test accuracy {:.2} ± {:.2} over {} seed(s)",
        100.0 * agg.test_accuracy_mean,
        100.0 * agg.test_accuracy_std,
        seeds.len()
    );
    Ok(())
}

pub fn cmd_trace(args: &TraceArgs) -> CliResult<()> {
    let data = load(&args.data)?;
    let (config, mut params) = match &args.checkpoint {
        Some(path) => {
            if !path.exists() {
                return Err(runtime(format!("checkpoint {} not found", path.display())));
            }
            load_checkpoint(path)?
        }
        None => {
            let file = read_config_file(args.config.as_deref())?;
            let (mut m, _) = build_config(data.kind, &args.model, None, file)?;
            m.seed = args.seed;
            if args.linearize_shifts {
                m.b_init = NEG_INF_SHIFT;
            }
            let p = ModelParams::init(&m, data.graph.d_in(), data.graph.n_classes())?;
            (m, p)
        }
    };
    if args.linearize_shifts && config.trunk_activation() == Activation::Srelu {
        params.b_shifts.fill(NEG_INF_SHIFT);
    }
    let spec = spectral(&data.ops, args.data.eigen_cap);
    let trace = record_trace(&params, &data.graph, &data.ops, &config, spec.as_ref().map_err(Clone::clone), args.band_source)?;
    trace.export_csv(&args.out)?;
    println!("wrote {} ({} rows)", args.out.display(), trace.rows.len());
    print_trace_summary(&trace);
    Ok(())
}

pub fn cmd_verify(args: &VerifyArgs) -> CliResult<()> {
    let beta = args.beta.unwrap_or_else(|| match args.alpha {
        Some(a) => args.cmin - a,
        None => args.cmin.min(0.1),
    });
    let alpha = args.alpha.unwrap_or(args.cmin - beta);
    let options = VerifyOptions {
        trials: args.trials,
        seed: args.seed,
        c_min: args.cmin,
        c_max: args.cmax,
        alpha,
        beta,
    };
    let reference = match &args.dataset {
        Some(name) => Some(load_dataset(resolve_dataset(name)?)?),
        None => None,
    };
    let report = verify_lemmas(&options, reference.as_ref())?;
    print!("{}", report.to_text());
    if let Some(out) = &args.out {
        write_file(out, serde_json::to_string_pretty(&report).expect("report serializes"))?;
    }
    if report.passed() {
        Ok(())
    } else {
        Err(runtime("verification failed"))
    }
}

pub fn cmd_gradcheck(args: &GradcheckArgs) -> CliResult<()> {
    let activation = args.activation.unwrap_or(match args.variant {
        Variant::Egnn => Activation::Srelu,
        Variant::Gcn => Activation::Relu,
        Variant::Sgc => Activation::Linear,
    });
    let options = GradcheckOptions {
        variant: args.variant,
        k_layers: args.layers,
        activation,
        samples: args.samples,
        seed: args.seed,
        step: args.step,
        tolerance: args.tolerance,
        ..Default::default()
    };
    let corrupt = |g: &mut ModelParams| g.w_in *= 1.5;
    let hook: Option<&dyn Fn(&mut ModelParams)> = if args.corrupt_backward { Some(&corrupt) } else { None };
    let report = gradcheck(&options, hook)?;
    println!(
        "checked {} coordinates ({} skipped at kinks), max relative error {:e} (tolerance {:e})",
        report.checked, report.skipped, report.max_rel_err, report.tolerance
    );
    if report.passed() {
        println!("PASS");
        return Ok(());
    }
    if let Some(w) = &report.worst {
        println!(
            "worst coordinate {} (index {}): analytic {:e}, numeric {:e}, relative error {:e}",
            w.name, w.index, w.analytic, w.numeric, w.rel_err
        );
    }
    println!("FAIL");
    Err(runtime("gradient check failed"))
}

pub fn cmd_synth(args: &SynthArgs) -> CliResult<()> {
    let g = generate_synthetic(args.n, args.p, args.features, args.classes, args.seed)?;
    write_dataset(&g, &args.out)?;
    println!("wrote {} (n={}, edges={})", args.out.display(), g.n(), g.n_edges());
    Ok(())
}
