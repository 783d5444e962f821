use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use psvppo::model::Policy;
use psvppo::psv::{valid_set_histogram, PsvTable, TableBuilder, DEFAULT_MIN_EOS_LEN};
use psvppo::tasks::Task;
use psvppo::trainer::{
    auc_top10, derive_seed, load_corpus, pretrain, read_epochs_csv, sample_validity, PretrainConfig, TrainConfig,
    Trainer,
};
use psvppo::validator::{check_complete, check_prefix, Verdict};
use psvppo::vocab::Vocabulary;
use psvppo::BUNDLED_CORPUS;

#[derive(Parser)]
#[command(name = "psvppo", version, about = "Partial-SMILES validation and PSV-PPO training")]
struct Cli {
    /// Worker threads (0 = one per core, 1 = strictly sequential).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// Vocabulary file, one token per line (default: the bundled one).
    #[arg(long, global = true)]
    vocab: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a SMILES string; exits 1 with `<reason> <position>` if rejected.
    Validate {
        smiles: String,
        /// Accept strings that can still be completed.
        #[arg(long)]
        partial: bool,
    },
    /// Build the validity table for a SMILES string (EOS appended).
    Table {
        smiles: String,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
        #[arg(long, default_value_t = DEFAULT_MIN_EOS_LEN)]
        min_eos_len: usize,
        /// Do not append EOS to the actions.
        #[arg(long)]
        no_eos: bool,
    },
    /// Distribution of valid-candidate counts over corpus or sampled molecules.
    Stats {
        /// SMILES file (default: the bundled corpus).
        #[arg(long, conflicts_with = "model")]
        corpus: Option<PathBuf>,
        /// Sample molecules from this model instead of reading a corpus.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Number of molecules (default: whole corpus, or 10000 samples).
        #[arg(short = 'n')]
        n: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Directory for histogram.csv and by_token.csv (default: histogram to stdout).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_MIN_EOS_LEN)]
        min_eos_len: usize,
    },
    /// Maximum-likelihood pretraining on a SMILES corpus.
    Pretrain {
        /// Where to write the model.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// TOML file with pretraining settings.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        d_emb: Option<usize>,
        #[arg(long)]
        d_hid: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        /// Samples drawn to report validity at the end.
        #[arg(long, default_value_t = 1000)]
        validity_samples: usize,
    },
    /// PSV-PPO optimisation of a pretrained model against a task.
    Train {
        #[arg(long, default_value = "isomer:C11H24")]
        task: String,
        /// Pretrained model (default: pretrain on the bundled corpus first).
        #[arg(long)]
        model: Option<PathBuf>,
        /// Run directory.
        #[arg(long, default_value = "run")]
        out: PathBuf,
        /// TOML file with training settings; flags override it.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        episode_size: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        oracle_cap: Option<u64>,
        #[arg(long)]
        checkpoint_every: Option<usize>,
        /// Use plain entropy and KL instead of the table-aware terms.
        #[arg(long)]
        no_psv: bool,
        /// Drop the GPS and TPC terms.
        #[arg(long)]
        no_gps_tpc: bool,
    },
    /// Draw molecules from a model.
    Sample {
        #[arg(long)]
        model: PathBuf,
        #[arg(short = 'n', default_value_t = 10)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1.0)]
        temperature: f64,
        #[arg(long, default_value_t = 100)]
        max_len: usize,
        /// Print only the fraction of valid molecules.
        #[arg(long)]
        report_validity: bool,
    },
    /// Summarise a finished run directory.
    Eval {
        #[arg(long)]
        run: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Bin,
}

/// Exit 1 for rejected input or failed work, 2 for bad invocations.
struct Failure {
    code: u8,
    message: String,
}

fn fail(e: impl Display) -> Failure {
    Failure { code: 1, message: e.to_string() }
}

fn usage(e: impl Display) -> Failure {
    Failure { code: 2, message: e.to_string() }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global() {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            if !f.message.is_empty() {
                eprintln!("error: {}", f.message);
            }
            ExitCode::from(f.code)
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let vocab = match &cli.vocab {
        Some(p) => Vocabulary::load(p).map_err(usage)?,
        None => Vocabulary::default(),
    };
    match cli.command {
        Command::Validate { smiles, partial } => validate(&smiles, partial),
        Command::Table { smiles, out, format, min_eos_len, no_eos } => {
            table(&vocab, &smiles, out.as_deref(), format, min_eos_len, no_eos)
        }
        Command::Stats { corpus, model, n, seed, out, min_eos_len } => {
            stats(&vocab, corpus.as_deref(), model.as_deref(), n, seed, out.as_deref(), min_eos_len)
        }
        Command::Pretrain { out, corpus, config, seed, epochs, d_emb, d_hid, lr, validity_samples } => {
            let mut cfg: PretrainConfig = read_config(config.as_deref())?;
            set(&mut cfg.seed, seed);
            set(&mut cfg.epochs, epochs);
            set(&mut cfg.d_emb, d_emb);
            set(&mut cfg.d_hid, d_hid);
            set(&mut cfg.learning_rate, lr);
            let text = match corpus {
                Some(p) => fs::read_to_string(p).map_err(fail)?,
                None => BUNDLED_CORPUS.to_string(),
            };
            let policy = pretrain_model(&vocab, &text, &cfg)?;
            policy.save(&out).map_err(fail)?;
            let v = sample_validity(&policy, &vocab, validity_samples, 100, cfg.seed);
            println!("validity {v}");
            Ok(())
        }
        Command::Train {
            task,
            model,
            out,
            config,
            seed,
            epochs,
            episode_size,
            batch_size,
            oracle_cap,
            checkpoint_every,
            no_psv,
            no_gps_tpc,
        } => {
            let mut cfg: TrainConfig = read_config(config.as_deref())?;
            set(&mut cfg.seed, seed);
            set(&mut cfg.epochs, epochs);
            set(&mut cfg.episode_size, episode_size);
            set(&mut cfg.batch_size, batch_size);
            set(&mut cfg.oracle_call_cap, oracle_cap);
            set(&mut cfg.checkpoint_every, checkpoint_every);
            cfg.ablations.disable_psv_losses |= no_psv;
            cfg.ablations.disable_gps_tpc |= no_gps_tpc;
            cfg.validate().map_err(usage)?;
            let task: Task = task.parse().map_err(usage)?;
            let policy = match model {
                Some(p) => Policy::<f64>::load(p, &vocab).map_err(fail)?,
                None => {
                    let pcfg = PretrainConfig { seed: cfg.seed, ..PretrainConfig::default() };
                    pretrain_model(&vocab, BUNDLED_CORPUS, &pcfg)?
                }
            };
            train(cfg, vocab, task, policy, &out)
        }
        Command::Sample { model, n, seed, temperature, max_len, report_validity } => {
            let policy = Policy::<f64>::load(model, &vocab).map_err(fail)?;
            sample(&vocab, &policy, n, seed, temperature, max_len, report_validity)
        }
        Command::Eval { run } => eval(&run),
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn read_config<T: Default + serde::de::DeserializeOwned>(path: Option<&Path>) -> Result<T, Failure> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| usage(format!("{}: {e}", p.display())))?;
            toml::from_str(&text).map_err(|e| usage(format!("{}: {e}", p.display())))
        }
    }
}

fn validate(smiles: &str, partial: bool) -> Result<(), Failure> {
    let (state, prefix) = check_prefix(smiles).map_err(fail)?;
    let verdict = if partial && prefix == Verdict::ValidPrefix { prefix } else { state.finalize() };
    match verdict {
        Verdict::Invalid { reason, position } => {
            println!("{reason} {position}");
            Err(Failure { code: 1, message: String::new() })
        }
        v => {
            println!("{}", v.kind());
            Ok(())
        }
    }
}

fn table(
    vocab: &Vocabulary,
    smiles: &str,
    out: Option<&Path>,
    format: Format,
    min_eos_len: usize,
    no_eos: bool,
) -> Result<(), Failure> {
    let mut actions = vocab.encode(smiles).map_err(fail)?;
    if !no_eos {
        actions.push(vocab.eos_id());
    }
    let t = TableBuilder::new(vocab, min_eos_len).build(&actions).map_err(fail)?;
    let report = format!("index_invalid {}", t.index_invalid_signed());
    match (format, out) {
        (Format::Csv, None) => {
            print!("{}", t.to_csv(vocab));
            eprintln!("{report}");
        }
        (Format::Csv, Some(p)) => {
            fs::write(p, t.to_csv(vocab)).map_err(fail)?;
            println!("{report}");
        }
        (Format::Bin, Some(p)) => {
            let mut f = fs::File::create(p).map_err(fail)?;
            t.write_binary(&mut f).map_err(fail)?;
            println!("{report}");
        }
        (Format::Bin, None) => return Err(usage("--format bin needs --out")),
    }
    Ok(())
}

fn stats(
    vocab: &Vocabulary,
    corpus: Option<&Path>,
    model: Option<&Path>,
    n: Option<usize>,
    seed: u64,
    out: Option<&Path>,
    min_eos_len: usize,
) -> Result<(), Failure> {
    let sequences: Vec<Vec<usize>> = if let Some(m) = model {
        let policy = Policy::<f64>::load(m, vocab).map_err(fail)?;
        let n = n.unwrap_or(10_000);
        (0..n)
            .map(|i| policy.sample(100, 1.0, derive_seed(seed, 0, 0, i as u64)))
            .filter(|r| !r.truncated)
            .map(|r| r.actions)
            .collect()
    } else {
        let text = match corpus {
            Some(p) => fs::read_to_string(p).map_err(fail)?,
            None => BUNDLED_CORPUS.to_string(),
        };
        let all = load_corpus(&text, vocab).sequences;
        match n {
            Some(n) if !all.is_empty() => {
                (0..n).map(|i| all[(derive_seed(seed, 0, 0, i as u64) % all.len() as u64) as usize].clone()).collect()
            }
            _ => all,
        }
    };
    if sequences.is_empty() {
        return Err(fail("no molecules to analyse"));
    }
    let builder = TableBuilder::new(vocab, min_eos_len);
    let tables: Vec<PsvTable> = sequences.iter().map(|s| builder.build(s)).collect::<Result<_, _>>().map_err(fail)?;

    let mut histogram = String::from("valid_count,rows\n");
    for (k, c) in valid_set_histogram(&tables).iter().enumerate() {
        histogram.push_str(&format!("{k},{c}\n"));
    }
    let mut by_token: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (s, t) in sequences.iter().zip(&tables) {
        for r in 0..t.rows() {
            let before = if r == 0 { vocab.bos_id() } else { s[r - 1] };
            by_token.entry(before).or_default().push(t.row_count_ones(r));
        }
    }
    let mut quartiles = String::from("preceding_token,rows,min,q1,median,q3,max\n");
    for (tok, mut counts) in by_token {
        counts.sort_unstable();
        let q = |f: f64| counts[((counts.len() - 1) as f64 * f).round() as usize];
        quartiles.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            csv_field(vocab.symbol(tok)),
            counts.len(),
            q(0.0),
            q(0.25),
            q(0.5),
            q(0.75),
            q(1.0)
        ));
    }
    match out {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(fail)?;
            fs::write(dir.join("histogram.csv"), histogram).map_err(fail)?;
            fs::write(dir.join("by_token.csv"), quartiles).map_err(fail)?;
            println!("molecules {}", sequences.len());
        }
        None => print!("{histogram}"),
    }
    Ok(())
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn pretrain_model(vocab: &Vocabulary, text: &str, cfg: &PretrainConfig) -> Result<Policy<f64>, Failure> {
    let corpus = load_corpus(text, vocab);
    if corpus.skipped > 0 {
        eprintln!("skipped {} untokenizable lines", corpus.skipped);
    }
    let mut policy = Policy::new(vocab, cfg.d_emb, cfg.d_hid, cfg.seed);
    pretrain(&mut policy, &corpus, cfg, |epoch, nll| eprintln!("pretrain epoch {} nll {nll:.4}", epoch + 1))
        .map_err(fail)?;
    Ok(policy)
}

fn train(cfg: TrainConfig, vocab: Vocabulary, task: Task, policy: Policy<f64>, out: &Path) -> Result<(), Failure> {
    let mut trainer = Trainer::new(cfg, vocab, task, policy).map_err(usage)?;
    let summary = trainer.run(Some(out)).map_err(fail)?;
    let last = summary.reports.last();
    println!("run {}", out.display());
    println!("epochs {}", summary.reports.len());
    println!("oracle_calls {}", trainer.oracle_calls());
    println!("top10 {}", last.map_or(0.0, |r| r.top10));
    println!("auc_top10 {:.6}", summary.auc_top10);
    println!("stop {:?}", summary.stop);
    Ok(())
}

fn sample(
    vocab: &Vocabulary,
    policy: &Policy<f64>,
    n: usize,
    seed: u64,
    temperature: f64,
    max_len: usize,
    report_validity: bool,
) -> Result<(), Failure> {
    if report_validity && temperature == 1.0 {
        println!("validity {}", sample_validity(policy, vocab, n, max_len, seed));
        return Ok(());
    }
    let mut valid = 0;
    let stdout = std::io::stdout();
    let mut w = stdout.lock();
    for i in 0..n {
        let r = policy.sample(max_len, temperature, derive_seed(seed, 0, 0, i as u64));
        if r.truncated {
            continue;
        }
        let smiles = vocab.decode(&r.actions).map_err(fail)?;
        if !smiles.is_empty() && check_complete(&smiles).is_ok_and(|v| v == Verdict::ValidComplete) {
            valid += 1;
        }
        if !report_validity {
            writeln!(w, "{smiles}").map_err(fail)?;
        }
    }
    if report_validity {
        let v = if n == 0 { 0.0 } else { valid as f64 / n as f64 };
        writeln!(w, "validity {v}").map_err(fail)?;
    }
    Ok(())
}

fn eval(run: &Path) -> Result<(), Failure> {
    let rows = read_epochs_csv(run.join("epochs.csv")).map_err(fail)?;
    let cfg: TrainConfig = match fs::read_to_string(run.join("config.toml")) {
        Ok(text) => toml::from_str(&text).map_err(fail)?,
        Err(_) => TrainConfig::default(),
    };
    let points: Vec<(u64, f64)> = rows.iter().map(|r| (r.oracle_calls, r.top10)).collect();
    let last = rows.last();
    println!("epochs {}", rows.len());
    println!("oracle_calls {}", last.map_or(0, |r| r.oracle_calls));
    println!("top10 {}", last.map_or(0.0, |r| r.top10));
    println!("final_validity {}", last.map_or(0.0, |r| r.validity));
    println!("auc_top10 {:.6}", auc_top10(&points, cfg.oracle_call_cap));
    Ok(())
}
