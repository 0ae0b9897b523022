//! Operator surface: encode, decode, inspect, and bench subcommands over the
//! dual-branch codec. All runs are deterministic under --seed; reports and
//! tables are line-oriented text.

mod io;
mod model;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use drc_core::bench::{build_toy, pfr_bound_suite, rate_allocation_suite, rate_sweep_suite, tradeoff_suite};
use drc_core::bitstream::{read_stream, StreamHeader};
use drc_core::config::KeyValues;
use drc_core::diffusion::Condition;
use drc_core::error::Error;
use drc_core::explicit::TagPrompt;
use drc_core::pipeline::{decode, encode, PipelineConfig};

const EXIT_IO: u8 = 2;
const EXIT_CONFIG: u8 = 3;
const EXIT_CODEC: u8 = 4;

#[derive(Parser)]
#[command(name = "drc", version, about = "dual-branch latent codec")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonOpts {
    /// key=value config file (model, schedule, pipeline knobs)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Vocabulary file: newline-delimited tags, order-significant
    #[arg(long)]
    vocab: PathBuf,
    /// Worker threads (default: all cores)
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args, Clone, Default)]
struct PipelineFlags {
    /// Deterministic run seed
    #[arg(long)]
    seed: Option<u64>,
    /// Coded diffusion steps T_E
    #[arg(long)]
    te: Option<u16>,
    /// Distortion-perception knob in [0, 1]
    #[arg(long)]
    tau: Option<f64>,
    /// Tile size in latent cells
    #[arg(long)]
    tile: Option<u16>,
    /// Tile overlap in latent cells
    #[arg(long)]
    overlap: Option<u16>,
    /// Per-step KL skip threshold in bits
    #[arg(long)]
    skip_threshold: Option<f64>,
    /// Chunk KL target in bits
    #[arg(long)]
    kl_target: Option<f64>,
    /// Hint quantization step
    #[arg(long)]
    latent_step: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Encode a grid (binary PGM or raw f64) into a codec stream
    Encode {
        #[command(flatten)]
        common: CommonOpts,
        #[command(flatten)]
        flags: PipelineFlags,
        /// Tags file: one tag per line, optional `row col rows cols` region
        #[arg(long)]
        tags: Option<PathBuf>,
        input: PathBuf,
        output: PathBuf,
    },
    /// Decode a codec stream back to a grid
    Decode {
        #[command(flatten)]
        common: CommonOpts,
        input: PathBuf,
        output: PathBuf,
    },
    /// Break a stream down into sections and header fields
    Inspect {
        /// Vocabulary file, required to decode the tag sections
        #[arg(long)]
        vocab: Option<PathBuf>,
        input: PathBuf,
    },
    /// Deterministic measurement suites emitting delimited tables
    Bench {
        #[command(flatten)]
        common: CommonOpts,
        #[command(flatten)]
        flags: PipelineFlags,
        /// pfr-bound | tradeoff | rate-sweep | rate-allocation
        suite: String,
        /// Batch size for codec suites
        #[arg(long, default_value_t = 100)]
        samples: usize,
        /// Trials per point for the pfr-bound suite
        #[arg(long, default_value_t = 2000)]
        trials: u64,
    },
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Io(_) => EXIT_IO,
        Error::Config(_) => EXIT_CONFIG,
        _ => EXIT_CODEC,
    }
}

fn load_kv(path: &Option<PathBuf>) -> Result<KeyValues, Error> {
    match path {
        None => Ok(KeyValues::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| Error::Config(format!("cannot read config {}: {e}", p.display())))?;
            KeyValues::parse(&text)
        }
    }
}

fn resolve_pipeline(kv: &KeyValues, flags: &PipelineFlags) -> Result<PipelineConfig, Error> {
    let mut cfg = kv.apply_pipeline(&PipelineConfig::default())?;
    if let Some(v) = flags.seed {
        cfg.seed = v;
    }
    if let Some(v) = flags.te {
        cfg.t_e = v;
    }
    if let Some(v) = flags.tau {
        cfg.tau = v;
    }
    if let Some(v) = flags.tile {
        cfg.tile = v;
    }
    if let Some(v) = flags.overlap {
        cfg.overlap = v;
    }
    if let Some(v) = flags.skip_threshold {
        cfg.skip_threshold_bits = v;
    }
    if let Some(v) = flags.kl_target {
        cfg.kl_target_bits = v;
    }
    if let Some(v) = flags.latent_step {
        cfg.latent_step = v;
    }
    Ok(cfg)
}

fn init_threads(threads: Option<usize>) {
    if let Some(n) = threads {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Encode { common, flags, tags, input, output } => {
            init_threads(common.threads);
            let kv = load_kv(&common.config)?;
            let cfg = resolve_pipeline(&kv, &flags)?;
            let x = io::read_grid(&input)?;
            let built = model::build_context(&kv, &common.vocab, Some(x.shape()))?;
            let cond = match tags {
                None => Condition::default(),
                Some(path) => {
                    let text = std::fs::read_to_string(&path).map_err(|e| {
                        Error::Config(format!("cannot read tags file {}: {e}", path.display()))
                    })?;
                    let (tags, regions) = model::parse_tags(&text, &built.ctx.vocab)?;
                    Condition { tags, regions, latent_hint: None, cells: None }
                }
            };
            let (bytes, report) = encode(&x, &cond, &cfg, &built.ctx)?;
            std::fs::write(&output, &bytes)?;
            print!("{}", KeyValues::echo_pipeline(&cfg));
            print!("{}", report.to_kv());
            println!("stream_bytes={}", bytes.len());
            Ok(())
        }
        Command::Decode { common, input, output } => {
            init_threads(common.threads);
            let kv = load_kv(&common.config)?;
            let bytes = std::fs::read(&input)?;
            // Latent geometry comes from the stream header; the context must
            // be built to match it.
            let sections = read_stream(&bytes)?;
            let header = StreamHeader::read(&sections[0])?;
            let mut kv = kv;
            if kv.get("model.latent_rows").is_none() {
                kv.set("model.latent_rows", header.shape.0.to_string());
                kv.set("model.latent_cols", header.shape.1.to_string());
            }
            let built = model::build_context(&kv, &common.vocab, None)?;
            let (x_hat, report) = decode(&bytes, &built.ctx)?;
            io::write_grid(&output, &x_hat)?;
            println!("chain_hash={:#018x}", report.chain_hash);
            println!("trailer_verified={}", report.trailer_hash.is_some());
            println!("t={} t_e={} seed={}", report.header.t, report.header.t_e, report.header.seed);
            println!("prompts={}", report.prompts.len());
            Ok(())
        }
        Command::Inspect { vocab, input } => {
            let bytes = std::fs::read(&input)?;
            inspect(&bytes, vocab.as_deref())
        }
        Command::Bench { common, flags, suite, samples, trials } => {
            init_threads(common.threads);
            let kv = load_kv(&common.config)?;
            let cfg = resolve_pipeline(&kv, &flags)?;
            bench(&suite, samples, trials, &cfg, &kv)
        }
    }
}

fn inspect(bytes: &[u8], vocab: Option<&std::path::Path>) -> Result<(), Error> {
    let sections = read_stream(bytes)?;
    let total_bits = bytes.len() as u64 * 8;
    println!("file_bits={total_bits}");
    println!("preamble_bits=40");
    let mut accounted = 40u64;
    for s in &sections {
        let framed = 40 + s.payload.len() as u64 * 8;
        let padding = s.payload.len() as u64 * 8 - s.bit_len;
        accounted += framed;
        println!(
            "section.{:?}: payload_bits={} padding_bits={padding} frame_bits=40 total_bits={framed}",
            s.tag, s.bit_len
        );
    }
    println!("sum_bits={accounted}");
    if accounted != total_bits {
        return Err(Error::Malformed {
            offset: accounted,
            reason: format!("sections account for {accounted} bits of {total_bits}"),
        });
    }
    let header = StreamHeader::read(&sections[0])?;
    println!(
        "header: schedule={} t={} t_e={} tau={:.4} seed={} tile={} overlap={} tag_cap={} sigma={:.4} kl_target={:.4} skip_threshold={:.4} vocab_hash={:#018x} shape={}x{} skipped_steps={}",
        header.schedule_index,
        header.t,
        header.t_e,
        header.tau(),
        header.seed,
        header.tile,
        header.overlap,
        header.tag_cap,
        header.sigma_fraction(),
        header.kl_target_bits(),
        header.skip_threshold_bits(),
        header.vocab_hash,
        header.shape.0,
        header.shape.1,
        header.skipped.iter().filter(|&&s| s).count(),
    );
    println!("note: latent section carries a block-averaged stand-in for a learned compact latent");
    if let Some(vocab_path) = vocab {
        let text = std::fs::read_to_string(vocab_path).map_err(|e| {
            Error::Config(format!("cannot read vocabulary file {}: {e}", vocab_path.display()))
        })?;
        let vocab = drc_core::explicit::TagVocabulary::from_text(&text)?;
        if vocab.hash() != header.vocab_hash {
            return Err(Error::VocabHashMismatch { stream: header.vocab_hash, local: vocab.hash() });
        }
        let mut reader = sections[1].reader()?;
        let mut tile = 0usize;
        while reader.remaining() >= 8 {
            let prompt: TagPrompt = drc_core::explicit::tag_decode(&mut reader, &vocab)?;
            let names: Vec<&str> =
                prompt.indices.iter().map(|&i| vocab.entry(i).unwrap_or("?")).collect();
            let dups = prompt.duplicate_count();
            let flag = if dups > 0 { format!(" (duplicates={dups})") } else { String::new() };
            println!("prompt.{tile}: k={} tags={}{flag}", prompt.indices.len(), names.join(","));
            tile += 1;
        }
    }
    Ok(())
}

fn bench(suite: &str, samples: usize, trials: u64, cfg: &PipelineConfig, kv: &KeyValues) -> Result<(), Error> {
    let latent = (
        kv.get("model.latent_rows").map_or(Ok(4), |v| v.parse()).map_err(|_| Error::Config("bad model.latent_rows".into()))?,
        kv.get("model.latent_cols").map_or(Ok(4), |v| v.parse()).map_err(|_| Error::Config("bad model.latent_cols".into()))?,
    );
    let components: usize = kv
        .get("model.components")
        .map_or(Ok(4), |v| v.parse())
        .map_err(|_| Error::Config("bad model.components".into()))?;
    let model_seed: u64 = kv
        .get("model.seed")
        .map_or(Ok(17), |v| v.parse())
        .map_err(|_| Error::Config("bad model.seed".into()))?;
    match suite {
        "pfr-bound" => {
            let rows = pfr_bound_suite(&[1.0, 2.0, 4.0, 8.0, 16.0], trials, cfg.seed)?;
            println!("kl_bits\ttrials\tmean_bits\tci95\tbound_bits\tmean_candidates");
            for r in rows {
                println!(
                    "{:.4}\t{}\t{:.4}\t{:.4}\t{:.4}\t{:.1}",
                    r.kl_bits, r.trials, r.mean_bits, r.ci95_bits, r.bound_bits, r.mean_candidates
                );
            }
            Ok(())
        }
        "tradeoff" => {
            let toy = build_toy(latent, components, model_seed)?;
            let rows = tradeoff_suite(&toy, &[0.0, 0.25, 0.5, 0.75, 1.0], samples, cfg)?;
            println!("tau\tmean_bits\tmean_mse\tse_mse");
            for r in rows {
                println!("{:.2}\t{:.1}\t{:.6}\t{:.6}", r.tau, r.mean_bits, r.mean_mse, r.se_mse);
            }
            Ok(())
        }
        "rate-sweep" => {
            let toy = build_toy(latent, components, model_seed)?;
            let t = toy.ctx.schedule.len() as u16;
            let te = [0u16, t / 8, t / 4, t / 2, t].to_vec();
            let rows = rate_sweep_suite(&toy, &te, samples, cfg)?;
            println!("t_e\tmean_bits\tmean_implicit_bits\tmean_mse\tse_mse");
            for r in rows {
                println!(
                    "{}\t{:.1}\t{:.1}\t{:.6}\t{:.6}",
                    r.t_e, r.mean_bits, r.mean_implicit_bits, r.mean_mse, r.se_mse
                );
            }
            Ok(())
        }
        "rate-allocation" => {
            let toy = build_toy(latent, components, model_seed)?;
            // Sweep explicit share: finer hints (smaller step) against fewer
            // coded steps, and vice versa.
            let points =
                [(2.0f64, 24u16), (1.0, 20), (0.5, 16), (0.25, 12), (0.125, 8)];
            let rows = rate_allocation_suite(&toy, &points, samples, cfg)?;
            println!("latent_step\tt_e\texplicit_bits\timplicit_bits\ttotal_bits\tmean_mse");
            for r in rows {
                println!(
                    "{}\t{}\t{:.1}\t{:.1}\t{:.1}\t{:.6}",
                    r.latent_step,
                    r.t_e,
                    r.mean_explicit_bits,
                    r.mean_implicit_bits,
                    r.mean_total_bits,
                    r.mean_mse
                );
            }
            Ok(())
        }
        other => Err(Error::Config(format!("unknown bench suite {other:?}"))),
    }
}
