use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use rand::Rng;
use serde_json::json;

use cfe_core::adaptation::adapt;
use cfe_core::attack::{attack_frame, score_outcome};
use cfe_core::cipher::{decrypt, encrypt, pixel_shuffle, pixel_unshuffle};
use cfe_core::codec::{decode_intra, encode_intra, external_codec, from_planar, parse_template, rate_search, to_planar, CodedStream};
use cfe_core::container::{encode_ppm, export_ppm_sequence, import_ppm_sequence, load_cfvr, save_cfvr};
use cfe_core::geometry::{resize_bicubic, sample_frames_uniform, BlockGrid, Clip, DEFAULT_SB};
use cfe_core::harness::{report_render, rows_to_csv, rows_to_json, run_grid, GridConfig};
use cfe_core::keyschedule::{expand, KeyFile, KeyMaterial, Mode, TransformPlan};
use cfe_core::metrics::psnr;
use cfe_core::model::{argmax, forward, init_weights, VtConfig};
use cfe_core::synth::synthetic_clip;
use cfe_core::weights::{load_cfew, save_cfew};

mod error;

use error::CliError;

#[derive(Parser)]
#[command(name = "cfevid", version, about = "Compression-friendly block-wise video encryption toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Baseline {
    PixelShuffle,
}

#[derive(Clone, Copy, ValueEnum)]
enum CodecChoice {
    Toy,
    External,
}

#[derive(Subcommand)]
enum Command {
    /// Write a key file; seeds come from OS entropy unless --seed is given.
    Keygen {
        #[arg(long, value_parser = parse_mode)]
        mode: Mode,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 16)]
        mb: usize,
        #[arg(long, default_value_t = DEFAULT_SB)]
        sb: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Encrypt a .cfvr clip.
    Encrypt {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        key: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Use the pixel-shuffle baseline instead (seeded by the key's k_st).
        #[arg(long, value_enum)]
        baseline: Option<Baseline>,
    },
    /// Decrypt a .cfvr clip.
    Decrypt {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        key: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum)]
        baseline: Option<Baseline>,
    },
    /// Create seeded random model weights.
    InitModel {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 8)]
        frames: usize,
        #[arg(long, default_value_t = 64)]
        height: usize,
        #[arg(long, default_value_t = 64)]
        width: usize,
        #[arg(long, default_value_t = 10)]
        classes: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Adapt model weights to a key so the model consumes ciphertext.
    Adapt {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        key: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the model on a clip.
    Infer {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Compress with the toy codec (.cfcs) or round-trip through an external codec (.cfvr).
    Compress {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long = "q", conflicts_with = "target_bpp", required_unless_present = "target_bpp")]
        quality: Option<u32>,
        #[arg(long)]
        target_bpp: Option<f64>,
        #[arg(long, value_enum, default_value = "toy")]
        codec: CodecChoice,
        /// Command template for --codec external.
        #[arg(long)]
        cmd: Option<String>,
        #[arg(long, default_value = "MJPG")]
        fourcc: String,
    },
    /// Decode a .cfcs stream to a .cfvr clip.
    Decompress {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// PSNR between two clips.
    Psnr {
        a: PathBuf,
        b: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Bits per pixel of a .cfcs stream.
    Bpp {
        #[arg(long = "in")]
        input: PathBuf,
    },
    /// Ciphertext-only jigsaw attack on an encrypted clip.
    Attack {
        #[arg(long = "in")]
        input: PathBuf,
        /// MB size in pixels.
        #[arg(long, default_value_t = 16)]
        grid: usize,
        #[arg(long, default_value_t = DEFAULT_SB)]
        sb: usize,
        #[arg(long)]
        report: PathBuf,
        /// Directory for reconstructed frames as PPM.
        #[arg(long)]
        dump: Option<PathBuf>,
        /// Key used only to score the reconstruction.
        #[arg(long)]
        key: Option<PathBuf>,
        /// Attack at most this many frames.
        #[arg(long)]
        frames: Option<usize>,
    },
    /// Run an experiment grid from a TOML config.
    Grid {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        csv: PathBuf,
        #[arg(long)]
        json: Option<PathBuf>,
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Summarize a grid CSV as a markdown table.
    Report {
        #[arg(long)]
        csv: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a synthetic natural-looking clip.
    Synth {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 8)]
        frames: usize,
        #[arg(long, default_value_t = 64)]
        height: usize,
        #[arg(long, default_value_t = 64)]
        width: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pack a directory of PPM frames into a .cfvr clip.
    ImportPpm {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Unpack a .cfvr clip into PPM frames.
    ExportPpm {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        dir: PathBuf,
    },
    /// Sample frames uniformly, then resize bicubically.
    Prep {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 8)]
        frames: usize,
        #[arg(long, default_value_t = 64)]
        height: usize,
        #[arg(long, default_value_t = 64)]
        width: usize,
    },
    /// Toy codec as a planar-RGB filter (stdin to stdout), for external-codec templates.
    PipeCodec {
        #[arg(long = "q")]
        quality: u32,
        #[arg(long)]
        width: usize,
        #[arg(long)]
        height: usize,
        #[arg(long)]
        frames: usize,
        /// Also write the .cfcs stream here.
        #[arg(long)]
        bitstream: Option<PathBuf>,
    },
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    s.parse::<Mode>().map_err(|e| e.to_string())
}

fn load_clip(path: &Path) -> Result<Clip, CliError> {
    load_cfvr(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn save_clip(path: &Path, clip: &Clip) -> Result<(), CliError> {
    save_cfvr(path, clip).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn load_key(path: &Path) -> Result<KeyFile, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    KeyFile::from_json(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn plan_for(key: &KeyFile, clip: &Clip) -> Result<TransformPlan, CliError> {
    let grid = key.grid_for(clip.height(), clip.width()).map_err(CliError::data)?;
    Ok(expand(&key.keys().map_err(CliError::data)?, &grid))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Keygen { mode, seed, mb, sb, out } => {
            let (k_st, k_ms) = match seed {
                Some(s) => {
                    // two independent words from one user seed
                    let mut sm = cfe_core::keyschedule::SplitMix64::new(s);
                    (sm.next_u64(), sm.next_u64())
                }
                None => {
                    let mut rng = rand::rng();
                    (rng.random(), rng.random())
                }
            };
            BlockGrid::new(mb, mb, sb, sb, 1, 1).map_err(CliError::usage)?;
            let kf = KeyFile::new(&KeyMaterial::new(mode, k_st, k_ms), mb, sb);
            write_text(&out, &kf.to_json())
        }
        Command::Encrypt {
            input,
            key,
            out,
            baseline,
        } => {
            let clip = load_clip(&input)?;
            let kf = load_key(&key)?;
            let enc = match baseline {
                Some(Baseline::PixelShuffle) => pixel_shuffle(&clip, kf.keys().map_err(CliError::data)?.k_st),
                None => encrypt(&clip, &plan_for(&kf, &clip)?).map_err(CliError::data)?,
            };
            save_clip(&out, &enc)
        }
        Command::Decrypt {
            input,
            key,
            out,
            baseline,
        } => {
            let clip = load_clip(&input)?;
            let kf = load_key(&key)?;
            let dec = match baseline {
                Some(Baseline::PixelShuffle) => pixel_unshuffle(&clip, kf.keys().map_err(CliError::data)?.k_st),
                None => decrypt(&clip, &plan_for(&kf, &clip)?).map_err(CliError::data)?,
            };
            save_clip(&out, &dec)
        }
        Command::InitModel {
            seed,
            frames,
            height,
            width,
            classes,
            out,
        } => {
            let cfg = VtConfig {
                frames,
                height,
                width,
                n_classes: classes,
                seed,
                ..VtConfig::default()
            };
            let w = init_weights(&cfg).map_err(CliError::usage)?;
            save_cfew(&out, &w).map_err(CliError::data)
        }
        Command::Adapt { weights, key, out } => {
            let w = load_cfew(&weights).map_err(CliError::data)?;
            let kf = load_key(&key)?;
            let grid = kf.grid_for(w.config.height, w.config.width).map_err(CliError::data)?;
            let plan = expand(&kf.keys().map_err(CliError::data)?, &grid);
            let a = adapt(&w, &plan).map_err(CliError::data)?;
            save_cfew(&out, &a).map_err(CliError::data)
        }
        Command::Infer { weights, input, json } => {
            let w = load_cfew(&weights).map_err(CliError::data)?;
            let clip = load_clip(&input)?;
            let logits = forward(&clip, &w).map_err(CliError::data)?;
            let class = argmax(&logits);
            if json {
                println!("{}", json!({ "logits": logits, "argmax": class }));
            } else {
                let parts: Vec<String> = logits.iter().map(|v| format!("{v:.6}")).collect();
                println!("argmax {class}\nlogits {}", parts.join(" "));
            }
            Ok(())
        }
        Command::Compress {
            input,
            out,
            quality,
            target_bpp,
            codec,
            cmd,
            fourcc,
        } => {
            let clip = load_clip(&input)?;
            let quality = match (quality, target_bpp) {
                (Some(q), _) => q,
                (None, Some(t)) => {
                    if matches!(codec, CodecChoice::External) {
                        return Err(CliError::Usage("--target-bpp needs the toy codec".into()));
                    }
                    let choice = rate_search(&clip, t).map_err(CliError::codec)?;
                    if choice.out_of_tolerance {
                        eprintln!("warning: {t} bpp not reachable, using quality {} ({:.4} bpp)", choice.quality, choice.bpp);
                    }
                    choice.quality
                }
                (None, None) => unreachable!("clap requires one of --q / --target-bpp"),
            };
            match codec {
                CodecChoice::Toy => {
                    let s = encode_intra(&clip, quality).map_err(CliError::codec)?;
                    s.save(&out).map_err(CliError::codec)?;
                    println!("quality {quality} bpp {:.6}", s.bpp());
                }
                CodecChoice::External => {
                    let template = cmd.ok_or_else(|| CliError::Usage("--codec external needs --cmd".into()))?;
                    let argv: Vec<String> = parse_template(&template)
                        .map_err(CliError::codec)?
                        .into_iter()
                        .map(|a| a.replace("{quality}", &quality.to_string()))
                        .collect();
                    let res = external_codec(&clip, &argv, &fourcc).map_err(CliError::codec)?;
                    save_clip(&out, &res.clip)?;
                    match res.bpp {
                        Some(b) => println!("quality {quality} bpp {b:.6}"),
                        None => println!("quality {quality} bpp unknown (no bitstream written)"),
                    }
                    println!("command {}", res.command.join(" "));
                }
            }
            Ok(())
        }
        Command::Decompress { input, out } => {
            let s = CodedStream::load(&input).map_err(CliError::codec)?;
            save_clip(&out, &decode_intra(&s).map_err(CliError::codec)?)
        }
        Command::Psnr { a, b, json } => {
            let p = psnr(&load_clip(&a)?, &load_clip(&b)?).map_err(CliError::data)?;
            let text = if p.is_infinite() { "inf".to_string() } else { format!("{p:.4}") };
            if json {
                println!("{}", json!({ "psnr": text }));
            } else {
                println!("{text}");
            }
            Ok(())
        }
        Command::Bpp { input } => {
            let s = CodedStream::load(&input).map_err(CliError::codec)?;
            println!("{:.6}", s.bpp());
            Ok(())
        }
        Command::Attack {
            input,
            grid,
            sb,
            report,
            dump,
            key,
            frames,
        } => {
            let clip = load_clip(&input)?;
            let g = BlockGrid::for_frame(clip.height(), clip.width(), grid, sb).map_err(CliError::data)?;
            let plan = match &key {
                Some(k) => {
                    let kf = load_key(k)?;
                    Some(plan_for(&kf, &clip)?)
                }
                None => None,
            };
            if let Some(dir) = &dump {
                std::fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?;
            }
            let n = frames.unwrap_or(clip.frames()).min(clip.frames());
            let mut per_frame = Vec::new();
            let mut scores = Vec::new();
            for f in 0..n {
                let outcome = attack_frame(clip.frame(f), &g);
                let score = plan.as_ref().map(|p| score_outcome(&outcome, p));
                scores.extend(score);
                if let Some(dir) = &dump {
                    let path = dir.join(format!("recon_{f:05}.ppm"));
                    std::fs::write(&path, encode_ppm(clip.height(), clip.width(), &outcome.reconstructed))
                        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
                }
                per_frame.push(json!({
                    "frame": f,
                    "placement": outcome.placement,
                    "border_cost": outcome.estimate.cost,
                    "neighbor_accuracy": score,
                }));
            }
            let mean = (!scores.is_empty()).then(|| scores.iter().sum::<f64>() / scores.len() as f64);
            let doc = json!({
                "input": input.display().to_string(),
                "mb": grid,
                "grid_rows": g.grid_rows,
                "grid_cols": g.grid_cols,
                "chance_level": cfe_core::attack::chance_level(g.grid_rows, g.grid_cols),
                "mean_neighbor_accuracy": mean,
                "frames": per_frame,
            });
            write_text(&report, &serde_json::to_string_pretty(&doc).expect("json"))?;
            if let Some(m) = mean {
                println!("mean neighbor accuracy {m:.4}");
            }
            Ok(())
        }
        Command::Grid { config, csv, json, jobs } => {
            let mut cfg = GridConfig::load(&config).map_err(CliError::usage)?;
            if let Some(j) = jobs {
                cfg.jobs = j;
            }
            let rows = run_grid(&cfg).map_err(CliError::usage)?;
            write_text(&csv, &rows_to_csv(&rows).map_err(CliError::data)?)?;
            if let Some(j) = json {
                write_text(&j, &rows_to_json(&rows))?;
            }
            let failed = rows.iter().filter(|r| !r.error.is_empty()).count();
            if failed > 0 {
                eprintln!("{failed} of {} cells reported errors", rows.len());
            }
            Ok(())
        }
        Command::Report { csv, out } => {
            let text = std::fs::read_to_string(&csv).map_err(|e| CliError::Data(format!("{}: {e}", csv.display())))?;
            let table = report_render(&text).map_err(CliError::data)?;
            match out {
                Some(p) => write_text(&p, &table),
                None => {
                    print!("{table}");
                    Ok(())
                }
            }
        }
        Command::Synth {
            seed,
            frames,
            height,
            width,
            out,
        } => {
            if frames == 0 || height == 0 || width == 0 {
                return Err(CliError::Usage("clip dimensions must be positive".into()));
            }
            save_clip(&out, &synthetic_clip(seed, frames, height, width))
        }
        Command::ImportPpm { dir, out } => {
            let clip = import_ppm_sequence(&dir).map_err(CliError::data)?;
            save_clip(&out, &clip)
        }
        Command::ExportPpm { input, dir } => {
            let clip = load_clip(&input)?;
            export_ppm_sequence(&dir, &clip).map_err(CliError::data)?;
            Ok(())
        }
        Command::Prep {
            input,
            out,
            frames,
            height,
            width,
        } => {
            let clip = load_clip(&input)?;
            let sampled = sample_frames_uniform(&clip, frames).map_err(CliError::data)?;
            save_clip(&out, &resize_bicubic(&sampled, height, width).map_err(CliError::data)?)
        }
        Command::PipeCodec {
            quality,
            width,
            height,
            frames,
            bitstream,
        } => {
            let mut raw = Vec::new();
            std::io::stdin()
                .read_to_end(&mut raw)
                .map_err(|e| CliError::Data(format!("stdin: {e}")))?;
            let clip = from_planar(frames, height, width, &raw).map_err(CliError::data)?;
            let s = encode_intra(&clip, quality).map_err(CliError::codec)?;
            if let Some(p) = bitstream {
                s.save(&p).map_err(CliError::codec)?;
            }
            let dec = decode_intra(&s).map_err(CliError::codec)?;
            std::io::stdout()
                .write_all(&to_planar(&dec))
                .map_err(|e| CliError::Data(format!("stdout: {e}")))
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
