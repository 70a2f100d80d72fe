mod args;
mod failure;

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use chrono::{DateTime, Utc};
use clap::Parser;
use nalgebra::Vector3;
use serde_json::json;

use robofall_core::falldet::{
    mlp_forward, mlp_train, read_detections_file, rules_fall, synthetic_dataset, PoseDetection,
};
use robofall_core::kinematics::{forward_kinematics, inverse_kinematics, BodyVelocity, WheelSpeeds};
use robofall_core::pipeline::{emit_report, format_timestamp, run_pipeline, PipelineInput, Sink};
use robofall_core::projective::{pitch_corruption_homography, sample_homographies, warp_image};
use robofall_core::simulator::{compare_controllers, simulate_circle, ControllerKind, TrajectoryLog};
use robofall_core::sysid::{fit, pwm_for_speed, synthetic_samples, write_samples};
use robofall_core::{Config, Homography, Mlp, MotorParams, RasterImage};

use args::{
    Cli, Command, FalldetCmd, Format, HomographyCmd, KinematicsCmd, ParamsArg, PipelineCmd, SimulateCmd, SysidCmd,
};
use failure::{Failure, EXIT_CONFIG, EXIT_DATA, EXIT_USAGE};

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("robofall: {f}");
            ExitCode::from(f.code)
        }
    }
}

struct Ctx<'a> {
    cli: &'a Cli,
    config: Config,
}

impl Ctx<'_> {
    /// Writes the primary result to `--output` or stdout.
    fn emit(&self, text: &str) -> Result<(), Failure> {
        match &self.cli.output {
            Some(path) => std::fs::write(path, text).map_err(|e| Failure::io(path.display(), e)),
            None => {
                let mut out = std::io::stdout().lock();
                out.write_all(text.as_bytes())
                    .and_then(|_| out.flush())
                    .map_err(|e| Failure::io("stdout", e))
            }
        }
    }

    fn required_output(&self) -> Result<&Path, Failure> {
        self.cli
            .output
            .as_deref()
            .ok_or_else(|| Failure::new(EXIT_USAGE, "this command needs --output"))
    }

    fn motor_params(&self, arg: &ParamsArg) -> Result<MotorParams, Failure> {
        match arg.params.as_ref().or(self.config.simulation.motor_params.as_ref()) {
            Some(path) => Ok(MotorParams::load(path).map_err(|e| Failure::from(e).context(path))?),
            None => Ok(MotorParams::reference()),
        }
    }
}

fn run(cli: &Cli) -> Result<u8, Failure> {
    let config = match &cli.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    let ctx = Ctx { cli, config };
    match &cli.command {
        Command::Homography(cmd) => homography(&ctx, cmd).map(|_| 0),
        Command::Kinematics(cmd) => kinematics(&ctx, cmd).map(|_| 0),
        Command::Sysid(cmd) => sysid(&ctx, cmd).map(|_| 0),
        Command::Falldet(cmd) => falldet(&ctx, cmd).map(|_| 0),
        Command::Simulate(cmd) => simulate(&ctx, cmd).map(|_| 0),
        Command::Pipeline(cmd) => pipeline(&ctx, cmd),
    }
}

fn matrix_json(h: &Homography) -> serde_json::Value {
    json!(h.to_rows())
}

const MATRIX_HEADER: &str = "h00,h01,h02,h10,h11,h12,h20,h21,h22";

fn matrix_csv(h: &Homography) -> String {
    h.to_rows()
        .iter()
        .flatten()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

fn single_homography(ctx: &Ctx, h: &Homography, extra: serde_json::Value) -> Result<(), Failure> {
    let text = match ctx.cli.format {
        None => h.to_string(),
        Some(Format::Json) => {
            let mut v = extra;
            v["matrix"] = matrix_json(h);
            format!("{v}\n")
        }
        Some(Format::Csv) => format!("{MATRIX_HEADER}\n{}\n", matrix_csv(h)),
    };
    ctx.emit(&text)
}

fn homography(ctx: &Ctx, cmd: &HomographyCmd) -> Result<(), Failure> {
    let cfg = &ctx.config;
    let cameras = || -> Result<_, Failure> { Ok((cfg.source.camera()?, cfg.target.camera()?)) };
    match cmd {
        HomographyCmd::Compute { h, normal } => {
            let (src, dst) = cameras()?;
            let n = match normal {
                Some(v) => Vector3::from_column_slice(v),
                None => cfg.pipeline.plane_normal.into(),
            };
            let (_, hom) = sample_homographies(&src, &dst, &n, *h, *h, 1)?.remove(0);
            single_homography(ctx, &hom, json!({ "h": h }))
        }
        HomographyCmd::Sample { h_min, h_max, n } => {
            let (src, dst) = cameras()?;
            let p = &cfg.pipeline;
            let samples = sample_homographies(
                &src,
                &dst,
                &p.plane_normal.into(),
                h_min.unwrap_or(p.h_min),
                h_max.unwrap_or(p.h_max),
                n.unwrap_or(p.candidates),
            )?;
            let text = match ctx.cli.format {
                Some(Format::Json) => {
                    let items: Vec<_> = samples
                        .iter()
                        .map(|(h, hom)| json!({ "h": h, "matrix": matrix_json(hom) }))
                        .collect();
                    format!("{}\n", serde_json::Value::from(items))
                }
                _ => {
                    let mut s = format!("h,{MATRIX_HEADER}\n");
                    for (h, hom) in &samples {
                        let _ = writeln!(s, "{h},{}", matrix_csv(hom));
                    }
                    s
                }
            };
            ctx.emit(&text)
        }
        HomographyCmd::Warp { input, homography, h } => {
            let out = ctx.required_output()?;
            let hom = match (homography, h) {
                (Some(path), _) => {
                    let text = std::fs::read_to_string(path).map_err(|e| Failure::io(path.display(), e))?;
                    text.parse::<Homography>().map_err(|e| Failure::from(e).context(path))?
                }
                (None, Some(h)) => {
                    let (src, dst) = cameras()?;
                    sample_homographies(&src, &dst, &cfg.pipeline.plane_normal.into(), *h, *h, 1)?
                        .remove(0)
                        .1
                }
                (None, None) => return Err(Failure::new(EXIT_USAGE, "warp needs --homography or --h")),
            };
            let img = RasterImage::load(input).map_err(|e| Failure::from(e).context(input))?;
            warp_image(&img, &hom)?
                .save(out)
                .map_err(|e| Failure::from(e).context(out))?;
            Ok(())
        }
        HomographyCmd::Pitch { theta, distance } => {
            let hom = pitch_corruption_homography(cfg.source.camera()?.k(), *theta, *distance)?;
            single_homography(
                ctx,
                &hom,
                json!({ "theta_deg": theta, "distance": distance, "deviation": hom.deviation_from_identity() }),
            )
        }
    }
}

fn kinematics(ctx: &Ctx, cmd: &KinematicsCmd) -> Result<(), Failure> {
    let g = ctx.config.chassis.geometry()?;
    let (header, values, value) = match *cmd {
        KinematicsCmd::Inverse { vx, vy, wz } => {
            let w = inverse_kinematics(&BodyVelocity::new(vx, vy, wz), &g);
            ("fl,fr,rl,rr", w.to_array().to_vec(), json!(w))
        }
        KinematicsCmd::Forward { fl, fr, rl, rr } => {
            let v = forward_kinematics(&WheelSpeeds::new(fl, fr, rl, rr), &g);
            ("vx,vy,wz", vec![v.vx, v.vy, v.wz], json!(v))
        }
    };
    let text = match ctx.cli.format {
        Some(Format::Csv) => format!("{header}\n{}\n", join(&values)),
        _ => format!("{value}\n"),
    };
    ctx.emit(&text)
}

fn join(values: &[f64]) -> String {
    values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

fn sysid(ctx: &Ctx, cmd: &SysidCmd) -> Result<(), Failure> {
    match cmd {
        SysidCmd::Fit { input } => {
            let file = std::fs::File::open(input).map_err(|e| Failure::io(input.display(), e))?;
            let samples = robofall_core::sysid::read_samples(file).map_err(|e| Failure::from(e).context(input))?;
            let report = fit(&samples)?;
            for issue in &report.skipped {
                eprintln!("robofall: skipped {issue}");
            }
            let text = match ctx.cli.format {
                None => report.params.to_string(),
                Some(Format::Json) => {
                    let groups: Vec<_> = report
                        .groups
                        .iter()
                        .map(|g| {
                            json!({
                                "wheel": g.wheel.to_string(),
                                "direction": g.direction.to_string(),
                                "b": g.model.b,
                                "c": g.model.c,
                                "residual_rms": g.residual_rms,
                                "samples": g.samples,
                            })
                        })
                        .collect();
                    format!("{}\n", json!({ "groups": groups }))
                }
                Some(Format::Csv) => {
                    let mut s = String::from("wheel,direction,b,c,residual_rms,samples\n");
                    for g in &report.groups {
                        let _ = writeln!(
                            s,
                            "{},{},{},{},{},{}",
                            g.wheel, g.direction, g.model.b, g.model.c, g.residual_rms, g.samples
                        );
                    }
                    s
                }
            };
            ctx.emit(&text)
        }
        SysidCmd::Pwm { wheel, omega, params } => {
            let u = pwm_for_speed(&ctx.motor_params(params)?, *wheel, *omega)?;
            let text = match ctx.cli.format {
                None => format!("{u}\n"),
                Some(Format::Json) => format!("{}\n", json!({ "wheel": wheel.to_string(), "omega": omega, "pwm": u })),
                Some(Format::Csv) => format!("wheel,omega,pwm\n{wheel},{omega},{u}\n"),
            };
            ctx.emit(&text)
        }
        SysidCmd::SimulatePlant {
            params,
            per_group,
            noise,
        } => {
            let samples = synthetic_samples(
                &ctx.motor_params(params)?,
                *per_group,
                *noise,
                ctx.cli.seed.unwrap_or(0),
            )?;
            let text = match ctx.cli.format {
                Some(Format::Json) => format!("{}\n", json!(samples)),
                _ => {
                    let mut buf = Vec::new();
                    write_samples(&mut buf, &samples)?;
                    String::from_utf8(buf).expect("csv output is utf-8")
                }
            };
            ctx.emit(&text)
        }
    }
}

fn load_poses(path: &Path) -> Result<Vec<(PoseDetection, Option<bool>)>, Failure> {
    Ok(read_detections_file(path)
        .map_err(|e| Failure::from(e).context(path))?
        .into_iter()
        .map(|r| (r.detection, r.fallen))
        .collect())
}

fn json_lines(rows: &[serde_json::Value]) -> String {
    rows.iter().map(|r| format!("{r}\n")).collect()
}

fn falldet(ctx: &Ctx, cmd: &FalldetCmd) -> Result<(), Failure> {
    let p = &ctx.config.pipeline;
    match cmd {
        FalldetCmd::Rules { input } => {
            let verdicts: Vec<_> = load_poses(input)?
                .iter()
                .map(|(d, _)| rules_fall(d, p.keypoint_threshold))
                .collect();
            let text = match ctx.cli.format {
                Some(Format::Csv) => {
                    let mut s = String::from("index,fall,degraded\n");
                    for (i, v) in verdicts.iter().enumerate() {
                        let _ = writeln!(s, "{i},{},{}", v.fall, v.degraded);
                    }
                    s
                }
                _ => json_lines(
                    &verdicts
                        .iter()
                        .enumerate()
                        .map(|(i, v)| json!({ "index": i, "fall": v.fall, "degraded": v.degraded }))
                        .collect::<Vec<_>>(),
                ),
            };
            ctx.emit(&text)
        }
        FalldetCmd::MlpInfer { input, weights } => {
            let path = weights
                .as_ref()
                .or(p.mlp_weights.as_ref())
                .ok_or_else(|| Failure::new(EXIT_CONFIG, "no weights: pass --weights or set pipeline.mlp_weights"))?;
            let net = Mlp::load(path).map_err(|e| Failure::from(e).context(path))?;
            let features = p.features();
            let probs = load_poses(input)?
                .iter()
                .map(|(d, _)| mlp_forward(&net, d, &features))
                .collect::<Result<Vec<_>, _>>()?;
            let text = match ctx.cli.format {
                Some(Format::Csv) => {
                    let mut s = String::from("index,p_fall,p_not_fall\n");
                    for (i, q) in probs.iter().enumerate() {
                        let _ = writeln!(s, "{i},{},{}", q.fall, q.not_fall);
                    }
                    s
                }
                _ => json_lines(
                    &probs
                        .iter()
                        .enumerate()
                        .map(|(i, q)| json!({ "index": i, "p_fall": q.fall, "p_not_fall": q.not_fall }))
                        .collect::<Vec<_>>(),
                ),
            };
            ctx.emit(&text)
        }
        FalldetCmd::MlpTrain {
            input,
            synthetic,
            epochs,
            learning_rate,
            batch_size,
        } => {
            let mut train = ctx.config.training;
            if let Some(seed) = ctx.cli.seed {
                train.seed = seed;
            }
            train.epochs = epochs.unwrap_or(train.epochs);
            train.learning_rate = learning_rate.unwrap_or(train.learning_rate);
            train.batch_size = batch_size.unwrap_or(train.batch_size);
            let data = match (input, synthetic) {
                (_, Some(n)) => synthetic_dataset(*n, train.seed),
                (Some(path), None) => load_poses(path)?
                    .into_iter()
                    .enumerate()
                    .map(|(i, (d, label))| {
                        label.map(|l| (d, l)).ok_or_else(|| {
                            Failure::new(EXIT_DATA, format!("{}: record {} has no label", path.display(), i + 1))
                        })
                    })
                    .collect::<Result<Vec<_>, _>>()?,
                (None, None) => unreachable!("clap requires one of --input / --synthetic"),
            };
            let (net, report) = mlp_train(&data, &p.features(), &train)?;
            eprintln!(
                "trained {} epochs on {} examples: loss {:.6}, accuracy {:.4}",
                report.loss_history.len(),
                data.len(),
                report.final_loss,
                report.accuracy
            );
            ctx.emit(&format!("{}\n", net.to_json()))
        }
    }
}

fn simulate(ctx: &Ctx, cmd: &SimulateCmd) -> Result<(), Failure> {
    let SimulateCmd::Circle {
        controller,
        params,
        plot_dir,
    } = cmd;
    let plant = ctx.motor_params(params)?;
    let task = ctx.config.simulation.task();
    let g = ctx.config.chassis.geometry()?;
    let kinds = match controller {
        Some(k) => vec![*k],
        None => vec![ControllerKind::WithSysid, ControllerKind::WithoutSysid],
    };
    if let Some(dir) = plot_dir {
        std::fs::create_dir_all(dir).map_err(|e| Failure::io(dir.display(), e))?;
        for &kind in &kinds {
            let log = simulate_circle(&plant, kind, &task, &g)?;
            write_plot(&dir.join(format!("{kind}.dat")), &log)?;
        }
    }
    if let Some(kind) = controller {
        let log = simulate_circle(&plant, *kind, &task, &g)?;
        let rms = robofall_core::simulator::rms_radial_deviation(&log, task.radius, task.center())?;
        eprintln!("{kind}: rms radial deviation {rms:.6} m");
        let text = match ctx.cli.format {
            Some(Format::Json) => {
                let rows: Vec<_> = log
                    .samples
                    .iter()
                    .map(|s| json!({ "t": s.t, "x": s.pose.x, "y": s.pose.y, "theta": s.pose.theta }))
                    .collect();
                format!("{}\n", serde_json::Value::from(rows))
            }
            _ => {
                let mut buf = Vec::new();
                log.write_csv(&mut buf)?;
                String::from_utf8(buf).expect("csv output is utf-8")
            }
        };
        return ctx.emit(&text);
    }
    let cmp = compare_controllers(&plant, &task, &g)?;
    let text = match ctx.cli.format {
        None => cmp.to_string(),
        Some(Format::Json) => format!("{}\n", json!(cmp)),
        Some(Format::Csv) => format!(
            "with_sysid_rms,without_sysid_rms,ratio\n{},{},{}\n",
            cmp.with_sysid_rms, cmp.without_sysid_rms, cmp.ratio
        ),
    };
    ctx.emit(&text)
}

/// Columns `t x y theta` under a `#` header, as gnuplot expects.
fn write_plot(path: &PathBuf, log: &TrajectoryLog) -> Result<(), Failure> {
    let mut s = String::from("# t x y theta\n");
    for p in &log.samples {
        let _ = writeln!(s, "{} {} {} {}", p.t, p.pose.x, p.pose.y, p.pose.theta);
    }
    std::fs::write(path, s).map_err(|e| Failure::io(path.display(), e))
}

fn pipeline(ctx: &Ctx, cmd: &PipelineCmd) -> Result<u8, Failure> {
    let PipelineCmd::Run {
        keypoints,
        image,
        timestamp,
        spool,
        classifier,
        weights,
    } = cmd;
    let mut config = ctx.config.clone();
    if let Some(c) = classifier {
        config.pipeline.classifier = *c;
    }
    if let Some(w) = weights {
        config.pipeline.mlp_weights = Some(w.clone());
    }
    let ts: DateTime<Utc> = match timestamp {
        Some(s) => DateTime::parse_from_rfc3339(s)
            .map_err(|e| Failure::new(EXIT_USAGE, format!("--timestamp {s:?}: {e}")))?
            .with_timezone(&Utc),
        None => Utc::now(),
    };
    let input = match image {
        Some(path) => PipelineInput::Image(path.clone()),
        None => PipelineInput::Keypoints(keypoints.clone()),
    };
    let report = run_pipeline(&input, &config, &ts)?;
    let sink = match (spool, &ctx.cli.output) {
        (Some(dir), _) => Sink::Spool(dir.clone()),
        (None, Some(path)) => Sink::File(path.clone()),
        (None, None) => Sink::Stdout,
    };
    if let Some(path) = emit_report(&report, &sink)? {
        eprintln!("report written to {} ({})", path.display(), format_timestamp(&ts));
    }
    Ok(u8::try_from(report.exit_code()).unwrap_or(EXIT_CONFIG))
}
