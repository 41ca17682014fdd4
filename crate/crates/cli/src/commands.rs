use std::path::{Path, PathBuf};

use lpcn::imageio;
use lpcn::metrics::{self, Upscaler};
use lpcn::model::{self, build_model, load_model, ArchSpec, Mode, ModelParams};
use lpcn::pipeline;
use lpcn::train::{
    checkpoint_paths, prepare_archive, AdamConfig, LossHistory, PatchArchive, PatchConfig, PatchSource, TrainConfig,
    Trainer,
};
use lpcn::{binio, Error, Result};

use crate::manifest::{now, RunManifest};
use crate::{EvaluateArgs, InspectArgs, Method, PrepareArgs, TrainArgs, UpscaleArgs};

pub fn prepare(a: PrepareArgs) -> Result<()> {
    let started = now();
    let cfg = PatchConfig {
        scales: a.scale.clone(),
        patch: a.patch,
        stride: a.stride,
    };
    let count = prepare_archive(&a.hr_dir, &cfg, &a.out)?;
    println!("wrote {count} pairs to {}", a.out.display());
    let mut m = RunManifest::new("prepare", started);
    m.set("hr_dir", a.hr_dir.display())
        .set("out", a.out.display())
        .set("scales", format!("{:?}", a.scale))
        .set("patch", a.patch)
        .set("stride", a.stride)
        .set("count", count)
        .artifact(&a.out);
    m.write_beside(&a.out)?;
    Ok(())
}

fn default_stem(model: &Path) -> PathBuf {
    model.with_extension("ckpt")
}

/// Accepts either a stem or one of its two files.
fn stem_of(path: &Path) -> PathBuf {
    match path.extension().and_then(|e| e.to_str()) {
        Some("lpcn") | Some("lpco") => path.with_extension(""),
        _ => path.to_path_buf(),
    }
}

fn loss_csv_path(a: &TrainArgs) -> PathBuf {
    a.loss_csv.clone().unwrap_or_else(|| {
        let mut s = a.out_model.as_os_str().to_owned();
        s.push(".loss.csv");
        PathBuf::from(s)
    })
}

pub fn train(a: TrainArgs) -> Result<()> {
    let started = now();
    let archive = PatchArchive::open(&a.data)?;
    let cfg = TrainConfig {
        steps: a.steps,
        batch: a.batch,
        adam: AdamConfig {
            lr: a.lr,
            beta1: a.beta1,
            beta2: a.beta2,
            epsilon: a.epsilon,
        },
        seed: a.seed,
        checkpoint_every: a.checkpoint_every,
    };
    let stem = a.checkpoint.clone().unwrap_or_else(|| default_stem(&a.out_model));
    let loss_csv = loss_csv_path(&a);
    let requested = a.mode.map(Mode::from);

    let (mut trainer, mut history) = match &a.resume {
        Some(r) => {
            let t = Trainer::resume(&archive, cfg, &stem_of(r))?;
            if let Some(m) = requested.filter(|m| *m != t.params().mode()) {
                return Err(Error::Argument(format!(
                    "checkpoint is a {} model, not {m}",
                    t.params().mode()
                )));
            }
            let mut h = if loss_csv.exists() {
                LossHistory::read(&loss_csv)?
            } else {
                LossHistory::default()
            };
            h.truncate_after(t.step());
            (t, h)
        }
        None => {
            let mode = requested.unwrap_or(Mode::LpcnSrPlus);
            let params = build_model(ArchSpec::default_for(mode), a.seed)?;
            (Trainer::new(params, &archive, cfg)?, LossHistory::default())
        }
    };
    trainer.set_wall_offset(history.last_wall_seconds());
    if a.checkpoint_every > 0 {
        trainer.set_checkpoint_stem(Some(stem.clone()));
    }
    let log_every = a.log_every.max(1);
    let result = trainer.run(|r| {
        history.push(*r);
        if r.step % log_every == 0 || r.step == a.steps {
            println!("step {} loss {:.6e} ({:.1}s)", r.step, r.loss, r.wall_seconds);
        }
        if a.checkpoint_every > 0 && r.step % a.checkpoint_every == 0 {
            history.write(&loss_csv)?;
        }
        Ok(())
    });
    history.write(&loss_csv)?;
    result?;

    model::save_model(trainer.params(), &a.out_model)?;
    let mut m = RunManifest::new("train", started);
    m.seed = Some(trainer.config().seed);
    m.set("data", a.data.display())
        .set("out_model", a.out_model.display())
        .set("mode", trainer.params().mode())
        .set("steps", a.steps)
        .set("batch", a.batch)
        .set("lr", a.lr)
        .set("beta1", a.beta1)
        .set("beta2", a.beta2)
        .set("epsilon", a.epsilon)
        .set("checkpoint_every", a.checkpoint_every)
        .set("checkpoint", stem.display())
        .set("loss_csv", loss_csv.display())
        .set(
            "resume",
            a.resume.as_ref().map(|p| p.display().to_string()).unwrap_or_default(),
        )
        .set("archive_pairs", archive.len())
        .artifact(&a.out_model)
        .artifact(&loss_csv);
    if trainer.last_checkpoint().is_some() {
        let (mp, op) = checkpoint_paths(&stem);
        m.artifact(&mp).artifact(&op);
    }
    m.write_beside(&a.out_model)?;
    println!("saved {}", a.out_model.display());
    Ok(())
}

fn load_inference_model(path: &Path) -> Result<ModelParams<f32>> {
    load_model::<f32>(path)
}

pub fn upscale(a: UpscaleArgs) -> Result<()> {
    let started = now();
    let params = load_inference_model(&a.model)?;
    let img = imageio::read_image(&a.input)?;
    let out = pipeline::upscale_image(Some(&params), &img.pixels, a.scale)?;
    imageio::write_png(&a.out, &out)?;
    let mut m = RunManifest::new("upscale", started);
    m.set("model", a.model.display())
        .set("in", a.input.display())
        .set("out", a.out.display())
        .set("scale", a.scale)
        .set("mode", params.mode())
        .artifact(&a.out);
    m.write_beside(&a.out)?;
    Ok(())
}

pub fn evaluate(a: EvaluateArgs) -> Result<()> {
    let started = now();
    let model = match (a.method, &a.model) {
        (Method::Model, None) => {
            return Err(Error::Argument("--method model requires --model".into()));
        }
        (Method::Model, Some(p)) => Some(load_inference_model(p)?),
        (Method::Bicubic, _) => None,
    };
    let scale = a.scale;
    let (name, report) = match &model {
        Some(p) => {
            let up = move |lr: &lpcn::Tensor<f64>| pipeline::upscale_luma(Some(p), lr, scale);
            let up: &Upscaler = &up;
            let name = format!("model:{}", p.mode());
            (name.clone(), metrics::evaluate_set(&a.hr_dir, up, scale, &name, a.report.as_deref())?)
        }
        None => {
            let up = metrics::bicubic_upscaler(scale);
            let up: &Upscaler = &up;
            ("bicubic".to_string(), metrics::evaluate_set(&a.hr_dir, up, scale, "bicubic", a.report.as_deref())?)
        }
    };
    if !report.failures.is_empty() {
        eprintln!("{} image(s) could not be evaluated", report.failures.len());
    }
    println!("{}", report.aggregate_line());
    if let Some(path) = &a.report {
        let mut m = RunManifest::new("evaluate", started);
        m.set("hr_dir", a.hr_dir.display())
            .set("method", &name)
            .set(
                "model",
                a.model.as_ref().map(|p| p.display().to_string()).unwrap_or_default(),
            )
            .set("scale", scale)
            .set("shave", report.shave)
            .artifact(path);
        m.write_beside(path)?;
    }
    Ok(())
}

pub fn inspect(a: InspectArgs) -> Result<()> {
    let bytes = binio::read_file(&a.model)?;
    let params = model::decode_model::<f32>(&bytes)?;
    print!("{}", describe(&params));
    Ok(())
}

/// Human-readable dump of a decoded model. Decoding already verified the checksum.
pub fn describe(params: &ModelParams<f32>) -> String {
    use std::fmt::Write;
    let arch = params.arch();
    let mut s = String::new();
    let _ = writeln!(s, "mode: {}", params.mode());
    let _ = writeln!(
        s,
        "pool factor: {}  replicas: {}  required multiple: {}",
        arch.r,
        arch.replicas(),
        arch.required_multiple()
    );
    let _ = writeln!(s, "skips: {:?}", arch.skip_pairs);
    let _ = writeln!(s, "checksum: ok");
    let _ = writeln!(
        s,
        "{:<16}{:<12}{:>8}{:>6}{:>6}{:>8}{:>12}",
        "layer", "kind", "kernel", "in", "out", "stride", "params"
    );
    for layer in params.layers() {
        let c = layer.spec;
        let kind = if c.transposed { "transposed" } else { "conv" };
        let _ = writeln!(
            s,
            "{:<16}{:<12}{:>8}{:>6}{:>6}{:>8}{:>12}",
            layer.id.to_string(),
            kind,
            format!("{}x{}", c.kernel_h, c.kernel_w),
            c.in_channels,
            c.out_channels,
            c.stride,
            layer.weights.data().len() + layer.bias.len()
        );
    }
    let _ = writeln!(s, "total parameters: {}", params.param_count());
    let _ = writeln!(s, "architecture parameters: {}", arch.param_count());
    s
}
