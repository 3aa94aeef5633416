use std::fs::{self, File};
use std::io::BufReader;
use std::path::Path;

use anyhow::{bail, Context, Result};
use rayon::prelude::*;

use hmic::container::{decode, encode, DecodeLevel, EncodeOptions, LayeredBitstream, HEADER_LEN};
use hmic::imagery::{encode_ppm, ingest_annotations, load_image};
use hmic::metrics::rd::{collect, rd_image, write_rd_csv};
use hmic::networks::{Model, ModelConfig};
use hmic::profile::encode_profile;
use hmic::residual::Qp;
use hmic::synth::{annotations_to_jsonl, default_dictionary, generate_scene, SceneConfig};
use hmic::tensor::checkpoint::Checkpoint;
use hmic::trainer::{train, write_loss_csv, Sample, TrainConfig};

use crate::corpus::{load_corpus, load_dictionary, DICTIONARY_FILE};
use crate::output::{write_atomic, write_with};
use crate::plot::rd_svg;
use crate::tasks_json::task_json;
use crate::{Command, DecodeArgs, EncodeArgs, EvalArgs, Scale, StatsArgs, SynthArgs, TrainArgs};

pub fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Encode(a) => encode_cmd(a),
        Command::Decode(a) => decode_cmd(a),
        Command::Stats(a) => stats_cmd(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Synth(a) => synth_cmd(a),
    }
}

fn load_model(path: &Path) -> Result<Model<f32>> {
    let ck = Checkpoint::load(path).with_context(|| format!("reading model {}", path.display()))?;
    Model::from_checkpoint(&ck).with_context(|| format!("loading model {}", path.display()))
}

fn encode_cmd(a: EncodeArgs) -> Result<()> {
    let qp = Qp::new(a.qp)?;
    let model = load_model(&a.model)?;
    let image = load_image(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let instances = match &a.annotations {
        Some(p) => {
            let dict = load_dictionary(a.dictionary.as_deref())?;
            Some(ingest_annotations(p, &dict, image.width(), image.height()).with_context(|| format!("reading {}", p.display()))?)
        }
        None => None,
    };
    let opts = EncodeOptions {
        qp,
        residual: !a.no_residual,
    };
    let bits = encode(&image, instances.as_ref(), &model, opts).context("encoding")?;
    write_atomic(&a.out, &bits.to_bytes()?)?;
    let s = bits.stats();
    log::info!("{} bits ({:.4} bpp)", s.total_bits(), s.total_bpp());
    Ok(())
}

fn decode_cmd(a: DecodeArgs) -> Result<()> {
    let level = DecodeLevel::from(a.level);
    let dict = load_dictionary(a.dictionary.as_deref())?;
    let model = match (&a.model, level) {
        (Some(p), _) => Some(load_model(p)?),
        (None, DecodeLevel::Tasks) => None,
        (None, _) => bail!("--model is required to decode at the {:?} level", a.level),
    };
    // only the streams the level needs are read from disk
    let file = File::open(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let bits = LayeredBitstream::read_for_level(BufReader::new(file), level).context("reading container")?;
    let decoded = decode(&bits, level, model.as_ref()).context("decoding")?;

    let mut outputs: Vec<(&str, Vec<u8>)> = Vec::new();
    if let Some(t) = &decoded.tasks {
        let mut json = serde_json::to_vec(&task_json(t, &dict))?;
        json.push(b'\n');
        outputs.push(("tasks.json", json));
    }
    if let Some(g) = &decoded.general {
        outputs.push(("general.ppm", encode_ppm(g)));
    }
    if let Some(h) = &decoded.high {
        outputs.push(("high.ppm", encode_ppm(h)));
    }
    for (name, bytes) in outputs {
        write_atomic(&a.out_dir.join(name), &bytes)?;
    }
    Ok(())
}

fn stats_cmd(a: StatsArgs) -> Result<()> {
    let bytes = fs::read(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let bits = LayeredBitstream::from_bytes(&bytes).context("reading container")?;
    let s = bits.stats();
    let h = &bits.header;
    println!(
        "image {}x{} (coded {}x{}), qp {}",
        h.original.width, h.original.height, h.padded_width, h.padded_height, h.qp
    );
    println!("{:<8} {:>10} {:>10}", "stream", "bits", "bpp");
    for (i, name) in ["stream1", "stream2", "stream3"].iter().enumerate() {
        let present = bits.streams[i].is_some();
        if present {
            println!("{name:<8} {:>10} {:>10.4}", s.bits[i], s.bpp(i));
        } else {
            println!("{name:<8} {:>10} {:>10}", "-", "-");
        }
    }
    println!("{:<8} {:>10} {:>10.4}", "total", s.total_bits(), s.total_bpp());
    println!("{:<8} {:>10}", "header", HEADER_LEN * 8);
    Ok(())
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let mut config = match a.scale {
        Scale::Desk => ModelConfig::desk(a.norm.into()),
        Scale::Full => ModelConfig::full(a.norm.into()),
    };
    if a.no_profile {
        config = config.without_profile();
    }
    let cfg = TrainConfig {
        epochs: a.epochs,
        lr: a.lr,
        batch_size: a.batch_size,
        seed: a.seed,
        ..TrainConfig::default()
    };
    let corpus = load_corpus(&a.corpus)?;
    let samples = corpus
        .iter()
        .map(|item| {
            let profile = if config.use_profile {
                let Some(m) = &item.instances else {
                    bail!("{}: the profile channel needs annotations (or use --no-profile)", item.id);
                };
                Some(encode_profile(m)?)
            } else {
                None
            };
            Ok(Sample::new(&item.image, profile.as_ref())?)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut model = Model::new(config, a.seed)?;
    let records = train(&mut model, &samples, &cfg, |epoch, _| {
        log::info!("epoch {epoch} done");
        Ok(())
    })
    .context("training")?;
    if let (Some(first), Some(last)) = (records.first(), records.last()) {
        log::info!("loss {:.4} -> {:.4}", first.loss.total, last.loss.total);
    }
    if let Some(p) = &a.loss_csv {
        write_with(p, |b| Ok(write_loss_csv(&records, b)?))?;
    }
    write_atomic(&a.out, &model.to_checkpoint().to_bytes())
}

fn eval_cmd(a: EvalArgs) -> Result<()> {
    if a.qps.is_empty() {
        bail!("--qps is empty");
    }
    let model = load_model(&a.model)?;
    let corpus = load_corpus(&a.corpus)?;
    let results: Vec<_> = corpus
        .par_iter()
        .map(|item| (item.id.clone(), rd_image(item, &model, &a.qps)))
        .collect();
    let sweep = collect(results);
    for (id, e) in &sweep.failures {
        eprintln!("hmic: {id}: {e}");
    }
    write_with(&a.csv, |b| Ok(write_rd_csv(&sweep.points, b)?))?;
    if let Some(p) = &a.svg {
        write_atomic(p, rd_svg(&sweep.points).as_bytes())?;
    }
    if sweep.points.is_empty() {
        bail!("every image failed");
    }
    Ok(())
}

fn synth_cmd(a: SynthArgs) -> Result<()> {
    if a.size == 0 || a.count == 0 {
        bail!("--size and --count must be positive");
    }
    let dict = default_dictionary();
    let cfg = SceneConfig {
        width: a.size,
        height: a.size,
        ..SceneConfig::desk()
    };
    let scenes: Vec<_> = (0..a.count as u64)
        .into_par_iter()
        .map(|i| generate_scene(&cfg, &dict, a.seed.wrapping_add(i)))
        .collect::<hmic::Result<_>>()?;
    write_atomic(&a.out.join(DICTIONARY_FILE), dict.to_tsv().as_bytes())?;
    for (i, s) in scenes.iter().enumerate() {
        write_atomic(&a.out.join(format!("img{i:04}.ppm")), &encode_ppm(&s.image))?;
        write_atomic(&a.out.join(format!("img{i:04}.jsonl")), annotations_to_jsonl(&s.annotations).as_bytes())?;
    }
    Ok(())
}
