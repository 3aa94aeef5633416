//! Regenerates the binary seeds under `corpus/`: `cargo run --example seed_corpus`
//! from the fuzz directory. Text seeds (ppm, annotations, dictionary) come
//! from `hmic synth` and are checked in as is.

use std::fs;
use std::path::Path;

use hmic::container::{encode, EncodeOptions};
use hmic::imagery::{encode_pgm16, encode_ppm};
use hmic::lossless::{compress_plane, BitDepth, Plane};
use hmic::networks::{Model, ModelConfig};
use hmic::profile::encode_profile;
use hmic::residual::{encode_residual, Qp, ResidualPlane};
use hmic::synth::{default_dictionary, generate_scene, SceneConfig};
use hmic::tensor::norm::NormKind;

fn put(target: &str, name: &str, bytes: &[u8]) {
    let dir = Path::new("corpus").join(target);
    fs::create_dir_all(&dir).unwrap();
    fs::write(dir.join(name), bytes).unwrap();
}

fn main() {
    let dict = default_dictionary();
    let cfg = SceneConfig {
        width: 24,
        height: 16,
        ..SceneConfig::desk()
    };
    let scene = generate_scene(&cfg, &dict, 7).unwrap();
    let profile = encode_profile(&scene.instances).unwrap();
    put("ppm", "scene", &encode_ppm(&scene.image));

    let (w, h) = (profile.width(), profile.height());
    put("pgm16", "profile", &encode_pgm16(&profile.to_gray16()));

    let mut tasks = vec![w as u8 - 1];
    tasks.extend(profile.values().iter().flat_map(|v| v.to_le_bytes()));
    put("profile_tasks", "scene", &tasks);

    let planes = [
        ("profile", Plane::new(w, h, BitDepth::Sixteen, 1, profile.values().to_vec()).unwrap()),
        ("rgb", Plane::new(4, 2, BitDepth::Eight, 3, (0..24).map(|i| (i * 11 % 256) as u16).collect()).unwrap()),
        ("constant", Plane::new(8, 8, BitDepth::Sixteen, 1, vec![5889; 64]).unwrap()),
    ];
    for (name, p) in &planes {
        put("coded_plane", name, &compress_plane(p).into_bytes());
    }

    let samples: Vec<i16> = (0..3 * 16 * 8).map(|i| ((i * 37) % 61) as i16 - 30).collect();
    let r = ResidualPlane::new(16, 8, samples).unwrap();
    for qp in [0, 27, 51] {
        // first two bytes are the fuzz target's size prefix
        let mut b = vec![15, 7];
        b.extend(encode_residual(&r, Qp::new(qp).unwrap()));
        put("residual_stream", &format!("qp{qp}"), &b);
    }

    let model = Model::<f32>::new(ModelConfig::with_widths([1, 1, 1, 1], NormKind::Channel), 1).unwrap();
    put("checkpoint", "tiny", &model.to_checkpoint().to_bytes());
    for (name, residual) in [("full", true), ("no_residual", false)] {
        let opts = EncodeOptions {
            qp: Qp::new(32).unwrap(),
            residual,
        };
        let bits = encode(&scene.image, Some(&scene.instances), &model, opts).unwrap();
        put("container", name, &bits.to_bytes().unwrap());
    }
    let off = Model::<f32>::new(ModelConfig::with_widths([1, 1, 1, 1], NormKind::Batch).without_profile(), 2).unwrap();
    let opts = EncodeOptions {
        qp: Qp::new(42).unwrap(),
        residual: true,
    };
    put("container", "no_profile", &encode(&scene.image, None, &off, opts).unwrap().to_bytes().unwrap());
}
