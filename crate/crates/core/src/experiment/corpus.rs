//! Pretraining corpora. The in-domain corpus annotates simulator states;
//! the out-of-domain one comes from the grounding and spatial engines on
//! synthetic masks and rooms. Both are rendered to the encoder's image
//! format.

use crate::grounding::{filter_by_quality, generate_grounding_samples, synthetic_mask_records, GroundingConfig, MaskRecord, TemplateCaptionProvider};
use crate::io::seed::SeedScheme;
use crate::sim::annotate::generate_indomain;
use crate::sim::{render_features, TaskConfig, TaskKind, IMAGE_CHANNELS, IMAGE_DIM, IMAGE_SIDE};
use crate::spatial::{build_scene_graph, generate_for_scene, random_scene, SceneRecord};

use super::pretrain::PretrainRecord;

/// Annotate every other state of expert episodes for all task kinds.
pub fn in_domain_corpus(seed: u64, episodes_per_task: usize, cfg: &TaskConfig) -> Vec<PretrainRecord> {
    TaskKind::ALL
        .iter()
        .flat_map(|kind| generate_indomain(*kind, cfg, episodes_per_task, 2, seed, 1))
        .map(|qa| PretrainRecord { features: render_features(&qa.features), question: qa.question, answer: qa.answer })
        .collect()
}

fn channel_of(category: &str) -> usize {
    (crate::io::seed::fnv1a64(category.as_bytes()) % IMAGE_CHANNELS as u64) as usize
}

/// Area-averaged downsample of the mask into one color channel.
fn mask_image(r: &MaskRecord) -> Vec<f64> {
    let mut img = vec![0.0; IMAGE_DIM];
    let c = channel_of(r.category.as_deref().unwrap_or(""));
    let (w, h) = (r.width() as usize, r.height() as usize);
    let mut counts = vec![0usize; IMAGE_SIDE * IMAGE_SIDE];
    for y in 0..h {
        for x in 0..w {
            let cell = (y * IMAGE_SIDE / h) * IMAGE_SIDE + x * IMAGE_SIDE / w;
            counts[cell] += 1;
            if r.mask.get(x as u32, y as u32) {
                img[c * IMAGE_SIDE * IMAGE_SIDE + cell] += 1.0;
            }
        }
    }
    for (i, n) in counts.iter().enumerate() {
        if *n > 0 {
            img[c * IMAGE_SIDE * IMAGE_SIDE + i] /= *n as f64;
        }
    }
    img
}

/// Top-down footprints of the room's objects, room mapped to the unit
/// square.
fn scene_image(s: &SceneRecord) -> Vec<f64> {
    let mut img = vec![0.0; IMAGE_DIM];
    let side = IMAGE_SIDE as f64;
    for o in &s.objects {
        let c = channel_of(&o.category);
        let lo = |i: usize| (o.center[i] - o.size[i] / 2.0 - s.room.center[i]) / s.room.dims[i] + 0.5;
        let hi = |i: usize| (o.center[i] + o.size[i] / 2.0 - s.room.center[i]) / s.room.dims[i] + 0.5;
        for y in 0..IMAGE_SIDE {
            let cy = (y as f64 + 0.5) / side;
            for x in 0..IMAGE_SIDE {
                let cx = (x as f64 + 0.5) / side;
                if (lo(0)..=hi(0)).contains(&cx) && (lo(1)..=hi(1)).contains(&cy) {
                    img[(c * IMAGE_SIDE + y) * IMAGE_SIDE + x] = 1.0;
                }
            }
        }
    }
    img
}

/// About `n` records, half grounding and half spatial.
pub fn out_domain_corpus(seed: u64, n: usize) -> Vec<PretrainRecord> {
    let scheme = SeedScheme::new(seed);
    let masks = filter_by_quality(synthetic_mask_records(scheme.derive("outdomain/masks", 0), n), 0.9);
    let gcfg = GroundingConfig { seed: scheme.derive("outdomain/grounding", 0), limit: Some(n / 2), ..Default::default() };
    let mut out: Vec<PretrainRecord> = match generate_grounding_samples(&masks, &TemplateCaptionProvider, &gcfg) {
        Ok(g) => g
            .samples
            .into_iter()
            .map(|s| PretrainRecord {
                features: mask_image(&masks[s.record_index]),
                question: s.question,
                answer: s.answer,
            })
            .collect(),
        Err(_) => Vec::new(),
    };
    let scene_seed = scheme.derive("outdomain/scenes", 0);
    let mut i = 0u64;
    while out.len() < n {
        let s = random_scene(scene_seed, i);
        i += 1;
        let Ok(g) = build_scene_graph(&s.scene_id, s.room, s.objects.clone()) else { continue };
        let f = scene_image(&s);
        for qa in generate_for_scene(&g, 2, scene_seed) {
            if out.len() < n {
                out.push(PretrainRecord { features: f.clone(), question: qa.question, answer: qa.answer });
            }
        }
    }
    debug_assert!(out.iter().all(|r| r.features.len() == IMAGE_DIM));
    out
}
