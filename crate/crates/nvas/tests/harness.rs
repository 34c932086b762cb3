use std::fs;
use std::path::{Path, PathBuf};

use nvas::config::{GenConfig, TrainConfig};
use nvas::dataset::{gen_dataset, load_scenes, Dataset, SceneEntry, Split};
use nvas::experiments::{ablate, baseline_reports, run_baselines, AblationSpec};
use nvas::pftb::{self, load_precomputed_features, Tensor};
use nvas::plot::plot_waveforms;
use nvas::train::{evaluate, prepare, prepare_eval, train, train_prepared, EvalClip};
use nvas::wav;
use nvas_core::dsp::BinauralClip;
use nvas_core::encoders::FeatureSource;
use nvas_core::metrics::{mag_distance, ClipScore, MetricsReport};
use nvas_core::model::{FeatureSet, PhysModel};
use nvas_core::room::{binaural_ir, convolve_truncated, depth_render, ListenerPose};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn scenes() -> Vec<SceneEntry> {
    load_scenes(&Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenes")).unwrap()
}

fn dataset(n: usize, seed: u64) -> (tempfile::TempDir, Dataset) {
    let dir = tempfile::tempdir().unwrap();
    gen_dataset(&scenes(), dir.path(), &GenConfig::default(), seed, n).unwrap();
    let ds = Dataset::open(dir.path()).unwrap();
    (dir, ds)
}

fn quick(steps: usize) -> TrainConfig {
    TrainConfig { steps, eval_every: 50, ..TrainConfig::default() }
}

fn files_under(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

#[test]
fn ten_clip_layout_and_split() {
    let (dir, ds) = dataset(10, 1);
    let clips: Vec<_> = fs::read_dir(dir.path().join("clips")).unwrap().collect();
    assert_eq!(clips.len(), 10);
    for c in &ds.manifest.clips {
        for f in ["mono.wav", "gt.wav", "pose.json", "render.pftb", "desc.json"] {
            assert!(ds.clip_dir(&c.clip_id).join(f).is_file(), "{} {f}", c.clip_id);
        }
    }
    let (train, val) = (&ds.manifest.split.train, &ds.manifest.split.val);
    assert_eq!((train.len(), val.len()), (8, 2));
    assert!(train.iter().all(|id| !val.contains(id)));
}

#[test]
fn split_fraction_holds_for_other_sizes() {
    for n in [7, 23, 41] {
        let (_d, ds) = dataset(n, 2);
        let val = ds.manifest.split.val.len() as f64;
        assert!((val - 0.2 * n as f64).abs() <= 1.0, "{n}");
        assert_eq!(ds.manifest.split.train.len() + ds.manifest.split.val.len(), n);
    }
}

#[test]
fn same_seed_gives_identical_bytes() {
    let (a, _) = dataset(6, 5);
    let (b, _) = dataset(6, 5);
    let (c, _) = dataset(6, 6);
    let files = files_under(a.path());
    assert_eq!(files, files_under(b.path()));
    for f in &files {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{}", f.display());
    }
    let mono = Path::new("clips").join(&files.iter().find(|f| f.ends_with("mono.wav")).unwrap().parent().unwrap().file_name().unwrap()).join("mono.wav");
    assert_ne!(fs::read(a.path().join(&mono)).unwrap(), fs::read(c.path().join(&mono)).unwrap());
}

#[test]
fn ground_truth_matches_independent_render() {
    let (dir, ds) = dataset(8, 3);
    let gen = GenConfig::default();
    for meta in &ds.manifest.clips {
        let clip_dir = dir.path().join("clips").join(&meta.clip_id);
        let mono = wav::read_mono(&clip_dir.join("mono.wav")).unwrap();
        let gt = wav::read_binaural(&clip_dir.join("gt.wav")).unwrap();
        let pose: ListenerPose = serde_json::from_str(&fs::read_to_string(clip_dir.join("pose.json")).unwrap()).unwrap();
        let scene = &scenes().into_iter().find(|s| s.scene.name == meta.scene).unwrap().scene;
        let ir = binaural_ir(scene, &pose, &gen.sim).unwrap();
        for (ch, h) in gt.channels().into_iter().zip([&ir.left, &ir.right]) {
            let want: Vec<f64> = convolve_truncated(mono.samples(), h).iter().map(|&v| v as f32 as f64).collect();
            let worst = ch.samples().iter().zip(&want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert_eq!(worst, 0.0, "{}", meta.clip_id);
        }
        let stored = ds.load_clip(&meta.clip_id).unwrap().render;
        let fresh = depth_render(scene, &pose, gen.n_views, gen.rays_per_view).unwrap();
        for (s, f) in stored.views.iter().zip(&fresh.views) {
            for (a, b) in s.rays.iter().zip(&f.rays) {
                assert_eq!(a.distance, b.distance as f32 as f64);
                assert_eq!(a.material_id, b.material_id);
            }
        }
    }
}

#[test]
fn training_halves_the_loss_in_200_steps() {
    let (_d, ds) = dataset(50, 0);
    let out = train(&ds, &quick(200)).unwrap();
    let (first, last) = (out.log.initial_loss().unwrap(), out.log.final_loss().unwrap());
    assert!(last <= 0.5 * first, "{first} -> {last}");
    assert_eq!(out.diverged_at, None);
}

#[test]
fn zero_learning_rate_keeps_parameters() {
    let (_d, ds) = dataset(10, 4);
    let mut cfg = quick(5);
    cfg.adam.lr = 0.0;
    let out = train(&ds, &cfg).unwrap();
    let init = PhysModel::new(&cfg.model, &mut ChaCha8Rng::seed_from_u64(cfg.seed)).unwrap();
    assert_eq!(out.last, init);
    assert_eq!(out.best, init);
}

#[test]
fn training_is_deterministic() {
    let (_d, ds) = dataset(12, 4);
    let a = train(&ds, &quick(20)).unwrap();
    let b = train(&ds, &quick(20)).unwrap();
    assert_eq!(a.log.to_csv(), b.log.to_csv());
    assert_eq!(a.best, b.best);
}

#[test]
fn excluded_branches_never_move() {
    let (_d, ds) = dataset(12, 8);
    let init = PhysModel::new(&quick(0).model, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    for features in [FeatureSet::NONE, FeatureSet::parse("dep").unwrap(), FeatureSet::parse("rgb,sem").unwrap()] {
        let cfg = TrainConfig { features, ..quick(15) };
        let m = train(&ds, &cfg).unwrap().last;
        assert_eq!(m.rgb == init.rgb, !features.rgb, "{features}");
        assert_eq!(m.depth == init.depth, !features.dep, "{features}");
        assert_eq!(m.phys == init.phys, !features.sem, "{features}");
        assert_ne!(m.gen, init.gen);
    }
}

#[test]
fn evaluation_properties() {
    let (_d, ds) = dataset(15, 9);
    let cfg = quick(0);
    let val = prepare_eval(&ds, ds.split(Split::Val), &cfg).unwrap();
    let fresh = train_prepared(&prepare(&ds, Split::Train, &cfg).unwrap(), &val, &cfg).unwrap().best;

    let model = evaluate(&fresh, FeatureSet::ALL, &val, &cfg.stft).unwrap();
    let mono_mono = &baseline_reports(&val, &cfg.stft).unwrap()[0];
    assert!((model.mag - mono_mono.mag).abs() <= 1e-6 * mono_mono.mag, "{} vs {}", model.mag, mono_mono.mag);

    let per_clip = model.per_clip.as_ref().unwrap();
    let mean = per_clip.iter().map(|s| s.mag).sum::<f64>() / per_clip.len() as f64;
    assert!((model.mag - mean).abs() < 1e-12);

    let oracle: Vec<ClipScore> = val
        .iter()
        .map(|c| ClipScore {
            clip_id: c.clip_id.clone(),
            mag: mag_distance(&c.gt, &c.gt, &cfg.stft).unwrap(),
            env: nvas_core::metrics::env_distance(&c.gt, &c.gt).unwrap(),
        })
        .collect();
    let r = MetricsReport::from_scores(oracle).unwrap();
    assert_eq!((r.mag, r.env), (0.0, 0.0));
}

#[test]
fn empty_split_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let gen = GenConfig { val_fraction: 0.0, ..GenConfig::default() };
    gen_dataset(&scenes(), dir.path(), &gen, 0, 4).unwrap();
    let ds = Dataset::open(dir.path()).unwrap();
    let cfg = quick(0);
    let val = prepare_eval(&ds, ds.split(Split::Val), &cfg).unwrap();
    assert!(evaluate(&PhysModel::new(&cfg.model, &mut ChaCha8Rng::seed_from_u64(0)).unwrap(), FeatureSet::ALL, &val, &cfg.stft).is_err());
    assert!(run_baselines(&ds, &cfg.stft).is_err());
}

#[test]
fn ablation_without_training_is_flat() {
    let (_d, ds) = dataset(10, 10);
    let table = ablate(&ds, &AblationSpec::all_subsets(vec![0, 1]), &quick(0)).unwrap();
    assert_eq!(table.rows.len(), 8);
    let csv = table.to_csv().unwrap();
    assert_eq!(csv.lines().count(), 9);
    assert!(csv.starts_with("rgb,dep,sem,mag,env,"));
    for r in &table.rows {
        assert!((r.mag - table.rows[0].mag).abs() <= 1e-12 * table.rows[0].mag);
    }
}

#[test]
fn baseline_rows() {
    let (_d, ds) = dataset(10, 11);
    let rows = run_baselines(&ds, &quick(0).stft).unwrap();
    assert_eq!(rows.iter().map(|r| r.system.as_str()).collect::<Vec<_>>(), ["mono-mono", "mono-energy", "stereo-energy"]);
    assert!(rows.iter().all(|r| r.mag.is_finite() && r.mag >= 0.0 && r.env.is_finite() && r.env >= 0.0));
}

#[test]
fn baselines_vanish_when_gt_is_duplicated_mono() {
    let (_d, ds) = dataset(10, 12);
    let cfg = quick(0);
    let clips: Vec<EvalClip> = prepare_eval(&ds, ds.split(Split::Train), &cfg)
        .unwrap()
        .into_iter()
        .map(|mut c| {
            c.gt = BinauralClip::duplicate(&c.mono);
            c
        })
        .collect();
    for r in baseline_reports(&clips, &cfg.stft).unwrap() {
        assert!(r.mag < 1e-20, "{}", r.mag);
    }
}

#[test]
fn plots_have_expected_contents() {
    let (dir, ds) = dataset(6, 13);
    let cfg = quick(0);
    let model = PhysModel::new(&cfg.model, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let id = ds.manifest.clips[2].clip_id.clone();
    let out = dir.path().join("plots");
    plot_waveforms(&model, &cfg, &ds, std::slice::from_ref(&id), &out).unwrap();

    let gt = wav::read_binaural(&ds.clip_dir(&id).join("gt.wav")).unwrap();
    let mut r = csv::Reader::from_path(out.join(format!("{id}.csv"))).unwrap();
    assert_eq!(r.headers().unwrap().iter().collect::<Vec<_>>(), ["t", "gt_l", "gt_r", "pred_l", "pred_r", "base_l", "base_r"]);
    let rows: Vec<csv::StringRecord> = r.records().map(|x| x.unwrap()).collect();
    assert_eq!(rows.len(), gt.len());
    for (i, row) in rows.iter().enumerate() {
        assert_eq!(row[1].parse::<f64>().unwrap(), gt.left().samples()[i]);
        assert_eq!(row[2].parse::<f64>().unwrap(), gt.right().samples()[i]);
    }

    let svg = fs::read_to_string(out.join(format!("{id}.svg"))).unwrap();
    let doc = roxmltree::Document::parse(&svg).unwrap();
    assert_eq!(doc.root_element().tag_name().name(), "svg");
    assert_eq!(doc.descendants().filter(|n| n.has_tag_name("polyline")).count(), 6);

    assert!(plot_waveforms(&model, &cfg, &ds, &["nope".to_string()], &out).is_err());
}

#[test]
fn precomputed_feature_ingestion() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("f.pftb");
    let values: Vec<f32> = (0..16).map(|i| i as f32 * 0.25 - 1.0).collect();

    pftb::write(&path, &Tensor::new(vec![16], values.clone()).unwrap()).unwrap();
    let same = load_precomputed_features(&path, FeatureSource::Rgb, 16).unwrap();
    assert_eq!(same.warning, None);
    assert_eq!(same.feature.values, values.iter().map(|&v| v as f64).collect::<Vec<_>>());
    assert_eq!(same.feature.source, FeatureSource::Rgb);

    let half = load_precomputed_features(&path, FeatureSource::Depth, 8).unwrap();
    assert!(half.warning.is_some());
    assert_eq!(half.feature.values, values[..8].iter().map(|&v| v as f64).collect::<Vec<_>>());

    let padded = load_precomputed_features(&path, FeatureSource::Phys, 20).unwrap();
    assert!(padded.warning.is_some());
    assert_eq!(&padded.feature.values[16..], &[0.0; 4]);

    pftb::write(&path, &Tensor::new(vec![4, 4], values).unwrap()).unwrap();
    assert!(load_precomputed_features(&path, FeatureSource::Rgb, 16).is_err());
    pftb::write(&path, &Tensor::new(vec![2], vec![1.0, f32::NAN]).unwrap()).unwrap();
    assert!(load_precomputed_features(&path, FeatureSource::Rgb, 2).is_err());
    fs::write(&path, b"NOPE\x01\x00\x01\x00").unwrap();
    assert!(load_precomputed_features(&path, FeatureSource::Rgb, 2).is_err());
}
