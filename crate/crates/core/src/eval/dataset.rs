use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, ImageEncoder};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::scene::{derive_seed, random_object, render_view, Environment, ObjectClass, ObjectView, ViewSpec};
use super::EvalError;
use crate::datapath::{read_ppm, write_ppm, Frame, DOWNSAMPLED_HEIGHT, DOWNSAMPLED_WIDTH, QCIF_HEIGHT, QCIF_WIDTH};
use crate::exec::Exec;
use crate::hand::{FingerId, HandModel, FULL_CLOSE_STEPS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub classes: Vec<ObjectClass>,
    pub runs_per_class: usize,
    /// Frames are split as evenly as possible so that the total is
    /// `round(mean * runs)`.
    pub mean_frames_per_run: f64,
    pub gain_distortion: bool,
    pub noise_sigma: f64,
    pub seed: u64,
    #[serde(skip)]
    pub exec: Exec,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            classes: ObjectClass::ALL.to_vec(),
            runs_per_class: 11,
            mean_frames_per_run: 6.47,
            gain_distortion: true,
            noise_sigma: 0.015,
            seed: 0,
            exec: Exec::default(),
        }
    }
}

/// One fingertip camera's view in one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct SubImage {
    pub camera_id: u8,
    /// 88x72 RGB888.
    pub frame: Frame,
    /// Ground-truth footprint, row-major 88x72, values 0/1.
    pub mask: Vec<u8>,
    pub coverage: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraspFrame {
    pub index: usize,
    /// k / (n - 1): 0 at minimal coverage, 1 at maximal.
    pub progress: f64,
    pub views: Vec<SubImage>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraspRun {
    pub class: ObjectClass,
    /// 0-based trial number within the class.
    pub run_id: usize,
    pub frames: Vec<GraspFrame>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub runs: Vec<GraspRun>,
}

impl Dataset {
    pub fn sub_image_count(&self) -> usize {
        self.runs.iter().flat_map(|r| &r.frames).map(|f| f.views.len()).sum()
    }

    pub fn frame_count(&self) -> usize {
        self.runs.iter().map(|r| r.frames.len()).sum()
    }

    pub fn classes(&self) -> Vec<ObjectClass> {
        let mut c: Vec<ObjectClass> = self.runs.iter().map(|r| r.class).collect();
        c.sort();
        c.dedup();
        c
    }

    pub fn runs_of(&self, class: ObjectClass) -> Vec<&GraspRun> {
        self.runs.iter().filter(|r| r.class == class).collect()
    }
}

/// Frames per run for `runs` runs with the given mean, shuffled by seed.
pub fn allocate_frames(runs: usize, mean: f64, seed: u64) -> Result<Vec<usize>, EvalError> {
    if runs == 0 {
        return Err(EvalError::InvalidConfig("no runs to generate".into()));
    }
    let total = (mean * runs as f64).round() as usize;
    let base = total / runs;
    if base < 2 {
        return Err(EvalError::InvalidConfig(format!(
            "mean of {mean} frames per run leaves runs with fewer than 2 frames"
        )));
    }
    let extra = total % runs;
    let mut counts: Vec<usize> = (0..runs).map(|i| base + usize::from(i < extra)).collect();
    counts.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, &[u64::MAX])));
    Ok(counts)
}

struct CameraPlan {
    closure: (f64, f64),
    coverage: (f64, f64),
    offset_start: (f64, f64),
    offset_end: (f64, f64),
    rotation: f64,
}

/// One grasp scene: environment, object and per-camera approach plan of a
/// run. Views can be taken at a grasp progress (dataset) or at an actual
/// finger displacement (live session).
pub struct GraspScene {
    seed: u64,
    class: ObjectClass,
    run_id: usize,
    environment: Environment,
    object: ObjectView,
    plans: Vec<CameraPlan>,
    hand: HandModel,
    pub gain_distortion: bool,
    pub noise_sigma: f64,
}

impl GraspScene {
    pub fn new(seed: u64, class: ObjectClass, run_id: usize, gain_distortion: bool, noise_sigma: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[class.index() as u64, run_id as u64]));
        let environment = Environment::random(&mut rng);
        let object = random_object(class, &mut rng);
        let full = FULL_CLOSE_STEPS as f64;
        let start = rng.gen_range(0.10..0.25) * full;
        let end = rng.gen_range(0.70..0.90) * full;
        let (w, h) = (f64::from(QCIF_WIDTH), f64::from(QCIF_HEIGHT));
        let plans = FingerId::ALL
            .iter()
            .map(|_| CameraPlan {
                closure: (start * rng.gen_range(0.9..1.1), (end * rng.gen_range(0.95..1.05)).min(full)),
                coverage: (rng.gen_range(0.02..0.08), rng.gen_range(0.90..0.97)),
                offset_start: (rng.gen_range(-0.25..0.25) * w, rng.gen_range(-0.25..0.25) * h),
                offset_end: (rng.gen_range(-0.04..0.04) * w, rng.gen_range(-0.04..0.04) * h),
                rotation: rng.gen_range(-0.4..0.4),
            })
            .collect();
        Self {
            seed,
            class,
            run_id,
            environment,
            object,
            plans,
            hand: HandModel::default(),
            gain_distortion,
            noise_sigma,
        }
    }

    /// View of `finger` at grasp progress `progress` in [0, 1]; `key`
    /// selects the sensor noise.
    pub fn view_at(&self, finger: FingerId, progress: f64, key: u64) -> Result<ViewSpec, EvalError> {
        let plan = &self.plans[finger.index()];
        let p = progress.clamp(0.0, 1.0);
        let displacement = plan.closure.0 + (plan.closure.1 - plan.closure.0) * p;
        self.view(finger, p, displacement, key)
    }

    /// View of `finger` at tendon displacement `displacement` (steps); the
    /// object approaches as the finger travels through its planned closure.
    pub fn view_for_displacement(&self, finger: FingerId, displacement: f64, key: u64) -> Result<ViewSpec, EvalError> {
        let plan = &self.plans[finger.index()];
        let p = ((displacement - plan.closure.0) / (plan.closure.1 - plan.closure.0)).clamp(0.0, 1.0);
        self.view(finger, p, displacement.clamp(0.0, FULL_CLOSE_STEPS as f64), key)
    }

    fn view(&self, finger: FingerId, p: f64, displacement: f64, key: u64) -> Result<ViewSpec, EvalError> {
        let plan = &self.plans[finger.index()];
        let lerp = |a: f64, b: f64| a + (b - a) * p;
        let pose = self.hand.camera_pose_at(finger, displacement)?;
        let (w, h) = (f64::from(QCIF_WIDTH), f64::from(QCIF_HEIGHT));
        let mut view = self.object;
        view.rotation += plan.rotation;
        view.center = (
            w / 2.0 + lerp(plan.offset_start.0, plan.offset_end.0),
            h / 2.0 + lerp(plan.offset_start.1, plan.offset_end.1),
        );
        let object = view.fit_coverage(
            lerp(plan.coverage.0, plan.coverage.1),
            DOWNSAMPLED_WIDTH as usize,
            DOWNSAMPLED_HEIGHT as usize,
        );
        Ok(ViewSpec {
            camera_pose: pose,
            environment: self.environment,
            object,
            gain_distortion: self.gain_distortion,
            noise_seed: derive_seed(
                self.seed,
                &[self.class.index() as u64, self.run_id as u64, key, finger.index() as u64],
            ),
            noise_sigma: self.noise_sigma,
        })
    }
}

fn generate_run(cfg: &DatasetConfig, class: ObjectClass, run_id: usize, n_frames: usize) -> Result<GraspRun, EvalError> {
    let scene = GraspScene::new(cfg.seed, class, run_id, cfg.gain_distortion, cfg.noise_sigma);
    let mut frames = Vec::with_capacity(n_frames);
    for k in 0..n_frames {
        let progress = k as f64 / (n_frames - 1) as f64;
        let mut views = Vec::with_capacity(5);
        for finger in FingerId::ALL {
            let spec = scene.view_at(finger, progress, k as u64)?;
            let r = render_view(&spec, finger.index() as u8, k as u32);
            views.push(SubImage {
                camera_id: finger.index() as u8,
                frame: r.frame,
                mask: r.mask,
                coverage: r.coverage,
            });
        }
        frames.push(GraspFrame {
            index: k,
            progress,
            views,
        });
    }
    Ok(GraspRun { class, run_id, frames })
}

/// Render every run of every class. Deterministic in `cfg.seed`
/// regardless of the execution policy.
pub fn generate_dataset(cfg: &DatasetConfig) -> Result<Dataset, EvalError> {
    if cfg.classes.is_empty() {
        return Err(EvalError::NoClasses);
    }
    let total_runs = cfg.classes.len() * cfg.runs_per_class;
    let counts = allocate_frames(total_runs, cfg.mean_frames_per_run, cfg.seed)?;
    let jobs: Vec<(ObjectClass, usize, usize)> = cfg
        .classes
        .iter()
        .flat_map(|&c| (0..cfg.runs_per_class).map(move |r| (c, r)))
        .zip(counts)
        .map(|((c, r), n)| (c, r, n))
        .collect();
    let runs = cfg
        .exec
        .map(&jobs, |&(class, run, n)| generate_run(cfg, class, run, n))
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Dataset { runs })
}

fn write_pgm(mask: &[u8], width: u32, height: u32, path: &Path) -> Result<(), EvalError> {
    let file = std::io::BufWriter::new(std::fs::File::create(path)?);
    let bytes: Vec<u8> = mask.iter().map(|&m| m * 255).collect();
    PnmEncoder::new(file)
        .with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary))
        .write_image(&bytes, width, height, ExtendedColorType::L8)?;
    Ok(())
}

fn read_pgm(path: &Path) -> Result<(usize, usize, Vec<u8>), EvalError> {
    let img = image::ImageReader::open(path)?.with_guessed_format()?.decode()?.to_luma8();
    let (w, h) = img.dimensions();
    Ok((w as usize, h as usize, img.into_raw().into_iter().map(|v| u8::from(v > 127)).collect()))
}

pub const MANIFEST: &str = "manifest.txt";

/// Write frames as P6, masks as P5 and a `key=value` manifest, one line per
/// sub-image.
pub fn save_dataset(ds: &Dataset, root: &Path) -> Result<(), EvalError> {
    std::fs::create_dir_all(root)?;
    let mut manifest = String::from("# fingertip camera dataset: one sub-image per line\n");
    for run in &ds.runs {
        let rel_dir = format!("{}/run_{:02}", run.class, run.run_id);
        std::fs::create_dir_all(root.join(&rel_dir))?;
        for f in &run.frames {
            for v in &f.views {
                let image = format!("{rel_dir}/f{}_c{}.ppm", f.index, v.camera_id);
                let mask = format!("{rel_dir}/f{}_c{}.pgm", f.index, v.camera_id);
                write_ppm(&v.frame, &root.join(&image))?;
                write_pgm(&v.mask, u32::from(v.frame.width), u32::from(v.frame.height), &root.join(&mask))?;
                writeln!(
                    manifest,
                    "class={} run_id={} frame={} camera_id={} progress={} coverage={} image={image} mask={mask}",
                    run.class, run.run_id, f.index, v.camera_id, f.progress, v.coverage
                )
                .expect("writing to a String");
            }
        }
    }
    std::fs::write(root.join(MANIFEST), manifest)?;
    Ok(())
}

fn parse_line(line: &str, lineno: usize) -> Result<BTreeMap<&str, &str>, EvalError> {
    line.split_whitespace()
        .map(|kv| {
            kv.split_once('=')
                .ok_or_else(|| EvalError::Manifest(format!("line {lineno}: {kv:?} is not key=value")))
        })
        .collect()
}

/// Inverse of [`save_dataset`].
pub fn load_dataset(root: &Path) -> Result<Dataset, EvalError> {
    let text = std::fs::read_to_string(root.join(MANIFEST))?;
    let mut runs: BTreeMap<(ObjectClass, usize), BTreeMap<usize, GraspFrame>> = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let kv = parse_line(line, i + 1)?;
        let get = |k: &str| {
            kv.get(k)
                .copied()
                .ok_or_else(|| EvalError::Manifest(format!("line {}: missing {k}", i + 1)))
        };
        let bad = |k: &str| EvalError::Manifest(format!("line {}: bad {k}", i + 1));
        let class: ObjectClass = get("class")?.parse().map_err(EvalError::Manifest)?;
        let run_id: usize = get("run_id")?.parse().map_err(|_| bad("run_id"))?;
        let index: usize = get("frame")?.parse().map_err(|_| bad("frame"))?;
        let camera_id: u8 = get("camera_id")?.parse().map_err(|_| bad("camera_id"))?;
        let progress: f64 = get("progress")?.parse().map_err(|_| bad("progress"))?;
        let coverage: f64 = get("coverage")?.parse().map_err(|_| bad("coverage"))?;
        if !(0.0..=1.0).contains(&progress) {
            return Err(bad("progress"));
        }
        let frame = read_ppm(&root.join(get("image")?), camera_id, index as u32)?;
        let (mw, mh, mask) = read_pgm(&root.join(get("mask")?))?;
        if (mw, mh) != (frame.width as usize, frame.height as usize) {
            return Err(EvalError::Manifest(format!("line {}: mask and image sizes differ", i + 1)));
        }
        let entry = runs.entry((class, run_id)).or_default().entry(index).or_insert_with(|| GraspFrame {
            index,
            progress,
            views: Vec::new(),
        });
        entry.views.push(SubImage {
            camera_id,
            frame,
            mask,
            coverage,
        });
    }
    Ok(Dataset {
        runs: runs
            .into_iter()
            .map(|((class, run_id), frames)| GraspRun {
                class,
                run_id,
                frames: frames.into_values().collect(),
            })
            .collect(),
    })
}
