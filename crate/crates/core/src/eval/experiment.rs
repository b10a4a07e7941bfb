use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::kfold::{kfold_by_run, Split};
use super::metrics::{iou, pixel_accuracy, quartile_accuracy, quartile_of, QuartileStat};
use super::scene::derive_seed;
use super::{Dataset, EvalError, GraspRun, ObjectClass, SubImage};
use crate::exec::Exec;
use crate::hand::FingerId;
use crate::segnet::{train, QuantizedNet, Sample, SegNet, SegNetShape, Tensor, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// Class used only for choosing hyperparameters; it is trained on all
    /// but its last run and validated on that run, and excluded from the
    /// aggregate figures. Ignored when it is the only class present.
    pub tuning_class: Option<ObjectClass>,
    pub folds: usize,
    pub train: TrainConfig,
    /// Policy for running folds concurrently.
    pub exec: Exec,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            tuning_class: Some(ObjectClass::Bowl),
            folds: 11,
            train: TrainConfig {
                epochs: 30,
                crop: Some((28, 28)),
                ..TrainConfig::default()
            },
            exec: Exec::default(),
        }
    }
}

/// Evaluation of one test sub-image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameResult {
    pub class: ObjectClass,
    pub fold: usize,
    pub run_id: usize,
    pub frame: usize,
    pub camera_id: u8,
    pub progress: f64,
    pub coverage: f64,
    pub accuracy: f64,
    pub iou: f64,
    /// Accuracy of the int8-quantized network against the ground truth.
    pub quantized_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub class: ObjectClass,
    pub fold: usize,
    pub test_runs: Vec<usize>,
    pub train_runs: Vec<usize>,
    pub train_sub_images: usize,
    pub test_sub_images: usize,
    pub final_loss: f64,
    pub accuracy: f64,
    pub iou: f64,
    pub quantized_accuracy: f64,
    pub frames: Vec<FrameResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FingerStat {
    pub finger: String,
    pub camera_id: u8,
    pub mean: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassCurve {
    pub class: ObjectClass,
    pub mean: f64,
    pub quartiles: [Option<QuartileStat>; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config: ExperimentConfig,
    /// Validation fold of the tuning class, not part of the aggregates.
    pub tuning: Option<FoldResult>,
    pub folds: Vec<FoldResult>,
    /// Mean over every evaluated sub-image.
    pub mean_accuracy: f64,
    pub mean_iou: f64,
    pub mean_quantized_accuracy: f64,
    /// Every sub-image weighs the same (primary figure).
    pub quartiles: [Option<QuartileStat>; 4],
    /// Every run weighs the same within a quartile.
    pub quartiles_run_weighted: [Option<f64>; 4],
    pub per_finger: Vec<FingerStat>,
    pub per_class: Vec<ClassCurve>,
}

/// Network input and training target for one sub-image.
pub fn sample_of(view: &SubImage) -> Result<Sample<f32>, EvalError> {
    let rgb = view.frame.to_rgb888();
    let image = Tensor::from_rgb8(usize::from(rgb.height), usize::from(rgb.width), &rgb.pixels)?;
    Ok(Sample {
        image,
        mask: view.mask.clone(),
    })
}

fn samples_of(runs: &[&GraspRun]) -> Result<Vec<Sample<f32>>, EvalError> {
    runs.iter()
        .flat_map(|r| &r.frames)
        .flat_map(|f| &f.views)
        .map(sample_of)
        .collect()
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Train a fresh network on the split's training runs and score every test
/// sub-image with both the float and the quantized network.
pub fn evaluate_fold(split: &Split<'_>, cfg: &ExperimentConfig) -> Result<FoldResult, EvalError> {
    let class = split.test[0].class;
    let seed = derive_seed(cfg.train.seed, &[class.index() as u64, split.fold as u64]);
    let train_samples = samples_of(&split.train)?;
    let mut net = SegNet::<f32>::init(SegNetShape::TABLE, seed);
    let losses = train(&mut net, &train_samples, &TrainConfig { seed, ..cfg.train })?;
    let quantized = QuantizedNet::quantize(&net)?.dequantize::<f32>();

    let mut frames = Vec::new();
    for run in &split.test {
        for f in &run.frames {
            for v in &f.views {
                let s = sample_of(v)?;
                let pred = net.forward(&s.image)?.mask;
                let qpred = quantized.forward(&s.image)?.mask;
                frames.push(FrameResult {
                    class,
                    fold: split.fold,
                    run_id: run.run_id,
                    frame: f.index,
                    camera_id: v.camera_id,
                    progress: f.progress,
                    coverage: v.coverage,
                    accuracy: pixel_accuracy(&pred, &v.mask)?,
                    iou: iou(&pred, &v.mask)?,
                    quantized_accuracy: pixel_accuracy(&qpred, &v.mask)?,
                });
            }
        }
    }
    Ok(FoldResult {
        class,
        fold: split.fold,
        test_runs: split.test.iter().map(|r| r.run_id).collect(),
        train_runs: split.train.iter().map(|r| r.run_id).collect(),
        train_sub_images: train_samples.len(),
        test_sub_images: frames.len(),
        final_loss: losses.last().copied().unwrap_or(f64::NAN),
        accuracy: mean(frames.iter().map(|r| r.accuracy)),
        iou: mean(frames.iter().map(|r| r.iou)),
        quantized_accuracy: mean(frames.iter().map(|r| r.quantized_accuracy)),
        frames,
    })
}

fn run_weighted(frames: &[&FrameResult]) -> [Option<f64>; 4] {
    std::array::from_fn(|q| {
        let mut keys: Vec<(ObjectClass, usize)> = frames
            .iter()
            .filter(|r| quartile_of(r.progress) == Some(q))
            .map(|r| (r.class, r.run_id))
            .collect();
        keys.sort();
        keys.dedup();
        if keys.is_empty() {
            return None;
        }
        Some(mean(keys.iter().map(|&(c, id)| {
            mean(
                frames
                    .iter()
                    .filter(|r| r.class == c && r.run_id == id && quartile_of(r.progress) == Some(q))
                    .map(|r| r.accuracy),
            )
        })))
    })
}

/// Leave-one-run-out training and evaluation for every class but the tuning
/// class. Folds run under `cfg.exec`; results are merged in class and fold
/// order, so the report does not depend on the policy.
pub fn run_experiment(ds: &Dataset, cfg: &ExperimentConfig) -> Result<EvalReport, EvalError> {
    let classes = ds.classes();
    if classes.is_empty() {
        return Err(EvalError::NoClasses);
    }
    let tuning = cfg.tuning_class.filter(|t| classes.contains(t) && classes.len() > 1);
    let mut jobs: Vec<Split<'_>> = Vec::new();
    for &class in classes.iter().filter(|&&c| Some(c) != tuning) {
        jobs.extend(kfold_by_run(&ds.runs_of(class), cfg.folds)?);
    }
    if let Some(t) = tuning {
        let runs = ds.runs_of(t);
        if runs.len() < 2 {
            return Err(EvalError::FoldCount {
                class: t,
                runs: runs.len(),
                k: 2,
            });
        }
        let (test, train) = runs.split_last().expect("at least two runs");
        jobs.push(Split {
            fold: 0,
            train: train.to_vec(),
            test: vec![*test],
        });
    }
    let mut results = cfg
        .exec
        .map(&jobs, |split| evaluate_fold(split, cfg))
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
    let tuning = tuning.map(|_| results.pop().expect("tuning fold was queued last"));

    let frames: Vec<&FrameResult> = results.iter().flat_map(|f| &f.frames).collect();
    let pairs: Vec<(f64, f64)> = frames.iter().map(|r| (r.progress, r.accuracy)).collect();
    let per_finger = FingerId::ALL
        .iter()
        .map(|f| {
            let id = f.index() as u8;
            let accs: Vec<f64> = frames.iter().filter(|r| r.camera_id == id).map(|r| r.accuracy).collect();
            FingerStat {
                finger: f.name().to_string(),
                camera_id: id,
                mean: mean(accs.iter().copied()),
                count: accs.len(),
            }
        })
        .collect();
    let mut per_class = Vec::new();
    for class in results.iter().map(|f| f.class).collect::<std::collections::BTreeSet<_>>() {
        let own: Vec<&&FrameResult> = frames.iter().filter(|r| r.class == class).collect();
        let pairs: Vec<(f64, f64)> = own.iter().map(|r| (r.progress, r.accuracy)).collect();
        per_class.push(ClassCurve {
            class,
            mean: mean(own.iter().map(|r| r.accuracy)),
            quartiles: quartile_accuracy(&pairs)?,
        });
    }
    Ok(EvalReport {
        config: *cfg,
        tuning,
        mean_accuracy: mean(frames.iter().map(|r| r.accuracy)),
        mean_iou: mean(frames.iter().map(|r| r.iou)),
        mean_quantized_accuracy: mean(frames.iter().map(|r| r.quantized_accuracy)),
        quartiles: quartile_accuracy(&pairs)?,
        quartiles_run_weighted: run_weighted(&frames),
        per_finger,
        per_class,
        folds: results,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

impl EvalReport {
    pub fn frame_results(&self) -> impl Iterator<Item = &FrameResult> {
        self.folds.iter().flat_map(|f| &f.frames)
    }

    pub fn to_json(&self) -> Result<String, EvalError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn folds_csv(&self) -> String {
        let mut s = String::from("class,fold,test_run,train_sub_images,test_sub_images,final_loss,accuracy,iou,quantized_accuracy\n");
        for f in &self.folds {
            let test = f.test_runs.iter().map(usize::to_string).collect::<Vec<_>>().join(";");
            let _ = writeln!(
                s,
                "{},{},{test},{},{},{},{},{},{}",
                f.class, f.fold, f.train_sub_images, f.test_sub_images, f.final_loss, f.accuracy, f.iou, f.quantized_accuracy
            );
        }
        s
    }

    pub fn quartiles_csv(&self) -> String {
        let mut s = String::from("scope,quartile,mean,std,count,run_weighted_mean\n");
        let mut rows = |scope: &str, q: &[Option<QuartileStat>; 4], rw: Option<&[Option<f64>; 4]>| {
            for (i, stat) in q.iter().enumerate() {
                let _ = writeln!(
                    s,
                    "{scope},{},{},{},{},{}",
                    i + 1,
                    opt(stat.map(|x| x.mean)),
                    opt(stat.map(|x| x.std)),
                    stat.map_or(0, |x| x.count),
                    opt(rw.and_then(|r| r[i]))
                );
            }
        };
        rows("all", &self.quartiles, Some(&self.quartiles_run_weighted));
        for c in &self.per_class {
            rows(c.class.name(), &c.quartiles, None);
        }
        s
    }

    pub fn per_finger_csv(&self) -> String {
        let mut s = String::from("finger,camera_id,mean,count\n");
        for f in &self.per_finger {
            let _ = writeln!(s, "{},{},{},{}", f.finger, f.camera_id, f.mean, f.count);
        }
        s
    }

    pub fn frames_csv(&self) -> String {
        let mut s =
            String::from("class,fold,run_id,frame,camera_id,progress,coverage,accuracy,iou,quantized_accuracy\n");
        for r in self.frame_results() {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{}",
                r.class, r.fold, r.run_id, r.frame, r.camera_id, r.progress, r.coverage, r.accuracy, r.iou, r.quantized_accuracy
            );
        }
        s
    }

    /// `report.json` plus `folds.csv`, `quartiles.csv`, `per_finger.csv` and
    /// `frames.csv`.
    pub fn write(&self, dir: &Path) -> Result<(), EvalError> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("report.json"), self.to_json()?)?;
        std::fs::write(dir.join("folds.csv"), self.folds_csv())?;
        std::fs::write(dir.join("quartiles.csv"), self.quartiles_csv())?;
        std::fs::write(dir.join("per_finger.csv"), self.per_finger_csv())?;
        std::fs::write(dir.join("frames.csv"), self.frames_csv())?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::{generate_dataset, DatasetConfig};

    fn tiny() -> (Dataset, ExperimentConfig) {
        let ds = generate_dataset(
            &DatasetConfig {
                classes: vec![ObjectClass::Bowl, ObjectClass::Lemon],
                runs_per_class: 3,
                mean_frames_per_run: 2.0,
                seed: 9,
                ..DatasetConfig::default()
            },
        )
        .unwrap();
        let cfg = ExperimentConfig {
            folds: 3,
            train: TrainConfig {
                epochs: 1,
                crop: Some((16, 16)),
                ..ExperimentConfig::default().train
            },
            ..ExperimentConfig::default()
        };
        (ds, cfg)
    }

    #[test]
    fn accounting_and_determinism() {
        let (ds, cfg) = tiny();
        let a = run_experiment(&ds, &cfg).unwrap();
        assert_eq!(a.folds.len(), 3);
        assert!(a.folds.iter().all(|f| f.class == ObjectClass::Lemon));
        assert_eq!(a.tuning.as_ref().unwrap().class, ObjectClass::Bowl);
        let lemon_subs: usize = ds.runs_of(ObjectClass::Lemon).iter().map(|r| r.frames.len() * 5).sum();
        let counted: usize = a.quartiles.iter().flatten().map(|q| q.count).sum();
        assert_eq!(counted, lemon_subs);
        assert_eq!(a.per_finger.iter().map(|f| f.count).sum::<usize>(), lemon_subs);
        for f in &a.folds {
            assert!(!f.train_runs.contains(&f.test_runs[0]));
            assert!(f.frames.iter().all(|r| r.run_id == f.test_runs[0]));
        }
        for r in a.frame_results() {
            assert!((0.0..=1.0).contains(&r.accuracy) && (0.0..=1.0).contains(&r.iou));
        }
        let mut b = run_experiment(&ds, &ExperimentConfig { exec: Exec::Sequential, ..cfg }).unwrap();
        b.config = a.config;
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
        assert_eq!(a.folds_csv().lines().count(), 4);
    }

    #[test]
    fn fold_count_must_match() {
        let (ds, cfg) = tiny();
        assert!(matches!(
            run_experiment(&ds, &ExperimentConfig { folds: 11, ..cfg }),
            Err(EvalError::FoldCount { .. })
        ));
        assert!(matches!(run_experiment(&Dataset { runs: vec![] }, &cfg), Err(EvalError::NoClasses)));
    }
}
