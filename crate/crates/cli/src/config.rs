//! Run configuration: built-in defaults, then a `key=value` file, then
//! `--set key=value` and dedicated flags, in that order.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use fvhand_core::datapath::{DropPolicy, MuxConfig, DEFAULT_BUFFER_CAPACITY};
use fvhand_core::eval::{DatasetConfig, ExperimentConfig, ObjectClass};
use fvhand_core::exec::Exec;
use fvhand_core::motion::SimConfig;
use fvhand_core::segnet::TrainConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub classes: Vec<ObjectClass>,
    pub runs_per_class: usize,
    pub mean_frames: f64,
    pub gain_distortion: bool,
    pub noise_sigma: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub crop: Option<(usize, usize)>,
    pub folds: usize,
    pub tuning_class: Option<ObjectClass>,
    pub parallel: bool,
    pub drive_velocity: f64,
    pub supply_voltage: f64,
    pub substeps: u32,
    pub buffer_capacity: usize,
    pub drop_policy: DropPolicy,
    pub port: u16,
    pub speed: f64,
    pub state_rate_hz: u32,
    pub frame_rate_hz: u32,
    pub scene_class: ObjectClass,
}

impl Default for RunConfig {
    fn default() -> Self {
        let train = ExperimentConfig::default().train;
        let sim = SimConfig::default();
        Self {
            seed: 0,
            classes: ObjectClass::ALL.to_vec(),
            runs_per_class: 11,
            mean_frames: 6.47,
            gain_distortion: true,
            noise_sigma: 0.015,
            epochs: train.epochs,
            batch_size: train.batch_size,
            learning_rate: train.learning_rate,
            crop: train.crop,
            folds: 11,
            tuning_class: Some(ObjectClass::Bowl),
            parallel: true,
            drive_velocity: sim.drive_velocity,
            supply_voltage: sim.supply_voltage,
            substeps: sim.substeps,
            buffer_capacity: DEFAULT_BUFFER_CAPACITY,
            drop_policy: DropPolicy::DropNewest,
            port: 7878,
            speed: 1.0,
            state_rate_hz: 50,
            frame_rate_hz: 20,
            scene_class: ObjectClass::Lemon,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, String> {
    value.parse().map_err(|_| format!("invalid value {value:?} for {key}"))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, String> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(format!("invalid value {value:?} for {key}, expected true or false")),
    }
}

fn parse_optional_class(key: &str, value: &str) -> Result<Option<ObjectClass>, String> {
    if value == "none" {
        Ok(None)
    } else {
        value.parse().map(Some).map_err(|e| format!("{key}: {e}"))
    }
}

fn class_list(classes: &[ObjectClass]) -> String {
    classes.iter().map(|c| c.name()).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let value = value.trim();
        match key.trim() {
            "seed" => self.seed = parse(key, value)?,
            "classes" => {
                self.classes = value
                    .split(',')
                    .map(|c| c.trim().parse::<ObjectClass>())
                    .collect::<Result<_, _>>()
                    .map_err(|e| format!("classes: {e}"))?
            }
            "runs_per_class" => self.runs_per_class = parse(key, value)?,
            "mean_frames" => self.mean_frames = parse(key, value)?,
            "gain_distortion" => self.gain_distortion = parse_bool(key, value)?,
            "noise_sigma" => self.noise_sigma = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "learning_rate" => self.learning_rate = parse(key, value)?,
            "crop" => {
                self.crop = if value == "none" {
                    None
                } else {
                    let (h, w) = value
                        .split_once('x')
                        .ok_or_else(|| format!("crop must be HxW or none, got {value:?}"))?;
                    Some((parse(key, h)?, parse(key, w)?))
                }
            }
            "folds" => self.folds = parse(key, value)?,
            "tuning_class" => self.tuning_class = parse_optional_class(key, value)?,
            "parallel" => self.parallel = parse_bool(key, value)?,
            "drive_velocity" => self.drive_velocity = parse(key, value)?,
            "supply_voltage" => self.supply_voltage = parse(key, value)?,
            "substeps" => self.substeps = parse(key, value)?,
            "buffer_capacity" => self.buffer_capacity = parse(key, value)?,
            "drop_policy" => {
                self.drop_policy = match value {
                    "newest" => DropPolicy::DropNewest,
                    "oldest" => DropPolicy::DropOldest,
                    _ => return Err(format!("drop_policy must be newest or oldest, got {value:?}")),
                }
            }
            "port" => self.port = parse(key, value)?,
            "speed" => self.speed = parse(key, value)?,
            "state_rate_hz" => self.state_rate_hz = parse(key, value)?,
            "frame_rate_hz" => self.frame_rate_hz = parse(key, value)?,
            "scene_class" => self.scene_class = value.parse().map_err(|e| format!("scene_class: {e}"))?,
            other => return Err(format!("unknown config key {other:?}")),
        }
        Ok(())
    }

    /// Apply `key=value` lines; blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<(), String> {
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| format!("line {}: expected key=value, got {line:?}", i + 1))?;
            self.set(k, v).map_err(|e| format!("line {}: {e}", i + 1))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        self.apply_text(&text)
    }

    /// The fully resolved configuration as `key=value` lines, readable by
    /// [`RunConfig::apply_text`].
    pub fn render(&self) -> String {
        let mut s = String::new();
        let crop = self.crop.map_or("none".to_string(), |(h, w)| format!("{h}x{w}"));
        let tuning = self.tuning_class.map_or("none", |c| c.name());
        let policy = match self.drop_policy {
            DropPolicy::DropNewest => "newest",
            DropPolicy::DropOldest => "oldest",
        };
        let rows: [(&str, String); 23] = [
            ("seed", self.seed.to_string()),
            ("classes", class_list(&self.classes)),
            ("runs_per_class", self.runs_per_class.to_string()),
            ("mean_frames", self.mean_frames.to_string()),
            ("gain_distortion", self.gain_distortion.to_string()),
            ("noise_sigma", self.noise_sigma.to_string()),
            ("epochs", self.epochs.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("learning_rate", self.learning_rate.to_string()),
            ("crop", crop),
            ("folds", self.folds.to_string()),
            ("tuning_class", tuning.to_string()),
            ("parallel", self.parallel.to_string()),
            ("drive_velocity", self.drive_velocity.to_string()),
            ("supply_voltage", self.supply_voltage.to_string()),
            ("substeps", self.substeps.to_string()),
            ("buffer_capacity", self.buffer_capacity.to_string()),
            ("drop_policy", policy.to_string()),
            ("port", self.port.to_string()),
            ("speed", self.speed.to_string()),
            ("state_rate_hz", self.state_rate_hz.to_string()),
            ("frame_rate_hz", self.frame_rate_hz.to_string()),
            ("scene_class", self.scene_class.name().to_string()),
        ];
        for (k, v) in rows {
            let _ = writeln!(s, "{k}={v}");
        }
        s
    }

    pub fn exec(&self) -> Exec {
        if self.parallel {
            Exec::Parallel
        } else {
            Exec::Sequential
        }
    }

    pub fn dataset(&self) -> DatasetConfig {
        DatasetConfig {
            classes: self.classes.clone(),
            runs_per_class: self.runs_per_class,
            mean_frames_per_run: self.mean_frames,
            gain_distortion: self.gain_distortion,
            noise_sigma: self.noise_sigma,
            seed: self.seed,
            exec: self.exec(),
        }
    }

    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            seed: self.seed,
            crop: self.crop,
            exec: self.exec(),
            ..TrainConfig::default()
        }
    }

    pub fn experiment(&self) -> ExperimentConfig {
        ExperimentConfig {
            tuning_class: self.tuning_class,
            folds: self.folds,
            train: self.train(),
            exec: self.exec(),
        }
    }

    pub fn sim(&self) -> SimConfig {
        SimConfig {
            drive_velocity: self.drive_velocity,
            supply_voltage: self.supply_voltage,
            substeps: self.substeps,
            ..SimConfig::default()
        }
    }

    pub fn mux(&self) -> MuxConfig {
        MuxConfig {
            capacity: self.buffer_capacity,
            policy: self.drop_policy,
            exec: self.exec(),
            ..MuxConfig::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_round_trips() {
        let mut c = RunConfig::default();
        c.apply_text("seed=7\n# comment\ncrop=none\nclasses=lemon,cup\ntuning_class=none\ndrop_policy=oldest\n")
            .unwrap();
        let mut back = RunConfig::default();
        back.apply_text(&c.render()).unwrap();
        assert_eq!(back, c);
        assert_eq!(c.seed, 7);
        assert_eq!(c.crop, None);
    }

    #[test]
    fn bad_input_is_reported() {
        let mut c = RunConfig::default();
        assert!(c.apply_text("nonsense").is_err());
        assert!(c.apply_text("colour=red").is_err());
        assert!(c.apply_text("epochs=many").is_err());
        assert!(c.apply_text("classes=lemon,banana").is_err());
        assert!(c.apply_text("crop=24").is_err());
    }
}
