//! Acceptance suite: one `[PASS]`/`[FAIL]` line per criterion, each with a
//! pinned tolerance and runtime budget. Set `FVHAND_ACCEPTANCE_ONLY` to a
//! substring of a criterion name to run a subset.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use fvhand_core::datapath::{
    dcmi_decode, dcmi_encode, decode_stream, inject_fault, mux_serialize, DecodeEvent, DecodeStats, DropPolicy,
    FaultPolicy, Frame, Mux, MuxConfig, PixelFormat, DEFAULT_BUFFER_CAPACITY, LINK_RATE_BITS_PER_S, QCIF_HEIGHT,
    QCIF_WIDTH,
};
use fvhand_core::eval::{generate_dataset, kfold_by_run, run_experiment, DatasetConfig, ExperimentConfig};
use fvhand_core::exec::Exec;
use fvhand_core::hand::{
    coupled_displacement, split_coupled_displacement, HandModel, MotorId, TendonNetwork, COUPLED_FULL_CLOSE_STEPS,
    FULL_CLOSE_STEPS,
};
use fvhand_core::motion::{calibrate, Encoder, SimConfig, Simulator, CLOSING_TIME_TARGETS, STEPS_PER_REV};
use fvhand_core::segnet::{bce_loss, loss_and_gradient, QuantizedNet, SegNet, SegNetShape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

type Outcome = Result<String, String>;

struct Criterion {
    name: &'static str,
    budget: Duration,
    check: fn() -> Outcome,
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------------------------------------------------------------- network

const CONV_MACS: [u64; 5] = [2_737_152, 14_598_144, 912_384, 14_598_144, 456_192];

fn ledger_exact() -> Outcome {
    let net = SegNet::<f32>::init(SegNetShape::TABLE, 1);
    let x = Tensor::<f32>::zeros(72, 88, 3);
    let ledger = net.forward(&x).map_err(|e| e.to_string())?.ledger;
    ensure(ledger.conv_macs() == CONV_MACS, || format!("conv MACs {:?}", ledger.conv_macs()))?;
    ensure(ledger.total_macs() == 33_302_016, || format!("total MACs {}", ledger.total_macs()))?;
    let q = QuantizedNet::quantize(&net).map_err(|e| e.to_string())?;
    ensure(q.payload_bytes() == 7416, || format!("weight payload {} bytes", q.payload_bytes()))?;
    ensure(ledger.weight_bytes == 7416, || format!("ledger weight bytes {}", ledger.weight_bytes))?;
    Ok(format!("total MACs {}, weights {} B", ledger.total_macs(), q.payload_bytes()))
}

fn shape_chain() -> Outcome {
    let net = SegNet::<f32>::init(SegNetShape::TABLE, 2);
    let ledger = net
        .forward(&Tensor::<f32>::zeros(72, 88, 3))
        .map_err(|e| e.to_string())?
        .ledger;
    let expected = [
        ("conv1", 88, 72, 16),
        ("conv2", 88, 72, 16),
        ("maxpool", 22, 18, 16),
        ("conv3", 22, 18, 16),
        ("upsample", 88, 72, 16),
        ("concat", 88, 72, 32),
        ("conv4", 88, 72, 8),
        ("conv5", 88, 72, 1),
    ];
    let got: Vec<(&str, usize, usize, usize)> = ledger
        .layers
        .iter()
        .map(|l| (l.name.as_str(), l.width, l.height, l.channels))
        .collect();
    ensure(got == expected, || format!("shape chain {got:?}"))?;
    Ok(format!("{} layers match", expected.len()))
}

fn gradient_check() -> Outcome {
    let shape = SegNetShape {
        input_channels: 2,
        conv1: 2,
        conv2: 2,
        conv3: 2,
        conv4: 2,
    };
    let h = 1e-6;
    let mut worst = 0.0f64;
    let mut params = 0;
    for seed in 0..3u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let mut net = SegNet::<f64>::init(shape, seed);
        for l in &mut net.layers {
            for b in &mut l.bias {
                *b = rng.gen_range(0.05..0.3);
            }
        }
        let x = Tensor::new(8, 8, 2, (0..128).map(|_| rng.gen_range(0.0..1.0)).collect()).map_err(|e| e.to_string())?;
        let mask: Vec<u8> = (0..64).map(|_| rng.gen_range(0..2u8)).collect();
        let loss_of = |n: &SegNet<f64>| bce_loss(&n.forward(&x).expect("valid input").probability.data, &mask);
        let (_, grad) = loss_and_gradient(&net, &x, &mask).map_err(|e| e.to_string())?;
        for li in 0..5 {
            for bias in [false, true] {
                let n = if bias { net.layers[li].bias.len() } else { net.layers[li].kernel.len() };
                for i in 0..n {
                    let mut plus = net.clone();
                    let mut minus = net.clone();
                    if bias {
                        plus.layers[li].bias[i] += h;
                        minus.layers[li].bias[i] -= h;
                    } else {
                        plus.layers[li].kernel[i] += h;
                        minus.layers[li].kernel[i] -= h;
                    }
                    let numeric = (loss_of(&plus) - loss_of(&minus)) / (2.0 * h);
                    let analytic = if bias { grad[li].bias[i] } else { grad[li].kernel[i] };
                    let rel = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-6);
                    worst = worst.max(rel);
                    params += 1;
                }
            }
        }
    }
    ensure(worst < 1e-4, || format!("max relative error {worst:e}"))?;
    Ok(format!("{params} parameters, max relative error {worst:.2e} < 1e-4"))
}

/// HWC tensor as plain nested loops.
struct Naive {
    h: usize,
    w: usize,
    c: usize,
    v: Vec<f64>,
}

impl Naive {
    fn at(&self, y: usize, x: usize, c: usize) -> f64 {
        self.v[(y * self.w + x) * self.c + c]
    }
}

fn naive_conv(x: &Naive, kernel: &[f64], bias: &[f64], cout: usize) -> Naive {
    let mut v = vec![0.0; x.h * x.w * cout];
    for y in 0..x.h {
        for xx in 0..x.w {
            for co in 0..cout {
                let mut acc = bias[co];
                for ky in 0..3 {
                    for kx in 0..3 {
                        let (sy, sx) = (y as isize + ky as isize - 1, xx as isize + kx as isize - 1);
                        if sy < 0 || sx < 0 || sy >= x.h as isize || sx >= x.w as isize {
                            continue;
                        }
                        for ci in 0..x.c {
                            acc += kernel[((ky * 3 + kx) * x.c + ci) * cout + co] * x.at(sy as usize, sx as usize, ci);
                        }
                    }
                }
                v[(y * x.w + xx) * cout + co] = acc;
            }
        }
    }
    Naive { h: x.h, w: x.w, c: cout, v }
}

fn naive_relu(x: Naive) -> Naive {
    Naive {
        v: x.v.into_iter().map(|a| a.max(0.0)).collect(),
        ..x
    }
}

fn naive_forward(net: &SegNet<f64>, x: &Naive) -> Vec<f64> {
    let l = &net.layers;
    let a1 = naive_relu(naive_conv(x, &l[0].kernel, &l[0].bias, l[0].cout));
    let a2 = naive_relu(naive_conv(&a1, &l[1].kernel, &l[1].bias, l[1].cout));
    let (ph, pw) = (x.h / 4, x.w / 4);
    let mut p = Naive { h: ph, w: pw, c: a2.c, v: vec![0.0; ph * pw * a2.c] };
    for y in 0..ph {
        for xx in 0..pw {
            for c in 0..a2.c {
                let mut m = f64::NEG_INFINITY;
                for dy in 0..4 {
                    for dx in 0..4 {
                        m = m.max(a2.at(4 * y + dy, 4 * xx + dx, c));
                    }
                }
                p.v[(y * pw + xx) * a2.c + c] = m;
            }
        }
    }
    let a3 = naive_relu(naive_conv(&p, &l[2].kernel, &l[2].bias, l[2].cout));
    let cc = a3.c + a2.c;
    let mut cat = Naive { h: x.h, w: x.w, c: cc, v: vec![0.0; x.h * x.w * cc] };
    for y in 0..x.h {
        for xx in 0..x.w {
            for c in 0..a3.c {
                cat.v[(y * x.w + xx) * cc + c] = a3.at(y / 4, xx / 4, c);
            }
            for c in 0..a2.c {
                cat.v[(y * x.w + xx) * cc + a3.c + c] = a2.at(y, xx, c);
            }
        }
    }
    let a4 = naive_relu(naive_conv(&cat, &l[3].kernel, &l[3].bias, l[3].cout));
    let z5 = naive_conv(&a4, &l[4].kernel, &l[4].bias, l[4].cout);
    z5.v.into_iter().map(|z| 1.0 / (1.0 + (-z).exp())).collect()
}

fn conv_oracle() -> Outcome {
    let mut worst = 0.0f64;
    let mut checked = 0;
    for (seed, (h, w)) in [(8, 8), (12, 16), (16, 8), (20, 12)].into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed as u64);
        let mut net = SegNet::<f64>::init(SegNetShape::TABLE, seed as u64);
        for l in &mut net.layers {
            for b in &mut l.bias {
                *b = rng.gen_range(-0.2..0.2);
            }
        }
        let v: Vec<f64> = (0..h * w * 3).map(|_| rng.gen_range(0.0..1.0)).collect();
        let fast = net
            .forward(&Tensor::new(h, w, 3, v.clone()).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?
            .probability
            .data;
        let slow = naive_forward(&net, &Naive { h, w, c: 3, v });
        for (a, b) in fast.iter().zip(&slow) {
            worst = worst.max((a - b).abs() / b.abs().max(1e-300));
            checked += 1;
        }
    }
    ensure(worst < 1e-9, || format!("max relative deviation {worst:e}"))?;
    Ok(format!("{checked} outputs, max relative deviation {worst:.2e} < 1e-9"))
}

// -------------------------------------------------------------- mechanism

fn mechanism_invariants() -> Outcome {
    let tendons = TendonNetwork::default();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut points = 0;
    for _ in 0..1000 {
        let stops: [i64; 3] = std::array::from_fn(|_| rng.gen_range(0..=FULL_CLOSE_STEPS));
        let capacity: i64 = stops.iter().sum();
        let mut motor = 0i64;
        for _ in 0..100 {
            motor = (motor + rng.gen_range(-5_000..=20_000)).clamp(0, capacity);
            let fingers = split_coupled_displacement(motor, stops).map_err(|e| e.to_string())?;
            let back = coupled_displacement(&fingers).map_err(|e| e.to_string())?;
            ensure(back == motor, || format!("virtual work: motor {motor} vs fingers {fingers:?}"))?;
            ensure(fingers.iter().zip(&stops).all(|(f, s)| f <= s), || format!("finger past its stop {fingers:?}"))?;
            let t = rng.gen_range(0.0..40.0);
            let split = tendons.distribute_tension(t, MotorId::Coupled).map_err(|e| e.to_string())?;
            ensure(split.iter().all(|&(_, ft)| ft == t), || format!("unequal tensions {split:?} for {t}"))?;
            points += 1;
        }
    }
    ensure(COUPLED_FULL_CLOSE_STEPS == 180_000 && MotorId::Coupled.full_close_steps() == 180_000, || {
        "coupled full close is not 180000".into()
    })?;
    for m in [MotorId::Thumb, MotorId::Index] {
        ensure(m.full_close_steps() == 60_000, || format!("{} full close {}", m.name(), m.full_close_steps()))?;
    }
    let hand = HandModel::default();
    let split = hand.finger_displacements([60_000, 60_000, 180_000]).map_err(|e| e.to_string())?;
    ensure(split == [60_000; 5], || format!("full close per finger {split:?}"))?;
    Ok(format!("{points} trajectory points exact; full close 60000 / 180000 steps"))
}

fn encoder_arithmetic() -> Outcome {
    ensure(STEPS_PER_REV == 47_104, || format!("steps per revolution {STEPS_PER_REV}"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let tau = std::f64::consts::TAU;
    let revolutions = 50u32;
    let pieces = 1_000_000;
    // Random partition of `revolutions` turns at random speeds: every piece
    // covers a random angle, and the angles sum to the whole.
    let cuts: Vec<f64> = {
        let mut c: Vec<f64> = (0..pieces - 1).map(|_| rng.gen_range(0.0..1.0)).collect();
        c.push(0.0);
        c.push(1.0);
        c.sort_by(f64::total_cmp);
        c
    };
    let total_angle = f64::from(revolutions) * tau;
    let mut enc = Encoder::default();
    let mut sum = 0i64;
    for win in cuts.windows(2) {
        let angle = (win[1] - win[0]) * total_angle;
        let dt = rng.gen_range(1e-5..1e-2);
        sum += enc.update(angle / dt, dt);
    }
    let expected = i64::from(revolutions) * 47_104;
    ensure(sum == expected && enc.count() == expected, || {
        format!("{pieces} pieces counted {sum}, expected {expected}")
    })?;
    let mut one = Encoder::default();
    ensure(one.update(tau, 1.0) == 47_104, || "one revolution is not 47104 counts".into())?;
    Ok(format!("{pieces} random pieces over {revolutions} revolutions: {sum} counts exact"))
}

fn closing_times() -> Outcome {
    let hand = HandModel::default();
    let report = calibrate(&SimConfig::default(), &hand, CLOSING_TIME_TARGETS).map_err(|e| e.to_string())?;
    let mut parts = Vec::new();
    for m in MotorId::ALL {
        let mut sim = Simulator::new(report.config.clone(), hand.clone()).map_err(|e| e.to_string())?;
        let t = sim.close_finger(m).map_err(|e| e.to_string())?.closing_time;
        let target = CLOSING_TIME_TARGETS[m.index()];
        ensure((t - target).abs() <= 0.03, || format!("{} closes in {t:.3} s, target {target} s", m.name()))?;
        parts.push(format!("{} {t:.3} s", m.name()));
    }
    Ok(format!("{} (targets 0.49/0.44/1.22 +- 0.03)", parts.join(", ")))
}

// --------------------------------------------------------------- datapath

fn qcif(camera: u8, counter: u32) -> Frame {
    let mut f = Frame::blank(camera, counter, QCIF_WIDTH, QCIF_HEIGHT, PixelFormat::Rgb565);
    f.pixels[0] = camera;
    f.pixels[1] = counter as u8;
    f
}

fn datapath() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut stream = Vec::new();
    let mut frames = Vec::new();
    for i in 0..10_000u32 {
        let (w, h) = (rng.gen_range(1..=48u16), rng.gen_range(1..=32u16));
        let format = if rng.gen_bool(0.5) { PixelFormat::Rgb565 } else { PixelFormat::Rgb888 };
        let len = usize::from(w) * usize::from(h) * format.bytes_per_pixel();
        // Bias towards 0xFF so byte stuffing is exercised heavily.
        let pixels = (0..len).map(|_| if rng.gen_bool(0.2) { 0xFF } else { rng.gen() }).collect();
        let f = Frame::new(rng.gen_range(0..5), i, w, h, format, pixels).map_err(|e| e.to_string())?;
        let packet = dcmi_encode(&f).map_err(|e| e.to_string())?;
        let back = dcmi_decode(&packet).map_err(|e| format!("frame {i}: {e:?}"))?;
        ensure(back == f, || format!("frame {i} changed in the round trip"))?;
        stream.extend_from_slice(&packet);
        frames.push(f);
    }
    let events = decode_stream(&stream);
    let stats = DecodeStats::from_events(&events);
    ensure(stats.sync_losses == 0 && stats.frames == 10_000, || format!("stream decode {stats:?}"))?;

    let small = Frame::new(1, 9, 4, 2, PixelFormat::Rgb565, (0..16).map(|i| i * 17).collect()).map_err(|e| e.to_string())?;
    let packet = dcmi_encode(&small).map_err(|e| e.to_string())?;
    let bits = packet.len() * 8;
    let mut detected = 0;
    for bit in 0..bits {
        let mut p = packet.clone();
        p[bit / 8] ^= 1 << (bit % 8);
        if dcmi_decode(&p).is_err() {
            detected += 1;
        }
    }
    ensure(detected == bits, || format!("{detected} of {bits} single-bit flips detected"))?;

    let schedule: Vec<Vec<Frame>> = (0..20).map(|t| (0..5).map(|c| qcif(c, t)).collect()).collect();
    let (_, mstats) = mux_serialize(schedule, MuxConfig::default()).map_err(|e| e.to_string())?;
    let rate = mstats.payload_bit_rate();
    ensure(rate == 40_550_400.0 && rate < LINK_RATE_BITS_PER_S, || format!("aggregate {rate} bit/s"))?;
    ensure(mstats.drop_count == 0, || format!("{} drops at the default budget", mstats.drop_count))?;
    ensure(DEFAULT_BUFFER_CAPACITY == 330 * 1024, || format!("buffer {DEFAULT_BUFFER_CAPACITY} B"))?;

    let mut schedules = 0;
    for s in 0..300u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + s);
        let config = MuxConfig {
            capacity: rng.gen_range(1..12) * 50_688 + rng.gen_range(0..50_688),
            policy: if s % 2 == 0 { DropPolicy::DropNewest } else { DropPolicy::DropOldest },
            exec: Exec::Sequential,
            ..MuxConfig::default()
        };
        let mut mux = Mux::new(config).map_err(|e| e.to_string())?;
        let mut counters = [0u32; 5];
        for _ in 0..rng.gen_range(1..30) {
            // Bursts: a camera may deliver many frames in one window.
            let arrivals: Vec<Frame> = (0..rng.gen_range(0..25))
                .map(|_| {
                    let c = rng.gen_range(0..5u8);
                    counters[c as usize] += 1;
                    qcif(c, counters[c as usize])
                })
                .collect();
            mux.step(arrivals).map_err(|e| e.to_string())?;
            let b = mux.budget();
            ensure(b.occupancy <= b.capacity, || format!("occupancy {} over capacity {}", b.occupancy, b.capacity))?;
        }
        schedules += 1;
    }
    Ok(format!(
        "10000 frames round-trip, {bits}/{bits} bit flips caught, {rate} bit/s with 0 drops, {schedules} adversarial schedules within capacity"
    ))
}

fn fault_signature() -> Outcome {
    let mut stream = Vec::new();
    for c in 0..6_000u32 {
        let px = (0..8 * 4 * 2).map(|i| (i as u32 * 31 + c) as u8).collect();
        let f = Frame::new((c % 5) as u8, c, 8, 4, PixelFormat::Rgb565, px).map_err(|e| e.to_string())?;
        stream.extend(dcmi_encode(&f).map_err(|e| e.to_string())?);
    }
    let policy = FaultPolicy::DeadAfterCycles {
        first_corrupt: 4968,
        dead: 5665,
        corrupt_probability: 0.5,
    };
    let damaged = inject_fault(&stream, policy, 42).map_err(|e| e.to_string())?;
    let events = catch_unwind(|| decode_stream(&damaged)).map_err(|_| "decoder panicked".to_string())?;
    let stats = DecodeStats::from_events(&events);
    let first = stats
        .first_loss
        .and_then(|l| l.frame)
        .map(|t| t.frame_counter)
        .ok_or("no sync loss reported")?;
    ensure(first == 4968, || format!("first sync loss at cycle {first}"))?;
    let late = events
        .iter()
        .filter(|e| matches!(e, DecodeEvent::Frame(f) if f.frame_counter >= 5665))
        .count();
    ensure(late == 0, || format!("{late} frames decoded at or after cycle 5665"))?;
    let clean = events
        .iter()
        .filter(|e| matches!(e, DecodeEvent::Frame(f) if f.frame_counter < 4968))
        .count();
    ensure(clean == 4968, || format!("{clean} of 4968 frames before the fault"))?;
    Ok(format!(
        "first sync loss at cycle {first}, 0 frames from cycle 5665, {} frames and {} sync losses in total",
        stats.frames, stats.sync_losses
    ))
}

// ------------------------------------------------------------- perception

fn perception() -> Outcome {
    let ds = generate_dataset(&DatasetConfig::default()).map_err(|e| e.to_string())?;
    ensure(ds.runs.len() == 55, || format!("{} runs", ds.runs.len()))?;
    let subs = ds.sub_image_count();
    ensure(subs == 1780, || format!("{subs} sub-images"))?;
    let cfg = ExperimentConfig::default();
    for class in ds.classes() {
        let runs = ds.runs_of(class);
        for split in kfold_by_run(&runs, cfg.folds).map_err(|e| e.to_string())? {
            for t in &split.test {
                ensure(split.train.iter().all(|r| r.run_id != t.run_id), || {
                    format!("{class} fold {}: run {} on both sides", split.fold, t.run_id)
                })?;
            }
        }
    }
    let report = run_experiment(&ds, &cfg).map_err(|e| e.to_string())?;
    let q = report.quartiles.map(|s| s.map(|s| s.mean));
    let (Some(q1), Some(q4)) = (q[0], q[3]) else {
        return Err(format!("empty quartile: {q:?}"));
    };
    ensure(q1 > 0.90, || format!("1st-quartile mean {q1:.4} not above 0.90"))?;
    ensure(q4 < q1, || format!("4th-quartile mean {q4:.4} not below 1st {q1:.4}"))?;
    let fmt: Vec<String> = q.iter().map(|m| m.map_or("-".into(), |m| format!("{m:.4}"))).collect();
    Ok(format!(
        "{subs} sub-images, {} folds, quartile means [{}], mean {:.4}, int8 {:.4}",
        report.folds.len(),
        fmt.join(", "),
        report.mean_accuracy,
        report.mean_quantized_accuracy
    ))
}

// ------------------------------------------------------------ determinism

fn bin() -> PathBuf {
    PathBuf::from(env!("CARGO_BIN_EXE_fvhand"))
}

fn hash_path(path: &Path, hasher: &mut Sha256) -> Result<(), String> {
    if path.is_dir() {
        let mut entries: Vec<PathBuf> = std::fs::read_dir(path)
            .map_err(|e| e.to_string())?
            .map(|e| e.map(|e| e.path()).map_err(|e| e.to_string()))
            .collect::<Result<_, _>>()?;
        entries.sort();
        for e in entries {
            hasher.update(e.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default().as_bytes());
            hash_path(&e, hasher)?;
        }
    } else if path.exists() {
        hasher.update(std::fs::read(path).map_err(|e| e.to_string())?);
    }
    Ok(())
}

fn tree_hash(path: &Path) -> Result<String, String> {
    let mut h = Sha256::new();
    hash_path(path, &mut h)?;
    Ok(format!("{:x}", h.finalize()))
}

/// Run the binary in `dir` and hash its stdout plus the named outputs.
fn run_hashed(dir: &Path, args: &[&str], outputs: &[&str]) -> Result<String, String> {
    let out = Command::new(bin())
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .output()
        .map_err(|e| e.to_string())?;
    ensure(out.status.success(), || {
        format!("{args:?} failed: {}", String::from_utf8_lossy(&out.stderr))
    })?;
    let mut h = Sha256::new();
    h.update(&out.stdout);
    for o in outputs {
        hash_path(&dir.join(o), &mut h)?;
    }
    Ok(format!("{:x}", h.finalize()))
}

fn twice(root: &Path, name: &str, args: &[&str], outputs: &[&str], setup: &[(&str, &str)]) -> Result<(), String> {
    let mut hashes = Vec::new();
    for run in 0..2 {
        let dir = root.join(format!("{name}-{run}"));
        std::fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
        for (link, target) in setup {
            copy_tree(&root.join(target), &dir.join(link))?;
        }
        hashes.push(run_hashed(&dir, args, outputs)?);
    }
    ensure(hashes[0] == hashes[1], || format!("{name}: runs differ"))
}

fn copy_tree(from: &Path, to: &Path) -> Result<(), String> {
    if from.is_dir() {
        std::fs::create_dir_all(to).map_err(|e| e.to_string())?;
        for e in std::fs::read_dir(from).map_err(|e| e.to_string())? {
            let e = e.map_err(|e| e.to_string())?;
            copy_tree(&e.path(), &to.join(e.file_name()))?;
        }
        Ok(())
    } else {
        std::fs::copy(from, to).map(|_| ()).map_err(|e| e.to_string())
    }
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let root = tmp.path();
    let small = [
        "--seed", "5", "--set", "classes=lemon", "--set", "runs_per_class=3", "--set", "mean_frames=3",
    ];

    // Reference: the full-scale dataset, generated twice.
    let t = Instant::now();
    twice(root, "dataset-full", &["dataset-gen", "--seed", "5", "--out", "ds"], &["ds"], &[])?;
    let dataset_gen = t.elapsed() / 2;

    let t = Instant::now();
    let mut args: Vec<&str> = vec!["dataset-gen", "--out", "ds"];
    args.extend(small);
    twice(root, "dataset-small", &args, &["ds"], &[])?;
    copy_tree(&root.join("dataset-small-0/ds"), &root.join("small-ds"))?;
    let seq_dir = root.join("dataset-sequential");
    std::fs::create_dir_all(&seq_dir).map_err(|e| e.to_string())?;
    args.extend(["--set", "parallel=false"]);
    run_hashed(&seq_dir, &args, &[])?;
    ensure(tree_hash(&seq_dir.join("ds"))? == tree_hash(&root.join("small-ds"))?, || {
        "sequential and parallel datasets differ".into()
    })?;

    twice(root, "simulate", &["simulate", "--close", "index", "--duration", "1.0", "--out", "t.csv"], &["t.csv"], &[])?;
    let script = root.join("script.txt");
    std::fs::write(&script, "0.0 1 press\n0.3 1 press\n0.4 3 press\n").map_err(|e| e.to_string())?;
    twice(root, "simulate-script", &["simulate", "--script", "s.txt", "--duration", "0.8"], &[], &[("s.txt", "script.txt")])?;
    twice(root, "calibrate", &["calibrate", "--out", "cal.json"], &["cal.json"], &[])?;

    let train_args = [
        "train", "--data", "ds", "--out", "w.fvsn", "--losses", "l.csv", "--seed", "5", "--set", "epochs=2",
    ];
    twice(root, "train", &train_args, &["w.fvsn", "l.csv"], &[("ds", "small-ds")])?;
    std::fs::copy(root.join("train-0/w.fvsn"), root.join("w.fvsn")).map_err(|e| e.to_string())?;
    twice(
        root,
        "infer",
        &["infer", "--weights", "w.fvsn", "--ledger", "--mask-out", "m.pgm"],
        &["m.pgm"],
        &[("w.fvsn", "w.fvsn")],
    )?;
    let eval_args = [
        "eval", "--data", "ds", "--out", "rep", "--set", "folds=3", "--set", "epochs=1", "--set", "tuning_class=none",
    ];
    twice(root, "eval", &eval_args, &["rep"], &[("ds", "small-ds")])?;
    twice(root, "encode", &["encode", "--out", "p.bin", "--camera", "2", "--counter", "9"], &["p.bin"], &[])?;
    twice(root, "mux", &["mux", "--out", "s.bin", "--cycles", "40", "--ber", "1e-6", "--stats", "st.json"], &["s.bin", "st.json"], &[])?;
    std::fs::copy(root.join("mux-0/s.bin"), root.join("s.bin")).map_err(|e| e.to_string())?;
    twice(root, "replay", &["replay", "--input", "s.bin", "--frames-out", "fr"], &["fr"], &[("s.bin", "s.bin")])?;
    let rest = t.elapsed();

    ensure(rest < 2 * dataset_gen, || {
        format!(
            "double runs took {:.1} s, over twice the dataset-gen runtime {:.1} s",
            rest.as_secs_f64(),
            dataset_gen.as_secs_f64()
        )
    })?;
    Ok(format!(
        "11 subcommand configurations byte-identical twice, sequential dataset equals parallel; double runs {:.1} s < 2 x dataset-gen {:.1} s",
        rest.as_secs_f64(),
        dataset_gen.as_secs_f64()
    ))
}

fn main() {
    let criteria = [
        Criterion { name: "resource ledger matches the layer table", budget: Duration::from_secs(1), check: ledger_exact },
        Criterion { name: "shape chain on an 88x72x3 input", budget: Duration::from_secs(1), check: shape_chain },
        Criterion { name: "analytic gradient matches central differences", budget: Duration::from_secs(10), check: gradient_check },
        Criterion { name: "forward pass matches the nested-loop oracle", budget: Duration::from_secs(10), check: conv_oracle },
        Criterion { name: "tendon mechanism invariants", budget: Duration::from_secs(5), check: mechanism_invariants },
        Criterion { name: "encoder arithmetic is drift-free", budget: Duration::from_secs(5), check: encoder_arithmetic },
        Criterion { name: "closing times after calibration", budget: Duration::from_secs(60), check: closing_times },
        Criterion { name: "datapath round trip, CRC and link budget", budget: Duration::from_secs(30), check: datapath },
        Criterion { name: "dead-link fault signature", budget: Duration::from_secs(10), check: fault_signature },
        Criterion { name: "perception experiment", budget: Duration::from_secs(15 * 60), check: perception },
        Criterion { name: "determinism of every batch subcommand", budget: Duration::from_secs(180), check: determinism },
    ];
    let only = std::env::var("FVHAND_ACCEPTANCE_ONLY").ok();
    let mut failed = 0;
    let mut results = BTreeMap::new();
    for c in criteria.iter().filter(|c| only.as_deref().map_or(true, |o| c.name.contains(o))) {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(c.check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        let elapsed = start.elapsed();
        let timing = format!("{:.2} s of {} s", elapsed.as_secs_f64(), c.budget.as_secs());
        let outcome = match outcome {
            Ok(detail) if elapsed > c.budget => Err(format!("{detail}; over the runtime budget")),
            other => other,
        };
        match &outcome {
            Ok(detail) => println!("[PASS] {}: {detail} ({timing})", c.name),
            Err(e) => {
                failed += 1;
                println!("[FAIL] {}: {e} ({timing})", c.name);
            }
        }
        results.insert(c.name, outcome.is_ok());
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
