//! One PASS/FAIL line per acceptance criterion; exits non-zero if any fails.
//!
//! Criteria 4, 5 and 7 need MNIST and FashionMNIST IDX files under `data/`
//! (see README); without them those lines fail rather than skip.

#[path = "../../core/tests/support/coverage_oracle.rs"]
mod coverage_oracle;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use distest::coverage::{profile, ActivationProfile, CoverageConfig, CoverageState};
use distest::data::{encode_idx_images, encode_idx_labels, load_idx, parse_idx_images, parse_idx_labels};
use distest::gradcheck::{random_case_error, OpKind};
use distest::nn::{Activation, LayerSpec, Network};
use distest::testgen::{records_from_jsonl, SuiteSummary, TestRecord};
use distest::{Dataset, Error, Tensor};
use distest_cli::commands::{CalibrationReport, ValidationReport};
use distest_cli::report::{replay_vectors, Report};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn workspace() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn cli(config: &Path, out: &Path, args: &[&str]) -> Result<(), String> {
    let mut argv: Vec<String> = vec!["distest".into()];
    argv.extend(args.iter().map(|s| s.to_string()));
    argv.extend(["--config".into(), config.display().to_string(), "--out".into(), out.display().to_string()]);
    match distest_cli::main_with_args(&argv) {
        0 => Ok(()),
        code => Err(format!("`distest {}` exited with {code}", args.join(" "))),
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, String> {
    let bytes = std::fs::read(path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_slice(&bytes).map_err(|e| format!("{}: {e}", path.display()))
}

fn read_records(path: &Path, dim: usize) -> Result<Vec<TestRecord>, String> {
    let bytes = std::fs::read(path).map_err(|e| format!("{}: {e}", path.display()))?;
    records_from_jsonl(&bytes, &[dim]).map_err(|e| e.to_string())
}

fn gradient_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = (0.0_f64, OpKind::MatMul);
    for kind in OpKind::ALL {
        for _ in 0..100 {
            let err = random_case_error(kind, &mut rng).map_err(|e| format!("{kind:?}: {e}"))?;
            if err > worst.0 {
                worst = (err, kind);
            }
        }
    }
    let elapsed = start.elapsed();
    let detail = format!(
        "{} op kinds x 100 cases, max rel err {:.2e} ({:?}), {:.1}s",
        OpKind::ALL.len(),
        worst.0,
        worst.1,
        elapsed.as_secs_f64()
    );
    ensure(worst.0 <= 1e-4, format!("{detail}; exceeds 1e-4"))?;
    ensure(elapsed < Duration::from_secs(60), format!("{detail}; over 1 min"))?;
    Ok(detail)
}

fn small_net(rng: &mut ChaCha8Rng) -> Network {
    let acts = [Activation::Relu, Activation::Sigmoid, Activation::Identity];
    let depth = rng.random_range(1..=3);
    let mut budget = 8;
    let mut arch = Vec::new();
    for i in 0..depth {
        let w = rng.random_range(1..=(budget - (depth - i - 1)).min(4));
        budget -= w;
        let act = if i == depth - 1 && w > 1 && rng.random_bool(0.5) {
            Activation::Softmax
        } else {
            acts[rng.random_range(0..acts.len())]
        };
        arch.push(LayerSpec::new(w, act));
    }
    Network::init(rng.random_range(1..=3), &arch, rng).expect("valid architecture")
}

fn random_inputs(rng: &mut ChaCha8Rng, dim: usize, n: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..dim).map(|_| rng.random::<f64>()).collect()).collect()
}

fn random_profile(net: &Network, rng: &mut ChaCha8Rng) -> ActivationProfile {
    let inputs: Vec<Tensor> = random_inputs(rng, net.input_dim(), 20)
        .into_iter()
        .map(|x| Tensor::vector(x).unwrap())
        .collect();
    let labels = vec![0; inputs.len()];
    profile(net, &Dataset::new("profile", inputs, labels).unwrap()).unwrap()
}

fn accumulate(net: &Network, prof: &ActivationProfile, cfg: CoverageConfig, inputs: &[Vec<f64>]) -> CoverageState {
    let mut s = CoverageState::for_network(net, cfg).unwrap();
    for x in inputs {
        s.update(net, Some(prof), x).unwrap();
    }
    s
}

fn coverage_oracle_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let nets = 20;
    for trial in 0..nets {
        let net = small_net(&mut rng);
        let prof = random_profile(&net, &mut rng);
        let cfg = CoverageConfig {
            nc_threshold: rng.random_range(0.0..0.9),
            k: rng.random_range(1..=4),
        };
        let inputs = random_inputs(&mut rng, net.input_dim(), 1000);
        let got = accumulate(&net, &prof, cfg, &inputs);
        let want = coverage_oracle::brute_force(&net, prof.low(), prof.high(), cfg.k, cfg.nc_threshold, &inputs);
        for i in 0..got.neurons() {
            let bins_match = (0..cfg.k).all(|b| got.is_bin_covered(i, b) == want.bins[i][b]);
            ensure(
                got.is_nc_covered(i) == want.nc[i]
                    && got.is_low_corner_covered(i) == want.low[i]
                    && got.is_high_corner_covered(i) == want.high[i]
                    && bins_match,
                format!("net {trial}, neuron {i} differs from brute force"),
            )?;
        }
        let r = got.ratios();
        ensure(
            (r.nc, r.kmnc, r.nbc, r.snac) == want.ratios(),
            format!("net {trial}: ratios differ from brute force"),
        )?;
    }
    Ok(format!("{nets} nets (<=8 neurons, k<=4) x 1000 inputs, bit-exact"))
}

fn vector_replay() -> Outcome {
    let rows = replay_vectors().map_err(|e| e.to_string())?;
    let r3 = |x: f64| format!("{x:.3}");
    let got = [r3(rows[0].valid), r3(rows[1].valid), r3(rows[1].invalid), r3(rows[1].total)];
    let want = ["0.462", "0.692", "0.673", "0.808"];
    let detail = format!("got {} / {} / {} / cumulative {}", got[0], got[1], got[2], got[3]);
    let bad: Vec<&str> = want.iter().zip(&got).filter(|(w, g)| **w != g.as_str()).map(|(w, _)| *w).collect();
    ensure(bad.is_empty(), format!("{detail}; expected {}", want.join(" / ")))?;
    Ok(detail)
}

/// Runs the MNIST pipeline once; criteria 4 to 7 read its artifacts.
struct MnistRun {
    out: tempfile::TempDir,
    config: PathBuf,
    vae_stage: Duration,
    generation: Duration,
}

fn mnist_run() -> Result<MnistRun, String> {
    let config = workspace().join("configs/mnist.json");
    let data = workspace().join("data");
    for f in ["mnist/train-images-idx3-ubyte", "mnist/t10k-images-idx3-ubyte", "fashion/t10k-images-idx3-ubyte"] {
        ensure(data.join(f).exists(), format!("{} not found; see README for data setup", data.join(f).display()))?;
    }
    let out = tempfile::tempdir().map_err(|e| e.to_string())?;
    let o = out.path();
    cli(&config, o, &["train"])?;
    let t = Instant::now();
    cli(&config, o, &["train-vae"])?;
    cli(&config, o, &["calibrate"])?;
    let vae_stage = t.elapsed();
    cli(&config, o, &["profile"])?;
    let t = Instant::now();
    cli(&config, o, &["generate", "--mode", "baseline"])?;
    cli(&config, o, &["generate", "--mode", "vae"])?;
    let generation = t.elapsed();
    let vae_suite = o.join("suites/vae.jsonl").display().to_string();
    cli(&config, o, &["validate", "--suite", &vae_suite])?;
    cli(&config, o, &["report"])?;
    Ok(MnistRun {
        out,
        config,
        vae_stage,
        generation,
    })
}

fn calibration_quality(run: &Result<MnistRun, String>) -> Outcome {
    let run = run.as_ref().map_err(Clone::clone)?;
    let cal: CalibrationReport = read_json(&run.out.path().join("calibration.json"))?;
    let detail = format!(
        "F = {:.4} on {} valid / {} invalid, VAE train + calibrate {:.0}s",
        cal.f_measure,
        cal.n_valid,
        cal.n_invalid,
        run.vae_stage.as_secs_f64()
    );
    ensure(cal.n_valid == 2000 && cal.n_invalid == 2000, format!("{detail}; expected 2000 per side"))?;
    ensure(cal.f_measure >= 0.90, format!("{detail}; below 0.90"))?;
    ensure(run.vae_stage <= Duration::from_secs(30 * 60), format!("{detail}; over 30 min"))?;
    Ok(detail)
}

fn baseline_invalid_fraction(run: &Result<MnistRun, String>) -> Outcome {
    let run = run.as_ref().map_err(Clone::clone)?;
    let report: Report = read_json(&run.out.path().join("report.json"))?;
    let text = std::fs::read_to_string(run.out.path().join("report.txt")).map_err(|e| e.to_string())?;
    let b = report.suites.iter().find(|s| s.name == "baseline").ok_or("no baseline suite in report")?;
    let pct = b.invalid_percent.ok_or("baseline suite is empty")?;
    let detail = format!("baseline: {} valid, {} invalid ({pct:.1}% invalid)", b.valid, b.invalid);
    ensure(b.invalid > 0, format!("{detail}; no invalid tests"))?;
    ensure(text.contains(&format!("{pct:.1}%")), format!("{detail}; percentage missing from report.txt"))?;
    Ok(detail)
}

fn safety(run: &Result<MnistRun, String>, synth: &Result<tempfile::TempDir, String>) -> Outcome {
    let mut checked = 0;
    let mut check = |out: &Path, dim: usize| -> Result<(), String> {
        let threshold: serde_json::Value = read_json(&out.join("threshold.json"))?;
        let alpha = threshold["alpha"].as_f64().ok_or("threshold.json has no alpha")?;
        for r in read_records(&out.join("suites/vae.jsonl"), dim)? {
            ensure(r.valid && r.recon_score >= alpha, format!("seed {} record is invalid", r.seed_index))?;
            checked += 1;
        }
        let v: ValidationReport = read_json(&out.join("suites/vae.validation.json"))?;
        ensure(
            v.invalid == 0 && v.disagreements.is_empty(),
            format!("re-scoring found {} invalid records in {}", v.invalid, out.display()),
        )
    };
    let synth = synth.as_ref().map_err(Clone::clone)?;
    check(synth.path(), 12)?;
    let run = run.as_ref().map_err(Clone::clone)?;
    check(run.out.path(), 784)?;
    Ok(format!("{checked} VAE-guided records (synth + MNIST), all valid, re-scoring agrees"))
}

fn valid_count_ratio(run: &Result<MnistRun, String>) -> Outcome {
    let run = run.as_ref().map_err(Clone::clone)?;
    let s = |m: &str| read_json::<SuiteSummary>(&run.out.path().join(format!("suites/{m}.summary.json")));
    let (b, v) = (s("baseline")?, s("vae")?);
    ensure(b.seeds == v.seeds && b.seeds == 50, format!("seed counts {} / {}, expected 50", b.seeds, v.seeds))?;
    let cfg = distest_cli::ExperimentConfig::load(&run.config).map_err(|e| e.to_string())?;
    let detail = format!(
        "valid tests: vae {} vs baseline {} ({:.2}x), generation {:.0}s",
        v.valid,
        b.valid,
        v.valid as f64 / b.valid.max(1) as f64,
        run.generation.as_secs_f64()
    );
    let gc = cfg.generation_config();
    ensure(
        gc.max_iterations == 30 && gc.nc_threshold == 0.25,
        "config does not use 30 iterations and t = 0.25",
    )?;
    ensure(b.valid > 0 && 5 * v.valid >= 6 * b.valid, format!("{detail}; below 1.2x"))?;
    ensure(run.generation <= Duration::from_secs(20 * 60), format!("{detail}; over 20 min"))?;
    Ok(detail)
}

fn semilattice() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let cases = 50;
    for case in 0..cases {
        let net = small_net(&mut rng);
        let prof = random_profile(&net, &mut rng);
        let cfg = CoverageConfig {
            nc_threshold: rng.random_range(0.0..0.9),
            k: rng.random_range(1..=6),
        };
        let mut suite = |n| random_inputs(&mut rng, net.input_dim(), n);
        let (xa, xb, xc) = (suite(15), suite(15), suite(15));
        let [a, b, c] = [&xa, &xb, &xc].map(|x| accumulate(&net, &prof, cfg, x));
        let ab = a.merge(&b).unwrap();
        ensure(ab.same_bits(&b.merge(&a).unwrap()), format!("case {case}: merge not commutative"))?;
        ensure(
            ab.merge(&c).unwrap().same_bits(&a.merge(&b.merge(&c).unwrap()).unwrap()),
            format!("case {case}: merge not associative"),
        )?;
        ensure(a.merge(&a).unwrap().same_bits(&a), format!("case {case}: merge not idempotent"))?;
        let joined: Vec<Vec<f64>> = xa.iter().chain(&xb).cloned().collect();
        ensure(
            accumulate(&net, &prof, cfg, &joined).same_bits(&ab),
            format!("case {case}: merge differs from accumulating both suites"),
        )?;
        let mut s = CoverageState::for_network(&net, cfg).unwrap();
        let mut prev = s.ratios();
        for x in &joined {
            s.update(&net, Some(&prof), x).unwrap();
            let r = s.ratios();
            ensure(
                r.nc >= prev.nc && r.kmnc >= prev.kmnc && r.nbc >= prev.nbc && r.snac >= prev.snac,
                format!("case {case}: a ratio decreased"),
            )?;
            prev = r;
        }
    }
    Ok(format!("{cases} randomized nets and suites"))
}

fn idx_loader() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let pixels: Vec<u8> = (0..2 * 3 * 4).map(|i| (i * 11 % 256) as u8).collect();
    let (img, lbl) = (dir.path().join("img"), dir.path().join("lbl"));
    std::fs::write(&img, encode_idx_images(3, 4, &pixels)).unwrap();
    std::fs::write(&lbl, encode_idx_labels(&[3, 9])).unwrap();
    let ds = load_idx(&img, &lbl).map_err(|e| e.to_string())?;
    let flat: Vec<f64> = ds.inputs().iter().flat_map(|x| x.data().to_vec()).collect();
    let want: Vec<f64> = pixels.iter().map(|&p| f64::from(p) / 255.0).collect();
    ensure(ds.labels() == [3, 9] && flat == want, "fixture did not round-trip")?;
    ensure(ds.inputs()[0].shape() == [3, 4], "wrong image shape")?;

    let mut bad = encode_idx_images(3, 4, &pixels);
    bad[3] = 0x01;
    ensure(matches!(parse_idx_images(&bad), Err(Error::BadMagic { .. })), "corrupt image magic not BadMagic")?;
    let mut bad = encode_idx_labels(&[3, 9]);
    bad[2] = 0x09;
    ensure(matches!(parse_idx_labels(&bad), Err(Error::BadMagic { .. })), "corrupt label magic not BadMagic")?;
    let full = encode_idx_images(3, 4, &pixels);
    ensure(
        matches!(parse_idx_images(&full[..full.len() - 1]), Err(Error::Truncated { .. })),
        "truncated images not Truncated",
    )?;
    ensure(
        matches!(parse_idx_labels(&encode_idx_labels(&[3, 9])[..9]), Err(Error::Truncated { .. })),
        "truncated labels not Truncated",
    )?;

    let mnist = workspace().join("data/mnist");
    let pair = |p: &str| (mnist.join(format!("{p}-images-idx3-ubyte")), mnist.join(format!("{p}-labels-idx1-ubyte")));
    let (train, test) = (pair("train"), pair("t10k"));
    if !train.0.exists() || !test.0.exists() {
        return Ok("fixtures round-trip, distinct errors; full MNIST absent, not checked".into());
    }
    let n_train = load_idx(&train.0, &train.1).map_err(|e| e.to_string())?.len();
    let n_test = load_idx(&test.0, &test.1).map_err(|e| e.to_string())?.len();
    ensure(n_train == 60000 && n_test == 10000, format!("MNIST has {n_train}/{n_test} records"))?;
    Ok(format!("fixtures round-trip, distinct errors, MNIST {n_train}/{n_test}"))
}

const SYNTH_STAGES: &[&[&str]] = &[
    &["train"],
    &["train-vae"],
    &["profile"],
    &["calibrate"],
    &["generate", "--mode", "baseline"],
    &["generate", "--mode", "vae"],
];

fn synth_run() -> Result<tempfile::TempDir, String> {
    let config = workspace().join("configs/synth.json");
    let out = tempfile::tempdir().map_err(|e| e.to_string())?;
    for args in SYNTH_STAGES {
        cli(&config, out.path(), args)?;
    }
    for (cmd, suite) in [("validate", "vae"), ("validate", "baseline"), ("coverage", "vae"), ("coverage", "baseline")] {
        let path = out.path().join(format!("suites/{suite}.jsonl")).display().to_string();
        cli(&config, out.path(), &[cmd, "--suite", &path])?;
    }
    cli(&config, out.path(), &["report"])?;
    Ok(out)
}

fn snapshot(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).into_iter().flatten().flatten() {
            let p = entry.path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().is_some_and(|n| n != "distest.log") {
                files.insert(p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    files
}

fn determinism(first: &Result<tempfile::TempDir, String>) -> Outcome {
    let first = first.as_ref().map_err(Clone::clone)?;
    let second = synth_run()?;
    let (a, b) = (snapshot(first.path()), snapshot(second.path()));
    let names = |m: &BTreeMap<PathBuf, Vec<u8>>| m.keys().cloned().collect::<Vec<_>>();
    ensure(names(&a) == names(&b), "reruns produced different file sets")?;
    for (path, bytes) in &a {
        ensure(&b[path] == bytes, format!("{} differs between reruns", path.display()))?;
    }
    let models = a.keys().filter(|p| p.starts_with("models")).count();
    Ok(format!("{} artifacts ({models} models, suites, report) byte-identical across two synth runs", a.len()))
}

fn main() {
    let synth = synth_run();
    let mnist = mnist_run();
    let results: Vec<(&str, Outcome)> = vec![
        ("gradient oracle", gradient_oracle()),
        ("coverage oracle equivalence", coverage_oracle_equivalence()),
        ("coverage vector replay", vector_replay()),
        ("calibration quality", calibration_quality(&mnist)),
        ("baseline invalid fraction", baseline_invalid_fraction(&mnist)),
        ("VAE-guided safety", safety(&mnist, &synth)),
        ("valid-test ratio", valid_count_ratio(&mnist)),
        ("coverage semilattice", semilattice()),
        ("IDX loader", idx_loader()),
        ("determinism", determinism(&synth)),
    ];
    let mut failed = 0;
    for (i, (name, outcome)) in results.iter().enumerate() {
        let (tag, detail) = match outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("criterion {:>2} {tag}  {name}: {detail}", i + 1);
    }
    println!("{} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
