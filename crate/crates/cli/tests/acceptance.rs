//! End-to-end acceptance run. Slow (several minutes at opt-level 3):
//!
//! ```text
//! cargo test -p rosspuf-cli --test acceptance -- --ignored --nocapture
//! ```
//!
//! Prints one PASS/FAIL line per criterion and fails if any criterion fails.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use num_bigint::BigUint;
use rand::seq::index;
use rand::Rng;

use rosspuf::config::ExperimentConfig;
use rosspuf::fuzzy::{self, EccKeys};
use rosspuf::keygen::{Encoding, Puf};
use rosspuf::metrics::{self, SweepBudget, WeightCampaign};
use rosspuf::randtests::{self, TestParams};
use rosspuf::{seeds, Bits, Error};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn default_puf(cfg: &ExperimentConfig) -> Puf {
    cfg.puf(cfg.default_device().unwrap()).unwrap()
}

/// Readout weights shared by criteria 1, 3 and 4.
fn main_campaign(cfg: &ExperimentConfig) -> WeightCampaign {
    WeightCampaign::run(
        &default_puf(cfg),
        &cfg.challenge,
        cfg.schedule(),
        &SweepBudget::default(),
        &[3, 16],
    )
    .unwrap()
}

fn readout_quality(c: &WeightCampaign) -> Outcome {
    let nmse = c.nmse[1];
    outcome(
        nmse <= 0.05,
        format!("mean NMSE at m_bit=16 over {} challenges = {nmse:.4} (limit 0.05)", c.inter.len()),
    )
}

fn key_length_law(cfg: &ExperimentConfig) -> Outcome {
    let mut lens = Vec::new();
    for rings in [6, 5] {
        let nominal = rosspuf::photonics::NominalConfig {
            mrrs_per_node: rings,
            ..cfg.device.clone()
        };
        let device = cfg.fabricate(&nominal, cfg.fab_seed()).unwrap();
        let puf = cfg.puf(device).unwrap();
        let profile = puf.calibrate(&cfg.challenge, 11, 8, 4, Encoding::Natural).unwrap();
        let r = puf.respond(&cfg.challenge.make(1).unwrap(), 2, &profile).unwrap();
        lens.push((puf.channels(), puf.weight_count(), r.key.unwrap().bits.len()));
    }
    let pass = lens[0].2 == 1060 && lens[1].2 == 884;
    let detail = lens
        .iter()
        .map(|(c, w, k)| format!("{c} channels: {w} weights, {k} bits"))
        .collect::<Vec<_>>()
        .join("; ");
    outcome(pass, detail)
}

fn identifiability_and_reproducibility(cfg: &ExperimentConfig, c: &WeightCampaign) -> (Outcome, Outcome) {
    let profile = c.profile(3, 4, Encoding::Natural).unwrap();
    let (ki, ke) = c.keys(3, &profile).unwrap();
    let pairs = cfg.schedule().pairs();
    let intra = metrics::pair_stats(&ki, pairs).unwrap();
    let inter = metrics::pair_stats(&ke, pairs).unwrap();
    let c3 = outcome(
        (0.40..=0.50).contains(&inter.mean) && (inter.std - 0.0154).abs() <= 0.01,
        format!(
            "inter over {} challenges: mean {:.4} in [0.40, 0.50], std {:.4} vs 0.0154 +/- 0.01",
            ke.len(),
            inter.mean,
            inter.std
        ),
    );
    let eer = metrics::eer_fit(&intra, &inter);
    let (eer_v, eer_txt) = match &eer {
        Ok(r) => (r.eer, format!("{:.3e}", r.eer)),
        Err(e) => (f64::NAN, format!("unfit ({e})")),
    };
    let separated = intra.max < inter.min;
    let c4 = outcome(
        intra.mean <= 0.35 && separated && eer_v <= 1e-6,
        format!(
            "intra over {} repeats: mean {:.4} (limit 0.35), max {:.4} < inter min {:.4}: {separated}, EER {eer_txt} (limit 1e-6)",
            ki.len(),
            intra.mean,
            intra.max,
            inter.min
        ),
    );
    (c3, c4)
}

fn heatmap_trends(cfg: &ExperimentConfig) -> Outcome {
    let m_bits: Vec<u32> = (1..=16).collect();
    let n_bits: Vec<u32> = (1..=8).collect();
    let budget = SweepBudget {
        calibration_crps: 200,
        intra_trials: 30,
        inter_challenges: 150,
    };
    let campaign = WeightCampaign::run(&default_puf(cfg), &cfg.challenge, cfg.schedule(), &budget, &m_bits).unwrap();
    let mut grid = BTreeMap::new();
    for &m in &m_bits {
        for &n in &n_bits {
            grid.insert((m, n), campaign.cell(m, n, Encoding::Natural, cfg.schedule().pairs()).unwrap());
        }
    }
    let ns: Vec<f64> = n_bits.iter().map(|&n| n as f64).collect();
    let worst_intra = m_bits
        .iter()
        .map(|&m| {
            let row: Vec<f64> = n_bits.iter().map(|&n| grid[&(m, n)].intra_mean).collect();
            (metrics::spearman(&ns, &row).unwrap(), m)
        })
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .unwrap();

    println!("  inter mean by m_bit (rows) and n_bit (columns):");
    for &m in &m_bits {
        let row: Vec<String> = n_bits.iter().map(|&n| format!("{:.3}", grid[&(m, n)].inter_mean)).collect();
        println!("    m{m:<2} {}", row.join(" "));
    }
    // Past m_bit ~9 quantization noise sits below the analog noise and the
    // curve is flat, so the trend is checked as a step-wise non-increase
    // (jitter allowance STEP_TOL) plus a clear net drop.
    const STEP_TOL: f64 = 0.002;
    const MIN_DROP: f64 = 0.02;
    let n_eval = 8;
    let plateau = [1u32, 2].iter().map(|&m| grid[&(m, n_eval)].inter_mean).fold(f64::INFINITY, f64::min);
    let tail: Vec<f64> = m_bits.iter().filter(|&&m| m >= 2).map(|&m| grid[&(m, n_eval)].inter_mean).collect();
    let worst_rise = tail.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max);
    let drop = tail[0] - tail[tail.len() - 1];
    let ms: Vec<f64> = (2..=16).map(f64::from).collect();
    let rho_inter = metrics::spearman(&ms, &tail).unwrap();
    outcome(
        worst_intra.0 >= 0.9 && plateau >= 0.45 && worst_rise <= STEP_TOL && drop >= MIN_DROP,
        format!(
            "min intra Spearman over n_bit = {:.3} (m_bit {}); at n_bit={n_eval}: plateau m_bit 1-2 >= {plateau:.4}, \
             largest step-up for m_bit 2..16 = {worst_rise:+.4} (limit {STEP_TOL}), drop m_bit 2 -> 16 = {drop:.4} \
             (min {MIN_DROP}), Spearman = {rho_inter:.3}",
            worst_intra.0, worst_intra.1
        ),
    )
}

fn eer_formula() -> Outcome {
    let (tau, eer) = metrics::eer_from_params(0.22, 0.02, 0.46, 0.02).unwrap();
    let sig3 = |x: f64| format!("{x:.2e}");
    outcome(
        (tau - 0.34).abs() < 1e-12 && sig3(eer) == sig3(9.866e-10),
        format!("threshold {tau:.6}, EER {eer:.4e} (want 0.34, 9.866e-10)"),
    )
}

fn ecc_margin(cfg: &ExperimentConfig) -> Outcome {
    let ecc = &cfg.ecc;
    let puf = cfg.ecc_puf(cfg.default_device().unwrap()).unwrap();
    let schedule = cfg.schedule();
    let profile = puf
        .calibrate(&cfg.challenge, schedule.calibration(), cfg.keygen.calibration_crps, ecc.n_bit, ecc.encoding)
        .unwrap();
    let trials = ecc.trials.max(200);
    let keys = EccKeys::collect(&puf, &cfg.challenge, schedule, &profile, trials).unwrap();
    let len = keys.reference.len();
    let intra_max = *keys.intra_flips().unwrap().iter().max().unwrap();
    let t_values: Vec<u32> = (1..=48).collect();
    let rows = fuzzy::ecc_sweep(&keys, &t_values).unwrap();
    let good: Vec<_> = rows
        .iter()
        .filter(|r| (300..=380).contains(&r.parity_bits) && r.intra_corrected == 1.0 && r.inter_accepted == 0.0)
        .collect();
    let in_band: Vec<_> = rows.iter().filter(|r| (300..=380).contains(&r.parity_bits)).collect();
    outcome(
        intra_max <= 32 && !good.is_empty() && good.len() == in_band.len(),
        format!(
            "m_bit {} lambda {:.0e}: max intra flips {intra_max}/{len} over {trials} repeats, min inter flips {}; \
             every t in {}..{} (parity {}..{}) corrects 100% intra and accepts 0% of {trials} inter keys: {}",
            ecc.m_bit,
            ecc.lambda,
            rows[0].inter_min_flips,
            in_band.first().map_or(0, |r| r.t),
            in_band.last().map_or(0, |r| r.t),
            in_band.first().map_or(0, |r| r.parity_bits),
            in_band.last().map_or(0, |r| r.parity_bits),
            good.len() == in_band.len()
        ),
    )
}

fn random_bits(rng: &mut impl Rng, n: usize) -> Bits {
    (0..n).map(|_| rng.random::<bool>()).collect()
}

fn flip_random(rng: &mut impl Rng, word: &mut Bits, weight: usize) {
    for i in index::sample(rng, word.len(), weight) {
        word.flip(i);
    }
}

fn bch_soundness() -> Outcome {
    let code = fuzzy::bch_build(1060, 32).unwrap();
    let mut rng = seeds::rng(seeds::derive(8, "acceptance", 0));
    let mut exact = 0;
    let trials = 10_000;
    for _ in 0..trials {
        let msg = random_bits(&mut rng, code.message_len());
        let mut word = fuzzy::bch_encode(&code, &msg).unwrap();
        let w = rng.random_range(0..=code.t as usize);
        flip_random(&mut rng, &mut word, w);
        if fuzzy::bch_decode(&code, &word).is_ok_and(|d| d.message == msg && d.corrected.len() == w) {
            exact += 1;
        }
    }
    let stress = 2_000;
    let (mut silent, mut miscorrected, mut rejected) = (0, 0, 0);
    for _ in 0..stress {
        let key = random_bits(&mut rng, 1060);
        let (helper, _) = fuzzy::enroll(&key, &code).unwrap();
        let mut noisy = key.clone();
        flip_random(&mut rng, &mut noisy, code.t as usize + 1);
        match fuzzy::reconstruct_with(&code, &helper, &noisy) {
            Ok(k) if k == key => {}
            Ok(_) => silent += 1,
            Err(Error::Rejected(_)) => {
                miscorrected += 1;
                rejected += 1;
            }
            Err(_) => rejected += 1,
        }
    }
    outcome(
        exact == trials && silent == 0,
        format!(
            "t={} n={}: {exact}/{trials} decoded exactly; weight-{} stress: {rejected}/{stress} rejected \
             ({miscorrected} caught by digest), {silent} wrong keys accepted",
            code.t,
            code.codeword_len(),
            code.t + 1
        ),
    )
}

/// Binary expansion of e with the integer part "10" first.
fn e_bits(n: usize) -> Bits {
    let prec = n + 64;
    let one = BigUint::from(1u8) << prec;
    let (mut term, mut sum, mut k) = (one.clone(), one, 1u32);
    while term > BigUint::ZERO {
        term /= k;
        sum += &term;
        k += 1;
    }
    Bits::from_ascii01(&(sum >> 64usize).to_str_radix(2)[..n]).unwrap()
}

const PI_100: &str = "1100100100001111110110101010001000100001011010001100001000110100110001001100011001100010100010111000";
const LONGEST_128: &str =
    "11001100000101010110110001001100111000000000001001001101010100010001001111010110100000001101011111001100111001101101100010110010";

/// The corpus is drawn at the identifiability operating point.
const CORPUS_M_BIT: u32 = 3;

fn randomness(cfg: &ExperimentConfig) -> Outcome {
    let b = |s: &str| Bits::from_ascii01(s).unwrap();
    let pi = b(PI_100);
    let e = e_bits(1_000_000);
    let (cf, cr) = randtests::cumulative_sums(&pi);
    let (s1, s2) = randtests::serial(&e, 2);
    let examples = [
        ("Frequency", randtests::frequency(&pi), 0.109599),
        ("BlockFrequency", randtests::block_frequency(&pi, 10), 0.706438),
        ("CumulativeSums fwd", cf, 0.219194),
        ("CumulativeSums rev", cr, 0.114866),
        ("Runs", randtests::runs(&pi), 0.500798),
        ("LongestRun", randtests::longest_run(&b(LONGEST_128)), 0.180609),
        ("Rank", randtests::rank(&e.slice(0, 100_000)), 0.532069),
        ("FFT", randtests::spectral(&pi), 0.646355),
        ("ApproximateEntropy", randtests::approximate_entropy(&pi, 2), 0.235301),
        ("Serial p1", s1, 0.843764),
        ("Serial p2", s2, 0.561915),
    ];
    let bad: Vec<_> = examples.iter().filter(|(_, got, want)| (got - want).abs() >= 1e-4).collect();
    for (name, got, want) in &bad {
        println!("  worked example {name}: {got:.6} vs {want:.6}");
    }

    let params = TestParams::default();
    let fails = |seqs: &[Bits], names: &[&str]| {
        let r = randtests::run_battery(seqs, 0.01, &params).unwrap();
        names.iter().all(|n| !r.result(n).unwrap().passed)
    };
    let zeros = vec![Bits::zeros(100_000); 3];
    let alt: Bits = (0..100_000).map(|i| i % 2 == 1).collect();
    let controls = fails(&zeros, &["Frequency", "BlockFrequency", "CumulativeSums (forward)", "Runs", "LongestRun"])
        && fails(&vec![alt; 3], &["Runs", "ApproximateEntropy", "Serial (1)"]);

    let mut rng = seeds::rng(seeds::derive(9, "acceptance", 0));
    let blocks: Vec<Bits> = (0..50).map(|i| random_bits(&mut rng, 100 + i)).collect();
    let ext = randtests::permute_extend(&blocks, 77).unwrap();
    let joined = randtests::concat(&blocks);
    let conserved = ext.len() == 2 * joined.len() && ext.count_ones() == 2 * joined.count_ones();

    let mut cfg = cfg.clone();
    cfg.detection.adc_bits = CORPUS_M_BIT;
    let puf = default_puf(&cfg);
    let schedule = cfg.schedule();
    let profile = puf
        .calibrate(&cfg.challenge, schedule.calibration(), cfg.keygen.calibration_crps, cfg.keygen.n_bit, cfg.keygen.encoding)
        .unwrap();
    let keys = randtests::key_corpus(&puf, &cfg.challenge, schedule, &profile, cfg.nist.keys).unwrap();
    let corpus = randtests::permute_extend(&keys, cfg.master_seed).unwrap();
    let seqs = randtests::split_sequences(&corpus, cfg.nist.sequence_len).unwrap();
    let report = randtests::run_battery(&seqs, cfg.nist.alpha, &params).unwrap();
    print!("{}", report.to_table());
    let failed: Vec<_> = report.results.iter().filter(|r| !r.passed).map(|r| r.name.as_str()).collect();
    let corpus_ok = report.all_passed() && corpus.len() >= 1_000_000;

    outcome(
        bad.is_empty() && controls && conserved && corpus_ok,
        format!(
            "worked examples {}/{} within 1e-4; controls fail as expected: {controls}; permute_extend conserves counts: {conserved}; \
             PUF corpus of {} bits (ones {:.4}) at m_bit {} n_bit {}: {}",
            examples.len() - bad.len(),
            examples.len(),
            corpus.len(),
            corpus.count_ones() as f64 / corpus.len() as f64,
            cfg.detection.adc_bits,
            cfg.keygen.n_bit,
            if failed.is_empty() { "all tests pass".to_string() } else { format!("fails {}", failed.join(", ")) }
        ),
    )
}

fn cli_run(dir: &Path, args: &[&str]) {
    let out = Command::new(env!("CARGO_BIN_EXE_rosspuf")).current_dir(dir).args(args).output().unwrap();
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn determinism() -> Outcome {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for (d, jobs) in dirs.iter().zip(["1", "2"]) {
        let dir = d.path();
        let mut cfg = ExperimentConfig::default();
        cfg.output_dir = "o".into();
        cfg.keygen.calibration_crps = 50;
        cfg.ridge.lambda = 1e3;
        cfg.sweep.m_bits = vec![3, 8];
        cfg.sweep.n_bits = vec![2, 4];
        cfg.sweep.mrr_counts = vec![1, 3];
        cfg.sweep.budget = SweepBudget {
            calibration_crps: 20,
            intra_trials: 6,
            inter_challenges: 8,
        };
        cfg.ecc.trials = 8;
        cfg.ecc.t_values = vec![0, 16, 32];
        cfg.nist.keys = 40;
        cfg.nist.sequence_len = 10_000;
        std::fs::write(dir.join("cfg.json"), cfg.to_json().unwrap()).unwrap();
        let j = ["--jobs", jobs];
        let steps: &[&[&str]] = &[
            &["init-config", "--out", "o/default.json"],
            &["fabricate", "--config", "cfg.json"],
            &["challenge", "--config", "cfg.json", "--seed", "4", "--inline"],
            &["calibrate", "--config", "cfg.json", "--device", "o/device.json"],
            &["respond", "--config", "cfg.json", "--device", "o/device.json", "--challenge-seed", "4"],
            &["respond", "--config", "cfg.json", "--device", "o/device.json", "--challenge-seed", "4", "--noise-seed", "9", "--out", "o/again.json"],
            &["enroll", "--response", "o/response-4.json", "--t", "32"],
            &["reconstruct", "--helper", "o/helper.json", "--response", "o/again.json", "--out", "o/key.txt"],
            &["sweep", "bitgrid", "--config", "cfg.json", "--device", "o/device.json"],
            &["sweep", "mrr", "--config", "cfg.json"],
            &["sweep", "ecc", "--config", "cfg.json"],
            &["nist", "--config", "cfg.json", "--export", "o/corpus.bin"],
        ];
        for s in steps {
            cli_run(dir, &[&j[..], s].concat());
        }
    }
    let (a, b) = (tree(dirs[0].path()), tree(dirs[1].path()));
    let differing: Vec<_> = a
        .keys()
        .chain(b.keys())
        .filter(|k| a.get(*k) != b.get(*k))
        .map(|k| k.display().to_string())
        .collect();
    outcome(
        differing.is_empty() && a.len() >= 15,
        format!(
            "{} output files from 12 commands, re-run with a different thread count: {}",
            a.len(),
            if differing.is_empty() { "byte-identical".into() } else { format!("differ: {}", differing.join(", ")) }
        ),
    )
}

#[test]
#[ignore = "several minutes; run with --ignored"]
fn acceptance() {
    let cfg = ExperimentConfig::default();
    let mut results: Vec<(u32, Outcome)> = Vec::new();
    let mut timed = |f: &mut dyn FnMut() -> Vec<(u32, Outcome)>| {
        let t0 = Instant::now();
        for (k, o) in f() {
            println!("criterion {k}: {} ({:.0} s)", if o.pass { "PASS" } else { "FAIL" }, t0.elapsed().as_secs_f64());
            results.push((k, o));
        }
    };
    timed(&mut || {
        let c = main_campaign(&cfg);
        let (c3, c4) = identifiability_and_reproducibility(&cfg, &c);
        vec![(1, readout_quality(&c)), (3, c3), (4, c4)]
    });
    timed(&mut || vec![(2, key_length_law(&cfg))]);
    timed(&mut || vec![(5, heatmap_trends(&cfg))]);
    timed(&mut || vec![(6, eer_formula())]);
    timed(&mut || vec![(7, ecc_margin(&cfg))]);
    timed(&mut || vec![(8, bch_soundness())]);
    timed(&mut || vec![(9, randomness(&cfg))]);
    timed(&mut || vec![(10, determinism())]);

    results.sort_by_key(|(k, _)| *k);
    println!();
    for (k, o) in &results {
        println!("{} criterion {k:>2}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    }
    let failed: Vec<_> = results.iter().filter(|(_, o)| !o.pass).map(|(k, _)| *k).collect();
    assert!(failed.is_empty(), "failing criteria: {failed:?}");
}
