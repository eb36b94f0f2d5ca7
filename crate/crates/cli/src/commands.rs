use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use rosspuf::challenge::ChallengeFile;
use rosspuf::config::{Artifact, ExperimentConfig, RunMeta};
use rosspuf::fuzzy::{self, EccKeys, HelperData};
use rosspuf::keygen::CalibrationProfile;
use rosspuf::metrics::{self, SweepSetup, WeightCampaign};
use rosspuf::photonics::DeviceProfile;
use rosspuf::randtests::{self, BatteryReport, BitFormat};
use rosspuf::readout::Response;
use rosspuf::{seeds, Bits};

use crate::SweepKind;

fn load_config(path: &Path) -> Result<ExperimentConfig> {
    ExperimentConfig::load(path).with_context(|| format!("loading config {}", path.display()))
}

fn load_device(path: &Path) -> Result<Artifact<DeviceProfile>> {
    Artifact::read(path).with_context(|| format!("loading device {}", path.display()))
}

fn out_path(cfg: &ExperimentConfig, given: Option<&Path>, name: &str) -> PathBuf {
    given.map_or_else(|| cfg.output_dir.join(name), Path::to_path_buf)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_csv<R: Serialize>(path: &Path, meta: &RunMeta, extra: &[(&str, String)], rows: &[R]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let mut header = meta.csv_header();
    header.extend(extra.iter().map(|(k, v)| (k.to_string(), v.clone())));
    let file = std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    metrics::write_csv(std::io::BufWriter::new(file), &header, rows)?;
    Ok(())
}

fn device_or_default(cfg: &ExperimentConfig, device: Option<&Path>) -> Result<DeviceProfile> {
    match device {
        Some(p) => Ok(load_device(p)?.data),
        None => Ok(cfg.default_device()?),
    }
}

pub fn init_config(out: Option<&Path>) -> Result<()> {
    let json = ExperimentConfig::default().to_json()?;
    match out {
        Some(p) => write_text(p, &json),
        None => {
            print!("{json}");
            Ok(())
        }
    }
}

pub fn fabricate(config: &Path, fab_seed: Option<u64>, mrrs_per_node: Option<usize>, out: Option<&Path>) -> Result<()> {
    let cfg = load_config(config)?;
    let mut nominal = cfg.device.clone();
    if let Some(m) = mrrs_per_node {
        nominal.mrrs_per_node = m;
    }
    let seed = fab_seed.unwrap_or_else(|| cfg.fab_seed());
    let device = cfg.fabricate(&nominal, seed)?;
    let path = out_path(&cfg, out, "device.json");
    Artifact::new(&cfg, device.clone()).write(&path)?;

    let rings: Vec<_> = device.nodes.iter().flat_map(|n| &n.mrrs).collect();
    let offsets: Vec<f64> = rings.iter().map(|r| r.resonance_offset).collect();
    let couplings: Vec<f64> = rings.iter().map(|r| r.coupling_strength).collect();
    let fold = |v: &[f64], f: fn(f64, f64) -> f64, init: f64| v.iter().copied().fold(init, f);
    println!("device      {}", path.display());
    println!("fab_seed    {seed}");
    println!("channels    {} ({} nodes x {} rings)", device.channels(), nominal.nodes, nominal.mrrs_per_node);
    println!("fsr         {:.2} GHz", rings[0].fsr() / 1e9);
    println!("linewidth   {:.3} GHz", rings[0].linewidth_estimate() / 1e9);
    println!(
        "resonances  {:+.2} .. {:+.2} GHz from carrier",
        fold(&offsets, f64::min, f64::INFINITY) / 1e9,
        fold(&offsets, f64::max, f64::NEG_INFINITY) / 1e9
    );
    println!(
        "coupling    {:.3} .. {:.3}",
        fold(&couplings, f64::min, f64::INFINITY),
        fold(&couplings, f64::max, f64::NEG_INFINITY)
    );
    Ok(())
}

pub fn challenge(config: &Path, seed: u64, inline: bool, out: Option<&Path>) -> Result<()> {
    let cfg = load_config(config)?;
    let c = cfg.challenge.make(seed)?;
    let path = out_path(&cfg, out, &format!("challenge-{seed}.json"));
    Artifact::new(&cfg, ChallengeFile::from_challenge(&c, inline)).write(&path)?;
    println!("challenge {} ({} symbols, used seed {})", path.display(), c.length, c.used_seed);
    Ok(())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CalibrationRecord {
    pub calibration_seed: u64,
    pub m_bit: u32,
    pub fab_seed: u64,
    pub profile: CalibrationProfile,
}

fn run_calibration(cfg: &ExperimentConfig, device: DeviceProfile) -> Result<CalibrationRecord> {
    let fab_seed = device.fab_seed;
    let puf = cfg.puf(device)?;
    let seed = cfg.schedule().calibration();
    let profile = puf.calibrate(
        &cfg.challenge,
        seed,
        cfg.keygen.calibration_crps,
        cfg.keygen.n_bit,
        cfg.keygen.encoding,
    )?;
    Ok(CalibrationRecord {
        calibration_seed: seed,
        m_bit: cfg.detection.adc_bits,
        fab_seed,
        profile,
    })
}

pub fn calibrate(config: &Path, device: &Path, out: Option<&Path>) -> Result<()> {
    let cfg = load_config(config)?;
    let rec = run_calibration(&cfg, load_device(device)?.data)?;
    let path = out_path(&cfg, out, "calibration.json");
    print_calibration(&path, &rec);
    Artifact::new(&cfg, rec).write(&path)?;
    Ok(())
}

fn print_calibration(path: &Path, rec: &CalibrationRecord) {
    println!(
        "calibration {} (mu {:.6e}, sigma {:.6e}, {} CRPs, n_bit {})",
        path.display(),
        rec.profile.mu,
        rec.profile.sigma,
        rec.profile.ensemble_size,
        rec.profile.n_bit
    );
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ResponseRecord {
    pub fab_seed: u64,
    pub challenge_seed: u64,
    pub noise_seed: u64,
    pub m_bit: u32,
    pub response: Response,
}

impl ResponseRecord {
    fn key(&self) -> Result<&Bits> {
        Ok(&self.response.key.as_ref().context("response carries no key")?.bits)
    }
}

#[allow(clippy::too_many_arguments)]
pub fn respond(
    config: &Path,
    device: &Path,
    challenge_seed: u64,
    noise_seed: Option<u64>,
    calibration: Option<&Path>,
    no_calibrate: bool,
    out: Option<&Path>,
) -> Result<()> {
    let cfg = load_config(config)?;
    let device = load_device(device)?.data;
    let cal_path = out_path(&cfg, calibration, "calibration.json");
    let rec: CalibrationRecord = if cal_path.exists() {
        Artifact::<CalibrationRecord>::read(&cal_path)?.data
    } else if no_calibrate {
        bail!("calibration file {} missing and --no-calibrate given", cal_path.display());
    } else {
        let rec = run_calibration(&cfg, device.clone())?;
        print_calibration(&cal_path, &rec);
        Artifact::new(&cfg, rec.clone()).write(&cal_path)?;
        rec
    };
    if rec.m_bit != cfg.detection.adc_bits || rec.fab_seed != device.fab_seed {
        bail!(
            "calibration {} was made for fab seed {} at m_bit {}, not fab seed {} at m_bit {}",
            cal_path.display(),
            rec.fab_seed,
            rec.m_bit,
            device.fab_seed,
            cfg.detection.adc_bits
        );
    }
    let noise_seed = noise_seed.unwrap_or_else(|| seeds::derive(cfg.master_seed, seeds::NOISE, challenge_seed));
    let fab_seed = device.fab_seed;
    let puf = cfg.puf(device)?;
    let response = puf.respond(&cfg.challenge.make(challenge_seed)?, noise_seed, &rec.profile)?;
    let record = ResponseRecord {
        fab_seed,
        challenge_seed,
        noise_seed,
        m_bit: cfg.detection.adc_bits,
        response,
    };
    let path = out_path(&cfg, out, &format!("response-{challenge_seed}.json"));
    println!("response    {}", path.display());
    println!("key bits    {}", record.key()?.len());
    println!("nmse        {:.6}", record.response.nmse);
    Artifact::new(&cfg, record).write(&path)?;
    Ok(())
}

pub fn sweep(kind: SweepKind, config: &Path, device: Option<&Path>, out_dir: Option<&Path>) -> Result<()> {
    let cfg = load_config(config)?;
    let dir = out_dir.map_or_else(|| cfg.output_dir.clone(), Path::to_path_buf);
    let meta = RunMeta::of(&cfg);
    let schedule = cfg.schedule();
    match kind {
        SweepKind::Bitgrid => {
            let puf = cfg.puf(device_or_default(&cfg, device)?)?;
            let campaign = WeightCampaign::run(&puf, &cfg.challenge, schedule, &cfg.sweep.budget, &cfg.sweep.m_bits)?;
            let mut cells = Vec::new();
            for &m in &cfg.sweep.m_bits {
                for &n in &cfg.sweep.n_bits {
                    cells.push(campaign.cell(m, n, cfg.keygen.encoding, schedule.pairs())?);
                }
            }
            write_csv(&dir.join("bitgrid.csv"), &meta, &[], &cells)?;
            let nmse: Vec<_> = campaign
                .m_bits
                .iter()
                .zip(&campaign.nmse)
                .map(|(&m_bit, &nmse)| NmseRow { m_bit, nmse })
                .collect();
            write_csv(&dir.join("nmse.csv"), &meta, &[], &nmse)?;
            println!("{:>5} {:>5} {:>10} {:>10} {:>12}", "m_bit", "n_bit", "intra", "inter", "eer");
            for c in &cells {
                println!(
                    "{:>5} {:>5} {:>10.4} {:>10.4} {:>12.3e}{}",
                    c.m_bit,
                    c.n_bit,
                    c.intra_mean,
                    c.inter_mean,
                    c.eer,
                    if c.feasible { "" } else { "  (beyond ADC limit)" }
                );
            }
            // Histograms at the configured operating point.
            let (m, n) = (cfg.detection.adc_bits, cfg.keygen.n_bit);
            if cfg.sweep.m_bits.contains(&m) {
                let profile = campaign.profile(m, n, cfg.keygen.encoding)?;
                let (ki, ke) = campaign.keys(m, &profile)?;
                let point = [("m_bit", m.to_string()), ("n_bit", n.to_string())];
                for (name, keys) in [("hist_intra.csv", ki), ("hist_inter.csv", ke)] {
                    let stats = metrics::pair_stats(&keys, schedule.pairs())?;
                    write_csv(&dir.join(name), &meta, &point, &metrics::histogram_rows(&stats))?;
                }
            }
            println!("wrote {}", dir.join("bitgrid.csv").display());
        }
        SweepKind::Mrr => {
            let setup = SweepSetup {
                nominal: cfg.device.clone(),
                fab_seed: cfg.fab_seed(),
                detection: cfg.detection.clone(),
                ridge: cfg.ridge.clone(),
                challenges: cfg.challenge.clone(),
                schedule,
                budget: cfg.sweep.budget.clone(),
                encoding: cfg.keygen.encoding,
            };
            let rows = metrics::sweep_mrr_count(&setup, &cfg.sweep.mrr_counts, cfg.sweep.mrr_m_bit, cfg.sweep.mrr_n_bit)?;
            let point = [
                ("m_bit", cfg.sweep.mrr_m_bit.to_string()),
                ("n_bit", cfg.sweep.mrr_n_bit.to_string()),
            ];
            write_csv(&dir.join("mrr.csv"), &meta, &point, &rows)?;
            println!("{:>6} {:>9} {:>9} {:>10} {:>10} {:>12}", "rings", "channels", "key_bits", "intra", "inter", "eer");
            for r in &rows {
                println!(
                    "{:>6} {:>9} {:>9} {:>10.4} {:>10.4} {:>12.3e}",
                    r.mrrs_per_node, r.channels, r.key_bits, r.intra_mean, r.inter_mean, r.eer
                );
            }
            println!("wrote {}", dir.join("mrr.csv").display());
        }
        SweepKind::Ecc => {
            let puf = cfg.ecc_puf(device_or_default(&cfg, device)?)?;
            let profile = puf.calibrate(
                &cfg.challenge,
                schedule.calibration(),
                cfg.keygen.calibration_crps,
                cfg.ecc.n_bit,
                cfg.ecc.encoding,
            )?;
            let keys = EccKeys::collect(&puf, &cfg.challenge, schedule, &profile, cfg.ecc.trials)?;
            let rows = fuzzy::ecc_sweep(&keys, &cfg.ecc.t_values)?;
            let point = [
                ("m_bit", cfg.ecc.m_bit.to_string()),
                ("n_bit", cfg.ecc.n_bit.to_string()),
                ("lambda", cfg.ecc.lambda.to_string()),
            ];
            write_csv(&dir.join("ecc.csv"), &meta, &point, &rows)?;
            let intra = keys.intra_flips()?;
            let inter = keys.inter_flips()?;
            let flips: Vec<FlipRow> = (0..intra.len())
                .map(|i| FlipRow {
                    trial: i,
                    intra_flips: intra[i],
                    inter_flips: inter[i],
                })
                .collect();
            write_csv(&dir.join("flips.csv"), &meta, &point, &flips)?;
            println!("{:>4} {:>7} {:>16} {:>14}", "t", "parity", "intra_corrected", "inter_accepted");
            for r in &rows {
                println!("{:>4} {:>7} {:>16.3} {:>14.3}", r.t, r.parity_bits, r.intra_corrected, r.inter_accepted);
            }
            let margin: Vec<_> = rows
                .iter()
                .filter(|r| r.t > 0 && r.intra_corrected == 1.0 && r.inter_accepted == 0.0)
                .collect();
            match (margin.first(), margin.last()) {
                (Some(a), Some(b)) => println!(
                    "margin: t {}..{} (parity {}..{} bits) corrects every repeat and rejects every other challenge",
                    a.t, b.t, a.parity_bits, b.parity_bits
                ),
                _ => println!("margin: none in the swept range"),
            }
            println!("wrote {}", dir.join("ecc.csv").display());
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct NmseRow {
    m_bit: u32,
    nmse: f64,
}

#[derive(Serialize)]
struct FlipRow {
    trial: usize,
    intra_flips: usize,
    inter_flips: usize,
}

pub fn enroll(response: &Path, t: u32, out: Option<&Path>) -> Result<()> {
    let resp = Artifact::<ResponseRecord>::read(response)?;
    let key = resp.data.key()?;
    let code = fuzzy::bch_build(key.len(), t)?;
    let (helper, _) = fuzzy::enroll(key, &code)?;
    let path = out.map_or_else(|| response.with_file_name("helper.json"), Path::to_path_buf);
    println!(
        "helper {} (BCH over GF(2^{}), t {}, {} parity bits for a {}-bit key)",
        path.display(),
        code.m,
        t,
        code.parity_bits(),
        key.len()
    );
    Artifact {
        meta: resp.meta,
        data: helper,
    }
    .write(&path)?;
    Ok(())
}

pub fn reconstruct(helper: &Path, response: &Path, out: Option<&Path>) -> Result<()> {
    let helper: HelperData = Artifact::read(helper)?.data;
    let resp = Artifact::<ResponseRecord>::read(response)?.data;
    let noisy = resp.key()?;
    let key = fuzzy::reconstruct(&helper, noisy).context("reconstruction rejected")?;
    println!("recovered {}-bit key ({} bits corrected)", key.len(), key.hamming(noisy)?);
    if let Some(p) = out {
        write_text(p, &(key.to_ascii01() + "\n"))?;
    }
    Ok(())
}

pub fn nist(
    config: &Path,
    device: Option<&Path>,
    bits: Option<&Path>,
    format: &str,
    out_dir: Option<&Path>,
    export: Option<&Path>,
    export_format: &str,
) -> Result<()> {
    let cfg = load_config(config)?;
    let dir = out_dir.map_or_else(|| cfg.output_dir.clone(), Path::to_path_buf);
    let corpus = match bits {
        Some(p) => randtests::import_bits(p, format.parse()?)?,
        None => {
            let puf = cfg.puf(device_or_default(&cfg, device)?)?;
            let schedule = cfg.schedule();
            let profile = puf.calibrate(
                &cfg.challenge,
                schedule.calibration(),
                cfg.keygen.calibration_crps,
                cfg.keygen.n_bit,
                cfg.keygen.encoding,
            )?;
            let keys = randtests::key_corpus(&puf, &cfg.challenge, schedule, &profile, cfg.nist.keys)?;
            if cfg.nist.extend {
                randtests::permute_extend(&keys, cfg.master_seed)?
            } else {
                randtests::concat(&keys)
            }
        }
    };
    if let Some(p) = export {
        let f: BitFormat = export_format.parse()?;
        if let Some(d) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(d)?;
        }
        randtests::export_bits(&corpus, p, f)?;
        println!("exported {} bits to {}", corpus.len(), p.display());
    }
    let seqs = randtests::split_sequences(&corpus, cfg.nist.sequence_len)?;
    let report: BatteryReport = randtests::run_battery(&seqs, cfg.nist.alpha, &cfg.nist.params)?;
    let table = report.to_table();
    print!("{table}");
    write_text(&dir.join("nist.txt"), &table)?;
    Artifact::new(&cfg, report).write(&dir.join("nist.json"))?;
    Ok(())
}
