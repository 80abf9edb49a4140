use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use crate::adv::AdvGranularity;
use crate::corpus::{build_corpus, CorpusConfig, CorpusManifest, NoiseSpec};
use crate::error::{Error, Result};
use crate::model::{AttentionKind, TrainingMode};
use crate::train::{checkpoint, train, TrainConfig};

use super::{evaluate, EvalConfig, EvalReport};

/// One system in the comparison grid.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct MatrixCell {
    pub name: String,
    /// Transcript corruption of the target speaker.
    pub target_cer: f64,
    /// Acoustic condition of the target speaker; `None` keeps it clean.
    pub target_snr_db: Option<f64>,
    pub attention: AttentionKind,
    pub mode: TrainingMode,
    pub adv_granularity: Option<AdvGranularity>,
}

/// The named systems: clean/noisy text and audio baselines, the clustering
/// variants, and the adversarial variants on the hardest condition.
pub fn standard_cell(name: &str) -> Option<MatrixCell> {
    let mk = |name: &str,
              cer: f64,
              snr: Option<f64>,
              attention: AttentionKind,
              mode: TrainingMode,
              gran: Option<AdvGranularity>| MatrixCell {
        name: name.to_string(),
        target_cer: cer,
        target_snr_db: snr,
        attention,
        mode,
        adv_granularity: gran,
    };
    let baseline = TrainingMode::baseline();
    let vq = TrainingMode {
        vq: true,
        adversarial: false,
    };
    let adv = TrainingMode {
        vq: false,
        adversarial: true,
    };
    use AttentionKind::{Gmm, Lsa};
    Some(match name {
        "A" => mk("A", 0.0, None, Gmm, baseline, None),
        "B" => mk("B", 0.088, None, Gmm, baseline, None),
        "C" => mk("C", 0.117, None, Gmm, baseline, None),
        "D" => mk("D", 0.233, None, Gmm, baseline, None),
        "E" => mk("E", 0.233, None, Lsa, baseline, None),
        "F" => mk("F", 0.0, Some(8.0), Gmm, baseline, None),
        "G" => mk("G", 0.0, Some(4.0), Gmm, baseline, None),
        "H" => mk("H", 0.233, Some(4.0), Gmm, baseline, None),
        "VQVAE_A" => mk("VQVAE_A", 0.0, None, Gmm, vq, None),
        "VQVAE_D" => mk("VQVAE_D", 0.233, None, Gmm, vq, None),
        "ADV_SEN" => mk(
            "ADV_SEN",
            0.233,
            Some(4.0),
            Gmm,
            adv,
            Some(AdvGranularity::Sentence),
        ),
        "ADV_FRAME" => mk(
            "ADV_FRAME",
            0.233,
            Some(4.0),
            Gmm,
            adv,
            Some(AdvGranularity::Frame),
        ),
        _ => return None,
    })
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MatrixConfig {
    pub cells: Vec<String>,
}

impl Default for MatrixConfig {
    fn default() -> Self {
        MatrixConfig {
            cells: vec![
                "A".into(),
                "D".into(),
                "VQVAE_A".into(),
                "VQVAE_D".into(),
                "H".into(),
                "ADV_FRAME".into(),
            ],
        }
    }
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct CellResult {
    pub name: String,
    pub report: Option<EvalReport>,
    pub error: Option<String>,
    pub train_seconds: f64,
    pub eval_seconds: f64,
}

/// Train and evaluate every requested cell. Corpora are generated once per
/// (CER, SNR) condition and shared between cells; a failing cell records
/// its error and the matrix continues.
pub fn run_experiment_matrix(
    cells: &[String],
    base_corpus: &CorpusConfig,
    base_train: &TrainConfig,
    eval_cfg: &EvalConfig,
    seed: u64,
    out_dir: &Path,
) -> Result<Vec<CellResult>> {
    if cells.is_empty() {
        return Err(Error::config("no matrix cells requested"));
    }
    let mut parsed = Vec::new();
    for name in cells {
        let cell = standard_cell(name)
            .ok_or_else(|| Error::config(format!("unknown matrix cell {name:?}")))?;
        parsed.push(cell);
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let mut corpora: BTreeMap<String, CorpusManifest> = BTreeMap::new();
    let mut results = Vec::new();
    for cell in &parsed {
        let key = match cell.target_snr_db {
            Some(snr) => format!("cer{:04}_snr{}", (cell.target_cer * 1000.0).round() as u32, snr),
            None => format!("cer{:04}_clean", (cell.target_cer * 1000.0).round() as u32),
        };
        let mut run = || -> Result<(EvalReport, f64, f64)> {
            if !corpora.contains_key(&key) {
                let dir = out_dir.join(format!("corpus_{key}"));
                let manifest_path = dir.join("manifest.jsonl");
                let manifest = if manifest_path.exists() {
                    CorpusManifest::load(&manifest_path)?
                } else {
                    let mut cfg = base_corpus.clone();
                    cfg.speakers[0].target_cer = cell.target_cer;
                    cfg.speakers[0].noise = cell.target_snr_db.map(|snr| {
                        let kinds = base_corpus.speakers[0]
                            .noise
                            .as_ref()
                            .map(|n| n.kinds.clone())
                            .unwrap_or_else(|| {
                                vec![
                                    crate::corpus::NoiseKind::White,
                                    crate::corpus::NoiseKind::Pink,
                                    crate::corpus::NoiseKind::Babble,
                                    crate::corpus::NoiseKind::Hum,
                                ]
                            });
                        NoiseSpec { kinds, snr_db: snr }
                    });
                    build_corpus(&cfg, seed, &dir)?
                };
                corpora.insert(key.clone(), manifest);
            }
            let manifest = &corpora[&key];

            let mut tc = base_train.clone();
            tc.mode = cell.mode;
            tc.model.attention = cell.attention;
            if let Some(g) = cell.adv_granularity {
                tc.model.adv.granularity = g;
            }
            tc.seed = seed;
            let cell_dir = out_dir.join(format!("cell_{}", cell.name));
            let t0 = std::time::Instant::now();
            let outcome = train(manifest, &tc, &cell_dir)?;
            let train_seconds = t0.elapsed().as_secs_f64();
            let (model, _) = checkpoint::load(&outcome.checkpoint)?;
            let t1 = std::time::Instant::now();
            let report = evaluate(&cell.name, &model, manifest, eval_cfg, &cell_dir.join("eval"))?;
            Ok((report, train_seconds, t1.elapsed().as_secs_f64()))
        };
        match run() {
            Ok((report, train_seconds, eval_seconds)) => results.push(CellResult {
                name: cell.name.clone(),
                report: Some(report),
                error: None,
                train_seconds,
                eval_seconds,
            }),
            Err(e) => results.push(CellResult {
                name: cell.name.clone(),
                report: None,
                error: Some(e.to_string()),
                train_seconds: 0.0,
                eval_seconds: 0.0,
            }),
        }
    }

    let json_path = out_dir.join("matrix.json");
    std::fs::write(&json_path, serde_json::to_vec_pretty(&results)?)
        .map_err(|e| Error::io(json_path, e))?;
    let txt_path = out_dir.join("matrix.txt");
    let mut f = std::fs::File::create(&txt_path).map_err(|e| Error::io(&txt_path, e))?;
    write!(f, "{}", format_table(&results)).map_err(|e| Error::io(&txt_path, e))?;
    Ok(results)
}

/// Aligned plain-text comparison table.
pub fn format_table(results: &[CellResult]) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<10} {:>8} {:>9} {:>8} {:>9} {:>10} {:>7}\n",
        "system", "CER", "MCD", "CGER%", "probe", "monotone", "trunc%"
    ));
    for r in results {
        match (&r.report, &r.error) {
            (Some(rep), _) => {
                let probe = rep
                    .noise_probe
                    .as_ref()
                    .map(|p| format!("{:.1}%", p.accuracy * 100.0))
                    .unwrap_or_else(|| "-".into());
                out.push_str(&format!(
                    "{:<10} {:>7.1}% {:>9.3} {:>7.2}% {:>9} {:>10.3} {:>6.1}%\n",
                    r.name,
                    rep.corpus_cer * 100.0,
                    rep.mcd_mean,
                    rep.cger.rate * 100.0,
                    probe,
                    rep.attention_monotonicity,
                    rep.truncation_rate * 100.0,
                ));
            }
            (None, Some(e)) => {
                out.push_str(&format!("{:<10} failed: {e}\n", r.name));
            }
            (None, None) => out.push_str(&format!("{:<10} no result\n", r.name)),
        }
    }
    out
}
