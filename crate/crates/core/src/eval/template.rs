use crate::corpus::inventory::cosine;
use crate::corpus::{SymbolId, SymbolInventory};
use crate::dsp::{levenshtein, EditSummary, MelSpectrogram};
use crate::error::{Error, Result};

/// Frame classification against the inventory's calibrated prototypes.
/// `None` means the frame is silence (below the energy gate).
pub fn classify_frame(
    frame: ndarray::ArrayView1<f64>,
    inventory: &SymbolInventory,
    energy_gate: f64,
) -> Option<(SymbolId, f64)> {
    let floor = inventory.log_floor_ln;
    let peak = frame.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if peak - floor < energy_gate {
        return None;
    }
    let profile = crate::corpus::inventory::peak_profile(frame, crate::corpus::inventory::PEAK_MARGIN);
    let prof = ndarray::ArrayView1::from(&profile);
    let mut best = (0u16, -1.0f64);
    for s in 0..inventory.prototypes.nrows() {
        let c = cosine(prof, inventory.prototypes.row(s));
        if c > best.1 {
            best = (s as SymbolId, c);
        }
    }
    Some(best)
}

/// Majority vote over a three-frame window; isolated one-frame labels at
/// segment transitions get absorbed by their neighbors.
fn majority_smooth(labels: &[Option<SymbolId>]) -> Vec<Option<SymbolId>> {
    if labels.len() < 3 {
        return labels.to_vec();
    }
    let mut out = labels.to_vec();
    for t in 1..labels.len() - 1 {
        if labels[t - 1] == labels[t + 1] && labels[t - 1] != labels[t] {
            out[t] = labels[t - 1];
        }
    }
    out
}

/// Decode a mel spectrogram into a symbol sequence: classify every frame,
/// smooth isolated labels, merge runs of the same label, drop runs shorter
/// than `min_run` (symbol transitions) and silence.
pub fn decode_symbols(
    mel: &MelSpectrogram,
    inventory: &SymbolInventory,
    min_run: usize,
) -> Vec<SymbolId> {
    let energy_gate = 1.0;
    let labels: Vec<Option<SymbolId>> = mel
        .frames
        .rows()
        .into_iter()
        .map(|f| classify_frame(f, inventory, energy_gate).map(|(s, _)| s))
        .collect();
    let labels = majority_smooth(&labels);

    let mut out = Vec::new();
    let mut run: Option<(SymbolId, usize)> = None;
    for l in labels.iter().chain(std::iter::once(&None)) {
        match (run, l) {
            (Some((sym, n)), Some(cur)) if *cur == sym => run = Some((sym, n + 1)),
            (prev, cur) => {
                if let Some((sym, n)) = prev {
                    if n >= min_run {
                        out.push(sym);
                    }
                }
                run = cur.map(|s| (s, 1));
            }
        }
    }
    out
}

/// Character-level generation error: decode the generated mel by template
/// matching and score it against the reference symbols with the edit
/// distance. All-silence output scores as a full deletion.
pub fn cger_oracle(
    generated: &MelSpectrogram,
    reference: &[SymbolId],
    inventory: &SymbolInventory,
    min_run: usize,
) -> Result<EditSummary> {
    if reference.is_empty() {
        return Err(Error::invalid("cger_oracle", "empty reference"));
    }
    let decoded = decode_symbols(generated, inventory, min_run);
    Ok(levenshtein(reference, &decoded))
}
