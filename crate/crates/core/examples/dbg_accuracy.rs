// debug: decode errors over many renderings
use foundtts::corpus::{render_utterance, sample_symbols, InventoryConfig, SymbolInventory};
use foundtts::dsp::{levenshtein, MelConfig};
use foundtts::eval::decode_symbols;
use rand::SeedableRng;

fn main() {
    let inv = SymbolInventory::build(
        InventoryConfig { n_phonemes: 10, min_duration_frames: 4, max_duration_frames: 8 },
        MelConfig::default(),
        16000,
    ).unwrap();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(31);
    let mut total = 0usize;
    let mut edits = 0usize;
    for i in 0..40 {
        let (symbols, durations) = sample_symbols(&inv, (5, 12), &mut rng);
        let utt = render_utterance(&format!("u{i}"), "s", &symbols, &durations, &inv, 100 + i).unwrap();
        let decoded = decode_symbols(&utt.mel, &inv, 2);
        let s = levenshtein(&symbols, &decoded);
        total += symbols.len();
        edits += s.total_edits();
        if s.total_edits() > 0 {
            println!("utt {i}: ref {:?} (durs {:?})", symbols, durations);
            println!("      got {:?}  (S{} D{} I{})", decoded, s.substitutions, s.deletions, s.insertions);
        }
    }
    println!("accuracy {:.4}", 1.0 - edits as f64 / total as f64);
}
