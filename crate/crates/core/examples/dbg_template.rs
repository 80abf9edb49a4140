// debug: per-frame classification around a boundary
use foundtts::corpus::{render_utterance, InventoryConfig, SymbolInventory};
use foundtts::dsp::MelConfig;
use foundtts::eval::classify_frame;

fn main() {
    let inv = SymbolInventory::build(
        InventoryConfig { n_phonemes: 10, min_duration_frames: 4, max_duration_frames: 8 },
        MelConfig::default(),
        16000,
    ).unwrap();
    let symbols = vec![0u16, 3, 7, 10, 2, 9];
    let durations = vec![6usize, 5, 7, 4, 8, 6];
    let utt = render_utterance("u", "s", &symbols, &durations, &inv, 5).unwrap();
    let mut at = 0;
    for (si, (&s, &d)) in symbols.iter().zip(durations.iter()).enumerate() {
        for f in at..at+d {
            let row = utt.mel.frames.row(f);
            let c = classify_frame(row, &inv, 1.0);
            println!("seg{si} sym{s} frame{f}: {:?}", c.map(|(s,c)| (s, (c*1000.0).round()/1000.0)));
        }
        at += d;
    }
}
