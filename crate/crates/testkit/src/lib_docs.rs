//! Synthetic CVRPLIB text and parser fuzz inputs.

use rand::seq::SliceRandom;
use rand::Rng;

/// An X-n101-k25 style document: integer grid coordinates in [0, 1000],
/// depot somewhere in the list, integer demands.
pub fn synth_cvrplib(rng: &mut impl Rng, dim: usize) -> String {
    let cap: u64 = rng.gen_range(50..=300);
    let depot = rng.gen_range(1..=dim);
    let mut s = format!(
        "NAME : X-n{dim}-k{}\nCOMMENT : \"synthetic\"\nTYPE : CVRP\nDIMENSION : {dim}\nEDGE_WEIGHT_TYPE : EUC_2D\nCAPACITY : {cap}\nNODE_COORD_SECTION\n",
        rng.gen_range(2..30)
    );
    for id in 1..=dim {
        s.push_str(&format!("{id}\t{}\t{}\n", rng.gen_range(0..=1000), rng.gen_range(0..=1000)));
    }
    s.push_str("DEMAND_SECTION\n");
    for id in 1..=dim {
        let d = if id == depot { 0 } else { rng.gen_range(1..=cap) };
        s.push_str(&format!("{id} {d}\n"));
    }
    s.push_str(&format!("DEPOT_SECTION\n {depot}\n -1\nEOF\n"));
    s
}

/// Byte soup biased towards the parser's vocabulary.
pub fn noisy_document(rng: &mut impl Rng) -> Vec<u8> {
    const WORDS: &[&str] = &[
        "NAME", "TYPE", "CVRP", "TSP", "DIMENSION", "EDGE_WEIGHT_TYPE", "EUC_2D", "CAPACITY", ":",
        "NODE_COORD_SECTION", "DEMAND_SECTION", "DEPOT_SECTION", "EOF", "-1", "0", "1", "2", "3", "1e308", "NaN",
        "inf", "-0", "18446744073709551616", "\n", "\r\n", " ", "\t",
    ];
    let mut out = Vec::new();
    for _ in 0..rng.gen_range(0..80) {
        if rng.gen_bool(0.8) {
            out.extend_from_slice(WORDS.choose(rng).unwrap().as_bytes());
        } else {
            out.push(rng.gen());
        }
        if rng.gen_bool(0.5) {
            out.push(if rng.gen_bool(0.5) { b' ' } else { b'\n' });
        }
    }
    out
}

/// The `i`-th fuzz input: raw bytes, vocabulary soup or a damaged copy of
/// `valid`, in rotation.
pub fn fuzz_input(rng: &mut impl Rng, i: usize, valid: &[u8]) -> Vec<u8> {
    match i % 3 {
        0 => (0..rng.gen_range(0..400)).map(|_| rng.gen()).collect(),
        1 => noisy_document(rng),
        _ => {
            let mut b = valid.to_vec();
            for _ in 0..rng.gen_range(1..6) {
                let at = rng.gen_range(0..b.len());
                match rng.gen_range(0..3) {
                    0 => b[at] = rng.gen(),
                    1 => {
                        b.remove(at);
                    }
                    _ => b.truncate(at),
                }
                if b.is_empty() {
                    break;
                }
            }
            b
        }
    }
}
