use proptest::prelude::*;
use reputa::disasm::{assemble, disassemble, immediate_len, simplify, Bytecode, OpcodeCategory};

/// Expected re-serialization: the input, plus zero padding when the final
/// PUSH runs past the end.
fn padded(bytes: &[u8]) -> Vec<u8> {
    let mut out = bytes.to_vec();
    let mut pc = 0;
    while pc < bytes.len() {
        let end = pc + 1 + immediate_len(bytes[pc]);
        if end > bytes.len() {
            out.resize(end, 0);
        }
        pc = end;
    }
    out
}

proptest! {
    #[test]
    fn round_trip(bytes in proptest::collection::vec(any::<u8>(), 0..300)) {
        let ops = disassemble(&Bytecode(bytes.clone()));
        prop_assert_eq!(assemble(&ops), padded(&bytes));
        prop_assert!(ops.windows(2).all(|w| w[0].offset < w[1].offset));
        prop_assert!(ops.iter().rev().skip(1).all(|op| !op.truncated));
    }

    #[test]
    fn length_preserved(bytes in proptest::collection::vec(any::<u8>(), 0..300)) {
        let ops = disassemble(&Bytecode(bytes));
        prop_assert_eq!(simplify("0x0", &ops).categories.len(), ops.len());
    }

    #[test]
    fn hex_round_trip(bytes in proptest::collection::vec(any::<u8>(), 0..64), prefix in any::<bool>()) {
        let text = format!("{}{}", if prefix { "0x" } else { "" }, hex::encode_upper(&bytes));
        let code = Bytecode::from_hex(&text).unwrap();
        prop_assert_eq!(&code.0, &bytes);
        prop_assert_eq!(code.to_hex(), hex::encode(&bytes));
    }
}

#[test]
fn every_byte_has_one_category() {
    let mut seen = [0usize; OpcodeCategory::COUNT];
    for b in 0..=255u8 {
        let mut code = vec![b];
        code.resize(1 + immediate_len(b), 0);
        let seq = simplify("0x0", &disassemble(&Bytecode(code)));
        assert_eq!(seq.categories.len(), 1);
        seen[seq.categories[0] as usize] += 1;
    }
    assert_eq!(seen.iter().sum::<usize>(), 256);
    assert!(seen.iter().all(|&n| n > 0), "{seen:?}");
}
