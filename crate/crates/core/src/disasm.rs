//! EVM bytecode disassembly and opcode category simplification.
//!
//! Bytecode is decoded from hex into a flat [`Opcode`] list. Each opcode is
//! then reduced to one of fifteen coarse [`OpcodeCategory`] symbols, which
//! form the vocabulary for the embedding stage.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Raw contract bytecode.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Bytecode(pub Vec<u8>);

impl Bytecode {
    /// Decodes a hex string, with or without a `0x` prefix.
    pub fn from_hex(input: &str) -> Result<Self> {
        let (prefix_len, body) = match input.strip_prefix("0x").or_else(|| input.strip_prefix("0X")) {
            Some(rest) => (2, rest),
            None => (0, input),
        };
        if let Some(pos) = body.bytes().position(|b| !b.is_ascii_hexdigit()) {
            return Err(Error::Parse {
                offset: prefix_len + pos,
                msg: format!("non-hex character {:?}", body[pos..].chars().next().unwrap_or('?')),
            });
        }
        if body.len() % 2 != 0 {
            return Err(Error::Parse {
                offset: prefix_len + body.len(),
                msg: "odd-length hex string".into(),
            });
        }
        let bytes = hex::decode(body).map_err(|e| Error::Parse {
            offset: prefix_len,
            msg: e.to_string(),
        })?;
        Ok(Bytecode(bytes))
    }

    /// Lowercase hex without prefix.
    pub fn to_hex(&self) -> String {
        hex::encode(&self.0)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl Serialize for Bytecode {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&format!("0x{}", self.to_hex()))
    }
}

impl<'de> Deserialize<'de> for Bytecode {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Bytecode::from_hex(&s).map_err(serde::de::Error::custom)
    }
}

/// A single decoded instruction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Opcode {
    pub byte: u8,
    /// Position of the opcode byte within the bytecode.
    pub offset: usize,
    /// Immediate operand; `N` bytes for `PUSHN`, empty otherwise.
    pub immediate: Vec<u8>,
    /// Set when the immediate ran past the end of code and was zero-padded.
    pub truncated: bool,
}

impl Opcode {
    pub fn mnemonic(&self) -> &'static str {
        mnemonic(self.byte).unwrap_or("UNASSIGNED")
    }

    pub fn category(&self) -> OpcodeCategory {
        OpcodeCategory::of(self.byte)
    }
}

impl fmt::Display for Opcode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match mnemonic(self.byte) {
            Some(name) => f.write_str(name)?,
            None => write!(f, "UNASSIGNED(0x{:02x})", self.byte)?,
        }
        if !self.immediate.is_empty() {
            write!(f, " 0x{}", hex::encode(&self.immediate))?;
        }
        Ok(())
    }
}

/// Number of immediate bytes following `byte`.
pub fn immediate_len(byte: u8) -> usize {
    match byte {
        0x60..=0x7f => (byte - 0x5f) as usize,
        _ => 0,
    }
}

/// Mnemonic for an assigned opcode byte, `None` for unassigned bytes.
pub fn mnemonic(byte: u8) -> Option<&'static str> {
    const PUSH: [&str; 32] = [
        "PUSH1", "PUSH2", "PUSH3", "PUSH4", "PUSH5", "PUSH6", "PUSH7", "PUSH8", "PUSH9", "PUSH10",
        "PUSH11", "PUSH12", "PUSH13", "PUSH14", "PUSH15", "PUSH16", "PUSH17", "PUSH18", "PUSH19",
        "PUSH20", "PUSH21", "PUSH22", "PUSH23", "PUSH24", "PUSH25", "PUSH26", "PUSH27", "PUSH28",
        "PUSH29", "PUSH30", "PUSH31", "PUSH32",
    ];
    const DUP: [&str; 16] = [
        "DUP1", "DUP2", "DUP3", "DUP4", "DUP5", "DUP6", "DUP7", "DUP8", "DUP9", "DUP10", "DUP11",
        "DUP12", "DUP13", "DUP14", "DUP15", "DUP16",
    ];
    const SWAP: [&str; 16] = [
        "SWAP1", "SWAP2", "SWAP3", "SWAP4", "SWAP5", "SWAP6", "SWAP7", "SWAP8", "SWAP9", "SWAP10",
        "SWAP11", "SWAP12", "SWAP13", "SWAP14", "SWAP15", "SWAP16",
    ];
    const LOG: [&str; 5] = ["LOG0", "LOG1", "LOG2", "LOG3", "LOG4"];

    let name = match byte {
        0x00 => "STOP",
        0x01 => "ADD",
        0x02 => "MUL",
        0x03 => "SUB",
        0x04 => "DIV",
        0x05 => "SDIV",
        0x06 => "MOD",
        0x07 => "SMOD",
        0x08 => "ADDMOD",
        0x09 => "MULMOD",
        0x0a => "EXP",
        0x0b => "SIGNEXTEND",
        0x10 => "LT",
        0x11 => "GT",
        0x12 => "SLT",
        0x13 => "SGT",
        0x14 => "EQ",
        0x15 => "ISZERO",
        0x16 => "AND",
        0x17 => "OR",
        0x18 => "XOR",
        0x19 => "NOT",
        0x1a => "BYTE",
        0x1b => "SHL",
        0x1c => "SHR",
        0x1d => "SAR",
        0x20 => "KECCAK256",
        0x30 => "ADDRESS",
        0x31 => "BALANCE",
        0x32 => "ORIGIN",
        0x33 => "CALLER",
        0x34 => "CALLVALUE",
        0x35 => "CALLDATALOAD",
        0x36 => "CALLDATASIZE",
        0x37 => "CALLDATACOPY",
        0x38 => "CODESIZE",
        0x39 => "CODECOPY",
        0x3a => "GASPRICE",
        0x3b => "EXTCODESIZE",
        0x3c => "EXTCODECOPY",
        0x3d => "RETURNDATASIZE",
        0x3e => "RETURNDATACOPY",
        0x3f => "EXTCODEHASH",
        0x40 => "BLOCKHASH",
        0x41 => "COINBASE",
        0x42 => "TIMESTAMP",
        0x43 => "NUMBER",
        0x44 => "PREVRANDAO",
        0x45 => "GASLIMIT",
        0x46 => "CHAINID",
        0x47 => "SELFBALANCE",
        0x48 => "BASEFEE",
        0x49 => "BLOBHASH",
        0x4a => "BLOBBASEFEE",
        0x50 => "POP",
        0x51 => "MLOAD",
        0x52 => "MSTORE",
        0x53 => "MSTORE8",
        0x54 => "SLOAD",
        0x55 => "SSTORE",
        0x56 => "JUMP",
        0x57 => "JUMPI",
        0x58 => "PC",
        0x59 => "MSIZE",
        0x5a => "GAS",
        0x5b => "JUMPDEST",
        0x5c => "TLOAD",
        0x5d => "TSTORE",
        0x5e => "MCOPY",
        0x5f => "PUSH0",
        0x60..=0x7f => PUSH[(byte - 0x60) as usize],
        0x80..=0x8f => DUP[(byte - 0x80) as usize],
        0x90..=0x9f => SWAP[(byte - 0x90) as usize],
        0xa0..=0xa4 => LOG[(byte - 0xa0) as usize],
        0xf0 => "CREATE",
        0xf1 => "CALL",
        0xf2 => "CALLCODE",
        0xf3 => "RETURN",
        0xf4 => "DELEGATECALL",
        0xf5 => "CREATE2",
        0xfa => "STATICCALL",
        0xfd => "REVERT",
        0xfe => "INVALID",
        0xff => "SELFDESTRUCT",
        _ => return None,
    };
    Some(name)
}

/// Decodes bytecode into instructions. Every byte is consumed exactly once,
/// either as an opcode or as part of a `PUSH` immediate.
pub fn disassemble(code: &Bytecode) -> Vec<Opcode> {
    let bytes = &code.0;
    let mut out = Vec::new();
    let mut pc = 0;
    while pc < bytes.len() {
        let byte = bytes[pc];
        let n = immediate_len(byte);
        let start = pc + 1;
        let end = (start + n).min(bytes.len());
        let mut immediate = bytes[start..end].to_vec();
        let truncated = immediate.len() < n;
        immediate.resize(n, 0);
        out.push(Opcode {
            byte,
            offset: pc,
            immediate,
            truncated,
        });
        pc = start + n;
    }
    out
}

/// Re-serializes instructions. Truncated immediates come back zero-padded.
pub fn assemble(ops: &[Opcode]) -> Vec<u8> {
    let mut out = Vec::with_capacity(ops.len() * 2);
    for op in ops {
        out.push(op.byte);
        out.extend_from_slice(&op.immediate);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[repr(u8)]
pub enum OpcodeCategory {
    Arithmetic = 0,
    ComparisonLogic = 1,
    Crypto = 2,
    Environment = 3,
    Block = 4,
    StackPop = 5,
    Memory = 6,
    Storage = 7,
    Flow = 8,
    Push = 9,
    Dup = 10,
    Swap = 11,
    Log = 12,
    System = 13,
    Invalid = 14,
}

impl OpcodeCategory {
    pub const COUNT: usize = 15;

    pub const ALL: [OpcodeCategory; Self::COUNT] = [
        Self::Arithmetic,
        Self::ComparisonLogic,
        Self::Crypto,
        Self::Environment,
        Self::Block,
        Self::StackPop,
        Self::Memory,
        Self::Storage,
        Self::Flow,
        Self::Push,
        Self::Dup,
        Self::Swap,
        Self::Log,
        Self::System,
        Self::Invalid,
    ];

    /// Total over all byte values; unassigned bytes map to `Invalid`.
    pub fn of(byte: u8) -> Self {
        use OpcodeCategory::*;
        match byte {
            0x01..=0x0b => Arithmetic,
            0x10..=0x1d => ComparisonLogic,
            0x20 => Crypto,
            0x30..=0x3f => Environment,
            0x40..=0x4a => Block,
            0x50 | 0x5f => StackPop,
            0x51..=0x53 | 0x59 | 0x5e => Memory,
            0x54 | 0x55 | 0x5c | 0x5d => Storage,
            0x56..=0x58 | 0x5a | 0x5b => Flow,
            0x60..=0x7f => Push,
            0x80..=0x8f => Dup,
            0x90..=0x9f => Swap,
            0xa0..=0xa4 => Log,
            0x00 | 0xf0..=0xf5 | 0xfa | 0xfd | 0xff => System,
            _ => Invalid,
        }
    }

    pub fn id(self) -> u8 {
        self as u8
    }

    pub fn from_id(id: u8) -> Option<Self> {
        Self::ALL.get(id as usize).copied()
    }

    pub fn name(self) -> &'static str {
        use OpcodeCategory::*;
        match self {
            Arithmetic => "Arithmetic",
            ComparisonLogic => "ComparisonLogic",
            Crypto => "Crypto",
            Environment => "Environment",
            Block => "Block",
            StackPop => "StackPop",
            Memory => "Memory",
            Storage => "Storage",
            Flow => "Flow",
            Push => "Push",
            Dup => "Dup",
            Swap => "Swap",
            Log => "Log",
            System => "System",
            Invalid => "Invalid",
        }
    }

    /// Opcode bytes that belong to this category.
    pub fn members(self) -> Vec<u8> {
        (0..=255u8).filter(|&b| Self::of(b) == self).collect()
    }
}

impl fmt::Display for OpcodeCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Category stream of one contract. Serialized as `{address, category_ids}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategorySequence {
    #[serde(rename = "address")]
    pub contract_address: String,
    #[serde(rename = "category_ids")]
    pub categories: Vec<u8>,
}

impl CategorySequence {
    pub fn len(&self) -> usize {
        self.categories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.categories.is_empty()
    }
}

pub fn simplify(address: &str, ops: &[Opcode]) -> CategorySequence {
    CategorySequence {
        contract_address: address.to_string(),
        categories: ops.iter().map(|op| op.category().id()).collect(),
    }
}

/// Writes sequences as JSON lines.
pub fn write_category_jsonl<W: std::io::Write>(mut w: W, seqs: &[CategorySequence]) -> Result<()> {
    for s in seqs {
        serde_json::to_writer(&mut w, s)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_category_jsonl<R: std::io::BufRead>(r: R) -> Result<Vec<CategorySequence>> {
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(hex: &str) -> Vec<String> {
        disassemble(&Bytecode::from_hex(hex).unwrap())
            .iter()
            .map(|o| o.to_string())
            .collect()
    }

    #[test]
    fn add_program() {
        assert_eq!(
            names("0x600160020100"),
            vec!["PUSH1 0x01", "PUSH1 0x02", "ADD", "STOP"]
        );
    }

    #[test]
    fn empty_input() {
        assert!(disassemble(&Bytecode::from_hex("").unwrap()).is_empty());
        assert!(disassemble(&Bytecode::from_hex("0x").unwrap()).is_empty());
    }

    #[test]
    fn truncated_push_is_padded() {
        let ops = disassemble(&Bytecode::from_hex("0x61ff").unwrap());
        assert_eq!(ops.len(), 1);
        assert_eq!(ops[0].mnemonic(), "PUSH2");
        assert_eq!(ops[0].immediate, vec![0xff, 0x00]);
        assert!(ops[0].truncated);
        assert_eq!(assemble(&ops), vec![0x61, 0xff, 0x00]);
    }

    #[test]
    fn designated_invalid() {
        let ops = disassemble(&Bytecode::from_hex("fe").unwrap());
        assert_eq!(ops[0].mnemonic(), "INVALID");
        assert_eq!(ops[0].category(), OpcodeCategory::Invalid);
    }

    #[test]
    fn hex_errors_carry_offset() {
        match Bytecode::from_hex("0x6001z0") {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, 6),
            other => panic!("unexpected {other:?}"),
        }
        match Bytecode::from_hex("600") {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn hex_reencodes_lowercase() {
        let code = Bytecode::from_hex("0x60AbCd").unwrap();
        assert_eq!(code.to_hex(), "60abcd");
    }

    #[test]
    fn simplify_examples() {
        let ops = disassemble(&Bytecode(vec![0x01, 0x02]));
        let seq = simplify("0x00", &ops);
        assert_eq!(seq.categories, vec![0, 0]);

        let ops = disassemble(&Bytecode(vec![0x60, 0xaa, 0x82, 0x90]));
        let cats: Vec<_> = ops.iter().map(Opcode::category).collect();
        assert_eq!(
            cats,
            vec![OpcodeCategory::Push, OpcodeCategory::Dup, OpcodeCategory::Swap]
        );

        assert_eq!(OpcodeCategory::of(0x0c), OpcodeCategory::Invalid);
    }

    #[test]
    fn category_table_covers_named_groups() {
        use OpcodeCategory::*;
        assert_eq!(Arithmetic.members().len(), 11);
        assert_eq!(ComparisonLogic.members().len(), 14);
        assert_eq!(Crypto.members(), vec![0x20]);
        assert_eq!(Push.members().len(), 32);
        assert_eq!(Dup.members().len(), 16);
        assert_eq!(Swap.members().len(), 16);
        assert_eq!(Log.members().len(), 5);
        assert_eq!(StackPop.members(), vec![0x50, 0x5f]);
        let total: usize = OpcodeCategory::ALL.iter().map(|c| c.members().len()).sum();
        assert_eq!(total, 256);
        for (i, c) in OpcodeCategory::ALL.iter().enumerate() {
            assert_eq!(c.id() as usize, i);
            assert_eq!(OpcodeCategory::from_id(i as u8), Some(*c));
        }
    }

    #[test]
    fn jsonl_shape() {
        let seq = CategorySequence {
            contract_address: "0xabc".into(),
            categories: vec![9, 0],
        };
        let mut buf = Vec::new();
        write_category_jsonl(&mut buf, std::slice::from_ref(&seq)).unwrap();
        assert_eq!(
            String::from_utf8(buf.clone()).unwrap(),
            "{\"address\":\"0xabc\",\"category_ids\":[9,0]}\n"
        );
        assert_eq!(read_category_jsonl(&buf[..]).unwrap(), vec![seq]);
    }
}
