//! Byte-oriented rANS over per-symbol [`CdfTable`]s.
//!
//! The state is 64 bits and kept in `[RANS_L, 256 * RANS_L)`; renormalization
//! moves one byte at a time. rANS is last-in-first-out, so the encoder takes
//! symbols in reverse and the decoder reads them forward.
//!
//! Payload layout: the final encoder state as 8 little-endian bytes, then the
//! renormalization bytes in the order the decoder consumes them.

use crate::error::{Error, Result};
use crate::quant::{CdfTable, ESCAPE_BITS};

/// Lower bound of the normalized state interval.
pub const RANS_L: u64 = 1 << 32;

/// Ordered symbols with the table each one is coded under.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SymbolStream {
    symbols: Vec<i32>,
    tables: Vec<CdfTable>,
}

impl SymbolStream {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, symbol: i32, table: CdfTable) {
        self.symbols.push(symbol);
        self.tables.push(table);
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn symbols(&self) -> &[i32] {
        &self.symbols
    }

    pub fn tables(&self) -> &[CdfTable] {
        &self.tables
    }

    /// Ideal code length in bits (table masses plus escape raw bits).
    pub fn ideal_bits(&self) -> Result<f64> {
        self.symbols
            .iter()
            .zip(&self.tables)
            .map(|(&s, t)| t.cost_bits(s))
            .sum()
    }
}

#[derive(Debug)]
pub struct RansEncoder {
    state: u64,
    bytes: Vec<u8>,
}

impl Default for RansEncoder {
    fn default() -> Self {
        Self::new()
    }
}

impl RansEncoder {
    pub fn new() -> Self {
        RansEncoder {
            state: RANS_L,
            bytes: Vec::new(),
        }
    }

    fn put(&mut self, start: u32, freq: u32, precision: u32) {
        let x_max = ((RANS_L >> precision) << 8) * freq as u64;
        while self.state >= x_max {
            self.bytes.push(self.state as u8);
            self.state >>= 8;
        }
        let f = freq as u64;
        self.state = ((self.state / f) << precision) + (self.state % f) + start as u64;
    }

    /// Pushes one symbol. Symbols must be pushed in reverse decode order.
    pub fn encode_symbol(&mut self, value: i32, table: &CdfTable) -> Result<()> {
        let coded = table.code(value)?;
        // the escape offset is decoded after its bucket, so it goes in first
        if let Some(off) = coded.escape {
            self.put(off, 1, ESCAPE_BITS);
        }
        let (start, freq) = table.range(coded.index);
        self.put(start, freq, table.precision());
        Ok(())
    }

    pub fn finish(self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + self.bytes.len());
        out.extend_from_slice(&self.state.to_le_bytes());
        out.extend(self.bytes.iter().rev());
        out
    }
}

#[derive(Debug)]
pub struct RansDecoder<'a> {
    state: u64,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> RansDecoder<'a> {
    pub fn new(bytes: &'a [u8]) -> Result<Self> {
        let head: [u8; 8] = bytes
            .get(..8)
            .and_then(|b| b.try_into().ok())
            .ok_or_else(|| Error::CorruptStream("payload shorter than the 8-byte rANS state".into()))?;
        let state = u64::from_le_bytes(head);
        if !(RANS_L..RANS_L << 8).contains(&state) {
            return Err(Error::CorruptStream(format!("initial state {state:#x} out of range")));
        }
        Ok(RansDecoder { state, bytes, pos: 8 })
    }

    fn get(&mut self, precision: u32) -> u32 {
        (self.state & ((1u64 << precision) - 1)) as u32
    }

    fn advance(&mut self, start: u32, freq: u32, precision: u32) -> Result<()> {
        let slot = self.state & ((1u64 << precision) - 1);
        self.state = freq as u64 * (self.state >> precision) + slot - start as u64;
        while self.state < RANS_L {
            let b = *self
                .bytes
                .get(self.pos)
                .ok_or_else(|| Error::CorruptStream("stream exhausted".into()))?;
            self.state = (self.state << 8) | b as u64;
            self.pos += 1;
        }
        Ok(())
    }

    pub fn decode_symbol(&mut self, table: &CdfTable) -> Result<i32> {
        let precision = table.precision();
        let index = table.lookup(self.get(precision));
        let (start, freq) = table.range(index);
        self.advance(start, freq, precision)?;
        let escape = if table.is_escape(index) {
            let off = self.get(ESCAPE_BITS);
            self.advance(off, 1, ESCAPE_BITS)?;
            Some(off)
        } else {
            None
        };
        Ok(table.value(index, escape))
    }

    /// Verifies that the stream ended exactly where the encoder started.
    pub fn finish(self) -> Result<()> {
        if self.state != RANS_L {
            return Err(Error::CorruptStream(format!(
                "final state {:#x} does not match the encoder's initial state",
                self.state
            )));
        }
        if self.pos != self.bytes.len() {
            return Err(Error::CorruptStream(format!(
                "{} trailing payload bytes",
                self.bytes.len() - self.pos
            )));
        }
        Ok(())
    }
}

/// Encodes the whole stream.
pub fn encode(stream: &SymbolStream) -> Result<Vec<u8>> {
    let mut enc = RansEncoder::new();
    for (s, t) in stream.symbols.iter().zip(&stream.tables).rev() {
        t.validate()?;
        enc.encode_symbol(*s, t)?;
    }
    Ok(enc.finish())
}

/// Decodes `n` symbols coded under `tables` (given in forward order).
pub fn decode(bytes: &[u8], tables: &[CdfTable], n: usize) -> Result<Vec<i32>> {
    if tables.len() != n {
        return Err(Error::InvalidArgument(format!(
            "{n} symbols requested with {} tables",
            tables.len()
        )));
    }
    let mut dec = RansDecoder::new(bytes)?;
    let out = tables
        .iter()
        .map(|t| dec.decode_symbol(t))
        .collect::<Result<Vec<_>>>()?;
    dec.finish()?;
    Ok(out)
}
