//! Byte-level tokenizer: ids 0..=255 are raw bytes, followed by three
//! special tokens.

pub const BOS: u32 = 256;
pub const EOS: u32 = 257;
pub const PAD: u32 = 258;
/// Number of ids the tokenizer can produce.
pub const VOCAB_SIZE: usize = 259;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Tokenizer;

impl Tokenizer {
    /// Maps each byte to its own id. No BOS is added.
    pub fn tokenize(&self, text: &[u8]) -> Vec<u32> {
        text.iter().map(|&b| u32::from(b)).collect()
    }

    /// Inverse of [`Tokenizer::tokenize`]. Special and out-of-range ids are
    /// dropped.
    pub fn detokenize(&self, ids: &[u32]) -> Vec<u8> {
        ids.iter()
            .filter_map(|&id| u8::try_from(id).ok())
            .collect()
    }

    /// Printable form of a single token for traces: ASCII bytes as
    /// themselves, other bytes as `<0xNN>`, specials by name.
    pub fn token_text(&self, id: u32) -> String {
        match id {
            BOS => "<bos>".to_string(),
            EOS => "<eos>".to_string(),
            PAD => "<pad>".to_string(),
            0..=0x7F => char::from(id as u8).to_string(),
            0x80..=0xFF => format!("<0x{id:02X}>"),
            _ => format!("<unk:{id}>"),
        }
    }

    /// Lossy UTF-8 rendering of a token sequence, specials removed.
    pub fn display(&self, ids: &[u32]) -> String {
        String::from_utf8_lossy(&self.detokenize(ids)).into_owned()
    }
}
